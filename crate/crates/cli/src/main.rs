use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Arg, ArgMatches, Command};

use dans_core::checkpoint::Checkpoint;
use dans_core::config::{Config, KEYS};
use dans_core::curriculum::NUM_BANDS;
use dans_core::eval;
use dans_core::graph::EntityStructFeatures;
use dans_core::kg::{load_dataset, KnowledgeGraph, Triple};
use dans_core::rng;
use dans_core::trainer::{
    self, ablation_variant, entity_beta_max, AblationSwitch, Model, Prepared, TrainConfig,
};
use dans_core::{Error, ErrorClass, Result};

const COMMANDS: &[(&str, &str)] = &[
    ("features", "structural features per entity -> features.csv"),
    ("pretrain", "uniform-negative pretraining -> pretrain.ckpt"),
    ("fit-dam", "semantic types and difficulty scores -> prepared.ckpt, difficulty.csv, types.csv"),
    ("train", "main training loop -> best.ckpt, train_log.csv, metrics.txt"),
    ("eval", "filtered MRR / Hits@N of eval.checkpoint on eval.split"),
    ("ablate", "full model and the three ablations -> ablation.csv"),
    ("hardness", "band distance report for eval.checkpoint -> hardness.csv, hardness.txt"),
];

fn cli() -> Command {
    let mut app = Command::new("dans")
        .about("Diffusion-based adaptive negative sampling for knowledge-graph completion")
        .after_help("Every configuration key is also a flag, e.g. --seed 7 --diffusion.T 100.")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(Command::new("keys").about("list configuration keys and defaults"));
    for (name, about) in COMMANDS {
        let mut sub = Command::new(*name)
            .about(*about)
            .args_override_self(true)
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("FILE")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("key = value file applied before the flags"),
            );
        for (key, default, help) in KEYS {
            sub = sub.arg(
                Arg::new(*key)
                    .long(*key)
                    .value_name("VALUE")
                    .help(format!("{help} [default: {default}]")),
            );
        }
        app = app.subcommand(sub);
    }
    app
}

fn usage_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn load_config(m: &ArgMatches) -> Result<Config> {
    let overrides: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|(k, _, _)| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    match m.get_one::<PathBuf>("config") {
        Some(path) => Config::load(path, &overrides),
        None => Config::resolve(None, &overrides),
    }
}

fn out_dir(cfg: &Config) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.require("out")?);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_kg(cfg: &Config) -> Result<KnowledgeGraph> {
    let dir = PathBuf::from(cfg.require("dataset")?);
    let kg = load_dataset(&dir, cfg.bool("inverse")?)?;
    let s = kg.stats();
    log::info!(
        "loaded {}: {} entities, {} relations, {}/{}/{} triples",
        dir.display(),
        s.entities,
        s.relations,
        s.train,
        s.valid,
        s.test
    );
    Ok(kg)
}

fn cmd_features(cfg: &Config) -> Result<()> {
    let kg = load_kg(cfg)?;
    let out = out_dir(cfg)?;
    let f = EntityStructFeatures::compute(&kg);
    f.write_csv(&out.join("features.csv"))?;
    println!("entities={}", f.len());
    Ok(())
}

fn cmd_pretrain(cfg: &Config) -> Result<()> {
    let kg = load_kg(cfg)?;
    let tc = TrainConfig::from_config(cfg)?;
    let out = out_dir(cfg)?;
    let p = trainer::run_pretrain(&kg, &tc)?;
    trainer::scorer_checkpoint(&p.scorer).save(&out.join("pretrain.ckpt"))?;
    let mut log = String::from("epoch,loss\n");
    for (e, l) in p.losses.iter().enumerate() {
        let _ = writeln!(log, "{},{}", e + 1, l);
    }
    write(&out.join("pretrain_log.csv"), &log)?;
    let m = eval::evaluate(&kg, &p.scorer, kg.valid()).metrics;
    print!("{}", m.to_text());
    Ok(())
}

/// Loads `prepared.ckpt` from the output directory when present, otherwise
/// runs the preparation stages (reusing `pretrain.ckpt` if present).
fn load_or_prepare(kg: &KnowledgeGraph, tc: &TrainConfig, out: &Path) -> Result<Prepared> {
    let prepared = out.join("prepared.ckpt");
    if prepared.exists() {
        log::info!("reusing {}", prepared.display());
        return Prepared::from_checkpoint(&Checkpoint::load(&prepared)?);
    }
    let pre = out.join("pretrain.ckpt");
    let scorer = if pre.exists() {
        log::info!("reusing {}", pre.display());
        trainer::scorer_from_checkpoint(&Checkpoint::load(&pre)?)?
    } else {
        trainer::run_pretrain(kg, tc)?.scorer
    };
    if scorer.entities.rows() != kg.num_entities() || scorer.relations.rows() != kg.num_relations()
    {
        return Err(Error::Checkpoint(
            "pretrained embeddings do not match the dataset".into(),
        ));
    }
    let features = EntityStructFeatures::compute(kg);
    let types = trainer::fit_types(&scorer, tc)?;
    let (zeta, proxy) = trainer::fit_difficulty(kg, &scorer, &features, tc)?;
    Ok(Prepared {
        features,
        scorer,
        types,
        zeta,
        proxy,
        pretrain_losses: Vec::new(),
    })
}

fn cmd_fit_dam(cfg: &Config) -> Result<()> {
    let kg = load_kg(cfg)?;
    let tc = TrainConfig::from_config(cfg)?;
    let out = out_dir(cfg)?;
    let p = load_or_prepare(&kg, &tc, &out)?;
    p.to_checkpoint().save(&out.join("prepared.ckpt"))?;
    dans_core::dam::write_difficulty_csv(&out.join("difficulty.csv"), &p.zeta, &p.proxy)?;
    p.types.write_csv(&out.join("types.csv"))?;
    let mean = p.zeta.iter().sum::<f64>() / p.zeta.len().max(1) as f64;
    println!("types={}", p.types.k());
    println!("mean_zeta={mean:.6}");
    Ok(())
}

fn metrics_block(kg: &KnowledgeGraph, model: &Model) -> String {
    let mut s = String::new();
    for (name, split) in [("valid", kg.valid()), ("test", kg.test())] {
        if split.is_empty() {
            continue;
        }
        let m = eval::evaluate(kg, &model.scorer, split).metrics;
        let _ = writeln!(
            s,
            "{name}.mrr={:.6}\n{name}.hits1={:.6}\n{name}.hits10={:.6}",
            m.mrr, m.hits1, m.hits10
        );
    }
    s
}

fn cmd_train(cfg: &Config) -> Result<()> {
    let kg = load_kg(cfg)?;
    let tc = TrainConfig::from_config(cfg)?;
    let out = out_dir(cfg)?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    let prepared = load_or_prepare(&kg, &tc, &out)?;
    let outcome = trainer::train(&kg, &tc, &prepared, Some(&out))?;
    let mut text = metrics_block(&kg, &outcome.model);
    let _ = writeln!(
        text,
        "best_epoch={}\nepochs_run={}\nrestarts={}",
        outcome.best_epoch, outcome.epochs_run, outcome.restarts
    );
    write(&out.join("metrics.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn eval_split<'a>(kg: &'a KnowledgeGraph, cfg: &Config) -> Result<&'a [Triple]> {
    let name = cfg.get("eval.split")?;
    kg.split(name)
        .ok_or_else(|| usage_error(format!("unknown split '{name}'")))
}

fn cmd_eval(cfg: &Config) -> Result<()> {
    let ckpt = PathBuf::from(cfg.require("eval.checkpoint")?);
    let kg = load_kg(cfg)?;
    let scorer = trainer::scorer_from_checkpoint(&Checkpoint::load(&ckpt)?)?;
    if scorer.entities.rows() != kg.num_entities() || scorer.relations.rows() != kg.num_relations()
    {
        return Err(Error::Checkpoint(format!(
            "{} does not match the dataset",
            ckpt.display()
        )));
    }
    let split_name = cfg.get("eval.split")?.to_string();
    let result = eval::evaluate(&kg, &scorer, eval_split(&kg, cfg)?);
    let out = out_dir(cfg)?;
    let text = result.metrics.to_text();
    write(&out.join(format!("metrics_{split_name}.txt")), &text)?;
    result.write_ranks_csv(&out.join(format!("ranks_{split_name}.csv")))?;
    print!("{text}");
    Ok(())
}

fn cmd_ablate(cfg: &Config) -> Result<()> {
    let kg = load_kg(cfg)?;
    let tc = TrainConfig::from_config(cfg)?;
    let out = out_dir(cfg)?;
    let prepared = load_or_prepare(&kg, &tc, &out)?;
    let mut csv = String::from("variant,valid_mrr,test_mrr,test_hits1,test_hits10\n");
    for switch in AblationSwitch::ALL {
        let variant = ablation_variant(&tc, switch);
        let dir = out.join(switch.name());
        let outcome = trainer::train(&kg, &variant, &prepared, Some(&dir))?;
        let v = eval::evaluate(&kg, &outcome.model.scorer, kg.valid()).metrics;
        let t = eval::evaluate(&kg, &outcome.model.scorer, kg.test()).metrics;
        let line = format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            switch.name(),
            v.mrr,
            t.mrr,
            t.hits1,
            t.hits10
        );
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    write(&out.join("ablation.csv"), &csv)
}

fn cmd_hardness(cfg: &Config) -> Result<()> {
    let ckpt = PathBuf::from(cfg.require("eval.checkpoint")?);
    let kg = load_kg(cfg)?;
    let tc = TrainConfig::from_config(cfg)?;
    let model = Model::load(&ckpt)?;
    if model.scorer.entities.rows() != kg.num_entities() {
        return Err(Error::Checkpoint(format!(
            "{} does not match the dataset",
            ckpt.display()
        )));
    }
    let wanted: usize = cfg.parse("hardness.positives")?;
    let permutations: usize = cfg.parse("hardness.permutations")?;
    let positives = sample_positives(kg.base_train(), wanted, tc.seed);
    let ids: Vec<u64> = (0..positives.len() as u64).collect();
    let bmax = entity_beta_max(&model.zeta, &tc.noise, tc.ablation.dfs_off);
    let bands = model
        .band_generator(&bmax, &tc)
        .generate_many(&positives, &ids, tc.seed, u64::MAX)?;
    let report = eval::hardness_report(&positives, &bands, &model.scorer)?;
    let out = out_dir(cfg)?;
    report.write_csv(&out.join("hardness.csv"))?;
    let mut r = rng::stream(tc.seed, &[rng::TAG_EVAL]);
    let p = eval::paired_permutation_test(
        &report.distances[0],
        &report.distances[NUM_BANDS - 1],
        permutations,
        &mut r,
    );
    let mut text = report.to_csv();
    let _ = writeln!(text, "positives={}\np_band1_closer={p:.6}", positives.len());
    write(&out.join("hardness.txt"), &text)?;
    print!("{text}");
    Ok(())
}

/// Deterministic sample of up to `n` triples without replacement.
fn sample_positives(train: &[Triple], n: usize, seed: u64) -> Vec<Triple> {
    use rand::seq::SliceRandom;
    let mut r = rng::stream(seed, &[rng::TAG_EVAL, 1]);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut r);
    idx.truncate(n);
    idx.sort_unstable();
    idx.into_iter().map(|i| train[i]).collect()
}

fn cmd_keys() {
    for (k, v, d) in KEYS {
        println!("{k:<28} {v:<14} {d}");
    }
}

fn run(command: &str, m: &ArgMatches) -> Result<()> {
    if command == "keys" {
        cmd_keys();
        return Ok(());
    }
    let config = load_config(m)?;
    let cfg = &config;
    match command {
        "features" => cmd_features(cfg),
        "pretrain" => cmd_pretrain(cfg),
        "fit-dam" => cmd_fit_dam(cfg),
        "train" => cmd_train(cfg),
        "eval" => cmd_eval(cfg),
        "ablate" => cmd_ablate(cfg),
        "hardness" => cmd_hardness(cfg),
        other => Err(usage_error(format!("unknown command '{other}'"))),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, sub) = matches.subcommand().expect("subcommand is required");
    match run(command, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}
