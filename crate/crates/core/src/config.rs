//! Flat `key = value` configuration.
//!
//! Sections are dotted key prefixes (`diffusion.T`). `#` starts a comment.
//! Values are resolved in order: built-in defaults, dataset preset, config
//! file, then command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `(key, default, description)` for every recognised key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("preset", "umls", "dataset preset supplying defaults"),
    ("dataset", "data/umls", "directory with train.txt, valid.txt, test.txt"),
    ("out", "runs/default", "output directory"),
    ("seed", "0", "seed for every random stream"),
    ("inverse", "true", "add inverse relations"),
    ("model.dim", "200", "embedding dimension"),
    ("model.norm", "l1", "scorer distance norm (l1 or l2)"),
    ("pretrain.epochs", "200", "uniform-negative pretraining epochs"),
    ("pretrain.lr", "1e-3", "pretraining learning rate"),
    ("pretrain.negatives", "16", "uniform negatives per positive while pretraining"),
    ("pretrain.batch_size", "256", "pretraining batch size"),
    ("pretrain.margin", "1.0", "pretraining margin"),
    ("kmeans.k", "0", "number of semantic types (0 = min(50, ceil(sqrt(|E|))))"),
    ("kmeans.max_iter", "100", "Lloyd iteration cap"),
    ("dam.hidden", "64", "difficulty MLP hidden width"),
    ("dam.steps", "300", "difficulty MLP regression steps"),
    ("dam.lr", "1e-2", "difficulty MLP learning rate"),
    ("train.lr", "5e-5", "embedding learning rate"),
    ("train.batch_size", "256", "positives per batch"),
    ("train.epochs", "1500", "maximum epochs (E_max)"),
    ("train.weight_decay", "0", "AdamW decoupled weight decay"),
    ("train.n_rand", "16", "uniform negatives per positive"),
    ("train.cache_refresh", "1", "epochs between band regenerations"),
    ("train.patience", "100", "early-stopping patience in epochs (0 = off)"),
    ("train.eval_every", "10", "epochs between validation passes"),
    ("train.checkpoint_every", "100", "epochs between periodic checkpoints"),
    ("train.max_restarts", "3", "NaN recoveries before aborting"),
    ("train.use_bands", "true", "generate diffusion negatives (false = uniform-only baseline)"),
    ("diffusion.T", "200", "diffusion steps"),
    ("diffusion.beta_init", "1e-4", "variance at t = 0"),
    ("diffusion.beta_low", "5e-3", "noise ceiling for the easiest entity"),
    ("diffusion.beta_global", "5e-2", "noise ceiling for the hardest entity"),
    ("diffusion.mu", "1", "difficulty exponent"),
    ("diffusion.mode", "standard", "reverse update (standard or paper-literal)"),
    ("diffusion.hidden", "0", "denoiser hidden width (0 = 2 * dim)"),
    ("diffusion.time_dim", "0", "timestep embedding width (0 = dim)"),
    ("diffusion.lr", "1e-3", "denoiser learning rate"),
    ("diffusion.batch_size", "0", "denoiser samples per step (0 = train.batch_size)"),
    ("curriculum.lambda", "10", "band weight sharpness"),
    ("curriculum.zeta_exp", "1", "band weight smoothness exponent"),
    ("curriculum.gamma_base", "1", "base margin"),
    ("curriculum.beta_margin", "0.4", "margin growth factor"),
    ("curriculum.eta", "0.4", "weight of the band-negative loss"),
    ("ablation.dfs_off", "false", "ignore difficulty in the noise schedule"),
    ("ablation.ccd_off", "false", "unconditional denoiser"),
    ("ablation.dtm_off", "false", "static uniform band mix and fixed margin"),
    ("eval.checkpoint", "", "checkpoint to evaluate"),
    ("eval.split", "test", "split to evaluate (valid or test)"),
    ("hardness.positives", "500", "training positives sampled for the hardness report"),
    ("hardness.permutations", "10000", "permutation-test resamples"),
];

/// Per-dataset hyperparameters: lr, batch, epochs, dim, λ, ζ_exp, η, γ, μ, β.
pub const PRESETS: &[(&str, [&str; 10])] = &[
    ("family", ["8e-5", "256", "1500", "200", "10", "1", "0.30", "1", "1", "0.4"]),
    ("umls", ["5e-5", "256", "1500", "200", "10", "1", "0.40", "1", "1", "0.4"]),
    ("wn18rr", ["3e-4", "512", "1000", "400", "10", "1", "0.20", "1", "1.5", "0.4"]),
    ("fb15k-237", ["3e-4", "512", "2000", "500", "5", "0.75", "0.25", "1", "2", "0.4"]),
    ("nell-995", ["5e-4", "1024", "2000", "500", "5", "1", "0.25", "1", "2", "0.4"]),
    ("yago3-10", ["1e-3", "2048", "2500", "600", "5", "0.75", "0.25", "1", "2", "0.3"]),
];

const PRESET_KEYS: [&str; 10] = [
    "train.lr",
    "train.batch_size",
    "train.epochs",
    "model.dim",
    "curriculum.lambda",
    "curriculum.zeta_exp",
    "curriculum.eta",
    "curriculum.gamma_base",
    "diffusion.mu",
    "curriculum.beta_margin",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

/// Parses `key = value` lines.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{origin}:{}: expected 'key = value'", i + 1))
        })?;
        let k = k.trim();
        if !known(k) {
            return Err(Error::Config(format!("{origin}:{}: unknown key '{k}'", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Default for Config {
    fn default() -> Self {
        Self::preset("umls").expect("built-in preset")
    }
}

impl Config {
    /// Built-in defaults with the named dataset preset applied.
    pub fn preset(name: &str) -> Result<Self> {
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .map(|(k, v, _)| (k.to_string(), v.to_string()))
            .collect();
        let (_, row) = PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?;
        for (k, v) in PRESET_KEYS.iter().zip(row) {
            values.insert(k.to_string(), v.to_string());
        }
        values.insert("preset".into(), name.to_ascii_lowercase());
        Ok(Self { values })
    }

    /// Resolves a preset from `file` and `overrides` (overrides win), then
    /// applies the file followed by the overrides.
    pub fn resolve(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let file_pairs = match file {
            Some(text) => parse_pairs(text, "config")?,
            None => Vec::new(),
        };
        let last_preset = |pairs: &[(String, String)]| {
            pairs
                .iter()
                .rev()
                .find(|(k, _)| k == "preset")
                .map(|(_, v)| v.clone())
        };
        let preset = last_preset(overrides)
            .or_else(|| last_preset(&file_pairs))
            .unwrap_or_else(|| "umls".into());
        let mut cfg = Self::preset(&preset)?;
        for (k, v) in file_pairs.iter().chain(overrides) {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::resolve(Some(&text), overrides)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(Error::Config(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("unknown key '{key}'")))
    }

    /// Like [`Config::get`], failing with [`Error::MissingKey`] on an empty value.
    pub fn require(&self, key: &str) -> Result<&str> {
        match self.get(key)? {
            "" => Err(Error::MissingKey(key.to_string())),
            v => Ok(v),
        }
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("bad value '{v}' for key '{key}'")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            v => Err(Error::Config(format!("bad boolean '{v}' for key '{key}'"))),
        }
    }

    /// All keys in sorted order as `key = value` lines.
    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
