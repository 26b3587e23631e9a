//! Triple storage, dataset loading and the indexes used for negative
//! sampling and filtered evaluation.
//!
//! Datasets follow the usual layout: a directory holding `train.txt`,
//! `valid.txt` and `test.txt` with one `head<TAB>relation<TAB>tail` fact per
//! line, plus optional `entities.dict` / `relations.dict` files of
//! `index<TAB>name` lines fixing the id assignment.
//!
//! With inverse augmentation every fact `(h, r, t)` also contributes
//! `(t, r + |R|, h)` so head prediction becomes tail prediction on the inverse
//! relation. All corruption in this crate is tail-side.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;

/// A fact `(head, relation, tail)` over integer ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Side of an adjacency entry relative to the entity that owns it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Result of a tail corruption. `degenerate` is set when every entity is a
/// known tail of the query, in which case `triple` is the input unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corruption {
    pub triple: Triple,
    pub degenerate: bool,
}

/// An immutable, fully indexed knowledge graph.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    inverses: bool,
    base_train_len: usize,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    adjacency: Vec<Vec<(RelationId, EntityId, Direction)>>,
    // (head, relation) -> sorted true tails over every split.
    tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    // (relation, tail) -> sorted true heads over every split (base relations only).
    heads: HashMap<(RelationId, EntityId), Vec<EntityId>>,
    duplicates: usize,
}

impl KnowledgeGraph {
    /// Builds a graph from id-level splits. Entity and relation names default
    /// to `e<i>` / `r<i>`.
    pub fn from_triples(
        num_entities: usize,
        num_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
        add_inverses: bool,
    ) -> Result<Self> {
        let entity_names = (0..num_entities).map(|i| format!("e{i}")).collect();
        let relation_names = (0..num_relations).map(|i| format!("r{i}")).collect();
        for (name, split) in [("train", &train), ("valid", &valid), ("test", &test)] {
            for (i, t) in split.iter().enumerate() {
                if t.head >= num_entities || t.tail >= num_entities || t.relation >= num_relations
                {
                    return Err(Error::Parse {
                        file: name.to_string(),
                        line: i + 1,
                        msg: format!("id out of range in {t:?}"),
                    });
                }
            }
        }
        Ok(Self::build(
            entity_names,
            relation_names,
            [train, valid, test],
            add_inverses,
        ))
    }

    fn build(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        splits: [Vec<Triple>; 3],
        add_inverses: bool,
    ) -> Self {
        let num_entities = entity_names.len();
        let base_relations = relation_names.len();
        let mut duplicates = 0;
        let [train, valid, test] = splits.map(|split| {
            let (kept, dups) = dedup(split);
            duplicates += dups;
            kept
        });
        if duplicates > 0 {
            log::warn!("removed {duplicates} duplicate triples");
        }

        let mut adjacency = vec![Vec::new(); num_entities];
        for t in &train {
            adjacency[t.head].push((t.relation, t.tail, Direction::Out));
            adjacency[t.tail].push((t.relation, t.head, Direction::In));
        }

        let mut tails: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        let mut heads: HashMap<(RelationId, EntityId), Vec<EntityId>> = HashMap::new();
        for t in train.iter().chain(&valid).chain(&test) {
            tails.entry((t.head, t.relation)).or_default().push(t.tail);
            heads.entry((t.relation, t.tail)).or_default().push(t.head);
            if add_inverses {
                tails
                    .entry((t.tail, t.relation + base_relations))
                    .or_default()
                    .push(t.head);
            }
        }
        for v in tails.values_mut().chain(heads.values_mut()) {
            v.sort_unstable();
            v.dedup();
        }

        let base_train_len = train.len();
        let mut train = train;
        if add_inverses {
            let inv: Vec<Triple> = train
                .iter()
                .map(|t| Triple::new(t.tail, t.relation + base_relations, t.head))
                .collect();
            train.extend(inv);
        }

        Self {
            entity_names,
            relation_names,
            inverses: add_inverses,
            base_train_len,
            train,
            valid,
            test,
            adjacency,
            tails,
            heads,
            duplicates,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    /// Relation count including inverse relations when augmented.
    pub fn num_relations(&self) -> usize {
        if self.inverses {
            2 * self.relation_names.len()
        } else {
            self.relation_names.len()
        }
    }

    pub fn num_base_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn has_inverses(&self) -> bool {
        self.inverses
    }

    /// Training triples, including inverse triples when augmented.
    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    /// Training triples as loaded, without inverse augmentation.
    pub fn base_train(&self) -> &[Triple] {
        &self.train[..self.base_train_len]
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn split(&self, name: &str) -> Option<&[Triple]> {
        match name {
            "train" => Some(self.base_train()),
            "valid" => Some(self.valid()),
            "test" => Some(self.test()),
            _ => None,
        }
    }

    pub fn adjacency(&self, entity: EntityId) -> &[(RelationId, EntityId, Direction)] {
        &self.adjacency[entity]
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id]
    }

    pub fn relation_name(&self, id: RelationId) -> String {
        let base = self.relation_names.len();
        if id < base {
            self.relation_names[id].clone()
        } else {
            format!("{}_inv", self.relation_names[id - base])
        }
    }

    /// Number of duplicate triples dropped while loading.
    pub fn duplicate_count(&self) -> usize {
        self.duplicates
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            entities: self.num_entities(),
            relations: self.num_base_relations(),
            train: self.base_train_len,
            valid: self.valid.len(),
            test: self.test.len(),
        }
    }

    /// Maps a relation to its inverse, if inverse relations exist.
    pub fn inverse_relation(&self, relation: RelationId) -> Option<RelationId> {
        if !self.inverses {
            return None;
        }
        let base = self.relation_names.len();
        Some(if relation < base {
            relation + base
        } else {
            relation - base
        })
    }

    /// Sorted true tails of `(head, relation)` over all splits.
    pub fn true_tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.tails
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Sorted true heads of `(relation, tail)` over all splits.
    pub fn true_heads(&self, relation: RelationId, tail: EntityId) -> &[EntityId] {
        self.heads
            .get(&(relation, tail))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Whether `(head, relation, tail)` is a known fact in any split.
    pub fn is_true(&self, t: &Triple) -> bool {
        self.true_tails(t.head, t.relation)
            .binary_search(&t.tail)
            .is_ok()
    }

    /// Replaces the tail with an entity drawn uniformly among those that do
    /// not form a known fact with `(head, relation)`.
    pub fn corrupt_uniform<R: Rng + ?Sized>(&self, triple: &Triple, rng: &mut R) -> Corruption {
        let n = self.num_entities();
        let known = self.true_tails(triple.head, triple.relation);
        // `known` may not contain `triple.tail` when corrupting an unseen triple.
        let tail_known = known.binary_search(&triple.tail).is_ok();
        let excluded = known.len() + usize::from(!tail_known);
        if excluded >= n {
            return Corruption {
                triple: *triple,
                degenerate: true,
            };
        }
        let is_excluded = |e: EntityId| e == triple.tail || known.binary_search(&e).is_ok();
        let allowed = n - excluded;
        let tail = if allowed * 4 >= n {
            loop {
                let e = rng.gen_range(0..n);
                if !is_excluded(e) {
                    break e;
                }
            }
        } else {
            let k = rng.gen_range(0..allowed);
            (0..n).filter(|&e| !is_excluded(e)).nth(k).expect("k < allowed")
        };
        Corruption {
            triple: Triple::new(triple.head, triple.relation, tail),
            degenerate: false,
        }
    }

    /// Candidate answers for `(entity, relation, ?)` under the filtered
    /// protocol: every entity except the other known answers.
    pub fn filtered_candidates(
        &self,
        query: (EntityId, RelationId),
        answer: EntityId,
    ) -> Vec<EntityId> {
        let known = self.true_tails(query.0, query.1);
        (0..self.num_entities())
            .filter(|&e| e == answer || known.binary_search(&e).is_err())
            .collect()
    }

    /// Writes the graph back out in the directory layout accepted by
    /// [`load_dataset`], including dictionaries that pin the id assignment.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))
        };
        let dict = |names: &[String]| -> String {
            names
                .iter()
                .enumerate()
                .map(|(i, n)| format!("{i}\t{n}\n"))
                .collect()
        };
        write("entities.dict", dict(&self.entity_names))?;
        write("relations.dict", dict(&self.relation_names))?;
        for (name, split) in [
            ("train.txt", self.base_train()),
            ("valid.txt", self.valid()),
            ("test.txt", self.test()),
        ] {
            let body: String = split
                .iter()
                .map(|t| {
                    format!(
                        "{}\t{}\t{}\n",
                        self.entity_names[t.head], self.relation_names[t.relation], self.entity_names[t.tail]
                    )
                })
                .collect();
            write(name, body)?;
        }
        Ok(())
    }
}

fn dedup(split: Vec<Triple>) -> (Vec<Triple>, usize) {
    let mut seen = HashSet::with_capacity(split.len());
    let before = split.len();
    let kept: Vec<Triple> = split.into_iter().filter(|t| seen.insert(*t)).collect();
    let dups = before - kept.len();
    (kept, dups)
}

struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
    frozen: bool,
}

impl Vocab {
    fn open() -> Self {
        Self {
            names: Vec::new(),
            index: HashMap::new(),
            frozen: false,
        }
    }

    fn from_dict(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = path.display().to_string();
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (idx, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
                file: file.clone(),
                line: i + 1,
                msg: "expected 'index<TAB>name'".into(),
            })?;
            let idx: usize = idx.trim().parse().map_err(|_| Error::Parse {
                file: file.clone(),
                line: i + 1,
                msg: format!("bad index '{idx}'"),
            })?;
            pairs.push((idx, name.to_string()));
        }
        pairs.sort();
        let mut names = Vec::with_capacity(pairs.len());
        for (expected, (idx, name)) in pairs.into_iter().enumerate() {
            if idx != expected {
                return Err(Error::Parse {
                    file,
                    line: 0,
                    msg: format!("indices are not contiguous from 0 (missing {expected})"),
                });
            }
            names.push(name);
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(Self {
            names,
            index,
            frozen: true,
        })
    }

    fn get_or_insert(&mut self, name: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(name) {
            return Some(i);
        }
        if self.frozen {
            return None;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        Some(i)
    }
}

fn read_split(
    path: &Path,
    entities: &mut Vocab,
    relations: &mut Vocab,
    grow: bool,
) -> Result<Vec<Triple>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                file,
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", parts.len()),
            });
        }
        let lookup = |vocab: &mut Vocab, kind: &'static str, name: &str| {
            let id = if grow {
                vocab.get_or_insert(name)
            } else {
                vocab.index.get(name).copied()
            };
            id.ok_or_else(|| Error::UnknownSymbol {
                kind,
                name: name.to_string(),
                file: file.clone(),
                line: i + 1,
                text: line.to_string(),
            })
        };
        let head = lookup(entities, "entity", parts[0])?;
        let relation = lookup(relations, "relation", parts[1])?;
        let tail = lookup(entities, "entity", parts[2])?;
        out.push(Triple::new(head, relation, tail));
    }
    Ok(out)
}

/// Loads a dataset directory.
///
/// Ids come from `entities.dict` / `relations.dict` when present, otherwise
/// from first appearance in `train.txt`. Names in the validation or test
/// split that were never seen in training are a hard error.
pub fn load_dataset(dir: &Path, add_inverses: bool) -> Result<KnowledgeGraph> {
    let ent_dict = dir.join("entities.dict");
    let rel_dict = dir.join("relations.dict");
    let mut entities = if ent_dict.exists() {
        Vocab::from_dict(&ent_dict)?
    } else {
        Vocab::open()
    };
    let mut relations = if rel_dict.exists() {
        Vocab::from_dict(&rel_dict)?
    } else {
        Vocab::open()
    };
    let train = read_split(&dir.join("train.txt"), &mut entities, &mut relations, true)?;
    let valid = read_split(&dir.join("valid.txt"), &mut entities, &mut relations, false)?;
    let test = read_split(&dir.join("test.txt"), &mut entities, &mut relations, false)?;
    Ok(KnowledgeGraph::build(
        entities.names,
        relations.names,
        [train, valid, test],
        add_inverses,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn write_dir(train: &str, valid: &str, test: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("train.txt"), train).unwrap();
        fs::write(dir.path().join("valid.txt"), valid).unwrap();
        fs::write(dir.path().join("test.txt"), test).unwrap();
        dir
    }

    #[test]
    fn empty_valid_split_is_fine() {
        let dir = write_dir("a\tr\tb\n", "", "b\tr\ta\n");
        let kg = load_dataset(dir.path(), false).unwrap();
        assert_eq!(kg.valid().len(), 0);
        assert_eq!(kg.test().len(), 1);
    }

    #[test]
    fn duplicates_are_dropped_and_counted() {
        let dir = write_dir("a\tr\tb\na\tr\tb\n", "", "");
        let kg = load_dataset(dir.path(), false).unwrap();
        assert_eq!(kg.base_train().len(), 1);
        assert_eq!(kg.duplicate_count(), 1);
    }

    #[test]
    fn crlf_lines_accepted() {
        let dir = write_dir("a\tr\tb\r\nb\tr\tc\r\n", "a\tr\tc\r\n", "");
        let kg = load_dataset(dir.path(), false).unwrap();
        assert_eq!(kg.num_entities(), 3);
        assert_eq!(kg.entity_name(2), "c");
    }

    #[test]
    fn unknown_name_in_test_is_an_error() {
        let dir = write_dir("a\tr\tb\n", "", "a\tr\tzzz\n");
        let err = load_dataset(dir.path(), false).unwrap_err();
        match err {
            Error::UnknownSymbol { name, line, .. } => {
                assert_eq!(name, "zzz");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dictionaries_fix_ids() {
        let dir = write_dir("a\tr\tb\n", "", "");
        fs::write(dir.path().join("entities.dict"), "0\tb\n1\ta\n").unwrap();
        let kg = load_dataset(dir.path(), false).unwrap();
        assert_eq!(kg.base_train()[0], Triple::new(1, 0, 0));
    }

    #[test]
    fn inverse_augmentation_doubles() {
        let dir = write_dir("a\tr\tb\nb\ts\tc\n", "", "");
        let plain = load_dataset(dir.path(), false).unwrap();
        let aug = load_dataset(dir.path(), true).unwrap();
        assert_eq!(aug.num_relations(), 2 * plain.num_relations());
        assert_eq!(aug.train().len(), 2 * plain.train().len());
        assert_eq!(aug.train()[2], Triple::new(1, 2, 0));
        assert_eq!(aug.true_tails(1, 2), &[0]);
    }

    #[test]
    fn adjacency_degree_sum() {
        let train = vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 0, 2),
            Triple::new(2, 1, 0),
        ];
        let kg = KnowledgeGraph::from_triples(4, 2, train, vec![], vec![], true).unwrap();
        let total: usize = (0..4).map(|e| kg.adjacency(e).len()).sum();
        assert_eq!(total, 2 * kg.base_train().len());
    }

    #[test]
    fn forced_corruption_outcome() {
        // (0, 0) has every entity but 3 as a true tail.
        let train = (0..3).map(|t| Triple::new(0, 0, t)).collect();
        let kg = KnowledgeGraph::from_triples(4, 1, train, vec![], vec![], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let c = kg.corrupt_uniform(&Triple::new(0, 0, 1), &mut rng);
            assert!(!c.degenerate);
            assert_eq!(c.triple.tail, 3);
        }
    }

    #[test]
    fn degenerate_query_returns_input() {
        let train = (0..3).map(|t| Triple::new(0, 0, t)).collect();
        let kg = KnowledgeGraph::from_triples(3, 1, train, vec![], vec![], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Triple::new(0, 0, 2);
        let c = kg.corrupt_uniform(&t, &mut rng);
        assert!(c.degenerate);
        assert_eq!(c.triple, t);
    }

    #[test]
    fn corruption_is_uniform() {
        // Single true tail; 135 entities -> 134 equally likely replacements.
        let n = 135;
        let kg = KnowledgeGraph::from_triples(n, 1, vec![Triple::new(0, 0, 1)], vec![], vec![], false)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            let c = kg.corrupt_uniform(&Triple::new(0, 0, 1), &mut rng);
            counts[c.triple.tail] += 1;
        }
        assert_eq!(counts[1], 0);
        let expected = draws as f64 / (n - 1) as f64;
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .filter(|&(e, _)| e != 1)
            .map(|(_, &c)| (c as f64 - expected).powi(2) / expected)
            .sum();
        // Upper 1% point of chi-square with 133 degrees of freedom.
        assert!(chi2 < 174.7, "chi2 = {chi2}");
    }

    #[test]
    fn candidate_sets() {
        let train = vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2)];
        let kg = KnowledgeGraph::from_triples(5, 1, train, vec![], vec![], false).unwrap();
        assert_eq!(kg.filtered_candidates((0, 0), 1), vec![0, 1, 3, 4]);
        let single = KnowledgeGraph::from_triples(5, 1, vec![Triple::new(0, 0, 1)], vec![], vec![], false)
            .unwrap();
        assert_eq!(single.filtered_candidates((0, 0), 1), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn candidates_match_set_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut all = Vec::new();
        for _ in 0..12 {
            all.push(Triple::new(rng.gen_range(0..5), rng.gen_range(0..2), rng.gen_range(0..5)));
        }
        let (train, test) = all.split_at(8);
        let kg = KnowledgeGraph::from_triples(5, 2, train.to_vec(), vec![], test.to_vec(), true)
            .unwrap();
        for t in kg.test() {
            let brute: Vec<usize> = (0..5)
                .filter(|&e| {
                    e == t.tail
                        || !all
                            .iter()
                            .any(|x| x.head == t.head && x.relation == t.relation && x.tail == e)
                })
                .collect();
            assert_eq!(kg.filtered_candidates((t.head, t.relation), t.tail), brute);
            // Inverse direction: heads for (?, r, t).
            let inv = kg.inverse_relation(t.relation).unwrap();
            let brute_h: Vec<usize> = (0..5)
                .filter(|&e| {
                    e == t.head
                        || !all
                            .iter()
                            .any(|x| x.tail == t.tail && x.relation == t.relation && x.head == e)
                })
                .collect();
            assert_eq!(kg.filtered_candidates((t.tail, inv), t.head), brute_h);
        }
    }

    #[test]
    fn save_and_reload_round_trip() {
        let dir = write_dir("a\tr\tb\nc\ts\ta\nb\tr\tc\n", "a\ts\tb\n", "c\tr\tb\n");
        let kg = load_dataset(dir.path(), true).unwrap();
        let out = tempfile::tempdir().unwrap();
        kg.save(out.path()).unwrap();
        let again = load_dataset(out.path(), true).unwrap();
        assert_eq!(kg.train(), again.train());
        assert_eq!(kg.valid(), again.valid());
        assert_eq!(kg.test(), again.test());
        assert_eq!(kg.entity_names, again.entity_names);
        assert_eq!(kg.relation_names, again.relation_names);
        assert_eq!(kg.tails, again.tails);
        assert_eq!(kg.heads, again.heads);
    }
}
