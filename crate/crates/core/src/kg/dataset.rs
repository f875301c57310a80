//! Dataset layouts on disk.
//!
//! A transductive directory holds `train.txt`, `valid.txt` and `test.txt`
//! (tab separated `head relation tail`), plus optional `entities.txt` and
//! `relations.txt` dictionaries. An inductive dataset `X` additionally has a
//! sibling directory `X_ind` whose `train.txt` is the test-time fact graph
//! and whose `test.txt` holds the test queries.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{KgError, KnowledgeGraph, RelationSpace, Triple, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Transductive,
    Inductive,
}

impl FromStr for Mode {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transductive" => Ok(Mode::Transductive),
            "inductive" => Ok(Mode::Inductive),
            other => Err(KgError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Transductive => "transductive",
            Mode::Inductive => "inductive",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    TrainFacts,
    TrainLabels,
    Valid,
    Test,
}

/// Raw (non-augmented) triples of one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleSet {
    pub role: Role,
    pub triples: Vec<Triple>,
}

impl TripleSet {
    pub fn new(role: Role, triples: Vec<Triple>) -> Self {
        Self { role, triples }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Query triples: every triple followed (after all forward ones) by its
    /// reverse-direction query `(o, r⁻¹, s)`.
    pub fn queries(&self, rels: RelationSpace) -> Vec<Triple> {
        rels.with_reverses(&self.triples)
    }
}

#[derive(Clone, Debug)]
pub struct TransductiveDataset {
    pub entities: Vocab,
    pub relations: Vocab,
    pub facts: TripleSet,
    pub valid: TripleSet,
    pub test: TripleSet,
    /// Full fact graph `F`, used at inference.
    pub graph: KnowledgeGraph,
}

impl TransductiveDataset {
    pub fn relation_space(&self) -> RelationSpace {
        self.graph.relations()
    }

    /// Partitions `F` into a fact graph and label triples for training.
    pub fn training_split(
        &self,
        fraction: f64,
        seed: u64,
    ) -> Result<(KnowledgeGraph, TripleSet), KgError> {
        let (facts, labels) = split_facts_labels(&self.facts.triples, fraction, seed)?;
        let graph =
            KnowledgeGraph::from_facts(self.graph.entity_range(), self.relation_space(), &facts)?;
        Ok((graph, TripleSet::new(Role::TrainLabels, labels)))
    }

    /// Every known true triple (F ∪ T_val ∪ T_tst), used for filtering.
    pub fn known_triples(&self) -> Vec<Triple> {
        let mut all = self.facts.triples.clone();
        all.extend_from_slice(&self.valid.triples);
        all.extend_from_slice(&self.test.triples);
        all
    }
}

#[derive(Clone, Debug)]
pub struct InductiveDataset {
    /// Training entities first, then test entities.
    pub entities: Vocab,
    pub relations: Vocab,
    pub train_entities: Range<u32>,
    pub test_entities: Range<u32>,
    pub train_facts: TripleSet,
    pub valid: TripleSet,
    pub train_graph: KnowledgeGraph,
    pub test_facts: TripleSet,
    pub test: TripleSet,
    /// Optional `valid.txt` of the test-side directory; only used for filtering.
    pub test_side_valid: Option<TripleSet>,
    pub test_graph: KnowledgeGraph,
}

impl InductiveDataset {
    pub fn relation_space(&self) -> RelationSpace {
        self.train_graph.relations()
    }

    pub fn known_train_triples(&self) -> Vec<Triple> {
        let mut all = self.train_facts.triples.clone();
        all.extend_from_slice(&self.valid.triples);
        all
    }

    pub fn known_test_triples(&self) -> Vec<Triple> {
        let mut all = self.test_facts.triples.clone();
        all.extend_from_slice(&self.test.triples);
        if let Some(v) = &self.test_side_valid {
            all.extend_from_slice(&v.triples);
        }
        all
    }
}

#[derive(Clone, Debug)]
pub enum DatasetLayout {
    Transductive(TransductiveDataset),
    Inductive(InductiveDataset),
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct DatasetStats {
    pub mode: Mode,
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_facts: usize,
    pub num_valid: usize,
    pub num_test: usize,
    /// Inductive only: entities of the test-time graph.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_test_entities: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_test_facts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entity_overlap: Option<usize>,
}

impl DatasetLayout {
    pub fn mode(&self) -> Mode {
        match self {
            DatasetLayout::Transductive(_) => Mode::Transductive,
            DatasetLayout::Inductive(_) => Mode::Inductive,
        }
    }

    pub fn entities(&self) -> &Vocab {
        match self {
            DatasetLayout::Transductive(d) => &d.entities,
            DatasetLayout::Inductive(d) => &d.entities,
        }
    }

    pub fn relations(&self) -> &Vocab {
        match self {
            DatasetLayout::Transductive(d) => &d.relations,
            DatasetLayout::Inductive(d) => &d.relations,
        }
    }

    pub fn relation_space(&self) -> RelationSpace {
        RelationSpace::new(self.relations().len() as u32)
    }

    pub fn stats(&self) -> DatasetStats {
        match self {
            DatasetLayout::Transductive(d) => DatasetStats {
                mode: Mode::Transductive,
                num_entities: d.entities.len(),
                num_relations: d.relations.len(),
                num_facts: d.facts.len(),
                num_valid: d.valid.len(),
                num_test: d.test.len(),
                num_test_entities: None,
                num_test_facts: None,
                entity_overlap: None,
            },
            DatasetLayout::Inductive(d) => DatasetStats {
                mode: Mode::Inductive,
                num_entities: d.train_entities.len(),
                num_relations: d.relations.len(),
                num_facts: d.train_facts.len(),
                num_valid: d.valid.len(),
                num_test: d.test.len(),
                num_test_entities: Some(d.test_entities.len()),
                num_test_facts: Some(d.test_facts.len()),
                entity_overlap: Some(0),
            },
        }
    }

    /// Writes dictionaries and token-level triple files so that loading
    /// `out` reproduces the exact id assignment. The inductive test side goes
    /// to the `_ind` sibling of `out`.
    pub fn write_index(&self, out: &Path) -> Result<(), KgError> {
        let write = |path: PathBuf, text: String| -> Result<(), KgError> {
            std::fs::write(&path, text).map_err(|source| KgError::Io { path, source })
        };
        let mkdir = |path: &Path| -> Result<(), KgError> {
            std::fs::create_dir_all(path).map_err(|source| KgError::Io {
                path: path.to_owned(),
                source,
            })
        };
        mkdir(out)?;
        match self {
            DatasetLayout::Transductive(d) => {
                write(out.join("entities.txt"), d.entities.to_text())?;
                write(out.join("relations.txt"), d.relations.to_text())?;
                let tsv = |s: &TripleSet| render_triples(&s.triples, &d.entities, &d.relations);
                write(out.join("train.txt"), tsv(&d.facts))?;
                write(out.join("valid.txt"), tsv(&d.valid))?;
                write(out.join("test.txt"), tsv(&d.test))?;
            }
            DatasetLayout::Inductive(d) => {
                let train_vocab = sub_vocab(&d.entities, d.train_entities.clone());
                let test_vocab = sub_vocab(&d.entities, d.test_entities.clone());
                let tsv = |s: &TripleSet| render_triples(&s.triples, &d.entities, &d.relations);
                write(out.join("entities.txt"), train_vocab.to_text())?;
                write(out.join("relations.txt"), d.relations.to_text())?;
                write(out.join("train.txt"), tsv(&d.train_facts))?;
                write(out.join("valid.txt"), tsv(&d.valid))?;
                let ind = inductive_sibling(out);
                mkdir(&ind)?;
                write(ind.join("entities.txt"), test_vocab.to_text())?;
                write(ind.join("relations.txt"), d.relations.to_text())?;
                write(ind.join("train.txt"), tsv(&d.test_facts))?;
                write(ind.join("test.txt"), tsv(&d.test))?;
                if let Some(v) = &d.test_side_valid {
                    write(ind.join("valid.txt"), tsv(v))?;
                }
            }
        }
        let stats = serde_json::to_string_pretty(&self.stats()).expect("stats serialize");
        write(out.join("index.json"), stats + "\n")
    }
}

/// `path/X` → `path/X_ind`.
pub fn inductive_sibling(dir: &Path) -> PathBuf {
    let mut name = dir
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push("_ind");
    dir.with_file_name(name)
}

fn sub_vocab(vocab: &Vocab, ids: Range<u32>) -> Vocab {
    let mut v = Vocab::new();
    for id in ids {
        v.intern(vocab.token(id).expect("id in vocab"));
    }
    v
}

fn render_triples(triples: &[Triple], entities: &Vocab, relations: &Vocab) -> String {
    let mut s = String::with_capacity(triples.len() * 32);
    for t in triples {
        s.push_str(entities.token(t.head).expect("entity id"));
        s.push('\t');
        s.push_str(relations.token(t.rel).expect("relation id"));
        s.push('\t');
        s.push_str(entities.token(t.tail).expect("entity id"));
        s.push('\n');
    }
    s
}

type RawTriple = (usize, String, String, String);

fn read_raw(path: &Path) -> Result<Vec<RawTriple>, KgError> {
    let text = std::fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            fields = line.split_whitespace().collect();
        }
        if fields.len() != 3 {
            return Err(KgError::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        out.push((
            i + 1,
            fields[0].trim().to_owned(),
            fields[1].trim().to_owned(),
            fields[2].trim().to_owned(),
        ));
    }
    Ok(out)
}

/// How unseen tokens are treated while mapping a file.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Growth {
    Fixed,
    Grow,
}

fn map_triples(
    path: &Path,
    raw: &[RawTriple],
    entities: &mut Vocab,
    entity_growth: Growth,
    relations: &mut Vocab,
    relation_growth: Growth,
) -> Result<Vec<Triple>, KgError> {
    let lookup = |vocab: &mut Vocab, growth: Growth, token: &str, line: usize, kind| {
        match (vocab.id(token), growth) {
            (Some(id), _) => Ok(id),
            (None, Growth::Grow) => Ok(vocab.intern(token)),
            (None, Growth::Fixed) => Err(KgError::UnknownToken {
                path: path.to_owned(),
                line,
                kind,
                token: token.to_owned(),
            }),
        }
    };
    raw.iter()
        .map(|(line, h, r, t)| {
            let head = lookup(entities, entity_growth, h, *line, "entity")?;
            let rel = lookup(relations, relation_growth, r, *line, "relation")?;
            let tail = lookup(entities, entity_growth, t, *line, "entity")?;
            Ok(Triple::new(head, rel, tail))
        })
        .collect()
}

fn optional_vocab(path: &Path) -> Result<Option<Vocab>, KgError> {
    if path.is_file() {
        Vocab::read(path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn load_dataset(dir: &Path, mode: Mode) -> Result<DatasetLayout, KgError> {
    match mode {
        Mode::Transductive => load_transductive(dir).map(DatasetLayout::Transductive),
        Mode::Inductive => load_inductive(dir).map(DatasetLayout::Inductive),
    }
}

fn load_transductive(dir: &Path) -> Result<TransductiveDataset, KgError> {
    let files = ["train.txt", "valid.txt", "test.txt"].map(|f| dir.join(f));
    let raws = files
        .iter()
        .map(|p| read_raw(p))
        .collect::<Result<Vec<_>, _>>()?;

    let (mut entities, eg) = match optional_vocab(&dir.join("entities.txt"))? {
        Some(v) => (v, Growth::Fixed),
        None => (Vocab::new(), Growth::Grow),
    };
    let (mut relations, rg) = match optional_vocab(&dir.join("relations.txt"))? {
        Some(v) => (v, Growth::Fixed),
        None => (Vocab::new(), Growth::Grow),
    };
    let facts = map_triples(&files[0], &raws[0], &mut entities, eg, &mut relations, rg)?;
    let fixed = Growth::Fixed;
    let valid = map_triples(&files[1], &raws[1], &mut entities, fixed, &mut relations, fixed)?;
    let test = map_triples(&files[2], &raws[2], &mut entities, fixed, &mut relations, fixed)?;

    let rels = RelationSpace::new(relations.len() as u32);
    let graph = KnowledgeGraph::from_facts(0..entities.len() as u32, rels, &facts)?;
    Ok(TransductiveDataset {
        entities,
        relations,
        facts: TripleSet::new(Role::TrainFacts, facts),
        valid: TripleSet::new(Role::Valid, valid),
        test: TripleSet::new(Role::Test, test),
        graph,
    })
}

fn load_inductive(dir: &Path) -> Result<InductiveDataset, KgError> {
    let ind = inductive_sibling(dir);
    if !ind.is_dir() {
        return Err(KgError::Layout(format!(
            "inductive layout needs sibling directory {}",
            ind.display()
        )));
    }
    let tra_train = dir.join("train.txt");
    let tra_valid = dir.join("valid.txt");
    let tst_train = ind.join("train.txt");
    let tst_test = ind.join("test.txt");
    let tst_valid = ind.join("valid.txt");

    let (mut relations, rg) = match optional_vocab(&dir.join("relations.txt"))? {
        Some(v) => (v, Growth::Fixed),
        None => (Vocab::new(), Growth::Grow),
    };
    let fixed = Growth::Fixed;

    // Training side.
    let (mut tra_vocab, eg) = match optional_vocab(&dir.join("entities.txt"))? {
        Some(v) => (v, Growth::Fixed),
        None => (Vocab::new(), Growth::Grow),
    };
    let raw = read_raw(&tra_train)?;
    let train_facts = map_triples(&tra_train, &raw, &mut tra_vocab, eg, &mut relations, rg)?;
    let raw = read_raw(&tra_valid)?;
    let valid = map_triples(&tra_valid, &raw, &mut tra_vocab, fixed, &mut relations, fixed)?;

    // Test side, in its own namespace first.
    let (mut tst_vocab, eg) = match optional_vocab(&ind.join("entities.txt"))? {
        Some(v) => (v, Growth::Fixed),
        None => (Vocab::new(), Growth::Grow),
    };
    let raw = read_raw(&tst_train)?;
    let test_facts = map_triples(&tst_train, &raw, &mut tst_vocab, eg, &mut relations, fixed)?;
    let raw = read_raw(&tst_test)?;
    let test = map_triples(&tst_test, &raw, &mut tst_vocab, fixed, &mut relations, fixed)?;
    let test_valid = if tst_valid.is_file() {
        let raw = read_raw(&tst_valid)?;
        Some(map_triples(
            &tst_valid,
            &raw,
            &mut tst_vocab,
            fixed,
            &mut relations,
            fixed,
        )?)
    } else {
        None
    };

    let overlap: Vec<&String> = tst_vocab
        .tokens()
        .iter()
        .filter(|t| tra_vocab.id(t).is_some())
        .collect();
    if !overlap.is_empty() {
        return Err(KgError::Layout(format!(
            "{} entities appear in both {} and {} (first: `{}`)",
            overlap.len(),
            dir.display(),
            ind.display(),
            overlap[0]
        )));
    }

    // Global ids: training entities, then test entities.
    let n_tra = tra_vocab.len() as u32;
    let mut entities = tra_vocab;
    for t in tst_vocab.tokens() {
        entities.intern(t);
    }
    let n_all = entities.len() as u32;
    let shift = |ts: Vec<Triple>| -> Vec<Triple> {
        ts.into_iter()
            .map(|t| Triple::new(t.head + n_tra, t.rel, t.tail + n_tra))
            .collect()
    };
    let test_facts = shift(test_facts);
    let test = shift(test);
    let test_valid = test_valid.map(shift);

    let rels = RelationSpace::new(relations.len() as u32);
    let train_graph = KnowledgeGraph::from_facts(0..n_tra, rels, &train_facts)?;
    let test_graph = KnowledgeGraph::from_facts(n_tra..n_all, rels, &test_facts)?;
    Ok(InductiveDataset {
        entities,
        relations,
        train_entities: 0..n_tra,
        test_entities: n_tra..n_all,
        train_facts: TripleSet::new(Role::TrainFacts, train_facts),
        valid: TripleSet::new(Role::Valid, valid),
        train_graph,
        test_facts: TripleSet::new(Role::TrainFacts, test_facts),
        test: TripleSet::new(Role::Test, test),
        test_side_valid: test_valid.map(|v| TripleSet::new(Role::Valid, v)),
        test_graph,
    })
}

/// Deterministically partitions `triples` into `(facts, labels)` with
/// `floor(fraction · n)` facts.
pub fn split_facts_labels(
    triples: &[Triple],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<Triple>, Vec<Triple>), KgError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(KgError::Config(format!(
            "fact fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut shuffled = triples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_facts = (fraction * triples.len() as f64).floor() as usize;
    let labels = shuffled.split_off(n_facts);
    Ok((shuffled, labels))
}
