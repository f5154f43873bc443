//! Question graph construction from answer logs.
//!
//! Two questions are similar when students who get one right tend to get
//! the other right: per ordered pair we count within-student outcome
//! combinations, turn them into smoothed precision/recall, and average the
//! two directed F1 scores. Edges above a threshold enrich the bipartite
//! question–KC graph that embedding propagation later runs over. The same
//! corpus pass also extracts per-question difficulty and per-attempt
//! counts.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

use crate::autodiff::checkpoint::sha256_hex;
use crate::ingest::StudentSequence;

pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_OMEGA: f64 = 0.7;
pub const DEFAULT_MIN_SUPPORT: u64 = 3;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("similarity threshold must be in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error("smoothing lambda must be positive, got {0}")]
    BadLambda(f64),
    #[error("minimum support must be at least 1, got {0}")]
    BadSupport(u64),
    #[error("unknown question id: {0}")]
    UnknownQuestion(String),
    #[error("graph file line {line}: {detail}")]
    Import { line: usize, detail: String },
}

/// Outcome counts for an ordered question pair `(first, second)`, where
/// `count_ab` tallies students whose first occurrence of `first` scored `a`
/// and whose later first occurrence of `second` scored `b`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub count_11: u64,
    pub count_10: u64,
    pub count_01: u64,
    pub count_00: u64,
}

impl PairCounts {
    fn bump(&mut self, first_correct: u8, second_correct: u8) {
        match (first_correct, second_correct) {
            (1, 1) => self.count_11 += 1,
            (1, 0) => self.count_10 += 1,
            (0, 1) => self.count_01 += 1,
            _ => self.count_00 += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.count_11 + self.count_10 + self.count_01 + self.count_00
    }
}

pub type PairCountMap = BTreeMap<(String, String), PairCounts>;

/// Counts outcome combinations over each student's question
/// first-occurrences, in chronological order. Repeat answers to a question
/// never contribute; each student adds at most one observation per ordered
/// pair.
pub fn accumulate_pair_counts(sequences: &[StudentSequence]) -> PairCountMap {
    let mut counts = PairCountMap::new();
    for seq in sequences {
        let mut seen = BTreeSet::new();
        let mut firsts: Vec<(&str, u8)> = Vec::new();
        for rec in &seq.records {
            if seen.insert(rec.question_id.as_str()) {
                firsts.push((&rec.question_id, rec.correct));
            }
        }
        for i in 0..firsts.len() {
            for j in i + 1..firsts.len() {
                counts
                    .entry((firsts[i].0.to_string(), firsts[j].0.to_string()))
                    .or_default()
                    .bump(firsts[i].1, firsts[j].1);
            }
        }
    }
    counts
}

/// Smoothed directed F1: precision `(c11+l)/(c01+c11+l)`, recall
/// `(c11+l)/(c10+c11+l)`, harmonic mean. The smoothing keeps both
/// denominators positive, so every score lands in (0, 1].
pub fn f1_directed(counts: &PairCounts, lambda: f64) -> f64 {
    let c11 = counts.count_11 as f64;
    let p = (c11 + lambda) / (counts.count_01 as f64 + c11 + lambda);
    let r = (c11 + lambda) / (counts.count_10 as f64 + c11 + lambda);
    2.0 * p * r / (p + r)
}

fn counts_for<'a>(map: &'a PairCountMap, a: &str, b: &str) -> PairCounts {
    map.get(&(a.to_string(), b.to_string()))
        .copied()
        .unwrap_or_default()
}

/// Symmetrized similarity: the mean of the two directed F1 scores. Missing
/// ordered pairs count as all-zero.
pub fn similarity(q1: &str, q2: &str, map: &PairCountMap, lambda: f64) -> f64 {
    let fwd = f1_directed(&counts_for(map, q1, q2), lambda);
    let bwd = f1_directed(&counts_for(map, q2, q1), lambda);
    (fwd + bwd) / 2.0
}

/// Total observations across both directions of an unordered pair. Pairs
/// below the support floor are never scored: with no observations at all,
/// smoothing alone would report perfect similarity.
pub fn pair_support(q1: &str, q2: &str, map: &PairCountMap) -> u64 {
    counts_for(map, q1, q2).total() + counts_for(map, q2, q1).total()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEdge {
    pub q1: String,
    pub q2: String,
    pub sim: f64,
    pub support: u64,
}

/// The question–KC graph plus similarity edges and the parameters that
/// produced them. Edge lists are kept sorted so exports are reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QKGraph {
    pub questions: Vec<String>,
    pub kcs: Vec<String>,
    pub qk_edges: Vec<(String, String)>,
    pub qq_edges: Vec<SimilarityEdge>,
    pub omega: f64,
    pub lambda: f64,
    pub c_min: u64,
}

impl QKGraph {
    /// Similarity edge lookup in either argument order.
    pub fn qq_edge(&self, a: &str, b: &str) -> Option<&SimilarityEdge> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.qq_edges.iter().find(|e| e.q1 == lo && e.q2 == hi)
    }

    /// Unordered similarity-edge endpoints, canonical order.
    pub fn qq_pairs(&self) -> Vec<(String, String)> {
        self.qq_edges
            .iter()
            .map(|e| (e.q1.clone(), e.q2.clone()))
            .collect()
    }
}

/// Builds the enriched graph: question–KC edges straight from the corpus,
/// question–question edges where support reaches `c_min` and similarity
/// exceeds `omega`.
pub fn build_graph(
    sequences: &[StudentSequence],
    omega: f64,
    lambda: f64,
    c_min: u64,
) -> Result<QKGraph, GraphError> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(GraphError::BadThreshold(omega));
    }
    if lambda <= 0.0 {
        return Err(GraphError::BadLambda(lambda));
    }
    if c_min == 0 {
        return Err(GraphError::BadSupport(c_min));
    }

    let mut questions = BTreeSet::new();
    let mut kcs = BTreeSet::new();
    let mut qk = BTreeSet::new();
    for seq in sequences {
        for rec in &seq.records {
            questions.insert(rec.question_id.clone());
            for kc in &rec.kc_ids {
                kcs.insert(kc.clone());
                qk.insert((rec.question_id.clone(), kc.clone()));
            }
        }
    }

    let counts = accumulate_pair_counts(sequences);
    let mut unordered: BTreeSet<(String, String)> = BTreeSet::new();
    for (a, b) in counts.keys() {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        unordered.insert((lo.clone(), hi.clone()));
    }

    let mut qq_edges = Vec::new();
    for (q1, q2) in unordered {
        let support = pair_support(&q1, &q2, &counts);
        if support < c_min {
            continue;
        }
        let sim = similarity(&q1, &q2, &counts, lambda);
        if sim > omega {
            qq_edges.push(SimilarityEdge {
                q1,
                q2,
                sim,
                support,
            });
        }
    }

    Ok(QKGraph {
        questions: questions.into_iter().collect(),
        kcs: kcs.into_iter().collect(),
        qk_edges: qk.into_iter().collect(),
        qq_edges,
        omega,
        lambda,
        c_min,
    })
}

/// Per-question accuracy and difficulty. Lookups are counted so training
/// variants that must ignore difficulty can prove they never touched it.
#[derive(Debug, Default)]
pub struct DifficultyTable {
    rows: BTreeMap<String, (f64, f64)>,
    mean_difficulty: f64,
    lookups: AtomicU64,
    fallbacks: AtomicU64,
}

impl DifficultyTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn accuracy(&self, question: &str) -> Option<f64> {
        self.rows.get(question).map(|&(acc, _)| acc)
    }

    /// Strict lookup; unseen questions are an error.
    pub fn difficulty(&self, question: &str) -> Result<f64, GraphError> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        self.rows
            .get(question)
            .map(|&(_, d)| d)
            .ok_or_else(|| GraphError::UnknownQuestion(question.to_string()))
    }

    /// Lookup with a fallback to the table mean for questions this table
    /// never saw (cold-start questions in a held-out fold).
    pub fn difficulty_or_mean(&self, question: &str) -> f64 {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        match self.rows.get(question) {
            Some(&(_, d)) => d,
            None => {
                self.fallbacks.fetch_add(1, Ordering::Relaxed);
                self.mean_difficulty
            }
        }
    }

    pub fn mean_difficulty(&self) -> f64 {
        self.mean_difficulty
    }

    pub fn lookup_count(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    pub fn fallback_count(&self) -> u64 {
        self.fallbacks.load(Ordering::Relaxed)
    }

    pub fn export_csv(&self) -> String {
        let mut out = String::from("question_id,accuracy,difficulty\n");
        for (q, (acc, d)) in &self.rows {
            out.push_str(&format!("{q},{acc},{d}\n"));
        }
        out
    }

    pub fn import_csv(text: &str) -> Result<Self, GraphError> {
        let mut rows = BTreeMap::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let bad = |detail: String| GraphError::Import {
                line: i + 1,
                detail,
            };
            if parts.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", parts.len())));
            }
            let acc: f64 = parts[1]
                .parse()
                .map_err(|e| bad(format!("accuracy: {e}")))?;
            let d: f64 = parts[2]
                .parse()
                .map_err(|e| bad(format!("difficulty: {e}")))?;
            rows.insert(parts[0].to_string(), (acc, d));
        }
        let mean_difficulty = if rows.is_empty() {
            0.5
        } else {
            rows.values().map(|&(_, d)| d).sum::<f64>() / rows.len() as f64
        };
        Ok(Self {
            rows,
            mean_difficulty,
            lookups: AtomicU64::new(0),
            fallbacks: AtomicU64::new(0),
        })
    }
}

/// Difficulty = 1 - corpus accuracy, so harder questions score higher and
/// both columns stay in [0, 1].
pub fn compute_difficulty(sequences: &[StudentSequence]) -> DifficultyTable {
    let mut correct: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for seq in sequences {
        for rec in &seq.records {
            let entry = correct.entry(&rec.question_id).or_insert((0, 0));
            entry.0 += u64::from(rec.correct);
            entry.1 += 1;
        }
    }
    let rows: BTreeMap<String, (f64, f64)> = correct
        .into_iter()
        .map(|(q, (right, total))| {
            let acc = right as f64 / total as f64;
            (q.to_string(), (acc, 1.0 - acc))
        })
        .collect();
    let mean_difficulty = if rows.is_empty() {
        0.5
    } else {
        rows.values().map(|&(_, d)| d).sum::<f64>() / rows.len() as f64
    };
    DifficultyTable {
        rows,
        mean_difficulty,
        lookups: AtomicU64::new(0),
        fallbacks: AtomicU64::new(0),
    }
}

/// Attempt counts keyed by (student, question, occurrence index, 1-based).
/// Also carries the corpus maximum, which normalizes attempt values fed to
/// the encoder; lookups are counted for the same isolation checks as
/// [`DifficultyTable`].
#[derive(Debug)]
pub struct AttemptTable {
    rows: BTreeMap<(String, String, u32), u32>,
    max_attempts: u32,
    lookups: AtomicU64,
}

impl AttemptTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn attempts(&self, student: &str, question: &str, occurrence: u32) -> Option<u32> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        self.rows
            .get(&(student.to_string(), question.to_string(), occurrence))
            .copied()
    }

    pub fn max_attempts(&self) -> u32 {
        self.max_attempts
    }

    /// Normalizes a raw attempt count into [0, 1] against this table's
    /// maximum: `ln(1+m) / ln(1+m_max)`, clipped. Raw counts saturate the
    /// downstream encoder, compressed ones do not.
    pub fn normalized(&self, raw_attempts: u32) -> f64 {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        normalize_attempts(raw_attempts, self.max_attempts)
    }

    pub fn lookup_count(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    pub fn export_csv(&self) -> String {
        let mut out = String::from("student_id,question_id,occurrence,attempts\n");
        for ((s, q, occ), m) in &self.rows {
            out.push_str(&format!("{s},{q},{occ},{m}\n"));
        }
        out
    }

    pub fn import_csv(text: &str) -> Result<Self, GraphError> {
        let mut rows = BTreeMap::new();
        let mut max_attempts = 1u32;
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let bad = |detail: String| GraphError::Import {
                line: i + 1,
                detail,
            };
            if parts.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", parts.len())));
            }
            let occ: u32 = parts[2]
                .parse()
                .map_err(|e| bad(format!("occurrence: {e}")))?;
            let m: u32 = parts[3]
                .parse()
                .map_err(|e| bad(format!("attempts: {e}")))?;
            max_attempts = max_attempts.max(m);
            rows.insert((parts[0].to_string(), parts[1].to_string(), occ), m);
        }
        Ok(Self {
            rows,
            max_attempts,
            lookups: AtomicU64::new(0),
        })
    }
}

pub fn normalize_attempts(raw: u32, max_attempts: u32) -> f64 {
    let raw = raw.max(1);
    let max = max_attempts.max(1);
    if max == 1 {
        return 1.0;
    }
    ((1.0 + raw as f64).ln() / (1.0 + max as f64).ln()).clamp(0.0, 1.0)
}

pub fn compute_attempts(sequences: &[StudentSequence]) -> AttemptTable {
    let mut rows = BTreeMap::new();
    let mut max_attempts = 1u32;
    for seq in sequences {
        let mut occurrence: BTreeMap<&str, u32> = BTreeMap::new();
        for rec in &seq.records {
            let occ = occurrence.entry(&rec.question_id).or_insert(0);
            *occ += 1;
            max_attempts = max_attempts.max(rec.attempts);
            rows.insert(
                (seq.student_id.clone(), rec.question_id.clone(), *occ),
                rec.attempts,
            );
        }
    }
    AttemptTable {
        rows,
        max_attempts,
        lookups: AtomicU64::new(0),
    }
}

// ---- graph serialization ---------------------------------------------------

/// Section-structured TSV. Line order is canonical (sorted ids and edges),
/// and floats print in shortest round-trip form, so identical graphs export
/// to identical bytes.
pub fn export_tsv(graph: &QKGraph) -> String {
    let mut out = String::new();
    out.push_str("# question-kc similarity graph\n");
    out.push_str(&format!("# lambda={}\n", graph.lambda));
    out.push_str(&format!("# omega={}\n", graph.omega));
    out.push_str(&format!("# c_min={}\n", graph.c_min));
    out.push_str("# section: questions\n");
    for q in &graph.questions {
        out.push_str(q);
        out.push('\n');
    }
    out.push_str("# section: kcs\n");
    for k in &graph.kcs {
        out.push_str(k);
        out.push('\n');
    }
    out.push_str("# section: q-kc\n");
    for (q, k) in &graph.qk_edges {
        out.push_str(&format!("{q}\t{k}\n"));
    }
    out.push_str("# section: q-q\n");
    for e in &graph.qq_edges {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", e.q1, e.q2, e.sim, e.support));
    }
    out
}

/// SHA-256 of the canonical export; checkpoints record it so evaluation can
/// refuse a graph other than the one trained against.
pub fn provenance_hash(graph: &QKGraph) -> String {
    sha256_hex(export_tsv(graph).as_bytes())
}

enum Section {
    None,
    Questions,
    Kcs,
    Qk,
    Qq,
}

pub fn import_tsv(text: &str) -> Result<QKGraph, GraphError> {
    let mut graph = QKGraph {
        questions: Vec::new(),
        kcs: Vec::new(),
        qk_edges: Vec::new(),
        qq_edges: Vec::new(),
        omega: DEFAULT_OMEGA,
        lambda: DEFAULT_LAMBDA,
        c_min: DEFAULT_MIN_SUPPORT,
    };
    let mut section = Section::None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |detail: String| GraphError::Import { line, detail };
        let trimmed = raw.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(rest) = comment.strip_prefix("section:") {
                section = match rest.trim() {
                    "questions" => Section::Questions,
                    "kcs" => Section::Kcs,
                    "q-kc" => Section::Qk,
                    "q-q" => Section::Qq,
                    other => return Err(err(format!("unknown section {other:?}"))),
                };
            } else if let Some(v) = comment.strip_prefix("lambda=") {
                graph.lambda = v.parse().map_err(|_| err(format!("bad lambda {v:?}")))?;
            } else if let Some(v) = comment.strip_prefix("omega=") {
                graph.omega = v.parse().map_err(|_| err(format!("bad omega {v:?}")))?;
            } else if let Some(v) = comment.strip_prefix("c_min=") {
                graph.c_min = v.parse().map_err(|_| err(format!("bad c_min {v:?}")))?;
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        match section {
            Section::None => return Err(err("data before any section header".into())),
            Section::Questions => graph.questions.push(trimmed.to_string()),
            Section::Kcs => graph.kcs.push(trimmed.to_string()),
            Section::Qk => {
                if fields.len() != 2 {
                    return Err(err(format!("expected 2 fields, got {}", fields.len())));
                }
                graph
                    .qk_edges
                    .push((fields[0].to_string(), fields[1].to_string()));
            }
            Section::Qq => {
                if fields.len() != 4 {
                    return Err(err(format!("expected 4 fields, got {}", fields.len())));
                }
                let sim: f64 = fields[2]
                    .parse()
                    .map_err(|_| err(format!("bad similarity {:?}", fields[2])))?;
                let support: u64 = fields[3]
                    .parse()
                    .map_err(|_| err(format!("bad support {:?}", fields[3])))?;
                graph.qq_edges.push(SimilarityEdge {
                    q1: fields[0].to_string(),
                    q2: fields[1].to_string(),
                    sim,
                    support,
                });
            }
        }
    }
    Ok(graph)
}
