//! Interaction-log parsing, dataset statistics, and cross-validation splits.
//!
//! Raw logs arrive as delimiter-separated text with a header; a
//! [`ColumnMapping`] names the columns so the three common public datasets
//! can share one parser. Parsing yields one validated [`StudentSequence`]
//! per student, which everything downstream consumes.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Read, Write};
use thiserror::Error;

use crate::seeding::{derive_seed, stream};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sequences must be strictly longer than this to survive parsing.
pub const MIN_SEQUENCE_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column {name:?} in header")]
    MissingColumn { name: String },
    #[error("line {line}: {detail}")]
    Row { line: u64, detail: String },
    #[error("student {student}: duplicate order index {order_index}")]
    DuplicateOrder { student: String, order_index: u64 },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("cannot split {students} students into {k} folds")]
    BadFoldCount { k: usize, students: usize },
}

/// One graded interaction. `attempts` is the number of tries the student
/// has made on this question up to and including this record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub student_id: String,
    pub question_id: String,
    pub kc_ids: Vec<String>,
    pub correct: u8,
    pub attempts: u32,
    pub order_index: u64,
}

/// A student's chronologically ordered interactions. Order indices are
/// strictly increasing; length is at least [`MIN_SEQUENCE_LEN`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentSequence {
    pub student_id: String,
    pub records: Vec<InteractionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_students: usize,
    pub n_questions: usize,
    pub n_skills: usize,
    pub n_logs: usize,
    pub questions_per_skill: f64,
    pub skills_per_question: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Names the log columns. `attempts` is optional: when absent, attempts are
/// derived as 1 + the number of earlier records by the same student on the
/// same question. `scaffold` names a boolean column whose truthy rows are
/// dropped before anything else.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub student: String,
    pub question: String,
    pub kcs: String,
    pub correct: String,
    pub order: String,
    pub attempts: Option<String>,
    pub scaffold: Option<String>,
    pub kc_separator: String,
    pub delimiter: char,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            student: "student_id".into(),
            question: "question_id".into(),
            kcs: "kc_ids".into(),
            correct: "correct".into(),
            order: "order_index".into(),
            attempts: None,
            scaffold: None,
            kc_separator: ";".into(),
            delimiter: ',',
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseOptions {
    /// Keep the first of rows sharing (student, order_index) instead of
    /// failing on them.
    pub dedup: bool,
}

struct RawRow {
    student: String,
    question: String,
    kcs: Vec<String>,
    correct: u8,
    attempts: Option<u32>,
    order: u64,
    file_pos: usize,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn {
            name: name.to_string(),
        })
}

fn row_err(line: u64, detail: impl Into<String>) -> IngestError {
    IngestError::Row {
        line,
        detail: detail.into(),
    }
}

fn truthy(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "1" | "true" | "t" | "yes" | "y"
    )
}

/// Parses a delimiter-separated log into validated sequences, sorted by
/// student id. Sequences of length `<= 3` are discarded.
pub fn parse_log<R: Read>(
    reader: R,
    mapping: &ColumnMapping,
    options: &ParseOptions,
) -> Result<Vec<StudentSequence>, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter as u8)
        .flexible(false)
        .from_reader(reader);

    let headers = csv_reader.headers()?.clone();
    let col_student = column_index(&headers, &mapping.student)?;
    let col_question = column_index(&headers, &mapping.question)?;
    let col_kcs = column_index(&headers, &mapping.kcs)?;
    let col_correct = column_index(&headers, &mapping.correct)?;
    let col_order = column_index(&headers, &mapping.order)?;
    let col_attempts = mapping
        .attempts
        .as_deref()
        .map(|name| column_index(&headers, name))
        .transpose()?;
    let col_scaffold = mapping
        .scaffold
        .as_deref()
        .map(|name| column_index(&headers, name))
        .transpose()?;

    let mut rows: Vec<RawRow> = Vec::new();
    for (file_pos, record) in csv_reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |idx: usize| -> Result<&str, IngestError> {
            record
                .get(idx)
                .ok_or_else(|| row_err(line, format!("missing field {idx}")))
        };

        if let Some(idx) = col_scaffold {
            if truthy(cell(idx)?) {
                continue;
            }
        }

        let student = cell(col_student)?.trim().to_string();
        if student.is_empty() {
            return Err(row_err(line, "empty student id"));
        }
        let question = cell(col_question)?.trim().to_string();
        if question.is_empty() {
            return Err(row_err(line, "empty question id"));
        }

        let correct_raw = cell(col_correct)?.trim();
        let correct_val: f64 = correct_raw
            .parse()
            .map_err(|_| row_err(line, format!("unreadable correctness {correct_raw:?}")))?;
        let correct = if correct_val == 0.0 {
            0
        } else if correct_val == 1.0 {
            1
        } else {
            return Err(row_err(
                line,
                format!("correctness {correct_raw:?} outside {{0,1}}"),
            ));
        };

        let mut kcs: Vec<String> = cell(col_kcs)?
            .split(mapping.kc_separator.as_str())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        kcs.sort();
        kcs.dedup();
        if kcs.is_empty() {
            return Err(row_err(line, "empty KC list"));
        }

        let order_raw = cell(col_order)?.trim();
        let order: u64 = order_raw
            .parse()
            .map_err(|_| row_err(line, format!("unreadable order index {order_raw:?}")))?;

        let attempts = match col_attempts {
            Some(idx) => {
                let raw = cell(idx)?.trim();
                let v: u32 = raw
                    .parse()
                    .map_err(|_| row_err(line, format!("unreadable attempts {raw:?}")))?;
                if v == 0 {
                    return Err(row_err(line, "attempts must be at least 1"));
                }
                Some(v)
            }
            None => None,
        };

        rows.push(RawRow {
            student,
            question,
            kcs,
            correct,
            attempts,
            order,
            file_pos,
        });
    }

    // group per student, keeping file order for dedup tie-breaking
    let mut by_student: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for row in rows {
        by_student.entry(row.student.clone()).or_default().push(row);
    }

    let mut sequences = Vec::new();
    for (student_id, mut rows) in by_student {
        rows.sort_by_key(|r| (r.order, r.file_pos));
        if options.dedup {
            let mut seen = HashSet::new();
            rows.retain(|r| seen.insert(r.order));
        } else if let Some(w) = rows.windows(2).find(|w| w[0].order == w[1].order) {
            return Err(IngestError::DuplicateOrder {
                student: student_id,
                order_index: w[0].order,
            });
        }

        let mut prior_count: BTreeMap<String, u32> = BTreeMap::new();
        let mut records = Vec::with_capacity(rows.len());
        for row in rows {
            let seen = prior_count.entry(row.question.clone()).or_insert(0);
            *seen += 1;
            records.push(InteractionRecord {
                student_id: student_id.clone(),
                question_id: row.question,
                kc_ids: row.kcs,
                correct: row.correct,
                attempts: row.attempts.unwrap_or(*seen),
                order_index: row.order,
            });
        }
        if records.len() >= MIN_SEQUENCE_LEN {
            sequences.push(StudentSequence {
                student_id,
                records,
            });
        }
    }
    Ok(sequences)
}

/// Corpus-level counts and the two Table-style ratios. A question's KC set
/// is the union over all its records.
pub fn compute_stats(sequences: &[StudentSequence]) -> Result<DatasetStats, IngestError> {
    if sequences.is_empty() {
        return Err(IngestError::EmptyCorpus);
    }
    let mut question_kcs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut skills: BTreeSet<&str> = BTreeSet::new();
    let mut n_logs = 0usize;
    for seq in sequences {
        for rec in &seq.records {
            n_logs += 1;
            let entry = question_kcs.entry(&rec.question_id).or_default();
            for kc in &rec.kc_ids {
                entry.insert(kc);
                skills.insert(kc);
            }
        }
    }
    let n_questions = question_kcs.len();
    let n_skills = skills.len();
    let total_tags: usize = question_kcs.values().map(|s| s.len()).sum();
    Ok(DatasetStats {
        n_students: sequences.len(),
        n_questions,
        n_skills,
        n_logs,
        questions_per_skill: n_questions as f64 / n_skills as f64,
        skills_per_question: total_tags as f64 / n_questions as f64,
    })
}

/// Student-level k-fold split: every student lands in exactly one test
/// fold, fold sizes differ by at most one, and the assignment is a pure
/// function of `seed`.
pub fn make_folds(
    sequences: &[StudentSequence],
    k: usize,
    seed: u64,
) -> Result<Vec<FoldSplit>, IngestError> {
    let mut students: Vec<&str> = sequences.iter().map(|s| s.student_id.as_str()).collect();
    students.sort();
    students.dedup();
    if k < 2 || students.len() < k {
        return Err(IngestError::BadFoldCount {
            k,
            students: students.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::FOLD_SHUFFLE]));
    students.shuffle(&mut rng);

    let n = students.len();
    let base = n / k;
    let rem = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0usize;
    for fold_index in 0..k {
        let size = base + usize::from(fold_index < rem);
        let test_range = start..start + size;
        let mut test_ids: Vec<String> =
            students[test_range.clone()].iter().map(|s| s.to_string()).collect();
        let mut train_ids: Vec<String> = students[..test_range.start]
            .iter()
            .chain(students[test_range.end..].iter())
            .map(|s| s.to_string())
            .collect();
        test_ids.sort();
        train_ids.sort();
        folds.push(FoldSplit {
            fold_index,
            train_ids,
            test_ids,
        });
        start += size;
    }
    Ok(folds)
}

/// Writes one JSON object per line, students in sorted order. The format
/// round-trips exactly through [`read_sequences`].
pub fn write_sequences<W: Write>(
    mut writer: W,
    sequences: &[StudentSequence],
) -> Result<(), IngestError> {
    let mut sorted: Vec<&StudentSequence> = sequences.iter().collect();
    sorted.sort_by(|a, b| a.student_id.cmp(&b.student_id));
    for seq in sorted {
        serde_json::to_writer(&mut writer, seq)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sequences<R: BufRead>(reader: R) -> Result<Vec<StudentSequence>, IngestError> {
    let mut sequences = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        sequences.push(serde_json::from_str(&line)?);
    }
    Ok(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const HEADER: &str = "student_id,question_id,kc_ids,correct,order_index";

    fn parse(text: &str) -> Result<Vec<StudentSequence>, IngestError> {
        parse_log(
            Cursor::new(text),
            &ColumnMapping::default(),
            &ParseOptions::default(),
        )
    }

    #[test]
    fn three_row_student_is_dropped() {
        let text = format!("{HEADER}\ns1,q1,k1,1,0\ns1,q2,k1,0,1\ns1,q3,k1,1,2\n");
        assert!(parse(&text).unwrap().is_empty());
    }

    #[test]
    fn four_row_student_is_kept() {
        let text = format!("{HEADER}\ns1,q1,k1,1,0\ns1,q2,k1,0,1\ns1,q3,k1,1,2\ns1,q4,k1,1,3\n");
        let seqs = parse(&text).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].records.len(), 4);
        let corrects: Vec<u8> = seqs[0].records.iter().map(|r| r.correct).collect();
        assert_eq!(corrects, vec![1, 0, 1, 1]);
    }

    #[test]
    fn derived_attempts_count_prior_occurrences() {
        let text = format!("{HEADER}\ns1,q1,k1,0,0\ns1,q2,k1,1,1\ns1,q1,k1,1,2\ns1,q3,k1,1,3\n");
        let seqs = parse(&text).unwrap();
        let attempts: Vec<u32> = seqs[0].records.iter().map(|r| r.attempts).collect();
        assert_eq!(attempts, vec![1, 1, 2, 1]);
    }

    #[test]
    fn explicit_attempts_column_is_used_verbatim() {
        let text = "student_id,question_id,kc_ids,correct,order_index,tries\n\
                    s1,q1,k1,0,0,3\ns1,q2,k1,1,1,1\ns1,q1,k1,1,2,5\ns1,q3,k1,1,3,2\n";
        let mapping = ColumnMapping {
            attempts: Some("tries".into()),
            ..ColumnMapping::default()
        };
        let seqs = parse_log(Cursor::new(text), &mapping, &ParseOptions::default()).unwrap();
        let attempts: Vec<u32> = seqs[0].records.iter().map(|r| r.attempts).collect();
        assert_eq!(attempts, vec![3, 1, 5, 2]);
    }

    #[test]
    fn bad_correctness_is_a_line_numbered_error() {
        let text = format!("{HEADER}\ns1,q1,k1,1,0\ns1,q2,k1,2,1\n");
        match parse(&text) {
            Err(IngestError::Row { line, detail }) => {
                assert_eq!(line, 3);
                assert!(detail.contains("correctness"), "{detail}");
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn empty_kc_list_is_rejected() {
        let text = format!("{HEADER}\ns1,q1,;;,1,0\n");
        match parse(&text) {
            Err(IngestError::Row { line, detail }) => {
                assert_eq!(line, 2);
                assert!(detail.contains("KC"), "{detail}");
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let text = "student_id,question_id,correct,order_index\ns1,q1,1,0\n";
        match parse(text) {
            Err(IngestError::MissingColumn { name }) => assert_eq!(name, "kc_ids"),
            other => panic!("expected missing column, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_order_rejected_without_dedup() {
        let text = format!("{HEADER}\ns1,q1,k1,1,5\ns1,q2,k1,0,5\n");
        assert!(matches!(
            parse(&text),
            Err(IngestError::DuplicateOrder { ref student, order_index: 5 }) if student == "s1"
        ));
    }

    #[test]
    fn dedup_keeps_first_row_in_file_order() {
        let text = format!(
            "{HEADER}\ns1,q1,k1,1,0\ns1,q9,k1,0,1\ns1,q8,k1,1,1\ns1,q2,k1,1,2\ns1,q3,k1,0,3\n"
        );
        let seqs = parse_log(
            Cursor::new(text),
            &ColumnMapping::default(),
            &ParseOptions { dedup: true },
        )
        .unwrap();
        let questions: Vec<&str> = seqs[0]
            .records
            .iter()
            .map(|r| r.question_id.as_str())
            .collect();
        assert_eq!(questions, vec!["q1", "q9", "q2", "q3"]);
    }

    #[test]
    fn scaffold_rows_are_filtered() {
        let text = "student_id,question_id,kc_ids,correct,order_index,scaffold\n\
                    s1,q1,k1,1,0,0\ns1,qx,k1,1,1,1\ns1,q2,k1,0,2,0\n\
                    s1,q3,k1,1,3,false\ns1,q4,k1,1,4,no\n";
        let mapping = ColumnMapping {
            scaffold: Some("scaffold".into()),
            ..ColumnMapping::default()
        };
        let seqs = parse_log(Cursor::new(text), &mapping, &ParseOptions::default()).unwrap();
        let questions: Vec<&str> = seqs[0]
            .records
            .iter()
            .map(|r| r.question_id.as_str())
            .collect();
        assert_eq!(questions, vec!["q1", "q2", "q3", "q4"]);
    }

    #[test]
    fn stats_single_kc_corpus() {
        let text = format!("{HEADER}\ns1,q1,k1,1,0\ns1,q2,k1,0,1\ns1,q1,k1,1,2\ns1,q2,k1,1,3\n");
        let stats = compute_stats(&parse(&text).unwrap()).unwrap();
        assert_eq!(stats.n_students, 1);
        assert_eq!(stats.n_questions, 2);
        assert_eq!(stats.n_skills, 1);
        assert_eq!(stats.n_logs, 4);
        assert_eq!(stats.skills_per_question, 1.0);
        assert_eq!(stats.questions_per_skill, 2.0);
    }

    #[test]
    fn stats_mixed_tagging_averages_per_distinct_question() {
        let text = format!(
            "{HEADER}\ns1,q1,k1,1,0\ns1,q2,k1;k2,0,1\ns1,q1,k1,1,2\ns1,q2,k1;k2,1,3\n"
        );
        let stats = compute_stats(&parse(&text).unwrap()).unwrap();
        assert_eq!(stats.skills_per_question, 1.5);
    }

    #[test]
    fn stats_reject_empty_corpus() {
        assert!(matches!(
            compute_stats(&[]),
            Err(IngestError::EmptyCorpus)
        ));
    }

    fn synthetic_students(n: usize) -> Vec<StudentSequence> {
        (0..n)
            .map(|i| {
                let student_id = format!("s{i:02}");
                let records = (0..4)
                    .map(|t| InteractionRecord {
                        student_id: student_id.clone(),
                        question_id: format!("q{t}"),
                        kc_ids: vec!["k".into()],
                        correct: 1,
                        attempts: 1,
                        order_index: t as u64,
                    })
                    .collect();
                StudentSequence {
                    student_id,
                    records,
                }
            })
            .collect()
    }

    #[test]
    fn five_students_five_folds_one_each() {
        let folds = make_folds(&synthetic_students(5), 5, 1).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            assert_eq!(f.test_ids.len(), 1);
            assert_eq!(f.train_ids.len(), 4);
        }
    }

    #[test]
    fn folds_are_deterministic_per_seed() {
        let seqs = synthetic_students(10);
        assert_eq!(make_folds(&seqs, 5, 42).unwrap(), make_folds(&seqs, 5, 42).unwrap());
        assert_ne!(make_folds(&seqs, 5, 42).unwrap(), make_folds(&seqs, 5, 43).unwrap());
    }

    #[test]
    fn eleven_students_five_folds_balance() {
        let folds = make_folds(&synthetic_students(11), 5, 7).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.test_ids.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn too_few_students_is_an_error() {
        assert!(matches!(
            make_folds(&synthetic_students(3), 5, 0),
            Err(IngestError::BadFoldCount { k: 5, students: 3 })
        ));
    }

    #[test]
    fn sequences_round_trip_through_jsonl() {
        let text = format!(
            "{HEADER}\nb,q1,k1;k2,1,0\nb,q2,k1,0,1\nb,q1,k1;k2,1,2\nb,q3,k2,1,3\n\
             a,q1,k1;k2,0,0\na,q4,k3,1,1\na,q1,k1;k2,1,2\na,q2,k1,1,3\n"
        );
        let seqs = parse(&text).unwrap();
        let mut buf = Vec::new();
        write_sequences(&mut buf, &seqs).unwrap();
        let back = read_sequences(Cursor::new(&buf)).unwrap();
        assert_eq!(back, seqs);
        let mut buf2 = Vec::new();
        write_sequences(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }
}
