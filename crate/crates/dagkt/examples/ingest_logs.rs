//! Parses a raw interaction log into canonical per-student sequences and
//! splits the students into cross-validation folds.
//!
//! Run with: cargo run --example ingest_logs

use dagkt::ingest::{compute_stats, make_folds, parse_log, ColumnMapping, ParseOptions};

const RAW_CSV: &str = "\
student_id,question_id,kc_ids,correct,order_index
s01,q1,algebra;fractions,1,0
s01,q2,fractions,0,1
s01,q2,fractions,1,2
s01,q3,geometry,1,3
s02,q1,algebra;fractions,0,0
s02,q3,geometry,1,1
s02,q2,fractions,1,2
s02,q1,algebra;fractions,1,3
s03,q2,fractions,0,0
s03,q1,algebra;fractions,0,1
s03,q3,geometry,0,2
s03,q2,fractions,1,3
s04,q3,geometry,1,0
s04,q2,fractions,1,1
s04,q1,algebra;fractions,1,2
s04,q3,geometry,1,3
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mapping = ColumnMapping::default();
    let options = ParseOptions::default();
    let sequences = parse_log(RAW_CSV.as_bytes(), &mapping, &options)?;

    let stats = compute_stats(&sequences)?;
    println!(
        "{} students, {} questions, {} skills, {} logs",
        stats.n_students, stats.n_questions, stats.n_skills, stats.n_logs
    );
    println!(
        "questions per skill {:.2}, skills per question {:.2}",
        stats.questions_per_skill, stats.skills_per_question
    );

    // attempts were not in the log, so they are derived from repetition
    let s01 = &sequences[0];
    for record in &s01.records {
        println!(
            "{} answered {} (attempt {}) -> {}",
            s01.student_id, record.question_id, record.attempts, record.correct
        );
    }

    let folds = make_folds(&sequences, 2, 7)?;
    for split in &folds {
        println!(
            "fold {}: train {:?} test {:?}",
            split.fold_index, split.train_ids, split.test_ids
        );
    }
    Ok(())
}
