//! Generates a synthetic corpus with known ground truth, then recovers the
//! planted near-duplicate question pairs from outcome co-occurrence alone.
//!
//! Run with: cargo run --example synthesize_corpus

use dagkt::train::{generate_synthetic, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // modest ability and difficulty spread keeps unrelated questions from
    // looking similar by accident
    let spec = SynthSpec {
        n_students: 150,
        n_questions: 30,
        n_kcs: 8,
        planted_pairs: 4,
        seq_len: 25,
        ability_std: 0.5,
        difficulty_std: 0.5,
        mastery_gain: 0.05,
        seed: 42,
        ..SynthSpec::default()
    };
    let (sequences, truth) = generate_synthetic(&spec)?;

    println!("{} students, {} records each", sequences.len(), spec.seq_len);
    let s0 = &sequences[0];
    for rec in s0.records.iter().take(5) {
        println!(
            "{}: {} kcs={:?} attempts={} correct={}",
            s0.student_id, rec.question_id, rec.kc_ids, rec.attempts, rec.correct
        );
    }
    println!("planted pairs: {:?}", truth.planted);

    // planted members always share an outcome, so their similarity is 1
    // and a strict threshold keeps everything else out
    let graph = dagkt::graph::build_graph(&sequences, 0.9, 0.01, 3)?;
    let mut found: Vec<(String, String)> = graph
        .qq_edges
        .iter()
        .map(|e| (e.q1.clone(), e.q2.clone()))
        .collect();
    found.sort();
    println!("recovered pairs: {found:?}");
    assert_eq!(found, truth.planted);

    // ground-truth event probabilities bound what any model can reach
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for seq in &sequences {
        let per_student = &truth.event_probs[&seq.student_id];
        for (rec, p) in seq.records.iter().zip(per_student).skip(1) {
            probs.push(*p);
            labels.push(rec.correct as f64);
        }
    }
    let ceiling = dagkt::train::auc(&labels, &probs)?;
    println!("oracle AUC on this corpus: {ceiling:.4}");
    Ok(())
}
