//! Trains the full model with cross-validation on a small synthetic corpus
//! and prints the per-epoch learning curve for one fold.
//!
//! Run with: cargo run --release --example train_synthetic

use dagkt::model::ModelConfig;
use dagkt::train::{generate_synthetic, run_cv, SynthSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        n_students: 60,
        n_questions: 20,
        n_kcs: 6,
        planted_pairs: 3,
        seq_len: 20,
        seed: 5,
        ..SynthSpec::default()
    };
    let (sequences, _) = generate_synthetic(&spec)?;

    // scaled-down dimensions keep this example fast; the defaults match the
    // full configuration (embedding 100, LSTM layers 200 and 100)
    let config = TrainConfig {
        epochs: 10,
        folds: 3,
        seed: 5,
        model: ModelConfig {
            embed_dim: 16,
            gcn_layers: 2,
            gcn_question_neighbors: 4,
            gcn_skill_neighbors: 4,
            lstm_layer_sizes: vec![32, 16],
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };

    let (report, outcomes) = run_cv(&config, &sequences, None)?;
    for record in &outcomes[0].epochs {
        println!(
            "fold {} epoch {:>2}: train loss {:.4}, test AUC {:.4}",
            record.fold, record.epoch, record.train_loss, record.test_auc
        );
    }
    for fold in &report.folds {
        println!(
            "fold {}: best epoch {} with AUC {:.4}",
            fold.fold, fold.best_epoch, fold.test_auc
        );
    }
    println!("mean best AUC: {:.4}", report.mean_auc);
    Ok(())
}
