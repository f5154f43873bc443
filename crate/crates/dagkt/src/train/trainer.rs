//! Cross-validated training.
//!
//! Folds split by student. The question/KC structure of the graph comes
//! from the whole corpus (it is metadata, not outcome data), while
//! similarity edges, difficulty values, and the attempt normalizer are
//! computed from the training students only, so no test-fold outcome leaks
//! into the inputs.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{auc::auc, batch_loss, TrainError};
use crate::autodiff::{clip_global_norm, Adam, AdamConfig, ParamStore, Tape};
use crate::graph::{
    build_graph, compute_attempts, compute_difficulty, AttemptTable, DifficultyTable, QKGraph,
};
use crate::ingest::{make_folds, StudentSequence};
use crate::model::{DagktModel, Mode, ModelConfig, ResolvedSeq};
use crate::seeding::{derive_seed, stream};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub folds: usize,
    pub seed: u64,
    /// Similarity acceptance threshold for graph edges.
    pub omega: f64,
    /// Smoothing constant in the co-occurrence precision/recall.
    pub lambda: f64,
    /// Minimum co-occurrence support for a similarity edge.
    pub min_support: u64,
    /// Cap on students; larger corpora are subsampled deterministically.
    pub max_students: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.001,
            clip_norm: 5.0,
            folds: 5,
            seed: 1,
            omega: crate::graph::DEFAULT_OMEGA,
            lambda: crate::graph::DEFAULT_LAMBDA,
            min_support: crate::graph::DEFAULT_MIN_SUPPORT,
            max_students: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::BadConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(TrainError::BadConfig(
                "learning_rate and clip_norm must be positive".into(),
            ));
        }
        if self.folds < 2 {
            return Err(TrainError::BadConfig(format!(
                "cross-validation needs at least 2 folds, got {}",
                self.folds
            )));
        }
        self.model.validate().map_err(TrainError::BadConfig)
    }
}

/// Everything one fold trains and evaluates against.
pub struct FoldArtifacts {
    pub fold: usize,
    pub graph: QKGraph,
    pub difficulty: DifficultyTable,
    pub attempts: AttemptTable,
    pub train: Vec<StudentSequence>,
    pub test: Vec<StudentSequence>,
}

/// Splits the corpus for one fold and derives all train-side statistics.
/// `base` optionally supplies the question/KC structure (e.g. from a graph
/// file built earlier); similarity edges are still rebuilt from the train
/// students alone.
pub fn fold_artifacts(
    sequences: &[StudentSequence],
    train_ids: &[String],
    test_ids: &[String],
    fold: usize,
    config: &TrainConfig,
    base: Option<&QKGraph>,
) -> Result<FoldArtifacts, TrainError> {
    let train_set: BTreeSet<&str> = train_ids.iter().map(String::as_str).collect();
    let test_set: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();
    let train: Vec<StudentSequence> = sequences
        .iter()
        .filter(|s| train_set.contains(s.student_id.as_str()))
        .cloned()
        .collect();
    let test: Vec<StudentSequence> = sequences
        .iter()
        .filter(|s| test_set.contains(s.student_id.as_str()))
        .cloned()
        .collect();

    // node structure from the full corpus, similarity edges from train only
    let whole = match base {
        Some(g) => g.clone(),
        None => build_graph(sequences, config.omega, config.lambda, config.min_support)?,
    };
    let train_only = build_graph(&train, config.omega, config.lambda, config.min_support)?;
    let graph = QKGraph {
        questions: whole.questions,
        kcs: whole.kcs,
        qk_edges: whole.qk_edges,
        qq_edges: train_only.qq_edges,
        omega: config.omega,
        lambda: config.lambda,
        c_min: config.min_support,
    };
    let difficulty = compute_difficulty(&train);
    let attempts = compute_attempts(&train);
    Ok(FoldArtifacts {
        fold,
        graph,
        difficulty,
        attempts,
        train,
        test,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    /// Mean training loss per predicted event.
    pub train_loss: f64,
    pub test_auc: f64,
}

pub struct FoldOutcome {
    pub fold: usize,
    pub best_epoch: usize,
    pub best_auc: f64,
    pub epochs: Vec<EpochRecord>,
    /// Parameter snapshot from the best epoch.
    pub best_params: ParamStore,
    pub model_config: ModelConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub best_epoch: usize,
    pub test_auc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub folds: Vec<FoldReport>,
    pub mean_auc: f64,
}

fn resolved_refs(seqs: &[ResolvedSeq]) -> Vec<&ResolvedSeq> {
    seqs.iter().collect()
}

/// Collects predictions and labels over `seqs` in evaluation mode.
fn evaluate(
    model: &DagktModel,
    seqs: &[ResolvedSeq],
    batch_size: usize,
    sample_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for chunk in resolved_refs(seqs).chunks(batch_size) {
        let mut tape = Tape::new();
        let out = model.forward_batch(&mut tape, chunk, Mode::Eval { sample_seed })?;
        preds.extend_from_slice(tape.value(out.predictions).data());
        labels.extend(out.events.iter().map(|e| e.label));
    }
    Ok((preds, labels))
}

/// Trains one fold to completion and keeps the parameters from the epoch
/// with the best held-out AUC.
pub fn train_fold(config: &TrainConfig, art: &FoldArtifacts) -> Result<FoldOutcome, TrainError> {
    config.validate()?;
    let fold = art.fold;
    let model_seed = derive_seed(config.seed, &[fold as u64]);
    let mut model = DagktModel::init(config.model.clone(), &art.graph, model_seed)?;

    let d_table = config.model.use_difficulty.then_some(&art.difficulty);
    let m_table = config.model.use_attempts.then_some(&art.attempts);
    let train_res = model.resolve(&art.train, d_table, m_table)?;
    let test_res = model.resolve(&art.test, d_table, m_table)?;

    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
    );

    let eval_seed = derive_seed(config.seed, &[stream::NEIGHBOR_SAMPLE, fold as u64, u64::MAX]);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParamStore)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_res.len()).collect();
        let shuffle_seed =
            derive_seed(config.seed, &[stream::BATCH_SHUFFLE, fold as u64, epoch as u64]);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));

        let mut loss_sum = 0.0;
        let mut event_count = 0usize;
        for (batch_i, idx_chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&ResolvedSeq> = idx_chunk.iter().map(|&i| &train_res[i]).collect();
            let mut tape = Tape::new();
            let step_path = &[fold as u64, epoch as u64, batch_i as u64];
            let out = model.forward_batch(
                &mut tape,
                &batch,
                Mode::Train {
                    sample_seed: derive_seed(
                        config.seed,
                        &[stream::NEIGHBOR_SAMPLE, step_path[0], step_path[1], step_path[2]],
                    ),
                    dropout_seed: derive_seed(
                        config.seed,
                        &[stream::DROPOUT, step_path[0], step_path[1], step_path[2]],
                    ),
                },
            )?;
            let loss = batch_loss(&mut tape, &out)?;
            let loss_val = tape.scalar_value(loss);
            if !loss_val.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    fold,
                    epoch,
                    batch: batch_i,
                });
            }
            loss_sum += loss_val;
            event_count += out.events.len();

            model.store.zero_grads();
            tape.backward(loss)?;
            tape.accumulate_param_grads(&mut model.store);
            clip_global_norm(&mut model.store, config.clip_norm);
            adam.step(&mut model.store);
        }

        let (preds, labels) = evaluate(&model, &test_res, config.batch_size, eval_seed)?;
        let test_auc = auc(&labels, &preds)?;
        let train_loss = loss_sum / event_count.max(1) as f64;
        epochs.push(EpochRecord {
            fold,
            epoch,
            train_loss,
            test_auc,
        });
        if best.as_ref().map_or(true, |(_, b, _)| test_auc > *b) {
            best = Some((epoch, test_auc, model.store.clone()));
        }
    }

    let (best_epoch, best_auc, best_params) = best.expect("at least one epoch");
    Ok(FoldOutcome {
        fold,
        best_epoch,
        best_auc,
        epochs,
        best_params,
        model_config: config.model.clone(),
    })
}

/// Deterministically caps the number of students when the config asks for
/// a subsample.
pub fn subsample_students(
    sequences: &[StudentSequence],
    cap: usize,
    seed: u64,
) -> Vec<StudentSequence> {
    if sequences.len() <= cap {
        return sequences.to_vec();
    }
    let mut ids: Vec<&str> = sequences.iter().map(|s| s.student_id.as_str()).collect();
    ids.sort_unstable();
    let pick_seed = derive_seed(seed, &[stream::FOLD_SHUFFLE, 1]);
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(pick_seed));
    let keep: BTreeSet<&str> = ids.into_iter().take(cap).collect();
    sequences
        .iter()
        .filter(|s| keep.contains(s.student_id.as_str()))
        .cloned()
        .collect()
}

/// Runs every fold (in parallel) and aggregates held-out AUC.
pub fn run_cv(
    config: &TrainConfig,
    sequences: &[StudentSequence],
    base: Option<&QKGraph>,
) -> Result<(EvalReport, Vec<FoldOutcome>), TrainError> {
    config.validate()?;
    let working: Vec<StudentSequence> = match config.max_students {
        Some(cap) => subsample_students(sequences, cap, config.seed),
        None => sequences.to_vec(),
    };
    let splits = make_folds(&working, config.folds, config.seed)?;

    let mut slots: Vec<Option<Result<FoldOutcome, TrainError>>> =
        (0..splits.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for split in &splits {
            let config = &config;
            let working = &working;
            handles.push((
                split.fold_index,
                scope.spawn(move || {
                    let art = fold_artifacts(
                        working,
                        &split.train_ids,
                        &split.test_ids,
                        split.fold_index,
                        config,
                        base,
                    )?;
                    train_fold(config, &art)
                }),
            ));
        }
        for (fold, handle) in handles {
            let result = handle.join().expect("fold thread panicked");
            slots[fold] = Some(result);
        }
    });

    let mut outcomes = Vec::with_capacity(slots.len());
    for slot in slots {
        outcomes.push(slot.expect("all folds ran")?);
    }
    let folds: Vec<FoldReport> = outcomes
        .iter()
        .map(|o| FoldReport {
            fold: o.fold,
            best_epoch: o.best_epoch,
            test_auc: o.best_auc,
        })
        .collect();
    let mean_auc = folds.iter().map(|f| f.test_auc).sum::<f64>() / folds.len().max(1) as f64;
    let variant = variant_name(&config.model);
    Ok((
        EvalReport {
            variant,
            folds,
            mean_auc,
        },
        outcomes,
    ))
}

fn variant_name(model: &ModelConfig) -> String {
    use crate::model::Variant;
    let flags = (
        model.use_difficulty,
        model.use_attempts,
        model.use_similarity_edges,
    );
    Variant::ALL
        .iter()
        .find(|v| v.flags() == flags)
        .map(|v| v.name().to_string())
        .unwrap_or_else(|| format!("custom{flags:?}"))
}
