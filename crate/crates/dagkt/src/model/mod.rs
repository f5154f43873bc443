//! The knowledge-tracing network.
//!
//! Per batch: propagate question/KC embeddings over the graph, encode
//! difficulty and attempt scalars, fuse each record's question, difficulty,
//! answer and attempts into an exercise embedding, drive the stacked LSTM
//! across time, and predict each next answer with the attention head.
//! Reduced variants swap the fusion for a question+answer path and skip the
//! codecs entirely.

pub mod codec;
pub mod config;
pub mod gcn;
pub mod head;
pub mod lstm;
pub mod vocab;

pub use config::{ModelConfig, Variant};
pub use vocab::Vocab;

use std::cmp::Reverse;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::checkpoint::{self, CheckpointError};
use crate::autodiff::{DiffError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::graph::{AttemptTable, DifficultyTable, QKGraph};
use crate::ingest::StudentSequence;
use crate::seeding::{derive_seed, stream};

use codec::ScalarCodec;
use gcn::{Activation, Adjacency, SamplingCaps};
use lstm::LstmStack;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("unknown question id: {0}")]
    UnknownQuestion(String),
    #[error("unknown KC id: {0}")]
    UnknownKc(String),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("{0} table required by the active variant but not supplied")]
    MissingTable(&'static str),
    #[error("{what} value {value} outside [0, 1]")]
    InputRange { what: &'static str, value: f64 },
    #[error("batch contains no predictable events")]
    EmptyBatch,
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

impl From<CheckpointError> for ModelError {
    fn from(e: CheckpointError) -> Self {
        ModelError::Checkpoint(e.to_string())
    }
}

enum FusionIds {
    /// Two-branch path: `relu(W3 [W1[q,d]+b1, W2[a,m]+b2] + b3)`.
    Full {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
        w3: ParamId,
        b3: ParamId,
    },
    /// Question+answer path: `relu(W [q,a] + b)`.
    Reduced { w: ParamId, b: ParamId },
}

struct ParamIds {
    q_table: ParamId,
    kc_table: ParamId,
    a_table: ParamId,
    gcn: Vec<(ParamId, ParamId)>,
    fusion: FusionIds,
    head_scale: ParamId,
}

pub struct DagktModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    adj: Adjacency,
    ids: ParamIds,
    codec_d: Option<ScalarCodec>,
    codec_m: Option<ScalarCodec>,
    lstm: LstmStack,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    Tensor::randn(&[rows, cols], std, rng)
}

impl DagktModel {
    /// Builds and initializes all parameters the configured variant needs.
    /// Disabled inputs register no parameters, so a checkpoint lists
    /// exactly what the variant trained.
    pub fn init(config: ModelConfig, graph: &QKGraph, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::BadConfig)?;
        let vocab = Vocab::from_graph(graph);
        let adj = Adjacency::build(graph, &vocab, config.use_similarity_edges);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::PARAM_INIT]));
        let mut store = ParamStore::new();
        let e = config.embed_dim;
        let table_std = 1.0 / (e as f64).sqrt();

        let q_table = store.register(
            "q_embed",
            Tensor::randn(&[vocab.n_questions().max(1), e], table_std, &mut rng),
        )?;
        let kc_table = store.register(
            "kc_embed",
            Tensor::randn(&[vocab.n_kcs().max(1), e], table_std, &mut rng),
        )?;
        let a_table = store.register("a_embed", Tensor::randn(&[2, e], table_std, &mut rng))?;

        let mut gcn_ids = Vec::with_capacity(config.gcn_layers);
        for l in 0..config.gcn_layers {
            let w = store.register(&format!("gcn{l}_w"), glorot(e, e, &mut rng))?;
            let b = store.register(&format!("gcn{l}_b"), Tensor::zeros(&[e]))?;
            gcn_ids.push((w, b));
        }

        let codec_d = if config.use_difficulty {
            Some(ScalarCodec::register(&mut store, "dcodec", e, &mut rng)?)
        } else {
            None
        };
        let codec_m = if config.use_attempts {
            Some(ScalarCodec::register(&mut store, "mcodec", e, &mut rng)?)
        } else {
            None
        };

        let fusion = if config.reduced_fusion() {
            FusionIds::Reduced {
                w: store.register("fuse_r_w", glorot(2 * e, e, &mut rng))?,
                b: store.register("fuse_r_b", Tensor::zeros(&[e]))?,
            }
        } else {
            FusionIds::Full {
                w1: store.register("fuse_w1", glorot(2 * e, e, &mut rng))?,
                b1: store.register("fuse_b1", Tensor::zeros(&[e]))?,
                w2: store.register("fuse_w2", glorot(2 * e, e, &mut rng))?,
                b2: store.register("fuse_b2", Tensor::zeros(&[e]))?,
                w3: store.register("fuse_w3", glorot(2 * e, e, &mut rng))?,
                b3: store.register("fuse_b3", Tensor::zeros(&[e]))?,
            }
        };

        let lstm = LstmStack::register(&mut store, e, &config.lstm_layer_sizes, &mut rng)?;
        let head_scale = store.register("head_scale", Tensor::filled(&[e], 1.0))?;

        Ok(Self {
            config,
            vocab,
            store,
            adj,
            ids: ParamIds {
                q_table,
                kc_table,
                a_table,
                gcn: gcn_ids,
                fusion,
                head_scale,
            },
            codec_d,
            codec_m,
            lstm,
        })
    }

    /// Overwrites parameter values from a saved checkpoint. Names and
    /// shapes must match this model's registration exactly.
    pub fn load_params(&mut self, dir: &std::path::Path) -> Result<(), ModelError> {
        let loaded = checkpoint::load(dir)?;
        if loaded.len() != self.store.len() {
            return Err(ModelError::Checkpoint(format!(
                "parameter count {} does not match model ({})",
                loaded.len(),
                self.store.len()
            )));
        }
        for p in loaded.iter() {
            let id = self
                .store
                .id(&p.name)
                .map_err(|_| ModelError::Checkpoint(format!("unexpected parameter {}", p.name)))?;
            if self.store.value(id).shape() != p.value.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} shape {:?} does not match model {:?}",
                    p.name,
                    p.value.shape(),
                    self.store.value(id).shape()
                )));
            }
            *self.store.value_mut(id) = p.value.clone();
        }
        Ok(())
    }

    /// Turns raw sequences into index-space sequences with per-record
    /// difficulty and normalized attempt values. Tables are consulted only
    /// for enabled inputs, so reduced variants provably never read them.
    pub fn resolve(
        &self,
        sequences: &[StudentSequence],
        difficulty: Option<&DifficultyTable>,
        attempts: Option<&AttemptTable>,
    ) -> Result<Vec<ResolvedSeq>, ModelError> {
        let need_d = self.config.use_difficulty;
        let need_m = self.config.use_attempts;
        if need_d && difficulty.is_none() {
            return Err(ModelError::MissingTable("difficulty"));
        }
        if need_m && attempts.is_none() {
            return Err(ModelError::MissingTable("attempts"));
        }
        let mut out = Vec::with_capacity(sequences.len());
        for seq in sequences {
            let mut resolved = ResolvedSeq {
                student_id: seq.student_id.clone(),
                q_idx: Vec::with_capacity(seq.records.len()),
                a_idx: Vec::with_capacity(seq.records.len()),
                labels: Vec::with_capacity(seq.records.len()),
                d_vals: Vec::new(),
                m_vals: Vec::new(),
                kcs: Vec::with_capacity(seq.records.len()),
            };
            for rec in &seq.records {
                resolved.q_idx.push(self.vocab.question_index(&rec.question_id)?);
                resolved.a_idx.push(rec.correct as usize);
                resolved.labels.push(rec.correct as f64);
                let mut kc_idx = rec
                    .kc_ids
                    .iter()
                    .map(|k| self.vocab.kc_index(k))
                    .collect::<Result<Vec<_>, _>>()?;
                kc_idx.sort_unstable();
                resolved.kcs.push(kc_idx);
                if need_d {
                    let d = difficulty.expect("checked").difficulty_or_mean(&rec.question_id);
                    if !(0.0..=1.0).contains(&d) {
                        return Err(ModelError::InputRange {
                            what: "difficulty",
                            value: d,
                        });
                    }
                    resolved.d_vals.push(d);
                }
                if need_m {
                    let m = attempts.expect("checked").normalized(rec.attempts);
                    if !(0.0..=1.0).contains(&m) {
                        return Err(ModelError::InputRange {
                            what: "attempts",
                            value: m,
                        });
                    }
                    resolved.m_vals.push(m);
                }
            }
            out.push(resolved);
        }
        Ok(out)
    }

    /// Runs the full network over a batch and returns tape handles for the
    /// loss plus plain-value event metadata for metrics.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        batch: &[&ResolvedSeq],
        mode: Mode,
    ) -> Result<BatchOutput, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let trainable = matches!(mode, Mode::Train { .. });
        let sample_seed = match mode {
            Mode::Train { sample_seed, .. } | Mode::Eval { sample_seed } => sample_seed,
        };

        // longest first, so the active batch at any timestep is a prefix
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.sort_by_key(|&i| (Reverse(batch[i].len()), i));
        let seqs: Vec<&ResolvedSeq> = order.iter().map(|&i| batch[i]).collect();

        let bind = |tape: &mut Tape, id: ParamId| {
            if trainable {
                tape.param(&self.store, id)
            } else {
                tape.frozen_param(&self.store, id)
            }
        };

        let q_table = bind(tape, self.ids.q_table);
        let kc_table = bind(tape, self.ids.kc_table);
        let a_table = bind(tape, self.ids.a_table);
        let gcn_vars: Vec<(Var, Var)> = self
            .ids
            .gcn
            .iter()
            .map(|&(w, b)| (bind(tape, w), bind(tape, b)))
            .collect();
        let head_scale = bind(tape, self.ids.head_scale);

        let mut refined = gcn::propagate(
            tape,
            q_table,
            kc_table,
            &gcn_vars,
            &self.adj,
            SamplingCaps {
                questions: self.config.gcn_question_neighbors,
                skills: self.config.gcn_skill_neighbors,
            },
            Activation::Tanh,
            sample_seed,
        )?;
        if let Mode::Train { dropout_seed, .. } = mode {
            refined = tape.dropout(refined, self.config.dropout_keep, true, dropout_seed)?;
        }

        // consumed records per sequence: all but the last
        let consumed: Vec<usize> = seqs.iter().map(|s| s.len().saturating_sub(1)).collect();
        let offsets: Vec<usize> = consumed
            .iter()
            .scan(0usize, |acc, &c| {
                let here = *acc;
                *acc += c;
                Some(here)
            })
            .collect();
        let total_consumed: usize = consumed.iter().sum();
        if total_consumed == 0 {
            return Err(ModelError::EmptyBatch);
        }

        let encode_all = |tape: &mut Tape,
                          codec: &ScalarCodec,
                          values: Vec<f64>|
         -> Result<(Var, Var, Tensor), ModelError> {
            let targets = Tensor::matrix(values.len(), 1, values)?;
            let col = tape.constant(targets.clone());
            let vars = codec.bind(tape, &self.store, trainable);
            let (embed, recon) = vars.encode_decode(tape, col)?;
            Ok((embed, recon, targets))
        };

        let d_parts = match &self.codec_d {
            Some(codec) => {
                let mut values = Vec::with_capacity(total_consumed);
                for (s, seq) in seqs.iter().enumerate() {
                    values.extend_from_slice(&seq.d_vals[..consumed[s]]);
                }
                Some(encode_all(tape, codec, values)?)
            }
            None => None,
        };
        let m_parts = match &self.codec_m {
            Some(codec) => {
                let mut values = Vec::with_capacity(total_consumed);
                for (s, seq) in seqs.iter().enumerate() {
                    values.extend_from_slice(&seq.m_vals[..consumed[s]]);
                }
                Some(encode_all(tape, codec, values)?)
            }
            None => None,
        };

        let fusion = match &self.ids.fusion {
            FusionIds::Full {
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
            } => FusionVars::Full {
                w1: bind(tape, *w1),
                b1: bind(tape, *b1),
                w2: bind(tape, *w2),
                b2: bind(tape, *b2),
                w3: bind(tape, *w3),
                b3: bind(tape, *b3),
            },
            FusionIds::Reduced { w, b } => FusionVars::Reduced {
                w: bind(tape, *w),
                b: bind(tape, *b),
            },
        };
        let lstm_vars = self.lstm.bind(tape, &self.store, trainable);

        let t_max = seqs[0].len();
        let mut states = lstm_vars.zero_state(tape, seqs.len());
        let mut active = seqs.len();
        let mut h_tops: Vec<Var> = Vec::with_capacity(t_max.saturating_sub(1));
        let mut event_ps: Vec<Var> = Vec::new();
        let mut events: Vec<EventInfo> = Vec::new();
        let mut label_values: Vec<f64> = Vec::new();

        for t in 0..t_max.saturating_sub(1) {
            let now_active = seqs.iter().take(active).filter(|s| s.len() >= t + 2).count();
            if now_active == 0 {
                break;
            }
            if now_active < active {
                let keep: Vec<usize> = (0..now_active).collect();
                for slot in states.iter_mut() {
                    slot.0 = tape.gather_rows(slot.0, &keep)?;
                    slot.1 = tape.gather_rows(slot.1, &keep)?;
                }
                active = now_active;
            }

            let q_rows: Vec<usize> = (0..active).map(|b| seqs[b].q_idx[t]).collect();
            let a_rows: Vec<usize> = (0..active).map(|b| seqs[b].a_idx[t]).collect();
            let q = tape.gather_rows(refined, &q_rows)?;
            let a = tape.gather_rows(a_table, &a_rows)?;

            let x = match &fusion {
                FusionVars::Full {
                    w1,
                    b1,
                    w2,
                    b2,
                    w3,
                    b3,
                } => {
                    let zero_embed = |tape: &mut Tape| {
                        tape.constant(Tensor::zeros(&[active, self.config.embed_dim]))
                    };
                    let cons_rows: Vec<usize> = (0..active).map(|b| offsets[b] + t).collect();
                    let d = match &d_parts {
                        Some((embed, _, _)) => tape.gather_rows(*embed, &cons_rows)?,
                        None => zero_embed(tape),
                    };
                    let m = match &m_parts {
                        Some((embed, _, _)) => tape.gather_rows(*embed, &cons_rows)?,
                        None => zero_embed(tape),
                    };
                    let qd = tape.concat_cols(&[q, d])?;
                    let h1 = tape.matmul(qd, *w1)?;
                    let h1 = tape.add_bias(h1, *b1)?;
                    let am = tape.concat_cols(&[a, m])?;
                    let h2 = tape.matmul(am, *w2)?;
                    let h2 = tape.add_bias(h2, *b2)?;
                    let joined = tape.concat_cols(&[h1, h2])?;
                    let z = tape.matmul(joined, *w3)?;
                    let z = tape.add_bias(z, *b3)?;
                    tape.relu(z)
                }
                FusionVars::Reduced { w, b } => {
                    let qa = tape.concat_cols(&[q, a])?;
                    let z = tape.matmul(qa, *w)?;
                    let z = tape.add_bias(z, *b)?;
                    tape.relu(z)
                }
            };

            let top = lstm_vars.step(tape, x, &mut states)?;
            h_tops.push(top);

            for b in 0..active {
                let seq = seqs[b];
                let target_q = seq.q_idx[t + 1];
                let target_kcs = &seq.kcs[t + 1];

                let mut state_rows = vec![tape.gather_rows(top, &[b])?];
                let mut picked = 0usize;
                for t_prior in (0..t).rev() {
                    if picked == self.config.recap_count {
                        break;
                    }
                    let shares = seq.kcs[t_prior].iter().any(|k| target_kcs.contains(k));
                    if shares {
                        state_rows.push(tape.gather_rows(h_tops[t_prior], &[b])?);
                        picked += 1;
                    }
                }

                let mut anchor_rows = vec![tape.gather_rows(refined, &[target_q])?];
                for &k in target_kcs.iter().take(self.config.related_skill_count) {
                    let node = self.vocab.kc_node(k);
                    anchor_rows.push(tape.gather_rows(refined, &[node])?);
                }

                let p = head::predict_event(tape, head_scale, &state_rows, &anchor_rows)?;
                event_ps.push(p);
                events.push(EventInfo {
                    student_id: seq.student_id.clone(),
                    step: t + 1,
                    label: seq.labels[t + 1],
                });
                label_values.push(seq.labels[t + 1]);
            }
        }

        if event_ps.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let predictions = tape.concat_rows(&event_ps)?;
        let labels = Tensor::matrix(label_values.len(), 1, label_values)?;
        Ok(BatchOutput {
            predictions,
            labels,
            events,
            d_recon: d_parts.map(|(_, recon, targets)| (recon, targets)),
            m_recon: m_parts.map(|(_, recon, targets)| (recon, targets)),
        })
    }

    /// Evaluation pass over one sequence: predictions for steps `2..=T`
    /// aligned with their true labels, plus the reconstruction pairs.
    pub fn forward_sequence(
        &self,
        seq: &ResolvedSeq,
        sample_seed: u64,
    ) -> Result<SequenceOutput, ModelError> {
        let mut tape = Tape::new();
        let out = self.forward_batch(&mut tape, &[seq], Mode::Eval { sample_seed })?;
        let predictions = tape.value(out.predictions).data().to_vec();
        let labels = out.labels.data().to_vec();
        let recon_pairs = |part: Option<(Var, Tensor)>| -> Vec<(f64, f64)> {
            part.map(|(recon, targets)| {
                targets
                    .data()
                    .iter()
                    .copied()
                    .zip(tape.value(recon).data().iter().copied())
                    .collect()
            })
            .unwrap_or_default()
        };
        let d_pairs = recon_pairs(out.d_recon);
        let m_pairs = recon_pairs(out.m_recon);
        Ok(SequenceOutput {
            predictions,
            labels,
            d_pairs,
            m_pairs,
        })
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adj
    }
}

enum FusionVars {
    Full {
        w1: Var,
        b1: Var,
        w2: Var,
        b2: Var,
        w3: Var,
        b3: Var,
    },
    Reduced {
        w: Var,
        b: Var,
    },
}

/// Forward-pass mode. Seeds make neighbor sampling and dropout masks pure
/// functions of the caller's (epoch, batch) position.
#[derive(Clone, Copy, Debug)]
pub enum Mode {
    Train { sample_seed: u64, dropout_seed: u64 },
    Eval { sample_seed: u64 },
}

/// A sequence mapped into index space with its per-record input scalars.
#[derive(Clone, Debug)]
pub struct ResolvedSeq {
    pub student_id: String,
    pub q_idx: Vec<usize>,
    pub a_idx: Vec<usize>,
    pub labels: Vec<f64>,
    pub d_vals: Vec<f64>,
    pub m_vals: Vec<f64>,
    pub kcs: Vec<Vec<usize>>,
}

impl ResolvedSeq {
    pub fn len(&self) -> usize {
        self.q_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_idx.is_empty()
    }
}

pub struct EventInfo {
    pub student_id: String,
    /// Record index of the predicted answer (1-based step within the
    /// sequence, so the first predictable record is step 1).
    pub step: usize,
    pub label: f64,
}

pub struct BatchOutput {
    pub predictions: Var,
    pub labels: Tensor,
    pub events: Vec<EventInfo>,
    pub d_recon: Option<(Var, Tensor)>,
    pub m_recon: Option<(Var, Tensor)>,
}

pub struct SequenceOutput {
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
    pub d_pairs: Vec<(f64, f64)>,
    pub m_pairs: Vec<(f64, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, compute_attempts, compute_difficulty};
    use crate::ingest::InteractionRecord;

    fn toy_sequences() -> Vec<StudentSequence> {
        let make = |student: &str, answers: &[(&str, &str, u8)]| {
            let records = answers
                .iter()
                .enumerate()
                .map(|(t, (q, k, c))| InteractionRecord {
                    student_id: student.to_string(),
                    question_id: q.to_string(),
                    kc_ids: vec![k.to_string()],
                    correct: *c,
                    attempts: 1 + (t as u32 % 2),
                    order_index: t as u64,
                })
                .collect();
            StudentSequence {
                student_id: student.to_string(),
                records,
            }
        };
        vec![
            make(
                "s1",
                &[
                    ("q1", "k1", 1),
                    ("q2", "k1", 0),
                    ("q3", "k2", 1),
                    ("q1", "k1", 1),
                    ("q4", "k2", 0),
                ],
            ),
            make(
                "s2",
                &[
                    ("q2", "k1", 1),
                    ("q1", "k1", 1),
                    ("q4", "k2", 1),
                    ("q5", "k2", 0),
                ],
            ),
        ]
    }

    fn toy_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 6,
            gcn_layers: 1,
            lstm_layer_sizes: vec![8, 6],
            recap_count: 2,
            related_skill_count: 2,
            ..ModelConfig::default()
        }
    }

    fn toy_model(config: ModelConfig) -> (DagktModel, Vec<ResolvedSeq>) {
        let seqs = toy_sequences();
        let graph = build_graph(&seqs, 0.9, 0.01, 3).unwrap();
        let difficulty = compute_difficulty(&seqs);
        let attempts = compute_attempts(&seqs);
        let model = DagktModel::init(config, &graph, 7).unwrap();
        let need_d = model.config.use_difficulty;
        let need_m = model.config.use_attempts;
        let resolved = model
            .resolve(
                &seqs,
                need_d.then_some(&difficulty),
                need_m.then_some(&attempts),
            )
            .unwrap();
        (model, resolved)
    }

    #[test]
    fn prediction_count_is_len_minus_one() {
        let (model, resolved) = toy_model(toy_config());
        let out = model.forward_sequence(&resolved[0], 0).unwrap();
        assert_eq!(resolved[0].len(), 5);
        assert_eq!(out.predictions.len(), 4);
        assert_eq!(out.labels, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(out.d_pairs.len(), 4);
        assert_eq!(out.m_pairs.len(), 4);
    }

    #[test]
    fn eval_is_deterministic_and_in_open_interval() {
        let (model, resolved) = toy_model(toy_config());
        let a = model.forward_sequence(&resolved[1], 3).unwrap();
        let b = model.forward_sequence(&resolved[1], 3).unwrap();
        assert_eq!(a.predictions, b.predictions);
        for p in &a.predictions {
            assert!(*p > 0.0 && *p < 1.0);
        }
    }

    #[test]
    fn batch_and_single_eval_agree() {
        let (model, resolved) = toy_model(toy_config());
        let mut tape = Tape::new();
        let refs: Vec<&ResolvedSeq> = resolved.iter().collect();
        let batch = model
            .forward_batch(&mut tape, &refs, Mode::Eval { sample_seed: 11 })
            .unwrap();
        let batch_ps = tape.value(batch.predictions).data().to_vec();
        let mut from_batch: Vec<(String, usize, f64)> = batch
            .events
            .iter()
            .zip(&batch_ps)
            .map(|(ev, p)| (ev.student_id.clone(), ev.step, *p))
            .collect();
        from_batch.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));

        let mut from_single = Vec::new();
        for seq in &resolved {
            let out = model.forward_sequence(seq, 11).unwrap();
            for (i, p) in out.predictions.iter().enumerate() {
                from_single.push((seq.student_id.clone(), i + 1, *p));
            }
        }
        from_single.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));

        assert_eq!(from_batch.len(), from_single.len());
        for (a, b) in from_batch.iter().zip(&from_single) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
            assert!(
                (a.2 - b.2).abs() < 1e-12,
                "{}@{}: {} vs {}",
                a.0,
                a.1,
                a.2,
                b.2
            );
        }
    }

    #[test]
    fn reduced_variant_registers_no_codec_or_fusion_branches() {
        let (model, resolved) = toy_model(toy_config().with_variant(Variant::R));
        assert!(model.store.id("fuse_r_w").is_ok());
        assert!(model.store.id("fuse_w1").is_err());
        assert!(model.store.id("dcodec_enc1_w").is_err());
        assert!(model.store.id("mcodec_enc1_w").is_err());
        let out = model.forward_sequence(&resolved[0], 0).unwrap();
        assert!(out.d_pairs.is_empty());
        assert!(out.m_pairs.is_empty());
        assert!(resolved[0].d_vals.is_empty());
        assert!(resolved[0].m_vals.is_empty());
    }

    #[test]
    fn variant_d_zeroes_attempts_but_keeps_difficulty() {
        let (model, resolved) = toy_model(toy_config().with_variant(Variant::D));
        assert!(model.store.id("dcodec_enc1_w").is_ok());
        assert!(model.store.id("mcodec_enc1_w").is_err());
        let out = model.forward_sequence(&resolved[0], 0).unwrap();
        assert_eq!(out.d_pairs.len(), 4);
        assert!(out.m_pairs.is_empty());
    }

    #[test]
    fn resolve_requires_tables_for_enabled_inputs() {
        let (model, _) = toy_model(toy_config());
        let seqs = toy_sequences();
        assert!(matches!(
            model.resolve(&seqs, None, None),
            Err(ModelError::MissingTable("difficulty"))
        ));
    }

    #[test]
    fn unknown_question_fails_resolution() {
        let (model, _) = toy_model(toy_config());
        let mut seqs = toy_sequences();
        seqs[0].records[0].question_id = "q-unknown".into();
        let difficulty = compute_difficulty(&seqs);
        let attempts = compute_attempts(&seqs);
        let err = model
            .resolve(&seqs, Some(&difficulty), Some(&attempts))
            .unwrap_err();
        assert!(matches!(err, ModelError::UnknownQuestion(_)));
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let (model, resolved) = toy_model(toy_config());
        let before = model.forward_sequence(&resolved[0], 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        checkpoint::save(&model.store, dir.path()).unwrap();

        let (mut fresh, _) = toy_model(toy_config());
        fresh.load_params(dir.path()).unwrap();
        let after = fresh.forward_sequence(&resolved[0], 5).unwrap();
        assert_eq!(before.predictions, after.predictions);
    }

    #[test]
    fn mismatched_checkpoint_is_refused() {
        let (model, _) = toy_model(toy_config());
        let dir = tempfile::tempdir().unwrap();
        checkpoint::save(&model.store, dir.path()).unwrap();
        let (mut reduced, _) = toy_model(toy_config().with_variant(Variant::R));
        let err = reduced.load_params(dir.path()).unwrap_err();
        assert!(matches!(err, ModelError::Checkpoint(_)));
    }
}
