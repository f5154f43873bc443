//! Synthetic interaction corpus with known ground truth.
//!
//! Students have latent abilities, questions latent difficulties, and each
//! answer is drawn from a logistic model of ability, difficulty, and how
//! often the student has already practiced the question's KCs. Selected
//! "planted" question pairs share KC sets and outcome draws, so their
//! correctness co-occurrence is perfect and a similarity graph built from
//! the corpus should connect them. The generative probability of every
//! event is returned alongside the data: it is the Bayes-optimal predictor
//! and upper-bounds any model's AUC on this corpus.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::sigmoid;
use crate::ingest::{InteractionRecord, StudentSequence};
use crate::seeding::{derive_seed, stream};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_students: usize,
    pub n_questions: usize,
    pub n_kcs: usize,
    pub kcs_per_question: usize,
    /// Records generated per student.
    pub seq_len: usize,
    /// Question pairs with identical KC sets, difficulty, and outcomes.
    pub planted_pairs: usize,
    /// Chance a student's sequence includes both members of a planted pair.
    pub pair_exposure: f64,
    pub ability_std: f64,
    pub difficulty_std: f64,
    /// Logit boost per prior record sharing a KC with the current question.
    pub mastery_gain: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_students: 200,
            n_questions: 50,
            n_kcs: 10,
            kcs_per_question: 2,
            seq_len: 30,
            planted_pairs: 5,
            pair_exposure: 0.8,
            ability_std: 1.0,
            difficulty_std: 1.0,
            mastery_gain: 0.15,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n_students == 0 || self.n_questions == 0 || self.n_kcs == 0 {
            return Err(TrainError::BadConfig(
                "students, questions, and KCs must all be nonzero".into(),
            ));
        }
        if self.kcs_per_question == 0 || self.kcs_per_question > self.n_kcs {
            return Err(TrainError::BadConfig(format!(
                "kcs_per_question must be in 1..={}, got {}",
                self.n_kcs, self.kcs_per_question
            )));
        }
        if self.n_questions < 2 * self.planted_pairs {
            return Err(TrainError::BadConfig(format!(
                "{} planted pairs need {} questions, corpus has {}",
                self.planted_pairs,
                2 * self.planted_pairs,
                self.n_questions
            )));
        }
        if self.seq_len < 4 {
            return Err(TrainError::BadConfig(format!(
                "seq_len {} too short: sequences under 4 records are discarded",
                self.seq_len
            )));
        }
        if !(0.0..=1.0).contains(&self.pair_exposure) {
            return Err(TrainError::BadConfig(format!(
                "pair_exposure must be in [0, 1], got {}",
                self.pair_exposure
            )));
        }
        Ok(())
    }
}

/// Latents behind a generated corpus, keyed by the public ids.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub abilities: BTreeMap<String, f64>,
    pub difficulties: BTreeMap<String, f64>,
    /// Generative success probability of each record, in record order.
    pub event_probs: BTreeMap<String, Vec<f64>>,
    pub planted: Vec<(String, String)>,
}

fn question_id(i: usize) -> String {
    format!("q{i:03}")
}

fn kc_id(i: usize) -> String {
    format!("kc{i:02}")
}

fn student_id(i: usize) -> String {
    format!("s{i:04}")
}

pub fn generate_synthetic(
    spec: &SynthSpec,
) -> Result<(Vec<StudentSequence>, GroundTruth), TrainError> {
    spec.validate()?;
    let mut setup_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[stream::SYNTH, 0]));

    // planted pair members get identical KC sets; everyone else draws fresh
    let mut kc_sets: Vec<Vec<usize>> = Vec::with_capacity(spec.n_questions);
    let draw_kcs = |rng: &mut ChaCha8Rng| {
        let mut kcs = Vec::with_capacity(spec.kcs_per_question);
        while kcs.len() < spec.kcs_per_question {
            let k = rng.gen_range(0..spec.n_kcs);
            if !kcs.contains(&k) {
                kcs.push(k);
            }
        }
        kcs.sort_unstable();
        kcs
    };
    let mut difficulties = Vec::with_capacity(spec.n_questions);
    for q in 0..spec.n_questions {
        let paired_with_prev = q < 2 * spec.planted_pairs && q % 2 == 1;
        if paired_with_prev {
            kc_sets.push(kc_sets[q - 1].clone());
            difficulties.push(difficulties[q - 1]);
        } else {
            kc_sets.push(draw_kcs(&mut setup_rng));
            difficulties.push(spec.difficulty_std * standard_normal(&mut setup_rng));
        }
    }

    let planted: Vec<(String, String)> = (0..spec.planted_pairs)
        .map(|p| (question_id(2 * p), question_id(2 * p + 1)))
        .collect();

    let mut sequences = Vec::with_capacity(spec.n_students);
    let mut abilities = BTreeMap::new();
    let mut event_probs = BTreeMap::new();

    for s in 0..spec.n_students {
        let sid = student_id(s);
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[stream::SYNTH, 1, s as u64]));
        let ability = spec.ability_std * standard_normal(&mut rng);

        // choose the question slate: planted pairs first, uniform fill after
        let mut slate: Vec<usize> = Vec::with_capacity(spec.seq_len);
        for p in 0..spec.planted_pairs {
            if slate.len() + 2 <= spec.seq_len && rng.gen::<f64>() < spec.pair_exposure {
                slate.push(2 * p);
                slate.push(2 * p + 1);
            }
        }
        while slate.len() < spec.seq_len {
            slate.push(rng.gen_range(0..spec.n_questions));
        }
        // partial Fisher-Yates shuffle
        for i in (1..slate.len()).rev() {
            let j = rng.gen_range(0..=i);
            slate.swap(i, j);
        }

        let mut kc_exposures = vec![0usize; spec.n_kcs];
        let mut pair_outcome: BTreeMap<usize, (u8, f64)> = BTreeMap::new();
        let mut records = Vec::with_capacity(spec.seq_len);
        let mut probs = Vec::with_capacity(spec.seq_len);
        let mut occurrence: BTreeMap<usize, u32> = BTreeMap::new();

        for (t, &q) in slate.iter().enumerate() {
            let exposure: usize = kc_sets[q].iter().map(|&k| kc_exposures[k]).sum();
            let p = sigmoid(ability - difficulties[q] + spec.mastery_gain * exposure as f64);

            let pair_key = (q < 2 * spec.planted_pairs).then(|| q / 2);
            let (correct, recorded_p) = match pair_key.and_then(|k| pair_outcome.get(&k).copied()) {
                Some(shared) => shared,
                None => {
                    let c = u8::from(rng.gen::<f64>() < p);
                    if let Some(k) = pair_key {
                        pair_outcome.insert(k, (c, p));
                    }
                    (c, p)
                }
            };

            // strugglers need more tries: failures before a success at the
            // event's own success probability, capped
            let q_try = recorded_p.clamp(0.15, 0.95);
            let mut attempts = 1u32;
            while attempts < 10 && rng.gen::<f64>() > q_try {
                attempts += 1;
            }

            let occ = occurrence.entry(q).or_insert(0);
            *occ += 1;

            records.push(InteractionRecord {
                student_id: sid.clone(),
                question_id: question_id(q),
                kc_ids: kc_sets[q].iter().map(|&k| kc_id(k)).collect(),
                correct,
                attempts,
                order_index: t as u64,
            });
            probs.push(recorded_p);
            for &k in &kc_sets[q] {
                kc_exposures[k] += 1;
            }
        }

        abilities.insert(sid.clone(), ability);
        event_probs.insert(sid.clone(), probs);
        sequences.push(StudentSequence {
            student_id: sid.clone(),
            records,
        });
    }

    let truth = GroundTruth {
        abilities,
        difficulties: difficulties
            .iter()
            .enumerate()
            .map(|(q, &d)| (question_id(q), d))
            .collect(),
        event_probs,
        planted,
    };
    Ok((sequences, truth))
}

/// Box-Muller from two uniforms; avoids log(0) by nudging the first draw.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
