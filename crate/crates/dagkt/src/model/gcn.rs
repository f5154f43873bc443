//! Embedding propagation over the question–KC graph.
//!
//! Each round replaces every node's embedding with a transformed mean of
//! itself and a sampled subset of its neighbors. A question's neighborhood
//! is its KCs plus (when enabled) its similar questions; a KC's
//! neighborhood is the questions tagged with it. Sampling is capped per
//! neighbor type and is a pure function of the seed, so runs reproduce.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::Vocab;
use crate::autodiff::{DiffError, Tape, Var};
use crate::graph::QKGraph;
use crate::seeding::derive_seed;

/// Neighbor lists in combined node-index space.
#[derive(Clone, Debug)]
pub struct Adjacency {
    pub n_questions: usize,
    pub n_kcs: usize,
    q_kc: Vec<Vec<usize>>,
    q_sim: Vec<Vec<usize>>,
    kc_q: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn build(graph: &QKGraph, vocab: &Vocab, use_similarity_edges: bool) -> Self {
        let n_q = vocab.n_questions();
        let n_k = vocab.n_kcs();
        let mut q_kc = vec![Vec::new(); n_q];
        let mut q_sim = vec![Vec::new(); n_q];
        let mut kc_q = vec![Vec::new(); n_k];
        for (q, k) in &graph.qk_edges {
            // edges referencing ids outside the vocab cannot occur when the
            // vocab came from the same graph; skip defensively otherwise
            let (Ok(qi), Ok(ki)) = (vocab.question_index(q), vocab.kc_index(k)) else {
                continue;
            };
            q_kc[qi].push(vocab.kc_node(ki));
            kc_q[ki].push(qi);
        }
        if use_similarity_edges {
            for e in &graph.qq_edges {
                let (Ok(a), Ok(b)) = (vocab.question_index(&e.q1), vocab.question_index(&e.q2))
                else {
                    continue;
                };
                q_sim[a].push(b);
                q_sim[b].push(a);
            }
        }
        for list in q_kc.iter_mut().chain(q_sim.iter_mut()).chain(kc_q.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            n_questions: n_q,
            n_kcs: n_k,
            q_kc,
            q_sim,
            kc_q,
        }
    }

    pub fn similar_questions(&self, q: usize) -> &[usize] {
        &self.q_sim[q]
    }

    pub fn question_kcs(&self, q: usize) -> &[usize] {
        &self.q_kc[q]
    }
}

/// Test harness hook: production always uses `Tanh`, hand-worked fixtures
/// disable the nonlinearity to keep arithmetic checkable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Copy, Debug)]
pub struct SamplingCaps {
    pub questions: usize,
    pub skills: usize,
}

fn sample_neighbors(list: &[usize], cap: usize, seed: u64) -> Vec<usize> {
    if list.len() <= cap {
        return list.to_vec();
    }
    let mut pool = list.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cap {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(cap);
    pool
}

/// Neighborhood pools for one aggregation round: entry `v` lists `v` itself
/// plus its sampled neighbors.
pub fn layer_groups(
    adj: &Adjacency,
    caps: SamplingCaps,
    layer: usize,
    sample_seed: u64,
) -> Vec<Vec<usize>> {
    let n = adj.n_questions + adj.n_kcs;
    let mut groups = Vec::with_capacity(n);
    for v in 0..n {
        let mut group = vec![v];
        if v < adj.n_questions {
            group.extend(sample_neighbors(
                &adj.q_kc[v],
                caps.skills,
                derive_seed(sample_seed, &[layer as u64, v as u64, 0]),
            ));
            group.extend(sample_neighbors(
                &adj.q_sim[v],
                caps.questions,
                derive_seed(sample_seed, &[layer as u64, v as u64, 1]),
            ));
        } else {
            group.extend(sample_neighbors(
                &adj.kc_q[v - adj.n_questions],
                caps.questions,
                derive_seed(sample_seed, &[layer as u64, v as u64, 0]),
            ));
        }
        groups.push(group);
    }
    groups
}

/// Runs the configured number of aggregation rounds over the combined
/// question+KC matrix and returns the refined matrix. Zero layers is the
/// identity on the stacked tables.
#[allow(clippy::too_many_arguments)]
pub fn propagate(
    tape: &mut Tape,
    q_table: Var,
    kc_table: Var,
    layer_params: &[(Var, Var)],
    adj: &Adjacency,
    caps: SamplingCaps,
    activation: Activation,
    sample_seed: u64,
) -> Result<Var, DiffError> {
    let mut h = tape.concat_rows(&[q_table, kc_table])?;
    for (layer, (w, b)) in layer_params.iter().enumerate() {
        let groups = layer_groups(adj, caps, layer, sample_seed);
        let pooled = tape.group_mean_rows(h, &groups)?;
        let mixed = tape.matmul(pooled, *w)?;
        let mixed = tape.add_bias(mixed, *b)?;
        h = match activation {
            Activation::Tanh => tape.tanh(mixed),
            Activation::Identity => mixed,
        };
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::graph::{QKGraph, SimilarityEdge};

    fn bare_graph(questions: &[&str], kcs: &[&str], qk: &[(&str, &str)]) -> QKGraph {
        QKGraph {
            questions: questions.iter().map(|s| s.to_string()).collect(),
            kcs: kcs.iter().map(|s| s.to_string()).collect(),
            qk_edges: qk
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            qq_edges: vec![],
            omega: 0.7,
            lambda: 0.01,
            c_min: 3,
        }
    }

    fn identity(dim: usize) -> Tensor {
        let mut t = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            t.data_mut()[i * dim + i] = 1.0;
        }
        t
    }

    const CAPS: SamplingCaps = SamplingCaps {
        questions: 8,
        skills: 8,
    };

    #[test]
    fn isolated_node_is_fixed_under_identity_transform() {
        // q1 has a KC in the vocab but no edge to it, so its pool is only
        // itself; under identity weights one round must preserve its row
        let graph = bare_graph(&["q1"], &["k-unused"], &[]);
        let vocab = Vocab::from_graph(&graph);
        let adj = Adjacency::build(&graph, &vocab, true);
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::matrix(1, 2, vec![0.3, 0.7]).unwrap());
        let k = tape.constant(Tensor::zeros(&[1, 2]));
        let w = tape.leaf(identity(2));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let out = propagate(
            &mut tape,
            q,
            k,
            &[(w, b)],
            &adj,
            CAPS,
            Activation::Identity,
            0,
        )
        .unwrap();
        assert_eq!(&tape.value(out).data()[..2], &[0.3, 0.7]);
    }

    #[test]
    fn zero_tables_stay_zero() {
        let graph = bare_graph(&["q1", "q2"], &["k1"], &[("q1", "k1"), ("q2", "k1")]);
        let vocab = Vocab::from_graph(&graph);
        let adj = Adjacency::build(&graph, &vocab, true);
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::zeros(&[2, 3]));
        let k = tape.leaf(Tensor::zeros(&[1, 3]));
        let w = tape.leaf(Tensor::zeros(&[3, 3]));
        let b = tape.leaf(Tensor::zeros(&[3]));
        let out = propagate(
            &mut tape,
            q,
            k,
            &[(w, b), (w, b)],
            &adj,
            CAPS,
            Activation::Tanh,
            0,
        )
        .unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn path_graph_single_round_matches_hand_means() {
        let graph = bare_graph(&["q1", "q2"], &["k"], &[("q1", "k"), ("q2", "k")]);
        let vocab = Vocab::from_graph(&graph);
        let adj = Adjacency::build(&graph, &vocab, true);
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let k = tape.leaf(Tensor::matrix(1, 2, vec![4.0, 2.0]).unwrap());
        let w = tape.leaf(identity(2));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let out = propagate(
            &mut tape,
            q,
            k,
            &[(w, b)],
            &adj,
            CAPS,
            Activation::Identity,
            0,
        )
        .unwrap();
        let got = tape.value(out).data();
        // q1' = mean(q1, k), q2' = mean(q2, k), k' = mean(k, q1, q2)
        assert_eq!(&got[0..2], &[2.5, 1.0]);
        assert_eq!(&got[2..4], &[2.0, 1.5]);
        assert!((got[4] - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(got[5], 1.0);
    }

    #[test]
    fn zero_layers_is_the_stacked_identity() {
        let graph = bare_graph(&["q1"], &["k"], &[("q1", "k")]);
        let vocab = Vocab::from_graph(&graph);
        let adj = Adjacency::build(&graph, &vocab, true);
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::matrix(1, 2, vec![1.5, -2.0]).unwrap());
        let k = tape.leaf(Tensor::matrix(1, 2, vec![0.25, 8.0]).unwrap());
        let out = propagate(&mut tape, q, k, &[], &adj, CAPS, Activation::Tanh, 9).unwrap();
        assert_eq!(tape.value(out).data(), &[1.5, -2.0, 0.25, 8.0]);
    }

    #[test]
    fn similarity_edges_only_enter_when_enabled() {
        let mut graph = bare_graph(&["q1", "q2"], &["k"], &[("q1", "k"), ("q2", "k")]);
        graph.qq_edges.push(SimilarityEdge {
            q1: "q1".into(),
            q2: "q2".into(),
            sim: 0.95,
            support: 10,
        });
        let vocab = Vocab::from_graph(&graph);
        let with = Adjacency::build(&graph, &vocab, true);
        let without = Adjacency::build(&graph, &vocab, false);
        assert_eq!(with.similar_questions(0), &[1]);
        assert_eq!(with.similar_questions(1), &[0]);
        assert!(without.similar_questions(0).is_empty());
        assert!(without.similar_questions(1).is_empty());
    }

    #[test]
    fn sampling_is_capped_and_seed_deterministic() {
        let neighbors: Vec<usize> = (0..10).collect();
        let a = sample_neighbors(&neighbors, 3, 7);
        let b = sample_neighbors(&neighbors, 3, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        let mut dedup = a.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 3, "sampled without replacement");
        let other = sample_neighbors(&neighbors, 3, 8);
        assert_ne!(a, other, "different seed should move the sample");
        assert_eq!(sample_neighbors(&neighbors, 10, 3), neighbors);
    }
}
