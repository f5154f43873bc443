//! Id-to-index mapping shared by embedding tables and the propagation
//! graph. Questions occupy node indices `0..n_questions`, KCs the range
//! after, so one combined embedding matrix covers both.

use std::collections::HashMap;

use super::ModelError;
use crate::graph::QKGraph;

#[derive(Clone, Debug)]
pub struct Vocab {
    questions: Vec<String>,
    kcs: Vec<String>,
    q_index: HashMap<String, usize>,
    kc_index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_graph(graph: &QKGraph) -> Self {
        let questions = graph.questions.clone();
        let kcs = graph.kcs.clone();
        let q_index = questions
            .iter()
            .enumerate()
            .map(|(i, q)| (q.clone(), i))
            .collect();
        let kc_index = kcs
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        Self {
            questions,
            kcs,
            q_index,
            kc_index,
        }
    }

    pub fn n_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn n_kcs(&self) -> usize {
        self.kcs.len()
    }

    pub fn node_count(&self) -> usize {
        self.questions.len() + self.kcs.len()
    }

    pub fn question_index(&self, id: &str) -> Result<usize, ModelError> {
        self.q_index
            .get(id)
            .copied()
            .ok_or_else(|| ModelError::UnknownQuestion(id.to_string()))
    }

    pub fn kc_index(&self, id: &str) -> Result<usize, ModelError> {
        self.kc_index
            .get(id)
            .copied()
            .ok_or_else(|| ModelError::UnknownKc(id.to_string()))
    }

    /// Combined-matrix row of a KC given its local index.
    pub fn kc_node(&self, kc_local: usize) -> usize {
        self.questions.len() + kc_local
    }

    pub fn question_id(&self, index: usize) -> &str {
        &self.questions[index]
    }

    pub fn kc_id(&self, kc_local: usize) -> &str {
        &self.kcs[kc_local]
    }
}
