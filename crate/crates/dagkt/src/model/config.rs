//! Model hyperparameters and the ablation-variant catalogue.

use serde::{Deserialize, Serialize};

/// Which enrichments a model run uses. `full` enables everything; the five
/// reduced variants switch off combinations of the difficulty input, the
/// attempts input, and the question-similarity edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    R,
    D,
    A,
    #[serde(rename = "DA")]
    Da,
    G,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::R,
        Variant::D,
        Variant::A,
        Variant::Da,
        Variant::G,
    ];

    /// (use_difficulty, use_attempts, use_similarity_edges)
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Variant::Full => (true, true, true),
            Variant::R => (false, false, false),
            Variant::D => (true, false, false),
            Variant::A => (false, true, false),
            Variant::Da => (true, true, false),
            Variant::G => (false, false, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::R => "R",
            Variant::D => "D",
            Variant::A => "A",
            Variant::Da => "DA",
            Variant::G => "G",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "full" | "FULL" | "Full" => Some(Variant::Full),
            "R" | "r" => Some(Variant::R),
            "D" | "d" => Some(Variant::D),
            "A" | "a" => Some(Variant::A),
            "DA" | "da" | "Da" => Some(Variant::Da),
            "G" | "g" => Some(Variant::G),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Rounds of neighborhood aggregation. Zero is a test-only passthrough.
    pub gcn_layers: usize,
    pub gcn_question_neighbors: usize,
    pub gcn_skill_neighbors: usize,
    pub lstm_layer_sizes: Vec<usize>,
    /// Most recent KC-sharing history exercises consulted per prediction.
    pub recap_count: usize,
    /// KC embeddings of the target included as prediction anchors.
    pub related_skill_count: usize,
    pub dropout_keep: f64,
    pub use_difficulty: bool,
    pub use_attempts: bool,
    pub use_similarity_edges: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 100,
            gcn_layers: 3,
            gcn_question_neighbors: 8,
            gcn_skill_neighbors: 8,
            lstm_layer_sizes: vec![200, 100],
            recap_count: 3,
            related_skill_count: 3,
            dropout_keep: 0.8,
            use_difficulty: true,
            use_attempts: true,
            use_similarity_edges: true,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        let (d, a, g) = variant.flags();
        self.use_difficulty = d;
        self.use_attempts = a;
        self.use_similarity_edges = g;
        self
    }

    /// The reduced interaction path (question and answer only) replaces the
    /// four-way fusion exactly when both scalar inputs are off.
    pub fn reduced_fusion(&self) -> bool {
        !self.use_difficulty && !self.use_attempts
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.embed_dim == 0 {
            return Err("embed_dim must be positive".into());
        }
        if self.gcn_question_neighbors == 0 || self.gcn_skill_neighbors == 0 {
            return Err("neighbor sampling caps must be at least 1".into());
        }
        if self.lstm_layer_sizes.is_empty() {
            return Err("lstm_layer_sizes must be nonempty".into());
        }
        if self.lstm_layer_sizes.iter().any(|&s| s == 0) {
            return Err("lstm layer sizes must be positive".into());
        }
        if *self.lstm_layer_sizes.last().expect("nonempty") != self.embed_dim {
            return Err(format!(
                "last lstm layer must match embed_dim {} (the prediction head takes inner \
                 products between states and embeddings), got {:?}",
                self.embed_dim, self.lstm_layer_sizes
            ));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(format!(
                "dropout_keep must be in (0, 1], got {}",
                self.dropout_keep
            ));
        }
        Ok(())
    }
}
