//! Scalar-to-embedding codec for difficulty and attempt inputs.
//!
//! The encoder lifts a scalar in [0, 1] to an embedding through
//! tanh–sigmoid–sigmoid dense layers; the decoder mirrors it back to a
//! scalar in (0, 1) so training can penalize reconstruction error and keep
//! the embeddings faithful to their source values.

use crate::autodiff::{DiffError, ParamId, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

struct DenseIds {
    w: ParamId,
    b: ParamId,
}

/// Registered parameter ids for one codec (encoder and decoder stacks).
pub struct ScalarCodec {
    enc: [DenseIds; 3],
    dec: [DenseIds; 3],
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    // fan-in scaling; for the scalar input layer the averaged variant would
    // shrink the weights with the output width and flatten the encoding
    let std = (1.0 / rows as f64).sqrt();
    Tensor::randn(&[rows, cols], std, rng)
}

impl ScalarCodec {
    /// Registers all twelve tensors under `prefix`. The hidden width
    /// matches the embedding width.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        embed_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, DiffError> {
        let h = embed_dim;
        let mut dense = |name: String, rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let w = store.register(&format!("{name}_w"), glorot(rows, cols, rng))?;
            let b = store.register(&format!("{name}_b"), Tensor::zeros(&[cols]))?;
            Ok::<_, DiffError>(DenseIds { w, b })
        };
        Ok(Self {
            enc: [
                dense(format!("{prefix}_enc1"), 1, h, rng)?,
                dense(format!("{prefix}_enc2"), h, h, rng)?,
                dense(format!("{prefix}_enc3"), h, embed_dim, rng)?,
            ],
            dec: [
                dense(format!("{prefix}_dec1"), embed_dim, h, rng)?,
                dense(format!("{prefix}_dec2"), h, h, rng)?,
                dense(format!("{prefix}_dec3"), h, 1, rng)?,
            ],
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore, trainable: bool) -> CodecVars {
        let bind_one = |tape: &mut Tape, ids: &DenseIds| {
            if trainable {
                (tape.param(store, ids.w), tape.param(store, ids.b))
            } else {
                (tape.frozen_param(store, ids.w), tape.frozen_param(store, ids.b))
            }
        };
        CodecVars {
            enc: [
                bind_one(tape, &self.enc[0]),
                bind_one(tape, &self.enc[1]),
                bind_one(tape, &self.enc[2]),
            ],
            dec: [
                bind_one(tape, &self.dec[0]),
                bind_one(tape, &self.dec[1]),
                bind_one(tape, &self.dec[2]),
            ],
        }
    }
}

/// Per-tape bound codec parameters.
pub struct CodecVars {
    pub enc: [(Var, Var); 3],
    pub dec: [(Var, Var); 3],
}

impl CodecVars {
    /// `[B x 1]` scalars to `[B x E]` embeddings.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var, DiffError> {
        let z1 = tape.matmul(x, self.enc[0].0)?;
        let z1 = tape.add_bias(z1, self.enc[0].1)?;
        let h1 = tape.tanh(z1);
        let z2 = tape.matmul(h1, self.enc[1].0)?;
        let z2 = tape.add_bias(z2, self.enc[1].1)?;
        let h2 = tape.sigmoid(z2);
        let z3 = tape.matmul(h2, self.enc[2].0)?;
        let z3 = tape.add_bias(z3, self.enc[2].1)?;
        Ok(tape.sigmoid(z3))
    }

    /// `[B x E]` embeddings back to `[B x 1]` scalars in (0, 1).
    pub fn decode(&self, tape: &mut Tape, e: Var) -> Result<Var, DiffError> {
        let z1 = tape.matmul(e, self.dec[0].0)?;
        let z1 = tape.add_bias(z1, self.dec[0].1)?;
        let h1 = tape.tanh(z1);
        let z2 = tape.matmul(h1, self.dec[1].0)?;
        let z2 = tape.add_bias(z2, self.dec[1].1)?;
        let h2 = tape.sigmoid(z2);
        let z3 = tape.matmul(h2, self.dec[2].0)?;
        let z3 = tape.add_bias(z3, self.dec[2].1)?;
        Ok(tape.sigmoid(z3))
    }

    pub fn encode_decode(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var), DiffError> {
        let embed = self.encode(tape, x)?;
        let recon = self.decode(tape, embed)?;
        Ok((embed, recon))
    }
}
