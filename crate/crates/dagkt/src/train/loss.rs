//! Training objective: summed cross-entropy over predicted answers plus
//! squared reconstruction error for each auxiliary scalar the variant uses.

use crate::autodiff::{Tape, Var};
use crate::model::{BatchOutput, ModelError};

/// Builds the scalar training loss on the tape:
/// `sum BCE(p, y) + sum (m - m~)^2 + sum (d - d~)^2`,
/// with a reconstruction term only for inputs the variant encodes.
pub fn batch_loss(tape: &mut Tape, out: &BatchOutput) -> Result<Var, ModelError> {
    let per_event = tape.binary_cross_entropy(out.predictions, &out.labels)?;
    let mut total = tape.sum(per_event);
    for part in [&out.d_recon, &out.m_recon] {
        if let Some((recon, targets)) = part {
            let t = tape.constant(targets.clone());
            let diff = tape.sub(*recon, t)?;
            let sq = tape.square(diff);
            let s = tape.sum(sq);
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}
