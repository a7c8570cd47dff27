//! Local/global mutual-information objective.
//!
//! Negatives come from shuffling feature rows while the adjacency stays
//! fixed. Both streams go through the same encoder; a bilinear
//! discriminator scores every node embedding against the mean summary of
//! the clean stream, and the loss is binary cross-entropy with clean nodes
//! labeled 1 and shuffled nodes labeled 0.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::encoder::EncoderVars;
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph};
use crate::matrix::Matrix;

/// Probabilities are clamped to `[ε, 1-ε]` before taking logs.
pub const PROB_EPSILON: f64 = 1e-12;

/// Bilinear discriminator weight (`F'×F'`).
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub weight: Matrix,
}

impl DiscriminatorParams {
    pub fn bind(&self, tape: &mut Tape<'_>, requires_grad: bool) -> Var {
        tape.leaf(self.weight.clone(), requires_grad)
    }
}

/// Uniform random permutation of `0..n` drawn from `seed`.
pub fn corruption_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Shuffles feature rows: row `i` of the result is row `perm[i]` of `x`.
pub fn corrupt(x: &FeatureMatrix, seed: u64) -> FeatureMatrix {
    x.gather_rows(&corruption_permutation(x.num_rows(), seed))
}

/// Graph summary: column mean of `h`, optionally squashed by a sigmoid.
pub fn readout(tape: &mut Tape<'_>, h: Var, squash: bool) -> Result<Var> {
    let t = tape.mean_rows(h)?;
    Ok(if squash { tape.sigmoid(t) } else { t })
}

/// `σ(h_iᵀ W t)` for every row of `h`, as an `N×1` column.
pub fn discriminate(tape: &mut Tape<'_>, h: Var, summary: Var, weight: Var) -> Result<Var> {
    let (hs, ts, ws) = (
        tape.value(h).shape(),
        tape.value(summary).shape(),
        tape.value(weight).shape(),
    );
    if ts.0 != 1 || ws != (hs.1, hs.1) || ts.1 != hs.1 {
        return Err(Error::Shape {
            op: "discriminate",
            left: hs,
            right: ts,
        });
    }
    let wt = tape.matmul_nt(weight, summary)?;
    let logits = tape.matmul(h, wt)?;
    Ok(tape.sigmoid(logits))
}

/// Mean binary cross-entropy over positive (label 1) and negative
/// (label 0) scores; the negation of the mutual-information bound.
pub fn infomax_loss(tape: &mut Tape<'_>, pos: Var, neg: Var) -> Result<Var> {
    let (n, m) = (tape.value(pos).len(), tape.value(neg).len());
    if n == 0 || m == 0 {
        return Err(Error::Empty("infomax_loss"));
    }
    let p = tape.clamp(pos, PROB_EPSILON, 1.0 - PROB_EPSILON);
    let log_p = tape.log(p)?;
    let pos_sum = tape.sum(log_p);

    let q = tape.clamp(neg, PROB_EPSILON, 1.0 - PROB_EPSILON);
    let q = tape.scale(q, -1.0);
    let one_minus_q = tape.offset(q, 1.0);
    let log_q = tape.log(one_minus_q)?;
    let neg_sum = tape.sum(log_q);

    let total = tape.add(pos_sum, neg_sum)?;
    Ok(tape.scale(total, -1.0 / (n + m) as f64))
}

/// Loss value for plain score arrays.
pub fn infomax_loss_value(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if let Some(bad) = pos.iter().chain(neg).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("score {bad} outside [0, 1]")));
    }
    let mut tape = Tape::new();
    let p = tape.constant(Matrix::from_vec(pos.len(), 1, pos.to_vec())?);
    let q = tape.constant(Matrix::from_vec(neg.len(), 1, neg.to_vec())?);
    let l = infomax_loss(&mut tape, p, q)?;
    Ok(tape.value(l).as_slice()[0])
}

/// Handles produced by one evaluation of the full objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub embeddings: Var,
    pub summary: Var,
    pub pos_scores: Var,
    pub neg_scores: Var,
    pub loss: Var,
}

/// Clean and corrupted streams through the same encoder, one summary from
/// the clean stream, and the loss. The corrupted features are the rows of
/// `clean` taken in `order` (see [`corruption_permutation`]).
pub fn infomax_objective<'g>(
    tape: &mut Tape<'g>,
    encoder: &EncoderVars,
    discriminator: Var,
    clean: Var,
    order: &[usize],
    graph: &'g Graph,
    squash_summary: bool,
) -> Result<ObjectiveVars> {
    let (h, h_neg) = encoder.encode_pair(tape, clean, order, graph)?;
    let t = readout(tape, h, squash_summary)?;
    let pos = discriminate(tape, h, t, discriminator)?;
    let neg = discriminate(tape, h_neg, t, discriminator)?;
    let loss = infomax_loss(tape, pos, neg)?;
    Ok(ObjectiveVars {
        embeddings: h,
        summary: t,
        pos_scores: pos,
        neg_scores: neg,
        loss,
    })
}
