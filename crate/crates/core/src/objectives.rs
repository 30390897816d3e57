//! Training objectives over per-position target-vocabulary scores.
//!
//! Sequence losses sum over positions, in nats. Every loss that takes
//! logits also returns its gradient with respect to those logits.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use thiserror::Error;

/// `L x V` pre-softmax scores, one row per target position.
pub type LogitSeq = Array2<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("length mismatch: {0} positions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("lambda must lie in [0, 1], got {0}")]
    BadLambda(f64),
}

/// Numerically stable log-softmax of one score vector.
pub fn log_softmax(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = z.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let shifted = z.mapv(|x| x - max);
    let lse = shifted.mapv(f64::exp).sum().ln();
    shifted.mapv(|x| x - lse)
}

pub fn softmax(z: ArrayView1<'_, f64>) -> Array1<f64> {
    log_softmax(z).mapv(f64::exp)
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &LogitSeq) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let p = softmax(row.view());
        row.assign(&p);
    }
    out
}

/// `-sum_i log softmax(logits_i)[y_i]` and its logit gradient
/// `softmax(logits_i) - onehot(y_i)`.
pub fn cross_entropy(logits: &LogitSeq, y: &[usize]) -> Result<(f64, LogitSeq), ObjectiveError> {
    let (len, vocab) = logits.dim();
    if y.len() != len {
        return Err(ObjectiveError::LengthMismatch(len, y.len()));
    }
    if let Some(&id) = y.iter().find(|&&id| id >= vocab) {
        return Err(ObjectiveError::TokenOutOfRange { id, vocab });
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros((len, vocab));
    for (i, &target) in y.iter().enumerate() {
        let logp = log_softmax(logits.row(i));
        loss -= logp[target];
        let mut g = grad.row_mut(i);
        g.assign(&logp.mapv(f64::exp));
        g[target] -= 1.0;
    }
    Ok((loss, grad))
}

/// Loss of a mixed input trained against both targets:
/// `lambda * CE(logits_i, y_i) + (1 - lambda) * CE(logits_j, y_j)`, where
/// both logit sequences come from the same mixed input under the respective
/// teacher forcing. Returns the loss and both logit gradients.
pub fn mix_loss(
    logits_i: &LogitSeq,
    y_i: &[usize],
    logits_j: &LogitSeq,
    y_j: &[usize],
    lambda: f64,
) -> Result<(f64, LogitSeq, LogitSeq), ObjectiveError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ObjectiveError::BadLambda(lambda));
    }
    let (ce_i, g_i) = cross_entropy(logits_i, y_i)?;
    let (ce_j, g_j) = cross_entropy(logits_j, y_j)?;
    let mu = 1.0 - lambda;
    Ok((lambda * ce_i + mu * ce_j, g_i * lambda, g_j * mu))
}

/// First-stage objective: CE on original-stream data plus the mixed loss.
pub fn stage1_loss(ce_orig: f64, l_mix: f64) -> f64 {
    ce_orig + l_mix
}

/// Second-stage objective: speech CE plus text CE plus the JSD term.
pub fn stage2_loss(ce_speech: f64, ce_text: f64, l_jsd: f64) -> f64 {
    ce_speech + ce_text + l_jsd
}

/// `p * ln(p / m)`, with `0 ln 0 = 0`.
fn kl_term(p: f64, m: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / m).ln()
    }
}

/// Jensen-Shannon divergence of two distributions over the same support,
/// in nats. Symmetric bit for bit; clamped to `[0, ln 2]` against rounding.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, ObjectiveError> {
    if p.len() != q.len() {
        return Err(ObjectiveError::DimMismatch(p.len(), q.len()));
    }
    let mut sum = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        sum += kl_term(a, m) + kl_term(b, m);
    }
    Ok((0.5 * sum).clamp(0.0, std::f64::consts::LN_2))
}

/// Gradient of JSD(p, q) w.r.t. the logits behind `p`, given `q`.
/// dJSD/dp_v = 0.5 ln(p_v / m_v), pulled back through the softmax.
fn jsd_logit_grad(p: &Array1<f64>, q: &Array1<f64>) -> Array1<f64> {
    let g: Array1<f64> = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            if a == 0.0 {
                0.0
            } else {
                0.5 * (a / (0.5 * (a + b))).ln()
            }
        })
        .collect();
    let mean = p.dot(&g);
    p * &(g - mean)
}

/// JSD between the softmaxes of two score vectors, with gradients for both.
pub fn jsd_token(
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
) -> Result<(f64, Array1<f64>, Array1<f64>), ObjectiveError> {
    if a.len() != b.len() {
        return Err(ObjectiveError::DimMismatch(a.len(), b.len()));
    }
    let p = softmax(a);
    let q = softmax(b);
    let value = jsd(
        p.as_slice().expect("contiguous"),
        q.as_slice().expect("contiguous"),
    )?;
    Ok((value, jsd_logit_grad(&p, &q), jsd_logit_grad(&q, &p)))
}

/// Per-position JSD between speech-pathway and text-pathway predictions,
/// summed over positions, with gradients for both logit sequences.
pub fn jsd_sequence(
    speech: &LogitSeq,
    text: &LogitSeq,
) -> Result<(f64, LogitSeq, LogitSeq), ObjectiveError> {
    if speech.dim() != text.dim() {
        return Err(ObjectiveError::ShapeMismatch(speech.dim(), text.dim()));
    }
    let mut total = 0.0;
    let mut g_s = Array2::zeros(speech.dim());
    let mut g_t = Array2::zeros(text.dim());
    for i in 0..speech.nrows() {
        let (v, gs, gt) = jsd_token(speech.row(i), text.row(i))?;
        total += v;
        g_s.row_mut(i).assign(&gs);
        g_t.row_mut(i).assign(&gt);
    }
    Ok((total, g_s, g_t))
}
