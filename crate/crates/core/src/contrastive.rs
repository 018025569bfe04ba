//! Contrastive objectives over given embeddings, with analytic gradients.
//!
//! Every row is L2-normalized before similarities are taken, so gradients
//! with respect to the raw inputs carry no radial component.
//!
//! - [`global_infonce`]: symmetric in-batch InfoNCE over clip-level tokens.
//! - [`local_frame_contrastive`]: frame-wise InfoNCE where frames within
//!   `t` of the anchor (other modality) are positives and frames in
//!   `[i - kt, i - t)` and `(i + t, i + kt]` are negatives.
//! - [`combined_loss`]: the sum of both, with an optional stop-gradient that
//!   keeps the global term from updating the low-level embeddings.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalWindowSpec {
    /// Positive half-width in frames.
    pub t: usize,
    /// Negative range multiplier.
    pub k: usize,
}

impl Default for LocalWindowSpec {
    fn default() -> Self {
        LocalWindowSpec { t: 4, k: 4 }
    }
}

impl LocalWindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t < 1 || self.k < 2 {
            return Err(Error::Validation(format!(
                "window needs t >= 1 and k >= 2, got t={}, k={}",
                self.t, self.k
            )));
        }
        Ok(())
    }

    pub fn min_frames(&self) -> usize {
        2 * self.k * self.t + 1
    }

    pub fn negatives_per_anchor(&self) -> usize {
        2 * (self.k * self.t - self.t)
    }
}

/// Loss value plus gradients for the audio and motion inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<G> {
    pub loss: f64,
    pub audio: G,
    pub motion: G,
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Validation(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

fn normalize_rows(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation(format!("{what} contains non-finite values")));
    }
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.nrows());
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if n == 0.0 {
            return Err(Error::Validation(format!("{what} row {i} has zero length")));
        }
        row /= n;
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pulls a gradient taken w.r.t. unit rows back to the raw rows:
/// `(g - u (u . g)) / |x|`.
fn through_normalization(grad: &DMatrix<f64>, unit: &DMatrix<f64>, norms: &[f64]) -> DMatrix<f64> {
    let mut out = grad.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let u = unit.row(i);
        let radial = u.dot(&row);
        row -= u * radial;
        row /= norms[i];
    }
    out
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Symmetric InfoNCE: the mean of audio->motion and motion->audio
/// cross-entropies over the `B x B` cosine similarity matrix scaled by
/// `1 / tau`, with matched pairs on the diagonal.
pub fn global_infonce(
    audio_cls: &DMatrix<f64>,
    motion_cls: &DMatrix<f64>,
    tau: f64,
) -> Result<LossGrad<DMatrix<f64>>> {
    check_temperature(tau)?;
    let b = audio_cls.nrows();
    if b < 2 {
        return Err(Error::Validation(format!(
            "global loss needs at least 2 pairs for in-batch negatives, got {b}"
        )));
    }
    if audio_cls.shape() != motion_cls.shape() {
        return Err(Error::Shape(format!(
            "audio tokens {:?} vs motion tokens {:?}",
            audio_cls.shape(),
            motion_cls.shape()
        )));
    }
    let (a, a_norm) = normalize_rows(audio_cls, "audio tokens")?;
    let (m, m_norm) = normalize_rows(motion_cls, "motion tokens")?;
    let logits = (&a * m.transpose()) / tau;

    let mut loss = 0.0;
    let mut d_logits = DMatrix::zeros(b, b);
    let scale = 1.0 / (2.0 * b as f64);
    for i in 0..b {
        let row_lse = log_sum_exp(logits.row(i).iter().copied());
        let col_lse = log_sum_exp(logits.column(i).iter().copied());
        loss += (row_lse - logits[(i, i)]) + (col_lse - logits[(i, i)]);
        for j in 0..b {
            d_logits[(i, j)] += scale * (logits[(i, j)] - row_lse).exp();
            d_logits[(j, i)] += scale * (logits[(j, i)] - col_lse).exp();
        }
        d_logits[(i, i)] -= 2.0 * scale;
    }
    loss *= scale;

    let grad_a = (&d_logits * &m) / tau;
    let grad_m = (d_logits.transpose() * &a) / tau;
    Ok(LossGrad {
        loss,
        audio: through_normalization(&grad_a, &a, &a_norm),
        motion: through_normalization(&grad_m, &m, &m_norm),
    })
}

/// Frame-wise InfoNCE over a batch of `F x D` track pairs.
///
/// For every anchor frame `i` with a full negative range, in both
/// directions, and for every positive `p` in `[i - t, i + t]`:
/// `-log(e^{s_p/tau} / (e^{s_p/tau} + sum_n e^{s_n/tau}))`. The loss is the
/// mean over all such terms.
pub fn local_frame_contrastive(
    audio_low: &[DMatrix<f64>],
    motion_low: &[DMatrix<f64>],
    spec: LocalWindowSpec,
    tau: f64,
) -> Result<LossGrad<Vec<DMatrix<f64>>>> {
    check_temperature(tau)?;
    spec.validate()?;
    if audio_low.is_empty() || audio_low.len() != motion_low.len() {
        return Err(Error::Shape(format!(
            "{} audio tracks vs {} motion tracks",
            audio_low.len(),
            motion_low.len()
        )));
    }
    let (t, kt) = (spec.t, spec.k * spec.t);
    let mut per_item = Vec::with_capacity(audio_low.len());
    let mut total_terms = 0usize;

    for (b, (xa, xm)) in audio_low.iter().zip(motion_low).enumerate() {
        if xa.shape() != xm.shape() {
            return Err(Error::Shape(format!(
                "item {b}: audio {:?} vs motion {:?}",
                xa.shape(),
                xm.shape()
            )));
        }
        let frames = xa.nrows();
        if frames < spec.min_frames() {
            return Err(Error::Validation(format!(
                "item {b}: {frames} frames is too short, minimum length is 2*k*t + 1 = {}",
                spec.min_frames()
            )));
        }
        let (a, a_norm) = normalize_rows(xa, "audio frames")?;
        let (m, m_norm) = normalize_rows(xm, "motion frames")?;
        let sims = (&a * m.transpose()) / tau;
        // d(loss)/d(sims[(audio frame, motion frame)]), before averaging
        let mut d_sims = DMatrix::zeros(frames, frames);
        let mut loss = 0.0;
        let anchors = kt..frames - kt;
        for i in anchors.clone() {
            let negatives = (i - kt..i - t).chain(i + t + 1..=i + kt);
            for audio_anchor in [true, false] {
                let z = |j: usize| if audio_anchor { sims[(i, j)] } else { sims[(j, i)] };
                let mut d = |j: usize, g: f64| {
                    if audio_anchor {
                        d_sims[(i, j)] += g;
                    } else {
                        d_sims[(j, i)] += g;
                    }
                };
                let neg_lse = log_sum_exp(negatives.clone().map(z));
                let mut neg_weight = 0.0;
                for p in i - t..=i + t {
                    let gap = neg_lse - z(p);
                    loss += softplus(gap);
                    let w = sigmoid(gap);
                    d(p, -w);
                    neg_weight += w;
                }
                for n in negatives.clone() {
                    d(n, neg_weight * (z(n) - neg_lse).exp());
                }
            }
        }
        total_terms += 2 * anchors.len() * (2 * t + 1);
        per_item.push((loss, d_sims, a, a_norm, m, m_norm));
    }

    let scale = 1.0 / total_terms as f64;
    let mut loss = 0.0;
    let mut grad_audio = Vec::with_capacity(per_item.len());
    let mut grad_motion = Vec::with_capacity(per_item.len());
    for (l, d_sims, a, a_norm, m, m_norm) in per_item {
        loss += l * scale;
        let d = d_sims * (scale / tau);
        grad_audio.push(through_normalization(&(&d * &m), &a, &a_norm));
        grad_motion.push(through_normalization(&(d.transpose() * &a), &m, &m_norm));
    }
    Ok(LossGrad {
        loss,
        audio: grad_audio,
        motion: grad_motion,
    })
}

/// Batch for [`combined_loss`].
///
/// The global term compares `cls + cls_pool_weight * mean_f(low)` per item,
/// i.e. the clip-level token may read the low-level frames. With a zero
/// weight the tokens are used as given.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub audio_low: Vec<DMatrix<f64>>,
    pub motion_low: Vec<DMatrix<f64>>,
    pub audio_cls: DMatrix<f64>,
    pub motion_cls: DMatrix<f64>,
    pub temperature: f64,
    /// Stop the global term's gradient from reaching the low-level inputs.
    pub grad_mask_low: bool,
    pub cls_pool_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub global: bool,
    pub local: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms {
            global: true,
            local: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedGrad {
    pub loss: f64,
    pub global_loss: f64,
    pub local_loss: f64,
    pub audio_low: Vec<DMatrix<f64>>,
    pub motion_low: Vec<DMatrix<f64>>,
    pub audio_cls: DMatrix<f64>,
    pub motion_cls: DMatrix<f64>,
}

/// Clip-level tokens as seen by the global term.
pub fn effective_tokens(cls: &DMatrix<f64>, low: &[DMatrix<f64>], weight: f64) -> Result<DMatrix<f64>> {
    if cls.nrows() != low.len() {
        return Err(Error::Shape(format!(
            "{} clip tokens for {} low-level tracks",
            cls.nrows(),
            low.len()
        )));
    }
    let mut out = cls.clone();
    if weight == 0.0 {
        return Ok(out);
    }
    for (b, track) in low.iter().enumerate() {
        if track.ncols() != cls.ncols() {
            return Err(Error::Shape(format!(
                "pooling needs equal widths: low {} vs clip {}",
                track.ncols(),
                cls.ncols()
            )));
        }
        let mean = track.row_mean();
        let mut row = out.row_mut(b);
        row += mean * weight;
    }
    Ok(out)
}

pub fn combined_loss(batch: &EmbeddingBatch, spec: LocalWindowSpec, terms: LossTerms) -> Result<CombinedGrad> {
    let zeros = |tracks: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
        tracks.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect()
    };
    let mut out = CombinedGrad {
        loss: 0.0,
        global_loss: 0.0,
        local_loss: 0.0,
        audio_low: zeros(&batch.audio_low),
        motion_low: zeros(&batch.motion_low),
        audio_cls: DMatrix::zeros(batch.audio_cls.nrows(), batch.audio_cls.ncols()),
        motion_cls: DMatrix::zeros(batch.motion_cls.nrows(), batch.motion_cls.ncols()),
    };

    if terms.global {
        let w = batch.cls_pool_weight;
        let audio = effective_tokens(&batch.audio_cls, &batch.audio_low, w)?;
        let motion = effective_tokens(&batch.motion_cls, &batch.motion_low, w)?;
        let g = global_infonce(&audio, &motion, batch.temperature)?;
        out.global_loss = g.loss;
        if !batch.grad_mask_low && w != 0.0 {
            for (dst, (src, cls_grad)) in [
                (&mut out.audio_low, (&batch.audio_low, &g.audio)),
                (&mut out.motion_low, (&batch.motion_low, &g.motion)),
            ] {
                for (b, grad) in dst.iter_mut().enumerate() {
                    let per_frame = cls_grad.row(b) * (w / src[b].nrows() as f64);
                    for mut row in grad.row_iter_mut() {
                        row += &per_frame;
                    }
                }
            }
        }
        out.audio_cls = g.audio;
        out.motion_cls = g.motion;
    }

    if terms.local {
        let l = local_frame_contrastive(&batch.audio_low, &batch.motion_low, spec, batch.temperature)?;
        out.local_loss = l.loss;
        for (dst, src) in out.audio_low.iter_mut().zip(&l.audio) {
            *dst += src;
        }
        for (dst, src) in out.motion_low.iter_mut().zip(&l.motion) {
            *dst += src;
        }
    }

    out.loss = out.global_loss + out.local_loss;
    Ok(out)
}

/// Central finite differences of `f` at `x`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest elementwise gap between two gradients, relative to the larger
/// of their max-magnitudes.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    #[test]
    fn uniform_global_loss_is_ln_b() {
        for b in [2, 3, 7] {
            let x = DMatrix::from_element(b, 3, 0.5);
            let g = global_infonce(&x, &x, 0.07).unwrap();
            assert!((g.loss - (b as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_pair_closed_form() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let g = global_infonce(&a, &a, 0.07).unwrap();
        let expected = (-1.0f64 / 0.07).exp().ln_1p();
        assert!((g.loss - expected).abs() < 1e-15);
        assert!((g.loss - 6.2e-7).abs() < 1e-8);
    }

    #[test]
    fn global_errors() {
        let one = DMatrix::from_element(1, 3, 1.0);
        assert!(global_infonce(&one, &one, 0.07).is_err());
        let two = DMatrix::from_element(2, 3, 1.0);
        assert!(global_infonce(&two, &two, 0.0).is_err());
        assert!(global_infonce(&two, &DMatrix::from_element(2, 4, 1.0), 0.07).is_err());
    }

    #[test]
    fn single_anchor_closed_form() {
        // F = 33: only frame 16 is a full anchor
        let spec = LocalWindowSpec::default();
        let rows: Vec<f64> = (0..33)
            .flat_map(|f| if (12..=20).contains(&f) { basis(2, 0) } else { basis(2, 1) })
            .collect();
        let x = DMatrix::from_row_slice(33, 2, &rows);
        let l = local_frame_contrastive(&[x.clone()], &[x], spec, 0.07).unwrap();
        let expected = (24.0 * (-1.0f64 / 0.07).exp()).ln_1p();
        assert!((l.loss - expected).abs() < 1e-15);
        assert!((l.loss - 1.5e-5).abs() < 1e-6);
    }

    #[test]
    fn uniform_local_loss_is_ln_25() {
        let x = DMatrix::from_element(40, 3, 1.0);
        let l = local_frame_contrastive(&[x.clone(), x.clone()], &[x.clone(), x], LocalWindowSpec::default(), 0.07)
            .unwrap();
        assert!((l.loss - 25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn too_short_names_minimum() {
        let x = DMatrix::from_element(32, 2, 1.0);
        let err = local_frame_contrastive(&[x.clone()], &[x], LocalWindowSpec::default(), 0.07)
            .unwrap_err()
            .to_string();
        assert!(err.contains("33"), "{err}");
        assert!(LocalWindowSpec { t: 0, k: 4 }.validate().is_err());
        assert!(LocalWindowSpec { t: 4, k: 1 }.validate().is_err());
    }

    #[test]
    fn relative_error_metric() {
        assert_eq!(max_relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((max_relative_error(&[1.0, 4.0], &[1.0, 3.0]) - 0.25).abs() < 1e-15);
    }
}
