//! Masked pixel-wise cross-entropy and class decisions from logits.

use super::{Real, TensorError};
use crate::grid_io::UNLABELED;
use crate::par;

/// Summary of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossInfo {
    /// Mean negative log-likelihood over counted pixels (0 when none).
    pub loss: f64,
    /// Number of pixels that contributed.
    pub counted: usize,
    /// Set when no pixel contributed; the gradient is then all zeros.
    pub empty: bool,
}

const BLOCK: usize = 4096;

/// Loss and its gradient with respect to `logits` (`[n, k, h, w]`).
///
/// A pixel counts when `include` allows it (all pixels when `None`) and its
/// target is not [`UNLABELED`]. Targets of excluded pixels are never read.
pub(crate) fn masked_nll<T: Real>(
    logits: &[T],
    ld: [usize; 4],
    targets: &[u8],
    include: Option<&[bool]>,
) -> Result<(LossInfo, Vec<T>), TensorError> {
    let [n, k, h, w] = ld;
    let hw = h * w;
    let pixels = n * hw;
    if targets.len() != pixels || include.is_some_and(|m| m.len() != pixels) {
        return Err(super::shape_err(format!(
            "loss expects {pixels} targets and mask entries"
        )));
    }
    let counts = |i: usize| include.map_or(true, |m| m[i]) && targets[i] != UNLABELED;
    let mut counted = 0usize;
    for i in 0..pixels {
        if counts(i) {
            let t = targets[i];
            if t as usize >= k {
                return Err(TensorError::Label { index: i, code: t });
            }
            counted += 1;
        }
    }
    let mut grad = vec![T::zero(); logits.len()];
    if counted == 0 {
        return Ok((LossInfo { loss: 0.0, counted: 0, empty: true }, grad));
    }
    let scale = 1.0 / counted as f64;
    let blocks = pixels.div_ceil(BLOCK);
    // Each block returns its loss partial and the gradient entries it owns.
    let parts = par::map_range(blocks, |b| {
        let mut sum = 0.0f64;
        let mut entries = Vec::new();
        let mut probs = vec![0.0f64; k];
        for i in b * BLOCK..((b + 1) * BLOCK).min(pixels) {
            if !counts(i) {
                continue;
            }
            let (ni, pix) = (i / hw, i % hw);
            let at = |c: usize| logits[(ni * k + c) * hw + pix].to_f64_lossless();
            let mx = (0..k).map(at).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (c, p) in probs.iter_mut().enumerate() {
                *p = (at(c) - mx).exp();
                z += *p;
            }
            let t = targets[i] as usize;
            sum += z.ln() - (at(t) - mx);
            for (c, p) in probs.iter().enumerate() {
                let onehot = if c == t { 1.0 } else { 0.0 };
                entries.push(((ni * k + c) * hw + pix, (p / z - onehot) * scale));
            }
        }
        (sum, entries)
    });
    let mut total = 0.0f64;
    for (s, entries) in parts {
        total += s;
        for (idx, g) in entries {
            grad[idx] = T::of(g);
        }
    }
    Ok((
        LossInfo {
            loss: total * scale,
            counted,
            empty: false,
        },
        grad,
    ))
}

/// Most likely class per pixel of `[n, k, h, w]` logits; ties pick the lowest class.
pub fn argmax_classes<T: Real>(logits: &[T], ld: [usize; 4]) -> Vec<u8> {
    let [n, k, h, w] = ld;
    let hw = h * w;
    par::map_range(n * hw, |i| {
        let (ni, pix) = (i / hw, i % hw);
        let mut best = 0;
        let mut bv = logits[ni * k * hw + pix];
        for c in 1..k {
            let v = logits[(ni * k + c) * hw + pix];
            if v > bv {
                best = c;
                bv = v;
            }
        }
        best as u8
    })
}

/// Largest softmax probability per pixel.
pub fn softmax_max_probability<T: Real>(logits: &[T], ld: [usize; 4]) -> Vec<f32> {
    let [n, k, h, w] = ld;
    let hw = h * w;
    par::map_range(n * hw, |i| {
        let (ni, pix) = (i / hw, i % hw);
        let at = |c: usize| logits[(ni * k + c) * hw + pix].to_f64_lossless();
        let mx = (0..k).map(at).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..k).map(|c| (at(c) - mx).exp()).sum();
        (1.0 / z) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = vec![0.0f64; 10 * 4];
        let (info, g) = masked_nll(&logits, [1, 10, 2, 2], &[0, 3, 9, 255], None).unwrap();
        assert_eq!(info.counted, 3);
        assert!((info.loss - 10f64.ln()).abs() < 1e-12);
        // Unlabeled pixel 3 gets no gradient.
        assert!((0..10).all(|c| g[c * 4 + 3] == 0.0));
        assert!((g[0] - (0.1 - 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_flags_and_zero_gradient() {
        let logits = vec![1.0f32; 10];
        let (info, g) = masked_nll(&logits, [1, 10, 1, 1], &[4], Some(&[false])).unwrap();
        assert!(info.empty);
        assert_eq!(info.loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn excluded_targets_are_not_validated() {
        let logits = vec![0.0f32; 20];
        assert!(masked_nll(&logits, [1, 10, 1, 2], &[1, 77], Some(&[true, false])).is_ok());
        let err = masked_nll(&logits, [1, 10, 1, 2], &[1, 77], None).unwrap_err();
        assert!(matches!(err, TensorError::Label { index: 1, code: 77 }));
    }

    #[test]
    fn stable_for_large_logits() {
        let mut logits = vec![0.0f32; 3];
        logits[1] = 1000.0;
        let (info, _) = masked_nll(&logits, [1, 3, 1, 1], &[1], None).unwrap();
        assert!(info.loss.abs() < 1e-6);
    }

    #[test]
    fn argmax_tie_goes_low() {
        let logits = [1.0f32, 3.0, 3.0, 3.0, 0.0, 3.0];
        // k = 3, two pixels: pixel 0 = (1, 3, 0), pixel 1 = (3, 3, 3).
        assert_eq!(argmax_classes(&logits, [1, 3, 1, 2]), vec![1, 0]);
        let p = softmax_max_probability(&[0.0f64, 0.0], [1, 2, 1, 1]);
        assert!((p[0] - 0.5).abs() < 1e-7);
    }
}
