use super::{NumericsError, Result};

/// Norms below this are treated as degenerate embeddings.
pub const ZERO_NORM_EPS: f64 = 1e-12;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dot(a, bs[k])` for four rows at once; each sum runs in the same order as [`dot`].
#[inline]
pub(crate) fn dot4(a: &[f64], bs: [&[f64]; 4]) -> [f64; 4] {
    let mut acc = [0.0f64; 4];
    let n = a.len();
    let [b0, b1, b2, b3] = bs.map(|b| &b[..n]);
    for (k, &x) in a.iter().enumerate() {
        acc[0] += x * b0[k];
        acc[1] += x * b1[k];
        acc[2] += x * b2[k];
        acc[3] += x * b3[k];
    }
    acc
}

#[inline]
pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(NumericsError::shape(
            format!("two non-empty vectors of equal length (left {})", a.len()),
            format!("right length {}", b.len()),
        ));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
        return Err(NumericsError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Gradients of `cos(a, b)` with respect to `a` and `b`.
///
/// Uses the unclamped quotient; the clamp in [`cosine_sim`] only bites on
/// rounding noise at exactly parallel vectors.
pub fn cosine_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let cos = cosine_sim(a, b)?;
    let (na, nb) = (l2_norm(a), l2_norm(b));
    let inv = 1.0 / (na * nb);
    let ca = cos / (na * na);
    let cb = cos / (nb * nb);
    let ga = a.iter().zip(b).map(|(x, y)| y * inv - ca * x).collect();
    let gb = a.iter().zip(b).map(|(x, y)| x * inv - cb * y).collect();
    Ok((cos, ga, gb))
}

/// Similarity modulation `exp(-β(1 - x))`; `beta` sets the sharpness.
#[inline]
pub fn psi(x: f64, beta: f64) -> f64 {
    (-beta * (1.0 - x)).exp()
}

/// `dψ/dx = β·ψ(x)`.
#[inline]
pub fn psi_grad(x: f64, beta: f64) -> f64 {
    beta * psi(x, beta)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn dot4_matches_dot_bitwise(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 7), 5)) {
            let got = dot4(&rows[0], [&rows[1], &rows[2], &rows[3], &rows[4]]);
            for k in 0..4 {
                prop_assert_eq!(got[k].to_bits(), (dot(&rows[0], &rows[k + 1]) + 0.0).to_bits());
            }
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(close(
            cosine_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            1e-15
        ));
    }

    #[test]
    fn cosine_rejects_degenerate_input() {
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(NumericsError::ZeroVector));
        assert_eq!(cosine_sim(&[1.0], &[1e-13]), Err(NumericsError::ZeroVector));
        assert!(matches!(
            cosine_sim(&[1.0, 0.0], &[1.0]),
            Err(NumericsError::ShapeMismatch { .. })
        ));
        assert!(cosine_sim(&[], &[]).is_err());
    }

    #[test]
    fn cosine_is_clamped() {
        let a = [0.1, 0.2, 0.3];
        let c = cosine_sim(&a, &a).unwrap();
        assert!(c <= 1.0 && close(c, 1.0, 1e-15));
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi(1.0, 32.0), 1.0);
        assert!(close(psi(0.0, 1.0), 0.367_879_441_171_442_3, 1e-15));
        assert!(close(psi(0.5, 1.0), 0.606_530_659_712_633_4, 1e-15));
    }

    #[test]
    fn silu_examples() {
        assert_eq!(silu(0.0), 0.0);
        assert!(close(silu(1.0), 0.731_058_578_630_004_9, 1e-15));
        assert!(close(silu(50.0), 50.0, 1e-12));
        assert!(close(silu(-50.0), 0.0, 1e-12));
    }

    #[test]
    fn silu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!(close(silu_grad(x), fd, 1e-8), "x = {x}");
        }
    }

    #[test]
    fn cosine_grad_matches_central_difference() {
        let a = [0.3, -1.2, 0.8];
        let b = [1.1, 0.4, -0.2];
        let (_, ga, gb) = cosine_grad(&a, &b).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut ap = a;
            let mut am = a;
            ap[i] += h;
            am[i] -= h;
            let fd = (cosine_sim(&ap, &b).unwrap() - cosine_sim(&am, &b).unwrap()) / (2.0 * h);
            assert!(close(ga[i], fd, 1e-8));
            let mut bp = b;
            let mut bm = b;
            bp[i] += h;
            bm[i] -= h;
            let fd = (cosine_sim(&a, &bp).unwrap() - cosine_sim(&a, &bm).unwrap()) / (2.0 * h);
            assert!(close(gb[i], fd, 1e-8));
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        let q = softmax(&[1001.0, 1002.0, 1003.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!(close(*a, *b, 1e-15));
        }
        assert!(close(p.iter().sum::<f64>(), 1.0, 1e-15));
    }
}
