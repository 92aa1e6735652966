use serde::{Deserialize, Serialize};

use super::ops::{dot, dot4, l2_norm, softmax, ZERO_NORM_EPS};
use super::{NumericsError, Result, Tensor2};

/// Lower clamp on the target-class probability before taking the log.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// One evaluation of the composite fine-tuning objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub triplet: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(ce: f64, triplet: f64, lambda: f64) -> Self {
        LossBreakdown {
            ce,
            triplet,
            total: ce + lambda * triplet,
        }
    }
}

fn check_label(logits: &[f64], label: usize) -> Result<()> {
    if logits.len() < 2 {
        return Err(NumericsError::InvalidArgument(format!(
            "cross entropy needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(NumericsError::IndexOutOfRange {
            index: label,
            len: logits.len(),
        });
    }
    Ok(())
}

/// `-log softmax(logits)[label]` with the probability floored at [`CE_PROB_FLOOR`].
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    cross_entropy_with_grad(logits, label).map(|(loss, _)| loss)
}

/// Cross entropy and its gradient with respect to the logits.
///
/// When the floor is active the loss is constant in the logits, so the
/// gradient is zero.
pub fn cross_entropy_with_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    check_label(logits, label)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let nll = lse - logits[label];
    let cap = -CE_PROB_FLOOR.ln();
    if nll > cap {
        return Ok((cap, vec![0.0; logits.len()]));
    }
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((nll.max(0.0), grad))
}

/// How triplets are drawn from a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletMining {
    /// Hardest positive and hardest negative per anchor; averaged over anchors.
    #[default]
    BatchHard,
    /// Every (anchor, positive, negative) triple; averaged over triples.
    BatchAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletValue {
    pub loss: f64,
    /// Anchors (batch-hard) or triples (batch-all) the mean runs over.
    pub terms: usize,
    /// No valid triplet exists; the loss term is inactive.
    pub degenerate: bool,
}

/// Triplet margin loss with `d = 1 - cos`.
pub fn triplet_loss(
    features: &Tensor2,
    labels: &[usize],
    margin: f64,
    mining: TripletMining,
) -> Result<TripletValue> {
    triplet_impl(features, labels, margin, mining, false).map(|(v, _)| v)
}

/// Triplet loss plus its gradient with respect to every feature row.
///
/// Ties in the hardest positive/negative choice resolve to the lowest row
/// index, which fixes the subgradient used.
pub fn triplet_loss_with_grad(
    features: &Tensor2,
    labels: &[usize],
    margin: f64,
    mining: TripletMining,
) -> Result<(TripletValue, Tensor2)> {
    triplet_impl(features, labels, margin, mining, true)
        .map(|(v, g)| (v, g.expect("gradient requested")))
}

/// Clamped cosine matrix of unit rows; symmetric with a unit diagonal.
fn gram(unit: &Tensor2, n: usize, c: usize) -> Vec<f64> {
    let u = unit.data();
    let row = |i: usize| &u[i * c..(i + 1) * c];
    let mut cos = vec![0.0; n * n];
    let mut put = |i: usize, j: usize, v: f64| {
        let v = v.clamp(-1.0, 1.0);
        cos[i * n + j] = v;
        cos[j * n + i] = v;
    };
    for i in 0..n {
        put(i, i, 1.0);
        let ui = row(i);
        let mut j = i + 1;
        while j + 4 <= n {
            let d = dot4(ui, [row(j), row(j + 1), row(j + 2), row(j + 3)]);
            for (k, v) in d.into_iter().enumerate() {
                put(i, j + k, v);
            }
            j += 4;
        }
        for j in j..n {
            put(i, j, dot(ui, row(j)));
        }
    }
    cos
}

fn triplet_impl(
    features: &Tensor2,
    labels: &[usize],
    margin: f64,
    mining: TripletMining,
    want_grad: bool,
) -> Result<(TripletValue, Option<Tensor2>)> {
    let (n, c) = features.shape();
    if labels.len() != n {
        return Err(NumericsError::shape(
            format!("{n} labels"),
            format!("{} labels", labels.len()),
        ));
    }
    let norms: Vec<f64> = features.iter_rows().map(l2_norm).collect();
    if norms.iter().any(|&v| v < ZERO_NORM_EPS) {
        return Err(NumericsError::ZeroVector);
    }
    let mut unit = features.clone();
    for (i, row) in unit.data_mut().chunks_exact_mut(c.max(1)).enumerate() {
        row.iter_mut().for_each(|v| *v /= norms[i]);
    }
    let cos = gram(&unit, n, c);
    let dist = |i: usize, j: usize| 1.0 - cos[i * n + j];

    // (anchor, other, dL/dcos(anchor, other)) before normalisation by term count.
    let mut coeffs: Vec<(usize, usize, f64)> = Vec::new();
    let mut total = 0.0;
    let mut terms = 0usize;
    match mining {
        TripletMining::BatchHard => {
            for a in 0..n {
                let row = &cos[a * n..(a + 1) * n];
                let la = labels[a];
                // (index, cosine); farthest positive has the smallest cosine.
                let mut hardest_pos: Option<(usize, f64)> = None;
                let mut hardest_neg: Option<(usize, f64)> = None;
                for (j, (&cj, &lj)) in row.iter().zip(labels).enumerate() {
                    if j == a {
                        continue;
                    }
                    if lj == la {
                        if hardest_pos.is_none_or(|(_, best)| 1.0 - cj > 1.0 - best) {
                            hardest_pos = Some((j, cj));
                        }
                    } else if hardest_neg.is_none_or(|(_, best)| 1.0 - cj < 1.0 - best) {
                        hardest_neg = Some((j, cj));
                    }
                }
                if let (Some((p, cp)), Some((q, cq))) = (hardest_pos, hardest_neg) {
                    terms += 1;
                    let h = (1.0 - cp) - (1.0 - cq) + margin;
                    if h > 0.0 {
                        total += h;
                        coeffs.push((a, p, -1.0));
                        coeffs.push((a, q, 1.0));
                    }
                }
            }
        }
        TripletMining::BatchAll => {
            for a in 0..n {
                for p in 0..n {
                    if p == a || labels[p] != labels[a] {
                        continue;
                    }
                    for q in 0..n {
                        if labels[q] == labels[a] {
                            continue;
                        }
                        terms += 1;
                        let h = dist(a, p) - dist(a, q) + margin;
                        if h > 0.0 {
                            total += h;
                            coeffs.push((a, p, -1.0));
                            coeffs.push((a, q, 1.0));
                        }
                    }
                }
            }
        }
    }

    if terms == 0 {
        let value = TripletValue {
            loss: 0.0,
            terms: 0,
            degenerate: true,
        };
        return Ok((value, want_grad.then(|| Tensor2::zeros(n, c))));
    }
    let scale = 1.0 / terms as f64;
    let value = TripletValue {
        loss: total * scale,
        terms,
        degenerate: false,
    };
    if !want_grad {
        return Ok((value, None));
    }

    // d cos(i, j) / d x_i = (u_j - cos_ij u_i) / |x_i|, symmetric for x_j.
    let mut grad = vec![0.0; n * c];
    let u = unit.data();
    for (i, j, g) in coeffs {
        let g = g * scale;
        let cij = cos[i * n + j];
        let (gi, gj) = (g / norms[i], g / norms[j]);
        let (ui, uj) = (&u[i * c..(i + 1) * c], &u[j * c..(j + 1) * c]);
        for (k, (&a, &b)) in ui.iter().zip(uj).enumerate() {
            grad[i * c + k] += gi * (b - cij * a);
            grad[j * c + k] += gj * (a - cij * b);
        }
    }
    let grad = Tensor2::from_vec(n, c, grad)?;
    Ok((value, Some(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine_sim;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_entropy_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((cross_entropy(&[0.0, 0.0], 0).unwrap() - ln2).abs() < 1e-15);
        assert!(cross_entropy(&[20.0, -20.0], 0).unwrap() < 1e-15);
        assert!((cross_entropy(&[0.0; 5], 2).unwrap() - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_errors() {
        assert_eq!(
            cross_entropy(&[0.0, 0.0], 2),
            Err(NumericsError::IndexOutOfRange { index: 2, len: 2 })
        );
        assert!(matches!(
            cross_entropy(&[0.0], 0),
            Err(NumericsError::InvalidArgument(_))
        ));
    }

    #[test]
    fn cross_entropy_floor_caps_loss() {
        let (loss, grad) = cross_entropy_with_grad(&[-100.0, 100.0], 0).unwrap();
        assert!((loss - (-CE_PROB_FLOOR.ln())).abs() < 1e-12);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn cross_entropy_grad_matches_central_difference() {
        let z = [0.3, -1.0, 2.2, 0.1];
        let (_, g) = cross_entropy_with_grad(&z, 1).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let fd = (cross_entropy(&zp, 1).unwrap() - cross_entropy(&zm, 1).unwrap()) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-8);
        }
    }

    fn batch(rows: &[[f64; 2]]) -> Tensor2 {
        Tensor2::from_rows(rows).unwrap()
    }

    #[test]
    fn triplet_satisfied_margin_is_zero() {
        // anchor == positive, negative orthogonal: max(0 - 1 + 0.5, 0) = 0.
        let f = batch(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let v = triplet_loss(&f, &[0, 0, 1], 0.5, TripletMining::BatchHard).unwrap();
        // anchors 0 and 1 contribute 0; anchor 2 has no positive.
        assert_eq!(v.loss, 0.0);
        assert_eq!(v.terms, 2);
        assert!(!v.degenerate);
    }

    #[test]
    fn triplet_violated_margin() {
        // anchor [1,0], positive [0,1], negative [1,0]: max(1 - 0 + 0.5, 0) = 1.5.
        let f = batch(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        let v = triplet_loss(&f, &[0, 0, 1], 0.5, TripletMining::BatchHard).unwrap();
        // Anchor 0 scores 1.5. Anchor 1 (positive of anchor 0) sees its
        // positive at distance 1 and the negative at distance 1: 0.5.
        assert!((v.loss - (1.5 + 0.5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn triplet_single_anchor_example() {
        // Both class-0 anchors see their positive orthogonal and a negative identical.
        let f = batch(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        let v = triplet_loss(&f, &[0, 0, 1, 2], 0.5, TripletMining::BatchHard).unwrap();
        assert!((v.loss - 1.5).abs() < 1e-15);
    }

    #[test]
    fn triplet_degenerate_batches() {
        let one_class = batch(&[[1.0, 0.0], [0.0, 1.0]]);
        let v = triplet_loss(&one_class, &[0, 0], 0.5, TripletMining::BatchHard).unwrap();
        assert!(v.degenerate && v.loss == 0.0);
        let singletons = batch(&[[1.0, 0.0], [0.0, 1.0]]);
        let (v, g) =
            triplet_loss_with_grad(&singletons, &[0, 1], 0.5, TripletMining::BatchHard).unwrap();
        assert!(v.degenerate);
        assert!(g.data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn triplet_rejects_zero_rows() {
        let f = batch(&[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(
            triplet_loss(&f, &[0, 1], 0.5, TripletMining::BatchHard),
            Err(NumericsError::ZeroVector)
        );
    }

    /// Exhaustive oracle: enumerate every (a, p, n) triple and keep, per
    /// anchor, the largest hinge.
    fn brute_force_batch_hard(rows: &[Vec<f64>], labels: &[usize], margin: f64) -> f64 {
        let d = |i: usize, j: usize| 1.0 - cosine_sim(&rows[i], &rows[j]).unwrap();
        let mut sum = 0.0;
        let mut anchors = 0;
        for a in 0..rows.len() {
            let mut best: Option<f64> = None;
            for p in 0..rows.len() {
                for n in 0..rows.len() {
                    if p == a || labels[p] != labels[a] || labels[n] == labels[a] {
                        continue;
                    }
                    let h = (d(a, p) - d(a, n) + margin).max(0.0);
                    best = Some(best.map_or(h, |b: f64| b.max(h)));
                }
            }
            if let Some(b) = best {
                sum += b;
                anchors += 1;
            }
        }
        sum / anchors as f64
    }

    #[test]
    fn triplet_batch_hard_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let labels = [0, 0, 0, 0, 1, 1, 1, 1];
            let f = Tensor2::from_rows(&rows).unwrap();
            let v = triplet_loss(&f, &labels, 0.5, TripletMining::BatchHard).unwrap();
            let oracle = brute_force_batch_hard(&rows, &labels, 0.5);
            assert!((v.loss - oracle).abs() < 1e-12, "{} vs {oracle}", v.loss);
        }
    }

    #[test]
    fn triplet_batch_all_matches_enumeration() {
        let rows = vec![
            vec![1.0, 0.2],
            vec![0.8, 0.5],
            vec![-0.3, 1.0],
            vec![0.1, 0.9],
        ];
        let labels = [0, 0, 1, 1];
        let d = |i: usize, j: usize| 1.0 - cosine_sim(&rows[i], &rows[j]).unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        for a in 0..4 {
            for p in 0..4 {
                for n in 0..4 {
                    if p != a && labels[p] == labels[a] && labels[n] != labels[a] {
                        sum += (d(a, p) - d(a, n) + 1.5).max(0.0);
                        count += 1;
                    }
                }
            }
        }
        let f = Tensor2::from_rows(&rows).unwrap();
        let v = triplet_loss(&f, &labels, 1.5, TripletMining::BatchAll).unwrap();
        assert_eq!(v.terms, count);
        assert!((v.loss - sum / count as f64).abs() < 1e-15);
    }

    #[test]
    fn triplet_grad_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mining in [TripletMining::BatchHard, TripletMining::BatchAll] {
            let rows: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let labels = [0, 0, 1, 1, 2, 2];
            let f = Tensor2::from_vec(6, 3, rows.clone()).unwrap();
            let (_, g) = triplet_loss_with_grad(&f, &labels, 0.8, mining).unwrap();
            let h = 1e-6;
            for i in 0..rows.len() {
                let mut p = rows.clone();
                let mut m = rows.clone();
                p[i] += h;
                m[i] -= h;
                let lp = triplet_loss(&Tensor2::from_vec(6, 3, p).unwrap(), &labels, 0.8, mining)
                    .unwrap()
                    .loss;
                let lm = triplet_loss(&Tensor2::from_vec(6, 3, m).unwrap(), &labels, 0.8, mining)
                    .unwrap()
                    .loss;
                let fd = (lp - lm) / (2.0 * h);
                assert!((g.data()[i] - fd).abs() < 1e-7, "{mining:?} coord {i}");
            }
        }
    }

    proptest! {
        #[test]
        fn cross_entropy_is_nonnegative_and_shift_invariant(
            logits in prop::collection::vec(-30.0f64..30.0, 2..8),
            shift in -100.0f64..100.0,
            label_seed in 0usize..100,
        ) {
            let label = label_seed % logits.len();
            let a = cross_entropy(&logits, label).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let b = cross_entropy(&shifted, label).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-10);
        }

        #[test]
        fn cross_entropy_uniform_is_ln_n(n in 2usize..50, z in -10.0f64..10.0) {
            let logits = vec![z; n];
            prop_assert!((cross_entropy(&logits, n - 1).unwrap() - (n as f64).ln()).abs() < 1e-12);
        }

        #[test]
        fn triplet_zero_when_all_margins_met(
            spread in 0.0f64..0.05,
            signs in prop::collection::vec(-1.0f64..1.0, 8),
        ) {
            // Two tight clusters around orthogonal axes: every hardest
            // positive distance + 0.5 stays below the hardest negative distance.
            let mut rows = Vec::new();
            for (i, s) in signs.iter().enumerate() {
                let jitter = spread * s;
                rows.push(if i < 4 { vec![1.0, jitter] } else { vec![jitter, 1.0] });
            }
            let f = Tensor2::from_rows(&rows).unwrap();
            let v = triplet_loss(&f, &[0, 0, 0, 0, 1, 1, 1, 1], 0.5, TripletMining::BatchHard).unwrap();
            prop_assert_eq!(v.loss, 0.0);
        }
    }
}
