//! ZIP feature adapter, similarity-weighted label aggregation and the
//! fine-tuning loop with hand-derived gradients.
//!
//! Parameters: `W` (`C × C`), `b` (`C`) and the cache `S` (`NK × C`).
//! For a batch `X` of view embeddings with labels `y`:
//!
//! ```text
//! u_m   = W x_m + b            z_m   = silu(u_m) + x_m
//! ũ_i   = W s_i + b            s'_i  = silu(ũ_i) + s_i      (s'_i = s_i without cache adaptation)
//! a_mi  = exp(-β (1 - cos(z_m, s'_i)))
//! ℓ_mn  = Σ_{i : label_i = n} a_mi
//! L     = mean_m CE(ℓ_m, y_m) + λ · triplet(z, y; α)
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, ClassifierError, Result, SupportCache};
use crate::numerics::{
    adamw_step, cross_entropy_with_grad, dot, l2_norm, psi, silu, silu_grad, triplet_loss_with_grad,
    AdamWConfig, AdamWState, LossBreakdown, NumericsError, Tensor2, TripletMining, ZERO_NORM_EPS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub beta: f64,
    /// Triplet margin.
    pub alpha: f64,
    /// Triplet weight.
    pub lambda: f64,
    pub adamw: AdamWConfig,
    pub iterations: usize,
    /// Seeds random initialisation where a model has one.
    pub seed: u64,
    /// Pass cache rows through ZIP as well as queries.
    pub adapt_cache: bool,
    pub train_cache: bool,
    pub train_zip: bool,
    pub mining: TripletMining,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 1.0,
            alpha: 0.5,
            lambda: 4.0,
            adamw: AdamWConfig::default(),
            iterations: 500,
            seed: 0,
            adapt_cache: true,
            train_cache: true,
            train_zip: true,
            mining: TripletMining::BatchHard,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.into()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.alpha >= 0.0) {
            return bad("lambda and alpha must be non-negative");
        }
        let a = &self.adamw;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0 && a.weight_decay >= 0.0) {
            return bad("invalid AdamW settings");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipParams {
    pub w: Tensor2,
    pub b: Vec<f64>,
    pub cache: Tensor2,
    pub train_cache: bool,
    pub train_zip: bool,
}

impl ZipParams {
    /// `W = 0`, `b = 0`, cache copied: the adapter starts as the identity.
    pub fn fresh(cache: &Tensor2) -> Self {
        let c = cache.cols();
        ZipParams {
            w: Tensor2::zeros(c, c),
            b: vec![0.0; c],
            cache: cache.clone(),
            train_cache: true,
            train_zip: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.b.len()
    }

    /// `[W row-major, b, cache row-major]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.w.data().len() + self.b.len() + self.cache.data().len());
        v.extend_from_slice(self.w.data());
        v.extend_from_slice(&self.b);
        v.extend_from_slice(self.cache.data());
        v
    }

    /// Inverse of [`ZipParams::to_flat`]; panics on a wrong length.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let (nw, nb) = (self.w.data().len(), self.b.len());
        assert_eq!(flat.len(), nw + nb + self.cache.data().len(), "flat parameter length");
        let mut p = self.clone();
        p.w.data_mut().copy_from_slice(&flat[..nw]);
        p.b.copy_from_slice(&flat[nw..nw + nb]);
        p.cache.data_mut().copy_from_slice(&flat[nw + nb..]);
        p
    }
}

fn zip_row(x: &[f64], w: &Tensor2, b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let u: Vec<f64> = b.iter().zip(w.iter_rows()).map(|(bj, wj)| bj + dot(wj, x)).collect();
    let z = u.iter().zip(x).map(|(u, x)| silu(*u) + x).collect();
    (u, z)
}

/// `SiLU(W·f + b) + f`.
pub fn zip_forward(f: &[f64], params: &ZipParams) -> Result<Vec<f64>> {
    if f.len() != params.channels() || params.w.shape() != (f.len(), f.len()) {
        return Err(NumericsError::ShapeMismatch {
            expected: format!("{} channels", params.channels()),
            actual: format!("{}", f.len()),
        }
        .into());
    }
    Ok(zip_row(f, &params.w, &params.b).1)
}

/// Pre-activations and outputs of ZIP for every row.
fn zip_rows(x: &Tensor2, w: &Tensor2, b: &[f64]) -> (Tensor2, Tensor2) {
    let (m, c) = x.shape();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..m).into_par_iter().map(|r| zip_row(x.row(r), w, b)).collect();
    let mut u = Vec::with_capacity(m * c);
    let mut z = Vec::with_capacity(m * c);
    for (ur, zr) in rows {
        u.extend(ur);
        z.extend(zr);
    }
    (
        Tensor2::from_vec(m, c, u).expect("shape"),
        Tensor2::from_vec(m, c, z).expect("shape"),
    )
}

/// Row norms and unit rows; zero rows are an error.
fn unit_rows(x: &Tensor2) -> Result<(Vec<f64>, Tensor2)> {
    let norms: Vec<f64> = x.iter_rows().map(l2_norm).collect();
    if norms.iter().any(|&n| n < ZERO_NORM_EPS) {
        return Err(NumericsError::ZeroVector.into());
    }
    let mut unit = x.clone();
    let c = x.cols();
    for (r, row) in unit.data_mut().chunks_exact_mut(c).enumerate() {
        row.iter_mut().for_each(|v| *v /= norms[r]);
    }
    Ok((norms, unit))
}

/// `logits_n = Σ_i ψ(cos(query, cache_i); β) · [labels_i = n]`.
pub fn sdpa_logits(query: &[f64], cache: &Tensor2, labels: &[usize], n: usize, beta: f64) -> Result<Vec<f64>> {
    if cache.rows() == 0 || labels.len() != cache.rows() {
        return Err(NumericsError::ShapeMismatch {
            expected: "a non-empty cache with one label per row".into(),
            actual: format!("{} rows, {} labels", cache.rows(), labels.len()),
        }
        .into());
    }
    let mut logits = vec![0.0; n];
    for (row, &l) in cache.iter_rows().zip(labels) {
        let s = crate::numerics::cosine_sim(query, row)?;
        *logits.get_mut(l).ok_or(NumericsError::IndexOutOfRange { index: l, len: n })? += psi(s, beta);
    }
    Ok(logits)
}

/// Inference-time cache model: query and (optionally) cache adapted through ZIP.
#[derive(Debug, Clone, PartialEq)]
pub struct ZipModel {
    params: ZipParams,
    beta: f64,
    adapt_cache: bool,
    labels: Vec<usize>,
    n: usize,
    adapted_cache: Tensor2,
}

impl ZipModel {
    pub fn new(params: ZipParams, beta: f64, adapt_cache: bool, labels: Vec<usize>, n: usize) -> Result<Self> {
        let c = params.channels();
        if params.w.shape() != (c, c) || params.cache.cols() != c || labels.len() != params.cache.rows() {
            return Err(NumericsError::ShapeMismatch {
                expected: format!("W {c}x{c}, cache with {c} columns and one label per row"),
                actual: format!(
                    "W {:?}, cache {:?}, {} labels",
                    params.w.shape(),
                    params.cache.shape(),
                    labels.len()
                ),
            }
            .into());
        }
        let adapted_cache = if adapt_cache {
            zip_rows(&params.cache, &params.w, &params.b).1
        } else {
            params.cache.clone()
        };
        Ok(ZipModel {
            params,
            beta,
            adapt_cache,
            labels,
            n,
            adapted_cache,
        })
    }

    pub fn params(&self) -> &ZipParams {
        &self.params
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn adapt_cache(&self) -> bool {
        self.adapt_cache
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    pub fn logits(&self, query: &[f64]) -> Result<Vec<f64>> {
        let q = zip_forward(query, &self.params)?;
        sdpa_logits(&q, &self.adapted_cache, &self.labels, self.n, self.beta)
    }
}

/// Loss, batch accuracy and full gradient of the fine-tuning objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub loss: LossBreakdown,
    pub correct: usize,
    pub grad_w: Tensor2,
    pub grad_b: Vec<f64>,
    pub grad_cache: Tensor2,
}

impl ObjectiveEval {
    pub fn flat_grad(&self) -> Vec<f64> {
        let mut v = self.grad_w.data().to_vec();
        v.extend_from_slice(&self.grad_b);
        v.extend_from_slice(self.grad_cache.data());
        v
    }
}

/// Evaluates the objective on `batch` (one row per view embedding).
///
/// The triplet term is skipped entirely when `config.lambda == 0`.
pub fn zip_objective(
    params: &ZipParams,
    batch: &Tensor2,
    labels: &[usize],
    cache_labels: &[usize],
    n: usize,
    config: &TrainConfig,
) -> Result<ObjectiveEval> {
    let (m, c) = batch.shape();
    let nk = params.cache.rows();
    if labels.len() != m || cache_labels.len() != nk || c != params.channels() || params.cache.cols() != c {
        return Err(NumericsError::ShapeMismatch {
            expected: format!("batch x {c} with {m} labels, cache with {nk} labels"),
            actual: format!("batch {:?}, {} labels, {} cache labels", batch.shape(), labels.len(), cache_labels.len()),
        }
        .into());
    }
    let beta = config.beta;
    let (u, z) = zip_rows(batch, &params.w, &params.b);
    let (su, s_out) = if config.adapt_cache {
        zip_rows(&params.cache, &params.w, &params.b)
    } else {
        (Tensor2::zeros(nk, c), params.cache.clone())
    };
    let (z_norm, z_unit) = unit_rows(&z)?;
    let (s_norm, s_unit) = unit_rows(&s_out)?;

    // Per query row: CE, hit, and dL/dcos for every cache row.
    let rows: Vec<(f64, bool, Vec<f64>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|r| {
            let mut cos = Vec::with_capacity(nk);
            let mut act = Vec::with_capacity(nk);
            let mut logits = vec![0.0; n];
            for i in 0..nk {
                let cs = dot(z_unit.row(r), s_unit.row(i)).clamp(-1.0, 1.0);
                let a = psi(cs, beta);
                logits[cache_labels[i]] += a;
                cos.push(cs);
                act.push(a);
            }
            let (loss, g) = cross_entropy_with_grad(&logits, labels[r])?;
            let dcos = (0..nk)
                .map(|i| g[cache_labels[i]] / m as f64 * beta * act[i])
                .collect();
            Ok((loss, argmax(&logits) == labels[r], dcos, cos))
        })
        .collect::<std::result::Result<_, NumericsError>>()?;

    let ce = rows.iter().map(|r| r.0).sum::<f64>() / m as f64;
    let correct = rows.iter().filter(|r| r.1).count();

    // dL/dz via ∂cos/∂z = (ŝ - cos·ẑ)/|z|.
    let mut dz: Vec<f64> = (0..m)
        .into_par_iter()
        .flat_map_iter(|r| {
            let (dcos, cos) = (&rows[r].2, &rows[r].3);
            let zu = z_unit.row(r);
            let mut g = vec![0.0; c];
            for i in 0..nk {
                let k = dcos[i] / z_norm[r];
                if k == 0.0 {
                    continue;
                }
                for ((gj, sj), zj) in g.iter_mut().zip(s_unit.row(i)).zip(zu) {
                    *gj += k * (sj - cos[i] * zj);
                }
            }
            g
        })
        .collect();
    let ds: Vec<f64> = (0..nk)
        .into_par_iter()
        .flat_map_iter(|i| {
            let su_i = s_unit.row(i);
            let mut g = vec![0.0; c];
            for r in 0..m {
                let k = rows[r].2[i] / s_norm[i];
                if k == 0.0 {
                    continue;
                }
                let cs = rows[r].3[i];
                for ((gj, zj), sj) in g.iter_mut().zip(z_unit.row(r)).zip(su_i) {
                    *gj += k * (zj - cs * sj);
                }
            }
            g
        })
        .collect();

    let triplet = if config.lambda != 0.0 {
        let (tv, tg) = triplet_loss_with_grad(&z, labels, config.alpha, config.mining)?;
        for (d, g) in dz.iter_mut().zip(tg.data()) {
            *d += config.lambda * g;
        }
        tv.loss
    } else {
        0.0
    };

    // Back through SiLU.
    let du: Vec<f64> = dz.iter().zip(u.data()).map(|(d, u)| d * silu_grad(*u)).collect();
    let dsu: Vec<f64> = if config.adapt_cache {
        ds.iter().zip(su.data()).map(|(d, u)| d * silu_grad(*u)).collect()
    } else {
        vec![0.0; nk * c]
    };

    let grad_w_rows: Vec<f64> = (0..c)
        .into_par_iter()
        .flat_map_iter(|j| {
            let mut g = vec![0.0; c];
            for r in 0..m {
                let k = du[r * c + j];
                if k != 0.0 {
                    g.iter_mut().zip(batch.row(r)).for_each(|(gi, x)| *gi += k * x);
                }
            }
            for i in 0..nk {
                let k = dsu[i * c + j];
                if k != 0.0 {
                    g.iter_mut().zip(params.cache.row(i)).for_each(|(gi, s)| *gi += k * s);
                }
            }
            g
        })
        .collect();
    let mut grad_b = vec![0.0; c];
    for r in 0..m {
        grad_b.iter_mut().zip(&du[r * c..(r + 1) * c]).for_each(|(g, d)| *g += d);
    }
    for i in 0..nk {
        grad_b.iter_mut().zip(&dsu[i * c..(i + 1) * c]).for_each(|(g, d)| *g += d);
    }
    let mut grad_cache = ds;
    if config.adapt_cache {
        // Residual path plus Wᵀ·dũ.
        for i in 0..nk {
            let dsu_i = &dsu[i * c..(i + 1) * c];
            let gi = &mut grad_cache[i * c..(i + 1) * c];
            for (j, &k) in dsu_i.iter().enumerate() {
                if k != 0.0 {
                    gi.iter_mut().zip(params.w.row(j)).for_each(|(g, w)| *g += k * w);
                }
            }
        }
    }

    Ok(ObjectiveEval {
        loss: LossBreakdown::new(ce, triplet, config.lambda),
        correct,
        grad_w: Tensor2::from_vec(c, c, grad_w_rows).expect("shape"),
        grad_b,
        grad_cache: Tensor2::from_vec(nk, c, grad_cache).expect("shape"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub ce: f64,
    pub triplet: f64,
    pub total: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ZipParams,
    /// Entry `t` is measured before update `t`; the last entry is the final state.
    pub trace: Vec<TraceEntry>,
}

fn check_finite(iteration: usize, eval: &ObjectiveEval) -> Result<()> {
    let l = &eval.loss;
    if !(l.ce.is_finite() && l.triplet.is_finite() && l.total.is_finite()) {
        return Err(ClassifierError::NonFiniteLoss {
            iteration,
            detail: format!("ce={} triplet={} total={}", l.ce, l.triplet, l.total),
        });
    }
    let grads_ok = eval.grad_w.is_finite()
        && eval.grad_cache.is_finite()
        && eval.grad_b.iter().all(|g| g.is_finite());
    if !grads_ok {
        return Err(ClassifierError::NonFiniteLoss {
            iteration,
            detail: "non-finite gradient".into(),
        });
    }
    Ok(())
}

/// Full-batch AdamW on every view embedding of the support set.
///
/// Only the groups flagged in `config` move. With both flags off the
/// parameters are returned untouched with a single trace entry.
pub fn train_zip_adapter_f(cache: &SupportCache, views: &[Tensor2], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let support = super::SupportSet::new(cache.clone(), views.to_vec())?;
    let (batch, labels) = support.view_batch();
    let n = cache.num_classes();
    let mut params = ZipParams::fresh(cache.features());
    params.train_cache = config.train_cache;
    params.train_zip = config.train_zip;
    let entry = |iteration: usize, e: &ObjectiveEval| TraceEntry {
        iteration,
        ce: e.loss.ce,
        triplet: e.loss.triplet,
        total: e.loss.total,
        train_accuracy: e.correct as f64 / labels.len() as f64,
    };
    let c = params.channels();
    let mut zip_state = AdamWState::new(config.adamw, c * c + c);
    let mut cache_state = AdamWState::new(config.adamw, params.cache.data().len());
    let steps = if config.train_cache || config.train_zip {
        config.iterations
    } else {
        0
    };
    let mut trace = Vec::with_capacity(steps + 1);
    let mut flat_zip = vec![0.0; c * c + c];
    let mut flat_grad = vec![0.0; c * c + c];
    for it in 0..steps {
        let eval = zip_objective(&params, &batch, &labels, cache.labels(), n, config)?;
        check_finite(it, &eval)?;
        trace.push(entry(it, &eval));
        if config.train_zip {
            flat_zip[..c * c].copy_from_slice(params.w.data());
            flat_zip[c * c..].copy_from_slice(&params.b);
            flat_grad[..c * c].copy_from_slice(eval.grad_w.data());
            flat_grad[c * c..].copy_from_slice(&eval.grad_b);
            adamw_step(&mut flat_zip, &flat_grad, &mut zip_state)?;
            params.w.data_mut().copy_from_slice(&flat_zip[..c * c]);
            params.b.copy_from_slice(&flat_zip[c * c..]);
        }
        if config.train_cache {
            adamw_step(params.cache.data_mut(), eval.grad_cache.data(), &mut cache_state)?;
        }
    }
    let last = zip_objective(&params, &batch, &labels, cache.labels(), n, config)?;
    check_finite(steps, &last)?;
    trace.push(entry(steps, &last));
    Ok(TrainOutcome { params, trace })
}
