//! Trained baselines: a linear probe and a visual-only bottleneck adapter.
//! Both train on every support view embedding with the same AdamW budget as
//! the cache models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, ClassifierError, Result, SupportSet, TraceEntry, TrainConfig};
use crate::numerics::{
    adamw_step, cross_entropy_with_grad, dot, l2_norm, AdamWConfig, AdamWState, NumericsError, Tensor2,
    ZERO_NORM_EPS,
};
use crate::rng::stream_rng;

/// `(loss, correct, flat gradient)` at a flat parameter vector.
type Eval = (f64, usize, Vec<f64>);

fn run_adamw(
    params: &mut [f64],
    adamw: AdamWConfig,
    iterations: usize,
    batch: usize,
    eval: impl Fn(&[f64]) -> Result<Eval>,
) -> Result<Vec<TraceEntry>> {
    let mut state = AdamWState::new(adamw, params.len());
    let mut trace = Vec::with_capacity(iterations + 1);
    for it in 0..=iterations {
        let (loss, correct, grad) = eval(params)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ClassifierError::NonFiniteLoss {
                iteration: it,
                detail: format!("loss={loss}"),
            });
        }
        trace.push(TraceEntry {
            iteration: it,
            ce: loss,
            triplet: 0.0,
            total: loss,
            train_accuracy: correct as f64 / batch as f64,
        });
        if it < iterations {
            adamw_step(params, &grad, &mut state)?;
        }
    }
    Ok(trace)
}

fn unit(v: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = l2_norm(v);
    if n < ZERO_NORM_EPS {
        return Err(NumericsError::ZeroVector.into());
    }
    Ok((n, v.iter().map(|x| x / n).collect()))
}

fn check_width(q: &[f64], c: usize) -> Result<()> {
    if q.len() != c {
        return Err(NumericsError::ShapeMismatch {
            expected: format!("{c} channels"),
            actual: format!("{}", q.len()),
        }
        .into());
    }
    Ok(())
}

/// Softmax regression on L2-normalized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbeModel {
    pub w: Tensor2,
    pub b: Vec<f64>,
}

impl LinearProbeModel {
    pub fn zeros(n: usize, c: usize) -> Self {
        LinearProbeModel {
            w: Tensor2::zeros(n, c),
            b: vec![0.0; n],
        }
    }

    pub fn logits(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_width(q, self.w.cols())?;
        let (_, u) = unit(q)?;
        Ok(self.w.iter_rows().zip(&self.b).map(|(w, b)| dot(w, &u) + b).collect())
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = self.w.data().to_vec();
        v.extend_from_slice(&self.b);
        v
    }

    fn with_flat(&self, flat: &[f64]) -> Self {
        let nw = self.w.data().len();
        let mut m = self.clone();
        m.w.data_mut().copy_from_slice(&flat[..nw]);
        m.b.copy_from_slice(&flat[nw..]);
        m
    }
}

/// Mean cross entropy and its gradient with respect to `[W, b]`.
pub fn linear_probe_objective(model: &LinearProbeModel, batch: &Tensor2, labels: &[usize]) -> Result<Eval> {
    let (n, c) = model.w.shape();
    let m = batch.rows() as f64;
    let mut gw = Tensor2::zeros(n, c);
    let mut gb = vec![0.0; n];
    let (mut loss, mut correct) = (0.0, 0);
    for (x, &y) in batch.iter_rows().zip(labels) {
        let (_, u) = unit(x)?;
        let logits: Vec<f64> = model.w.iter_rows().zip(&model.b).map(|(w, b)| dot(w, &u) + b).collect();
        let (l, g) = cross_entropy_with_grad(&logits, y)?;
        loss += l / m;
        correct += usize::from(argmax(&logits) == y);
        for (k, gk) in g.iter().enumerate() {
            gb[k] += gk / m;
            gw.row_mut(k).iter_mut().zip(&u).for_each(|(w, x)| *w += gk / m * x);
        }
    }
    let mut flat = gw.into_data();
    flat.extend(gb);
    Ok((loss, correct, flat))
}

pub fn train_linear_probe(support: &SupportSet, config: &TrainConfig) -> Result<(LinearProbeModel, Vec<TraceEntry>)> {
    config.validate()?;
    let (batch, labels) = support.view_batch();
    let model = LinearProbeModel::zeros(support.cache.num_classes(), support.cache.channels());
    let mut flat = model.flat();
    let trace = run_adamw(&mut flat, config.adamw, config.iterations, labels.len(), |p| {
        linear_probe_objective(&model.with_flat(p), &batch, &labels)
    })?;
    Ok((model.with_flat(&flat), trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipAdapterConfig {
    /// Hidden width is `C / reduction` (at least 1).
    pub reduction: usize,
    /// Weight of the adapter output in the residual blend.
    pub blend: f64,
    /// Multiplier on prototype cosines.
    pub logit_scale: f64,
}

impl Default for ClipAdapterConfig {
    fn default() -> Self {
        ClipAdapterConfig {
            reduction: 4,
            blend: 0.2,
            logit_scale: 100.0,
        }
    }
}

impl ClipAdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 || !(0.0..=1.0).contains(&self.blend) || !(self.logit_scale > 0.0) {
            return Err(ClassifierError::InvalidConfig(
                "clip_adapter needs reduction >= 1, blend in [0, 1] and a positive logit scale".into(),
            ));
        }
        Ok(())
    }
}

/// `x' = (1 - ρ)·x + ρ·relu(W2 relu(W1 x))`, logits `s · cos(x', p_n)` against
/// fixed class-mean prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipAdapterModel {
    pub w1: Tensor2,
    pub w2: Tensor2,
    pub prototypes: Tensor2,
    pub config: ClipAdapterConfig,
}

struct AdapterPass {
    h_pre: Vec<f64>,
    h: Vec<f64>,
    a_pre: Vec<f64>,
    out: Vec<f64>,
}

impl ClipAdapterModel {
    /// Weights drawn from `U(-1/√fan_in, 1/√fan_in)` on stream `"clip_adapter"`.
    pub fn init(prototypes: Tensor2, config: ClipAdapterConfig, seed: u64) -> Self {
        let c = prototypes.cols();
        let r = (c / config.reduction).max(1);
        let mut rng = stream_rng(seed, "clip_adapter");
        let mut draw = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect())
                .expect("shape")
        };
        let w1 = draw(r, c);
        let w2 = draw(c, r);
        ClipAdapterModel {
            w1,
            w2,
            prototypes,
            config,
        }
    }

    fn pass(&self, x: &[f64]) -> AdapterPass {
        let h_pre: Vec<f64> = self.w1.iter_rows().map(|w| dot(w, x)).collect();
        let h: Vec<f64> = h_pre.iter().map(|v| v.max(0.0)).collect();
        let a_pre: Vec<f64> = self.w2.iter_rows().map(|w| dot(w, &h)).collect();
        let rho = self.config.blend;
        let out = x
            .iter()
            .zip(&a_pre)
            .map(|(x, a)| (1.0 - rho) * x + rho * a.max(0.0))
            .collect();
        AdapterPass { h_pre, h, a_pre, out }
    }

    fn logits_of(&self, out: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let (n, u) = unit(out)?;
        let s = self.config.logit_scale;
        let mut cos = Vec::with_capacity(self.prototypes.rows());
        for p in self.prototypes.iter_rows() {
            cos.push(crate::numerics::cosine_sim(&u, p)?);
        }
        let logits = cos.iter().map(|c| s * c).collect();
        Ok((n, u, logits))
    }

    pub fn logits(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_width(q, self.prototypes.cols())?;
        Ok(self.logits_of(&self.pass(q).out)?.2)
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = self.w1.data().to_vec();
        v.extend_from_slice(self.w2.data());
        v
    }

    fn with_flat(&self, flat: &[f64]) -> Self {
        let n1 = self.w1.data().len();
        let mut m = self.clone();
        m.w1.data_mut().copy_from_slice(&flat[..n1]);
        m.w2.data_mut().copy_from_slice(&flat[n1..]);
        m
    }
}

/// Mean cross entropy and its gradient with respect to `[W1, W2]`.
pub fn clip_adapter_objective(model: &ClipAdapterModel, batch: &Tensor2, labels: &[usize]) -> Result<Eval> {
    let (r, c) = model.w1.shape();
    let m = batch.rows() as f64;
    let s = model.config.logit_scale;
    let rho = model.config.blend;
    let proto_units: Vec<Vec<f64>> = model
        .prototypes
        .iter_rows()
        .map(|p| unit(p).map(|(_, u)| u))
        .collect::<Result<_>>()?;
    let mut g1 = Tensor2::zeros(r, c);
    let mut g2 = Tensor2::zeros(c, r);
    let (mut loss, mut correct) = (0.0, 0);
    for (x, &y) in batch.iter_rows().zip(labels) {
        let pass = model.pass(x);
        let (norm, u, logits) = model.logits_of(&pass.out)?;
        let (l, g) = cross_entropy_with_grad(&logits, y)?;
        loss += l / m;
        correct += usize::from(argmax(&logits) == y);
        // d/dout of s·cos(out, p) = s (p̂ - cos·û) / |out|.
        let mut d_out = vec![0.0; c];
        for (k, pu) in proto_units.iter().enumerate() {
            let coef = g[k] / m * s / norm;
            if coef == 0.0 {
                continue;
            }
            let cs = logits[k] / s;
            for ((d, p), uj) in d_out.iter_mut().zip(pu).zip(&u) {
                *d += coef * (p - cs * uj);
            }
        }
        let d_a_pre: Vec<f64> = d_out
            .iter()
            .zip(&pass.a_pre)
            .map(|(d, a)| if *a > 0.0 { rho * d } else { 0.0 })
            .collect();
        let mut d_h = vec![0.0; r];
        for (j, &da) in d_a_pre.iter().enumerate() {
            if da == 0.0 {
                continue;
            }
            g2.row_mut(j).iter_mut().zip(&pass.h).for_each(|(g, h)| *g += da * h);
            d_h.iter_mut().zip(model.w2.row(j)).for_each(|(dh, w)| *dh += da * w);
        }
        for (k, (&dh, &hp)) in d_h.iter().zip(&pass.h_pre).enumerate() {
            if hp > 0.0 && dh != 0.0 {
                g1.row_mut(k).iter_mut().zip(x).for_each(|(g, xv)| *g += dh * xv);
            }
        }
    }
    let mut flat = g1.into_data();
    flat.extend_from_slice(g2.data());
    Ok((loss, correct, flat))
}

pub fn train_clip_adapter(
    support: &SupportSet,
    adapter: &ClipAdapterConfig,
    config: &TrainConfig,
) -> Result<(ClipAdapterModel, Vec<TraceEntry>)> {
    config.validate()?;
    adapter.validate()?;
    let (batch, labels) = support.view_batch();
    let model = ClipAdapterModel::init(support.cache.class_means(), *adapter, config.seed);
    let mut flat = model.flat();
    let trace = run_adamw(&mut flat, config.adamw, config.iterations, labels.len(), |p| {
        clip_adapter_objective(&model.with_flat(p), &batch, &labels)
    })?;
    Ok((model.with_flat(&flat), trace))
}
