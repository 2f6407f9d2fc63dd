//! Reference trainers that produce ground-truth curves: a linear model, for
//! which linearization is exact, and a one-hidden-layer tanh network.
//!
//! Weights are one flat vector. LINEAR holds `W` (C×d, row-major); MLP1
//! holds `W1` (h×d) followed by `W2` (C×h), both row-major.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::DIVERGENCE_LOSS;
use crate::error::{Error, Result};
use crate::ingest::{Dtype, Features, GradientMatrix};
use crate::loss::{error_rate, loss_grad_outputs, loss_value};
use crate::types::{BatchSize, CurveKind, LabelSet, LossCurve, OutputVector, RunConfig};

pub const DEFAULT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    /// `W2·tanh(W1 x)`.
    Mlp1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Ignored for LINEAR.
    pub hidden_dim: usize,
    pub n_outputs: usize,
    pub init_seed: u64,
    /// Init std is `init_scale/√fan_in`.
    pub init_scale: f64,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, n_outputs: usize, init_seed: u64) -> Self {
        ModelSpec {
            kind: ModelKind::Linear,
            input_dim,
            hidden_dim: 0,
            n_outputs,
            init_seed,
            init_scale: DEFAULT_INIT_SCALE,
        }
    }

    pub fn mlp1(input_dim: usize, hidden_dim: usize, n_outputs: usize, init_seed: u64) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp1,
            hidden_dim,
            ..Self::linear(input_dim, n_outputs, init_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_outputs == 0 {
            return Err(Error::Domain("model dimensions must be at least 1".into()));
        }
        if self.kind == ModelKind::Mlp1 && self.hidden_dim == 0 {
            return Err(Error::Domain("hidden_dim must be at least 1".into()));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::Domain(format!(
                "init_scale must be non-negative, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        match self.kind {
            ModelKind::Linear => self.n_outputs * self.input_dim,
            ModelKind::Mlp1 => self.hidden_dim * (self.input_dim + self.n_outputs),
        }
    }

    fn check(&self, w: &[f64], x: &Features) -> Result<()> {
        self.validate()?;
        if w.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "{} weights for a model with {} parameters",
                w.len(),
                self.n_params()
            )));
        }
        if x.dim != self.input_dim {
            return Err(Error::Dimension(format!(
                "features have dimension {}, model expects {}",
                x.dim, self.input_dim
            )));
        }
        Ok(())
    }
}

pub fn init_weights(spec: &ModelSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let mut draw = |count: usize, fan_in: usize| -> Vec<f64> {
        let std = spec.init_scale / (fan_in as f64).sqrt();
        (0..count)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                std * z
            })
            .collect()
    };
    Ok(match spec.kind {
        ModelKind::Linear => draw(spec.n_params(), spec.input_dim),
        ModelKind::Mlp1 => {
            let mut w = draw(spec.hidden_dim * spec.input_dim, spec.input_dim);
            w.extend(draw(spec.n_outputs * spec.hidden_dim, spec.hidden_dim));
            w
        }
    })
}

fn hidden(spec: &ModelSpec, w: &[f64], x: &[f64]) -> Vec<f64> {
    let d = spec.input_dim;
    (0..spec.hidden_dim)
        .map(|k| {
            let row = &w[k * d..(k + 1) * d];
            row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().tanh()
        })
        .collect()
}

fn sample_outputs(spec: &ModelSpec, w: &[f64], x: &[f64], out: &mut [f64]) {
    match spec.kind {
        ModelKind::Linear => {
            let d = spec.input_dim;
            for (j, o) in out.iter_mut().enumerate() {
                *o = w[j * d..(j + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
        ModelKind::Mlp1 => {
            let h = hidden(spec, w, x);
            let w2 = &w[spec.hidden_dim * spec.input_dim..];
            let hd = spec.hidden_dim;
            for (j, o) in out.iter_mut().enumerate() {
                *o = w2[j * hd..(j + 1) * hd].iter().zip(&h).map(|(a, b)| a * b).sum();
            }
        }
    }
}

pub fn model_outputs(spec: &ModelSpec, w: &[f64], x: &Features) -> Result<OutputVector> {
    spec.check(w, x)?;
    let c = spec.n_outputs;
    let mut values = vec![0.0; x.n_samples * c];
    for i in 0..x.n_samples {
        sample_outputs(spec, w, x.row(i), &mut values[i * c..(i + 1) * c]);
    }
    OutputVector::new(values, x.n_samples, c)
}

/// Adds `Σ_j r[j]·∇_w f_j(x)` into `acc`.
fn accumulate_vjp(spec: &ModelSpec, w: &[f64], x: &[f64], r: &[f64], acc: &mut [f64]) {
    let d = spec.input_dim;
    match spec.kind {
        ModelKind::Linear => {
            for (j, &rj) in r.iter().enumerate() {
                if rj == 0.0 {
                    continue;
                }
                for (a, xv) in acc[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *a += rj * xv;
                }
            }
        }
        ModelKind::Mlp1 => {
            let hd = spec.hidden_dim;
            let h = hidden(spec, w, x);
            let off = hd * d;
            let w2 = &w[off..];
            for (j, &rj) in r.iter().enumerate() {
                for (a, hv) in acc[off + j * hd..off + (j + 1) * hd].iter_mut().zip(&h) {
                    *a += rj * hv;
                }
            }
            for k in 0..hd {
                let back: f64 = r.iter().enumerate().map(|(j, rj)| rj * w2[j * hd + k]).sum();
                let delta = back * (1.0 - h[k] * h[k]);
                if delta == 0.0 {
                    continue;
                }
                for (a, xv) in acc[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *a += delta * xv;
                }
            }
        }
    }
}

/// Analytic per-sample, per-output parameter gradients; row `i·C + j` is
/// `∇_w f_j(xᵢ)`.
pub fn model_gradients(spec: &ModelSpec, w: &[f64], x: &Features) -> Result<GradientMatrix> {
    spec.check(w, x)?;
    let (c, p) = (spec.n_outputs, spec.n_params());
    let mut data = vec![0.0; x.n_samples * c * p];
    let mut unit = vec![0.0; c];
    for i in 0..x.n_samples {
        for j in 0..c {
            unit[j] = 1.0;
            let r = i * c + j;
            accumulate_vjp(spec, w, x.row(i), &unit, &mut data[r * p..(r + 1) * p]);
            unit[j] = 0.0;
        }
    }
    GradientMatrix::new(x.n_samples, c, p, data, Dtype::F64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Gd,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    WithReplacement,
    /// Test mode; indices are sorted, so a batch of all N samples sums in
    /// the same order as full-batch descent.
    WithoutReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub loss_curve: LossCurve,
    pub error_curve: Option<LossCurve>,
    pub final_weights: Vec<f64>,
    /// `‖w_t − w₀‖` for t = 0..=T.
    pub weight_displacement: Vec<f64>,
}

fn check_train_config(cfg: &RunConfig) -> Result<()> {
    // a zero learning rate is allowed here: it gives flat reference curves
    if !(cfg.learning_rate >= 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::Domain(format!(
            "learning rate must be non-negative, got {}",
            cfg.learning_rate
        )));
    }
    RunConfig {
        learning_rate: 1.0,
        ..cfg.clone()
    }
    .validate()
}

/// Outputs at the current weights; the linearized model evaluates its
/// first-order expansion instead of the network.
enum Evaluator<'a> {
    Exact,
    Linearized {
        w0: &'a [f64],
        f0: OutputVector,
        j0: GradientMatrix,
    },
}

impl Evaluator<'_> {
    fn outputs(&self, spec: &ModelSpec, w: &[f64], x: &Features) -> Result<OutputVector> {
        match self {
            Evaluator::Exact => model_outputs(spec, w, x),
            Evaluator::Linearized { w0, f0, j0 } => {
                let dw: Vec<f64> = w.iter().zip(w0.iter()).map(|(a, b)| a - b).collect();
                let mut out = f0.clone();
                for (r, o) in out.values.iter_mut().enumerate() {
                    *o += j0.row(r).iter().zip(&dw).map(|(a, b)| a * b).sum::<f64>();
                }
                Ok(out)
            }
        }
    }

    fn vjp(&self, spec: &ModelSpec, w: &[f64], x: &Features, i: usize, r: &[f64], acc: &mut [f64]) {
        match self {
            Evaluator::Exact => accumulate_vjp(spec, w, x.row(i), r, acc),
            Evaluator::Linearized { j0, .. } => {
                let c = spec.n_outputs;
                for (j, &rj) in r.iter().enumerate() {
                    for (a, g) in acc.iter_mut().zip(j0.row(i * c + j)) {
                        *a += rj * g;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    eval: &Evaluator,
    spec: &ModelSpec,
    w0: &[f64],
    x: &Features,
    y: &LabelSet,
    cfg: &RunConfig,
    mode: TrainMode,
    sampling: Sampling,
    seed: u64,
) -> Result<TrainRun> {
    check_train_config(cfg)?;
    spec.check(w0, x)?;
    let n = x.n_samples;
    if y.n_samples() != n || y.n_outputs() != spec.n_outputs {
        return Err(Error::Dimension(format!(
            "labels are {} x {}, model sees {} x {}",
            y.n_samples(),
            y.n_outputs(),
            n,
            spec.n_outputs
        )));
    }
    let batch = match (mode, cfg.batch_size) {
        (TrainMode::Gd, _) | (TrainMode::Sgd, BatchSize::Full) => None,
        (TrainMode::Sgd, BatchSize::Finite(b)) => {
            if sampling == Sampling::WithoutReplacement && b > n {
                return Err(Error::Domain(format!(
                    "cannot draw {b} of {n} samples without replacement"
                )));
            }
            Some(b)
        }
    };
    let has_classes = y.class_indices().is_some();
    let c = spec.n_outputs;
    let p = w0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = w0.to_vec();
    let mut velocity = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut losses = Vec::with_capacity(cfg.total_steps + 1);
    let mut errors = Vec::with_capacity(cfg.total_steps + 1);
    let mut displacement = Vec::with_capacity(cfg.total_steps + 1);
    for t in 0..=cfg.total_steps {
        let f = eval.outputs(spec, &w, x)?;
        let loss = loss_value(&f, y, cfg.loss_kind)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { step: t, loss });
        }
        losses.push(loss);
        if has_classes {
            errors.push(error_rate(&f, y)?);
        }
        displacement.push(
            w.iter()
                .zip(w0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        );
        if t == cfg.total_steps {
            break;
        }
        let r = loss_grad_outputs(&f, y, cfg.loss_kind)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let indices: Vec<usize> = match batch {
            None => (0..n).collect(),
            Some(b) => match sampling {
                Sampling::WithReplacement => (0..b).map(|_| rng.random_range(0..n)).collect(),
                Sampling::WithoutReplacement => {
                    let mut idx = sample(&mut rng, n, b).into_vec();
                    idx.sort_unstable();
                    idx
                }
            },
        };
        for &i in &indices {
            eval.vjp(spec, &w, x, i, &r[i * c..(i + 1) * c], &mut grad);
        }
        // unbiased estimate of the full-data gradient
        let scale = n as f64 / indices.len() as f64;
        for k in 0..p {
            velocity[k] = cfg.momentum * velocity[k] + scale * grad[k];
            w[k] -= cfg.learning_rate * velocity[k];
        }
    }
    Ok(TrainRun {
        loss_curve: LossCurve::new(losses, CurveKind::Loss),
        error_curve: has_classes.then(|| LossCurve::new(errors, CurveKind::Error)),
        final_weights: w,
        weight_displacement: displacement,
    })
}

/// GD or SGD with heavy-ball momentum: `a ← m·a + g`, `w ← w − η·a`,
/// `a₀ = 0`. SGD batches are drawn with replacement and the batch gradient is
/// scaled by `N/|B|`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    spec: &ModelSpec,
    w0: &[f64],
    x: &Features,
    y: &LabelSet,
    cfg: &RunConfig,
    mode: TrainMode,
    seed: u64,
) -> Result<TrainRun> {
    train_with_sampling(spec, w0, x, y, cfg, mode, Sampling::WithReplacement, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn train_with_sampling(
    spec: &ModelSpec,
    w0: &[f64],
    x: &Features,
    y: &LabelSet,
    cfg: &RunConfig,
    mode: TrainMode,
    sampling: Sampling,
    seed: u64,
) -> Result<TrainRun> {
    run(&Evaluator::Exact, spec, w0, x, y, cfg, mode, sampling, seed)
}

/// The same optimizer on `f₀ + J₀(w − w₀)`. A linear model is its own
/// expansion, so LINEAR runs [`train`] itself.
pub fn linearized_train(
    spec: &ModelSpec,
    w0: &[f64],
    x: &Features,
    y: &LabelSet,
    cfg: &RunConfig,
    mode: TrainMode,
    seed: u64,
) -> Result<TrainRun> {
    if spec.kind == ModelKind::Linear {
        return train(spec, w0, x, y, cfg, mode, seed);
    }
    let eval = Evaluator::Linearized {
        w0,
        f0: model_outputs(spec, w0, x)?,
        j0: model_gradients(spec, w0, x)?,
    };
    run(&eval, spec, w0, x, y, cfg, mode, Sampling::WithReplacement, seed)
}
