//! Function-space dynamics of the linearized model.
//!
//! One unit of time is one optimizer step. The drift is `−η̃ Θ ∇_f L` with
//! η̃ the effective learning rate.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::effective_lr;
use crate::ingest::GradientMatrix;
use crate::kernel::{residual_projections, EigenSystem, KernelMatrix, ResidualProjections};
use crate::loss::{error_rate, loss_grad_outputs, loss_value};
use crate::types::{BatchSize, CurveKind, LabelSet, LossCurve, LossKind, OutputVector, RunConfig};

/// Losses above this (or non-finite) abort a solve.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub outputs: Vec<OutputVector>,
    pub loss: LossCurve,
    /// Present whenever the labels define a class per sample.
    pub error: Option<LossCurve>,
}

impl Trajectory {
    pub fn from_outputs(outputs: Vec<OutputVector>, y: &LabelSet, kind: LossKind) -> Result<Self> {
        let loss = outputs
            .iter()
            .map(|f| loss_value(f, y, kind))
            .collect::<Result<Vec<_>>>()?;
        let error = if y.class_indices().is_some() {
            Some(LossCurve::new(
                outputs.iter().map(|f| error_rate(f, y)).collect::<Result<_>>()?,
                CurveKind::Error,
            ))
        } else {
            None
        };
        Ok(Trajectory {
            outputs,
            loss: LossCurve::new(loss, CurveKind::Loss),
            error,
        })
    }

    pub fn steps(&self) -> usize {
        self.loss.steps()
    }

    pub fn curve(&self, kind: CurveKind) -> Option<&LossCurve> {
        match kind {
            CurveKind::Loss => Some(&self.loss),
            CurveKind::Error => self.error.as_ref(),
        }
    }

    /// `step,loss,error` table; the error column is empty when undefined.
    pub fn to_csv(&self) -> String {
        curves_to_csv(&self.loss, self.error.as_ref())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn curves_to_csv(loss: &LossCurve, error: Option<&LossCurve>) -> String {
    let mut s = String::from("step,loss,error\n");
    for (t, l) in loss.values.iter().enumerate() {
        match error {
            Some(e) => writeln!(s, "{t},{l:?},{:?}", e.values[t]).unwrap(),
            None => writeln!(s, "{t},{l:?},").unwrap(),
        }
    }
    s
}

/// Reads a `step,loss,error` table back. The error curve is `None` when the
/// column is empty on every row; a partially filled column is rejected.
pub fn read_curves_csv(path: impl AsRef<Path>) -> Result<(LossCurve, Option<LossCurve>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "step,loss,error" => {}
        _ => return Err(parse(1, "expected header step,loss,error".into())),
    }
    let (mut loss, mut error) = (Vec::new(), Vec::new());
    let mut empty_errors = 0;
    for (no, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(parse(no + 1, format!("expected 3 fields, found {}", f.len())));
        }
        if f[0].parse::<usize>().ok() != Some(loss.len()) {
            return Err(parse(no + 1, format!("expected step {}", loss.len())));
        }
        loss.push(f[1].parse::<f64>().map_err(|_| parse(no + 1, format!("bad loss {:?}", f[1])))?);
        if f[2].is_empty() {
            empty_errors += 1;
        } else {
            error.push(f[2].parse::<f64>().map_err(|_| parse(no + 1, format!("bad error {:?}", f[2])))?);
        }
    }
    if loss.is_empty() {
        return Err(parse(2, "no rows".into()));
    }
    let error = match (empty_errors, error.len()) {
        (0, _) => Some(LossCurve::new(error, CurveKind::Error)),
        (_, 0) => None,
        _ => return Err(parse(0, "error column is only partly filled".into())),
    };
    Ok((LossCurve::new(loss, CurveKind::Loss), error))
}

/// Diagonal SGD noise model estimated at initialization, in the coordinates
/// of the (projected) gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_diag: Vec<f64>,
    /// `‖∇_f L(f₀)‖₂`, the reference for rescaling the noise over time.
    pub g0_norm: f64,
}

fn check_shapes(k: &KernelMatrix, f0: &OutputVector, y: &LabelSet) -> Result<()> {
    y.check_compatible(f0)?;
    if k.size() != f0.len() {
        return Err(Error::Dimension(format!(
            "kernel of size {} against {} stacked outputs",
            k.size(),
            f0.len()
        )));
    }
    Ok(())
}

fn check_loss(step: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(Error::Divergence { step, loss });
    }
    Ok(())
}

/// Right-hand side `−η̃ Θ ∇_f L(f)` written into `out`.
fn drift(
    k: &KernelMatrix,
    f: &[f64],
    y: &LabelSet,
    kind: LossKind,
    eta: f64,
    shape: (usize, usize),
    out: &mut [f64],
) -> Result<()> {
    let fv = OutputVector {
        values: f.to_vec(),
        n_samples: shape.0,
        n_outputs: shape.1,
    };
    let g = loss_grad_outputs(&fv, y, kind)?;
    k.apply(&g, out);
    for v in out.iter_mut() {
        *v *= -eta;
    }
    Ok(())
}

fn rk4(
    k: &KernelMatrix,
    f0: &OutputVector,
    y: &LabelSet,
    kind: LossKind,
    eta: f64,
    steps: usize,
    n_sub: usize,
) -> Result<Vec<OutputVector>> {
    let n = f0.len();
    let shape = (f0.n_samples, f0.n_outputs);
    let h = 1.0 / n_sub as f64;
    let mut f = f0.values.clone();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut out = Vec::with_capacity(steps + 1);
    out.push(f0.clone());
    for step in 1..=steps {
        for _ in 0..n_sub {
            drift(k, &f, y, kind, eta, shape, &mut k1)?;
            for i in 0..n {
                tmp[i] = f[i] + 0.5 * h * k1[i];
            }
            drift(k, &tmp, y, kind, eta, shape, &mut k2)?;
            for i in 0..n {
                tmp[i] = f[i] + 0.5 * h * k2[i];
            }
            drift(k, &tmp, y, kind, eta, shape, &mut k3)?;
            for i in 0..n {
                tmp[i] = f[i] + h * k3[i];
            }
            drift(k, &tmp, y, kind, eta, shape, &mut k4)?;
            for i in 0..n {
                f[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let fv = OutputVector::new(f.clone(), shape.0, shape.1)?;
        check_loss(step, loss_value(&fv, y, kind)?)?;
        out.push(fv);
    }
    Ok(out)
}

pub const DEFAULT_SUBSTEPS: usize = 4;
pub const MAX_SUBSTEPS: usize = 64;
/// Successive refinements must agree on the final loss to this fraction
/// of the initial loss.
pub const REFINE_TOL: f64 = 1e-8;

fn require_full_batch(cfg: &RunConfig, n: usize) -> Result<()> {
    if !cfg.batch_size.is_full_for(n) {
        return Err(Error::Usage(format!(
            "deterministic solve needs full-batch training, got {:?} for {n} samples",
            cfg.batch_size
        )));
    }
    Ok(())
}

/// Integrates the gradient flow with RK4, doubling the substep count from
/// [`DEFAULT_SUBSTEPS`] until the final loss settles or [`MAX_SUBSTEPS`] is
/// reached.
pub fn solve_ode(
    k: &KernelMatrix,
    f0: &OutputVector,
    y: &LabelSet,
    cfg: &RunConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_shapes(k, f0, y)?;
    require_full_batch(cfg, f0.n_samples)?;
    let eta = effective_lr(cfg.learning_rate, cfg.momentum)?;
    let l0 = loss_value(f0, y, cfg.loss_kind)?;
    check_loss(0, l0)?;
    let tol = REFINE_TOL * l0.max(f64::MIN_POSITIVE);

    let mut n_sub = DEFAULT_SUBSTEPS;
    let mut prev: Option<f64> = None;
    loop {
        match rk4(k, f0, y, cfg.loss_kind, eta, cfg.total_steps, n_sub) {
            Ok(outputs) => {
                let last = loss_value(outputs.last().unwrap(), y, cfg.loss_kind)?;
                let settled = matches!(prev, Some(l) if (l - last).abs() <= tol);
                if settled || n_sub >= MAX_SUBSTEPS {
                    if !settled {
                        log::warn!("RK4 refinement stopped at the {MAX_SUBSTEPS}-substep cap");
                    }
                    return Trajectory::from_outputs(outputs, y, cfg.loss_kind);
                }
                prev = Some(last);
            }
            // too coarse a step can blow up a stable flow; refine first
            Err(Error::Divergence { .. }) if n_sub < MAX_SUBSTEPS => prev = None,
            Err(e) => return Err(e),
        }
        n_sub *= 2;
    }
}

fn euler_maruyama(
    k: &KernelMatrix,
    noise: Option<(&GradientMatrix, &NoiseModel, f64)>,
    f0: &OutputVector,
    y: &LabelSet,
    cfg: &RunConfig,
    seed: u64,
) -> Result<Trajectory> {
    let eta = effective_lr(cfg.learning_rate, cfg.momentum)?;
    let n = f0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = f0.clone();
    check_loss(0, loss_value(&f, y, cfg.loss_kind)?)?;
    let mut theta_g = vec![0.0; n];
    let mut outputs = Vec::with_capacity(cfg.total_steps + 1);
    outputs.push(f.clone());
    let sqrt_sigma: Vec<f64> = noise
        .map(|(_, nm, _)| nm.sigma_diag.iter().map(|s| s.sqrt()).collect())
        .unwrap_or_default();
    let mut z = vec![0.0; sqrt_sigma.len()];
    for step in 1..=cfg.total_steps {
        let g = loss_grad_outputs(&f, y, cfg.loss_kind)?;
        k.apply(&g, &mut theta_g);
        for i in 0..n {
            f.values[i] -= eta * theta_g[i];
        }
        if let Some((gp, nm, scale)) = noise {
            let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = if nm.g0_norm > 0.0 { g_norm / nm.g0_norm } else { 0.0 };
            for (zd, s) in z.iter_mut().zip(&sqrt_sigma) {
                let e: f64 = StandardNormal.sample(&mut rng);
                *zd = s * e;
            }
            let coef = scale * r;
            if coef != 0.0 {
                for (i, fi) in f.values.iter_mut().enumerate() {
                    let w: f64 = gp.row(i).iter().zip(&z).map(|(a, b)| a * b).sum();
                    *fi += coef * w;
                }
            }
        }
        check_loss(step, loss_value(&f, y, cfg.loss_kind)?)?;
        outputs.push(f.clone());
    }
    Trajectory::from_outputs(outputs, y, cfg.loss_kind)
}

/// The ODE with one explicit Euler step per optimizer step. For a linear
/// model this is exactly full-batch gradient descent.
pub fn solve_ode_euler(
    k: &KernelMatrix,
    f0: &OutputVector,
    y: &LabelSet,
    cfg: &RunConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_shapes(k, f0, y)?;
    euler_maruyama(k, None, f0, y, cfg, 0)
}

/// Noise coefficient multiplying `r_t · Gp diag(σ)^{1/2} z` in the SDE step.
///
/// With the summed loss, a with-replacement batch gradient rescaled to be
/// unbiased is `(N/|B|)·Σ_b`, whose covariance is `N²/|B|` times the
/// per-sample covariance; hence `η̃·N/√|B|`. Momentum enters only via η̃.
pub fn sde_noise_scale(cfg: &RunConfig, n_samples: usize) -> Result<f64> {
    let eta = effective_lr(cfg.learning_rate, cfg.momentum)?;
    match cfg.batch_size {
        BatchSize::Finite(b) if b >= 1 => Ok(eta * n_samples as f64 / (b as f64).sqrt()),
        other => Err(Error::Usage(format!(
            "stochastic solve needs a finite batch size, got {other:?}"
        ))),
    }
}

/// Euler–Maruyama with Δt = 1, noise sampled in the projected coordinates.
pub fn solve_sde(
    k: &KernelMatrix,
    gp: &GradientMatrix,
    noise: &NoiseModel,
    f0: &OutputVector,
    y: &LabelSet,
    cfg: &RunConfig,
    seed: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_shapes(k, f0, y)?;
    let scale = sde_noise_scale(cfg, f0.n_samples)?;
    if !gp.is_projected() {
        return Err(Error::Usage(
            "the stochastic solve expects projected gradients".into(),
        ));
    }
    if gp.rows() != f0.len() {
        return Err(Error::Dimension(format!(
            "{} gradient rows against {} stacked outputs",
            gp.rows(),
            f0.len()
        )));
    }
    if noise.sigma_diag.len() != gp.cols() {
        return Err(Error::Dimension(format!(
            "noise model has {} coordinates, gradients have {}",
            noise.sigma_diag.len(),
            gp.cols()
        )));
    }
    euler_maruyama(k, Some((gp, noise, scale)), f0, y, cfg, seed)
}

/// Independent SDE replicates, one per seed, returned in seed order.
pub fn solve_sde_replicates(
    k: &KernelMatrix,
    gp: &GradientMatrix,
    noise: &NoiseModel,
    f0: &OutputVector,
    y: &LabelSet,
    cfg: &RunConfig,
    seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    seeds
        .par_iter()
        .map(|&s| solve_sde(k, gp, noise, f0, y, cfg, s))
        .collect()
}

/// Pointwise mean and (sample) standard deviation of equal-length curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub mean: LossCurve,
    pub std: Vec<f64>,
}

pub fn aggregate_curves(curves: &[&LossCurve]) -> Result<CurveStats> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Usage("no curves to aggregate".into()))?;
    let len = first.values.len();
    if curves.iter().any(|c| c.values.len() != len) {
        return Err(Error::Dimension("curves differ in length".into()));
    }
    let n = curves.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for t in 0..len {
        let m = curves.iter().map(|c| c.values[t]).sum::<f64>() / n;
        let var = if curves.len() > 1 {
            curves.iter().map(|c| (c.values[t] - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean[t] = m;
        std[t] = var.sqrt();
    }
    Ok(CurveStats {
        mean: LossCurve::new(mean, first.kind),
        std,
    })
}

/// Diagonal of the per-sample gradient covariance at initialization.
///
/// `hᵢ = Σ_j Gp[iC+j, :]·∇L[iC+j]` is sample i's weight-space loss gradient.
pub fn estimate_sigma_diag(
    gp: &GradientMatrix,
    f0: &OutputVector,
    y: &LabelSet,
    kind: LossKind,
) -> Result<NoiseModel> {
    if gp.rows() != f0.len() || gp.n_outputs() != f0.n_outputs {
        return Err(Error::Dimension(format!(
            "{} x {} gradient rows against {} x {} outputs",
            gp.n_samples(),
            gp.n_outputs(),
            f0.n_samples,
            f0.n_outputs
        )));
    }
    let grad = loss_grad_outputs(f0, y, kind)?;
    let (n, c, d) = (f0.n_samples, f0.n_outputs, gp.cols());
    if n == 1 {
        log::warn!("a single sample has no gradient variance; noise model is zero");
    }
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut h = vec![0.0; d];
    for i in 0..n {
        h.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..c {
            let r = i * c + j;
            let a = grad[r];
            for (hd, gd) in h.iter_mut().zip(gp.row(r)) {
                *hd += gd * a;
            }
        }
        for dd in 0..d {
            sum[dd] += h[dd];
            sum_sq[dd] += h[dd] * h[dd];
        }
    }
    let nf = n as f64;
    let sigma_diag = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| (q / nf - (s / nf).powi(2)).max(0.0))
        .collect();
    let g0_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(NoiseModel {
        sigma_diag,
        g0_norm,
    })
}

/// `L_t = Σₖ pₖ e^{−2η̃λₖt}` for t = 0..=steps.
pub fn closed_form_mse_curve(
    e: &EigenSystem,
    p: &ResidualProjections,
    eta: f64,
    steps: usize,
) -> LossCurve {
    closed_form_curve_from_spectrum(e.values(), &p.p, eta, steps)
}

/// The same sum on a bare spectrum, for extrapolated (λ̂, p̂).
pub(crate) fn closed_form_curve_from_spectrum(
    lambda: &[f64],
    p: &[f64],
    eta: f64,
    steps: usize,
) -> LossCurve {
    let values = (0..=steps)
        .map(|t| {
            lambda
                .iter()
                .zip(p)
                .map(|(l, pk)| pk * (-2.0 * eta * l * t as f64).exp())
                .sum()
        })
        .collect();
    LossCurve::new(values, CurveKind::Loss)
}

/// `f_t = 𝒴 − V e^{−η̃Λt} Vᵀ δy`, i.e. `(I − e^{−η̃Θt})𝒴 + e^{−η̃Θt}f₀`.
pub fn closed_form_mse_outputs(
    e: &EigenSystem,
    f0: &OutputVector,
    y: &LabelSet,
    eta: f64,
    t: f64,
) -> Result<OutputVector> {
    let rp = residual_projections(e, f0, y)?;
    let v = e.vectors();
    let mut out = y.dense_targets();
    for (k, &l) in e.values().iter().enumerate() {
        let col = v.column(k);
        let coef: f64 = col.iter().zip(&rp.delta_y).map(|(a, b)| a * b).sum::<f64>()
            * (-eta * l * t).exp();
        for (o, vi) in out.iter_mut().zip(col.iter()) {
            *o -= coef * vi;
        }
    }
    OutputVector::new(out, f0.n_samples, f0.n_outputs)
}
