//! Training-time estimation: effective learning rate, smoothing, the
//! ε-training-time, and the end-to-end prediction driver.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    aggregate_curves, closed_form_mse_outputs, estimate_sigma_diag, solve_ode,
    solve_sde_replicates, Trajectory,
};
use crate::error::{Error, Result};
use crate::ingest::GradientMatrix;
use crate::kernel::{build_kernel, sym_eig};
use crate::projection::{project_gradients, ProjectionSpec};
use crate::types::{CurveKind, LabelSet, LossCurve, LossKind, OutputVector, RunConfig};

pub fn effective_lr(eta: f64, momentum: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Domain(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    Ok(eta / (1.0 - momentum))
}

/// Centered moving average; near the ends the window is clipped to the
/// available points.
pub fn smooth_curve(curve: &LossCurve, half_window: usize) -> LossCurve {
    if half_window == 0 {
        return curve.clone();
    }
    let v = &curve.values;
    let n = v.len();
    let values = (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half_window);
            let hi = (t + half_window + 1).min(n);
            // offsets from the first value keep constant curves exact
            let base = v[lo];
            base + v[lo..hi].iter().map(|x| x - base).sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    LossCurve::new(values, curve.kind)
}

/// `min{t : |curve[t] − curve[T]| < ε}`.
pub fn epsilon_training_time(curve: &LossCurve, epsilon: f64) -> usize {
    let last = curve.last();
    curve
        .values
        .iter()
        .position(|v| (v - last).abs() < epsilon)
        .unwrap_or(curve.steps())
}

/// A convergence threshold, either in curve units or as a fraction of the
/// curve's range `|curve[0] − curve[T]|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Absolute(f64),
    RangeFraction(f64),
}

impl Threshold {
    /// The threshold in curve units. A zero range gives the smallest positive
    /// ε, so only points equal to the final value qualify.
    pub fn resolve(&self, curve: &LossCurve) -> f64 {
        match *self {
            Threshold::Absolute(e) => e,
            Threshold::RangeFraction(p) => {
                let e = p * (curve.first() - curve.last()).abs();
                if e > 0.0 {
                    e
                } else {
                    f64::MIN_POSITIVE
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            Threshold::Absolute(e) | Threshold::RangeFraction(e) => e,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("threshold must be positive, got {v}")));
        }
        Ok(())
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Absolute(e) => write!(f, "{e}"),
            Threshold::RangeFraction(p) => write!(f, "{}%", p * 100.0),
        }
    }
}

impl FromStr for Threshold {
    type Err = Error;

    /// `"0.05"` is absolute, `"10%"` is a fraction of the range.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Usage(format!("cannot parse threshold {s:?}"));
        let t = match s.strip_suffix('%') {
            Some(pct) => Threshold::RangeFraction(pct.trim().parse::<f64>().map_err(|_| bad())? / 100.0),
            None => Threshold::Absolute(s.parse().map_err(|_| bad())?),
        };
        t.validate()?;
        Ok(t)
    }
}

pub fn training_time(curve: &LossCurve, threshold: Threshold) -> usize {
    epsilon_training_time(curve, threshold.resolve(curve))
}

/// Default smoothing half-window for stochastic curves.
pub const STOCHASTIC_HALF_WINDOW: usize = 2;

/// Gradient widths up to this are fed to the stochastic solver unprojected.
pub const MAX_UNPROJECTED_DIM: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOptions {
    /// Moving-average half-window; `None` picks 0 for the ODE and
    /// [`STOCHASTIC_HALF_WINDOW`] for the SDE.
    pub half_window: Option<usize>,
    pub curve_kind: CurveKind,
    /// `None` uses the run's absolute ε.
    pub threshold: Option<Threshold>,
    /// Applied to unprojected gradients before anything else.
    pub projection: Option<ProjectionSpec>,
    /// SDE replicate seeds; empty means the run seed alone. Replicate curves
    /// are averaged.
    pub seeds: Vec<u64>,
    /// Evaluate the squared-error closed form instead of integrating.
    pub closed_form: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            half_window: None,
            curve_kind: CurveKind::Loss,
            threshold: None,
            projection: None,
            seeds: Vec::new(),
            closed_form: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Ode,
    Sde,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTReport {
    pub t_hat_epsilon: usize,
    /// ε in curve units.
    pub epsilon: f64,
    pub threshold: Threshold,
    pub curve_kind: CurveKind,
    pub initial_value: f64,
    pub final_value: f64,
    pub smoothed: bool,
    pub half_window: usize,
    pub solver: Solver,
    pub effective_lr: f64,
    pub n_samples: usize,
    pub n_outputs: usize,
    pub gradient_dim: usize,
    pub projected: bool,
    pub seeds: Vec<u64>,
    pub config: RunConfig,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub report: TTReport,
    /// The (first replicate's) trajectory.
    pub trajectory: Trajectory,
    /// Curve the threshold was applied to: replicate mean, then smoothed.
    pub curve: LossCurve,
    /// Pointwise replicate standard deviation, SDE with several seeds only.
    pub curve_std: Option<Vec<f64>>,
}

/// Predicts the training time: ODE for full batches, SDE otherwise; then
/// smooth the chosen curve and read off T̂_ε.
pub fn predict_training_time(
    g: &GradientMatrix,
    f0: &OutputVector,
    y: &LabelSet,
    cfg: &RunConfig,
    opts: &PredictOptions,
) -> Result<Prediction> {
    cfg.validate()?;
    let threshold = opts.threshold.unwrap_or(Threshold::Absolute(cfg.epsilon));
    threshold.validate()?;
    y.check_compatible(f0)?;
    if g.n_samples() != f0.n_samples || g.n_outputs() != f0.n_outputs {
        return Err(Error::Dimension(format!(
            "gradients cover {} x {} outputs, initial outputs are {} x {}",
            g.n_samples(),
            g.n_outputs(),
            f0.n_samples,
            f0.n_outputs
        )));
    }
    let eta = effective_lr(cfg.learning_rate, cfg.momentum)?;
    let projected;
    let g = match &opts.projection {
        Some(spec) if !g.is_projected() => {
            projected = project_gradients(g, spec)?;
            &projected
        }
        _ => g,
    };
    let k = build_kernel(g);

    let deterministic = cfg.batch_size.is_full_for(f0.n_samples);
    let seeds = if deterministic {
        Vec::new()
    } else if opts.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        opts.seeds.clone()
    };
    if opts.closed_form {
        if cfg.loss_kind != LossKind::Mse {
            return Err(Error::Usage("cross-entropy has no closed-form solution".into()));
        }
        if !deterministic {
            return Err(Error::Usage("the closed form covers full-batch descent only".into()));
        }
    }
    let (trajectory, raw, curve_std) = if opts.closed_form {
        let e = sym_eig(&k)?;
        let targets = LabelSet::regression(y.dense_targets(), f0.n_samples, f0.n_outputs)?;
        let outputs = (0..=cfg.total_steps)
            .map(|t| closed_form_mse_outputs(&e, f0, &targets, eta, t as f64))
            .collect::<Result<Vec<_>>>()?;
        let tr = Trajectory::from_outputs(outputs, y, cfg.loss_kind)?;
        let c = pick(&tr, opts.curve_kind)?.clone();
        (tr, c, None)
    } else if deterministic {
        let tr = solve_ode(&k, f0, y, cfg)?;
        let c = pick(&tr, opts.curve_kind)?.clone();
        (tr, c, None)
    } else {
        let passthrough;
        let gp = if g.is_projected() {
            g
        } else if g.cols() <= MAX_UNPROJECTED_DIM {
            passthrough = g.clone().with_projected(true);
            &passthrough
        } else {
            return Err(Error::Resource(format!(
                "stochastic prediction on {} unprojected gradient columns; \
                 project the gradients first",
                g.cols()
            )));
        };
        let noise = estimate_sigma_diag(gp, f0, y, cfg.loss_kind)?;
        let mut reps = solve_sde_replicates(&k, gp, &noise, f0, y, cfg, &seeds)?;
        let curves = reps
            .iter()
            .map(|t| pick(t, opts.curve_kind))
            .collect::<Result<Vec<_>>>()?;
        let stats = aggregate_curves(&curves)?;
        let std = (reps.len() > 1).then_some(stats.std);
        (reps.swap_remove(0), stats.mean, std)
    };

    let half_window = opts.half_window.unwrap_or(if deterministic {
        0
    } else {
        STOCHASTIC_HALF_WINDOW
    });
    let curve = smooth_curve(&raw, half_window);
    let epsilon = threshold.resolve(&curve);
    let report = TTReport {
        t_hat_epsilon: epsilon_training_time(&curve, epsilon),
        epsilon,
        threshold,
        curve_kind: opts.curve_kind,
        initial_value: curve.first(),
        final_value: curve.last(),
        smoothed: half_window > 0,
        half_window,
        solver: match (opts.closed_form, deterministic) {
            (true, _) => Solver::ClosedForm,
            (false, true) => Solver::Ode,
            (false, false) => Solver::Sde,
        },
        effective_lr: eta,
        n_samples: f0.n_samples,
        n_outputs: f0.n_outputs,
        gradient_dim: g.cols(),
        projected: g.is_projected(),
        seeds,
        config: cfg.clone(),
    };
    Ok(Prediction {
        report,
        trajectory,
        curve,
        curve_std,
    })
}

fn pick(tr: &Trajectory, kind: CurveKind) -> Result<&LossCurve> {
    tr.curve(kind).ok_or_else(|| {
        Error::Usage("error curve needs class labels, multi-output targets or ±1 targets".into())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtComparison {
    pub threshold: Threshold,
    pub epsilon_predicted: f64,
    pub epsilon_actual: f64,
    pub t_predicted: usize,
    pub t_actual: usize,
    pub abs_error: usize,
}

/// `|t_predicted − t_actual|` per threshold. Range fractions resolve against
/// each curve's own range.
pub fn compare_tt(
    predicted: &LossCurve,
    actual: &LossCurve,
    thresholds: &[Threshold],
) -> Result<Vec<TtComparison>> {
    if predicted.values.len() != actual.values.len() {
        return Err(Error::Dimension(format!(
            "predicted curve has {} points, actual has {}",
            predicted.values.len(),
            actual.values.len()
        )));
    }
    if predicted.values.is_empty() {
        return Err(Error::Usage("empty curves".into()));
    }
    thresholds
        .iter()
        .map(|&th| {
            th.validate()?;
            let (ep, ea) = (th.resolve(predicted), th.resolve(actual));
            let (tp, ta) = (
                epsilon_training_time(predicted, ep),
                epsilon_training_time(actual, ea),
            );
            Ok(TtComparison {
                threshold: th,
                epsilon_predicted: ep,
                epsilon_actual: ea,
                t_predicted: tp,
                t_actual: ta,
                abs_error: tp.abs_diff(ta),
            })
        })
        .collect()
}
