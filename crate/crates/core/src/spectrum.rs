//! Power-law fits of the kernel spectrum and extrapolation of the loss curve
//! from a subset of N₀ samples to a dataset of N samples.
//!
//! Eigenvalues and residual projections are compared across sizes per
//! sample: both are divided by the dataset size before fitting and
//! multiplied back afterwards.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::closed_form_curve_from_spectrum;
use crate::error::{Error, Result};
use crate::estimator::effective_lr;
use crate::ingest::GradientMatrix;
use crate::kernel::{build_kernel, residual_projections, sym_eig};
use crate::types::{LabelSet, LossCurve, LossKind, OutputVector, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub c: f64,
    pub s: f64,
    /// Inclusive, 1-based.
    pub fit_range: (usize, usize),
    /// RMS residual of the log-log fit.
    pub residual: f64,
    /// Non-positive values skipped inside the range.
    pub excluded: usize,
}

impl PowerLawFit {
    pub fn eval(&self, k: usize) -> f64 {
        self.c * (k as f64).powf(-self.s)
    }
}

/// `(1, ⌊0.8·n⌋)`, but at least two points when there are two.
pub fn default_fit_range(n: usize) -> (usize, usize) {
    (1, ((n as f64 * 0.8) as usize).max(n.min(2)).max(1))
}

/// Least-squares line through `(log k, log value)` for k in the range.
pub fn fit_powerlaw(values: &[f64], range: (usize, usize)) -> Result<PowerLawFit> {
    let (lo, hi) = range;
    if lo < 1 || hi < lo || hi > values.len() {
        return Err(Error::Fit(format!(
            "fit range ({lo}, {hi}) outside 1..={}",
            values.len()
        )));
    }
    let mut pts = Vec::with_capacity(hi - lo + 1);
    let mut excluded = 0;
    for k in lo..=hi {
        let v = values[k - 1];
        if v > 0.0 && v.is_finite() {
            pts.push(((k as f64).ln(), v.ln()));
        } else {
            excluded += 1;
        }
    }
    if pts.len() < 2 {
        return Err(Error::Fit(format!(
            "{} usable points in ({lo}, {hi}), need 2",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(PowerLawFit {
        c: intercept.exp(),
        s: -slope,
        fit_range: range,
        residual,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationConfig {
    /// Flattening correction; the exponent becomes `−s + α(N₀/N − 1)`.
    pub alpha: f64,
    /// First index (1-based) of the projection tail.
    pub k0: usize,
    pub n_subset: usize,
    pub n_target: usize,
}

pub const DEFAULT_ALPHA: f64 = 0.15;
pub const DEFAULT_K0: usize = 100;

impl ExtrapolationConfig {
    pub fn new(n_subset: usize, n_target: usize) -> Self {
        ExtrapolationConfig {
            alpha: DEFAULT_ALPHA,
            k0: DEFAULT_K0,
            n_subset,
            n_target,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.k0 && self.k0 <= self.n_subset && self.n_subset <= self.n_target) {
            return Err(Error::Domain(format!(
                "need 1 <= k0 <= N0 <= N, got k0={}, N0={}, N={}",
                self.k0, self.n_subset, self.n_target
            )));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Domain("alpha must be finite".into()));
        }
        Ok(())
    }

    pub fn exponent(&self, fit: &PowerLawFit) -> f64 {
        -fit.s + self.alpha * (self.n_subset as f64 / self.n_target as f64 - 1.0)
    }
}

/// `λ̂ₖ = c·k^{−s+α(N₀/N−1)}` for k = 1..=len, in the units of the fit.
pub fn extrapolate_eigs(fit: &PowerLawFit, cfg: &ExtrapolationConfig, len: usize) -> Vec<f64> {
    let e = cfg.exponent(fit);
    (1..=len).map(|k| fit.c * (k as f64).powf(e)).collect()
}

const B_LO: f64 = 1e-6;
const B_HI: f64 = 20.0;

/// Keeps `p′ₖ` for `k < k0` and continues with a tail `a·k^{−b}` from `k0`
/// to `len`, where `a·k0^{−b} = p′_{k0}` and the total is `target_norm_sq`.
pub fn extrapolate_projections(
    p_subset: &[f64],
    k0: usize,
    target_norm_sq: f64,
    len: usize,
) -> Result<Vec<f64>> {
    if k0 < 1 || k0 > p_subset.len() || k0 > len {
        return Err(Error::Domain(format!(
            "k0={k0} must lie in 1..={}",
            p_subset.len().min(len)
        )));
    }
    let head: f64 = p_subset[..k0 - 1].iter().sum();
    let tail_target = target_norm_sq - head;
    if !(tail_target > 0.0) {
        return Err(Error::Extrapolation(format!(
            "the first {} projections already carry {head:e}, target is {target_norm_sq:e}",
            k0 - 1
        )));
    }
    let anchor = p_subset[k0 - 1];
    if k0 == len {
        // a one-point tail has no free exponent; the sum fixes it
        if (tail_target - anchor).abs() > 1e-8 * target_norm_sq {
            return Err(Error::Extrapolation(format!(
                "single tail point {anchor:e} cannot carry the remaining mass {tail_target:e}"
            )));
        }
        let mut out = p_subset[..k0 - 1].to_vec();
        out.push(tail_target);
        return Ok(out);
    }
    if !(anchor > 0.0) {
        return Err(Error::Extrapolation(format!(
            "projection at k0={k0} is {anchor:e}; a power-law tail needs it positive"
        )));
    }
    // Σ_{k=k0}^{len} p′_{k0}·(k/k0)^{−b}, decreasing in b
    let tail_sum = |b: f64| -> f64 {
        (k0..=len)
            .map(|k| anchor * (k as f64 / k0 as f64).powf(-b))
            .sum()
    };
    let (s_lo, s_hi) = (tail_sum(B_LO), tail_sum(B_HI));
    if tail_target > s_lo || tail_target < s_hi {
        return Err(Error::Extrapolation(format!(
            "tail mass {tail_target:e} is outside [{s_hi:e}, {s_lo:e}], \
             reachable with exponents in [{B_LO}, {B_HI}]"
        )));
    }
    let (mut lo, mut hi) = (B_LO, B_HI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = tail_sum(mid);
        if s > tail_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let b = 0.5 * (lo + hi);
    let a = anchor * (k0 as f64).powf(b);
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&p_subset[..k0 - 1]);
    out.push(anchor);
    out.extend((k0 + 1..=len).map(|k| a * (k as f64).powf(-b)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargerDatasetPrediction {
    /// Predicted loss on the large set, divided by its sample count.
    pub curve: LossCurve,
    /// Fit on the per-sample eigenvalues of the subset.
    pub fit: PowerLawFit,
    pub lambda_subset: Vec<f64>,
    pub p_subset: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
}

impl LargerDatasetPrediction {
    /// `k,lambda,lambda_hat,p,p_hat`; subset columns are blank past N₀·C.
    pub fn spectrum_csv(&self) -> String {
        let mut s = String::from("k,lambda,lambda_hat,p,p_hat\n");
        let cell = |v: Option<&f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for k in 0..self.lambda_hat.len() {
            writeln!(
                s,
                "{},{},{:?},{},{:?}",
                k + 1,
                cell(self.lambda_subset.get(k)),
                self.lambda_hat[k],
                cell(self.p_subset.get(k)),
                self.p_hat[k]
            )
            .unwrap();
        }
        s
    }
}

/// Subset gradients → kernel → spectrum fit → extrapolated (λ̂, p̂) →
/// closed-form loss curve on the large set.
pub fn predict_curve_larger_dataset(
    g_subset: &GradientMatrix,
    f0_subset: &OutputVector,
    y_subset: &LabelSet,
    target_norm_sq: f64,
    cfg: &ExtrapolationConfig,
    run: &RunConfig,
) -> Result<LargerDatasetPrediction> {
    if run.loss_kind != LossKind::Mse {
        return Err(Error::Usage(
            "extrapolation relies on the squared-error closed form".into(),
        ));
    }
    cfg.validate()?;
    run.validate()?;
    if cfg.n_subset != f0_subset.n_samples {
        return Err(Error::Dimension(format!(
            "subset has {} samples, config says {}",
            f0_subset.n_samples, cfg.n_subset
        )));
    }
    if g_subset.n_samples() != f0_subset.n_samples || g_subset.n_outputs() != f0_subset.n_outputs {
        return Err(Error::Dimension("gradients and outputs disagree in shape".into()));
    }
    if !(target_norm_sq > 0.0) {
        return Err(Error::Domain(format!(
            "target residual norm must be positive, got {target_norm_sq}"
        )));
    }
    let eta = effective_lr(run.learning_rate, run.momentum)?;
    let c = f0_subset.n_outputs;
    let (n0, n) = (cfg.n_subset as f64, cfg.n_target as f64);

    let e = sym_eig(&build_kernel(g_subset))?;
    let rp = residual_projections(&e, f0_subset, y_subset)?;
    let per_sample: Vec<f64> = e.values().iter().map(|l| l / n0).collect();
    let fit = fit_powerlaw(&per_sample, default_fit_range(per_sample.len()))?;

    let len = cfg.n_target * c;
    let lambda_hat: Vec<f64> = extrapolate_eigs(&fit, cfg, len).iter().map(|l| l * n).collect();
    let head: Vec<f64> = rp.p.iter().map(|p| p * n / n0).collect();
    let p_hat = extrapolate_projections(&head, cfg.k0, target_norm_sq, len)?;

    let mut curve = closed_form_curve_from_spectrum(&lambda_hat, &p_hat, eta, run.total_steps);
    for v in &mut curve.values {
        *v /= n;
    }
    Ok(LargerDatasetPrediction {
        curve,
        fit,
        lambda_subset: e.values().to_vec(),
        p_subset: rp.p,
        lambda_hat,
        p_hat,
    })
}
