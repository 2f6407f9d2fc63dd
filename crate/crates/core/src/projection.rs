//! Random projection of gradient rows from D to D′ columns.
//!
//! The D′×D matrix R is never stored. It is generated in column blocks, each
//! from its own ChaCha stream keyed by `(seed, block)`, and multiplied into
//! the output as it goes, so the result does not depend on block scheduling.

use nalgebra::{DMatrix, DMatrixView};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::GradientMatrix;

pub const DEFAULT_PROJECTION_DIM: usize = 2000;
pub const DEFAULT_SPARSITY: f64 = 2.0 / 3.0;

const BLOCK_COLS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionScheme {
    Gaussian,
    SignSparse,
    /// Passthrough (needs D′ = D); for testing the surrounding plumbing.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
    pub scheme: ProjectionScheme,
    /// Probability of a zero entry (sign-sparse only).
    pub sparsity: f64,
}

impl ProjectionSpec {
    pub fn sign_sparse(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        ProjectionSpec {
            input_dim,
            output_dim,
            seed,
            scheme: ProjectionScheme::SignSparse,
            sparsity: DEFAULT_SPARSITY,
        }
    }

    pub fn gaussian(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        ProjectionSpec {
            scheme: ProjectionScheme::Gaussian,
            sparsity: 0.0,
            ..Self::sign_sparse(input_dim, output_dim, seed)
        }
    }

    pub fn identity(dim: usize) -> Self {
        ProjectionSpec {
            scheme: ProjectionScheme::Identity,
            sparsity: 0.0,
            ..Self::sign_sparse(dim, dim, 0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim < 1 || self.output_dim > self.input_dim {
            return Err(Error::Usage(format!(
                "projection dimension must lie in [1, {}], got {}",
                self.input_dim, self.output_dim
            )));
        }
        if self.scheme == ProjectionScheme::Identity && self.output_dim != self.input_dim {
            return Err(Error::Usage(
                "identity projection needs output_dim = input_dim".into(),
            ));
        }
        if self.scheme == ProjectionScheme::SignSparse && !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::Domain(format!(
                "sparsity must lie in [0, 1), got {}",
                self.sparsity
            )));
        }
        Ok(())
    }

    /// Column block `b` of R (unscaled by 1/√D′), column-major D′×width.
    fn block(&self, b: usize, width: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(b as u64);
        let rows = self.output_dim;
        match self.scheme {
            ProjectionScheme::Gaussian => {
                DMatrix::from_fn(rows, width, |_, _| StandardNormal.sample(&mut rng))
            }
            ProjectionScheme::SignSparse => {
                let scale = 1.0 / (1.0 - self.sparsity).sqrt();
                let zero = (self.sparsity * 4294967296.0) as u64;
                let neg = zero + ((1.0 - self.sparsity) * 0.5 * 4294967296.0) as u64;
                let mut m = DMatrix::zeros(rows, width);
                for v in m.iter_mut() {
                    let u = rng.next_u32() as u64;
                    if u >= zero {
                        *v = if u < neg { -scale } else { scale };
                    }
                }
                m
            }
            ProjectionScheme::Identity => unreachable!("identity has no random blocks"),
        }
    }
}

/// Maps each gradient row g to (1/√D′)·R g.
pub fn project_gradients(g: &GradientMatrix, spec: &ProjectionSpec) -> Result<GradientMatrix> {
    if g.is_projected() {
        return Err(Error::Usage("gradients are already projected".into()));
    }
    if g.cols() != spec.input_dim {
        return Err(Error::Dimension(format!(
            "gradients have {} columns but the projection expects {}",
            g.cols(),
            spec.input_dim
        )));
    }
    spec.validate()?;
    if spec.scheme == ProjectionScheme::Identity {
        return Ok(g.clone().with_projected(true));
    }
    let (rows, d) = (g.rows(), g.cols());
    let gt = DMatrixView::from_slice(g.data(), d, rows);
    // Pᵀ (D′×rows); its column-major storage is P in row-major order
    let mut pt = DMatrix::<f64>::zeros(spec.output_dim, rows);
    let mut start = 0;
    let mut b = 0;
    while start < d {
        let width = BLOCK_COLS.min(d - start);
        let r = spec.block(b, width);
        pt.gemm(1.0, &r, &gt.rows(start, width), 1.0);
        start += width;
        b += 1;
    }
    pt /= (spec.output_dim as f64).sqrt();
    Ok(GradientMatrix::new(
        g.n_samples(),
        g.n_outputs(),
        spec.output_dim,
        pt.as_slice().to_vec(),
        g.dtype(),
    )?
    .with_projected(true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionErrorReport {
    pub n_pairs: usize,
    /// `|⟨Pgᵢ,Pgⱼ⟩ − ⟨gᵢ,gⱼ⟩|`.
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    /// Absolute error divided by `‖gᵢ‖‖gⱼ‖`.
    pub mean_rel_error: f64,
    pub max_rel_error: f64,
}

/// Dot-product distortion on row pairs. Uses every pair `i ≤ j` when there
/// are at most `n_pairs` of them, otherwise a seeded sample.
pub fn projection_error_report(
    g: &GradientMatrix,
    spec: &ProjectionSpec,
    n_pairs: usize,
) -> Result<ProjectionErrorReport> {
    if n_pairs < 1 {
        return Err(Error::Usage("need at least one pair".into()));
    }
    if g.rows() == 0 {
        return Err(Error::Usage("no gradient rows to compare".into()));
    }
    let p = project_gradients(g, spec)?;
    let rows = g.rows();
    let all = rows * (rows + 1) / 2;
    let pairs: Vec<(usize, usize)> = if all <= n_pairs {
        (0..rows).flat_map(|i| (i..rows).map(move |j| (i, j))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_0a1c);
        (0..n_pairs)
            .map(|_| (rng.random_range(0..rows), rng.random_range(0..rows)))
            .collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (mut sum_abs, mut max_abs, mut sum_rel, mut max_rel) = (0.0, 0.0f64, 0.0, 0.0f64);
    for &(i, j) in &pairs {
        let exact = dot(g.row(i), g.row(j));
        let approx = dot(p.row(i), p.row(j));
        let abs = (approx - exact).abs();
        let norms = dot(g.row(i), g.row(i)).sqrt() * dot(g.row(j), g.row(j)).sqrt();
        let rel = if norms > 0.0 { abs / norms } else { 0.0 };
        sum_abs += abs;
        sum_rel += rel;
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    let n = pairs.len() as f64;
    Ok(ProjectionErrorReport {
        n_pairs: pairs.len(),
        mean_abs_error: sum_abs / n,
        max_abs_error: max_abs,
        mean_rel_error: sum_rel / n,
        max_rel_error: max_rel,
    })
}
