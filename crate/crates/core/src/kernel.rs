//! Empirical NTK Gram matrix, its eigensystem, and residual projections.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DVectorView, DVectorViewMut, SymmetricEigen};

use crate::error::{Error, Result};
use crate::ingest::{GradientMatrix, FORMAT_VERSION, HEADER_LEN};
use crate::types::{LabelSet, OutputVector};

pub const KERNEL_MAGIC: &[u8; 8] = b"NTKKERN1";

/// Kernels up to this size are dumped as a readable `i,j,value` table.
pub const TEXT_DUMP_MAX: usize = 64;

/// Symmetric PSD Gram matrix Θ = G Gᵀ over the stacked outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    data: DMatrix<f64>,
}

impl KernelMatrix {
    /// Wraps a square matrix, enforcing exact symmetry by averaging with the
    /// transpose.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "kernel must be square, got {} x {}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("kernel has non-finite entries".into()));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(KernelMatrix { data: sym })
    }

    pub fn size(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    /// `Θ·x` for a stacked-output vector.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.size();
        let x = DVectorView::from_slice(x, n);
        let mut out = DVectorViewMut::from_slice(out, n);
        out.gemv(1.0, &self.data, &x, 0.0);
    }
}

pub fn build_kernel(g: &GradientMatrix) -> KernelMatrix {
    let (rows, cols) = (g.rows(), g.cols());
    // row-major (rows x cols) is column-major (cols x rows), i.e. Gᵀ
    let gt = DMatrixView::from_slice(g.data(), cols, rows);
    let theta = gt.tr_mul(&gt);
    let sym = (&theta + theta.transpose()) * 0.5;
    KernelMatrix { data: sym }
}

/// Full symmetric eigendecomposition, eigenvalues sorted descending and
/// clamped at zero.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    clamped_mass: f64,
}

impl EigenSystem {
    /// Builds an eigensystem from already-known parts. Eigenvalues must be
    /// sorted descending and non-negative; `vectors` holds them column-wise.
    pub fn from_parts(values: Vec<f64>, vectors: DMatrix<f64>) -> Result<Self> {
        if vectors.nrows() != vectors.ncols() || vectors.ncols() != values.len() {
            return Err(Error::Dimension(format!(
                "{} eigenvalues with a {} x {} basis",
                values.len(),
                vectors.nrows(),
                vectors.ncols()
            )));
        }
        if values.windows(2).any(|w| w[0] < w[1]) || values.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::Domain(
                "eigenvalues must be non-negative and sorted descending".into(),
            ));
        }
        Ok(EigenSystem {
            values,
            vectors,
            clamped_mass: 0.0,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total magnitude of negative eigenvalues that were clamped to zero.
    pub fn clamped_mass(&self) -> f64 {
        self.clamped_mass
    }

    /// `V diag(λ) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &l) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(l);
        }
        scaled * self.vectors.transpose()
    }
}

const EIG_MAX_SWEEPS_PER_DIM: usize = 1000;

pub fn sym_eig(k: &KernelMatrix) -> Result<EigenSystem> {
    let n = k.size();
    if n == 0 {
        return Err(Error::Dimension("cannot decompose an empty kernel".into()));
    }
    let max_iter = EIG_MAX_SWEEPS_PER_DIM * n;
    let eig = SymmetricEigen::try_new(k.data.clone(), f64::EPSILON, max_iter)
        .ok_or(Error::NoConvergence {
            iterations: max_iter,
        })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    let mut clamped_mass = 0.0;
    for (dst, &src) in order.iter().enumerate() {
        let l = eig.eigenvalues[src];
        if l < 0.0 {
            clamped_mass += -l;
            if l < -1e-8 * lambda_max {
                log::warn!("clamping eigenvalue {l:e} (largest {lambda_max:e}); kernel is not PSD");
            }
        }
        values.push(l.max(0.0));
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigenSystem {
        values,
        vectors,
        clamped_mass,
    })
}

/// Initial residual δy = 𝒴 − f₀ and its squared coordinates in the
/// eigenbasis, `p_k = (δy·v_k)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualProjections {
    pub delta_y: Vec<f64>,
    pub p: Vec<f64>,
}

impl ResidualProjections {
    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }
}

pub fn residual_projections(
    e: &EigenSystem,
    f0: &OutputVector,
    y: &LabelSet,
) -> Result<ResidualProjections> {
    let targets = match y {
        LabelSet::Regression { targets, .. } => targets,
        LabelSet::Classes { .. } => {
            return Err(Error::Usage(
                "the closed-form loss is defined for squared error only; \
                 pass real-valued (e.g. one-hot) targets instead of class labels"
                    .into(),
            ))
        }
    };
    y.check_compatible(f0)?;
    if f0.len() != e.len() {
        return Err(Error::Dimension(format!(
            "{} outputs against a kernel of size {}",
            f0.len(),
            e.len()
        )));
    }
    let delta_y: Vec<f64> = targets.iter().zip(&f0.values).map(|(y, f)| y - f).collect();
    let p = e
        .vectors
        .column_iter()
        .map(|v| {
            let d: f64 = v.iter().zip(&delta_y).map(|(a, b)| a * b).sum();
            d * d
        })
        .collect();
    Ok(ResidualProjections { delta_y, p })
}

/// The `i,j,value` table, one row per entry.
pub fn kernel_text(k: &KernelMatrix) -> String {
    let n = k.size();
    let mut s = String::from("i,j,value\n");
    for i in 0..n {
        for j in 0..n {
            s.push_str(&format!("{i},{j},{:?}\n", k.data[(i, j)]));
        }
    }
    s
}

/// Dumps a kernel: a `i,j,value` table up to [`TEXT_DUMP_MAX`], otherwise a
/// binary file with the gradient-file header layout.
pub fn write_kernel(path: impl AsRef<Path>, k: &KernelMatrix) -> Result<()> {
    let path = path.as_ref();
    let n = k.size();
    let bytes = if n <= TEXT_DUMP_MAX {
        kernel_text(k).into_bytes()
    } else {
        let mut b = Vec::with_capacity(HEADER_LEN + n * n * 8);
        b.extend_from_slice(KERNEL_MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&(n as u64).to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&(n as u64).to_le_bytes());
        b.push(1);
        b.extend_from_slice(&[0u8; 7]);
        for i in 0..n {
            for j in 0..n {
                b.write_all(&k.data[(i, j)].to_le_bytes()).unwrap();
            }
        }
        b
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<KernelMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if bytes.starts_with(KERNEL_MAGIC) {
        if bytes.len() < HEADER_LEN {
            return Err(parse(0, "short header".into()));
        }
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let count = n.checked_mul(n).filter(|c| c.checked_mul(8).is_some()).ok_or_else(|| {
            Error::DimensionOverflow {
                path: path.to_path_buf(),
                detail: format!("n={n}"),
            }
        })?;
        let payload = &bytes[HEADER_LEN..];
        if (payload.len() as u64) != count * 8 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: count,
                found: payload.len() as u64 / 8,
            });
        }
        let n = n as usize;
        let vals: Vec<f64> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        return KernelMatrix::from_matrix(DMatrix::from_row_slice(n, n, &vals));
    }
    let text = String::from_utf8(bytes).map_err(|_| parse(0, "not a kernel file".into()))?;
    let mut entries = Vec::new();
    for (no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(parse(no + 1, format!("expected 3 fields, found {}", f.len())));
        }
        let i: usize = f[0].parse().map_err(|_| parse(no + 1, "bad row index".into()))?;
        let j: usize = f[1].parse().map_err(|_| parse(no + 1, "bad column index".into()))?;
        let v: f64 = f[2].parse().map_err(|_| parse(no + 1, "bad value".into()))?;
        entries.push((i, j, v));
    }
    let n = (entries.len() as f64).sqrt() as usize;
    if n * n != entries.len() {
        return Err(parse(0, format!("{} entries is not a square count", entries.len())));
    }
    let mut m = DMatrix::zeros(n, n);
    for (i, j, v) in entries {
        if i >= n || j >= n {
            return Err(parse(0, format!("index ({i},{j}) outside {n} x {n}")));
        }
        m[(i, j)] = v;
    }
    KernelMatrix::from_matrix(m)
}
