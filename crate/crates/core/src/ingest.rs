//! Gradient files, label/output tables and synthetic data.
//!
//! Gradient file layout (little-endian):
//!
//! ```text
//! "NTKGRAD1" | u32 version=1 | u64 N | u32 C | u64 D | u8 dtype | 7 zero bytes | payload
//! ```
//!
//! The payload is the (N·C)×D matrix in row-major order, as `f32`
//! (dtype 0) or `f64` (dtype 1). Row `i·C + j` holds the gradient of output
//! `j` on sample `i` with respect to all parameters.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::types::{LabelSet, OutputVector};

pub const GRADIENT_MAGIC: &[u8; 8] = b"NTKGRAD1";
pub const FORMAT_VERSION: u32 = 1;
pub(crate) const HEADER_LEN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Per-sample, per-output parameter gradients at initialization.
///
/// Values are held as `f64`; an `F32` matrix only ever holds values that are
/// exactly representable in `f32`, so its file round trip is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    n_samples: usize,
    n_outputs: usize,
    cols: usize,
    data: Vec<f64>,
    projected: bool,
    dtype: Dtype,
}

impl GradientMatrix {
    pub fn new(
        n_samples: usize,
        n_outputs: usize,
        cols: usize,
        mut data: Vec<f64>,
        dtype: Dtype,
    ) -> Result<Self> {
        let rows = n_samples
            .checked_mul(n_outputs)
            .ok_or_else(|| Error::Dimension("N·C overflows".into()))?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Dimension("N·C·D overflows".into()))?;
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "gradient data has {} values, expected {rows} x {cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite gradient entry at row {}, column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        if dtype == Dtype::F32 {
            for v in &mut data {
                *v = *v as f32 as f64;
            }
        }
        Ok(GradientMatrix {
            n_samples,
            n_outputs,
            cols,
            data,
            projected: false,
            dtype,
        })
    }

    pub(crate) fn with_projected(mut self, projected: bool) -> Self {
        self.projected = projected;
        self
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn rows(&self) -> usize {
        self.n_samples * self.n_outputs
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_projected(&self) -> bool {
        self.projected
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    /// Squared Frobenius norm, accumulated in f64.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

pub fn write_gradients(path: impl AsRef<Path>, g: &GradientMatrix) -> Result<()> {
    let path = path.as_ref();
    if g.rows() == 0 || g.cols() == 0 {
        return Err(Error::Usage(format!(
            "refusing to write an empty gradient matrix ({} x {})",
            g.rows(),
            g.cols()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(GRADIENT_MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.extend_from_slice(&(g.n_samples as u64).to_le_bytes());
    header.extend_from_slice(&(g.n_outputs as u32).to_le_bytes());
    header.extend_from_slice(&(g.cols as u64).to_le_bytes());
    header.push(g.dtype.code());
    header.extend_from_slice(&[0u8; 7]);
    debug_assert_eq!(header.len(), HEADER_LEN);

    let io = |e| Error::io(path, e);
    w.write_all(&header).map_err(io)?;
    match g.dtype {
        Dtype::F32 => {
            for &v in &g.data {
                w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
            }
        }
        Dtype::F64 => {
            for &v in &g.data {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_gradients(path: impl AsRef<Path>) -> Result<GradientMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };
    if bytes.len() < 8 || &bytes[..8] != GRADIENT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(GRADIENT_MAGIC).into_owned(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(parse(format!("header is {} bytes, need {HEADER_LEN}", bytes.len())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != FORMAT_VERSION {
        return Err(parse(format!("unsupported format version {version}")));
    }
    let n = u64_at(12);
    let c = u32_at(20) as u64;
    let d = u64_at(24);
    let dtype = match bytes[32] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(parse(format!("unknown dtype code {other}"))),
    };
    let overflow = |detail: String| Error::DimensionOverflow {
        path: path.to_path_buf(),
        detail,
    };
    let count = n
        .checked_mul(c)
        .and_then(|r| r.checked_mul(d))
        .ok_or_else(|| overflow(format!("N={n}, C={c}, D={d}")))?;
    let payload_bytes = count
        .checked_mul(dtype.size() as u64)
        .filter(|&b| b <= usize::MAX as u64)
        .ok_or_else(|| overflow(format!("payload of {count} values")))?;
    let payload = &bytes[HEADER_LEN..];
    if (payload.len() as u64) < payload_bytes {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: count,
            found: payload.len() as u64 / dtype.size() as u64,
        });
    }
    if payload.len() as u64 > payload_bytes {
        return Err(parse(format!(
            "{} trailing bytes after payload",
            payload.len() as u64 - payload_bytes
        )));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    GradientMatrix::new(n as usize, c as usize, d as usize, data, dtype).map_err(|e| match e {
        Error::Domain(msg) => parse(msg),
        other => other,
    })
}

// ---------------------------------------------------------------------------
// text tables

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<(usize, Vec<String>)>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "empty table".into(),
    })?;
    let header: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let rows = lines
        .map(|(no, l)| (no + 1, l.split(',').map(|s| s.trim().to_string()).collect()))
        .collect();
    Ok((header, rows))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse {field:?}"),
    })
}

fn check_row(path: &Path, line: usize, row: &[String], width: usize, expect_index: usize) -> Result<()> {
    if row.len() != width {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("expected {width} fields, found {}", row.len()),
        });
    }
    let idx: usize = parse_field(path, line, &row[0])?;
    if idx != expect_index {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("expected sample index {expect_index}, found {idx}"),
        });
    }
    Ok(())
}

/// Reads `index,class` (class labels) or `index,y_1,...,y_C` (real
/// targets). The header row selects the format; class labels need the
/// output count from the caller.
pub fn read_labels(path: impl AsRef<Path>, n_outputs: Option<usize>) -> Result<LabelSet> {
    let path = path.as_ref();
    let (header, rows) = read_table(path)?;
    let bad_header = || Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: format!("unrecognized label header {:?}", header.join(",")),
    };
    if header.first().map(String::as_str) != Some("index") || header.len() < 2 {
        return Err(bad_header());
    }
    if header.len() == 2 && header[1] == "class" {
        let mut classes = Vec::with_capacity(rows.len());
        for (i, (line, row)) in rows.iter().enumerate() {
            check_row(path, *line, row, 2, i)?;
            classes.push(parse_field::<usize>(path, *line, &row[1])?);
        }
        let c = match n_outputs {
            Some(c) => c,
            None => classes.iter().max().map_or(2, |m| (m + 1).max(2)),
        };
        return LabelSet::classes(classes, c);
    }
    let c = header.len() - 1;
    if header[1..]
        .iter()
        .enumerate()
        .any(|(j, h)| *h != format!("y_{}", j + 1))
    {
        return Err(bad_header());
    }
    if let Some(expected) = n_outputs {
        if expected != c {
            return Err(Error::Dimension(format!(
                "{}: label table has {c} outputs, expected {expected}",
                path.display()
            )));
        }
    }
    let mut targets = Vec::with_capacity(rows.len() * c);
    for (i, (line, row)) in rows.iter().enumerate() {
        check_row(path, *line, row, c + 1, i)?;
        for f in &row[1..] {
            targets.push(parse_field::<f64>(path, *line, f)?);
        }
    }
    LabelSet::regression(targets, rows.len(), c)
}

pub fn write_labels(path: impl AsRef<Path>, y: &LabelSet) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    match y {
        LabelSet::Classes { classes, .. } => {
            s.push_str("index,class\n");
            for (i, c) in classes.iter().enumerate() {
                s.push_str(&format!("{i},{c}\n"));
            }
        }
        LabelSet::Regression {
            targets,
            n_samples,
            n_outputs,
        } => {
            write_dense_table(&mut s, "y", targets, *n_samples, *n_outputs);
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_dense_table(s: &mut String, prefix: &str, values: &[f64], n: usize, c: usize) {
    s.push_str("index");
    for j in 1..=c {
        s.push_str(&format!(",{prefix}_{j}"));
    }
    s.push('\n');
    for i in 0..n {
        s.push_str(&i.to_string());
        for v in &values[i * c..(i + 1) * c] {
            // `{:?}` prints the shortest representation that round-trips
            s.push_str(&format!(",{v:?}"));
        }
        s.push('\n');
    }
}

/// Reads an `index,f_1,...,f_C` table of initial outputs.
pub fn read_outputs(path: impl AsRef<Path>) -> Result<OutputVector> {
    let path = path.as_ref();
    let (header, rows) = read_table(path)?;
    let c = header.len().saturating_sub(1);
    let ok = header.first().map(String::as_str) == Some("index")
        && c >= 1
        && header[1..]
            .iter()
            .enumerate()
            .all(|(j, h)| *h == format!("f_{}", j + 1));
    if !ok {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("unrecognized output header {:?}", header.join(",")),
        });
    }
    let mut values = Vec::with_capacity(rows.len() * c);
    for (i, (line, row)) in rows.iter().enumerate() {
        check_row(path, *line, row, c + 1, i)?;
        for f in &row[1..] {
            values.push(parse_field::<f64>(path, *line, f)?);
        }
    }
    OutputVector::new(values, rows.len(), c)
}

pub fn write_outputs(path: impl AsRef<Path>, f: &OutputVector) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    write_dense_table(&mut s, "f", &f.values, f.n_samples, f.n_outputs);
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// synthetic data

/// Row-major input features, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub n_samples: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn new(n_samples: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_samples * dim {
            return Err(Error::Dimension(format!(
                "feature matrix has {} values, expected {n_samples} x {dim}",
                data.len()
            )));
        }
        Ok(Features {
            n_samples,
            dim,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    pub input_dim: usize,
    pub cluster_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.n_samples < self.n_classes {
            return Err(Error::Domain(format!(
                "need n_samples >= n_classes >= 2, got {} samples and {} classes",
                self.n_samples, self.n_classes
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::Domain("input_dim must be positive".into()));
        }
        if !(self.cluster_separation > 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::Domain(
                "cluster separation must be positive and noise std non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Center of class `c`. With enough dimensions the centers sit on scaled
    /// coordinate axes (pairwise distance exactly the separation); otherwise
    /// they are spaced along the first axis.
    pub fn class_mean(&self, c: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.input_dim];
        if self.input_dim >= self.n_classes {
            m[c] = self.cluster_separation / std::f64::consts::SQRT_2;
        } else {
            m[0] = self.cluster_separation * c as f64;
        }
        m
    }
}

/// Gaussian blobs, one per class. Sample `i` belongs to class `i mod K`.
pub fn synth_blobs(spec: &DatasetSpec) -> Result<(Features, LabelSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.n_classes).map(|c| spec.class_mean(c)).collect();
    let mut data = Vec::with_capacity(spec.n_samples * spec.input_dim);
    let mut classes = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let c = i % spec.n_classes;
        classes.push(c);
        for &mu in &means[c] {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(mu + spec.noise_std * z);
        }
    }
    Ok((
        Features::new(spec.n_samples, spec.input_dim, data)?,
        LabelSet::classes(classes, spec.n_classes)?,
    ))
}

/// Haar-ish random orthogonal matrix from the QR factorization of a
/// Gaussian matrix.
pub(crate) fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut *rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Symmetric PSD matrix whose eigenvalues are exactly `c·k^{-s}`,
/// `k = 1..=n`, in a seeded random orthonormal basis.
pub fn synth_powerlaw_kernel(n: usize, c: f64, s: f64, seed: u64) -> Result<KernelMatrix> {
    if n == 0 {
        return Err(Error::Domain("kernel size must be at least 1".into()));
    }
    if !(c > 0.0) || !(s > 0.0) {
        return Err(Error::Domain("power-law coefficients must be positive".into()));
    }
    let eig: Vec<f64> = (1..=n).map(|k| c * (k as f64).powf(-s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(n, &mut rng);
    let k = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
    KernelMatrix::from_matrix(k)
}

/// Gradient matrix `V·diag(√λ)` (n×n, one output per sample) whose Gram
/// matrix has exactly the given eigenvalues in a seeded random basis.
pub fn synth_spectrum_gradients(eigenvalues: &[f64], seed: u64) -> Result<GradientMatrix> {
    if eigenvalues.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::Domain("eigenvalues must be non-negative".into()));
    }
    let n = eigenvalues.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_orthogonal(n, &mut rng);
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for (k, &l) in eigenvalues.iter().enumerate() {
            data.push(q[(i, k)] * l.sqrt());
        }
    }
    GradientMatrix::new(n, 1, n, data, Dtype::F64)
}
