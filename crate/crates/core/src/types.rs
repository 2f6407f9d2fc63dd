//! Domain types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Mini-batch size. `Full` stands for the infinite-batch limit, i.e. plain
/// gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSize {
    Full,
    Finite(usize),
}

impl BatchSize {
    /// True when the batch covers the whole dataset, so the dynamics are
    /// deterministic.
    pub fn is_full_for(&self, n_samples: usize) -> bool {
        match *self {
            BatchSize::Full => true,
            BatchSize::Finite(b) => b == n_samples,
        }
    }
}

/// Optimizer hyper-parameters and the prediction budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: BatchSize,
    pub total_steps: usize,
    /// Convergence threshold in loss units.
    pub epsilon: f64,
    pub loss_kind: LossKind,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            learning_rate: 1e-3,
            momentum: 0.0,
            batch_size: BatchSize::Full,
            total_steps: 150,
            epsilon: 1e-2,
            loss_kind: LossKind::Mse,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.total_steps < 1 {
            return Err(Error::Domain("total_steps must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if let BatchSize::Finite(0) = self.batch_size {
            return Err(Error::Domain("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stacked model outputs on the training set, sample-major:
/// `values[i * n_outputs + j]` is output `j` on sample `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputVector {
    pub values: Vec<f64>,
    pub n_samples: usize,
    pub n_outputs: usize,
}

impl OutputVector {
    pub fn new(values: Vec<f64>, n_samples: usize, n_outputs: usize) -> Result<Self> {
        if values.len() != n_samples * n_outputs {
            return Err(Error::Dimension(format!(
                "output vector has {} values, expected {} x {}",
                values.len(),
                n_samples,
                n_outputs
            )));
        }
        Ok(OutputVector {
            values,
            n_samples,
            n_outputs,
        })
    }

    pub fn zeros(n_samples: usize, n_outputs: usize) -> Self {
        OutputVector {
            values: vec![0.0; n_samples * n_outputs],
            n_samples,
            n_outputs,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_outputs..(i + 1) * self.n_outputs]
    }
}

/// Training targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LabelSet {
    /// Real-valued targets, stacked like [`OutputVector`].
    Regression {
        targets: Vec<f64>,
        n_samples: usize,
        n_outputs: usize,
    },
    /// One class index per sample.
    Classes {
        classes: Vec<usize>,
        n_outputs: usize,
    },
}

impl LabelSet {
    pub fn regression(targets: Vec<f64>, n_samples: usize, n_outputs: usize) -> Result<Self> {
        if targets.len() != n_samples * n_outputs {
            return Err(Error::Dimension(format!(
                "target vector has {} values, expected {} x {}",
                targets.len(),
                n_samples,
                n_outputs
            )));
        }
        Ok(LabelSet::Regression {
            targets,
            n_samples,
            n_outputs,
        })
    }

    pub fn classes(classes: Vec<usize>, n_outputs: usize) -> Result<Self> {
        if let Some(&bad) = classes.iter().find(|&&c| c >= n_outputs) {
            return Err(Error::Dimension(format!(
                "class index {bad} out of range for {n_outputs} outputs"
            )));
        }
        Ok(LabelSet::Classes { classes, n_outputs })
    }

    pub fn n_samples(&self) -> usize {
        match self {
            LabelSet::Regression { n_samples, .. } => *n_samples,
            LabelSet::Classes { classes, .. } => classes.len(),
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            LabelSet::Regression { n_outputs, .. } | LabelSet::Classes { n_outputs, .. } => {
                *n_outputs
            }
        }
    }

    /// Real targets 𝒴 for squared-error losses. Class labels are one-hot
    /// encoded.
    pub fn dense_targets(&self) -> Vec<f64> {
        match self {
            LabelSet::Regression { targets, .. } => targets.clone(),
            LabelSet::Classes { classes, n_outputs } => {
                let mut out = vec![0.0; classes.len() * n_outputs];
                for (i, &c) in classes.iter().enumerate() {
                    out[i * n_outputs + c] = 1.0;
                }
                out
            }
        }
    }

    /// Class index per sample, when one is defined: explicit classes, the
    /// argmax of multi-output targets, or the sign of ±1 scalar targets
    /// (class 1 for +1, class 0 for -1).
    pub fn class_indices(&self) -> Option<Vec<usize>> {
        match self {
            LabelSet::Classes { classes, .. } => Some(classes.clone()),
            LabelSet::Regression {
                targets,
                n_samples,
                n_outputs,
            } => {
                if *n_outputs >= 2 {
                    Some(
                        (0..*n_samples)
                            .map(|i| argmax(&targets[i * n_outputs..(i + 1) * n_outputs]))
                            .collect(),
                    )
                } else if targets.iter().all(|&y| y == 1.0 || y == -1.0) {
                    Some(targets.iter().map(|&y| usize::from(y > 0.0)).collect())
                } else {
                    None
                }
            }
        }
    }

    pub(crate) fn check_compatible(&self, f: &OutputVector) -> Result<()> {
        if f.n_samples != self.n_samples() || f.n_outputs != self.n_outputs() {
            return Err(Error::Dimension(format!(
                "outputs are {} x {} but labels are {} x {}",
                f.n_samples,
                f.n_outputs,
                self.n_samples(),
                self.n_outputs()
            )));
        }
        Ok(())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Loss,
    Error,
}

/// A per-step curve for t = 0..=T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub values: Vec<f64>,
    pub kind: CurveKind,
}

impl LossCurve {
    pub fn new(values: Vec<f64>, kind: CurveKind) -> Self {
        LossCurve { values, kind }
    }

    /// Number of steps T (one less than the number of recorded points).
    pub fn steps(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}
