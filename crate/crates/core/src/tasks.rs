//! Benchmark sequences and their metrics.

use std::io::{Read, Write};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Paired input/target sequences with a per-instance cost flag.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub cost_mask: Vec<bool>,
}

impl SequenceDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, cost_mask: Vec<bool>) -> Result<Self> {
        if inputs.len() != targets.len() || inputs.len() != cost_mask.len() {
            return Err(Error::Length(format!(
                "{} inputs, {} targets, {} mask flags",
                inputs.len(),
                targets.len(),
                cost_mask.len()
            )));
        }
        let finite = |vs: &[Vec<f64>]| vs.iter().flatten().all(|v| v.is_finite());
        if !finite(&inputs) || !finite(&targets) {
            return Err(Error::Numeric("dataset value".into()));
        }
        Ok(Self {
            inputs,
            targets,
            cost_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim_x(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn dim_y(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    /// Columns `x0..,y0..,mask`, one row per instance.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim_x()).map(|j| format!("x{j}")).collect();
        header.extend((0..self.dim_y()).map(|j| format!("y{j}")));
        header.push("mask".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.inputs[i]
                .iter()
                .chain(&self.targets[i])
                .map(|v| format!("{v}"))
                .collect();
            row.push(u8::from(self.cost_mask[i]).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let dim_x = headers.iter().filter(|h| h.starts_with('x')).count();
        let dim_y = headers.iter().filter(|h| h.starts_with('y')).count();
        if headers.len() != dim_x + dim_y + 1 || headers.get(headers.len() - 1) != Some("mask") {
            return Err(Error::Parse("expected header `x0..,y0..,mask`".into()));
        }
        let (mut inputs, mut targets, mut mask) = (Vec::new(), Vec::new(), Vec::new());
        for record in r.records() {
            let record = record?;
            let vals = record
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{f:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            inputs.push(vals[..dim_x].to_vec());
            targets.push(vals[dim_x..dim_x + dim_y].to_vec());
            mask.push(vals[dim_x + dim_y] != 0.0);
        }
        Self::new(inputs, targets, mask)
    }
}

/// Variable-delay recall: `q_i` uniform on `{0, 1, 2}`, target
/// `y_i = q_{i - q_i}`. The first two instances are excluded from the cost.
/// With `one_hot` the input is the one-hot code of `q_i` instead of the
/// scalar.
pub fn gen_variable_delay(n: usize, one_hot: bool, rng: &mut dyn RngCore) -> Result<SequenceDataset> {
    if n < 3 {
        return Err(Error::Length(
            "variable-delay sequences need at least 3 instances".into(),
        ));
    }
    let q: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    variable_delay_from(&q, one_hot)
}

/// Builds the variable-delay dataset for a given input sequence.
pub fn variable_delay_from(q: &[usize], one_hot: bool) -> Result<SequenceDataset> {
    if let Some(v) = q.iter().find(|&&v| v > 2) {
        return Err(Error::Config(format!("delay symbols must lie in 0..=2, got {v}")));
    }
    let inputs = q
        .iter()
        .map(|&v| {
            if one_hot {
                let mut h = vec![0.0; 3];
                h[v] = 1.0;
                h
            } else {
                vec![v as f64]
            }
        })
        .collect();
    let targets = (0..q.len())
        .map(|i| vec![if i >= q[i] { q[i - q[i]] as f64 } else { 0.0 }])
        .collect();
    let mask = (0..q.len()).map(|i| i >= 2).collect();
    SequenceDataset::new(inputs, targets, mask)
}

/// Parameters of the synthetic frame-labelling task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelTask {
    pub n_classes: usize,
    pub input_dim: usize,
    /// Frames the label looks back over (1 = current frame only).
    pub window: usize,
    /// AR(1) coefficient of the input trajectories.
    pub smoothness: f64,
}

impl Default for LabelTask {
    fn default() -> Self {
        Self {
            n_classes: 4,
            input_dim: 5,
            window: 3,
            smoothness: 0.8,
        }
    }
}

impl LabelTask {
    fn window_std(&self) -> f64 {
        let w = self.window as i32;
        let a = self.smoothness;
        let mut acc = 0.0;
        for j in 0..w {
            for k in 0..w {
                acc += a.powi((j - k).abs());
            }
        }
        acc.sqrt() / w as f64
    }
}

/// Synthetic stand-in for frame labelling.
///
/// Inputs follow a stationary, unit-variance AR(1) process per dimension,
/// `x_t = r x_{t-1} + sqrt(1 - r^2) xi_t`. The label of frame `t` quantises
/// the mean of `z = sum_c x[c] / sqrt(d)` over the last `window` frames into
/// `n_classes` equiprobable bins. Targets are one-hot; the first
/// `window - 1` frames are excluded from the cost.
pub fn gen_synthetic_labels(n: usize, task: &LabelTask, rng: &mut dyn RngCore) -> Result<SequenceDataset> {
    if task.n_classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if task.input_dim == 0 || task.window == 0 {
        return Err(Error::Config("input_dim and window must be positive".into()));
    }
    if !(0.0..1.0).contains(&task.smoothness) {
        return Err(Error::Config("smoothness must lie in [0, 1)".into()));
    }
    let d = task.input_dim;
    let innov = (1.0 - task.smoothness * task.smoothness).sqrt();
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(n);
    for t in 0..n {
        let x: Vec<f64> = (0..d)
            .map(|c| {
                let xi: f64 = StandardNormal.sample(rng);
                if t == 0 {
                    xi
                } else {
                    task.smoothness * inputs[t - 1][c] + innov * xi
                }
            })
            .collect();
        inputs.push(x);
    }
    let z: Vec<f64> = inputs
        .iter()
        .map(|x| x.iter().sum::<f64>() / (d as f64).sqrt())
        .collect();
    let normal = Normal::standard();
    let thresholds: Vec<f64> = (1..task.n_classes)
        .map(|k| normal.inverse_cdf(k as f64 / task.n_classes as f64))
        .collect();
    let sigma = task.window_std();
    let mut targets = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for t in 0..n {
        let valid = t + 1 >= task.window;
        let label = if valid {
            let v = z[t + 1 - task.window..=t].iter().sum::<f64>() / task.window as f64 / sigma;
            thresholds.iter().filter(|&&th| v > th).count()
        } else {
            0
        };
        let mut onehot = vec![0.0; task.n_classes];
        onehot[label] = 1.0;
        targets.push(onehot);
        mask.push(valid);
    }
    SequenceDataset::new(inputs, targets, mask)
}

/// A benchmark: how to draw batches and how to score predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    VariableDelay {
        #[serde(default)]
        one_hot: bool,
    },
    SyntheticLabels(LabelTask),
}

impl Task {
    pub fn generate(&self, n: usize, rng: &mut dyn RngCore) -> Result<SequenceDataset> {
        match self {
            Task::VariableDelay { one_hot } => gen_variable_delay(n, *one_hot, rng),
            Task::SyntheticLabels(t) => gen_synthetic_labels(n, t, rng),
        }
    }

    /// `(dim_x, dim_y)` of generated instances.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Task::VariableDelay { one_hot } => (if *one_hot { 3 } else { 1 }, 1),
            Task::SyntheticLabels(t) => (t.input_dim, t.n_classes),
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self {
            Task::VariableDelay { .. } => "nrmse",
            Task::SyntheticLabels(_) => "frame_error_rate",
        }
    }

    /// NRMSE for regression, frame error rate (argmax of the outputs) for
    /// labelling.
    pub fn metric(&self, ys: &[Vec<f64>], data: &SequenceDataset) -> Result<f64> {
        match self {
            Task::VariableDelay { .. } => nrmse(ys, &data.targets, &data.cost_mask),
            Task::SyntheticLabels(_) => {
                let pred: Vec<usize> = ys.iter().map(|y| argmax(y)).collect();
                let truth: Vec<usize> = data.targets.iter().map(|t| argmax(t)).collect();
                frame_error_rate(&pred, &truth, &data.cost_mask)
            }
        }
    }

    /// Metric of a predictor that ignores its input, for reference.
    pub fn chance_level(&self) -> f64 {
        match self {
            Task::VariableDelay { .. } => 1.0,
            Task::SyntheticLabels(t) => 1.0 - 1.0 / t.n_classes as f64,
        }
    }
}

/// Index of the largest entry.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) },
        )
        .0
}

/// RMS error over masked instances divided by the (population) standard
/// deviation of the masked targets. Vector instances are flattened.
pub fn nrmse(pred: &[Vec<f64>], target: &[Vec<f64>], mask: &[bool]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::Length("prediction, target and mask lengths differ".into()));
    }
    let mut diffs = Vec::new();
    let mut vals = Vec::new();
    for ((p, t), &m) in pred.iter().zip(target).zip(mask) {
        if !m {
            continue;
        }
        if p.len() != t.len() {
            return Err(Error::Dimension("prediction and target widths differ".into()));
        }
        for (a, b) in p.iter().zip(t) {
            diffs.push(a - b);
            vals.push(*b);
        }
    }
    if vals.len() < 2 {
        return Err(Error::Undefined("NRMSE needs at least two masked values".into()));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(Error::Undefined("target variance is zero".into()));
    }
    let mse = diffs.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((mse / var).sqrt())
}

/// Fraction of masked frames whose label disagrees.
pub fn frame_error_rate(pred: &[usize], truth: &[usize], mask: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != mask.len() {
        return Err(Error::Length("label and mask lengths differ".into()));
    }
    let (wrong, total) = pred
        .iter()
        .zip(truth)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0usize, 0usize), |(w, t), ((p, q), _)| (w + usize::from(p != q), t + 1));
    if total == 0 {
        return Err(Error::Undefined("no frames selected by the mask".into()));
    }
    Ok(wrong as f64 / total as f64)
}
