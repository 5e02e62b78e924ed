//! Costs, gradient normalisation and the plain gradient-descent loop.
//!
//! Each iteration draws a fresh batch, runs the plant forward, scores the
//! decoded outputs, plays the encoded errors backward through the plant,
//! averages over noisy repeats, normalises every trainable block to unit L2
//! norm and steps with a linearly decaying learning rate.

use std::io::{Read, Write};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{
    block_grad, block_params, evaluate_gradients, set_block_params, Block, GradientBundle, PipelineOptions,
};
use crate::masking::MaskSet;
use crate::system::PhysicalSystem;
use crate::tasks::{SequenceDataset, Task};
use crate::{seeded_rng, SimRng};

/// Cost functionals over decoded outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// `1/2 sum ||y - t||^2 / count`.
    Mse,
    /// `1/2 sum ||y - t||^2`, additive over instances.
    SumSquares,
    /// Mean softmax cross-entropy against one-hot targets.
    SoftmaxCe,
}

impl CostKind {
    pub fn for_task(task: &Task) -> Self {
        match task {
            Task::VariableDelay { .. } => CostKind::Mse,
            Task::SyntheticLabels(_) => CostKind::SoftmaxCe,
        }
    }

    /// Cost and `dC/dy_i` for every instance (zero where unmasked).
    pub fn evaluate(self, pred: &[Vec<f64>], target: &[Vec<f64>], mask: &[bool]) -> Result<(f64, Vec<Vec<f64>>)> {
        match self {
            CostKind::Mse => mse_cost(pred, target, mask),
            CostKind::SumSquares => {
                let (c, errs) = mse_cost(pred, target, mask)?;
                let n = mask.iter().filter(|m| **m).count() as f64;
                Ok((
                    c * n,
                    errs.into_iter()
                        .map(|e| e.into_iter().map(|v| v * n).collect())
                        .collect(),
                ))
            }
            CostKind::SoftmaxCe => softmax_ce_cost(pred, target, mask),
        }
    }
}

fn check_lengths(pred: &[Vec<f64>], target: &[Vec<f64>], mask: &[bool]) -> Result<usize> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::Length("prediction, target and mask lengths differ".into()));
    }
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() {
            return Err(Error::Dimension("prediction and target widths differ".into()));
        }
    }
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::Undefined("cost mask selects no instances".into()));
    }
    Ok(count)
}

/// `1/2 sum ||p - t||^2 / count` over masked instances; errors
/// `(p - t) / count` there and zero elsewhere.
pub fn mse_cost(pred: &[Vec<f64>], target: &[Vec<f64>], mask: &[bool]) -> Result<(f64, Vec<Vec<f64>>)> {
    let count = check_lengths(pred, target, mask)? as f64;
    let mut cost = 0.0;
    let errs = pred
        .iter()
        .zip(target)
        .zip(mask)
        .map(|((p, t), &m)| {
            if !m {
                return vec![0.0; p.len()];
            }
            p.iter()
                .zip(t)
                .map(|(a, b)| {
                    let d = a - b;
                    cost += 0.5 * d * d;
                    d / count
                })
                .collect()
        })
        .collect();
    Ok((cost / count, errs))
}

/// Mean cross-entropy of `softmax(logits)` against one-hot targets over
/// masked frames; errors `(softmax - onehot) / count`.
pub fn softmax_ce_cost(logits: &[Vec<f64>], onehot: &[Vec<f64>], mask: &[bool]) -> Result<(f64, Vec<Vec<f64>>)> {
    let count = check_lengths(logits, onehot, mask)? as f64;
    let mut cost = 0.0;
    let errs = logits
        .iter()
        .zip(onehot)
        .zip(mask)
        .map(|((z, t), &m)| {
            if !m {
                return vec![0.0; z.len()];
            }
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
            let total: f64 = exps.iter().sum();
            let log_total = total.ln() + zmax;
            cost += t.iter().zip(z).map(|(ti, zi)| ti * (log_total - zi)).sum::<f64>();
            exps.iter().zip(t).map(|(e, ti)| (e / total - ti) / count).collect()
        })
        .collect();
    Ok((cost / count, errs))
}

/// `g / ||g||_2`; a zero block stays zero.
pub fn normalize_gradient(g: &[f64]) -> Vec<f64> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        g.to_vec()
    } else {
        g.iter().map(|v| v / norm).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Instances per batch; every iteration draws a fresh batch.
    pub batch_len: usize,
    pub lr0: f64,
    /// Standard deviation of the initial input mask.
    pub init_std_input_mask: f64,
    /// Standard deviation of the initial output mask.
    pub init_std_output_mask: f64,
    pub trainable: Vec<Block>,
    /// Restricts kernel updates to these lags; `None` trains every tap.
    pub kernel_lags: Option<Vec<usize>>,
    /// Entrywise bound on the effective kernel matrices `dt * W[k]` of
    /// trainable kernels, enforced after every step.
    pub weight_bound: Option<f64>,
    pub seed: u64,
    /// Noisy forward/backward repeats averaged per iteration.
    pub noise_repeats: usize,
    /// Physical duration of one plant time unit, for the log's time column.
    pub seconds_per_time_unit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_len: 100,
            lr0: 0.25,
            init_std_input_mask: 0.2f64.sqrt(),
            init_std_output_mask: 0.1f64.sqrt(),
            trainable: vec![Block::M, Block::U],
            kernel_lags: None,
            weight_bound: None,
            seed: 0,
            noise_repeats: 1,
            seconds_per_time_unit: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.batch_len < 3 {
            return Err(Error::Config("batch_len must be at least 3".into()));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be non-negative, got {}", self.lr0)));
        }
        for (name, v) in [
            ("init_std_input_mask", self.init_std_input_mask),
            ("init_std_output_mask", self.init_std_output_mask),
            ("seconds_per_time_unit", self.seconds_per_time_unit),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.noise_repeats == 0 {
            return Err(Error::Config("noise_repeats must be at least 1".into()));
        }
        if let Some(b) = self.weight_bound {
            if !(b > 0.0) {
                return Err(Error::Config("weight_bound must be positive".into()));
            }
        }
        Ok(())
    }

    /// `lr0 (1 - iter / iterations)`.
    pub fn learning_rate(&self, iter: usize) -> f64 {
        self.lr0 * (1.0 - iter as f64 / self.iterations as f64)
    }
}

/// Random initial masks for a plant and task, drawn with the configured
/// standard deviations. Biases start at zero.
pub fn init_masks(
    sys: &PhysicalSystem,
    task: &Task,
    period: usize,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<MaskSet> {
    let (dim_x, dim_y) = task.dims();
    MaskSet::random(
        sys.n_inputs(),
        dim_x,
        sys.n_outputs(),
        dim_y,
        period,
        cfg.init_std_input_mask,
        cfg.init_std_output_mask,
        rng,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub cost: f64,
    pub metric: f64,
    pub lr: f64,
    /// Cumulative simulated plant time spent measuring, in seconds.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub fn push(&mut self, r: LogRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.iter <= last.iter {
                return Err(Error::Constraint("log iterations must increase".into()));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    pub fn metrics(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.metric).collect()
    }

    /// `iter,cost,metric,lr,seconds`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(["iter", "cost", "metric", "lr", "seconds"])?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut log = Self::default();
        for rec in r.deserialize() {
            log.push(rec?)?;
        }
        Ok(log)
    }
}

/// Mean of consecutive non-overlapping windows of `values`; a trailing
/// partial window is dropped.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    values
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}

/// Parameters being trained, plus the log of the run so far.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub system: PhysicalSystem,
    pub masks: MaskSet,
    pub log: TrainingLog,
}

impl TrainState {
    pub fn new(system: PhysicalSystem, masks: MaskSet) -> Self {
        Self {
            system,
            masks,
            log: TrainingLog::default(),
        }
    }
}

/// Gradient for one batch averaged over `seeds.len()` noisy repeats, each
/// repeat using its own random stream. Repeats run in parallel; the
/// reduction order is fixed. Returns the mean cost, the outputs of the first
/// repeat and the mean gradient.
pub fn averaged_gradient(
    sys: &PhysicalSystem,
    masks: &MaskSet,
    batch: &SequenceDataset,
    cost: CostKind,
    seeds: &[u64],
    opts: PipelineOptions<'_>,
) -> Result<(f64, Vec<Vec<f64>>, GradientBundle)> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one repeat".into()));
    }
    let evals = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng: SimRng = seeded_rng(seed);
            evaluate_gradients(sys, masks, batch, cost, Some(&mut rng), opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let r = evals.len() as f64;
    let mut grads = GradientBundle::zeros_like(sys, masks);
    let mut total = 0.0;
    for e in &evals {
        grads.add_assign(&e.grads);
        total += e.cost;
    }
    grads.scale(1.0 / r);
    let outputs = evals.into_iter().next().map(|e| e.outputs).unwrap_or_default();
    Ok((total / r, outputs, grads))
}

/// Runs `cfg.iterations` steps of normalised gradient descent on `state`.
///
/// A non-finite cost stops the run with [`Error::Divergence`]; the records
/// of the completed iterations stay in `state.log`.
pub fn train(state: &mut TrainState, task: &Task, cfg: &TrainConfig, rng: &mut dyn RngCore) -> Result<()> {
    cfg.validate()?;
    state.system.validate()?;
    state.masks.validate()?;
    let (dim_x, dim_y) = task.dims();
    if state.masks.dim_x != dim_x || state.masks.dim_y != dim_y {
        return Err(Error::Dimension(format!(
            "masks map {}->{}, task needs {dim_x}->{dim_y}",
            state.masks.dim_x, state.masks.dim_y
        )));
    }
    let cost_kind = CostKind::for_task(task);
    let lags = cfg.kernel_lags.as_deref();
    let kernel_blocks: Vec<Block> = cfg.trainable.iter().copied().filter(|b| b.is_kernel()).collect();
    let opts = PipelineOptions {
        skip_kernels: kernel_blocks.is_empty(),
        kernel_lags: lags.map(|l| [Some(l); 4]),
        ..PipelineOptions::default()
    };
    let period = state.masks.period as f64;
    let mut seconds = state.log.records.last().map_or(0.0, |r| r.seconds);
    let start = state.log.records.last().map_or(0, |r| r.iter + 1);

    for it in 0..cfg.iterations {
        let lr = cfg.learning_rate(it);
        let batch = task.generate(cfg.batch_len, rng)?;
        let seeds: Vec<u64> = (0..cfg.noise_repeats).map(|_| rng.next_u64()).collect();
        let (cost, outputs, grads) =
            match averaged_gradient(&state.system, &state.masks, &batch, cost_kind, &seeds, opts) {
                Err(Error::Numeric(_)) => (
                    f64::NAN,
                    Vec::new(),
                    GradientBundle::zeros_like(&state.system, &state.masks),
                ),
                other => other?,
            };
        if !cost.is_finite() {
            return Err(Error::Divergence {
                iteration: start + it,
                cost,
            });
        }
        let metric = task.metric(&outputs, &batch).unwrap_or(f64::NAN);
        seconds += 2.0
            * cfg.noise_repeats as f64
            * batch.len() as f64
            * period
            * state.system.dt()
            * cfg.seconds_per_time_unit;

        if lr > 0.0 {
            for &b in &cfg.trainable {
                let g = normalize_gradient(&block_grad(&state.system, &grads, b));
                let mut p = block_params(&state.system, &state.masks, b);
                for (x, d) in p.iter_mut().zip(&g) {
                    *x -= lr * d;
                }
                if let (true, Some(bound)) = (b.is_kernel(), cfg.weight_bound) {
                    let lim = bound / state.system.dt();
                    p.iter_mut().for_each(|v| *v = v.clamp(-lim, lim));
                }
                set_block_params(&mut state.system, &mut state.masks, b, &p)?;
            }
        }
        state.log.push(LogRecord {
            iter: start + it,
            cost,
            metric,
            lr,
            seconds,
        })?;
    }
    Ok(())
}

/// Metric of the current parameters on a fresh sequence of `n` instances,
/// measured through the (possibly noisy) plant.
pub fn evaluate_metric(
    sys: &PhysicalSystem,
    masks: &MaskSet,
    task: &Task,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let data = task.generate(n, rng)?;
    let (_, ys) = crate::gradients::evaluate_cost(sys, masks, &data, CostKind::for_task(task), Some(rng))?;
    task.metric(&ys, &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::{finite_difference_gradient, random_toy, GradCheckConfig};
    use crate::signal::Kernel;
    use crate::system::Nonlinearity;
    use rand::Rng;

    fn rand_rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn mse_examples() {
        let p = vec![vec![1.0], vec![3.0]];
        let (c, e) = mse_cost(&p, &p, &[true, true]).unwrap();
        assert_eq!(c, 0.0);
        assert!(e.iter().flatten().all(|v| *v == 0.0));
        let (c, e) = mse_cost(&[vec![3.0]], &[vec![1.0]], &[true]).unwrap();
        assert_eq!((c, e[0][0]), (2.0, 2.0));
        let (_, e) = mse_cost(&[vec![3.0], vec![5.0]], &[vec![1.0], vec![0.0]], &[true, false]).unwrap();
        assert_eq!(e[1][0], 0.0);
        assert!(matches!(mse_cost(&p, &p, &[false, false]), Err(Error::Undefined(_))));
    }

    fn check_errs_by_fd(kind: CostKind, pred: &[Vec<f64>], target: &[Vec<f64>], mask: &[bool], tol: f64) {
        let d = pred[0].len();
        let flat: Vec<f64> = pred.iter().flatten().copied().collect();
        let fd = finite_difference_gradient(
            |p| {
                let rows: Vec<Vec<f64>> = p.chunks(d).map(<[f64]>::to_vec).collect();
                Ok(kind.evaluate(&rows, target, mask)?.0)
            },
            &flat,
            1e-6,
        )
        .unwrap();
        let (_, errs) = kind.evaluate(pred, target, mask).unwrap();
        for (a, b) in errs.iter().flatten().zip(&fd) {
            assert!((a - b).abs() < tol, "{a} vs {b}");
        }
    }

    #[test]
    fn cost_errors_match_finite_differences() {
        let mut rng = seeded_rng(1);
        let pred = rand_rows(&mut rng, 7, 3);
        let target = rand_rows(&mut rng, 7, 3);
        let mask = vec![true, false, true, true, true, false, true];
        check_errs_by_fd(CostKind::Mse, &pred, &target, &mask, 1e-8);
        check_errs_by_fd(CostKind::SumSquares, &pred, &target, &mask, 1e-8);
        let onehot: Vec<Vec<f64>> = (0..7)
            .map(|i| {
                let mut v = vec![0.0; 3];
                v[i % 3] = 1.0;
                v
            })
            .collect();
        check_errs_by_fd(CostKind::SoftmaxCe, &pred, &onehot, &mask, 1e-6);
    }

    #[test]
    fn softmax_examples() {
        let k = 5;
        let logits = vec![vec![0.3; k]; 4];
        let mut onehot = vec![vec![0.0; k]; 4];
        for (i, t) in onehot.iter_mut().enumerate() {
            t[i] = 1.0;
        }
        let (c, errs) = softmax_ce_cost(&logits, &onehot, &[true; 4]).unwrap();
        assert!((c - (k as f64).ln()).abs() < 1e-12);
        for e in &errs {
            assert!(e.iter().sum::<f64>().abs() < 1e-15);
        }
        // Huge logits stay finite.
        let (c, _) = softmax_ce_cost(&[vec![1000.0, -1000.0]], &[vec![0.0, 1.0]], &[true]).unwrap();
        assert!((c - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_gradient(&[3.0, 4.0]), vec![0.6, 0.8]);
        assert_eq!(normalize_gradient(&[0.0, 0.0]), vec![0.0, 0.0]);
        let g = normalize_gradient(&[1e-200, -3e-201, 7e-201]);
        let n: f64 = g.iter().map(|v| v * v).sum::<f64>();
        assert!(g.iter().all(|v| v.is_finite()));
        assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn learning_rate_decays_linearly() {
        let cfg = TrainConfig {
            iterations: 4,
            lr0: 1.0,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (0..4).map(|i| cfg.learning_rate(i)).collect();
        assert_eq!(lrs, vec![1.0, 0.75, 0.5, 0.25]);
    }

    fn small_problem(seed: u64) -> (TrainState, Task) {
        let kernel = Kernel::from_tap_matrices(1, 1, 1.0, &[vec![0.0], vec![0.4], vec![0.3], vec![0.2]]).unwrap();
        let plant = crate::models::make_acoustic_system(&kernel, 6).unwrap();
        let task = Task::VariableDelay { one_hot: false };
        let cfg = TrainConfig::default();
        let masks = init_masks(&plant.system, &task, plant.period, &cfg, &mut seeded_rng(seed)).unwrap();
        (TrainState::new(plant.system, masks), task)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (mut state, task) = small_problem(2);
        let before = (state.system.clone(), state.masks.clone());
        let cfg = TrainConfig {
            iterations: 5,
            batch_len: 20,
            lr0: 0.0,
            trainable: Block::ALL.to_vec(),
            ..TrainConfig::default()
        };
        train(&mut state, &task, &cfg, &mut seeded_rng(3)).unwrap();
        assert_eq!(state.system, before.0);
        assert_eq!(state.masks, before.1);
        assert_eq!(state.log.len(), 5);
    }

    #[test]
    fn small_step_is_a_descent_direction() {
        let mut rng = seeded_rng(4);
        for _ in 0..20 {
            let gc = GradCheckConfig {
                nonlinearity: Nonlinearity::Identity,
                ..GradCheckConfig::default()
            };
            let toy = random_toy(&gc, &mut rng).unwrap();
            let opts = PipelineOptions::default();
            let ev = evaluate_gradients(&toy.system, &toy.masks, &toy.batch, CostKind::Mse, None, opts).unwrap();
            let mut sys = toy.system.clone();
            let mut masks = toy.masks.clone();
            for b in Block::ALL {
                let g = normalize_gradient(&block_grad(&sys, &ev.grads, b));
                let mut p = block_params(&sys, &masks, b);
                p.iter_mut().zip(&g).for_each(|(x, d)| *x -= 1e-4 * d);
                set_block_params(&mut sys, &mut masks, b, &p).unwrap();
            }
            let after = crate::gradients::evaluate_cost(&sys, &masks, &toy.batch, CostKind::Mse, None)
                .unwrap()
                .0;
            assert!(after <= ev.cost, "{after} > {}", ev.cost);
        }
    }

    #[test]
    fn log_is_deterministic_and_csv_round_trips() {
        let cfg = TrainConfig {
            iterations: 10,
            batch_len: 20,
            ..TrainConfig::default()
        };
        let run = || {
            let (mut state, task) = small_problem(5);
            train(&mut state, &task, &cfg, &mut seeded_rng(6)).unwrap();
            let mut buf = Vec::new();
            state.log.write_csv(&mut buf).unwrap();
            buf
        };
        let a = run();
        assert_eq!(a, run());
        assert!(String::from_utf8(a.clone())
            .unwrap()
            .starts_with("iter,cost,metric,lr,seconds\n"));
        let back = TrainingLog::read_csv(a.as_slice()).unwrap();
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn log_rejects_non_increasing_iterations() {
        let mut log = TrainingLog::default();
        let r = LogRecord {
            iter: 3,
            cost: 0.0,
            metric: 0.0,
            lr: 0.0,
            seconds: 0.0,
        };
        log.push(r).unwrap();
        assert!(log.push(r).is_err());
    }

    #[test]
    fn divergence_keeps_the_log() {
        let (mut state, task) = small_problem(7);
        let cfg = TrainConfig {
            iterations: 3,
            batch_len: 10,
            ..TrainConfig::default()
        };
        train(&mut state, &task, &cfg, &mut seeded_rng(8)).unwrap();
        state.masks.u.iter_mut().for_each(|v| *v = f64::MAX);
        let err = train(&mut state, &task, &cfg, &mut seeded_rng(9)).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: 3, .. }), "{err}");
        assert_eq!(state.log.len(), 3);
    }

    #[test]
    fn identity_plant_learns_a_linear_delay_readout() {
        // Plant: unit-gain delay line of one period from input to output. The
        // target is the previous instance's input, so a linear readout of the
        // plant output solves it exactly.
        let p = 4;
        let dt = 1.0;
        let sys = PhysicalSystem::new(
            Kernel::identity(1, 0, dt),
            Kernel::zeros(1, 1, 1, dt),
            Kernel::delta(1, 1, &[1.0], p, dt).unwrap(),
            Kernel::zeros(1, 1, 1, dt),
            Nonlinearity::Identity,
        )
        .unwrap();
        let mut rng = seeded_rng(10);
        let masks = MaskSet::random(1, 1, 1, 1, p, 1.0, 0.3, &mut rng).unwrap();
        let mut state = TrainState::new(sys, masks);
        let cfg = TrainConfig {
            iterations: 500,
            batch_len: 50,
            lr0: 0.05,
            trainable: vec![Block::M, Block::U],
            ..TrainConfig::default()
        };
        struct Shift;
        impl Shift {
            fn data(n: usize, rng: &mut dyn RngCore) -> SequenceDataset {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let t: Vec<Vec<f64>> = (0..n).map(|i| vec![if i > 0 { x[i - 1] } else { 0.0 }]).collect();
                SequenceDataset::new(x.iter().map(|v| vec![*v]).collect(), t, (0..n).map(|i| i > 0).collect()).unwrap()
            }
        }
        // Drive the optimiser by hand with the shift task.
        for it in 0..cfg.iterations {
            let batch = Shift::data(cfg.batch_len, &mut rng);
            let ev = evaluate_gradients(
                &state.system,
                &state.masks,
                &batch,
                CostKind::Mse,
                None,
                PipelineOptions::default(),
            )
            .unwrap();
            for &b in &cfg.trainable {
                let g = normalize_gradient(&block_grad(&state.system, &ev.grads, b));
                let mut v = block_params(&state.system, &state.masks, b);
                v.iter_mut().zip(&g).for_each(|(x, d)| *x -= cfg.learning_rate(it) * d);
                set_block_params(&mut state.system, &mut state.masks, b, &v).unwrap();
            }
        }
        let test = Shift::data(400, &mut rng);
        let (_, ys) = crate::gradients::evaluate_cost(&state.system, &state.masks, &test, CostKind::Mse, None).unwrap();
        let err = crate::tasks::nrmse(&ys, &test.targets, &test.cost_mask).unwrap();
        // Closed-form oracle: the output equals sum_t U(t) M(t) x_{i-1}, so
        // the least-squares optimum is exact and the trained readout has to
        // approach it.
        let gain: f64 = (0..p).map(|t| state.masks.u[t] * state.masks.m[t]).sum();
        assert!((gain - 1.0).abs() < 0.1, "gain {gain}");
        assert!(err < 0.1, "nrmse {err}");
    }

    #[test]
    fn error_scale_does_not_change_normalised_gradients() {
        use crate::gradients::backprop_errors;
        use crate::masking::{decode_outputs, encode_inputs};
        use crate::system::forward;
        let toy = random_toy(&GradCheckConfig::default(), &mut seeded_rng(11)).unwrap();
        let s = encode_inputs(&toy.batch.inputs, &toy.masks, toy.system.dt()).unwrap();
        let fwd = forward(&toy.system, &s, None).unwrap();
        let ys = decode_outputs(&fwd.o, &toy.masks).unwrap();
        let (_, errs) = CostKind::Mse
            .evaluate(&ys, &toy.batch.targets, &toy.batch.cost_mask)
            .unwrap();
        let big: Vec<Vec<f64>> = errs.iter().map(|e| e.iter().map(|v| 100.0 * v).collect()).collect();
        let opts = PipelineOptions::default();
        let g1 = backprop_errors(&toy.system, &toy.masks, &toy.batch.inputs, &s, &fwd, &errs, None, opts).unwrap();
        let g2 = backprop_errors(&toy.system, &toy.masks, &toy.batch.inputs, &s, &fwd, &big, None, opts).unwrap();
        for b in Block::ALL {
            let a = normalize_gradient(g1.block(b));
            let c = normalize_gradient(g2.block(b));
            for (x, y) in a.iter().zip(&c) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn window_means_drop_partial_tail() {
        assert_eq!(window_means(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
        assert!(window_means(&[1.0], 0).is_empty());
    }
}
