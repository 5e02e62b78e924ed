//! Delta-kernel plants that behave exactly like dense feed-forward and
//! recurrent networks.
//!
//! A delta kernel carries a single non-zero tap `A / dt` at one lag, so the
//! convolution collapses to a matrix product with `A`. Paths that feed the
//! state loop use lag 1 instead of an instantaneous delta, because feedback
//! kernels must be strictly causal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::kernel_gradients;
use crate::signal::{matvec_acc, Kernel, Signal};
use crate::system::{backward, forward, Nonlinearity, PhysicalSystem};

/// A dense matrix in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "{} values do not form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        matvec_acc(&self.data, self.rows, self.cols, x, &mut y);
        y
    }

    pub fn mul_vec_t(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        for (r, xr) in x.iter().enumerate() {
            for (c, yc) in y.iter_mut().enumerate() {
                *yc += self.data[r * self.cols + c] * xr;
            }
        }
        y
    }
}

/// Feed-forward network `y = W_L f(W_{L-1} ... f(W_0 x))`. Hidden layers
/// use the activation, the readout is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub weights: Vec<Matrix>,
    pub activation: Nonlinearity,
}

impl DenseNet {
    pub fn new(weights: Vec<Matrix>, activation: Nonlinearity) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::Config("a network needs at least one hidden layer".into()));
        }
        for pair in weights.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(Error::Dimension("layer shapes do not chain".into()));
            }
        }
        activation.validate()?;
        Ok(Self { weights, activation })
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn n_inputs(&self) -> usize {
        self.weights[0].cols
    }

    pub fn n_outputs(&self) -> usize {
        self.weights[self.depth()].rows
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let l = self.depth();
        let mut h = x.to_vec();
        for w in &self.weights[..l] {
            h = w.mul_vec(&h).into_iter().map(|v| self.activation.apply(v).0).collect();
        }
        self.weights[l].mul_vec(&h)
    }
}

/// Stacks the hidden layers into one state vector. Input and inter-layer
/// paths are one-sample deltas, the readout is instantaneous, so a held
/// input reaches the output after exactly `depth + 1` samples.
pub fn build_mlp_system(net: &DenseNet, dt: f64) -> Result<PhysicalSystem> {
    let l = net.depth();
    let sizes: Vec<usize> = net.weights[..l].iter().map(|w| w.rows).collect();
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let na: usize = sizes.iter().sum();
    let (n, m) = (net.n_inputs(), net.n_outputs());

    let mut w_s = vec![0.0; na * n];
    place(&mut w_s, n, 0, 0, &net.weights[0]);
    let mut w_a = vec![0.0; na * na];
    for j in 1..l {
        place(&mut w_a, na, offsets[j], offsets[j - 1], &net.weights[j]);
    }
    let mut w_o = vec![0.0; m * na];
    place(&mut w_o, na, 0, offsets[l - 1], &net.weights[l]);

    PhysicalSystem::new(
        Kernel::delta(na, n, &w_s, 1, dt)?,
        Kernel::delta(na, na, &w_a, 1, dt)?,
        Kernel::zeros(1, m, n, dt),
        Kernel::delta(m, na, &w_o, 0, dt)?,
        net.activation,
    )
}

fn place(dst: &mut [f64], dst_cols: usize, row0: usize, col0: usize, block: &Matrix) {
    for r in 0..block.rows {
        for c in 0..block.cols {
            dst[(row0 + r) * dst_cols + col0 + c] = block.data[r * block.cols + c];
        }
    }
}

/// Elman-style recurrent network `a_k = f(W_s s_k + W_a a_{k-1})`,
/// `o_k = W_o a_k`, stepped once every `period` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseRNN {
    pub w_s: Matrix,
    pub w_a: Matrix,
    pub w_o: Matrix,
    pub activation: Nonlinearity,
    pub period: usize,
}

/// States and outputs of a dense RNN run.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnTrace {
    pub pre: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl DenseRNN {
    pub fn new(w_s: Matrix, w_a: Matrix, w_o: Matrix, activation: Nonlinearity, period: usize) -> Result<Self> {
        if w_a.rows != w_a.cols {
            return Err(Error::Dimension("recurrent matrix must be square".into()));
        }
        if w_s.rows != w_a.rows || w_o.cols != w_a.rows {
            return Err(Error::Dimension("RNN matrices do not chain".into()));
        }
        if period == 0 {
            return Err(Error::Config("update period must be at least one sample".into()));
        }
        activation.validate()?;
        Ok(Self {
            w_s,
            w_a,
            w_o,
            activation,
            period,
        })
    }

    pub fn run(&self, inputs: &[Vec<f64>]) -> RnnTrace {
        let mut a = vec![0.0; self.w_a.rows];
        let mut trace = RnnTrace {
            pre: Vec::new(),
            states: Vec::new(),
            outputs: Vec::new(),
        };
        for s in inputs {
            let mut x = self.w_s.mul_vec(s);
            x.iter_mut().zip(self.w_a.mul_vec(&a)).for_each(|(v, f)| *v += f);
            a = x.iter().map(|v| self.activation.apply(*v).0).collect();
            trace.outputs.push(self.w_o.mul_vec(&a));
            trace.pre.push(x);
            trace.states.push(a.clone());
        }
        trace
    }

    /// Gradients of `C = 1/2 sum_k ||o_k - y_k||^2` with respect to
    /// `(W_s, W_a, W_o)` by backpropagation through time.
    pub fn bptt(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> [Vec<f64>; 3] {
        let tr = self.run(inputs);
        let (na, n, m) = (self.w_a.rows, self.w_s.cols, self.w_o.rows);
        let mut g_s = vec![0.0; na * n];
        let mut g_a = vec![0.0; na * na];
        let mut g_o = vec![0.0; m * na];
        let mut carry = vec![0.0; na];
        for k in (0..inputs.len()).rev() {
            let e: Vec<f64> = tr.outputs[k].iter().zip(&targets[k]).map(|(o, y)| o - y).collect();
            for r in 0..m {
                for c in 0..na {
                    g_o[r * na + c] += e[r] * tr.states[k][c];
                }
            }
            let mut da = self.w_o.mul_vec_t(&e);
            da.iter_mut().zip(&carry).for_each(|(d, c)| *d += c);
            let dx: Vec<f64> = da
                .iter()
                .zip(&tr.pre[k])
                .map(|(d, x)| if self.activation.apply(*x).1 { *d } else { 0.0 })
                .collect();
            for r in 0..na {
                for c in 0..n {
                    g_s[r * n + c] += dx[r] * inputs[k][c];
                }
                if k > 0 {
                    for c in 0..na {
                        g_a[r * na + c] += dx[r] * tr.states[k - 1][c];
                    }
                }
            }
            carry = self.w_a.mul_vec_t(&dx);
        }
        [g_s, g_a, g_o]
    }
}

/// `W_sa` and `W_ao` instantaneous, `W_aa` a delta at the update period.
/// Inputs must be held for `period` samples per step; the plant state at
/// sample `k * period` then equals the dense state after step `k`.
pub fn build_rnn_system(rnn: &DenseRNN, dt: f64) -> Result<PhysicalSystem> {
    let (na, n, m) = (rnn.w_a.rows, rnn.w_s.cols, rnn.w_o.rows);
    PhysicalSystem::new(
        Kernel::delta(na, n, &rnn.w_s.data, 0, dt)?,
        Kernel::delta(na, na, &rnn.w_a.data, rnn.period, dt)?,
        Kernel::zeros(1, m, n, dt),
        Kernel::delta(m, na, &rnn.w_o.data, 0, dt)?,
        rnn.activation,
    )
}

/// Piecewise-constant signal holding each input for `hold` samples.
pub fn hold_inputs(inputs: &[Vec<f64>], hold: usize, dt: f64) -> Result<Signal> {
    let ch = inputs.first().map_or(0, Vec::len);
    if ch == 0 || hold == 0 {
        return Err(Error::Dimension("need non-empty inputs and a positive hold".into()));
    }
    let mut data = Vec::with_capacity(inputs.len() * hold * ch);
    for x in inputs {
        if x.len() != ch {
            return Err(Error::Dimension("inputs differ in width".into()));
        }
        for _ in 0..hold {
            data.extend_from_slice(x);
        }
    }
    Signal::new(ch, dt, data)
}

/// Dense matrices read back from a delta-kernel RNN plant, as
/// `(W_s, W_a, W_o)` with the given update period.
pub fn rnn_matrices(sys: &PhysicalSystem, period: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dt = sys.dt();
    let scale = |v: &[f64]| v.iter().map(|x| x * dt).collect::<Vec<f64>>();
    (
        scale(sys.w_sa().tap(0)),
        scale(sys.w_aa().tap(period)),
        scale(sys.w_ao().tap(0)),
    )
}

/// `max |a - b| / (1 + |b|)` over entries.
pub fn max_scaled_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs() / (1.0 + y.abs())))
}

/// Worst errors seen by [`reduce_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    pub instances: usize,
    pub tolerance: f64,
    pub mlp_forward: f64,
    pub rnn_forward: f64,
    pub rnn_gradient: f64,
}

impl ReductionReport {
    pub fn passed(&self) -> bool {
        self.mlp_forward < self.tolerance && self.rnn_forward < self.tolerance && self.rnn_gradient < self.tolerance
    }

    pub fn to_text(&self) -> String {
        let line = |name: &str, v: f64| {
            format!(
                "  {name:<13} max_err={v:.3e} {}\n",
                if v < self.tolerance { "PASS" } else { "FAIL" }
            )
        };
        format!(
            "reduction check: {} instance(s) each, tolerance {:e}\n{}{}{}overall: {}\n",
            self.instances,
            self.tolerance,
            line("mlp_forward", self.mlp_forward),
            line("rnn_forward", self.rnn_forward),
            line("rnn_gradient", self.rnn_gradient),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn uniform_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
    Matrix {
        rows: r,
        cols: c,
        data: (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// One random MLP against its plant; the plant kernels carry extra
/// all-zero taps. Returns the worst settled-output error.
pub fn mlp_equivalence(rng: &mut impl Rng) -> Result<f64> {
    let depth = rng.random_range(1..=4);
    let mut dims: Vec<usize> = (0..=depth + 1).map(|_| rng.random_range(1..=6)).collect();
    dims[0] = rng.random_range(1..=6);
    let weights: Vec<Matrix> = (0..=depth).map(|j| uniform_matrix(rng, dims[j + 1], dims[j])).collect();
    let net = DenseNet::new(weights, Nonlinearity::Rectifier)?;
    let dt = [1.0, 0.5, 0.1][rng.random_range(0..3)];
    let sys = build_mlp_system(&net, dt)?;
    let extra = rng.random_range(0..4);
    let sys = pad_kernels(&sys, extra)?;
    let xs: Vec<Vec<f64>> = (0..rng.random_range(1..=5))
        .map(|_| (0..net.n_inputs()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let hold = depth + 1;
    let o = forward(&sys, &hold_inputs(&xs, hold, dt)?, None)?.o;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, x)| max_scaled_error(o.sample(i * hold + hold - 1), &net.evaluate(x)))
        .fold(0.0, f64::max))
}

fn pad_kernels(sys: &PhysicalSystem, extra: usize) -> Result<PhysicalSystem> {
    let pad = |k: &Kernel| k.padded_to(k.len() + extra);
    sys.with_kernels(pad(sys.w_sa()), pad(sys.w_aa()), pad(sys.w_so()), pad(sys.w_ao()))
}

/// One random RNN against its plant: worst state/output error and worst
/// gradient error against dense BPTT.
pub fn rnn_equivalence(rng: &mut impl Rng) -> Result<(f64, f64)> {
    let (na, n, m) = (
        rng.random_range(1..=6),
        rng.random_range(1..=6),
        rng.random_range(1..=6),
    );
    let period = rng.random_range(1..=4);
    let steps = rng.random_range(2..=40 / period);
    let scale = 1.2 / (na as f64).sqrt();
    let mut w_a = uniform_matrix(rng, na, na);
    w_a.data.iter_mut().for_each(|v| *v *= scale);
    let rnn = DenseRNN::new(
        uniform_matrix(rng, na, n),
        w_a,
        uniform_matrix(rng, m, na),
        Nonlinearity::Rectifier,
        period,
    )?;
    let dt = [1.0, 0.5, 0.25][rng.random_range(0..3)];
    let inputs: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let sys = pad_kernels(&build_rnn_system(&rnn, dt)?, rng.random_range(0..3))?;
    let s = hold_inputs(&inputs, period, dt)?;
    let fwd = forward(&sys, &s, None)?;
    let tr = rnn.run(&inputs);
    let mut fwd_err: f64 = 0.0;
    let mut e_o = Signal::zeros(m, s.len(), dt);
    for k in 0..steps {
        let i = k * period;
        fwd_err = fwd_err
            .max(max_scaled_error(fwd.a.sample(i), &tr.states[k]))
            .max(max_scaled_error(fwd.o.sample(i), &tr.outputs[k]));
        for r in 0..m {
            e_o.sample_mut(i)[r] = fwd.o.get(r, i) - targets[k][r];
        }
    }
    let bwd = backward(&sys, &fwd, &e_o, None)?;
    let [g_sa, g_aa, _, g_ao] = kernel_gradients(&sys, &fwd, &bwd, &e_o, &s)?;
    let tap = |g: &[f64], lag: usize, size: usize| {
        g[lag * size..(lag + 1) * size]
            .iter()
            .map(|v| v / dt)
            .collect::<Vec<f64>>()
    };
    let [d_s, d_a, d_o] = rnn.bptt(&inputs, &targets);
    let grad_err = max_scaled_error(&tap(&g_sa, 0, na * n), &d_s)
        .max(max_scaled_error(&tap(&g_aa, period, na * na), &d_a))
        .max(max_scaled_error(&tap(&g_ao, 0, m * na), &d_o));
    Ok((fwd_err, grad_err))
}

/// Runs `instances` random MLPs and RNNs (dimensions up to 6, sequences up
/// to 40 samples) against their dense references. Instance `j` uses its own
/// stream derived from `seed`, so results do not depend on thread count.
pub fn reduce_check(instances: usize, seed: u64, tolerance: f64) -> Result<ReductionReport> {
    use rayon::prelude::*;
    let results = (0..instances)
        .into_par_iter()
        .map(|j| {
            let mut rng = crate::seeded_rng(seed.wrapping_add(j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mlp = mlp_equivalence(&mut rng)?;
            let (f, g) = rnn_equivalence(&mut rng)?;
            Ok((mlp, f, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = results.iter().fold((0.0f64, 0.0f64, 0.0f64), |w, r| {
        (w.0.max(r.0), w.1.max(r.1), w.2.max(r.2))
    });
    Ok(ReductionReport {
        instances,
        tolerance,
        mlp_forward: worst.0,
        rnn_forward: worst.1,
        rnn_gradient: worst.2,
    })
}
