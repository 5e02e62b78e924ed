//! The feedback plant: forward simulation and the physical backward pass.
//!
//! Forward, sample by sample:
//!
//! ```text
//! x[i] = (W_sa * s)[i] + (W_aa * a)[i]      pre-activation
//! a[i] = f(x[i])
//! o[i] = (W_so * s)[i] + (W_ao * a)[i]
//! ```
//!
//! Backward, from the last sample to the first, with the transposed kernels
//! applied anti-causally and the recorded Jacobian switch:
//!
//! ```text
//! e_a[i] = J[i] (W_ao^T * e_o + W_aa^T * e_a)[i]
//! e_s    = W_so^T * e_o + W_sa^T * e_a
//! ```
//!
//! `W_aa` must have an exactly zero tap at lag 0, which keeps both
//! recursions explicit.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{add_measurement_noise, NoiseModel};
use crate::signal::{adjoint_convolve, convolve, matvec_acc, matvec_t_acc, Kernel, Signal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `max(0, x)`.
    Rectifier,
    /// Truncation to `[lo, hi]`.
    Clip {
        lo: f64,
        hi: f64,
    },
    Identity,
}

impl Nonlinearity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Nonlinearity::Clip { lo, hi } if !(lo < hi) => {
                Err(Error::Config(format!("clip bounds need lo < hi, got [{lo}, {hi}]")))
            }
            _ => Ok(()),
        }
    }

    /// Value and Jacobian switch. The switch is closed only where `f` is
    /// locally the identity; kinks count as open.
    #[inline]
    pub fn apply(&self, x: f64) -> (f64, bool) {
        match *self {
            Nonlinearity::Rectifier => {
                if x > 0.0 {
                    (x, true)
                } else {
                    (0.0, false)
                }
            }
            Nonlinearity::Clip { lo, hi } => {
                if x <= lo {
                    (lo, false)
                } else if x >= hi {
                    (hi, false)
                } else {
                    (x, true)
                }
            }
            Nonlinearity::Identity => (x, true),
        }
    }

    /// Distance from `x` to the nearest non-differentiable point.
    pub fn kink_distance(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Rectifier => x.abs(),
            Nonlinearity::Clip { lo, hi } => (x - lo).abs().min((x - hi).abs()),
            Nonlinearity::Identity => f64::INFINITY,
        }
    }
}

/// Elementwise nonlinearity with its binary Jacobian diagonal.
pub fn apply_nonlinearity(f: Nonlinearity, x: &[f64]) -> (Vec<f64>, Vec<bool>) {
    x.iter().map(|&v| f.apply(v)).unzip()
}

/// How the injected output error is conditioned on its way into the plant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BackwardPath {
    /// Rescale the injected error so its peak amplitude equals this value.
    /// The recorded errors are scaled back afterwards.
    pub peak: Option<f64>,
    /// Truncation the state nodes apply to the error they re-emit.
    pub clip: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSystem {
    w_sa: Kernel,
    w_aa: Kernel,
    w_so: Kernel,
    w_ao: Kernel,
    f: Nonlinearity,
    noise: Option<NoiseModel>,
    #[serde(default)]
    backward_path: BackwardPath,
}

impl PhysicalSystem {
    /// Builds and validates a plant. Shapes: `w_sa` is `N_a x N`, `w_aa` is
    /// `N_a x N_a`, `w_so` is `M x N`, `w_ao` is `M x N_a`.
    pub fn new(w_sa: Kernel, w_aa: Kernel, w_so: Kernel, w_ao: Kernel, f: Nonlinearity) -> Result<Self> {
        let sys = Self {
            w_sa,
            w_aa,
            w_so,
            w_ao,
            f,
            noise: None,
            backward_path: BackwardPath::default(),
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn with_noise(mut self, noise: Option<NoiseModel>) -> Result<Self> {
        if let Some(n) = &noise {
            n.validate()?;
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn with_backward_path(mut self, path: BackwardPath) -> Result<Self> {
        if let Some(p) = path.peak {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Config(format!("backward peak must be positive, got {p}")));
            }
        }
        if let Some((lo, hi)) = path.clip {
            if !(lo < hi) {
                return Err(Error::Config("backward clip needs lo < hi".into()));
            }
        }
        self.backward_path = path;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.f.validate()?;
        let dt = self.w_sa.dt();
        for (name, k) in self.kernels() {
            if k.dt() != dt {
                return Err(Error::Config(format!("kernel {name} has a different sample period")));
            }
        }
        let n = self.w_sa.cols();
        let na = self.w_sa.rows();
        let m = self.w_so.rows();
        let shapes = [
            ("w_aa", &self.w_aa, na, na),
            ("w_so", &self.w_so, m, n),
            ("w_ao", &self.w_ao, m, na),
        ];
        for (name, k, r, c) in shapes {
            if k.rows() != r || k.cols() != c {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    k.rows(),
                    k.cols()
                )));
            }
        }
        if self.w_aa.tap(0).iter().any(|v| *v != 0.0) {
            return Err(Error::Config(
                "w_aa has a nonzero tap at lag 0; feedback must be strictly causal".into(),
            ));
        }
        Ok(())
    }

    pub fn kernels(&self) -> [(&'static str, &Kernel); 4] {
        [
            ("w_sa", &self.w_sa),
            ("w_aa", &self.w_aa),
            ("w_so", &self.w_so),
            ("w_ao", &self.w_ao),
        ]
    }

    pub fn w_sa(&self) -> &Kernel {
        &self.w_sa
    }
    pub fn w_aa(&self) -> &Kernel {
        &self.w_aa
    }
    pub fn w_so(&self) -> &Kernel {
        &self.w_so
    }
    pub fn w_ao(&self) -> &Kernel {
        &self.w_ao
    }
    pub fn nonlinearity(&self) -> Nonlinearity {
        self.f
    }
    pub fn noise(&self) -> Option<&NoiseModel> {
        self.noise.as_ref()
    }
    pub fn backward_path(&self) -> BackwardPath {
        self.backward_path
    }

    /// Replaces the four kernels, keeping nonlinearity, noise and backward
    /// path, and re-validates.
    pub fn with_kernels(&self, w_sa: Kernel, w_aa: Kernel, w_so: Kernel, w_ao: Kernel) -> Result<Self> {
        let sys = Self {
            w_sa,
            w_aa,
            w_so,
            w_ao,
            ..self.clone()
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn n_inputs(&self) -> usize {
        self.w_sa.cols()
    }
    pub fn n_states(&self) -> usize {
        self.w_sa.rows()
    }
    pub fn n_outputs(&self) -> usize {
        self.w_so.rows()
    }
    pub fn dt(&self) -> f64 {
        self.w_sa.dt()
    }
}

/// Everything recorded during a forward run.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Pre-activation `x`, kept for kink-distance checks.
    pub pre: Signal,
    /// Measured state (noisy when forward noise is on).
    pub a: Signal,
    /// Measured output.
    pub o: Signal,
    /// Jacobian switch, sample-major `N_a x n`.
    pub jac: Vec<bool>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn jac(&self, state: usize, i: usize) -> bool {
        self.jac[i * self.a.channels() + state]
    }

    /// Smallest distance of any pre-activation to a kink of `f`.
    pub fn min_kink_distance(&self, f: Nonlinearity) -> f64 {
        self.pre
            .as_slice()
            .iter()
            .fold(f64::INFINITY, |m, &x| m.min(f.kink_distance(x)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardTrace {
    pub e_a: Signal,
    pub e_s: Signal,
}

/// Runs the plant forward. Noise is added to the measured `a` and `o` only
/// when the plant has a forward noise model and `rng` is given.
pub fn forward(sys: &PhysicalSystem, s: &Signal, rng: Option<&mut dyn RngCore>) -> Result<ForwardTrace> {
    sys.validate()?;
    if s.channels() != sys.n_inputs() {
        return Err(Error::Dimension(format!(
            "input has {} channels, plant expects {}",
            s.channels(),
            sys.n_inputs()
        )));
    }
    if s.dt() != sys.dt() {
        return Err(Error::Config("input sample period differs from the plant's".into()));
    }
    let n = s.len();
    let na = sys.n_states();
    let dt = sys.dt();
    let mut pre = convolve(&sys.w_sa, s)?.into_vec();
    let mut a = vec![0.0; n * na];
    let mut jac = vec![false; n * na];
    let lags = sys.w_aa.active_lags();
    let mut fb = vec![0.0; na];
    for i in 0..n {
        let (past, rest) = a.split_at_mut(i * na);
        let x = &mut pre[i * na..(i + 1) * na];
        fb.iter_mut().for_each(|v| *v = 0.0);
        for &k in lags.iter().take_while(|&&k| k <= i) {
            let src = &past[(i - k) * na..(i - k + 1) * na];
            matvec_acc(sys.w_aa.tap(k), na, na, src, &mut fb);
        }
        for (c, xv) in x.iter_mut().enumerate() {
            *xv += dt * fb[c];
            let (v, j) = sys.f.apply(*xv);
            rest[c] = v;
            jac[i * na + c] = j;
        }
    }
    let pre = Signal::from_raw(na, dt, pre);
    let mut a = Signal::from_raw(na, dt, a);
    let mut o = convolve(&sys.w_so, s)?;
    o.add_assign(&convolve(&sys.w_ao, &a)?);
    if let (Some(noise), Some(rng)) = (sys.noise.as_ref().filter(|n| n.forward), rng) {
        a = add_measurement_noise(&a, noise.snr_db, rng)?;
        o = add_measurement_noise(&o, noise.snr_db, rng)?;
    }
    Ok(ForwardTrace { pre, a, o, jac })
}

/// Debug switches for the backward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BackwardOptions {
    /// Feed the state error back through `W_aa` instead of `W_aa^T`.
    /// Only useful as a negative control for gradient checks.
    pub break_adjoint: bool,
}

/// Plays the output error backward through the plant.
pub fn backward(
    sys: &PhysicalSystem,
    trace: &ForwardTrace,
    e_o: &Signal,
    rng: Option<&mut dyn RngCore>,
) -> Result<BackwardTrace> {
    backward_with(sys, trace, e_o, rng, BackwardOptions::default())
}

pub fn backward_with(
    sys: &PhysicalSystem,
    trace: &ForwardTrace,
    e_o: &Signal,
    rng: Option<&mut dyn RngCore>,
    opts: BackwardOptions,
) -> Result<BackwardTrace> {
    let n = trace.len();
    let na = sys.n_states();
    if e_o.len() != n || trace.o.len() != n {
        return Err(Error::Dimension(format!(
            "error signal has {} samples, forward trace {}",
            e_o.len(),
            n
        )));
    }
    if e_o.channels() != sys.n_outputs() || trace.a.channels() != na {
        return Err(Error::Dimension("error signal does not match the plant outputs".into()));
    }
    let dt = sys.dt();

    let scale = match sys.backward_path.peak {
        Some(peak) => {
            let m = e_o.max_abs();
            if m > 0.0 {
                peak / m
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let injected = if scale == 1.0 { e_o.clone() } else { e_o.scaled(scale) };

    let mut e_a = adjoint_convolve(&sys.w_ao, &injected)?.into_vec();
    let lags = sys.w_aa.active_lags();
    let clip = sys.backward_path.clip;
    let mut fb = vec![0.0; na];
    for i in (0..n).rev() {
        let (head, future) = e_a.split_at_mut((i + 1) * na);
        let cur = &mut head[i * na..];
        fb.iter_mut().for_each(|v| *v = 0.0);
        for &k in lags.iter().take_while(|&&k| i + k < n) {
            let src = &future[(k - 1) * na..k * na];
            if opts.break_adjoint {
                matvec_acc(sys.w_aa.tap(k), na, na, src, &mut fb);
            } else {
                matvec_t_acc(sys.w_aa.tap(k), na, na, src, &mut fb);
            }
        }
        for (c, v) in cur.iter_mut().enumerate() {
            let mut val = if trace.jac[i * na + c] { *v + dt * fb[c] } else { 0.0 };
            if let Some((lo, hi)) = clip {
                val = val.clamp(lo, hi);
            }
            *v = val;
        }
    }
    let mut e_a = Signal::from_raw(na, dt, e_a);
    let mut e_s = adjoint_convolve(&sys.w_so, &injected)?;
    e_s.add_assign(&adjoint_convolve(&sys.w_sa, &e_a)?);
    if let (Some(noise), Some(rng)) = (sys.noise.as_ref().filter(|n| n.backward), rng) {
        e_a = add_measurement_noise(&e_a, noise.snr_db, rng)?;
        e_s = add_measurement_noise(&e_s, noise.snr_db, rng)?;
    }
    if scale != 1.0 {
        e_a = e_a.scaled(1.0 / scale);
        e_s = e_s.scaled(1.0 / scale);
    }
    Ok(BackwardTrace { e_a, e_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    fn rand_kernel(rng: &mut impl Rng, l: usize, r: usize, c: usize, dt: f64, scale: f64) -> Kernel {
        Kernel::new(
            r,
            c,
            dt,
            (0..l * r * c).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn random_system(rng: &mut impl Rng, f: Nonlinearity, dt: f64) -> PhysicalSystem {
        let (n, na, m, l) = (2, 3, 2, 4);
        let w_aa = rand_kernel(rng, l, na, na, dt, 0.3 / dt);
        let w_aa = w_aa.with_tap(0, &vec![0.0; na * na]).unwrap();
        PhysicalSystem::new(
            rand_kernel(rng, l, na, n, dt, 1.0 / dt),
            w_aa,
            rand_kernel(rng, l, m, n, dt, 1.0 / dt),
            rand_kernel(rng, l, m, na, dt, 1.0 / dt),
            f,
        )
        .unwrap()
    }

    fn random_signal(rng: &mut impl Rng, ch: usize, n: usize, dt: f64) -> Signal {
        Signal::new(ch, dt, (0..ch * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Naive recursion written against the per-sample definition, with
    /// explicit sums over every lag.
    fn naive_forward(sys: &PhysicalSystem, s: &Signal) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = s.len();
        let dt = sys.dt();
        let (na, m, ni) = (sys.n_states(), sys.n_outputs(), sys.n_inputs());
        let mut a = vec![vec![0.0; na]; n];
        let mut o = vec![vec![0.0; m]; n];
        for i in 0..n {
            let mut x = vec![0.0; na];
            for r in 0..na {
                for k in 0..=i {
                    if k < sys.w_sa().len() {
                        for c in 0..ni {
                            x[r] += dt * sys.w_sa().tap(k)[r * ni + c] * s.get(c, i - k);
                        }
                    }
                    if k >= 1 && k < sys.w_aa().len() {
                        for c in 0..na {
                            x[r] += dt * sys.w_aa().tap(k)[r * na + c] * a[i - k][c];
                        }
                    }
                }
            }
            for r in 0..na {
                a[i][r] = sys.nonlinearity().apply(x[r]).0;
            }
            for r in 0..m {
                for k in 0..=i {
                    if k < sys.w_so().len() {
                        for c in 0..ni {
                            o[i][r] += dt * sys.w_so().tap(k)[r * ni + c] * s.get(c, i - k);
                        }
                    }
                    if k < sys.w_ao().len() {
                        for c in 0..na {
                            o[i][r] += dt * sys.w_ao().tap(k)[r * na + c] * a[i - k][c];
                        }
                    }
                }
            }
        }
        (a, o)
    }

    #[test]
    fn nonlinearity_examples() {
        let (v, j) = apply_nonlinearity(Nonlinearity::Rectifier, &[2.0, -1.0, 0.0]);
        assert_eq!(v, vec![2.0, 0.0, 0.0]);
        assert_eq!(j, vec![true, false, false]);
        let (v, j) = apply_nonlinearity(Nonlinearity::Clip { lo: -1.0, hi: 1.0 }, &[0.5, 1.5, -3.0]);
        assert_eq!(v, vec![0.5, 1.0, -1.0]);
        assert_eq!(j, vec![true, false, false]);
        let (v, j) = apply_nonlinearity(Nonlinearity::Identity, &[4.0, -7.5]);
        assert_eq!(v, vec![4.0, -7.5]);
        assert!(j.iter().all(|&b| b));
        assert!(Nonlinearity::Clip { lo: 1.0, hi: 1.0 }.validate().is_err());
    }

    #[test]
    fn rejects_instantaneous_feedback() {
        let k = Kernel::identity(1, 0, 1.0);
        let err = PhysicalSystem::new(k.clone(), k.clone(), k.clone(), k, Nonlinearity::Identity);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let err = PhysicalSystem::new(
            Kernel::zeros(2, 3, 2, 1.0),
            Kernel::zeros(2, 2, 2, 1.0),
            Kernel::zeros(2, 1, 2, 1.0),
            Kernel::zeros(2, 1, 3, 1.0),
            Nonlinearity::Identity,
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn one_hidden_layer_network() {
        // Delta kernels for W_sa and W_ao and no feedback reduce the plant
        // to o = W_a f(W_s s).
        let dt = 0.01;
        let w_s = [1.0, -2.0, 0.5, 0.25, 3.0, -1.0]; // 3x2
        let w_a = [0.5, -1.0, 2.0]; // 1x3
        let sys = PhysicalSystem::new(
            Kernel::delta(3, 2, &w_s, 0, dt).unwrap(),
            Kernel::zeros(2, 3, 3, dt),
            Kernel::zeros(1, 1, 2, dt),
            Kernel::delta(1, 3, &w_a, 0, dt).unwrap(),
            Nonlinearity::Identity,
        )
        .unwrap();
        let mut rng = seeded_rng(11);
        let s = random_signal(&mut rng, 2, 10, dt);
        let tr = forward(&sys, &s, None).unwrap();
        for i in 0..10 {
            let x = s.sample(i);
            let h: Vec<f64> = (0..3).map(|r| w_s[2 * r] * x[0] + w_s[2 * r + 1] * x[1]).collect();
            let o: f64 = (0..3).map(|r| w_a[r] * h[r]).sum();
            assert!((tr.o.get(0, i) - o).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_rectifier_stays_at_rest() {
        let mut rng = seeded_rng(12);
        let sys = random_system(&mut rng, Nonlinearity::Rectifier, 1.0);
        let tr = forward(&sys, &Signal::zeros(2, 30, 1.0), None).unwrap();
        assert!(tr.a.as_slice().iter().all(|v| *v == 0.0));
        assert!(tr.o.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_matches_naive_recursion() {
        let mut rng = seeded_rng(13);
        for f in [
            Nonlinearity::Rectifier,
            Nonlinearity::Identity,
            Nonlinearity::Clip { lo: -0.5, hi: 0.7 },
        ] {
            let sys = random_system(&mut rng, f, 0.1);
            let s = random_signal(&mut rng, 2, 30, 0.1);
            let tr = forward(&sys, &s, None).unwrap();
            let (a, o) = naive_forward(&sys, &s);
            for i in 0..30 {
                for r in 0..3 {
                    assert!((tr.a.get(r, i) - a[i][r]).abs() < 1e-10);
                }
                for r in 0..2 {
                    assert!((tr.o.get(r, i) - o[i][r]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_error_gives_zero_backward() {
        let mut rng = seeded_rng(14);
        let sys = random_system(&mut rng, Nonlinearity::Rectifier, 1.0);
        let s = random_signal(&mut rng, 2, 25, 1.0);
        let tr = forward(&sys, &s, None).unwrap();
        let bw = backward(&sys, &tr, &Signal::zeros(2, 25, 1.0), None).unwrap();
        assert!(bw.e_a.as_slice().iter().all(|v| *v == 0.0));
        assert!(bw.e_s.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_feedforward_backward_factorizes() {
        let mut rng = seeded_rng(15);
        let dt = 0.5;
        let sys = random_system(&mut rng, Nonlinearity::Identity, dt);
        let sys = sys
            .with_kernels(
                sys.w_sa().clone(),
                Kernel::zeros(1, 3, 3, dt),
                sys.w_so().clone(),
                sys.w_ao().clone(),
            )
            .unwrap();
        let s = random_signal(&mut rng, 2, 20, dt);
        let e_o = random_signal(&mut rng, 2, 20, dt);
        let tr = forward(&sys, &s, None).unwrap();
        let bw = backward(&sys, &tr, &e_o, None).unwrap();
        let chain = adjoint_convolve(sys.w_ao(), &e_o).unwrap();
        let expected = adjoint_convolve(sys.w_sa(), &chain)
            .unwrap()
            .add(&adjoint_convolve(sys.w_so(), &e_o).unwrap())
            .unwrap();
        for (a, b) in bw.e_s.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let mut rng = seeded_rng(16);
        let dt = 0.2;
        let sys = random_system(&mut rng, Nonlinearity::Rectifier, dt);
        let s = random_signal(&mut rng, 2, 30, dt);
        let target = random_signal(&mut rng, 2, 30, dt);
        let cost = |s: &Signal| {
            let o = forward(&sys, s, None).unwrap().o;
            0.5 * o
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        let tr = forward(&sys, &s, None).unwrap();
        assert!(tr.min_kink_distance(sys.nonlinearity()) > 1e-3);
        let e_o = Signal::new(
            2,
            dt,
            tr.o.as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(a, b)| a - b)
                .collect(),
        )
        .unwrap();
        let bw = backward(&sys, &tr, &e_o, None).unwrap();
        let eps = 1e-5;
        let mut fd = Vec::new();
        for j in 0..s.as_slice().len() {
            let mut p = s.clone();
            p.as_mut_slice()[j] += eps;
            let mut q = s.clone();
            q.as_mut_slice()[j] -= eps;
            fd.push((cost(&p) - cost(&q)) / (2.0 * eps));
        }
        let num: f64 = fd
            .iter()
            .zip(bw.e_s.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 1e-6, "relative error {}", num / den);
    }

    #[test]
    fn deterministic_for_equal_seeds() {
        let mut rng = seeded_rng(17);
        let sys = random_system(&mut rng, Nonlinearity::Rectifier, 1.0)
            .with_noise(Some(NoiseModel::new(18.0)))
            .unwrap();
        let s = random_signal(&mut rng, 2, 40, 1.0);
        let mut r1 = seeded_rng(99);
        let mut r2 = seeded_rng(99);
        let t1 = forward(&sys, &s, Some(&mut r1)).unwrap();
        let t2 = forward(&sys, &s, Some(&mut r2)).unwrap();
        assert_eq!(t1, t2);
        let clean = forward(&sys, &s, None).unwrap();
        assert_ne!(clean.o, t1.o);
    }

    #[test]
    fn peak_normalization_is_scale_free() {
        let mut rng = seeded_rng(18);
        let sys = random_system(&mut rng, Nonlinearity::Rectifier, 1.0)
            .with_backward_path(BackwardPath {
                peak: Some(0.5),
                clip: None,
            })
            .unwrap();
        let s = random_signal(&mut rng, 2, 30, 1.0);
        let e = random_signal(&mut rng, 2, 30, 1.0);
        let tr = forward(&sys, &s, None).unwrap();
        let plain = backward(
            &sys.clone().with_backward_path(BackwardPath::default()).unwrap(),
            &tr,
            &e,
            None,
        )
        .unwrap();
        let normed = backward(&sys, &tr, &e, None).unwrap();
        for (a, b) in plain.e_s.as_slice().iter().zip(normed.e_s.as_slice()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn linear_plant_adjoint_consistency(seed in any::<u64>()) {
                let mut rng = seeded_rng(seed);
                let sys = random_system(&mut rng, Nonlinearity::Identity, 0.5);
                let x = random_signal(&mut rng, 2, 25, 0.5);
                let y = random_signal(&mut rng, 2, 25, 0.5);
                let tr = forward(&sys, &x, None).unwrap();
                let lhs = tr.o.dot(&y);
                let rhs = x.dot(&backward(&sys, &tr, &y, None).unwrap().e_s);
                prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1e-12));
            }

            #[test]
            fn strict_causality(seed in any::<u64>(), j in 0usize..25) {
                let mut rng = seeded_rng(seed);
                let sys = random_system(&mut rng, Nonlinearity::Rectifier, 1.0);
                let s = random_signal(&mut rng, 2, 25, 1.0);
                let mut sp = s.clone();
                sp.sample_mut(j)[1] += 0.5;
                let t = forward(&sys, &s, None).unwrap();
                let tp = forward(&sys, &sp, None).unwrap();
                for i in 0..j {
                    prop_assert_eq!(t.a.sample(i), tp.a.sample(i));
                    prop_assert_eq!(t.o.sample(i), tp.o.sample(i));
                }
            }
        }
    }
}
