//! Concrete plants: a speaker-tube-microphone loop and a delay-coupled
//! optical network, plus the measurement-noise model both can use.

use std::f64::consts::PI;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MaskSet;
use crate::signal::{identity_matrix, Kernel, Signal};
use crate::system::{BackwardPath, Nonlinearity, PhysicalSystem};

/// Additive Gaussian measurement noise at a fixed signal-to-noise ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub snr_db: f64,
    /// Noise on the measured forward state and output.
    pub forward: bool,
    /// Noise on the measured backward errors.
    pub backward: bool,
}

impl NoiseModel {
    /// Noise on both passes.
    pub fn new(snr_db: f64) -> Self {
        Self {
            snr_db,
            forward: true,
            backward: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::Config(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        Ok(())
    }
}

/// Adds zero-mean Gaussian noise with variance `power(x) / 10^(snr/10)`.
/// A zero-power signal or `snr_db = +inf` is returned unchanged.
pub fn add_measurement_noise(x: &Signal, snr_db: f64, rng: &mut dyn RngCore) -> Result<Signal> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Config(format!("invalid snr_db {snr_db}")));
    }
    let variance = x.power() / 10f64.powf(snr_db / 10.0);
    if variance == 0.0 || !variance.is_finite() {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        *v += normal.sample(rng);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeParams {
    pub length_m: f64,
    pub speed_of_sound: f64,
    /// Amplitude ratio between consecutive echoes.
    pub reflection_coeff: f64,
    pub n_echoes: usize,
    /// Band-pass edges in Hz; `None` leaves the echo train unfiltered.
    pub passband: Option<(f64, f64)>,
    /// Windowed-sinc band-pass length (odd).
    pub filter_taps: usize,
    pub kernel_len: usize,
    pub sample_rate: f64,
    /// Kernel is normalised so that `dt * sum |W[k]|` equals this gain.
    pub gain: f64,
}

impl Default for TubeParams {
    fn default() -> Self {
        Self {
            length_m: 6.0,
            speed_of_sound: 343.0,
            reflection_coeff: 0.5,
            n_echoes: 3,
            passband: Some((100.0, 4000.0)),
            filter_taps: 101,
            kernel_len: 4096,
            sample_rate: 40_000.0,
            gain: 0.9,
        }
    }
}

impl TubeParams {
    /// One-way travel time in samples, rounded.
    pub fn delay_samples(&self) -> usize {
        (self.length_m / self.speed_of_sound * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length_m", self.length_m),
            ("speed_of_sound", self.speed_of_sound),
            ("sample_rate", self.sample_rate),
            ("gain", self.gain),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("tube {name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.reflection_coeff) {
            return Err(Error::Config("reflection_coeff must lie in [0, 1)".into()));
        }
        if self.n_echoes == 0 {
            return Err(Error::Config("n_echoes must be at least 1".into()));
        }
        if self.delay_samples() == 0 {
            return Err(Error::Config("tube delay rounds to zero samples".into()));
        }
        if let Some((lo, hi)) = self.passband {
            let nyquist = self.sample_rate / 2.0;
            if !(0.0 <= lo && lo < hi && hi <= nyquist) {
                return Err(Error::Config(format!(
                    "passband ({lo}, {hi}) must satisfy 0 <= low < high <= {nyquist}"
                )));
            }
            if self.filter_taps.is_multiple_of(2) {
                return Err(Error::Config("filter_taps must be odd".into()));
            }
        }
        let needed = self.required_len();
        if self.kernel_len < needed {
            return Err(Error::Config(format!(
                "kernel_len {} cannot hold {} echoes; need at least {needed}",
                self.kernel_len, self.n_echoes
            )));
        }
        Ok(())
    }

    fn half_filter(&self) -> usize {
        if self.passband.is_some() {
            self.filter_taps / 2
        } else {
            0
        }
    }

    fn required_len(&self) -> usize {
        self.delay_samples() * (2 * self.n_echoes - 1) + self.half_filter() + 1
    }
}

/// Hann-windowed sinc band-pass, zero phase about its centre tap.
fn bandpass_fir(taps: usize, low: f64, high: f64, rate: f64) -> Vec<f64> {
    let sinc = |x: f64| if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    let (fl, fh) = (low / rate, high / rate);
    let mid = (taps - 1) as f64 / 2.0;
    (0..taps)
        .map(|n| {
            let m = n as f64 - mid;
            let window = 0.5 - 0.5 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos();
            (2.0 * fh * sinc(2.0 * fh * m) - 2.0 * fl * sinc(2.0 * fl * m)) * window
        })
        .collect()
}

/// Scalar speaker-tube-microphone impulse response: echoes at odd
/// multiples of the one-way delay with geometric decay, smoothed by a
/// band-pass, with tap 0 forced to zero. The sample period is
/// `1 / sample_rate` seconds.
pub fn make_tube_kernel(p: &TubeParams) -> Result<Kernel> {
    p.validate()?;
    let d0 = p.delay_samples();
    let mut taps = vec![0.0; p.kernel_len];
    let filter = match p.passband {
        Some((lo, hi)) => bandpass_fir(p.filter_taps, lo, hi, p.sample_rate),
        None => vec![1.0],
    };
    let half = p.half_filter();
    for j in 0..p.n_echoes {
        let amp = p.reflection_coeff.powi(j as i32);
        let centre = d0 * (2 * j + 1);
        for (n, h) in filter.iter().enumerate() {
            let t = centre + n;
            if t >= half && t - half < taps.len() {
                taps[t - half] += amp * h;
            }
        }
    }
    taps[0] = 0.0;
    let dt = 1.0 / p.sample_rate;
    let norm: f64 = dt * taps.iter().map(|v| v.abs()).sum::<f64>();
    if norm == 0.0 {
        return Err(Error::Config("tube kernel is identically zero".into()));
    }
    let scale = p.gain / norm;
    taps.iter_mut().for_each(|v| *v *= scale);
    Kernel::new(1, 1, dt, taps)
}

/// The acoustic loop `a = f(W * (s + a))`, observed directly (`o = a`).
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticPlant {
    pub system: PhysicalSystem,
    pub period: usize,
}

impl AcousticPlant {
    /// Zero masks of the right shape for `dim_x` inputs and `dim_y` outputs.
    pub fn mask_template(&self, dim_x: usize, dim_y: usize) -> MaskSet {
        MaskSet::zeros(1, dim_x, 1, dim_y, self.period)
    }
}

/// Default mask period of the acoustic setup, in samples.
pub const ACOUSTIC_PERIOD: usize = 1000;

/// Wires a scalar, strictly causal kernel into the acoustic plant:
/// `W_sa = W_aa = W`, `W_ao` a lag-0 delta, `W_so = 0`, rectifier feedback.
pub fn make_acoustic_system(kernel: &Kernel, period: usize) -> Result<AcousticPlant> {
    if kernel.rows() != 1 || kernel.cols() != 1 {
        return Err(Error::Dimension(format!(
            "acoustic kernel must be 1x1, got {}x{}",
            kernel.rows(),
            kernel.cols()
        )));
    }
    if period == 0 {
        return Err(Error::Config("mask period must be positive".into()));
    }
    let dt = kernel.dt();
    let system = PhysicalSystem::new(
        kernel.clone(),
        kernel.clone(),
        Kernel::zeros(1, 1, 1, dt),
        Kernel::identity(1, 0, dt),
        Nonlinearity::Rectifier,
    )?;
    Ok(AcousticPlant { system, period })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticalParams {
    pub n_nodes: usize,
    pub delay_samples: usize,
    /// `None` disables measurement noise.
    pub snr_db: Option<f64>,
    pub weight_bound: f64,
    pub backward_clip: bool,
    /// Peak amplitude of the injected error as a fraction of the half
    /// intensity range.
    pub backward_error_scale: f64,
    pub dt: f64,
}

impl Default for OpticalParams {
    fn default() -> Self {
        Self {
            n_nodes: 20,
            delay_samples: 109,
            snr_db: Some(18.0),
            weight_bound: 2.0,
            backward_clip: true,
            backward_error_scale: 0.5,
            dt: 1.0,
        }
    }
}

impl OpticalParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 {
            return Err(Error::Config("n_nodes must be positive".into()));
        }
        if self.delay_samples == 0 {
            return Err(Error::Config("delay_samples must be at least 1".into()));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::Config("snr_db must be finite".into()));
            }
        }
        if !(self.weight_bound > 0.0 && self.weight_bound.is_finite()) {
            return Err(Error::Config("weight_bound must be positive".into()));
        }
        if !(self.backward_error_scale > 0.0 && self.backward_error_scale <= 1.0) {
            return Err(Error::Config("backward_error_scale must lie in (0, 1]".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        Ok(())
    }
}

/// Intensity range of an optical node.
pub const OPTICAL_RANGE: (f64, f64) = (-1.0, 1.0);

/// Default optical mask period, in samples.
pub const OPTICAL_PERIOD: usize = 100;

/// The delay network `a[i] = clip(W a[i - D] + s[i])`, observed directly.
pub fn make_optical_system(p: &OpticalParams, w: &[f64]) -> Result<PhysicalSystem> {
    p.validate()?;
    let n = p.n_nodes;
    if w.len() != n * n {
        return Err(Error::Dimension(format!("mixing matrix must be {n}x{n}")));
    }
    check_weight_bound(w, p.weight_bound)?;
    let dt = p.dt;
    let (lo, hi) = OPTICAL_RANGE;
    let sys = PhysicalSystem::new(
        Kernel::identity(n, 0, dt),
        Kernel::delta(n, n, w, p.delay_samples, dt)?,
        Kernel::zeros(1, n, n, dt),
        Kernel::identity(n, 0, dt),
        Nonlinearity::Clip { lo, hi },
    )?;
    let path = BackwardPath {
        peak: Some(p.backward_error_scale * (hi - lo) / 2.0),
        clip: p.backward_clip.then_some((lo, hi)),
    };
    sys.with_noise(p.snr_db.map(NoiseModel::new))?.with_backward_path(path)
}

/// Reads the mixing matrix back out of an optical plant's feedback kernel.
pub fn optical_mixing_matrix(sys: &PhysicalSystem, delay: usize) -> Vec<f64> {
    let dt = sys.dt();
    sys.w_aa().tap(delay).iter().map(|v| v * dt).collect()
}

fn check_weight_bound(w: &[f64], bound: f64) -> Result<()> {
    if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(v.abs() <= bound)) {
        return Err(Error::Constraint(format!(
            "weight {v} at index {i} is outside [-{bound}, {bound}]"
        )));
    }
    Ok(())
}

/// Splits a signed matrix into two non-negative modulator arrays
/// `W1 = K + W/2`, `W2 = K - W/2` with `K` all ones.
pub fn intensity_split(w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_weight_bound(w, 2.0)?;
    let w1 = w.iter().map(|v| 1.0 + v / 2.0).collect();
    let w2 = w.iter().map(|v| 1.0 - v / 2.0).collect();
    Ok((w1, w2))
}

/// Light arriving at the detectors when the state is encoded as the
/// intensity pair `(k + a, k - a)`: `W1 (k + a) + W2 (k - a)`.
pub fn intensity_recombine(w1: &[f64], w2: &[f64], a: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; w1.len() / n];
    for (r, o) in out.iter_mut().enumerate() {
        for c in 0..n {
            *o += w1[r * n + c] * (1.0 + a[c]) + w2[r * n + c] * (1.0 - a[c]);
        }
    }
    out
}

/// Constant offset `(W1 + W2) k` that the detector electronics subtract.
pub fn intensity_bias(w1: &[f64], w2: &[f64], n: usize) -> Vec<f64> {
    (0..w1.len() / n)
        .map(|r| (0..n).map(|c| w1[r * n + c] + w2[r * n + c]).sum())
        .collect()
}

/// Entrywise projection onto `[-bound, bound]`.
pub fn project_weights(w: &mut [f64], bound: f64) {
    w.iter_mut().for_each(|v| *v = v.clamp(-bound, bound));
}

/// Identity mixing matrix of size `n`, handy for tests.
pub fn identity_weights(n: usize) -> Vec<f64> {
    identity_matrix(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use crate::system::forward;
    use rand::Rng;
    use rustfft::{num_complex::Complex, FftPlanner};

    #[test]
    fn unfiltered_single_echo_sits_at_the_travel_time() {
        let p = TubeParams {
            reflection_coeff: 0.0,
            n_echoes: 1,
            passband: None,
            kernel_len: 1024,
            ..TubeParams::default()
        };
        // 6 / 343 * 40000 = 699.7
        assert_eq!(p.delay_samples(), 700);
        let k = make_tube_kernel(&p).unwrap();
        assert_eq!(k.active_lags(), &[700]);
        assert!((k.l1_gain() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn tap_zero_is_always_zero() {
        let p = TubeParams {
            length_m: 0.02,
            kernel_len: 256,
            ..TubeParams::default()
        };
        let k = make_tube_kernel(&p).unwrap();
        assert_eq!(k.tap(0), &[0.0]);
        let k = make_tube_kernel(&TubeParams::default()).unwrap();
        assert_eq!(k.tap(0), &[0.0]);
    }

    #[test]
    fn short_kernel_is_rejected() {
        let p = TubeParams {
            kernel_len: 1000,
            ..TubeParams::default()
        };
        assert!(matches!(make_tube_kernel(&p), Err(Error::Config(_))));
    }

    #[test]
    fn spectrum_peaks_follow_resonance_spacing() {
        // Echoes every 2 * d0 samples put spectral peaks every c / 2L Hz.
        let p = TubeParams {
            reflection_coeff: 0.9,
            n_echoes: 40,
            passband: None,
            kernel_len: 1 << 16,
            ..TubeParams::default()
        };
        let k = make_tube_kernel(&p).unwrap();
        let n = k.len();
        let mut buf: Vec<Complex<f64>> = k.as_slice().iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let power: Vec<f64> = buf.iter().map(|c| c.norm_sqr()).collect();
        let bin_hz = p.sample_rate / n as f64;
        let max_bin = (600.0 / bin_hz) as usize;
        // Main lobes all have the same height; finite-train sidelobes are
        // far below a quarter of it.
        let top = power[1..max_bin].iter().cloned().fold(0.0, f64::max);
        let peaks: Vec<f64> = (1..max_bin)
            .filter(|&b| power[b] > power[b - 1] && power[b] >= power[b + 1] && power[b] > 0.25 * top)
            .map(|b| b as f64 * bin_hz)
            .collect();
        let spacing = p.sample_rate / (2.0 * p.delay_samples() as f64);
        assert!((spacing - 28.57).abs() < 0.01);
        assert!(peaks.len() >= 15);
        for w in peaks.windows(2) {
            assert!(((w[1] - w[0]) - spacing).abs() < 2.0 * bin_hz, "{:?}", w);
        }
    }

    #[test]
    fn acoustic_plant_matches_scalar_recursion() {
        let mut rng = seeded_rng(3);
        let dt = 0.5;
        let mut taps: Vec<f64> = (0..12).map(|_| rng.random_range(-0.2..0.2)).collect();
        taps[0] = 0.0;
        let k = Kernel::new(1, 1, dt, taps.clone()).unwrap();
        let plant = make_acoustic_system(&k, 10).unwrap();
        let s: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tr = forward(&plant.system, &Signal::from_scalar(&s, dt).unwrap(), None).unwrap();
        let mut a = vec![0.0; 60];
        for i in 0..60 {
            let mut x = 0.0;
            for (lag, w) in taps.iter().enumerate().take(i + 1) {
                x += dt * w * (s[i - lag] + if lag > 0 { a[i - lag] } else { 0.0 });
            }
            a[i] = x.max(0.0);
        }
        for i in 0..60 {
            assert!((tr.o.get(0, i) - a[i]).abs() < 1e-10);
        }
        // impulse input
        let mut imp = vec![0.0; 60];
        imp[0] = 1.0;
        let tr = forward(&plant.system, &Signal::from_scalar(&imp, dt).unwrap(), None).unwrap();
        assert!(tr.o.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_kernel_gives_silence() {
        let k = Kernel::zeros(8, 1, 1, 1.0);
        let plant = make_acoustic_system(&k, 4).unwrap();
        let s = Signal::from_scalar(&[1.0, -2.0, 3.0, 0.5, 1.0, 1.0, 1.0, 1.0], 1.0).unwrap();
        let tr = forward(&plant.system, &s, None).unwrap();
        assert!(tr.o.as_slice().iter().all(|v| *v == 0.0));
        assert!(make_acoustic_system(&Kernel::zeros(2, 2, 1, 1.0), 4).is_err());
    }

    #[test]
    fn acoustic_instance_rate() {
        let p = TubeParams::default();
        assert_eq!(p.sample_rate / ACOUSTIC_PERIOD as f64, 40.0);
    }

    #[test]
    fn optical_without_mixing_is_the_clipped_input() {
        let p = OpticalParams {
            n_nodes: 3,
            delay_samples: 5,
            snr_db: None,
            ..OpticalParams::default()
        };
        let sys = make_optical_system(&p, &[0.0; 9]).unwrap();
        let mut rng = seeded_rng(4);
        let s = Signal::new(3, 1.0, (0..60).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let tr = forward(&sys, &s, None).unwrap();
        for (a, b) in tr.a.as_slice().iter().zip(s.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn optical_plant_is_the_delay_recurrence() {
        let n = 4;
        let d = 7;
        let p = OpticalParams {
            n_nodes: n,
            delay_samples: d,
            snr_db: None,
            ..OpticalParams::default()
        };
        let mut rng = seeded_rng(5);
        let w: Vec<f64> = (0..n * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sys = make_optical_system(&p, &w).unwrap();
        let len = 80;
        let s = Signal::new(n, 1.0, (0..n * len).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
        let tr = forward(&sys, &s, None).unwrap();
        let mut a = vec![vec![0.0; n]; len];
        for i in 0..len {
            for r in 0..n {
                let mut x = s.get(r, i);
                if i >= d {
                    for c in 0..n {
                        x += w[r * n + c] * a[i - d][c];
                    }
                }
                a[i][r] = x.clamp(-1.0, 1.0);
            }
        }
        for i in 0..len {
            for r in 0..n {
                assert!((tr.a.get(r, i) - a[i][r]).abs() < 1e-12);
            }
        }
        let back = optical_mixing_matrix(&sys, d);
        for (x, y) in back.iter().zip(&w) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn optical_delay_straddles_mask_periods() {
        // With D = 109 and a 100-sample period, a perturbation at sample j
        // of instance k first reaches the state 109 samples later, i.e. 9
        // samples into instance k + 1 when j = 0.
        let p = OpticalParams {
            n_nodes: 2,
            snr_db: None,
            ..OpticalParams::default()
        };
        let w = [0.5, 0.0, 0.0, 0.5];
        let sys = make_optical_system(&p, &w).unwrap();
        let base = Signal::new(2, 1.0, vec![0.1; 2 * 400]).unwrap();
        let mut pert = base.clone();
        pert.sample_mut(100)[0] += 0.2;
        let t0 = forward(&sys, &base, None).unwrap();
        let t1 = forward(&sys, &pert, None).unwrap();
        let changed: Vec<usize> = (0..400).filter(|&i| t0.a.sample(i) != t1.a.sample(i)).collect();
        assert_eq!(changed[0], 100);
        assert_eq!(changed[1], 209);
        assert_eq!(209 % OPTICAL_PERIOD, 9);
    }

    #[test]
    fn weight_bound_enforced() {
        let p = OpticalParams {
            n_nodes: 2,
            ..OpticalParams::default()
        };
        assert!(matches!(
            make_optical_system(&p, &[0.0, 2.5, 0.0, 0.0]),
            Err(Error::Constraint(_))
        ));
    }

    #[test]
    fn intensity_split_cases() {
        let (w1, w2) = intensity_split(&[0.0; 4]).unwrap();
        assert_eq!(w1, vec![1.0; 4]);
        assert_eq!(w2, vec![1.0; 4]);
        let a = [0.3, -0.7];
        let rec = intensity_recombine(&w1, &w2, &a);
        let bias = intensity_bias(&w1, &w2, 2);
        assert!(rec.iter().zip(&bias).all(|(r, b)| (r - b).abs() < 1e-15));

        let (w1, w2) = intensity_split(&[2.0, -2.0, 0.5, 0.0]).unwrap();
        assert_eq!(w1[0], 2.0);
        assert_eq!(w2[0], 0.0);
        assert_eq!(w1[1], 0.0);
        assert!(w1.iter().chain(&w2).all(|v| *v >= 0.0));
        assert!(matches!(intensity_split(&[2.01]), Err(Error::Constraint(_))));
    }

    #[test]
    fn intensity_recombination_recovers_the_product() {
        let mut rng = seeded_rng(6);
        for _ in 0..50 {
            let n = rng.random_range(1..8);
            let w: Vec<f64> = (0..n * n).map(|_| rng.random_range(-2.0..=2.0)).collect();
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let (w1, w2) = intensity_split(&w).unwrap();
            let rec = intensity_recombine(&w1, &w2, &a);
            let bias = intensity_bias(&w1, &w2, n);
            for r in 0..n {
                let wa: f64 = (0..n).map(|c| w[r * n + c] * a[c]).sum();
                assert!((rec[r] - bias[r] - wa).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_infinite_snr_is_identity() {
        let x = Signal::from_scalar(&[1.0, 2.0, -3.0], 1.0).unwrap();
        let mut rng = seeded_rng(7);
        assert_eq!(add_measurement_noise(&x, f64::INFINITY, &mut rng).unwrap(), x);
        let zero = Signal::zeros(1, 5, 1.0);
        assert_eq!(add_measurement_noise(&zero, 10.0, &mut rng).unwrap(), zero);
    }

    #[test]
    fn noise_reaches_target_snr() {
        let mut rng = seeded_rng(8);
        let x = Signal::from_scalar(
            &(0..1_000_000).map(|i| (i as f64 * 0.01).sin()).collect::<Vec<_>>(),
            1.0,
        )
        .unwrap();
        let y = add_measurement_noise(&x, 18.0, &mut rng).unwrap();
        let noise_power = x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / 1e6;
        let snr = 10.0 * (x.power() / noise_power).log10();
        assert!((snr - 18.0).abs() < 0.5, "measured {snr}");
    }

    #[test]
    fn noise_reproducible_for_a_seed() {
        let x = Signal::from_scalar(&[1.0, 2.0, 3.0, 4.0], 1.0).unwrap();
        let a = add_measurement_noise(&x, 10.0, &mut seeded_rng(9)).unwrap();
        let b = add_measurement_noise(&x, 10.0, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
    }
}
