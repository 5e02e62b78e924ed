//! Discrete-time multichannel signals, matrix-valued FIR kernels and the
//! forward / adjoint convolution pair.
//!
//! Convolutions carry an explicit sample-period factor,
//! `y[i] = dt * sum_k W[k] x[i - k]`, so a kernel sampled from a
//! continuous impulse response keeps its physical gain. Samples outside the
//! recorded range are zero at both ends.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multichannel trace stored sample-major: `data[i * channels + c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    channels: usize,
    dt: f64,
    data: Vec<f64>,
}

impl Signal {
    /// Validated constructor from sample-major data.
    pub fn new(channels: usize, dt: f64, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Dimension("a signal needs at least one channel".into()));
        }
        check_dt(dt)?;
        if !data.len().is_multiple_of(channels) {
            return Err(Error::Dimension(format!(
                "{} values do not split into {} channels",
                data.len(),
                channels
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("sample value at flat index {pos}")));
        }
        Ok(Self { channels, dt, data })
    }

    pub fn zeros(channels: usize, n_samples: usize, dt: f64) -> Self {
        assert!(channels >= 1, "a signal needs at least one channel");
        Self {
            channels,
            dt,
            data: vec![0.0; channels * n_samples],
        }
    }

    /// Builds a signal from one row per channel (the `channels x n_samples`
    /// view).
    pub fn from_channel_rows(rows: &[Vec<f64>], dt: f64) -> Result<Self> {
        let channels = rows.len();
        if channels == 0 {
            return Err(Error::Dimension("a signal needs at least one channel".into()));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("channel rows differ in length".into()));
        }
        let mut data = vec![0.0; channels * n];
        for (c, row) in rows.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Self::new(channels, dt, data)
    }

    /// Single-channel signal from a slice.
    pub fn from_scalar(values: &[f64], dt: f64) -> Result<Self> {
        Self::new(1, dt, values.to_vec())
    }

    pub(crate) fn from_raw(channels: usize, dt: f64, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % channels, 0);
        Self { channels, dt, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Sample-major flat view.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// All channel values at sample `i`.
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn get(&self, channel: usize, i: usize) -> f64 {
        self.data[i * self.channels + channel]
    }

    /// One channel as a contiguous vector.
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.data.iter().skip(channel).step_by(self.channels).copied().collect()
    }

    /// Euclidean inner product over all channels and samples.
    pub fn dot(&self, other: &Signal) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "signal shapes differ");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Mean square value over all entries; zero for an empty signal.
    pub fn power(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Signal {
        Signal::from_raw(self.channels, self.dt, self.data.iter().map(|v| v * factor).collect())
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Signal) -> Result<Signal> {
        self.check_conformable(other)?;
        Ok(Signal::from_raw(
            self.channels,
            self.dt,
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        ))
    }

    pub(crate) fn add_assign(&mut self, other: &Signal) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn check_conformable(&self, other: &Signal) -> Result<()> {
        if self.channels != other.channels || self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "signal {}x{} vs {}x{}",
                self.channels,
                self.len(),
                other.channels,
                other.len()
            )));
        }
        if self.dt != other.dt {
            return Err(Error::Config(format!(
                "sample periods differ: {} vs {}",
                self.dt, other.dt
            )));
        }
        Ok(())
    }

    /// Samples `start..end` as a new signal.
    pub fn slice(&self, start: usize, end: usize) -> Signal {
        Signal::from_raw(
            self.channels,
            self.dt,
            self.data[start * self.channels..end * self.channels].to_vec(),
        )
    }

    /// Time concatenation of signals with equal channel count and period.
    pub fn concat(parts: &[Signal]) -> Result<Signal> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Length("nothing to concatenate".into()))?;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            if p.channels != first.channels {
                return Err(Error::Dimension("channel counts differ".into()));
            }
            if p.dt != first.dt {
                return Err(Error::Config("sample periods differ".into()));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Signal::from_raw(first.channels, first.dt, data))
    }

    /// Writes `t,ch0,ch1,...` with one row per sample.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.channels).map(|c| format!("ch{c}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![format!("{}", i as f64 * self.dt)];
            row.extend(self.sample(i).iter().map(|v| format!("{v}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a signal written by [`Signal::write_csv`]. The `t` column is
    /// informational; the period is passed explicitly.
    pub fn read_csv<R: Read>(reader: R, dt: f64) -> Result<Signal> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("t") || headers.len() < 2 {
            return Err(Error::Parse("expected header `t,ch0,...`".into()));
        }
        let channels = headers.len() - 1;
        let mut data = Vec::new();
        for record in r.records() {
            let record = record?;
            for field in record.iter().skip(1) {
                data.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("{field:?}: {e}")))?,
                );
            }
        }
        Signal::new(channels, dt, data)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!("sample period must be positive, got {dt}")));
    }
    Ok(())
}

/// Matrix-valued finite impulse response `W(k * dt)`, `k = 0..L`.
///
/// Taps are stored row-major, one `rows x cols` block after another. The
/// list of lags with at least one nonzero entry is cached so sparse kernels
/// (echo trains, delta kernels) convolve in time proportional to their
/// support.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct Kernel {
    rows: usize,
    cols: usize,
    dt: f64,
    taps: Vec<f64>,
    active: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    rows: usize,
    cols: usize,
    dt: f64,
    taps: Vec<Vec<f64>>,
}

impl TryFrom<KernelRepr> for Kernel {
    type Error = Error;

    fn try_from(r: KernelRepr) -> Result<Self> {
        Kernel::from_tap_matrices(r.rows, r.cols, r.dt, &r.taps)
    }
}

impl From<Kernel> for KernelRepr {
    fn from(k: Kernel) -> Self {
        KernelRepr {
            rows: k.rows,
            cols: k.cols,
            dt: k.dt,
            taps: (0..k.len()).map(|t| k.tap(t).to_vec()).collect(),
        }
    }
}

impl PartialEq for Kernel {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.dt == other.dt && self.taps == other.taps
    }
}

impl Kernel {
    /// Kernel from a flat tap buffer of length `L * rows * cols`.
    pub fn new(rows: usize, cols: usize, dt: f64, taps: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension("kernel taps must be at least 1x1".into()));
        }
        check_dt(dt)?;
        let block = rows * cols;
        if taps.is_empty() || !taps.len().is_multiple_of(block) {
            return Err(Error::Dimension(format!(
                "{} tap values do not form whole {}x{} taps",
                taps.len(),
                rows,
                cols
            )));
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("kernel tap".into()));
        }
        let mut k = Self {
            rows,
            cols,
            dt,
            taps,
            active: Vec::new(),
        };
        k.refresh_active();
        Ok(k)
    }

    /// Kernel from a list of row-major tap matrices.
    pub fn from_tap_matrices(rows: usize, cols: usize, dt: f64, taps: &[Vec<f64>]) -> Result<Self> {
        if taps.iter().any(|t| t.len() != rows * cols) {
            return Err(Error::Dimension(format!("every tap must hold {rows}x{cols} values")));
        }
        Self::new(rows, cols, dt, taps.concat())
    }

    pub fn zeros(len: usize, rows: usize, cols: usize, dt: f64) -> Self {
        assert!(len >= 1 && rows >= 1 && cols >= 1);
        Self {
            rows,
            cols,
            dt,
            taps: vec![0.0; len * rows * cols],
            active: Vec::new(),
        }
    }

    /// Discrete Dirac delta carrying `matrix` at `lag`: a single tap equal to
    /// `matrix / dt`, so that convolution applies `matrix` delayed by `lag`.
    pub fn delta(rows: usize, cols: usize, matrix: &[f64], lag: usize, dt: f64) -> Result<Self> {
        if matrix.len() != rows * cols {
            return Err(Error::Dimension("delta matrix shape".into()));
        }
        check_dt(dt)?;
        let mut k = Self::zeros(lag + 1, rows, cols, dt);
        k.tap_mut(lag).iter_mut().zip(matrix).for_each(|(t, m)| *t = m / dt);
        k.refresh_active();
        Ok(k)
    }

    /// `delta` with an identity matrix.
    pub fn identity(n: usize, lag: usize, dt: f64) -> Self {
        Self::delta(n, n, &identity_matrix(n), lag, dt).expect("identity shape is consistent")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of taps `L`.
    pub fn len(&self) -> usize {
        self.taps.len() / (self.rows * self.cols)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tap(&self, k: usize) -> &[f64] {
        let b = self.rows * self.cols;
        &self.taps[k * b..(k + 1) * b]
    }

    fn tap_mut(&mut self, k: usize) -> &mut [f64] {
        let b = self.rows * self.cols;
        &mut self.taps[k * b..(k + 1) * b]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.taps
    }

    /// Lags with at least one nonzero entry, ascending.
    pub fn active_lags(&self) -> &[usize] {
        &self.active
    }

    fn refresh_active(&mut self) {
        let b = self.rows * self.cols;
        self.active = self
            .taps
            .chunks(b)
            .enumerate()
            .filter(|(_, t)| t.iter().any(|v| *v != 0.0))
            .map(|(k, _)| k)
            .collect();
    }

    /// Returns a copy with the flat tap buffer replaced.
    pub fn with_taps(&self, taps: Vec<f64>) -> Result<Self> {
        if taps.len() != self.taps.len() {
            return Err(Error::Dimension("replacement taps change the kernel shape".into()));
        }
        Self::new(self.rows, self.cols, self.dt, taps)
    }

    /// Returns a copy with tap `k` replaced by `matrix`.
    pub fn with_tap(&self, k: usize, matrix: &[f64]) -> Result<Self> {
        if matrix.len() != self.rows * self.cols || k >= self.len() {
            return Err(Error::Dimension("tap index or shape".into()));
        }
        let mut out = self.clone();
        out.tap_mut(k).copy_from_slice(matrix);
        out.refresh_active();
        Ok(out)
    }

    /// Every tap transposed (`cols x rows`).
    pub fn transposed(&self) -> Kernel {
        let (r, c) = (self.rows, self.cols);
        let mut taps = vec![0.0; self.taps.len()];
        for k in 0..self.len() {
            let src = self.tap(k);
            let dst = &mut taps[k * r * c..(k + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        Kernel {
            rows: c,
            cols: r,
            dt: self.dt,
            taps,
            active: self.active.clone(),
        }
    }

    /// Appends zero taps up to `len` taps total.
    pub fn padded_to(&self, len: usize) -> Kernel {
        let mut out = self.clone();
        if len > self.len() {
            out.taps.resize(len * self.rows * self.cols, 0.0);
        }
        out
    }

    /// Re-expresses the kernel on a different time unit. Taps scale by
    /// `dt / new_dt`, so the discrete map `dt * sum_k W[k] x[i-k]` is
    /// unchanged.
    pub fn retimed(&self, new_dt: f64) -> Result<Kernel> {
        check_dt(new_dt)?;
        let factor = self.dt / new_dt;
        let mut out = self.clone();
        out.dt = new_dt;
        out.taps.iter_mut().for_each(|v| *v *= factor);
        Ok(out)
    }

    /// Sum of absolute tap values times `dt`: an upper bound on the gain of
    /// the convolution in the max norm for scalar kernels.
    pub fn l1_gain(&self) -> f64 {
        self.dt * self.taps.iter().map(|v| v.abs()).sum::<f64>()
    }
}

pub(crate) fn identity_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// `y += M x` for a row-major `rows x cols` matrix.
#[inline]
pub(crate) fn matvec_acc(m: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for (r, yr) in y.iter_mut().enumerate().take(rows) {
        let row = &m[r * cols..(r + 1) * cols];
        *yr += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `y += M^T x` for a row-major `rows x cols` matrix.
#[inline]
pub(crate) fn matvec_t_acc(m: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for (r, xr) in x.iter().enumerate().take(rows) {
        if *xr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for (yc, a) in y.iter_mut().zip(row) {
            *yc += a * xr;
        }
    }
}

fn check_pair(kernel: &Kernel, channels: usize, kernel_side: usize, dt: f64) -> Result<()> {
    if kernel_side != channels {
        return Err(Error::Dimension(format!(
            "kernel {}x{} applied to a {}-channel signal",
            kernel.rows, kernel.cols, channels
        )));
    }
    if kernel.dt != dt {
        return Err(Error::Config(format!(
            "kernel period {} differs from signal period {}",
            kernel.dt, dt
        )));
    }
    Ok(())
}

/// Causal convolution `y[i] = dt * sum_k W[k] x[i - k]`, zero past.
pub fn convolve(kernel: &Kernel, x: &Signal) -> Result<Signal> {
    check_pair(kernel, x.channels, kernel.cols, x.dt)?;
    let n = x.len();
    let (r, c) = (kernel.rows, kernel.cols);
    let mut y = vec![0.0; n * r];
    for &k in kernel.active_lags() {
        let w = kernel.tap(k);
        for i in k..n {
            let xs = &x.data[(i - k) * c..(i - k + 1) * c];
            matvec_acc(w, r, c, xs, &mut y[i * r..(i + 1) * r]);
        }
    }
    y.iter_mut().for_each(|v| *v *= kernel.dt);
    Ok(Signal::from_raw(r, x.dt, y))
}

/// Anti-causal transposed convolution `r[i] = dt * sum_k W[k]^T e[i + k]`,
/// zero future. This is the adjoint of [`convolve`] under the Euclidean
/// inner product over all samples.
pub fn adjoint_convolve(kernel: &Kernel, e: &Signal) -> Result<Signal> {
    check_pair(kernel, e.channels, kernel.rows, e.dt)?;
    let n = e.len();
    let (r, c) = (kernel.rows, kernel.cols);
    let mut out = vec![0.0; n * c];
    for &k in kernel.active_lags() {
        let w = kernel.tap(k);
        for i in 0..n.saturating_sub(k) {
            let es = &e.data[(i + k) * r..(i + k + 1) * r];
            matvec_t_acc(w, r, c, es, &mut out[i * c..(i + 1) * c]);
        }
    }
    out.iter_mut().for_each(|v| *v *= kernel.dt);
    Ok(Signal::from_raw(c, e.dt, out))
}

/// Reverses sample order.
pub fn time_reverse(x: &Signal) -> Signal {
    let c = x.channels;
    let mut data = Vec::with_capacity(x.data.len());
    for chunk in x.data.chunks(c).rev() {
        data.extend_from_slice(chunk);
    }
    Signal::from_raw(c, x.dt, data)
}

/// Splits into consecutive `period`-sample segments.
pub fn split_segments(x: &Signal, period: usize) -> Result<Vec<Signal>> {
    if period == 0 {
        return Err(Error::Length("segment period must be positive".into()));
    }
    if !x.len().is_multiple_of(period) {
        return Err(Error::Length(format!(
            "{} samples do not split into periods of {}",
            x.len(),
            period
        )));
    }
    Ok((0..x.len() / period)
        .map(|s| x.slice(s * period, (s + 1) * period))
        .collect())
}
