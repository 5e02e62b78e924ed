//! Time multiplexing between discrete sequences and plant signals.
//!
//! Instance `x_i` becomes the `P`-sample segment `s_b(t) + M(t) x_i`; the
//! plant output segment `o_i(t)` decodes to `y_b + dt * sum_t U(t) o_i(t)`.
//! Output errors travel back as `U(t)^T e_i`.

use std::io::Write;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{matvec_acc, matvec_t_acc, Signal};

/// Input masks `M(t)` (`N x dim_x`), output masks `U(t)` (`dim_y x M`), the
/// bias trace `s_b(t)` and bias vector `y_b`, all sampled over one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub n_inputs: usize,
    pub dim_x: usize,
    pub n_outputs: usize,
    pub dim_y: usize,
    pub period: usize,
    /// `period x n_inputs x dim_x`.
    pub m: Vec<f64>,
    /// `period x dim_y x n_outputs`.
    pub u: Vec<f64>,
    /// `period x n_inputs`.
    pub s_b: Vec<f64>,
    pub y_b: Vec<f64>,
}

impl MaskSet {
    pub fn zeros(n_inputs: usize, dim_x: usize, n_outputs: usize, dim_y: usize, period: usize) -> Self {
        Self {
            n_inputs,
            dim_x,
            n_outputs,
            dim_y,
            period,
            m: vec![0.0; period * n_inputs * dim_x],
            u: vec![0.0; period * dim_y * n_outputs],
            s_b: vec![0.0; period * n_inputs],
            y_b: vec![0.0; dim_y],
        }
    }

    /// I.i.d. zero-mean Gaussian masks with the given standard deviations;
    /// biases stay zero.
    pub fn random(
        n_inputs: usize,
        dim_x: usize,
        n_outputs: usize,
        dim_y: usize,
        period: usize,
        std_m: f64,
        std_u: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let mut out = Self::zeros(n_inputs, dim_x, n_outputs, dim_y, period);
        fill_normal(&mut out.m, std_m, rng)?;
        fill_normal(&mut out.u, std_u, rng)?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 || self.n_inputs == 0 || self.n_outputs == 0 || self.dim_x == 0 || self.dim_y == 0 {
            return Err(Error::Dimension("mask dimensions and period must be positive".into()));
        }
        let p = self.period;
        let expect = [
            ("m", self.m.len(), p * self.n_inputs * self.dim_x),
            ("u", self.u.len(), p * self.dim_y * self.n_outputs),
            ("s_b", self.s_b.len(), p * self.n_inputs),
            ("y_b", self.y_b.len(), self.dim_y),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Dimension(format!(
                    "mask {name} has {got} values, expected {want}"
                )));
            }
        }
        let all = self.m.iter().chain(&self.u).chain(&self.s_b).chain(&self.y_b);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("mask value".into()));
        }
        Ok(())
    }

    pub fn m_at(&self, t: usize) -> &[f64] {
        let b = self.n_inputs * self.dim_x;
        &self.m[t * b..(t + 1) * b]
    }

    pub fn u_at(&self, t: usize) -> &[f64] {
        let b = self.dim_y * self.n_outputs;
        &self.u[t * b..(t + 1) * b]
    }

    pub fn s_b_at(&self, t: usize) -> &[f64] {
        &self.s_b[t * self.n_inputs..(t + 1) * self.n_inputs]
    }

    /// One row per mask sample: `t,m_<n>_<j>...,u_<k>_<m>...,sb_<n>...`.
    pub fn write_csv<W: Write>(&self, writer: W, dt: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        for n in 0..self.n_inputs {
            for j in 0..self.dim_x {
                header.push(format!("m_{n}_{j}"));
            }
        }
        for k in 0..self.dim_y {
            for m in 0..self.n_outputs {
                header.push(format!("u_{k}_{m}"));
            }
        }
        header.extend((0..self.n_inputs).map(|n| format!("sb_{n}")));
        w.write_record(&header)?;
        for t in 0..self.period {
            let mut row = vec![format!("{}", t as f64 * dt)];
            row.extend(
                self.m_at(t)
                    .iter()
                    .chain(self.u_at(t))
                    .chain(self.s_b_at(t))
                    .map(|v| format!("{v}")),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fill_normal(buf: &mut [f64], std: f64, rng: &mut dyn RngCore) -> Result<()> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::Config(format!("mask std must be non-negative, got {std}")));
    }
    if std == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    buf.iter_mut().for_each(|v| *v = normal.sample(rng));
    Ok(())
}

fn check_vectors(vs: &[Vec<f64>], dim: usize, what: &str) -> Result<()> {
    for (i, v) in vs.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::Dimension(format!(
                "{what} {i} has length {}, expected {dim}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("{what} {i}")));
        }
    }
    Ok(())
}

/// Concatenates `s_b(t) + M(t) x_i` over instances.
pub fn encode_inputs(xs: &[Vec<f64>], masks: &MaskSet, dt: f64) -> Result<Signal> {
    check_vectors(xs, masks.dim_x, "input")?;
    let (p, n) = (masks.period, masks.n_inputs);
    let mut data = vec![0.0; xs.len() * p * n];
    for (i, x) in xs.iter().enumerate() {
        for t in 0..p {
            let out = &mut data[(i * p + t) * n..(i * p + t + 1) * n];
            out.copy_from_slice(masks.s_b_at(t));
            matvec_acc(masks.m_at(t), n, masks.dim_x, x, out);
        }
    }
    Signal::new(n, dt, data)
}

fn check_segmented(x: &Signal, channels: usize, period: usize) -> Result<usize> {
    if x.channels() != channels {
        return Err(Error::Dimension(format!(
            "signal has {} channels, masks expect {channels}",
            x.channels()
        )));
    }
    if !x.len().is_multiple_of(period) {
        return Err(Error::Length(format!(
            "{} samples are not a whole number of {period}-sample periods",
            x.len()
        )));
    }
    Ok(x.len() / period)
}

/// `y_i = y_b + dt * sum_t U(t) o_i(t)` for every segment.
pub fn decode_outputs(o: &Signal, masks: &MaskSet) -> Result<Vec<Vec<f64>>> {
    let count = check_segmented(o, masks.n_outputs, masks.period)?;
    let p = masks.period;
    let dt = o.dt();
    Ok((0..count)
        .map(|i| {
            let mut acc = vec![0.0; masks.dim_y];
            for t in 0..p {
                matvec_acc(
                    masks.u_at(t),
                    masks.dim_y,
                    masks.n_outputs,
                    o.sample(i * p + t),
                    &mut acc,
                );
            }
            acc.iter().zip(&masks.y_b).map(|(a, b)| b + dt * a).collect()
        })
        .collect())
}

/// Concatenates `U(t)^T e_i` over instances.
pub fn encode_output_errors(errs: &[Vec<f64>], masks: &MaskSet, dt: f64) -> Result<Signal> {
    check_vectors(errs, masks.dim_y, "error")?;
    let (p, m) = (masks.period, masks.n_outputs);
    let mut data = vec![0.0; errs.len() * p * m];
    for (i, e) in errs.iter().enumerate() {
        for t in 0..p {
            let out = &mut data[(i * p + t) * m..(i * p + t + 1) * m];
            matvec_t_acc(masks.u_at(t), masks.dim_y, m, e, out);
        }
    }
    Signal::new(m, dt, data)
}

/// `dM(t) = sum_i e_s^i(t) x_i^T` and `ds_b(t) = sum_i e_s^i(t)`, laid out
/// like [`MaskSet::m`] and [`MaskSet::s_b`].
pub fn input_mask_gradient(e_s: &Signal, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if xs.is_empty() {
        return Err(Error::Length("no instances".into()));
    }
    if !e_s.len().is_multiple_of(xs.len()) {
        return Err(Error::Length(format!(
            "{} error samples for {} instances",
            e_s.len(),
            xs.len()
        )));
    }
    let p = e_s.len() / xs.len();
    let n = e_s.channels();
    let dim_x = xs[0].len();
    check_vectors(xs, dim_x, "input")?;
    let mut dm = vec![0.0; p * n * dim_x];
    let mut dsb = vec![0.0; p * n];
    for (i, x) in xs.iter().enumerate() {
        for t in 0..p {
            let e = e_s.sample(i * p + t);
            let block = &mut dm[t * n * dim_x..(t + 1) * n * dim_x];
            for (r, er) in e.iter().enumerate() {
                for (c, xc) in x.iter().enumerate() {
                    block[r * dim_x + c] += er * xc;
                }
                dsb[t * n + r] += er;
            }
        }
    }
    Ok((dm, dsb))
}

/// `dU(t) = dt * sum_i e_i o_i(t)^T` and `dy_b = sum_i e_i`, laid out like
/// [`MaskSet::u`] and [`MaskSet::y_b`].
pub fn output_mask_gradient(errs: &[Vec<f64>], o: &Signal) -> Result<(Vec<f64>, Vec<f64>)> {
    if errs.is_empty() {
        return Err(Error::Length("no instances".into()));
    }
    if !o.len().is_multiple_of(errs.len()) {
        return Err(Error::Length(format!(
            "{} output samples for {} instances",
            o.len(),
            errs.len()
        )));
    }
    let p = o.len() / errs.len();
    let m = o.channels();
    let dim_y = errs[0].len();
    check_vectors(errs, dim_y, "error")?;
    let dt = o.dt();
    let mut du = vec![0.0; p * dim_y * m];
    let mut dyb = vec![0.0; dim_y];
    for (i, e) in errs.iter().enumerate() {
        for (k, ek) in e.iter().enumerate() {
            dyb[k] += ek;
        }
        for t in 0..p {
            let os = o.sample(i * p + t);
            let block = &mut du[t * dim_y * m..(t + 1) * dim_y * m];
            for (k, ek) in e.iter().enumerate() {
                for (c, oc) in os.iter().enumerate() {
                    block[k * m + c] += dt * ek * oc;
                }
            }
        }
    }
    Ok((du, dyb))
}

/// Per-instance contraction `sum_t M(t)^T e_s^i(t)`: the adjoint of the
/// zero-bias encoder.
pub fn input_adjoint(e_s: &Signal, masks: &MaskSet) -> Result<Vec<Vec<f64>>> {
    let count = check_segmented(e_s, masks.n_inputs, masks.period)?;
    let p = masks.period;
    Ok((0..count)
        .map(|i| {
            let mut acc = vec![0.0; masks.dim_x];
            for t in 0..p {
                matvec_t_acc(
                    masks.m_at(t),
                    masks.n_inputs,
                    masks.dim_x,
                    e_s.sample(i * p + t),
                    &mut acc,
                );
            }
            acc
        })
        .collect())
}
