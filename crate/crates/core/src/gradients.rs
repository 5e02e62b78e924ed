//! Kernel and mask gradients from a forward/backward pair, the end-to-end
//! gradient pipeline, and the central-difference oracle that checks it.
//!
//! Every gradient returned here is the partial derivative of the cost with
//! respect to the stored parameter array. The output-error encoder injects
//! `U^T e` without the decoder's `dt` weight, so the blocks reached through
//! the physical backward pass (kernels, `M`, `s_b`) pick up one factor of
//! `dt` during assembly.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::{
    decode_outputs, encode_inputs, encode_output_errors, input_mask_gradient, output_mask_gradient, MaskSet,
};
use crate::signal::{Kernel, Signal};
use crate::system::{
    backward_with, forward, BackwardOptions, BackwardTrace, ForwardTrace, Nonlinearity, PhysicalSystem,
};
use crate::tasks::SequenceDataset;
use crate::training::CostKind;

/// Trainable parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    WSa,
    WAa,
    WSo,
    WAo,
    M,
    SB,
    U,
    YB,
}

impl Block {
    pub const ALL: [Block; 8] = [
        Block::WSa,
        Block::WAa,
        Block::WSo,
        Block::WAo,
        Block::M,
        Block::SB,
        Block::U,
        Block::YB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::WSa => "w_sa",
            Block::WAa => "w_aa",
            Block::WSo => "w_so",
            Block::WAo => "w_ao",
            Block::M => "m",
            Block::SB => "s_b",
            Block::U => "u",
            Block::YB => "y_b",
        }
    }

    pub fn parse(name: &str) -> Result<Block> {
        Block::ALL
            .into_iter()
            .find(|b| b.name() == name)
            .ok_or_else(|| Error::Parse(format!("unknown parameter block {name:?}")))
    }

    pub fn is_kernel(self) -> bool {
        matches!(self, Block::WSa | Block::WAa | Block::WSo | Block::WAo)
    }
}

/// Gradients for every parameter block, each laid out like the parameter
/// it belongs to. Tap 0 of `d_w_aa` is always zero since that tap is not
/// free.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_w_sa: Vec<f64>,
    pub d_w_aa: Vec<f64>,
    pub d_w_so: Vec<f64>,
    pub d_w_ao: Vec<f64>,
    pub d_m: Vec<f64>,
    pub d_s_b: Vec<f64>,
    pub d_u: Vec<f64>,
    pub d_y_b: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(sys: &PhysicalSystem, masks: &MaskSet) -> Self {
        Self {
            d_w_sa: vec![0.0; sys.w_sa().as_slice().len()],
            d_w_aa: vec![0.0; sys.w_aa().as_slice().len()],
            d_w_so: vec![0.0; sys.w_so().as_slice().len()],
            d_w_ao: vec![0.0; sys.w_ao().as_slice().len()],
            d_m: vec![0.0; masks.m.len()],
            d_s_b: vec![0.0; masks.s_b.len()],
            d_u: vec![0.0; masks.u.len()],
            d_y_b: vec![0.0; masks.y_b.len()],
        }
    }

    pub fn block(&self, b: Block) -> &[f64] {
        match b {
            Block::WSa => &self.d_w_sa,
            Block::WAa => &self.d_w_aa,
            Block::WSo => &self.d_w_so,
            Block::WAo => &self.d_w_ao,
            Block::M => &self.d_m,
            Block::SB => &self.d_s_b,
            Block::U => &self.d_u,
            Block::YB => &self.d_y_b,
        }
    }

    pub fn block_mut(&mut self, b: Block) -> &mut Vec<f64> {
        match b {
            Block::WSa => &mut self.d_w_sa,
            Block::WAa => &mut self.d_w_aa,
            Block::WSo => &mut self.d_w_so,
            Block::WAo => &mut self.d_w_ao,
            Block::M => &mut self.d_m,
            Block::SB => &mut self.d_s_b,
            Block::U => &mut self.d_u,
            Block::YB => &mut self.d_y_b,
        }
    }

    pub fn add_assign(&mut self, other: &GradientBundle) {
        for b in Block::ALL {
            for (x, y) in self.block_mut(b).iter_mut().zip(other.block(b)) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in Block::ALL {
            self.block_mut(b).iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// `d[k] = dt * sum_i dst[i + k] src[i]^T` for the requested lags (all
/// lags when `lags` is `None`); other lags stay zero. Output is a flat
/// `len x rows x cols` tap stack.
pub fn tap_gradient(dst: &Signal, src: &Signal, len: usize, lags: Option<&[usize]>) -> Vec<f64> {
    let (r, c) = (dst.channels(), src.channels());
    let n = dst.len().min(src.len());
    let dt = dst.dt();
    let mut out = vec![0.0; len * r * c];
    let all: Vec<usize>;
    let lags = match lags {
        Some(l) => l,
        None => {
            all = (0..len).collect();
            &all
        }
    };
    for &k in lags.iter().filter(|&&k| k < len) {
        let block = &mut out[k * r * c..(k + 1) * r * c];
        for i in 0..n.saturating_sub(k) {
            let e = dst.sample(i + k);
            let x = src.sample(i);
            for (rr, er) in e.iter().enumerate() {
                if *er == 0.0 {
                    continue;
                }
                for (cc, xc) in x.iter().enumerate() {
                    block[rr * c + cc] += er * xc;
                }
            }
        }
        block.iter_mut().for_each(|v| *v *= dt);
    }
    out
}

/// Kernel gradients from one forward/backward pair, given the injected
/// output error `e_o` and the input `s`. Pairs: `(e_a, s)`, `(e_a, a)`,
/// `(e_o, s)`, `(e_o, a)`.
pub fn kernel_gradients(
    sys: &PhysicalSystem,
    fwd: &ForwardTrace,
    bwd: &BackwardTrace,
    e_o: &Signal,
    s: &Signal,
) -> Result<[Vec<f64>; 4]> {
    kernel_gradients_at(sys, fwd, bwd, e_o, s, None)
}

/// [`kernel_gradients`] restricted to some lags per kernel, in the order
/// `w_sa, w_aa, w_so, w_ao`.
pub fn kernel_gradients_at(
    sys: &PhysicalSystem,
    fwd: &ForwardTrace,
    bwd: &BackwardTrace,
    e_o: &Signal,
    s: &Signal,
    lags: Option<[Option<&[usize]>; 4]>,
) -> Result<[Vec<f64>; 4]> {
    let n = s.len();
    if fwd.len() != n || bwd.e_a.len() != n || e_o.len() != n {
        return Err(Error::Dimension(
            "forward, backward and input traces differ in length".into(),
        ));
    }
    let lags = lags.unwrap_or([None; 4]);
    let mut d_w_aa = tap_gradient(&bwd.e_a, &fwd.a, sys.w_aa().len(), lags[1]);
    let b = sys.n_states() * sys.n_states();
    d_w_aa[..b].iter_mut().for_each(|v| *v = 0.0);
    Ok([
        tap_gradient(&bwd.e_a, s, sys.w_sa().len(), lags[0]),
        d_w_aa,
        tap_gradient(e_o, s, sys.w_so().len(), lags[2]),
        tap_gradient(e_o, &fwd.a, sys.w_ao().len(), lags[3]),
    ])
}

/// Options for one end-to-end gradient evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineOptions<'a> {
    /// Skip kernel gradients entirely (mask-only training).
    pub skip_kernels: bool,
    /// Only these lags per kernel, when set.
    pub kernel_lags: Option<[Option<&'a [usize]>; 4]>,
    pub backward: BackwardOptions,
}

/// Result of one forward/backward sweep over a batch.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: f64,
    pub outputs: Vec<Vec<f64>>,
    pub grads: GradientBundle,
}

/// Cost only: encode, simulate, decode, score.
pub fn evaluate_cost(
    sys: &PhysicalSystem,
    masks: &MaskSet,
    batch: &SequenceDataset,
    cost: CostKind,
    rng: Option<&mut dyn RngCore>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let s = encode_inputs(&batch.inputs, masks, sys.dt())?;
    let fwd = forward(sys, &s, rng)?;
    let ys = decode_outputs(&fwd.o, masks)?;
    let (c, _) = cost.evaluate(&ys, &batch.targets, &batch.cost_mask)?;
    Ok((c, ys))
}

/// Full pipeline: forward pass, output errors, physical backward pass and
/// gradients for all blocks.
pub fn evaluate_gradients(
    sys: &PhysicalSystem,
    masks: &MaskSet,
    batch: &SequenceDataset,
    cost: CostKind,
    mut rng: Option<&mut dyn RngCore>,
    opts: PipelineOptions<'_>,
) -> Result<Evaluation> {
    let s = encode_inputs(&batch.inputs, masks, sys.dt())?;
    let fwd = forward(sys, &s, rng.as_mut().map(|r| &mut **r as &mut dyn RngCore))?;
    let ys = decode_outputs(&fwd.o, masks)?;
    let (c, errs) = cost.evaluate(&ys, &batch.targets, &batch.cost_mask)?;
    let grads = backprop_errors(sys, masks, &batch.inputs, &s, &fwd, &errs, rng, opts)?;
    Ok(Evaluation {
        cost: c,
        outputs: ys,
        grads,
    })
}

/// Gradients of every block given the per-instance output errors
/// `dC/dy_i` of a recorded forward run driven by `s`.
#[allow(clippy::too_many_arguments)]
pub fn backprop_errors(
    sys: &PhysicalSystem,
    masks: &MaskSet,
    inputs: &[Vec<f64>],
    s: &Signal,
    fwd: &ForwardTrace,
    errs: &[Vec<f64>],
    rng: Option<&mut dyn RngCore>,
    opts: PipelineOptions<'_>,
) -> Result<GradientBundle> {
    let dt = sys.dt();
    let e_o = encode_output_errors(errs, masks, dt)?;
    let bwd = backward_with(sys, fwd, &e_o, rng, opts.backward)?;

    let mut grads = GradientBundle::zeros_like(sys, masks);
    let (dm, dsb) = input_mask_gradient(&bwd.e_s, inputs)?;
    grads.d_m = dm.into_iter().map(|v| v * dt).collect();
    grads.d_s_b = dsb.into_iter().map(|v| v * dt).collect();
    let (du, dyb) = output_mask_gradient(errs, &fwd.o)?;
    grads.d_u = du;
    grads.d_y_b = dyb;
    if !opts.skip_kernels {
        let [a, b, c, d] = kernel_gradients_at(sys, fwd, &bwd, &e_o, s, opts.kernel_lags)?;
        grads.d_w_sa = a.into_iter().map(|v| v * dt).collect();
        grads.d_w_aa = b.into_iter().map(|v| v * dt).collect();
        grads.d_w_so = c.into_iter().map(|v| v * dt).collect();
        grads.d_w_ao = d.into_iter().map(|v| v * dt).collect();
    }
    Ok(grads)
}

/// Free parameters of a block as a flat vector. For `w_aa` the fixed zero
/// tap at lag 0 is left out.
pub fn block_params(sys: &PhysicalSystem, masks: &MaskSet, b: Block) -> Vec<f64> {
    match b {
        Block::WSa => sys.w_sa().as_slice().to_vec(),
        Block::WAa => {
            let skip = sys.n_states() * sys.n_states();
            sys.w_aa().as_slice()[skip..].to_vec()
        }
        Block::WSo => sys.w_so().as_slice().to_vec(),
        Block::WAo => sys.w_ao().as_slice().to_vec(),
        Block::M => masks.m.clone(),
        Block::SB => masks.s_b.clone(),
        Block::U => masks.u.clone(),
        Block::YB => masks.y_b.clone(),
    }
}

/// Gradient entries matching [`block_params`].
pub fn block_grad(sys: &PhysicalSystem, grads: &GradientBundle, b: Block) -> Vec<f64> {
    match b {
        Block::WAa => grads.d_w_aa[sys.n_states() * sys.n_states()..].to_vec(),
        _ => grads.block(b).to_vec(),
    }
}

/// Writes `values` (laid out as in [`block_params`]) back into the model.
pub fn set_block_params(sys: &mut PhysicalSystem, masks: &mut MaskSet, b: Block, values: &[f64]) -> Result<()> {
    let expect = block_params(sys, masks, b).len();
    if values.len() != expect {
        return Err(Error::Dimension(format!(
            "block {} has {expect} parameters, got {}",
            b.name(),
            values.len()
        )));
    }
    let kernel = |k: &Kernel, v: Vec<f64>| k.with_taps(v);
    match b {
        Block::WSa => {
            let k = kernel(sys.w_sa(), values.to_vec())?;
            *sys = sys.with_kernels(k, sys.w_aa().clone(), sys.w_so().clone(), sys.w_ao().clone())?;
        }
        Block::WAa => {
            let mut v = vec![0.0; sys.n_states() * sys.n_states()];
            v.extend_from_slice(values);
            let k = kernel(sys.w_aa(), v)?;
            *sys = sys.with_kernels(sys.w_sa().clone(), k, sys.w_so().clone(), sys.w_ao().clone())?;
        }
        Block::WSo => {
            let k = kernel(sys.w_so(), values.to_vec())?;
            *sys = sys.with_kernels(sys.w_sa().clone(), sys.w_aa().clone(), k, sys.w_ao().clone())?;
        }
        Block::WAo => {
            let k = kernel(sys.w_ao(), values.to_vec())?;
            *sys = sys.with_kernels(sys.w_sa().clone(), sys.w_aa().clone(), sys.w_so().clone(), k)?;
        }
        Block::M => masks.m.copy_from_slice(values),
        Block::SB => masks.s_b.copy_from_slice(values),
        Block::U => masks.u.copy_from_slice(values),
        Block::YB => masks.y_b.copy_from_slice(values),
    }
    Ok(())
}

/// Central differences `(L(θ + ε e_j) - L(θ - ε e_j)) / 2ε` for every
/// coordinate. Coordinates are probed in parallel; results keep coordinate
/// order.
pub fn finite_difference_gradient<F>(loss: F, theta: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    (0..theta.len())
        .into_par_iter()
        .map(|j| {
            let mut probe = theta.to_vec();
            probe[j] = theta[j] + eps;
            let up = loss(&probe)?;
            probe[j] = theta[j] - eps;
            let down = loss(&probe)?;
            if !(up.is_finite() && down.is_finite()) {
                return Err(Error::Numeric(format!("loss at coordinate {j}")));
            }
            Ok((up - down) / (2.0 * eps))
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, 1e-12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Toy-system description for [`grad_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub n_inputs: usize,
    pub n_states: usize,
    pub n_outputs: usize,
    pub kernel_len: usize,
    pub dim_x: usize,
    pub dim_y: usize,
    pub period: usize,
    pub instances: usize,
    pub dt: f64,
    pub nonlinearity: Nonlinearity,
    pub eps: f64,
    pub threshold: f64,
    /// Toy instances with a pre-activation closer than this to a kink are
    /// redrawn.
    pub kink_margin: f64,
    /// Number of random toy systems; the report keeps the worst error.
    pub systems: usize,
    pub break_adjoint: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_inputs: 2,
            n_states: 3,
            n_outputs: 2,
            kernel_len: 4,
            dim_x: 2,
            dim_y: 2,
            period: 5,
            instances: 6,
            dt: 0.5,
            nonlinearity: Nonlinearity::Rectifier,
            eps: 1e-5,
            threshold: 1e-4,
            kink_margin: 1e-3,
            systems: 1,
            break_adjoint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    pub block: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub threshold: f64,
    pub systems: usize,
    pub blocks: Vec<BlockResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.max_rel_err))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "gradient check: {} system(s), threshold {:e}",
            self.systems, self.threshold
        );
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "  {:<5} max_rel_err={:.3e} {}",
                b.block,
                b.max_rel_err,
                if b.pass { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }

    /// `block,max_rel_err,pass`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for b in &self.blocks {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, threshold: f64, systems: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let blocks = r.deserialize().collect::<std::result::Result<Vec<BlockResult>, _>>()?;
        Ok(Self {
            threshold,
            systems,
            blocks,
        })
    }
}

/// A random toy model and batch for gradient checks.
pub struct ToyProblem {
    pub system: PhysicalSystem,
    pub masks: MaskSet,
    pub batch: SequenceDataset,
}

fn uniform_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

fn toy_kernel(rng: &mut impl Rng, r: usize, c: usize, l: usize, dt: f64, gain: f64) -> Result<Kernel> {
    let scale = gain / (dt * l as f64 * c as f64);
    Kernel::new(r, c, dt, uniform_vec(rng, l * r * c, scale))
}

/// Draws one toy problem. Kernels are scaled so that `dt * sum |W|` stays
/// around one and the recursion cannot blow up.
pub fn random_toy(cfg: &GradCheckConfig, rng: &mut impl Rng) -> Result<ToyProblem> {
    let dt = cfg.dt;
    let (n, na, m, l) = (cfg.n_inputs, cfg.n_states, cfg.n_outputs, cfg.kernel_len);
    let mut w_aa = toy_kernel(rng, na, na, l, dt, 0.8)?;
    w_aa = w_aa.with_tap(0, &vec![0.0; na * na])?;
    let system = PhysicalSystem::new(
        toy_kernel(rng, na, n, l, dt, 2.0)?,
        w_aa,
        toy_kernel(rng, m, n, l, dt, 1.0)?,
        toy_kernel(rng, m, na, l, dt, 1.0)?,
        cfg.nonlinearity,
    )?;
    let mut masks = MaskSet::zeros(n, cfg.dim_x, m, cfg.dim_y, cfg.period);
    masks.m = uniform_vec(rng, masks.m.len(), 1.0);
    masks.u = uniform_vec(rng, masks.u.len(), 1.0 / (dt * cfg.period as f64));
    masks.s_b = uniform_vec(rng, masks.s_b.len(), 0.5);
    masks.y_b = uniform_vec(rng, masks.y_b.len(), 0.5);
    let inputs: Vec<Vec<f64>> = (0..cfg.instances).map(|_| uniform_vec(rng, cfg.dim_x, 1.0)).collect();
    let targets: Vec<Vec<f64>> = (0..cfg.instances).map(|_| uniform_vec(rng, cfg.dim_y, 1.0)).collect();
    let batch = SequenceDataset::new(inputs, targets, vec![true; cfg.instances])?;
    Ok(ToyProblem { system, masks, batch })
}

/// Block-wise relative errors between the physical gradient and central
/// differences on one toy problem.
pub fn compare_with_oracle(
    toy: &ToyProblem,
    cost: CostKind,
    eps: f64,
    opts: BackwardOptions,
) -> Result<Vec<(Block, f64)>> {
    let eval = evaluate_gradients(
        &toy.system,
        &toy.masks,
        &toy.batch,
        cost,
        None,
        PipelineOptions {
            backward: opts,
            ..PipelineOptions::default()
        },
    )?;
    Block::ALL
        .into_iter()
        .map(|b| {
            let theta = block_params(&toy.system, &toy.masks, b);
            let fd = finite_difference_gradient(
                |p| {
                    let mut sys = toy.system.clone();
                    let mut masks = toy.masks.clone();
                    set_block_params(&mut sys, &mut masks, b, p)?;
                    Ok(evaluate_cost(&sys, &masks, &toy.batch, cost, None)?.0)
                },
                &theta,
                eps,
            )?;
            let g = block_grad(&toy.system, &eval.grads, b);
            Ok((b, relative_error(&g, &fd)))
        })
        .collect()
}

/// Checks physically backpropagated gradients of every block against
/// central differences on `cfg.systems` random toy systems (noise off).
pub fn grad_check(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    cfg.nonlinearity.validate()?;
    if cfg.systems == 0 {
        return Err(Error::Config("grad_check needs at least one system".into()));
    }
    let mut rng = crate::seeded_rng(seed);
    let mut worst = vec![0.0f64; Block::ALL.len()];
    let opts = BackwardOptions {
        break_adjoint: cfg.break_adjoint,
    };
    for _ in 0..cfg.systems {
        let toy = draw_away_from_kinks(cfg, &mut rng)?;
        for (i, (_, err)) in compare_with_oracle(&toy, CostKind::Mse, cfg.eps, opts)?
            .into_iter()
            .enumerate()
        {
            worst[i] = worst[i].max(err);
        }
    }
    Ok(GradCheckReport {
        threshold: cfg.threshold,
        systems: cfg.systems,
        blocks: Block::ALL
            .iter()
            .zip(worst)
            .map(|(b, e)| BlockResult {
                block: b.name().to_string(),
                max_rel_err: e,
                pass: e < cfg.threshold,
            })
            .collect(),
    })
}

/// Redraws toy problems until every pre-activation clears the kink margin.
pub fn draw_away_from_kinks(cfg: &GradCheckConfig, rng: &mut impl Rng) -> Result<ToyProblem> {
    for _ in 0..1000 {
        let toy = random_toy(cfg, rng)?;
        let s = encode_inputs(&toy.batch.inputs, &toy.masks, cfg.dt)?;
        let fwd = forward(&toy.system, &s, None)?;
        if fwd.min_kink_distance(cfg.nonlinearity) > cfg.kink_margin {
            return Ok(toy);
        }
    }
    Err(Error::Config(
        "could not draw a toy system away from nonlinearity kinks".into(),
    ))
}
