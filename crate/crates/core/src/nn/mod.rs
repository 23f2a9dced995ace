//! Fully connected networks with SiLU hidden layers and a linear output layer.
//!
//! Parameters live in one flat vector: for each layer the weight matrix
//! (row-major, `out × in`) followed by the bias. Networks work in normalised
//! coordinates; [`Scaling`] maps raw inputs and outputs to and from them.

mod data;
mod dml;
mod io;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormalizationStats, IVS_DIM, PARAM_DIM};
use crate::error::{check_len, Error, Result};
use crate::pricing::{AssetClass, SURFACE_POINTS};
use crate::rng::stream;

pub use data::{fill_masked, surface_training_data};
pub use dml::{dml_batch_loss, train_dml, DmlData};
pub use io::{load_network, save_network, NetworkManifest, QRHN_MAGIC};
pub use train::{evaluate, lr_at, train, Adam, EpochRecord, History, TrainConfig, TrainData};

/// Maturities (years) of the five outputs of the hedging network.
pub const DML_MATURITIES: [f64; 5] = [0.02, 0.04, 0.06, 0.08, 0.1];
/// `S_0` plus the factor values.
pub const DML_INPUTS: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    /// Surfaces to parameters.
    Ptm,
    /// Parameters to the SPX surface.
    MtpSpx,
    /// Parameters to the VIX surface.
    MtpVix,
    /// State to call prices at the hedging maturities.
    Dml,
    Custom,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Ptm, Arch::MtpSpx, Arch::MtpVix, Arch::Dml];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Ptm => "ptm",
            Arch::MtpSpx => "mtp-spx",
            Arch::MtpVix => "mtp-vix",
            Arch::Dml => "dml",
            Arch::Custom => "custom",
        }
    }

    /// Layer widths from input to output.
    pub fn dims(self) -> Option<Vec<usize>> {
        let stack = |input: usize, width: usize, depth: usize, output: usize| {
            let mut d = vec![input];
            d.extend(std::iter::repeat_n(width, depth));
            d.push(output);
            d
        };
        match self {
            Arch::Ptm => Some(stack(IVS_DIM, 25, 7, PARAM_DIM)),
            Arch::MtpSpx | Arch::MtpVix => Some(stack(PARAM_DIM, 25, 7, SURFACE_POINTS)),
            Arch::Dml => Some(stack(DML_INPUTS, 20, 4, DML_MATURITIES.len())),
            Arch::Custom => None,
        }
    }

    pub fn surface(self) -> Option<AssetClass> {
        match self {
            Arch::MtpSpx => Some(AssetClass::Spx),
            Arch::MtpVix => Some(AssetClass::Vix),
            _ => None,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ptm" => Ok(Arch::Ptm),
            "mtp-spx" => Ok(Arch::MtpSpx),
            "mtp-vix" => Ok(Arch::MtpVix),
            "dml" => Ok(Arch::Dml),
            "custom" => Ok(Arch::Custom),
            _ => Err(Error::Config(format!("unknown architecture '{s}'"))),
        }
    }
}

/// Affine maps `x_norm = (x - in_center) * in_scale` and `y = y_norm * out_scale + out_center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub in_center: Vec<f64>,
    pub in_scale: Vec<f64>,
    pub out_center: Vec<f64>,
    pub out_scale: Vec<f64>,
}

impl Scaling {
    pub fn identity(inputs: usize, outputs: usize) -> Self {
        Scaling {
            in_center: vec![0.0; inputs],
            in_scale: vec![1.0; inputs],
            out_center: vec![0.0; outputs],
            out_scale: vec![1.0; outputs],
        }
    }

    /// The corpus normalisation seen from the given network.
    pub fn from_stats(arch: Arch, stats: &NormalizationStats) -> Result<Self> {
        let mid: Vec<f64> = stats.param_lo.iter().zip(&stats.param_hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let half: Vec<f64> = stats.param_lo.iter().zip(&stats.param_hi).map(|(l, h)| 0.5 * (h - l)).collect();
        let inv = |v: &[f64]| v.iter().map(|x| 1.0 / x).collect::<Vec<f64>>();
        match arch {
            Arch::MtpSpx | Arch::MtpVix => {
                let offset = if arch == Arch::MtpSpx { 0 } else { SURFACE_POINTS };
                let range = offset..offset + SURFACE_POINTS;
                Ok(Scaling {
                    in_scale: inv(&half),
                    in_center: mid,
                    out_center: stats.ivs_mean[range.clone()].to_vec(),
                    out_scale: stats.ivs_std[range].to_vec(),
                })
            }
            Arch::Ptm => Ok(Scaling {
                in_center: stats.ivs_mean.clone(),
                in_scale: inv(&stats.ivs_std),
                out_center: mid,
                out_scale: half,
            }),
            _ => Err(Error::domain(format!("corpus statistics do not apply to the {arch} network"))),
        }
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.in_center).zip(&self.in_scale).map(|((x, c), s)| (x - c) * s).collect()
    }

    pub fn denormalize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.out_center).zip(&self.out_scale).map(|((y, c), s)| y * s + c).collect()
    }

    pub fn normalize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.out_center).zip(&self.out_scale).map(|((y, c), s)| (y - c) / s).collect()
    }

    fn check(&self, inputs: usize, outputs: usize) -> Result<()> {
        check_len(inputs, self.in_center.len())?;
        check_len(inputs, self.in_scale.len())?;
        check_len(outputs, self.out_center.len())?;
        check_len(outputs, self.out_scale.len())?;
        let all = self.in_center.iter().chain(&self.in_scale).chain(&self.out_center).chain(&self.out_scale);
        if all.clone().any(|v| !v.is_finite()) || self.in_scale.iter().chain(&self.out_scale).any(|&s| s == 0.0) {
            return Err(Error::domain("scaling must be finite with nonzero scales"));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
pub fn silu_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

#[inline]
pub fn silu_second(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LayerSlot {
    pub inputs: usize,
    pub outputs: usize,
    pub w: usize,
    pub b: usize,
}

fn layout(dims: &[usize]) -> (Vec<LayerSlot>, usize) {
    let mut slots = Vec::with_capacity(dims.len().saturating_sub(1));
    let mut off = 0;
    for pair in dims.windows(2) {
        let (i, o) = (pair[0], pair[1]);
        slots.push(LayerSlot { inputs: i, outputs: o, w: off, b: off + i * o });
        off += i * o + o;
    }
    (slots, off)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub arch: Arch,
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
    pub scaling: Scaling,
    /// Hash of the training split the scaling was fitted on; empty when not tied to a corpus.
    pub norm_hash: String,
    slots: Vec<LayerSlot>,
}

/// Pre-activations and activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub(crate) pre: Vec<Vec<f64>>,
    pub(crate) act: Vec<Vec<f64>>,
    pub(crate) delta: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(dims: &[usize]) -> Self {
        Workspace {
            pre: dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
            act: dims.iter().map(|&d| vec![0.0; d]).collect(),
            delta: dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.act.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

impl MlpNetwork {
    /// One of the fixed architectures with fresh weights.
    pub fn new(arch: Arch, scaling: Scaling, seed: u64) -> Result<Self> {
        let dims = arch.dims().ok_or_else(|| Error::domain("custom networks need explicit layer widths"))?;
        let mut net = Self::with_dims(&dims, seed)?;
        scaling.check(dims[0], dims[dims.len() - 1])?;
        net.arch = arch;
        net.scaling = scaling;
        Ok(net)
    }

    /// Arbitrary widths, identity scaling, fan-in uniform weights `U(-1/√n_in, 1/√n_in)`.
    pub fn with_dims(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::domain("a network needs at least an input and an output layer, all nonempty"));
        }
        let (slots, count) = layout(dims);
        let mut rng = stream(seed, 0);
        let mut params = vec![0.0; count];
        for s in &slots {
            let bound = 1.0 / (s.inputs as f64).sqrt();
            for p in &mut params[s.w..s.b + s.outputs] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(MlpNetwork {
            arch: Arch::Custom,
            dims: dims.to_vec(),
            params,
            scaling: Scaling::identity(dims[0], dims[dims.len() - 1]),
            norm_hash: String::new(),
            slots,
        })
    }

    pub(crate) fn from_parts(arch: Arch, dims: Vec<usize>, params: Vec<f64>, scaling: Scaling, norm_hash: String) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::format("bad layer widths"));
        }
        if let Some(want) = arch.dims() {
            if want != dims {
                return Err(Error::format(format!("{arch} network must have widths {want:?}, got {dims:?}")));
            }
        }
        let (slots, count) = layout(&dims);
        check_len(count, params.len())?;
        scaling.check(dims[0], dims[dims.len() - 1])?;
        Ok(MlpNetwork { arch, dims, params, scaling, norm_hash, slots })
    }

    pub fn inputs(&self) -> usize {
        self.dims[0]
    }

    pub fn outputs(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(&self.dims)
    }

    /// Forward pass in normalised coordinates, keeping intermediates in `ws`.
    pub fn forward_into<'a>(&self, x: &[f64], ws: &'a mut Workspace) -> &'a [f64] {
        ws.act[0].copy_from_slice(x);
        let last = self.slots.len() - 1;
        for (l, s) in self.slots.iter().enumerate() {
            let w = &self.params[s.w..s.b];
            let b = &self.params[s.b..s.b + s.outputs];
            let (head, tail) = ws.act.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            let pre = &mut ws.pre[l];
            for r in 0..s.outputs {
                let row = &w[r * s.inputs..(r + 1) * s.inputs];
                let z = b[r] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                pre[r] = z;
                out[r] = if l < last { silu(z) } else { z };
            }
        }
        ws.output()
    }

    /// Reverse sweep after [`forward_into`](Self::forward_into): accumulates the parameter
    /// gradient of `upstream · output` into `grad` and optionally writes the input gradient.
    pub fn backward_into(&self, ws: &mut Workspace, upstream: &[f64], grad: &mut [f64], input_grad: Option<&mut [f64]>) {
        let last = self.slots.len() - 1;
        ws.delta[last + 1].copy_from_slice(upstream);
        for l in (0..=last).rev() {
            let s = self.slots[l];
            let (lower, upper) = ws.delta.split_at_mut(l + 1);
            let d = &mut upper[0];
            if l < last {
                for (d, z) in d.iter_mut().zip(&ws.pre[l]) {
                    *d *= silu_prime(*z);
                }
            }
            let input = &ws.act[l];
            for r in 0..s.outputs {
                let dr = d[r];
                grad[s.b + r] += dr;
                if dr != 0.0 {
                    let row = &mut grad[s.w + r * s.inputs..s.w + (r + 1) * s.inputs];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += dr * a;
                    }
                }
            }
            let below = &mut lower[l];
            below.iter_mut().for_each(|v| *v = 0.0);
            let w = &self.params[s.w..s.b];
            for r in 0..s.outputs {
                let dr = d[r];
                if dr != 0.0 {
                    for (v, wv) in below.iter_mut().zip(&w[r * s.inputs..(r + 1) * s.inputs]) {
                        *v += dr * wv;
                    }
                }
            }
        }
        if let Some(out) = input_grad {
            out.copy_from_slice(&ws.delta[0]);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.inputs(), x.len())?;
        let mut ws = self.workspace();
        Ok(self.forward_into(x, &mut ws).to_vec())
    }

    /// Gradients of `upstream · f(x)` with respect to the parameters and to `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(self.inputs(), x.len())?;
        check_len(self.outputs(), upstream.len())?;
        let mut ws = self.workspace();
        self.forward_into(x, &mut ws);
        let mut grad = vec![0.0; self.params.len()];
        let mut gx = vec![0.0; self.inputs()];
        self.backward_into(&mut ws, upstream, &mut grad, Some(&mut gx));
        Ok((grad, gx))
    }

    /// Output and `∂output/∂input` (row-major, outputs × inputs) in normalised coordinates.
    pub fn jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(self.inputs(), x.len())?;
        let (ni, no) = (self.inputs(), self.outputs());
        let mut ws = self.workspace();
        let y = self.forward_into(x, &mut ws).to_vec();
        let mut jac = vec![0.0; no * ni];
        let mut unit = vec![0.0; no];
        let mut scratch = vec![0.0; self.params.len()];
        for k in 0..no {
            unit.iter_mut().for_each(|u| *u = 0.0);
            unit[k] = 1.0;
            self.backward_into(&mut ws, &unit, &mut scratch, Some(&mut jac[k * ni..(k + 1) * ni]));
        }
        Ok((y, jac))
    }

    /// Evaluation on raw inputs with raw outputs.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.inputs(), x.len())?;
        let y = self.forward(&self.scaling.normalize_input(x))?;
        Ok(self.scaling.denormalize_output(&y))
    }

    /// Raw outputs and their Jacobian with respect to the raw inputs.
    pub fn predict_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(self.inputs(), x.len())?;
        let (y, mut jac) = self.jacobian(&self.scaling.normalize_input(x))?;
        let ni = self.inputs();
        for (k, row) in jac.chunks_mut(ni).enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= self.scaling.out_scale[k] * self.scaling.in_scale[j];
            }
        }
        Ok((self.scaling.denormalize_output(&y), jac))
    }

    /// Raw outputs and `Σ_k w_k ∂y_k/∂x` with respect to the raw inputs, from one reverse sweep.
    pub fn predict_vjp(&self, x: &[f64], weights: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(self.inputs(), x.len())?;
        check_len(self.outputs(), weights.len())?;
        let mut ws = self.workspace();
        let y = self.forward_into(&self.scaling.normalize_input(x), &mut ws).to_vec();
        let upstream: Vec<f64> = weights.iter().zip(&self.scaling.out_scale).map(|(w, s)| w * s).collect();
        let mut scratch = vec![0.0; self.params.len()];
        let mut gx = vec![0.0; self.inputs()];
        self.backward_into(&mut ws, &upstream, &mut scratch, Some(&mut gx));
        for (g, s) in gx.iter_mut().zip(&self.scaling.in_scale) {
            *g *= s;
        }
        Ok((self.scaling.denormalize_output(&y), gx))
    }

    /// Copies the donor's weights; the layer widths must agree.
    pub fn warm_start(&mut self, donor: &MlpNetwork) -> Result<()> {
        if donor.dims != self.dims {
            return Err(Error::domain(format!("cannot warm start {:?} from {:?}", self.dims, donor.dims)));
        }
        self.params.copy_from_slice(&donor.params);
        Ok(())
    }
}
