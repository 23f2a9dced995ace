//! Differential training: fit values and the input gradient of their average.
//!
//! The derivative term needs the gradient of an input gradient with respect to the
//! weights. The input gradient comes from a tangent sweep (output to input); its
//! adjoint is propagated back through that sweep (input to output), which yields
//! weight contributions and extra pre-activation adjoints that are then injected
//! into an ordinary reverse sweep together with the value residual.

use super::train::{fit, History, TrainConfig};
use super::{silu_prime, silu_second, MlpNetwork, Scaling, Workspace};
use crate::error::{check_len, Error, Result};

/// Normalised differential samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DmlData {
    pub inputs: usize,
    pub outputs: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Targets for the input gradient of `upstream · output`.
    pub target_grad: Vec<f64>,
    /// Output weights of the averaged derivative.
    pub upstream: Vec<f64>,
}

impl DmlData {
    /// `x_raw` states, `y_raw` payoffs per output, `grad_raw` the raw derivative of the
    /// output average with respect to the state.
    pub fn from_raw(scaling: &Scaling, x_raw: &[f64], y_raw: &[f64], grad_raw: &[f64]) -> Result<Self> {
        let (ni, no) = (scaling.in_center.len(), scaling.out_center.len());
        if ni == 0 || no == 0 || x_raw.len() % ni != 0 {
            return Err(Error::domain("inputs must be a whole number of rows"));
        }
        let n = x_raw.len() / ni;
        check_len(n * no, y_raw.len())?;
        check_len(n * ni, grad_raw.len())?;
        let mean_scale = scaling.out_scale.iter().sum::<f64>() / no as f64;
        let upstream: Vec<f64> = scaling.out_scale.iter().map(|s| s / (no as f64 * mean_scale)).collect();
        let mut x = Vec::with_capacity(x_raw.len());
        let mut y = Vec::with_capacity(y_raw.len());
        let mut target_grad = Vec::with_capacity(grad_raw.len());
        for i in 0..n {
            x.extend(scaling.normalize_input(&x_raw[i * ni..(i + 1) * ni]));
            y.extend(scaling.normalize_output(&y_raw[i * no..(i + 1) * no]));
            target_grad.extend((0..ni).map(|j| grad_raw[i * ni + j] / (mean_scale * scaling.in_scale[j])));
        }
        if x.iter().chain(&y).chain(&target_grad).any(|v| !v.is_finite()) {
            return Err(Error::domain("differential samples must be finite"));
        }
        Ok(DmlData { inputs: ni, outputs: no, x, y, target_grad, upstream })
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.inputs
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn check(&self, net: &MlpNetwork) -> Result<()> {
        check_len(net.inputs(), self.inputs)?;
        check_len(net.outputs(), self.outputs)?;
        if self.is_empty() {
            return Err(Error::domain("empty training data"));
        }
        Ok(())
    }
}

impl Scaling {
    /// Input z-scores per coordinate (unit scale where constant) and one pooled output scale.
    pub fn fit_differential(inputs: usize, outputs: usize, x_raw: &[f64], y_raw: &[f64]) -> Result<Self> {
        if inputs == 0 || outputs == 0 || x_raw.is_empty() || x_raw.len() % inputs != 0 {
            return Err(Error::domain("inputs must be a nonempty whole number of rows"));
        }
        let n = x_raw.len() / inputs;
        check_len(n * outputs, y_raw.len())?;
        let stats = |data: &[f64], width: usize, j: usize| {
            let mean = (0..n).map(|i| data[i * width + j]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (data[i * width + j] - mean).powi(2)).sum::<f64>() / n as f64;
            (mean, var)
        };
        let mut s = Scaling::identity(inputs, outputs);
        for j in 0..inputs {
            let (m, v) = stats(x_raw, inputs, j);
            s.in_center[j] = m;
            s.in_scale[j] = if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 };
        }
        let mut pooled = 0.0;
        for k in 0..outputs {
            let (m, v) = stats(y_raw, outputs, k);
            s.out_center[k] = m;
            pooled += v;
        }
        let pooled = (pooled / outputs as f64).sqrt();
        s.out_scale = vec![if pooled > 0.0 { pooled } else { 1.0 }; outputs];
        Ok(s)
    }
}

struct Scratch {
    /// Adjoint of each activation in the tangent sweep.
    gact: Vec<Vec<f64>>,
    /// Tangent at each pre-activation.
    dpre: Vec<Vec<f64>>,
    gact_bar: Vec<Vec<f64>>,
    inject: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(dims: &[usize]) -> Self {
        let act = || dims.iter().map(|&d| vec![0.0; d]).collect::<Vec<_>>();
        let pre = || dims[1..].iter().map(|&d| vec![0.0; d]).collect::<Vec<_>>();
        Scratch { gact: act(), dpre: pre(), gact_bar: act(), inject: pre(), delta: act() }
    }
}

/// Squared value and gradient residuals of one sample; accumulates into `grad` the
/// gradient of `value_weight·Σr² + grad_weight·Σe²`.
#[allow(clippy::too_many_arguments)]
fn sample(
    net: &MlpNetwork,
    ws: &mut Workspace,
    sc: &mut Scratch,
    data: &DmlData,
    i: usize,
    value_weight: f64,
    grad_weight: f64,
    grad: Option<&mut [f64]>,
) -> (f64, f64) {
    let (ni, no) = (data.inputs, data.outputs);
    let slots = net.slots();
    let last = slots.len() - 1;
    let p = &net.params;

    let out = net.forward_into(&data.x[i * ni..(i + 1) * ni], ws);
    let y = &data.y[i * no..(i + 1) * no];
    let resid: Vec<f64> = out.iter().zip(y).map(|(a, b)| a - b).collect();
    let value_sse: f64 = resid.iter().map(|r| r * r).sum();

    // tangent sweep: input gradient of upstream · output
    sc.dpre[last].copy_from_slice(&data.upstream);
    for l in (0..=last).rev() {
        let s = slots[l];
        if l < last {
            for r in 0..s.outputs {
                sc.dpre[l][r] = sc.gact[l + 1][r] * silu_prime(ws.pre[l][r]);
            }
        }
        let g = &mut sc.gact[l];
        g.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..s.outputs {
            let d = sc.dpre[l][r];
            for (v, w) in g.iter_mut().zip(&p[s.w + r * s.inputs..s.w + (r + 1) * s.inputs]) {
                *v += d * w;
            }
        }
    }
    let target = &data.target_grad[i * ni..(i + 1) * ni];
    let gerr: Vec<f64> = sc.gact[0].iter().zip(target).map(|(a, b)| a - b).collect();
    let grad_sse: f64 = gerr.iter().map(|e| e * e).sum();

    let Some(grad) = grad else {
        return (value_sse, grad_sse);
    };

    // adjoint of the tangent sweep, input side first
    for (b, e) in sc.gact_bar[0].iter_mut().zip(&gerr) {
        *b = 2.0 * grad_weight * e;
    }
    for l in 0..=last {
        let s = slots[l];
        let below = &sc.gact_bar[l];
        let mut dpre_bar = vec![0.0; s.outputs];
        for r in 0..s.outputs {
            let d = sc.dpre[l][r];
            let row = s.w + r * s.inputs;
            let mut acc = 0.0;
            for c in 0..s.inputs {
                grad[row + c] += d * below[c];
                acc += p[row + c] * below[c];
            }
            dpre_bar[r] = acc;
        }
        if l < last {
            for r in 0..s.outputs {
                let z = ws.pre[l][r];
                sc.gact_bar[l + 1][r] = dpre_bar[r] * silu_prime(z);
                sc.inject[l][r] = dpre_bar[r] * sc.gact[l + 1][r] * silu_second(z);
            }
        }
    }

    // ordinary reverse sweep with the injected adjoints
    for (d, r) in sc.delta[last + 1].iter_mut().zip(&resid) {
        *d = 2.0 * value_weight * r;
    }
    for l in (0..=last).rev() {
        let s = slots[l];
        let (lower, upper) = sc.delta.split_at_mut(l + 1);
        let d = &mut upper[0];
        if l < last {
            for r in 0..s.outputs {
                d[r] = d[r] * silu_prime(ws.pre[l][r]) + sc.inject[l][r];
            }
        }
        let input = &ws.act[l];
        let below = &mut lower[l];
        below.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..s.outputs {
            let dr = d[r];
            grad[s.b + r] += dr;
            let row = s.w + r * s.inputs;
            for c in 0..s.inputs {
                grad[row + c] += dr * input[c];
                below[c] += dr * p[row + c];
            }
        }
    }
    (value_sse, grad_sse)
}

/// Mean value error, mean gradient error and the combined loss over `rows`;
/// when `grad` is given it receives the gradient of the combined loss.
pub fn dml_batch_loss(net: &MlpNetwork, data: &DmlData, rows: &[usize], weight: f64, grad: Option<&mut [f64]>) -> Result<(f64, f64, f64)> {
    data.check(net)?;
    if rows.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    if let Some(g) = &grad {
        check_len(net.param_count(), g.len())?;
    }
    let mut ws = net.workspace();
    let mut sc = Scratch::new(&net.dims);
    Ok(batch(net, data, rows, weight, &mut ws, &mut sc, grad))
}

fn batch(net: &MlpNetwork, data: &DmlData, rows: &[usize], weight: f64, ws: &mut Workspace, sc: &mut Scratch, mut grad: Option<&mut [f64]>) -> (f64, f64, f64) {
    let vw = 1.0 / (rows.len() * data.outputs) as f64;
    let gw = weight / (rows.len() * data.inputs) as f64;
    let (mut v, mut g) = (0.0, 0.0);
    for &i in rows {
        let (a, b) = sample(net, ws, sc, data, i, vw, gw, grad.as_deref_mut());
        v += a;
        g += b;
    }
    let (v, g) = (v * vw, g / (rows.len() * data.inputs) as f64);
    (v, g, v + weight * g)
}

/// Trains on value MSE plus `cfg.derivative_weight` times the gradient MSE.
/// Early stopping watches the validation value MSE.
pub fn train_dml(net: &mut MlpNetwork, data: &DmlData, validation: Option<&DmlData>, cfg: &TrainConfig) -> Result<History> {
    data.check(net)?;
    if let Some(v) = validation {
        v.check(net)?;
    }
    let weight = cfg.derivative_weight;
    let mut ws = net.workspace();
    let mut sc = Scratch::new(&net.dims);
    let mut vws = net.workspace();
    let mut vsc = Scratch::new(&net.dims);
    let val_rows: Vec<usize> = validation.map(|v| (0..v.len()).collect()).unwrap_or_default();
    let val_fn = validation.map(|v| move |n: &MlpNetwork| batch(n, v, &val_rows, 0.0, &mut vws, &mut vsc, None).0);
    fit(net, data.len(), cfg, |n, rows, grad| batch(n, data, rows, weight, &mut ws, &mut sc, Some(grad)).2, val_fn)
}
