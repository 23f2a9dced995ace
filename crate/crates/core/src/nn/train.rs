//! Mini-batch Adam with a step learning-rate schedule and early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Arch, MlpNetwork, Workspace};
use crate::error::{check_len, Error, Result};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    /// Smallest validation improvement that resets the patience counter.
    pub min_delta: f64,
    pub batch: usize,
    pub lr0: f64,
    /// The learning rate halves every this many epochs; 0 keeps it constant.
    pub lr_halving_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub early_stopping: bool,
    /// Weight of the derivative term in differential training.
    pub derivative_weight: f64,
    pub loss: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            patience: 5,
            min_delta: 1e-6,
            batch: 128,
            lr0: 1e-3,
            lr_halving_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            early_stopping: true,
            derivative_weight: 1.0,
            loss: "masked-mse".into(),
        }
    }
}

impl TrainConfig {
    pub fn for_arch(arch: Arch) -> Self {
        match arch {
            Arch::Dml => TrainConfig { epochs: 20, lr_halving_every: 5, early_stopping: false, loss: "value-mse+gradient-mse".into(), ..Default::default() },
            _ => TrainConfig::default(),
        }
    }

    /// Schedule for the desk-scale corpus (2,000 training samples). The published
    /// schedule halves the rate every 10 epochs, which at this size leaves too few
    /// optimizer steps; the differential net keeps its own schedule.
    pub fn desk_scale(arch: Arch) -> Self {
        match arch {
            Arch::Dml => Self::for_arch(arch),
            _ => TrainConfig { epochs: 500, patience: 40, batch: 64, lr0: 2e-3, lr_halving_every: 100, ..Self::for_arch(arch) },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr0 > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("batch, lr0 and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.min_delta >= 0.0) || !(self.derivative_weight >= 0.0) {
            return Err(Error::Config("min_delta and derivative_weight must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Learning rate used during `epoch` (0-based).
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    match cfg.lr_halving_every {
        0 => cfg.lr0,
        every => cfg.lr0 * 0.5f64.powi((epoch / every) as i32),
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Normalised regression data, row-major. A `false` mask entry drops that target from the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub inputs: usize,
    pub outputs: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

impl TrainData {
    pub fn new(inputs: usize, outputs: usize, x: Vec<f64>, y: Vec<f64>, mask: Option<Vec<bool>>) -> Result<Self> {
        if inputs == 0 || outputs == 0 || x.len() % inputs != 0 {
            return Err(Error::domain("inputs must be a whole number of rows"));
        }
        let n = x.len() / inputs;
        check_len(n * outputs, y.len())?;
        if let Some(m) = &mask {
            check_len(n * outputs, m.len())?;
        }
        let data = TrainData { inputs, outputs, x, y, mask };
        for i in 0..n {
            if data.row_x(i).iter().any(|v| !v.is_finite())
                || (0..outputs).any(|k| data.active(i, k) && !data.row_y(i)[k].is_finite())
            {
                return Err(Error::domain(format!("sample {i} has a non-finite input or unmasked target")));
            }
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.inputs
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn row_x(&self, i: usize) -> &[f64] {
        &self.x[i * self.inputs..(i + 1) * self.inputs]
    }

    pub fn row_y(&self, i: usize) -> &[f64] {
        &self.y[i * self.outputs..(i + 1) * self.outputs]
    }

    pub fn active(&self, i: usize, k: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i * self.outputs + k])
    }

    /// Sum of squared residuals and the number of active targets over `rows`.
    fn batch_sums(&self, net: &MlpNetwork, rows: &[usize], ws: &mut Workspace, grad: Option<&mut [f64]>) -> (f64, usize) {
        let mut sse = 0.0;
        let mut count = 0;
        let mut upstream = vec![0.0; self.outputs];
        let mut grad = grad;
        for &i in rows {
            let out = net.forward_into(self.row_x(i), ws);
            for k in 0..self.outputs {
                if self.active(i, k) {
                    let r = out[k] - self.row_y(i)[k];
                    sse += r * r;
                    count += 1;
                    upstream[k] = 2.0 * r;
                } else {
                    upstream[k] = 0.0;
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                net.backward_into(ws, &upstream, g, None);
            }
        }
        (sse, count)
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

/// Masked mean-squared error over all active targets.
pub fn evaluate(net: &MlpNetwork, data: &TrainData) -> Result<f64> {
    data.check(net)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let (sse, count) = data.batch_sums(net, &rows, &mut net.workspace(), None);
    Ok(if count == 0 { 0.0 } else { sse / count as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
    pub config: TrainConfig,
}

/// Shared loop. `batch_loss` returns the mean loss of a batch and writes its gradient.
pub(crate) fn fit<F, V>(net: &mut MlpNetwork, n_train: usize, cfg: &TrainConfig, mut batch_loss: F, mut val_loss: Option<V>) -> Result<History>
where
    F: FnMut(&MlpNetwork, &[usize], &mut [f64]) -> f64,
    V: FnMut(&MlpNetwork) -> f64,
{
    cfg.validate()?;
    if n_train == 0 {
        return Err(Error::domain("empty training data"));
    }
    let mut adam = Adam::new(net.params.len(), cfg);
    let mut grad = vec![0.0; net.params.len()];
    let mut order: Vec<usize> = (0..n_train).collect();
    let shuffle_seed = derive_seed(cfg.seed, 1);
    let mut history = History { epochs: vec![], best_epoch: None, best_val_loss: None, stopped_early: false, config: cfg.clone() };
    let mut best_params: Option<Vec<f64>> = None;
    let mut wait = 0;

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        order.shuffle(&mut stream(shuffle_seed, epoch as u64));
        let mut total = 0.0;
        for (b, rows) in order.chunks(cfg.batch).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = batch_loss(net, rows, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "training loss became {loss} at epoch {epoch}, batch {b} (lr {lr:e}, {} rows)",
                    rows.len()
                )));
            }
            total += loss * rows.len() as f64;
            adam.step(&mut net.params, &grad, lr);
        }
        let val = val_loss.as_mut().map(|f| f(net));
        if let Some(v) = val {
            if !v.is_finite() {
                return Err(Error::Numerical(format!("validation loss became {v} at epoch {epoch}")));
            }
        }
        history.epochs.push(EpochRecord { epoch, lr, train_loss: total / n_train as f64, val_loss: val });
        if let Some(v) = val {
            let improved = history.best_val_loss.is_none_or(|best| v < best - cfg.min_delta);
            if improved {
                history.best_val_loss = Some(v);
                history.best_epoch = Some(epoch);
                best_params = Some(net.params.clone());
                wait = 0;
            } else {
                wait += 1;
                if cfg.early_stopping && wait >= cfg.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    match best_params {
        Some(p) => net.params = p,
        None => history.best_epoch = cfg.epochs.checked_sub(1).filter(|_| !history.epochs.is_empty()),
    }
    Ok(history)
}

/// Trains on masked MSE. With validation data the best-validation weights are restored.
pub fn train(net: &mut MlpNetwork, data: &TrainData, validation: Option<&TrainData>, cfg: &TrainConfig) -> Result<History> {
    data.check(net)?;
    if let Some(v) = validation {
        v.check(net)?;
    }
    let mut ws = net.workspace();
    let mut val_ws = net.workspace();
    let val_rows: Vec<usize> = validation.map(|v| (0..v.len()).collect()).unwrap_or_default();
    let val_fn = validation.map(|v| {
        move |n: &MlpNetwork| {
            let (sse, count) = v.batch_sums(n, &val_rows, &mut val_ws, None);
            if count == 0 { 0.0 } else { sse / count as f64 }
        }
    });
    fit(
        net,
        data.len(),
        cfg,
        |n, rows, grad| {
            let (sse, count) = data.batch_sums(n, rows, &mut ws, Some(grad));
            if count == 0 {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return 0.0;
            }
            let inv = 1.0 / count as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            sse * inv
        },
        val_fn,
    )
}
