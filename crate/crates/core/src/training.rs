//! Loss, exact reverse-mode gradients through every layer type, symmetrized
//! SGD updates that keep every constrained kernel exactly shared, and a
//! finite-difference gradient check.
//!
//! Gradients are computed raw (as if all weights were free); the update then
//! projects each constrained array onto its sharing pattern. In average mode
//! every orbit member receives the orbit-mean gradient, in sum mode the orbit
//! sum. Because each member receives the identical value, sharing survives
//! every step bit-for-bit.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::network::{init_kernel, Dense, ForwardTrace, Network, ParamOwner};
use crate::scan::{conv2d_backward, pool_backward, TiKernel};
use crate::symmetry::{SymmetrizeMode, SymmetryGroup};
use crate::tensor::Tensor2D;
use crate::transform::transform;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    CrossEntropy,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "mse" => Ok(Self::Mse),
            "cross_entropy" | "xent" => Ok(Self::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return shape_err(format!("prediction has {} entries, target {}", pred.len(), target.len()));
    }
    Ok(())
}

/// Mean squared error, or cross-entropy after a softmax on `pred`.
pub fn loss(pred: &[f64], target: &[f64], kind: LossKind) -> Result<f64> {
    check_lengths(pred, target)?;
    Ok(match kind {
        LossKind::Mse => pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64,
        LossKind::CrossEntropy => {
            let m = pred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + pred.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            target.iter().zip(pred).map(|(t, p)| t * (lse - p)).sum()
        }
    })
}

/// `d loss / d pred`.
pub fn loss_grad(pred: &[f64], target: &[f64], kind: LossKind) -> Result<Vec<f64>> {
    check_lengths(pred, target)?;
    Ok(match kind {
        LossKind::Mse => {
            let n = pred.len() as f64;
            pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect()
        }
        LossKind::CrossEntropy => {
            let ts: f64 = target.iter().sum();
            softmax(pred).iter().zip(target).map(|(s, t)| s * ts - t).collect()
        }
    })
}

/// How the pipelines and head are scheduled during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Everything trained together.
    #[default]
    Joint,
    /// Each pipeline pretrained with its own temporary head, then the merged
    /// head trained with the pipelines frozen.
    PerPipeline,
    /// Rotation/reflection pipelines pretrained as one group and translation
    /// pipelines as another, then merged with the pipelines frozen.
    Grouped,
}

fn default_lr() -> f64 {
    0.05
}
fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub update_mode: SymmetrizeMode,
    /// In sum mode, divide the step by the largest orbit size.
    #[serde(default)]
    pub sum_gain_autoscale: bool,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            update_mode: SymmetrizeMode::Average,
            sum_gain_autoscale: false,
            loss: LossKind::Mse,
            momentum: 0.0,
            schedule: Schedule::Joint,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Raw gradients, one array per entry of [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub arrays: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self { arrays: net.params().into_iter().map(|p| vec![0.0; p.values.len()]).collect() }
    }

    pub fn add_scaled(&mut self, s: f64, other: &GradientSet) {
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.arrays.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct Example {
    pub input: Tensor2D,
    pub target: Vec<f64>,
}

fn dense_backward(d: &Dense, input: &[f64], pre: &[f64], out: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dz: Vec<f64> = (0..d.outputs()).map(|o| g[o] * d.activation.derivative(pre[o], out[o])).collect();
    let mut dw = vec![0.0; d.weights.len()];
    let mut din = vec![0.0; d.inputs];
    for (o, &z) in dz.iter().enumerate() {
        let row = &d.weights[o * d.inputs..(o + 1) * d.inputs];
        for i in 0..d.inputs {
            dw[o * d.inputs + i] = z * input[i];
            din[i] += row[i] * z;
        }
    }
    (dw, dz, din)
}

/// Backpropagates `d loss / d output` through a recorded forward pass.
pub fn backward_trace(net: &Network, trace: &ForwardTrace, grad_out: &[f64]) -> Result<GradientSet> {
    if grad_out.len() != net.outputs() {
        return shape_err(format!("output gradient has {} entries, network has {} outputs", grad_out.len(), net.outputs()));
    }
    // Head, last layer first.
    let mut head_grads = Vec::with_capacity(2 * net.head.len());
    let mut g = grad_out.to_vec();
    for (li, d) in net.head.iter().enumerate().rev() {
        let (dw, db, din) =
            dense_backward(d, &trace.head.activations[li], &trace.head.pre[li], &trace.head.activations[li + 1], &g);
        head_grads.push(db);
        head_grads.push(dw);
        g = din;
    }
    head_grads.reverse();
    let dfeatures = g;

    let mut arrays = Vec::new();
    let mut offset = 0;
    for (p, pt) in net.pipelines.iter().zip(&trace.pipelines) {
        let nodes = p.flatten.len();
        let dbank = &dfeatures[offset..offset + nodes];
        offset += nodes;

        // Flatten: a full-size correlation with a 1×1 output per node.
        let channels = pt.last.len();
        let mut dlast: Vec<Tensor2D> = pt.last.iter().map(|t| Tensor2D::zeros(t.height(), t.width())).collect();
        let mut flatten_grads = Vec::with_capacity(nodes * channels);
        let mut flatten_bias = Vec::with_capacity(nodes);
        for (n, fk) in p.flatten.iter().enumerate() {
            let dpre = dbank[n] * p.flatten_activation.derivative(pt.flatten_pre[n], pt.bank[n]);
            let g1 = Tensor2D::filled(1, 1, dpre);
            for (c, k) in fk.kernels().iter().enumerate() {
                let (gin, gk) = conv2d_backward(&pt.last[c], k.weights(), 1, &g1);
                dlast[c].axpy(1.0, &gin);
                flatten_grads.push(gk.into_values());
            }
            flatten_bias.push(dpre);
        }

        // Convolution layers, last first.
        let mut layer_grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(p.layers.len());
        let mut dout = dlast;
        for (l, lt) in p.layers.iter().zip(&pt.layers).rev() {
            let mut grads = Vec::new();
            let dmix;
            let dpooled = match &l.mix {
                Some(m) => {
                    let mut dm = vec![0.0; m.len() * m.len()];
                    let mut dp: Vec<Tensor2D> = lt.pooled.iter().map(|t| Tensor2D::zeros(t.height(), t.width())).collect();
                    for (q, row) in m.iter().enumerate() {
                        for (i, &w) in row.iter().enumerate() {
                            dm[q * m.len() + i] = dout[q].dot(&lt.pooled[i])?;
                            dp[i].axpy(w, &dout[q]);
                        }
                    }
                    dmix = Some(dm);
                    dp
                }
                None => {
                    dmix = None;
                    dout
                }
            };
            let s = &l.spec.scan;
            let mut dinputs: Vec<Tensor2D> = lt.inputs.iter().map(|t| Tensor2D::zeros(t.height(), t.width())).collect();
            let mut kernel_grads = Vec::with_capacity(l.kernels.len() * l.spec.in_channels);
            let mut bias_grads = Vec::with_capacity(l.kernels.len());
            for (q, row) in l.kernels.iter().enumerate() {
                let dact_padded = pool_backward(&lt.pools[q], &dpooled[q]);
                let (ah, aw) = lt.act[q].shape();
                let dact = if lt.rows.pool_pad + lt.cols.pool_pad > 0 {
                    dact_padded.crop(lt.rows.pool_pad, lt.cols.pool_pad, ah, aw)?
                } else {
                    dact_padded
                };
                let dpre = lt.pre[q].zip_map(&lt.act[q], |x, y| s.activation.derivative(x, y))?.zip_map(&dact, |d, g| d * g)?;
                bias_grads.push(dpre.sum());
                for (i, k) in row.iter().enumerate() {
                    let (gin, gk) = conv2d_backward(&lt.inputs[i], k.weights(), s.stride, &dpre);
                    dinputs[i].axpy(1.0, &gin);
                    kernel_grads.push(gk.into_values());
                }
            }
            grads.extend(kernel_grads);
            grads.push(bias_grads);
            if let Some(dm) = dmix {
                grads.push(dm);
            }
            layer_grads.push(grads);
            dout = dinputs
                .into_iter()
                .map(|d| {
                    if lt.rows.conv_pad + lt.cols.conv_pad > 0 {
                        let (h, w) = (d.height() - 2 * lt.rows.conv_pad, d.width() - 2 * lt.cols.conv_pad);
                        d.crop(lt.rows.conv_pad, lt.cols.conv_pad, h, w)
                    } else {
                        Ok(d)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
        }
        layer_grads.reverse();
        arrays.extend(layer_grads.into_iter().flatten());
        arrays.extend(flatten_grads);
        arrays.push(flatten_bias);
    }
    arrays.extend(head_grads);
    Ok(GradientSet { arrays })
}

/// Loss and raw gradients for one example fed to every pipeline.
pub fn backward(net: &Network, input: &Tensor2D, target: &[f64], kind: LossKind) -> Result<(f64, GradientSet)> {
    let trace = net.trace(input)?;
    let l = loss(trace.output(), target, kind)?;
    let g = loss_grad(trace.output(), target, kind)?;
    Ok((l, backward_trace(net, &trace, &g)?))
}

/// One symmetrized step on a single kernel: `K − lr · project(grad)`.
pub fn symmetrized_update(kernel: &TiKernel, grad: &Tensor2D, lr: f64, mode: SymmetrizeMode) -> Result<TiKernel> {
    kernel.weights().expect_same_shape(grad)?;
    let step = match kernel.table() {
        Some(t) => t.project(grad, mode)?,
        None => grad.clone(),
    };
    let mut w = kernel.weights().clone();
    w.axpy(-lr, &step);
    TiKernel::new(w, kernel.group())
}

/// `init_kernel` seeded from a 64-bit seed.
pub fn init_ti(k: usize, group: Option<SymmetryGroup>, in_channels: usize, seed: u64) -> Result<TiKernel> {
    init_kernel(k, group, in_channels, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// SGD state: momentum buffers and frozen parameter owners.
pub struct Optimizer {
    pub config: TrainConfig,
    velocity: Option<Vec<Vec<f64>>>,
    pub frozen: Vec<ParamOwner>,
}

impl Optimizer {
    pub fn new(config: TrainConfig) -> Self {
        Self { config, velocity: None, frozen: Vec::new() }
    }

    /// Projects constrained gradients onto their sharing pattern and applies
    /// one step.
    pub fn step(&mut self, net: &mut Network, grads: &GradientSet) -> Result<()> {
        let params = net.params();
        if grads.arrays.len() != params.len() {
            return shape_err("gradient set does not match the network");
        }
        let mu = self.config.momentum;
        let velocity = self.velocity.get_or_insert_with(|| params.iter().map(|p| vec![0.0; p.values.len()]).collect());
        let mut arrays = Vec::with_capacity(params.len());
        for ((p, g), v) in params.into_iter().zip(&grads.arrays).zip(velocity.iter_mut()) {
            let mut values = p.values;
            if self.frozen.contains(&p.owner) {
                arrays.push(values);
                continue;
            }
            let mut lr = self.config.learning_rate;
            let step = match &p.table {
                Some(t) => {
                    if self.config.update_mode == SymmetrizeMode::Sum && self.config.sum_gain_autoscale {
                        let largest = t.classes().iter().map(Vec::len).max().unwrap_or(1);
                        lr /= largest as f64;
                    }
                    let gt = Tensor2D::new(p.shape.0, p.shape.1, g.clone())?;
                    t.project(&gt, self.config.update_mode)?.into_values()
                }
                None => g.clone(),
            };
            for ((w, s), vv) in values.iter_mut().zip(&step).zip(v.iter_mut()) {
                *vv = mu * *vv + s;
                *w -= lr * *vv;
            }
            arrays.push(values);
        }
        net.set_params(&arrays)
    }
}

/// Mean loss and mean gradient over a batch; per-example work runs in parallel
/// and is reduced in example order.
pub fn batch_gradient(net: &Network, batch: &[&Example], kind: LossKind) -> Result<(f64, GradientSet)> {
    let parts: Vec<(f64, GradientSet)> =
        batch.par_iter().map(|ex| backward(net, &ex.input, &ex.target, kind)).collect::<Result<Vec<_>>>()?;
    let mut total = GradientSet::zeros_like(net);
    let mut l = 0.0;
    let s = 1.0 / batch.len() as f64;
    for (li, g) in &parts {
        l += li * s;
        total.add_scaled(s, g);
    }
    Ok((l, total))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Max output change over the group of the first RTI pipeline, on the
    /// first training example; `None` when the network has no such group.
    pub invariance_residual: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,invariance_residual\n");
    for r in history {
        let res = r.invariance_residual.map(|v| format!("{v:e}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:?},{}", r.epoch, r.loss, res);
    }
    s
}

/// Largest output change over `group` for `input`.
pub fn invariance_residual(net: &Network, input: &Tensor2D, group: SymmetryGroup) -> Result<f64> {
    let base = net.forward(input)?;
    let mut worst: f64 = 0.0;
    for &e in group.elements() {
        let o = net.forward(&transform(input, e)?)?;
        for (a, b) in base.iter().zip(&o) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

fn probe_residual(net: &Network, probe: &Tensor2D) -> Result<Option<f64>> {
    // Only meaningful when every pipeline carries the same rotation group.
    let groups: Vec<Option<SymmetryGroup>> = net.pipelines.iter().map(|p| p.rti_group()).collect();
    match groups.first() {
        Some(Some(g)) if groups.iter().all(|x| *x == Some(*g)) => invariance_residual(net, probe, *g).map(Some),
        _ => Ok(None),
    }
}

fn run_epochs(
    net: &mut Network,
    data: &[Example],
    opt: &mut Optimizer,
    rng: &mut ChaCha8Rng,
    first_epoch: usize,
    history: &mut Vec<EpochRecord>,
) -> Result<()> {
    let cfg = opt.config.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for e in 0..cfg.epochs {
        let epoch = first_epoch + e;
        order.shuffle(rng);
        let mut sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let (l, g) = batch_gradient(net, &batch, cfg.loss)?;
            if !l.is_finite() || !g.all_finite() {
                return Err(Error::Divergence { epoch, step, loss: l });
            }
            opt.step(net, &g)?;
            sum += l * chunk.len() as f64;
        }
        history.push(EpochRecord {
            epoch,
            loss: sum / data.len() as f64,
            invariance_residual: probe_residual(net, &data[0].input)?,
        });
    }
    Ok(())
}

fn fresh_head(net: &Network, features: usize, rng: &mut ChaCha8Rng) -> Vec<Dense> {
    let mut width = features;
    let mut head = Vec::with_capacity(net.head.len());
    for d in &net.head {
        head.push(Dense::init(width, d.outputs(), d.activation, rng));
        width = d.outputs();
    }
    head
}

/// Trains according to `config.schedule`. Deterministic given the seed.
pub fn train(net: &Network, data: &[Example], config: &TrainConfig) -> Result<(Network, Vec<EpochRecord>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = net.clone();
    let mut history = Vec::new();
    let groups: Vec<Vec<usize>> = match config.schedule {
        Schedule::Joint => Vec::new(),
        Schedule::PerPipeline => (0..net.pipelines.len()).map(|i| vec![i]).collect(),
        Schedule::Grouped => {
            let (rti, tli): (Vec<usize>, Vec<usize>) = (0..net.pipelines.len()).partition(|&i| net.pipelines[i].rti_group().is_some());
            [rti, tli].into_iter().filter(|g| !g.is_empty()).collect()
        }
    };
    for group in &groups {
        let pipelines: Vec<_> = group.iter().map(|&i| net.pipelines[i].clone()).collect();
        let features = pipelines.iter().map(|p| p.flatten.len()).sum();
        let head = fresh_head(&net, features, &mut rng);
        let mut sub = Network { input_shape: net.input_shape, pipelines, head };
        let mut opt = Optimizer::new(config.clone());
        run_epochs(&mut sub, data, &mut opt, &mut rng, history.len(), &mut history)?;
        for (&i, p) in group.iter().zip(sub.pipelines) {
            net.pipelines[i] = p;
        }
    }
    let mut opt = Optimizer::new(config.clone());
    if !groups.is_empty() {
        opt.frozen = (0..net.pipelines.len()).map(ParamOwner::Pipeline).collect();
    }
    run_epochs(&mut net, data, &mut opt, &mut rng, history.len(), &mut history)?;
    Ok((net, history))
}

/// Denominator floor for the relative error: central differences with
/// `h = 1e-5` carry roundoff near `ε·|loss|/h ≈ 1e-11`, so gradients below this
/// are effectively compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-5;

/// Central finite-difference check of every free parameter (an orbit is
/// perturbed as a whole). Returns the largest relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(net: &Network, input: &Tensor2D, target: &[f64], kind: LossKind, h: f64, floor: f64) -> Result<f64> {
    let (_, grads) = backward(net, input, target, kind)?;
    let params = net.params();
    let base: Vec<Vec<f64>> = params.iter().map(|p| p.values.clone()).collect();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    let mut eval = |arrays: &[Vec<f64>]| -> Result<f64> {
        probe.set_params(arrays)?;
        loss(&probe.forward(input)?, target, kind)
    };
    for (ai, p) in params.iter().enumerate() {
        let classes: Vec<Vec<usize>> = match &p.table {
            Some(t) => t.classes().to_vec(),
            None => (0..p.values.len()).map(|i| vec![i]).collect(),
        };
        for cls in classes {
            let mut plus = base.clone();
            let mut minus = base.clone();
            for &i in &cls {
                plus[ai][i] += h;
                minus[ai][i] -= h;
            }
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let an: f64 = cls.iter().map(|&i| grads.arrays[ai][i]).sum();
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
