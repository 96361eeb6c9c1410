//! Network assembly: convolutional pipelines ending in a shared-weight flatten
//! layer, a perceptron head over the concatenated feature banks, and the
//! composed one-RTI-plus-four-TLI architecture.
//!
//! The flatten layer is a convolution whose kernel covers the whole final map,
//! so it goes through the same correlation code (forward and backward) as the
//! hidden layers.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scan::{
    apply_activation, conv2d_with, cross_channel_1x1, pad_for_translation, pool_with, symmetric_pad_for, Activation,
    PadDirection, PoolTrace, ScanConfig, TiKernel,
};
use crate::symmetry::{orbit_table, OrbitTable, Sharing, SymmetryGroup, TranslationLine};
use crate::tensor::Tensor2D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    #[serde(default)]
    pub group: Option<SymmetryGroup>,
    #[serde(default)]
    pub scan: ScanConfig,
    /// Square 1×1 channel mixing after pooling.
    #[serde(default)]
    pub has_1x1: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlattenSpec {
    pub nodes: usize,
    pub sharing: Sharing,
    #[serde(default)]
    pub activation: Activation,
}

/// Zero padding applied to the raw input before a translation-identical pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrePad {
    pub direction: PadDirection,
    pub amount: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    /// Overrides the network input shape for pipelines fed their own input.
    #[serde(default)]
    pub input_shape: Option<(usize, usize)>,
    #[serde(default)]
    pub pre_pad: Option<PrePad>,
    pub layers: Vec<LayerSpec>,
    pub flatten: FlattenSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub outputs: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub pipelines: Vec<PipelineSpec>,
    pub head: HeadSpec,
    /// Multiplies every hidden channel count, so constrained nets can be given
    /// the parameter budget of an unconstrained one.
    #[serde(default = "one")]
    pub channel_multiplier: usize,
}

impl NetworkSpec {
    /// Single-pipeline network.
    pub fn simple(n: usize, layers: Vec<LayerSpec>, flatten: FlattenSpec, head: HeadSpec) -> Self {
        Self {
            input_height: n,
            input_width: n,
            pipelines: vec![PipelineSpec { input_shape: None, pre_pad: None, layers, flatten }],
            head,
            channel_multiplier: 1,
        }
    }

    /// The spec with `channel_multiplier` folded into the channel counts.
    pub fn effective(&self) -> Self {
        let m = self.channel_multiplier.max(1);
        let mut s = self.clone();
        for p in &mut s.pipelines {
            for (i, l) in p.layers.iter_mut().enumerate() {
                if i > 0 {
                    l.in_channels *= m;
                }
                l.out_channels *= m;
            }
        }
        s.channel_multiplier = 1;
        s
    }
}

/// Sizes along one axis for one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisPlan {
    pub conv_pad: usize,
    pub conv_out: usize,
    pub pool_pad: usize,
    pub out: usize,
}

fn remedy(n: usize, window: usize, step: usize, what: &str) -> Result<usize> {
    symmetric_pad_for(n, window, step).ok_or_else(|| {
        Error::Divisibility(format!("no symmetric zero padding of size {n} makes {what} (window {window}, step {step}) divide evenly"))
    })
}

fn plan_axis(n: usize, k: usize, stride: usize, pool: Option<usize>, scan: &ScanConfig, axis: &str) -> Result<AxisPlan> {
    let conv_pad = if scan.remedy_padding { remedy(n, k, stride, "the stride")? } else { 0 };
    let n = n + 2 * conv_pad;
    if n < k {
        return shape_err(format!("{axis} size {n} smaller than kernel {k}"));
    }
    if !(n - k).is_multiple_of(stride) && !scan.allow_nondivisible {
        return Err(Error::Divisibility(format!("stride {stride} does not evenly divide {axis} extent {n} - {k}")));
    }
    let conv_out = (n - k) / stride + 1;
    let Some(p) = pool else {
        return Ok(AxisPlan { conv_pad, conv_out, pool_pad: 0, out: conv_out });
    };
    let pool_pad = if scan.remedy_padding { remedy(conv_out, p, p, "the pool")? } else { 0 };
    let m = conv_out + 2 * pool_pad;
    if m < p {
        return shape_err(format!("{axis} size {m} smaller than pool {p}"));
    }
    if !m.is_multiple_of(p) && !scan.allow_nondivisible {
        return Err(Error::Divisibility(format!("pool {p} does not evenly divide {axis} size {m}")));
    }
    Ok(AxisPlan { conv_pad, conv_out, pool_pad, out: m / p })
}

/// Row and column plans for a layer applied to an `h × w` map.
pub fn plan_layer(spec: &LayerSpec, h: usize, w: usize) -> Result<(AxisPlan, AxisPlan)> {
    let s = &spec.scan;
    s.validate()?;
    let pools = s.pools();
    let rows = plan_axis(h, spec.kernel_size, s.stride, pools.then_some(s.pool.rows), s, "vertical")?;
    let cols = plan_axis(w, spec.kernel_size, s.stride, pools.then_some(s.pool.cols), s, "horizontal")?;
    Ok((rows, cols))
}

/// One uniform draw in `[-r, r]` per weight class (`r = gain · √(3 / fan_in)`,
/// so each weight has variance `gain² / fan_in` whatever the class sizes).
fn class_uniform<R: Rng + ?Sized>(h: usize, w: usize, table: Option<&OrbitTable>, fan_in: usize, gain: f64, rng: &mut R) -> Tensor2D {
    let r = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    match table {
        Some(t) => {
            let mut m = Tensor2D::zeros(h, w);
            for class in t.classes() {
                let v = rng.gen_range(-r..=r);
                for &i in class {
                    m.values_mut()[i] = v;
                }
            }
            m
        }
        None => Tensor2D::random_uniform(h, w, -r, r, rng),
    }
}

/// Kernel with fan-in `k² · in_channels`, shared over `group` if given.
pub fn init_kernel<R: Rng + ?Sized>(k: usize, group: Option<SymmetryGroup>, in_channels: usize, rng: &mut R) -> Result<TiKernel> {
    init_kernel_gain(k, group, in_channels, 1.0, rng)
}

fn init_kernel_gain<R: Rng + ?Sized>(k: usize, group: Option<SymmetryGroup>, in_channels: usize, gain: f64, rng: &mut R) -> Result<TiKernel> {
    let fan_in = k * k * in_channels.max(1);
    match group {
        Some(g) => {
            let table = orbit_table(g, k, k)?;
            TiKernel::new(class_uniform(k, k, Some(&table), fan_in, gain, rng), Some(g))
        }
        None => Ok(TiKernel::unconstrained(class_uniform(k, k, None, fan_in, gain, rng))),
    }
}

/// √2 for ReLU, which zeroes half its input.
fn activation_gain(a: Activation) -> f64 {
    match a {
        Activation::Relu => std::f64::consts::SQRT_2,
        _ => 1.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub spec: LayerSpec,
    /// `kernels[q][i]` maps input channel `i` to output channel `q`.
    pub kernels: Vec<Vec<TiKernel>>,
    pub biases: Vec<f64>,
    /// `out × out` mixing weights when `has_1x1`.
    pub mix: Option<Vec<Vec<f64>>>,
}

impl ConvLayer {
    pub fn init<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Result<Self> {
        if spec.kernel_size == 0 || spec.in_channels == 0 || spec.out_channels == 0 {
            return Err(Error::Config("kernel size and channel counts must be at least 1".into()));
        }
        let kernels = (0..spec.out_channels)
            .map(|_| (0..spec.in_channels).map(|_| init_kernel_gain(spec.kernel_size, spec.group, spec.in_channels, activation_gain(spec.scan.activation), rng)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let mix = spec.has_1x1.then(|| {
            let r = (3.0 / spec.out_channels as f64).sqrt();
            (0..spec.out_channels).map(|_| (0..spec.out_channels).map(|_| rng.gen_range(-r..r)).collect()).collect()
        });
        Ok(Self { spec: spec.clone(), kernels, biases: vec![0.0; spec.out_channels], mix })
    }
}

/// Intermediate values of one layer, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub rows: AxisPlan,
    pub cols: AxisPlan,
    /// Inputs after remedy padding.
    pub inputs: Vec<Tensor2D>,
    pub pre: Vec<Tensor2D>,
    pub act: Vec<Tensor2D>,
    pub pools: Vec<PoolTrace>,
    /// Pooled maps, before channel mixing.
    pub pooled: Vec<Tensor2D>,
    pub outputs: Vec<Tensor2D>,
}

pub fn forward_layer(layer: &ConvLayer, inputs: &[Tensor2D]) -> Result<LayerTrace> {
    let spec = &layer.spec;
    if inputs.len() != spec.in_channels {
        return shape_err(format!("layer expects {} channels, got {}", spec.in_channels, inputs.len()));
    }
    let (h, w) = inputs[0].shape();
    for x in inputs {
        if x.shape() != (h, w) {
            return shape_err("input channels differ in shape");
        }
    }
    let (rows, cols) = plan_layer(spec, h, w)?;
    let s = &spec.scan;
    let padded: Vec<Tensor2D> = if rows.conv_pad + cols.conv_pad > 0 {
        inputs.iter().map(|x| x.pad(rows.conv_pad, rows.conv_pad, cols.conv_pad, cols.conv_pad)).collect()
    } else {
        inputs.to_vec()
    };
    let mut pre = Vec::with_capacity(spec.out_channels);
    for (q, row) in layer.kernels.iter().enumerate() {
        let mut acc = Tensor2D::filled(rows.conv_out, cols.conv_out, layer.biases[q]);
        for (x, k) in padded.iter().zip(row) {
            acc.axpy(1.0, &conv2d_with(x, k, s.stride, s.allow_nondivisible)?);
        }
        pre.push(acc);
    }
    let act: Vec<Tensor2D> = pre.iter().map(|p| apply_activation(p, s.activation)).collect();
    let mut pools = Vec::with_capacity(act.len());
    let mut pooled = Vec::with_capacity(act.len());
    for a in &act {
        let a = if rows.pool_pad + cols.pool_pad > 0 {
            a.pad(rows.pool_pad, rows.pool_pad, cols.pool_pad, cols.pool_pad)
        } else {
            a.clone()
        };
        let (p, t) = pool_with(&a, s.pool, s.pool_kind, s.allow_nondivisible)?;
        pooled.push(p);
        pools.push(t);
    }
    let outputs = match &layer.mix {
        Some(m) => cross_channel_1x1(&pooled, m)?,
        None => pooled.clone(),
    };
    Ok(LayerTrace { rows, cols, inputs: padded, pre, act, pools, pooled, outputs })
}

/// One flatten node: a kernel per input channel covering the full final map,
/// with weights tied by `sharing`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlattenKernel {
    kernels: Vec<TiKernel>,
    sharing: Sharing,
    table: Option<Arc<OrbitTable>>,
    pub bias: f64,
}

impl FlattenKernel {
    pub fn new(weights: Vec<Tensor2D>, sharing: Sharing) -> Result<Self> {
        let Some(first) = weights.first() else {
            return Err(Error::Config("flatten kernel needs at least one channel".into()));
        };
        let (h, w) = first.shape();
        if let Sharing::Group(g) = sharing {
            if !g.supports_shape(h, w) {
                return Err(Error::Config(format!("{g} flatten sharing needs a square map, got {h}x{w}")));
            }
        }
        let table = sharing.table(h, w)?;
        let mut kernels = Vec::with_capacity(weights.len());
        for wt in weights {
            if wt.shape() != (h, w) {
                return shape_err("flatten channel kernels differ in shape");
            }
            kernels.push(match sharing {
                Sharing::Group(g) => TiKernel::new(wt, Some(g))?,
                _ => {
                    if let Some(t) = &table {
                        if !t.is_shared(&wt, 0.0) {
                            return Err(Error::Config(format!("flatten weights violate {} sharing", sharing.tag())));
                        }
                    }
                    TiKernel::unconstrained(wt)
                }
            });
        }
        Ok(Self { kernels, sharing, table, bias: 0.0 })
    }

    pub fn init<R: Rng + ?Sized>(channels: usize, h: usize, w: usize, sharing: Sharing, rng: &mut R) -> Result<Self> {
        let table = sharing.table(h, w)?;
        let weights = (0..channels).map(|_| class_uniform(h, w, table.as_deref(), h * w * channels, 1.0, rng)).collect();
        Self::new(weights, sharing)
    }

    pub fn kernels(&self) -> &[TiKernel] {
        &self.kernels
    }

    pub fn sharing(&self) -> Sharing {
        self.sharing
    }

    pub fn table(&self) -> Option<&Arc<OrbitTable>> {
        self.table.as_ref()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.kernels[0].weights().shape()
    }

    /// Pre-activation node value: bias plus the channel-summed 1×1 correlation.
    pub fn evaluate(&self, channels: &[Tensor2D]) -> Result<f64> {
        if channels.len() != self.kernels.len() {
            return shape_err(format!("flatten expects {} channels, got {}", self.kernels.len(), channels.len()));
        }
        let mut acc = self.bias;
        for (x, k) in channels.iter().zip(&self.kernels) {
            if x.shape() != k.weights().shape() {
                return shape_err(format!("flatten kernel {:?} vs map {:?}", k.weights().shape(), x.shape()));
            }
            acc += conv2d_with(x, k, 1, false)?.get(0, 0);
        }
        Ok(acc)
    }
}

/// Values of one pipeline's flatten nodes. `pipeline_id` is 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    pub pipeline_id: usize,
    pub values: Vec<f64>,
}

impl FeatureBank {
    pub fn max_abs_diff(&self, other: &FeatureBank) -> f64 {
        if self.values.len() != other.values.len() {
            return f64::INFINITY;
        }
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

pub fn flatten_shared(last: &[Tensor2D], kernels: &[FlattenKernel], activation: Activation) -> Result<Vec<f64>> {
    kernels.iter().map(|k| k.evaluate(last).map(|v| activation.apply(v))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub input_shape: (usize, usize),
    pub pre_pad: Option<PrePad>,
    pub layers: Vec<ConvLayer>,
    pub flatten: Vec<FlattenKernel>,
    pub flatten_activation: Activation,
}

#[derive(Clone, Debug)]
pub struct PipelineTrace {
    pub input: Tensor2D,
    pub layers: Vec<LayerTrace>,
    pub last: Vec<Tensor2D>,
    pub flatten_pre: Vec<f64>,
    pub bank: Vec<f64>,
}

impl Pipeline {
    pub fn init<R: Rng + ?Sized>(spec: &PipelineSpec, input: (usize, usize), rng: &mut R) -> Result<Self> {
        if spec.layers.is_empty() {
            return Err(Error::Config("pipeline needs at least one convolution layer".into()));
        }
        if spec.flatten.nodes == 0 {
            return Err(Error::Config("flatten layer needs at least one node".into()));
        }
        let input = spec.input_shape.unwrap_or(input);
        if input.0 == 0 || input.1 == 0 {
            return Err(Error::Config("pipeline input shape must be positive".into()));
        }
        let (mut h, mut w) = input;
        if let Some(p) = spec.pre_pad {
            let padded = pad_for_translation(&Tensor2D::zeros(h, w), p.direction, p.amount);
            (h, w) = padded.shape();
        }
        let mut channels = 1;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            if l.in_channels != channels {
                return Err(Error::Config(format!("layer {i} expects {} channels, previous stage gives {channels}", l.in_channels)));
            }
            let (rp, cp) = plan_layer(l, h, w)?;
            (h, w) = (rp.out, cp.out);
            channels = l.out_channels;
            layers.push(ConvLayer::init(l, rng)?);
        }
        let flatten = (0..spec.flatten.nodes)
            .map(|_| FlattenKernel::init(channels, h, w, spec.flatten.sharing, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { input_shape: input, pre_pad: spec.pre_pad, layers, flatten, flatten_activation: spec.flatten.activation })
    }

    pub fn prepare(&self, input: &Tensor2D) -> Tensor2D {
        match self.pre_pad {
            Some(p) => pad_for_translation(input, p.direction, p.amount),
            None => input.clone(),
        }
    }

    /// Output maps of the last convolution layer for an already prepared input.
    pub fn last_maps(&self, prepared: &Tensor2D) -> Result<Vec<Tensor2D>> {
        let mut x = vec![prepared.clone()];
        for l in &self.layers {
            x = forward_layer(l, &x)?.outputs;
        }
        Ok(x)
    }

    fn check_input(&self, x: &Tensor2D) -> Result<()> {
        if x.shape() != self.input_shape {
            return shape_err(format!("pipeline expects {:?} input, got {:?}", self.input_shape, x.shape()));
        }
        Ok(())
    }

    pub fn trace(&self, input: &Tensor2D) -> Result<PipelineTrace> {
        self.check_input(input)?;
        let input = self.prepare(input);
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut x = vec![input.clone()];
        for l in &self.layers {
            let t = forward_layer(l, &x)?;
            x = t.outputs.clone();
            layers.push(t);
        }
        let flatten_pre = self.flatten.iter().map(|k| k.evaluate(&x)).collect::<Result<Vec<_>>>()?;
        let bank = flatten_pre.iter().map(|&v| self.flatten_activation.apply(v)).collect();
        Ok(PipelineTrace { input, layers, last: x, flatten_pre, bank })
    }

    pub fn bank(&self, input: &Tensor2D) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let last = self.last_maps(&self.prepare(input))?;
        flatten_shared(&last, &self.flatten, self.flatten_activation)
    }

    /// The group shared by every kernel and the flatten layer, if any.
    pub fn rti_group(&self) -> Option<SymmetryGroup> {
        let g = self.flatten.first()?.sharing().group()?;
        let all = self.layers.iter().all(|l| l.spec.group.is_some_and(|lg| crate::symmetry::subsumes(lg, g)));
        all.then_some(g)
    }

    pub fn tli_line(&self) -> Option<TranslationLine> {
        match self.flatten.first()?.sharing() {
            Sharing::Line(l) => Some(l),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let r = (3.0 / inputs.max(1) as f64).sqrt();
        Self {
            weights: (0..inputs * outputs).map(|_| rng.gen_range(-r..r)).collect(),
            bias: vec![0.0; outputs],
            inputs,
            activation,
        }
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn pre(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs())
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct HeadTrace {
    /// Input of each dense layer; the last entry is the network output.
    pub activations: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub pipelines: Vec<PipelineTrace>,
    pub features: Vec<f64>,
    pub head: HeadTrace,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.head.activations.last().expect("head has at least one layer")
    }
}

/// Which part of the network a parameter array belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamOwner {
    Pipeline(usize),
    Head,
}

/// A flat view of one weight array together with its sharing constraint.
#[derive(Clone, Debug)]
pub struct ParamArray {
    pub values: Vec<f64>,
    pub shape: (usize, usize),
    pub table: Option<Arc<OrbitTable>>,
    pub owner: ParamOwner,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input_shape: (usize, usize),
    pub pipelines: Vec<Pipeline>,
    pub head: Vec<Dense>,
}

impl Network {
    pub fn build<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        let spec = spec.effective();
        if spec.pipelines.is_empty() {
            return Err(Error::Config("network needs at least one pipeline".into()));
        }
        if spec.input_height == 0 || spec.input_width == 0 || spec.head.outputs == 0 {
            return Err(Error::Config("input and output sizes must be positive".into()));
        }
        let input_shape = (spec.input_height, spec.input_width);
        let pipelines = spec.pipelines.iter().map(|p| Pipeline::init(p, input_shape, rng)).collect::<Result<Vec<_>>>()?;
        let mut width: usize = pipelines.iter().map(|p| p.flatten.len()).sum();
        let mut head = Vec::new();
        for &h in &spec.head.hidden {
            if h == 0 {
                return Err(Error::Config("hidden layer sizes must be positive".into()));
            }
            head.push(Dense::init(width, h, spec.head.activation, rng));
            width = h;
        }
        head.push(Dense::init(width, spec.head.outputs, Activation::Identity, rng));
        Ok(Self { input_shape, pipelines, head })
    }

    pub fn feature_width(&self) -> usize {
        self.pipelines.iter().map(|p| p.flatten.len()).sum()
    }

    pub fn outputs(&self) -> usize {
        self.head.last().map(Dense::outputs).unwrap_or(0)
    }

    fn check_input(&self, x: &Tensor2D) -> Result<()> {
        if x.shape() != self.input_shape {
            return shape_err(format!("network expects {:?} input, got {:?}", self.input_shape, x.shape()));
        }
        Ok(())
    }

    pub fn head_forward(&self, features: &[f64]) -> HeadTrace {
        let mut activations = vec![features.to_vec()];
        let mut pre = Vec::with_capacity(self.head.len());
        for d in &self.head {
            let z = d.pre(activations.last().expect("non-empty"));
            activations.push(z.iter().map(|&v| d.activation.apply(v)).collect());
            pre.push(z);
        }
        HeadTrace { activations, pre }
    }

    /// Full trace with one input per pipeline.
    pub fn trace_inputs(&self, inputs: &[Tensor2D]) -> Result<ForwardTrace> {
        if inputs.len() != self.pipelines.len() {
            return shape_err(format!("{} pipelines but {} inputs", self.pipelines.len(), inputs.len()));
        }
        let pipelines = self.pipelines.iter().zip(inputs).map(|(p, x)| p.trace(x)).collect::<Result<Vec<_>>>()?;
        let features: Vec<f64> = pipelines.iter().flat_map(|t| t.bank.iter().copied()).collect();
        let head = self.head_forward(&features);
        Ok(ForwardTrace { pipelines, features, head })
    }

    pub fn trace(&self, input: &Tensor2D) -> Result<ForwardTrace> {
        self.check_input(input)?;
        self.trace_inputs(&vec![input.clone(); self.pipelines.len()])
    }

    pub fn banks_inputs(&self, inputs: &[Tensor2D]) -> Result<Vec<FeatureBank>> {
        if inputs.len() != self.pipelines.len() {
            return shape_err(format!("{} pipelines but {} inputs", self.pipelines.len(), inputs.len()));
        }
        self.pipelines
            .iter()
            .zip(inputs)
            .enumerate()
            .map(|(i, (p, x))| Ok(FeatureBank { pipeline_id: i + 1, values: p.bank(x)? }))
            .collect()
    }

    pub fn forward_banks(&self, input: &Tensor2D) -> Result<(Vec<f64>, Vec<FeatureBank>)> {
        self.check_input(input)?;
        let banks = self.banks_inputs(&vec![input.clone(); self.pipelines.len()])?;
        let features: Vec<f64> = banks.iter().flat_map(|b| b.values.iter().copied()).collect();
        let out = self.head_forward(&features).activations.pop().expect("non-empty");
        Ok((out, banks))
    }

    pub fn forward(&self, input: &Tensor2D) -> Result<Vec<f64>> {
        self.forward_banks(input).map(|(o, _)| o)
    }

    pub fn forward_inputs(&self, inputs: &[Tensor2D]) -> Result<Vec<f64>> {
        let banks = self.banks_inputs(inputs)?;
        let features: Vec<f64> = banks.iter().flat_map(|b| b.values.iter().copied()).collect();
        Ok(self.head_forward(&features).activations.pop().expect("non-empty"))
    }

    /// Every weight array in serialization order: per pipeline, each layer's
    /// kernels (output-major), biases and optional mixing matrix, then each
    /// flatten node's channel kernels followed by the flatten biases; finally
    /// each head layer's weights and biases.
    pub fn params(&self) -> Vec<ParamArray> {
        let mut out = Vec::new();
        for (pi, p) in self.pipelines.iter().enumerate() {
            let owner = ParamOwner::Pipeline(pi);
            for l in &p.layers {
                for k in l.kernels.iter().flatten() {
                    out.push(ParamArray {
                        values: k.weights().values().to_vec(),
                        shape: k.weights().shape(),
                        table: k.table().cloned(),
                        owner,
                    });
                }
                out.push(ParamArray { values: l.biases.clone(), shape: (1, l.biases.len()), table: None, owner });
                if let Some(m) = &l.mix {
                    out.push(ParamArray { values: m.concat(), shape: (m.len(), m.len()), table: None, owner });
                }
            }
            for f in &p.flatten {
                for k in f.kernels() {
                    out.push(ParamArray {
                        values: k.weights().values().to_vec(),
                        shape: k.weights().shape(),
                        table: f.table().cloned(),
                        owner,
                    });
                }
            }
            out.push(ParamArray {
                values: p.flatten.iter().map(|f| f.bias).collect(),
                shape: (1, p.flatten.len()),
                table: None,
                owner,
            });
        }
        for d in &self.head {
            out.push(ParamArray { values: d.weights.clone(), shape: (d.outputs(), d.inputs), table: None, owner: ParamOwner::Head });
            out.push(ParamArray { values: d.bias.clone(), shape: (1, d.outputs()), table: None, owner: ParamOwner::Head });
        }
        out
    }

    /// Replaces all weights, in `params` order. Constrained arrays must satisfy
    /// their sharing exactly.
    pub fn set_params(&mut self, arrays: &[Vec<f64>]) -> Result<()> {
        let expected = self.params();
        if arrays.len() != expected.len() {
            return Err(Error::Format(format!("expected {} weight arrays, got {}", expected.len(), arrays.len())));
        }
        for (i, (a, e)) in arrays.iter().zip(&expected).enumerate() {
            if a.len() != e.values.len() {
                return Err(Error::Format(format!("weight array {i}: expected {} values, got {}", e.values.len(), a.len())));
            }
        }
        let mut it = arrays.iter();
        let mut next = || it.next().expect("length checked");
        let tensor = |v: &Vec<f64>, shape: (usize, usize)| Tensor2D::new(shape.0, shape.1, v.clone());
        for p in &mut self.pipelines {
            for l in &mut p.layers {
                for k in l.kernels.iter_mut().flatten() {
                    let shape = k.weights().shape();
                    k.set_weights(tensor(next(), shape)?)?;
                }
                l.biases.clone_from(next());
                if let Some(m) = &mut l.mix {
                    let n = m.len();
                    let flat = next();
                    for (q, row) in m.iter_mut().enumerate() {
                        row.copy_from_slice(&flat[q * n..(q + 1) * n]);
                    }
                }
            }
            for f in &mut p.flatten {
                let table = f.table.clone();
                for k in &mut f.kernels {
                    let shape = k.weights().shape();
                    let t = tensor(next(), shape)?;
                    if let Some(tb) = &table {
                        if !tb.is_shared(&t, 0.0) {
                            return Err(Error::Config("flatten weights violate their sharing".into()));
                        }
                    }
                    k.set_weights(t)?;
                }
            }
            let biases = next();
            for (f, b) in p.flatten.iter_mut().zip(biases) {
                f.bias = *b;
            }
        }
        for d in &mut self.head {
            d.weights.clone_from(next());
            d.bias.clone_from(next());
        }
        Ok(())
    }

    /// Largest deviation of any constrained array from its sharing pattern.
    pub fn constraint_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for p in self.params() {
            if let Some(t) = &p.table {
                for cls in t.classes() {
                    let v0 = p.values[cls[0]];
                    for &i in cls {
                        worst = worst.max((p.values[i] - v0).abs());
                    }
                }
            }
        }
        worst
    }

    pub fn free_parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.table.as_ref().map_or(p.values.len(), |t| t.num_classes())).sum()
    }

    /// Drops the constraint of the first kernel of the first layer of
    /// `pipeline` and perturbs its weights: a negative control.
    pub fn desymmetrize_one_kernel<R: Rng + ?Sized>(&mut self, pipeline: usize, rng: &mut R) -> Result<()> {
        self.desymmetrize_kernel(pipeline, 0, 0, 0, rng)
    }

    /// Replaces kernel `[q][i]` of `layer` with an unconstrained copy whose
    /// weights are perturbed independently by up to ±0.5 × their RMS (±0.5
    /// for an all-zero kernel).
    pub fn desymmetrize_kernel<R: Rng + ?Sized>(&mut self, pipeline: usize, layer: usize, q: usize, i: usize, rng: &mut R) -> Result<()> {
        let k = self
            .pipelines
            .get_mut(pipeline)
            .and_then(|p| p.layers.get_mut(layer))
            .and_then(|l| l.kernels.get_mut(q))
            .and_then(|row| row.get_mut(i))
            .ok_or_else(|| Error::Config(format!("no kernel [{q}][{i}] in layer {layer} of pipeline {pipeline}")))?;
        let mut w = k.weights().clone();
        let rms = (w.values().iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        let amp = 0.5 * if rms > 0.0 { rms } else { 1.0 };
        for v in w.values_mut() {
            *v += rng.gen_range(-amp..amp);
        }
        *k = TiKernel::unconstrained(w);
        Ok(())
    }
}

/// The composed architecture: bank 1 is the Dih4 pipeline, banks 2–5 are the
/// translation-identical pipelines for `y=0`, `x=0`, `x=y`, `x=-y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedNetwork {
    pub net: Network,
}

impl ComposedNetwork {
    pub fn forward_composed(&self, input: &Tensor2D) -> Result<(Vec<f64>, Vec<FeatureBank>)> {
        self.net.forward_banks(input)
    }

    pub fn line_of_bank(&self, bank: usize) -> Option<TranslationLine> {
        self.net.pipelines.get(bank)?.tli_line()
    }
}

fn is_rti_dih4(p: &PipelineSpec) -> bool {
    p.flatten.sharing == Sharing::Group(SymmetryGroup::Dih4) && p.layers.iter().all(|l| l.group == Some(SymmetryGroup::Dih4))
}

/// Validates the sharing assignment and orders the pipelines as
/// `[Dih4, y=0, x=0, x=y, x=-y]`.
pub fn build_composed<R: Rng + ?Sized>(
    input: (usize, usize),
    specs: &[PipelineSpec],
    head: HeadSpec,
    rng: &mut R,
) -> Result<ComposedNetwork> {
    if specs.len() != 5 {
        return Err(Error::Config(format!("composed network needs 5 pipelines, got {}", specs.len())));
    }
    let rti: Vec<&PipelineSpec> = specs.iter().filter(|p| is_rti_dih4(p)).collect();
    if rti.len() != 1 {
        return Err(Error::Config(format!("expected exactly one Dih4 pipeline, found {}", rti.len())));
    }
    let mut ordered = vec![rti[0].clone()];
    for line in TranslationLine::ALL {
        let found: Vec<&PipelineSpec> = specs.iter().filter(|p| p.flatten.sharing == Sharing::Line(line)).collect();
        if found.len() != 1 {
            return Err(Error::Config(format!("expected exactly one pipeline sharing along {line}, found {}", found.len())));
        }
        if found[0].layers.iter().any(|l| l.group.is_some()) {
            return Err(Error::Config(format!("the {line} pipeline must use unconstrained kernels")));
        }
        ordered.push(found[0].clone());
    }
    let spec = NetworkSpec { input_height: input.0, input_width: input.1, pipelines: ordered, head, channel_multiplier: 1 };
    Ok(ComposedNetwork { net: Network::build(&spec, rng)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::{PoolKind, PoolSize};
    use crate::transform::{transform, TransformElement};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv(cin: usize, cout: usize, k: usize, group: Option<SymmetryGroup>, pool: usize) -> LayerSpec {
        LayerSpec {
            in_channels: cin,
            out_channels: cout,
            kernel_size: k,
            group,
            scan: ScanConfig {
                pool: PoolSize::square(pool),
                pool_kind: if pool > 1 { PoolKind::Max } else { PoolKind::None },
                ..ScanConfig::default()
            },
            has_1x1: false,
        }
    }

    fn head(outputs: usize) -> HeadSpec {
        HeadSpec { hidden: vec![6], outputs, activation: Activation::Tanh }
    }

    #[test]
    fn hand_computed_forward() {
        let mut l = conv(1, 1, 3, Some(SymmetryGroup::Dih4), 1);
        l.scan.activation = Activation::Identity;
        let spec = NetworkSpec::simple(
            6,
            vec![l],
            FlattenSpec { nodes: 1, sharing: Sharing::Group(SymmetryGroup::Dih4), activation: Activation::Identity },
            HeadSpec { hidden: vec![], outputs: 1, activation: Activation::Identity },
        );
        let mut net = Network::build(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut arrays: Vec<Vec<f64>> = net.params().into_iter().map(|p| vec![1.0; p.values.len()]).collect();
        arrays[1] = vec![0.0];
        arrays[3] = vec![0.0];
        arrays[5] = vec![0.0];
        net.set_params(&arrays).unwrap();
        let (out, banks) = net.forward_banks(&Tensor2D::filled(6, 6, 1.0)).unwrap();
        assert_eq!(banks[0].values, vec![144.0]);
        assert_eq!(out, vec![144.0]);
    }

    #[test]
    fn dih4_network_is_invariant() {
        let spec = NetworkSpec::simple(
            12,
            vec![conv(1, 3, 3, Some(SymmetryGroup::Dih4), 2), conv(3, 2, 3, Some(SymmetryGroup::Dih4), 1)],
            FlattenSpec { nodes: 4, sharing: Sharing::Group(SymmetryGroup::Dih4), activation: Activation::Tanh },
            head(3),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::build(&spec, &mut rng).unwrap();
        let v = Tensor2D::random_uniform(12, 12, -1.0, 1.0, &mut rng);
        let base = net.forward(&v).unwrap();
        for e in TransformElement::DIH4 {
            let o = net.forward(&transform(&v, e).unwrap()).unwrap();
            let d = base.iter().zip(&o).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(d <= 1e-9, "{e}: {d}");
        }
        let mut bad = net.clone();
        bad.desymmetrize_one_kernel(0, &mut rng).unwrap();
        let b0 = bad.forward(&v).unwrap();
        let b1 = bad.forward(&transform(&v, TransformElement::Rot90).unwrap()).unwrap();
        assert!(b0.iter().zip(&b1).any(|(a, b)| (a - b).abs() > 1e-3));
    }

    #[test]
    fn build_rejects_incompatible_layers() {
        let spec = NetworkSpec::simple(
            8,
            vec![conv(1, 2, 3, None, 1), conv(3, 1, 3, None, 1)],
            FlattenSpec { nodes: 1, sharing: Sharing::None, activation: Activation::Tanh },
            head(1),
        );
        assert!(matches!(Network::build(&spec, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Config(_))));
        let spec = NetworkSpec::simple(
            10,
            vec![conv(1, 1, 2, None, 2)],
            FlattenSpec { nodes: 1, sharing: Sharing::None, activation: Activation::Tanh },
            head(1),
        );
        assert!(matches!(Network::build(&spec, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Divisibility(_))));
    }

    #[test]
    fn params_round_trip_and_reject_broken_symmetry() {
        let spec = NetworkSpec::simple(
            8,
            vec![conv(1, 2, 3, Some(SymmetryGroup::Dih4), 2)],
            FlattenSpec { nodes: 2, sharing: Sharing::Group(SymmetryGroup::Dih4), activation: Activation::Tanh },
            head(2),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::build(&spec, &mut rng).unwrap();
        let arrays: Vec<Vec<f64>> = net.params().into_iter().map(|p| p.values).collect();
        let mut other = Network::build(&spec, &mut rng).unwrap();
        assert_ne!(other, net);
        other.set_params(&arrays).unwrap();
        assert_eq!(other, net);
        let mut broken = arrays.clone();
        broken[0][0] += 1.0;
        assert!(other.set_params(&broken).is_err());
        assert_eq!(net.constraint_residual(), 0.0);
    }

    #[test]
    fn channel_multiplier_scales_hidden_channels() {
        let mut spec = NetworkSpec::simple(
            8,
            vec![conv(1, 2, 3, None, 1), conv(2, 1, 3, None, 1)],
            FlattenSpec { nodes: 1, sharing: Sharing::None, activation: Activation::Tanh },
            head(1),
        );
        spec.channel_multiplier = 3;
        let net = Network::build(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(net.pipelines[0].layers[0].kernels.len(), 6);
        assert_eq!(net.pipelines[0].layers[1].kernels[0].len(), 6);
        assert_eq!(net.pipelines[0].layers[1].kernels.len(), 3);
    }

    #[test]
    fn composed_rejects_bad_assignment() {
        let dih = PipelineSpec {
            input_shape: None,
            pre_pad: None,
            layers: vec![conv(1, 1, 3, Some(SymmetryGroup::Dih4), 1)],
            flatten: FlattenSpec { nodes: 1, sharing: Sharing::Group(SymmetryGroup::Dih4), activation: Activation::Tanh },
        };
        let tli = |l: TranslationLine| PipelineSpec {
            input_shape: None,
            pre_pad: Some(PrePad { direction: l.padding_direction(), amount: 2 }),
            layers: vec![conv(1, 1, 3, None, 1)],
            flatten: FlattenSpec { nodes: 1, sharing: Sharing::Line(l), activation: Activation::Tanh },
        };
        let mut specs: Vec<PipelineSpec> = TranslationLine::ALL.iter().map(|&l| tli(l)).collect();
        specs.insert(2, dih.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = build_composed((8, 8), &specs, head(2), &mut rng).unwrap();
        assert_eq!(c.net.pipelines[0].rti_group(), Some(SymmetryGroup::Dih4));
        assert_eq!(c.line_of_bank(1), Some(TranslationLine::Y0));
        specs[0] = tli(TranslationLine::X0);
        assert!(matches!(build_composed((8, 8), &specs, head(2), &mut rng), Err(Error::Config(_))));
        specs[0] = dih;
        assert!(build_composed((8, 8), &specs, head(2), &mut rng).is_err());
    }
}
