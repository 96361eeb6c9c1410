//! Random Dih4 networks checked against all eight exact transforms.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::InvarianceConfig;
use super::report::{fingerprint, vec_diff, Expectation, ExperimentReport, TrialLog, TrialSpec};
use super::{derive_seed, RunOptions};
use crate::error::Result;
use crate::network::{forward_layer, plan_layer, FlattenSpec, HeadSpec, LayerSpec, Network, NetworkSpec};
use crate::scan::{Activation, PoolKind, PoolSize, ScanConfig};
use crate::symmetry::{Sharing, SymmetryGroup};
use crate::tensor::Tensor2D;
use crate::transform::{transform, TransformElement};

/// Residual above which a desymmetrized network counts as clearly broken.
pub const BROKEN_THRESHOLD: f64 = 1e-3;

/// Scan flags that apply to every generated layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScanFlags {
    pub allow_nondivisible: bool,
    pub remedy_padding: bool,
}

/// A random network whose every kernel and the flatten layer share weights
/// over `group`, plus the map side entering each layer and the final side.
pub fn random_network<R: Rng>(
    cfg: &InvarianceConfig,
    group: SymmetryGroup,
    flags: ScanFlags,
    rng: &mut R,
) -> Result<(Network, Vec<usize>)> {
    let n = rng.gen_range(cfg.min_input..=cfg.max_input);
    let depth = rng.gen_range(cfg.min_layers..=cfg.max_layers);
    let mut sizes = vec![n];
    let mut layers = Vec::new();
    let mut channels = 1;
    let mut side = n;
    for _ in 0..depth {
        let out_channels = rng.gen_range(1..=cfg.max_channels);
        let mut candidates = Vec::new();
        for k in cfg.min_kernel..=cfg.max_kernel.min(side) {
            for stride in 1..=2 {
                for pool in 1..=3 {
                    let scan = ScanConfig {
                        stride,
                        pool: PoolSize::square(pool),
                        pool_kind: if pool > 1 {
                            *[PoolKind::Max, PoolKind::Average].choose(rng).expect("non-empty")
                        } else {
                            PoolKind::None
                        },
                        activation: *Activation::ALL.choose(rng).expect("non-empty"),
                        allow_nondivisible: flags.allow_nondivisible,
                        remedy_padding: flags.remedy_padding,
                    };
                    let spec = LayerSpec {
                        in_channels: channels,
                        out_channels,
                        kernel_size: k,
                        group: Some(group),
                        scan,
                        has_1x1: false,
                    };
                    if let Ok((rows, _)) = plan_layer(&spec, side, side) {
                        let divides = (side - k) % stride == 0 && ((side - k) / stride + 1) % pool == 0;
                        candidates.push((spec, rows.out, divides));
                    }
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        // Keep room for further layers, and when the scan flags are on make
        // sure the non-dividing configurations are actually exercised.
        if candidates.iter().any(|c| c.1 >= 3) {
            candidates.retain(|c| c.1 >= 3);
        }
        if (flags.allow_nondivisible || flags.remedy_padding) && candidates.iter().any(|c| !c.2) && rng.gen_bool(0.5) {
            candidates.retain(|c| !c.2);
        }
        let (mut spec, out, _) = candidates.swap_remove(rng.gen_range(0..candidates.len()));
        spec.has_1x1 = out_channels > 1 && rng.gen_bool(0.3);
        layers.push(spec);
        channels = out_channels;
        side = out;
        sizes.push(side);
    }
    let flatten = FlattenSpec {
        nodes: rng.gen_range(1..=4),
        sharing: Sharing::Group(group),
        activation: *Activation::ALL.choose(rng).expect("non-empty"),
    };
    let hidden = if rng.gen_bool(0.5) { vec![rng.gen_range(2..=6)] } else { Vec::new() };
    let head = HeadSpec { hidden, outputs: rng.gen_range(1..=3), activation: Activation::Tanh };
    let net = Network::build(&NetworkSpec::simple(n, layers, flatten, head), rng)?;
    Ok((net, sizes))
}

/// Data-dependent rescaling: layer by layer, each output channel's kernels and
/// bias are set so its pre-activation has zero mean and unit spread over the
/// probes. Scalars commute with every transform, so sharing is untouched; the
/// point is to keep random deep stacks away from dead or saturated units.
pub fn calibrate(net: &mut Network, probes: &[Tensor2D]) -> Result<()> {
    for p in &mut net.pipelines {
        let mut xs: Vec<Vec<Tensor2D>> = probes.iter().map(|x| vec![p.prepare(x)]).collect();
        for layer in &mut p.layers {
            let traces = xs.iter().map(|x| forward_layer(layer, x)).collect::<Result<Vec<_>>>()?;
            for q in 0..layer.kernels.len() {
                let values: Vec<f64> = traces.iter().flat_map(|t| t.pre[q].values().iter().copied()).collect();
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if sd < 1e-12 {
                    continue;
                }
                for k in &mut layer.kernels[q] {
                    k.set_weights(k.weights().scale(1.0 / sd))?;
                }
                layer.biases[q] = (layer.biases[q] - mean) / sd;
            }
            xs = xs.iter().map(|x| Ok(forward_layer(layer, x)?.outputs)).collect::<Result<Vec<_>>>()?;
        }
    }
    Ok(())
}

/// A network whose output does not move between two random inputs (all ReLUs
/// dead, say) is invariant to everything and says nothing about the kernels.
pub const LIVE_THRESHOLD: f64 = 1e-6;

pub fn is_live<R: Rng>(net: &Network, n: usize, rng: &mut R) -> Result<bool> {
    let a = net.forward(&Tensor2D::random_uniform(n, n, -1.0, 1.0, rng))?;
    let b = net.forward(&Tensor2D::random_uniform(n, n, -1.0, 1.0, rng))?;
    Ok(vec_diff(&a, &b) > LIVE_THRESHOLD)
}

/// Draws and calibrates networks until one is live (at most 64 tries).
pub fn random_live_network<R: Rng>(
    cfg: &InvarianceConfig,
    group: SymmetryGroup,
    flags: ScanFlags,
    rng: &mut R,
) -> Result<(Network, Vec<usize>)> {
    let mut tries = 0;
    loop {
        let (mut net, sizes) = random_network(cfg, group, flags, rng)?;
        let n = sizes[0];
        let probes: Vec<Tensor2D> = (0..8).map(|_| Tensor2D::random_uniform(n, n, -1.0, 1.0, rng)).collect();
        calibrate(&mut net, &probes)?;
        tries += 1;
        if tries >= 64 || is_live(&net, n, rng)? {
            return Ok((net, sizes));
        }
    }
}

struct NetResult {
    seed: u64,
    sizes: Vec<usize>,
    fingerprint: String,
    residuals: Vec<(TransformElement, f64)>,
}

fn one_net(cfg: &InvarianceConfig, opts: &RunOptions, seed: u64) -> Result<NetResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flags = ScanFlags { allow_nondivisible: opts.allow_nondivisible, remedy_padding: opts.remedy_padding };
    let (mut net, sizes) = random_live_network(cfg, SymmetryGroup::Dih4, flags, &mut rng)?;
    if opts.desymmetrize_one_kernel {
        let layers = &net.pipelines[0].layers;
        let l = rng.gen_range(0..layers.len());
        let q = rng.gen_range(0..layers[l].kernels.len());
        let i = rng.gen_range(0..layers[l].kernels[q].len());
        net.desymmetrize_kernel(0, l, q, i, &mut rng)?;
    }
    // Per transform, the worst residual over several random inputs.
    let mut residuals: Vec<(TransformElement, f64)> = TransformElement::DIH4.iter().map(|&e| (e, 0.0)).collect();
    for _ in 0..cfg.inputs_per_net {
        let x = Tensor2D::random_uniform(sizes[0], sizes[0], -1.0, 1.0, &mut rng);
        let base = net.forward(&x)?;
        for (e, r) in &mut residuals {
            *r = r.max(vec_diff(&base, &net.forward(&transform(&x, *e)?)?));
        }
    }
    Ok(NetResult { seed, sizes, fingerprint: fingerprint(&net), residuals })
}

pub fn run(cfg: &InvarianceConfig, opts: &RunOptions, seed: u64) -> Result<ExperimentReport> {
    let results = (0..cfg.nets as u64)
        .into_par_iter()
        .map(|i| one_net(cfg, opts, derive_seed(seed, 1, i)))
        .collect::<Result<Vec<_>>>()?;
    let mut log = TrialLog::default();
    let mut broken = 0;
    let mut worst: f64 = 0.0;
    for (i, r) in results.into_iter().enumerate() {
        let net_max = r.residuals.iter().map(|x| x.1).fold(0.0, f64::max);
        worst = worst.max(net_max);
        if net_max > BROKEN_THRESHOLD {
            broken += 1;
        }
        for (e, residual) in r.residuals {
            log.push(TrialSpec {
                case: &format!("net{i}"),
                transform: e.name(),
                residual,
                tolerance: cfg.tolerance,
                expected: Expectation::Pass,
                seed: r.seed,
                layer_sizes: r.sizes.clone(),
                fingerprint: r.fingerprint.clone(),
            });
        }
    }
    log.metric("nets", cfg.nets as f64);
    log.metric("max_residual", worst);
    log.metric("broken_fraction", broken as f64 / cfg.nets as f64);
    Ok(log.finish("invariance", seed))
}
