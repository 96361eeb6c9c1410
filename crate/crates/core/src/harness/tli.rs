//! Translation-identical pipelines: one per direction, each checked against
//! shifts along its own line. Shifts that are multiples of the cumulative
//! stride × pool factor must leave the feature bank unchanged; others need not.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TliConfig;
use super::report::{fingerprint, vec_diff, Expectation, ExperimentReport, TrialLog, TrialSpec};
use crate::error::Result;
use crate::network::{plan_layer, FlattenSpec, HeadSpec, LayerSpec, Network, NetworkSpec, PipelineSpec, PrePad};
use crate::scan::{pad_for_translation, validate_divisibility, Activation, PoolKind, PoolSize, ScanConfig};
use crate::symmetry::{Sharing, TranslationLine};
use crate::tensor::Tensor2D;
use crate::transform::transform;

pub const POOL: usize = 2;

pub fn tli_layers() -> Vec<LayerSpec> {
    let layer = |cin| LayerSpec {
        in_channels: cin,
        out_channels: 2,
        kernel_size: 3,
        group: None,
        scan: ScanConfig { pool: PoolSize::square(POOL), pool_kind: PoolKind::Max, ..ScanConfig::default() },
        has_1x1: false,
    };
    vec![layer(1), layer(2)]
}

pub fn tli_pipeline(line: TranslationLine, pad: usize, layers: Vec<LayerSpec>) -> PipelineSpec {
    PipelineSpec {
        input_shape: None,
        pre_pad: Some(PrePad { direction: line.padding_direction(), amount: pad }),
        layers,
        flatten: FlattenSpec { nodes: 2, sharing: Sharing::Line(line), activation: Activation::Tanh },
    }
}

/// Sizes entering each pooling stage along `line`'s most constrained axis.
pub fn pooling_sizes(spec: &PipelineSpec, input: (usize, usize)) -> Result<Vec<usize>> {
    let mut shape = input;
    if let Some(p) = spec.pre_pad {
        shape = pad_for_translation(&Tensor2D::zeros(input.0, input.1), p.direction, p.amount).shape();
    }
    let mut sizes = Vec::new();
    for l in &spec.layers {
        let (r, c) = plan_layer(l, shape.0, shape.1)?;
        sizes.push(r.conv_out.min(c.conv_out));
        shape = (r.out, c.out);
    }
    Ok(sizes)
}

/// Random content inside a zero frame.
pub fn framed_input<R: rand::Rng>(content: usize, frame: usize, rng: &mut R) -> Tensor2D {
    Tensor2D::random_uniform(content, content, -1.0, 1.0, rng).pad(frame, frame, frame, frame)
}

pub fn run(cfg: &TliConfig, seed: u64) -> Result<ExperimentReport> {
    let n = cfg.content + 2 * cfg.frame;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pipelines: Vec<PipelineSpec> =
        TranslationLine::ALL.iter().map(|&l| tli_pipeline(l, cfg.pipeline_pad, tli_layers())).collect();
    let spec = NetworkSpec {
        input_height: n,
        input_width: n,
        pipelines: pipelines.clone(),
        head: HeadSpec { hidden: vec![], outputs: 1, activation: Activation::Identity },
        channel_multiplier: 1,
    };
    let net = Network::build(&spec, &mut rng)?;
    let fp = fingerprint(&net);
    let x = framed_input(cfg.content, cfg.frame, &mut rng);
    let (_, base) = net.forward_banks(&x)?;
    let mut log = TrialLog::default();
    for (p, line) in TranslationLine::ALL.iter().enumerate() {
        let sizes = pooling_sizes(&pipelines[p], (n, n))?;
        for &s in &cfg.shifts {
            // Lossless shifts that the stack's divisibility admits must pass.
            let lossless = s.unsigned_abs() as usize <= cfg.frame;
            let admitted = lossless && validate_divisibility(&sizes, 1, POOL, s.unsigned_abs() as usize);
            let (_, banks) = net.forward_banks(&transform(&x, line.shift(s))?)?;
            log.push(TrialSpec {
                case: line.tag(),
                transform: format!("shift{s}"),
                residual: base[p].max_abs_diff(&banks[p]),
                tolerance: cfg.tolerance,
                expected: if admitted { Expectation::Pass } else { Expectation::Fail },
                seed,
                layer_sizes: sizes.clone(),
                fingerprint: fp.clone(),
            });
        }
    }
    let rot = vec_diff(&base[0].values, &net.forward_banks(&transform(&x, crate::transform::TransformElement::Rot90)?)?.1[0].values);
    log.metric("y0_rot90_residual", rot);
    Ok(log.finish("tli", seed))
}
