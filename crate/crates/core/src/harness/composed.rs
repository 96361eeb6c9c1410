//! The composed network: one Dih4 pipeline and four translation-identical
//! pipelines. Each bank must be selective — invariant to its own transform
//! and not to the others' — before and after training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ComposedConfig;
use super::dataset::SyntheticDataset;
use super::derive_seed;
use super::report::{fingerprint, vec_diff, Expectation, ExperimentReport, TrialLog, TrialSpec};
use super::tli::{framed_input, tli_pipeline};
use crate::error::Result;
use crate::network::{build_composed, ComposedNetwork, FlattenSpec, HeadSpec, LayerSpec, PipelineSpec};
use crate::scan::{Activation, PoolKind, PoolSize, ScanConfig};
use crate::symmetry::{Sharing, SymmetryGroup, TranslationLine};
use crate::tensor::Tensor2D;
use crate::training::{loss, train, Example, Schedule, TrainConfig};
use crate::transform::{transform, TransformElement};

fn conv_pool(group: Option<SymmetryGroup>) -> LayerSpec {
    LayerSpec {
        in_channels: 1,
        out_channels: 2,
        kernel_size: 3,
        group,
        scan: ScanConfig { pool: PoolSize::square(2), pool_kind: PoolKind::Max, ..ScanConfig::default() },
        has_1x1: false,
    }
}

pub fn composed_specs(pipeline_pad: usize) -> Vec<PipelineSpec> {
    let mut specs = vec![PipelineSpec {
        input_shape: None,
        pre_pad: None,
        layers: vec![conv_pool(Some(SymmetryGroup::Dih4))],
        flatten: FlattenSpec { nodes: 2, sharing: Sharing::Group(SymmetryGroup::Dih4), activation: Activation::Tanh },
    }];
    specs.extend(TranslationLine::ALL.iter().map(|&l| tli_pipeline(l, pipeline_pad, vec![conv_pool(None)])));
    specs
}

pub fn composed_head() -> HeadSpec {
    HeadSpec { hidden: vec![8], outputs: 2, activation: Activation::Tanh }
}

/// Transforms of the selectivity matrix, labelled; column `j` is the one bank
/// `j` must be invariant to.
fn probes(shift: i64) -> Vec<(String, TransformElement)> {
    let mut v = vec![("rot90".to_string(), TransformElement::Rot90)];
    v.extend(TranslationLine::ALL.iter().map(|l| (format!("shift{shift}@{}", l.tag()), l.shift(shift))));
    v
}

fn selectivity(log: &mut TrialLog, prefix: &str, net: &ComposedNetwork, x: &Tensor2D, cfg: &ComposedConfig, seed: u64) -> Result<()> {
    let fp = fingerprint(&net.net);
    let (out, base) = net.forward_composed(x)?;
    for (j, (name, e)) in probes(cfg.shift).into_iter().enumerate() {
        let (out_t, banks) = net.forward_composed(&transform(x, e)?)?;
        for (b, bank) in banks.iter().enumerate() {
            log.push(TrialSpec {
                case: &format!("{prefix}bank{}", bank.pipeline_id),
                transform: name.clone(),
                residual: base[b].max_abs_diff(bank),
                tolerance: cfg.tolerance,
                expected: if b == j { Expectation::Pass } else { Expectation::Fail },
                seed,
                layer_sizes: vec![x.height()],
                fingerprint: fp.clone(),
            });
        }
        // The merged output is invariant to nothing in particular.
        log.push(TrialSpec {
            case: &format!("{prefix}output"),
            transform: name,
            residual: vec_diff(&out, &out_t),
            tolerance: cfg.tolerance,
            expected: Expectation::Fail,
            seed,
            layer_sizes: vec![x.height()],
            fingerprint: fp.clone(),
        });
    }
    Ok(())
}

fn mean_loss(net: &ComposedNetwork, data: &[Example], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        total += loss(&net.net.forward(&ex.input)?, &ex.target, cfg.loss)?;
    }
    Ok(total / data.len() as f64)
}

fn schedule_tag(s: Schedule) -> &'static str {
    match s {
        Schedule::Joint => "joint",
        Schedule::PerPipeline => "per_pipeline",
        Schedule::Grouped => "grouped",
    }
}

pub fn run(cfg: &ComposedConfig, seed: u64) -> Result<ExperimentReport> {
    let n = cfg.input;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = build_composed((n, n), &composed_specs(cfg.pipeline_pad), composed_head(), &mut rng)?;
    let x = framed_input(n - 2 * cfg.frame, cfg.frame, &mut rng);
    let mut log = TrialLog::default();
    selectivity(&mut log, "", &net, &x, cfg, seed)?;

    let data = SyntheticDataset::generate(n, cfg.per_class, derive_seed(seed, 4, 0)).examples();
    let mut trained_main = None;
    // The configured regime must reach the loss bound; the others are reported.
    let mut schedules = vec![cfg.train.schedule];
    schedules.extend([Schedule::Joint, Schedule::PerPipeline, Schedule::Grouped].into_iter().filter(|&s| s != cfg.train.schedule));
    for (i, schedule) in schedules.into_iter().enumerate() {
        let tc = TrainConfig { schedule, seed: derive_seed(seed, 5, 0), ..cfg.train.clone() };
        let (trained, _) = train(&net.net, &data, &tc)?;
        let trained = ComposedNetwork { net: trained };
        let l = mean_loss(&trained, &data, &tc)?;
        log.metric(&format!("loss_{}", schedule_tag(schedule)), l);
        log.push(TrialSpec {
            case: "train",
            transform: schedule_tag(schedule).to_string(),
            residual: l,
            tolerance: cfg.loss_bound,
            expected: if i == 0 { Expectation::Pass } else { Expectation::Report },
            seed: tc.seed,
            layer_sizes: vec![n],
            fingerprint: fingerprint(&trained.net),
        });
        if i == 0 {
            trained_main = Some(trained);
        }
    }
    if let Some(t) = trained_main {
        selectivity(&mut log, "trained-", &t, &x, cfg, seed)?;
    }
    Ok(log.finish("composed", seed))
}
