//! Train a Dih4 network on rings vs crosses and confirm the trained network
//! still gives identical outputs over each test image's whole Dih4 orbit. An
//! unconstrained baseline trained on the materialized orbit is the contrast.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainDemoConfig;
use super::dataset::{argmax, SyntheticDataset};
use super::derive_seed;
use super::report::{fingerprint, vec_diff, Expectation, ExperimentReport, TrialLog, TrialSpec};
use crate::augment::{expand, implied_orbit_size};
use crate::error::Result;
use crate::network::{FlattenSpec, HeadSpec, LayerSpec, Network, NetworkSpec};
use crate::scan::{Activation, PoolKind, PoolSize, ScanConfig};
use crate::symmetry::{Sharing, SymmetryGroup};
use crate::tensor::Tensor2D;
use crate::training::{train, Example};
use crate::transform::{transform, TransformElement};

pub fn demo_spec(n: usize, group: Option<SymmetryGroup>) -> NetworkSpec {
    let layer = |cin, pool: usize| LayerSpec {
        in_channels: cin,
        out_channels: 4,
        kernel_size: 3,
        group,
        scan: ScanConfig {
            pool: PoolSize::square(pool),
            pool_kind: if pool > 1 { PoolKind::Max } else { PoolKind::None },
            ..ScanConfig::default()
        },
        has_1x1: false,
    };
    let sharing = group.map_or(Sharing::None, Sharing::Group);
    NetworkSpec::simple(
        n,
        vec![layer(1, 2), layer(4, 1)],
        FlattenSpec { nodes: 4, sharing, activation: Activation::Tanh },
        HeadSpec { hidden: vec![8], outputs: 2, activation: Activation::Tanh },
    )
}

fn augmented(data: &[Example], cfg: &TrainDemoConfig, materialize: bool) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for ex in data {
        for img in expand(&cfg.augment, &ex.input, materialize)? {
            out.push(Example { input: img, target: ex.target.clone() });
        }
    }
    Ok(out)
}

/// Largest output difference over the Dih4 orbit of `x`.
pub fn orbit_spread(net: &Network, x: &Tensor2D) -> Result<f64> {
    let base = net.forward(x)?;
    let mut worst: f64 = 0.0;
    for e in TransformElement::DIH4 {
        worst = worst.max(vec_diff(&base, &net.forward(&transform(x, e)?)?));
    }
    Ok(worst)
}

fn accuracy(net: &Network, test: &SyntheticDataset) -> Result<f64> {
    let mut hits = 0;
    for (x, &l) in test.images.iter().zip(&test.labels) {
        if argmax(&net.forward(x)?) == l {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

pub fn run(cfg: &TrainDemoConfig, seed: u64) -> Result<ExperimentReport> {
    let n = cfg.input;
    let train_set = SyntheticDataset::generate(n, cfg.train_per_class, derive_seed(seed, 6, 0));
    let test_set = SyntheticDataset::generate(n, cfg.test_per_class, derive_seed(seed, 6, 1));
    let base_data = train_set.examples();
    let tc = crate::training::TrainConfig { seed: derive_seed(seed, 6, 2), ..cfg.train.clone() };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ti = Network::build(&demo_spec(n, Some(SymmetryGroup::Dih4)), &mut rng)?;
    let (ti, _) = train(&ti, &augmented(&base_data, cfg, false)?, &tc)?;
    let baseline = Network::build(&demo_spec(n, None), &mut rng)?;
    let (baseline, _) = train(&baseline, &augmented(&base_data, cfg, true)?, &tc)?;

    let mut log = TrialLog::default();
    let (fp, fp_base) = (fingerprint(&ti), fingerprint(&baseline));
    let mut worst_base: f64 = 0.0;
    for (i, x) in test_set.images.iter().enumerate() {
        log.push(TrialSpec {
            case: "ti-spread",
            transform: format!("test{i}"),
            residual: orbit_spread(&ti, x)?,
            tolerance: cfg.tolerance,
            expected: Expectation::Pass,
            seed,
            layer_sizes: vec![n],
            fingerprint: fp.clone(),
        });
        worst_base = worst_base.max(orbit_spread(&baseline, x)?);
    }
    log.push(TrialSpec {
        case: "ti-constraints",
        transform: "sharing".into(),
        residual: ti.constraint_residual(),
        tolerance: cfg.tolerance,
        expected: Expectation::Pass,
        seed,
        layer_sizes: vec![n],
        fingerprint: fp.clone(),
    });
    let acc = accuracy(&ti, &test_set)?;
    let acc_base = accuracy(&baseline, &test_set)?;
    // Accuracy as a residual: 1 - accuracy against 1 - bar.
    log.push(TrialSpec {
        case: "ti-accuracy",
        transform: "test".into(),
        residual: 1.0 - acc,
        tolerance: 1.0 - cfg.accuracy_bar,
        expected: Expectation::Pass,
        seed,
        layer_sizes: vec![n],
        fingerprint: fp,
    });
    log.push(TrialSpec {
        case: "baseline-spread",
        transform: "dih4".into(),
        residual: worst_base,
        tolerance: cfg.tolerance,
        expected: Expectation::Report,
        seed,
        layer_sizes: vec![n],
        fingerprint: fp_base,
    });
    log.metric("ti_accuracy", acc);
    log.metric("baseline_accuracy", acc_base);
    log.metric("baseline_max_spread", worst_base);
    log.metric("ti_free_parameters", ti.free_parameter_count() as f64);
    log.metric("baseline_free_parameters", baseline.free_parameter_count() as f64);
    log.metric("implied_orbit_size", implied_orbit_size(&cfg.augment) as f64);
    Ok(log.finish("train-demo", seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trained_net_stays_invariant() {
        let mut cfg = TrainDemoConfig { train_per_class: 6, test_per_class: 4, accuracy_bar: 0.0, ..TrainDemoConfig::default() };
        cfg.train.epochs = 3;
        let r = run(&cfg, 4).unwrap();
        assert!(r.summary.pass, "{:?}", r.failures().next());
        assert!(r.summary.metrics["baseline_max_spread"] > 1e-6);
        assert!(r.summary.metrics["ti_free_parameters"] < r.summary.metrics["baseline_free_parameters"]);
    }
}
