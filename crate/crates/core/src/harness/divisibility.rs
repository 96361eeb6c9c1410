//! Which symmetries survive a pooling window that does not divide the map.
//!
//! A Dih4 convolution maps the input to an 8×8 grid. Truncating pools drop
//! the trailing rows and/or columns, so only the transforms that fix the kept
//! corner region survive; symmetric zero padding restores everything the
//! window shape allows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::DivisibilityConfig;
use super::derive_seed;
use super::report::{fingerprint, vec_diff, Expectation, ExperimentReport, TrialLog, TrialSpec};
use crate::error::{Error, Result};
use crate::network::{FlattenSpec, HeadSpec, LayerSpec, Network, NetworkSpec};
use crate::scan::{Activation, PoolKind, PoolSize, ScanConfig};
use crate::symmetry::{Sharing, SymmetryGroup};
use crate::tensor::Tensor2D;
use crate::transform::{transform, TransformElement};

use TransformElement::*;

struct Case {
    name: &'static str,
    pool: PoolSize,
    allow: bool,
    remedy: bool,
    flatten: SymmetryGroup,
    survivors: &'static [TransformElement],
}

const KLEIN: &[TransformElement] = &[Identity, Rot180, ReflectM1, ReflectM2];

fn cases() -> Vec<Case> {
    vec![
        // Rows truncated, columns divide: only the left-right mirror survives.
        Case { name: "vertical", pool: PoolSize { rows: 3, cols: 2 }, allow: true, remedy: false, flatten: SymmetryGroup::Klein, survivors: &[Identity, ReflectM1] },
        Case { name: "horizontal", pool: PoolSize { rows: 2, cols: 3 }, allow: true, remedy: false, flatten: SymmetryGroup::Klein, survivors: &[Identity, ReflectM2] },
        // Both truncated: the kept top-left block is fixed only by the transpose.
        Case { name: "isotropic-truncated", pool: PoolSize::square(3), allow: true, remedy: false, flatten: SymmetryGroup::Dih4, survivors: &[Identity, ReflectD2] },
        Case { name: "remedy", pool: PoolSize::square(3), allow: false, remedy: true, flatten: SymmetryGroup::Dih4, survivors: &TransformElement::DIH4 },
        // A non-square window can never commute with the 90° elements.
        Case { name: "vertical-remedy", pool: PoolSize { rows: 3, cols: 2 }, allow: false, remedy: true, flatten: SymmetryGroup::Klein, survivors: KLEIN },
    ]
}

fn layer(cfg: &DivisibilityConfig, pool: PoolSize, allow: bool, remedy: bool) -> LayerSpec {
    LayerSpec {
        in_channels: 1,
        out_channels: cfg.channels,
        kernel_size: cfg.kernel,
        group: Some(SymmetryGroup::Dih4),
        scan: ScanConfig {
            stride: 1,
            pool,
            pool_kind: PoolKind::Max,
            activation: Activation::Tanh,
            allow_nondivisible: allow,
            remedy_padding: remedy,
        },
        has_1x1: false,
    }
}

fn spec(cfg: &DivisibilityConfig, case: &Case) -> NetworkSpec {
    NetworkSpec::simple(
        cfg.input,
        vec![layer(cfg, case.pool, case.allow, case.remedy)],
        FlattenSpec { nodes: 2, sharing: Sharing::Group(case.flatten), activation: Activation::Tanh },
        HeadSpec { hidden: vec![], outputs: 2, activation: Activation::Tanh },
    )
}

pub fn run(cfg: &DivisibilityConfig, seed: u64) -> Result<ExperimentReport> {
    let mut log = TrialLog::default();
    for (ci, case) in cases().iter().enumerate() {
        let s = derive_seed(seed, 2, ci as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let net = Network::build(&spec(cfg, case), &mut rng)?;
        let x = Tensor2D::random_uniform(cfg.input, cfg.input, -1.0, 1.0, &mut rng);
        let last = net.pipelines[0].last_maps(&x)?;
        let sizes = vec![cfg.input, last[0].height(), last[0].width()];
        let fp = fingerprint(&net);
        let base = net.forward(&x)?;
        for e in TransformElement::DIH4 {
            let residual = vec_diff(&base, &net.forward(&transform(&x, e)?)?);
            log.push(TrialSpec {
                case: case.name,
                transform: e.name(),
                residual,
                tolerance: cfg.tolerance,
                expected: if case.survivors.contains(&e) { Expectation::Pass } else { Expectation::Fail },
                seed: s,
                layer_sizes: sizes.clone(),
                fingerprint: fp.clone(),
            });
        }
    }
    // Without either flag a non-dividing pool is rejected at build time.
    let strict = Case { name: "strict", pool: PoolSize::square(3), allow: false, remedy: false, flatten: SymmetryGroup::Dih4, survivors: &[] };
    let rejected = matches!(Network::build(&spec(cfg, &strict), &mut ChaCha8Rng::seed_from_u64(seed)), Err(Error::Divisibility(_)));
    log.push(TrialSpec {
        case: "strict",
        transform: "build".into(),
        residual: if rejected { 0.0 } else { f64::INFINITY },
        tolerance: cfg.tolerance,
        expected: Expectation::Pass,
        seed,
        layer_sizes: vec![cfg.input],
        fingerprint: String::new(),
    });
    Ok(log.finish("divisibility", seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survivors_match() {
        let r = run(&DivisibilityConfig::default(), 1).unwrap();
        for t in r.failures() {
            eprintln!("{} {} {:e}", t.case, t.transform, t.residual);
        }
        assert!(r.summary.pass);
        assert_eq!(r.case("vertical").next().unwrap().layer_sizes, vec![10, 2, 4]);
        assert_eq!(r.case("remedy").next().unwrap().layer_sizes, vec![10, 4, 4]);
    }
}
