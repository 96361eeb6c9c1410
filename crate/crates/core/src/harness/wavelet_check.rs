//! Wavelet front ends: the claimed per-compartment symmetry, and whether a
//! chain of Dih4 pipelines over the compartments stays invariant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::WaveletConfig;
use super::derive_seed;
use super::report::{fingerprint, vec_diff, Expectation, ExperimentReport, TrialLog, TrialSpec};
use crate::error::{Error, Result};
use crate::network::{FlattenSpec, HeadSpec, LayerSpec, Network, NetworkSpec, PipelineSpec};
use crate::scan::{Activation, ScanConfig};
use crate::symmetry::{Sharing, SymmetryGroup};
use crate::tensor::Tensor2D;
use crate::transform::{transform, TransformElement};
use crate::wavelet::{
    classify_compartment_symmetry, compartment_relation, dwt2d, energy_map, hh_fix, merge_fixed_details,
    merge_symmetric_details, Compartment, Extension, FilterSymmetry, WaveletFilterPair,
};

/// Maps fed to the chain's pipelines, derived from one input image.
type Front = fn(&Tensor2D, &WaveletFilterPair, Extension) -> Result<Vec<Tensor2D>>;

fn raw(x: &Tensor2D, p: &WaveletFilterPair, ext: Extension) -> Result<Vec<Tensor2D>> {
    let d = dwt2d(x, p, ext)?;
    Ok(vec![d.ll, d.lh, d.hl, d.hh])
}

fn haar_fixed(x: &Tensor2D, p: &WaveletFilterPair, ext: Extension) -> Result<Vec<Tensor2D>> {
    let d = dwt2d(x, p, ext)?;
    Ok(vec![d.ll.clone(), merge_fixed_details(&d.lh, &d.hl)?, hh_fix(&d.hh)?])
}

fn symmetric_merged(x: &Tensor2D, p: &WaveletFilterPair, ext: Extension) -> Result<Vec<Tensor2D>> {
    let d = dwt2d(x, p, ext)?;
    Ok(vec![d.ll.clone(), merge_symmetric_details(&d.lh, &d.hl)?, d.hh.clone()])
}

fn single(c: Compartment, energy: bool) -> impl Fn(&Tensor2D, &WaveletFilterPair, Extension) -> Result<Vec<Tensor2D>> {
    move |x, p, ext| {
        let d = dwt2d(x, p, ext)?;
        let m = d.get(c);
        Ok(vec![if energy { energy_map(m) } else { m.clone() }])
    }
}

/// One pipeline per map, every kernel and flatten layer sharing over `group`.
fn chain_net(shapes: &[(usize, usize)], group: SymmetryGroup, seed: u64) -> Result<Network> {
    let pipelines = shapes
        .iter()
        .map(|&shape| PipelineSpec {
            input_shape: Some(shape),
            pre_pad: None,
            layers: vec![LayerSpec {
                in_channels: 1,
                out_channels: 2,
                kernel_size: 3,
                group: Some(group),
                scan: ScanConfig::default(),
                has_1x1: false,
            }],
            flatten: FlattenSpec { nodes: 2, sharing: Sharing::Group(group), activation: Activation::Tanh },
        })
        .collect();
    let (h, w) = shapes[0];
    let spec = NetworkSpec {
        input_height: h,
        input_width: w,
        pipelines,
        head: HeadSpec { hidden: vec![4], outputs: 2, activation: Activation::Tanh },
        channel_multiplier: 1,
    };
    Network::build(&spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

struct Chain<'a> {
    case: &'a str,
    pair: WaveletFilterPair,
    ext: Extension,
    side: usize,
    group: SymmetryGroup,
    front: &'a dyn Fn(&Tensor2D, &WaveletFilterPair, Extension) -> Result<Vec<Tensor2D>>,
    /// Expectation per element.
    expect: fn(TransformElement) -> Expectation,
}

fn all_pass(_: TransformElement) -> Expectation {
    Expectation::Pass
}

fn c2_only(e: TransformElement) -> Expectation {
    if SymmetryGroup::C2.contains(e) {
        Expectation::Pass
    } else {
        Expectation::Fail
    }
}

fn rot90_fails(e: TransformElement) -> Expectation {
    match e {
        TransformElement::Identity => Expectation::Pass,
        TransformElement::Rot90 => Expectation::Fail,
        _ => Expectation::Report,
    }
}

fn run_chain(log: &mut TrialLog, chain: &Chain<'_>, cfg: &WaveletConfig, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor2D::random_uniform(chain.side, chain.side, -1.0, 1.0, &mut rng);
    let maps = (chain.front)(&x, &chain.pair, chain.ext)?;
    let shapes: Vec<(usize, usize)> = maps.iter().map(Tensor2D::shape).collect();
    let net = chain_net(&shapes, chain.group, derive_seed(seed, 7, 1))?;
    let fp = fingerprint(&net);
    let base = net.forward_inputs(&maps)?;
    let sizes: Vec<usize> = std::iter::once(chain.side).chain(shapes.iter().map(|s| s.0)).collect();
    for e in TransformElement::DIH4 {
        let moved = net.forward_inputs(&(chain.front)(&transform(&x, e)?, &chain.pair, chain.ext)?)?;
        log.push(TrialSpec {
            case: chain.case,
            transform: e.name(),
            residual: vec_diff(&base, &moved),
            tolerance: cfg.tolerance,
            expected: (chain.expect)(e),
            seed,
            layer_sizes: sizes.clone(),
            fingerprint: fp.clone(),
        });
    }
    Ok(())
}

fn relation_trials(log: &mut TrialLog, pair: &WaveletFilterPair, side: usize, cfg: &WaveletConfig, seed: u64) -> Result<()> {
    let classes = classify_compartment_symmetry(pair)?;
    let ext = pair.natural_extension();
    let x = Tensor2D::random_uniform(side, side, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut negated = 0;
    for c in Compartment::ALL {
        for &e in classes.get(c).elements() {
            let rel = compartment_relation(&x, pair, ext, c, e)?;
            if rel.sign < 0.0 && rel.residual <= cfg.relation_tolerance {
                negated += 1;
            }
            log.push(TrialSpec {
                case: &format!("{}-{c}-relation", pair.name),
                transform: format!("{}->{}", e.name(), rel.partner),
                residual: rel.residual,
                tolerance: cfg.relation_tolerance,
                expected: Expectation::Pass,
                seed,
                layer_sizes: vec![side],
                fingerprint: String::new(),
            });
        }
    }
    log.metric(&format!("{}_negated_relations", pair.name), negated as f64);
    Ok(())
}

fn classification_trials(log: &mut TrialLog, seed: u64) {
    let expect = [
        ("haar", WaveletFilterPair::haar(), Some([SymmetryGroup::Dih4, SymmetryGroup::C2, SymmetryGroup::C2, SymmetryGroup::Dih4])),
        ("cdf53", WaveletFilterPair::cdf53(), Some([SymmetryGroup::Dih4; 4])),
        ("scaling-only", WaveletFilterPair::scaling_only(), Some([SymmetryGroup::Dih4; 4])),
        ("untagged", WaveletFilterPair { wavelet_tag: None, ..WaveletFilterPair::haar() }, None),
        ("neither", WaveletFilterPair { wavelet_tag: Some(FilterSymmetry::Neither), ..WaveletFilterPair::haar() }, None),
    ];
    for (name, pair, want) in expect {
        let got = classify_compartment_symmetry(&pair);
        let ok = match (want, got) {
            (Some(w), Ok(c)) => Compartment::ALL.iter().zip(w).all(|(&k, g)| c.get(k) == g),
            (None, Err(Error::Classification(_))) => true,
            _ => false,
        };
        log.push(TrialSpec {
            case: "classify",
            transform: name.into(),
            residual: if ok { 0.0 } else { f64::INFINITY },
            tolerance: 0.0,
            expected: Expectation::Pass,
            seed,
            layer_sizes: Vec::new(),
            fingerprint: String::new(),
        });
    }
}

pub fn run(cfg: &WaveletConfig, seed: u64) -> Result<ExperimentReport> {
    if !cfg.even_side.is_multiple_of(2) || cfg.odd_side.is_multiple_of(2) {
        return Err(Error::Config("wavelet even_side must be even and odd_side odd".into()));
    }
    let mut log = TrialLog::default();
    classification_trials(&mut log, seed);
    let haar = WaveletFilterPair::haar();
    let cdf = WaveletFilterPair::cdf53();
    relation_trials(&mut log, &haar, cfg.even_side, cfg, derive_seed(seed, 8, 0))?;
    relation_trials(&mut log, &cdf, cfg.odd_side, cfg, derive_seed(seed, 8, 1))?;
    relation_trials(&mut log, &WaveletFilterPair::scaling_only(), cfg.even_side, cfg, derive_seed(seed, 8, 2))?;

    let ll = single(Compartment::LL, false);
    let hh = single(Compartment::HH, true);
    let lh = single(Compartment::LH, true);
    let hl = single(Compartment::HL, true);
    let (raw_f, fixed_f, sym_f): (Front, Front, Front) = (raw, haar_fixed, symmetric_merged);
    let p = Extension::Periodic;
    let chains = [
        Chain { case: "haar-LL", pair: haar.clone(), ext: p, side: cfg.even_side, group: SymmetryGroup::Dih4, front: &ll, expect: all_pass },
        Chain { case: "haar-HH-energy", pair: haar.clone(), ext: p, side: cfg.even_side, group: SymmetryGroup::Dih4, front: &hh, expect: all_pass },
        Chain { case: "haar-LH-energy", pair: haar.clone(), ext: p, side: cfg.even_side, group: SymmetryGroup::C2, front: &lh, expect: c2_only },
        Chain { case: "haar-HL-energy", pair: haar.clone(), ext: p, side: cfg.even_side, group: SymmetryGroup::C2, front: &hl, expect: c2_only },
        Chain { case: "haar-raw-chain", pair: haar.clone(), ext: p, side: cfg.even_side, group: SymmetryGroup::Dih4, front: &raw_f, expect: rot90_fails },
        Chain { case: "haar-fixed-chain", pair: haar.clone(), ext: p, side: cfg.even_side, group: SymmetryGroup::Dih4, front: &fixed_f, expect: all_pass },
        Chain { case: "cdf53-chain", pair: cdf, ext: Extension::Symmetric, side: cfg.odd_side, group: SymmetryGroup::Dih4, front: &sym_f, expect: all_pass },
        Chain { case: "scaling-only-chain", pair: WaveletFilterPair::scaling_only(), ext: p, side: cfg.even_side, group: SymmetryGroup::Dih4, front: &raw_f, expect: all_pass },
    ];
    for (i, chain) in chains.iter().enumerate() {
        run_chain(&mut log, chain, cfg, derive_seed(seed, 9, i as u64))?;
    }
    Ok(log.finish("wavelet-check", seed))
}
