use ticnn_core::symmetry::is_ti;
use ticnn_core::transform::transform;
use ticnn_core::wavelet::{
    classify_compartment_symmetry, compartment_relation, dwt2d, dwt2d_oracle, idwt2d, Compartment, Extension, WaveletFilterPair,
};
use ticnn_core::{SymmetryGroup, Tensor2D, TransformElement};

fn input(n: usize) -> Tensor2D {
    Tensor2D::from_fn(n, n, |r, c| ((r * 7 + c * 13) as f64 * 0.37).sin() + 0.1 * r as f64)
}

#[test]
fn fast_transform_matches_oracle() {
    for (pair, n, ext) in [
        (WaveletFilterPair::haar(), 16, Extension::Periodic),
        (WaveletFilterPair::cdf53(), 16, Extension::Periodic),
        (WaveletFilterPair::cdf53(), 17, Extension::Symmetric),
    ] {
        let x = input(n);
        let d = dwt2d(&x, &pair, ext).unwrap().max_abs_diff(&dwt2d_oracle(&x, &pair, ext).unwrap());
        assert!(d <= 1e-12, "{} {n}: {d}", pair.name);
    }
}

#[test]
fn cdf53_reconstructs_periodic_input() {
    let pair = WaveletFilterPair::cdf53();
    let x = input(16);
    let back = idwt2d(&dwt2d(&x, &pair, Extension::Periodic).unwrap(), &pair).unwrap();
    assert!(back.max_abs_diff(&x) <= 1e-10);
}

#[test]
fn haar_classification_and_relations() {
    let pair = WaveletFilterPair::haar();
    let classes = classify_compartment_symmetry(&pair).unwrap();
    assert_eq!(classes.get(Compartment::LL), SymmetryGroup::Dih4);
    assert_eq!(classes.get(Compartment::LH), SymmetryGroup::C2);
    let ext = pair.natural_extension();
    let x = input(16);
    for c in Compartment::ALL {
        for &e in classes.get(c).elements() {
            let rel = compartment_relation(&x, &pair, ext, c, e).unwrap();
            assert!(rel.residual <= 1e-10, "{c} {e:?}: {}", rel.residual);
        }
    }
}

#[test]
fn symmetric_input_gives_symmetric_ll_under_cdf53() {
    let pair = WaveletFilterPair::cdf53();
    let raw = input(17);
    let sym = ticnn_core::symmetry::symmetrize(&raw, SymmetryGroup::Dih4, Default::default()).unwrap();
    let ll = dwt2d(&sym, &pair, Extension::Symmetric).unwrap().ll;
    assert!(is_ti(&ll, SymmetryGroup::Dih4, 1e-12));
    assert!(ll.max_abs_diff(&transform(&ll, TransformElement::ReflectD1).unwrap()) <= 1e-12);
}

#[test]
fn scaling_only_is_fully_symmetric_and_bad_names_are_rejected() {
    let classes = classify_compartment_symmetry(&WaveletFilterPair::scaling_only()).unwrap();
    assert!(Compartment::ALL.iter().all(|&c| classes.get(c) == SymmetryGroup::Dih4));
    let mut untagged = WaveletFilterPair::haar();
    untagged.wavelet_tag = None;
    assert!(classify_compartment_symmetry(&untagged).is_err());
    assert!(WaveletFilterPair::builtin("db4-nope").is_err());
    assert!(WaveletFilterPair::builtin("haar").is_ok());
}
