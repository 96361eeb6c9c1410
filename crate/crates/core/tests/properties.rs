use proptest::prelude::*;
use ticnn_core::scan::{conv2d, naive_inner_product, ti_inner_product};
use ticnn_core::serialize::{decode_arrays, encode_arrays};
use ticnn_core::symmetry::{free_parameter_count, is_ti, orbit_table, symmetrize};
use ticnn_core::transform::transform;
use ticnn_core::wavelet::{dwt2d, idwt2d, Extension, WaveletFilterPair};
use ticnn_core::{SymmetrizeMode, SymmetryGroup, Tensor2D, TiKernel, TransformElement};

fn tensor(h: usize, w: usize) -> impl Strategy<Value = Tensor2D> {
    prop::collection::vec(-1.0f64..1.0, h * w).prop_map(move |v| Tensor2D::new(h, w, v).unwrap())
}

fn square(lo: usize, hi: usize) -> impl Strategy<Value = Tensor2D> {
    (lo..=hi).prop_flat_map(|n| tensor(n, n))
}

fn element() -> impl Strategy<Value = TransformElement> {
    prop::sample::select(TransformElement::DIH4.to_vec())
}

fn group() -> impl Strategy<Value = SymmetryGroup> {
    prop::sample::select(SymmetryGroup::ALL.to_vec())
}

fn mode() -> impl Strategy<Value = SymmetrizeMode> {
    prop_oneof![Just(SymmetrizeMode::Sum), Just(SymmetrizeMode::Average)]
}

proptest! {
    #[test]
    fn inverse_undoes_transform(t in square(1, 9), e in element()) {
        prop_assert_eq!(transform(&transform(&t, e)?, e.inverse())?, t);
    }

    #[test]
    fn composition_matches_sequential(t in square(1, 7), a in element(), b in element()) {
        let ab = a.then(b).expect("dihedral elements compose");
        prop_assert_eq!(transform(&t, ab)?, transform(&transform(&t, a)?, b)?);
    }

    #[test]
    fn symmetrize_is_exact_and_idempotent(m in square(1, 9), g in group(), md in mode()) {
        let s = symmetrize(&m, g, md)?;
        prop_assert!(is_ti(&s, g, 0.0));
        for &e in g.elements() {
            prop_assert_eq!(&transform(&s, e)?, &s);
        }
        prop_assert_eq!(symmetrize(&s, g, SymmetrizeMode::Average)?, s);
    }

    #[test]
    fn orbit_classes_partition_the_grid(k in 1usize..10, g in group()) {
        let table = orbit_table(g, k, k)?;
        let mut seen = vec![0u32; k * k];
        for cls in table.classes() {
            prop_assert!(!cls.is_empty() && cls.len() <= g.order());
            for &i in cls {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
        prop_assert_eq!(free_parameter_count(g, k)?, table.num_classes());
    }

    #[test]
    fn grouped_inner_product_matches_naive(
        (region, raw) in (1usize..10).prop_flat_map(|k| (tensor(k, k), tensor(k, k))),
        g in prop_oneof![Just(SymmetryGroup::Dih4), Just(SymmetryGroup::C4)],
    ) {
        let kernel = TiKernel::symmetrized(&raw, g)?;
        let fast = ti_inner_product(&region, &kernel)?;
        let slow = naive_inner_product(&region, kernel.weights())?;
        let scale = region.values().iter().zip(kernel.weights().values()).map(|(a, b)| (a * b).abs()).sum::<f64>();
        prop_assert!((fast - slow).abs() <= 1e-15 * scale.max(f64::MIN_POSITIVE), "{fast} vs {slow}");
    }

    #[test]
    fn symmetric_convolution_commutes_with_group(
        (x, raw) in (3usize..12, 1usize..4).prop_flat_map(|(n, h)| (tensor(n, n), tensor(2 * h - 1, 2 * h - 1))),
        e in element(),
    ) {
        prop_assume!(raw.height() <= x.height());
        let kernel = TiKernel::symmetrized(&raw, SymmetryGroup::Dih4)?;
        let lhs = conv2d(&transform(&x, e)?, &kernel, 1)?;
        let rhs = transform(&conv2d(&x, &kernel, 1)?, e)?;
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn weight_container_round_trips(arrays in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..20), 0..6)) {
        prop_assert_eq!(decode_arrays(&encode_arrays(&arrays))?, arrays);
    }

    #[test]
    fn tensor_text_round_trips((h, w) in (1usize..6, 1usize..6), seed in any::<u64>()) {
        let t = Tensor2D::from_fn(h, w, |r, c| ((seed ^ (r * 31 + c) as u64) as f64).sin());
        prop_assert_eq!(Tensor2D::from_text(&t.to_text())?, t);
    }

    #[test]
    fn periodic_haar_reconstructs(x in (1usize..8).prop_flat_map(|m| tensor(2 * m, 2 * m))) {
        let pair = WaveletFilterPair::haar();
        let dec = dwt2d(&x, &pair, Extension::Periodic)?;
        prop_assert!((dec.energy() - x.values().iter().map(|v| v * v).sum::<f64>()).abs() <= 1e-12);
        prop_assert!(idwt2d(&dec, &pair)?.max_abs_diff(&x) <= 1e-12);
    }
}
