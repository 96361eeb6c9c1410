use ticnn_bench::{input, kernel};
use ticnn_core::scan::{conv2d, naive_inner_product, ti_inner_product};
use ticnn_core::symmetry::is_ti;
use ticnn_core::SymmetryGroup;

#[test]
fn fixtures_are_seeded() {
    assert_eq!(input(8, 1), input(8, 1));
    assert_ne!(input(8, 1), input(8, 2));
    assert_eq!(kernel(3, Some(SymmetryGroup::Dih4), 4), kernel(3, Some(SymmetryGroup::Dih4), 4));
}

#[test]
fn benchmarked_paths_agree() {
    for k in [3, 5, 9] {
        let kern = kernel(k, Some(SymmetryGroup::Dih4), k as u64);
        assert!(is_ti(kern.weights(), SymmetryGroup::Dih4, 0.0));
        let region = input(k, 100 + k as u64);
        let a = ti_inner_product(&region, &kern).unwrap();
        let b = naive_inner_product(&region, kern.weights()).unwrap();
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    let x = input(32, 7);
    let grouped = conv2d(&x, &kernel(7, Some(SymmetryGroup::Dih4), 8), 1).unwrap();
    let plain = conv2d(&x, &kernel(7, Some(SymmetryGroup::Dih4), 8).into_unconstrained(), 1).unwrap();
    assert!(grouped.max_abs_diff(&plain) <= 1e-12);
}
