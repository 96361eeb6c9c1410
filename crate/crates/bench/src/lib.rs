//! Seeded fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ticnn_core::{SymmetryGroup, Tensor2D, TiKernel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn input(n: usize, seed: u64) -> Tensor2D {
    Tensor2D::random_uniform(n, n, -1.0, 1.0, &mut rng(seed))
}

pub fn kernel(k: usize, group: Option<SymmetryGroup>, seed: u64) -> TiKernel {
    let w = Tensor2D::random_uniform(k, k, -1.0, 1.0, &mut rng(seed));
    match group {
        Some(g) => TiKernel::symmetrized(&w, g).expect("square kernel"),
        None => TiKernel::unconstrained(w),
    }
}
