//! Synthetic rings-vs-crosses images. Both classes are defined up to rotation,
//! so a rotation/reflection-identical network is the right inductive bias.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor2D;
use crate::training::Example;

pub const RING: usize = 0;
pub const CROSS: usize = 1;

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub images: Vec<Tensor2D>,
    pub labels: Vec<usize>,
}

fn ring<R: Rng>(n: usize, rng: &mut R) -> Tensor2D {
    let c = (n as f64 - 1.0) / 2.0;
    let (cy, cx) = (c + rng.gen_range(-0.7..0.7), c + rng.gen_range(-0.7..0.7));
    let radius = rng.gen_range(0.22..0.36) * n as f64;
    let half = rng.gen_range(0.6..1.1);
    Tensor2D::from_fn(n, n, |r, col| {
        let d = ((r as f64 - cy).powi(2) + (col as f64 - cx).powi(2)).sqrt();
        let on = if (d - radius).abs() <= half { 1.0 } else { 0.0 };
        on + rng.gen_range(-0.1..0.1)
    })
}

fn cross<R: Rng>(n: usize, rng: &mut R) -> Tensor2D {
    let c = (n as f64 - 1.0) / 2.0;
    let (cy, cx) = (c + rng.gen_range(-0.7..0.7), c + rng.gen_range(-0.7..0.7));
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (s, co) = angle.sin_cos();
    let arm = rng.gen_range(0.3..0.42) * n as f64;
    let half = rng.gen_range(0.6..1.1);
    Tensor2D::from_fn(n, n, |r, col| {
        let (y, x) = (r as f64 - cy, col as f64 - cx);
        // Coordinates along and across the first bar.
        let u = x * co + y * s;
        let v = -x * s + y * co;
        let bar1 = v.abs() <= half && u.abs() <= arm;
        let bar2 = u.abs() <= half && v.abs() <= arm;
        let on = if bar1 || bar2 { 1.0 } else { 0.0 };
        on + rng.gen_range(-0.1..0.1)
    })
}

impl SyntheticDataset {
    /// `per_class` images of each class, interleaved ring, cross, ring, ...
    pub fn generate(n: usize, per_class: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::with_capacity(2 * per_class);
        let mut labels = Vec::with_capacity(2 * per_class);
        for _ in 0..per_class {
            images.push(ring(n, &mut rng));
            labels.push(RING);
            images.push(cross(n, &mut rng));
            labels.push(CROSS);
        }
        Self { images, labels }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// One-hot targets.
    pub fn examples(&self) -> Vec<Example> {
        self.images
            .iter()
            .zip(&self.labels)
            .map(|(img, &l)| {
                let mut target = vec![0.0; 2];
                target[l] = 1.0;
                Example { input: img.clone(), target }
            })
            .collect()
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) }).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let a = SyntheticDataset::generate(16, 5, 3);
        let b = SyntheticDataset::generate(16, 5, 3);
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels.iter().filter(|&&l| l == RING).count(), 5);
        assert!(a.images.iter().all(|t| t.shape() == (16, 16)));
    }
}
