//! Seeded fixtures for the kernel benchmarks.

use cma_core::attention::{AttentionParams, DualFeatures};
use cma_core::metrics::EvalPair;
use cma_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random `h×w×c` features for both branches plus matching attention weights.
pub fn attention_input(h: usize, w: usize, c: usize, seed: u64) -> (DualFeatures, AttentionParams) {
    let mut r = rng(seed);
    let aif = Tensor::rand_normal(&[h, w, c], 1.0, &mut r);
    let dep = Tensor::rand_normal(&[h, w, c], 1.0, &mut r);
    let dual = DualFeatures::new(aif, dep, 2).expect("matching shapes");
    (dual, AttentionParams::init(c, &mut r))
}

/// `n` prediction/mask pairs of `size×size`: a disc mask and a noisy soft map.
pub fn eval_pairs(n: usize, size: usize, seed: u64) -> Vec<EvalPair> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let (cy, cx) = (r.gen_range(0.3..0.7) * size as f64, r.gen_range(0.3..0.7) * size as f64);
            let rad = r.gen_range(0.1..0.3) * size as f64;
            let mut gt = Vec::with_capacity(size * size);
            let mut pred = Vec::with_capacity(size * size);
            for y in 0..size {
                for x in 0..size {
                    let inside = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() <= rad;
                    let g: f64 = if inside { 1.0 } else { 0.0 };
                    gt.push(g);
                    pred.push((0.7 * g + r.gen_range(0.0..0.3)).min(1.0));
                }
            }
            EvalPair::new(Tensor::new(&[size, size], pred).unwrap(), Tensor::new(&[size, size], gt).unwrap()).unwrap()
        })
        .collect()
}
