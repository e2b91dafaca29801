mod common;

use cma_core::attention::{self, AttentionParams, DualFeatures};
use cma_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(c: usize, rng: &mut ChaCha8Rng) -> AttentionParams {
    let mut p = AttentionParams::init(c, rng);
    for b in [&mut p.gate_bias_aif, &mut p.gate_bias_dep] {
        b.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    p
}

fn check_against_loops(h: usize, w: usize, c: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aif = Tensor::rand_normal(&[h, w, c], 1.0, &mut rng);
    let dep = Tensor::rand_normal(&[h, w, c], 1.0, &mut rng);
    let params = random_params(c, &mut rng);
    let dual = DualFeatures::new(aif.clone(), dep.clone(), 2).unwrap();
    let out = attention::mutual_attention(&dual, &params).unwrap();

    let k = |t: &Tensor| {
        let s = t.shape();
        common::kernel(s[0], s[1], s[2], s[3], t.data())
    };
    let naive = common::mutual_attention(
        &common::feat(h, w, c, aif.data()),
        &common::feat(h, w, c, dep.data()),
        &k(&params.fuse_kernel),
        [
            (&k(&params.gate_kernel_aif), params.gate_bias_aif.data()),
            (&k(&params.gate_kernel_dep), params.gate_bias_dep.data()),
        ],
    );
    [
        common::max_diff_feat(&naive.fused, out.fused.data()),
        common::max_diff_grid(&naive.sim, out.sim.data()),
        common::max_diff_grid(&naive.att_aif, out.att_aif.data()),
        common::max_diff_grid(&naive.att_dep, out.att_dep.data()),
        common::max_diff_feat(&naive.sim_aif, out.sim_aif.data()),
        common::max_diff_feat(&naive.sim_dep, out.sim_dep.data()),
        common::max_diff_feat(&naive.ma_aif, out.ma_aif.data()),
        common::max_diff_feat(&naive.ma_dep, out.ma_dep.data()),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

#[test]
fn two_by_two_by_two_matches_index_loops() {
    for seed in 0..10 {
        let d = check_against_loops(2, 2, 2, seed);
        assert!(d < 1e-12, "seed {seed}: {d}");
    }
}

#[test]
fn rectangular_instances_match_index_loops() {
    for seed in 0..5 {
        let d = check_against_loops(3, 4, 3, 100 + seed);
        assert!(d < 1e-12, "seed {seed}: {d}");
    }
}

#[test]
fn similarity_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let aif = Tensor::rand_normal(&[2, 2, 3], 1.0, &mut rng);
        let dep = Tensor::rand_normal(&[2, 2, 3], 1.0, &mut rng);
        let sim = attention::similarity(&DualFeatures::new(aif.clone(), dep.clone(), 2).unwrap()).unwrap();
        for p in 0..4 {
            for q in 0..4 {
                let mut s = 0.0;
                for ch in 0..3 {
                    s += dep.data()[p * 3 + ch] * aif.data()[q * 3 + ch];
                }
                assert!((sim.at(&[p, q]) - s).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn disabling_the_second_module_reproduces_a_single_module() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = 3;
    let mut cascade = cma_core::CascadeParams::init(c, &mut rng);
    cascade.second = None;
    let a2 = Tensor::rand_normal(&[4, 4, c], 1.0, &mut rng);
    let d2 = Tensor::rand_normal(&[4, 4, c], 1.0, &mut rng);
    let a3 = Tensor::rand_normal(&[2, 2, c], 1.0, &mut rng);
    let d3 = Tensor::rand_normal(&[2, 2, c], 1.0, &mut rng);
    let (o1, o2) = attention::cma_forward(
        &DualFeatures::new(a2.clone(), d2.clone(), 2).unwrap(),
        &DualFeatures::new(a3.clone(), d3.clone(), 3).unwrap(),
        &cascade,
    )
    .unwrap();
    let single =
        attention::mutual_attention(&DualFeatures::new(a2, d2, 2).unwrap(), cascade.first.as_ref().unwrap()).unwrap();
    assert_eq!(o1.aif, single.ma_aif);
    assert_eq!(o1.dep, single.ma_dep);
    assert!(o2.attention.is_none());
    let merged = attention::multi_level_concat(&single.ma_aif, &a3, &cascade.merge_aif).unwrap();
    assert_eq!(o2.aif, merged);
    assert_eq!(o2.aif.shape(), &[4, 4, c]);
}
