mod common;

use cma_core::toymodel::{
    self, adam_step, checkpoint, gen_synthetic, gen_synthetic_sized, rfb_lite, trace_csv, train, train_synthetic,
    AblationVariant, AdamState, Model, RfbParams, ToyConfig,
};
use cma_core::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(variant: AblationVariant, config: &ToyConfig) -> Model {
    Model::new(config, variant, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

#[test]
fn parameter_counts_grow_with_modules() {
    let cfg = ToyConfig::default();
    let count = |v| model(v, &cfg).scalar_count();
    let (m1, m2, m3, m4, cma) = (
        count(AblationVariant::Model1),
        count(AblationVariant::Model2),
        count(AblationVariant::Model3),
        count(AblationVariant::Model4),
        count(AblationVariant::Cma),
    );
    assert!(cma > m2 && m2 > m1);
    assert_eq!(m3, m4);
    assert_eq!(cma - m2, 2 * (m3 - m2));
}

#[test]
fn zero_parameters_predict_one_half_everywhere() {
    let cfg = ToyConfig::default();
    let sample = &gen_synthetic(1, 4).unwrap()[0];
    for v in AblationVariant::ALL {
        let mut m = model(v, &cfg);
        m.params.tensors_mut().iter_mut().for_each(|t| t.data_mut().fill(0.0));
        for map in m.predict(sample).unwrap().maps {
            assert!(map.data().iter().all(|&x| x == 0.5), "{v}");
        }
    }
}

#[test]
fn every_head_matches_the_input_resolution() {
    for (h, w) in [(32, 32), (16, 24)] {
        let cfg = ToyConfig { input_size: (h, w), ..ToyConfig::default() };
        let sample = &gen_synthetic_sized(1, h, w, 1).unwrap()[0];
        for v in AblationVariant::ALL {
            let maps = model(v, &cfg).predict(sample).unwrap().maps;
            assert_eq!(maps.len(), 3);
            for m in maps {
                assert_eq!(m.shape(), &[h, w], "{v}");
                assert!(m.data().iter().all(|&x| x > 0.0 && x < 1.0));
            }
        }
    }
}

#[test]
fn encoder_halves_resolution_per_stage() {
    let cfg = ToyConfig::default();
    let sample = &gen_synthetic(1, 2).unwrap()[0];
    let enc = model(AblationVariant::Cma, &cfg).encode(sample).unwrap();
    let dep = enc.dep.as_ref().unwrap();
    for (i, (side, c)) in [16usize, 8, 4].iter().zip(cfg.channels).enumerate() {
        assert_eq!(enc.aif[i].shape(), &[*side, *side, c]);
        assert_eq!(dep[i].shape(), &[*side, *side, c]);
    }
    assert!(model(AblationVariant::Model1, &cfg).encode(sample).unwrap().dep.is_none());
}

#[test]
fn receptive_block_degenerate_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::rand_normal(&[6, 6, 2], 1.0, &mut rng);
    let mut params = RfbParams::init(2, &mut rng);
    for (_, k) in &mut params.branches {
        k.data_mut().fill(0.0);
    }
    params.bias = Tensor::new(&[2], vec![0.3, -0.2]).unwrap();
    let y = rfb_lite(&x, &params).unwrap();
    for px in y.data().chunks(2) {
        assert_eq!(px, &[0.3, 0.0]);
    }

    // Only the dilation-1 branch set to the identity: relu(x).
    let mut ident = Tensor::zeros(&[3, 3, 2, 2]);
    ident.set(&[1, 1, 0, 0], 1.0);
    ident.set(&[1, 1, 1, 1], 1.0);
    params.branches[0].1 = ident;
    params.bias = Tensor::zeros(&[2]);
    let y = rfb_lite(&x, &params).unwrap();
    assert_eq!(y, x.map(|v| v.max(0.0)));
}

#[test]
fn default_model_gradient_spot_check() {
    let cfg = ToyConfig::default();
    let sample = &gen_synthetic(1, 9).unwrap()[0];
    let m = model(AblationVariant::Cma, &cfg);
    let (_, grads) = m.loss_and_grads(sample).unwrap();
    let names = ["aif.stage2.w", "dep.rfb3.d2", "ma1.fuse_kernel", "ma2.gate_kernel_dep", "final.out.w"];
    let h = 1e-5;
    for name in names {
        let idx = m.params.names().iter().position(|n| n == name).unwrap_or_else(|| panic!("{name}"));
        let g = &grads[idx];
        let j = (0..g.len()).max_by(|&a, &b| g.data()[a].abs().total_cmp(&g.data()[b].abs())).unwrap();
        let bump = |d: f64| {
            let mut mm = m.clone();
            mm.params.tensors_mut()[idx].data_mut()[j] += d;
            mm.loss(sample).unwrap()
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        let a = g.data()[j];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
        assert!(rel < 1e-3, "{name}[{j}]: analytic {a} vs numeric {fd}");
    }
}

#[test]
fn adam_matches_textbook_on_a_quadratic() {
    let grad = |x: f64| 2.0 * (x - 3.0);
    let want = common::adam_scalar(0.5, grad, 0.1, 10);
    let mut p = vec![Tensor::scalar(0.5)];
    let mut state = AdamState::new(&p);
    for t in 1..=10 {
        let g = vec![Tensor::scalar(grad(p[0].item()))];
        adam_step(&mut p, &g, &mut state, t, 0.1).unwrap();
        assert!((p[0].item() - want[t - 1]).abs() < 1e-15, "step {t}");
    }
}

#[test]
fn default_optimiser_settings() {
    let cfg = ToyConfig::default();
    assert_eq!((cfg.lr, cfg.lr_decay, cfg.decay_every, cfg.batch), (1e-4, 0.1, 50, 16));
    assert_eq!((toymodel::BETA1, toymodel::BETA2, toymodel::ADAM_EPS), (0.9, 0.999, 1e-8));
    assert_eq!(cfg.lr_at(0), 1e-4);
    assert_eq!(cfg.lr_at(49), 1e-4);
    assert!((cfg.lr_at(50) - 1e-5).abs() < 1e-20);
    assert!((cfg.lr_at(100) - 1e-6).abs() < 1e-21);
}

fn short(seed: u64) -> ToyConfig {
    ToyConfig { epochs: 2, samples: 10, batch: 4, seed, ..ToyConfig::default() }
}

#[test]
fn training_is_bitwise_reproducible() {
    let a = train_synthetic(&short(7), AblationVariant::Cma).unwrap();
    let b = train_synthetic(&short(7), AblationVariant::Cma).unwrap();
    assert_eq!(a.step_losses, b.step_losses);
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(trace_csv(&a.trace).as_bytes(), trace_csv(&b.trace).as_bytes());
    let c = train_synthetic(&short(8), AblationVariant::Cma).unwrap();
    assert_ne!(a.step_losses, c.step_losses);
}

#[test]
fn training_without_data_is_a_contract_error() {
    assert!(matches!(train(&short(0), AblationVariant::Cma, &[]), Err(Error::Contract(_))));
}

fn single_sample(cfg: ToyConfig, steps: usize) -> Vec<f64> {
    let cfg = ToyConfig { epochs: steps, samples: 1, ..cfg };
    train_synthetic(&cfg, AblationVariant::Cma).unwrap().step_losses
}

#[test]
fn loss_falls_monotonically_over_the_first_fifty_steps() {
    let losses = single_sample(ToyConfig::default(), 50);
    for (i, w) in losses.windows(2).enumerate() {
        assert!(w[1] < w[0], "step {}: {} -> {}", i + 1, w[0], w[1]);
    }
}

#[test]
fn single_sample_overfits_within_three_hundred_steps() {
    let cfg = ToyConfig { decay_every: 1000, ..ToyConfig::desk() };
    let losses = single_sample(cfg, 300);
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < 0.1 * losses[0], "initial {} best {}", losses[0], best);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = ToyConfig { input_size: (16, 16), ..ToyConfig::default() };
    for v in AblationVariant::ALL {
        let m = model(v, &cfg);
        checkpoint::save(&m, &path).unwrap();
        let back = checkpoint::load(&path).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.variant(), v);
        assert_eq!(back.config, cfg);
    }
    assert!(matches!(checkpoint::load(&dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn synthetic_scenes_are_valid_and_reproducible() {
    let a = gen_synthetic(12, 5).unwrap();
    assert_eq!(a, gen_synthetic(12, 5).unwrap());
    assert_ne!(a, gen_synthetic(12, 6).unwrap());
    for s in &a {
        assert_eq!(s.aif.shape(), &[32, 32, 3]);
        assert_eq!(s.depth.shape(), &[32, 32, 1]);
        let fg = s.gt.mask().sum();
        assert!((1.0..1024.0).contains(&fg));
        assert!(s.aif.min_value() >= 0.0 && s.aif.max_value() <= 1.0);
        assert!(s.depth.min_value() >= 0.0 && s.depth.max_value() <= 1.0);
    }
    assert!(gen_synthetic(0, 1).is_err());
    assert!(gen_synthetic_sized(3, 2, 8, 1).is_err());
}
