//! Finite-difference instances for the encoder and the whole network, at a
//! size small enough to perturb every parameter.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::Instance;
use crate::losses;
use crate::tape::Var;

use super::config::{AblationVariant, ToyConfig};
use super::data::gen_synthetic_sized;
use super::model::Model;

/// Zero-initialised biases put every pre-activation behind a dead unit exactly
/// on the relu kink; random biases move them off it.
fn offset_biases(model: &mut Model, rng: &mut ChaCha8Rng) {
    for t in model.params.tensors_mut().iter_mut().filter(|t| t.rank() == 1) {
        for v in t.data_mut() {
            let mag = rng.gen_range(0.05..0.5);
            *v = if rng.gen_bool(0.5) { mag } else { -mag };
        }
    }
}

pub fn tiny_config() -> ToyConfig {
    ToyConfig { input_size: (8, 8), channels: [2, 3, 4], width: 2, ..ToyConfig::default() }
}

/// One branch (strided stages, receptive-field blocks, multi-level concat)
/// with the input image as the final differentiable input.
pub fn encode_instance(rng: &mut ChaCha8Rng) -> Instance {
    let cfg = tiny_config();
    let mut model = Model::new(&cfg, AblationVariant::Model1, rng).expect("tiny config is valid");
    offset_biases(&mut model, rng);
    let (h, w) = cfg.input_size;
    let sample = gen_synthetic_sized(1, h, w, rng.gen()).expect("non-empty").remove(0);
    let mut inputs = model.params.tensors().to_vec();
    inputs.push(sample.aif);
    let layout = model.layout;
    Instance::new(inputs, move |t, v| {
        let (params, image) = v.split_at(v.len() - 1);
        let (con2, con3) = layout.branch_features(t, params, image[0], 0)?;
        let (ch, cw, _) = t.value(con2).dims3("encode")?;
        let up = t.upsample_bilinear(con3, ch, cw)?;
        t.add(con2, up)
    })
}

/// Hybrid loss of the full dual-branch network with both attention modules.
pub fn model_instance(rng: &mut ChaCha8Rng) -> Instance {
    let cfg = tiny_config();
    let mut model = Model::new(&cfg, AblationVariant::Cma, rng).expect("tiny config is valid");
    offset_biases(&mut model, rng);
    let (h, w) = cfg.input_size;
    let sample = gen_synthetic_sized(1, h, w, rng.gen()).expect("non-empty").remove(0);
    let inputs = model.params.tensors().to_vec();
    Instance::new(inputs, move |t, v: &[Var]| {
        let f = model.forward_on(t, v, &sample)?;
        losses::hybrid_loss_on(t, &f.heads, &sample.gt)
    })
}
