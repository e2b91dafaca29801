//! Central finite-difference checks of the analytic adjoints.
//!
//! A check projects the output onto fixed random weights `w`, so the scalar
//! objective is `Σ w ⊙ f(inputs)`. Its analytic gradient comes from one
//! backward sweep seeded with `w`; the numerical one from `±step`
//! perturbations of every input element. Errors are reported norm-wise over
//! the gradient of all inputs stacked into one vector:
//! `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, AttentionParams, CascadeParams};
use crate::error::Result;
use crate::losses::{self, GroundTruth, LossKind};
use crate::ops::ConvSpec;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::toymodel;

pub const FD_STEP: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-5;
pub const COMPOSITE_TOL: f64 = 1e-4;
/// Default number of random instances per operation.
pub const DEFAULT_SEEDS: usize = 20;

pub type BuildFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One randomised problem: leaf values plus the graph built on top of them.
pub struct Instance {
    pub inputs: Vec<Tensor>,
    pub build: BuildFn,
}

impl Instance {
    pub fn new(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Self {
        Self { inputs, build: Box::new(build) }
    }

    fn eval(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = (self.build)(&mut tape, &vars)?;
        Ok(tape.value(out).clone())
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let scale = l2(analytic).max(l2(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Checker settings. `corrupt` scales every analytic gradient by 1.01 before
/// comparison; it exists to prove the checker catches a broken backward.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub corrupt: bool,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { step: FD_STEP, corrupt: false }
    }
}

impl GradCheck {
    /// Relative error over the gradient of all inputs taken as one vector.
    pub fn run(&self, inst: &Instance, rng: &mut impl Rng) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inst.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = (inst.build)(&mut tape, &vars)?;
        let weights = Tensor::rand_normal(tape.value(out).shape(), 1.0, rng);
        let grads = tape.backward_with(out, weights.clone())?;

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let mut perturbed = inst.inputs.clone();
        for (i, var) in vars.iter().enumerate() {
            analytic.extend(grads.get_or_zeros(*var, &inst.inputs[i]).into_data());
            for j in 0..inst.inputs[i].len() {
                let orig = inst.inputs[i].data()[j];
                perturbed[i].data_mut()[j] = orig + self.step;
                let plus = inst.eval(&perturbed)?.dot(&weights)?;
                perturbed[i].data_mut()[j] = orig - self.step;
                let minus = inst.eval(&perturbed)?.dot(&weights)?;
                perturbed[i].data_mut()[j] = orig;
                numeric.push((plus - minus) / (2.0 * self.step));
            }
        }
        if self.corrupt {
            analytic.iter_mut().for_each(|g| *g *= 1.01);
        }
        Ok(relative_error(&analytic, &numeric))
    }
}

/// A named family of random instances with its tolerance.
pub struct Case {
    pub name: &'static str,
    pub tolerance: f64,
    pub make: fn(&mut ChaCha8Rng) -> Instance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub op: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub seeds: usize,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_normal(shape, 1.0, rng)
}

/// Values bounded away from zero so relu kinks stay out of the `±step` window.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let mag = rng.gen_range(0.1..2.0);
        *v = if rng.gen_bool(0.5) { mag } else { -mag };
    }
    t
}

/// Random binary mask with both classes present.
pub fn random_mask(h: usize, w: usize, rng: &mut impl Rng) -> GroundTruth {
    loop {
        let t = Tensor::new(&[h, w], (0..h * w).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect())
            .expect("mask shape");
        let fg = t.sum();
        if fg > 0.0 && fg < (h * w) as f64 {
            return GroundTruth::new(t).expect("binary");
        }
    }
}

fn loss_case(kind: LossKind, rng: &mut ChaCha8Rng) -> Instance {
    let g = random_mask(5, 6, rng);
    let p = Tensor::rand_uniform(&[5, 6], 0.05, 0.95, rng);
    Instance::new(vec![p], move |t, v| t.loss(v[0], kind, g.mask()))
}

/// Every differentiable operation with its tolerance.
pub fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "matmul",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[4, 5], r), normal(&[5, 3], r)], |t, v| t.matmul(v[0], v[1])),
        },
        Case {
            name: "transpose",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[3, 5], r)], |t, v| t.transpose(v[0])),
        },
        Case {
            name: "softmax_columns",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[6, 4], r).scale(2.0)], |t, v| t.softmax_columns(v[0])),
        },
        Case {
            name: "conv2d",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                Instance::new(vec![normal(&[5, 5, 2], r), normal(&[3, 3, 2, 2], r)], |t, v| {
                    t.conv2d(v[0], v[1], ConvSpec::same(3))
                })
            },
        },
        Case {
            name: "conv2d_strided",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                Instance::new(vec![normal(&[6, 5, 2], r), normal(&[3, 3, 2, 3], r)], |t, v| {
                    t.conv2d(v[0], v[1], ConvSpec::new(2, 1))
                })
            },
        },
        Case {
            name: "conv2d_dilated",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                Instance::new(vec![normal(&[5, 5, 2], r), normal(&[3, 3, 2, 2], r)], |t, v| {
                    t.conv2d(v[0], v[1], ConvSpec::dilated(2))
                })
            },
        },
        Case {
            name: "deconv2d",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                Instance::new(vec![normal(&[3, 3, 2], r), normal(&[2, 2, 2, 3], r)], |t, v| {
                    t.deconv2d(v[0], v[1], ConvSpec::new(2, 0))
                })
            },
        },
        Case {
            name: "deconv2d_padded",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                Instance::new(vec![normal(&[4, 3, 2], r), normal(&[3, 3, 2, 2], r)], |t, v| {
                    t.deconv2d(v[0], v[1], ConvSpec::new(1, 1))
                })
            },
        },
        Case {
            name: "add_bias",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[3, 3, 4], r), normal(&[4], r)], |t, v| t.add_bias(v[0], v[1])),
        },
        Case {
            name: "add",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[3, 4], r), normal(&[3, 4], r)], |t, v| t.add(v[0], v[1])),
        },
        Case {
            name: "scale",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[3, 4], r)], |t, v| Ok(t.scale(v[0], -1.7))),
        },
        Case {
            name: "sigmoid",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[4, 4, 2], r).scale(2.0)], |t, v| Ok(t.sigmoid(v[0]))),
        },
        Case {
            name: "relu",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![off_kink(&[4, 4, 2], r)], |t, v| Ok(t.relu(v[0]))),
        },
        Case {
            name: "hadamard",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[3, 3, 2], r), normal(&[3, 3, 2], r)], |t, v| t.hadamard(v[0], v[1])),
        },
        Case {
            name: "concat_channels",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                Instance::new(vec![normal(&[3, 2, 2], r), normal(&[3, 2, 3], r)], |t, v| t.concat_channels(v[0], v[1]))
            },
        },
        Case {
            name: "upsample_bilinear",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[3, 3, 2], r)], |t, v| t.upsample_bilinear(v[0], 7, 5)),
        },
        Case {
            name: "flatten",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[2, 3, 4], r)], |t, v| t.flatten(v[0])),
        },
        Case {
            name: "reshape3d",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[4, 6], r)], |t, v| t.reshape3d(v[0], 2, 3)),
        },
        Case {
            name: "reshape",
            tolerance: PRIMITIVE_TOL,
            make: |r| Instance::new(vec![normal(&[3, 4, 1], r)], |t, v| t.reshape(v[0], &[3, 4])),
        },
        Case { name: "bce_loss", tolerance: PRIMITIVE_TOL, make: |r| loss_case(LossKind::Bce, r) },
        Case { name: "iou_loss", tolerance: PRIMITIVE_TOL, make: |r| loss_case(LossKind::Iou, r) },
        Case { name: "em_loss", tolerance: PRIMITIVE_TOL, make: |r| loss_case(LossKind::Em, r) },
        Case {
            name: "hybrid_loss",
            tolerance: COMPOSITE_TOL,
            make: |r| {
                let g = random_mask(4, 5, r);
                let maps: Vec<Tensor> = (0..3).map(|_| Tensor::rand_uniform(&[4, 5], 0.05, 0.95, r)).collect();
                Instance::new(maps, move |t, v| losses::hybrid_loss_on(t, v, &g))
            },
        },
        Case {
            name: "multi_level_concat",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                let proj = Tensor::he_kernel(1, 1, 5, 3, r);
                Instance::new(vec![normal(&[4, 4, 2], r), normal(&[2, 2, 3], r), proj], |t, v| {
                    attention::multi_level_concat_on(t, v[0], v[1], v[2])
                })
            },
        },
        Case {
            name: "similarity",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                Instance::new(vec![normal(&[3, 3, 2], r), normal(&[3, 3, 2], r)], |t, v| {
                    attention::similarity_on(t, v[0], v[1])
                })
            },
        },
        Case {
            name: "normalize_mutual",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                Instance::new(vec![normal(&[5, 5], r)], |t, v| {
                    let (a, d) = attention::normalize_mutual_on(t, v[0])?;
                    t.add(a, d)
                })
            },
        },
        Case {
            name: "fuse",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                let k = Tensor::he_kernel(1, 1, 6, 3, r);
                Instance::new(vec![normal(&[3, 3, 3], r), normal(&[3, 3, 3], r), k], |t, v| {
                    attention::fuse_on(t, v[0], v[1], v[2])
                })
            },
        },
        Case {
            name: "mutual_attention",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                let p = AttentionParams::init(3, r);
                let mut inputs = vec![normal(&[3, 3, 3], r), normal(&[3, 3, 3], r)];
                inputs.extend(p.named().into_iter().map(|(_, t)| t.clone()));
                Instance::new(inputs, |t, v| {
                    let params = AttentionParams {
                        gate_kernel_aif: v[2],
                        gate_bias_aif: v[3],
                        gate_kernel_dep: v[4],
                        gate_bias_dep: v[5],
                        fuse_kernel: v[6],
                    };
                    let out = attention::mutual_attention_on(t, v[0], v[1], &params)?;
                    let both = t.concat_channels(out.ma_aif, out.ma_dep)?;
                    Ok(both)
                })
            },
        },
        Case { name: "cma_forward", tolerance: COMPOSITE_TOL, make: cascade_instance },
        Case {
            name: "rfb_lite",
            tolerance: PRIMITIVE_TOL,
            make: |r| {
                let params = toymodel::RfbParams::init(3, r);
                let mut inputs = vec![normal(&[5, 5, 3], r)];
                inputs.extend(params.tensors());
                Instance::new(inputs, |t, v| toymodel::rfb_lite_on(t, v[0], &toymodel::RfbParams::from_slice(&v[1..])))
            },
        },
        Case { name: "encode", tolerance: COMPOSITE_TOL, make: toymodel::gradcheck::encode_instance },
        Case { name: "full_model", tolerance: COMPOSITE_TOL, make: toymodel::gradcheck::model_instance },
    ]
}

fn cascade_instance(r: &mut ChaCha8Rng) -> Instance {
    let c = 4;
    let params = CascadeParams::init(c, r);
    let mut inputs = vec![normal(&[4, 4, c], r), normal(&[4, 4, c], r), normal(&[2, 2, c], r), normal(&[2, 2, c], r)];
    let first = params.first.as_ref().expect("enabled");
    let second = params.second.as_ref().expect("enabled");
    inputs.extend(first.named().into_iter().map(|(_, t)| t.clone()));
    inputs.extend(second.named().into_iter().map(|(_, t)| t.clone()));
    inputs.push(params.merge_aif.clone());
    inputs.push(params.merge_dep.clone());
    Instance::new(inputs, |t, v| {
        let module = |o: usize| AttentionParams {
            gate_kernel_aif: v[o],
            gate_bias_aif: v[o + 1],
            gate_kernel_dep: v[o + 2],
            gate_bias_dep: v[o + 3],
            fuse_kernel: v[o + 4],
        };
        let params =
            CascadeParams { first: Some(module(4)), second: Some(module(9)), merge_aif: v[14], merge_dep: v[15] };
        let (o1, o2) = attention::cma_on(t, (v[0], v[1]), (v[2], v[3]), &params)?;
        let a = t.concat_channels(o1.aif, o1.dep)?;
        let b = t.concat_channels(o2.aif, o2.dep)?;
        t.add(a, b)
    })
}

/// Runs every case over `seeds` instances. `corrupt` names one operation
/// whose analytic gradients are deliberately skewed.
pub fn run_suite(seeds: usize, base_seed: u64, corrupt: Option<&str>) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    for case in cases() {
        let checker = GradCheck { corrupt: corrupt == Some(case.name), ..GradCheck::default() };
        let mut worst: f64 = 0.0;
        for s in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_mul(1_000_003).wrapping_add(s as u64));
            let inst = (case.make)(&mut rng);
            worst = worst.max(checker.run(&inst, &mut rng)?);
        }
        rows.push(SuiteRow { op: case.name, worst, tolerance: case.tolerance, seeds });
    }
    Ok(rows)
}
