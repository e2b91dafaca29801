//! Cross-modal mutual attention between an all-in-focus (AiF) branch and a
//! depth branch, and the two-module cascade built from it.
//!
//! For branch features `aif`, `dep` of shape `H×W×C`:
//!
//! * `sim = flatten(dep)ᵀ · flatten(aif)`, an `HW×HW` matrix whose entry
//!   `(p, q)` is the channel dot product of depth position `p` with AiF
//!   position `q`;
//! * `att_aif = softmax_columns(sim)`, `att_dep = softmax_columns(simᵀ)`;
//! * `fused = relu(conv1x1(concat(aif, dep)))`;
//! * `f_sim_b = reshape3d(flatten(fused) · att_b)`, so every output position
//!   is a convex combination of fused-feature positions;
//! * `gate_b = sigmoid(conv3x3(f_sim_b) + bias)` and `ma_b = gate_b ⊙ f_sim_b`.
//!
//! Every function has a tape form (`*_on`) used for training and gradient
//! checks, and a plain tensor form for inference and tests.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Paired branch features at one decoding stage.
#[derive(Clone, Debug, PartialEq)]
pub struct DualFeatures {
    pub aif: Tensor,
    pub dep: Tensor,
    pub stage: usize,
}

impl DualFeatures {
    pub fn new(aif: Tensor, dep: Tensor, stage: usize) -> Result<Self> {
        aif.dims3("DualFeatures")?;
        aif.expect_same_shape(&dep, "DualFeatures")?;
        Ok(Self { aif, dep, stage })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.aif.shape();
        (s[0], s[1], s[2])
    }
}

/// Learnable weights of one mutual attention module.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T = Tensor> {
    pub gate_kernel_aif: T,
    pub gate_bias_aif: T,
    pub gate_kernel_dep: T,
    pub gate_bias_dep: T,
    /// `1×1×2C×C` projection producing the fused features.
    pub fuse_kernel: T,
}

impl<T> AttentionParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> AttentionParams<U> {
        AttentionParams {
            gate_kernel_aif: f(&self.gate_kernel_aif),
            gate_bias_aif: f(&self.gate_bias_aif),
            gate_kernel_dep: f(&self.gate_kernel_dep),
            gate_bias_dep: f(&self.gate_bias_dep),
            fuse_kernel: f(&self.fuse_kernel),
        }
    }

    pub fn named(&self) -> [(&'static str, &T); 5] {
        [
            ("gate_kernel_aif", &self.gate_kernel_aif),
            ("gate_bias_aif", &self.gate_bias_aif),
            ("gate_kernel_dep", &self.gate_kernel_dep),
            ("gate_bias_dep", &self.gate_bias_dep),
            ("fuse_kernel", &self.fuse_kernel),
        ]
    }
}

pub const GATE_KERNEL: usize = 3;

impl AttentionParams<Tensor> {
    /// He-initialised kernels with 3×3 gates and zero gate biases.
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self::init_with_gate(channels, GATE_KERNEL, rng)
    }

    pub fn init_with_gate<R: Rng + ?Sized>(channels: usize, gate: usize, rng: &mut R) -> Self {
        Self {
            gate_kernel_aif: Tensor::he_kernel(gate, gate, channels, channels, rng),
            gate_bias_aif: Tensor::zeros(&[channels]),
            gate_kernel_dep: Tensor::he_kernel(gate, gate, channels, channels, rng),
            gate_bias_dep: Tensor::zeros(&[channels]),
            fuse_kernel: Tensor::he_kernel(1, 1, 2 * channels, channels, rng),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            gate_kernel_aif: Tensor::zeros(&[GATE_KERNEL, GATE_KERNEL, channels, channels]),
            gate_bias_aif: Tensor::zeros(&[channels]),
            gate_kernel_dep: Tensor::zeros(&[GATE_KERNEL, GATE_KERNEL, channels, channels]),
            gate_bias_dep: Tensor::zeros(&[channels]),
            fuse_kernel: Tensor::zeros(&[1, 1, 2 * channels, channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.gate_bias_aif.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for (name, k) in [("gate_kernel_aif", &self.gate_kernel_aif), ("gate_kernel_dep", &self.gate_kernel_dep)] {
            let [kh, kw, ci, co] = k.dims4(name)?;
            if ci != c || co != c || kh % 2 == 0 || kw != kh {
                return Err(Error::shape(format!("{name}: {:?} inconsistent with {c} channels", k.shape())));
            }
        }
        if self.gate_bias_dep.shape() != [c] {
            return Err(Error::shape("gate_bias_dep: length differs from gate_bias_aif"));
        }
        if self.fuse_kernel.shape() != [1, 1, 2 * c, c] {
            return Err(Error::shape(format!(
                "fuse_kernel: {:?}, expected [1, 1, {}, {c}]",
                self.fuse_kernel.shape(),
                2 * c
            )));
        }
        Ok(())
    }

    pub fn record(&self, tape: &mut Tape) -> AttentionParams<Var> {
        self.map(|t| tape.leaf(t.clone()))
    }
}

/// Results and intermediates of one mutual attention module.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput<T = Tensor> {
    pub ma_aif: T,
    pub ma_dep: T,
    pub sim: T,
    pub att_aif: T,
    pub att_dep: T,
    pub fused: T,
    pub sim_aif: T,
    pub sim_dep: T,
    pub gate_aif: T,
    pub gate_dep: T,
}

impl AttentionOutput<Var> {
    pub fn resolve(&self, tape: &Tape) -> AttentionOutput<Tensor> {
        let v = |x: Var| tape.value(x).clone();
        AttentionOutput {
            ma_aif: v(self.ma_aif),
            ma_dep: v(self.ma_dep),
            sim: v(self.sim),
            att_aif: v(self.att_aif),
            att_dep: v(self.att_dep),
            fused: v(self.fused),
            sim_aif: v(self.sim_aif),
            sim_dep: v(self.sim_dep),
            gate_aif: v(self.gate_aif),
            gate_dep: v(self.gate_dep),
        }
    }
}

fn same_shape(tape: &Tape, a: Var, b: Var, op: &str) -> Result<(usize, usize, usize)> {
    let dims = tape.value(a).dims3(op)?;
    tape.value(a).expect_same_shape(tape.value(b), op)?;
    Ok(dims)
}

/// Upsample the deeper feature to the shallower one's size, concatenate,
/// project with a 1×1 convolution, then relu.
pub fn multi_level_concat_on(tape: &mut Tape, lo: Var, hi: Var, proj: Var) -> Result<Var> {
    let (h, w, c_lo) = tape.value(lo).dims3("multi_level_concat")?;
    let (hh, wh, c_hi) = tape.value(hi).dims3("multi_level_concat")?;
    if hh > h || wh > w {
        return Err(Error::shape(format!("multi_level_concat: deeper stage {hh}×{wh} exceeds shallower {h}×{w}")));
    }
    let [kh, kw, ci, _] = tape.value(proj).dims4("multi_level_concat")?;
    if (kh, kw) != (1, 1) || ci != c_lo + c_hi {
        return Err(Error::shape(format!(
            "multi_level_concat: projection {:?} does not take {} channels",
            tape.value(proj).shape(),
            c_lo + c_hi
        )));
    }
    let hi = if (hh, wh) == (h, w) { hi } else { tape.upsample_bilinear(hi, h, w)? };
    let cat = tape.concat_channels(lo, hi)?;
    let projected = tape.conv2d(cat, proj, ConvSpec::default())?;
    Ok(tape.relu(projected))
}

/// `flatten(dep)ᵀ · flatten(aif)`.
pub fn similarity_on(tape: &mut Tape, aif: Var, dep: Var) -> Result<Var> {
    same_shape(tape, aif, dep, "similarity")?;
    let fa = tape.flatten(aif)?;
    let fd = tape.flatten(dep)?;
    let fdt = tape.transpose(fd)?;
    tape.matmul(fdt, fa)
}

/// Column softmax of `sim` (AiF side) and of `simᵀ` (depth side).
pub fn normalize_mutual_on(tape: &mut Tape, sim: Var) -> Result<(Var, Var)> {
    let (m, n) = tape.value(sim).dims2("normalize_mutual")?;
    if m != n {
        return Err(Error::shape(format!("normalize_mutual: similarity is {m}×{n}, not square")));
    }
    let att_aif = tape.softmax_columns(sim)?;
    let simt = tape.transpose(sim)?;
    let att_dep = tape.softmax_columns(simt)?;
    Ok((att_aif, att_dep))
}

pub fn fuse_on(tape: &mut Tape, aif: Var, dep: Var, fuse_kernel: Var) -> Result<Var> {
    same_shape(tape, aif, dep, "fuse")?;
    let cat = tape.concat_channels(aif, dep)?;
    let projected = tape.conv2d(cat, fuse_kernel, ConvSpec::default())?;
    Ok(tape.relu(projected))
}

fn gated_branch(
    tape: &mut Tape,
    fused_flat: Var,
    att: Var,
    kernel: Var,
    bias: Var,
    h: usize,
    w: usize,
) -> Result<(Var, Var, Var)> {
    let mixed = tape.matmul(fused_flat, att)?;
    let sim_b = tape.reshape3d(mixed, h, w)?;
    let k = tape.value(kernel).shape()[0];
    let conv = tape.conv2d(sim_b, kernel, ConvSpec::same(k))?;
    let logits = tape.add_bias(conv, bias)?;
    let gate = tape.sigmoid(logits);
    let ma = tape.hadamard(gate, sim_b)?;
    Ok((sim_b, gate, ma))
}

pub fn mutual_attention_on(
    tape: &mut Tape,
    aif: Var,
    dep: Var,
    params: &AttentionParams<Var>,
) -> Result<AttentionOutput<Var>> {
    let (h, w, c) = same_shape(tape, aif, dep, "mutual_attention")?;
    params.map(|v| tape.value(*v).clone()).validate()?;
    let pc = tape.value(params.gate_bias_aif).len();
    if pc != c {
        return Err(Error::shape(format!("mutual_attention: params for {pc} channels, features have {c}")));
    }
    let sim = similarity_on(tape, aif, dep)?;
    let (att_aif, att_dep) = normalize_mutual_on(tape, sim)?;
    let fused = fuse_on(tape, aif, dep, params.fuse_kernel)?;
    let fused_flat = tape.flatten(fused)?;
    let (sim_aif, gate_aif, ma_aif) =
        gated_branch(tape, fused_flat, att_aif, params.gate_kernel_aif, params.gate_bias_aif, h, w)?;
    let (sim_dep, gate_dep, ma_dep) =
        gated_branch(tape, fused_flat, att_dep, params.gate_kernel_dep, params.gate_bias_dep, h, w)?;
    Ok(AttentionOutput { ma_aif, ma_dep, sim, att_aif, att_dep, fused, sim_aif, sim_dep, gate_aif, gate_dep })
}

/// Weights of the two-module cascade. A `None` module is an identity
/// pass-through, which yields the single-module and no-module ablations.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeParams<T = Tensor> {
    pub first: Option<AttentionParams<T>>,
    pub second: Option<AttentionParams<T>>,
    /// `1×1×2C×C` projections merging the first module's outputs with the
    /// deeper stage's features, one per branch.
    pub merge_aif: T,
    pub merge_dep: T,
}

impl CascadeParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self {
            first: Some(AttentionParams::init(channels, rng)),
            second: Some(AttentionParams::init(channels, rng)),
            merge_aif: Tensor::he_kernel(1, 1, 2 * channels, channels, rng),
            merge_dep: Tensor::he_kernel(1, 1, 2 * channels, channels, rng),
        }
    }

    pub fn record(&self, tape: &mut Tape) -> CascadeParams<Var> {
        CascadeParams {
            first: self.first.as_ref().map(|p| p.record(tape)),
            second: self.second.as_ref().map(|p| p.record(tape)),
            merge_aif: tape.leaf(self.merge_aif.clone()),
            merge_dep: tape.leaf(self.merge_dep.clone()),
        }
    }
}

/// Branch outputs of one cascade slot, with the attention intermediates when
/// the slot's module is enabled.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutput<T = Tensor> {
    pub aif: T,
    pub dep: T,
    pub attention: Option<AttentionOutput<T>>,
}

impl StageOutput<Var> {
    pub fn resolve(&self, tape: &Tape) -> StageOutput<Tensor> {
        StageOutput {
            aif: tape.value(self.aif).clone(),
            dep: tape.value(self.dep).clone(),
            attention: self.attention.as_ref().map(|a| a.resolve(tape)),
        }
    }
}

fn attention_slot(
    tape: &mut Tape,
    aif: Var,
    dep: Var,
    params: Option<&AttentionParams<Var>>,
) -> Result<StageOutput<Var>> {
    match params {
        Some(p) => {
            let out = mutual_attention_on(tape, aif, dep, p)?;
            Ok(StageOutput { aif: out.ma_aif, dep: out.ma_dep, attention: Some(out) })
        }
        None => Ok(StageOutput { aif, dep, attention: None }),
    }
}

/// Two mutual attention modules in sequence. The first runs on the stage-2
/// concatenated features; its outputs are merged with the stage-3/4
/// concatenated features by [`multi_level_concat_on`] and fed to the second.
pub fn cma_on(
    tape: &mut Tape,
    stage2: (Var, Var),
    stage3: (Var, Var),
    params: &CascadeParams<Var>,
) -> Result<(StageOutput<Var>, StageOutput<Var>)> {
    let first = attention_slot(tape, stage2.0, stage2.1, params.first.as_ref())?;
    let merged_aif = multi_level_concat_on(tape, first.aif, stage3.0, params.merge_aif)?;
    let merged_dep = multi_level_concat_on(tape, first.dep, stage3.1, params.merge_dep)?;
    let second = attention_slot(tape, merged_aif, merged_dep, params.second.as_ref())?;
    Ok((first, second))
}

pub fn multi_level_concat(lo: &Tensor, hi: &Tensor, proj: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (lo, hi, proj) = (tape.leaf(lo.clone()), tape.leaf(hi.clone()), tape.leaf(proj.clone()));
    let out = multi_level_concat_on(&mut tape, lo, hi, proj)?;
    Ok(tape.value(out).clone())
}

pub fn similarity(dual: &DualFeatures) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (a, d) = (tape.leaf(dual.aif.clone()), tape.leaf(dual.dep.clone()));
    let sim = similarity_on(&mut tape, a, d)?;
    Ok(tape.value(sim).clone())
}

pub fn normalize_mutual(sim: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let s = tape.leaf(sim.clone());
    let (a, d) = normalize_mutual_on(&mut tape, s)?;
    Ok((tape.value(a).clone(), tape.value(d).clone()))
}

pub fn fuse(dual: &DualFeatures, fuse_kernel: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (a, d) = (tape.leaf(dual.aif.clone()), tape.leaf(dual.dep.clone()));
    let k = tape.leaf(fuse_kernel.clone());
    let out = fuse_on(&mut tape, a, d, k)?;
    Ok(tape.value(out).clone())
}

pub fn mutual_attention(dual: &DualFeatures, params: &AttentionParams) -> Result<AttentionOutput> {
    let mut tape = Tape::new();
    let (a, d) = (tape.leaf(dual.aif.clone()), tape.leaf(dual.dep.clone()));
    let p = params.record(&mut tape);
    Ok(mutual_attention_on(&mut tape, a, d, &p)?.resolve(&tape))
}

pub fn cma_forward(
    stage2: &DualFeatures,
    stage3plus4: &DualFeatures,
    params: &CascadeParams,
) -> Result<(StageOutput, StageOutput)> {
    let mut tape = Tape::new();
    let s2 = (tape.leaf(stage2.aif.clone()), tape.leaf(stage2.dep.clone()));
    let s3 = (tape.leaf(stage3plus4.aif.clone()), tape.leaf(stage3plus4.dep.clone()));
    let p = params.record(&mut tape);
    let (first, second) = cma_on(&mut tape, s2, s3, &p)?;
    Ok((first.resolve(&tape), second.resolve(&tape)))
}
