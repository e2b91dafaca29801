//! The desk-scale network: a three-stage strided encoder per branch, a
//! dilated receptive-field block per stage, multi-level concatenation, the
//! attention cascade, and three sigmoid supervision heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, AttentionParams, CascadeParams, StageOutput};
use crate::error::{Error, Result};
use crate::losses::{self, Prediction};
use crate::ops::ConvSpec;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::config::{AblationVariant, ToyConfig};
use super::data::SyntheticSample;
use super::params::{ParamId, ParamStore};

const INPUT_CHANNELS: usize = 3;
pub const RFB_DILATIONS: [usize; 3] = [1, 2, 3];

/// Parallel dilated 3×3 convolutions, summed, biased and rectified.
#[derive(Clone, Debug, PartialEq)]
pub struct RfbParams<T = Tensor> {
    pub branches: Vec<(usize, T)>,
    pub bias: T,
}

impl RfbParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self {
            branches: RFB_DILATIONS.iter().map(|&d| (d, Tensor::he_kernel(3, 3, channels, channels, rng))).collect(),
            bias: Tensor::zeros(&[channels]),
        }
    }

    /// Kernels in dilation order followed by the bias.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut v: Vec<Tensor> = self.branches.iter().map(|(_, k)| k.clone()).collect();
        v.push(self.bias.clone());
        v
    }
}

impl RfbParams<Var> {
    /// Inverse of [`RfbParams::tensors`] for the default dilations.
    pub fn from_slice(vars: &[Var]) -> Self {
        Self {
            branches: RFB_DILATIONS.iter().zip(vars).map(|(&d, &v)| (d, v)).collect(),
            bias: vars[RFB_DILATIONS.len()],
        }
    }
}

pub fn rfb_lite_on(tape: &mut Tape, x: Var, params: &RfbParams<Var>) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &(dilation, kernel) in &params.branches {
        let y = tape.conv2d(x, kernel, ConvSpec::dilated(dilation))?;
        total = Some(match total {
            Some(acc) => tape.add(acc, y)?,
            None => y,
        });
    }
    let total = total.ok_or_else(|| Error::shape("rfb_lite: no branches"))?;
    let biased = tape.add_bias(total, params.bias)?;
    Ok(tape.relu(biased))
}

pub fn rfb_lite(x: &Tensor, params: &RfbParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let p = RfbParams {
        branches: params.branches.iter().map(|(d, k)| (*d, tape.leaf(k.clone()))).collect(),
        bias: tape.leaf(params.bias.clone()),
    };
    let out = rfb_lite_on(&mut tape, xv, &p)?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    spec: ConvSpec,
}

#[derive(Clone, Debug, PartialEq)]
struct BranchLayout {
    stages: [ConvLayer; 3],
    rfb: [RfbParams<ParamId>; 3],
    /// 1×1 projections for (stage2 ⊕ stage3) and (stage3 ⊕ stage4).
    concat: [ParamId; 2],
    merge: ParamId,
}

/// Where every parameter of a variant lives in its [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    variant: AblationVariant,
    branches: Vec<BranchLayout>,
    first: Option<AttentionParams<ParamId>>,
    second: Option<AttentionParams<ParamId>>,
    head1: ConvLayer,
    head2: ConvLayer,
    fuse_final: ConvLayer,
    deconv: ConvLayer,
    out_conv: ConvLayer,
}

struct Builder<'a, R: Rng + ?Sized> {
    store: ParamStore,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn kernel(&mut self, name: String, k: usize, cin: usize, cout: usize) -> ParamId {
        let t = Tensor::he_kernel(k, k, cin, cout, self.rng);
        self.store.add(name, t)
    }

    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize, spec: ConvSpec) -> ConvLayer {
        let w = self.kernel(format!("{name}.w"), k, cin, cout);
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        ConvLayer { w, b, spec }
    }

    fn attention(&mut self, name: &str, c: usize) -> AttentionParams<ParamId> {
        let init = AttentionParams::init(c, self.rng);
        let mut ids = Vec::new();
        for (field, t) in init.named() {
            ids.push(self.store.add(format!("{name}.{field}"), t.clone()));
        }
        AttentionParams {
            gate_kernel_aif: ids[0],
            gate_bias_aif: ids[1],
            gate_kernel_dep: ids[2],
            gate_bias_dep: ids[3],
            fuse_kernel: ids[4],
        }
    }

    fn branch(&mut self, name: &str, cfg: &ToyConfig) -> BranchLayout {
        let [c2, c3, c4] = cfg.channels;
        let c = cfg.width;
        let strided = ConvSpec::new(2, 1);
        let stages = [
            self.conv(&format!("{name}.stage2"), 3, INPUT_CHANNELS, c2, strided),
            self.conv(&format!("{name}.stage3"), 3, c2, c3, strided),
            self.conv(&format!("{name}.stage4"), 3, c3, c4, strided),
        ];
        let rfb = [(2, c2), (3, c3), (4, c4)].map(|(stage, ch)| {
            let init = RfbParams::init(ch, self.rng);
            let branches = init
                .branches
                .iter()
                .map(|(d, k)| (*d, self.store.add(format!("{name}.rfb{stage}.d{d}"), k.clone())))
                .collect();
            let bias = self.store.add(format!("{name}.rfb{stage}.b"), init.bias);
            RfbParams { branches, bias }
        });
        let concat = [
            self.kernel(format!("{name}.concat2"), 1, c2 + c3, c),
            self.kernel(format!("{name}.concat3"), 1, c3 + c4, c),
        ];
        let merge = self.kernel(format!("{name}.merge"), 1, 2 * c, c);
        BranchLayout { stages, rfb, concat, merge }
    }
}

/// A model instance: layout plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ToyConfig,
    pub layout: Layout,
    pub params: ParamStore,
}

/// Tape handles for one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// After the first slot, after the second slot, after the final deconvolution.
    pub heads: [Var; 3],
    pub first: Option<StageOutput<Var>>,
    pub second: Option<StageOutput<Var>>,
}

/// Raw encoder features per branch (stages 2, 3, 4).
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub aif: Vec<Tensor>,
    pub dep: Option<Vec<Tensor>>,
}

impl Encoded {
    pub fn dual(&self, stage_index: usize) -> Option<attention::DualFeatures> {
        let dep = self.dep.as_ref()?;
        attention::DualFeatures::new(self.aif[stage_index].clone(), dep[stage_index].clone(), stage_index + 2).ok()
    }
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: &ToyConfig, variant: AblationVariant, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut b = Builder { store: ParamStore::default(), rng };
        let c = config.width;
        let mut branches = vec![b.branch("aif", config)];
        if variant.uses_depth() {
            branches.push(b.branch("dep", config));
        }
        let first = variant.first_attention().then(|| b.attention("ma1", c));
        let second = variant.second_attention().then(|| b.attention("ma2", c));
        let head_in = c * branches.len();
        let head1 = b.conv("head1", 1, head_in, 1, ConvSpec::default());
        let head2 = b.conv("head2", 1, head_in, 1, ConvSpec::default());
        let fuse_final = b.conv("final.fuse", 1, head_in, c, ConvSpec::default());
        let deconv = b.conv("final.deconv", 2, c, c, ConvSpec::new(2, 0));
        let out_conv = b.conv("final.out", 3, c, 1, ConvSpec::same(3));
        let layout = Layout { variant, branches, first, second, head1, head2, fuse_final, deconv, out_conv };
        Ok(Self { config: config.clone(), layout, params: b.store })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_params(config: &ToyConfig, variant: AblationVariant, params: ParamStore) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(config, variant, &mut rng)?;
        if model.params.names() != params.names() {
            return Err(Error::Format(format!("checkpoint parameters do not match variant {variant}")));
        }
        for ((name, a), b) in model.params.iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Format(format!("parameter {name}: shape {:?} != {:?}", b.shape(), a.shape())));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn variant(&self) -> AblationVariant {
        self.layout.variant
    }

    pub fn scalar_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn encode(&self, sample: &SyntheticSample) -> Result<Encoded> {
        let mut tape = Tape::new();
        let p = self.params.record(&mut tape);
        let aif = tape.leaf(sample.aif.clone());
        let stages = self.layout.encode_branch_on(&mut tape, &p, aif, 0)?;
        let grab = |t: &Tape, v: [Var; 3]| v.iter().map(|&x| t.value(x).clone()).collect::<Vec<_>>();
        let aif_feats = grab(&tape, stages);
        let dep = if self.layout.branches.len() > 1 {
            let d = tape.leaf(sample.depth_rgb());
            let s = self.layout.encode_branch_on(&mut tape, &p, d, 1)?;
            Some(grab(&tape, s))
        } else {
            None
        };
        Ok(Encoded { aif: aif_feats, dep })
    }

    /// Records the full forward pass for one sample.
    pub fn forward_on(&self, tape: &mut Tape, p: &[Var], sample: &SyntheticSample) -> Result<ForwardVars> {
        let aif = tape.leaf(sample.aif.clone());
        let dep = self.layout.variant.uses_depth().then(|| tape.leaf(sample.depth_rgb()));
        let (h, w, _) = sample.aif.dims3("forward")?;
        self.layout.forward_on(tape, p, aif, dep, (h, w))
    }

    pub fn predict(&self, sample: &SyntheticSample) -> Result<Prediction> {
        let mut tape = Tape::new();
        let p = self.params.record(&mut tape);
        let f = self.forward_on(&mut tape, &p, sample)?;
        Ok(Prediction { maps: f.heads.iter().map(|&v| tape.value(v).clone()).collect() })
    }

    /// Hybrid loss and its gradient with respect to every parameter.
    pub fn loss_and_grads(&self, sample: &SyntheticSample) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.params.record(&mut tape);
        let f = self.forward_on(&mut tape, &p, sample)?;
        let loss = losses::hybrid_loss_on(&mut tape, &f.heads, &sample.gt)?;
        let grads = tape.backward(loss)?;
        let g = p.iter().zip(self.params.tensors()).map(|(&v, t)| grads.get_or_zeros(v, t)).collect();
        Ok((tape.value(loss).item(), g))
    }

    pub fn loss(&self, sample: &SyntheticSample) -> Result<f64> {
        losses::hybrid_loss(&self.predict(sample)?, &sample.gt)
    }
}

fn conv_on(tape: &mut Tape, p: &[Var], layer: &ConvLayer, x: Var) -> Result<Var> {
    let y = tape.conv2d(x, p[layer.w.0], layer.spec)?;
    tape.add_bias(y, p[layer.b.0])
}

fn deconv_on(tape: &mut Tape, p: &[Var], layer: &ConvLayer, x: Var) -> Result<Var> {
    let y = tape.deconv2d(x, p[layer.w.0], layer.spec)?;
    tape.add_bias(y, p[layer.b.0])
}

impl Layout {
    fn resolve_attention(p: &[Var], ids: &AttentionParams<ParamId>) -> AttentionParams<Var> {
        ids.map(|id| p[id.0])
    }

    pub(crate) fn encode_branch_on(&self, tape: &mut Tape, p: &[Var], input: Var, branch: usize) -> Result<[Var; 3]> {
        let b = &self.branches[branch];
        let mut x = input;
        let mut out = [input; 3];
        for (slot, layer) in out.iter_mut().zip(&b.stages) {
            let y = conv_on(tape, p, layer, x)?;
            x = tape.relu(y);
            *slot = x;
        }
        Ok(out)
    }

    /// Encoder, receptive-field blocks and multi-level concatenation for one
    /// branch; returns the stage-2 and stage-3 concatenated features.
    pub(crate) fn branch_features(&self, tape: &mut Tape, p: &[Var], input: Var, branch: usize) -> Result<(Var, Var)> {
        let stages = self.encode_branch_on(tape, p, input, branch)?;
        let b = &self.branches[branch];
        let mut refined = [input; 3];
        for ((slot, &f), rfb) in refined.iter_mut().zip(&stages).zip(&b.rfb) {
            let params =
                RfbParams { branches: rfb.branches.iter().map(|(d, id)| (*d, p[id.0])).collect(), bias: p[rfb.bias.0] };
            *slot = rfb_lite_on(tape, f, &params)?;
        }
        let con2 = attention::multi_level_concat_on(tape, refined[0], refined[1], p[b.concat[0].0])?;
        let con3 = attention::multi_level_concat_on(tape, refined[1], refined[2], p[b.concat[1].0])?;
        Ok((con2, con3))
    }

    fn head_on(
        &self,
        tape: &mut Tape,
        p: &[Var],
        layer: &ConvLayer,
        a: Var,
        d: Option<Var>,
        out: (usize, usize),
    ) -> Result<Var> {
        let x = match d {
            Some(d) => tape.concat_channels(a, d)?,
            None => a,
        };
        let logits = conv_on(tape, p, layer, x)?;
        let up = tape.upsample_bilinear(logits, out.0, out.1)?;
        let prob = tape.sigmoid(up);
        tape.reshape(prob, &[out.0, out.1])
    }

    pub fn forward_on(
        &self,
        tape: &mut Tape,
        p: &[Var],
        aif: Var,
        dep: Option<Var>,
        out: (usize, usize),
    ) -> Result<ForwardVars> {
        if dep.is_some() != self.variant.uses_depth() {
            return Err(Error::contract(format!("variant {} depth input mismatch", self.variant)));
        }
        let (a2, a3) = self.branch_features(tape, p, aif, 0)?;
        let (first, second, slot1, slot2) = match dep {
            Some(dep) => {
                let (d2, d3) = self.branch_features(tape, p, dep, 1)?;
                let cascade = CascadeParams {
                    first: self.first.as_ref().map(|ids| Self::resolve_attention(p, ids)),
                    second: self.second.as_ref().map(|ids| Self::resolve_attention(p, ids)),
                    merge_aif: p[self.branches[0].merge.0],
                    merge_dep: p[self.branches[1].merge.0],
                };
                let (o1, o2) = attention::cma_on(tape, (a2, d2), (a3, d3), &cascade)?;
                let s1 = (o1.aif, Some(o1.dep));
                let s2 = (o2.aif, Some(o2.dep));
                (Some(o1), Some(o2), s1, s2)
            }
            None => {
                let merged = attention::multi_level_concat_on(tape, a2, a3, p[self.branches[0].merge.0])?;
                (None, None, (a2, None), (merged, None))
            }
        };
        let head1 = self.head_on(tape, p, &self.head1, slot1.0, slot1.1, out)?;
        let head2 = self.head_on(tape, p, &self.head2, slot2.0, slot2.1, out)?;

        let x = match slot2.1 {
            Some(d) => tape.concat_channels(slot2.0, d)?,
            None => slot2.0,
        };
        let z = conv_on(tape, p, &self.fuse_final, x)?;
        let z = tape.relu(z);
        let z = deconv_on(tape, p, &self.deconv, z)?;
        let z = tape.relu(z);
        let logits = conv_on(tape, p, &self.out_conv, z)?;
        let head3 = self.head_on_logits(tape, logits, out)?;
        Ok(ForwardVars { heads: [head1, head2, head3], first, second })
    }

    fn head_on_logits(&self, tape: &mut Tape, logits: Var, out: (usize, usize)) -> Result<Var> {
        let up = tape.upsample_bilinear(logits, out.0, out.1)?;
        let prob = tape.sigmoid(up);
        tape.reshape(prob, &[out.0, out.1])
    }
}
