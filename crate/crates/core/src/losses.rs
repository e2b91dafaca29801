//! Hybrid co-supervision objective: BCE + soft IoU + E-loss per head, summed
//! over the three supervision heads.

use crate::error::{Error, Result};
use crate::metrics::{soft_e_measure, ALIGN_EPS};
use crate::tensor::Tensor;

pub const BCE_EPS: f64 = 1e-7;
pub const IOU_SMOOTH: f64 = 1.0;
/// Number of supervised prediction heads.
pub const HEADS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    Bce,
    Iou,
    Em,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Bce, LossKind::Iou, LossKind::Em];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Iou => "iou",
            LossKind::Em => "em",
        }
    }
}

/// A strictly binary `H×W` mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth(Tensor);

impl GroundTruth {
    pub fn new(mask: Tensor) -> Result<Self> {
        mask.dims2("GroundTruth")?;
        if !mask.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::contract("ground truth must be strictly binary"));
        }
        Ok(Self(mask))
    }

    pub fn mask(&self) -> &Tensor {
        &self.0
    }
}

/// The three supervision maps, each `H×W` in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub maps: Vec<Tensor>,
}

fn check_pair(p: &Tensor, g: &Tensor) -> Result<()> {
    p.dims2("loss")?;
    p.expect_same_shape(g, "loss")
}

pub(crate) fn loss_value(kind: LossKind, p: &Tensor, g: &Tensor) -> Result<f64> {
    check_pair(p, g)?;
    let (p, g) = (p.data(), g.data());
    let n = p.len() as f64;
    Ok(match kind {
        LossKind::Bce => {
            p.iter()
                .zip(g)
                .map(|(&p, &g)| -(g * (p + BCE_EPS).ln() + (1.0 - g) * (1.0 - p + BCE_EPS).ln()))
                .sum::<f64>()
                / n
        }
        LossKind::Iou => {
            let (inter, union) = iou_terms(p, g);
            1.0 - (inter + IOU_SMOOTH) / (union + IOU_SMOOTH)
        }
        LossKind::Em => 1.0 - soft_e_measure(p, g),
    })
}

fn iou_terms(p: &[f64], g: &[f64]) -> (f64, f64) {
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let union: f64 = p.iter().zip(g).map(|(a, b)| a + b - a * b).sum();
    (inter, union)
}

pub(crate) fn loss_gradient(kind: LossKind, p: &Tensor, g: &Tensor) -> Result<Tensor> {
    check_pair(p, g)?;
    let shape = p.shape().to_vec();
    let (pd, gd) = (p.data(), g.data());
    let n = pd.len() as f64;
    let grad: Vec<f64> = match kind {
        LossKind::Bce => {
            pd.iter().zip(gd).map(|(&p, &g)| (-g / (p + BCE_EPS) + (1.0 - g) / (1.0 - p + BCE_EPS)) / n).collect()
        }
        LossKind::Iou => {
            let (inter, union) = iou_terms(pd, gd);
            let (i, u) = (inter + IOU_SMOOTH, union + IOU_SMOOTH);
            gd.iter().map(|&g| -(g * u - i * (1.0 - g)) / (u * u)).collect()
        }
        LossKind::Em => em_gradient(pd, gd),
    };
    Tensor::new(&shape, grad)
}

/// d(1 − E_soft)/dp. The prediction mean couples every pixel, so the
/// per-pixel derivative is centred: `dE/dp_j = u_j − mean(u)`.
fn em_gradient(p: &[f64], g: &[f64]) -> Vec<f64> {
    let n = p.len() as f64;
    let fg: f64 = g.iter().sum();
    if fg == 0.0 {
        return vec![1.0 / n; p.len()];
    }
    if fg == n {
        return vec![-1.0 / n; p.len()];
    }
    let mean_p = p.iter().sum::<f64>() / n;
    let mean_g = fg / n;
    let u: Vec<f64> = p
        .iter()
        .zip(g)
        .map(|(&pv, &gv)| {
            let (b, a) = (pv - mean_p, gv - mean_g);
            let d = a * a + b * b + ALIGN_EPS;
            let align = 2.0 * a * b / d;
            let d_align = 2.0 * a * (a * a - b * b + ALIGN_EPS) / (d * d);
            (align + 1.0) / 2.0 * d_align / n
        })
        .collect();
    let mean_u = u.iter().sum::<f64>() / n;
    u.iter().map(|v| -(v - mean_u)).collect()
}

pub fn bce_loss(p: &Tensor, g: &GroundTruth) -> Result<f64> {
    loss_value(LossKind::Bce, p, g.mask())
}

pub fn iou_loss(p: &Tensor, g: &GroundTruth) -> Result<f64> {
    loss_value(LossKind::Iou, p, g.mask())
}

pub fn em_loss(p: &Tensor, g: &GroundTruth) -> Result<f64> {
    loss_value(LossKind::Em, p, g.mask())
}

/// Σ over heads of (BCE + IoU + E-loss), unweighted.
pub fn hybrid_loss(pred: &Prediction, g: &GroundTruth) -> Result<f64> {
    if pred.maps.len() != HEADS {
        return Err(Error::contract(format!("hybrid loss needs {HEADS} maps, got {}", pred.maps.len())));
    }
    let mut total = 0.0;
    for map in &pred.maps {
        for kind in LossKind::ALL {
            total += loss_value(kind, map, g.mask())?;
        }
    }
    Ok(total)
}

/// Records the hybrid loss of `maps` on a tape and returns the scalar handle.
pub fn hybrid_loss_on(tape: &mut crate::Tape, maps: &[crate::Var], g: &GroundTruth) -> Result<crate::Var> {
    if maps.len() != HEADS {
        return Err(Error::contract(format!("hybrid loss needs {HEADS} maps, got {}", maps.len())));
    }
    let mut total: Option<crate::Var> = None;
    for &map in maps {
        for kind in LossKind::ALL {
            let term = tape.loss(map, kind, g.mask())?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
    }
    Ok(total.expect("HEADS > 0"))
}
