//! Salient-object-detection evaluation: MAE, F-measure, E-measure,
//! S-measure, adaptive thresholds, and 256-step threshold curves.

mod measures;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) use measures::soft_e_measure;
pub use measures::{
    adaptive_threshold, e_measure, f_from_precision_recall, f_measure, mae, s_measure, Binarize, Confusion, ALIGN_EPS,
    BETA_SQ, S_ALPHA,
};

/// Number of integer thresholds τ ∈ [0, 255].
pub const THRESHOLDS: usize = 256;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// A prediction in [0,1] and a binary mask of the same `H×W` size.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pred: Tensor,
    gt: Tensor,
}

impl EvalPair {
    pub fn new(pred: Tensor, gt: Tensor) -> Result<Self> {
        pred.dims2("EvalPair")?;
        pred.expect_same_shape(&gt, "EvalPair")?;
        if pred.is_empty() {
            return Err(Error::contract("empty saliency map"));
        }
        if !pred.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::contract("prediction values must lie in [0, 1]"));
        }
        if !gt.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::contract("ground truth must be strictly binary"));
        }
        Ok(Self { pred, gt })
    }

    pub fn pred(&self) -> &Tensor {
        &self.pred
    }

    pub fn gt(&self) -> &Tensor {
        &self.gt
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.pred.shape()[0], self.pred.shape()[1])
    }

    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }
}

/// Everything computed for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub f_beta: f64,
    pub s_alpha: f64,
    pub e_phi: f64,
    pub mae: f64,
    pub f_curve: Vec<f64>,
    pub e_curve: Vec<f64>,
}

/// Dataset-level means of [`ImageMetrics`].
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub f_beta: f64,
    pub s_alpha: f64,
    pub e_phi: f64,
    pub mae: f64,
    pub f_curve: Vec<f64>,
    pub e_curve: Vec<f64>,
}

/// F and E values at every integer threshold, from one histogram pass.
pub fn threshold_curves(pair: &EvalPair) -> (Vec<f64>, Vec<f64>) {
    let mut fg_hist = [0usize; THRESHOLDS];
    let mut bg_hist = [0usize; THRESHOLDS];
    for (&p, &g) in pair.pred().data().iter().zip(pair.gt().data()) {
        // `P·255 ≥ τ` holds for integer τ exactly when τ ≤ floor(P·255).
        let bin = ((p * 255.0).floor() as usize).min(THRESHOLDS - 1);
        if g > 0.5 {
            fg_hist[bin] += 1;
        } else {
            bg_hist[bin] += 1;
        }
    }
    let fg_total: usize = fg_hist.iter().sum();
    let bg_total: usize = bg_hist.iter().sum();
    let mut f_curve = vec![0.0; THRESHOLDS];
    let mut e_curve = vec![0.0; THRESHOLDS];
    let (mut tp, mut fp) = (0, 0);
    for tau in (0..THRESHOLDS).rev() {
        tp += fg_hist[tau];
        fp += bg_hist[tau];
        let c = Confusion { tp, fp, fn_: fg_total - tp, tn: bg_total - fp };
        f_curve[tau] = c.f_beta();
        e_curve[tau] = c.e_phi();
    }
    (f_curve, e_curve)
}

pub fn image_metrics(pair: &EvalPair) -> ImageMetrics {
    let tau = adaptive_threshold(pair.pred());
    let adaptive = Confusion::at(pair, tau);
    let (f_curve, e_curve) = threshold_curves(pair);
    ImageMetrics {
        f_beta: adaptive.f_beta(),
        s_alpha: s_measure(pair),
        e_phi: adaptive.e_phi(),
        mae: mae(pair),
        f_curve,
        e_curve,
    }
}

/// Mean of per-image metrics, reduced in slice order.
pub fn aggregate(per_image: &[ImageMetrics]) -> Result<MetricReport> {
    if per_image.is_empty() {
        return Err(Error::contract("cannot aggregate an empty evaluation set"));
    }
    let n = per_image.len() as f64;
    let mean = |f: &dyn Fn(&ImageMetrics) -> f64| {
        let mut acc = CompensatedSum::default();
        per_image.iter().for_each(|m| acc.add(f(m)));
        acc.total() / n
    };
    let curve = |pick: &dyn Fn(&ImageMetrics) -> &[f64]| {
        (0..THRESHOLDS).map(|t| mean(&|m: &ImageMetrics| pick(m)[t])).collect::<Vec<_>>()
    };
    Ok(MetricReport {
        f_beta: mean(&|m| m.f_beta),
        s_alpha: mean(&|m| m.s_alpha),
        e_phi: mean(&|m| m.e_phi),
        mae: mean(&|m| m.mae),
        f_curve: curve(&|m| &m.f_curve),
        e_curve: curve(&|m| &m.e_curve),
    })
}

/// Per-image metrics (computed in parallel) averaged over the dataset.
pub fn evaluate(pairs: &[EvalPair]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::contract("evaluate needs at least one pair"));
    }
    let per_image: Vec<ImageMetrics> = pairs.par_iter().map(image_metrics).collect();
    aggregate(&per_image)
}
