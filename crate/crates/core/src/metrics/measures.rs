//! Per-image saliency measures.

use super::{CompensatedSum, EvalPair};

/// β² weighting precision over recall in the F-measure.
pub const BETA_SQ: f64 = 0.3;
/// Object/region balance inside the S-measure.
pub const S_ALPHA: f64 = 0.5;
/// Stabiliser inside the enhanced-alignment denominator.
pub const ALIGN_EPS: f64 = f64::EPSILON;
/// Stabiliser inside the S-measure ratios.
const S_EPS: f64 = f64::EPSILON;

/// How a saliency map is turned into the prediction side of the E-measure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Binarize {
    /// Foreground where `P·255 ≥ τ`.
    Threshold(f64),
    /// Use the continuous map directly (differentiable E-loss).
    Soft,
}

#[inline]
pub(crate) fn above(p: f64, tau: f64) -> bool {
    p * 255.0 >= tau
}

pub fn mae(pair: &EvalPair) -> f64 {
    let mut acc = CompensatedSum::default();
    for (p, g) in pair.pred().data().iter().zip(pair.gt().data()) {
        acc.add((g - p).abs());
    }
    acc.total() / pair.len() as f64
}

/// Confusion counts of a thresholded prediction against the mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn at(pair: &EvalPair, tau: f64) -> Self {
        let mut c = Confusion::default();
        for (&p, &g) in pair.pred().data().iter().zip(pair.gt().data()) {
            match (above(p, tau), g > 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        let predicted = self.tp + self.fp;
        if predicted == 0 {
            0.0
        } else {
            self.tp as f64 / predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let actual = self.tp + self.fn_;
        if actual == 0 {
            0.0
        } else {
            self.tp as f64 / actual as f64
        }
    }

    pub fn f_beta(&self) -> f64 {
        f_from_precision_recall(self.precision(), self.recall())
    }

    /// E-measure of the binarised prediction these counts describe.
    pub fn e_phi(&self) -> f64 {
        let n = self.total() as f64;
        let fg = self.tp + self.fn_;
        if fg == 0 {
            return self.tn as f64 / n;
        }
        if fg == self.total() {
            return self.tp as f64 / n;
        }
        let mean_p = (self.tp + self.fp) as f64 / n;
        let mean_g = fg as f64 / n;
        let cells = [(1.0, 1.0, self.tp), (1.0, 0.0, self.fp), (0.0, 1.0, self.fn_), (0.0, 0.0, self.tn)];
        let mut acc = CompensatedSum::default();
        for (p, g, count) in cells {
            acc.add(count as f64 * enhanced_alignment(p - mean_p, g - mean_g));
        }
        acc.total() / n
    }
}

pub fn f_from_precision_recall(precision: f64, recall: f64) -> f64 {
    let denom = BETA_SQ * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + BETA_SQ) * precision * recall / denom
    }
}

pub fn f_measure(pair: &EvalPair, tau: f64) -> f64 {
    Confusion::at(pair, tau).f_beta()
}

/// Twice the mean saliency on the 0..255 scale, clamped to 255.
pub fn adaptive_threshold(pred: &crate::Tensor) -> f64 {
    (2.0 * pred.mean() * 255.0).min(255.0)
}

/// φ for one pixel given demeaned prediction and mask values.
#[inline]
pub(crate) fn enhanced_alignment(xi_p: f64, xi_g: f64) -> f64 {
    let align = 2.0 * xi_g * xi_p / (xi_g * xi_g + xi_p * xi_p + ALIGN_EPS);
    (align + 1.0) * (align + 1.0) / 4.0
}

pub fn e_measure(pair: &EvalPair, mode: Binarize) -> f64 {
    match mode {
        Binarize::Threshold(tau) => Confusion::at(pair, tau).e_phi(),
        Binarize::Soft => soft_e_measure(pair.pred().data(), pair.gt().data()),
    }
}

pub(crate) fn soft_e_measure(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let fg: f64 = g.iter().sum();
    let mut acc = CompensatedSum::default();
    if fg == 0.0 {
        p.iter().for_each(|&v| acc.add(1.0 - v));
    } else if fg == n {
        p.iter().for_each(|&v| acc.add(v));
    } else {
        let mean_p = p.iter().sum::<f64>() / n;
        let mean_g = fg / n;
        for (&pv, &gv) in p.iter().zip(g) {
            acc.add(enhanced_alignment(pv - mean_p, gv - mean_g));
        }
    }
    acc.total() / n
}

/// Structure measure: α·S_object + (1−α)·S_region, clamped at 0.
pub fn s_measure(pair: &EvalPair) -> f64 {
    let p = pair.pred().data();
    let g = pair.gt().data();
    let fg_ratio = g.iter().sum::<f64>() / g.len() as f64;
    if fg_ratio == 0.0 {
        return 1.0 - pair.pred().mean();
    }
    if fg_ratio == 1.0 {
        return pair.pred().mean();
    }
    let (h, w) = pair.dims();
    let score = S_ALPHA * object_score(p, g, fg_ratio) + (1.0 - S_ALPHA) * region_score(p, g, h, w);
    score.max(0.0)
}

fn object_score(p: &[f64], g: &[f64], fg_ratio: f64) -> f64 {
    let fg: Vec<f64> = p.iter().zip(g).filter(|(_, &gv)| gv > 0.5).map(|(&pv, _)| pv).collect();
    let bg: Vec<f64> = p.iter().zip(g).filter(|(_, &gv)| gv <= 0.5).map(|(&pv, _)| 1.0 - pv).collect();
    fg_ratio * object_similarity(&fg) + (1.0 - fg_ratio) * object_similarity(&bg)
}

fn object_similarity(values: &[f64]) -> f64 {
    let (mean, var) = mean_and_sample_var(values);
    2.0 * mean / (mean * mean + 1.0 + var.sqrt() + S_EPS)
}

fn mean_and_sample_var(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1) as f64)
}

/// Split point (columns, rows) at the rounded foreground centroid, 1-based.
fn centroid_split(g: &[f64], h: usize, w: usize) -> (usize, usize) {
    let (mut rows, mut cols, mut count) = (0.0, 0.0, 0usize);
    for (i, &gv) in g.iter().enumerate() {
        if gv > 0.5 {
            rows += (i / w) as f64;
            cols += (i % w) as f64;
            count += 1;
        }
    }
    if count == 0 {
        return ((w as f64 / 2.0).round_ties_even() as usize, (h as f64 / 2.0).round_ties_even() as usize);
    }
    let y = (rows / count as f64).round_ties_even() as usize + 1;
    let x = (cols / count as f64).round_ties_even() as usize + 1;
    (x, y)
}

fn region_score(p: &[f64], g: &[f64], h: usize, w: usize) -> f64 {
    let (x, y) = centroid_split(g, h, w);
    let area = (h * w) as f64;
    let w1 = (x * y) as f64 / area;
    let w2 = (y * (w - x)) as f64 / area;
    let w3 = ((h - y) * x) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let quadrants = [(0..y, 0..x, w1), (0..y, x..w, w2), (y..h, 0..x, w3), (y..h, x..w, w4)];
    let mut total = 0.0;
    for (rows, cols, weight) in quadrants {
        let mut qp = Vec::with_capacity(rows.len() * cols.len());
        let mut qg = Vec::with_capacity(qp.capacity());
        for r in rows {
            for c in cols.clone() {
                qp.push(p[r * w + c]);
                qg.push(g[r * w + c]);
            }
        }
        if !qp.is_empty() {
            total += weight * ssim(&qp, &qg);
        }
    }
    total
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len();
    let mp = p.iter().sum::<f64>() / n as f64;
    let mg = g.iter().sum::<f64>() / n as f64;
    let (mut sp, mut sg, mut spg) = (0.0, 0.0, 0.0);
    if n > 1 {
        for (&a, &b) in p.iter().zip(g) {
            sp += (a - mp) * (a - mp);
            sg += (b - mg) * (b - mg);
            spg += (a - mp) * (b - mg);
        }
        let d = (n - 1) as f64;
        sp /= d;
        sg /= d;
        spg /= d;
    }
    let alpha = 4.0 * mp * mg * spg;
    let beta = (mp * mp + mg * mg) * (sp + sg);
    if alpha != 0.0 {
        alpha / (beta + S_EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}
