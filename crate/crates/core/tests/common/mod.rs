//! Scalar-loop reference implementations, written from the formulas with
//! explicit indices and nested `Vec`s. They share no code with the library.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;

pub type Grid = Vec<Vec<f64>>;
/// `[y][x][c]`
pub type Feat = Vec<Vec<Vec<f64>>>;
/// `[ky][kx][cin][cout]`
pub type Kernel = Vec<Vec<Vec<Vec<f64>>>>;

pub const EPS: f64 = f64::EPSILON;

pub fn grid(h: usize, w: usize, data: &[f64]) -> Grid {
    (0..h).map(|y| data[y * w..(y + 1) * w].to_vec()).collect()
}

pub fn flat(g: &Grid) -> Vec<f64> {
    g.iter().flatten().copied().collect()
}

pub fn feat(h: usize, w: usize, c: usize, data: &[f64]) -> Feat {
    (0..h).map(|y| (0..w).map(|x| data[(y * w + x) * c..][..c].to_vec()).collect()).collect()
}

pub fn kernel(kh: usize, kw: usize, ci: usize, co: usize, data: &[f64]) -> Kernel {
    (0..kh)
        .map(|a| {
            (0..kw).map(|b| (0..ci).map(|i| data[((a * kw + b) * ci + i) * co..][..co].to_vec()).collect()).collect()
        })
        .collect()
}

/// Random saliency map and a mixed (neither empty nor full) binary mask.
pub fn random_pair<R: Rng>(h: usize, w: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    loop {
        let p: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>()).collect();
        let fill = rng.gen_range(0.1..0.9);
        let g: Vec<f64> = (0..h * w).map(|_| if rng.gen::<f64>() < fill { 1.0 } else { 0.0 }).collect();
        let fg: f64 = g.iter().sum();
        if fg > 0.0 && fg < (h * w) as f64 {
            return (p, g);
        }
    }
}

// ---------------------------------------------------------------- metrics

pub fn mae(p: &Grid, g: &Grid) -> f64 {
    let (h, w) = (g.len(), g[0].len());
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            s += (g[y][x] - p[y][x]).abs();
        }
    }
    s / (h * w) as f64
}

pub fn binarize(p: &Grid, tau: f64) -> Grid {
    p.iter().map(|r| r.iter().map(|&v| if v * 255.0 >= tau { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn f_measure(p: &Grid, g: &Grid, tau: f64) -> f64 {
    let b = binarize(p, tau);
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for y in 0..g.len() {
        for x in 0..g[0].len() {
            let (pb, gb) = (b[y][x] == 1.0, g[y][x] == 1.0);
            if pb && gb {
                tp += 1.0;
            } else if pb {
                fp += 1.0;
            } else if gb {
                fneg += 1.0;
            }
        }
    }
    let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let rec = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
    let beta2 = 0.3;
    if beta2 * prec + rec == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * prec * rec / (beta2 * prec + rec)
    }
}

fn mean(g: &Grid) -> f64 {
    let n = (g.len() * g[0].len()) as f64;
    g.iter().flatten().sum::<f64>() / n
}

/// Enhanced-alignment score of a (possibly soft) map against a mask.
pub fn e_soft(fm: &Grid, g: &Grid) -> f64 {
    let (h, w) = (g.len(), g[0].len());
    let n = (h * w) as f64;
    let fg: f64 = g.iter().flatten().sum();
    let mut s = 0.0;
    if fg == 0.0 {
        for y in 0..h {
            for x in 0..w {
                s += 1.0 - fm[y][x];
            }
        }
        return s / n;
    }
    if fg == n {
        for y in 0..h {
            for x in 0..w {
                s += fm[y][x];
            }
        }
        return s / n;
    }
    let (mf, mg) = (mean(fm), mean(g));
    for y in 0..h {
        for x in 0..w {
            let a = fm[y][x] - mf;
            let b = g[y][x] - mg;
            let align = 2.0 * a * b / (a * a + b * b + EPS);
            s += (align + 1.0) * (align + 1.0) / 4.0;
        }
    }
    s / n
}

pub fn e_measure(p: &Grid, g: &Grid, tau: f64) -> f64 {
    e_soft(&binarize(p, tau), g)
}

pub fn adaptive_tau(p: &Grid) -> f64 {
    (2.0 * mean(p) * 255.0).min(255.0)
}

fn object(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let sd =
        if values.len() > 1 { (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    2.0 * m / (m * m + 1.0 + sd + EPS)
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mx = p.iter().sum::<f64>() / n;
    let my = g.iter().sum::<f64>() / n;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    if p.len() > 1 {
        for i in 0..p.len() {
            sx += (p[i] - mx) * (p[i] - mx);
            sy += (g[i] - my) * (g[i] - my);
            sxy += (p[i] - mx) * (g[i] - my);
        }
        sx /= n - 1.0;
        sy /= n - 1.0;
        sxy /= n - 1.0;
    }
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn s_measure(p: &Grid, g: &Grid) -> f64 {
    let ratio = mean(g);
    if ratio == 0.0 {
        return 1.0 - mean(p);
    }
    if ratio == 1.0 {
        return mean(p);
    }
    let (so, sr) = s_parts(p, g);
    (0.5 * so + 0.5 * sr).max(0.0)
}

/// Object-aware and region-aware scores for a mask with both classes present.
pub fn s_parts(p: &Grid, g: &Grid) -> (f64, f64) {
    let (h, w) = (g.len(), g[0].len());
    let ratio = mean(g);
    let (mut fg, mut bg) = (Vec::new(), Vec::new());
    let (mut sy, mut sx, mut cnt) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if g[y][x] == 1.0 {
                fg.push(p[y][x]);
                sy += y as f64;
                sx += x as f64;
                cnt += 1.0;
            } else {
                bg.push(1.0 - p[y][x]);
            }
        }
    }
    let so = ratio * object(&fg) + (1.0 - ratio) * object(&bg);

    let cy = (sy / cnt).round_ties_even() as usize + 1;
    let cx = (sx / cnt).round_ties_even() as usize + 1;
    let area = (h * w) as f64;
    let weights = [(cx * cy) as f64 / area, (cy * (w - cx)) as f64 / area, ((h - cy) * cx) as f64 / area];
    let w4 = 1.0 - weights[0] - weights[1] - weights[2];
    let quads =
        [(0, cy, 0, cx, weights[0]), (0, cy, cx, w, weights[1]), (cy, h, 0, cx, weights[2]), (cy, h, cx, w, w4)];
    let mut sr = 0.0;
    for (y0, y1, x0, x1, wt) in quads {
        let (mut qp, mut qg) = (Vec::new(), Vec::new());
        for y in y0..y1 {
            for x in x0..x1 {
                qp.push(p[y][x]);
                qg.push(g[y][x]);
            }
        }
        if !qp.is_empty() {
            sr += wt * ssim(&qp, &qg);
        }
    }
    (so, sr)
}

// -------------------------------------------------------------- attention

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn conv_same(x: &Feat, k: &Kernel, bias: &[f64]) -> Feat {
    let (h, w) = (x.len(), x[0].len());
    let (kh, kw, ci, co) = (k.len(), k[0].len(), k[0][0].len(), k[0][0][0].len());
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![vec![vec![0.0; co]; w]; h];
    for y in 0..h {
        for xx in 0..w {
            for o in 0..co {
                let mut s = bias[o];
                for a in 0..kh {
                    for b in 0..kw {
                        let (iy, ix) = (y as isize + a as isize - ph as isize, xx as isize + b as isize - pw as isize);
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for i in 0..ci {
                            s += x[iy as usize][ix as usize][i] * k[a][b][i][o];
                        }
                    }
                }
                out[y][xx][o] = s;
            }
        }
    }
    out
}

pub struct NaiveAttention {
    pub fused: Feat,
    /// `[depth position][aif position]`
    pub sim: Grid,
    pub att_aif: Grid,
    pub att_dep: Grid,
    pub sim_aif: Feat,
    pub sim_dep: Feat,
    pub ma_aif: Feat,
    pub ma_dep: Feat,
}

fn column_softmax(m: &Grid) -> Grid {
    let n = m.len();
    let cols = m[0].len();
    let mut out = vec![vec![0.0; cols]; n];
    for j in 0..cols {
        let mx = (0..n).map(|i| m[i][j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).map(|i| (m[i][j] - mx).exp()).sum();
        for i in 0..n {
            out[i][j] = (m[i][j] - mx).exp() / z;
        }
    }
    out
}

pub fn mutual_attention(aif: &Feat, dep: &Feat, fuse_k: &Kernel, gates: [(&Kernel, &[f64]); 2]) -> NaiveAttention {
    let (h, w, c) = (aif.len(), aif[0].len(), aif[0][0].len());
    let hw = h * w;
    let at = |f: &Feat, p: usize, ch: usize| f[p / w][p % w][ch];

    let mut fused = vec![vec![vec![0.0; c]; w]; h];
    for y in 0..h {
        for x in 0..w {
            for o in 0..c {
                let mut s = 0.0;
                for i in 0..c {
                    s += aif[y][x][i] * fuse_k[0][0][i][o];
                    s += dep[y][x][i] * fuse_k[0][0][c + i][o];
                }
                fused[y][x][o] = s.max(0.0);
            }
        }
    }
    let mut sim = vec![vec![0.0; hw]; hw];
    for p in 0..hw {
        for q in 0..hw {
            for ch in 0..c {
                sim[p][q] += at(dep, p, ch) * at(aif, q, ch);
            }
        }
    }
    let att_aif = column_softmax(&sim);
    let sim_t: Grid = (0..hw).map(|i| (0..hw).map(|j| sim[j][i]).collect()).collect();
    let att_dep = column_softmax(&sim_t);

    let combine = |att: &Grid| -> Feat {
        let mut out = vec![vec![vec![0.0; c]; w]; h];
        for q in 0..hw {
            for ch in 0..c {
                let mut s = 0.0;
                for p in 0..hw {
                    s += at(&fused, p, ch) * att[p][q];
                }
                out[q / w][q % w][ch] = s;
            }
        }
        out
    };
    let sim_aif = combine(&att_aif);
    let sim_dep = combine(&att_dep);
    let gated = |f: &Feat, (k, b): (&Kernel, &[f64])| -> Feat {
        let z = conv_same(f, k, b);
        (0..h)
            .map(|y| (0..w).map(|x| (0..c).map(|ch| sigmoid(z[y][x][ch]) * f[y][x][ch]).collect()).collect())
            .collect()
    };
    let ma_aif = gated(&sim_aif, gates[0]);
    let ma_dep = gated(&sim_dep, gates[1]);
    NaiveAttention { fused, sim, att_aif, att_dep, sim_aif, sim_dep, ma_aif, ma_dep }
}

pub fn max_diff_feat(a: &Feat, flat: &[f64]) -> f64 {
    a.iter().flatten().flatten().zip(flat).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_diff_grid(a: &Grid, flat: &[f64]) -> f64 {
    a.iter().flatten().zip(flat).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ----------------------------------------------------------------- losses

pub fn bce(p: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s -= g[i] * (p[i] + 1e-7).ln() + (1.0 - g[i]) * (1.0 - p[i] + 1e-7).ln();
    }
    s / p.len() as f64
}

pub fn iou(p: &[f64], g: &[f64]) -> f64 {
    let (mut inter, mut union) = (0.0, 0.0);
    for i in 0..p.len() {
        inter += p[i] * g[i];
        union += p[i] + g[i] - p[i] * g[i];
    }
    1.0 - (inter + 1.0) / (union + 1.0)
}

/// Textbook Adam on one scalar.
pub fn adam_scalar(x0: f64, grad: impl Fn(f64) -> f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    let mut trace = Vec::new();
    for t in 1..=steps {
        let g = grad(x);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        x -= lr * mh / (vh.sqrt() + eps);
        trace.push(x);
    }
    trace
}
