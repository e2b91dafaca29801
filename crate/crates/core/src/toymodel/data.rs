//! Synthetic RGB-D scenes: one salient shape that stands out in depth, plus
//! look-alike distractors that exist only in the colour image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::GroundTruth;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// `H×W×3` colour image in [0,1].
    pub aif: Tensor,
    /// `H×W×1` depth map, brighter = closer.
    pub depth: Tensor,
    pub gt: GroundTruth,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Triangle([(f64, f64); 3]),
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: f64, w: f64, scale: (f64, f64)) -> Self {
        let ry = rng.gen_range(scale.0..scale.1) * h;
        let rx = rng.gen_range(scale.0..scale.1) * w;
        let cy = rng.gen_range(0.25 * h..0.75 * h);
        let cx = rng.gen_range(0.25 * w..0.75 * w);
        match rng.gen_range(0..3) {
            0 => Shape::Ellipse { cy, cx, ry, rx },
            1 => Shape::Rect { y0: cy - ry, x0: cx - rx, y1: cy + ry, x1: cx + rx },
            _ => {
                let a0 = rng.gen_range(0.0..std::f64::consts::TAU);
                let pts = [0.0, 1.0, 2.0].map(|k| {
                    let a = a0 + k * std::f64::consts::TAU / 3.0;
                    (cy + 1.3 * ry * a.sin(), cx + 1.3 * rx * a.cos())
                });
                Shape::Triangle(pts)
            }
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0,
            Shape::Rect { y0, x0, y1, x1 } => (y0..=y1).contains(&y) && (x0..=x1).contains(&x),
            Shape::Triangle(p) => {
                let side = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) * (y - a.0) - (b.0 - a.0) * (x - a.1);
                let d = [side(p[0], p[1]), side(p[1], p[2]), side(p[2], p[0])];
                d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0)
            }
        }
    }

    fn moved(self, dy: f64, dx: f64) -> Self {
        match self {
            Shape::Ellipse { cy, cx, ry, rx } => Shape::Ellipse { cy: cy + dy, cx: cx + dx, ry, rx },
            Shape::Rect { y0, x0, y1, x1 } => Shape::Rect { y0: y0 + dy, x0: x0 + dx, y1: y1 + dy, x1: x1 + dx },
            Shape::Triangle(p) => Shape::Triangle(p.map(|(y, x)| (y + dy, x + dx))),
        }
    }
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(0.5..1.0), rng.gen_range(0.1..0.9), rng.gen_range(0.0..0.5)]
}

fn render(rng: &mut ChaCha8Rng, h: usize, w: usize) -> SyntheticSample {
    let (hf, wf) = (h as f64, w as f64);
    let target = Shape::random(rng, hf, wf, (0.15, 0.3));
    let distractors: Vec<Shape> = (0..rng.gen_range(1..=2))
        .map(|_| {
            let s = Shape::random(rng, hf, wf, (0.1, 0.22));
            let dy = rng.gen_range(-0.3..0.3) * hf;
            let dx = rng.gen_range(-0.3..0.3) * wf;
            s.moved(dy, dx)
        })
        .collect();

    let fg_color = color(rng);
    let bg_color = [rng.gen_range(0.0..0.6), rng.gen_range(0.0..0.6), rng.gen_range(0.2..0.8)];
    let freq = rng.gen_range(0.3..1.2);
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let (sa, ca) = angle.sin_cos();
    let near = rng.gen_range(0.65..0.85);
    let far = rng.gen_range(0.1..0.3);

    let mut aif = Tensor::zeros(&[h, w, 3]);
    let mut depth = Tensor::zeros(&[h, w, 1]);
    let mut mask = Tensor::zeros(&[h, w]);
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let stripe = 0.15 * (freq * (py * sa + px * ca)).sin();
            let mut rgb = bg_color.map(|c| c + stripe);
            // Background recedes toward the top of the frame.
            let mut d = far + 0.1 * py / hf;
            for s in &distractors {
                if s.contains(py, px) {
                    rgb = fg_color.map(|c| c + rng.gen_range(-0.05..0.05));
                }
            }
            if target.contains(py, px) {
                rgb = fg_color.map(|c| c + rng.gen_range(-0.05..0.05));
                d = near;
                mask.set(&[y, x], 1.0);
            }
            for (c, v) in rgb.iter().enumerate() {
                aif.set(&[y, x, c], (v + rng.gen_range(-0.03..0.03)).clamp(0.0, 1.0));
            }
            depth.set(&[y, x, 0], (d + rng.gen_range(-0.03..0.03)).clamp(0.0, 1.0));
        }
    }
    SyntheticSample { aif, depth, gt: GroundTruth::new(mask).expect("binary mask") }
}

/// `n` scenes of size `h×w`, reproducible from `seed`. Every mask is
/// non-empty and leaves some background.
pub fn gen_synthetic_sized(n: usize, h: usize, w: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    if n == 0 || h < 4 || w < 4 {
        return Err(Error::Contract(format!("cannot generate {n} samples of {h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let sample = render(&mut rng, h, w);
        let fg = sample.gt.mask().sum();
        if fg >= 1.0 && fg < (h * w) as f64 {
            out.push(sample);
        }
    }
    Ok(out)
}

/// `n` scenes at the default 32×32 resolution.
pub fn gen_synthetic(n: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    gen_synthetic_sized(n, 32, 32, seed)
}

impl SyntheticSample {
    /// The depth map copied into three channels to match the colour branch.
    pub fn depth_rgb(&self) -> Tensor {
        let (h, w, _) = self.depth.dims3("depth_rgb").expect("rank-3 depth");
        let mut out = Vec::with_capacity(h * w * 3);
        for &d in self.depth.data() {
            out.extend_from_slice(&[d, d, d]);
        }
        Tensor::new(&[h, w, 3], out).expect("depth shape")
    }
}
