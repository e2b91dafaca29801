#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::GrayImage;

pub fn cma() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cma"))
}

pub fn run(args: &[&str]) -> Output {
    cma().args(args).output().expect("spawn cma")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes `levels` (row-major, `h×w`) as an 8-bit image; the extension picks the format.
pub fn write_gray(path: &Path, w: u32, h: u32, levels: Vec<u8>) {
    GrayImage::from_raw(w, h, levels).expect("buffer size").save(path).expect("write image");
}

pub fn dirs(root: &Path) -> (PathBuf, PathBuf) {
    let (p, g) = (root.join("pred"), root.join("gt"));
    std::fs::create_dir_all(&p).unwrap();
    std::fs::create_dir_all(&g).unwrap();
    (p, g)
}

/// A blob mask of `h×w` whose shape depends on `seed`.
pub fn mask_levels(w: u32, h: u32, seed: u64) -> Vec<u8> {
    let cx = (seed * 37 % w as u64) as f64;
    let cy = (seed * 53 % h as u64) as f64;
    let r = (w.min(h) as f64) * (0.15 + (seed % 5) as f64 * 0.05);
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d <= r {
                255
            } else {
                0
            }
        })
        .collect()
}

/// Soft saliency levels: the mask blurred toward mid-grey plus a seeded ramp.
pub fn soft_levels(mask: &[u8], seed: u64) -> Vec<u8> {
    mask.iter()
        .enumerate()
        .map(|(i, &m)| {
            let noise = ((i as u64).wrapping_mul(2654435761).wrapping_add(seed * 97) % 61) as i32 - 30;
            (m as i32 * 3 / 4 + 32 + noise).clamp(0, 255) as u8
        })
        .collect()
}

pub fn parse_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}
