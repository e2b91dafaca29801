use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cma_core::metrics::{self, EvalPair, ImageMetrics, MetricReport, THRESHOLDS};
use rayon::prelude::*;

use crate::images;
use crate::CliError;

pub struct EvalArgs<'a> {
    pub pred: &'a Path,
    pub gt: &'a Path,
    pub out: Option<&'a Path>,
    pub strict: bool,
    pub curves: bool,
}

fn load_pair(stem: &str, pred: &Path, gt: &Path, strict: bool) -> Result<(EvalPair, Option<String>), CliError> {
    let mask = images::to_mask(&images::read_gray(gt)?);
    let mut sal = images::to_saliency(&images::read_gray(pred)?);
    let mut warning = None;
    if sal.shape() != mask.shape() {
        let msg = format!("{stem}: prediction {:?} does not match ground truth {:?}", sal.shape(), mask.shape());
        if strict {
            return Err(CliError::SizeMismatch(msg));
        }
        let (h, w) = mask.dims2("eval")?;
        sal = images::resample(&sal, h, w)?;
        warning = Some(format!("warning: {msg}; resampled bilinearly"));
    }
    Ok((EvalPair::new(sal, mask)?, warning))
}

pub fn table(report: &MetricReport) -> String {
    format!(
        "{:>8} {:>8} {:>8} {:>8}\n{:>8.3} {:>8.3} {:>8.3} {:>8.3}\n",
        "F_beta", "S_alpha", "E_phi", "MAE", report.f_beta, report.s_alpha, report.e_phi, report.mae
    )
}

pub fn metrics_csv(stems: &[String], rows: &[ImageMetrics], report: &MetricReport) -> String {
    let mut out = String::from("image,f_beta,s_alpha,e_phi,mae\n");
    let mut line = |name: &str, f: f64, s: f64, e: f64, m: f64| {
        let _ = writeln!(out, "{name},{f:.6},{s:.6},{e:.6},{m:.6}");
    };
    for (stem, r) in stems.iter().zip(rows) {
        line(stem, r.f_beta, r.s_alpha, r.e_phi, r.mae);
    }
    line("mean", report.f_beta, report.s_alpha, report.e_phi, report.mae);
    out
}

pub fn curve_csv(column: &str, curve: &[f64]) -> String {
    let mut out = format!("threshold,{column}\n");
    for (tau, v) in curve.iter().enumerate().take(THRESHOLDS) {
        let _ = writeln!(out, "{tau},{v:.6}");
    }
    out
}

/// `{stem}_f_curve.csv` and `{stem}_e_curve.csv` beside the metrics CSV.
pub fn curve_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("eval");
    let dir = out.parent().unwrap_or(Path::new(""));
    (dir.join(format!("{stem}_f_curve.csv")), dir.join(format!("{stem}_e_curve.csv")))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn run(args: &EvalArgs) -> Result<MetricReport, CliError> {
    if args.curves && args.out.is_none() {
        return Err(CliError::Contract("--curves needs --out to place the curve files".into()));
    }
    let pairs = images::pair_dirs(args.pred, args.gt)?;
    let loaded =
        pairs.par_iter().map(|(stem, p, g)| load_pair(stem, p, g, args.strict)).collect::<Result<Vec<_>, _>>()?;
    let mut eval_pairs = Vec::with_capacity(loaded.len());
    for (pair, warning) in loaded {
        if let Some(w) = warning {
            eprintln!("{w}");
        }
        eval_pairs.push(pair);
    }
    let rows: Vec<ImageMetrics> = eval_pairs.par_iter().map(metrics::image_metrics).collect();
    let report = metrics::aggregate(&rows)?;
    print!("{}", table(&report));

    if let Some(out) = args.out {
        let stems: Vec<String> = pairs.into_iter().map(|(s, _, _)| s).collect();
        write(out, &metrics_csv(&stems, &rows, &report))?;
        if args.curves {
            let (f_path, e_path) = curve_paths(out);
            write(&f_path, &curve_csv("f_beta", &report.f_curve))?;
            write(&e_path, &curve_csv("e_phi", &report.e_curve))?;
        }
    }
    Ok(report)
}
