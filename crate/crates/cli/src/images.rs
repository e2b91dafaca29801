//! Saliency-map ingestion: directory pairing by file stem and 8-bit
//! grayscale decoding (PGM P5 or PNG).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cma_core::{ops, Tensor};

use crate::CliError;

const EXTENSIONS: [&str; 2] = ["pgm", "png"];

/// Image files of `dir` keyed by stem, in sorted order.
pub fn list_maps(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(CliError::Contract(format!(
                "two maps share the stem `{stem}`: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// `(stem, prediction, ground truth)` triples; any unpaired file is an error
/// that lists every offender.
pub fn pair_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, CliError> {
    let preds = list_maps(pred_dir)?;
    let mut gts = list_maps(gt_dir)?;
    let mut pairs = Vec::with_capacity(preds.len());
    let mut unpaired = Vec::new();
    for (stem, pred) in preds {
        match gts.remove(&stem) {
            Some(gt) => pairs.push((stem, pred, gt)),
            None => unpaired.push(format!("  prediction without ground truth: {}", pred.display())),
        }
    }
    unpaired.extend(gts.values().map(|gt| format!("  ground truth without prediction: {}", gt.display())));
    if !unpaired.is_empty() {
        return Err(CliError::Contract(format!("unpaired files:\n{}", unpaired.join("\n"))));
    }
    if pairs.is_empty() {
        return Err(CliError::Contract(format!("no .pgm or .png maps in {}", pred_dir.display())));
    }
    Ok(pairs)
}

/// Decodes an 8-bit grayscale image into an `H×W` tensor of raw levels.
pub fn read_gray(path: &Path) -> Result<Tensor, CliError> {
    let img = image::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?.into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f64::from).collect();
    Tensor::new(&[h as usize, w as usize], data).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn to_saliency(levels: &Tensor) -> Tensor {
    levels.map(|v| v / 255.0)
}

pub fn to_mask(levels: &Tensor) -> Tensor {
    levels.map(|v| if v >= 128.0 { 1.0 } else { 0.0 })
}

/// Bilinear resampling of an `H×W` map, clamped back into [0,1].
pub fn resample(map: &Tensor, h: usize, w: usize) -> Result<Tensor, CliError> {
    let (mh, mw) = map.dims2("resample")?;
    let up = ops::upsample_bilinear(&map.reshape(&[mh, mw, 1])?, h, w)?;
    Ok(up.reshape(&[h, w])?.map(|v| v.clamp(0.0, 1.0)))
}
