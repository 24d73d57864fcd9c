use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::detector::{forward, AnchorGrid, DetectorModel, ForwardOutput};
use crate::error::Result;
use crate::losses::{instance_uncertainty, mil_scores};
use crate::synthdata::{write_pgm, ImageSample};

/// Per-pixel accumulations over anchor footprints, row-major `size × size`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapFields {
    pub size: usize,
    pub uncertainty: Vec<f64>,
    pub cls: Vec<f64>,
}

fn footprint(grid: &AnchorGrid, i: usize, size: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let b = grid.anchors[i].bbox();
    let clip = |lo: f64, hi: f64| {
        let lo = lo.floor().max(0.0) as usize;
        let hi = (hi.ceil().max(0.0) as usize).min(size);
        lo.min(hi)..hi
    };
    (clip(b.x_min, b.x_max), clip(b.y_min, b.y_max))
}

/// Adds each anchor's uncertainty and summed MIL score onto every pixel its
/// box covers. `weights` switches to the weighted uncertainty.
pub fn heatmap_fields(output: &ForwardOutput, grid: &AnchorGrid, weights: Option<&Tensor>) -> Result<HeatmapFields> {
    let size = grid.image_size;
    let u = instance_uncertainty(&output.y_f1, &output.y_f2, weights)?;
    let mil = mil_scores(&output.y_fmil, &output.y_f1, &output.y_f2)?;
    let mut unc = vec![0.0; size * size];
    let mut cls = vec![0.0; size * size];
    for (i, ui) in u.iter().enumerate() {
        let s: f64 = mil.row(i).iter().sum();
        let (xs, ys) = footprint(grid, i, size);
        for y in ys {
            for x in xs.clone() {
                unc[y * size + x] += ui;
                cls[y * size + x] += s;
            }
        }
    }
    Ok(HeatmapFields { size, uncertainty: unc, cls })
}

/// Min-max normalization to 8 bits; a constant field maps to all zeros.
pub fn to_gray(field: &[f64]) -> Vec<u8> {
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0; field.len()];
    }
    field.iter().map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
}

/// Writes the uncertainty heatmap to `path` and the image-classification map
/// next to it with a `_cls` suffix. Returns both paths.
pub fn dump_heatmap(model: &DetectorModel, image: &ImageSample, path: &Path, weighted: bool) -> Result<(PathBuf, PathBuf)> {
    let grid = model.grid()?;
    let out = forward(model, image, &grid)?;
    let w = if weighted { Some(mil_scores(&out.y_fmil, &out.y_f1, &out.y_f2)?) } else { None };
    let fields = heatmap_fields(&out, &grid, w.as_ref())?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let cls_path = path.with_file_name(format!("{stem}_cls.pgm"));
    write_pgm(path, fields.size, fields.size, &to_gray(&fields.uncertainty))?;
    write_pgm(&cls_path, fields.size, fields.size, &to_gray(&fields.cls))?;
    Ok((path.to_path_buf(), cls_path))
}
