use super::BBox;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Index into the grid's `sizes`.
    pub size_index: usize,
    /// Grid cell `(column, row)`.
    pub cell: (usize, usize),
}

impl Anchor {
    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.w, self.h)
    }
}

/// Square anchors on a regular grid. Ordering is row-major over cells with
/// the size index varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub image_size: usize,
    pub stride: usize,
    pub sizes: Vec<f64>,
    pub anchors: Vec<Anchor>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn cells_per_side(&self) -> usize {
        self.image_size / self.stride
    }
}

pub fn build_anchors(image_size: usize, stride: usize, sizes: &[f64]) -> Result<AnchorGrid> {
    if stride == 0 || image_size == 0 || image_size % stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} does not divide image size {image_size}"
        )));
    }
    if sizes.is_empty() || sizes.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("anchor sizes must be positive".into()));
    }
    let cells = image_size / stride;
    let half = stride as f64 / 2.0;
    let mut anchors = Vec::with_capacity(cells * cells * sizes.len());
    for row in 0..cells {
        for col in 0..cells {
            for (size_index, &s) in sizes.iter().enumerate() {
                anchors.push(Anchor {
                    cx: (col * stride) as f64 + half,
                    cy: (row * stride) as f64 + half,
                    w: s,
                    h: s,
                    size_index,
                    cell: (col, row),
                });
            }
        }
    }
    Ok(AnchorGrid { image_size, stride, sizes: sizes.to_vec(), anchors })
}
