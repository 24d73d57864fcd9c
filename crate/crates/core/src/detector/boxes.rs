use serde::{Deserialize, Serialize};

/// Axis-aligned box in pixel coordinates, `x_max`/`y_max` exclusive edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }
}

/// Intersection over union; 0 when either box is degenerate.
pub fn compute_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_boxes() {
        let b = BBox::new(1.0, 2.0, 5.0, 9.0);
        assert_eq!(compute_iou(&b, &b), 1.0);
    }

    #[test]
    fn disjoint_boxes() {
        let a = BBox::new(0.0, 0.0, 4.0, 4.0);
        let b = BBox::new(10.0, 10.0, 12.0, 12.0);
        assert_eq!(compute_iou(&a, &b), 0.0);
    }

    #[test]
    fn half_overlap() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert!((compute_iou(&a, &b) - 50.0 / 150.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            x in 0.0..50.0f64, y in 0.0..50.0f64, w in 0.5..20.0f64, h in 0.5..20.0f64,
            x2 in 0.0..50.0f64, y2 in 0.0..50.0f64, w2 in 0.5..20.0f64, h2 in 0.5..20.0f64,
        ) {
            let a = BBox::new(x, y, x + w, y + h);
            let b = BBox::new(x2, y2, x2 + w2, y2 + h2);
            let ab = compute_iou(&a, &b);
            prop_assert_eq!(ab, compute_iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
