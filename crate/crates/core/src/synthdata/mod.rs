//! Deterministic synthetic detection scenes.
//!
//! Each sample draws its randomness from a stream keyed by `(seed, index)`,
//! so any subset of a dataset regenerates identically on its own.

mod persist;
mod render;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::BBox;
use crate::error::{Error, Result};
use crate::rng;

pub use persist::{dataset_checksum, decode_pgm, encode_pgm, load_dataset, save_dataset, write_pgm, MANIFEST_FILE};
pub use render::{quantize, render_scene};

/// Placement retries per sample before generation gives up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Disc,
    Cross,
}

impl ShapeKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "square" => Some(ShapeKind::Square),
            "disc" => Some(ShapeKind::Disc),
            "cross" => Some(ShapeKind::Cross),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Side of the square single-channel image, in pixels.
    pub image_size: usize,
    /// Ordered class names; each must name a drawable shape.
    pub classes: Vec<String>,
    pub objects_per_image: (usize, usize),
    pub object_size: (usize, usize),
    pub foreground_intensity: (f64, f64),
    pub background_mean: f64,
    pub background_noise_std: f64,
    pub min_center_separation: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_size: 64,
            classes: vec!["square".into(), "disc".into(), "cross".into()],
            objects_per_image: (1, 3),
            object_size: (8, 16),
            foreground_intensity: (0.55, 1.0),
            background_mean: 0.10,
            background_noise_std: 0.05,
            min_center_separation: 10.0,
        }
    }
}

impl SceneSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn shape_of(&self, class: usize) -> ShapeKind {
        ShapeKind::from_name(&self.classes[class]).expect("validated class name")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.classes.is_empty() {
            return bad("scene needs at least one class".into());
        }
        for (i, name) in self.classes.iter().enumerate() {
            if ShapeKind::from_name(name).is_none() {
                return bad(format!("unknown shape class {name:?} (known: square, disc, cross)"));
            }
            if self.classes[..i].contains(name) {
                return bad(format!("duplicate class {name:?}"));
            }
        }
        if self.image_size == 0 {
            return bad("image_size must be positive".into());
        }
        let (lo, hi) = self.objects_per_image;
        if lo > hi {
            return bad(format!("objects_per_image range {lo}..={hi} is empty"));
        }
        let (smin, smax) = self.object_size;
        if smin == 0 || smin > smax || smax > self.image_size {
            return bad(format!("object_size {smin}..={smax} must be positive and fit the image"));
        }
        let (fmin, fmax) = self.foreground_intensity;
        if !(0.0..=1.0).contains(&fmin) || !(0.0..=1.0).contains(&fmax) || fmin > fmax {
            return bad(format!("foreground_intensity {fmin}..={fmax} must lie in [0,1]"));
        }
        if !(0.0..=1.0).contains(&self.background_mean) {
            return bad("background_mean must lie in [0,1]".into());
        }
        if !(self.background_noise_std >= 0.0) || !(self.min_center_separation >= 0.0) {
            return bad("noise std and center separation must be non-negative".into());
        }
        Ok(())
    }
}

/// One object placed in a scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlacedObject {
    pub class: usize,
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
    pub intensity: f64,
}

impl PlacedObject {
    pub fn bbox(&self) -> BBox {
        BBox::new(
            self.x0 as f64,
            self.y0 as f64,
            (self.x0 + self.size) as f64,
            (self.y0 + self.size) as f64,
        )
    }

    fn center(&self) -> (f64, f64) {
        self.bbox().center()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub size: usize,
    /// Row-major intensities, quantized to multiples of 1/255.
    pub pixels: Vec<f64>,
    pub gt_boxes: Vec<BBox>,
    pub gt_classes: Vec<usize>,
    /// Image-level class indicator: 1 iff some object has that class.
    pub image_labels: Vec<f64>,
}

impl ImageSample {
    pub fn pixel(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.size + x]
    }
}

pub fn image_labels(gt_classes: &[usize], num_classes: usize) -> Vec<f64> {
    let mut labels = vec![0.0; num_classes];
    for &c in gt_classes {
        labels[c] = 1.0;
    }
    labels
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub seed: u64,
    pub samples: Vec<ImageSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageSample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

fn sample_id(index: usize, count: usize) -> String {
    let width = count.saturating_sub(1).to_string().len().max(5);
    format!("{index:0width$}")
}

fn place_objects(spec: &SceneSpec, rng: &mut rng::StreamRng) -> Option<Vec<PlacedObject>> {
    let n = rng.random_range(spec.objects_per_image.0..=spec.objects_per_image.1);
    let mut placed: Vec<PlacedObject> = Vec::with_capacity(n);
    for _ in 0..n {
        let size = rng.random_range(spec.object_size.0..=spec.object_size.1);
        let x0 = rng.random_range(0..=spec.image_size - size);
        let y0 = rng.random_range(0..=spec.image_size - size);
        let class = rng.random_range(0..spec.num_classes());
        let (flo, fhi) = spec.foreground_intensity;
        let intensity = if fhi > flo { rng.random_range(flo..=fhi) } else { flo };
        let obj = PlacedObject { class, x0, y0, size, intensity };
        let (cx, cy) = obj.center();
        let crowded = placed.iter().any(|o| {
            let (ox, oy) = o.center();
            (cx - ox).hypot(cy - oy) < spec.min_center_separation
        });
        if crowded {
            return None;
        }
        placed.push(obj);
    }
    Some(placed)
}

/// Generates one sample; `count` only fixes the id width.
pub fn generate_sample(spec: &SceneSpec, seed: u64, index: usize, count: usize) -> Result<ImageSample> {
    let mut rng = rng::stream(seed, &[rng::SCENE, index as u64]);
    let objects = (0..MAX_PLACEMENT_ATTEMPTS)
        .find_map(|_| place_objects(spec, &mut rng))
        .ok_or(Error::Placement { index, attempts: MAX_PLACEMENT_ATTEMPTS })?;
    let pixels = render_scene(&objects, spec, &mut rng);
    let gt_classes: Vec<usize> = objects.iter().map(|o| o.class).collect();
    Ok(ImageSample {
        id: sample_id(index, count),
        size: spec.image_size,
        pixels,
        gt_boxes: objects.iter().map(PlacedObject::bbox).collect(),
        image_labels: image_labels(&gt_classes, spec.num_classes()),
        gt_classes,
    })
}

pub fn generate_dataset(spec: &SceneSpec, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidArgument("dataset count must be positive".into()));
    }
    spec.validate()?;
    let samples = (0..count)
        .map(|i| generate_sample(spec, seed, i, count))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { spec: spec.clone(), seed, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec::default();
        let a = generate_dataset(&spec, 10, 7).unwrap();
        let b = generate_dataset(&spec, 10, 7).unwrap();
        assert_eq!(a, b);
        let bits = |d: &Dataset| -> Vec<u64> {
            d.samples.iter().flat_map(|s| s.pixels.iter().map(|p| p.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn subsets_regenerate_identically() {
        let spec = SceneSpec::default();
        let full = generate_dataset(&spec, 20, 3).unwrap();
        let single = generate_sample(&spec, 3, 13, 20).unwrap();
        assert_eq!(full.samples[13], single);
    }

    #[test]
    fn large_dataset_covers_every_class() {
        let spec = SceneSpec::default();
        let data = generate_dataset(&spec, 600, 1).unwrap();
        assert_eq!(data.len(), 600);
        let c = spec.num_classes();
        for class in 0..c {
            let images = data.samples.iter().filter(|s| s.image_labels[class] == 1.0).count();
            assert!(images >= 600 / (2 * c), "class {class} in {images} images");
        }
    }

    #[test]
    fn zero_count_rejected() {
        assert!(generate_dataset(&SceneSpec::default(), 0, 1).is_err());
    }

    #[test]
    fn labels_and_boxes_are_consistent() {
        let spec = SceneSpec::default();
        let data = generate_dataset(&spec, 50, 11).unwrap();
        for s in &data.samples {
            assert_eq!(s.image_labels, image_labels(&s.gt_classes, 3));
            assert_eq!(s.gt_boxes.len(), s.gt_classes.len());
            for b in &s.gt_boxes {
                assert!(b.is_valid());
                assert!(b.x_min >= 0.0 && b.y_min >= 0.0);
                assert!(b.x_max <= 64.0 && b.y_max <= 64.0);
            }
            assert!(s.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn impossible_placement_fails_with_index() {
        let spec = SceneSpec {
            image_size: 16,
            objects_per_image: (4, 4),
            object_size: (8, 8),
            min_center_separation: 30.0,
            ..SceneSpec::default()
        };
        match generate_dataset(&spec, 3, 1) {
            Err(Error::Placement { index, attempts }) => {
                assert_eq!(index, 0);
                assert_eq!(attempts, MAX_PLACEMENT_ATTEMPTS);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = SceneSpec::default();
        s.classes = vec![];
        assert!(s.validate().is_err());
        let mut s = SceneSpec::default();
        s.classes.push("hexagon".into());
        assert!(s.validate().is_err());
        let mut s = SceneSpec::default();
        s.object_size = (8, 80);
        assert!(s.validate().is_err());
        let mut s = SceneSpec::default();
        s.foreground_intensity = (0.5, 1.5);
        assert!(s.validate().is_err());
    }
}
