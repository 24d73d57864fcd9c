use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{PlacedObject, SceneSpec, ShapeKind};

pub fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn covers(obj: &PlacedObject, kind: ShapeKind, px: usize, py: usize) -> bool {
    let s = obj.size;
    if px < obj.x0 || py < obj.y0 || px >= obj.x0 + s || py >= obj.y0 + s {
        return false;
    }
    let (lx, ly) = (px - obj.x0, py - obj.y0);
    match kind {
        ShapeKind::Square => true,
        ShapeKind::Disc => {
            let r = s as f64 / 2.0;
            let dx = lx as f64 + 0.5 - r;
            let dy = ly as f64 + 0.5 - r;
            dx * dx + dy * dy <= r * r
        }
        ShapeKind::Cross => {
            let bar = (s / 4).max(2).min(s);
            let start = (s - bar) / 2;
            let band = start..start + bar;
            band.contains(&lx) || band.contains(&ly)
        }
    }
}

/// Rasterizes objects in order over a flat background, adds Gaussian noise,
/// clamps to `[0,1]`, and quantizes to 8 bits.
pub fn render_scene<R: Rng + ?Sized>(objects: &[PlacedObject], spec: &SceneSpec, rng: &mut R) -> Vec<f64> {
    let n = spec.image_size;
    let mut img = vec![spec.background_mean; n * n];
    for obj in objects {
        let kind = spec.shape_of(obj.class);
        for py in obj.y0..(obj.y0 + obj.size).min(n) {
            for px in obj.x0..(obj.x0 + obj.size).min(n) {
                if covers(obj, kind, px, py) {
                    img[py * n + px] = obj.intensity;
                }
            }
        }
    }
    if spec.background_noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.background_noise_std).expect("validated std");
        for p in img.iter_mut() {
            *p += noise.sample(rng);
        }
    }
    img.into_iter().map(quantize).collect()
}
