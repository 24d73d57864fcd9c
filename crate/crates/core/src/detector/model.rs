use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::AnchorGrid;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::synthdata::ImageSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub stride: usize,
    pub anchor_sizes: Vec<f64>,
    /// Side of the square input window centred on each anchor.
    pub patch_size: usize,
    /// Width `D` of the shared feature vector.
    pub hidden: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { stride: 8, anchor_sizes: vec![8.0, 12.0, 16.0], patch_size: 16, hidden: 64 }
    }
}

impl DetectorConfig {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.patch_size == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("patch_size and hidden must be positive".into()));
        }
        super::build_anchors(image_size, self.stride, &self.anchor_sizes).map(|_| ())
    }

    /// Window pixels plus a one-hot anchor-size code.
    pub fn input_dim(&self) -> usize {
        self.patch_size * self.patch_size + self.anchor_sizes.len()
    }
}

/// Parameter groups that train or freeze together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Shared feature extractor `g`.
    Features,
    F1,
    F2,
    Regressor,
    Mil,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] =
        [ParamGroup::Features, ParamGroup::F1, ParamGroup::F2, ParamGroup::Regressor, ParamGroup::Mil];
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer { weight: Tensor::zeros(&[fan_in, fan_out]), bias: Tensor::zeros(&[fan_out]) }
    }

    fn random(fan_in: usize, fan_out: usize, std: f64, bias: f64, seed: u64, path: &[u64]) -> Self {
        let mut rng = rng::stream(seed, path);
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
        Layer {
            weight: Tensor::matrix(fan_in, fan_out, data).expect("sized"),
            bias: Tensor::filled(&[fan_out], bias),
        }
    }
}

/// Prior foreground probability used to bias the instance classifiers.
const CLASS_PRIOR: f64 = 0.01;

/// Patch-MLP detector: `g` is two affine+relu layers; `f1`, `f2` are sigmoid
/// instance classifiers, `fr` the box regressor, `fmil` the raw MIL scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub image_size: usize,
    pub num_classes: usize,
    pub g1: Layer,
    pub g2: Layer,
    pub f1: Layer,
    pub f2: Layer,
    pub fr: Layer,
    pub fmil: Layer,
}

impl DetectorModel {
    /// Seeded initialization; `f1` and `f2` come from distinct streams.
    pub fn new(config: &DetectorConfig, image_size: usize, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate(image_size)?;
        let d_in = config.input_dim();
        let d = config.hidden;
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let head = (1.0 / d as f64).sqrt();
        let prior_bias = -((1.0 - CLASS_PRIOR) / CLASS_PRIOR).ln();
        let path = |group: u64| [rng::INIT, group];
        Ok(DetectorModel {
            config: config.clone(),
            image_size,
            num_classes,
            g1: Layer::random(d_in, d, he(d_in), 0.0, seed, &path(1)),
            g2: Layer::random(d, d, he(d), 0.0, seed, &path(2)),
            f1: Layer::random(d, num_classes, head, prior_bias, seed, &path(3)),
            f2: Layer::random(d, num_classes, head, prior_bias, seed, &path(4)),
            fr: Layer::random(d, 4, 0.01, 0.0, seed, &path(5)),
            fmil: Layer::random(d, num_classes, head, 0.0, seed, &path(6)),
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: &DetectorConfig, image_size: usize, num_classes: usize) -> Result<Self> {
        config.validate(image_size)?;
        let d = config.hidden;
        Ok(DetectorModel {
            config: config.clone(),
            image_size,
            num_classes,
            g1: Layer::zeros(config.input_dim(), d),
            g2: Layer::zeros(d, d),
            f1: Layer::zeros(d, num_classes),
            f2: Layer::zeros(d, num_classes),
            fr: Layer::zeros(d, 4),
            fmil: Layer::zeros(d, num_classes),
        })
    }

    pub fn grid(&self) -> Result<AnchorGrid> {
        super::build_anchors(self.image_size, self.config.stride, &self.config.anchor_sizes)
    }

    pub fn layers(&self, group: ParamGroup) -> Vec<&Layer> {
        match group {
            ParamGroup::Features => vec![&self.g1, &self.g2],
            ParamGroup::F1 => vec![&self.f1],
            ParamGroup::F2 => vec![&self.f2],
            ParamGroup::Regressor => vec![&self.fr],
            ParamGroup::Mil => vec![&self.fmil],
        }
    }

    pub fn layers_mut(&mut self, group: ParamGroup) -> Vec<&mut Layer> {
        match group {
            ParamGroup::Features => vec![&mut self.g1, &mut self.g2],
            ParamGroup::F1 => vec![&mut self.f1],
            ParamGroup::F2 => vec![&mut self.f2],
            ParamGroup::Regressor => vec![&mut self.fr],
            ParamGroup::Mil => vec![&mut self.fmil],
        }
    }

    pub fn snapshot(&self, group: ParamGroup) -> Vec<Layer> {
        self.layers(group).into_iter().cloned().collect()
    }

    /// True when every weight and bias of `group` equals `before` bit for bit.
    pub fn group_bits_eq(&self, group: ParamGroup, before: &[Layer]) -> bool {
        let now = self.layers(group);
        now.len() == before.len()
            && now.iter().zip(before).all(|(a, b)| a.weight.bits_eq(&b.weight) && a.bias.bits_eq(&b.bias))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

/// A model's parameters recorded on a tape; only `trainable` groups carry
/// gradients.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub g1: LayerVars,
    pub g2: LayerVars,
    pub f1: LayerVars,
    pub f2: LayerVars,
    pub fr: LayerVars,
    pub fmil: LayerVars,
    pub trainable: Vec<ParamGroup>,
}

impl ModelVars {
    pub fn register(tape: &Tape, model: &DetectorModel, trainable: &[ParamGroup]) -> Result<Self> {
        let reg = |layer: &Layer, group: ParamGroup| -> Result<LayerVars> {
            let rg = trainable.contains(&group);
            Ok(LayerVars { weight: tape.leaf(layer.weight.clone(), rg)?, bias: tape.leaf(layer.bias.clone(), rg)? })
        };
        Ok(ModelVars {
            g1: reg(&model.g1, ParamGroup::Features)?,
            g2: reg(&model.g2, ParamGroup::Features)?,
            f1: reg(&model.f1, ParamGroup::F1)?,
            f2: reg(&model.f2, ParamGroup::F2)?,
            fr: reg(&model.fr, ParamGroup::Regressor)?,
            fmil: reg(&model.fmil, ParamGroup::Mil)?,
            trainable: trainable.to_vec(),
        })
    }

    pub fn layers(&self, group: ParamGroup) -> Vec<LayerVars> {
        match group {
            ParamGroup::Features => vec![self.g1, self.g2],
            ParamGroup::F1 => vec![self.f1],
            ParamGroup::F2 => vec![self.f2],
            ParamGroup::Regressor => vec![self.fr],
            ParamGroup::Mil => vec![self.fmil],
        }
    }
}

/// Builds the `(images·N) × input_dim` matrix of anchor inputs: a zero-padded
/// window centred on the anchor followed by a one-hot size code.
pub fn anchor_inputs(images: &[&ImageSample], grid: &AnchorGrid, config: &DetectorConfig) -> Result<Tensor> {
    let p = config.patch_size;
    let dim = config.input_dim();
    let n = grid.len();
    let mut data = vec![0.0; images.len() * n * dim];
    let half = (p / 2) as isize;
    let mut window = vec![0.0; p * p];
    for (b, img) in images.iter().enumerate() {
        if img.size != grid.image_size {
            return Err(Error::ShapeMismatch {
                op: "anchor_inputs",
                detail: format!("image {} is {}px, grid expects {}px", img.id, img.size, grid.image_size),
            });
        }
        let size = img.size as isize;
        let mut last_cell = None;
        for (i, anchor) in grid.anchors.iter().enumerate() {
            if last_cell != Some(anchor.cell) {
                let cx = anchor.cx.floor() as isize;
                let cy = anchor.cy.floor() as isize;
                for wy in 0..p as isize {
                    for wx in 0..p as isize {
                        let (x, y) = (cx - half + wx, cy - half + wy);
                        window[(wy as usize) * p + wx as usize] = if x >= 0 && y >= 0 && x < size && y < size {
                            img.pixels[(y * size + x) as usize]
                        } else {
                            0.0
                        };
                    }
                }
                last_cell = Some(anchor.cell);
            }
            let row = &mut data[(b * n + i) * dim..(b * n + i + 1) * dim];
            row[..p * p].copy_from_slice(&window);
            row[p * p + anchor.size_index] = 1.0;
        }
    }
    Tensor::matrix(images.len() * n, dim, data)
}

/// Per-image head outputs on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub y_f1: Var,
    pub y_f2: Var,
    pub y_fr: Var,
    pub y_fmil: Var,
}

/// Head outputs for a stacked batch of images.
#[derive(Clone, Copy, Debug)]
pub struct BatchForward {
    pub features: Var,
    pub y_f1: Var,
    pub y_f2: Var,
    pub y_fr: Var,
    pub y_fmil: Var,
    pub images: usize,
    pub anchors: usize,
}

impl BatchForward {
    pub fn image(&self, tape: &Tape, i: usize) -> Result<ForwardVars> {
        let (s, e) = (i * self.anchors, (i + 1) * self.anchors);
        Ok(ForwardVars {
            y_f1: tape.slice_rows(self.y_f1, s, e)?,
            y_f2: tape.slice_rows(self.y_f2, s, e)?,
            y_fr: tape.slice_rows(self.y_fr, s, e)?,
            y_fmil: tape.slice_rows(self.y_fmil, s, e)?,
        })
    }
}

fn affine(tape: &Tape, x: Var, layer: LayerVars) -> Result<Var> {
    tape.add_row(tape.matmul(x, layer.weight)?, layer.bias)
}

pub fn forward_tape(
    tape: &Tape,
    vars: &ModelVars,
    model: &DetectorModel,
    grid: &AnchorGrid,
    images: &[&ImageSample],
) -> Result<BatchForward> {
    let x = tape.constant(anchor_inputs(images, grid, &model.config)?)?;
    let h1 = tape.relu(affine(tape, x, vars.g1)?)?;
    let h2 = tape.relu(affine(tape, h1, vars.g2)?)?;
    Ok(BatchForward {
        features: h2,
        y_f1: tape.sigmoid(affine(tape, h2, vars.f1)?)?,
        y_f2: tape.sigmoid(affine(tape, h2, vars.f2)?)?,
        y_fr: affine(tape, h2, vars.fr)?,
        y_fmil: affine(tape, h2, vars.fmil)?,
        images: images.len(),
        anchors: grid.len(),
    })
}

/// Plain values of one image's head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub y_f1: Tensor,
    pub y_f2: Tensor,
    pub y_fr: Tensor,
    pub y_fmil: Tensor,
    /// Mean of the shared features over all anchors.
    pub pooled_features: Vec<f64>,
}

const INFERENCE_CHUNK: usize = 32;

pub fn forward_many(model: &DetectorModel, grid: &AnchorGrid, images: &[&ImageSample]) -> Result<Vec<ForwardOutput>> {
    let mut out = Vec::with_capacity(images.len());
    let n = grid.len();
    let rows = |t: &Tensor, b: usize| -> Result<Tensor> {
        let cols = t.dims2()?.1;
        Tensor::matrix(n, cols, t.data()[b * n * cols..(b + 1) * n * cols].to_vec())
    };
    for chunk in images.chunks(INFERENCE_CHUNK) {
        let tape = Tape::new();
        let vars = ModelVars::register(&tape, model, &[])?;
        let fw = forward_tape(&tape, &vars, model, grid, chunk)?;
        let (f1, f2, fr, fmil, feat) = (
            tape.value(fw.y_f1)?,
            tape.value(fw.y_f2)?,
            tape.value(fw.y_fr)?,
            tape.value(fw.y_fmil)?,
            tape.value(fw.features)?,
        );
        let d = feat.dims2()?.1;
        for b in 0..chunk.len() {
            let mut pooled = vec![0.0; d];
            for i in 0..n {
                for (p, v) in pooled.iter_mut().zip(feat.row(b * n + i)) {
                    *p += v;
                }
            }
            pooled.iter_mut().for_each(|p| *p /= n as f64);
            out.push(ForwardOutput {
                y_f1: rows(&f1, b)?,
                y_f2: rows(&f2, b)?,
                y_fr: rows(&fr, b)?,
                y_fmil: rows(&fmil, b)?,
                pooled_features: pooled,
            });
        }
    }
    Ok(out)
}

pub fn forward(model: &DetectorModel, image: &ImageSample, grid: &AnchorGrid) -> Result<ForwardOutput> {
    Ok(forward_many(model, grid, &[image])?.remove(0))
}
