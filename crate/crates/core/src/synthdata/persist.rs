//! On-disk dataset layout: `manifest.txt`, one `img_<id>.pgm` (binary P5)
//! and one `lab_<id>.txt` per sample. Label lines are
//! `class_index x_min y_min x_max y_max`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{image_labels, Dataset, ImageSample, SceneSpec};
use crate::detector::BBox;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
const MAGIC: &str = "miaod-dataset v1";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex(&h.finalize())
}

pub fn encode_pgm(width: usize, height: usize, bytes: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, bytes)).map_err(|e| Error::io(path, e))
}

/// Parses a binary 8-bit PGM into `(width, height, pixels)`.
pub fn decode_pgm(path: &Path, raw: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |detail: &str| Error::Format { path: path.to_path_buf(), detail: detail.into() };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&raw[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit PGM supported"));
    }
    let body = &raw[pos + 1..];
    if body.len() != w * h {
        return Err(bad("PGM body length mismatch"));
    }
    Ok((w, h, body.to_vec()))
}

fn pixel_bytes(sample: &ImageSample) -> Vec<u8> {
    sample.pixels.iter().map(|p| (p * 255.0).round() as u8).collect()
}

fn label_text(sample: &ImageSample) -> String {
    let mut s = String::new();
    for (b, c) in sample.gt_boxes.iter().zip(&sample.gt_classes) {
        let _ = writeln!(s, "{c} {} {} {} {}", b.x_min, b.y_min, b.x_max, b.y_max);
    }
    s
}

fn manifest_text(dataset: &Dataset, sample_lines: &str) -> String {
    let spec = &dataset.spec;
    let mut m = String::new();
    let _ = writeln!(m, "{MAGIC}");
    let _ = writeln!(m, "image_size {}", spec.image_size);
    let _ = writeln!(m, "classes {}", spec.classes.join(" "));
    let _ = writeln!(m, "objects_per_image {} {}", spec.objects_per_image.0, spec.objects_per_image.1);
    let _ = writeln!(m, "object_size {} {}", spec.object_size.0, spec.object_size.1);
    let _ = writeln!(
        m,
        "foreground_intensity {} {}",
        spec.foreground_intensity.0, spec.foreground_intensity.1
    );
    let _ = writeln!(m, "background_mean {}", spec.background_mean);
    let _ = writeln!(m, "background_noise_std {}", spec.background_noise_std);
    let _ = writeln!(m, "min_center_separation {}", spec.min_center_separation);
    let _ = writeln!(m, "seed {}", dataset.seed);
    let _ = writeln!(m, "count {}", dataset.len());
    let _ = writeln!(m, "checksum {}", sha256_hex(&[sample_lines.as_bytes()]));
    m.push_str(sample_lines);
    m
}

/// Checksum over every sample's stored bytes, as written in the manifest.
pub fn dataset_checksum(dataset: &Dataset) -> String {
    let lines = sample_lines(dataset);
    sha256_hex(&[lines.as_bytes()])
}

fn sample_lines(dataset: &Dataset) -> String {
    let mut lines = String::new();
    for s in &dataset.samples {
        let img = encode_pgm(s.size, s.size, &pixel_bytes(s));
        let lab = label_text(s);
        let _ = writeln!(lines, "sample {} {}", s.id, sha256_hex(&[&img, lab.as_bytes()]));
    }
    lines
}

/// Writes the dataset and returns its checksum.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = String::new();
    for s in &dataset.samples {
        let img = encode_pgm(s.size, s.size, &pixel_bytes(s));
        let lab = label_text(s);
        let img_path = dir.join(format!("img_{}.pgm", s.id));
        fs::write(&img_path, &img).map_err(|e| Error::io(&img_path, e))?;
        let lab_path = dir.join(format!("lab_{}.txt", s.id));
        fs::write(&lab_path, &lab).map_err(|e| Error::io(&lab_path, e))?;
        let _ = writeln!(lines, "sample {} {}", s.id, sha256_hex(&[&img, lab.as_bytes()]));
    }
    let manifest = manifest_text(dataset, &lines);
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(sha256_hex(&[lines.as_bytes()]))
}

struct Manifest {
    spec: SceneSpec,
    seed: u64,
    count: usize,
    checksum: String,
    samples: Vec<(String, String)>,
}

fn parse_manifest(path: &Path, text: &str) -> Result<Manifest> {
    let bad = |detail: String| Error::Format { path: path.to_path_buf(), detail };
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing manifest header".into()));
    }
    let mut spec = SceneSpec::default();
    let mut seed = None;
    let mut count = None;
    let mut checksum = None;
    let mut samples = Vec::new();
    for (no, line) in lines.enumerate() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<f64> {
            rest.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("line {}: bad value for {key}", no + 2)))
        };
        let int = |i: usize| -> Result<usize> {
            rest.get(i)
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| bad(format!("line {}: bad value for {key}", no + 2)))
        };
        match key {
            "image_size" => spec.image_size = int(0)?,
            "classes" => spec.classes = rest.iter().map(|s| s.to_string()).collect(),
            "objects_per_image" => spec.objects_per_image = (int(0)?, int(1)?),
            "object_size" => spec.object_size = (int(0)?, int(1)?),
            "foreground_intensity" => spec.foreground_intensity = (num(0)?, num(1)?),
            "background_mean" => spec.background_mean = num(0)?,
            "background_noise_std" => spec.background_noise_std = num(0)?,
            "min_center_separation" => spec.min_center_separation = num(0)?,
            "seed" => {
                seed = Some(rest.first().and_then(|s| s.parse::<u64>().ok()).ok_or_else(|| bad("bad seed".into()))?)
            }
            "count" => count = Some(int(0)?),
            "checksum" => checksum = rest.first().map(|s| s.to_string()),
            "sample" => match rest[..] {
                [id, sum] => samples.push((id.to_string(), sum.to_string())),
                _ => return Err(bad(format!("line {}: malformed sample record", no + 2))),
            },
            other => return Err(bad(format!("unknown manifest key {other:?}"))),
        }
    }
    spec.validate().map_err(|e| bad(format!("invalid scene spec: {e}")))?;
    Ok(Manifest {
        spec,
        seed: seed.ok_or_else(|| bad("missing seed".into()))?,
        count: count.ok_or_else(|| bad("missing count".into()))?,
        checksum: checksum.ok_or_else(|| bad("missing checksum".into()))?,
        samples,
    })
}

fn parse_labels(path: &Path, text: &str, num_classes: usize) -> Result<(Vec<BBox>, Vec<usize>)> {
    let bad = |detail: String| Error::Format { path: path.to_path_buf(), detail };
    let mut boxes = Vec::new();
    let mut classes = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(bad(format!("line {}: expected 5 fields", no + 1)));
        }
        let class: usize = f[0].parse().map_err(|_| bad(format!("line {}: bad class", no + 1)))?;
        if class >= num_classes {
            return Err(bad(format!("line {}: class {class} out of range", no + 1)));
        }
        let c = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| bad(format!("line {}: bad coordinate", no + 1)))
        };
        let b = BBox::new(c(1)?, c(2)?, c(3)?, c(4)?);
        if !b.is_valid() {
            return Err(bad(format!("line {}: degenerate box", no + 1)));
        }
        boxes.push(b);
        classes.push(class);
    }
    Ok((boxes, classes))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest = parse_manifest(&manifest_path, &text)?;
    if manifest.count != manifest.samples.len() {
        return Err(Error::Format {
            path: manifest_path,
            detail: format!(
                "count mismatch: header says {}, manifest lists {}",
                manifest.count,
                manifest.samples.len()
            ),
        });
    }
    let mut lines = String::new();
    let mut samples = Vec::with_capacity(manifest.count);
    for (id, sum) in &manifest.samples {
        let read = |p: PathBuf| -> Result<Vec<u8>> {
            fs::read(&p).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::MissingSample { id: id.clone() }
                } else {
                    Error::io(&p, e)
                }
            })
        };
        let img_path = dir.join(format!("img_{id}.pgm"));
        let lab_path = dir.join(format!("lab_{id}.txt"));
        let img = read(img_path.clone())?;
        let lab = read(lab_path.clone())?;
        if &sha256_hex(&[&img, &lab]) != sum {
            return Err(Error::ChecksumMismatch { id: id.clone() });
        }
        let _ = writeln!(lines, "sample {id} {sum}");
        let (w, h, bytes) = decode_pgm(&img_path, &img)?;
        if w != manifest.spec.image_size || h != manifest.spec.image_size {
            return Err(Error::Format { path: img_path, detail: "image size differs from manifest".into() });
        }
        let lab_text = String::from_utf8(lab).map_err(|_| Error::Format {
            path: lab_path.clone(),
            detail: "labels are not utf-8".into(),
        })?;
        let (gt_boxes, gt_classes) = parse_labels(&lab_path, &lab_text, manifest.spec.num_classes())?;
        samples.push(ImageSample {
            id: id.clone(),
            size: w,
            pixels: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
            image_labels: image_labels(&gt_classes, manifest.spec.num_classes()),
            gt_boxes,
            gt_classes,
        });
    }
    if sha256_hex(&[lines.as_bytes()]) != manifest.checksum {
        return Err(Error::Format { path: manifest_path, detail: "dataset checksum mismatch".into() });
    }
    Ok(Dataset { spec: manifest.spec, seed: manifest.seed, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::generate_dataset;

    fn sample_set() -> Dataset {
        generate_dataset(&SceneSpec::default(), 10, 4).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = sample_set();
        let sum = save_dataset(&data, dir.path()).unwrap();
        assert_eq!(sum, dataset_checksum(&data));
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn missing_blob_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let data = sample_set();
        save_dataset(&data, dir.path()).unwrap();
        fs::remove_file(dir.path().join("img_00003.pgm")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::MissingSample { id }) => assert_eq!(id, "00003"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn edited_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample_set(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("count 10", "count 11");
        fs::write(&path, text).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    #[test]
    fn tampered_pixels_fail_checksum() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample_set(), dir.path()).unwrap();
        let path = dir.path().join("img_00001.pgm");
        let mut raw = fs::read(&path).unwrap();
        let last = raw.len() - 1;
        raw[last] ^= 0xff;
        fs::write(&path, raw).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::ChecksumMismatch { id }) if id == "00001"));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().is_io());
    }

    #[test]
    fn pgm_codec() {
        let raw = encode_pgm(3, 2, &[0, 1, 2, 3, 4, 255]);
        let (w, h, px) = decode_pgm(Path::new("x.pgm"), &raw).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(px, vec![0, 1, 2, 3, 4, 255]);
        assert!(decode_pgm(Path::new("x.pgm"), b"P2\n1 1\n255\n0").is_err());
    }
}
