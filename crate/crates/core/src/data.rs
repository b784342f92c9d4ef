//! Labeled image datasets: the generated desk dataset and on-disk PNG
//! collections described by a `manifest.csv` (`filename,label,split`).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::{ImageKind, ImageTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub split: Split,
    pub classes: usize,
    items: Vec<(ImageTensor, usize)>,
}

impl LabeledDataset {
    pub fn new(split: Split, classes: usize, items: Vec<(ImageTensor, usize)>) -> Result<Self> {
        if let Some((_, l)) = items.iter().find(|(_, l)| *l >= classes) {
            return Err(Error::Data(format!("label {l} outside 0..{classes}")));
        }
        Ok(LabeledDataset {
            split,
            classes,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> (&ImageTensor, usize) {
        let (x, l) = &self.items[i];
        (x, *l)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ImageTensor, usize)> {
        self.items.iter().map(|(x, l)| (x, *l))
    }

    /// First `n` items.
    pub fn take(&self, n: usize) -> LabeledDataset {
        LabeledDataset {
            split: self.split,
            classes: self.classes,
            items: self.items.iter().take(n).cloned().collect(),
        }
    }

    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.classes];
        for (_, l) in &self.items {
            seen[*l] = true;
        }
        seen.into_iter().filter(|s| *s).count()
    }

    /// Visiting order for one epoch, fixed by `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut substream(seed, "shuffle", epoch as u64));
        order
    }
}

/// Number of shape classes the generator knows.
pub const SYNTHETIC_CLASSES: usize = 10;

fn class_mask(class: usize, u: f64, v: f64) -> bool {
    let d = (u * u + v * v).sqrt();
    let inside = u.abs() < 1.0 && v.abs() < 1.0;
    match class {
        0 => d < 1.0,
        1 => u.abs() < 0.85 && v.abs() < 0.85,
        2 => v > -0.8 && v < 0.8 && u.abs() < (v + 0.8) / 1.6 * 0.95,
        3 => (u.abs() < 0.3 && v.abs() < 1.0) || (v.abs() < 0.3 && u.abs() < 1.0),
        4 => d > 0.55 && d < 1.0,
        5 => inside && ((v + 1.0) * 2.0).rem_euclid(1.0) < 0.5,
        6 => inside && ((u + 1.0) * 2.0).rem_euclid(1.0) < 0.5,
        7 => inside && ((u - v).abs() < 0.3 || (u + v).abs() < 0.3),
        8 => inside && ((u > 0.0) ^ (v > 0.0)),
        _ => ((u + 0.55).powi(2) + v * v).sqrt() < 0.4 || ((u - 0.55).powi(2) + v * v).sqrt() < 0.4,
    }
}

/// One generated `size x size` image of `class`.
///
/// The label is carried only by the foreground shape. Background colour,
/// gradients and an oriented sinusoidal texture are random and irrelevant
/// to the label, but cost bits to reproduce.
pub fn synthetic_image(class: usize, size: usize, rng: &mut impl Rng) -> Tensor {
    let s = size as f64;
    let base: [f64; 3] = [
        rng.gen_range(0.15..0.85),
        rng.gen_range(0.15..0.85),
        rng.gen_range(0.15..0.85),
    ];
    let grad: [[f64; 2]; 3] = std::array::from_fn(|_| {
        [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)]
    });
    let freq = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let amp: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.03..0.12));

    let radius = s * rng.gen_range(0.24..0.36);
    let margin = radius + 1.0;
    let cx = rng.gen_range(margin..s - margin);
    let cy = rng.gen_range(margin..s - margin);
    let lum = (base[0] + base[1] + base[2]) / 3.0;
    let fg: [f64; 3] = std::array::from_fn(|_| {
        if lum > 0.5 {
            rng.gen_range(0.0..0.2)
        } else {
            rng.gen_range(0.8..1.0)
        }
    });

    let mut t = Tensor::zeros(3, size, size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 / s - 0.5, y as f64 / s - 0.5);
            let wave = (std::f64::consts::TAU * (freq[0] * fx + freq[1] * fy) + phase).sin();
            // 2x2 supersampled coverage.
            let mut cover = 0.0;
            for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let u = (x as f64 + ox - cx) / radius;
                let v = (y as f64 + oy - cy) / radius;
                if class_mask(class, u, v) {
                    cover += 0.25;
                }
            }
            for c in 0..3 {
                let bg = base[c] + grad[c][0] * fx + grad[c][1] * fy + amp[c] * wave
                    + rng.gen_range(-0.02..0.02);
                let v = (1.0 - cover) * bg + cover * fg[c];
                *t.at_mut(c, y, x) = quantize_8bit(v);
            }
        }
    }
    t
}

/// Round to the nearest 8-bit level, then onto the pixel grid, matching
/// what a PNG round trip produces.
fn quantize_8bit(v: f64) -> f64 {
    let k = (v.clamp(0.0, 1.0) * 255.0).round();
    crate::tensor::snap_to_grid(k / 255.0)
}

/// Deterministic generated dataset with balanced labels.
pub fn synthetic(
    split: Split,
    count: usize,
    size: usize,
    classes: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || classes > SYNTHETIC_CLASSES {
        return Err(Error::Data(format!(
            "the generator supports 2..={SYNTHETIC_CLASSES} classes, got {classes}"
        )));
    }
    let mut rng = substream(seed, &format!("data/{}", split.as_str()), 0);
    let mut items = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % classes;
        let t = synthetic_image(label, size, &mut rng);
        items.push((ImageTensor::new(t, ImageKind::Input)?, label));
    }
    items.shuffle(&mut rng);
    LabeledDataset::new(split, classes, items)
}

pub fn load_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(3, h, w);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            *t.at_mut(c, y as usize, x as usize) =
                crate::tensor::snap_to_grid(f64::from(px.0[c]) / 255.0);
        }
    }
    ImageTensor::new(t, ImageKind::Input)
}

/// Write an image as 8-bit RGB PNG (values rounded to the nearest level).
pub fn save_png(path: &Path, image: &ImageTensor) -> Result<()> {
    let (h, w) = (image.height(), image.width());
    let (lo, hi) = image.kind.range();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = image.tensor().at(c, y as usize, x as usize);
            let unit = (v - lo) / (hi - lo);
            px.0[c] = (unit.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    buf.save(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, serde::Deserialize, serde::Serialize)]
struct ManifestRow {
    filename: String,
    label: usize,
    split: String,
}

/// Load one split of a PNG dataset from `dir/manifest.csv`.
pub fn load_manifest(dir: &Path, split: Split, classes: usize) -> Result<LabeledDataset> {
    let manifest = dir.join("manifest.csv");
    let mut rdr = csv::Reader::from_path(&manifest)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
    let mut items = Vec::new();
    for (i, row) in rdr.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("{} row {}: {e}", manifest.display(), i + 2)))?;
        if row.split != split.as_str() {
            continue;
        }
        if row.label >= classes {
            return Err(Error::Data(format!(
                "{} row {}: label {} outside 0..{classes}",
                manifest.display(),
                i + 2,
                row.label
            )));
        }
        items.push((load_png(&dir.join(&row.filename))?, row.label));
    }
    LabeledDataset::new(split, classes, items)
}

/// Write datasets as PNG files plus `manifest.csv` under `dir`.
pub fn save_manifest(dir: &Path, sets: &[&LabeledDataset]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut wtr = csv::Writer::from_path(&manifest)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
    for set in sets {
        for (i, (x, label)) in set.iter().enumerate() {
            let filename = format!("{}_{i:05}.png", set.split.as_str());
            save_png(&dir.join(&filename), x)?;
            wtr.serialize(ManifestRow {
                filename,
                label,
                split: set.split.as_str().to_string(),
            })
            .map_err(|e| Error::Data(e.to_string()))?;
        }
    }
    wtr.flush().map_err(|e| Error::io(&manifest, e))
}
