//! Synthetic testbeds: smoothed-noise textures (and orientation-bearing
//! glyphs) with injected CutDiff or rotation anomalies, plus the on-disk
//! dataset container.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{cutdiff_random, recompose_lower, rotate, PatchShape};
use crate::error::{Error, Result};
use crate::eval::{read_labels_deferred, write_labels, Label, SealedLabels};
use crate::image::{batch, Image};
use crate::tuner::{split_seed, TuneView};

pub const DATASET_VERSION: u32 = 1;

/// Ground-truth anomaly generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnomalyKind {
    /// CutDiff patch with `L = S(size, ratio)` (angle 0).
    CutdiffPatch { size: f64, ratio: f64 },
    /// Rotation of a glyph by `angle` radians.
    Rotation { angle: f64 },
}

/// Missing fields in a spec file take their default values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub side: usize,
    pub smoothness: usize,
    pub n_train: usize,
    pub n_test_normal: usize,
    pub n_test_anomaly: usize,
    pub anomaly: AnomalyKind,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            side: 32,
            smoothness: 3,
            n_train: 64,
            n_test_normal: 64,
            n_test_anomaly: 16,
            anomaly: AnomalyKind::CutdiffPatch {
                size: 0.08,
                ratio: 1.0,
            },
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.side < 16 {
            return Err(Error::Invalid(format!("side must be at least 16, got {}", self.side)));
        }
        if self.smoothness == 0 || self.smoothness > self.side {
            return Err(Error::Invalid(format!(
                "smoothness must lie in [1, {}], got {}",
                self.side, self.smoothness
            )));
        }
        if self.n_train < 8 {
            return Err(Error::Invalid(format!("n_train must be at least 8, got {}", self.n_train)));
        }
        if self.n_test_normal + self.n_test_anomaly < 2 {
            return Err(Error::Invalid("the test set needs at least 2 images".into()));
        }
        match self.anomaly {
            AnomalyKind::CutdiffPatch { size, ratio } => {
                if !(size > 0.0 && ratio > 0.0 && size.is_finite() && ratio.is_finite()) {
                    return Err(Error::Invalid(format!(
                        "patch size and ratio must be positive, got {size}, {ratio}"
                    )));
                }
            }
            AnomalyKind::Rotation { angle } => {
                if !angle.is_finite() {
                    return Err(Error::NonFinite(format!("rotation angle {angle}")));
                }
            }
        }
        Ok(())
    }
}

/// One-dimensional box filter of width `w`, averaging over the pixels that
/// fall inside the image.
fn box_blur_1d(line: &[f64], w: usize) -> Vec<f64> {
    let n = line.len();
    let (left, right) = (w / 2, (w - 1) / 2);
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            line[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Uniform noise smoothed by a separable box blur of width `smoothness`
/// and rescaled to span `[0, 1]`.
pub fn gen_texture(seed: u64, side: usize, smoothness: usize) -> Result<Image> {
    if side < 16 {
        return Err(Error::Invalid(format!("texture side must be at least 16, got {side}")));
    }
    if smoothness == 0 {
        return Err(Error::Invalid("smoothness must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px: Vec<f64> = (0..side * side).map(|_| rng.gen::<f64>()).collect();
    if smoothness > 1 {
        for i in 0..side {
            let row = box_blur_1d(&px[i * side..(i + 1) * side], smoothness);
            px[i * side..(i + 1) * side].copy_from_slice(&row);
        }
        for j in 0..side {
            let col: Vec<f64> = (0..side).map(|i| px[i * side + j]).collect();
            for (i, v) in box_blur_1d(&col, smoothness).into_iter().enumerate() {
                px[i * side + j] = v;
            }
        }
    }
    let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for p in &mut px {
        *p = if span > 0.0 { ((*p - lo) / span).clamp(0.0, 1.0) } else { 0.5 };
    }
    Image::new(side, 1, px)
}

/// Texture blended with a diagonal ramp that is brightest in the top-left
/// corner, so a half-turn is visible.
pub fn gen_glyph(seed: u64, side: usize, smoothness: usize) -> Result<Image> {
    let t = gen_texture(seed, side, smoothness)?;
    let d = 2.0 * (side - 1) as f64;
    let px = (0..side * side)
        .map(|k| {
            let (i, j) = (k / side, k % side);
            let ramp = 1.0 - (i + j) as f64 / d;
            (0.35 * t.pixels()[k] + 0.65 * ramp).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(side, 1, px)
}

/// Applies the ground-truth anomaly to `x`.
pub fn inject_anomaly<R: Rng + ?Sized>(x: &Image, kind: &AnomalyKind, rng: &mut R) -> Result<Image> {
    match *kind {
        AnomalyKind::CutdiffPatch { size, ratio } => {
            let l = recompose_lower(PatchShape {
                angle: 0.0,
                size,
                ratio,
            })?;
            cutdiff_random(x, &l, rng)
        }
        AnomalyKind::Rotation { angle } => rotate(x, angle),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub side: usize,
    pub channels: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub truth: Option<AnomalyKind>,
    #[serde(default)]
    pub spec: Option<SynthSpec>,
}

/// Inlier training images and an unlabeled test set; test labels are
/// sealed and can only be read by the evaluation module.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Image>,
    pub test: Vec<Image>,
    pub test_labels: SealedLabels,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// The label-free view handed to the tuner.
    pub fn tune_view(&self) -> Result<TuneView> {
        TuneView::new(batch(&self.train)?, batch(&self.test)?, self.meta.side, self.meta.channels)
    }
}

/// Builds a testbed: textures (glyphs for rotation anomalies) for training,
/// fresh normals plus injected anomalies for testing, shuffled by a seeded
/// permutation and quantized to 8 bits.
pub fn build_testbed(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let base = |seed: u64| -> Result<Image> {
        match spec.anomaly {
            AnomalyKind::Rotation { .. } => gen_glyph(seed, spec.side, spec.smoothness),
            AnomalyKind::CutdiffPatch { .. } => gen_texture(seed, spec.side, spec.smoothness),
        }
    };
    let train = (0..spec.n_train)
        .map(|i| Ok(base(split_seed(spec.seed, 10_000 + i as u64))?.quantized()))
        .collect::<Result<Vec<_>>>()?;
    let mut inject_rng = ChaCha8Rng::seed_from_u64(split_seed(spec.seed, 3));
    let mut test = Vec::with_capacity(spec.n_test_normal + spec.n_test_anomaly);
    for i in 0..spec.n_test_normal {
        test.push((base(split_seed(spec.seed, 20_000 + i as u64))?.quantized(), Label::Normal));
    }
    for i in 0..spec.n_test_anomaly {
        let x = base(split_seed(spec.seed, 30_000 + i as u64))?;
        let y = inject_anomaly(&x, &spec.anomaly, &mut inject_rng)?;
        test.push((y.quantized(), Label::Anomaly));
    }
    let mut perm_rng = ChaCha8Rng::seed_from_u64(split_seed(spec.seed, 4));
    test.shuffle(&mut perm_rng);
    let (test, labels): (Vec<_>, Vec<_>) = test.into_iter().unzip();
    Ok(Dataset {
        meta: DatasetMeta {
            version: DATASET_VERSION,
            side: spec.side,
            channels: 1,
            seed: spec.seed,
            n_train: train.len(),
            n_test: test.len(),
            truth: Some(spec.anomaly),
            spec: Some(spec.clone()),
        },
        train,
        test,
        test_labels: SealedLabels::seal(labels),
    })
}

fn image_name(i: usize) -> String {
    format!("{i:05}.png")
}

/// Encodes an image as an 8-bit PNG (`round(p·255)`).
pub fn encode_png(im: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let side = im.side() as u32;
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), side, side);
        enc.set_color(if im.channels() == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        enc.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = im.pixels().iter().map(|p| (p * 255.0).round() as u8).collect();
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Invalid(format!("png header: {e}")))?;
        w.write_image_data(&bytes)
            .map_err(|e| Error::Invalid(format!("png data: {e}")))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8], what: &Path) -> Result<Image> {
    let fail = |d: String| Error::format(what, d);
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| fail(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| fail("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| fail(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight || info.width != info.height {
        return Err(fail(format!(
            "expected a square 8-bit image, got {}x{} at {:?}",
            info.width, info.height, info.bit_depth
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        c => return Err(fail(format!("unsupported color type {c:?}"))),
    };
    let px = buf[..info.buffer_size()]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Image::new(info.width as usize, channels, px).map_err(|e| fail(e.to_string()))
}

pub fn save_png(im: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_png(im)?)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<Image> {
    decode_png(&fs::read(path)?, path)
}

/// Writes `train/`, `test/`, `labels.csv` and `meta.json` under `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    for sub in ["train", "test"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    for (i, im) in ds.train.iter().enumerate() {
        save_png(im, &dir.join("train").join(image_name(i)))?;
    }
    let mut names = Vec::with_capacity(ds.test.len());
    for (i, im) in ds.test.iter().enumerate() {
        let name = image_name(i);
        save_png(im, &dir.join("test").join(&name))?;
        names.push(format!("test/{name}"));
    }
    write_labels(&ds.test_labels, &names, &dir.join("labels.csv"))?;
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&ds.meta)? + "\n")?;
    Ok(())
}

/// Loads a dataset container. Test labels are attached unread; only the
/// evaluation module opens `labels.csv`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    if meta.version != DATASET_VERSION {
        return Err(Error::format(
            &meta_path,
            format!("dataset version {}, expected {DATASET_VERSION}", meta.version),
        ));
    }
    let load_all = |sub: &str, n: usize| -> Result<Vec<Image>> {
        (0..n)
            .map(|i| {
                let path = dir.join(sub).join(image_name(i));
                let im = load_png(&path)?;
                if im.side() != meta.side || im.channels() != meta.channels {
                    return Err(Error::format(
                        &path,
                        format!(
                            "image is {0}x{0}x{1}, metadata says {2}x{2}x{3}",
                            im.side(),
                            im.channels(),
                            meta.side,
                            meta.channels
                        ),
                    ));
                }
                Ok(im)
            })
            .collect()
    };
    let train = load_all("train", meta.n_train)?;
    let test = load_all("test", meta.n_test)?;
    let labels_path = dir.join("labels.csv");
    if !labels_path.is_file() {
        return Err(Error::format(&labels_path, "missing labels file"));
    }
    Ok(Dataset {
        train,
        test,
        test_labels: read_labels_deferred(&labels_path, meta.n_test),
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_blur_of_width_one_is_identity() {
        let line = [0.1, 0.9, 0.4];
        assert_eq!(box_blur_1d(&line, 1), line.to_vec());
        let b = box_blur_1d(&line, 3);
        assert!((b[1] - (0.1 + 0.9 + 0.4) / 3.0).abs() < 1e-15);
        assert!((b[0] - 0.5).abs() < 1e-15);
    }
}
