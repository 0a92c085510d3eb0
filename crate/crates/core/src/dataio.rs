//! Image files, pixel preprocessing and the generated-dataset manifest.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use image::{ColorType, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::{Element, Shape, Tensor};

/// Channel order of every image tensor and of the preprocessing means.
pub const CHANNEL_ORDER: [char; 3] = ['R', 'G', 'B'];

/// Decodes an RGB image into a `(1, 3, h, w)` tensor of raw `0..=255` values.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let channels = img.color().channel_count();
    if channels != 3 {
        return Err(Error::UnsupportedChannels {
            path: path.to_path_buf(),
            channels,
        });
    }
    Ok(rgb_to_tensor(&img.to_rgb8()))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    Tensor::from_fn(Shape::image(3, h as usize, w as usize), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f32
    })
    .expect("image has nonzero dims")
}

/// Clamps to `[0, 255]` and rounds half away from zero.
pub fn tensor_to_rgb<T: Element>(t: &Tensor<T>) -> Result<RgbImage> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::InvalidShape(format!("expected (1, 3, h, w), got {s}")));
    }
    let mut img = RgbImage::new(s.w as u32, s.h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = t.get(0, c, y as usize, x as usize).as_f64();
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 255.0).round() };
            px[c] = v as u8;
        }
    }
    Ok(img)
}

/// Writes a tensor of raw pixel values; the container follows the extension.
pub fn save_image<T: Element>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = tensor_to_rgb(t)?;
    image::save_buffer(path, img.as_raw(), img.width(), img.height(), ColorType::Rgb8).map_err(
        |source| Error::Image {
            path: path.to_path_buf(),
            source,
        },
    )
}

/// Image files under `dir` (recursively), sorted by path.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if is_image_path(&path) {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir.as_ref(), &mut out)?;
    out.sort();
    Ok(out)
}

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Pixel normalization applied before the network: `(x − mean_c) · scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocSpec {
    pub means: [f64; 3],
    pub scale: f64,
}

impl Default for PreprocSpec {
    fn default() -> Self {
        Self {
            means: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl PreprocSpec {
    /// Means shipped with the network's weights, unit scale.
    pub fn for_network<T: Element>(net: &Network<T>) -> Self {
        Self {
            means: net.means(),
            scale: 1.0,
        }
    }

    pub fn preprocess<T: Element>(&self, raw: &Tensor<f32>) -> Tensor<T> {
        self.apply(raw, |v, mean| (v - mean) * self.scale)
    }

    pub fn deprocess<T: Element>(&self, t: &Tensor<T>) -> Tensor<f32> {
        self.apply(t, |v, mean| v / self.scale + mean)
    }

    fn apply<S: Element, D: Element>(&self, t: &Tensor<S>, f: impl Fn(f64, f64) -> f64) -> Tensor<D> {
        let s = t.shape();
        Tensor::from_fn(s, |n, c, y, x| {
            let mean = self.means.get(c).copied().unwrap_or(0.0);
            D::from_f64(f(t.get(n, c, y, x).as_f64(), mean))
        })
        .expect("shape preserved")
    }
}

/// One generated image `D_i` and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub output_path: PathBuf,
    pub content_path: PathBuf,
    pub style_path: PathBuf,
    /// Inherited from the content image.
    pub label: String,
    pub lambda: f64,
    pub seed: u64,
    pub iterations: usize,
    pub final_feat: f64,
    pub final_coral: f64,
    pub feat_layers: Vec<String>,
    pub coral_layers: Vec<String>,
}

impl ManifestRecord {
    pub fn missing_path(&self) -> Option<&Path> {
        [&self.output_path, &self.content_path, &self.style_path]
            .into_iter()
            .find(|p| !p.exists())
            .map(PathBuf::as_path)
    }
}

/// One JSON object per line.
pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Blank lines are skipped; a malformed line reports its 1-based number.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::ManifestParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Serialized appender shared by concurrent workers.
pub struct ManifestAppender {
    path: PathBuf,
    file: Mutex<File>,
}

impl ManifestAppender {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    /// Appends one record; every path it references must exist.
    pub fn append(&self, record: &ManifestRecord) -> Result<()> {
        if let Some(p) = record.missing_path() {
            return Err(Error::MissingPath(p.to_path_buf()));
        }
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: &str) -> ManifestRecord {
        ManifestRecord {
            output_path: "out/d.png".into(),
            content_path: "c.png".into(),
            style_path: "r.png".into(),
            label: label.into(),
            lambda: 1e3,
            seed: 42,
            iterations: 500,
            final_feat: 0.125,
            final_coral: 3.0e-7,
            feat_layers: vec!["conv3_2".into()],
            coral_layers: vec!["conv1_1".into()],
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut text = serde_json::to_string(&record("sofa")).unwrap();
        text.push_str("\n\n{not json}\n");
        std::fs::write(&path, text).unwrap();
        match read_manifest(&path) {
            Err(Error::ManifestParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn appender_requires_existing_paths() {
        let dir = tempfile::tempdir().unwrap();
        let app = ManifestAppender::open(dir.path().join("m.jsonl")).unwrap();
        assert!(matches!(app.append(&record("sofa")), Err(Error::MissingPath(_))));
    }

    #[test]
    fn rounding_is_half_away_from_zero_and_clamped() {
        let t = Tensor::<f32>::from_vec(
            Shape::image(3, 1, 2),
            vec![0.5, 254.5, 1.49, -3.0, 300.0, 127.5],
        )
        .unwrap();
        let img = tensor_to_rgb(&t).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, [1, 1, 255]);
        assert_eq!(img.get_pixel(1, 0).0, [255, 0, 128]);
    }

    #[test]
    fn preprocess_subtracts_means() {
        let spec = PreprocSpec { means: [10.0, 20.0, 30.0], scale: 0.5 };
        let raw = Tensor::<f32>::filled(Shape::image(3, 1, 1), 40.0).unwrap();
        let t: Tensor<f64> = spec.preprocess(&raw);
        assert_eq!(t.data(), &[15.0, 10.0, 5.0]);
        assert_eq!(spec.deprocess(&t), raw);
    }
}
