//! IDX ingestion and synthetic datasets.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{invalid, Error, Result};
use crate::layers::Tensor;
use crate::mechanisms::RngState;
use crate::training::Dataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Reads a whole file, transparently gunzipping it when it starts with the
/// gzip magic bytes.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("gzip stream: {e}"),
        })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.fail(format!("truncated while reading {what}")))?;
        self.pos += 4;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32("magic number")?;
        if found != expected {
            self.pos -= 4;
            return Err(self.fail(format!("expected magic 0x{expected:08x}, found 0x{found:08x}")));
        }
        Ok(())
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let have = self.bytes.len() - self.pos;
        if have < n {
            return Err(self.fail(format!("truncated {what}: need {n} bytes, {have} remain")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Loads an IDX image/label pair (optionally gzipped). Pixels are scaled to
/// `[0, 1]`; images become `1 x rows x cols` tensors and there are ten classes.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ipath, lpath) = (images.as_ref(), labels.as_ref());
    let ibytes = read_maybe_gz(ipath)?;
    let lbytes = read_maybe_gz(lpath)?;

    let mut ic = Cursor {
        path: ipath,
        bytes: &ibytes,
        pos: 0,
    };
    ic.magic(IMAGE_MAGIC)?;
    let count = ic.u32("image count")? as usize;
    let rows = ic.u32("row count")? as usize;
    let cols = ic.u32("column count")? as usize;

    let mut lc = Cursor {
        path: lpath,
        bytes: &lbytes,
        pos: 0,
    };
    lc.magic(LABEL_MAGIC)?;
    let lcount = lc.u32("label count")? as usize;
    if lcount != count {
        lc.pos -= 4;
        return Err(lc.fail(format!("label count {lcount} does not match image count {count}")));
    }

    let px = rows * cols;
    let pixels = ic.take(count * px, "pixel data")?;
    let raw_labels = lc.take(count, "label data")?;
    if let Some(i) = raw_labels.iter().position(|&l| l > 9) {
        lc.pos = 8 + i;
        return Err(lc.fail(format!("label {} is not a digit", raw_labels[i])));
    }
    let samples = pixels
        .chunks_exact(px.max(1))
        .take(count)
        .map(|img| Tensor::from_vec(1, rows, cols, img.iter().map(|&p| f64::from(p) / 255.0).collect()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, raw_labels.iter().map(|&l| usize::from(l)).collect(), 10)
}

/// Writes a single-channel dataset as a gzipped IDX pair. Pixel values are
/// clamped to `[0, 1]` and quantized to bytes.
pub fn write_mnist_idx(data: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let (c, rows, cols) = data.input_shape().unwrap_or((1, 0, 0));
    if c != 1 {
        return Err(invalid(format!("IDX images need one channel, got {c}")));
    }
    if data.classes() > 256 {
        return Err(invalid("IDX labels are single bytes"));
    }
    let mut img = GzEncoder::new(BufWriter::new(File::create(images)?), Compression::default());
    for v in [IMAGE_MAGIC, data.len() as u32, rows as u32, cols as u32] {
        img.write_all(&v.to_be_bytes())?;
    }
    for s in data.samples() {
        let bytes: Vec<u8> = s.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        img.write_all(&bytes)?;
    }
    img.finish()?.flush()?;

    let mut lab = GzEncoder::new(BufWriter::new(File::create(labels)?), Compression::default());
    for v in [LABEL_MAGIC, data.len() as u32] {
        lab.write_all(&v.to_be_bytes())?;
    }
    lab.write_all(&data.labels().iter().map(|&l| l as u8).collect::<Vec<_>>())?;
    lab.finish()?.flush()?;
    Ok(())
}

/// Shape of a synthetic blob dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub classes: usize,
    pub count: usize,
    pub seed: u64,
}

/// Blob centre distance from the origin.
const CENTRE: f64 = 4.0;
const SPREAD: f64 = 0.5;
const TRUNCATE: f64 = 1.5;

/// Gaussian blobs centred at `4 e_k` for class `k`, with per-coordinate noise
/// of std 0.5 truncated at 1.5. Sample `i` has class `i mod classes`.
///
/// Class `k` then satisfies `x_k - x_j >= 4 - 3 = 1` for every `j != k`, so
/// the classes are linearly separable with margin at least one.
pub fn gen_synthetic(spec: SyntheticSpec) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(invalid("need at least two classes"));
    }
    if spec.dim < spec.classes {
        return Err(invalid(format!(
            "dimension {} cannot hold {} one-hot centres",
            spec.dim, spec.classes
        )));
    }
    if spec.count < spec.classes {
        return Err(invalid(format!(
            "{} points cannot cover {} classes",
            spec.count, spec.classes
        )));
    }
    let mut rng = RngState::new(spec.seed).derive(0x5e7).rng();
    let mut samples = Vec::with_capacity(spec.count);
    let mut labels = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let k = i % spec.classes;
        let x: Vec<f64> = (0..spec.dim)
            .map(|j| {
                let centre = if j == k { CENTRE } else { 0.0 };
                centre + (SPREAD * rng.standard_normal()).clamp(-TRUNCATE, TRUNCATE)
            })
            .collect();
        samples.push(Tensor::vector(x));
        labels.push(k);
    }
    Dataset::new(samples, labels, spec.classes)
}
