use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// Pixels scaled to [0, 1], row-major per image.
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<f32>,
    },
    Labels(Vec<u8>),
}

fn be_u32(buf: &[u8], at: usize) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("IDX length error: header truncated at byte {at}")))
}

/// Parses an IDX buffer (images or labels).
pub fn parse_idx(buf: &[u8]) -> Result<IdxData> {
    let magic = be_u32(buf, 0).map_err(|_| {
        Error::Format(format!("IDX length error: only {} bytes, no magic", buf.len()))
    })?;
    let (dims, header) = match magic {
        IMAGES_MAGIC => (3, 16),
        LABELS_MAGIC => (1, 8),
        _ => {
            return Err(Error::Format(format!(
                "bad IDX magic {:02x} {:02x} {:02x} {:02x}",
                buf[0], buf[1], buf[2], buf[3]
            )))
        }
    };
    let sizes: Vec<usize> = (0..dims)
        .map(|i| be_u32(buf, 4 + 4 * i).map(|v| v as usize))
        .collect::<Result<_>>()?;
    let want: usize = sizes.iter().product();
    let body = &buf[header..];
    if body.len() < want {
        return Err(Error::Format(format!(
            "IDX length error: header promises {want} bytes, file has {}",
            body.len()
        )));
    }
    let body = &body[..want];
    Ok(if dims == 3 {
        IdxData::Images {
            count: sizes[0],
            rows: sizes[1],
            cols: sizes[2],
            pixels: body.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    } else {
        IdxData::Labels(body.to_vec())
    })
}

/// Reads an IDX file; gzip-compressed files are detected by their magic.
pub fn read_idx(path: &Path) -> Result<IdxData> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        parse_idx(&out)
    } else {
        parse_idx(&raw)
    }
}

#[derive(Clone, Debug)]
pub struct MnistSet {
    /// `count × 28 × 28`, values in [0, 1].
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
}

impl MnistSet {
    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.images[i * n..(i + 1) * n]
    }

    /// First `n` samples.
    pub fn truncate(mut self, n: usize) -> Self {
        let n = n.min(self.count);
        self.images.truncate(n * self.rows * self.cols);
        self.labels.truncate(n);
        self.count = n;
        self
    }
}

fn find(dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Io {
        path: dir.join(stem),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found (plain or .gz)"),
    })
}

/// Loads `train-*` or `t10k-*` images and labels from `dir`.
pub fn load_mnist(dir: &Path, train: bool) -> Result<MnistSet> {
    let prefix = if train { "train" } else { "t10k" };
    let images = read_idx(&find(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = read_idx(&find(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    match (images, labels) {
        (IdxData::Images { count, rows, cols, pixels }, IdxData::Labels(labels)) => {
            if labels.len() != count {
                return Err(Error::Format(format!(
                    "{count} images but {} labels in {}",
                    labels.len(),
                    dir.display()
                )));
            }
            Ok(MnistSet {
                images: pixels,
                labels,
                count,
                rows,
                cols,
            })
        }
        _ => Err(Error::Format(format!("{}: images/labels files swapped", dir.display()))),
    }
}
