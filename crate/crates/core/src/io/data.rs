use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{KaemError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Fmnist,
    Synthetic2D(String),
}

/// Examples as flat row-major vectors with every value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub examples: Vec<Vec<f64>>,
    /// Shape of one example, e.g. `[rows, cols]` or `[2]`.
    pub dims: Vec<usize>,
    /// Class or mixture-component index per example when known.
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Keep the first `n` examples.
    pub fn truncate(&mut self, n: usize) {
        self.examples.truncate(n);
        if let Some(l) = &mut self.labels {
            l.truncate(n);
        }
    }
}

struct IdxFile {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn parse_idx(bytes: &[u8], expected: u32) -> Result<IdxFile> {
    if bytes.len() < 4 {
        return Err(KaemError::Truncated(format!(
            "IDX header needs 4 bytes, file has {}",
            bytes.len()
        )));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if magic != expected {
        return Err(KaemError::BadMagic {
            expected,
            found: magic,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(KaemError::Truncated(format!(
            "IDX header needs {header} bytes, file has {}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < count {
        return Err(KaemError::Truncated(format!(
            "IDX body needs {count} bytes, file has {}",
            body.len()
        )));
    }
    Ok(IdxFile {
        dims,
        data: body[..count].to_vec(),
    })
}

/// Parse big-endian IDX bytes. Images (0x803) give one vector per image,
/// labels (0x801) one single-value vector per label; bytes are divided by 255.
pub fn parse_idx_dataset(bytes: &[u8], kind: DatasetKind) -> Result<Dataset> {
    let magic = if bytes.len() >= 4 {
        u32::from_be_bytes(bytes[..4].try_into().unwrap())
    } else {
        IDX_IMAGES_MAGIC
    };
    let expected = if magic == IDX_LABELS_MAGIC {
        IDX_LABELS_MAGIC
    } else {
        IDX_IMAGES_MAGIC
    };
    let idx = parse_idx(bytes, expected)?;
    let n = idx.dims[0];
    let item_dims: Vec<usize> = if idx.dims.len() > 1 {
        idx.dims[1..].to_vec()
    } else {
        vec![1]
    };
    let per: usize = item_dims.iter().product();
    let examples = (0..n)
        .map(|i| {
            idx.data[i * per..(i + 1) * per]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect()
        })
        .collect();
    Ok(Dataset {
        kind,
        examples,
        dims: item_dims,
        labels: None,
    })
}

pub fn load_idx(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let kind = if name.contains("fashion") || name.contains("fmnist") {
        DatasetKind::Fmnist
    } else {
        DatasetKind::Mnist
    };
    parse_idx_dataset(&bytes, kind)
}

/// Raw label bytes of a 0x801 file.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path)?;
    let idx = parse_idx(&bytes, IDX_LABELS_MAGIC)?;
    Ok(idx.data.iter().map(|&b| b as usize).collect())
}

/// Centre of rings8 mode `j`.
pub fn rings8_mean(j: usize) -> (f64, f64) {
    let a = 2.0 * PI * j as f64 / 8.0;
    (0.5 + 0.35 * a.cos(), 0.5 + 0.35 * a.sin())
}

/// Synthetic 2D sets: `rings8` (8 Gaussians, std 0.05, on a radius 0.35
/// circle around (0.5, 0.5)) and `moons` (two interleaved half circles).
/// Points are clipped into [0, 1]².
pub fn synth2d(name: &str, n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    let clip = |v: f64| v.clamp(0.0, 1.0);
    let mut examples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    match name {
        "rings8" => {
            let noise = Normal::new(0.0, 0.05).unwrap();
            for _ in 0..n {
                let j = rng.random_range(0..8);
                let (mx, my) = rings8_mean(j);
                examples.push(vec![
                    clip(mx + noise.sample(rng)),
                    clip(my + noise.sample(rng)),
                ]);
                labels.push(j);
            }
        }
        "moons" => {
            let noise = Normal::new(0.0, 0.05).unwrap();
            for _ in 0..n {
                let j = rng.random_range(0..2);
                let th = rng.random::<f64>() * PI;
                let (x, y) = if j == 0 {
                    (th.cos(), th.sin())
                } else {
                    (1.0 - th.cos(), 0.5 - th.sin())
                };
                // the clean moons span x ∈ [-1, 2], y ∈ [-0.5, 1]
                let x = (x + noise.sample(rng) + 1.25) / 3.5;
                let y = (y + noise.sample(rng) + 1.0) / 2.5;
                examples.push(vec![clip(x), clip(y)]);
                labels.push(j);
            }
        }
        other => {
            return Err(KaemError::InvalidConfig(format!(
                "unknown synthetic dataset '{other}' (expected rings8 or moons)"
            )))
        }
    }
    Ok(Dataset {
        kind: DatasetKind::Synthetic2D(name.to_string()),
        examples,
        dims: vec![2],
        labels: Some(labels),
    })
}
