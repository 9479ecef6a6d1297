use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{l2_norm, Matrix};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Labeled input vectors. Labels are 0-based class indices below `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::DimMismatch {
                expected: inputs.rows(),
                found: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows `indices` as a new input matrix and label list.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let mut m = Matrix::zeros(indices.len(), self.input_dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        (m, labels)
    }
}

/// `classes` Gaussian clusters around random unit directions.
///
/// Each class draws a direction uniformly on the unit sphere of `input_dim`;
/// its samples are that direction plus isotropic noise of standard deviation
/// `spread`. Samples are laid out class by class.
pub fn synth_clusters(
    classes: usize,
    input_dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidK(classes));
    }
    if per_class == 0 || input_dim == 0 {
        return Err(Error::InvalidArgument(
            "per_class and input_dim must be positive".into(),
        ));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "spread must be finite and >= 0, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions = Vec::with_capacity(classes);
    while directions.len() < classes {
        let d: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = l2_norm(&d);
        if n > 1e-12 {
            directions.push(d.into_iter().map(|x| x / n).collect::<Vec<f64>>());
        }
    }
    let mut inputs = Matrix::zeros(classes * per_class, input_dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (k, dir) in directions.iter().enumerate() {
        for s in 0..per_class {
            let row = inputs.row_mut(k * per_class + s);
            for (x, d) in row.iter_mut().zip(dir) {
                let noise: f64 = rng.sample(StandardNormal);
                *x = d + spread * noise;
            }
            labels.push(k);
        }
    }
    Dataset::new(inputs, labels, classes, Split::Train)
}

/// Header and raw bytes of an IDX unsigned-byte tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn parse_idx(bytes: &[u8], magic: u32) -> Result<IdxTensor> {
    let ndims = (magic & 0xff) as usize;
    let header_len = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile {
            expected: 4,
            found: bytes.len(),
        });
    }
    let mut cur = Cursor::new(bytes);
    let found = cur.read_u32::<BigEndian>()?;
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    if bytes.len() < header_len {
        return Err(Error::TruncatedFile {
            expected: header_len,
            found: bytes.len(),
        });
    }
    let dims = (0..ndims)
        .map(|_| cur.read_u32::<BigEndian>().map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let payload: usize = dims.iter().product();
    let expected = header_len + payload;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header_len..expected].to_vec(),
    })
}

/// Parses an IDX image file (magic 0x00000803, dims count x rows x cols).
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxTensor> {
    parse_idx(bytes, IDX_IMAGES_MAGIC)
}

/// Parses an IDX label file (magic 0x00000801, one byte per item).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<IdxTensor> {
    parse_idx(bytes, IDX_LABELS_MAGIC)
}

/// Loads an IDX image/label pair. Pixels are scaled to [0, 1]; digit `d`
/// becomes class index `d` (label `d + 1` in exported files).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    idx_dataset(&images, &labels)
}

pub fn idx_dataset(images: &IdxTensor, labels: &IdxTensor) -> Result<Dataset> {
    let (count, pixels) = (images.dims[0], images.dims[1] * images.dims[2]);
    if labels.dims[0] != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.dims[0],
        });
    }
    let inputs = Matrix::from_vec(
        count,
        pixels,
        images.data.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    let labels: Vec<usize> = labels.data.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(inputs, labels, classes, Split::Train)
}

pub fn write_idx_images<W: Write>(
    mut w: W,
    rows: usize,
    cols: usize,
    images: &[Vec<u8>],
) -> Result<()> {
    w.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    for d in [images.len(), rows, cols] {
        w.write_u32::<BigEndian>(d as u32)?;
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::DimMismatch {
                expected: rows * cols,
                found: img.len(),
            });
        }
        w.write_all(img)?;
    }
    Ok(())
}

pub fn write_idx_labels<W: Write>(mut w: W, labels: &[u8]) -> Result<()> {
    w.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    w.write_all(labels)?;
    Ok(())
}
