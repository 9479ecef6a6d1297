//! Binary checkpoint container.
//!
//! ```text
//! "COCOCKPT"                      8 bytes
//! version                         u32
//! config length, config (UTF-8)   u32, bytes
//! layer count                     u32
//!   per layer: inputs, outputs    u32, u32
//!   per layer: weights, biases    f64 x (outputs * inputs), f64 x outputs
//! tensor count                    u32
//!   per tensor: name len, name    u32, bytes
//!               rows, cols, data  u32, u32, f64 x (rows * cols)
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::mlp::{Dense, Mlp};
use crate::error::{Error, Result};
use crate::math::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"COCOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Resolved run configuration, as written by the trainer.
    pub config: String,
    pub model: Mlp,
    /// Loss-head parameters such as centroids or classifier weights.
    pub tensors: Vec<(String, Matrix)>,
}

fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    for &x in m.as_slice() {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::format("checkpoint", e.to_string()))
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        write_str(&mut w, &self.config)?;
        let layers = self.model.layers();
        w.write_u32::<LittleEndian>(layers.len() as u32)?;
        for l in layers {
            w.write_u32::<LittleEndian>(l.inputs() as u32)?;
            w.write_u32::<LittleEndian>(l.outputs() as u32)?;
        }
        for l in layers {
            write_matrix(&mut w, &l.weights)?;
            for &b in &l.biases {
                w.write_f64::<LittleEndian>(b)?;
            }
        }
        w.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for (name, m) in &self.tensors {
            write_str(&mut w, name)?;
            w.write_u32::<LittleEndian>(m.rows() as u32)?;
            w.write_u32::<LittleEndian>(m.cols() as u32)?;
            write_matrix(&mut w, m)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "missing COCOCKPT magic"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let config = read_str(&mut r)?;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = r.read_u32::<LittleEndian>()? as usize;
            let outputs = r.read_u32::<LittleEndian>()? as usize;
            shapes.push((inputs, outputs));
        }
        let mut layers = Vec::with_capacity(count);
        for (inputs, outputs) in shapes {
            let weights = Matrix::from_vec(outputs, inputs, read_f64s(&mut r, inputs * outputs)?)?;
            let biases = read_f64s(&mut r, outputs)?;
            layers.push(Dense { weights, biases });
        }
        let model = Mlp::from_layers(layers)?;
        let n_tensors = r.read_u32::<LittleEndian>()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name = read_str(&mut r)?;
            let rows = r.read_u32::<LittleEndian>()? as usize;
            let cols = r.read_u32::<LittleEndian>()? as usize;
            tensors.push((
                name,
                Matrix::from_vec(rows, cols, read_f64s(&mut r, rows * cols)?)?,
            ));
        }
        Ok(Self {
            config,
            model,
            tensors,
        })
    }
}
