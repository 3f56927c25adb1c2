//! Versioned binary weight files (magic `SBAW`).
//!
//! Layout, version 1, all integers and doubles little-endian:
//!
//! ```text
//! "SBAW" | u16 version
//! then 8 tensor records in fixed order
//!   (conv1 w/b, conv2 w/b, conv3 w/b, head w/b):
//! u8 kind | u8 ndim | ndim x u32 dims | product x f64
//! ```
//!
//! Kinds: 1 conv weight, 2 conv bias, 3 linear weight, 4 linear bias.
//! The loader checks kinds and shapes against the fixed architecture, so a
//! weight file can never be loaded into the wrong slot.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ConvLayer, MiniPadNet};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SBAW";
const VERSION: u16 = 1;

const KIND_CONV_WEIGHT: u8 = 1;
const KIND_CONV_BIAS: u8 = 2;
const KIND_LINEAR_WEIGHT: u8 = 3;
const KIND_LINEAR_BIAS: u8 = 4;

fn expected_records() -> [(u8, Vec<usize>); 8] {
    [
        (KIND_CONV_WEIGHT, vec![8, 1, 3, 3]),
        (KIND_CONV_BIAS, vec![8]),
        (KIND_CONV_WEIGHT, vec![16, 8, 3, 3]),
        (KIND_CONV_BIAS, vec![16]),
        (KIND_CONV_WEIGHT, vec![32, 16, 3, 3]),
        (KIND_CONV_BIAS, vec![32]),
        (KIND_LINEAR_WEIGHT, vec![1, 32]),
        (KIND_LINEAR_BIAS, vec![1]),
    ]
}

fn fill(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Corrupt("truncated file".into())
        } else {
            Error::Io(e)
        }
    })
}

fn write_record(w: &mut impl Write, kind: u8, tensor: &Tensor) -> std::io::Result<()> {
    w.write_all(&[kind, tensor.shape().len() as u8])?;
    for &dim in tensor.shape() {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for v in tensor.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_record(r: &mut impl Read, expect_kind: u8, expect_shape: &[usize]) -> Result<Tensor> {
    let mut head = [0u8; 2];
    fill(r, &mut head)?;
    if head[0] != expect_kind {
        return Err(Error::Corrupt(format!(
            "tensor kind {} where {expect_kind} was expected",
            head[0]
        )));
    }
    if head[1] as usize != expect_shape.len() {
        return Err(Error::Corrupt(format!(
            "tensor rank {} where {} was expected",
            head[1],
            expect_shape.len()
        )));
    }
    let mut shape = Vec::with_capacity(expect_shape.len());
    for _ in 0..expect_shape.len() {
        let mut b = [0u8; 4];
        fill(r, &mut b)?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    if shape != expect_shape {
        return Err(Error::Corrupt(format!(
            "tensor shape {shape:?} where {expect_shape:?} was expected"
        )));
    }
    let count: usize = shape.iter().product();
    let mut bytes = vec![0u8; count * 8];
    fill(r, &mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_values(&shape, values)
}

pub fn save_model(model: &MiniPadNet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_record(&mut w, KIND_CONV_WEIGHT, &model.conv1.weight)?;
    write_record(&mut w, KIND_CONV_BIAS, &model.conv1.bias)?;
    write_record(&mut w, KIND_CONV_WEIGHT, &model.conv2.weight)?;
    write_record(&mut w, KIND_CONV_BIAS, &model.conv2.bias)?;
    write_record(&mut w, KIND_CONV_WEIGHT, &model.conv3.weight)?;
    write_record(&mut w, KIND_CONV_BIAS, &model.conv3.bias)?;
    write_record(&mut w, KIND_LINEAR_WEIGHT, &model.head_weight)?;
    write_record(&mut w, KIND_LINEAR_BIAS, &model.head_bias)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MiniPadNet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    fill(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut vb = [0u8; 2];
    fill(&mut r, &mut vb)?;
    let version = u16::from_le_bytes(vb);
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }

    let spec = expected_records();
    let mut tensors = Vec::with_capacity(spec.len());
    for (kind, shape) in &spec {
        tensors.push(read_record(&mut r, *kind, shape)?);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Corrupt("trailing data after final tensor".into()));
    }

    let mut it = tensors.into_iter();
    let mut conv = || -> ConvLayer {
        ConvLayer {
            weight: it.next().unwrap(),
            bias: it.next().unwrap(),
        }
    };
    let conv1 = conv();
    let conv2 = conv();
    let conv3 = conv();
    let head_weight = it.next().unwrap();
    let head_bias = it.next().unwrap();
    Ok(MiniPadNet {
        conv1,
        conv2,
        conv3,
        head_weight,
        head_bias,
    })
}
