//! Dataset persistence in two interchangeable layouts:
//!
//! * a directory with `manifest.json` (config, fingerprint, sample index)
//!   and one raw little-endian f64 file per image, convenient for poking at
//!   individual samples;
//! * a single packed container (magic `SBAD`, version 1) holding the same
//!   information, convenient for shipping.
//!
//! Both round-trip datasets bit-exactly, including split fingerprint tags.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{Dataset, GenConfig, Group, Label, Sample, IMAGE_SIDE};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SBAD";
const VERSION: u16 = 1;
const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Upper bounds applied while reading, so corrupt headers fail cleanly
/// instead of attempting absurd allocations.
const MAX_HEADER_BYTES: u32 = 1 << 20;
const MAX_SAMPLES: u64 = 100_000_000;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: GenConfig,
    fingerprint: String,
    samples: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: u64,
    label: Label,
    group: Group,
    file: String,
}

fn label_byte(l: Label) -> u8 {
    match l {
        Label::BonaFide => 0,
        Label::Attack => 1,
    }
}

fn byte_label(b: u8) -> Result<Label> {
    match b {
        0 => Ok(Label::BonaFide),
        1 => Ok(Label::Attack),
        other => Err(Error::Corrupt(format!("unknown label byte {other}"))),
    }
}

fn group_byte(g: Group) -> u8 {
    match g {
        Group::A => 0,
        Group::B => 1,
    }
}

fn byte_group(b: u8) -> Result<Group> {
    match b {
        0 => Ok(Group::A),
        1 => Ok(Group::B),
        other => Err(Error::Corrupt(format!("unknown group byte {other}"))),
    }
}

/// A split dataset carries `hash|tag...`; the leading hash must still be
/// the hash of the stored config.
fn check_fingerprint(fingerprint: &str, cfg: &GenConfig) -> Result<()> {
    let base = fingerprint.split('|').next().unwrap_or("");
    if base != cfg.fingerprint() {
        return Err(Error::Corrupt(format!(
            "fingerprint {fingerprint} does not match stored config (expected prefix {})",
            cfg.fingerprint()
        )));
    }
    Ok(())
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

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    fill(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    fill(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    fill(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    fill(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes `manifest.json` plus one raw image file per sample into `dir`
/// (created if missing).
pub fn save_dataset_dir(data: &Dataset, cfg: &GenConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(data.samples.len());
    for s in &data.samples {
        let file = format!("sample_{:08}.f64", s.id);
        let mut w = BufWriter::new(File::create(dir.join(&file))?);
        write_f64s(&mut w, s.image.values())?;
        w.flush()?;
        entries.push(ManifestEntry {
            id: s.id,
            label: s.label,
            group: s.group,
            file,
        });
    }
    let manifest = Manifest {
        config: cfg.clone(),
        fingerprint: data.gen_fingerprint.clone(),
        samples: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_dataset_dir(dir: &Path) -> Result<(Dataset, GenConfig)> {
    let json = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&json)?;
    check_fingerprint(&manifest.fingerprint, &manifest.config)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let mut r = BufReader::new(File::open(dir.join(&entry.file))?);
        let values = read_f64s(&mut r, PIXELS)?;
        samples.push(Sample {
            id: entry.id,
            image: Tensor::from_values(&[1, IMAGE_SIDE, IMAGE_SIDE], values)?,
            label: entry.label,
            group: entry.group,
        });
    }
    Ok((
        Dataset {
            samples,
            gen_fingerprint: manifest.fingerprint.clone(),
        },
        manifest.config,
    ))
}

/// Packed single-file layout, version 1:
///
/// ```text
/// "SBAD" | u16 version | u32 config-JSON len | bytes
///        | u32 fingerprint len | bytes | u64 sample count
///        | per sample: u64 id | u8 label | u8 group | 1024 x f64
/// ```
///
/// All integers and doubles little-endian.
pub fn save_dataset_packed(data: &Dataset, cfg: &GenConfig, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg_json = serde_json::to_vec(cfg)?;
    w.write_all(&(cfg_json.len() as u32).to_le_bytes())?;
    w.write_all(&cfg_json)?;
    let fp = data.gen_fingerprint.as_bytes();
    w.write_all(&(fp.len() as u32).to_le_bytes())?;
    w.write_all(fp)?;
    w.write_all(&(data.samples.len() as u64).to_le_bytes())?;
    for s in &data.samples {
        w.write_all(&s.id.to_le_bytes())?;
        w.write_all(&[label_byte(s.label), group_byte(s.group)])?;
        write_f64s(&mut w, s.image.values())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset_packed(path: &Path) -> Result<(Dataset, GenConfig)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    fill(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }

    let cfg_len = read_u32(&mut r)?;
    if cfg_len > MAX_HEADER_BYTES {
        return Err(Error::Corrupt(format!("config block of {cfg_len} bytes")));
    }
    let mut cfg_json = vec![0u8; cfg_len as usize];
    fill(&mut r, &mut cfg_json)?;
    let cfg: GenConfig = serde_json::from_slice(&cfg_json)?;

    let fp_len = read_u32(&mut r)?;
    if fp_len > MAX_HEADER_BYTES {
        return Err(Error::Corrupt(format!("fingerprint block of {fp_len} bytes")));
    }
    let mut fp_bytes = vec![0u8; fp_len as usize];
    fill(&mut r, &mut fp_bytes)?;
    let fingerprint = String::from_utf8(fp_bytes)
        .map_err(|_| Error::Corrupt("fingerprint is not UTF-8".into()))?;
    check_fingerprint(&fingerprint, &cfg)?;

    let count = read_u64(&mut r)?;
    if count > MAX_SAMPLES {
        return Err(Error::Corrupt(format!("sample count {count}")));
    }
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = read_u64(&mut r)?;
        let mut lg = [0u8; 2];
        fill(&mut r, &mut lg)?;
        let label = byte_label(lg[0])?;
        let group = byte_group(lg[1])?;
        let values = read_f64s(&mut r, PIXELS)?;
        samples.push(Sample {
            id,
            image: Tensor::from_values(&[1, IMAGE_SIDE, IMAGE_SIDE], values)?,
            label,
            group,
        });
    }
    Ok((
        Dataset {
            samples,
            gen_fingerprint: fingerprint,
        },
        cfg,
    ))
}
