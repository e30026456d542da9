//! Dataset directory format.
//!
//! ```text
//! <dir>/manifest.txt        text: "star-swarm-dataset 1", then `key value`
//!                           lines (labels, channels, height, width, train,
//!                           test, seed) and one `sample <split> <index>
//!                           <label>` line per sample
//! <dir>/<split>/<index>.bin two tensors back to back: the image [C,H,W]
//!                           and the occlusion mask [H,W] (0.0 / 1.0)
//! ```
//!
//! Each tensor is `u32 rank`, `rank × u32 dims`, then the row-major
//! `f32` values; every number is little-endian.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, EnvError, MapSample};
use crate::tensor::Tensor;

const MAGIC: &str = "star-swarm-dataset";
const VERSION: u32 = 1;

fn encode_tensor(out: &mut Vec<u8>, shape: &[usize], data: impl Iterator<Item = f32>) {
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn decode_tensor(bytes: &[u8], offset: &mut usize, path: &Path) -> Result<(Vec<usize>, Vec<f32>), EnvError> {
    let err = |offset: usize, reason: &str| EnvError::Parse {
        path: path.display().to_string(),
        offset,
        reason: reason.into(),
    };
    let word = |offset: &mut usize| -> Result<[u8; 4], EnvError> {
        let b = bytes.get(*offset..*offset + 4).ok_or_else(|| err(*offset, "unexpected end of file"))?;
        *offset += 4;
        Ok([b[0], b[1], b[2], b[3]])
    };
    let rank = u32::from_le_bytes(word(offset)?) as usize;
    if rank == 0 || rank > 4 {
        return Err(err(*offset - 4, "unsupported tensor rank"));
    }
    let shape = (0..rank)
        .map(|_| word(offset).map(|w| u32::from_le_bytes(w) as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| word(offset).map(f32::from_le_bytes))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((shape, data))
}

/// Writes a dataset in the directory format above.
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<(), EnvError> {
    let (c, h, w) = ds.dims();
    let mut manifest = String::new();
    writeln!(manifest, "{MAGIC} {VERSION}").ok();
    for (k, v) in [
        ("labels", ds.labels as u64),
        ("channels", c as u64),
        ("height", h as u64),
        ("width", w as u64),
        ("train", ds.train.len() as u64),
        ("test", ds.test.len() as u64),
        ("seed", ds.seed),
    ] {
        writeln!(manifest, "{k} {v}").ok();
    }
    for (split, samples) in [("train", &ds.train), ("test", &ds.test)] {
        fs::create_dir_all(dir.join(split))?;
        for (i, s) in samples.iter().enumerate() {
            writeln!(manifest, "sample {split} {i} {}", s.label).ok();
            let mut bytes = Vec::new();
            encode_tensor(&mut bytes, s.image.shape(), s.image.data().iter().copied());
            encode_tensor(&mut bytes, &[h, w], s.occlusion.iter().map(|&b| if b { 1.0 } else { 0.0 }));
            fs::write(dir.join(split).join(format!("{i:06}.bin")), bytes)?;
        }
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Reads a dataset written by [`export_dataset`].
pub fn import_dataset(dir: &Path) -> Result<Dataset, EnvError> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path)?;
    let mut offset = 0;
    let mut fields = std::collections::HashMap::new();
    let mut samples: Vec<(String, usize, usize)> = Vec::new();
    let perr = |offset: usize, reason: String| EnvError::Parse {
        path: path.display().to_string(),
        offset,
        reason,
    };
    for (n, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<u64>().map_err(|e| perr(offset, format!("`{s}`: {e}")));
        match parts.as_slice() {
            [MAGIC, v] if n == 0 => {
                if num(v)? != u64::from(VERSION) {
                    return Err(perr(offset, format!("unsupported version {v}")));
                }
            }
            _ if n == 0 => return Err(perr(0, "missing dataset header".into())),
            ["sample", split, idx, label] => samples.push((split.to_string(), num(idx)? as usize, num(label)? as usize)),
            [key, value] => {
                fields.insert(key.to_string(), num(value)?);
            }
            [] => {}
            _ => return Err(perr(offset, format!("malformed line `{line}`"))),
        }
        offset += line.len() + 1;
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| perr(0, format!("missing `{k}`")));
    let labels = get("labels")? as usize;
    let mut ds = Dataset {
        labels,
        seed: get("seed")?,
        train: Vec::new(),
        test: Vec::new(),
    };
    for (split, idx, label) in samples {
        let file = dir.join(&split).join(format!("{idx:06}.bin"));
        let bytes = fs::read(&file)?;
        let mut at = 0;
        let (shape, data) = decode_tensor(&bytes, &mut at, &file)?;
        let (_, mask) = decode_tensor(&bytes, &mut at, &file)?;
        let image = Tensor::new(shape, data).map_err(|e| perr(0, e.to_string()))?;
        let sample = MapSample {
            image,
            label,
            occlusion: mask.iter().map(|&m| m != 0.0).collect(),
        };
        match split.as_str() {
            "train" => ds.train.push(sample),
            "test" => ds.test.push(sample),
            other => return Err(perr(0, format!("unknown split `{other}`"))),
        }
    }
    if ds.train.len() as u64 != get("train")? || ds.test.len() as u64 != get("test")? {
        return Err(perr(0, "sample count does not match header".into()));
    }
    Ok(ds)
}
