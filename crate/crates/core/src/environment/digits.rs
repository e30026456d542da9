//! Ten-class 28×28 digit task: IDX files when available, seeded synthetic
//! stroke glyphs otherwise.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, EnvError, MapSample};
use crate::tensor::Tensor;

pub const DIGIT_SIDE: usize = 28;
const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

type Stroke = ((f32, f32), (f32, f32));

const TL: (f32, f32) = (8.0, 5.0);
const TR: (f32, f32) = (20.0, 5.0);
const ML: (f32, f32) = (8.0, 14.0);
const MR: (f32, f32) = (20.0, 14.0);
const BL: (f32, f32) = (8.0, 23.0);
const BR: (f32, f32) = (20.0, 23.0);

fn strokes(digit: usize) -> Vec<Stroke> {
    match digit {
        0 => vec![(TL, TR), (TR, BR), (BR, BL), (BL, TL)],
        1 => vec![((14.0, 5.0), (14.0, 23.0)), ((10.5, 9.0), (14.0, 5.0))],
        2 => vec![(TL, TR), (TR, MR), (MR, BL), (BL, BR)],
        3 => vec![(TL, TR), (TR, BR), (BR, BL), ((11.0, 14.0), MR)],
        4 => vec![(TL, ML), (ML, MR), (TR, BR)],
        5 => vec![(TR, TL), (TL, ML), (ML, MR), (MR, BR), (BR, BL)],
        6 => vec![(TR, TL), (TL, BL), (BL, BR), (BR, MR), (MR, ML)],
        7 => vec![(TL, TR), (TR, (12.0, 23.0))],
        8 => vec![(TL, TR), (TR, BR), (BR, BL), (BL, TL), (ML, MR)],
        9 => vec![(MR, ML), (ML, TL), (TL, TR), (TR, BR), (BR, BL)],
        _ => unreachable!("ten digit classes"),
    }
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let t = ((wx * vx + wy * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

fn render_digit(digit: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let shift = (rng.gen_range(-2.0..=2.0f32), rng.gen_range(-2.0..=2.0f32));
    let thickness = rng.gen_range(2.2..3.2f32);
    let ink = rng.gen_range(0.8..1.0f32);
    let wobble = |rng: &mut ChaCha8Rng, (x, y): (f32, f32)| {
        (x + shift.0 + rng.gen_range(-1.0..=1.0f32), y + shift.1 + rng.gen_range(-1.0..=1.0f32))
    };
    let lines: Vec<Stroke> = strokes(digit)
        .into_iter()
        .map(|(a, b)| (wobble(rng, a), wobble(rng, b)))
        .collect();
    let mut img = vec![0f32; DIGIT_SIDE * DIGIT_SIDE];
    for y in 0..DIGIT_SIDE {
        for x in 0..DIGIT_SIDE {
            let p = (x as f32 + 0.5, y as f32 + 0.5);
            let d = lines.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f32::INFINITY, f32::min);
            let v = (thickness / 2.0 + 0.5 - d).clamp(0.0, 1.0) * ink;
            let noise = rng.gen_range(0.0..0.05f32);
            img[y * DIGIT_SIDE + x] = (v + noise).min(1.0);
        }
    }
    img
}

fn to_sample(pixels: Vec<f32>, label: usize) -> MapSample {
    MapSample {
        image: Tensor::new(vec![1, DIGIT_SIDE, DIGIT_SIDE], pixels).expect("28x28"),
        label,
        occlusion: vec![false; DIGIT_SIDE * DIGIT_SIDE],
    }
}

/// Balanced synthetic digit glyphs; train and test use disjoint streams.
pub fn synthetic_digits(seed: u64, n_train: usize, n_test: usize) -> Dataset {
    let make = |split: u64, count: usize| {
        (0..count)
            .map(|i| {
                let label = i % 10;
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(split.wrapping_mul(0xA5A5_A5A5)));
                rng.set_stream(i as u64);
                to_sample(render_digit(label, &mut rng), label)
            })
            .collect()
    };
    Dataset {
        labels: 10,
        seed,
        train: make(0, n_train),
        test: make(1, n_test),
    }
}

/// Digit task: reads IDX files from `source` when given, otherwise
/// generates synthetic glyphs.
pub fn mnist_task(source: Option<&Path>, seed: u64, n_train: usize, n_test: usize) -> Result<Dataset, EnvError> {
    match source {
        Some(dir) => {
            let mut ds = load_idx_dir(dir)?;
            ds.seed = seed;
            ds.train.truncate(n_train);
            ds.test.truncate(n_test);
            Ok(ds)
        }
        None => Ok(synthetic_digits(seed, n_train, n_test)),
    }
}

/// Loads `train-*-idx?-ubyte` and `t10k-*-idx?-ubyte` from a directory.
pub fn load_idx_dir(dir: &Path) -> Result<Dataset, EnvError> {
    let split = |prefix: &str| -> Result<Vec<MapSample>, EnvError> {
        let images = read_idx_images(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
        let labels = read_idx_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
        if images.len() != labels.len() {
            return Err(EnvError::Parse {
                path: dir.display().to_string(),
                offset: 0,
                reason: format!("{} images but {} labels", images.len(), labels.len()),
            });
        }
        Ok(images.into_iter().zip(labels).map(|(px, l)| to_sample(px, l as usize)).collect())
    };
    Ok(Dataset {
        labels: 10,
        seed: 0,
        train: split("train")?,
        test: split("t10k")?,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, EnvError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| EnvError::Parse {
            path: path.display().to_string(),
            offset,
            reason: "unexpected end of file".into(),
        })
}

/// Reads an IDX3 unsigned-byte image file of 28×28 images as `[0,1]` floats.
pub fn read_idx_images(path: &Path) -> Result<Vec<Vec<f32>>, EnvError> {
    let bytes = fs::read(path)?;
    let err = |offset, reason: String| EnvError::Parse {
        path: path.display().to_string(),
        offset,
        reason,
    };
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_IMAGES {
        return Err(err(0, format!("bad magic {magic:#010x}")));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    if rows != DIGIT_SIDE || cols != DIGIT_SIDE {
        return Err(err(8, format!("expected 28x28 images, found {rows}x{cols}")));
    }
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(err(bytes.len(), format!("truncated: need {need} bytes")));
    }
    Ok(bytes[16..need]
        .chunks(rows * cols)
        .map(|img| img.iter().map(|&b| f32::from(b) / 255.0).collect())
        .collect())
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, EnvError> {
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_LABELS {
        return Err(EnvError::Parse {
            path: path.display().to_string(),
            offset: 0,
            reason: format!("bad magic {magic:#010x}"),
        });
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let body = bytes.get(8..8 + n).ok_or_else(|| EnvError::Parse {
        path: path.display().to_string(),
        offset: bytes.len(),
        reason: format!("truncated: need {} bytes", 8 + n),
    })?;
    if let Some(pos) = body.iter().position(|&l| l > 9) {
        return Err(EnvError::Parse {
            path: path.display().to_string(),
            offset: 8 + pos,
            reason: format!("label {} out of range", body[pos]),
        });
    }
    Ok(body.to_vec())
}

/// Writes 28×28 images (values in `[0,1]`, rounded to bytes) as IDX3.
pub fn write_idx_images(path: &Path, images: &[Vec<f32>]) -> Result<(), EnvError> {
    let mut out = Vec::with_capacity(16 + images.len() * DIGIT_SIDE * DIGIT_SIDE);
    for v in [IDX_IMAGES, images.len() as u32, DIGIT_SIDE as u32, DIGIT_SIDE as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend(img.iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), EnvError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_digits_are_seeded_and_balanced() {
        let a = synthetic_digits(4, 30, 10);
        assert_eq!(a, synthetic_digits(4, 30, 10));
        assert_ne!(a, synthetic_digits(5, 30, 10));
        for l in 0..10 {
            assert_eq!(a.train.iter().filter(|s| s.label == l).count(), 3);
        }
        assert!(a.train.iter().all(|s| s.image.data().iter().all(|&x| (0.0..=1.0).contains(&x))));
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_digits(1, 6, 4);
        let quantize = |s: &MapSample| s.image.data().iter().map(|&x| (x * 255.0).round() / 255.0).collect::<Vec<f32>>();
        for (prefix, split) in [("train", &ds.train), ("t10k", &ds.test)] {
            let imgs: Vec<_> = split.iter().map(|s| s.image.data().to_vec()).collect();
            let labels: Vec<u8> = split.iter().map(|s| s.label as u8).collect();
            write_idx_images(&dir.path().join(format!("{prefix}-images-idx3-ubyte")), &imgs).unwrap();
            write_idx_labels(&dir.path().join(format!("{prefix}-labels-idx1-ubyte")), &labels).unwrap();
        }
        let loaded = load_idx_dir(dir.path()).unwrap();
        assert_eq!(loaded.train.len(), 6);
        assert_eq!(loaded.test.len(), 4);
        for (a, b) in loaded.train.iter().zip(&ds.train) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.image.data(), &quantize(b)[..]);
        }

        let path = dir.path().join("train-images-idx3-ubyte");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..100]).unwrap();
        match load_idx_dir(dir.path()) {
            Err(EnvError::Parse { offset, .. }) => assert_eq!(offset, 100),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::write(&path, [0u8, 0, 8, 1]).unwrap();
        assert!(matches!(read_idx_images(&path), Err(EnvError::Parse { offset: 0, .. })));
    }
}
