//! Procedural stand-in for a satellite map dataset: seeded per-label
//! layouts with short-term jitter, optionally covered by clouds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, MapSample};
use crate::tensor::Tensor;

const CHANNELS: usize = 3;
const MAX_SHIFT: i64 = 4;
const BRIGHTNESS_JITTER: f32 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudSettings {
    pub count: usize,
    /// Target fraction of occluded pixels.
    pub coverage: f64,
}

fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Noise-free layout for one label.
fn prototype(seed: u64, label: usize, height: usize, width: usize) -> Vec<f32> {
    let mut rng = stream(seed, 1, label as u64);
    let (h, w) = (height as f32, width as f32);
    let mut img = vec![0f32; CHANNELS * height * width];
    let ground: [f32; CHANNELS] = [rng.gen_range(0.15..0.45), rng.gen_range(0.25..0.55), rng.gen_range(0.1..0.35)];
    for c in 0..CHANNELS {
        img[c * height * width..(c + 1) * height * width].fill(ground[c]);
    }
    let paint = |img: &mut [f32], x: usize, y: usize, col: [f32; CHANNELS]| {
        for c in 0..CHANNELS {
            img[(c * height + y) * width + x] = col[c];
        }
    };
    // Density of each element type grows with the label so classes differ
    // in texture as well as arrangement.
    let buildings = 6 + 5 * label;
    let roads = 1 + label % 4;
    let groves = 3 + (label * 7) % 9;
    for _ in 0..roads {
        let horizontal = rng.gen_bool(0.5);
        let at = rng.gen_range(0.1..0.9) * if horizontal { h } else { w };
        let half = rng.gen_range(1.5..3.5f32);
        let col = [0.75, 0.72, 0.68];
        for y in 0..height {
            for x in 0..width {
                let d = if horizontal { y as f32 - at } else { x as f32 - at };
                if d.abs() <= half {
                    paint(&mut img, x, y, col);
                }
            }
        }
    }
    for _ in 0..groves {
        let (cx, cy) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
        let r = rng.gen_range(3.0..0.12 * w);
        let col = [0.05, rng.gen_range(0.3..0.5), 0.08];
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                let wobble = 1.0 + 0.25 * ((dx * 0.7).sin() * (dy * 0.9).cos());
                if (dx * dx + dy * dy).sqrt() <= r * wobble {
                    paint(&mut img, x, y, col);
                }
            }
        }
    }
    for _ in 0..buildings {
        let bw = rng.gen_range(3..(width / 8).max(4));
        let bh = rng.gen_range(3..(height / 8).max(4));
        let x0 = rng.gen_range(0..width - bw);
        let y0 = rng.gen_range(0..height - bh);
        let tone = rng.gen_range(0.55..0.95f32);
        let col = [tone, tone * 0.9, tone * 0.85];
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                paint(&mut img, x, y, col);
            }
        }
    }
    img
}

fn jitter(proto: &[f32], height: usize, width: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let dx = rng.gen_range(-MAX_SHIFT..=MAX_SHIFT);
    let dy = rng.gen_range(-MAX_SHIFT..=MAX_SHIFT);
    let gain = 1.0 + rng.gen_range(-BRIGHTNESS_JITTER..=BRIGHTNESS_JITTER);
    let mut out = vec![0f32; proto.len()];
    for c in 0..CHANNELS {
        for y in 0..height {
            let sy = (y as i64 - dy).clamp(0, height as i64 - 1) as usize;
            for x in 0..width {
                let sx = (x as i64 - dx).clamp(0, width as i64 - 1) as usize;
                out[(c * height + y) * width + x] = (proto[(c * height + sy) * width + sx] * gain).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Balanced dataset of `labels` procedural layouts. Train and test samples
/// use disjoint jitter streams.
pub fn generate_maps(
    seed: u64,
    labels: usize,
    n_train: usize,
    n_test: usize,
    height: usize,
    width: usize,
    clouds: Option<CloudSettings>,
) -> Dataset {
    assert!(labels >= 2, "need at least two labels");
    let protos: Vec<_> = (0..labels).map(|l| prototype(seed, l, height, width)).collect();
    let make = |split: u64, count: usize| -> Vec<MapSample> {
        (0..count)
            .map(|i| {
                let label = i % labels;
                let mut rng = stream(seed, 2 + split, i as u64);
                let data = jitter(&protos[label], height, width, &mut rng);
                let sample = MapSample {
                    image: Tensor::new(vec![CHANNELS, height, width], data).expect("shape"),
                    label,
                    occlusion: vec![false; height * width],
                };
                match clouds {
                    Some(cs) => apply_clouds(&sample, &mut rng, cs.count, cs.coverage),
                    None => sample,
                }
            })
            .collect()
    };
    Dataset {
        labels,
        seed,
        train: make(0, n_train),
        test: make(1, n_test),
    }
}

/// Covers the map with `count` soft-edged elliptical clouds scaled so that
/// the occluded fraction lands on `coverage`.
pub fn apply_clouds<R: Rng>(map: &MapSample, rng: &mut R, count: usize, coverage: f64) -> MapSample {
    if count == 0 {
        return map.clone();
    }
    assert!(coverage > 0.0 && coverage < 1.0, "coverage must lie in (0, 1)");
    let (c, h, w) = (map.channels(), map.height(), map.width());
    let scale = h.min(w) as f64;
    let blobs: Vec<(f64, f64, f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let cx = rng.gen_range(0.0..w as f64);
            let cy = rng.gen_range(0.0..h as f64);
            let r = rng.gen_range(0.5..1.5) * scale;
            let aspect = rng.gen_range(0.6..1.6f64);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            (cx, cy, r * aspect, r / aspect, theta.cos(), theta.sin())
        })
        .collect();
    // Unit-scale normalized distance to the nearest cloud; a cloud scaled
    // by `s` covers exactly the pixels with distance < s.
    let dist: Vec<f64> = (0..h * w)
        .map(|p| {
            let (x, y) = ((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
            blobs
                .iter()
                .map(|&(cx, cy, rx, ry, co, si)| {
                    let (dx, dy) = (x - cx, y - cy);
                    let (u, v) = (dx * co + dy * si, -dx * si + dy * co);
                    ((u / rx).powi(2) + (v / ry).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut sorted = dist.clone();
    sorted.sort_by(f64::total_cmp);
    let target = ((coverage * (h * w) as f64).round() as usize).clamp(1, h * w - 1);
    let s = 0.5 * (sorted[target - 1] + sorted[target]);
    let edge = 0.15 * s;
    let mut image = map.image.clone();
    let mut occlusion = map.occlusion.clone();
    let data = image.data_mut();
    for (p, &d) in dist.iter().enumerate() {
        // Blend weight ramps from 0 at s+edge to 1 at s−edge.
        let alpha = ((s + edge - d) / (2.0 * edge)).clamp(0.0, 1.0) as f32;
        if alpha <= 0.0 {
            continue;
        }
        let covered = d < s;
        let texture = 0.88 + 0.12 * rng.gen::<f32>();
        for ch in 0..c {
            let i = ch * h * w + p;
            data[i] = if covered { texture } else { data[i] * (1.0 - alpha) + texture * alpha };
        }
        if covered {
            occlusion[p] = true;
        }
    }
    MapSample {
        image,
        label: map.label,
        occlusion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let a = generate_maps(5, 4, 12, 4, 32, 32, None);
        let b = generate_maps(5, 4, 12, 4, 32, 32, None);
        assert_eq!(a, b);
        for l in 0..4 {
            assert_eq!(a.train.iter().filter(|s| s.label == l).count(), 3);
        }
        assert_ne!(a.train[0].image, a.test[0].image);
    }

    #[test]
    fn prototypes_differ_between_labels() {
        let protos: Vec<_> = (0..6).map(|l| prototype(9, l, 128, 128)).collect();
        for i in 0..6 {
            for j in i + 1..6 {
                let diff: f32 =
                    protos[i].iter().zip(&protos[j]).map(|(a, b)| (a - b).abs()).sum::<f32>() / protos[i].len() as f32;
                assert!(diff > 0.05, "labels {i},{j}: {diff}");
            }
        }
    }

    #[test]
    fn cloud_coverage_hits_target() {
        let ds = generate_maps(3, 2, 2, 0, 128, 128, None);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clouded = apply_clouds(&ds.train[0], &mut rng, 80, 0.4);
        let f = clouded.occluded_fraction();
        assert!((0.35..=0.45).contains(&f), "{f}");
        for (p, &m) in clouded.occlusion.iter().enumerate() {
            if m {
                assert!(clouded.image.data()[p] >= 0.88);
            }
        }
    }

    #[test]
    fn zero_clouds_and_same_seed() {
        let ds = generate_maps(3, 2, 2, 0, 64, 64, None);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(apply_clouds(&ds.train[0], &mut rng, 0, 0.4), ds.train[0]);
        let a = apply_clouds(&ds.train[0], &mut ChaCha8Rng::seed_from_u64(4), 80, 0.4);
        let b = apply_clouds(&ds.train[0], &mut ChaCha8Rng::seed_from_u64(4), 80, 0.4);
        assert_eq!(a.occlusion, b.occlusion);
    }
}
