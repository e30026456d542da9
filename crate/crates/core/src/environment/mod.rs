//! World model: labelled maps, occlusion, windowed observations and
//! robot motion.

mod digits;
mod io;
mod maps;
mod world;

pub use digits::{load_idx_dir, mnist_task, read_idx_images, read_idx_labels, synthetic_digits, write_idx_images, write_idx_labels, DIGIT_SIDE};
pub use io::{export_dataset, import_dataset};
pub use maps::{apply_clouds, generate_maps, CloudSettings};
pub use world::{clamp_to_map, observe, random_position, step_motion, RobotState, WorldConfig};

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("{path}: parse error at byte offset {offset}: {reason}")]
    Parse {
        path: String,
        offset: usize,
        reason: String,
    },
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labelled map. Pixels are stored in single precision, matching the
/// on-disk format.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSample {
    /// `[C×H×W]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: usize,
    /// Row-major `H×W`; `true` where the pixel was replaced by cloud.
    pub occlusion: Vec<bool>,
}

impl MapSample {
    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn occluded_fraction(&self) -> f64 {
        self.occlusion.iter().filter(|&&b| b).count() as f64 / self.occlusion.len().max(1) as f64
    }
}

/// Train/test split over `labels` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub labels: usize,
    pub seed: u64,
    pub train: Vec<MapSample>,
    pub test: Vec<MapSample>,
}

impl Dataset {
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.train.first().or(self.test.first()).expect("non-empty dataset");
        (s.channels(), s.height(), s.width())
    }
}
