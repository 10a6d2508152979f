//! Dataset types, loaders, frame subsampling, split generation, and the
//! synthetic generator with planted ground truth.

mod convert;
mod splits;
mod store;
mod synthetic;

pub use convert::convert_slip_dataset;
pub use splits::{make_splits, SplitIndices, SplitRatios};
pub use store::{load_grasp_dataset, load_slip_dataset, save_grasp_dataset, save_slip_dataset};
pub use synthetic::{generate_grasp, generate_slip, planted_params, PlantedParams, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{FruitLabel, GraspOutcome};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Tactile,
    Visual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Pinch,
    Slide,
}

/// Label for the slip-detection task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlipLabel {
    Stable,
    Slip,
}

impl SlipLabel {
    pub fn class_index(self) -> usize {
        match self {
            SlipLabel::Stable => 0,
            SlipLabel::Slip => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(SlipLabel::Stable),
            1 => Ok(SlipLabel::Slip),
            _ => Err(Error::Input(format!("slip label index {i} out of range"))),
        }
    }
}

/// A frame sequence `N x H x W x C` of f32 values in `[0, 1]`, row-major.
/// Slip-detection sequences carry no explorative action.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    data: Vec<f32>,
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    pub modality: Modality,
    pub action: Option<ActionKind>,
}

impl ImageSequence {
    pub fn new(
        data: Vec<f32>,
        (frames, height, width, channels): (usize, usize, usize, usize),
        modality: Modality,
        action: Option<ActionKind>,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(Error::Input("image sequence dimensions must be positive".into()));
        }
        if data.len() != frames * height * width * channels {
            return Err(Error::shape(
                "ImageSequence::new",
                &[frames, height, width, channels],
                &[data.len()],
            ));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Input("image values must lie in [0, 1]".into()));
        }
        Ok(ImageSequence { data, frames, height, width, channels, modality, action })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, frame: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[((frame * self.height + y) * self.width + x) * self.channels + c]
    }

    /// Rank-4 tensor `[N, H, W, C]` with the same payload.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.data.clone(),
            &[self.frames, self.height, self.width, self.channels],
        )
        .expect("sequence dims are consistent")
    }

    pub fn from_tensor(
        t: &Tensor,
        modality: Modality,
        action: Option<ActionKind>,
    ) -> Result<Self> {
        let sh = t.shape();
        if sh.len() != 4 {
            return Err(Error::shape("ImageSequence::from_tensor", sh, &[4]));
        }
        ImageSequence::new(t.data().to_vec(), (sh[0], sh[1], sh[2], sh[3]), modality, action)
    }
}

/// One grasp trial: the four explorative sequences plus its threshold and labels.
#[derive(Debug, Clone)]
pub struct GraspSample {
    pub id: String,
    pub pinch_tactile: ImageSequence,
    pub pinch_visual: ImageSequence,
    pub slide_tactile: ImageSequence,
    pub slide_visual: ImageSequence,
    /// Force threshold used in this trial, in depth pixels.
    pub force_threshold: f64,
    pub outcome: GraspOutcome,
    pub fruit: FruitLabel,
}

impl GraspSample {
    pub fn sequence(&self, action: ActionKind, modality: Modality) -> &ImageSequence {
        match (action, modality) {
            (ActionKind::Pinch, Modality::Tactile) => &self.pinch_tactile,
            (ActionKind::Pinch, Modality::Visual) => &self.pinch_visual,
            (ActionKind::Slide, Modality::Tactile) => &self.slide_tactile,
            (ActionKind::Slide, Modality::Visual) => &self.slide_visual,
        }
    }
}

/// Frames each slip sequence must carry.
pub const SLIP_FRAMES: usize = 14;

/// One slip-detection trial: paired 14-frame visual and tactile sequences.
#[derive(Debug, Clone)]
pub struct SlipSample {
    pub id: String,
    pub visual: ImageSequence,
    pub tactile: ImageSequence,
    pub label: SlipLabel,
}

impl SlipSample {
    pub fn new(id: String, visual: ImageSequence, tactile: ImageSequence, label: SlipLabel) -> Result<Self> {
        for (name, seq) in [("visual", &visual), ("tactile", &tactile)] {
            if seq.frames() != SLIP_FRAMES {
                return Err(Error::Data(format!(
                    "slip sample {id}: {name} sequence has {} frames, need exactly {SLIP_FRAMES}",
                    seq.frames()
                )));
            }
        }
        Ok(SlipSample { id, visual, tactile, label })
    }
}

/// 1-based frame indices kept by [`subsample_frames`].
pub const SUBSAMPLE_INDICES: [usize; 8] = [1, 4, 7, 10, 13, 16, 19, 22];

/// Keeps the first frame of every three consecutive frames, eight in total
/// (1-based indices 1, 4, ..., 22). The input must have at least 22 frames.
pub fn subsample_frames(seq: &ImageSequence) -> Result<ImageSequence> {
    if seq.frames() < 22 {
        return Err(Error::Input(format!(
            "frame subsampling needs >= 22 frames, got {}",
            seq.frames()
        )));
    }
    let frame_len = seq.height() * seq.width() * seq.channels();
    let mut data = Vec::with_capacity(SUBSAMPLE_INDICES.len() * frame_len);
    for &one_based in SUBSAMPLE_INDICES.iter() {
        let f = one_based - 1;
        data.extend_from_slice(&seq.data()[f * frame_len..(f + 1) * frame_len]);
    }
    ImageSequence::new(
        data,
        (SUBSAMPLE_INDICES.len(), seq.height(), seq.width(), seq.channels()),
        seq.modality,
        seq.action,
    )
}
