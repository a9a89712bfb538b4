//! Radar frames and sequences: Z-R conversion, windowing, extreme-event
//! labeling, the synthetic storm source and the on-disk dataset format.

mod io;
mod labels;
mod synth;
mod window;
mod zr;

use ndarray::{Array2, ArrayView2};

use crate::error::{invalid, shape_err, NowcastError, Result};

pub use io::{read_dataset, read_sequence, write_dataset, write_sequence, DatasetHeader};
pub use labels::{
    catchment_statistic, label_event_extreme, percentile_cutoff, token_labels, CatchmentMask,
    EventLabel, EXTREME_PERCENTILE,
};
pub use synth::{synth_storms, StormConfig, SyntheticSet};
pub use window::{window_sequences, SequenceSample};
pub use zr::{dbz_from_rain_rate, rain_rate_from_dbz, zr_transform, ZrParams};

/// Frame spacing of real radar sequences, in minutes.
pub const FRAME_SPACING_MIN: i64 = 30;
/// Frames observed before the forecast starts.
pub const CONTEXT_FRAMES: usize = 3;
/// Frames to forecast.
pub const HORIZON_FRAMES: usize = 6;

/// One precipitation field in mm/h.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarFrame {
    values: Array2<f32>,
    timestamp: i64,
}

impl RadarFrame {
    pub const MIN_SIDE: usize = 8;

    /// Builds a frame, rejecting negative or non-finite rain rates and
    /// grids smaller than [`Self::MIN_SIDE`] on either side.
    pub fn new(values: Array2<f32>, timestamp: i64) -> Result<Self> {
        let (h, w) = values.dim();
        if h < Self::MIN_SIDE || w < Self::MIN_SIDE {
            return Err(shape_err(format!(
                "frame is {h}x{w}, both sides must be at least {}",
                Self::MIN_SIDE
            )));
        }
        for ((row, col), &v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(NowcastError::NonFinite { row, col });
            }
            if v < 0.0 {
                return Err(invalid(format!(
                    "negative rain rate {v} at row {row}, column {col}"
                )));
            }
        }
        Ok(Self { values, timestamp })
    }

    pub fn zeros(height: usize, width: usize, timestamp: i64) -> Result<Self> {
        Self::new(Array2::zeros((height, width)), timestamp)
    }

    pub fn values(&self) -> ArrayView2<'_, f32> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f32> {
        self.values
    }

    /// (height, width)
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Minutes since epoch.
    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: i64) -> Self {
        self.timestamp = timestamp;
        self
    }
}

/// Frames at a constant spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarSequence {
    frames: Vec<RadarFrame>,
    spacing_min: i64,
}

impl RadarSequence {
    pub fn new(frames: Vec<RadarFrame>, spacing_min: i64) -> Result<Self> {
        if spacing_min <= 0 {
            return Err(invalid(format!("spacing must be positive, got {spacing_min}")));
        }
        if let Some(first) = frames.first() {
            let shape = first.shape();
            for (i, pair) in frames.windows(2).enumerate() {
                if pair[1].shape() != shape {
                    return Err(shape_err(format!(
                        "frame {} is {:?}, expected {:?}",
                        i + 1,
                        pair[1].shape(),
                        shape
                    )));
                }
                let step = pair[1].timestamp() - pair[0].timestamp();
                if step != spacing_min {
                    return Err(invalid(format!(
                        "frames {i} and {} are {step} min apart, expected {spacing_min}",
                        i + 1
                    )));
                }
            }
        }
        Ok(Self {
            frames,
            spacing_min,
        })
    }

    pub fn frames(&self) -> &[RadarFrame] {
        &self.frames
    }

    pub fn spacing_min(&self) -> i64 {
        self.spacing_min
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_shape(&self) -> Option<(usize, usize)> {
        self.frames.first().map(RadarFrame::shape)
    }
}
