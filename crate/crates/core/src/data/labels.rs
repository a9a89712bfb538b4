use ndarray::{Array2, ArrayView2};

use super::{RadarFrame, SequenceSample};
use crate::error::{invalid, shape_err, Result};

/// Percentile above which a catchment event counts as extreme.
pub const EXTREME_PERCENTILE: u32 = 99;

/// Cells belonging to one river catchment.
#[derive(Debug, Clone, PartialEq)]
pub struct CatchmentMask {
    id: String,
    mask: Array2<bool>,
}

impl CatchmentMask {
    pub fn new(id: impl Into<String>, mask: Array2<bool>) -> Result<Self> {
        if !mask.iter().any(|&m| m) {
            return Err(invalid("catchment mask selects no cells"));
        }
        Ok(Self {
            id: id.into(),
            mask,
        })
    }

    /// Mask selecting every cell of a `height x width` grid.
    pub fn full(id: impl Into<String>, height: usize, width: usize) -> Self {
        Self {
            id: id.into(),
            mask: Array2::from_elem((height, width), true),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mask(&self) -> ArrayView2<'_, bool> {
        self.mask.view()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventLabel {
    pub is_extreme: bool,
    /// Catchment-mean rain rate over the forecast span, mm/h.
    pub statistic: f64,
}

/// Linear-interpolation percentile of an ascending slice. The fractional
/// rank is computed in integer arithmetic so that exact ranks stay exact.
pub fn percentile_cutoff(sorted: &[f64], percentile: u32) -> Result<f64> {
    if sorted.is_empty() {
        return Err(invalid("reference population is empty"));
    }
    if percentile > 100 {
        return Err(invalid(format!("percentile {percentile} above 100")));
    }
    if sorted.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("reference population is not sorted ascending"));
    }
    let scaled = percentile as usize * (sorted.len() - 1);
    let lo = scaled / 100;
    let rem = scaled % 100;
    if rem == 0 {
        return Ok(sorted[lo]);
    }
    let (a, b) = (sorted[lo], sorted[lo + 1]);
    Ok((a + (b - a) * rem as f64 / 100.0).min(b))
}

/// Mean over the masked cells, averaged over all frames.
pub fn catchment_statistic<'a>(
    frames: impl IntoIterator<Item = &'a RadarFrame>,
    mask: &CatchmentMask,
) -> Result<f64> {
    let cells = mask.mask.iter().filter(|&&m| m).count() as f64;
    let mut total = 0.0;
    let mut n_frames = 0usize;
    for frame in frames {
        if frame.shape() != mask.mask.dim() {
            return Err(shape_err(format!(
                "catchment {} is {:?}, frame is {:?}",
                mask.id,
                mask.mask.dim(),
                frame.shape()
            )));
        }
        let sum: f64 = frame
            .values()
            .iter()
            .zip(mask.mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v as f64)
            .sum();
        total += sum / cells;
        n_frames += 1;
    }
    if n_frames == 0 {
        return Err(invalid("no frames to average"));
    }
    Ok(total / n_frames as f64)
}

/// Labels a sample extreme when its catchment mean over the target span
/// reaches the 99th percentile of the reference population (inclusive).
pub fn label_event_extreme(
    sample: &SequenceSample,
    mask: &CatchmentMask,
    reference_statistics: &[f64],
) -> Result<EventLabel> {
    let statistic = catchment_statistic(&sample.target, mask)?;
    let cutoff = percentile_cutoff(reference_statistics, EXTREME_PERCENTILE)?;
    Ok(EventLabel {
        is_extreme: statistic >= cutoff,
        statistic,
    })
}

/// Per-token extreme indicator: a token is extreme when the mean rain rate
/// over its pixel patch exceeds `threshold`.
pub fn token_labels(
    values: ArrayView2<'_, f32>,
    token_grid: (usize, usize),
    threshold: f64,
) -> Result<Array2<bool>> {
    let (height, width) = values.dim();
    let (h, w) = token_grid;
    if h == 0 || w == 0 || height % h != 0 || width % w != 0 {
        return Err(shape_err(format!(
            "frame {height}x{width} does not split into a {h}x{w} token grid"
        )));
    }
    let (ph, pw) = (height / h, width / w);
    let area = (ph * pw) as f64;
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        let patch = values.slice(ndarray::s![i * ph..(i + 1) * ph, j * pw..(j + 1) * pw]);
        patch.iter().map(|&v| v as f64).sum::<f64>() / area > threshold
    }))
}
