use super::{RadarFrame, RadarSequence};

/// Context frames followed immediately by the frames to forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub context: Vec<RadarFrame>,
    pub target: Vec<RadarFrame>,
}

impl SequenceSample {
    /// Context then target, in time order.
    pub fn frames(&self) -> impl Iterator<Item = &RadarFrame> {
        self.context.iter().chain(self.target.iter())
    }

    pub fn len(&self) -> usize {
        self.context.len() + self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cuts a stream into contiguous `context_len + horizon` windows, the
/// first one starting at frame 0 and each next one `stride` frames later.
/// A stream shorter than one window yields nothing.
pub fn window_sequences(
    stream: &RadarSequence,
    context_len: usize,
    horizon: usize,
    stride: usize,
) -> Vec<SequenceSample> {
    let span = context_len + horizon;
    let stride = stride.max(1);
    let frames = stream.frames();
    if span == 0 || frames.len() < span {
        return Vec::new();
    }
    (0..=frames.len() - span)
        .step_by(stride)
        .map(|start| SequenceSample {
            context: frames[start..start + context_len].to_vec(),
            target: frames[start + context_len..start + span].to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CONTEXT_FRAMES, HORIZON_FRAMES};

    fn stream(n: usize) -> RadarSequence {
        let frames = (0..n)
            .map(|i| RadarFrame::zeros(8, 8, 30 * i as i64).unwrap())
            .collect();
        RadarSequence::new(frames, 30).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_sequences(&stream(9), 3, 6, 1).len(), 1);
        let two = window_sequences(&stream(10), 3, 6, 1);
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].context[0].timestamp(), 0);
        assert_eq!(two[1].context[0].timestamp(), 30);
        assert!(window_sequences(&stream(8), 3, 6, 1).is_empty());
        for total in 9..40 {
            for stride in 1..5 {
                let n = window_sequences(&stream(total), CONTEXT_FRAMES, HORIZON_FRAMES, stride)
                    .len();
                assert_eq!(n, (total - 9) / stride + 1);
            }
        }
    }

    #[test]
    fn windows_are_contiguous_slices() {
        let s = stream(23);
        for stride in 1..4 {
            for (k, sample) in window_sequences(&s, 3, 6, stride).iter().enumerate() {
                let start = k * stride;
                let got: Vec<i64> = sample.frames().map(|f| f.timestamp()).collect();
                let want: Vec<i64> = s.frames()[start..start + 9]
                    .iter()
                    .map(|f| f.timestamp())
                    .collect();
                assert_eq!(got, want);
            }
        }
    }
}
