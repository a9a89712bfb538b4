use ndarray::ArrayView2;

use super::categorical::contingency;
use super::Contingency;
use crate::error::{NowcastError, Result};

/// Default event thresholds in mm/h.
pub const ROC_THRESHOLDS: [f64; 7] = [0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_alarm_rate: f64,
    pub hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RocCurve {
    /// Defined points, in threshold order.
    pub points: Vec<RocPoint>,
    /// Thresholds without events or without non-events.
    pub skipped: Vec<f64>,
}

/// One point per threshold from contingency tables pooled over all field
/// pairs; events are `obs > tau`, detections `pred > tau`.
pub fn roc_curve(pred: &[ArrayView2<f32>], obs: &[ArrayView2<f32>], thresholds: &[f64]) -> Result<RocCurve> {
    if thresholds.is_empty() {
        return Err(NowcastError::InvalidInput("ROC needs at least one threshold".into()));
    }
    if pred.len() != obs.len() {
        return Err(NowcastError::InvalidInput(format!(
            "{} predicted fields vs {} observed",
            pred.len(),
            obs.len()
        )));
    }
    let mut curve = RocCurve::default();
    for &tau in thresholds {
        let mut c = Contingency::default();
        for (p, o) in pred.iter().zip(obs) {
            c.add(&contingency(p.view(), o.view(), tau)?);
        }
        let events = c.hits + c.misses;
        let non_events = c.false_alarms + c.correct_negatives;
        if events == 0 || non_events == 0 {
            log::warn!("ROC threshold {tau} mm/h skipped: {events} events, {non_events} non-events");
            curve.skipped.push(tau);
            continue;
        }
        curve.points.push(RocPoint {
            threshold: tau,
            false_alarm_rate: c.false_alarms as f64 / non_events as f64,
            hit_rate: c.hits as f64 / events as f64,
        });
    }
    Ok(curve)
}

/// Trapezoid area under the points sorted by false-alarm rate, anchored at
/// (0, 0) and (1, 1).
pub fn auc(curve: &RocCurve) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.false_alarm_rate, p.hit_rate)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..12.0))
    }

    #[test]
    fn perfect_predictor_has_unit_area() {
        let fields: Vec<Array2<f32>> = (0..4).map(field).collect();
        let views: Vec<_> = fields.iter().map(|f| f.view()).collect();
        let c = roc_curve(&views, &views, &ROC_THRESHOLDS).unwrap();
        assert_eq!(c.points.len(), 7);
        assert!(c.points.iter().all(|p| p.false_alarm_rate == 0.0 && p.hit_rate == 1.0));
        assert_eq!(auc(&c), 1.0);
    }

    #[test]
    fn degenerate_thresholds_are_skipped() {
        let f = Array2::<f32>::from_elem((8, 8), 3.0);
        let c = roc_curve(&[f.view()], &[f.view()], &[1.0, 5.0]).unwrap();
        assert!(c.points.is_empty());
        assert_eq!(c.skipped, vec![1.0, 5.0]);
        assert_eq!(auc(&c), 0.5);
    }

    #[test]
    fn empty_threshold_list_rejected() {
        let f = field(0);
        assert!(roc_curve(&[f.view()], &[f.view()], &[]).is_err());
    }
}
