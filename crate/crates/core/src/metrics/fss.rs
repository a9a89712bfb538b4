use ndarray::{Array2, ArrayView2};

use super::categorical::check_shapes;
use crate::error::{NowcastError, Result};

/// Window side for a neighborhood of `scale_km` at `km_per_pixel`: the
/// pixel count rounded to the nearest integer, then up to the next odd
/// number.
pub fn window_size(scale_km: f64, km_per_pixel: f64) -> Result<usize> {
    if !(scale_km > 0.0 && km_per_pixel > 0.0) {
        return Err(NowcastError::InvalidInput(format!(
            "scale {scale_km} km and resolution {km_per_pixel} km/px must be positive"
        )));
    }
    let n = ((scale_km / km_per_pixel).round() as usize).max(1);
    Ok(if n % 2 == 0 { n + 1 } else { n })
}

/// Event counts in the `n x n` window centred on each cell, zero padded.
pub fn neighborhood_counts(events: &Array2<u8>, n: usize) -> Array2<u64> {
    let (h, w) = events.dim();
    let mut sat = Array2::<u64>::zeros((h + 1, w + 1));
    for i in 0..h {
        for j in 0..w {
            sat[[i + 1, j + 1]] = events[[i, j]] as u64 + sat[[i, j + 1]] + sat[[i + 1, j]] - sat[[i, j]];
        }
    }
    let r = n / 2;
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (i0, i1) = (i.saturating_sub(r), (i + r + 1).min(h));
        let (j0, j1) = (j.saturating_sub(r), (j + r + 1).min(w));
        sat[[i1, j1]] + sat[[i0, j0]] - sat[[i0, j1]] - sat[[i1, j0]]
    })
}

fn binarize(x: &ArrayView2<f32>, tau: f64) -> Array2<u8> {
    x.mapv(|v| (v as f64 > tau) as u8)
}

/// Fractions skill score with an `n x n` window. `None` when neither field
/// has an event. Computed from integer window counts, so the result is exact
/// up to the final division.
pub fn fss_window(pred: ArrayView2<f32>, obs: ArrayView2<f32>, n: usize, tau: f64) -> Result<Option<f64>> {
    check_shapes(&pred, &obs)?;
    if n == 0 {
        return Err(NowcastError::InvalidInput("window size must be at least 1".into()));
    }
    let cf = neighborhood_counts(&binarize(&pred, tau), n);
    let co = neighborhood_counts(&binarize(&obs, tau), n);
    let mut num = 0u64;
    let mut den = 0u64;
    for (&a, &b) in cf.iter().zip(co.iter()) {
        num += a.abs_diff(b).pow(2);
        den += a * a + b * b;
    }
    Ok((den > 0).then(|| 1.0 - num as f64 / den as f64))
}

pub fn fss(pred: ArrayView2<f32>, obs: ArrayView2<f32>, scale_km: f64, tau: f64, km_per_pixel: f64) -> Result<Option<f64>> {
    fss_window(pred, obs, window_size(scale_km, km_per_pixel)?, tau)
}
