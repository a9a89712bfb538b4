use ndarray::{Array2, ArrayView2};

use super::RadarFrame;
use crate::error::{invalid, NowcastError, Result};

/// Coefficients of the power law `Z = a R^b`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZrParams {
    pub a: f64,
    pub b: f64,
    /// Reflectivities at or below this level (dBZ) are treated as no echo.
    pub floor_dbz: f64,
}

impl Default for ZrParams {
    /// Marshall-Palmer.
    fn default() -> Self {
        Self {
            a: 200.0,
            b: 1.6,
            floor_dbz: -32.0,
        }
    }
}

impl ZrParams {
    fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(invalid(format!(
                "Z-R coefficients must be positive, got a={} b={}",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

/// Rain rate in mm/h for one reflectivity value.
pub fn rain_rate_from_dbz(dbz: f64, params: &ZrParams) -> f64 {
    if dbz <= params.floor_dbz {
        return 0.0;
    }
    let z = 10f64.powf(dbz / 10.0);
    (z / params.a).powf(1.0 / params.b).max(0.0)
}

/// Reflectivity in dBZ for a rain rate, the inverse of [`rain_rate_from_dbz`].
pub fn dbz_from_rain_rate(rate: f64, params: &ZrParams) -> f64 {
    10.0 * (params.a * rate.powf(params.b)).log10()
}

/// Converts a reflectivity grid (dBZ) into a rain-rate frame.
pub fn zr_transform(
    reflectivity: ArrayView2<'_, f64>,
    params: &ZrParams,
    timestamp: i64,
) -> Result<RadarFrame> {
    params.validate()?;
    let mut out = Array2::<f32>::zeros(reflectivity.dim());
    for ((row, col), &dbz) in reflectivity.indexed_iter() {
        if !dbz.is_finite() {
            return Err(NowcastError::NonFinite { row, col });
        }
        out[[row, col]] = rain_rate_from_dbz(dbz, params) as f32;
    }
    RadarFrame::new(out, timestamp)
}
