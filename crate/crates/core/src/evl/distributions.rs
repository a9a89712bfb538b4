/// A value forced back into range, with a note of whether that happened.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flagged {
    pub value: f64,
    pub clamped: bool,
}

impl Flagged {
    fn ok(value: f64) -> Self {
        Self {
            value,
            clamped: false,
        }
    }

    fn clamped(value: f64) -> Self {
        Self {
            value,
            clamped: true,
        }
    }
}

fn is_gumbel(gamma: f64) -> bool {
    gamma == 0.0 || gamma.is_infinite()
}

/// GEV distribution function `exp(-(1 - y/gamma)^gamma)`; Gumbel for
/// `gamma = 0` or infinite. Past the upper end point the value is clamped to 1.
pub fn gev_cdf_flagged(y: f64, gamma: f64) -> Flagged {
    if is_gumbel(gamma) {
        return Flagged::ok((-(-y).exp()).exp());
    }
    let base = 1.0 - y / gamma;
    if base > 0.0 {
        Flagged::ok((-base.powf(gamma)).exp())
    } else if base == 0.0 {
        Flagged::ok(if gamma > 0.0 { 1.0 } else { 0.0 })
    } else {
        Flagged::clamped(if gamma > 0.0 { 1.0 } else { 0.0 })
    }
}

pub fn gev_cdf(y: f64, gamma: f64) -> f64 {
    gev_cdf_flagged(y, gamma).value
}

/// GPD distribution function with shape `xi = -1/gamma` and scale `scale`:
/// `1 - (1 - y/(gamma*scale))^gamma` on `0 <= y <= gamma*scale`;
/// `1 - exp(-y/scale)` for infinite `gamma`.
pub fn gpd_cdf_scaled(y: f64, gamma: f64, scale: f64) -> Flagged {
    if y < 0.0 {
        return Flagged::clamped(0.0);
    }
    if gamma.is_infinite() {
        return Flagged::ok(-(-y / scale).exp_m1());
    }
    let base = 1.0 - y / (gamma * scale);
    if base >= 0.0 {
        Flagged::ok(1.0 - base.powf(gamma))
    } else {
        Flagged::clamped(1.0)
    }
}

/// GPD paired with [`gev_cdf`] through `H = 1 + ln G`, i.e. unit scale.
pub fn gpd_cdf_flagged(y: f64, gamma: f64) -> Flagged {
    gpd_cdf_scaled(y, gamma, 1.0)
}

pub fn gpd_cdf(y: f64, gamma: f64) -> f64 {
    gpd_cdf_flagged(y, gamma).value
}

/// `H = 1 + ln G`. Values of `G` below `e^-1` leave the GPD range and are
/// clamped to 0; values outside `(0, 1]` are clamped as well.
pub fn gpd_from_gev(g: f64) -> Flagged {
    if !(g > 0.0) {
        return Flagged::clamped(0.0);
    }
    if g > 1.0 {
        return Flagged::clamped(1.0);
    }
    let h = 1.0 + g.ln();
    if h < 0.0 {
        Flagged::clamped(0.0)
    } else {
        Flagged::ok(h)
    }
}

/// GEV in standard form `exp(-(1 + xi (x - mu)/sigma)^(-1/xi))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GevParams {
    pub location: f64,
    pub scale: f64,
    pub xi: f64,
}

impl GevParams {
    /// Location 0, scale 1, `xi = -1/gamma` (Gumbel for infinite `gamma`).
    pub fn from_gamma(gamma: f64) -> Self {
        Self {
            location: 0.0,
            scale: 1.0,
            xi: if gamma.is_infinite() { 0.0 } else { -1.0 / gamma },
        }
    }

    /// GPD followed by excesses over `threshold`:
    /// same shape, scale `sigma + xi (u - mu)`.
    pub fn excess_over(&self, threshold: f64) -> GpdTail {
        GpdTail {
            xi: self.xi,
            scale: self.scale + self.xi * (threshold - self.location),
        }
    }
}

/// GPD in standard form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdTail {
    pub xi: f64,
    pub scale: f64,
}

impl GpdTail {
    /// `Pr{excess > y} = (1 + xi y / scale)^(-1/xi)`, `exp(-y/scale)` at `xi = 0`.
    pub fn survival(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 1.0;
        }
        if self.xi == 0.0 {
            return (-y / self.scale).exp();
        }
        let base = 1.0 + self.xi * y / self.scale;
        if base <= 0.0 {
            0.0
        } else {
            base.powf(-1.0 / self.xi)
        }
    }
}
