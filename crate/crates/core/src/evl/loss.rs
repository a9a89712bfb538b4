use super::EvlParams;

fn bracket(x: f64, gamma: f64) -> f64 {
    (1.0 - x / gamma).max(0.0).powf(gamma)
}

fn bracket_derivative(x: f64, gamma: f64) -> f64 {
    // d/dx (1 - x/gamma)^gamma
    let base = 1.0 - x / gamma;
    if base <= 0.0 {
        0.0
    } else {
        -base.powf(gamma - 1.0)
    }
}

/// Tail weight `p (1 - u/gamma)^gamma`, with `p` the share of extremes.
pub fn tail_weight_corrected(u: f64, gamma: f64, p_extreme: f64) -> f64 {
    p_extreme * bracket(u.clamp(0.0, gamma), gamma)
}

/// The earlier weighting `(1 - p)(1 - u/gamma)^gamma`. Kept for comparison
/// only; training never uses it.
pub fn tail_weight_prior(u: f64, gamma: f64, p_extreme: f64) -> f64 {
    (1.0 - p_extreme) * bracket(u.clamp(0.0, gamma), gamma)
}

/// Extreme value loss for one (probability, label) pair.
pub fn evl_term(u: f64, v: f64, params: &EvlParams) -> f64 {
    let u = params.clamp_probability(u);
    let g = params.gamma;
    -params.beta1 * bracket(u, g) * v * u.ln()
        - params.beta0 * bracket(1.0 - u, g) * (1.0 - v) * (1.0 - u).ln()
}

/// d(evl_term)/du. Zero where the clamp is active.
fn evl_term_grad(u: f64, v: f64, params: &EvlParams) -> f64 {
    if u < params.epsilon || u > 1.0 - params.epsilon {
        return 0.0;
    }
    let g = params.gamma;
    let positive = -params.beta1 * v * (bracket_derivative(u, g) * u.ln() + bracket(u, g) / u);
    // the second bracket is in (1 - u), so its derivative flips sign
    let negative = -params.beta0
        * (1.0 - v)
        * (-bracket_derivative(1.0 - u, g) * (1.0 - u).ln() - bracket(1.0 - u, g) / (1.0 - u));
    positive + negative
}

/// Mean extreme value loss over a batch.
pub fn evl_loss(u: &[f64], v: &[f64], params: &EvlParams) -> f64 {
    assert_eq!(u.len(), v.len(), "probability and label batches differ in length");
    if u.is_empty() {
        return 0.0;
    }
    u.iter().zip(v).map(|(&u, &v)| evl_term(u, v, params)).sum::<f64>() / u.len() as f64
}

/// Gradient of [`evl_loss`] with respect to each probability.
pub fn evl_grad(u: &[f64], v: &[f64], params: &EvlParams) -> Vec<f64> {
    let n = u.len() as f64;
    u.iter()
        .zip(v)
        .map(|(&u, &v)| evl_term_grad(u, v, params) / n)
        .collect()
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[epsilon, 1 - epsilon]`.
pub fn bce_loss(u: &[f64], v: &[f64], epsilon: f64) -> f64 {
    assert_eq!(u.len(), v.len(), "probability and label batches differ in length");
    if u.is_empty() {
        return 0.0;
    }
    u.iter()
        .zip(v)
        .map(|(&u, &v)| {
            let u = u.clamp(epsilon, 1.0 - epsilon);
            -v * u.ln() - (1.0 - v) * (1.0 - u).ln()
        })
        .sum::<f64>()
        / u.len() as f64
}

pub fn bce_grad(u: &[f64], v: &[f64], epsilon: f64) -> Vec<f64> {
    let n = u.len() as f64;
    u.iter()
        .zip(v)
        .map(|(&u, &v)| {
            if u < epsilon || u > 1.0 - epsilon {
                0.0
            } else {
                (-v / u + (1.0 - v) / (1.0 - u)) / n
            }
        })
        .collect()
}

/// Autoregressive cross-entropy plus the weighted extreme value loss.
pub fn combined_loss(ce: f64, evl: f64, lambda: f64) -> f64 {
    ce + lambda * evl
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn weight_examples() {
        assert!((tail_weight_corrected(0.5, 1.0, 0.05) - 0.025).abs() < 1e-15);
        assert_eq!(tail_weight_corrected(0.0, 3.0, 0.2), 0.2);
        assert_eq!(tail_weight_corrected(2.0, 2.0, 0.2), 0.0);
        assert!((tail_weight_prior(0.5, 1.0, 0.05) - 0.475).abs() < 1e-15);
        assert!((tail_weight_prior(0.0, 1.0, 0.05) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn weights_differ_by_constant_factor() {
        let p = 0.05;
        for i in 0..100 {
            let u = i as f64 / 101.0;
            for &g in &[1.0, 2.0, 5.0] {
                let ratio = tail_weight_corrected(u, g, p) / tail_weight_prior(u, g, p);
                assert!((ratio - p / (1.0 - p)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn corrected_weight_is_nonincreasing() {
        let mut last = f64::INFINITY;
        for i in 0..=100 {
            let w = tail_weight_corrected(i as f64 / 100.0, 1.5, 0.1);
            assert!(w <= last);
            last = w;
        }
    }

    #[test]
    fn evl_hand_values() {
        let p = EvlParams::default();
        assert!((evl_loss(&[0.5], &[1.0], &p) - 0.05 * 0.5 * LN2).abs() < 1e-15);
        assert!((evl_loss(&[0.5], &[0.0], &p) - 0.95 * 0.5 * LN2).abs() < 1e-15);
        assert!((0.05 * 0.5 * LN2 - 0.017329).abs() < 1e-6);
        assert!((0.95 * 0.5 * LN2 - 0.329245).abs() < 1e-6);
        assert!(evl_loss(&[1.0], &[1.0], &p) < 1e-12);
    }

    #[test]
    fn gamma_one_reduces_to_weighted_bce() {
        let p = EvlParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let u: f64 = rng.random_range(0.001..0.999);
            let v = if rng.random_bool(0.3) { 1.0 } else { 0.0 };
            let reduced = p.beta1 * (1.0 - u) * (-v * u.ln()) + p.beta0 * u * (-(1.0 - v) * (1.0 - u).ln());
            assert!((evl_term(u, v, &p) - reduced).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5, 0.5], &[1.0, 0.0], 1e-7) - LN2).abs() < 1e-15);
        let eps = 1e-7;
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0], eps) <= -(1.0 - eps).ln() + 1e-18);
    }

    #[test]
    fn bracket_approaches_exponential() {
        // (1 - u/gamma)^gamma -> exp(-u) from below as gamma grows
        for i in 1..=10 {
            let u = i as f64 / 10.0;
            let mut last = -1.0;
            for &g in &[1.0, 10.0, 100.0, 1e4] {
                let b = bracket(u, g);
                assert!(b > last && b < (-u).exp(), "u {u} gamma {g}");
                last = b;
            }
            assert!((bracket(u, 1e6) - (-u).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn combined_examples() {
        assert_eq!(combined_loss(1.3, 0.7, 0.0), 1.3);
        assert!((combined_loss(1.0, 0.4, 0.5) - 1.2).abs() < 1e-15);
        assert_eq!(combined_loss(1.3, 0.0, 0.5), 1.3);
    }

    fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &gamma in &[1.0, 2.0, 3.5] {
            let p = EvlParams { gamma, ..Default::default() };
            for _ in 0..300 {
                let u: f64 = rng.random_range(0.01..0.99);
                let v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                let g = evl_grad(&[u], &[v], &p)[0];
                let fd = central_difference(|x| evl_term(x, v, &p), u, 1e-6);
                assert!((g - fd).abs() <= 1e-5 * fd.abs().max(1e-8), "u {u} v {v} g {g} fd {fd}");
                let gb = bce_grad(&[u], &[v], 1e-7)[0];
                let fdb = central_difference(|x| bce_loss(&[x], &[v], 1e-7), u, 1e-6);
                assert!((gb - fdb).abs() <= 1e-5 * fdb.abs());
            }
        }
    }
}
