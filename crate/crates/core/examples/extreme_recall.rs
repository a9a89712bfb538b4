//! Held-out extreme-token recall with and without the extreme value loss.
//!
//! `cargo run --release --example extreme_recall -- [steps] [hit_prob] [beta1] [lambda]`

use nowcast_core::evl::EvlParams;
use nowcast_core::pipeline::{extreme_recall_experiment, ExtremeStreamConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> nowcast_core::Result<()> {
    let cfg = ExtremeStreamConfig {
        steps: arg(1, ExtremeStreamConfig::default().steps),
        hit_prob: arg(2, ExtremeStreamConfig::default().hit_prob),
        ..Default::default()
    };
    let beta1 = arg(3, EvlParams::default().beta1);
    let evl = EvlParams {
        beta1,
        beta0: 1.0 - beta1,
        lambda: arg(4, EvlParams::default().lambda),
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let outcomes = extreme_recall_experiment(&cfg, &evl, &[0, 1, 2])?;
    for o in &outcomes {
        println!(
            "seed {}: share {:.4} recall with loss {:.3} without {:.3}",
            o.seed, o.extreme_share, o.recall_evl, o.recall_ablation
        );
    }
    let mean = |f: fn(&_) -> f64| outcomes.iter().map(f).sum::<f64>() / outcomes.len() as f64;
    println!(
        "mean recall with loss {:.3} without {:.3} ({:.1} s)",
        mean(|o: &nowcast_core::pipeline::RecallOutcome| o.recall_evl),
        mean(|o: &nowcast_core::pipeline::RecallOutcome| o.recall_ablation),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
