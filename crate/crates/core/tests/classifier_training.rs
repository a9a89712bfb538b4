use candle_core::{DType, Device, Tensor, Var, D};
use nowcast_core::classifier::{classifier_loss, ClassifierConfig, TokenClassifier};
use nowcast_core::evl::{evl_loss_tensor, EvlParams};
use nowcast_core::nn::{softmax, Adam, OptimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: u32 = 16;
const EXTREME_FROM: u32 = 13;

fn stream(rng: &mut ChaCha8Rng, b: usize, t: usize) -> (Vec<u32>, Vec<f32>) {
    let tokens: Vec<u32> = (0..b * t)
        .map(|_| {
            if rng.random_bool(0.05) {
                rng.random_range(EXTREME_FROM..K)
            } else {
                rng.random_range(0..EXTREME_FROM)
            }
        })
        .collect();
    let labels = tokens.iter().map(|&s| if s >= EXTREME_FROM { 1.0 } else { 0.0 }).collect();
    (tokens, labels)
}

#[test]
fn classifier_separates_rare_extreme_tokens() {
    let dev = Device::Cpu;
    let cfg = ClassifierConfig {
        n_layers: 1,
        embed_dim: 16,
        n_heads: 2,
        vocab_size: K as usize,
        max_sequence_length: 32,
        detached_bridge: false,
    };
    let clf = TokenClassifier::new(cfg, 7, DType::F32, &dev).unwrap();
    let mut opt = Adam::new(clf.vars(), &OptimConfig { lr: 3e-3, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (b, t) = (8, 32);
    for _ in 0..300 {
        let (tokens, labels) = stream(&mut rng, b, t);
        let ids = Tensor::from_vec(tokens, (b, t), &dev).unwrap();
        let v = Tensor::from_vec(labels, (b, t), &dev).unwrap();
        let u = clf.extreme_probability(&clf.embed_tokens(&ids).unwrap()).unwrap();
        opt.backward_step(&classifier_loss(&u, &v, 1e-7).unwrap()).unwrap();
    }

    let (tokens, labels) = stream(&mut ChaCha8Rng::seed_from_u64(99), 32, t);
    let ids = Tensor::from_vec(tokens, (32, t), &dev).unwrap();
    let u: Vec<f32> = clf
        .extreme_probability(&clf.embed_tokens(&ids).unwrap())
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    let correct = u.iter().zip(&labels).filter(|(p, v)| (**p > 0.5) == (**v > 0.5)).count();
    let accuracy = correct as f64 / labels.len() as f64;
    let positives = labels.iter().filter(|v| **v > 0.5).count();
    let caught = u.iter().zip(&labels).filter(|(p, v)| **p > 0.5 && **v > 0.5).count();
    assert!(accuracy >= 0.95, "accuracy {accuracy}");
    assert!(caught as f64 >= 0.9 * positives as f64, "recall {caught}/{positives}");
}

/// Loss as a function of a perturbation of the softmax weights around the
/// hard one-hot point: the surrogate whose derivative the bridge reports.
#[test]
fn evl_gradient_through_bridge_matches_finite_difference() {
    let dev = Device::Cpu;
    let cfg = ClassifierConfig {
        n_layers: 1,
        embed_dim: 8,
        n_heads: 2,
        vocab_size: 4,
        max_sequence_length: 2,
        detached_bridge: false,
    };
    let clf = TokenClassifier::new(cfg, 3, DType::F64, &dev).unwrap();
    let params = EvlParams::default();
    let base = vec![0.3f64, -0.2, 1.1, 0.4, 0.9, 0.1, -0.5, 0.2];
    let v = Tensor::new(&[[1.0f64, 0.0]], &dev).unwrap();
    let logits = Var::from_vec(base.clone(), (1, 2, 4), &dev).unwrap();
    let u = clf
        .extreme_probability(&clf.bridge_predicted_tokens(logits.as_tensor()).unwrap())
        .unwrap();
    let g: Vec<f64> = evl_loss_tensor(&u, &v, &params)
        .unwrap()
        .backward()
        .unwrap()
        .get(&logits)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();

    let l0 = Tensor::from_vec(base.clone(), (1, 2, 4), &dev).unwrap();
    let p0 = softmax(&l0, D::Minus1).unwrap();
    let hard = nowcast_core::classifier::one_hot_argmax(&l0).unwrap();
    let surrogate = |d: &[f64], eps: f64| -> f64 {
        let l: Vec<f64> = base.iter().zip(d).map(|(a, b)| a + eps * b).collect();
        let p = softmax(&Tensor::from_vec(l, (1, 2, 4), &dev).unwrap(), D::Minus1).unwrap();
        let w = (&hard + (p - &p0).unwrap()).unwrap();
        let reps = w.broadcast_matmul(clf.token_embedding()).unwrap();
        let u = clf.extreme_probability(&reps).unwrap();
        evl_loss_tensor(&u, &v, &params).unwrap().to_scalar().unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let d: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let eps = 1e-5;
        let fd = (surrogate(&d, eps) - surrogate(&d, -eps)) / (2.0 * eps);
        assert!((fd - analytic).abs() <= 1e-3 * analytic.abs().max(1e-9), "fd {fd} analytic {analytic}");
    }
    assert!(g.iter().any(|x| *x != 0.0));
}

#[test]
fn classifier_loss_gradient_matches_finite_difference() {
    let dev = Device::Cpu;
    let u0 = vec![0.2f64, 0.7, 0.45, 0.9];
    let v = Tensor::new(&[1.0f64, 0.0, 1.0, 1.0], &dev).unwrap();
    let u = Var::from_vec(u0.clone(), 4, &dev).unwrap();
    let g: Vec<f64> = classifier_loss(u.as_tensor(), &v, 1e-7)
        .unwrap()
        .backward()
        .unwrap()
        .get(&u)
        .unwrap()
        .to_vec1()
        .unwrap();
    for i in 0..4 {
        let at = |e: f64| -> f64 {
            let mut w = u0.clone();
            w[i] += e;
            classifier_loss(&Tensor::new(w.as_slice(), &dev).unwrap(), &v, 1e-7)
                .unwrap()
                .to_scalar()
                .unwrap()
        };
        let fd = (at(1e-6) - at(-1e-6)) / 2e-6;
        assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs(), "fd {fd} analytic {}", g[i]);
    }
}
