//! Helpers shared by integration tests.
#![allow(dead_code)]

use dpnews::dp::Activation;
use dpnews::model::{backward, forward, ForwardNoise, ModelDims, ModelParams, Sample, UserPath, BLOCK_NAMES};
use dpnews::rng::rng_from_seed;
use rand::Rng;

pub const FD_STEP: f64 = 1e-4;

/// One finite-difference scenario: a path through the model and its fixed noise.
pub struct FdCase {
    pub name: &'static str,
    pub path: UserPath,
    pub noise: ForwardNoise,
}

pub fn fd_cases(seed: u64) -> Vec<FdCase> {
    let mut rng = rng_from_seed(seed ^ 0xfd);
    // keep noisy attention away from the ReLU kink
    let mut away = || {
        let x: f64 = rng.random_range(0.25..0.6);
        if rng.random::<bool>() { x } else { -x }
    };
    let noise = vec![away(), away(), away()];
    vec![
        FdCase {
            name: "direct",
            path: UserPath::Direct,
            noise: ForwardNoise::default(),
        },
        FdCase {
            name: "softplus+noise+padding",
            path: UserPath::Decomposed {
                clip_norm: 1.0,
                activation: Activation::Softplus,
            },
            noise: ForwardNoise {
                pad_mask: vec![false, true, false, true],
                attn_noise: noise.clone(),
            },
        },
        FdCase {
            name: "relu+noise",
            path: UserPath::Decomposed {
                clip_norm: 1.0,
                activation: Activation::Relu,
            },
            noise: ForwardNoise {
                pad_mask: vec![],
                attn_noise: vec![noise[0].abs(), -1.5, noise[2].abs()],
            },
        },
        FdCase {
            name: "relu+clip-active",
            path: UserPath::Decomposed {
                clip_norm: 0.3,
                activation: Activation::Relu,
            },
            noise: ForwardNoise {
                pad_mask: vec![true, false, false, false],
                attn_noise: vec![],
            },
        },
    ]
}

/// A d=8, B=3, V=20 model with every parameter drawn from U[-0.5, 0.5],
/// and a sample that never touches token ids 15..20.
pub fn fd_model(seed: u64) -> (ModelParams, Vec<Vec<u32>>, Vec<Vec<u32>>, Vec<u8>) {
    let dims = ModelDims {
        vocab_size: 20,
        token_dim: 8,
        dim: 8,
        num_basis: 3,
    };
    let mut rng = rng_from_seed(seed);
    let mut p = ModelParams::zeros(dims);
    for block in p.blocks_mut() {
        block.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
    }
    let title = |rng: &mut dpnews::rng::SimRng| -> Vec<u32> {
        let len = rng.random_range(2..=5);
        let mut t: Vec<u32> = (0..len).map(|_| rng.random_range(1..15)).collect();
        t.resize(5, 0);
        t
    };
    let history: Vec<Vec<u32>> = (0..4).map(|_| title(&mut rng)).collect();
    let candidates: Vec<Vec<u32>> = (0..5).map(|_| title(&mut rng)).collect();
    let mut labels = vec![0u8; 5];
    labels[rng.random_range(0..5)] = 1;
    (p, history, candidates, labels)
}

/// Per-block relative error `‖a - f‖ / max(‖a‖, ‖f‖)` between the analytic
/// gradient and central differences. Blocks where both are below 1e-10 count as 0.
pub fn fd_block_errors(seed: u64, case: &FdCase) -> Vec<(&'static str, f64)> {
    let (params, history, candidates, labels) = fd_model(seed);
    let sample = Sample {
        history: history.iter().map(Vec::as_slice).collect(),
        candidates: candidates.iter().map(Vec::as_slice).collect(),
        labels,
    };
    let loss = |p: &ModelParams| forward(p, &sample, case.path, &case.noise).unwrap().loss;
    let tape = forward(&params, &sample, case.path, &case.noise).unwrap();
    let analytic = backward(&params, &tape);

    let mut out = Vec::new();
    for (b, name) in BLOCK_NAMES.iter().enumerate() {
        let len = params.blocks()[b].len();
        let mut fd = vec![0.0; len];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut plus = params.clone();
            plus.blocks_mut()[b][i] += FD_STEP;
            let mut minus = params.clone();
            minus.blocks_mut()[b][i] -= FD_STEP;
            *slot = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
        }
        let a = analytic.blocks()[b];
        let diff: f64 = a.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nf = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nf);
        out.push((*name, if scale < 1e-10 { 0.0 } else { diff / scale }));
    }
    out
}
