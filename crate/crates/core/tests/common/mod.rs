#![allow(dead_code)]

use coralgen::synth::{NoiseSpec, OptimizerConfig, SynthesisConfig};
use coralgen::weights::{random_weights, ScaleRule};
use coralgen::{LossConfig, Network, NetworkSpec, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Channel divisor of the random VGG used by the end-to-end checks.
pub const NARROW: usize = 8;

pub fn narrow_vgg(seed: u64) -> Network<f32> {
    random_weights(NetworkSpec::vgg16_narrow(NARROW), seed, ScaleRule::FanIn)
}

/// Flat-shaded box on a white background, raw 0..=255 RGB.
pub fn object_scene(size: usize) -> Tensor<f32> {
    let half = size as f64 / 2.0;
    Tensor::from_fn(Shape::image(3, size, size), |_, c, y, x| {
        let (dx, dy) = ((x as f64 - half) / half, (y as f64 - half) / half);
        let body = dx.abs() < 0.45 && dy.abs() < 0.55;
        let lid = dy < -0.55 && dy > -0.75 && dx.abs() < 0.45 - (dy + 0.55).abs();
        let shade = 0.55 + 0.35 * dx;
        let v = if body {
            [180.0, 150.0, 120.0][c] * shade
        } else if lid {
            [210.0, 190.0, 160.0][c]
        } else {
            255.0
        };
        v as f32
    })
    .unwrap()
}

/// Smooth colored texture with seeded grain.
pub fn textured_scene(size: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    Tensor::from_fn(Shape::image(3, size, size), |_, c, y, x| {
        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
        let p = &phases[c * 3..c * 3 + 3];
        let wave = (9.0 * u + p[0]).sin() * (7.0 * v + p[1]).cos() + 0.5 * (23.0 * (u + v) + p[2]).sin();
        let grain = rng.random_range(-20.0..20.0);
        (110.0 + 60.0 * wave + grain).clamp(0.0, 255.0) as f32
    })
    .unwrap()
}

pub fn preset_config(iterations: usize, lambda: f64) -> SynthesisConfig {
    SynthesisConfig {
        loss: LossConfig::default().with_lambda(lambda),
        noise: NoiseSpec { sigma: 10.0, seed: 0 },
        optimizer: OptimizerConfig::adam(1.0),
        iterations,
        clamp: None,
        log_every: 50,
    }
}

/// Random tensor with entries in `[-scale, scale)`.
pub fn random_tensor<T: coralgen::Element>(shape: Shape, seed: u64, scale: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| T::from_f64(rng.random_range(-scale..scale))).unwrap()
}

/// conv1_1(4) relu pool, conv2_1(5) relu, conv3_1(6) relu, with random biases.
pub fn three_conv_net<T: coralgen::Element>(seed: u64) -> Network<T> {
    use coralgen::net::{ConvWeights, LayerSpec};
    let spec = NetworkSpec::new(
        3,
        vec![
            LayerSpec::conv("conv1_1", 4),
            LayerSpec::relu("relu1_1"),
            LayerSpec::pool("pool1"),
            LayerSpec::conv("conv2_1", 5),
            LayerSpec::relu("relu2_1"),
            LayerSpec::conv("conv3_1", 6),
            LayerSpec::relu("relu3_1"),
        ],
        coralgen::PoolMode::Max,
    )
    .unwrap();
    let weights = spec
        .conv_layers()
        .iter()
        .enumerate()
        .map(|(k, &(_, _, in_c, out_c))| ConvWeights {
            kernel: random_tensor(Shape::new(out_c, in_c, 3, 3), seed * 31 + k as u64, 0.5),
            bias: random_tensor::<T>(Shape::new(1, 1, 1, out_c), seed * 31 + 17 + k as u64, 0.2).into_vec(),
        })
        .collect();
    Network::new(spec, weights, [0.0; 3]).unwrap()
}

/// Feature loss on conv2_1, CORAL on conv1_1 and conv3_1.
pub fn three_conv_loss(lambda: f64) -> LossConfig {
    use coralgen::LayerWeight;
    LossConfig {
        feat_layers: vec![LayerWeight::new("conv2_1", 1.0)],
        coral_layers: vec![LayerWeight::new("conv1_1", 0.5), LayerWeight::new("conv3_1", 0.5)],
        lambda,
        ..LossConfig::default()
    }
}

/// Norm-wise relative error `‖a − b‖ / ‖b‖`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Channel covariance from the textbook centered product, `H` given as `h[f][n]`.
pub fn dense_covariance(h: &[Vec<f64>], a: f64, b: f64) -> Vec<f64> {
    let f = h.len();
    let n = h[0].len();
    let s: Vec<f64> = (0..n).map(|j| (0..f).map(|p| h[p][j]).sum()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let hth: f64 = (0..f).map(|p| h[p][i] * h[p][j]).sum();
            out[i * n + j] = a * (hth - b * s[i] * s[j]);
        }
    }
    out
}
