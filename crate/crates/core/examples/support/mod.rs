//! Procedural stand-ins used when an example is run without image paths.
#![allow(dead_code)]

use std::path::Path;

use coralgen::dataio::load_image;
use coralgen::{Shape, Tensor};

/// Gray box with a lighter lid on a white background.
pub fn render_object(size: usize) -> Tensor<f32> {
    let half = size as f64 / 2.0;
    Tensor::from_fn(Shape::image(3, size, size), |_, c, y, x| {
        let (dx, dy) = ((x as f64 - half) / half, (y as f64 - half) / half);
        let v = if dx.abs() < 0.45 && dy.abs() < 0.55 {
            [180.0, 150.0, 120.0][c] * (0.55 + 0.35 * dx)
        } else if dy < -0.55 && dy > -0.75 && dx.abs() < 0.3 {
            [210.0, 190.0, 160.0][c]
        } else {
            255.0
        };
        v as f32
    })
    .unwrap()
}

/// Smooth colored waves; `phase` varies the pattern.
pub fn render_texture(size: usize, phase: f64) -> Tensor<f32> {
    Tensor::from_fn(Shape::image(3, size, size), |_, c, y, x| {
        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
        let p = phase + c as f64 * 1.7;
        let wave = (9.0 * u + p).sin() * (7.0 * v - p).cos() + 0.5 * (23.0 * (u + v) + 2.0 * p).sin();
        (110.0 + 60.0 * wave).clamp(0.0, 255.0) as f32
    })
    .unwrap()
}

/// Loads `arg` if given, otherwise falls back to `default`.
pub fn image_or(arg: Option<&String>, default: impl FnOnce() -> Tensor<f32>) -> Tensor<f32> {
    match arg {
        Some(p) => load_image(Path::new(p)).unwrap_or_else(|e| panic!("{p}: {e}")),
        None => default(),
    }
}
