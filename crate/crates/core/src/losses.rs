//! Feature (shape-preserving) loss, CORAL covariance loss and their analytic
//! activation gradients.
//!
//! A layer activation `H` of shape `(1, N, h, w)` is read as an `F x N` matrix
//! (rows are the `F = h * w` spatial positions, columns the `N` channels), and
//! `α = N · F`. With `s = 1ᵀH` the per-channel sums, the covariance is
//!
//! ```text
//! Cov(H) = a · (HᵀH − b · sᵀs)
//! ```
//!
//! where `a = b = 1/N` for [`CovNormalizer::Channels`] and `a = b = 1/F` for
//! [`CovNormalizer::Samples`]. Per layer the losses are
//!
//! ```text
//! feat  = ω_f / (2α)  · ‖H(D) − H(C)‖²
//! coral = ω_c / (4α²) · ‖Cov(H(D)) − Cov(H(R))‖²_F
//! ```
//!
//! and the CORAL gradient is `(ω_c · a / α²) · (H − b · 1s)(Cov(D) − Cov(R))`,
//! the exact derivative of the forward form for either normalizer. Under the
//! `Channels` normalizer this is the printed leading factor `ω_c / (N α²)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, Strides};
use crate::net::{accumulate_gradient, ActivationCache, FeatureTap, GradientMap, NetworkSpec};
use crate::tensor::{Element, Tensor};

/// Leading and centering factor of the covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovNormalizer {
    /// `1/N` (channel count) for both factors.
    #[default]
    Channels,
    /// `1/F` (spatial positions) for both factors.
    Samples,
}

impl CovNormalizer {
    fn factor(self, channels: usize, positions: usize) -> f64 {
        match self {
            CovNormalizer::Channels => 1.0 / channels as f64,
            CovNormalizer::Samples => 1.0 / positions as f64,
        }
    }
}

/// `N x N` channel covariance, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CovMatrix {
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::ShapeMismatch {
                context: "covariance matrix".into(),
                expected: format!("{} values", n * n),
                found: format!("{} values", values.len()),
            });
        }
        Ok(Self { n, values })
    }

    pub fn n_channels(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// `‖self − other‖²_F`.
    pub fn frobenius_sq_distance(&self, other: &CovMatrix) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::ShapeMismatch {
                context: "covariance distance".into(),
                expected: format!("{0}x{0}", self.n),
                found: format!("{0}x{0}", other.n),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    /// Elementwise mean of equally sized covariances.
    pub fn mean<'a>(mats: impl IntoIterator<Item = &'a CovMatrix>) -> Result<CovMatrix> {
        let mut iter = mats.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidConfig("mean of zero covariances".into()))?;
        let mut acc = first.values.clone();
        let mut count = 1usize;
        for m in iter {
            if m.n != first.n {
                return Err(Error::ShapeMismatch {
                    context: "covariance mean".into(),
                    expected: format!("{0}x{0}", first.n),
                    found: format!("{0}x{0}", m.n),
                });
            }
            for (a, v) in acc.iter_mut().zip(&m.values) {
                *a += v;
            }
            count += 1;
        }
        let k = count as f64;
        acc.iter_mut().for_each(|v| *v /= k);
        CovMatrix::from_values(first.n, acc)
    }
}

/// Channel covariance of a `(1, N, h, w)` activation.
pub fn covariance<T: Element>(activation: &Tensor<T>, normalizer: CovNormalizer) -> Result<CovMatrix> {
    let s = activation.shape();
    if s.n != 1 {
        return Err(Error::InvalidShape(format!(
            "covariance expects batch 1, got {}",
            s.n
        )));
    }
    let (n, f) = (s.c, s.plane());
    let h: Vec<f64> = activation.data().iter().map(|v| v.as_f64()).collect();
    let sums: Vec<f64> = h.chunks(f).map(|row| row.iter().sum()).collect();
    let factor = normalizer.factor(n, f);
    let mut values = vec![0.0; n * n];
    // h is stored channel-major (N x F), so HᵀH is h · hᵀ.
    gemm(
        n,
        f,
        n,
        &h,
        Strides::row_major(f),
        &h,
        Strides::transposed(f),
        0.0,
        &mut values,
        Strides::row_major(n),
    );
    for i in 0..n {
        for j in i..n {
            let v = factor * (values[i * n + j] - factor * sums[i] * sums[j]);
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    CovMatrix::from_values(n, values)
}

/// A conv layer and its loss weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeight {
    pub layer: String,
    pub weight: f64,
}

impl LayerWeight {
    pub fn new(layer: impl Into<String>, weight: f64) -> Self {
        Self {
            layer: layer.into(),
            weight,
        }
    }
}

pub const PRESET_FEAT_LAYERS: [&str; 1] = ["conv3_2"];
pub const PRESET_CORAL_LAYERS: [&str; 5] = ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"];
pub const PRESET_CORAL_WEIGHT: f64 = 0.2;
pub const PRESET_LAMBDA: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub feat_layers: Vec<LayerWeight>,
    pub coral_layers: Vec<LayerWeight>,
    pub lambda: f64,
    #[serde(default)]
    pub normalizer: CovNormalizer,
    #[serde(default)]
    pub tap: FeatureTap,
}

impl Default for LossConfig {
    /// conv3_2 feature loss (weight 1), CORAL on conv1_1..conv5_1 (0.2 each), λ = 1e3.
    fn default() -> Self {
        Self {
            feat_layers: PRESET_FEAT_LAYERS.iter().map(|l| LayerWeight::new(*l, 1.0)).collect(),
            coral_layers: PRESET_CORAL_LAYERS
                .iter()
                .map(|l| LayerWeight::new(*l, PRESET_CORAL_WEIGHT))
                .collect(),
            lambda: PRESET_LAMBDA,
            normalizer: CovNormalizer::Channels,
            tap: FeatureTap::PostRelu,
        }
    }
}

impl LossConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        for lw in self.feat_layers.iter().chain(&self.coral_layers) {
            if !(lw.weight >= 0.0 && lw.weight.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "weight of `{}` must be finite and nonnegative, got {}",
                    lw.layer, lw.weight
                )));
            }
        }
        for (kind, layers) in [("feature", &self.feat_layers), ("coral", &self.coral_layers)] {
            let mut seen = std::collections::HashSet::new();
            for lw in layers {
                if !seen.insert(lw.layer.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "{kind} layer `{}` listed twice",
                        lw.layer
                    )));
                }
            }
        }
        if self.feat_layers.is_empty() && self.coral_layers.is_empty() {
            return Err(Error::InvalidConfig("no loss layers configured".into()));
        }
        Ok(())
    }

    fn feat_weight(&self, layer: &str) -> Result<f64> {
        self.feat_layers
            .iter()
            .find(|lw| lw.layer == layer)
            .map(|lw| lw.weight)
            .ok_or_else(|| Error::LayerNotConfigured(layer.to_string()))
    }

    fn coral_weight(&self, layer: &str) -> Result<f64> {
        self.coral_layers
            .iter()
            .find(|lw| lw.layer == layer)
            .map(|lw| lw.weight)
            .ok_or_else(|| Error::LayerNotConfigured(layer.to_string()))
    }

    /// Exact layer names whose outputs the losses read.
    pub fn tapped_layers<'a>(&self, net: &'a NetworkSpec) -> Result<Vec<&'a str>> {
        self.feat_layers
            .iter()
            .chain(&self.coral_layers)
            .map(|lw| net.feature_layer(&lw.layer, self.tap))
            .collect()
    }
}

/// Content activations on the feature layers, computed once per content image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTargets<T = f32> {
    layers: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> FeatureTargets<T> {
    pub fn from_cache(cache: &ActivationCache<T>, cfg: &LossConfig) -> Result<Self> {
        let mut layers = BTreeMap::new();
        for lw in &cfg.feat_layers {
            layers.insert(lw.layer.clone(), cache.feature(&lw.layer, cfg.tap)?.clone());
        }
        Ok(Self { layers })
    }

    pub fn get(&self, layer: &str) -> Result<&Tensor<T>> {
        self.layers
            .get(layer)
            .ok_or_else(|| Error::LayerNotConfigured(layer.to_string()))
    }
}

/// Style covariances on the CORAL layers, computed once per style image.
#[derive(Debug, Clone, PartialEq)]
pub struct CoralTargets {
    layers: BTreeMap<String, CovMatrix>,
}

impl CoralTargets {
    pub fn from_cache<T: Element>(cache: &ActivationCache<T>, cfg: &LossConfig) -> Result<Self> {
        let mut layers = BTreeMap::new();
        for lw in &cfg.coral_layers {
            let act = cache.feature(&lw.layer, cfg.tap)?;
            layers.insert(lw.layer.clone(), covariance(act, cfg.normalizer)?);
        }
        Ok(Self { layers })
    }

    pub fn from_covariances(layers: BTreeMap<String, CovMatrix>) -> Self {
        Self { layers }
    }

    pub fn get(&self, layer: &str) -> Result<&CovMatrix> {
        self.layers
            .get(layer)
            .ok_or_else(|| Error::LayerNotConfigured(layer.to_string()))
    }
}

fn feature_pair<'a, T: Element>(
    d: &'a ActivationCache<T>,
    targets: &'a FeatureTargets<T>,
    cfg: &LossConfig,
    layer: &str,
) -> Result<(&'a Tensor<T>, &'a Tensor<T>)> {
    let hd = d.feature(layer, cfg.tap)?;
    let hc = targets.get(layer)?;
    hd.require_same_shape(hc, &format!("feature loss at `{layer}`"))?;
    Ok((hd, hc))
}

/// Feature loss against precomputed content activations.
pub fn feature_loss_against<T: Element>(
    d: &ActivationCache<T>,
    targets: &FeatureTargets<T>,
    cfg: &LossConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for lw in &cfg.feat_layers {
        let (hd, hc) = feature_pair(d, targets, cfg, &lw.layer)?;
        let alpha = hd.shape().len() as f64;
        let sq: f64 = hd
            .data()
            .iter()
            .zip(hc.data())
            .map(|(a, b)| {
                let diff = a.as_f64() - b.as_f64();
                diff * diff
            })
            .sum();
        total += lw.weight / (2.0 * alpha) * sq;
    }
    Ok(total)
}

pub fn feature_loss<T: Element>(
    d: &ActivationCache<T>,
    c: &ActivationCache<T>,
    cfg: &LossConfig,
) -> Result<f64> {
    feature_loss_against(d, &FeatureTargets::from_cache(c, cfg)?, cfg)
}

/// `(ω_f / α) · (H(D) − H(C))` at `layer`.
pub fn feature_loss_grad_against<T: Element>(
    d: &ActivationCache<T>,
    targets: &FeatureTargets<T>,
    cfg: &LossConfig,
    layer: &str,
) -> Result<Tensor<T>> {
    let weight = cfg.feat_weight(layer)?;
    let (hd, hc) = feature_pair(d, targets, cfg, layer)?;
    let k = weight / hd.shape().len() as f64;
    let data = hd
        .data()
        .iter()
        .zip(hc.data())
        .map(|(a, b)| T::from_f64(k * (a.as_f64() - b.as_f64())))
        .collect();
    Tensor::from_vec(hd.shape(), data)
}

pub fn feature_loss_grad<T: Element>(
    d: &ActivationCache<T>,
    c: &ActivationCache<T>,
    cfg: &LossConfig,
    layer: &str,
) -> Result<Tensor<T>> {
    cfg.feat_weight(layer)?;
    let hc = c.feature(layer, cfg.tap)?;
    let targets = FeatureTargets {
        layers: BTreeMap::from([(layer.to_string(), hc.clone())]),
    };
    feature_loss_grad_against(d, &targets, cfg, layer)
}

fn coral_layer_loss(cov_d: &CovMatrix, cov_r: &CovMatrix, weight: f64, alpha: f64) -> Result<f64> {
    Ok(weight / (4.0 * alpha * alpha) * cov_d.frobenius_sq_distance(cov_r)?)
}

/// CORAL loss against precomputed style covariances.
pub fn coral_loss_against<T: Element>(
    d: &ActivationCache<T>,
    targets: &CoralTargets,
    cfg: &LossConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for lw in &cfg.coral_layers {
        let hd = d.feature(&lw.layer, cfg.tap)?;
        let cov_d = covariance(hd, cfg.normalizer)?;
        let alpha = hd.shape().len() as f64;
        total += coral_layer_loss(&cov_d, targets.get(&lw.layer)?, lw.weight, alpha)
            .map_err(|e| with_layer(e, &lw.layer))?;
    }
    Ok(total)
}

fn with_layer(e: Error, layer: &str) -> Error {
    match e {
        Error::ShapeMismatch { expected, found, .. } => Error::ShapeMismatch {
            context: format!("coral loss at `{layer}`"),
            expected,
            found,
        },
        other => other,
    }
}

/// CORAL loss between two caches. Spatial sizes may differ; channel counts may not.
pub fn coral_loss<T: Element>(
    d: &ActivationCache<T>,
    r: &ActivationCache<T>,
    cfg: &LossConfig,
) -> Result<f64> {
    coral_loss_against(d, &CoralTargets::from_cache(r, cfg)?, cfg)
}

/// Analytic CORAL gradient at `layer` against precomputed style covariances.
pub fn coral_loss_grad_against<T: Element>(
    d: &ActivationCache<T>,
    targets: &CoralTargets,
    cfg: &LossConfig,
    layer: &str,
) -> Result<Tensor<T>> {
    let weight = cfg.coral_weight(layer)?;
    let hd = d.feature(layer, cfg.tap)?;
    let shape = hd.shape();
    let (n, f) = (shape.c, shape.plane());
    let cov_d = covariance(hd, cfg.normalizer)?;
    let cov_r = targets.get(layer)?;
    if cov_r.n != n {
        return Err(Error::ShapeMismatch {
            context: format!("coral gradient at `{layer}`"),
            expected: format!("{n} channels"),
            found: format!("{} channels", cov_r.n),
        });
    }
    let delta: Vec<f64> = cov_d.values.iter().zip(&cov_r.values).map(|(a, b)| a - b).collect();
    let factor = cfg.normalizer.factor(n, f);
    let alpha = (n * f) as f64;
    let scale = weight * factor / (alpha * alpha);

    // Centered activations, channel-major: hc[c, p] = H[c, p] − b · s_c.
    let mut hc: Vec<f64> = hd.data().iter().map(|v| v.as_f64()).collect();
    for row in hc.chunks_mut(f) {
        let shift = factor * row.iter().sum::<f64>();
        row.iter_mut().for_each(|v| *v -= shift);
    }
    // Gradient in channel-major form: scale · Δ · hc (Δ is symmetric).
    let mut grad = vec![0.0; n * f];
    gemm(
        n,
        n,
        f,
        &delta,
        Strides::row_major(n),
        &hc,
        Strides::row_major(f),
        0.0,
        &mut grad,
        Strides::row_major(f),
    );
    Tensor::from_vec(shape, grad.into_iter().map(|v| T::from_f64(scale * v)).collect())
}

pub fn coral_loss_grad<T: Element>(
    d: &ActivationCache<T>,
    r: &ActivationCache<T>,
    cfg: &LossConfig,
    layer: &str,
) -> Result<Tensor<T>> {
    cfg.coral_weight(layer)?;
    let cov = covariance(r.feature(layer, cfg.tap)?, cfg.normalizer)?;
    let targets = CoralTargets {
        layers: BTreeMap::from([(layer.to_string(), cov)]),
    };
    coral_loss_grad_against(d, &targets, cfg, layer)
}

/// Loss components of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub total: f64,
    pub feat: f64,
    pub coral: f64,
}

impl Objective {
    pub fn new(feat: f64, coral: f64, lambda: f64) -> Self {
        Self {
            total: feat + lambda * coral,
            feat,
            coral,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.feat.is_finite() && self.coral.is_finite()
    }
}

pub fn total_objective_against<T: Element>(
    d: &ActivationCache<T>,
    content: &FeatureTargets<T>,
    style: &CoralTargets,
    cfg: &LossConfig,
) -> Result<Objective> {
    let feat = feature_loss_against(d, content, cfg)?;
    let coral = coral_loss_against(d, style, cfg)?;
    Ok(Objective::new(feat, coral, cfg.lambda))
}

/// `feat + λ · coral`, with both components.
pub fn total_objective<T: Element>(
    d: &ActivationCache<T>,
    c: &ActivationCache<T>,
    r: &ActivationCache<T>,
    cfg: &LossConfig,
) -> Result<Objective> {
    total_objective_against(
        d,
        &FeatureTargets::from_cache(c, cfg)?,
        &CoralTargets::from_cache(r, cfg)?,
        cfg,
    )
}

/// Activation gradients of the combined objective, keyed by the tapped layer
/// names so they can be fed straight into
/// [`Network::backward_input_grad`](crate::net::Network::backward_input_grad).
pub fn objective_gradients<T: Element>(
    net: &NetworkSpec,
    d: &ActivationCache<T>,
    content: &FeatureTargets<T>,
    style: &CoralTargets,
    cfg: &LossConfig,
) -> Result<GradientMap<T>> {
    let mut map = GradientMap::new();
    for lw in &cfg.feat_layers {
        let g = feature_loss_grad_against(d, content, cfg, &lw.layer)?;
        accumulate_gradient(&mut map, net.feature_layer(&lw.layer, cfg.tap)?, g)?;
    }
    if cfg.lambda != 0.0 {
        let lambda = T::from_f64(cfg.lambda);
        for lw in &cfg.coral_layers {
            let g = coral_loss_grad_against(d, style, cfg, &lw.layer)?.scale(lambda);
            accumulate_gradient(&mut map, net.feature_layer(&lw.layer, cfg.tap)?, g)?;
        }
    }
    Ok(map)
}
