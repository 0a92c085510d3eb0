//! Feature-space domain discrepancy: squared Frobenius distances between
//! per-layer channel covariances of two image sets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{covariance, CovMatrix, CovNormalizer, PRESET_CORAL_LAYERS};
use crate::net::{FeatureTap, Network};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Mean over `(a_i, b_i)` for equally long sets, zipped in order.
    #[default]
    Paired,
    /// Mean over every `(a_i, b_j)`.
    AllPairs,
    /// Distance between the mean covariance of each set.
    MeanCovariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub layers: Vec<String>,
    pub tap: FeatureTap,
    pub normalizer: CovNormalizer,
    pub aggregation: Aggregation,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            layers: PRESET_CORAL_LAYERS.iter().map(|s| s.to_string()).collect(),
            tap: FeatureTap::PostRelu,
            normalizer: CovNormalizer::Channels,
            aggregation: Aggregation::Paired,
        }
    }
}

/// One output record: `{layer, distance, n_pairs}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDistance {
    pub layer: String,
    pub distance: f64,
    pub n_pairs: usize,
}

pub type LayerCovariances = BTreeMap<String, CovMatrix>;

/// Covariances of one (preprocessed) image on every configured layer.
pub fn image_covariances<T: Element>(
    net: &Network<T>,
    image: &Tensor<T>,
    cfg: &MetricsConfig,
) -> Result<LayerCovariances> {
    if cfg.layers.is_empty() {
        return Err(Error::InvalidConfig("no metric layers".into()));
    }
    let tapped = cfg
        .layers
        .iter()
        .map(|l| net.spec().feature_layer(l, cfg.tap))
        .collect::<Result<Vec<_>>>()?;
    let cache = net.forward_covering(image, tapped.iter().copied())?;
    cfg.layers
        .iter()
        .map(|l| Ok((l.clone(), covariance(cache.feature(l, cfg.tap)?, cfg.normalizer)?)))
        .collect()
}

/// Per-layer distances between two sets of precomputed covariances.
pub fn distances_between(
    a: &[LayerCovariances],
    b: &[LayerCovariances],
    cfg: &MetricsConfig,
) -> Result<Vec<LayerDistance>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidConfig("both image sets must be nonempty".into()));
    }
    if cfg.aggregation == Aggregation::Paired && a.len() != b.len() {
        return Err(Error::InvalidConfig(format!(
            "paired aggregation needs equally sized sets, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let pick = |set: &'_ [LayerCovariances], layer: &str, i: usize| -> Result<CovMatrix> {
        set[i]
            .get(layer)
            .cloned()
            .ok_or_else(|| Error::LayerNotConfigured(layer.to_string()))
    };
    cfg.layers
        .iter()
        .map(|layer| {
            let (distance, n_pairs) = match cfg.aggregation {
                Aggregation::Paired => {
                    let mut acc = 0.0;
                    for i in 0..a.len() {
                        acc += pick(a, layer, i)?.frobenius_sq_distance(&pick(b, layer, i)?)?;
                    }
                    (acc / a.len() as f64, a.len())
                }
                Aggregation::AllPairs => {
                    let mut acc = 0.0;
                    for i in 0..a.len() {
                        let ca = pick(a, layer, i)?;
                        for j in 0..b.len() {
                            acc += ca.frobenius_sq_distance(&pick(b, layer, j)?)?;
                        }
                    }
                    let n = a.len() * b.len();
                    (acc / n as f64, n)
                }
                Aggregation::MeanCovariance => {
                    let ma = CovMatrix::mean(&(0..a.len()).map(|i| pick(a, layer, i)).collect::<Result<Vec<_>>>()?)?;
                    let mb = CovMatrix::mean(&(0..b.len()).map(|i| pick(b, layer, i)).collect::<Result<Vec<_>>>()?)?;
                    (ma.frobenius_sq_distance(&mb)?, 1)
                }
            };
            Ok(LayerDistance {
                layer: layer.clone(),
                distance,
                n_pairs,
            })
        })
        .collect()
}

/// Per-layer covariance distance between two image sets.
pub fn coral_distances<T: Element>(
    net: &Network<T>,
    set_a: &[Tensor<T>],
    set_b: &[Tensor<T>],
    cfg: &MetricsConfig,
) -> Result<Vec<LayerDistance>> {
    let covs = |set: &[Tensor<T>]| -> Result<Vec<LayerCovariances>> {
        set.iter().map(|img| image_covariances(net, img, cfg)).collect()
    };
    distances_between(&covs(set_a)?, &covs(set_b)?, cfg)
}
