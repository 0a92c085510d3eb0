//! The synthesis loop: start from the content image plus Gaussian noise and
//! descend `feat + λ · coral` in pixel space.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    objective_gradients, total_objective_against, CoralTargets, FeatureTargets, LossConfig, Objective,
};
use crate::net::{ActivationCache, Network};
use crate::tensor::{Element, Tensor};

/// Step halvings allowed after a non-finite loss before giving up.
pub const MAX_RESTARTS: usize = 5;

/// Isotropic Gaussian perturbation `ε ~ N(0, σ² I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { sigma: 10.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerConfig {
    Adam { step: f64, beta1: f64, beta2: f64, epsilon: f64 },
    GradientDescent { step: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(1.0)
    }
}

impl OptimizerConfig {
    pub fn adam(step: f64) -> Self {
        OptimizerConfig::Adam {
            step,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { step, .. } | OptimizerConfig::GradientDescent { step } => step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub loss: LossConfig,
    pub noise: NoiseSpec,
    pub optimizer: OptimizerConfig,
    pub iterations: usize,
    /// Range the returned image is clamped to; the optimization itself is unconstrained.
    pub clamp: Option<(f64, f64)>,
    /// Trace sampling period. The initial and final iterates are always logged.
    pub log_every: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            noise: NoiseSpec::default(),
            optimizer: OptimizerConfig::default(),
            iterations: 500,
            clamp: None,
            log_every: 10,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise sigma must be finite and nonnegative, got {}",
                self.noise.sigma
            )));
        }
        let step = self.optimizer.step();
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidConfig(format!("step must be positive, got {step}")));
        }
        if let OptimizerConfig::Adam { beta1, beta2, epsilon, .. } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::InvalidConfig("adam needs 0 <= beta < 1 and epsilon > 0".into()));
            }
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo <= hi) {
                return Err(Error::InvalidConfig(format!("empty clamp range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub feat: f64,
    pub coral: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisTrace {
    pub entries: Vec<TraceEntry>,
    pub final_shape: crate::tensor::Shape,
    pub restarts: usize,
    pub wall_time: std::time::Duration,
}

impl SynthesisTrace {
    pub fn initial(&self) -> &TraceEntry {
        self.entries.first().expect("trace always holds the initial iterate")
    }

    pub fn last(&self) -> &TraceEntry {
        self.entries.last().expect("trace always holds the final iterate")
    }

    /// Line-delimited JSON, one `{iter, feat, coral, total}` object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("trace entries serialize"));
            out.push('\n');
        }
        out
    }
}

/// `content + ε`; returns `content` unchanged when `σ = 0`.
pub fn init_image<T: Element>(content: &Tensor<T>, noise: NoiseSpec) -> Tensor<T> {
    if noise.sigma == 0.0 {
        return content.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = Normal::new(0.0, noise.sigma).expect("finite sigma");
    content.map(|v| T::from_f64(v.as_f64() + normal.sample(&mut rng)))
}

enum OptimizerState {
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
    Descent,
}

impl OptimizerState {
    fn new(cfg: &OptimizerConfig, len: usize) -> Self {
        match cfg {
            OptimizerConfig::Adam { .. } => OptimizerState::Adam {
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            },
            OptimizerConfig::GradientDescent { .. } => OptimizerState::Descent,
        }
    }

    fn apply<T: Element>(&mut self, cfg: &OptimizerConfig, step: f64, image: &mut Tensor<T>, grad: &Tensor<T>) {
        match (self, *cfg) {
            (OptimizerState::Adam { m, v, t }, OptimizerConfig::Adam { beta1, beta2, epsilon, .. }) => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (((x, g), m), v) in image.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                    let g = g.as_f64();
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let update = step * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                    *x = T::from_f64(x.as_f64() - update);
                }
            }
            _ => {
                for (x, g) in image.data_mut().iter_mut().zip(grad.data()) {
                    *x = T::from_f64(x.as_f64() - step * g.as_f64());
                }
            }
        }
    }
}

/// Synthesis engine bound to one network and configuration.
///
/// Content and style statistics can be precomputed with
/// [`content_targets`](Self::content_targets) and
/// [`style_targets`](Self::style_targets) and shared across runs.
pub struct Synthesizer<'n, T: Element = f32> {
    net: &'n Network<T>,
    cfg: SynthesisConfig,
    tapped: Vec<String>,
}

impl<'n, T: Element> Synthesizer<'n, T> {
    pub fn new(net: &'n Network<T>, cfg: SynthesisConfig) -> Result<Self> {
        cfg.validate()?;
        let tapped = cfg
            .loss
            .tapped_layers(net.spec())?
            .into_iter()
            .map(str::to_string)
            .collect();
        Ok(Self { net, cfg, tapped })
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.cfg
    }

    fn forward(&self, image: &Tensor<T>) -> Result<ActivationCache<T>> {
        self.net.forward_covering(image, self.tapped.iter().map(String::as_str))
    }

    pub fn content_targets(&self, content: &Tensor<T>) -> Result<FeatureTargets<T>> {
        FeatureTargets::from_cache(&self.forward(content)?, &self.cfg.loss)
    }

    pub fn style_targets(&self, style: &Tensor<T>) -> Result<CoralTargets> {
        CoralTargets::from_cache(&self.forward(style)?, &self.cfg.loss)
    }

    /// Objective of `image` against precomputed targets.
    pub fn evaluate(
        &self,
        image: &Tensor<T>,
        content: &FeatureTargets<T>,
        style: &CoralTargets,
    ) -> Result<Objective> {
        total_objective_against(&self.forward(image)?, content, style, &self.cfg.loss)
    }

    /// Pixel gradient of the objective at `image`.
    pub fn pixel_gradient(
        &self,
        image: &Tensor<T>,
        content: &FeatureTargets<T>,
        style: &CoralTargets,
    ) -> Result<(Objective, Tensor<T>)> {
        let cache = self.forward(image)?;
        let obj = total_objective_against(&cache, content, style, &self.cfg.loss)?;
        let grad = self.gradient_from_cache(&cache, content, style)?;
        Ok((obj, grad))
    }

    fn gradient_from_cache(
        &self,
        cache: &ActivationCache<T>,
        content: &FeatureTargets<T>,
        style: &CoralTargets,
    ) -> Result<Tensor<T>> {
        let injected = objective_gradients(self.net.spec(), cache, content, style, &self.cfg.loss)?;
        self.net.backward_input_grad(cache, &injected)
    }

    pub fn synthesize(&self, content: &Tensor<T>, style: &Tensor<T>) -> Result<(Tensor<T>, SynthesisTrace)> {
        let content_targets = self.content_targets(content)?;
        let style_targets = self.style_targets(style)?;
        self.run(content, &content_targets, &style_targets)
    }

    /// Optimization from `content + ε` against precomputed targets.
    pub fn run(
        &self,
        content: &Tensor<T>,
        content_targets: &FeatureTargets<T>,
        style_targets: &CoralTargets,
    ) -> Result<(Tensor<T>, SynthesisTrace)> {
        let started = Instant::now();
        let cfg = &self.cfg;
        let loss = &cfg.loss;
        let mut image = init_image(content, cfg.noise);
        let mut cache = self.forward(&image)?;
        let mut obj = total_objective_against(&cache, content_targets, style_targets, loss)?;
        if !obj.is_finite() {
            return Err(Error::Diverged { iteration: 0, restarts: 0 });
        }
        let mut entries = vec![entry(0, obj)];
        let mut state = OptimizerState::new(&cfg.optimizer, image.shape().len());
        let mut step = cfg.optimizer.step();
        let mut restarts = 0;
        let mut iter = 0;
        while iter < cfg.iterations {
            let grad = self.gradient_from_cache(&cache, content_targets, style_targets)?;
            let mut next = image.clone();
            state.apply(&cfg.optimizer, step, &mut next, &grad);
            let next_cache = self.forward(&next)?;
            let next_obj = total_objective_against(&next_cache, content_targets, style_targets, loss)?;
            if !next_obj.is_finite() {
                restarts += 1;
                if restarts > MAX_RESTARTS {
                    return Err(Error::Diverged {
                        iteration: iter + 1,
                        restarts: MAX_RESTARTS,
                    });
                }
                step *= 0.5;
                state = OptimizerState::new(&cfg.optimizer, image.shape().len());
                continue;
            }
            iter += 1;
            image = next;
            cache = next_cache;
            obj = next_obj;
            if iter == cfg.iterations || (cfg.log_every > 0 && iter % cfg.log_every == 0) {
                entries.push(entry(iter, obj));
            }
        }
        if let Some((lo, hi)) = cfg.clamp {
            image = image.map(|v| T::from_f64(v.as_f64().clamp(lo, hi)));
        }
        let trace = SynthesisTrace {
            entries,
            final_shape: image.shape(),
            restarts,
            wall_time: started.elapsed(),
        };
        Ok((image, trace))
    }

    /// One synthesis per λ (ascending), all from the same noise seed.
    pub fn sweep_lambda(&self, content: &Tensor<T>, style: &Tensor<T>, lambdas: &[f64]) -> Result<Vec<SweepPoint<T>>> {
        if lambdas.is_empty() {
            return Err(Error::InvalidConfig("lambda sweep needs at least one value".into()));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidConfig(format!("invalid lambda {bad}")));
        }
        let mut sorted = lambdas.to_vec();
        sorted.sort_by(f64::total_cmp);
        let content_targets = self.content_targets(content)?;
        let style_targets = self.style_targets(style)?;
        sorted
            .into_iter()
            .map(|lambda| {
                let mut cfg = self.cfg.clone();
                cfg.loss.lambda = lambda;
                let synth = Synthesizer::new(self.net, cfg)?;
                let (image, trace) = synth.run(content, &content_targets, &style_targets)?;
                let last = *trace.last();
                Ok(SweepPoint {
                    lambda,
                    image,
                    feat: last.feat,
                    coral: last.coral,
                })
            })
            .collect()
    }
}

fn entry(iter: usize, obj: Objective) -> TraceEntry {
    TraceEntry {
        iter,
        feat: obj.feat,
        coral: obj.coral,
        total: obj.total,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint<T = f32> {
    pub lambda: f64,
    pub image: Tensor<T>,
    pub feat: f64,
    pub coral: f64,
}

/// Convenience wrapper around [`Synthesizer::synthesize`].
pub fn synthesize<T: Element>(
    content: &Tensor<T>,
    style: &Tensor<T>,
    net: &Network<T>,
    cfg: &SynthesisConfig,
) -> Result<(Tensor<T>, SynthesisTrace)> {
    Synthesizer::new(net, cfg.clone())?.synthesize(content, style)
}

/// Convenience wrapper around [`Synthesizer::sweep_lambda`].
pub fn sweep_lambda<T: Element>(
    content: &Tensor<T>,
    style: &Tensor<T>,
    net: &Network<T>,
    cfg: &SynthesisConfig,
    lambdas: &[f64],
) -> Result<Vec<SweepPoint<T>>> {
    Synthesizer::new(net, cfg.clone())?.sweep_lambda(content, style, lambdas)
}
