//! VGG-style convolutional feature extractor.
//!
//! The network is a flat list of 3x3/stride 1/pad 1 convolutions, ReLUs and
//! 2x2/stride 2 pooling layers. A forward pass records every layer output in an
//! [`ActivationCache`]; the backward pass takes gradients injected at any cached
//! layer and maps them to a gradient with respect to the input image. Weight
//! gradients are never computed.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::linalg::{gemm, Strides};
use crate::tensor::{Element, Shape, Tensor};

pub const CONV_KERNEL: usize = 3;
pub const CONV_STRIDE: usize = 1;
pub const CONV_PAD: usize = 1;
pub const POOL_WINDOW: usize = 2;
pub const POOL_STRIDE: usize = 2;

const TAPS: usize = CONV_KERNEL * CONV_KERNEL;
/// Output positions processed per im2col block.
const COL_BLOCK: usize = 1024;

/// Output channels of the 13 VGG-16 convolutions, conv1_1 through conv5_3.
pub const VGG16_CHANNELS: [usize; 13] = [
    64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512,
];
const VGG16_BLOCKS: [usize; 5] = [2, 2, 3, 3, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv { out_channels: usize },
    Relu,
    Pool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv(name: impl Into<String>, out_channels: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv { out_channels },
        }
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Relu,
        }
    }

    pub fn pool(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Pool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    #[default]
    Max,
    Average,
}

/// Which activation a conv layer name refers to when a loss reads it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureTap {
    /// Output of the ReLU directly after the convolution (falls back to the
    /// convolution output when no ReLU follows it).
    #[default]
    PostRelu,
    /// Raw convolution output.
    PreRelu,
}

/// Layer list of a network, without weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    input_channels: usize,
    layers: Vec<LayerSpec>,
    pool: PoolMode,
    index: HashMap<String, usize>,
}

impl NetworkSpec {
    pub fn new(input_channels: usize, layers: Vec<LayerSpec>, pool: PoolMode) -> Result<Self> {
        if input_channels == 0 {
            return Err(Error::InvalidNetwork("input channels must be at least 1".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        let mut index = HashMap::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            if let LayerKind::Conv { out_channels: 0 } = layer.kind {
                return Err(Error::InvalidNetwork(format!(
                    "conv layer `{}` has zero output channels",
                    layer.name
                )));
            }
            if index.insert(layer.name.clone(), i).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate layer name `{}`",
                    layer.name
                )));
            }
        }
        Ok(Self {
            input_channels,
            layers,
            pool,
            index,
        })
    }

    /// The 13-conv / 5-pool VGG-16 feature stack (no fully connected layers).
    pub fn vgg16() -> Self {
        Self::vgg16_with_channels(&VGG16_CHANNELS)
    }

    /// VGG-16 topology with every channel count divided by `divisor` (at least 1).
    ///
    /// Layer names, pooling positions and receptive fields equal the full
    /// preset; only the widths shrink. Used for random-weight runs that would
    /// be too slow at full width.
    pub fn vgg16_narrow(divisor: usize) -> Self {
        let divisor = divisor.max(1);
        let channels: Vec<usize> = VGG16_CHANNELS.iter().map(|c| (c / divisor).max(1)).collect();
        Self::vgg16_with_channels(&channels)
    }

    fn vgg16_with_channels(channels: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(37);
        let mut k = 0;
        for (block, &depth) in VGG16_BLOCKS.iter().enumerate() {
            for i in 1..=depth {
                let tag = format!("{}_{}", block + 1, i);
                layers.push(LayerSpec::conv(format!("conv{tag}"), channels[k]));
                layers.push(LayerSpec::relu(format!("relu{tag}")));
                k += 1;
            }
            layers.push(LayerSpec::pool(format!("pool{}", block + 1)));
        }
        Self::new(3, layers, PoolMode::Max).expect("VGG-16 preset is well formed")
    }

    pub fn with_pool_mode(mut self, pool: PoolMode) -> Self {
        self.pool = pool;
        self
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn pool_mode(&self) -> PoolMode {
        self.pool
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// Conv layers as `(layer index, name, in_channels, out_channels)`.
    pub fn conv_layers(&self) -> Vec<(usize, &str, usize, usize)> {
        let mut c = self.input_channels;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerKind::Conv { out_channels } = layer.kind {
                out.push((i, layer.name.as_str(), c, out_channels));
                c = out_channels;
            }
        }
        out
    }

    /// Channel count of the output of layer `index`.
    pub fn channels_after(&self, index: usize) -> usize {
        self.layers[..=index]
            .iter()
            .rev()
            .find_map(|l| match l.kind {
                LayerKind::Conv { out_channels } => Some(out_channels),
                _ => None,
            })
            .unwrap_or(self.input_channels)
    }

    /// Output shape of layer `name` for a `(1, c, h, w)` input.
    pub fn output_shape(&self, name: &str, h: usize, w: usize) -> Result<Shape> {
        let last = self.layer_index(name)?;
        let (mut h, mut w) = (h, w);
        for layer in &self.layers[..=last] {
            if layer.kind == LayerKind::Pool {
                (h, w) = pooled_dims(&layer.name, h, w)?;
            }
        }
        Ok(Shape::image(self.channels_after(last), h, w))
    }

    /// Theoretical receptive field side length of one activation of `name`.
    pub fn receptive_field(&self, name: &str) -> Result<usize> {
        let last = self.layer_index(name)?;
        let (mut field, mut jump) = (1usize, 1usize);
        for layer in &self.layers[..=last] {
            let (kernel, stride) = match layer.kind {
                LayerKind::Conv { .. } => (CONV_KERNEL, CONV_STRIDE),
                LayerKind::Pool => (POOL_WINDOW, POOL_STRIDE),
                LayerKind::Relu => continue,
            };
            field += (kernel - 1) * jump;
            jump *= stride;
        }
        Ok(field)
    }

    /// Name of the layer whose output a loss on conv layer `conv` reads.
    pub fn feature_layer(&self, conv: &str, tap: FeatureTap) -> Result<&str> {
        feature_layer_in(&self.layers, conv, tap)
    }
}

fn feature_layer_in<'a>(layers: &'a [LayerSpec], conv: &str, tap: FeatureTap) -> Result<&'a str> {
    let i = layers
        .iter()
        .position(|l| l.name == conv)
        .ok_or_else(|| Error::UnknownLayer(conv.to_string()))?;
    if !matches!(layers[i].kind, LayerKind::Conv { .. }) {
        return Err(Error::InvalidConfig(format!(
            "loss layer `{conv}` is not a convolution"
        )));
    }
    let name = match (tap, layers.get(i + 1)) {
        (FeatureTap::PostRelu, Some(next)) if next.kind == LayerKind::Relu => &next.name,
        _ => &layers[i].name,
    };
    Ok(name.as_str())
}

fn pooled_dims(layer: &str, h: usize, w: usize) -> Result<(usize, usize)> {
    if h < POOL_WINDOW || w < POOL_WINDOW {
        return Err(Error::SpatialUnderflow {
            layer: layer.to_string(),
            h,
            w,
        });
    }
    Ok(((h - POOL_WINDOW) / POOL_STRIDE + 1, (w - POOL_WINDOW) / POOL_STRIDE + 1))
}

/// Kernel `(out_c, in_c, 3, 3)` and bias `(out_c)` of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T = f32> {
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
struct ConvKernel {
    in_c: usize,
    out_c: usize,
    /// `out_c x (in_c * 9)` row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// A [`NetworkSpec`] together with its convolution weights.
///
/// Immutable after construction; share it freely between threads.
#[derive(Debug, Clone)]
pub struct Network<T = f32> {
    spec: NetworkSpec,
    weights: Vec<ConvWeights<T>>,
    kernels: Vec<ConvKernel>,
    /// Conv slot for each layer index.
    conv_slot: Vec<Option<usize>>,
    means: [f64; 3],
}

impl<T: Element> Network<T> {
    /// `weights` holds one entry per conv layer, in layer order.
    pub fn new(spec: NetworkSpec, weights: Vec<ConvWeights<T>>, means: [f64; 3]) -> Result<Self> {
        let convs = spec.conv_layers();
        if convs.len() != weights.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} conv layers but {} weight sets",
                convs.len(),
                weights.len()
            )));
        }
        let mut conv_slot = vec![None; spec.layers.len()];
        let mut kernels = Vec::with_capacity(convs.len());
        for (slot, (&(index, name, in_c, out_c), w)) in convs.iter().zip(&weights).enumerate() {
            let want = Shape::new(out_c, in_c, CONV_KERNEL, CONV_KERNEL);
            if w.kernel.shape() != want {
                return Err(Error::ShapeMismatch {
                    context: format!("kernel of `{name}`"),
                    expected: want.to_string(),
                    found: w.kernel.shape().to_string(),
                });
            }
            if w.bias.len() != out_c {
                return Err(Error::ShapeMismatch {
                    context: format!("bias of `{name}`"),
                    expected: out_c.to_string(),
                    found: w.bias.len().to_string(),
                });
            }
            conv_slot[index] = Some(slot);
            kernels.push(ConvKernel {
                in_c,
                out_c,
                weights: w.kernel.data().iter().map(|v| v.as_f64()).collect(),
                bias: w.bias.iter().map(|v| v.as_f64()).collect(),
            });
        }
        Ok(Self {
            spec,
            weights,
            kernels,
            conv_slot,
            means,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Conv weights in layer order.
    pub fn weights(&self) -> &[ConvWeights<T>] {
        &self.weights
    }

    /// Per-channel preprocessing means shipped with the weights.
    pub fn means(&self) -> [f64; 3] {
        self.means
    }

    /// Same network with weights converted to another element type.
    pub fn cast<U: Element>(&self) -> Network<U> {
        let weights = self
            .weights
            .iter()
            .map(|w| ConvWeights {
                kernel: w.kernel.cast(),
                bias: w.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            })
            .collect();
        Network::new(self.spec.clone(), weights, self.means).expect("cast preserves shapes")
    }

    /// Runs layers up to and including `upto`, caching every layer output.
    pub fn forward(&self, image: &Tensor<T>, upto: &str) -> Result<ActivationCache<T>> {
        let last = self.spec.layer_index(upto)?;
        let shape = image.shape();
        if shape.n != 1 {
            return Err(Error::InvalidShape(format!(
                "forward expects a single image, got batch {}",
                shape.n
            )));
        }
        if shape.c != self.spec.input_channels {
            return Err(Error::ChannelMismatch {
                layer: self.spec.layers[0].name.clone(),
                expected: self.spec.input_channels,
                found: shape.c,
            });
        }
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(last + 1);
        let mut argmax: Vec<Option<Vec<u32>>> = Vec::with_capacity(last + 1);
        for i in 0..=last {
            let input = outputs.last().unwrap_or(image);
            let layer = &self.spec.layers[i];
            let (out, arg) = match layer.kind {
                LayerKind::Conv { .. } => {
                    let k = &self.kernels[self.conv_slot[i].expect("conv slot")];
                    if input.shape().c != k.in_c {
                        return Err(Error::ChannelMismatch {
                            layer: layer.name.clone(),
                            expected: k.in_c,
                            found: input.shape().c,
                        });
                    }
                    (conv_forward(input, k), None)
                }
                LayerKind::Relu => (input.map(|v| if v <= T::zero() { T::zero() } else { v }), None),
                LayerKind::Pool => {
                    let s = input.shape();
                    let (oh, ow) = pooled_dims(&layer.name, s.h, s.w)?;
                    match self.spec.pool {
                        PoolMode::Max => {
                            let (out, arg) = max_pool_forward(input, oh, ow);
                            (out, Some(arg))
                        }
                        PoolMode::Average => (avg_pool_forward(input, oh, ow), None),
                    }
                }
            };
            outputs.push(out);
            argmax.push(arg);
        }
        Ok(ActivationCache {
            layers: self.spec.layers.clone(),
            input: image.clone(),
            outputs,
            argmax,
        })
    }

    /// Forward pass that stops as soon as every layer in `needed` is cached.
    pub fn forward_covering<'a>(
        &self,
        image: &Tensor<T>,
        needed: impl IntoIterator<Item = &'a str>,
    ) -> Result<ActivationCache<T>> {
        let mut deepest: Option<usize> = None;
        for name in needed {
            let i = self.spec.layer_index(name)?;
            deepest = Some(deepest.map_or(i, |d| d.max(i)));
        }
        let deepest = deepest.ok_or_else(|| Error::InvalidConfig("no layers requested".into()))?;
        self.forward(image, &self.spec.layers[deepest].name)
    }

    /// Gradient of `Σ_l <injected[l], output_l>` with respect to the input image.
    ///
    /// Gradients injected at several layers accumulate. ReLU backward masks by
    /// the sign of its cached input; max-pool backward routes to the cached
    /// argmax (first maximum in scan order).
    pub fn backward_input_grad(
        &self,
        cache: &ActivationCache<T>,
        injected: &GradientMap<T>,
    ) -> Result<Tensor<T>> {
        let mut at_layer: BTreeMap<usize, &Tensor<T>> = BTreeMap::new();
        for (name, grad) in injected {
            let i = cache.position(name)?;
            let want = cache.outputs[i].shape();
            if grad.shape() != want {
                return Err(Error::ShapeMismatch {
                    context: format!("gradient injected at `{name}`"),
                    expected: want.to_string(),
                    found: grad.shape().to_string(),
                });
            }
            at_layer.insert(i, grad);
        }
        let Some((&deepest, _)) = at_layer.last_key_value() else {
            return Tensor::zeros(cache.input.shape());
        };
        let mut grad = Tensor::zeros(cache.outputs[deepest].shape())?;
        for i in (0..=deepest).rev() {
            if let Some(g) = at_layer.get(&i) {
                grad.add_assign(g)?;
            }
            let input = if i == 0 { &cache.input } else { &cache.outputs[i - 1] };
            grad = match self.spec.layers[i].kind {
                LayerKind::Conv { .. } => {
                    let k = &self.kernels[self.conv_slot[i].expect("conv slot")];
                    conv_backward_input(&grad, k, input.shape())
                }
                LayerKind::Relu => {
                    let mut g = grad;
                    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
                        if x <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                    g
                }
                LayerKind::Pool => match &cache.argmax[i] {
                    Some(arg) => max_pool_backward(&grad, arg, input.shape()),
                    None => avg_pool_backward(&grad, input.shape()),
                },
            };
        }
        Ok(grad)
    }
}

/// Gradients to inject, keyed by exact layer name.
pub type GradientMap<T = f32> = BTreeMap<String, Tensor<T>>;

/// Adds `grad` into `map[name]`, inserting it if absent.
pub fn accumulate_gradient<T: Element>(
    map: &mut GradientMap<T>,
    name: &str,
    grad: Tensor<T>,
) -> Result<()> {
    match map.get_mut(name) {
        Some(existing) => existing.add_assign(&grad),
        None => {
            map.insert(name.to_string(), grad);
            Ok(())
        }
    }
}

/// Layer outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache<T = f32> {
    /// Every layer of the network, executed or not.
    layers: Vec<LayerSpec>,
    input: Tensor<T>,
    outputs: Vec<Tensor<T>>,
    argmax: Vec<Option<Vec<u32>>>,
}

impl<T: Element> ActivationCache<T> {
    fn position(&self, name: &str) -> Result<usize> {
        self.layers[..self.outputs.len()]
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::NotCached(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_ok()
    }

    /// Names of the cached layers in execution order.
    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers[..self.outputs.len()].iter().map(|l| l.name.as_str())
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }

    /// Output of layer `name` (`H^l`).
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.outputs[self.position(name)?])
    }

    /// Activation a loss on conv layer `conv` reads, per `tap`.
    pub fn feature(&self, conv: &str, tap: FeatureTap) -> Result<&Tensor<T>> {
        self.get(feature_layer_in(&self.layers, conv, tap)?)
    }

    /// `N^l`: channel count of layer `name`.
    pub fn channels(&self, name: &str) -> Result<usize> {
        Ok(self.get(name)?.shape().c)
    }

    /// `F^l`: spatial positions per channel of layer `name`.
    pub fn positions(&self, name: &str) -> Result<usize> {
        Ok(self.get(name)?.shape().plane())
    }

    /// `α^l = N^l · F^l`.
    pub fn alpha(&self, name: &str) -> Result<usize> {
        let s = self.get(name)?.shape();
        Ok(s.c * s.plane())
    }
}

/// Out-of-range taps read as zero.
fn im2col_block<T: Element>(
    input: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    p0: usize,
    cols: usize,
    col: &mut [f64],
) {
    for ci in 0..c_in {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..CONV_KERNEL {
            for kx in 0..CONV_KERNEL {
                let row = &mut col[((ci * TAPS) + ky * CONV_KERNEL + kx) * cols..][..cols];
                for (j, dst) in row.iter_mut().enumerate() {
                    let p = p0 + j;
                    let (y, x) = (p / w, p % w);
                    let (sy, sx) = (y + ky, x + kx);
                    *dst = if sy < CONV_PAD || sx < CONV_PAD || sy - CONV_PAD >= h || sx - CONV_PAD >= w {
                        0.0
                    } else {
                        plane[(sy - CONV_PAD) * w + sx - CONV_PAD].as_f64()
                    };
                }
            }
        }
    }
}

fn col2im_block(dcol: &[f64], c_in: usize, h: usize, w: usize, p0: usize, cols: usize, dx: &mut [f64]) {
    for ci in 0..c_in {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..CONV_KERNEL {
            for kx in 0..CONV_KERNEL {
                let row = &dcol[((ci * TAPS) + ky * CONV_KERNEL + kx) * cols..][..cols];
                for (j, &v) in row.iter().enumerate() {
                    let p = p0 + j;
                    let (y, x) = (p / w, p % w);
                    let (sy, sx) = (y + ky, x + kx);
                    if sy >= CONV_PAD && sx >= CONV_PAD && sy - CONV_PAD < h && sx - CONV_PAD < w {
                        plane[(sy - CONV_PAD) * w + sx - CONV_PAD] += v;
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Element>(input: &Tensor<T>, k: &ConvKernel) -> Tensor<T> {
    let s = input.shape();
    let positions = s.plane();
    let depth = k.in_c * TAPS;
    let mut out = vec![0.0f64; k.out_c * positions];
    for (co, row) in out.chunks_mut(positions).enumerate() {
        row.fill(k.bias[co]);
    }
    let block = COL_BLOCK.min(positions);
    let mut col = vec![0.0f64; depth * block];
    let mut p0 = 0;
    while p0 < positions {
        let cols = block.min(positions - p0);
        im2col_block(input.data(), k.in_c, s.h, s.w, p0, cols, &mut col);
        gemm(
            k.out_c,
            depth,
            cols,
            &k.weights,
            Strides::row_major(depth),
            &col,
            Strides::row_major(cols),
            1.0,
            &mut out[p0..],
            Strides::row_major(positions),
        );
        p0 += cols;
    }
    Tensor::from_vec(
        Shape::image(k.out_c, s.h, s.w),
        out.into_iter().map(T::from_f64).collect(),
    )
    .expect("conv output shape")
}

fn conv_backward_input<T: Element>(grad: &Tensor<T>, k: &ConvKernel, input: Shape) -> Tensor<T> {
    let positions = input.plane();
    let depth = k.in_c * TAPS;
    let g: Vec<f64> = grad.data().iter().map(|v| v.as_f64()).collect();
    let mut dx = vec![0.0f64; input.len()];
    let block = COL_BLOCK.min(positions);
    let mut dcol = vec![0.0f64; depth * block];
    let mut p0 = 0;
    while p0 < positions {
        let cols = block.min(positions - p0);
        gemm(
            depth,
            k.out_c,
            cols,
            &k.weights,
            Strides::transposed(depth),
            &g[p0..],
            Strides::row_major(positions),
            0.0,
            &mut dcol,
            Strides::row_major(cols),
        );
        col2im_block(&dcol, k.in_c, input.h, input.w, p0, cols, &mut dx);
        p0 += cols;
    }
    Tensor::from_vec(input, dx.into_iter().map(T::from_f64).collect()).expect("input grad shape")
}

fn max_pool_forward<T: Element>(input: &Tensor<T>, oh: usize, ow: usize) -> (Tensor<T>, Vec<u32>) {
    let s = input.shape();
    let mut out = Vec::with_capacity(s.c * oh * ow);
    let mut arg = Vec::with_capacity(s.c * oh * ow);
    for c in 0..s.c {
        let plane = input.plane(0, c);
        let base = c * s.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (oy * POOL_STRIDE) * s.w + ox * POOL_STRIDE;
                for dy in 0..POOL_WINDOW {
                    for dx in 0..POOL_WINDOW {
                        let p = (oy * POOL_STRIDE + dy) * s.w + ox * POOL_STRIDE + dx;
                        // Strict comparison keeps the first maximum in scan order.
                        if plane[p] > plane[best] {
                            best = p;
                        }
                    }
                }
                out.push(plane[best]);
                arg.push((base + best) as u32);
            }
        }
    }
    let shape = Shape::image(s.c, oh, ow);
    (Tensor::from_vec(shape, out).expect("pool output shape"), arg)
}

fn max_pool_backward<T: Element>(grad: &Tensor<T>, arg: &[u32], input: Shape) -> Tensor<T> {
    let mut dx = vec![T::zero(); input.len()];
    for (&g, &a) in grad.data().iter().zip(arg) {
        dx[a as usize] = dx[a as usize] + g;
    }
    Tensor::from_vec(input, dx).expect("pool grad shape")
}

fn avg_pool_forward<T: Element>(input: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let s = input.shape();
    let norm = (POOL_WINDOW * POOL_WINDOW) as f64;
    Tensor::from_fn(Shape::image(s.c, oh, ow), |_, c, oy, ox| {
        let mut acc = 0.0f64;
        for dy in 0..POOL_WINDOW {
            for dx in 0..POOL_WINDOW {
                acc += input.get(0, c, oy * POOL_STRIDE + dy, ox * POOL_STRIDE + dx).as_f64();
            }
        }
        T::from_f64(acc / norm)
    })
    .expect("pool output shape")
}

fn avg_pool_backward<T: Element>(grad: &Tensor<T>, input: Shape) -> Tensor<T> {
    let g = grad.shape();
    let share = T::from_f64(1.0 / (POOL_WINDOW * POOL_WINDOW) as f64);
    let mut dx = Tensor::zeros(input).expect("pool grad shape");
    for c in 0..g.c {
        for oy in 0..g.h {
            for ox in 0..g.w {
                let v = grad.get(0, c, oy, ox) * share;
                for dy in 0..POOL_WINDOW {
                    for ddx in 0..POOL_WINDOW {
                        let (y, x) = (oy * POOL_STRIDE + dy, ox * POOL_STRIDE + ddx);
                        let cur = dx.get(0, c, y, x);
                        dx.set(0, c, y, x, cur + v);
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_conv(kernel: Vec<f64>, bias: f64) -> Network<f64> {
        let spec = NetworkSpec::new(1, vec![LayerSpec::conv("conv1_1", 1)], PoolMode::Max).unwrap();
        let w = ConvWeights {
            kernel: Tensor::from_vec(Shape::new(1, 1, 3, 3), kernel).unwrap(),
            bias: vec![bias],
        };
        Network::new(spec, vec![w], [0.0; 3]).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let net = single_conv(k, 0.0);
        let img = Tensor::filled(Shape::image(1, 3, 3), 1.0).unwrap();
        let cache = net.forward(&img, "conv1_1").unwrap();
        assert_eq!(cache.get("conv1_1").unwrap(), &img);
    }

    #[test]
    fn vgg16_shape_algebra() {
        let spec = NetworkSpec::vgg16();
        assert_eq!(spec.conv_layers().len(), 13);
        assert_eq!(spec.output_shape("conv1_1", 224, 224).unwrap(), Shape::image(64, 224, 224));
        assert_eq!(spec.output_shape("pool2", 224, 224).unwrap(), Shape::image(128, 56, 56));
        assert_eq!(spec.output_shape("conv5_1", 64, 64).unwrap(), Shape::image(512, 4, 4));
        assert_eq!(spec.output_shape("pool1", 7, 9).unwrap(), Shape::image(64, 3, 4));
        assert!(matches!(
            spec.output_shape("conv5_1", 8, 8),
            Err(Error::SpatialUnderflow { .. })
        ));
    }

    #[test]
    fn receptive_fields() {
        let spec = NetworkSpec::vgg16();
        assert_eq!(spec.receptive_field("conv1_1").unwrap(), 3);
        assert_eq!(spec.receptive_field("relu1_1").unwrap(), 3);
        assert_eq!(spec.receptive_field("pool1").unwrap(), 6);
        assert!(matches!(spec.receptive_field("fc6"), Err(Error::UnknownLayer(_))));
    }

    #[test]
    fn feature_tap_resolution() {
        let spec = NetworkSpec::vgg16();
        assert_eq!(spec.feature_layer("conv3_2", FeatureTap::PostRelu).unwrap(), "relu3_2");
        assert_eq!(spec.feature_layer("conv3_2", FeatureTap::PreRelu).unwrap(), "conv3_2");
        assert!(spec.feature_layer("pool1", FeatureTap::PostRelu).is_err());
    }

    #[test]
    fn rejects_duplicate_names() {
        let layers = vec![LayerSpec::conv("a", 2), LayerSpec::relu("a")];
        assert!(NetworkSpec::new(3, layers, PoolMode::Max).is_err());
    }

    #[test]
    fn max_pool_ties_route_to_first_index() {
        let spec = NetworkSpec::new(
            1,
            vec![LayerSpec::conv("c", 1), LayerSpec::pool("p")],
            PoolMode::Max,
        )
        .unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = ConvWeights {
            kernel: Tensor::from_vec(Shape::new(1, 1, 3, 3), k).unwrap(),
            bias: vec![0.0],
        };
        let net: Network<f64> = Network::new(spec, vec![w], [0.0; 3]).unwrap();
        let img = Tensor::filled(Shape::image(1, 2, 2), 5.0).unwrap();
        let cache = net.forward(&img, "p").unwrap();
        let mut inj = GradientMap::new();
        inj.insert("p".into(), Tensor::filled(Shape::image(1, 1, 1), 1.0).unwrap());
        let g = net.backward_input_grad(&cache, &inj).unwrap();
        // Identity conv: the image gradient is the pool routing itself.
        let center_only: Vec<f64> = g.data().to_vec();
        assert!(center_only[0] > 0.0);
        assert_eq!(&center_only[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_errors() {
        let net = single_conv(vec![0.0; 9], 0.0);
        let img = Tensor::zeros(Shape::image(2, 3, 3)).unwrap();
        assert!(matches!(net.forward(&img, "conv1_1"), Err(Error::ChannelMismatch { .. })));
        let img = Tensor::zeros(Shape::image(1, 3, 3)).unwrap();
        assert!(matches!(net.forward(&img, "conv9"), Err(Error::UnknownLayer(_))));
    }

    #[test]
    fn backward_rejects_bad_injections() {
        let net = single_conv(vec![1.0; 9], 0.0);
        let img = Tensor::filled(Shape::image(1, 3, 3), 1.0).unwrap();
        let cache = net.forward(&img, "conv1_1").unwrap();
        let mut inj = GradientMap::new();
        inj.insert("conv1_1".into(), Tensor::zeros(Shape::image(1, 2, 3)).unwrap());
        assert!(matches!(
            net.backward_input_grad(&cache, &inj),
            Err(Error::ShapeMismatch { .. })
        ));
        let mut inj = GradientMap::new();
        inj.insert("relu1_1".into(), Tensor::zeros(Shape::image(1, 3, 3)).unwrap());
        assert!(matches!(net.backward_input_grad(&cache, &inj), Err(Error::NotCached(_))));
    }
}
