//! The dual-tower convolutional network.
//!
//! Two convolutional towers read the part patch (RGB) and the body patch
//! (RGB plus a binary mask of the part's location). Their outputs are
//! concatenated and fed through shared fully-connected layers; a softmax
//! head produces L+1 joint-detection likelihoods and a linear head
//! produces 2L joint-localization coordinates. Everything is f64 and the
//! backward pass is analytic (checked against finite differences).
//!
//! Convolutions use stride 1 with zero "same" padding; 2x2 max pooling
//! halves the spatial dimensions after layers that request it.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::geometry::Patch;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint io error on {path}: {source}")]
    CheckpointIo {
        path: String,
        source: std::io::Error,
    },
    #[error("checkpoint format error on {path}: {source}")]
    CheckpointFormat {
        path: String,
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
}

/// Which input sources feed the fully-connected stack. `PartOnly` and
/// `BodyOnly` exist for the single-source ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSources {
    Dual,
    PartOnly,
    BodyOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub pool: bool,
}

/// Network shape: input side length N, joint count L, tower layout
/// (identical for both towers) and shared hidden widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_size: usize,
    pub joints: usize,
    pub sources: InputSources,
    pub conv: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
}

pub const PART_CHANNELS: usize = 3;
pub const BODY_CHANNELS: usize = 4;

impl LayerSpec {
    /// The desk-scale default: N = 32, three conv layers per tower
    /// (8@5x5, 16@5x5, 32@3x3, each with 2x2 pooling), shared
    /// fully-connected 128 -> 64.
    pub fn desk_default(joints: usize) -> Self {
        LayerSpec {
            input_size: 32,
            joints,
            sources: InputSources::Dual,
            conv: vec![
                ConvSpec {
                    filters: 8,
                    kernel: 5,
                    pool: true,
                },
                ConvSpec {
                    filters: 16,
                    kernel: 5,
                    pool: true,
                },
                ConvSpec {
                    filters: 32,
                    kernel: 3,
                    pool: true,
                },
            ],
            hidden: vec![128, 64],
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.joints == 0 {
            return Err(NetError::InvalidSpec("joint count must be positive".into()));
        }
        if self.conv.is_empty() || self.hidden.is_empty() {
            return Err(NetError::InvalidSpec(
                "need at least one conv layer and one hidden layer".into(),
            ));
        }
        let mut dim = self.input_size;
        for (i, c) in self.conv.iter().enumerate() {
            if c.kernel % 2 == 0 || c.filters == 0 {
                return Err(NetError::InvalidSpec(format!(
                    "conv layer {i}: kernel must be odd and filters positive"
                )));
            }
            if c.pool {
                if dim % 2 != 0 {
                    return Err(NetError::InvalidSpec(format!(
                        "conv layer {i}: cannot 2x2-pool odd dimension {dim}"
                    )));
                }
                dim /= 2;
            }
        }
        if dim == 0 {
            return Err(NetError::InvalidSpec("spatial dimension collapsed to 0".into()));
        }
        Ok(())
    }

    /// Spatial side length after the whole tower.
    fn tower_out_dim(&self) -> usize {
        let pools = self.conv.iter().filter(|c| c.pool).count();
        self.input_size >> pools
    }

    /// Flattened length of one tower's output.
    pub fn tower_out_len(&self) -> usize {
        let last = self.conv.last().expect("validated spec").filters;
        last * self.tower_out_dim() * self.tower_out_dim()
    }

    pub fn concat_len(&self) -> usize {
        match self.sources {
            InputSources::Dual => 2 * self.tower_out_len(),
            _ => self.tower_out_len(),
        }
    }
}

/// Network input for one patch pair. The body block carries the binary
/// mask of the part patch's location as its fourth channel.
#[derive(Debug, Clone)]
pub struct DualInput {
    pub part: Array3<f64>,
    pub body: Array3<f64>,
}

/// Assemble a [`DualInput`] from resampled part/body pixel blocks and the
/// patch geometry. The mask is rasterized nearest-neighbor on the body
/// grid so it stays binary.
pub fn build_inputs(
    part_block: Array3<f64>,
    body_block: &Array3<f64>,
    part: &Patch,
    body: &Patch,
) -> DualInput {
    let (c, n, n2) = body_block.dim();
    assert_eq!(c, 3);
    assert_eq!(n, n2);
    let mut body_in = Array3::zeros((BODY_CHANNELS, n, n));
    body_in
        .slice_mut(ndarray::s![0..3, .., ..])
        .assign(body_block);
    let step_x = body.w() / n as f64;
    let step_y = body.h() / n as f64;
    for row in 0..n {
        let y = body.top() + (row as f64 + 0.5) * step_y;
        for col in 0..n {
            let x = body.left() + (col as f64 + 0.5) * step_x;
            if part.contains(crate::geometry::Point::new(x, y)) {
                body_in[[3, row, col]] = 1.0;
            }
        }
    }
    DualInput {
        part: part_block,
        body: body_in,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvLayer {
    pub weights: Array4<f64>, // (out, in, k, k)
    pub bias: Array1<f64>,
    pub pool: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FcLayer {
    pub weights: Array2<f64>, // (out, in)
    pub bias: Array1<f64>,
}

/// All weight and bias arrays of the network; also the shape of a
/// gradient. Towers not used by the configured sources are empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamBlocks {
    pub part_tower: Vec<ConvLayer>,
    pub body_tower: Vec<ConvLayer>,
    pub hidden: Vec<FcLayer>,
    pub detection: FcLayer,
    pub localization: FcLayer,
}

pub type Gradients = ParamBlocks;

impl ParamBlocks {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for t in [&self.part_tower, &self.body_tower] {
            for layer in t {
                out.push(layer.weights.as_slice().expect("standard layout"));
                out.push(layer.bias.as_slice().expect("standard layout"));
            }
        }
        for layer in &self.hidden {
            out.push(layer.weights.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        for layer in [&self.detection, &self.localization] {
            out.push(layer.weights.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        out
    }

    fn for_each_slice(&self, mut f: impl FnMut(&[f64])) {
        for s in self.slices() {
            f(s);
        }
    }

    fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for t in [&mut self.part_tower, &mut self.body_tower] {
            for layer in t {
                f(layer.weights.as_slice_mut().expect("standard layout"));
                f(layer.bias.as_slice_mut().expect("standard layout"));
            }
        }
        for layer in &mut self.hidden {
            f(layer.weights.as_slice_mut().expect("standard layout"));
            f(layer.bias.as_slice_mut().expect("standard layout"));
        }
        for layer in [&mut self.detection, &mut self.localization] {
            f(layer.weights.as_slice_mut().expect("standard layout"));
            f(layer.bias.as_slice_mut().expect("standard layout"));
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_slice(|s| n += s.len());
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_slice(|s| out.extend_from_slice(s));
        out
    }

    /// Add `delta` to the parameter at flat index `idx` (flattening order
    /// matches [`flatten`](Self::flatten)).
    pub fn perturb(&mut self, idx: usize, delta: f64) {
        let mut offset = 0;
        self.for_each_slice_mut(|s| {
            if idx >= offset && idx < offset + s.len() {
                s[idx - offset] += delta;
            }
            offset += s.len();
        });
    }

    /// `self += alpha * other`, blockwise. Shapes must match.
    pub fn add_scaled(&mut self, other: &ParamBlocks, alpha: f64) {
        let blocks = other.slices();
        let mut i = 0;
        self.for_each_slice_mut(|s| {
            let o = blocks[i];
            assert_eq!(s.len(), o.len(), "mismatched parameter blocks");
            for (a, b) in s.iter_mut().zip(o) {
                *a += alpha * b;
            }
            i += 1;
        });
    }

    pub fn scale(&mut self, alpha: f64) {
        self.for_each_slice_mut(|s| {
            for v in s {
                *v *= alpha;
            }
        });
    }
}

/// The network: its shape plus every weight and bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkParams {
    pub spec: LayerSpec,
    pub blocks: ParamBlocks,
}

/// Detection likelihoods (L+1 values summing to 1) and localization
/// predictions (L normalized (x, y) pairs) for one patch pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetOutput {
    pub likelihoods: Vec<f64>,
    pub locations: Vec<[f64; 2]>,
}

impl NetOutput {
    pub fn background_likelihood(&self) -> f64 {
        self.likelihoods[0]
    }

    /// Likelihood of joint `i` (zero-based).
    pub fn joint_likelihood(&self, i: usize) -> f64 {
        self.likelihoods[i + 1]
    }

    pub fn joint_count(&self) -> usize {
        self.locations.len()
    }
}

/// Gradients of a loss with respect to the detection logits and the
/// localization outputs, fed to [`NetworkParams::backward`].
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub logits: Vec<f64>,
    pub locations: Vec<[f64; 2]>,
}

struct ConvCache {
    input: Array3<f64>,
    pre: Array3<f64>,
    // flat (y*W + x) source index of each pooled maximum
    pool_src: Option<Array3<usize>>,
}

struct FcCache {
    input: Array1<f64>,
    pre: Array1<f64>,
}

/// Intermediate activations retained by the forward pass for backprop.
pub struct ForwardCache {
    part: Vec<ConvCache>,
    body: Vec<ConvCache>,
    hidden: Vec<FcCache>,
    final_hidden: Array1<f64>,
}

fn im2col(input: &Array3<f64>, k: usize) -> Array2<f64> {
    let (c_in, h, w) = input.dim();
    let pad = k / 2;
    let mut col = Array2::zeros((c_in * k * k, h * w));
    let in_slice = input.as_slice().expect("standard layout");
    let col_slice = col.as_slice_mut().expect("standard layout");
    let row_len = h * w;
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * row_len;
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad - kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let iy = y + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let src = (c * h + (iy - pad)) * w;
                    let dst = row + y * w;
                    // input x = out x + kx - pad
                    col_slice[dst + x_lo..dst + x_hi]
                        .copy_from_slice(&in_slice[src + x_lo + kx - pad..src + x_hi + kx - pad]);
                }
            }
        }
    }
    col
}

fn col2im(col_grad: &Array2<f64>, c_in: usize, h: usize, w: usize, k: usize) -> Array3<f64> {
    let pad = k / 2;
    let mut out = Array3::zeros((c_in, h, w));
    let out_slice = out.as_slice_mut().expect("standard layout");
    let col_slice = col_grad.as_slice().expect("standard layout");
    let row_len = h * w;
    for c in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * row_len;
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad - kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let iy = y + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let dst = (c * h + (iy - pad)) * w;
                    let src = row + y * w;
                    for x in x_lo..x_hi {
                        out_slice[dst + x + kx - pad] += col_slice[src + x];
                    }
                }
            }
        }
    }
    out
}

fn conv_forward(input: &Array3<f64>, layer: &ConvLayer) -> Array3<f64> {
    let (c_in, h, w) = input.dim();
    let (out_c, _, k, _) = layer.weights.dim();
    let col = im2col(input, k);
    let w2 = layer
        .weights
        .view()
        .into_shape((out_c, c_in * k * k))
        .expect("contiguous weights");
    let mut out2 = w2.dot(&col);
    for (mut row, b) in out2.outer_iter_mut().zip(layer.bias.iter()) {
        row += *b;
    }
    out2.into_shape((out_c, h, w)).expect("conv output shape")
}

fn pool_forward(post: &Array3<f64>) -> (Array3<f64>, Array3<usize>) {
    let (c, h, w) = post.dim();
    let (h2, w2) = (h / 2, w / 2);
    let mut pooled = Array3::zeros((c, h2, w2));
    let mut src = Array3::zeros((c, h2, w2));
    for ci in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (iy, ix) = (2 * y + dy, 2 * x + dx);
                        let v = post[[ci, iy, ix]];
                        if v > best {
                            best = v;
                            best_idx = iy * w + ix;
                        }
                    }
                }
                pooled[[ci, y, x]] = best;
                src[[ci, y, x]] = best_idx;
            }
        }
    }
    (pooled, src)
}

fn tower_forward(input: &Array3<f64>, tower: &[ConvLayer]) -> (Array1<f64>, Vec<ConvCache>) {
    let mut caches = Vec::with_capacity(tower.len());
    let mut current = input.clone();
    for layer in tower {
        let pre = conv_forward(&current, layer);
        let post = pre.mapv(|v| v.max(0.0));
        let (out, pool_src) = if layer.pool {
            let (pooled, src) = pool_forward(&post);
            (pooled, Some(src))
        } else {
            (post, None)
        };
        caches.push(ConvCache {
            input: current,
            pre,
            pool_src,
        });
        current = out;
    }
    let len = current.len();
    let flat = current.into_shape(len).expect("contiguous tower output");
    (flat, caches)
}

fn tower_backward(
    tower: &[ConvLayer],
    caches: &[ConvCache],
    grad_flat: &Array1<f64>,
    out_dim: (usize, usize, usize),
) -> Vec<ConvLayer> {
    let mut grad_out = grad_flat
        .clone()
        .into_shape(out_dim)
        .expect("tower output shape");
    let mut grads: Vec<ConvLayer> = Vec::with_capacity(tower.len());
    for (layer, cache) in tower.iter().zip(caches).rev() {
        let (c_in, h, w) = cache.input.dim();
        let (out_c, _, k, _) = layer.weights.dim();
        // unpool
        let mut d_post = if let Some(src) = &cache.pool_src {
            let mut d = Array3::zeros((out_c, h, w));
            let (_, h2, w2) = src.dim();
            for ci in 0..out_c {
                for y in 0..h2 {
                    for x in 0..w2 {
                        let flat = src[[ci, y, x]];
                        d[[ci, flat / w, flat % w]] += grad_out[[ci, y, x]];
                    }
                }
            }
            d
        } else {
            grad_out
        };
        // relu
        ndarray::Zip::from(&mut d_post)
            .and(&cache.pre)
            .for_each(|g, p| {
                if *p <= 0.0 {
                    *g = 0.0;
                }
            });
        let d_pre2 = d_post
            .into_shape((out_c, h * w))
            .expect("contiguous gradient");
        let d_bias = d_pre2.sum_axis(ndarray::Axis(1));
        let col = im2col(&cache.input, k);
        let d_w2 = d_pre2.dot(&col.t());
        let d_weights = d_w2
            .into_shape((out_c, c_in, k, k))
            .expect("conv weight shape");
        let w2 = layer
            .weights
            .view()
            .into_shape((out_c, c_in * k * k))
            .expect("contiguous weights");
        let d_col = w2.t().dot(&d_pre2);
        grad_out = col2im(&d_col, c_in, h, w, k);
        grads.push(ConvLayer {
            weights: d_weights,
            bias: d_bias,
            pool: layer.pool,
        });
    }
    grads.reverse();
    grads
}

fn softmax(logits: &Array1<f64>) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl NetworkParams {
    /// Random initialization: zero-mean normal weights with variance
    /// 2/fan_in, zero biases, deterministic per seed.
    pub fn init(spec: &LayerSpec, seed: u64) -> Result<Self, NetError> {
        spec.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let conv_tower = |in_channels: usize, rng: &mut ChaCha20Rng| -> Vec<ConvLayer> {
            let mut layers = Vec::new();
            let mut c_in = in_channels;
            for c in &spec.conv {
                let fan_in = c_in * c.kernel * c.kernel;
                let std = (2.0 / fan_in as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("valid normal");
                let weights = Array4::from_shape_fn((c.filters, c_in, c.kernel, c.kernel), |_| {
                    dist.sample(rng)
                });
                layers.push(ConvLayer {
                    weights,
                    bias: Array1::zeros(c.filters),
                    pool: c.pool,
                });
                c_in = c.filters;
            }
            layers
        };
        let part_tower = match spec.sources {
            InputSources::BodyOnly => Vec::new(),
            _ => conv_tower(PART_CHANNELS, &mut rng),
        };
        let body_tower = match spec.sources {
            InputSources::PartOnly => Vec::new(),
            _ => conv_tower(BODY_CHANNELS, &mut rng),
        };
        let fc = |out: usize, inp: usize, rng: &mut ChaCha20Rng| -> FcLayer {
            let std = (2.0 / inp as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid normal");
            FcLayer {
                weights: Array2::from_shape_fn((out, inp), |_| dist.sample(rng)),
                bias: Array1::zeros(out),
            }
        };
        let mut hidden = Vec::new();
        let mut width = spec.concat_len();
        for h in &spec.hidden {
            hidden.push(fc(*h, width, &mut rng));
            width = *h;
        }
        let detection = fc(spec.joints + 1, width, &mut rng);
        let localization = fc(2 * spec.joints, width, &mut rng);
        Ok(NetworkParams {
            spec: spec.clone(),
            blocks: ParamBlocks {
                part_tower,
                body_tower,
                hidden,
                detection,
                localization,
            },
        })
    }

    /// A zero-filled gradient accumulator with this network's shape.
    pub fn zero_gradients(&self) -> Gradients {
        let mut g = self.blocks.clone();
        g.scale(0.0);
        g
    }

    fn check_input(&self, input: &DualInput) -> Result<(), NetError> {
        let n = self.spec.input_size;
        if input.part.dim() != (PART_CHANNELS, n, n) {
            return Err(NetError::ShapeMismatch(format!(
                "part input is {:?}, expected ({PART_CHANNELS}, {n}, {n})",
                input.part.dim()
            )));
        }
        if input.body.dim() != (BODY_CHANNELS, n, n) {
            return Err(NetError::ShapeMismatch(format!(
                "body input is {:?}, expected ({BODY_CHANNELS}, {n}, {n})",
                input.body.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &DualInput) -> Result<(NetOutput, ForwardCache), NetError> {
        self.check_input(input)?;
        let (part_out, part_cache) = match self.spec.sources {
            InputSources::BodyOnly => (Array1::zeros(0), Vec::new()),
            _ => tower_forward(&input.part, &self.blocks.part_tower),
        };
        let (body_out, body_cache) = match self.spec.sources {
            InputSources::PartOnly => (Array1::zeros(0), Vec::new()),
            _ => tower_forward(&input.body, &self.blocks.body_tower),
        };
        let concat = ndarray::concatenate(
            ndarray::Axis(0),
            &[part_out.view(), body_out.view()],
        )
        .expect("1-d concatenation");

        let mut hidden_caches = Vec::with_capacity(self.blocks.hidden.len());
        let mut current = concat;
        for layer in &self.blocks.hidden {
            let pre = layer.weights.dot(&current) + &layer.bias;
            let post = pre.mapv(|v| v.max(0.0));
            hidden_caches.push(FcCache {
                input: current,
                pre,
            });
            current = post;
        }
        let logits = self.blocks.detection.weights.dot(&current) + &self.blocks.detection.bias;
        let likelihoods = softmax(&logits);
        let loc = self.blocks.localization.weights.dot(&current) + &self.blocks.localization.bias;
        let locations: Vec<[f64; 2]> = (0..self.spec.joints)
            .map(|i| [loc[2 * i], loc[2 * i + 1]])
            .collect();
        let output = NetOutput {
            likelihoods,
            locations,
        };
        let cache = ForwardCache {
            part: part_cache,
            body: body_cache,
            hidden: hidden_caches,
            final_hidden: current,
        };
        Ok((output, cache))
    }

    /// Analytic gradients of a loss with the given output-side gradients.
    /// `grads.logits` is the gradient with respect to the detection-head
    /// logits (pre-softmax); `grads.locations` with respect to the
    /// localization outputs.
    pub fn backward(&self, cache: &ForwardCache, grads: &OutputGrads) -> Gradients {
        let d_logits = Array1::from_vec(grads.logits.clone());
        let d_loc = Array1::from_vec(grads.locations.iter().flatten().cloned().collect());

        let outer = |v: &Array1<f64>, x: &Array1<f64>| -> Array2<f64> {
            let mut m = Array2::zeros((v.len(), x.len()));
            for (i, vi) in v.iter().enumerate() {
                if *vi != 0.0 {
                    for (j, xj) in x.iter().enumerate() {
                        m[[i, j]] = vi * xj;
                    }
                }
            }
            m
        };

        let d_detection = FcLayer {
            weights: outer(&d_logits, &cache.final_hidden),
            bias: d_logits.clone(),
        };
        let d_localization = FcLayer {
            weights: outer(&d_loc, &cache.final_hidden),
            bias: d_loc.clone(),
        };

        let mut d_current = self.blocks.detection.weights.t().dot(&d_logits)
            + self.blocks.localization.weights.t().dot(&d_loc);

        let mut d_hidden: Vec<FcLayer> = Vec::with_capacity(self.blocks.hidden.len());
        for (layer, fc_cache) in self.blocks.hidden.iter().zip(&cache.hidden).rev() {
            // relu gate on this layer's pre-activation
            let mut d_pre = d_current;
            ndarray::Zip::from(&mut d_pre)
                .and(&fc_cache.pre)
                .for_each(|g, p| {
                    if *p <= 0.0 {
                        *g = 0.0;
                    }
                });
            d_hidden.push(FcLayer {
                weights: outer(&d_pre, &fc_cache.input),
                bias: d_pre.clone(),
            });
            d_current = layer.weights.t().dot(&d_pre);
        }
        d_hidden.reverse();

        let part_len = match self.spec.sources {
            InputSources::BodyOnly => 0,
            _ => self.spec.tower_out_len(),
        };
        let d_concat = d_current;
        let out_side = self.spec.tower_out_dim();
        let out_c = self.spec.conv.last().expect("validated spec").filters;
        let out_dim = (out_c, out_side, out_side);

        let d_part_tower = if part_len > 0 {
            let d_part = d_concat.slice(ndarray::s![0..part_len]).to_owned();
            tower_backward(&self.blocks.part_tower, &cache.part, &d_part, out_dim)
        } else {
            Vec::new()
        };
        let d_body_tower = if d_concat.len() > part_len {
            let d_body = d_concat.slice(ndarray::s![part_len..]).to_owned();
            tower_backward(&self.blocks.body_tower, &cache.body, &d_body, out_dim)
        } else {
            Vec::new()
        };

        ParamBlocks {
            part_tower: d_part_tower,
            body_tower: d_body_tower,
            hidden: d_hidden,
            detection: d_detection,
            localization: d_localization,
        }
    }

    /// Gradient-descent step: `params -= lr * grads`.
    pub fn apply_update(&mut self, grads: &Gradients, lr: f64) {
        self.blocks.add_scaled(grads, -lr);
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let checkpoint = Checkpoint {
            version: CHECKPOINT_VERSION,
            net: self.clone(),
        };
        let json = serde_json::to_string(&checkpoint).map_err(|source| {
            NetError::CheckpointFormat {
                path: path.display().to_string(),
                source,
            }
        })?;
        std::fs::write(path, json).map_err(|source| NetError::CheckpointIo {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let bytes = std::fs::read(path).map_err(|source| NetError::CheckpointIo {
            path: path.display().to_string(),
            source,
        })?;
        let checkpoint: Checkpoint =
            serde_json::from_slice(&bytes).map_err(|source| NetError::CheckpointFormat {
                path: path.display().to_string(),
                source,
            })?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(NetError::CheckpointVersion(checkpoint.version));
        }
        Ok(checkpoint.net)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    net: NetworkParams,
}

#[cfg(test)]
pub(crate) fn tiny_spec(joints: usize) -> LayerSpec {
    LayerSpec {
        input_size: 8,
        joints,
        sources: InputSources::Dual,
        conv: vec![ConvSpec {
            filters: 2,
            kernel: 3,
            pool: true,
        }],
        hidden: vec![6],
    }
}

#[cfg(test)]
pub(crate) fn random_input(n: usize, seed: u64) -> DualInput {
    use rand::Rng;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let part = Array3::from_shape_fn((PART_CHANNELS, n, n), |_| rng.gen_range(0.0..1.0));
    let mut body = Array3::from_shape_fn((BODY_CHANNELS, n, n), |_| rng.gen_range(0.0..1.0));
    // keep the mask channel binary
    for v in body.index_axis_mut(ndarray::Axis(0), 3).iter_mut() {
        *v = if *v > 0.5 { 1.0 } else { 0.0 };
    }
    DualInput { part, body }
}
