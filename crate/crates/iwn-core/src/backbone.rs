//! Encoder-decoder backbone: config variants, construction, forward and
//! backward passes, parameter snapshots.
//!
//! The encoder stacks `[conv, group-norm?, leaky-relu]` blocks, the decoder
//! `[transposed-conv, group-norm?, relu]` blocks; the final decoder block ends
//! in `(tanh(x)+1)/2` so outputs always land in `[0, 1]`.

use ndarray::{Array1, Array3, Array4, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Activation, Conv2d, ConvT2d, GroupNorm, Layer, LayerAux, Real};

pub const IMAGE_SIZE: usize = 128;
const IN_CHANNELS: usize = 3;

/// Size variants from the structure-comparison ablation, plus `Custom` for
/// toy stacks in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Small,
    Origin,
    Large,
    Custom,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Variant::Small),
            "origin" => Ok(Variant::Origin),
            "large" => Ok(Variant::Large),
            other => Err(Error::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Small => "small",
            Variant::Origin => "origin",
            Variant::Large => "large",
            Variant::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Per-stage layer lists; index `i` describes the `i`-th block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Output channels of each block.
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub paddings: Vec<usize>,
    /// Whether a group-norm follows the (transposed) convolution.
    pub norms: Vec<bool>,
}

impl StageConfig {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    fn consistent(&self) -> bool {
        let n = self.channels.len();
        n > 0
            && self.kernels.len() == n
            && self.strides.len() == n
            && self.paddings.len() == n
            && self.norms.len() == n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder: StageConfig,
    pub decoder: StageConfig,
    /// Groups used by every group-norm layer.
    pub norm_groups: usize,
    /// Negative slope of the encoder activation.
    pub encoder_slope: f64,
}

impl ModelConfig {
    pub fn small() -> Self {
        Self {
            variant: Variant::Small,
            encoder: StageConfig {
                channels: vec![64, 128, 256],
                kernels: vec![4, 4, 4],
                strides: vec![2, 2, 1],
                paddings: vec![1, 1, 0],
                norms: vec![false, true, false],
            },
            decoder: StageConfig {
                channels: vec![256, 128, 3],
                kernels: vec![4, 4, 4],
                strides: vec![1, 2, 2],
                paddings: vec![0, 1, 1],
                norms: vec![true, true, false],
            },
            norm_groups: 8,
            encoder_slope: 0.2,
        }
    }

    pub fn origin() -> Self {
        Self {
            variant: Variant::Origin,
            encoder: StageConfig {
                channels: vec![64, 128, 256, 512],
                kernels: vec![4, 4, 4, 4],
                strides: vec![2, 2, 2, 1],
                paddings: vec![1, 1, 1, 0],
                norms: vec![false, true, true, false],
            },
            decoder: StageConfig {
                channels: vec![512, 256, 128, 3],
                kernels: vec![4, 4, 4, 4],
                strides: vec![1, 2, 2, 2],
                paddings: vec![0, 1, 1, 1],
                norms: vec![true, true, true, false],
            },
            norm_groups: 8,
            encoder_slope: 0.2,
        }
    }

    pub fn large() -> Self {
        Self {
            variant: Variant::Large,
            encoder: StageConfig {
                channels: vec![64, 128, 256, 512, 1024],
                kernels: vec![4; 5],
                strides: vec![2, 2, 2, 2, 1],
                paddings: vec![1, 1, 1, 1, 0],
                norms: vec![false, true, true, true, false],
            },
            decoder: StageConfig {
                channels: vec![1024, 512, 256, 128, 3],
                kernels: vec![4; 5],
                strides: vec![1, 2, 2, 2, 2],
                paddings: vec![0, 1, 1, 1, 1],
                norms: vec![true, true, true, true, false],
            },
            norm_groups: 8,
            encoder_slope: 0.2,
        }
    }

    pub fn for_variant(v: Variant) -> Result<Self> {
        match v {
            Variant::Small => Ok(Self::small()),
            Variant::Origin => Ok(Self::origin()),
            Variant::Large => Ok(Self::large()),
            Variant::Custom => {
                Err(Error::InvalidConfig("custom variant needs an explicit config".into()))
            }
        }
    }

    pub fn encoder_layers(&self) -> usize {
        self.encoder.len()
    }

    pub fn decoder_layers(&self) -> usize {
        self.decoder.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.encoder.consistent() || !self.decoder.consistent() {
            return Err(Error::InvalidConfig("stage list lengths differ".into()));
        }
        if self.decoder.channels.last() != Some(&IN_CHANNELS) {
            return Err(Error::InvalidConfig("decoder must end in 3 channels".into()));
        }
        if self.norm_groups == 0 {
            return Err(Error::InvalidConfig("norm_groups must be positive".into()));
        }
        for (stage, name) in [(&self.encoder, "encoder"), (&self.decoder, "decoder")] {
            for (i, (&c, &flag)) in stage.channels.iter().zip(&stage.norms).enumerate() {
                if flag && c % self.norm_groups != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "{name} block {i}: {c} channels not divisible by {} norm groups",
                        self.norm_groups
                    )));
                }
            }
            if stage.strides.iter().any(|&s| s == 0) {
                return Err(Error::InvalidConfig(format!("{name} has a zero stride")));
            }
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter, in construction order. This is the
    /// layout checkpoints are validated against.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = IN_CHANNELS;
        for (i, &c_out) in self.encoder.channels.iter().enumerate() {
            let k = self.encoder.kernels[i];
            let tag = format!("enc{}", i + 1);
            out.push((format!("{tag}.conv.weight"), vec![c_out, c_in, k, k]));
            out.push((format!("{tag}.conv.bias"), vec![c_out]));
            if self.encoder.norms[i] {
                out.push((format!("{tag}.norm.gamma"), vec![c_out]));
                out.push((format!("{tag}.norm.beta"), vec![c_out]));
            }
            c_in = c_out;
        }
        for (i, &c_out) in self.decoder.channels.iter().enumerate() {
            let k = self.decoder.kernels[i];
            let tag = format!("dec{}", i + 1);
            out.push((format!("{tag}.tconv.weight"), vec![c_in, c_out, k, k]));
            out.push((format!("{tag}.tconv.bias"), vec![c_out]));
            if self.decoder.norms[i] {
                out.push((format!("{tag}.norm.gamma"), vec![c_out]));
                out.push((format!("{tag}.norm.beta"), vec![c_out]));
            }
            c_in = c_out;
        }
        out
    }
}

/// The network: an immutable config plus live parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    layers: Vec<Layer<T>>,
    /// Parameter names aligned with `params()` order.
    param_names: Vec<String>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardTrace<T: Real> {
    inputs: Vec<Array3<T>>,
    auxes: Vec<LayerAux<T>>,
    output: Array3<T>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn output(&self) -> &Array3<T> {
        &self.output
    }
}

/// Per-parameter gradient buffers aligned with a model's parameter order.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    slots: Vec<Vec<ArrayD<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        let slots = model
            .layers
            .iter()
            .map(|l| l.params().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect())
            .collect();
        Self { slots }
    }

    pub fn zero(&mut self) {
        for slot in self.slots.iter_mut().flatten() {
            slot.fill(T::zero());
        }
    }

    pub fn scale(&mut self, factor: f64) {
        let f = T::from_f64(factor);
        for slot in self.slots.iter_mut().flatten() {
            slot.mapv_inplace(|v| v * f);
        }
    }

    /// Flat iteration in model parameter order.
    pub fn flat(&self) -> impl Iterator<Item = &ArrayD<T>> {
        self.slots.iter().flatten()
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut ArrayD<T>> {
        self.slots.iter_mut().flatten()
    }

    pub fn global_norm(&self) -> f64 {
        self.flat()
            .flat_map(|a| a.iter())
            .map(|&v| {
                let x = v.to_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Frozen copy of a model's parameters, stamped with the training step it was
/// taken at. Never visible to the optimizer.
#[derive(Debug, Clone)]
pub struct ParameterSnapshot<T: Real = f32> {
    model: Model<T>,
    step: u64,
}

impl<T: Real> ParameterSnapshot<T> {
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    /// Forward pass through the frozen parameters.
    pub fn forward_tensor(&self, x: &Array3<T>) -> Result<Array3<T>> {
        self.model.forward_tensor(x)
    }

    pub fn forward_traced(&self, x: &Array3<T>) -> Result<ForwardTrace<T>> {
        self.model.forward_traced(x)
    }

    /// Input gradient through the frozen copy. There is deliberately no way
    /// to accumulate parameter gradients here.
    pub fn backward_input(&self, trace: &ForwardTrace<T>, grad_out: Array3<T>) -> Array3<T> {
        self.model.backward(trace, grad_out, None)
    }

    /// Named copies of the frozen arrays (for isolation checks).
    pub fn named_params(&self) -> Vec<(String, ArrayD<T>)> {
        self.model
            .param_names
            .iter()
            .cloned()
            .zip(self.model.layers.iter().flat_map(|l| l.params()).map(|v| v.to_owned()))
            .collect()
    }
}

/// Build a model with deterministic, seed-derived initialization: conv
/// kernels from N(0, 0.02), biases zero, norm scale/shift one/zero.
pub fn build_model<T: Real>(cfg: &ModelConfig, init_seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let normal = Normal::new(0.0f64, 0.02).expect("valid std");
    let mut draw = |shape: &[usize]| -> ArrayD<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
        ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches length")
    };

    let mut layers: Vec<Layer<T>> = Vec::new();
    let mut c_in = IN_CHANNELS;
    let enc_act = Activation::LeakyRelu(cfg.encoder_slope);
    for (i, &c_out) in cfg.encoder.channels.iter().enumerate() {
        let k = cfg.encoder.kernels[i];
        let weight = draw(&[c_out, c_in, k, k]).into_dimensionality().unwrap();
        layers.push(Layer::Conv(Conv2d {
            weight,
            bias: Array1::zeros(c_out),
            stride: cfg.encoder.strides[i],
            pad: cfg.encoder.paddings[i],
        }));
        if cfg.encoder.norms[i] {
            layers.push(Layer::Norm(GroupNorm {
                gamma: Array1::from_elem(c_out, T::one()),
                beta: Array1::zeros(c_out),
                groups: cfg.norm_groups,
                eps: 1e-5,
            }));
        }
        layers.push(Layer::Act(enc_act));
        c_in = c_out;
    }
    let last = cfg.decoder.len() - 1;
    for (i, &c_out) in cfg.decoder.channels.iter().enumerate() {
        let k = cfg.decoder.kernels[i];
        let weight: Array4<T> = draw(&[c_in, c_out, k, k]).into_dimensionality().unwrap();
        layers.push(Layer::ConvT(ConvT2d {
            weight,
            bias: Array1::zeros(c_out),
            stride: cfg.decoder.strides[i],
            pad: cfg.decoder.paddings[i],
        }));
        if cfg.decoder.norms[i] {
            layers.push(Layer::Norm(GroupNorm {
                gamma: Array1::from_elem(c_out, T::one()),
                beta: Array1::zeros(c_out),
                groups: cfg.norm_groups,
                eps: 1e-5,
            }));
        }
        layers.push(Layer::Act(if i == last { Activation::TanhRemap } else { Activation::Relu }));
        c_in = c_out;
    }

    let param_names = cfg.parameter_shapes().into_iter().map(|(n, _)| n).collect();
    Ok(Model { config: cfg.clone(), layers, param_names })
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn count_parameters(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum()
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn named_params(&self) -> Vec<(String, ArrayD<T>)> {
        self.param_names
            .iter()
            .cloned()
            .zip(self.layers.iter().flat_map(|l| l.params()).map(|v| v.to_owned()))
            .collect()
    }

    /// Mutable flat parameter views, aligned with `Gradients` order.
    pub fn params_mut(&mut self) -> Vec<ndarray::ArrayViewMutD<'_, T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Replace all parameters from `(name, array)` pairs in layout order.
    pub fn load_params(&mut self, params: &[(String, ArrayD<T>)]) -> Result<()> {
        let expected = self.config.parameter_shapes();
        if params.len() != expected.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter arrays, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), (got_name, arr)) in expected.iter().zip(params) {
            if name != got_name || arr.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name} {shape:?} vs {got_name} {:?}",
                    arr.shape()
                )));
            }
        }
        for (view, (_, arr)) in self.params_mut().into_iter().zip(params) {
            let mut view = view;
            view.assign(arr);
        }
        Ok(())
    }

    fn check_input(&self, x: &Array3<T>) -> Result<()> {
        let (c, h, w) = x.dim();
        if c != IN_CHANNELS {
            return Err(Error::ShapeMismatch(format!("model input must have 3 channels, got {c}")));
        }
        // Walk the stack once to confirm every spatial size is producible.
        let (mut ch, mut hh, mut ww) = (c, h, w);
        for layer in &self.layers {
            match layer.out_dims(hh, ww) {
                Some((nh, nw)) => {
                    hh = nh;
                    ww = nw;
                }
                None => {
                    return Err(Error::ShapeMismatch(format!(
                        "input {h}x{w} is too small for the network"
                    )))
                }
            }
            ch = layer.out_channels(ch);
        }
        let _ = ch;
        Ok(())
    }

    pub fn forward_tensor(&self, x: &Array3<T>) -> Result<Array3<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, _) = layer.forward(&cur.view());
            cur = y;
        }
        Ok(cur)
    }

    pub fn forward_traced(&self, x: &Array3<T>) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut auxes = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, aux) = layer.forward(&cur.view());
            inputs.push(cur);
            auxes.push(aux);
            cur = y;
        }
        Ok(ForwardTrace { inputs, auxes, output: cur })
    }

    /// Backpropagate `grad_out` through a trace. With `grads`, parameter
    /// gradients are accumulated; without, only the input gradient is built.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_out: Array3<T>,
        grads: Option<&mut Gradients<T>>,
    ) -> Array3<T> {
        let mut grad = grad_out;
        match grads {
            Some(g) => {
                for (i, layer) in self.layers.iter().enumerate().rev() {
                    let slot = &mut g.slots[i];
                    let buf = if slot.is_empty() {
                        None
                    } else {
                        let (a, b) = slot.split_at_mut(1);
                        Some((&mut a[0], &mut b[0]))
                    };
                    grad = layer.backward(
                        &trace.inputs[i].view(),
                        &trace.auxes[i],
                        &grad.view(),
                        buf,
                    );
                }
            }
            None => {
                for (i, layer) in self.layers.iter().enumerate().rev() {
                    grad =
                        layer.backward(&trace.inputs[i].view(), &trace.auxes[i], &grad.view(), None);
                }
            }
        }
        grad
    }

    /// Freeze the current parameters, stamped with the step they belong to.
    pub fn snapshot(&self, step: u64) -> ParameterSnapshot<T> {
        ParameterSnapshot { model: self.clone(), step }
    }

    /// Run the network on an image.
    pub fn forward(&self, img: &Image) -> Result<Image> {
        let t = img.to_tensor::<T>();
        let y = self.forward_tensor(&t)?;
        Ok(Image::from_tensor(&y.view()))
    }
}

/// Spec-level free functions mirroring the module operations.
pub fn forward<T: Real>(m: &Model<T>, img: &Image) -> Result<Image> {
    m.forward(img)
}

pub fn snapshot<T: Real>(m: &Model<T>, step: u64) -> ParameterSnapshot<T> {
    m.snapshot(step)
}

pub fn forward_frozen<T: Real>(s: &ParameterSnapshot<T>, img: &Image) -> Result<Image> {
    let t = img.to_tensor::<T>();
    let y = s.forward_tensor(&t)?;
    Ok(Image::from_tensor(&y.view()))
}

pub fn count_parameters<T: Real>(m: &Model<T>) -> usize {
    m.count_parameters()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_match_published_totals() {
        // (config, reported millions)
        for (cfg, want_m) in
            [(ModelConfig::small(), 2.24), (ModelConfig::origin(), 9.58), (ModelConfig::large(), 38.95)]
        {
            let model = build_model::<f32>(&cfg, 0).unwrap();
            let count = model.count_parameters() as f64;
            let want = want_m * 1e6;
            let rel = (count - want).abs() / want;
            assert!(rel < 0.02, "{:?}: {count} vs {want} (rel {rel:.4})", cfg.variant);
        }
    }

    #[test]
    fn forward_shape_and_range() {
        let model = build_model::<f32>(&ModelConfig::small(), 7).unwrap();
        let img = Image::from_fn(IMAGE_SIZE, IMAGE_SIZE, 3, |i, j, c| {
            ((i * 7 + j * 3 + c * 11) % 97) as f32 / 96.0
        });
        let out = model.forward(&img).unwrap();
        assert_eq!((out.height(), out.width(), out.channels()), (IMAGE_SIZE, IMAGE_SIZE, 3));
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn forward_is_deterministic() {
        let model = build_model::<f32>(&ModelConfig::small(), 3).unwrap();
        let img = Image::from_fn(IMAGE_SIZE, IMAGE_SIZE, 3, |i, j, _| ((i ^ j) % 128) as f32 / 127.0);
        let a = model.forward(&img).unwrap();
        let b = model.forward(&img).unwrap();
        assert_eq!(a.max_abs_diff(&b), 0.0);
    }

    #[test]
    fn encoder_spatial_trace_origin() {
        // With origin strides (2,2,2,1) and paddings (1,1,1,0): 128 -> 64 ->
        // 32 -> 16 -> 13, mirrored back up by the decoder.
        let cfg = ModelConfig::origin();
        let model = build_model::<f32>(&cfg, 0).unwrap();
        let mut dims = (IMAGE_SIZE, IMAGE_SIZE);
        let mut seen = Vec::new();
        for layer in &model.layers {
            dims = layer.out_dims(dims.0, dims.1).unwrap();
            if matches!(layer, Layer::Conv(_) | Layer::ConvT(_)) {
                seen.push(dims.0);
            }
        }
        assert_eq!(seen, vec![64, 32, 16, 13, 16, 32, 64, 128]);
    }

    #[test]
    fn build_model_rejects_inconsistent_config() {
        let mut cfg = ModelConfig::small();
        cfg.encoder.kernels.pop();
        assert!(matches!(build_model::<f32>(&cfg, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = build_model::<f32>(&ModelConfig::small(), 42).unwrap();
        let b = build_model::<f32>(&ModelConfig::small(), 42).unwrap();
        let c = build_model::<f32>(&ModelConfig::small(), 43).unwrap();
        let flat = |m: &Model<f32>| {
            m.named_params().into_iter().flat_map(|(_, a)| a.into_iter().collect::<Vec<_>>()).collect::<Vec<_>>()
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn snapshot_is_isolated_from_updates() {
        let mut model = build_model::<f32>(&ModelConfig::small(), 1).unwrap();
        let img = Image::constant(IMAGE_SIZE, IMAGE_SIZE, 3, 0.4);
        let snap = model.snapshot(0);
        let before = forward_frozen(&snap, &img).unwrap();

        for mut p in model.params_mut() {
            p.mapv_inplace(|v| v + 0.01);
        }
        let after_update_frozen = forward_frozen(&snap, &img).unwrap();
        assert_eq!(before.max_abs_diff(&after_update_frozen), 0.0);
        // The live model did change.
        let live = model.forward(&img).unwrap();
        assert!(live.max_abs_diff(&before) > 0.0);
    }

    #[test]
    fn parameter_perturbation_changes_output() {
        let mut model = build_model::<f32>(&ModelConfig::small(), 9).unwrap();
        let img = Image::from_fn(IMAGE_SIZE, IMAGE_SIZE, 3, |i, j, _| ((i + j) % 64) as f32 / 63.0);
        let before = model.forward(&img).unwrap();
        {
            let mut params = model.params_mut();
            // First conv kernel element.
            params[0].as_slice_mut().unwrap()[0] += 0.5;
        }
        let after = model.forward(&img).unwrap();
        assert!(after.max_abs_diff(&before) > 0.0, "dead graph: output ignores parameters");
    }

    #[test]
    fn rejects_wrong_channel_input() {
        let model = build_model::<f32>(&ModelConfig::small(), 2).unwrap();
        let bad = Array3::<f32>::zeros((1, IMAGE_SIZE, IMAGE_SIZE));
        assert!(matches!(model.forward_tensor(&bad), Err(Error::ShapeMismatch(_))));
    }
}
