//! The truncated U-Net.
//!
//! ```text
//! 1×128×128
//!   encoder  6 × [conv k5 s2 p2 → LeakyReLU(0.2) → dropout(0.1)]   64 32 16 8 4 2
//!   bottleneck   conv k5 s1 p2 → LeakyReLU → dropout                  2
//!   decoder  3 × [convT k3 s2 → concat skip → dropout → conv k5 → LeakyReLU]  4 8 16
//!   transform    conv k7 s1 p0 → LeakyReLU                           10
//!   output       conv k1 → sigmoid                                   10
//! ```
//!
//! Encoder channels are `c0 c0 c1 c1 c2 c2`, the bottleneck has `c3`, and the
//! decoder blocks at 4, 8 and 16 pixels mirror the encoder: `c2 c1 c1`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ops::{self, Act, ConvCache, Window};
use super::scalar::Scalar;
use crate::label::{GridLabel, DIGITS, POSITIONS};
use crate::rng::{self, tag, Rng};

pub const INPUT_SIZE: usize = 128;
pub const OUTPUT_CELLS: usize = DIGITS * POSITIONS;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const DROPOUT_RATE: f64 = 0.1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const ENCODER_WINDOW: Window = Window { k: 5, stride: 2, pad: 2 };
const SAME_WINDOW: Window = Window { k: 5, stride: 1, pad: 2 };
// viewed from the upsampled side: a k3 s2 p1 convolution halves 2n → n
const UP_WINDOW: Window = Window { k: 3, stride: 2, pad: 1 };
const TRANSFORM_WINDOW: Window = Window { k: 7, stride: 1, pad: 0 };
const POINT_WINDOW: Window = Window { k: 1, stride: 1, pad: 0 };

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid channel config: {0}")]
    Config(String),
    #[error("input batch has {got} values, expected a multiple of {per_sample} (1×128×128 per sample)")]
    InputShape { got: usize, per_sample: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    Version(u8),
    #[error("model file truncated or oversized: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
}

/// Channel hyperparameters: `channels[0]` for encoder layers 0–1, `channels[1]`
/// for 2–3, `channels[2]` for 4–5, `channels[3]` for the bottleneck, and
/// `last_channel` for the transformation layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub channels: [usize; 4],
    pub last_channel: usize,
    /// Two convolutions in the bottleneck instead of one.
    pub double_bottleneck: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self::SMALL
    }
}

impl ChannelConfig {
    pub const fn new(channels: [usize; 4], last_channel: usize) -> Self {
        Self { channels, last_channel, double_bottleneck: false }
    }

    /// Smallest reference configuration.
    pub const SMALL: ChannelConfig = ChannelConfig::new([16, 16, 32, 64], 8);
    pub const MEDIUM: ChannelConfig = ChannelConfig::new([32, 32, 64, 128], 16);
    pub const LARGE: ChannelConfig = ChannelConfig::new([64, 64, 128, 256], 32);
    /// Used for gradient verification and fast tests.
    pub const TINY: ChannelConfig = ChannelConfig::new([2, 2, 4, 8], 2);

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels.contains(&0) || self.last_channel == 0 {
            return Err(ModelError::Config(format!(
                "all channel counts must be at least 1, got {:?} / {}",
                self.channels, self.last_channel
            )));
        }
        Ok(())
    }

    /// Scales every channel count by `factor`.
    pub fn scaled(&self, factor: usize) -> Self {
        Self { channels: self.channels.map(|c| c * factor), last_channel: self.last_channel * factor, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
}

/// One parameterized layer; its weight and bias are parameters `2i` and `2i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
    pub window: Window,
}

impl LayerSpec {
    fn conv(name: impl Into<String>, cin: usize, cout: usize, window: Window) -> Self {
        Self { name: name.into(), kind: LayerKind::Conv, cin, cout, window }
    }

    pub fn weight_len(&self) -> usize {
        self.cin * self.cout * self.window.k * self.window.k
    }

    /// Weight shape: `[cout, cin, k, k]` for convolutions, `[cin, cout, k, k]` for transposed ones.
    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.window.k;
        match self.kind {
            LayerKind::Conv => [self.cout, self.cin, k, k],
            LayerKind::ConvTranspose => [self.cin, self.cout, k, k],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.cout
    }
}

/// Layer list of the architecture in parameter order.
pub fn layer_specs(config: &ChannelConfig) -> Vec<LayerSpec> {
    let [c0, c1, c2, c3] = config.channels;
    let enc = [c0, c0, c1, c1, c2, c2];
    let mut layers = Vec::new();
    let mut cin = 1;
    for (i, &c) in enc.iter().enumerate() {
        layers.push(LayerSpec::conv(format!("encoder{i}"), cin, c, ENCODER_WINDOW));
        cin = c;
    }
    layers.push(LayerSpec::conv("bottleneck", cin, c3, SAME_WINDOW));
    if config.double_bottleneck {
        layers.push(LayerSpec::conv("bottleneck_b", c3, c3, SAME_WINDOW));
    }
    cin = c3;
    // decoder blocks at 4×4, 8×8, 16×16 pair with encoder outputs 4, 3, 2
    for (i, &skip) in [4usize, 3, 2].iter().enumerate() {
        let cout = enc[skip];
        layers.push(LayerSpec {
            name: format!("up{i}_transpose"),
            kind: LayerKind::ConvTranspose,
            cin,
            cout,
            window: Window { k: 3, stride: 2, pad: 1 },
        });
        layers.push(LayerSpec::conv(format!("up{i}_conv"), cout + enc[skip], cout, SAME_WINDOW));
        cin = cout;
    }
    layers.push(LayerSpec::conv("transform", cin, config.last_channel, TRANSFORM_WINDOW));
    layers.push(LayerSpec::conv("output", config.last_channel, 1, POINT_WINDOW));
    layers
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// Parameter tensors in layer order: weight then bias for each layer.
pub type Params<T> = Vec<Vec<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    config: ChannelConfig,
    layers: Vec<LayerSpec>,
    params: Params<T>,
    mode: Mode,
}

/// Intermediate values kept by a forward pass for backpropagation.
pub struct Tape<T> {
    blocks: Vec<BlockCache<T>>,
    ups: Vec<UpCache<T>>,
    out_conv: ConvCache<T>,
    probabilities: Vec<T>,
    /// `(stage name, channels, height, width)` of every stage output.
    pub shapes: Vec<(String, usize, usize, usize)>,
}

impl<T: Scalar> Tape<T> {
    /// Sign of every leaky-ReLU input, in evaluation order.
    pub fn activation_signs(&self) -> Vec<bool> {
        let block = self.blocks.iter().map(|b| &b.output);
        let up = self.ups.iter().map(|u| &u.output);
        block.chain(up).flat_map(|o| o.iter().map(|&v| v < T::zero())).collect()
    }
}

struct BlockCache<T> {
    conv: ConvCache<T>,
    output: Vec<T>,
    mask: Option<Vec<T>>,
}

struct UpCache<T> {
    input: Act<T>,
    mask: Option<Vec<T>>,
    conv: ConvCache<T>,
    output: Vec<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds the network with fan-in scaled normal weights and zero biases.
    pub fn build(config: ChannelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layers = layer_specs(&config);
        let mut params = Vec::with_capacity(layers.len() * 2);
        for (i, layer) in layers.iter().enumerate() {
            let fan_in = match layer.kind {
                LayerKind::Conv => layer.cin * layer.window.k * layer.window.k,
                LayerKind::ConvTranspose => layer.cin * layer.window.k * layer.window.k,
            };
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut r = rng::stream(seed, tag::INIT, &[i as u64]);
            params.push((0..layer.weight_len()).map(|_| T::lit(normal.sample(&mut r))).collect());
            params.push(vec![T::zero(); layer.cout]);
        }
        Ok(Self { config, layers, params, mode: Mode::Inference })
    }

    /// Assembles a model from existing parameters, checking every tensor length.
    pub fn from_params(config: ChannelConfig, params: Params<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layers = layer_specs(&config);
        if params.len() != layers.len() * 2 {
            return Err(ModelError::Config(format!("expected {} tensors, got {}", layers.len() * 2, params.len())));
        }
        for (i, layer) in layers.iter().enumerate() {
            if params[2 * i].len() != layer.weight_len() || params[2 * i + 1].len() != layer.cout {
                return Err(ModelError::Config(format!("tensor size mismatch in layer {}", layer.name)));
            }
        }
        Ok(Self { config, layers, params, mode: Mode::Inference })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Name of the layer owning parameter tensor `index`.
    pub fn tensor_name(&self, index: usize) -> String {
        let layer = &self.layers[index / 2];
        format!("{}.{}", layer.name, if index.is_multiple_of(2) { "weight" } else { "bias" })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn zero_parameters(&mut self) {
        self.params.iter_mut().flatten().for_each(|v| *v = T::zero());
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            layers: self.layers.clone(),
            params: self.params.iter().map(|p| p.iter().map(|&v| U::lit(v.as_f64())).collect()).collect(),
            mode: self.mode,
        }
    }

    fn batch_size(input: &[T]) -> Result<usize, ModelError> {
        let per_sample = INPUT_SIZE * INPUT_SIZE;
        if input.is_empty() || !input.len().is_multiple_of(per_sample) {
            return Err(ModelError::InputShape { got: input.len(), per_sample });
        }
        Ok(input.len() / per_sample)
    }

    /// Deterministic forward pass with dropout disabled. `input` holds `B`
    /// row-major 128×128 images; the result holds `B` row-major 10×10 grids.
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>, ModelError> {
        Ok(self.run(input, None, false)?.0)
    }

    /// Forward pass recording a tape. Dropout is applied in training mode.
    pub fn forward_tape(&self, input: &[T], rng: &mut Rng) -> Result<(Vec<T>, Tape<T>), ModelError> {
        let dropout = (self.mode == Mode::Training).then_some(rng);
        let (probs, tape) = self.run(input, dropout, true)?;
        Ok((probs, tape.expect("tape requested")))
    }

    /// Stage output shapes for one sample.
    pub fn trace_shapes(&self) -> Vec<(String, usize, usize, usize)> {
        let input = vec![T::zero(); INPUT_SIZE * INPUT_SIZE];
        self.run(&input, None, true).expect("valid input").1.expect("tape requested").shapes
    }

    fn w(&self, layer: usize) -> (&[T], &[T]) {
        (&self.params[2 * layer], &self.params[2 * layer + 1])
    }

    fn run(&self, input: &[T], mut dropout: Option<&mut Rng>, keep: bool) -> Result<(Vec<T>, Option<Tape<T>>), ModelError> {
        let batch = Self::batch_size(input)?;
        let slope = T::lit(LEAKY_SLOPE);
        let mut shapes = Vec::new();
        let mut record = |name: &str, a: &Act<T>| {
            if keep {
                shapes.push((name.to_owned(), a.channels, a.height, a.width));
            }
        };

        let mut h = Act { channels: 1, batch, height: INPUT_SIZE, width: INPUT_SIZE, data: input.to_vec() };
        let mut blocks = Vec::new();
        let mut skips = Vec::new();
        let n_down = 6 + 1 + usize::from(self.config.double_bottleneck);

        for li in 0..n_down {
            let spec = &self.layers[li];
            let (wt, b) = self.w(li);
            let (mut y, cache) = ops::conv_forward(&h, wt, b, spec.cout, spec.window, keep);
            ops::leaky_relu(&mut y.data, slope);
            let output = if keep { y.data.clone() } else { Vec::new() };
            // the double bottleneck drops out once, after its second conv
            let last_of_stage = li < 6 || li == n_down - 1;
            let mask = match dropout.as_deref_mut() {
                Some(r) if last_of_stage => Some(ops::dropout(&mut y.data, DROPOUT_RATE, r)),
                _ => None,
            };
            record(&spec.name, &y);
            if keep {
                blocks.push(BlockCache { conv: cache.expect("kept"), output, mask });
            }
            if li < 6 {
                skips.push(y.clone());
            }
            h = y;
        }

        let mut ups = Vec::new();
        for (ui, skip) in [4usize, 3, 2].into_iter().enumerate() {
            let li = n_down + 2 * ui;
            let up = &self.layers[li];
            let (wt, b) = self.w(li);
            let size = h.height * 2;
            let t = ops::conv_transpose_forward(&h, wt, b, up.cout, UP_WINDOW, size, size);
            record(&up.name, &t);
            let mut cat = t.concat(&skips[skip]);
            let mask = dropout.as_deref_mut().map(|r| ops::dropout(&mut cat.data, DROPOUT_RATE, r));
            let conv = &self.layers[li + 1];
            let (wt, b) = self.w(li + 1);
            let (mut y, cache) = ops::conv_forward(&cat, wt, b, conv.cout, conv.window, keep);
            ops::leaky_relu(&mut y.data, slope);
            record(&conv.name, &y);
            if keep {
                ups.push(UpCache { input: std::mem::replace(&mut h, Act::zeros(0, 0, 0, 0)), mask, conv: cache.expect("kept"), output: y.data.clone() });
            }
            h = y;
        }

        let lt = n_down + 6;
        let spec = &self.layers[lt];
        let (wt, b) = self.w(lt);
        let (mut y, cache) = ops::conv_forward(&h, wt, b, spec.cout, spec.window, keep);
        ops::leaky_relu(&mut y.data, slope);
        record(&spec.name, &y);
        if keep {
            blocks.push(BlockCache { conv: cache.expect("kept"), output: y.data.clone(), mask: None });
        }

        let spec = &self.layers[lt + 1];
        let (wt, b) = self.w(lt + 1);
        let (z, out_cache) = ops::conv_forward(&y, wt, b, 1, spec.window, keep);
        record(&spec.name, &z);
        let probabilities: Vec<T> = z.data.iter().map(|&v| ops::sigmoid(v)).collect();

        let tape = keep.then(|| Tape {
            blocks,
            ups,
            out_conv: out_cache.expect("kept"),
            probabilities: probabilities.clone(),
            shapes,
        });
        Ok((probabilities, tape))
    }

    /// Backpropagates `d loss / d probabilities`.
    pub fn backward(&self, tape: &Tape<T>, d_probs: &[T]) -> Params<T> {
        let d_logits: Vec<T> = d_probs
            .iter()
            .zip(&tape.probabilities)
            .map(|(&g, &p)| g * p * (T::one() - p))
            .collect();
        self.backward_logits(tape, &d_logits)
    }

    /// Backpropagates `d loss / d logits` (pre-sigmoid outputs).
    pub fn backward_logits(&self, tape: &Tape<T>, d_logits: &[T]) -> Params<T> {
        let slope = T::lit(LEAKY_SLOPE);
        let mut grads: Params<T> = self.params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        let batch = d_logits.len() / OUTPUT_CELLS;
        let n_down = 6 + 1 + usize::from(self.config.double_bottleneck);
        let lt = n_down + 6;
        let store = |grads: &mut Params<T>, li: usize, dw: Vec<T>, db: Vec<T>| {
            grads[2 * li] = dw;
            grads[2 * li + 1] = db;
        };

        let dz = Act { channels: 1, batch, height: DIGITS, width: POSITIONS, data: d_logits.to_vec() };
        let (dw, db, dy) = ops::conv_backward(&dz, self.w(lt + 1).0, &tape.out_conv, POINT_WINDOW, true);
        store(&mut grads, lt + 1, dw, db);

        let mut dh = dy.expect("needed");
        let tcache = tape.blocks.last().expect("transform cache");
        ops::leaky_relu_backward(&mut dh.data, &tcache.output, slope);
        let (dw, db, dx) = ops::conv_backward(&dh, self.w(lt).0, &tcache.conv, TRANSFORM_WINDOW, true);
        store(&mut grads, lt, dw, db);
        let mut dh = dx.expect("needed");

        let mut skip_grads: Vec<Option<Act<T>>> = vec![None; 6];
        for (ui, skip) in [4usize, 3, 2].into_iter().enumerate().rev() {
            let li = n_down + 2 * ui;
            let up = &tape.ups[ui];
            ops::leaky_relu_backward(&mut dh.data, &up.output, slope);
            let (dw, db, dcat) = ops::conv_backward(&dh, self.w(li + 1).0, &up.conv, SAME_WINDOW, true);
            store(&mut grads, li + 1, dw, db);
            let mut dcat = dcat.expect("needed");
            if let Some(mask) = &up.mask {
                ops::apply_mask(&mut dcat.data, mask);
            }
            let (dt, dskip) = dcat.split_channels(self.layers[li].cout);
            skip_grads[skip] = Some(dskip);
            let (dw, db, dx) = ops::conv_transpose_backward(&dt, &up.input, self.w(li).0, UP_WINDOW, true);
            store(&mut grads, li, dw, db);
            dh = dx.expect("needed");
        }

        for li in (0..n_down).rev() {
            if li < 6 {
                if let Some(extra) = skip_grads[li].take() {
                    dh.data.iter_mut().zip(&extra.data).for_each(|(a, &b)| *a = *a + b);
                }
            }
            let block = &tape.blocks[li];
            if let Some(mask) = &block.mask {
                ops::apply_mask(&mut dh.data, mask);
            }
            ops::leaky_relu_backward(&mut dh.data, &block.output, slope);
            let (dw, db, dx) = ops::conv_backward(&dh, self.w(li).0, &block.conv, self.layers[li].window, li > 0);
            store(&mut grads, li, dw, db);
            if let Some(dx) = dx {
                dh = dx;
            }
        }
        grads
    }
}

/// Thresholded network output for one template.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: [[f32; POSITIONS]; DIGITS],
    pub label: GridLabel,
    /// Smallest gap, over columns, between the two highest probabilities.
    pub confidence: f32,
}

impl Prediction {
    pub fn from_probabilities(probs: &[f32], threshold: f64) -> Self {
        assert_eq!(probs.len(), OUTPUT_CELLS);
        let mut probabilities = [[0.0f32; POSITIONS]; DIGITS];
        for d in 0..DIGITS {
            probabilities[d].copy_from_slice(&probs[d * POSITIONS..(d + 1) * POSITIONS]);
        }
        let confidence = (0..POSITIONS)
            .map(|c| {
                let mut col: Vec<f32> = (0..DIGITS).map(|d| probabilities[d][c]).collect();
                col.sort_by(|a, b| b.total_cmp(a));
                col[0] - col[1]
            })
            .fold(f32::INFINITY, f32::min);
        Self { probabilities, label: predict_label(probs, threshold), confidence }
    }
}

/// Cell `(d, c)` is marked iff its probability is strictly above `threshold`.
pub fn predict_label<T: Scalar>(probs: &[T], threshold: f64) -> GridLabel {
    assert_eq!(probs.len(), OUTPUT_CELLS);
    let mut label = GridLabel::empty();
    for d in 0..DIGITS {
        for c in 0..POSITIONS {
            if probs[d * POSITIONS + c].as_f64() > threshold {
                label.set(d, c, true);
            }
        }
    }
    label
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent closed form: k²·in·out + out per layer of the documented chain.
    fn closed_form(ch: [usize; 4], last: usize) -> usize {
        let conv = |k: usize, i: usize, o: usize| k * k * i * o + o;
        let [c0, c1, c2, c3] = ch;
        conv(5, 1, c0) + conv(5, c0, c0) + conv(5, c0, c1) + conv(5, c1, c1) + conv(5, c1, c2) + conv(5, c2, c2)
            + conv(5, c2, c3)
            + conv(3, c3, c2) + conv(5, 2 * c2, c2)
            + conv(3, c2, c1) + conv(5, 2 * c1, c1)
            + conv(3, c1, c1) + conv(5, 2 * c1, c1)
            + conv(7, c1, last)
            + conv(1, last, 1)
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        assert_eq!(closed_form([16, 16, 32, 64], 8), 217_953);
        for cfg in [ChannelConfig::TINY, ChannelConfig::SMALL, ChannelConfig::MEDIUM, ChannelConfig::LARGE] {
            let m = Model::<f32>::build(cfg, 0).unwrap();
            assert_eq!(m.param_count(), closed_form(cfg.channels, cfg.last_channel));
        }
    }

    #[test]
    fn double_bottleneck_adds_one_conv() {
        let cfg = ChannelConfig { double_bottleneck: true, ..ChannelConfig::SMALL };
        let m = Model::<f32>::build(cfg, 0).unwrap();
        assert_eq!(m.param_count(), 217_953 + 25 * 64 * 64 + 64);
        let out = m.forward(&vec![0.5; INPUT_SIZE * INPUT_SIZE]).unwrap();
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn resolution_chain() {
        let m = Model::<f32>::build(ChannelConfig::SMALL, 0).unwrap();
        let sizes: Vec<usize> = m.trace_shapes().iter().map(|s| s.2).collect();
        assert_eq!(sizes, vec![64, 32, 16, 8, 4, 2, 2, 4, 4, 8, 8, 16, 16, 10, 10]);
        let chans: Vec<usize> = m.trace_shapes().iter().map(|s| s.1).collect();
        assert_eq!(chans, vec![16, 16, 16, 16, 32, 32, 64, 32, 32, 16, 16, 16, 16, 8, 1]);
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let mut m = Model::<f32>::build(ChannelConfig::TINY, 3).unwrap();
        m.zero_parameters();
        let out = m.forward(&vec![0.3; 2 * INPUT_SIZE * INPUT_SIZE]).unwrap();
        assert_eq!(out.len(), 200);
        assert!(out.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn build_is_seeded() {
        let a = Model::<f32>::build(ChannelConfig::TINY, 9).unwrap();
        let b = Model::<f32>::build(ChannelConfig::TINY, 9).unwrap();
        let c = Model::<f32>::build(ChannelConfig::TINY, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn rejects_bad_input() {
        let m = Model::<f32>::build(ChannelConfig::TINY, 0).unwrap();
        assert!(matches!(m.forward(&[0.0; 100]), Err(ModelError::InputShape { .. })));
        assert!(matches!(m.forward(&[]), Err(ModelError::InputShape { .. })));
        assert!(Model::<f32>::build(ChannelConfig::new([4, 0, 4, 4], 2), 0).is_err());
    }

    #[test]
    fn training_mode_applies_dropout() {
        let mut m = Model::<f32>::build(ChannelConfig::TINY, 1).unwrap();
        let x: Vec<f32> = (0..INPUT_SIZE * INPUT_SIZE).map(|i| (i % 7) as f32 / 7.0).collect();
        let clean = m.forward(&x).unwrap();
        let (taped, _) = m.forward_tape(&x, &mut rng::seeded(0)).unwrap();
        assert_eq!(clean, taped);
        m.set_mode(Mode::Training);
        let (noisy, _) = m.forward_tape(&x, &mut rng::seeded(0)).unwrap();
        assert_ne!(clean, noisy);
        assert_eq!(m.forward(&x).unwrap(), clean);
    }

    #[test]
    fn thresholding() {
        assert_eq!(predict_label(&[0.5f32; 100], 0.5), GridLabel::empty());
        let mut p = vec![0.1f32; 100];
        for c in 0..10 {
            p[((c * 3) % 10) * 10 + c] = 0.9;
        }
        let label = predict_label(&p, 0.5);
        assert!(label.is_cfmt());
        p[9 * 10] = 0.9;
        let label = predict_label(&p, 0.5);
        assert!(label.to_text().as_str().starts_with("[09]"));
        let pred = Prediction::from_probabilities(&p, 0.5);
        assert_eq!(pred.label, label);
        assert!(pred.confidence.abs() < 1e-6);
    }
}
