//! Preprocessing, loss, optimizer, learning-rate schedule and the training loop.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{maybe_augment, AugmentError, AugmentationFactors, AugmentationPolicy, TransformRanges};
use crate::eval::{evaluate_slices, EvalReport};
use crate::image::GrayImage;
use crate::label::{GridLabel, DIGITS, POSITIONS};
use crate::nn::{predict_label, ChannelConfig, Mode, Model, ModelError, Params, Scalar, INPUT_SIZE, OUTPUT_CELLS};
use crate::rng::{self, tag, Rng};
use crate::synth::{synthesize, Composition, RenderSpec, SynthError};

/// Predictions are clamped to `[EPS, 1 - EPS]` inside the logarithms.
pub const BCE_EPSILON: f64 = 1e-7;
const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("image of {width}x{height} is too small (need at least 16x16)")]
    Degenerate { width: usize, height: usize },
    #[error("shape mismatch: {pred} predictions vs {target} targets")]
    Shape { pred: usize, target: usize },
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl TrainError {
    pub fn is_numeric(&self) -> bool {
        matches!(self, TrainError::NonFiniteGradient { .. } | TrainError::NonFiniteLoss { .. })
    }
}

/// Resizes a scan to the 128×128 network input, clamping intensities to `[0, 1]`.
pub fn preprocess(image: &GrayImage) -> Result<GrayImage, TrainError> {
    if image.width() < 16 || image.height() < 16 {
        return Err(TrainError::Degenerate { width: image.width(), height: image.height() });
    }
    let mut out = image.resize_bilinear(INPUT_SIZE, INPUT_SIZE);
    out.pixels_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

/// A preprocessed 128×128 input with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: GrayImage,
    pub label: GridLabel,
}

impl TrainSample {
    pub fn new(image: &GrayImage, label: GridLabel) -> Result<Self, TrainError> {
        Ok(Self { input: preprocess(image)?, label })
    }
}

/// Renders a synthetic dataset straight into preprocessed samples, keeping
/// only the 128×128 inputs in memory.
pub fn synthetic_samples(composition: &Composition, spec: &RenderSpec, seed: u64) -> Result<Vec<TrainSample>, TrainError> {
    spec.validate()?;
    composition
        .kinds(seed)
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let rec = synthesize(i, kind, spec, seed)?;
            TrainSample::new(&rec.image, rec.label)
        })
        .collect()
}

/// Label as a row-major 10×10 target grid.
pub fn label_target<T: Scalar>(label: &GridLabel) -> Vec<T> {
    let mut out = Vec::with_capacity(OUTPUT_CELLS);
    for d in 0..DIGITS {
        for c in 0..POSITIONS {
            out.push(if label.get(d, c) { T::one() } else { T::zero() });
        }
    }
    out
}

/// Mean binary cross-entropy over every element.
pub fn bce_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<T, TrainError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TrainError::Shape { pred: pred.len(), target: target.len() });
    }
    let eps = T::lit(BCE_EPSILON);
    let one = T::one();
    let total: T = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.max(eps).min(one - eps);
            -(t * p.ln() + (one - t) * (one - p).ln())
        })
        .sum();
    Ok(total / T::lit(pred.len() as f64))
}

/// Gradient of the mean cross-entropy with respect to the pre-sigmoid logits,
/// `(p - t) / N`.
pub fn bce_grad_logits<T: Scalar>(pred: &[T], target: &[T]) -> Vec<T> {
    let n = T::lit(pred.len() as f64);
    pred.iter().zip(target).map(|(&p, &t)| (p - t) / n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub batch_size: usize,
    pub p_org: f64,
    pub factors: AugmentationFactors,
    pub ranges: TransformRanges,
    /// Set from the run-level seed, never read from a config table.
    #[serde(skip)]
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    #[serde(skip)]
    pub threshold: f64,
    /// Score the (unaugmented) training set after every epoch, not only the last.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            initial_lr: 0.0015,
            lr_decay: 0.9,
            lr_step: 20,
            batch_size: 32,
            p_org: 0.5,
            factors: AugmentationFactors::default(),
            ranges: TransformRanges::default(),
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            threshold: 0.5,
            eval_train: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_owned()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.initial_lr > 0.0) {
            return fail("initial_lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay must be in (0, 1]");
        }
        if self.lr_step == 0 {
            return fail("lr_step must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_epsilon > 0.0) {
            return fail("Adam coefficients must satisfy 0 <= beta < 1 and epsilon > 0");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("threshold must be in (0, 1)");
        }
        Ok(())
    }

    /// Augmentation policy calibrated from `p_org` and the factors.
    pub fn policy(&self) -> Result<AugmentationPolicy, TrainError> {
        Ok(AugmentationPolicy::calibrate(self.p_org, &self.factors, self.ranges)?)
    }
}

/// `initial_lr · lr_decay^⌊epoch / lr_step⌋`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.initial_lr * config.lr_decay.powi((epoch / config.lr_step) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &Params<T>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Params<T> = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0, beta1, beta2, epsilon }
    }

    pub fn for_config(params: &Params<T>, config: &TrainConfig) -> Self {
        Self::new(params, config.beta1, config.beta2, config.adam_epsilon)
    }
}

/// One bias-corrected Adam update of every parameter of `model`.
/// A non-finite gradient aborts before anything is modified.
pub fn adam_step<T: Scalar>(model: &mut Model<T>, grads: &Params<T>, state: &mut AdamState<T>, lr: f64) -> Result<(), TrainError> {
    if let Some(i) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(TrainError::NonFiniteGradient { tensor: model.tensor_name(i) });
    }
    state.step += 1;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let one = T::one();
    let c1 = T::lit(1.0 - state.beta1.powi(state.step as i32));
    let c2 = T::lit(1.0 - state.beta2.powi(state.step as i32));
    let lr = T::lit(lr);
    let eps = T::lit(state.epsilon);
    for (((p, g), m), v) in model.params_mut().iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Loss and parameter gradients for one batch. Dropout follows the model mode.
pub fn loss_and_gradients<T: Scalar>(
    model: &Model<T>,
    inputs: &[T],
    targets: &[T],
    rng: &mut Rng,
) -> Result<(T, Params<T>), TrainError> {
    let (probs, tape) = model.forward_tape(inputs, rng)?;
    let loss = bce_loss(&probs, targets)?;
    let grads = model.backward_logits(&tape, &bce_grad_logits(&probs, targets));
    Ok((loss, grads))
}

/// Forward, backward and Adam update on one batch; returns the batch loss.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    state: &mut AdamState<T>,
    inputs: &[T],
    targets: &[T],
    lr: f64,
    rng: &mut Rng,
) -> Result<T, TrainError> {
    let (loss, grads) = loss_and_gradients(model, inputs, targets, rng)?;
    if !loss.is_finite() {
        return Ok(loss);
    }
    adam_step(model, &grads, state, lr)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train: Option<EvalReport>,
    pub validation: Option<EvalReport>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch\tlr\tloss\ttrain_acc\tval_acc\tval_alpha_rate\tval_beta_rate";

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.6}"));
        write!(
            f,
            "{}\t{:.8}\t{:.8}\t{}\t{}\t{}\t{}",
            self.epoch,
            self.lr,
            self.loss,
            opt(self.train.map(|r| r.acc)),
            opt(self.validation.map(|r| r.acc)),
            opt(self.validation.map(|r| r.alpha_rate)),
            opt(self.validation.map(|r| r.beta_rate)),
        )
    }
}

impl TrainHistory {
    /// Tab-separated log with a header line and one line per epoch.
    pub fn to_log(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Thresholded predictions for preprocessed samples.
pub fn predict_labels(model: &Model<f32>, samples: &[TrainSample], threshold: f64) -> Result<Vec<GridLabel>, TrainError> {
    predict_inputs(model, samples.iter().map(|s| &s.input), threshold)
}

pub fn predict_inputs<'a>(
    model: &Model<f32>,
    inputs: impl Iterator<Item = &'a GrayImage>,
    threshold: f64,
) -> Result<Vec<GridLabel>, TrainError> {
    Ok(predict_probabilities(model, inputs)?.iter().map(|p| predict_label(p, threshold)).collect())
}

/// Per-sample 10×10 probabilities, evaluated in chunks.
pub fn predict_probabilities<'a>(
    model: &Model<f32>,
    inputs: impl Iterator<Item = &'a GrayImage>,
) -> Result<Vec<Vec<f32>>, TrainError> {
    let inputs: Vec<&GrayImage> = inputs.collect();
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(PREDICT_CHUNK) {
        let batch: Vec<f32> = chunk.iter().flat_map(|img| img.pixels().iter().copied()).collect();
        let probs = model.forward(&batch)?;
        out.extend(probs.chunks_exact(OUTPUT_CELLS).map(<[f32]>::to_vec));
    }
    Ok(out)
}

fn score(model: &Model<f32>, samples: &[TrainSample], threshold: f64) -> Result<EvalReport, TrainError> {
    let predicted = predict_labels(model, samples, threshold)?;
    let truth: Vec<GridLabel> = samples.iter().map(|s| s.label).collect();
    Ok(evaluate_slices(&truth, &predicted).expect("non-empty sample set"))
}

/// Trains `model` and returns it in inference mode with the per-epoch history.
pub fn train(
    model: Model<f32>,
    train_set: &[TrainSample],
    val_set: Option<&[TrainSample]>,
    config: &TrainConfig,
    policy: &AugmentationPolicy,
) -> Result<(Model<f32>, TrainHistory), TrainError> {
    train_with_progress(model, train_set, val_set, config, policy, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    mut model: Model<f32>,
    train_set: &[TrainSample],
    val_set: Option<&[TrainSample]>,
    config: &TrainConfig,
    policy: &AugmentationPolicy,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<f32>, TrainHistory), TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    for s in train_set.iter().chain(val_set.into_iter().flatten()) {
        if (s.input.width(), s.input.height()) != (INPUT_SIZE, INPUT_SIZE) {
            return Err(TrainError::Config("samples must be preprocessed to 128x128".into()));
        }
    }
    let mut state = AdamState::for_config(model.params(), config);
    let mut history = TrainHistory::default();
    let per_sample = INPUT_SIZE * INPUT_SIZE;

    for epoch in 0..config.epochs {
        model.set_mode(Mode::Training);
        let lr = lr_at(epoch, config);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, tag::SHUFFLE, &[epoch as u64]));

        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut inputs = Vec::with_capacity(chunk.len() * per_sample);
            let mut targets = Vec::with_capacity(chunk.len() * OUTPUT_CELLS);
            for &i in chunk {
                let sample = &train_set[i];
                let augmented = if policy.is_identity() {
                    None
                } else {
                    let mut r = rng::stream(config.seed, tag::AUGMENT, &[epoch as u64, i as u64]);
                    maybe_augment(&sample.input, policy, &mut r)
                };
                inputs.extend_from_slice(augmented.as_ref().unwrap_or(&sample.input).pixels());
                targets.extend(label_target::<f32>(&sample.label));
            }
            let mut drop_rng = rng::stream(config.seed, tag::DROPOUT, &[epoch as u64, bi as u64]);
            let loss = train_step(&mut model, &mut state, &inputs, &targets, lr, &mut drop_rng)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: bi });
            }
            loss_sum += loss as f64 * chunk.len() as f64;
        }

        model.set_mode(Mode::Inference);
        let last = epoch + 1 == config.epochs;
        let train_report = if config.eval_train || last { Some(score(&model, train_set, config.threshold)?) } else { None };
        let validation = match val_set {
            Some(v) if !v.is_empty() => Some(score(&model, v, config.threshold)?),
            _ => None,
        };
        let record = EpochRecord { epoch, lr, loss: loss_sum / train_set.len() as f64, train: train_report, validation };
        on_epoch(&record);
        history.epochs.push(record);
    }
    model.set_mode(Mode::Inference);
    Ok((model, history))
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Tensor name of the worst parameter.
    pub worst: String,
    /// Candidates rejected because the ±step perturbation flipped a leaky-ReLU sign.
    pub straddling: usize,
    /// Tensors without a single usable parameter.
    pub uncovered: Vec<String>,
}

/// Finite-difference step of the gradient check.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Parameters compared per check.
pub const GRADCHECK_PARAMS: usize = 200;

/// Compares backpropagated gradients with central finite differences in double
/// precision, dropout disabled. At least [`GRADCHECK_PARAMS`] parameters are
/// drawn, spread evenly over every tensor. A central difference across a
/// leaky-ReLU kink does not estimate the derivative, so a candidate whose
/// perturbation changes any activation sign is replaced by another parameter of
/// the same tensor. `corrupt_tensor` negates the analytic gradient of one
/// tensor, for testing the check itself.
pub fn gradient_check(
    config: ChannelConfig,
    input: &GrayImage,
    label: &GridLabel,
    seed: u64,
    corrupt_tensor: Option<usize>,
) -> Result<GradientCheck, TrainError> {
    let mut model = Model::<f64>::build(config, seed)?;
    model.set_mode(Mode::Inference);
    let x: Vec<f64> = preprocess(input)?.pixels().iter().map(|&v| v as f64).collect();
    let target = label_target::<f64>(label);
    let mut r = rng::seeded(seed);
    let (probs, tape) = model.forward_tape(&x, &mut r)?;
    let mut grads = model.backward_logits(&tape, &bce_grad_logits(&probs, &target));
    let signs = tape.activation_signs();
    drop(tape);
    if let Some(t) = corrupt_tensor {
        grads[t].iter_mut().for_each(|g| *g = -*g);
    }

    // loss at a perturbed point, or None when an activation changed sign
    let probe = |m: &Model<f64>, r: &mut Rng| -> Result<Option<f64>, TrainError> {
        let (p, tape) = m.forward_tape(&x, r)?;
        (tape.activation_signs() == signs).then(|| bce_loss(&p, &target)).transpose()
    };
    let mut numeric_at = |model: &mut Model<f64>, t: usize, i: usize| -> Result<Option<f64>, TrainError> {
        let original = model.params()[t][i];
        model.params_mut()[t][i] = original + GRADCHECK_STEP;
        let plus = probe(model, &mut r)?;
        model.params_mut()[t][i] = original - GRADCHECK_STEP;
        let minus = probe(model, &mut r)?;
        model.params_mut()[t][i] = original;
        Ok(plus.zip(minus).map(|(p, m)| (p - m) / (2.0 * GRADCHECK_STEP)))
    };

    let mut pick = rng::stream(seed, tag::GRADCHECK, &[]);
    let tensors = model.params().len();
    let per_tensor = GRADCHECK_PARAMS.div_ceil(tensors);
    let mut pending: Vec<Vec<usize>> = (0..tensors)
        .map(|t| {
            let mut idx: Vec<usize> = (0..model.params()[t].len()).collect();
            idx.shuffle(&mut pick);
            idx.reverse();
            idx
        })
        .collect();
    let mut straddling = 0;
    let mut uncovered = Vec::new();
    // relative error of the next usable parameter of tensor `t`, if any is left
    let mut take = |model: &mut Model<f64>, t: usize, pending: &mut Vec<usize>| -> Result<Option<f64>, TrainError> {
        while let Some(i) = pending.pop() {
            match numeric_at(model, t, i)? {
                None => straddling += 1,
                Some(numeric) => return Ok(Some(relative_error(grads[t][i], numeric))),
            }
        }
        Ok(None)
    };
    let mut errors: Vec<(f64, usize)> = Vec::new();
    for t in 0..tensors {
        let mut got = 0;
        while got < per_tensor {
            let Some(rel) = take(&mut model, t, &mut pending[t])? else { break };
            errors.push((rel, t));
            got += 1;
        }
        if got == 0 {
            uncovered.push(model.tensor_name(t));
        }
    }
    let mut t = 0;
    while errors.len() < GRADCHECK_PARAMS && pending.iter().any(|p| !p.is_empty()) {
        if let Some(rel) = take(&mut model, t, &mut pending[t])? {
            errors.push((rel, t));
        }
        t = (t + 1) % tensors;
    }
    let (max_relative_error, worst) = errors.iter().copied().fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
    Ok(GradientCheck {
        max_relative_error,
        checked: errors.len(),
        worst: model.tensor_name(worst),
        straddling,
        uncovered,
    })
}

/// Gradients smaller than this are compared absolutely, at `1e-5 · floor`.
/// A central difference with step 1e-5 on a loss of order one resolves
/// derivatives only to about 1e-11.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SampleKind;

    #[test]
    fn preprocess_shapes_and_values() {
        let img = GrayImage::from_fn(128, 128, |x, y| ((x + y) % 10) as f32 / 10.0);
        assert_eq!(preprocess(&img).unwrap(), img);
        let big = preprocess(&GrayImage::new(320, 320, 0.5)).unwrap();
        assert_eq!((big.width(), big.height()), (128, 128));
        let flat = preprocess(&GrayImage::new(77, 200, 0.7)).unwrap();
        assert!(flat.pixels().iter().all(|&v| (v - 0.7).abs() < 1e-5));
        assert!(matches!(preprocess(&GrayImage::new(15, 64, 0.0)), Err(TrainError::Degenerate { .. })));
    }

    #[test]
    fn bce_values() {
        let t: Vec<f64> = (0..100).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let loss = bce_loss(&[0.5; 100], &t).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&t, &t).unwrap() < 1e-6);
        assert!((bce_loss(&[0.75f64], &[1.0]).unwrap() - 0.287_682_072_451_780_9).abs() < 1e-12);
        assert!(matches!(bce_loss(&[0.5, 0.5], &[1.0]), Err(TrainError::Shape { .. })));
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 0.0015);
        assert_eq!(lr_at(19, &c), 0.0015);
        assert!((lr_at(20, &c) - 0.00135).abs() < 1e-15);
        assert!((lr_at(45, &c) - 0.001215).abs() < 1e-15);
        for e in 0..150 {
            let want = 0.0015 * 0.9f64.powi((e / 20) as i32);
            assert!((lr_at(e, &c) - want).abs() < 1e-15);
            if e > 0 && e % 20 != 0 {
                assert_eq!(lr_at(e, &c), lr_at(e - 1, &c));
            }
        }
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut model = Model::<f64>::build(ChannelConfig::TINY, 0).unwrap();
        let before = model.params().clone();
        let mut state = AdamState::new(model.params(), 0.9, 0.999, 1e-8);
        let zeros: Params<f64> = before.iter().map(|p| vec![0.0; p.len()]).collect();
        adam_step(&mut model, &zeros, &mut state, 0.01).unwrap();
        assert_eq!(model.params(), &before);
        assert_eq!(state.step, 1);

        let mut model = Model::<f64>::build(ChannelConfig::TINY, 0).unwrap();
        let mut state = AdamState::new(model.params(), 0.9, 0.999, 1e-8);
        let grads: Params<f64> = before.iter().map(|p| (0..p.len()).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect()).collect();
        adam_step(&mut model, &grads, &mut state, 0.01).unwrap();
        for ((after, b), g) in model.params().iter().flatten().zip(before.iter().flatten()).zip(grads.iter().flatten()) {
            let step = after - b;
            assert!((step.abs() - 0.01).abs() < 1e-6, "step {step}");
            assert_eq!(step.signum(), -g.signum());
        }
        // moments decay under zero gradients
        adam_step(&mut model, &zeros, &mut state, 0.01).unwrap();
        assert!((state.m[0][0] - 0.9 * 0.1 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut model = Model::<f32>::build(ChannelConfig::TINY, 0).unwrap();
        let mut state = AdamState::new(model.params(), 0.9, 0.999, 1e-8);
        let mut grads: Params<f32> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        grads[5][0] = f32::NAN;
        let before = model.clone();
        match adam_step(&mut model, &grads, &mut state, 0.01) {
            Err(TrainError::NonFiniteGradient { tensor }) => assert_eq!(tensor, "encoder2.bias"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(model, before);
    }

    #[test]
    fn history_log_schema() {
        let mut h = TrainHistory::default();
        h.epochs.push(EpochRecord { epoch: 0, lr: 0.0015, loss: 0.5, train: None, validation: None });
        assert_eq!(h.to_log(), format!("{HISTORY_HEADER}\n0\t0.00150000\t0.50000000\t-\t-\t-\t-\n"));
    }

    #[test]
    fn gradient_check_small_sample() {
        let rec = synthesize(0, SampleKind::Cfmt, &RenderSpec::default(), 1).unwrap();
        let check = gradient_check(ChannelConfig::TINY, &rec.image, &rec.label, 5, None).unwrap();
        assert!(check.checked >= 200 && check.uncovered.is_empty(), "{check:?}");
        assert!(check.max_relative_error < 1e-5, "{check:?}");
        println!("{check:?}");
        for seed in [1, 2, 3, 4] {
            let c = gradient_check(ChannelConfig::TINY, &rec.image, &rec.label, seed, None).unwrap();
            assert!(c.max_relative_error < 1e-5, "seed {seed}: {c:?}");
        }
        let bad = gradient_check(ChannelConfig::TINY, &rec.image, &rec.label, 5, Some(12)).unwrap();
        assert!(bad.max_relative_error > 0.1, "{bad:?}");
    }

    #[test]
    fn overfits_a_few_samples() {
        let spec = RenderSpec::default();
        let samples: Vec<TrainSample> = (0..4)
            .map(|i| {
                let r = synthesize(i, SampleKind::Cfmt, &spec, 11).unwrap();
                TrainSample::new(&r.image, r.label).unwrap()
            })
            .collect();
        let config = TrainConfig { epochs: 150, batch_size: 4, seed: 3, ..Default::default() };
        let model = Model::build(ChannelConfig::SMALL, 3).unwrap();
        let t = std::time::Instant::now();
        let (model, history) = train_with_progress(model, &samples, None, &config, &AugmentationPolicy::disabled(), |e| {
            if e.epoch % 25 == 0 {
                println!("{e}");
            }
        })
        .unwrap();
        println!("{:?}", t.elapsed());
        assert_eq!(model.mode(), Mode::Inference);
        assert_eq!(history.epochs.last().unwrap().train.unwrap().acc, 1.0);
    }

    #[test]
    fn zero_sample_has_finite_gradients() {
        let mut model = Model::<f64>::build(ChannelConfig::TINY, 2).unwrap();
        model.set_mode(Mode::Inference);
        let x = vec![0.0; INPUT_SIZE * INPUT_SIZE];
        let (loss, grads) = loss_and_gradients(&model, &x, &vec![0.0; 100], &mut rng::seeded(0)).unwrap();
        assert!(loss.is_finite() && loss < 2.0);
        assert!(grads.iter().flatten().all(|g| g.is_finite()));
    }

    fn cfmt_samples(n: usize, seed: u64) -> Vec<TrainSample> {
        synthetic_samples(&Composition::only_cfmt(n), &RenderSpec::default(), seed).unwrap()
    }

    #[test]
    fn first_adam_steps_reduce_loss() {
        let samples = cfmt_samples(8, 21);
        let inputs: Vec<f32> = samples.iter().flat_map(|s| s.input.pixels().iter().copied()).collect();
        let targets: Vec<f32> = samples.iter().flat_map(|s| label_target::<f32>(&s.label)).collect();
        let mut decreased = 0;
        for seed in 0..20 {
            let mut model = Model::<f32>::build(ChannelConfig::SMALL, seed).unwrap();
            model.set_mode(Mode::Inference);
            let mut state = AdamState::new(model.params(), 0.9, 0.999, 1e-8);
            let mut r = rng::seeded(seed);
            let mut losses = Vec::new();
            for _ in 0..5 {
                losses.push(train_step(&mut model, &mut state, &inputs, &targets, 0.0015, &mut r).unwrap());
            }
            losses.push(bce_loss(&model.forward(&inputs).unwrap(), &targets).unwrap());
            decreased += usize::from(losses[5] < losses[0]);
        }
        assert!(decreased >= 19, "loss fell in only {decreased}/20 seeds");
    }

    #[test]
    fn untouched_policy_matches_no_augmentation() {
        let samples = cfmt_samples(6, 4);
        let config = TrainConfig { epochs: 2, batch_size: 4, p_org: 1.0, seed: 8, ..Default::default() };
        let run = |policy: &AugmentationPolicy| {
            let model = Model::build(ChannelConfig::TINY, 8).unwrap();
            let (model, history) = train(model, &samples, None, &config, policy).unwrap();
            (model, history.losses())
        };
        let calibrated = config.policy().unwrap();
        assert!(calibrated.is_identity());
        let (ma, la) = run(&calibrated);
        let (mb, lb) = run(&AugmentationPolicy::disabled());
        assert_eq!(la, lb);
        assert_eq!(ma, mb);
    }

    #[test]
    fn training_is_reproducible_with_augmentation() {
        let samples = cfmt_samples(6, 4);
        let config = TrainConfig { epochs: 2, batch_size: 4, seed: 8, ..Default::default() };
        let policy = config.policy().unwrap();
        let run = |seed: u64| {
            let model = Model::build(ChannelConfig::TINY, 8).unwrap();
            train(model, &samples, Some(&samples), &TrainConfig { seed, ..config.clone() }, &policy).unwrap().1
        };
        assert_eq!(run(8), run(8));
        assert_ne!(run(8).losses(), run(9).losses());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let model = Model::build(ChannelConfig::TINY, 0).unwrap();
        let r = train(model, &[], None, &TrainConfig::default(), &AugmentationPolicy::disabled());
        assert!(matches!(r, Err(TrainError::EmptyTrainingSet)));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr_decay: 1.5, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        let p = TrainConfig::default().policy().unwrap();
        assert!(p.residual() < 1e-6);
    }
}
