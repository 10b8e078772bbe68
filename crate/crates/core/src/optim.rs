//! The bit-regularized objective and its projected gradient step.
//!
//! Per layer, the objective adds `λ1·E(W, B)` (half the squared distance to
//! the grid) and `λ2·penalty(B)` to the batch NLL. Weights take an ordinary
//! gradient step plus a pull toward their grid points; the integer bit-width
//! moves by `-sign_ε(∂/∂B)`, i.e. by at most one per step, and stays put when
//! the scaled gradient is within `ε` of zero. After both updates the layer is
//! re-projected onto its grid.

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::kernels::softmax_cross_entropy;
use crate::net::{LayerState, Network, WeightSource};
use crate::quantize::{
    apply_quantizer, check_bits, quant_error, quant_error_grad_bits, quant_error_grad_w,
    QuantizerKind, MAX_BITS, MIN_BITS,
};
use crate::tensor::{Scalar, Tensor};

/// Form of the per-layer bit penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    /// `2^B`, the number of grid intervals.
    Exponential,
    /// `B`.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub penalty: Penalty,
    /// Dead zone of the sign step.
    pub epsilon: f64,
    pub bit_clamp: (u32, u32),
    /// Use `∂δ/∂B = -δ·ln 2` and `∂2^B/∂B = 2^B·ln 2` instead of the
    /// unscaled forms `-δ` and `2^B`.
    pub exact_derivatives: bool,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            lambda1: 1e-3,
            lambda2: 1e-6,
            penalty: Penalty::Exponential,
            epsilon: 1e-9,
            bit_clamp: (MIN_BITS, MAX_BITS),
            exact_derivatives: false,
        }
    }
}

impl RegularizerConfig {
    /// No regularization: plain SGD on the classification loss.
    pub fn none() -> Self {
        RegularizerConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bit_clamp;
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if lo > hi {
            return Err(Error::Config(format!("bit clamp [{lo}, {hi}] is empty")));
        }
        check_bits(lo)?;
        check_bits(hi)
    }

    pub fn penalty(&self, bits: u32) -> f64 {
        match self.penalty {
            Penalty::Exponential => 2f64.powi(bits as i32),
            Penalty::Linear => bits as f64,
        }
    }

    pub fn penalty_derivative(&self, bits: u32) -> f64 {
        match (self.penalty, self.exact_derivatives) {
            (Penalty::Exponential, false) => 2f64.powi(bits as i32),
            (Penalty::Exponential, true) => 2f64.powi(bits as i32) * std::f64::consts::LN_2,
            (Penalty::Linear, _) => 1.0,
        }
    }
}

/// Learning rate `mu0 · 2^-floor(iter / halve_every)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub mu0: f64,
    pub halve_every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            mu0: 1e-3,
            halve_every: 200,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0) || self.halve_every == 0 {
            return Err(Error::Config("learning rate must be positive and halve_every ≥ 1".into()));
        }
        Ok(())
    }

    pub fn rate(&self, iteration: usize) -> f64 {
        let halvings = (iteration / self.halve_every).min(2000) as i32;
        self.mu0 * 0.5f64.powi(halvings)
    }
}

/// Everything a training step needs besides the network and the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub reg: RegularizerConfig,
    pub schedule: LrSchedule,
    /// Apply the sign step to the bit-widths.
    pub learn_bits: bool,
    /// Re-project onto the grid after every step.
    pub project: bool,
    /// Parameters used by the training forward pass.
    pub train_source: WeightSource,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            reg: RegularizerConfig::default(),
            schedule: LrSchedule::default(),
            learn_bits: true,
            project: true,
            train_source: WeightSource::HighPrecision,
        }
    }
}

/// `nll + λ1 Σ E(W⁽ⁱ⁾, B⁽ⁱ⁾) + λ2 Σ penalty(B⁽ⁱ⁾)`.
pub fn regularized_loss<T: Scalar>(nll: f64, network: &Network<T>, cfg: &RegularizerConfig) -> Result<f64> {
    let mut total = nll;
    for layer in network.layers() {
        total += cfg.lambda1 * quant_error(&layer.params, &layer.q)? + cfg.lambda2 * cfg.penalty(layer.bits);
    }
    Ok(total)
}

/// `W ← W - μ·∂l/∂W - μ·λ1·∂E/∂W`, with `E`'s gradient taken at the layer's
/// current projection.
pub fn step_weights<T: Scalar>(
    layer: &mut LayerState<T>,
    grad_l: &Tensor<T>,
    mu: f64,
    cfg: &RegularizerConfig,
) -> Result<()> {
    if grad_l.len() != layer.params.len() {
        return Err(Error::shape(
            "weight step",
            format!("{} gradients for {} parameters", grad_l.len(), layer.params.len()),
        ));
    }
    let mu_t = T::of_f64(mu);
    if cfg.lambda1 == 0.0 {
        for (w, &g) in layer.params.data_mut().iter_mut().zip(grad_l.data()) {
            *w = *w - mu_t * g;
        }
    } else {
        let pull = quant_error_grad_w(&layer.params, &layer.q)?;
        let k = T::of_f64(mu * cfg.lambda1);
        for ((w, &g), &e) in layer.params.data_mut().iter_mut().zip(grad_l.data()).zip(pull.data()) {
            *w = *w - mu_t * g - k * e;
        }
    }
    Ok(())
}

/// `μ·λ1·∂E/∂B + μ·λ2·penalty'(B)` at the layer's current state.
pub fn bit_gradient<T: Scalar>(layer: &LayerState<T>, mu: f64, cfg: &RegularizerConfig) -> Result<f64> {
    let quant = if cfg.lambda1 == 0.0 {
        0.0
    } else {
        cfg.lambda1 * quant_error_grad_bits(&layer.params, &layer.q, cfg.exact_derivatives)?
    };
    Ok(mu * quant + mu * cfg.lambda2 * cfg.penalty_derivative(layer.bits))
}

/// `-1`, `0` or `+1`: the sign of `g`, or zero within `ε` of zero.
pub fn sign_eps(g: f64, epsilon: f64) -> i32 {
    if g.abs() <= epsilon {
        0
    } else if g > 0.0 {
        1
    } else {
        -1
    }
}

/// `clamp(B - sign_ε(g))`.
pub fn apply_bit_step(bits: u32, g: f64, cfg: &RegularizerConfig) -> u32 {
    let next = bits as i64 - sign_eps(g, cfg.epsilon) as i64;
    next.clamp(cfg.bit_clamp.0 as i64, cfg.bit_clamp.1 as i64) as u32
}

/// Sign step on the bit-width from the layer's current state.
pub fn step_bits<T: Scalar>(layer: &mut LayerState<T>, mu: f64, cfg: &RegularizerConfig) -> Result<u32> {
    let g = bit_gradient(layer, mu, cfg)?;
    layer.bits = apply_bit_step(layer.bits, g, cfg);
    Ok(layer.bits)
}

/// Re-quantizes the layer at its current bit-width.
pub fn project<T: Scalar>(layer: &mut LayerState<T>) -> Result<()> {
    layer.project()
}

/// Per-step measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub mu: f64,
    pub nll: f64,
    pub bits: Vec<u32>,
    /// Quantization error of each layer after the step.
    pub quant_errors: Vec<f64>,
}

/// One projected gradient step on a mini-batch.
///
/// Both the weight and bit updates are computed from the state before the
/// step; the layer is projected afterwards.
pub fn train_step<T: Scalar>(
    network: &mut Network<T>,
    batch: &Batch<T>,
    iteration: usize,
    cfg: &StepConfig,
) -> Result<StepRecord> {
    let mu = cfg.schedule.rate(iteration);
    let (logits, caches) = network.forward(&batch.inputs, cfg.train_source)?;
    if !logits.is_finite() {
        return Err(Error::Diverged { iteration });
    }
    let (nll, grad_logits) = softmax_cross_entropy(&logits, &batch.labels)?;
    if !nll.is_finite() {
        return Err(Error::Diverged { iteration });
    }
    let grads = network.backward(&caches, &grad_logits)?;

    let mut quant_errors = Vec::with_capacity(grads.len());
    for (layer, grad) in network.layers_mut().iter_mut().zip(&grads) {
        let g_bits = if cfg.learn_bits {
            Some(bit_gradient(layer, mu, &cfg.reg)?)
        } else {
            None
        };
        step_weights(layer, grad, mu, &cfg.reg)?;
        if !layer.params.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        if let Some(g) = g_bits {
            layer.bits = apply_bit_step(layer.bits, g, &cfg.reg);
        }
        if cfg.project {
            layer.project()?;
        }
        quant_errors.push(quant_error(&layer.params, &layer.q)?);
    }
    Ok(StepRecord {
        iteration,
        mu,
        nll,
        bits: network.bits(),
        quant_errors,
    })
}

/// End-of-epoch quantization used by the fixed-bit baselines: every layer's
/// parameters are replaced by their `n`-bit reconstruction.
pub fn baseline_epoch_quantize<T: Scalar>(network: &mut Network<T>, kind: QuantizerKind, n: u32) -> Result<()> {
    if kind == QuantizerKind::None {
        return Ok(());
    }
    check_bits(n)?;
    for layer in network.layers_mut() {
        layer.params = apply_quantizer(kind, &layer.params, n)?;
        layer.bits = n;
        layer.project()?;
    }
    Ok(())
}
