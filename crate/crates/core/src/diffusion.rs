//! A small conditional ε-prediction diffusion model over scene embeddings,
//! with hand-written backpropagation.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TIMESTEPS: usize = 64;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("expected a vector of length {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("timestep {t} outside 1..={max}")]
    Timestep { t: usize, max: usize },
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("empty training set")]
    Empty,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

/// Cosine variance-preserving schedule over timesteps `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn cosine(steps: usize) -> NoiseSchedule {
        assert!(steps >= 1, "schedule needs at least one step");
        let s = 0.008;
        let f = |t: f64| (((t / steps as f64) + s) / (1.0 + s) * FRAC_PI_2).cos().powi(2);
        let mut betas = Vec::with_capacity(steps);
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut ab = 1.0;
        for t in 1..=steps {
            let beta = (1.0 - f(t as f64) / f((t - 1) as f64)).clamp(1e-8, 0.999);
            ab *= 1.0 - beta;
            betas.push(beta);
            alpha_bars.push(ab);
        }
        NoiseSchedule { steps, betas, alpha_bars }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// Signal coefficient `a_t`.
    pub fn signal(&self, t: usize) -> f64 {
        self.alpha_bar(t).sqrt()
    }

    /// Noise coefficient `b_t`, with `a_t² + b_t² = 1`.
    pub fn noise(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps {
            return Err(DiffusionError::Timestep { t, max: self.steps });
        }
        Ok(())
    }
}

/// `x_t = a_t·x0 + b_t·ε`.
pub fn forward_noise(schedule: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>, DiffusionError> {
    schedule.check(t)?;
    if eps.len() != x0.len() {
        return Err(DiffusionError::Dimension { expected: x0.len(), actual: eps.len() });
    }
    let (a, b) = (schedule.signal(t), schedule.noise(t));
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

pub fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Layer sizes of the denoiser: input `[x_t, c, t/T]`, SiLU hidden layers,
/// linear output of the embedding width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub dim: usize,
    pub hidden: Vec<usize>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
}

impl Architecture {
    pub fn new(dim: usize, hidden: &[usize]) -> Architecture {
        Architecture { dim, hidden: hidden.to_vec() }
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = vec![2 * self.dim + 1];
        s.extend(&self.hidden);
        s.push(self.dim);
        s
    }

    pub fn param_count(&self) -> usize {
        self.sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Scaled normal weights, zero biases; optionally a zero output layer.
    pub fn init(&self, rng: &mut impl Rng, zero_output: bool) -> Vec<f64> {
        let sizes = self.sizes();
        let mut p = Vec::with_capacity(self.param_count());
        for (l, w) in sizes.windows(2).enumerate() {
            let last = l + 2 == sizes.len();
            let scale = (1.0 / w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                let z: f64 = StandardNormal.sample(rng);
                p.push(if last && zero_output { 0.0 } else { z * scale });
            }
            p.extend(std::iter::repeat_n(0.0, w[1]));
        }
        p
    }

    pub fn input(&self, x_t: &[f64], c: &[f64], t: usize, steps: usize) -> Result<Vec<f64>, DiffusionError> {
        for v in [x_t, c] {
            if v.len() != self.dim {
                return Err(DiffusionError::Dimension { expected: self.dim, actual: v.len() });
            }
        }
        let mut x = Vec::with_capacity(2 * self.dim + 1);
        x.extend_from_slice(x_t);
        x.extend_from_slice(c);
        x.push(t as f64 / steps as f64);
        Ok(x)
    }

    /// Runs the network, recording activations on `tape`.
    pub fn forward(&self, params: &[f64], input: &[f64], tape: &mut Tape) -> Result<Vec<f64>, DiffusionError> {
        let sizes = self.sizes();
        tape.inputs.clear();
        tape.pre.clear();
        let mut x = input.to_vec();
        let mut off = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let mut z = bias.to_vec();
            for (o, row) in weights.chunks_exact(n_in).enumerate() {
                z[o] += row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(DiffusionError::NonFinite { layer: l });
            }
            tape.inputs.push(std::mem::take(&mut x));
            if l + 2 == sizes.len() {
                return Ok(z);
            }
            x = z.iter().map(|&v| silu(v)).collect();
            tape.pre.push(z);
        }
        unreachable!("network has an output layer")
    }

    /// Adds `∂(dout·output)/∂params` to `grad`.
    pub fn backward(&self, params: &[f64], tape: &Tape, dout: &[f64], grad: &mut [f64]) {
        let sizes = self.sizes();
        let layers = sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = dout.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let off = offsets[l];
            let x = &tape.inputs[l];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &params[off..off + n_in * n_out];
            let mut back = vec![0.0; n_in];
            for (o, row) in weights.chunks_exact(n_in).enumerate() {
                let d = delta[o];
                if d != 0.0 {
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
            }
            for (b, z) in back.iter_mut().zip(&tape.pre[l - 1]) {
                *b *= silu_grad(*z);
            }
            delta = back;
        }
    }
}

/// Anything that predicts the noise in `x_t` given a condition.
pub trait EpsPredictor {
    fn dim(&self) -> usize;
    fn predict(&self, x_t: &[f64], c: &[f64], t: usize) -> Result<Vec<f64>, DiffusionError>;
}

/// A network with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    pub arch: Architecture,
    pub steps: usize,
    pub params: Vec<f64>,
}

impl Denoiser {
    pub fn new(arch: Architecture, steps: usize, seed: u64, zero_output: bool) -> Denoiser {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch.init(&mut rng, zero_output);
        Denoiser { arch, steps, params }
    }
}

impl EpsPredictor for Denoiser {
    fn dim(&self) -> usize {
        self.arch.dim
    }

    fn predict(&self, x_t: &[f64], c: &[f64], t: usize) -> Result<Vec<f64>, DiffusionError> {
        let input = self.arch.input(x_t, c, t, self.steps)?;
        self.arch.forward(&self.params, &input, &mut Tape::default())
    }
}

/// Bound on each coordinate of the clean-sample estimate during sampling.
/// Embeddings have roughly unit variance per coordinate; the bound only
/// matters at the noisiest steps, where a small error in the predicted
/// noise is divided by a vanishing signal coefficient.
pub const X0_CLIP: f64 = 6.0;

/// Ancestral reverse diffusion from pure noise; deterministic in `seed`.
/// Each step forms the posterior mean from the clean-sample estimate
/// `(x_t − b_t·ε̂)/a_t`, clamped to `±X0_CLIP`.
pub fn sample(
    model: &dyn EpsPredictor,
    schedule: &NoiseSchedule,
    c: &[f64],
    seed: u64,
) -> Result<Vec<f64>, DiffusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian(&mut rng, model.dim());
    for t in (1..=schedule.steps()).rev() {
        let eps = model.predict(&x, c, t)?;
        let beta = schedule.beta(t);
        let ab = schedule.alpha_bar(t);
        let ab_prev = if t > 1 { schedule.alpha_bar(t - 1) } else { 1.0 };
        let (a, b) = (schedule.signal(t), schedule.noise(t));
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        for (xi, e) in x.iter_mut().zip(&eps) {
            let x0 = ((*xi - b * e) / a).clamp(-X0_CLIP, X0_CLIP);
            *xi = c0 * x0 + ct * *xi;
        }
        if t > 1 {
            let sd = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
            for xi in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *xi += sd * z;
            }
        }
    }
    Ok(x)
}

/// Adam with global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(n: usize) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Clips `grad` to `clip` (if positive) and updates `params`. Returns the
    /// gradient norm before clipping.
    pub fn step(&mut self, params: &mut [f64], grad: &mut [f64], lr: f64, clip: f64) -> f64 {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if clip > 0.0 && norm > clip {
            let s = clip / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
        norm
    }
}

/// Trainable model, frozen reference and optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: Denoiser,
    pub reference: Vec<f64>,
    pub adam: Adam,
    pub step: u64,
    pub seed: u64,
}

pub fn params_hash(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl TrainState {
    /// Starts fine-tuning from `model`, freezing a copy as the reference.
    pub fn from_model(model: Denoiser, seed: u64) -> TrainState {
        let n = model.params.len();
        TrainState { reference: model.params.clone(), model, adam: Adam::new(n), step: 0, seed }
    }

    pub fn reference_model(&self) -> Denoiser {
        Denoiser { params: self.reference.clone(), ..self.model.clone() }
    }

    pub fn reference_hash(&self) -> String {
        params_hash(&self.reference)
    }
}

/// A conditioning vector and a clean sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub condition: Vec<f64>,
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub timesteps: usize,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub clip: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { hidden: vec![64, 64], timesteps: DEFAULT_TIMESTEPS, steps: 4000, batch: 64, lr: 2e-3, clip: 1.0, seed: 0 }
    }
}

/// Per-step record of pretraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub step: u64,
    pub loss: f64,
}

/// Squared error of one noise prediction and its gradient, accumulated
/// into `grad` with weight `scale`.
pub(crate) fn mse_term(
    arch: &Architecture,
    params: &[f64],
    schedule: &NoiseSchedule,
    item: (&[f64], &[f64]),
    t: usize,
    eps: &[f64],
    scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64, DiffusionError> {
    let (c, x0) = item;
    let x_t = forward_noise(schedule, x0, t, eps)?;
    let input = arch.input(&x_t, c, t, schedule.steps())?;
    let mut tape = Tape::default();
    let out = arch.forward(params, &input, &mut tape)?;
    let d = arch.dim as f64;
    let loss = out.iter().zip(eps).map(|(o, e)| (o - e) * (o - e)).sum::<f64>() / d;
    if let Some(grad) = grad {
        let dout: Vec<f64> = out.iter().zip(eps).map(|(o, e)| scale * 2.0 * (o - e) / d).collect();
        arch.backward(params, &tape, &dout, grad);
    }
    Ok(loss)
}

/// Denoising MSE training from a fresh network. The returned state's
/// reference is the final pretrained parameters.
pub fn pretrain(corpus: &[CorpusItem], config: &PretrainConfig) -> Result<(TrainState, Vec<PretrainLog>), DiffusionError> {
    let first = corpus.first().ok_or(DiffusionError::Empty)?;
    let arch = Architecture::new(first.x0.len(), &config.hidden);
    let schedule = NoiseSchedule::cosine(config.timesteps);
    let mut model = Denoiser::new(arch.clone(), config.timesteps, config.seed, false);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut adam = Adam::new(model.params.len());
    let mut grad = vec![0.0; model.params.len()];
    let mut log = Vec::new();
    let batch = config.batch.max(1);
    for step in 0..config.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..batch {
            let item = &corpus[rng.random_range(0..corpus.len())];
            let t = rng.random_range(1..=config.timesteps);
            let eps = gaussian(&mut rng, arch.dim);
            loss += mse_term(
                &arch,
                &model.params,
                &schedule,
                (&item.condition, &item.x0),
                t,
                &eps,
                1.0 / batch as f64,
                Some(&mut grad),
            )?;
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            return Err(DiffusionError::Diverged { step, loss });
        }
        adam.step(&mut model.params, &mut grad, config.lr, config.clip);
        if step % 100 == 0 || step + 1 == config.steps {
            log.push(PretrainLog { step, loss });
        }
    }
    Ok((TrainState::from_model(model, config.seed), log))
}

/// Serialized model state with its format version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub codec_seed: u64,
    pub vocab_hash: String,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), DiffusionError> {
        let err = |e: String| DiffusionError::Checkpoint { path: path.display().to_string(), message: e };
        let text = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Checkpoint, DiffusionError> {
        let err = |e: String| DiffusionError::Checkpoint { path: path.display().to_string(), message: e };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {}", ck.version)));
        }
        if ck.state.model.params.len() != ck.state.model.arch.param_count() {
            return Err(err("parameter count does not match the architecture".into()));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_identities() {
        let s = NoiseSchedule::cosine(DEFAULT_TIMESTEPS);
        assert!(s.signal(1) >= 0.99);
        assert!(s.signal(DEFAULT_TIMESTEPS) < 0.05);
        for t in 1..=s.steps() {
            assert!((s.signal(t).powi(2) + s.noise(t).powi(2) - 1.0).abs() < 1e-12);
            if t > 1 {
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    #[test]
    fn forward_noise_cases() {
        let s = NoiseSchedule::cosine(DEFAULT_TIMESTEPS);
        let x0 = [1.0, -2.0, 0.5];
        let x = forward_noise(&s, &x0, 10, &[0.0; 3]).unwrap();
        for (a, b) in x.iter().zip(x0) {
            assert_eq!(*a, s.signal(10) * b);
        }
        assert!(matches!(forward_noise(&s, &x0, 0, &[0.0; 3]), Err(DiffusionError::Timestep { .. })));
        assert!(matches!(forward_noise(&s, &x0, 3, &[0.0; 2]), Err(DiffusionError::Dimension { .. })));
    }

    #[test]
    fn forward_noise_variance() {
        let s = NoiseSchedule::cosine(DEFAULT_TIMESTEPS);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 32;
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x0 = 2.0 * z;
            let e: f64 = StandardNormal.sample(&mut rng);
            let x = forward_noise(&s, &[x0], t, &[e]).unwrap()[0];
            sum += x;
            sq += x * x;
        }
        let var = sq / n as f64 - (sum / n as f64).powi(2);
        let expect = s.alpha_bar(t) * 4.0 + (1.0 - s.alpha_bar(t));
        assert!((var / expect - 1.0).abs() < 0.02, "{var} vs {expect}");
    }

    #[test]
    fn zero_output_predicts_zero_and_sampling_is_deterministic() {
        let arch = Architecture::new(4, &[8, 8]);
        let m = Denoiser::new(arch, 16, 1, true);
        assert_eq!(m.predict(&[1.0; 4], &[0.5; 4], 3).unwrap(), vec![0.0; 4]);
        let s = NoiseSchedule::cosine(16);
        let m = Denoiser::new(Architecture::new(4, &[8, 8]), 16, 1, false);
        assert_eq!(sample(&m, &s, &[0.1; 4], 9).unwrap(), sample(&m, &s, &[0.1; 4], 9).unwrap());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let arch = Architecture::new(3, &[5, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = arch.init(&mut rng, false);
        let input = gaussian(&mut rng, 7);
        let w = gaussian(&mut rng, 3);
        let f = |p: &[f64]| -> f64 {
            let out = arch.forward(p, &input, &mut Tape::default()).unwrap();
            out.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let mut tape = Tape::default();
        arch.forward(&params, &input, &mut tape).unwrap();
        let mut grad = vec![0.0; params.len()];
        arch.backward(&params, &tape, &w, &mut grad);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let down = f(&p);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn non_finite_is_reported_with_layer() {
        let arch = Architecture::new(2, &[3]);
        let mut p = arch.init(&mut ChaCha8Rng::seed_from_u64(0), false);
        p[0] = f64::NAN;
        let input = arch.input(&[1.0, 1.0], &[0.0, 0.0], 1, 4).unwrap();
        assert!(matches!(arch.forward(&p, &input, &mut Tape::default()), Err(DiffusionError::NonFinite { layer: 0 })));
    }

    #[test]
    fn pretraining_fits_a_tiny_corpus() {
        let corpus: Vec<CorpusItem> = (0..4)
            .map(|i| {
                let mut v = vec![-1.0; 4];
                v[i] = 1.0;
                CorpusItem { condition: v.clone(), x0: v }
            })
            .collect();
        let config = PretrainConfig { hidden: vec![32, 32], steps: 0, ..PretrainConfig::default() };
        let (s0, _) = pretrain(&corpus, &config).unwrap();
        let fresh = Denoiser::new(Architecture::new(4, &[32, 32]), config.timesteps, config.seed, false);
        assert_eq!(s0.model.params, fresh.params);

        let config = PretrainConfig { hidden: vec![32, 32], steps: 1500, ..PretrainConfig::default() };
        let (state, log) = pretrain(&corpus, &config).unwrap();
        assert!(log.last().unwrap().loss < log[0].loss * 0.5);
        assert_eq!(state.reference, state.model.params);
        let schedule = NoiseSchedule::cosine(config.timesteps);
        let mut hits = 0;
        for (i, item) in corpus.iter().enumerate() {
            for k in 0..25 {
                let x = sample(&state.model, &schedule, &item.condition, (i * 100 + k) as u64).unwrap();
                let best = (0..4)
                    .min_by(|&a, &b| {
                        let da: f64 = x.iter().zip(&corpus[a].x0).map(|(p, q)| (p - q).powi(2)).sum();
                        let db: f64 = x.iter().zip(&corpus[b].x0).map(|(p, q)| (p - q).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                hits += (best == i) as usize;
            }
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Denoiser::new(Architecture::new(3, &[4]), 8, 0, false);
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            codec_seed: 1,
            vocab_hash: "abc".into(),
            state: TrainState::from_model(m, 2),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
