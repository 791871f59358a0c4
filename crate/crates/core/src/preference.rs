//! Preference losses over the denoiser: Bradley–Terry probabilities, the
//! distance-weighted DPO objective and its plain DPO special case, two
//! supervised fine-tuning baselines, the training loop and gradient checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PreferencePair;
use crate::diffusion::{forward_noise, gaussian, mse_term, Architecture, DiffusionError, NoiseSchedule, Tape, TrainState};
use crate::scene::{Codec, SceneError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] DiffusionError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no training pairs")]
    Empty,
    #[error("non-finite {term} at step {step}")]
    Diverged { step: u64, term: &'static str, last_good: Box<TrainState> },
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Probability that the item with utility `r_pos` is preferred.
pub fn bt_probability(r_pos: f64, r_neg: f64) -> f64 {
    sigmoid(r_pos - r_neg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HDirection {
    Increasing,
    Decreasing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HPlacement {
    /// Multiplies β inside the sigmoid.
    ScaleBeta,
    /// Multiplies the whole pair loss.
    ScaleLoss,
}

/// Distance-dependent weight: distances clamped to `[d_lo, d_hi]` map
/// linearly onto `[h_min, h_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HFunction {
    pub h_min: f64,
    pub h_max: f64,
    pub d_lo: u32,
    pub d_hi: u32,
    pub direction: HDirection,
    pub placement: HPlacement,
}

impl Default for HFunction {
    fn default() -> Self {
        HFunction {
            h_min: 0.5,
            h_max: 1.0,
            d_lo: 1,
            d_hi: 1,
            direction: HDirection::Increasing,
            placement: HPlacement::ScaleBeta,
        }
    }
}

impl HFunction {
    /// `H ≡ 1`, which turns the weighted objective into plain DPO.
    pub fn constant() -> HFunction {
        HFunction { h_min: 1.0, h_max: 1.0, ..HFunction::default() }
    }

    /// Sets the clamp bounds to the smallest and largest distance seen.
    pub fn fitted(mut self, distances: impl IntoIterator<Item = u32>) -> HFunction {
        let mut lo = u32::MAX;
        let mut hi = 0;
        for d in distances {
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo <= hi {
            self.d_lo = lo;
            self.d_hi = hi;
        }
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.h_min > 0.0 && self.h_min <= self.h_max && self.h_max.is_finite()) {
            return Err(TrainError::Config(format!("need 0 < h_min <= h_max, got {} and {}", self.h_min, self.h_max)));
        }
        if self.d_lo > self.d_hi {
            return Err(TrainError::Config(format!("d_lo {} exceeds d_hi {}", self.d_lo, self.d_hi)));
        }
        Ok(())
    }
}

pub fn h_weight(d: u32, h: &HFunction) -> f64 {
    if h.d_lo >= h.d_hi {
        return h.h_max;
    }
    let d = d.clamp(h.d_lo, h.d_hi);
    let u = (d - h.d_lo) as f64 / (h.d_hi - h.d_lo) as f64;
    let u = match h.direction {
        HDirection::Increasing => u,
        HDirection::Decreasing => 1.0 - u,
    };
    h.h_min + (h.h_max - h.h_min) * u
}

/// β actually applied to a pair at distance `d`.
pub fn effective_beta(beta: f64, d: u32, h: &HFunction) -> f64 {
    match h.placement {
        HPlacement::ScaleBeta => beta * h_weight(d, h),
        HPlacement::ScaleLoss => beta,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    StandardFt,
    BatchFt,
    Dpo,
    Apo,
}

impl LossMode {
    pub const ALL: [LossMode; 4] = [LossMode::Apo, LossMode::Dpo, LossMode::BatchFt, LossMode::StandardFt];

    pub fn name(&self) -> &'static str {
        match self {
            LossMode::StandardFt => "standard_ft",
            LossMode::BatchFt => "batch_ft",
            LossMode::Dpo => "dpo",
            LossMode::Apo => "apo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub lr: f64,
    pub clip: f64,
    pub pairs_per_batch: usize,
    pub steps: u64,
    pub seed: u64,
    /// Metrics are logged every this many steps (and at the last step).
    pub log_every: u64,
    pub h: HFunction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 100.0,
            lr: 1e-4,
            clip: 1.0,
            pairs_per_batch: 64,
            steps: 500,
            seed: 0,
            log_every: 50,
            h: HFunction::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.beta > 0.0 && self.lr > 0.0 && self.clip > 0.0) || self.pairs_per_batch == 0 || self.log_every == 0 {
            return Err(TrainError::Config("beta, lr, clip, pairs_per_batch and log_every must be positive".into()));
        }
        self.h.validate()
    }
}

/// A preference pair reduced to vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPair {
    pub cluster: usize,
    /// Embedding of the preferred member's prompt.
    pub condition: Vec<f64>,
    pub preferred: Vec<f64>,
    pub dispreferred: Vec<f64>,
    /// Embedding of the dispreferred member's own prompt.
    pub dispreferred_condition: Vec<f64>,
    pub distance: u32,
}

impl TrainPair {
    pub fn from_pair(p: &PreferencePair, codec: &Codec) -> Result<TrainPair, SceneError> {
        Ok(TrainPair {
            cluster: p.cluster,
            condition: codec.embed(&p.condition.scene)?,
            preferred: p.preferred.embedding.clone(),
            dispreferred: p.dispreferred.embedding.clone(),
            dispreferred_condition: codec.embed(&p.dispreferred.scene)?,
            distance: p.distance,
        })
    }
}

/// Value and diagnostics of one pair term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    /// `‖ε⁺ − ε_θ‖² − ‖ε⁺ − ε_ref‖²`.
    pub l_pos: f64,
    pub l_neg: f64,
}

impl PairLoss {
    /// Implicit reward margin `−(ℓ⁺ − ℓ⁻)`.
    pub fn margin(&self) -> f64 {
        self.l_neg - self.l_pos
    }
}

/// Inputs shared by the pair losses.
pub struct PairInput<'a> {
    pub condition: &'a [f64],
    pub preferred: &'a [f64],
    pub dispreferred: &'a [f64],
    pub distance: u32,
    pub t: usize,
    pub eps_pos: &'a [f64],
    pub eps_neg: &'a [f64],
}

struct MemberPass {
    pred: Vec<f64>,
    tape: Tape,
    l: f64,
}

fn member(
    arch: &Architecture,
    params: &[f64],
    reference: &[f64],
    schedule: &NoiseSchedule,
    c: &[f64],
    x0: &[f64],
    t: usize,
    eps: &[f64],
) -> Result<MemberPass, DiffusionError> {
    let x_t = forward_noise(schedule, x0, t, eps)?;
    let input = arch.input(&x_t, c, t, schedule.steps())?;
    let mut tape = Tape::default();
    let pred = arch.forward(params, &input, &mut tape)?;
    let pref = arch.forward(reference, &input, &mut Tape::default())?;
    let sq = |p: &[f64]| p.iter().zip(eps).map(|(a, e)| (e - a) * (e - a)).sum::<f64>();
    let l = sq(&pred) - sq(&pref);
    Ok(MemberPass { pred, tape, l })
}

/// `−log σ(−H(d)·β·T·(ℓ⁺ − ℓ⁻))` (or `H(d)` times the unweighted loss when
/// `h` scales the loss). Gradients for the trainable parameters are added to
/// `grad` with weight `scale`; the reference is constant.
#[allow(clippy::too_many_arguments)]
pub fn apo_pair_loss(
    arch: &Architecture,
    params: &[f64],
    reference: &[f64],
    schedule: &NoiseSchedule,
    input: &PairInput,
    beta: f64,
    h: &HFunction,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<PairLoss, DiffusionError> {
    let pos = member(arch, params, reference, schedule, input.condition, input.preferred, input.t, input.eps_pos)?;
    let neg = member(arch, params, reference, schedule, input.condition, input.dispreferred, input.t, input.eps_neg)?;
    let w = h_weight(input.distance, h);
    let (k, s) = match h.placement {
        HPlacement::ScaleBeta => (w * beta * schedule.steps() as f64, 1.0),
        HPlacement::ScaleLoss => (beta * schedule.steps() as f64, w),
    };
    let delta = pos.l - neg.l;
    let loss = s * softplus(k * delta);
    if let Some(grad) = grad {
        let d_delta = scale * s * k * sigmoid(k * delta);
        let dpos: Vec<f64> = pos.pred.iter().zip(input.eps_pos).map(|(p, e)| d_delta * 2.0 * (p - e)).collect();
        let dneg: Vec<f64> = neg.pred.iter().zip(input.eps_neg).map(|(p, e)| -d_delta * 2.0 * (p - e)).collect();
        arch.backward(params, &pos.tape, &dpos, grad);
        arch.backward(params, &neg.tape, &dneg, grad);
    }
    Ok(PairLoss { loss, l_pos: pos.l, l_neg: neg.l })
}

/// Diffusion-DPO: the weighted loss with `H ≡ 1`.
#[allow(clippy::too_many_arguments)]
pub fn dpo_pair_loss(
    arch: &Architecture,
    params: &[f64],
    reference: &[f64],
    schedule: &NoiseSchedule,
    input: &PairInput,
    beta: f64,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<PairLoss, DiffusionError> {
    apo_pair_loss(arch, params, reference, schedule, input, beta, &HFunction::constant(), scale, grad)
}

/// One supervised example for the fine-tuning baselines.
pub struct FtSample<'a> {
    pub condition: &'a [f64],
    pub x0: &'a [f64],
    pub t: usize,
    pub eps: &'a [f64],
}

/// Mean noise-prediction MSE over `samples`, gradient added to `grad`.
pub fn ft_loss(
    arch: &Architecture,
    params: &[f64],
    schedule: &NoiseSchedule,
    samples: &[FtSample],
    mut grad: Option<&mut [f64]>,
) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Empty);
    }
    let scale = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    for s in samples {
        total += mse_term(arch, params, schedule, (s.condition, s.x0), s.t, s.eps, scale, grad.as_deref_mut())?;
    }
    Ok(total * scale)
}

/// Fine-tuning on preferred members only.
pub fn standard_ft_loss(
    arch: &Architecture,
    params: &[f64],
    schedule: &NoiseSchedule,
    positives: &[FtSample],
    grad: Option<&mut [f64]>,
) -> Result<f64, TrainError> {
    ft_loss(arch, params, schedule, positives, grad)
}

/// Fine-tuning on every member of a cluster batch, each with its own prompt.
pub fn batch_ft_loss(
    arch: &Architecture,
    params: &[f64],
    schedule: &NoiseSchedule,
    members: &[FtSample],
    grad: Option<&mut [f64]>,
) -> Result<f64, TrainError> {
    ft_loss(arch, params, schedule, members, grad)
}

/// One metrics line of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub step: u64,
    pub loss: f64,
    pub mean_margin: f64,
    /// Share of batch pairs with `ℓ⁺ < ℓ⁻`, ties counting one half.
    pub implicit_accuracy: f64,
    pub grad_norm: f64,
}

/// Fraction of pairs with `ℓ⁺ < ℓ⁻`, ties counted as one half.
pub fn implicit_accuracy(losses: &[PairLoss]) -> f64 {
    if losses.is_empty() {
        return 0.5;
    }
    let score: f64 = losses
        .iter()
        .map(|l| match l.l_pos.partial_cmp(&l.l_neg) {
            Some(std::cmp::Ordering::Less) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        })
        .sum();
    score / losses.len() as f64
}

/// Runs `cfg.steps` Adam steps of `mode` over `pairs`, starting from
/// `state`. Batches come from a seeded per-epoch shuffle; each pair gets one
/// timestep shared by its members and independent noise per member.
pub fn train(
    mut state: TrainState,
    pairs: &[TrainPair],
    mode: LossMode,
    cfg: &TrainConfig,
) -> Result<(TrainState, Vec<TrainMetrics>), TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::Empty);
    }
    let arch = state.model.arch.clone();
    let schedule = NoiseSchedule::cosine(state.model.steps);
    let h = match mode {
        LossMode::Apo => cfg.h,
        _ => HFunction::constant(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let mut grad = vec![0.0; state.model.params.len()];
    let mut log = Vec::new();
    let batch = cfg.pairs_per_batch.min(pairs.len());
    for step in 0..cfg.steps {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let draws: Vec<(usize, Vec<f64>, Vec<f64>)> = idx
            .iter()
            .map(|_| {
                let t = rng.random_range(1..=schedule.steps());
                (t, gaussian(&mut rng, arch.dim), gaussian(&mut rng, arch.dim))
            })
            .collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch as f64;
        let preference = matches!(mode, LossMode::Apo | LossMode::Dpo);
        let mut pair_losses = Vec::with_capacity(batch);
        let mut loss = 0.0;
        for (&i, (t, e1, e2)) in idx.iter().zip(&draws) {
            let p = &pairs[i];
            let input = PairInput {
                condition: &p.condition,
                preferred: &p.preferred,
                dispreferred: &p.dispreferred,
                distance: p.distance,
                t: *t,
                eps_pos: e1,
                eps_neg: e2,
            };
            let g = if preference { Some(&mut grad[..]) } else { None };
            let pl = apo_pair_loss(&arch, &state.model.params, &state.reference, &schedule, &input, cfg.beta, &h, scale, g)?;
            if preference {
                loss += pl.loss * scale;
            }
            pair_losses.push(pl);
        }
        if !preference {
            let mut samples = Vec::with_capacity(2 * batch);
            for (&i, (t, e1, e2)) in idx.iter().zip(&draws) {
                let p = &pairs[i];
                samples.push(FtSample { condition: &p.condition, x0: &p.preferred, t: *t, eps: e1 });
                if mode == LossMode::BatchFt {
                    samples.push(FtSample { condition: &p.dispreferred_condition, x0: &p.dispreferred, t: *t, eps: e2 });
                }
            }
            loss = ft_loss(&arch, &state.model.params, &schedule, &samples, Some(&mut grad))?;
        }
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step: state.step, term: "loss", last_good: Box::new(state) });
        }
        let before = state.model.params.clone();
        let grad_norm = state.adam.step(&mut state.model.params, &mut grad, cfg.lr, cfg.clip);
        if state.model.params.iter().any(|p| !p.is_finite()) {
            state.model.params = before;
            return Err(TrainError::Diverged { step: state.step, term: "parameters", last_good: Box::new(state) });
        }
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            let n = pair_losses.len() as f64;
            log.push(TrainMetrics {
                step: state.step,
                loss,
                mean_margin: pair_losses.iter().map(|l| l.margin()).sum::<f64>() / n,
                implicit_accuracy: implicit_accuracy(&pair_losses),
                grad_norm,
            });
        }
        state.step += 1;
    }
    Ok((state, log))
}

/// Result of comparing analytic and finite-difference gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compares the analytic gradient of `f` (which adds its gradient to the
/// buffer it is given) with central differences on `probes` random
/// coordinates.
pub fn grad_check(
    f: &dyn Fn(&[f64], Option<&mut [f64]>) -> f64,
    params: &[f64],
    probes: usize,
    step: f64,
    seed: u64,
) -> GradCheck {
    let mut grad = vec![0.0; params.len()];
    f(params, Some(&mut grad));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<usize> = (0..params.len()).collect();
    coords.shuffle(&mut rng);
    coords.truncate(probes.min(params.len()));
    let mut worst = (0.0, 0);
    let mut p = params.to_vec();
    for &i in &coords {
        let x = p[i];
        p[i] = x + step;
        let up = f(&p, None);
        p[i] = x - step;
        let down = f(&p, None);
        p[i] = x;
        let fd = (up - down) / (2.0 * step);
        let denom = grad[i].abs().max(fd.abs()).max(1e-8);
        let rel = (grad[i] - fd).abs() / denom;
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    GradCheck { probes: coords.len(), max_rel_error: worst.0, worst_index: worst.1 }
}

/// Gradient checks of every objective on a small random network
/// (dimension 4, hidden [10, 8], 224 parameters) against a perturbed
/// reference.
pub fn objective_grad_checks(probes: usize, seed: u64) -> Vec<(&'static str, GradCheck)> {
    let arch = Architecture::new(4, &[10, 8]);
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let params = arch.init(&mut r, false);
    let reference: Vec<f64> = params.iter().zip(gaussian(&mut r, params.len())).map(|(p, z)| p + 0.05 * z).collect();
    let schedule = NoiseSchedule::cosine(16);
    let v: Vec<Vec<f64>> = (0..7).map(|_| gaussian(&mut r, 4)).collect();
    let input = PairInput {
        condition: &v[0],
        preferred: &v[1],
        dispreferred: &v[2],
        distance: 2,
        t: 5,
        eps_pos: &v[3],
        eps_neg: &v[4],
    };
    let h = HFunction { d_lo: 1, d_hi: 3, ..HFunction::default() };
    let (arch_ref, sched_ref, input_ref, reference_ref) = (&arch, &schedule, &input, &reference);
    let pair = |h: HFunction| {
        move |p: &[f64], g: Option<&mut [f64]>| {
            apo_pair_loss(arch_ref, p, reference_ref, sched_ref, input_ref, 0.05, &h, 1.0, g).expect("finite loss").loss
        }
    };
    let samples = [
        FtSample { condition: &v[0], x0: &v[1], t: 3, eps: &v[3] },
        FtSample { condition: &v[5], x0: &v[2], t: 11, eps: &v[6] },
    ];
    let standard = |p: &[f64], g: Option<&mut [f64]>| standard_ft_loss(&arch, p, &schedule, &samples[..1], g).expect("finite loss");
    let batch = |p: &[f64], g: Option<&mut [f64]>| batch_ft_loss(&arch, p, &schedule, &samples, g).expect("finite loss");
    vec![
        ("apo_scale_beta", grad_check(&pair(h), &params, probes, 1e-5, seed)),
        ("apo_scale_loss", grad_check(&pair(HFunction { placement: HPlacement::ScaleLoss, ..h }), &params, probes, 1e-5, seed)),
        ("dpo", grad_check(&pair(HFunction::constant()), &params, probes, 1e-5, seed)),
        ("standard_ft", grad_check(&standard, &params, probes, 1e-5, seed)),
        ("batch_ft", grad_check(&batch, &params, probes, 1e-5, seed)),
    ]
}
