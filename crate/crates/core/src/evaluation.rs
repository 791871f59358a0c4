//! Compositional accuracy of sampled embeddings, preference margins and the
//! fine-tuning ablations.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{gaussian, params_hash, sample, DiffusionError, EpsPredictor, NoiseSchedule, TrainState};
use crate::preference::{
    apo_pair_loss, effective_beta, train, HDirection, HFunction, HPlacement, LossMode, PairInput, TrainConfig,
    TrainError, TrainMetrics, TrainPair,
};
use crate::scene::{apply_edit, best_group_matching, enumerate_edits, Codec, Prompt, Scene, SceneError};
use crate::tools::mix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub samples_per_prompt: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { samples_per_prompt: 8, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub correct: u64,
    pub total: u64,
}

impl Score {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, ok: bool) {
        self.correct += ok as u64;
        self.total += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub prompts: usize,
    pub samples_per_prompt: usize,
    pub seed: u64,
    pub exact_match: f64,
    pub per_detail: f64,
    pub attribute: Score,
    pub count: Score,
    pub relation: Score,
    pub model_hash: String,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "prompts {} x {} samples (seed {})", self.prompts, self.samples_per_prompt, self.seed)?;
        writeln!(f, "exact match  {:.4}", self.exact_match)?;
        writeln!(f, "per detail   {:.4}", self.per_detail)?;
        writeln!(f, "  attribute  {:.4} ({})", self.attribute.accuracy(), self.attribute.total)?;
        writeln!(f, "  count      {:.4} ({})", self.count.accuracy(), self.count.total)?;
        writeln!(f, "  relation   {:.4} ({})", self.relation.accuracy(), self.relation.total)
    }
}

/// The scene with every scene one atomic edit away, deduplicated and in a
/// fixed order with the scene itself first.
pub fn candidate_set(scene: &Scene, codec: &Codec) -> Result<Vec<Scene>, SceneError> {
    let vocab = codec.vocab();
    let mut out = vec![scene.clone()];
    let mut near: Vec<Scene> =
        enumerate_edits(scene, vocab)?.iter().map(|e| apply_edit(scene, e, vocab)).collect::<Result<_, _>>()?;
    near.sort_by_cached_key(|s| serde_json::to_string(s).unwrap_or_default());
    near.dedup();
    out.extend(near.into_iter().filter(|s| s != scene));
    Ok(out)
}

/// Which details of `prompt` hold in `decoded`, under the cheapest group
/// correspondence.
fn score_details(prompt: &Scene, decoded: &Scene, codec: &Codec, report: &mut [Score; 3]) -> Result<(u64, u64), SceneError> {
    let m = best_group_matching(prompt, decoded, codec.vocab())?;
    let (mut ok, mut total) = (0, 0);
    let mut tally = |slot: usize, good: bool, report: &mut [Score; 3]| {
        report[slot].add(good);
        ok += good as u64;
        total += 1;
    };
    for (i, g) in prompt.groups.iter().enumerate() {
        let h = m[i].map(|j| &decoded.groups[j]);
        tally(1, h.is_some_and(|h| h.count == g.count), report);
        if g.color.is_some() {
            tally(0, h.is_some_and(|h| h.color == g.color), report);
        }
        if g.size.is_some() {
            tally(0, h.is_some_and(|h| h.size == g.size), report);
        }
    }
    for r in &prompt.relations {
        let good = match (m[r.subject], m[r.object]) {
            (Some(s), Some(o)) => decoded.relation_between(s, o).is_some_and(|x| x.predicate == r.predicate),
            _ => false,
        };
        tally(2, good, report);
    }
    Ok((ok, total))
}

/// Samples each prompt `samples_per_prompt` times, decodes every sample to
/// the nearest candidate and scores it against the prompt.
pub fn compositional_accuracy(
    model: &dyn EpsPredictor,
    schedule: &NoiseSchedule,
    codec: &Codec,
    prompts: &[Prompt],
    cfg: &EvalConfig,
    model_hash: &str,
) -> Result<EvalReport, TrainError> {
    let mut cats = [Score::default(); 3];
    let (mut exact, mut detail_ok, mut detail_total, mut n) = (0u64, 0u64, 0u64, 0u64);
    for (i, p) in prompts.iter().enumerate() {
        let cands = candidate_set(&p.scene, codec)?;
        if cands.is_empty() {
            return Err(SceneError::EmptyCandidates.into());
        }
        let embs: Vec<Vec<f64>> = cands.iter().map(|s| codec.embed(s)).collect::<Result<_, _>>()?;
        let c = codec.embed(&p.scene)?;
        for k in 0..cfg.samples_per_prompt {
            let x = sample(model, schedule, &c, mix(cfg.seed, (i * cfg.samples_per_prompt + k) as u64))?;
            let decoded = &cands[codec.nearest(&x, &embs)?];
            exact += (decoded == &p.scene) as u64;
            let (ok, total) = score_details(&p.scene, decoded, codec, &mut cats)?;
            detail_ok += ok;
            detail_total += total;
            n += 1;
        }
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(EvalReport {
        prompts: prompts.len(),
        samples_per_prompt: cfg.samples_per_prompt,
        seed: cfg.seed,
        exact_match: ratio(exact, n),
        per_detail: ratio(detail_ok, detail_total),
        attribute: cats[0],
        count: cats[1],
        relation: cats[2],
        model_hash: model_hash.to_string(),
    })
}

/// Predicts the exact noise for a sample whose clean value is the condition
/// itself, so sampling returns the condition.
pub struct OracleDenoiser {
    pub dim: usize,
    pub schedule: NoiseSchedule,
}

impl EpsPredictor for OracleDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x_t: &[f64], c: &[f64], t: usize) -> Result<Vec<f64>, DiffusionError> {
        let (a, b) = (self.schedule.signal(t), self.schedule.noise(t));
        Ok(x_t.iter().zip(c).map(|(x, c)| (x - a * c) / b).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginStats {
    pub pairs: usize,
    pub draws: usize,
    pub mean: f64,
    pub std: f64,
    pub positive_fraction: f64,
}

/// Monte-Carlo estimate of the implicit margin `−(ℓ⁺ − ℓ⁻)` of `state`
/// against its reference over `pairs`.
pub fn preference_margin(
    state: &TrainState,
    pairs: &[TrainPair],
    draws: usize,
    seed: u64,
) -> Result<MarginStats, DiffusionError> {
    let schedule = NoiseSchedule::cosine(state.model.steps);
    let arch = &state.model.arch;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margins = Vec::with_capacity(pairs.len() * draws);
    let mut positive = 0.0;
    for p in pairs {
        let mut sum = 0.0;
        for _ in 0..draws {
            let t = rand::Rng::random_range(&mut rng, 1..=schedule.steps());
            let (e1, e2) = (gaussian(&mut rng, arch.dim), gaussian(&mut rng, arch.dim));
            let input = PairInput {
                condition: &p.condition,
                preferred: &p.preferred,
                dispreferred: &p.dispreferred,
                distance: p.distance,
                t,
                eps_pos: &e1,
                eps_neg: &e2,
            };
            let l = apo_pair_loss(arch, &state.model.params, &state.reference, &schedule, &input, 1.0, &HFunction::constant(), 1.0, None)?;
            margins.push(l.margin());
            sum += l.margin();
        }
        positive += match sum.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        };
    }
    let n = margins.len().max(1) as f64;
    let mean = margins.iter().sum::<f64>() / n;
    let var = margins.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    Ok(MarginStats {
        pairs: pairs.len(),
        draws,
        mean,
        std: var.sqrt(),
        positive_fraction: if pairs.is_empty() { 0.0 } else { positive / pairs.len() as f64 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub name: String,
    pub mode: LossMode,
    pub h: HFunction,
    pub report: EvalReport,
    pub final_metrics: Option<TrainMetrics>,
    /// Pairs per effective β value (formatted to one decimal).
    pub effective_beta: BTreeMap<String, usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub base_hash: String,
    pub base: EvalReport,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub rows: Vec<VariantRow>,
}

impl AblationReport {
    /// Row names ordered by exact-match accuracy, best first.
    pub fn ranking(&self) -> Vec<(String, f64)> {
        let mut r: Vec<(String, f64)> =
            self.rows.iter().filter(|r| r.error.is_none()).map(|r| (r.name.clone(), r.report.exact_match)).collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1));
        r
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>8} {:>10}", "variant", "exact", "per-detail")?;
        writeln!(f, "{:<28} {:>8.4} {:>10.4}", "base", self.base.exact_match, self.base.per_detail)?;
        for r in &self.rows {
            match &r.error {
                None => writeln!(f, "{:<28} {:>8.4} {:>10.4}", r.name, r.report.exact_match, r.report.per_detail)?,
                Some(e) => writeln!(f, "{:<28} failed: {e}", r.name)?,
            }
        }
        Ok(())
    }
}

fn beta_histogram(pairs: &[TrainPair], beta: f64, h: &HFunction) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for p in pairs {
        *out.entry(format!("{:.1}", effective_beta(beta, p.distance, h))).or_insert(0) += 1;
    }
    out
}

fn run_variant(
    name: String,
    base: &TrainState,
    pairs: &[TrainPair],
    mode: LossMode,
    h: HFunction,
    train_cfg: &TrainConfig,
    prompts: &[Prompt],
    codec: &Codec,
    eval_cfg: &EvalConfig,
) -> Result<VariantRow, TrainError> {
    let cfg = TrainConfig { h, ..train_cfg.clone() };
    let schedule = NoiseSchedule::cosine(base.model.steps);
    let hist = match mode {
        LossMode::Apo => beta_histogram(pairs, cfg.beta, &h),
        LossMode::Dpo => beta_histogram(pairs, cfg.beta, &HFunction::constant()),
        _ => BTreeMap::new(),
    };
    match train(base.clone(), pairs, mode, &cfg) {
        Ok((state, log)) => {
            let report =
                compositional_accuracy(&state.model, &schedule, codec, prompts, eval_cfg, &params_hash(&state.model.params))?;
            Ok(VariantRow { name, mode, h, report, final_metrics: log.last().cloned(), effective_beta: hist, error: None })
        }
        Err(e) => {
            let report = compositional_accuracy(&base.model, &schedule, codec, &[], eval_cfg, "")?;
            Ok(VariantRow { name, mode, h, report, final_metrics: None, effective_beta: hist, error: Some(e.to_string()) })
        }
    }
}

/// Trains every mode from the same base with identical budgets and seeds
/// and evaluates each on `prompts`.
pub fn ablation_strategies(
    base: &TrainState,
    pairs: &[TrainPair],
    prompts: &[Prompt],
    codec: &Codec,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    modes: &[LossMode],
) -> Result<AblationReport, TrainError> {
    let schedule = NoiseSchedule::cosine(base.model.steps);
    let base_hash = params_hash(&base.model.params);
    let base_report = compositional_accuracy(&base.model, &schedule, codec, prompts, eval_cfg, &base_hash)?;
    let mut rows = Vec::new();
    for &mode in modes {
        rows.push(run_variant(mode.name().into(), base, pairs, mode, train_cfg.h, train_cfg, prompts, codec, eval_cfg)?);
    }
    Ok(AblationReport { base_hash, base: base_report, train: train_cfg.clone(), eval: eval_cfg.clone(), rows })
}

/// The distance-weighted objective under every combination of weight
/// direction and placement.
pub fn ablation_h(
    base: &TrainState,
    pairs: &[TrainPair],
    prompts: &[Prompt],
    codec: &Codec,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
) -> Result<AblationReport, TrainError> {
    let schedule = NoiseSchedule::cosine(base.model.steps);
    let base_hash = params_hash(&base.model.params);
    let base_report = compositional_accuracy(&base.model, &schedule, codec, prompts, eval_cfg, &base_hash)?;
    let mut rows = Vec::new();
    for direction in [HDirection::Increasing, HDirection::Decreasing] {
        for placement in [HPlacement::ScaleBeta, HPlacement::ScaleLoss] {
            let h = HFunction { direction, placement, ..train_cfg.h };
            let name = format!("{direction:?}/{placement:?}").to_lowercase();
            rows.push(run_variant(name, base, pairs, LossMode::Apo, h, train_cfg, prompts, codec, eval_cfg)?);
        }
    }
    Ok(AblationReport { base_hash, base: base_report, train: train_cfg.clone(), eval: eval_cfg.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{Architecture, Denoiser};
    use crate::scene::Vocabulary;

    fn setup() -> (Vocabulary, Codec, Vec<Prompt>) {
        let v = Vocabulary::new(&["dog", "cat", "hat"], &["red", "black"], &["small"], &["with", "above"], 2, 3).unwrap();
        let codec = Codec::new(&v, 16, 1);
        let prompts = ["a red dog", "two cats and a black hat", "a dog and a hat, the dog with the hat"]
            .iter()
            .map(|t| Prompt::parse(t, &v).unwrap())
            .collect();
        (v, codec, prompts)
    }

    #[test]
    fn oracle_is_always_right() {
        let (_, codec, prompts) = setup();
        let schedule = NoiseSchedule::cosine(32);
        let oracle = OracleDenoiser { dim: 16, schedule: schedule.clone() };
        let r = compositional_accuracy(&oracle, &schedule, &codec, &prompts, &EvalConfig::default(), "oracle").unwrap();
        assert_eq!(r.exact_match, 1.0);
        assert_eq!(r.per_detail, 1.0);
    }

    #[test]
    fn random_network_is_near_chance_and_detail_bounds_exact() {
        let (_, codec, prompts) = setup();
        let schedule = NoiseSchedule::cosine(32);
        let m = Denoiser::new(Architecture::new(16, &[16]), 32, 5, true);
        let cfg = EvalConfig { samples_per_prompt: 40, seed: 2 };
        let r = compositional_accuracy(&m, &schedule, &codec, &prompts, &cfg, "zero").unwrap();
        let chance: f64 = prompts.iter().map(|p| 1.0 / candidate_set(&p.scene, &codec).unwrap().len() as f64).sum::<f64>()
            / prompts.len() as f64;
        assert!(r.exact_match < chance + 0.2, "{} vs {chance}", r.exact_match);
        assert!(r.per_detail >= r.exact_match);
    }

    #[test]
    fn margins_vanish_at_the_reference() {
        let m = Denoiser::new(Architecture::new(4, &[8]), 16, 5, false);
        let mut state = TrainState::from_model(m, 0);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<TrainPair> = (0..6)
            .map(|i| TrainPair {
                cluster: i,
                condition: gaussian(&mut r, 4),
                preferred: gaussian(&mut r, 4),
                dispreferred: gaussian(&mut r, 4),
                dispreferred_condition: gaussian(&mut r, 4),
                distance: 1,
            })
            .collect();
        let s = preference_margin(&state, &pairs, 4, 1).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.positive_fraction, 0.5);
        state.model.params.iter_mut().for_each(|p| *p *= 1.1);
        let a = preference_margin(&state, &pairs, 4, 1).unwrap();
        assert!(a.mean != 0.0 && a.mean.is_finite());
    }
}
