use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::{apply_edit, enumerate_edits, satisfies, AtomicEdit, Prompt, Scene, Vocabulary};

use super::AgentError;

/// Relative weights of perturbing with 1, 2 or 3 edits.
pub const EDIT_COUNT_WEIGHTS: [f64; 3] = [0.6, 0.3, 0.1];

/// Writes up to `k_target` distinct negative prompts for `prompt`.
///
/// Each negative applies 1 to 3 random atomic edits to the prompt's scene,
/// choosing the edit kind uniformly among the kinds available. Candidates
/// whose scene still satisfies the prompt (for example one that only adds
/// an object) are rejected, as are duplicates.
pub fn contrastive_prompt_agent(
    prompt: &Prompt,
    k_target: usize,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<Vec<Prompt>, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = WeightedIndex::new(EDIT_COUNT_WEIGHTS).expect("static weights");
    let mut seen: HashSet<Scene> = HashSet::from([prompt.scene.clone()]);
    let mut out = Vec::new();
    let max_tries = 50 * k_target.max(1);
    for _ in 0..max_tries {
        if out.len() >= k_target {
            break;
        }
        let n = counts.sample(&mut rng) + 1;
        let mut scene = prompt.scene.clone();
        for _ in 0..n {
            let e = random_edit(&mut rng, &scene, vocab)?;
            scene = apply_edit(&scene, &e, vocab)?;
        }
        if satisfies(&prompt.scene, &scene) || !seen.insert(scene.clone()) {
            continue;
        }
        out.push(Prompt::from_scene(&scene, vocab)?);
    }
    Ok(out)
}

fn random_edit<R: Rng>(rng: &mut R, scene: &Scene, vocab: &Vocabulary) -> Result<AtomicEdit, AgentError> {
    let edits = enumerate_edits(scene, vocab)?;
    let mut kinds: Vec<&str> = edits.iter().map(|e| e.kind_name()).collect();
    kinds.dedup();
    kinds.sort_unstable();
    kinds.dedup();
    if kinds.is_empty() {
        return Err(AgentError::NoEdits);
    }
    let kind = kinds[rng.random_range(0..kinds.len())];
    let of_kind: Vec<&AtomicEdit> = edits.iter().filter(|e| e.kind_name() == kind).collect();
    Ok(of_kind[rng.random_range(0..of_kind.len())].clone())
}
