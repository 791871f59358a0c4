use crate::scene::{plan_edits, Prompt, Scene, Vocabulary};
use crate::tools::{mix, ToolBackend, ToolError};

use super::{details, AgentBudget, AgentError, AgentRun, AgentStatus, Session};

struct Candidate {
    wrong: usize,
    image_id: String,
    seen: Scene,
}

/// Generates an image for `prompt` and verifies every detail; if no
/// generation is correct, repairs the closest one edit by edit.
///
/// Up to `max_initial_generations` images are drawn, stopping early when one
/// is a single edit away from the prompt. The candidate with the fewest
/// wrong answers (earliest on ties) is then fixed one atomic edit at a time,
/// re-asking every detail after each edit.
pub fn image_gen_agent(
    prompt: &Prompt,
    tools: &dyn ToolBackend,
    budget: &AgentBudget,
    vocab: &Vocabulary,
    seed: u64,
) -> AgentRun {
    let mut s = Session::new(tools);
    let status = match run(&mut s, prompt, budget, vocab, seed) {
        Ok(status) => status,
        Err(e) => AgentStatus::Failed { reason: e.to_string() },
    };
    if let AgentStatus::Failed { reason } = &status {
        s.trace.note(format!("failed: {reason}"));
    }
    AgentRun { status, trace: s.trace }
}

fn run(
    s: &mut Session,
    prompt: &Prompt,
    budget: &AgentBudget,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<AgentStatus, AgentError> {
    budget.validate()?;
    let target = &prompt.scene;
    let checks = details(target);
    let mut attempts = 0;
    let mut candidates: Vec<Candidate> = Vec::new();
    for i in 0..budget.max_initial_generations {
        if attempts >= budget.max_total_attempts {
            break;
        }
        attempts += 1;
        let id = match s.generate(prompt, mix(seed, i as u64)) {
            Ok(id) => id,
            Err(ToolError::Transport(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let wrong = s.verify(&id, &checks)?;
        if wrong == 0 {
            s.trace.note(format!("generation {i} matches every detail"));
            return Ok(AgentStatus::Success { image_id: id });
        }
        let seen = s.diagnose(&id, &[target], vocab)?;
        let steps = plan_edits(&seen, target, vocab)?.map(|p| p.len());
        s.trace.note(format!("generation {i}: {wrong} wrong details, repair plan {steps:?}"));
        candidates.push(Candidate { wrong, image_id: id, seen });
        if steps.is_some_and(|n| n <= 1) {
            break;
        }
    }
    let Some(best) = candidates.into_iter().min_by_key(|c| c.wrong) else {
        return Ok(AgentStatus::Failed { reason: "no generation succeeded".into() });
    };
    s.trace.note(format!("repairing {} ({} wrong details)", best.image_id, best.wrong));
    let mut current = best.image_id;
    let mut seen = best.seen;
    let mut edits = 0;
    let mut rechecks = 0;
    while attempts < budget.max_total_attempts && edits < budget.max_edit_calls {
        let Some(plan) = plan_edits(&seen, target, vocab)? else {
            return Ok(AgentStatus::Failed { reason: "no repair plan within search depth".into() });
        };
        let Some(fix) = plan.into_iter().next() else {
            // The reconstruction already matches, so some answer was wrong.
            rechecks += 1;
            if s.verify(&current, &checks)? == 0 {
                return Ok(AgentStatus::Success { image_id: current });
            }
            if rechecks > 2 {
                break;
            }
            seen = s.diagnose(&current, &[target], vocab)?;
            continue;
        };
        attempts += 1;
        edits += 1;
        match s.edit(&current, &fix) {
            Ok(id) => current = id,
            Err(ToolError::Transport(_)) => continue,
            Err(ToolError::Validation(_)) => {
                seen = s.diagnose(&current, &[target, &seen], vocab)?;
                continue;
            }
            Err(e) => return Err(e.into()),
        }
        if s.verify(&current, &checks)? == 0 {
            s.trace.note(format!("verified after {edits} edits"));
            return Ok(AgentStatus::Success { image_id: current });
        }
        let intended = crate::scene::apply_edit(&seen, &fix, vocab)?;
        seen = s.diagnose(&current, &[target, &intended], vocab)?;
    }
    Ok(AgentStatus::Failed { reason: format!("budget exhausted after {attempts} attempts") })
}
