use crate::scene::{apply_edit, plan_edits, Prompt, Vocabulary};
use crate::tools::{ToolBackend, ToolError};

use super::{details, AgentBudget, AgentError, AgentRun, AgentStatus, Session};

/// Turns `source_image`, assumed to depict `source`, into an image of
/// `target` by applying a shortest edit plan one edit at a time.
///
/// After each edit every detail of the intended intermediate scene is
/// asked. When an answer disagrees, the actual scene is reconstructed from
/// questions and the plan is recomputed from it.
pub fn image_edit_agent(
    source_image: &str,
    source: &Prompt,
    target: &Prompt,
    tools: &dyn ToolBackend,
    budget: &AgentBudget,
    vocab: &Vocabulary,
) -> AgentRun {
    let mut s = Session::new(tools);
    let status = match run(&mut s, source_image, source, target, budget, vocab) {
        Ok(status) => status,
        Err(e) => AgentStatus::Failed { reason: e.to_string() },
    };
    match &status {
        AgentStatus::Success { image_id } => s.trace.note(format!("[success] {image_id}")),
        AgentStatus::Failed { reason } => s.trace.note(format!("[failed] {reason}")),
    }
    AgentRun { status, trace: s.trace }
}

fn run(
    s: &mut Session,
    source_image: &str,
    source: &Prompt,
    target: &Prompt,
    budget: &AgentBudget,
    vocab: &Vocabulary,
) -> Result<AgentStatus, AgentError> {
    budget.validate()?;
    let goal = &target.scene;
    let mut seen = source.scene.clone();
    let mut current = source_image.to_string();
    let mut verified = false;
    let mut edits = 0;
    let mut rechecks = 0;
    loop {
        let Some(plan) = plan_edits(&seen, goal, vocab)? else {
            return Ok(AgentStatus::Failed { reason: "no plan within search depth".into() });
        };
        let Some(step) = plan.into_iter().next() else {
            if verified {
                return Ok(AgentStatus::Success { image_id: current });
            }
            if s.verify(&current, &details(goal))? == 0 {
                return Ok(AgentStatus::Success { image_id: current });
            }
            rechecks += 1;
            if rechecks > 2 {
                return Ok(AgentStatus::Failed { reason: "image keeps disagreeing with its reconstruction".into() });
            }
            seen = s.diagnose(&current, &[goal, &seen], vocab)?;
            continue;
        };
        if edits >= budget.max_edit_calls {
            return Ok(AgentStatus::Failed { reason: format!("edit budget of {} exhausted", budget.max_edit_calls) });
        }
        let intended = apply_edit(&seen, &step, vocab)?;
        edits += 1;
        match s.edit(&current, &step) {
            Ok(id) => current = id,
            Err(ToolError::Transport(_)) => continue,
            Err(ToolError::Validation(_)) => {
                seen = s.diagnose(&current, &[goal, &seen], vocab)?;
                verified = false;
                continue;
            }
            Err(e) => return Err(e.into()),
        }
        let wrong = s.verify(&current, &details(&intended))?;
        if wrong == 0 {
            seen = intended;
            verified = true;
        } else {
            s.trace.note(format!("{wrong} details disagree after {}", step.describe(&seen)));
            seen = s.diagnose(&current, &[&intended, goal, &seen], vocab)?;
            verified = false;
        }
    }
}
