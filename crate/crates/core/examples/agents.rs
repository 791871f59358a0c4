//! The generation, contrastive-prompt and edit agents on noisy tools.

use scenepref::agents::{contrastive_prompt_agent, image_edit_agent, image_gen_agent, AgentBudget};
use scenepref::scene::{Prompt, Vocabulary};
use scenepref::tools::{NoiseProfile, ToolBackend, ToolService};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::default();
    let tools = ToolService::new(&vocab, NoiseProfile { seed: 4, ..NoiseProfile::default() });
    let budget = AgentBudget::default();
    let prompt = Prompt::parse("two black large cats and a red book, the black large cats above the red book", &vocab)?;

    let run = image_gen_agent(&prompt, &tools, &budget, &vocab, 0);
    println!("generation: {:?}, calls {:?}", run.status, run.trace.counters());
    for step in run.trace.steps() {
        println!("  {step:?}");
    }
    let positive = run.status.image_id().ok_or("generation failed")?.to_string();

    for neg in contrastive_prompt_agent(&prompt, 3, 0, &vocab)? {
        let run = image_edit_agent(&positive, &prompt, &neg, &tools, &budget, &vocab);
        let scene = run.status.image_id().map(|id| tools.image(id)).transpose()?.map(|r| r.scene);
        println!("negative {:?}: {} calls, {}", neg.text, run.trace.counters().total(), if scene == Some(neg.scene) { "ok" } else { "failed" });
    }
    Ok(())
}
