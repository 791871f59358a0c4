//! Simulated tools over HTTP: generate an image, ask a question, edit it.

use std::sync::Arc;

use scenepref::scene::{enumerate_edits, Prompt, Vocabulary};
use scenepref::tools::{serve, HttpToolClient, NoiseProfile, ToolBackend, ToolService, VqaQuery};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::default();
    let server = serve(Arc::new(ToolService::new(&vocab, NoiseProfile::perfect(0))), "127.0.0.1:0")?;
    println!("serving on {}", server.url());
    let tools = HttpToolClient::new(&server.url());

    let prompt = Prompt::parse("two red dogs and a blue hat", &vocab)?;
    let id = tools.generate(&prompt, 1)?;
    let record = tools.image(&id)?;
    println!("generated {id}: {:?}", record.scene);

    let query = VqaQuery::CountOf { category: "dog".into(), color: None, size: None };
    println!("how many dogs? {:?}", tools.vqa(&id, &query)?);

    let edit = enumerate_edits(&record.scene, &vocab)?.remove(0);
    let edited = tools.edit(&id, &edit)?;
    println!("after `{}`: {:?}", edit.describe(&record.scene), tools.image(&edited)?.scene);
    println!("{:?}", tools.stats()?);
    server.shutdown();
    Ok(())
}
