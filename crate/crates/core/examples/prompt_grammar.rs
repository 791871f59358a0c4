//! Parsing and rendering prompts. Only the canonical rendering of a scene
//! parses; the error for any other phrasing names the canonical text.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenepref::scene::{Prompt, SceneSampler, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::default();
    for text in ["two yellow vases and a red book", "a small dog on a table", "three purple cats"] {
        match Prompt::parse(text, &vocab) {
            Ok(p) => println!("{text:?}\n  canonical: {:?}\n  details:   {}", p.text, p.scene.detail_count()),
            Err(e) => println!("{text:?}\n  rejected:  {e}"),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    println!("sampled:");
    for _ in 0..5 {
        let s = SceneSampler::default().sample(&mut rng, &vocab);
        println!("  {}", Prompt::from_scene(&s, &vocab)?.text);
    }
    Ok(())
}
