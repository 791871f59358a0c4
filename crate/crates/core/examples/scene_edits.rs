//! Edit distance between two scenes and a shortest edit plan.

use scenepref::scene::{apply_edit, edit_distance, plan_edits, Prompt, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::default();
    let a = Prompt::parse("a red book and two yellow vases", &vocab)?;
    let b = Prompt::parse("two purple vases", &vocab)?;
    let d = edit_distance(&a.scene, &b.scene, &vocab)?;
    println!("{:?} -> {:?}: distance {} (exact: {})", a.text, b.text, d.distance, d.exact);

    let plan = plan_edits(&a.scene, &b.scene, &vocab)?.ok_or("no plan within the search bound")?;
    let mut scene = a.scene.clone();
    for e in &plan {
        println!("  {}", e.describe(&scene));
        scene = apply_edit(&scene, e, &vocab)?;
    }
    assert_eq!(scene, b.scene);
    Ok(())
}
