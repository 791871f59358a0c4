use serde::{Deserialize, Serialize};

use super::vocab::plural;
use super::{EntityGroup, Relation, Scene, SceneError, Vocabulary};

/// A canonical prompt string together with the scene it denotes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub scene: Scene,
}

impl Prompt {
    pub fn from_scene(scene: &Scene, vocab: &Vocabulary) -> Result<Prompt, SceneError> {
        let scene = scene.canonicalize(vocab)?;
        let text = render_prompt(&scene, vocab)?;
        Ok(Prompt { text, scene })
    }

    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Prompt, SceneError> {
        let scene = parse_prompt(text, vocab)?;
        let canonical = render_prompt(&scene, vocab)?;
        Ok(Prompt { text: canonical, scene })
    }

    /// Checks that `text` is the canonical rendering of `scene`.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), SceneError> {
        let rendered = render_prompt(&self.scene, vocab)?;
        if rendered != self.text || !self.scene.is_canonical(vocab) {
            return Err(SceneError::Parse {
                text: self.text.clone(),
                reason: format!("text does not match its scene (canonical text is `{rendered}`)"),
            });
        }
        Ok(())
    }
}

fn noun_phrase(g: &EntityGroup, plural_form: bool) -> String {
    let mut words: Vec<String> = Vec::new();
    words.extend(g.color.clone());
    words.extend(g.size.clone());
    words.push(if plural_form { plural(&g.category) } else { g.category.clone() });
    words.join(" ")
}

/// Renders the canonical prompt text.
///
/// Grammar: `<group> (" and " <group>)* (", the " <ref> " " <predicate> " the " <ref>)*`
/// where a group is `<count-word> [color] [size] <noun>` and a reference is
/// `[color] [size] <noun>`, the noun plural when the group count exceeds one.
pub fn render_prompt(scene: &Scene, vocab: &Vocabulary) -> Result<String, SceneError> {
    let s = scene.canonicalize(vocab)?;
    let mut out = s
        .groups
        .iter()
        .map(|g| {
            let phrase = noun_phrase(g, g.count > 1);
            let count = match vocab.count_word(g.count) {
                w if w == "a" && phrase.starts_with(['a', 'e', 'i', 'o', 'u']) => "an".to_string(),
                w => w.to_string(),
            };
            format!("{count} {phrase}")
        })
        .collect::<Vec<_>>()
        .join(" and ");
    for r in &s.relations {
        let subj = &s.groups[r.subject];
        let obj = &s.groups[r.object];
        out.push_str(&format!(
            ", the {} {} the {}",
            noun_phrase(subj, subj.count > 1),
            r.predicate,
            noun_phrase(obj, obj.count > 1)
        ));
    }
    Ok(out)
}

fn parse_err(text: &str, reason: impl Into<String>) -> SceneError {
    SceneError::Parse { text: text.to_string(), reason: reason.into() }
}

/// Parses `[color] [size] noun` into (category, color, size, plural?).
fn parse_noun_phrase(
    words: &[&str],
    vocab: &Vocabulary,
) -> Option<(String, Option<String>, Option<String>, bool)> {
    let (noun, mods) = words.split_last()?;
    let (category, is_plural) = if let Some(c) = vocab.category_index(noun) {
        (vocab.categories[c].clone(), false)
    } else {
        let c = vocab.categories.iter().find(|c| plural(c) == *noun)?;
        (c.clone(), true)
    };
    let mut color = None;
    let mut size = None;
    let mut rest = mods;
    if let Some((first, tail)) = rest.split_first() {
        if vocab.color_index(first).is_some() {
            color = Some(first.to_string());
            rest = tail;
        }
    }
    if let Some((first, tail)) = rest.split_first() {
        if vocab.size_index(first).is_some() {
            size = Some(first.to_string());
            rest = tail;
        }
    }
    if !rest.is_empty() {
        return None;
    }
    Some((category, color, size, is_plural))
}

/// Parses canonical prompt text back into a canonical scene. Only the
/// grammar produced by [`render_prompt`] is accepted.
pub fn parse_prompt(text: &str, vocab: &Vocabulary) -> Result<Scene, SceneError> {
    let mut clauses = text.split(", ");
    let head = clauses.next().unwrap_or_default();
    let mut groups = Vec::new();
    for part in head.split(" and ") {
        let words: Vec<&str> = part.split(' ').collect();
        let (count_word, rest) = words.split_first().ok_or_else(|| parse_err(text, "empty group"))?;
        let count = vocab
            .parse_count_word(count_word)
            .ok_or_else(|| parse_err(text, format!("`{count_word}` is not a count word")))?;
        let (category, color, size, is_plural) = parse_noun_phrase(rest, vocab)
            .ok_or_else(|| parse_err(text, format!("cannot read group `{part}`")))?;
        if is_plural != (count > 1) {
            return Err(parse_err(text, format!("number agreement fails in `{part}`")));
        }
        groups.push(EntityGroup { category, count, color, size });
    }
    let find = |words: &[&str]| -> Option<usize> {
        let (cat, color, size, is_plural) = parse_noun_phrase(words, vocab)?;
        let idx = groups.iter().position(|g| g.category == cat && g.color == color && g.size == size)?;
        (is_plural == (groups[idx].count > 1)).then_some(idx)
    };
    let mut relations = Vec::new();
    for clause in clauses {
        let body = clause
            .strip_prefix("the ")
            .ok_or_else(|| parse_err(text, format!("relation clause `{clause}` must start with `the`")))?;
        let (left, right) = body
            .split_once(" the ")
            .ok_or_else(|| parse_err(text, format!("relation clause `{clause}` lacks an object")))?;
        let object = find(&right.split(' ').collect::<Vec<_>>())
            .ok_or_else(|| parse_err(text, format!("unknown relation object `{right}`")))?;
        let left_words: Vec<&str> = left.split(' ').collect();
        let mut parsed = None;
        for p in &vocab.predicates {
            let pw: Vec<&str> = p.split(' ').collect();
            if left_words.len() > pw.len() && left_words.ends_with(&pw) {
                if let Some(subject) = find(&left_words[..left_words.len() - pw.len()]) {
                    parsed = Some(Relation { subject, predicate: p.clone(), object });
                    break;
                }
            }
        }
        relations.push(parsed.ok_or_else(|| parse_err(text, format!("cannot read relation `{clause}`")))?);
    }
    let scene = Scene::new(groups, relations, vocab)?;
    let canonical = render_prompt(&scene, vocab)?;
    if canonical != text {
        return Err(parse_err(text, format!("not in canonical form (expected `{canonical}`)")));
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneSampler;
    use rand::SeedableRng;

    #[test]
    fn worked_example_renders() {
        let v = Vocabulary::default();
        let s = Scene::new(
            vec![EntityGroup::new("vase", 2).color("yellow"), EntityGroup::new("book", 1).color("red")],
            vec![],
            &v,
        )
        .unwrap();
        assert_eq!(render_prompt(&s, &v).unwrap(), "a red book and two yellow vases");
        let single = Scene::single(EntityGroup::new("dog", 1), &v).unwrap();
        assert_eq!(render_prompt(&single, &v).unwrap(), "a dog");
    }

    #[test]
    fn relations_are_appended_clauses() {
        let v = Vocabulary::default();
        let s = parse_prompt("a dog and a cat and a black hat, the dog with the black hat", &v).unwrap();
        assert_eq!(s.groups.len(), 3);
        assert_eq!(s.relations.len(), 1);
        assert_eq!(s.relations[0].predicate, "with");
        let s2 = parse_prompt("two small dogs and a cat, the small dogs left of the cat", &v).unwrap();
        assert_eq!(s2.relations[0].predicate, "left of");
    }

    #[test]
    fn rejects_non_canonical_text() {
        let v = Vocabulary::default();
        assert!(parse_prompt("two yellow vases and a red book", &v).is_err());
        assert!(parse_prompt("a dogs", &v).is_err());
        assert!(parse_prompt("three dragon", &v).is_err());
        assert!(parse_prompt("a small red dog", &v).is_err());
        assert!(parse_prompt("", &v).is_err());
    }

    #[test]
    fn round_trip_on_random_scenes() {
        let v = Vocabulary::default();
        let sampler = SceneSampler::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let s = sampler.sample(&mut rng, &v);
            let text = render_prompt(&s, &v).unwrap();
            assert_eq!(parse_prompt(&text, &v).unwrap(), s.canonicalize(&v).unwrap(), "{text}");
        }
    }
}
