use serde::{Deserialize, Serialize};

use super::distance::{best_matching, PreparedScene};
use super::{EntityGroup, Scene, SceneError, Vocabulary};

/// One detail on which a candidate scene departs from a reference scene.
/// Group fields carry the reference group, except for `ExtraGroup` and
/// `ExtraRelation` which describe the candidate's.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Discrepancy {
    MissingGroup { group: EntityGroup },
    ExtraGroup { group: EntityGroup },
    WrongCount { group: EntityGroup, actual: u32 },
    WrongColor { group: EntityGroup, actual: Option<String> },
    WrongSize { group: EntityGroup, actual: Option<String> },
    MissingRelation { subject: EntityGroup, predicate: String, object: EntityGroup },
    ExtraRelation { subject: EntityGroup, predicate: String, object: EntityGroup },
    WrongPredicate { subject: EntityGroup, object: EntityGroup, expected: String, actual: String },
}

/// The cheapest same-category correspondence from the groups of canonical
/// scene `a` to those of canonical scene `b`.
pub fn best_group_matching(a: &Scene, b: &Scene, vocab: &Vocabulary) -> Result<Vec<Option<usize>>, SceneError> {
    let pa = PreparedScene::new(a, vocab)?;
    let pb = PreparedScene::new(b, vocab)?;
    Ok(best_matching(&pa, &pb).1)
}

/// Per-detail differences between `reference` and `candidate`, with groups
/// paired by the cheapest same-category correspondence. Empty iff the
/// canonical forms are equal.
pub fn scene_diff(reference: &Scene, candidate: &Scene, vocab: &Vocabulary) -> Result<Vec<Discrepancy>, SceneError> {
    let pr = PreparedScene::new(reference, vocab)?;
    let pc = PreparedScene::new(candidate, vocab)?;
    let r = pr.scene(vocab);
    let c = pc.scene(vocab);
    let (_, m) = best_matching(&pr, &pc);
    let mut inv = vec![None; c.groups.len()];
    for (i, j) in m.iter().enumerate() {
        if let Some(j) = j {
            inv[*j] = Some(i);
        }
    }
    let mut out = Vec::new();
    for (i, g) in r.groups.iter().enumerate() {
        match m[i] {
            None => out.push(Discrepancy::MissingGroup { group: g.clone() }),
            Some(j) => {
                let h = &c.groups[j];
                if g.count != h.count {
                    out.push(Discrepancy::WrongCount { group: g.clone(), actual: h.count });
                }
                if g.color != h.color {
                    out.push(Discrepancy::WrongColor { group: g.clone(), actual: h.color.clone() });
                }
                if g.size != h.size {
                    out.push(Discrepancy::WrongSize { group: g.clone(), actual: h.size.clone() });
                }
            }
        }
    }
    for (j, h) in c.groups.iter().enumerate() {
        if inv[j].is_none() {
            out.push(Discrepancy::ExtraGroup { group: h.clone() });
        }
    }
    for rel in &r.relations {
        let subject = r.groups[rel.subject].clone();
        let object = r.groups[rel.object].clone();
        let found = match (m[rel.subject], m[rel.object]) {
            (Some(s), Some(o)) => c.relation_between(s, o),
            _ => None,
        };
        match found {
            None => out.push(Discrepancy::MissingRelation { subject, predicate: rel.predicate.clone(), object }),
            Some(cr) if cr.predicate != rel.predicate => out.push(Discrepancy::WrongPredicate {
                subject,
                object,
                expected: rel.predicate.clone(),
                actual: cr.predicate.clone(),
            }),
            Some(_) => {}
        }
    }
    for rel in &c.relations {
        let counterpart = match (inv[rel.subject], inv[rel.object]) {
            (Some(s), Some(o)) => r.relation_between(s, o),
            _ => None,
        };
        if counterpart.is_none() {
            out.push(Discrepancy::ExtraRelation {
                subject: c.groups[rel.subject].clone(),
                predicate: rel.predicate.clone(),
                object: c.groups[rel.object].clone(),
            });
        }
    }
    Ok(out)
}

/// Whether `image` depicts everything `prompt` asks for: every prompt group
/// maps to a distinct image group of the same category and count whose
/// attributes agree wherever the prompt specifies one, and every prompt
/// relation holds between the mapped groups. Extra content is allowed.
pub fn satisfies(prompt: &Scene, image: &Scene) -> bool {
    let mut map = vec![usize::MAX; prompt.groups.len()];
    let mut used = vec![false; image.groups.len()];
    assign(prompt, image, 0, &mut map, &mut used)
}

fn compatible(p: &EntityGroup, g: &EntityGroup) -> bool {
    p.category == g.category
        && p.count == g.count
        && (p.color.is_none() || p.color == g.color)
        && (p.size.is_none() || p.size == g.size)
}

fn assign(prompt: &Scene, image: &Scene, i: usize, map: &mut [usize], used: &mut [bool]) -> bool {
    if i == prompt.groups.len() {
        return prompt.relations.iter().all(|r| {
            image
                .relation_between(map[r.subject], map[r.object])
                .is_some_and(|ir| ir.predicate == r.predicate)
        });
    }
    for j in 0..image.groups.len() {
        if !used[j] && compatible(&prompt.groups[i], &image.groups[j]) {
            used[j] = true;
            map[i] = j;
            if assign(prompt, image, i + 1, map, used) {
                return true;
            }
            used[j] = false;
        }
    }
    false
}
