use serde::{Deserialize, Serialize};

use super::model::{Dims, PGroup, Packed};
use super::{Scene, SceneError, Vocabulary};

/// One minimal compositional modification.
///
/// Group indices refer to the canonical order of the scene the edit is
/// applied to. `AddGroup` always adds a single entity; `RemoveGroup` only
/// applies to a single entity without relations, so every edit has a
/// one-step inverse.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum AtomicEdit {
    SetColor { group: usize, color: Option<String> },
    SetSize { group: usize, size: Option<String> },
    IncrementCount { group: usize },
    DecrementCount { group: usize },
    AddGroup { category: String, color: Option<String>, size: Option<String> },
    RemoveGroup { group: usize },
    SetPredicate { subject: usize, object: usize, predicate: String },
    AddRelation { subject: usize, predicate: String, object: usize },
    RemoveRelation { subject: usize, object: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum PEdit {
    SetColor { g: u8, color: u8 },
    SetSize { g: u8, size: u8 },
    Inc { g: u8 },
    Dec { g: u8 },
    Add { cat: u8, color: u8, size: u8 },
    Remove { g: u8 },
    SetPred { s: u8, o: u8, p: u8 },
    AddRel { s: u8, o: u8, p: u8 },
    RemoveRel { s: u8, o: u8 },
}

impl AtomicEdit {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AtomicEdit::SetColor { .. } => "SetColor",
            AtomicEdit::SetSize { .. } => "SetSize",
            AtomicEdit::IncrementCount { .. } => "IncrementCount",
            AtomicEdit::DecrementCount { .. } => "DecrementCount",
            AtomicEdit::AddGroup { .. } => "AddGroup",
            AtomicEdit::RemoveGroup { .. } => "RemoveGroup",
            AtomicEdit::SetPredicate { .. } => "SetPredicate",
            AtomicEdit::AddRelation { .. } => "AddRelation",
            AtomicEdit::RemoveRelation { .. } => "RemoveRelation",
        }
    }

    /// Groups of the source scene this edit reads or writes.
    pub fn touched_groups(&self) -> Vec<usize> {
        match self {
            AtomicEdit::SetColor { group, .. }
            | AtomicEdit::SetSize { group, .. }
            | AtomicEdit::IncrementCount { group }
            | AtomicEdit::DecrementCount { group }
            | AtomicEdit::RemoveGroup { group } => vec![*group],
            AtomicEdit::AddGroup { .. } => vec![],
            AtomicEdit::SetPredicate { subject, object, .. }
            | AtomicEdit::AddRelation { subject, object, .. }
            | AtomicEdit::RemoveRelation { subject, object } => vec![*subject, *object],
        }
    }

    /// Short imperative description against the scene it applies to,
    /// e.g. "remove the red book".
    pub fn describe(&self, scene: &Scene) -> String {
        let name = |g: usize| match scene.groups.get(g) {
            Some(grp) => {
                let mut s = String::from("the");
                for w in [grp.color.as_deref(), grp.size.as_deref()].into_iter().flatten() {
                    s.push(' ');
                    s.push_str(w);
                }
                s.push(' ');
                s.push_str(&grp.category);
                s
            }
            None => format!("group #{g}"),
        };
        let val = |v: &Option<String>| v.clone().unwrap_or_else(|| "unspecified".into());
        match self {
            AtomicEdit::SetColor { group, color } => {
                format!("change the color of {} to {}", name(*group), val(color))
            }
            AtomicEdit::SetSize { group, size } => {
                format!("change the size of {} to {}", name(*group), val(size))
            }
            AtomicEdit::IncrementCount { group } => format!("add one more of {}", name(*group)),
            AtomicEdit::DecrementCount { group } => format!("remove one of {}", name(*group)),
            AtomicEdit::AddGroup { category, color, size } => {
                let mut s = String::from("add a");
                for w in [color.as_deref(), size.as_deref(), Some(category.as_str())].into_iter().flatten() {
                    s.push(' ');
                    s.push_str(w);
                }
                s
            }
            AtomicEdit::RemoveGroup { group } => format!("remove {}", name(*group)),
            AtomicEdit::SetPredicate { subject, object, predicate } => {
                format!("place {} {} {}", name(*subject), predicate, name(*object))
            }
            AtomicEdit::AddRelation { subject, predicate, object } => {
                format!("place {} {} {}", name(*subject), predicate, name(*object))
            }
            AtomicEdit::RemoveRelation { subject, object } => {
                format!("separate {} from {}", name(*subject), name(*object))
            }
        }
    }

    pub(crate) fn pack(&self, vocab: &Vocabulary) -> Result<PEdit, SceneError> {
        let idx = |i: usize| u8::try_from(i).map_err(|_| SceneError::GroupIndex { index: i, len: 0 });
        let opt = |kind: &'static str, list: &[String], v: &Option<String>| -> Result<u8, SceneError> {
            match v {
                None => Ok(0),
                Some(w) => list
                    .iter()
                    .position(|x| x == w)
                    .map(|i| i as u8 + 1)
                    .ok_or_else(|| SceneError::UnknownWord { kind, word: w.clone() }),
            }
        };
        let pred = |p: &str| {
            vocab
                .predicate_index(p)
                .map(|i| i as u8)
                .ok_or_else(|| SceneError::UnknownWord { kind: "predicate", word: p.to_string() })
        };
        Ok(match self {
            AtomicEdit::SetColor { group, color } => {
                PEdit::SetColor { g: idx(*group)?, color: opt("color", &vocab.colors, color)? }
            }
            AtomicEdit::SetSize { group, size } => {
                PEdit::SetSize { g: idx(*group)?, size: opt("size", &vocab.sizes, size)? }
            }
            AtomicEdit::IncrementCount { group } => PEdit::Inc { g: idx(*group)? },
            AtomicEdit::DecrementCount { group } => PEdit::Dec { g: idx(*group)? },
            AtomicEdit::AddGroup { category, color, size } => PEdit::Add {
                cat: vocab.category_index(category).map(|i| i as u8).ok_or_else(|| {
                    SceneError::UnknownWord { kind: "category", word: category.clone() }
                })?,
                color: opt("color", &vocab.colors, color)?,
                size: opt("size", &vocab.sizes, size)?,
            },
            AtomicEdit::RemoveGroup { group } => PEdit::Remove { g: idx(*group)? },
            AtomicEdit::SetPredicate { subject, object, predicate } => {
                PEdit::SetPred { s: idx(*subject)?, o: idx(*object)?, p: pred(predicate)? }
            }
            AtomicEdit::AddRelation { subject, predicate, object } => {
                PEdit::AddRel { s: idx(*subject)?, o: idx(*object)?, p: pred(predicate)? }
            }
            AtomicEdit::RemoveRelation { subject, object } => {
                PEdit::RemoveRel { s: idx(*subject)?, o: idx(*object)? }
            }
        })
    }
}

impl PEdit {
    pub fn unpack(&self, vocab: &Vocabulary) -> AtomicEdit {
        let opt = |list: &[String], v: u8| (v > 0).then(|| list[v as usize - 1].clone());
        match *self {
            PEdit::SetColor { g, color } => {
                AtomicEdit::SetColor { group: g as usize, color: opt(&vocab.colors, color) }
            }
            PEdit::SetSize { g, size } => {
                AtomicEdit::SetSize { group: g as usize, size: opt(&vocab.sizes, size) }
            }
            PEdit::Inc { g } => AtomicEdit::IncrementCount { group: g as usize },
            PEdit::Dec { g } => AtomicEdit::DecrementCount { group: g as usize },
            PEdit::Add { cat, color, size } => AtomicEdit::AddGroup {
                category: vocab.categories[cat as usize].clone(),
                color: opt(&vocab.colors, color),
                size: opt(&vocab.sizes, size),
            },
            PEdit::Remove { g } => AtomicEdit::RemoveGroup { group: g as usize },
            PEdit::SetPred { s, o, p } => AtomicEdit::SetPredicate {
                subject: s as usize,
                object: o as usize,
                predicate: vocab.predicates[p as usize].clone(),
            },
            PEdit::AddRel { s, o, p } => AtomicEdit::AddRelation {
                subject: s as usize,
                predicate: vocab.predicates[p as usize].clone(),
                object: o as usize,
            },
            PEdit::RemoveRel { s, o } => AtomicEdit::RemoveRelation { subject: s as usize, object: o as usize },
        }
    }
}

/// Applies an edit to a canonical packed scene. Returns the canonical result
/// and, for each source group, its index in the result (`None` if removed).
pub(crate) fn apply_packed(
    p: &Packed,
    e: &PEdit,
    dims: Dims,
) -> Result<(Packed, Vec<Option<u8>>), SceneError> {
    let n = p.groups.len();
    let check = |g: u8| {
        if (g as usize) < n {
            Ok(g as usize)
        } else {
            Err(SceneError::GroupIndex { index: g as usize, len: n })
        }
    };
    let unknown = |kind: &'static str, v: u8| SceneError::UnknownWord { kind, word: format!("#{v}") };
    let mut groups = p.groups.clone();
    let mut rels = p.rels.clone();
    let mut removed = None;
    match *e {
        PEdit::SetColor { g, color } => {
            let g = check(g)?;
            if color > dims.colors {
                return Err(unknown("color", color));
            }
            groups[g].color = color;
        }
        PEdit::SetSize { g, size } => {
            let g = check(g)?;
            if size > dims.sizes {
                return Err(unknown("size", size));
            }
            groups[g].size = size;
        }
        PEdit::Inc { g } => {
            let g = check(g)?;
            if groups[g].count >= dims.max_count {
                return Err(SceneError::CountRange {
                    count: groups[g].count as u32 + 1,
                    max: dims.max_count as u32,
                });
            }
            groups[g].count += 1;
        }
        PEdit::Dec { g } => {
            let g = check(g)?;
            if groups[g].count <= 1 {
                return Err(SceneError::CountRange { count: 0, max: dims.max_count as u32 });
            }
            groups[g].count -= 1;
        }
        PEdit::Add { cat, color, size } => {
            if cat >= dims.categories {
                return Err(unknown("category", cat));
            }
            if color > dims.colors {
                return Err(unknown("color", color));
            }
            if size > dims.sizes {
                return Err(unknown("size", size));
            }
            if n >= dims.max_groups {
                return Err(SceneError::GroupCount { len: n + 1, max: dims.max_groups });
            }
            groups.push(PGroup { cat, color, size, count: 1 });
        }
        PEdit::Remove { g } => {
            let gi = check(g)?;
            if n == 1 {
                return Err(SceneError::LastGroup);
            }
            if groups[gi].count != 1 {
                return Err(SceneError::NotSingular { group: gi, count: groups[gi].count as u32 });
            }
            if p.has_relations(g) {
                return Err(SceneError::GroupHasRelations { group: gi });
            }
            groups.remove(gi);
            for r in rels.iter_mut() {
                if r.0 > g {
                    r.0 -= 1;
                }
                if r.1 > g {
                    r.1 -= 1;
                }
            }
            removed = Some(g);
        }
        PEdit::SetPred { s, o, p: pred } => {
            check(s)?;
            check(o)?;
            if pred >= dims.predicates {
                return Err(unknown("predicate", pred));
            }
            let r = rels
                .iter_mut()
                .find(|r| r.0 == s && r.1 == o)
                .ok_or(SceneError::MissingRelation { subject: s as usize, object: o as usize })?;
            r.2 = pred;
        }
        PEdit::AddRel { s, o, p: pred } => {
            check(s)?;
            check(o)?;
            if s == o {
                return Err(SceneError::SelfRelation { group: s as usize });
            }
            if pred >= dims.predicates {
                return Err(unknown("predicate", pred));
            }
            if p.rel(s, o).is_some() {
                return Err(SceneError::DuplicateRelation { subject: s as usize, object: o as usize });
            }
            rels.push((s, o, pred));
        }
        PEdit::RemoveRel { s, o } => {
            check(s)?;
            check(o)?;
            let before = rels.len();
            rels.retain(|r| !(r.0 == s && r.1 == o));
            if rels.len() == before {
                return Err(SceneError::MissingRelation { subject: s as usize, object: o as usize });
            }
        }
    }
    let (packed, position) = Packed::build_mapped(groups, rels, dims)?;
    let mapping = (0..n as u8)
        .map(|old| match removed {
            Some(r) if old == r => None,
            Some(r) if old > r => Some(position[old as usize - 1]),
            _ => Some(position[old as usize]),
        })
        .collect();
    Ok((packed, mapping))
}

/// All valid edits that change the scene, in a fixed order.
pub(crate) fn moves(p: &Packed, dims: Dims) -> Vec<PEdit> {
    let n = p.groups.len();
    let occupied = |key: (u8, u8, u8)| p.groups.iter().any(|g| g.key() == key);
    let mut out = Vec::new();
    for (gi, g) in p.groups.iter().enumerate() {
        let gi = gi as u8;
        for color in 0..=dims.colors {
            if color != g.color && !occupied((g.cat, color, g.size)) {
                out.push(PEdit::SetColor { g: gi, color });
            }
        }
        for size in 0..=dims.sizes {
            if size != g.size && !occupied((g.cat, g.color, size)) {
                out.push(PEdit::SetSize { g: gi, size });
            }
        }
        if g.count < dims.max_count {
            out.push(PEdit::Inc { g: gi });
        }
        if g.count > 1 {
            out.push(PEdit::Dec { g: gi });
        }
        if n > 1 && g.count == 1 && !p.has_relations(gi) {
            out.push(PEdit::Remove { g: gi });
        }
    }
    if n < dims.max_groups {
        for cat in 0..dims.categories {
            for color in 0..=dims.colors {
                for size in 0..=dims.sizes {
                    if !occupied((cat, color, size)) {
                        out.push(PEdit::Add { cat, color, size });
                    }
                }
            }
        }
    }
    for s in 0..n as u8 {
        for o in 0..n as u8 {
            if s == o {
                continue;
            }
            match p.rel(s, o) {
                Some(cur) => {
                    for pred in 0..dims.predicates {
                        if pred != cur {
                            out.push(PEdit::SetPred { s, o, p: pred });
                        }
                    }
                    out.push(PEdit::RemoveRel { s, o });
                }
                None => {
                    for pred in 0..dims.predicates {
                        out.push(PEdit::AddRel { s, o, p: pred });
                    }
                }
            }
        }
    }
    out
}

/// Applies `edit` to the canonical form of `scene`.
pub fn apply_edit(scene: &Scene, edit: &AtomicEdit, vocab: &Vocabulary) -> Result<Scene, SceneError> {
    let packed = Packed::from_scene(scene, vocab)?;
    let e = edit.pack(vocab)?;
    let (out, _) = apply_packed(&packed, &e, Dims::of(vocab))?;
    Ok(out.to_scene(vocab))
}

/// Every valid edit that changes the (canonicalized) scene, without
/// duplicates.
pub fn enumerate_edits(scene: &Scene, vocab: &Vocabulary) -> Result<Vec<AtomicEdit>, SceneError> {
    let packed = Packed::from_scene(scene, vocab)?;
    Ok(moves(&packed, Dims::of(vocab)).iter().map(|e| e.unpack(vocab)).collect())
}

/// The edit that undoes `edit`, expressed in the indices of the edited scene.
pub fn inverse_edit(scene: &Scene, edit: &AtomicEdit, vocab: &Vocabulary) -> Result<AtomicEdit, SceneError> {
    let before = Packed::from_scene(scene, vocab)?;
    let e = edit.pack(vocab)?;
    let (after, map) = apply_packed(&before, &e, Dims::of(vocab))?;
    let at = |g: u8| map[g as usize].expect("surviving group");
    let inv = match e {
        PEdit::SetColor { g, .. } => PEdit::SetColor { g: at(g), color: before.groups[g as usize].color },
        PEdit::SetSize { g, .. } => PEdit::SetSize { g: at(g), size: before.groups[g as usize].size },
        PEdit::Inc { g } => PEdit::Dec { g: at(g) },
        PEdit::Dec { g } => PEdit::Inc { g: at(g) },
        PEdit::Add { cat, color, size } => PEdit::Remove {
            g: after.find_key((cat, color, size)).expect("added group present"),
        },
        PEdit::Remove { g } => {
            let old = before.groups[g as usize];
            PEdit::Add { cat: old.cat, color: old.color, size: old.size }
        }
        PEdit::SetPred { s, o, .. } => PEdit::SetPred {
            s: at(s),
            o: at(o),
            p: before.rel(s, o).expect("relation existed"),
        },
        PEdit::AddRel { s, o, .. } => PEdit::RemoveRel { s: at(s), o: at(o) },
        PEdit::RemoveRel { s, o } => PEdit::AddRel {
            s: at(s),
            o: at(o),
            p: before.rel(s, o).expect("relation existed"),
        },
    };
    Ok(inv.unpack(vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{parse_prompt, EntityGroup};

    fn v() -> Vocabulary {
        Vocabulary::default()
    }

    #[test]
    fn remove_book_from_worked_example() {
        let v = v();
        let s = parse_prompt("a red book and two yellow vases", &v).unwrap();
        let out = apply_edit(&s, &AtomicEdit::RemoveGroup { group: 0 }, &v).unwrap();
        assert_eq!(crate::scene::render_prompt(&out, &v).unwrap(), "two yellow vases");
    }

    #[test]
    fn idempotent_recolor_is_accepted() {
        let v = v();
        let s = parse_prompt("a red book and two yellow vases", &v).unwrap();
        let e = AtomicEdit::SetColor { group: 1, color: Some("yellow".into()) };
        assert_eq!(apply_edit(&s, &e, &v).unwrap(), s);
    }

    #[test]
    fn decrement_below_one_is_rejected() {
        let v = v();
        let s = Scene::single(EntityGroup::new("dog", 1), &v).unwrap();
        let err = apply_edit(&s, &AtomicEdit::DecrementCount { group: 0 }, &v).unwrap_err();
        assert!(matches!(err, SceneError::CountRange { count: 0, .. }));
    }

    #[test]
    fn typed_errors() {
        let v = v();
        let s = parse_prompt("a dog and a black hat, the dog with the black hat", &v).unwrap();
        let err = |e: AtomicEdit| apply_edit(&s, &e, &v).unwrap_err();
        assert!(matches!(err(AtomicEdit::RemoveGroup { group: 7 }), SceneError::GroupIndex { .. }));
        assert!(matches!(err(AtomicEdit::RemoveGroup { group: 0 }), SceneError::GroupHasRelations { .. }));
        assert!(matches!(
            err(AtomicEdit::AddRelation { subject: 0, predicate: "above".into(), object: 1 }),
            SceneError::DuplicateRelation { .. }
        ));
        let single = Scene::single(EntityGroup::new("dog", 1), &v).unwrap();
        assert!(matches!(
            apply_edit(&single, &AtomicEdit::RemoveGroup { group: 0 }, &v).unwrap_err(),
            SceneError::LastGroup
        ));
        let nine = Scene::single(EntityGroup::new("dog", 9), &v).unwrap();
        assert!(matches!(
            apply_edit(&nine, &AtomicEdit::IncrementCount { group: 0 }, &v).unwrap_err(),
            SceneError::CountRange { count: 10, .. }
        ));
    }

    #[test]
    fn single_bare_group_has_seven_color_edits() {
        let v = v();
        let s = Scene::single(EntityGroup::new("dog", 1), &v).unwrap();
        let edits = enumerate_edits(&s, &v).unwrap();
        let colors = edits.iter().filter(|e| matches!(e, AtomicEdit::SetColor { group: 0, .. })).count();
        assert_eq!(colors, 7);
    }

    #[test]
    fn serde_uses_kind_tag() {
        let e = AtomicEdit::RemoveGroup { group: 0 };
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(json, r#"{"kind":"RemoveGroup","group":0}"#);
        let back: AtomicEdit = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
    }
}
