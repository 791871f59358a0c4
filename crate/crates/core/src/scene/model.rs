use std::fmt;

use serde::{Deserialize, Serialize};

use super::{SceneError, Vocabulary};

/// One group of identical entities, e.g. "two yellow vases".
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityGroup {
    pub category: String,
    pub count: u32,
    pub color: Option<String>,
    pub size: Option<String>,
}

impl EntityGroup {
    pub fn new(category: &str, count: u32) -> Self {
        EntityGroup { category: category.to_string(), count, color: None, size: None }
    }

    pub fn color(mut self, color: &str) -> Self {
        self.color = Some(color.to_string());
        self
    }

    pub fn size(mut self, size: &str) -> Self {
        self.size = Some(size.to_string());
        self
    }
}

/// Directed spatial relation between two groups, by canonical index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub subject: usize,
    pub predicate: String,
    pub object: usize,
}

impl Relation {
    pub fn new(subject: usize, predicate: &str, object: usize) -> Self {
        Relation { subject, predicate: predicate.to_string(), object }
    }
}

/// Symbolic image or prompt content.
///
/// Groups are identified by their (category, color, size) key, which must be
/// unique within a scene. At most one relation exists per ordered pair of
/// groups. The canonical form orders groups by key in vocabulary order and
/// relations by (subject, object).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scene {
    pub groups: Vec<EntityGroup>,
    pub relations: Vec<Relation>,
}

impl Scene {
    /// Builds, validates and canonicalizes. Relation indices refer to the
    /// order of `groups` as given.
    pub fn new(
        groups: Vec<EntityGroup>,
        relations: Vec<Relation>,
        vocab: &Vocabulary,
    ) -> Result<Scene, SceneError> {
        Scene { groups, relations }.canonicalize(vocab)
    }

    pub fn single(group: EntityGroup, vocab: &Vocabulary) -> Result<Scene, SceneError> {
        Scene::new(vec![group], vec![], vocab)
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), SceneError> {
        Packed::from_scene(self, vocab).map(|_| ())
    }

    pub fn canonicalize(&self, vocab: &Vocabulary) -> Result<Scene, SceneError> {
        Ok(Packed::from_scene(self, vocab)?.to_scene(vocab))
    }

    pub fn is_canonical(&self, vocab: &Vocabulary) -> bool {
        matches!(self.canonicalize(vocab), Ok(c) if &c == self)
    }

    /// Number of verifiable details: one count per group, one per specified
    /// attribute, one per relation.
    pub fn detail_count(&self) -> usize {
        self.groups
            .iter()
            .map(|g| 1 + g.color.is_some() as usize + g.size.is_some() as usize)
            .sum::<usize>()
            + self.relations.len()
    }

    pub fn relation_between(&self, subject: usize, object: usize) -> Option<&Relation> {
        self.relations.iter().find(|r| r.subject == subject && r.object == object)
    }

    pub fn group_index(&self, category: &str, color: Option<&str>, size: Option<&str>) -> Option<usize> {
        self.groups.iter().position(|g| {
            g.category == category && g.color.as_deref() == color && g.size.as_deref() == size
        })
    }
}

impl fmt::Display for EntityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x", self.count)?;
        if let Some(c) = &self.color {
            write!(f, " {c}")?;
        }
        if let Some(s) = &self.size {
            write!(f, " {s}")?;
        }
        write!(f, " {}", self.category)
    }
}

/// Compact index form used by the edit machinery and the distance search.
/// Attribute value 0 means "unspecified"; `i + 1` is vocabulary entry `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct PGroup {
    pub cat: u8,
    pub color: u8,
    pub size: u8,
    pub count: u8,
}

impl PGroup {
    pub fn key(&self) -> (u8, u8, u8) {
        (self.cat, self.color, self.size)
    }
}

/// Relations are stored as (subject, object, predicate), sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Packed {
    pub groups: Vec<PGroup>,
    pub rels: Vec<(u8, u8, u8)>,
}

/// Vocabulary sizes needed by the packed machinery.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims {
    pub categories: u8,
    pub colors: u8,
    pub sizes: u8,
    pub predicates: u8,
    pub max_groups: usize,
    pub max_count: u8,
}

impl Dims {
    pub fn of(vocab: &Vocabulary) -> Dims {
        Dims {
            categories: vocab.categories.len() as u8,
            colors: vocab.colors.len() as u8,
            sizes: vocab.sizes.len() as u8,
            predicates: vocab.predicates.len() as u8,
            max_groups: vocab.max_groups,
            max_count: vocab.max_count as u8,
        }
    }
}

fn lookup(kind: &'static str, list: &[String], word: &str) -> Result<u8, SceneError> {
    list.iter()
        .position(|w| w == word)
        .map(|i| i as u8)
        .ok_or_else(|| SceneError::UnknownWord { kind, word: word.to_string() })
}

fn lookup_opt(kind: &'static str, list: &[String], word: Option<&String>) -> Result<u8, SceneError> {
    match word {
        None => Ok(0),
        Some(w) => lookup(kind, list, w).map(|i| i + 1),
    }
}

impl Packed {
    pub fn from_scene(scene: &Scene, vocab: &Vocabulary) -> Result<Packed, SceneError> {
        let max_count = vocab.max_count;
        let mut groups = Vec::with_capacity(scene.groups.len());
        for g in &scene.groups {
            if g.count < 1 || g.count > max_count {
                return Err(SceneError::CountRange { count: g.count, max: max_count });
            }
            groups.push(PGroup {
                cat: lookup("category", &vocab.categories, &g.category)?,
                color: lookup_opt("color", &vocab.colors, g.color.as_ref())?,
                size: lookup_opt("size", &vocab.sizes, g.size.as_ref())?,
                count: g.count as u8,
            });
        }
        let mut rels = Vec::with_capacity(scene.relations.len());
        for r in &scene.relations {
            for idx in [r.subject, r.object] {
                if idx >= groups.len() {
                    return Err(SceneError::GroupIndex { index: idx, len: groups.len() });
                }
            }
            let p = lookup("predicate", &vocab.predicates, &r.predicate)?;
            rels.push((r.subject as u8, r.object as u8, p));
        }
        Packed::build(groups, rels, Dims::of(vocab))
    }

    /// Validates and canonicalizes raw groups and relations (relation indices
    /// into `groups` as given).
    pub fn build(groups: Vec<PGroup>, rels: Vec<(u8, u8, u8)>, dims: Dims) -> Result<Packed, SceneError> {
        Ok(Self::build_mapped(groups, rels, dims)?.0)
    }

    /// Like `build`, also returning where each input group ended up.
    pub fn build_mapped(
        groups: Vec<PGroup>,
        rels: Vec<(u8, u8, u8)>,
        dims: Dims,
    ) -> Result<(Packed, Vec<u8>), SceneError> {
        if groups.is_empty() || groups.len() > dims.max_groups {
            return Err(SceneError::GroupCount { len: groups.len(), max: dims.max_groups });
        }
        for g in &groups {
            if g.count < 1 || g.count > dims.max_count {
                return Err(SceneError::CountRange { count: g.count as u32, max: dims.max_count as u32 });
            }
        }
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by_key(|&i| groups[i].key());
        for w in order.windows(2) {
            if groups[w[0]].key() == groups[w[1]].key() {
                return Err(SceneError::DuplicateGroup { group: w[1] });
            }
        }
        let mut position = vec![0u8; groups.len()];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new as u8;
        }
        let sorted: Vec<PGroup> = order.iter().map(|&i| groups[i]).collect();
        let mut out_rels = Vec::with_capacity(rels.len());
        for &(s, o, p) in &rels {
            if s as usize >= groups.len() || o as usize >= groups.len() {
                return Err(SceneError::GroupIndex { index: s.max(o) as usize, len: groups.len() });
            }
            if s == o {
                return Err(SceneError::SelfRelation { group: s as usize });
            }
            if p >= dims.predicates {
                return Err(SceneError::UnknownWord { kind: "predicate", word: format!("#{p}") });
            }
            out_rels.push((position[s as usize], position[o as usize], p));
        }
        out_rels.sort_unstable();
        for w in out_rels.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(SceneError::DuplicateRelation {
                    subject: w[0].0 as usize,
                    object: w[0].1 as usize,
                });
            }
        }
        Ok((Packed { groups: sorted, rels: out_rels }, position))
    }

    pub fn to_scene(&self, vocab: &Vocabulary) -> Scene {
        let opt = |list: &[String], v: u8| (v > 0).then(|| list[v as usize - 1].clone());
        Scene {
            groups: self
                .groups
                .iter()
                .map(|g| EntityGroup {
                    category: vocab.categories[g.cat as usize].clone(),
                    count: g.count as u32,
                    color: opt(&vocab.colors, g.color),
                    size: opt(&vocab.sizes, g.size),
                })
                .collect(),
            relations: self
                .rels
                .iter()
                .map(|&(s, o, p)| Relation {
                    subject: s as usize,
                    predicate: vocab.predicates[p as usize].clone(),
                    object: o as usize,
                })
                .collect(),
        }
    }

    pub fn rel(&self, s: u8, o: u8) -> Option<u8> {
        self.rels.iter().find(|r| r.0 == s && r.1 == o).map(|r| r.2)
    }

    pub fn has_relations(&self, g: u8) -> bool {
        self.rels.iter().any(|r| r.0 == g || r.1 == g)
    }

    pub fn find_key(&self, key: (u8, u8, u8)) -> Option<u8> {
        self.groups.iter().position(|g| g.key() == key).map(|i| i as u8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::default()
    }

    #[test]
    fn canonical_order_follows_vocabulary() {
        let v = vocab();
        let s = Scene::new(
            vec![EntityGroup::new("vase", 2).color("yellow"), EntityGroup::new("book", 1).color("red")],
            vec![Relation::new(0, "left of", 1)],
            &v,
        )
        .unwrap();
        assert_eq!(s.groups[0].category, "book");
        assert_eq!(s.relations, vec![Relation::new(1, "left of", 0)]);
        assert!(s.is_canonical(&v));
        assert_eq!(s.canonicalize(&v).unwrap(), s);
    }

    #[test]
    fn rejects_invalid_scenes() {
        let v = vocab();
        let dog = EntityGroup::new("dog", 1);
        assert!(matches!(Scene::new(vec![], vec![], &v), Err(SceneError::GroupCount { .. })));
        assert!(matches!(
            Scene::new(vec![dog.clone(), dog.clone()], vec![], &v),
            Err(SceneError::DuplicateGroup { .. })
        ));
        assert!(matches!(
            Scene::new(vec![EntityGroup::new("dog", 10)], vec![], &v),
            Err(SceneError::CountRange { .. })
        ));
        assert!(matches!(
            Scene::new(vec![EntityGroup::new("dragon", 1)], vec![], &v),
            Err(SceneError::UnknownWord { .. })
        ));
        let cat = EntityGroup::new("cat", 1);
        assert!(matches!(
            Scene::new(vec![dog.clone(), cat.clone()], vec![Relation::new(0, "with", 0)], &v),
            Err(SceneError::SelfRelation { .. })
        ));
        assert!(matches!(
            Scene::new(
                vec![dog, cat],
                vec![Relation::new(0, "left of", 1), Relation::new(0, "right of", 1)],
                &v
            ),
            Err(SceneError::DuplicateRelation { .. })
        ));
    }

    #[test]
    fn detail_count_counts_attributes_and_relations() {
        let v = vocab();
        let s = Scene::new(
            vec![EntityGroup::new("dog", 1), EntityGroup::new("hat", 1).color("black")],
            vec![Relation::new(0, "with", 1)],
            &v,
        )
        .unwrap();
        assert_eq!(s.detail_count(), 4);
    }

    #[test]
    fn json_field_names_are_fixed() {
        let v = vocab();
        let s = Scene::new(
            vec![EntityGroup::new("dog", 1), EntityGroup::new("cat", 2).size("small")],
            vec![Relation::new(0, "with", 1)],
            &v,
        )
        .unwrap();
        let json = serde_json::to_value(&s).unwrap();
        let g = &json["groups"][1];
        for field in ["category", "count", "color", "size"] {
            assert!(g.get(field).is_some(), "missing {field}");
        }
        let r = &json["relations"][0];
        for field in ["subject", "predicate", "object"] {
            assert!(r.get(field).is_some(), "missing {field}");
        }
    }
}
