use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scene::{Scene, Vocabulary};

use super::ToolError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Color,
    Size,
}

/// Identifies one group by its exact key; `None` means the attribute is
/// unspecified on that group.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupRef {
    pub category: String,
    #[serde(default)]
    pub color: Option<String>,
    #[serde(default)]
    pub size: Option<String>,
}

impl GroupRef {
    pub fn of(g: &crate::scene::EntityGroup) -> GroupRef {
        GroupRef { category: g.category.clone(), color: g.color.clone(), size: g.size.clone() }
    }
}

/// Structured question about an image.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "query")]
pub enum VqaQuery {
    /// Is any entity of this category present?
    GroupPresent { category: String },
    /// Total number of entities of the category; a `None` filter matches
    /// any value of that attribute.
    CountOf {
        category: String,
        #[serde(default)]
        color: Option<String>,
        #[serde(default)]
        size: Option<String>,
    },
    /// The attribute value of every group of the category, in canonical
    /// group order, with each group's count.
    AttributeOf { category: String, attribute: AttributeKind },
    /// Does the relation hold between the two groups?
    RelationHolds { subject: GroupRef, predicate: String, object: GroupRef },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeValue {
    pub value: Option<String>,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VqaAnswer {
    Bool { value: bool },
    Count { value: u32 },
    Attributes { values: Vec<AttributeValue> },
}

impl VqaQuery {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), ToolError> {
        let cat = |c: &str| {
            vocab
                .category_index(c)
                .map(|_| ())
                .ok_or_else(|| ToolError::Validation(format!("unknown category `{c}`")))
        };
        let color = |c: &Option<String>| match c {
            Some(c) if vocab.color_index(c).is_none() => Err(ToolError::Validation(format!("unknown color `{c}`"))),
            _ => Ok(()),
        };
        let size = |s: &Option<String>| match s {
            Some(s) if vocab.size_index(s).is_none() => Err(ToolError::Validation(format!("unknown size `{s}`"))),
            _ => Ok(()),
        };
        match self {
            VqaQuery::GroupPresent { category } | VqaQuery::AttributeOf { category, .. } => cat(category),
            VqaQuery::CountOf { category, color: c, size: s } => {
                cat(category)?;
                color(c)?;
                size(s)
            }
            VqaQuery::RelationHolds { subject, predicate, object } => {
                for g in [subject, object] {
                    cat(&g.category)?;
                    color(&g.color)?;
                    size(&g.size)?;
                }
                vocab
                    .predicate_index(predicate)
                    .map(|_| ())
                    .ok_or_else(|| ToolError::Validation(format!("unknown predicate `{predicate}`")))
            }
        }
    }
}

fn find(scene: &Scene, g: &GroupRef) -> Option<usize> {
    scene.group_index(&g.category, g.color.as_deref(), g.size.as_deref())
}

/// The truthful answer for a canonical scene.
pub fn answer(scene: &Scene, query: &VqaQuery) -> VqaAnswer {
    match query {
        VqaQuery::GroupPresent { category } => {
            VqaAnswer::Bool { value: scene.groups.iter().any(|g| &g.category == category) }
        }
        VqaQuery::CountOf { category, color, size } => VqaAnswer::Count {
            value: scene
                .groups
                .iter()
                .filter(|g| {
                    &g.category == category
                        && (color.is_none() || &g.color == color)
                        && (size.is_none() || &g.size == size)
                })
                .map(|g| g.count)
                .sum(),
        },
        VqaQuery::AttributeOf { category, attribute } => VqaAnswer::Attributes {
            values: scene
                .groups
                .iter()
                .filter(|g| &g.category == category)
                .map(|g| AttributeValue {
                    value: match attribute {
                        AttributeKind::Color => g.color.clone(),
                        AttributeKind::Size => g.size.clone(),
                    },
                    count: g.count,
                })
                .collect(),
        },
        VqaQuery::RelationHolds { subject, predicate, object } => {
            let holds = match (find(scene, subject), find(scene, object)) {
                (Some(s), Some(o)) => scene.relation_between(s, o).is_some_and(|r| &r.predicate == predicate),
                _ => false,
            };
            VqaAnswer::Bool { value: holds }
        }
    }
}

/// A uniformly drawn answer of the same type that differs from `truth`.
pub(crate) fn wrong_answer<R: Rng + ?Sized>(
    rng: &mut R,
    query: &VqaQuery,
    truth: &VqaAnswer,
    vocab: &Vocabulary,
) -> VqaAnswer {
    match truth {
        VqaAnswer::Bool { value } => VqaAnswer::Bool { value: !value },
        VqaAnswer::Count { value } => {
            let max = vocab.max_count * vocab.max_groups as u32;
            let mut v = rng.random_range(0..max);
            if v >= *value {
                v += 1;
            }
            VqaAnswer::Count { value: v }
        }
        VqaAnswer::Attributes { values } => {
            let domain: Vec<Option<String>> = match query {
                VqaQuery::AttributeOf { attribute: AttributeKind::Size, .. } => {
                    std::iter::once(None).chain(vocab.sizes.iter().cloned().map(Some)).collect()
                }
                _ => std::iter::once(None).chain(vocab.colors.iter().cloned().map(Some)).collect(),
            };
            let mut values = values.clone();
            if values.is_empty() {
                let value = domain[rng.random_range(0..domain.len())].clone();
                values.push(AttributeValue { value, count: 1 });
            } else {
                let i = rng.random_range(0..values.len());
                let others: Vec<&Option<String>> = domain.iter().filter(|d| **d != values[i].value).collect();
                values[i].value = others[rng.random_range(0..others.len())].clone();
            }
            VqaAnswer::Attributes { values }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::parse_prompt;

    #[test]
    fn counts_and_attributes() {
        let v = Vocabulary::default();
        let s = parse_prompt("a red book and two yellow vases", &v).unwrap();
        let q = VqaQuery::CountOf { category: "vase".into(), color: None, size: None };
        assert_eq!(answer(&s, &q), VqaAnswer::Count { value: 2 });
        let q = VqaQuery::AttributeOf { category: "vase".into(), attribute: AttributeKind::Color };
        assert_eq!(
            answer(&s, &q),
            VqaAnswer::Attributes { values: vec![AttributeValue { value: Some("yellow".into()), count: 2 }] }
        );
        let bad = VqaQuery::GroupPresent { category: "dragon".into() };
        assert!(matches!(bad.validate(&v), Err(ToolError::Validation(_))));
    }

    #[test]
    fn wire_shape() {
        let q = VqaQuery::CountOf { category: "cat".into(), color: None, size: None };
        assert_eq!(
            serde_json::to_string(&q).unwrap(),
            r#"{"query":"CountOf","category":"cat","color":null,"size":null}"#
        );
        let a = VqaAnswer::Count { value: 3 };
        assert_eq!(serde_json::to_string(&a).unwrap(), r#"{"type":"count","value":3}"#);
    }
}
