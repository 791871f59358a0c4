use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SceneError;

/// Closed symbolic vocabulary. The order of every list is significant: it
/// fixes the canonical group order and the embedding layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub categories: Vec<String>,
    pub colors: Vec<String>,
    pub sizes: Vec<String>,
    pub predicates: Vec<String>,
    pub max_groups: usize,
    pub max_count: u32,
}

const RESERVED: &[&str] = &["a", "an", "the", "and"];

const COUNT_WORDS: &[&str] = &[
    "", "a", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve",
];

impl Default for Vocabulary {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|w| w.to_string()).collect::<Vec<_>>();
        Vocabulary {
            categories: s(&["dog", "cat", "hat", "book", "vase", "ball", "apple", "frisbee"]),
            colors: s(&["red", "yellow", "purple", "green", "blue", "black", "white"]),
            sizes: s(&["small", "large"]),
            predicates: s(&["with", "left of", "right of", "above", "below"]),
            max_groups: 4,
            max_count: 9,
        }
    }
}

fn is_word(w: &str) -> bool {
    !w.is_empty() && w.bytes().all(|b| b.is_ascii_lowercase())
}

impl Vocabulary {
    pub fn new(
        categories: &[&str],
        colors: &[&str],
        sizes: &[&str],
        predicates: &[&str],
        max_groups: usize,
        max_count: u32,
    ) -> Result<Self, SceneError> {
        let s = |v: &[&str]| v.iter().map(|w| w.to_string()).collect::<Vec<_>>();
        let vocab = Vocabulary {
            categories: s(categories),
            colors: s(colors),
            sizes: s(sizes),
            predicates: s(predicates),
            max_groups,
            max_count,
        };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: String| Err(SceneError::Vocabulary(msg));
        if self.max_groups < 2 {
            return bad(format!("max_groups must be at least 2, got {}", self.max_groups));
        }
        if self.max_count < 2 {
            return bad(format!("max_count must be at least 2, got {}", self.max_count));
        }
        if self.max_groups > 16 || self.max_count > 255 {
            return bad("max_groups <= 16 and max_count <= 255 are supported".into());
        }
        if self.categories.len() > 250 || self.colors.len() > 250 || self.sizes.len() > 250 {
            return bad("word lists are limited to 250 entries".into());
        }
        let mut seen = std::collections::HashSet::new();
        for w in RESERVED {
            seen.insert(w.to_string());
        }
        for w in COUNT_WORDS.iter().skip(2) {
            seen.insert(w.to_string());
        }
        for (kind, list) in [
            ("categories", &self.categories),
            ("colors", &self.colors),
            ("sizes", &self.sizes),
        ] {
            if list.is_empty() {
                return bad(format!("{kind} must not be empty"));
            }
            for w in list {
                if !is_word(w) {
                    return bad(format!("{kind} entry `{w}` must be a single lowercase word"));
                }
                if !seen.insert(w.clone()) {
                    return bad(format!("`{w}` appears twice or collides with a reserved word"));
                }
            }
        }
        for c in &self.categories {
            let p = plural(c);
            if !seen.insert(p.clone()) {
                return bad(format!("plural `{p}` of `{c}` collides with another word"));
            }
        }
        if self.predicates.is_empty() {
            return bad("predicates must not be empty".into());
        }
        let mut preds = std::collections::HashSet::new();
        for p in &self.predicates {
            if p.split(' ').any(|w| !is_word(w) || w == "and" || w == "the") {
                return bad(format!("predicate `{p}` must be lowercase words without `and`/`the`"));
            }
            if !preds.insert(p.clone()) {
                return bad(format!("predicate `{p}` appears twice"));
            }
        }
        Ok(())
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn color_index(&self, name: &str) -> Option<usize> {
        self.colors.iter().position(|c| c == name)
    }

    pub fn size_index(&self, name: &str) -> Option<usize> {
        self.sizes.iter().position(|c| c == name)
    }

    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicates.iter().position(|c| c == name)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash_hex(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("vocabulary serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub(crate) fn count_word(&self, count: u32) -> String {
        match COUNT_WORDS.get(count as usize) {
            Some(w) if count >= 1 => w.to_string(),
            _ => count.to_string(),
        }
    }

    pub(crate) fn parse_count_word(&self, word: &str) -> Option<u32> {
        if word == "a" || word == "an" {
            return Some(1);
        }
        if let Some(i) = COUNT_WORDS.iter().skip(2).position(|w| *w == word) {
            return Some(i as u32 + 2);
        }
        // numerals are only canonical beyond the spelled-out range
        match word.parse::<u32>() {
            Ok(n) if n as usize >= COUNT_WORDS.len() => Some(n),
            _ => None,
        }
    }
}

/// English plural used for rendering counts above one.
pub fn plural(noun: &str) -> String {
    let b = noun.as_bytes();
    let ends = |s: &str| noun.ends_with(s);
    if ends("s") || ends("x") || ends("z") || ends("ch") || ends("sh") {
        format!("{noun}es")
    } else if b.len() >= 2 && b[b.len() - 1] == b'y' && !b"aeiou".contains(&b[b.len() - 2]) {
        format!("{}ies", &noun[..noun.len() - 1])
    } else {
        format!("{noun}s")
    }
}
