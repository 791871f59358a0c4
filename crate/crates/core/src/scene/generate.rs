use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{Dims, PGroup, Packed};
use super::{Scene, Vocabulary};

/// Seeded generator of random canonical scenes, used as the prompt source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSampler {
    /// Upper bound on groups (also capped by the vocabulary).
    pub max_groups: usize,
    /// Upper bound on counts (also capped by the vocabulary).
    pub max_count: u32,
    pub color_prob: f64,
    pub size_prob: f64,
    pub relation_prob: f64,
    pub max_relations: usize,
}

impl Default for SceneSampler {
    fn default() -> Self {
        SceneSampler {
            max_groups: 3,
            max_count: 3,
            color_prob: 0.5,
            size_prob: 0.25,
            relation_prob: 0.3,
            max_relations: 2,
        }
    }
}

impl SceneSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, vocab: &Vocabulary) -> Scene {
        let dims = Dims::of(vocab);
        let max_groups = self.max_groups.clamp(1, vocab.max_groups);
        let max_count = self.max_count.clamp(1, vocab.max_count) as u8;
        let n = rng.random_range(1..=max_groups);
        let mut groups: Vec<PGroup> = Vec::with_capacity(n);
        while groups.len() < n {
            let g = PGroup {
                cat: rng.random_range(0..dims.categories),
                color: if rng.random_bool(self.color_prob) { rng.random_range(1..=dims.colors) } else { 0 },
                size: if rng.random_bool(self.size_prob) { rng.random_range(1..=dims.sizes) } else { 0 },
                count: rng.random_range(1..=max_count),
            };
            if groups.iter().all(|h| h.key() != g.key()) {
                groups.push(g);
            }
        }
        let mut rels = Vec::new();
        for s in 0..n as u8 {
            for o in s + 1..n as u8 {
                if rels.len() < self.max_relations && rng.random_bool(self.relation_prob) {
                    let p = rng.random_range(0..dims.predicates);
                    if rng.random_bool(0.5) {
                        rels.push((s, o, p));
                    } else {
                        rels.push((o, s, p));
                    }
                }
            }
        }
        Packed::build(groups, rels, dims).expect("sampled scene is valid").to_scene(vocab)
    }
}

/// Every canonical scene of the vocabulary, in a fixed order. Only feasible
/// for tiny vocabularies.
pub fn enumerate_scenes(vocab: &Vocabulary) -> Vec<Scene> {
    enumerate_packed(vocab).iter().map(|p| p.to_scene(vocab)).collect()
}

pub(crate) fn enumerate_packed(vocab: &Vocabulary) -> Vec<Packed> {
    let dims = Dims::of(vocab);
    let mut keys = Vec::new();
    for cat in 0..dims.categories {
        for color in 0..=dims.colors {
            for size in 0..=dims.sizes {
                keys.push((cat, color, size));
            }
        }
    }
    let mut out = Vec::new();
    let mut chosen = Vec::new();
    subsets(&keys, 0, dims.max_groups, &mut chosen, &mut |subset| {
        let n = subset.len();
        let mut counts = vec![1u8; n];
        loop {
            let groups: Vec<PGroup> = subset
                .iter()
                .zip(&counts)
                .map(|(&(cat, color, size), &count)| PGroup { cat, color, size, count })
                .collect();
            let pairs: Vec<(u8, u8)> = (0..n as u8)
                .flat_map(|s| (0..n as u8).filter(move |&o| o != s).map(move |o| (s, o)))
                .collect();
            let mut choice = vec![0u8; pairs.len()];
            loop {
                let rels = pairs
                    .iter()
                    .zip(&choice)
                    .filter(|(_, &c)| c > 0)
                    .map(|(&(s, o), &c)| (s, o, c - 1))
                    .collect();
                out.push(Packed::build(groups.clone(), rels, dims).expect("enumerated scene is valid"));
                if !bump(&mut choice, dims.predicates + 1) {
                    break;
                }
            }
            let mut i = 0;
            loop {
                if i == n {
                    return;
                }
                if counts[i] < dims.max_count {
                    counts[i] += 1;
                    break;
                }
                counts[i] = 1;
                i += 1;
            }
        }
    });
    out
}

fn bump(digits: &mut [u8], base: u8) -> bool {
    for d in digits.iter_mut() {
        if *d + 1 < base {
            *d += 1;
            return true;
        }
        *d = 0;
    }
    false
}

fn subsets<T: Copy>(items: &[T], start: usize, max: usize, chosen: &mut Vec<T>, f: &mut dyn FnMut(&[T])) {
    if !chosen.is_empty() {
        f(chosen);
    }
    if chosen.len() == max {
        return;
    }
    for i in start..items.len() {
        chosen.push(items[i]);
        subsets(items, i + 1, max, chosen, f);
        chosen.pop();
    }
}
