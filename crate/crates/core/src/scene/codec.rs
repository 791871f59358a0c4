use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{Dims, Packed};
use super::{Scene, SceneError, Vocabulary};

pub const DEFAULT_LATENT_DIM: usize = 32;

/// Fixed map from scenes to `latent_dim`-dimensional vectors.
///
/// Each group slot (canonical order) holds a presence flag and one-hot
/// blocks for category, color (with "none"), size (with "none") and count;
/// each ordered slot pair holds a one-hot over "no relation" and the
/// predicates. Features are ±1. A seeded orthonormal projection maps the
/// feature vector to the latent space with roughly unit variance per
/// coordinate.
#[derive(Clone, Debug)]
pub struct Codec {
    vocab: Vocabulary,
    dims: Dims,
    latent_dim: usize,
    seed: u64,
    features: usize,
    proj: Vec<f64>,
}

impl Codec {
    pub fn new(vocab: &Vocabulary, latent_dim: usize, seed: u64) -> Codec {
        assert!(latent_dim > 0, "latent dimension must be positive");
        let dims = Dims::of(vocab);
        let slot = slot_width(dims);
        let g = dims.max_groups;
        let features = g * slot + g * (g - 1) * (dims.predicates as usize + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols) = if latent_dim <= features { (latent_dim, features) } else { (features, latent_dim) };
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
        while basis.len() < rows {
            let mut v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(&mut rng)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        let mut proj = vec![0.0; latent_dim * features];
        if latent_dim <= features {
            for (r, row) in basis.iter().enumerate() {
                proj[r * features..(r + 1) * features].copy_from_slice(row);
            }
        } else {
            let scale = (latent_dim as f64 / features as f64).sqrt();
            for (c, col) in basis.iter().enumerate() {
                for (r, x) in col.iter().enumerate() {
                    proj[r * features + c] = x * scale;
                }
            }
        }
        Codec { vocab: vocab.clone(), dims, latent_dim, seed, features, proj }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_dim(&self) -> usize {
        self.features
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn features(&self, scene: &Scene) -> Result<Vec<f64>, SceneError> {
        let p = Packed::from_scene(scene, &self.vocab)?;
        Ok(self.features_packed(&p))
    }

    fn features_packed(&self, p: &Packed) -> Vec<f64> {
        let d = self.dims;
        let slot = slot_width(d);
        let mut x = vec![-1.0; self.features];
        for (i, g) in p.groups.iter().enumerate() {
            let base = i * slot;
            x[base] = 1.0;
            let mut off = base + 1;
            x[off + g.cat as usize] = 1.0;
            off += d.categories as usize;
            x[off + g.color as usize] = 1.0;
            off += d.colors as usize + 1;
            x[off + g.size as usize] = 1.0;
            off += d.sizes as usize + 1;
            x[off + g.count as usize - 1] = 1.0;
        }
        let n = d.max_groups;
        let rel_base = n * slot;
        let width = d.predicates as usize + 1;
        let pair_index = |s: usize, o: usize| s * (n - 1) + if o > s { o - 1 } else { o };
        for s in 0..n {
            for o in 0..n {
                if s == o {
                    continue;
                }
                let cell = rel_base + pair_index(s, o) * width;
                let v = if s < p.groups.len() && o < p.groups.len() {
                    p.rel(s as u8, o as u8).map(|q| q as usize + 1).unwrap_or(0)
                } else {
                    0
                };
                x[cell + v] = 1.0;
            }
        }
        x
    }

    pub fn embed(&self, scene: &Scene) -> Result<Vec<f64>, SceneError> {
        Ok(self.project(&self.features(scene)?))
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        self.proj
            .chunks_exact(self.features)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Index of the embedding nearest to `v` (earliest on ties).
    pub fn nearest(&self, v: &[f64], embeddings: &[Vec<f64>]) -> Result<usize, SceneError> {
        if v.len() != self.latent_dim {
            return Err(SceneError::Dimension { expected: self.latent_dim, actual: v.len() });
        }
        let mut best = None;
        for (i, e) in embeddings.iter().enumerate() {
            let d: f64 = e.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i).ok_or(SceneError::EmptyCandidates)
    }

    /// The candidate whose embedding is nearest to `v`.
    pub fn decode(&self, v: &[f64], candidates: &[Scene]) -> Result<Scene, SceneError> {
        let embeddings = candidates.iter().map(|s| self.embed(s)).collect::<Result<Vec<_>, _>>()?;
        let i = self.nearest(v, &embeddings)?;
        candidates[i].canonicalize(&self.vocab)
    }
}

fn slot_width(d: Dims) -> usize {
    1 + d.categories as usize + d.colors as usize + 1 + d.sizes as usize + 1 + d.max_count as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{enumerate_scenes, parse_prompt};

    fn small_vocab() -> Vocabulary {
        Vocabulary::new(&["dog", "hat"], &["red", "black"], &["small"], &["with", "above"], 2, 2).unwrap()
    }

    #[test]
    fn round_trip_and_noise_margin() {
        let v = small_vocab();
        let codec = Codec::new(&v, DEFAULT_LATENT_DIM, 5);
        let all = enumerate_scenes(&v);
        let emb: Vec<Vec<f64>> = all.iter().map(|s| codec.embed(s).unwrap()).collect();
        let mut min_gap = f64::INFINITY;
        for i in 0..emb.len() {
            for j in i + 1..emb.len() {
                let d: f64 = emb[i].iter().zip(&emb[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                min_gap = min_gap.min(d);
            }
        }
        assert!(min_gap > 1e-6);
        for (i, s) in all.iter().enumerate() {
            assert_eq!(codec.nearest(&emb[i], &emb).unwrap(), i, "{s:?}");
            let mut noisy = emb[i].clone();
            let step = 0.49 * min_gap / (noisy.len() as f64).sqrt();
            for (k, x) in noisy.iter_mut().enumerate() {
                *x += if k % 2 == 0 { step } else { -step };
            }
            assert_eq!(codec.nearest(&noisy, &emb).unwrap(), i);
        }
        assert_eq!(codec.decode(&emb[3], &all).unwrap(), all[3]);
    }

    #[test]
    fn deterministic_and_unit_scale() {
        let v = Vocabulary::default();
        let s = parse_prompt("a red book and two yellow vases", &v).unwrap();
        let a = Codec::new(&v, 32, 9).embed(&s).unwrap();
        let b = Codec::new(&v, 32, 9).embed(&s).unwrap();
        assert_eq!(a, b);
        let c = Codec::new(&v, 32, 10).embed(&s).unwrap();
        assert_ne!(a, c);
        let norm2: f64 = a.iter().map(|x| x * x).sum();
        assert!(norm2 > 8.0 && norm2 < 128.0, "{norm2}");
        let wide = Codec::new(&small_vocab(), 256, 1);
        assert!(wide.latent_dim() > wide.feature_dim());
        let x = wide.embed(&parse_prompt("a dog", &small_vocab()).unwrap()).unwrap();
        assert_eq!(x.len(), 256);
    }

    #[test]
    fn errors() {
        let v = small_vocab();
        let codec = Codec::new(&v, 8, 1);
        assert_eq!(codec.nearest(&[0.0; 8], &[]), Err(SceneError::EmptyCandidates));
        assert!(matches!(codec.nearest(&[0.0; 3], &[vec![0.0; 8]]), Err(SceneError::Dimension { .. })));
    }
}
