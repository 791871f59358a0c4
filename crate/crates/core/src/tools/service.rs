use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::{apply_packed, moves, AtomicEdit, Dims, PEdit, Packed, Prompt, Vocabulary};

use super::vqa::{answer, wrong_answer};
use super::{ImageRecord, NoiseProfile, Provenance, ToolBackend, ToolError, ToolStats, VqaAnswer, VqaQuery};

/// In-process simulated tools over an append-only image store.
///
/// Every parsed generate, edit or VQA request receives the next ordinal;
/// its randomness is drawn from a ChaCha stream selected by that ordinal and
/// keyed by the profile seed (mixed with the request seed for generation),
/// so a fixed request sequence always yields the same responses.
pub struct ToolService {
    vocab: Vocabulary,
    dims: Dims,
    profile: NoiseProfile,
    store: Mutex<Store>,
}

#[derive(Default)]
struct Store {
    records: Vec<ImageRecord>,
    by_id: HashMap<String, usize>,
    ordinal: u64,
    stats: ToolStats,
}

impl Store {
    fn next_rng(&mut self, key: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(self.ordinal);
        self.ordinal += 1;
        rng
    }

    fn get(&self, id: &str) -> Result<&ImageRecord, ToolError> {
        self.by_id.get(id).map(|&i| &self.records[i]).ok_or_else(|| ToolError::NotFound(id.to_string()))
    }

    fn push(&mut self, scene: crate::scene::Scene, provenance: Provenance) -> String {
        let n = self.records.len() as u64;
        let id = format!("img-{:06}", n + 1);
        self.records.push(ImageRecord { id: id.clone(), scene, provenance, created_at: n });
        self.by_id.insert(id.clone(), n as usize);
        self.stats.images = n + 1;
        id
    }
}

#[derive(Clone, Copy)]
enum Detail {
    Count(u8),
    Color(u8),
    Size(u8),
    Relation(u8, u8),
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9).rotate_left(31)
}

/// Edits that only change or remove existing content.
fn disruptive(p: &Packed, e: &PEdit) -> bool {
    match *e {
        PEdit::SetColor { g, .. } => p.groups[g as usize].color != 0,
        PEdit::SetSize { g, .. } => p.groups[g as usize].size != 0,
        PEdit::Add { .. } | PEdit::AddRel { .. } => false,
        _ => true,
    }
}

fn edit_groups(e: &PEdit) -> [Option<u8>; 2] {
    match *e {
        PEdit::SetColor { g, .. }
        | PEdit::SetSize { g, .. }
        | PEdit::Inc { g }
        | PEdit::Dec { g }
        | PEdit::Remove { g } => [Some(g), None],
        PEdit::Add { .. } => [None, None],
        PEdit::SetPred { s, o, .. } | PEdit::AddRel { s, o, .. } | PEdit::RemoveRel { s, o } => [Some(s), Some(o)],
    }
}

fn touches(e: &PEdit, d: Detail, pos: &[Option<u8>]) -> bool {
    match d {
        Detail::Count(g) => {
            let Some(q) = pos[g as usize] else { return false };
            matches!(*e, PEdit::Inc { g } | PEdit::Dec { g } | PEdit::Remove { g } if g == q)
        }
        Detail::Color(g) => pos[g as usize].is_some_and(|q| matches!(*e, PEdit::SetColor { g, .. } if g == q)),
        Detail::Size(g) => pos[g as usize].is_some_and(|q| matches!(*e, PEdit::SetSize { g, .. } if g == q)),
        Detail::Relation(s, o) => match (pos[s as usize], pos[o as usize]) {
            (Some(ps), Some(po)) => {
                matches!(*e, PEdit::SetPred { s, o, .. } | PEdit::RemoveRel { s, o } if s == ps && o == po)
            }
            _ => false,
        },
    }
}

fn pick<R: Rng>(rng: &mut R, items: &[PEdit]) -> Option<PEdit> {
    (!items.is_empty()).then(|| items[rng.random_range(0..items.len())])
}

impl ToolService {
    pub fn new(vocab: &Vocabulary, profile: NoiseProfile) -> ToolService {
        ToolService { vocab: vocab.clone(), dims: Dims::of(vocab), profile, store: Mutex::new(Store::default()) }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn profile(&self) -> &NoiseProfile {
        &self.profile
    }

    /// Copy of every stored record, in creation order.
    pub fn snapshot(&self) -> Vec<ImageRecord> {
        self.store.lock().expect("store lock").records.clone()
    }

    /// Generation from canonical prompt text (the wire entry point).
    pub fn generate_text(&self, text: &str, seed: u64) -> Result<String, ToolError> {
        let mut store = self.store.lock().expect("store lock");
        store.stats.imggen_calls += 1;
        let mut rng = store.next_rng(mix(self.profile.seed, seed));
        let prompt = Prompt::parse(text, &self.vocab).map_err(|e| ToolError::Validation(e.to_string()))?;
        if prompt.text != text {
            return Err(ToolError::Validation(format!("prompt is not canonical; expected `{}`", prompt.text)));
        }
        let mut cur = Packed::from_scene(&prompt.scene, &self.vocab).map_err(|e| ToolError::Validation(e.to_string()))?;
        let mut details = Vec::new();
        for (i, g) in cur.groups.iter().enumerate() {
            let i = i as u8;
            details.push(Detail::Count(i));
            if g.color != 0 {
                details.push(Detail::Color(i));
            }
            if g.size != 0 {
                details.push(Detail::Size(i));
            }
        }
        details.extend(cur.rels.iter().map(|&(s, o, _)| Detail::Relation(s, o)));
        let mut pos: Vec<Option<u8>> = (0..cur.groups.len() as u8).map(Some).collect();
        for d in details {
            if !rng.random_bool(self.profile.gen_detail_error_rate) {
                continue;
            }
            let cands: Vec<PEdit> = moves(&cur, self.dims)
                .into_iter()
                .filter(|e| disruptive(&cur, e) && touches(e, d, &pos))
                .collect();
            let Some(e) = pick(&mut rng, &cands) else { continue };
            let (next, map) = apply_packed(&cur, &e, self.dims).expect("enumerated edit applies");
            pos = pos.iter().map(|p| p.and_then(|q| map[q as usize])).collect();
            cur = next;
        }
        Ok(store.push(cur.to_scene(&self.vocab), Provenance::Generated { prompt: prompt.text, seed }))
    }

    fn edit_inner(&self, image_id: &str, edit: &AtomicEdit) -> Result<String, ToolError> {
        let mut store = self.store.lock().expect("store lock");
        store.stats.edit_calls += 1;
        let mut rng = store.next_rng(mix(self.profile.seed, 0));
        let source = store.get(image_id)?.scene.clone();
        let invalid = |e: crate::scene::SceneError| ToolError::Validation(e.to_string());
        let src = Packed::from_scene(&source, &self.vocab).map_err(invalid)?;
        let pe = edit.pack(&self.vocab).map_err(invalid)?;
        let (intended, intended_map) = apply_packed(&src, &pe, self.dims).map_err(invalid)?;
        let identity: Vec<Option<u8>> = (0..src.groups.len() as u8).map(Some).collect();

        let (mut result, map) = if rng.random_bool(self.profile.edit_failure_rate) {
            let wrong: Vec<PEdit> = moves(&src, self.dims)
                .into_iter()
                .filter(|e| {
                    disruptive(&src, e)
                        && apply_packed(&src, e, self.dims).map(|(r, _)| r != intended).unwrap_or(false)
                })
                .collect();
            let noop_allowed = src != intended;
            let noop = rng.random_bool(0.5);
            match pick(&mut rng, &wrong) {
                Some(e) if !(noop && noop_allowed) => apply_packed(&src, &e, self.dims).expect("enumerated edit applies"),
                _ if noop_allowed => (src.clone(), identity),
                _ => (intended.clone(), intended_map),
            }
        } else {
            (intended.clone(), intended_map)
        };

        if rng.random_bool(self.profile.edit_side_effect_rate) {
            let mut touched: Vec<u8> = edit_groups(&pe).iter().flatten().filter_map(|&g| map[g as usize]).collect();
            if let PEdit::Add { cat, color, size } = pe {
                touched.extend(result.find_key((cat, color, size)));
            }
            let cands: Vec<PEdit> = moves(&result, self.dims)
                .into_iter()
                .filter(|e| disruptive(&result, e) && edit_groups(e).iter().flatten().all(|g| !touched.contains(g)))
                .collect();
            if let Some(e) = pick(&mut rng, &cands) {
                result = apply_packed(&result, &e, self.dims).expect("enumerated edit applies").0;
            }
        }
        Ok(store.push(
            result.to_scene(&self.vocab),
            Provenance::Edited { from_id: image_id.to_string(), edit: edit.clone() },
        ))
    }

    fn vqa_inner(&self, image_id: &str, query: &VqaQuery) -> Result<VqaAnswer, ToolError> {
        let mut store = self.store.lock().expect("store lock");
        store.stats.vqa_calls += 1;
        let mut rng = store.next_rng(mix(self.profile.seed, 1));
        query.validate(&self.vocab)?;
        let scene = &store.get(image_id)?.scene;
        let truth = answer(scene, query);
        if rng.random_bool(self.profile.vqa_error_rate) {
            return Ok(wrong_answer(&mut rng, query, &truth, &self.vocab));
        }
        Ok(truth)
    }
}

impl ToolBackend for ToolService {
    fn generate(&self, prompt: &Prompt, seed: u64) -> Result<String, ToolError> {
        self.generate_text(&prompt.text, seed)
    }

    fn edit(&self, image_id: &str, edit: &AtomicEdit) -> Result<String, ToolError> {
        self.edit_inner(image_id, edit)
    }

    fn vqa(&self, image_id: &str, query: &VqaQuery) -> Result<VqaAnswer, ToolError> {
        self.vqa_inner(image_id, query)
    }

    fn image(&self, image_id: &str) -> Result<ImageRecord, ToolError> {
        let mut store = self.store.lock().expect("store lock");
        store.stats.image_calls += 1;
        store.get(image_id).cloned()
    }

    fn stats(&self) -> Result<ToolStats, ToolError> {
        Ok(self.store.lock().expect("store lock").stats.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{apply_edit, enumerate_edits, parse_prompt};

    fn prompt(text: &str) -> Prompt {
        Prompt::parse(text, &Vocabulary::default()).unwrap()
    }

    #[test]
    fn perfect_tools_are_exact() {
        let v = Vocabulary::default();
        let svc = ToolService::new(&v, NoiseProfile::perfect(1));
        let p = prompt("a red book and two yellow vases");
        let id = svc.generate(&p, 5).unwrap();
        assert_eq!(svc.image(&id).unwrap().scene, p.scene);
        let e = AtomicEdit::RemoveGroup { group: 0 };
        let id2 = svc.edit(&id, &e).unwrap();
        let rec = svc.image(&id2).unwrap();
        assert_eq!(rec.scene, apply_edit(&p.scene, &e, &v).unwrap());
        assert_eq!(rec.provenance, Provenance::Edited { from_id: id.clone(), edit: e });
        let q = VqaQuery::CountOf { category: "vase".into(), color: None, size: None };
        assert_eq!(svc.vqa(&id2, &q).unwrap(), VqaAnswer::Count { value: 2 });
        let st = svc.stats().unwrap();
        assert_eq!((st.imggen_calls, st.edit_calls, st.vqa_calls, st.images), (1, 1, 1, 2));
    }

    #[test]
    fn forced_corruption_changes_color() {
        let v = Vocabulary::default();
        let mut profile = NoiseProfile::perfect(2);
        profile.gen_detail_error_rate = 1.0;
        let svc = ToolService::new(&v, profile);
        for seed in 0..20 {
            let id = svc.generate(&prompt("a red dog"), seed).unwrap();
            let s = svc.image(&id).unwrap().scene;
            assert_ne!(s.groups[0].color.as_deref(), Some("red"));
        }
    }

    #[test]
    fn failed_edits_never_match_intent() {
        let v = Vocabulary::default();
        let mut profile = NoiseProfile::perfect(3);
        profile.edit_failure_rate = 1.0;
        let svc = ToolService::new(&v, profile);
        let p = prompt("a red book and two yellow vases, the red book left of the yellow vases");
        let id = svc.generate(&p, 0).unwrap();
        for e in enumerate_edits(&p.scene, &v).unwrap() {
            let out = svc.image(&svc.edit(&id, &e).unwrap()).unwrap().scene;
            assert_ne!(out, apply_edit(&p.scene, &e, &v).unwrap(), "{e:?}");
        }
    }

    #[test]
    fn errors_are_typed() {
        let v = Vocabulary::default();
        let svc = ToolService::new(&v, NoiseProfile::perfect(0));
        assert!(matches!(svc.edit("img-9", &AtomicEdit::RemoveGroup { group: 0 }), Err(ToolError::NotFound(_))));
        let id = svc.generate(&prompt("a dog"), 0).unwrap();
        assert!(matches!(svc.edit(&id, &AtomicEdit::DecrementCount { group: 0 }), Err(ToolError::Validation(_))));
        let q = VqaQuery::GroupPresent { category: "dragon".into() };
        assert!(matches!(svc.vqa(&id, &q), Err(ToolError::Validation(_))));
        assert!(svc.generate_text("two yellow vases and a red book", 0).is_err());
        let _ = parse_prompt("a dog", &v).unwrap();
    }

    #[test]
    fn replay_is_deterministic() {
        let v = Vocabulary::default();
        let run = || {
            let svc = ToolService::new(&v, NoiseProfile { vqa_error_rate: 0.3, seed: 9, ..NoiseProfile::default() });
            let mut log = Vec::new();
            for s in 0..30 {
                let id = svc.generate(&prompt("a red book and two yellow vases"), s).unwrap();
                let id2 = svc.edit(&id, &AtomicEdit::IncrementCount { group: 0 }).unwrap_or(id);
                let q = VqaQuery::CountOf { category: "vase".into(), color: None, size: None };
                log.push(serde_json::to_string(&(svc.image(&id2).unwrap(), svc.vqa(&id2, &q).unwrap())).unwrap());
            }
            log
        };
        assert_eq!(run(), run());
    }
}
