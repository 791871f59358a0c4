//! Exact atomic-edit distance.
//!
//! A correspondence between the groups of two scenes (same category only)
//! prices every group and relation that has to change; the cheapest
//! correspondence is a lower bound on the number of edits. When that bound
//! can be realised by an explicit edit plan (attribute changes can be ordered
//! without two groups ever sharing a key) it is the distance. Otherwise an
//! iterative-deepening search over canonical scenes, guided by the same
//! bound, settles the value.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::edit::{apply_packed, moves, PEdit};
use super::model::{Dims, PGroup, Packed};
use super::{AtomicEdit, Scene, SceneError, Vocabulary};

const NONE: u8 = u8::MAX;
const MAXG: usize = 16;
const NEW: u32 = 1000;

pub const DEFAULT_MAX_DEPTH: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceResult {
    pub distance: u32,
    /// False when the search bound was hit; `distance` is then a lower bound.
    pub exact: bool,
}

/// A canonical scene with lookup tables for repeated distance queries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedScene {
    pub(crate) packed: Packed,
    rel: [[u8; MAXG]; MAXG],
}

impl PreparedScene {
    pub fn new(scene: &Scene, vocab: &Vocabulary) -> Result<PreparedScene, SceneError> {
        Ok(Self::from_packed(Packed::from_scene(scene, vocab)?))
    }

    pub(crate) fn from_packed(packed: Packed) -> PreparedScene {
        let mut rel = [[NONE; MAXG]; MAXG];
        for &(s, o, p) in &packed.rels {
            rel[s as usize][o as usize] = p;
        }
        PreparedScene { packed, rel }
    }

    pub fn scene(&self, vocab: &Vocabulary) -> Scene {
        self.packed.to_scene(vocab)
    }
}

type Matching = [u8; MAXG];

fn group_cost(x: &PGroup, y: &PGroup) -> u32 {
    (x.color != y.color) as u32 + (x.size != y.size) as u32 + x.count.abs_diff(y.count) as u32
}

struct Matcher<'a> {
    a: &'a PreparedScene,
    b: &'a PreparedScene,
    cur: Matching,
    inv: Matching,
    used: u32,
    best: u32,
    best_matching: Matching,
    /// Every complete correspondence no worse than the best seen when it
    /// was reached.
    leaves: Vec<(u32, Matching)>,
}

impl Matcher<'_> {
    fn new<'a>(a: &'a PreparedScene, b: &'a PreparedScene) -> Matcher<'a> {
        Matcher {
            a,
            b,
            cur: [NONE; MAXG],
            inv: [NONE; MAXG],
            used: 0,
            best: u32::MAX,
            best_matching: [NONE; MAXG],
            leaves: Vec::new(),
        }
    }

    fn rel_cost(&self) -> u32 {
        let m = &self.cur;
        let inv = &self.inv;
        let mut c = 0;
        for &(s, o, p) in &self.a.packed.rels {
            let (ms, mo) = (m[s as usize], m[o as usize]);
            if ms == NONE || mo == NONE || self.b.rel[ms as usize][mo as usize] != p {
                c += 1;
            }
        }
        for &(s, o, _) in &self.b.packed.rels {
            let (is, io) = (inv[s as usize], inv[o as usize]);
            if is == NONE || io == NONE || self.a.rel[is as usize][io as usize] == NONE {
                c += 1;
            }
        }
        c
    }

    fn rec(&mut self, i: usize, cost: u32) {
        if cost > self.best {
            return;
        }
        let ga = &self.a.packed.groups;
        let gb = &self.b.packed.groups;
        if i == ga.len() {
            let mut c = cost;
            for (j, g) in gb.iter().enumerate() {
                if self.used & (1 << j) == 0 {
                    c += g.count as u32;
                }
            }
            if c + (self.a.packed.rels.len().abs_diff(self.b.packed.rels.len()) as u32) > self.best {
                return;
            }
            c += self.rel_cost();
            if c < self.best {
                self.best = c;
                self.best_matching = self.cur;
            }
            if c == self.best {
                self.leaves.push((c, self.cur));
            }
            return;
        }
        let g = ga[i];
        for (j, h) in gb.iter().enumerate() {
            if self.used & (1 << j) == 0 && h.cat == g.cat {
                self.cur[i] = j as u8;
                self.inv[j] = i as u8;
                self.used |= 1 << j;
                self.rec(i + 1, cost + group_cost(&g, h));
                self.used &= !(1 << j);
                self.inv[j] = NONE;
            }
        }
        self.cur[i] = NONE;
        self.rec(i + 1, cost + g.count as u32);
    }
}

/// Cost of the cheapest correspondence, and one correspondence reaching it.
fn cheapest(a: &PreparedScene, b: &PreparedScene) -> (u32, Matching) {
    let mut m = Matcher::new(a, b);
    m.rec(0, 0);
    (m.best, m.best_matching)
}

/// The cheapest cost and, if one exists, a correspondence of that cost whose
/// attribute changes can be ordered, with that order.
fn analyse(a: &PreparedScene, b: &PreparedScene) -> (u32, Option<(Matching, Vec<(u8, bool)>)>) {
    let mut m = Matcher::new(a, b);
    m.rec(0, 0);
    let best = m.best;
    let mut order = Vec::new();
    for &(c, cand) in &m.leaves {
        if c == best {
            order.clear();
            if route(a, b, &cand, &mut order) {
                return (best, Some((cand, order)));
            }
        }
    }
    (best, None)
}

/// One cheapest correspondence: for each group of `a`, the matched group of
/// `b` if any.
pub(crate) fn best_matching(a: &PreparedScene, b: &PreparedScene) -> (u32, Vec<Option<usize>>) {
    let (cost, m) = cheapest(a, b);
    let out = (0..a.packed.groups.len())
        .map(|i| (m[i] != NONE).then_some(m[i] as usize))
        .collect();
    (cost, out)
}

struct Mover {
    group: u8,
    key: (u8, u8, u8),
    color: Option<u8>,
    size: Option<u8>,
}

/// Orders the attribute changes of matched groups so that no intermediate
/// key collides with another group, pushing (group of `a`, is_color) steps.
fn route(a: &PreparedScene, b: &PreparedScene, m: &Matching, order: &mut Vec<(u8, bool)>) -> bool {
    let mut movers: [Mover; MAXG] = std::array::from_fn(|_| Mover { group: 0, key: (0, 0, 0), color: None, size: None });
    let mut nm = 0;
    let mut statics = [(0u8, 0u8, 0u8); MAXG];
    let mut ns = 0;
    for (i, g) in a.packed.groups.iter().enumerate() {
        if m[i] == NONE {
            continue;
        }
        let t = b.packed.groups[m[i] as usize];
        let color = (g.color != t.color).then_some(t.color);
        let size = (g.size != t.size).then_some(t.size);
        if color.is_none() && size.is_none() {
            statics[ns] = g.key();
            ns += 1;
        } else {
            movers[nm] = Mover { group: i as u8, key: g.key(), color, size };
            nm += 1;
        }
    }
    if nm == 0 {
        return true;
    }
    let mut failed = Vec::new();
    route_dfs(&mut movers[..nm], &statics[..ns], order, &mut failed)
}

fn pending_mask(movers: &[Mover]) -> u32 {
    movers
        .iter()
        .enumerate()
        .map(|(k, m)| ((m.color.is_some() as u32) | ((m.size.is_some() as u32) << 1)) << (2 * k))
        .fold(0, |a, b| a | b)
}

fn route_dfs(movers: &mut [Mover], statics: &[(u8, u8, u8)], order: &mut Vec<(u8, bool)>, failed: &mut Vec<u32>) -> bool {
    let mask = pending_mask(movers);
    if mask == 0 {
        return true;
    }
    if failed.contains(&mask) {
        return false;
    }
    for k in 0..movers.len() {
        for is_color in [true, false] {
            let target = if is_color { movers[k].color } else { movers[k].size };
            let Some(v) = target else { continue };
            let old = movers[k].key;
            let new = if is_color { (old.0, v, old.2) } else { (old.0, old.1, v) };
            if statics.contains(&new) || movers.iter().enumerate().any(|(l, m)| l != k && m.key == new) {
                continue;
            }
            movers[k].key = new;
            if is_color {
                movers[k].color = None;
            } else {
                movers[k].size = None;
            }
            order.push((movers[k].group, is_color));
            if route_dfs(movers, statics, order, failed) {
                return true;
            }
            order.pop();
            movers[k].key = old;
            if is_color {
                movers[k].color = Some(v);
            } else {
                movers[k].size = Some(v);
            }
        }
    }
    failed.push(mask);
    false
}

struct PlanBuilder {
    dims: Dims,
    cur: Packed,
    ident: Vec<u32>,
    plan: Vec<PEdit>,
}

impl PlanBuilder {
    fn pos(&self, id: u32) -> u8 {
        self.ident.iter().position(|&x| x == id).expect("identity present") as u8
    }

    fn step(&mut self, e: PEdit, added: Option<u32>) -> Option<()> {
        let (next, map) = apply_packed(&self.cur, &e, self.dims).ok()?;
        let mut ident = vec![None; next.groups.len()];
        for (old, new) in map.iter().enumerate() {
            if let Some(q) = new {
                ident[*q as usize] = Some(self.ident[old]);
            }
        }
        for slot in ident.iter_mut() {
            if slot.is_none() {
                *slot = added;
            }
        }
        self.ident = ident.into_iter().collect::<Option<Vec<_>>>()?;
        self.cur = next;
        self.plan.push(e);
        Some(())
    }
}

/// Materialises the plan for a routable correspondence.
fn build_plan(dims: Dims, a: &PreparedScene, b: &PreparedScene, m: &Matching, order: &[(u8, bool)]) -> Option<Vec<PEdit>> {
    let na = a.packed.groups.len();
    let nb = b.packed.groups.len();
    let mut inv = [NONE; MAXG];
    for i in 0..na {
        if m[i] != NONE {
            inv[m[i] as usize] = i as u8;
        }
    }
    let target_of = |id: u32| -> u8 {
        if id >= NEW {
            (id - NEW) as u8
        } else {
            m[id as usize]
        }
    };
    let mut pb = PlanBuilder { dims, cur: a.packed.clone(), ident: (0..na as u32).collect(), plan: Vec::new() };

    for (s, o, p) in pb.cur.rels.clone() {
        let (ts, to) = (target_of(pb.ident[s as usize]), target_of(pb.ident[o as usize]));
        let want = if ts == NONE || to == NONE { NONE } else { b.rel[ts as usize][to as usize] };
        if want == NONE {
            pb.step(PEdit::RemoveRel { s, o }, None)?;
        } else if want != p {
            pb.step(PEdit::SetPred { s, o, p: want }, None)?;
        }
    }

    let unmatched: Vec<u32> = (0..na as u32).filter(|&i| m[i as usize] == NONE).collect();
    let deferred = if unmatched.len() == na { unmatched.last().copied() } else { None };
    for &id in &unmatched {
        while pb.cur.groups[pb.pos(id) as usize].count > 1 {
            pb.step(PEdit::Dec { g: pb.pos(id) }, None)?;
        }
        if Some(id) != deferred {
            pb.step(PEdit::Remove { g: pb.pos(id) }, None)?;
        }
    }

    for &(i, is_color) in order {
        let t = b.packed.groups[m[i as usize] as usize];
        let g = pb.pos(i as u32);
        let e = if is_color { PEdit::SetColor { g, color: t.color } } else { PEdit::SetSize { g, size: t.size } };
        pb.step(e, None)?;
    }

    for i in 0..na as u32 {
        if m[i as usize] == NONE {
            continue;
        }
        let want = b.packed.groups[m[i as usize] as usize].count;
        while pb.cur.groups[pb.pos(i) as usize].count < want {
            pb.step(PEdit::Inc { g: pb.pos(i) }, None)?;
        }
        while pb.cur.groups[pb.pos(i) as usize].count > want {
            pb.step(PEdit::Dec { g: pb.pos(i) }, None)?;
        }
    }

    let fresh: Vec<usize> = (0..nb).filter(|&j| inv[j] == NONE).collect();
    for &j in &fresh {
        let t = b.packed.groups[j];
        pb.step(PEdit::Add { cat: t.cat, color: t.color, size: t.size }, Some(NEW + j as u32))?;
    }
    if let Some(id) = deferred {
        pb.step(PEdit::Remove { g: pb.pos(id) }, None)?;
    }
    for &j in &fresh {
        let id = NEW + j as u32;
        while pb.cur.groups[pb.pos(id) as usize].count < b.packed.groups[j].count {
            pb.step(PEdit::Inc { g: pb.pos(id) }, None)?;
        }
    }

    for &(s, o, p) in &b.packed.rels {
        let id = |j: u8| if inv[j as usize] != NONE { inv[j as usize] as u32 } else { NEW + j as u32 };
        let (ps, po) = (pb.pos(id(s)), pb.pos(id(o)));
        if pb.cur.rel(ps, po).is_none() {
            pb.step(PEdit::AddRel { s: ps, o: po, p }, None)?;
        }
    }

    (pb.cur == b.packed).then_some(pb.plan)
}

/// Reusable distance and plan search for one vocabulary.
#[derive(Clone, Debug)]
pub struct EditSearch {
    vocab: Vocabulary,
    dims: Dims,
    pub max_depth: u32,
}

impl EditSearch {
    pub fn new(vocab: &Vocabulary, max_depth: u32) -> EditSearch {
        EditSearch { vocab: vocab.clone(), dims: Dims::of(vocab), max_depth }
    }

    pub fn prepare(&self, scene: &Scene) -> Result<PreparedScene, SceneError> {
        PreparedScene::new(scene, &self.vocab)
    }

    /// Admissible lower bound from the cheapest correspondence.
    pub fn lower_bound(&self, a: &PreparedScene, b: &PreparedScene) -> u32 {
        cheapest(a, b).0
    }

    pub fn distance(&self, a: &PreparedScene, b: &PreparedScene) -> DistanceResult {
        self.search(a, b, false).0
    }

    /// A shortest edit plan from `a` to `b`, or `None` beyond the bound.
    pub fn plan(&self, a: &PreparedScene, b: &PreparedScene) -> Option<Vec<AtomicEdit>> {
        let (res, plan) = self.search(a, b, true);
        if !res.exact {
            return None;
        }
        plan.map(|p| p.iter().map(|e| e.unpack(&self.vocab)).collect())
    }

    fn search(&self, a: &PreparedScene, b: &PreparedScene, want_plan: bool) -> (DistanceResult, Option<Vec<PEdit>>) {
        let (h0, routed) = analyse(a, b);
        let mut routed = Some((h0, routed));
        let mut threshold = h0;
        loop {
            if threshold > self.max_depth {
                // a realisable cheapest correspondence is exact regardless of the bound
                let routed = routed.take().unwrap_or_else(|| analyse(a, b)).1;
                if let Shortcut::Done(plan) = self.shortcut(a, b, routed, want_plan) {
                    return (DistanceResult { distance: h0, exact: true }, plan);
                }
                return (DistanceResult { distance: threshold, exact: false }, None);
            }
            let mut tt = HashMap::new();
            let mut path = Vec::new();
            match self.dfs(a, b, 0, threshold, want_plan, routed.take(), &mut tt, &mut path) {
                Ok(total) => {
                    return (DistanceResult { distance: total, exact: true }, want_plan.then_some(path));
                }
                Err(next) => threshold = if next == u32::MAX { threshold + 1 } else { next.max(threshold + 1) },
            }
        }
    }

    fn shortcut(&self, a: &PreparedScene, b: &PreparedScene, routed: Option<(Matching, Vec<(u8, bool)>)>, want_plan: bool) -> Shortcut {
        match routed {
            None => Shortcut::Blocked,
            Some(_) if !want_plan => Shortcut::Done(None),
            Some((m, order)) => match build_plan(self.dims, a, b, &m, &order) {
                Some(plan) => Shortcut::Done(Some(plan)),
                None => Shortcut::Unknown,
            },
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs(
        &self,
        node: &PreparedScene,
        b: &PreparedScene,
        g: u32,
        threshold: u32,
        want_plan: bool,
        known: Option<(u32, Option<(Matching, Vec<(u8, bool)>)>)>,
        tt: &mut HashMap<Packed, u32>,
        path: &mut Vec<PEdit>,
    ) -> Result<u32, u32> {
        let (mut h, routed) = known.unwrap_or_else(|| analyse(node, b));
        if g + h > threshold {
            return Err(g + h);
        }
        if h == 0 {
            return Ok(g);
        }
        match self.shortcut(node, b, routed, want_plan) {
            Shortcut::Done(plan) => {
                path.extend(plan.unwrap_or_default());
                return Ok(g + h);
            }
            // no cheapest correspondence can be realised: one more edit at least
            Shortcut::Blocked => h += 1,
            Shortcut::Unknown => {}
        }
        if g + h > threshold {
            return Err(g + h);
        }
        if let Some(&seen) = tt.get(&node.packed) {
            if seen <= g {
                return Err(u32::MAX);
            }
        }
        tt.insert(node.packed.clone(), g);
        let mut next = u32::MAX;
        for e in moves(&node.packed, self.dims) {
            let child = match apply_packed(&node.packed, &e, self.dims) {
                Ok((p, _)) => PreparedScene::from_packed(p),
                Err(_) => continue,
            };
            path.push(e);
            match self.dfs(&child, b, g + 1, threshold, want_plan, None, tt, path) {
                Ok(total) => return Ok(total),
                Err(n) => next = next.min(n),
            }
            path.pop();
        }
        Err(next)
    }
}

enum Shortcut {
    Done(Option<Vec<PEdit>>),
    Blocked,
    Unknown,
}

/// Minimum number of atomic edits turning `a` into `b` (default bound).
pub fn edit_distance(a: &Scene, b: &Scene, vocab: &Vocabulary) -> Result<DistanceResult, SceneError> {
    edit_distance_bounded(a, b, vocab, DEFAULT_MAX_DEPTH)
}

pub fn edit_distance_bounded(
    a: &Scene,
    b: &Scene,
    vocab: &Vocabulary,
    max_depth: u32,
) -> Result<DistanceResult, SceneError> {
    let search = EditSearch::new(vocab, max_depth);
    Ok(search.distance(&search.prepare(a)?, &search.prepare(b)?))
}

/// A shortest edit plan; each edit uses the indices of the scene produced by
/// the edits before it. `None` when the distance exceeds the default bound.
pub fn plan_edits(a: &Scene, b: &Scene, vocab: &Vocabulary) -> Result<Option<Vec<AtomicEdit>>, SceneError> {
    let search = EditSearch::new(vocab, DEFAULT_MAX_DEPTH);
    Ok(search.plan(&search.prepare(a)?, &search.prepare(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{apply_edit, parse_prompt, SceneSampler};
    use rand::SeedableRng;

    fn d(a: &str, b: &str) -> u32 {
        let v = Vocabulary::default();
        let r = edit_distance(&parse_prompt(a, &v).unwrap(), &parse_prompt(b, &v).unwrap(), &v).unwrap();
        assert!(r.exact);
        r.distance
    }

    #[test]
    fn worked_examples() {
        assert_eq!(d("a red book and two yellow vases", "two purple vases"), 2);
        assert_eq!(d("a red book and two yellow vases", "a red book and two yellow vases"), 0);
        assert_eq!(d("a dog and a black hat, the dog with the black hat", "a dog and a black hat, the dog with the black hat"), 0);
        assert_eq!(d("a dog and a black hat, the dog with the black hat", "a dog and a cat and a black hat, the dog with the black hat"), 1);
        assert_eq!(d("a dog", "three dogs"), 2);
        assert_eq!(d("a dog", "a cat"), 2);
        assert_eq!(d("a red dog and a blue dog", "a red dog and a blue dog"), 0);
    }

    #[test]
    fn collision_needs_a_detour() {
        // swapping the colors costs 2 by correspondence but each recolor
        // collides with the other group, so a third edit is required
        let v = Vocabulary::default();
        let a = parse_prompt("three red dogs and a blue dog", &v).unwrap();
        let b = parse_prompt("a red dog and three blue dogs", &v).unwrap();
        let r = edit_distance(&a, &b, &v).unwrap();
        assert_eq!(r, DistanceResult { distance: 3, exact: true });
        let plan = plan_edits(&a, &b, &v).unwrap().unwrap();
        assert_eq!(plan.len(), 3);
        let capped = edit_distance_bounded(&a, &b, &v, 2).unwrap();
        assert_eq!(capped, DistanceResult { distance: 3, exact: false });
    }

    #[test]
    fn plans_are_shortest_and_valid() {
        let v = Vocabulary::default();
        let sampler = SceneSampler::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let search = EditSearch::new(&v, DEFAULT_MAX_DEPTH);
        for _ in 0..300 {
            let a = sampler.sample(&mut rng, &v);
            let b = sampler.sample(&mut rng, &v);
            let (pa, pb) = (search.prepare(&a).unwrap(), search.prepare(&b).unwrap());
            let r = search.distance(&pa, &pb);
            if !r.exact {
                continue;
            }
            let plan = search.plan(&pa, &pb).unwrap();
            assert_eq!(plan.len() as u32, r.distance);
            let mut s = a.clone();
            for e in &plan {
                s = apply_edit(&s, e, &v).unwrap();
            }
            assert_eq!(s, b);
            assert_eq!(search.distance(&pb, &pa), r, "symmetry");
        }
    }

    #[test]
    fn realisable_plans_are_exact_beyond_the_bound() {
        let v = Vocabulary::default();
        let a = parse_prompt("a dog", &v).unwrap();
        let b = parse_prompt("nine red dogs", &v).unwrap();
        let r = edit_distance_bounded(&a, &b, &v, 3).unwrap();
        assert_eq!(r, DistanceResult { distance: 9, exact: true });
    }
}
