//! Temporal mapping generator.
//!
//! The layer's temporal loop prime factors (LPFs) are handed out bottom-up.
//! Every operand carries a roof: the memory level it is currently filling
//! and the room left there. Each phase assigns one maximal multiset of LPFs
//! that fits under every roof, closes it with a virtual level separator,
//! then moves the tightest roof one memory level up. Reaching the top level
//! (unbounded) ends an operand's climb.

mod search;

use std::collections::BTreeSet;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

pub use search::{
    search, search_exhaustive, search_heuristic, search_iterative, Objective, SearchConfig, SearchOutcome, SearchStats,
    Spread, Strategy,
};

use crate::architecture::{LevelId, MemoryHierarchy, PlacedUnrolling};
use crate::error::{Error, Result};
use crate::extractor::{data_elements, Rational};
use crate::mapping::{capacity_violations, is_even, level_occupancy, padded_bounds, Schedule, VirtualLevel};
use crate::workload::{classify, lpf_factorize_bounds, LayerSpec, LoopDim, Operand, Relevance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConstraint {
    pub operand: Operand,
    pub level: usize,
    /// Temporal loops the level must hold, in any factorization.
    pub loops: Vec<(LoopDim, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmgOptions {
    pub min_shared_utilization: f64,
    pub even_only: bool,
    #[serde(default)]
    pub constraints: Vec<LevelConstraint>,
}

impl Default for TmgOptions {
    fn default() -> Self {
        TmgOptions { min_shared_utilization: 0.7, even_only: false, constraints: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoofEntry {
    pub level: usize,
    /// Room left in blocks of the current tile; `None` at the top level.
    pub capacity: Option<Rational>,
}

impl RoofEntry {
    pub fn blocks(&self) -> Option<u64> {
        self.capacity.map(|c| c.to_integer())
    }
}

pub type Roof = [RoofEntry; 3];

/// A blocking under construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartialScheme {
    pub vlevels: Vec<VirtualLevel>,
    /// Per operand, the virtual-level count closing each finished level.
    pub ends: [Vec<usize>; 3],
    /// Sorted.
    pub remaining: Vec<(LoopDim, u64)>,
}

impl PartialScheme {
    pub fn level(&self, op: Operand) -> usize {
        self.ends[op.index()].len()
    }

    fn with_level(&self, comb: &[(LoopDim, u64)]) -> PartialScheme {
        let mut ps = self.clone();
        if !comb.is_empty() {
            let mut v = comb.to_vec();
            v.sort();
            for l in &v {
                let k = ps.remaining.iter().position(|x| x == l).expect("combination drawn from remaining");
                ps.remaining.remove(k);
            }
            ps.vlevels.push(v);
        }
        ps
    }
}

/// A complete blocking: virtual levels with per-operand cuts, order within
/// each virtual level still free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Blocking {
    pub vlevels: Vec<VirtualLevel>,
    pub ends: [Vec<usize>; 3],
}

impl Blocking {
    pub fn schedule(&self, order: &[VirtualLevel], padded: [u64; 7], placed: &PlacedUnrolling) -> Schedule {
        let mut starts = vec![0usize];
        for v in order {
            starts.push(starts.last().unwrap() + v.len());
        }
        let cuts = [0, 1, 2].map(|o| self.ends[o].iter().map(|&e| starts[e]).collect());
        let groups = placed.groups.iter().map(|g| (g.group.clone(), g.boundary)).collect();
        Schedule::new(order.concat(), cuts, groups, padded)
    }

    /// Virtual levels in canonical (sorted) order.
    pub fn canonical_schedule(&self, padded: [u64; 7], placed: &PlacedUnrolling) -> Schedule {
        self.schedule(&self.vlevels, padded, placed)
    }

    fn merged(vlevels: Vec<VirtualLevel>, ends: [Vec<usize>; 3]) -> Blocking {
        let cuts: BTreeSet<usize> = ends.iter().flatten().copied().collect();
        let mut out: Vec<VirtualLevel> = Vec::new();
        let mut remap = vec![0usize; vlevels.len() + 1];
        let mut cur: VirtualLevel = Vec::new();
        for (i, v) in vlevels.into_iter().enumerate() {
            cur.extend(v);
            if cuts.contains(&(i + 1)) && !cur.is_empty() {
                cur.sort();
                out.push(std::mem::take(&mut cur));
            }
            remap[i + 1] = out.len();
        }
        if !cur.is_empty() {
            cur.sort();
            out.push(cur);
        }
        let ends = ends.map(|e| e.into_iter().map(|x| remap[x]).collect());
        Blocking { vlevels: out, ends }
    }
}

pub struct Generator<'a> {
    pub spec: &'a LayerSpec,
    pub h: &'a MemoryHierarchy,
    pub placed: &'a PlacedUnrolling,
    pub opts: TmgOptions,
    pub padded: [u64; 7],
    lpfs: Vec<(LoopDim, u64)>,
    /// `spatial_below[op][p]`: spatial loops at boundaries `<= p`.
    spatial_below: [Vec<Vec<(LoopDim, u64)>>; 3],
}

impl<'a> Generator<'a> {
    pub fn new(
        spec: &'a LayerSpec,
        h: &'a MemoryHierarchy,
        placed: &'a PlacedUnrolling,
        opts: TmgOptions,
    ) -> Result<Self> {
        let padded = padded_bounds(spec, &placed.unrolling());
        let mut residual = [1u64; 7];
        for d in LoopDim::ALL {
            residual[d.index()] = padded[d.index()] / placed.unrolling().dim_product(d);
        }
        let mut lpfs = lpf_factorize_bounds(&residual);
        lpfs.sort();
        let mut spatial_below: [Vec<Vec<(LoopDim, u64)>>; 3] = Default::default();
        for op in Operand::ALL {
            let n = h.level_count(op);
            for g in &placed.groups {
                if g.boundary[op.index()] >= n {
                    return Err(Error::InvalidMapping(format!(
                        "spatial group {} replicates the top level of {op}",
                        g.group
                    )));
                }
            }
            for p in 0..n {
                let units = placed.units(op, p);
                if units > h.unroll(op, p) {
                    return Err(Error::Infeasible(format!(
                        "operand {op} level {p} needs {units} units, hierarchy provides {}",
                        h.unroll(op, p)
                    )));
                }
                spatial_below[op.index()].push(
                    placed
                        .groups
                        .iter()
                        .filter(|g| g.boundary[op.index()] <= p)
                        .flat_map(|g| g.group.0.iter().copied())
                        .collect(),
                );
            }
        }
        Ok(Generator { spec, h, placed, opts, padded, lpfs, spatial_below })
    }

    pub fn lpfs(&self) -> &[(LoopDim, u64)] {
        &self.lpfs
    }

    pub fn initial(&self) -> PartialScheme {
        PartialScheme { vlevels: Vec::new(), ends: Default::default(), remaining: self.lpfs.clone() }
    }

    fn top(&self, op: Operand) -> usize {
        self.h.top_index(op)
    }

    /// Stored precision of `op` at position `p`. Outputs are final only when
    /// no reduction loop can end up at or above `p`; everything unassigned
    /// lands there.
    fn bits(&self, ps: &PartialScheme, op: Operand, p: usize) -> u64 {
        if op != Operand::O {
            return self.spec.bits(op, false) as u64;
        }
        let ends = &ps.ends[op.index()];
        let start = match p {
            0 => 0,
            _ => ends.get(p - 1).copied().unwrap_or(ps.vlevels.len()),
        };
        let ir = |l: &(LoopDim, u64)| classify(l.0, op) == Relevance::Ir;
        let partial = ps.vlevels[start..].iter().flatten().any(ir)
            || ps.remaining.iter().any(ir)
            || self.placed.groups.iter().any(|g| g.boundary[op.index()] > p && g.group.0.iter().any(ir));
        self.spec.bits(op, partial) as u64
    }

    /// Temporal loops `op` holds at position `p`, counting everything
    /// assigned so far when `p` is not finished yet.
    fn temporal(&self, ps: &PartialScheme, op: Operand, p: usize, extra: &[(LoopDim, u64)]) -> Vec<(LoopDim, u64)> {
        let ends = &ps.ends[op.index()];
        if p < ends.len() {
            ps.vlevels[..ends[p]].concat()
        } else {
            let mut v = ps.vlevels.concat();
            v.extend_from_slice(extra);
            v
        }
    }

    fn tile(&self, ps: &PartialScheme, op: Operand, p: usize, extra: &[(LoopDim, u64)]) -> u64 {
        let mut loops = self.spatial_below[op.index()][p].clone();
        loops.extend(self.temporal(ps, op, p, extra));
        data_elements(op, &loops, self.spec.stride)
    }

    fn occupancy(&self, ps: &PartialScheme, idx: usize, extra: &[(LoopDim, u64)], skip: Option<Operand>) -> u64 {
        self.h.levels[idx]
            .serves
            .iter()
            .filter(|&&op| Some(op) != skip)
            .map(|&op| {
                let p = self.h.position(op, LevelId::OnChip(idx)).unwrap();
                self.tile(ps, op, p, extra) * self.bits(ps, op, p)
            })
            .sum()
    }

    fn fits(&self, ps: &PartialScheme, extra: &[(LoopDim, u64)]) -> bool {
        self.h.levels.iter().enumerate().all(|(idx, l)| {
            let open = l.serves.iter().any(|&op| self.h.position(op, LevelId::OnChip(idx)).unwrap() >= ps.level(op));
            !open || self.occupancy(ps, idx, extra, None) <= l.size_bits()
        })
    }

    pub fn roof(&self, ps: &PartialScheme) -> Roof {
        Operand::ALL.map(|op| {
            let level = ps.level(op);
            let capacity = match self.h.level_id(op, level) {
                LevelId::Top => None,
                LevelId::OnChip(idx) => {
                    let others = self.occupancy(ps, idx, &[], Some(op));
                    let free = self.h.levels[idx].size_bits().saturating_sub(others);
                    Some(Ratio::new(free, self.bits(ps, op, level) * self.tile(ps, op, level, &[])))
                }
            };
            RoofEntry { level, capacity }
        })
    }

    /// Roof after assigning `comb` as the next virtual level.
    pub fn update_roof(&self, ps: &PartialScheme, comb: &[(LoopDim, u64)]) -> Roof {
        self.roof(&ps.with_level(comb))
    }

    /// Every fitting multiset of remaining LPFs to which no further LPF can
    /// be added.
    pub fn maximal_combinations(&self, ps: &PartialScheme) -> Vec<VirtualLevel> {
        if Operand::ALL.iter().all(|&op| ps.level(op) == self.top(op)) {
            return vec![ps.remaining.clone()];
        }
        let mut kinds: Vec<((LoopDim, u64), usize)> = Vec::new();
        for &l in &ps.remaining {
            match kinds.last_mut() {
                Some((k, c)) if *k == l => *c += 1,
                _ => kinds.push((l, 1)),
            }
        }
        let mut out = Vec::new();
        let mut chosen = Vec::new();
        self.combos(ps, &kinds, 0, &mut chosen, &mut vec![0; kinds.len()], &mut out);
        out
    }

    fn combos(
        &self,
        ps: &PartialScheme,
        kinds: &[((LoopDim, u64), usize)],
        k: usize,
        chosen: &mut Vec<(LoopDim, u64)>,
        counts: &mut Vec<usize>,
        out: &mut Vec<VirtualLevel>,
    ) {
        if k == kinds.len() {
            let maximal = kinds.iter().zip(counts.iter()).all(|(&(l, c), &n)| {
                n == c || {
                    chosen.push(l);
                    let f = self.fits(ps, chosen);
                    chosen.pop();
                    !f
                }
            });
            if maximal {
                out.push(chosen.clone());
            }
            return;
        }
        let (l, c) = kinds[k];
        let base = chosen.len();
        for n in 0..=c {
            if n > 0 {
                chosen.push(l);
                if !self.fits(ps, chosen) {
                    break;
                }
            }
            counts[k] = n;
            self.combos(ps, kinds, k + 1, chosen, counts, out);
        }
        chosen.truncate(base);
        counts[k] = 0;
    }

    /// Operands that must cross a level boundary together with `x` to keep
    /// shared levels evenly cut.
    fn coupled(&self, ps: &PartialScheme, x: Operand) -> Option<Vec<Operand>> {
        let mut set = vec![x];
        let mut k = 0;
        while k < set.len() {
            let y = set[k];
            k += 1;
            let p = ps.level(y);
            for (id, delta) in [(self.h.level_id(y, p), 0), (self.h.level_id(y, p + 1), 1)] {
                let LevelId::OnChip(idx) = id else { continue };
                if !self.h.levels[idx].is_shared() {
                    continue;
                }
                for &z in &self.h.levels[idx].serves {
                    let pz = self.h.position(z, id).unwrap();
                    if ps.level(z) + delta != pz {
                        return None;
                    }
                    if !set.contains(&z) {
                        set.push(z);
                    }
                }
            }
        }
        Some(set)
    }

    /// Moves the tightest roof up one level. Outside even-only mode the
    /// move that keeps shared levels even is offered as well, so the uneven
    /// space contains every even blocking.
    pub fn advance_roof(&self, ps: &PartialScheme) -> Vec<PartialScheme> {
        let roof = self.roof(ps);
        let mut cand: Vec<Operand> =
            Operand::ALL.into_iter().filter(|&op| roof[op.index()].capacity.is_some()).collect();
        cand.sort_by(|a, b| {
            let (ra, rb) = (roof[a.index()], roof[b.index()]);
            ra.level.cmp(&rb.level).then(ra.capacity.cmp(&rb.capacity)).then(a.index().cmp(&b.index()))
        });
        let step = |group: Vec<Operand>| {
            let mut next = ps.clone();
            for op in group {
                next.ends[op.index()].push(ps.vlevels.len());
            }
            next
        };
        let mut out = Vec::new();
        if !self.opts.even_only {
            if let Some(&x) = cand.first() {
                out.push(step(vec![x]));
            }
        }
        if let Some(group) = cand.iter().find_map(|&x| self.coupled(ps, x)) {
            let next = step(group);
            if !out.contains(&next) {
                out.push(next);
            }
        }
        out
    }

    fn close(&self, ps: &PartialScheme) -> PartialScheme {
        let mut done = ps.with_level(&ps.remaining.clone());
        for op in Operand::ALL {
            while done.level(op) <= self.top(op) {
                done.ends[op.index()].push(done.vlevels.len());
            }
        }
        done
    }

    /// Closes `ps`, sending the remaining LPFs to the top, and checks the
    /// result against capacities, the shared-level utilization rule and the
    /// user constraints.
    pub fn finalize(&self, ps: &PartialScheme) -> Option<Blocking> {
        let done = self.close(ps);
        let b = Blocking::merged(done.vlevels, done.ends);
        let s = b.canonical_schedule(self.padded, self.placed);
        if !capacity_violations(&s, self.spec, self.h).is_empty() {
            return None;
        }
        let occ = level_occupancy(&s, self.spec, self.h);
        for (idx, l) in self.h.levels.iter().enumerate().filter(|(_, l)| l.is_shared()) {
            let util = occ[&idx] as f64 / l.size_bits() as f64;
            let complete = l.serves.iter().all(|&op| {
                let p = self.h.position(op, LevelId::OnChip(idx)).unwrap();
                s.cuts[op.index()][p] == s.temporal.len() && s.spatial_where(op, |b| b > p).is_empty()
            });
            if util < self.opts.min_shared_utilization && !complete {
                return None;
            }
        }
        if self.opts.even_only && !is_even(&s, self.h) {
            return None;
        }
        for c in &self.opts.constraints {
            if c.level >= s.levels(c.operand) {
                return None;
            }
            let mut want = lpf_factorize_loops(&c.loops);
            let mut have = s.temporal_at(c.operand, c.level).to_vec();
            want.sort();
            have.sort();
            if want != have {
                return None;
            }
        }
        Some(b)
    }

    /// One phase: assign a maximal combination, then advance the roof.
    /// Returns unfinished successors and finished blockings.
    pub fn expand(&self, ps: &PartialScheme) -> (Vec<PartialScheme>, Vec<PartialScheme>) {
        let mut open = Vec::new();
        let mut done = Vec::new();
        for comb in self.maximal_combinations(ps) {
            let next = ps.with_level(&comb);
            if next.remaining.is_empty() {
                done.push(next);
            } else {
                open.extend(self.advance_roof(&next));
            }
        }
        (open, done)
    }

    pub fn generate(&self) -> Vec<Blocking> {
        let mut out = BTreeSet::new();
        let mut stack = vec![self.initial()];
        while let Some(ps) = stack.pop() {
            let (open, done) = self.expand(&ps);
            out.extend(done.iter().filter_map(|d| self.finalize(d)));
            stack.extend(open);
        }
        out.into_iter().collect()
    }
}

fn lpf_factorize_loops(loops: &[(LoopDim, u64)]) -> Vec<(LoopDim, u64)> {
    loops.iter().flat_map(|&(d, f)| crate::workload::prime_factors(f).into_iter().map(move |p| (d, p))).collect()
}

/// All valid blockings, deduplicated and sorted.
pub fn generate_schemes(
    spec: &LayerSpec,
    h: &MemoryHierarchy,
    placed: &PlacedUnrolling,
    opts: &TmgOptions,
) -> Result<Vec<Blocking>> {
    Ok(Generator::new(spec, h, placed, opts.clone())?.generate())
}
