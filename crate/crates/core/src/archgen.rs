//! Memory hierarchy generation: fit pool memories under an area budget,
//! assign operands to them, then pick bandwidth variants from the best
//! mapping's needs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::architecture::{
    total_area, validate_hierarchy, Dram, LevelId, MacModel, MemoryHierarchy, MemoryLevel, MemoryPool, PlacedGroup,
    PlacedUnrolling, SpatialUnrolling,
};
use crate::cost::{evaluate, CostReport};
use crate::error::{Error, Result};
use crate::extractor::Direction;
use crate::mapping::Schedule;
use crate::tmg::{search, SearchConfig, SearchStats};
use crate::workload::{LayerSpec, Operand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSearchConfig {
    pub area_budget_um2: f64,
    pub pe_array: (u64, u64),
    pub mac_energy_pj: f64,
    pub spatial_candidates: Vec<SpatialUnrolling>,
    #[serde(default = "default_max_levels")]
    pub max_levels_per_operand: usize,
    #[serde(default = "default_max_repeat")]
    pub max_instances_per_entry: usize,
    #[serde(default)]
    pub dram: Dram,
}

fn default_max_levels() -> usize {
    3
}

fn default_max_repeat() -> usize {
    3
}

impl ArchSearchConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.area_budget_um2 > 0.0) {
            return Err(Error::InvalidArchitecture("area budget must be positive".into()));
        }
        if self.max_levels_per_operand == 0 || self.max_instances_per_entry == 0 {
            return Err(Error::InvalidArchitecture("level and instance limits must be at least 1".into()));
        }
        if self.pe_array.0 * self.pe_array.1 == 0 {
            return Err(Error::InvalidArchitecture("PE array must be nonempty".into()));
        }
        Ok(())
    }

    pub fn mac(&self) -> MacModel {
        MacModel { array: self.pe_array, mac_energy_pj: self.mac_energy_pj }
    }
}

/// One pool memory at a fixed replication and bandwidth variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExtendedEntry {
    pub entry: usize,
    pub unroll: u64,
    pub variant: usize,
}

impl ExtendedEntry {
    pub fn area(&self, pool: &MemoryPool) -> f64 {
        pool.entries[self.entry].variants[self.variant].area * self.unroll as f64
    }

    pub fn capacity_bits(&self, pool: &MemoryPool) -> u64 {
        pool.entries[self.entry].size_bits * self.unroll
    }
}

/// Every (unroll, variant) option of every entry; unrolls beyond the array
/// are dropped.
pub fn expand_pool(pool: &MemoryPool, pe: (u64, u64)) -> Vec<ExtendedEntry> {
    let mut out = Vec::new();
    for (e, entry) in pool.entries.iter().enumerate() {
        for &unroll in &entry.allowed_unrolls {
            if unroll == 0 || unroll > pe.0 * pe.1 {
                continue;
            }
            for variant in 0..entry.variants.len() {
                out.push(ExtendedEntry { entry: e, unroll, variant });
            }
        }
    }
    out
}

/// Placement options before variant selection.
fn fitting_slots(pool: &MemoryPool, pe: (u64, u64)) -> Vec<(usize, u64, f64)> {
    let mut slots: BTreeMap<(usize, u64), f64> = BTreeMap::new();
    for x in expand_pool(pool, pe) {
        let a = slots.entry((x.entry, x.unroll)).or_insert(f64::INFINITY);
        *a = a.min(x.area(pool));
    }
    slots.into_iter().map(|((e, u), a)| (e, u, a)).collect()
}

fn min_area_variant(pool: &MemoryPool, entry: usize) -> usize {
    let v = &pool.entries[entry].variants;
    (0..v.len()).min_by(|&a, &b| v[a].area.total_cmp(&v[b].area).then(a.cmp(&b))).unwrap()
}

fn ops_label(ops: &[Operand]) -> String {
    ops.iter().map(|o| o.to_string()).collect()
}

/// Operand subsets as bit masks over W, I, O.
fn subset(mask: u8) -> Vec<Operand> {
    Operand::ALL.into_iter().filter(|op| mask & (1 << op.index()) != 0).collect()
}

/// Multisets of slots under the budget, each entry used at most `max_repeat`
/// times, with at most `max_len` members.
fn slot_multisets(slots: &[(usize, u64, f64)], budget: f64, max_repeat: usize, max_len: usize) -> Vec<Vec<usize>> {
    fn rec(
        slots: &[(usize, u64, f64)],
        start: usize,
        area: f64,
        budget: f64,
        per_entry: &mut BTreeMap<usize, usize>,
        max_repeat: usize,
        max_len: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if cur.len() == max_len {
            return;
        }
        for k in start..slots.len() {
            let (e, _, a) = slots[k];
            if area + a > budget || per_entry.get(&e).copied().unwrap_or(0) >= max_repeat {
                continue;
            }
            *per_entry.entry(e).or_default() += 1;
            cur.push(k);
            rec(slots, k, area + a, budget, per_entry, max_repeat, max_len, cur, out);
            cur.pop();
            *per_entry.get_mut(&e).unwrap() -= 1;
        }
    }
    let mut out = Vec::new();
    rec(slots, 0, 0.0, budget, &mut BTreeMap::new(), max_repeat, max_len, &mut Vec::new(), &mut out);
    out
}

/// Operand subsets for levels listed bottom-up such that every operand has
/// a level, at most `max_levels` of them, capacities strictly increasing
/// and replication non-increasing going up its stack.
fn assignments(levels: &[(u64, u64)], max_levels: usize) -> Vec<Vec<u8>> {
    fn rec(
        levels: &[(u64, u64)],
        max_levels: usize,
        last: &mut [Option<(u64, u64)>; 3],
        count: &mut [usize; 3],
        cur: &mut Vec<u8>,
        out: &mut Vec<Vec<u8>>,
    ) {
        let k = cur.len();
        if k == levels.len() {
            if count.iter().all(|&c| c > 0) {
                out.push(cur.clone());
            }
            return;
        }
        let (size, unroll) = levels[k];
        'mask: for mask in 1u8..8 {
            let ops = subset(mask);
            for op in &ops {
                let o = op.index();
                if count[o] == max_levels || last[o].is_some_and(|(s, u)| s >= size || u < unroll) {
                    continue 'mask;
                }
            }
            let saved = (*last, *count);
            for op in &ops {
                last[op.index()] = Some((size, unroll));
                count[op.index()] += 1;
            }
            cur.push(mask);
            rec(levels, max_levels, last, count, cur, out);
            cur.pop();
            (*last, *count) = saved;
        }
    }
    let mut out = Vec::new();
    rec(levels, max_levels, &mut [None; 3], &mut [0; 3], &mut Vec::new(), &mut out);
    out
}

/// All hierarchies the pool can build under the budget, sorted by key. The
/// variant of every level is the smallest-area one; `optimize_bandwidth`
/// picks the final variant.
pub fn enumerate_hierarchies(pool: &MemoryPool, cfg: &ArchSearchConfig) -> Vec<MemoryHierarchy> {
    let slots = fitting_slots(pool, cfg.pe_array);
    let max_len = 3 * cfg.max_levels_per_operand;
    let mut out: BTreeMap<String, MemoryHierarchy> = BTreeMap::new();
    for ms in slot_multisets(&slots, cfg.area_budget_um2, cfg.max_instances_per_entry, max_len) {
        // bottom-up by per-unit capacity, more replicated first
        let mut members: Vec<(usize, u64)> = ms.iter().map(|&k| (slots[k].0, slots[k].1)).collect();
        members.sort_by_key(|&(e, u)| (pool.entries[e].size_bits, std::cmp::Reverse(u), e));
        let shape: Vec<(u64, u64)> = members.iter().map(|&(e, u)| (pool.entries[e].size_bits, u)).collect();
        for masks in assignments(&shape, cfg.max_levels_per_operand) {
            let levels = members
                .iter()
                .zip(&masks)
                .map(|(&(e, u), &m)| {
                    let serves = subset(m);
                    MemoryLevel {
                        name: format!("{}.{}", pool.entries[e].name, ops_label(&serves)),
                        entry: pool.entries[e].clone(),
                        variant: min_area_variant(pool, e),
                        unroll: u,
                        serves,
                        double_buffered: false,
                    }
                })
                .collect();
            let h = MemoryHierarchy::from_levels(levels, cfg.dram);
            if total_area(&h) <= cfg.area_budget_um2 && validate_hierarchy(&h).is_ok() {
                out.entry(h.key()).or_insert(h);
            }
        }
    }
    out.into_values().collect()
}

/// Places a spatial unrolling on a hierarchy: per operand, the groups
/// replicate every bottom level with enough instances.
pub fn place_spatial(h: &MemoryHierarchy, su: &SpatialUnrolling) -> PlacedUnrolling {
    let total = su.product();
    let b = Operand::ALL.map(|op| (0..h.top_index(op)).take_while(|&i| h.unroll(op, i) >= total).count());
    PlacedUnrolling { groups: su.groups.iter().map(|g| PlacedGroup { group: g.clone(), boundary: b }).collect() }
}

/// Read and write bandwidth each physical level must sustain, summed over
/// the operands it serves.
pub fn level_bandwidth_needs(h: &MemoryHierarchy, report: &CostReport) -> Vec<[f64; 2]> {
    let mut need = vec![[0.0f64; 2]; h.levels.len()];
    for n in &report.req_bw {
        if let LevelId::OnChip(idx) = h.level_id(n.operand, n.level) {
            let d = match n.direction {
                Direction::Read => 0,
                Direction::Write => 1,
            };
            need[idx][d] += n.bits_per_cycle;
        }
    }
    need
}

/// Per level, the cheapest variant meeting the needs that keeps the total
/// area within `budget`; when none meets them, the widest affordable one.
pub fn optimize_bandwidth(h: &MemoryHierarchy, needs: &[[f64; 2]], budget: f64) -> MemoryHierarchy {
    let mut out = h.clone();
    for (idx, need) in needs.iter().enumerate() {
        let entry = out.levels[idx].entry.clone();
        let unroll = out.levels[idx].unroll as f64;
        let base = total_area(&out) - entry.variants[out.levels[idx].variant].area * unroll;
        let affordable: Vec<usize> =
            (0..entry.variants.len()).filter(|&v| base + entry.variants[v].area * unroll <= budget).collect();
        let meets = |v: &usize| {
            let bw = entry.variants[*v].bw;
            bw[0] as f64 >= need[0] && bw[1] as f64 >= need[1]
        };
        let cost = |v: usize| entry.variants[v].cost[0] + entry.variants[v].cost[1];
        let pick = affordable
            .iter()
            .copied()
            .filter(meets)
            .min_by(|&a, &b| cost(a).total_cmp(&cost(b)).then(a.cmp(&b)))
            .or_else(|| {
                affordable.iter().copied().max_by(|&a, &b| {
                    let (ba, bb) = (entry.variants[a].bw, entry.variants[b].bw);
                    (ba[0].min(ba[1]), ba[0] + ba[1]).cmp(&(bb[0].min(bb[1]), bb[0] + bb[1])).then(b.cmp(&a))
                })
            });
        if let Some(v) = pick {
            out.levels[idx].variant = v;
        }
    }
    out
}

/// The widest variant of every level, used while the mapping is searched.
fn widest(h: &MemoryHierarchy) -> MemoryHierarchy {
    let mut out = h.clone();
    for l in &mut out.levels {
        let v = &l.entry.variants;
        l.variant = (0..v.len()).max_by_key(|&k| (v[k].bw[0].min(v[k].bw[1]), v[k].bw[0] + v[k].bw[1])).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub key: String,
    pub area_um2: f64,
    pub energy_pj: f64,
    pub latency: u64,
    pub utilization: f64,
    pub hierarchy: MemoryHierarchy,
    pub spatial: PlacedUnrolling,
    pub schedule: Schedule,
    pub report: CostReport,
    pub stats: SearchStats,
}

/// Best design point of one hierarchy over the spatial candidates.
pub fn evaluate_hierarchy(
    h: &MemoryHierarchy,
    spec: &LayerSpec,
    cfg: &ArchSearchConfig,
    search_cfg: &SearchConfig,
) -> Option<DesignPoint> {
    let mac = cfg.mac();
    let wide = widest(h);
    let mut best: Option<DesignPoint> = None;
    for su in &cfg.spatial_candidates {
        if su.product() > mac.size() {
            continue;
        }
        let placed = place_spatial(h, su);
        let Ok(found) = search(spec, &wide, &placed, &mac, search_cfg) else { continue };
        let needs = level_bandwidth_needs(&wide, &found.report);
        let fixed = optimize_bandwidth(h, &needs, cfg.area_budget_um2);
        let Ok(report) = evaluate(&found.schedule, spec, &fixed, &mac) else { continue };
        let point = DesignPoint {
            key: fixed.key(),
            area_um2: total_area(&fixed),
            energy_pj: report.energy_total_pj,
            latency: report.latency_total,
            utilization: report.utilization,
            hierarchy: fixed,
            spatial: placed,
            schedule: found.schedule,
            report,
            stats: found.stats,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                let (x, y) = (search_cfg.objective.score(&point.report), search_cfg.objective.score(&b.report));
                x.total_cmp(&y).then_with(|| point.schedule.to_text().cmp(&b.schedule.to_text())).is_lt()
            }
        };
        if better {
            best = Some(point);
        }
    }
    best
}

/// Every hierarchy the pool allows, each with its best mapping, sorted by
/// hierarchy key.
pub fn explore(
    pool: &MemoryPool,
    spec: &LayerSpec,
    cfg: &ArchSearchConfig,
    search_cfg: &SearchConfig,
) -> Result<Vec<DesignPoint>> {
    cfg.check()?;
    let hierarchies = enumerate_hierarchies(pool, cfg);
    let mut points: Vec<DesignPoint> =
        hierarchies.par_iter().filter_map(|h| evaluate_hierarchy(h, spec, cfg, search_cfg)).collect();
    points.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(points)
}

/// Indices of the nondominated points over (energy, latency, area), one per
/// distinct triple, ordered by energy, latency, then key.
pub fn pareto_front<T>(items: &[T], f: impl Fn(&T) -> (f64, u64, f64, &str)) -> Vec<usize> {
    let dominates = |a: &(f64, u64, f64, &str), b: &(f64, u64, f64, &str)| {
        a.0 <= b.0 && a.1 <= b.1 && a.2 <= b.2 && (a.0 < b.0 || a.1 < b.1 || a.2 < b.2)
    };
    let vals: Vec<_> = items.iter().map(&f).collect();
    let mut keep: Vec<usize> = (0..vals.len()).filter(|&i| !vals.iter().any(|v| dominates(v, &vals[i]))).collect();
    keep.sort_by(|&i, &j| {
        let (a, b) = (&vals[i], &vals[j]);
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)).then(a.3.cmp(b.3))
    });
    keep.dedup_by(|j, i| {
        let (a, b) = (&vals[*i], &vals[*j]);
        a.0 == b.0 && a.1 == b.1 && a.2 == b.2
    });
    keep
}

pub fn pareto(points: &[DesignPoint]) -> Vec<DesignPoint> {
    pareto_front(points, |p| (p.energy_pj, p.latency, p.area_um2, p.key.as_str()))
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}
