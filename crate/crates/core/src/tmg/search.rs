use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Blocking, Generator, PartialScheme, TmgOptions};
use crate::architecture::{MacModel, MemoryHierarchy, PlacedUnrolling};
use crate::cost::{evaluate_with, CostReport};
use crate::error::{Error, Result};
use crate::extractor::{extract, reuse_factors};
use crate::mapping::{enumerate_permutations, Schedule, VirtualLevel};
use crate::workload::{classify, LayerSpec, Operand, Relevance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Exhaustive,
    Heuristic,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Energy,
    Latency,
    Edp,
}

impl Objective {
    pub fn score(self, r: &CostReport) -> f64 {
        match self {
            Objective::Energy => r.energy_total_pj,
            Objective::Latency => r.latency_total as f64,
            Objective::Edp => r.energy_total_pj * r.latency_total as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "default_beam")]
    pub beam: usize,
    #[serde(default)]
    pub tmg: TmgOptions,
}

fn default_beam() -> usize {
    100
}

impl SearchConfig {
    pub fn new(strategy: Strategy) -> Self {
        SearchConfig { strategy, objective: Objective::Energy, beam: default_beam(), tmg: TmgOptions::default() }
    }
}

/// Range of energy and latency over every evaluated complete schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub energy_min: f64,
    pub energy_max: f64,
    pub latency_min: u64,
    pub latency_max: u64,
}

impl Spread {
    fn of(r: &CostReport) -> Self {
        Spread {
            energy_min: r.energy_total_pj,
            energy_max: r.energy_total_pj,
            latency_min: r.latency_total,
            latency_max: r.latency_total,
        }
    }

    fn merge(a: Option<Spread>, b: Option<Spread>) -> Option<Spread> {
        match (a, b) {
            (Some(a), Some(b)) => Some(Spread {
                energy_min: a.energy_min.min(b.energy_min),
                energy_max: a.energy_max.max(b.energy_max),
                latency_min: a.latency_min.min(b.latency_min),
                latency_max: a.latency_max.max(b.latency_max),
            }),
            (a, b) => a.or(b),
        }
    }

    pub fn energy_ratio(&self) -> f64 {
        self.energy_max / self.energy_min
    }

    pub fn latency_ratio(&self) -> f64 {
        self.latency_max as f64 / self.latency_min as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Blockings produced by the generator.
    pub blockings: u64,
    /// Blockings surviving pruning.
    pub kept_blockings: u64,
    /// Complete schedules (blocking x ordering) considered.
    pub candidates: u64,
    /// Cost-model evaluations of complete schedules.
    pub evaluated: u64,
    /// Evaluations of closed partial schemes (iterative search only).
    #[serde(default)]
    pub partial_evaluated: u64,
    pub spread: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub schedule: Schedule,
    pub report: CostReport,
    pub stats: SearchStats,
}

struct Scored {
    score: f64,
    schedule: Schedule,
    report: CostReport,
}

fn order(a: &Scored, b: &Scored) -> Ordering {
    a.score.total_cmp(&b.score).then_with(|| {
        if a.schedule == b.schedule {
            Ordering::Equal
        } else {
            a.schedule.to_text().cmp(&b.schedule.to_text())
        }
    })
}

#[derive(Default)]
struct Acc {
    best: Option<Scored>,
    evaluated: u64,
    spread: Option<Spread>,
}

impl Acc {
    fn push(&mut self, s: Scored) {
        self.evaluated += 1;
        self.spread = Spread::merge(self.spread, Some(Spread::of(&s.report)));
        self.best = match self.best.take() {
            Some(b) if order(&b, &s) != Ordering::Greater => Some(b),
            _ => Some(s),
        };
    }

    fn merge(mut a: Acc, b: Acc) -> Acc {
        a.evaluated += b.evaluated;
        a.spread = Spread::merge(a.spread, b.spread);
        if let Some(bb) = b.best {
            a.best = match a.best.take() {
                Some(ab) if order(&ab, &bb) != Ordering::Greater => Some(ab),
                _ => Some(bb),
            };
        }
        a
    }
}

struct Ctx<'a> {
    gen: Generator<'a>,
    mac: &'a MacModel,
    objective: Objective,
}

impl Ctx<'_> {
    fn eval(&self, s: Schedule) -> Scored {
        let info = extract(&s, self.gen.spec, self.gen.h);
        let report = evaluate_with(&s, self.gen.spec, self.gen.h, self.mac, &info);
        Scored { score: self.objective.score(&report), schedule: s, report }
    }

    fn schedule(&self, b: &Blocking, order: &[VirtualLevel]) -> Schedule {
        b.schedule(order, self.gen.padded, self.gen.placed)
    }

    fn eval_orders(&self, b: &Blocking, lists: &[Vec<VirtualLevel>]) -> Acc {
        let mut acc = Acc::default();
        for_each_order(lists, |o| acc.push(self.eval(self.schedule(b, o))));
        acc
    }
}

fn for_each_order(lists: &[Vec<VirtualLevel>], mut f: impl FnMut(&[VirtualLevel])) {
    let mut idx = vec![0usize; lists.len()];
    let mut cur: Vec<VirtualLevel> = lists.iter().map(|l| l[0].clone()).collect();
    loop {
        f(&cur);
        let mut k = 0;
        loop {
            if k == lists.len() {
                return;
            }
            idx[k] += 1;
            if idx[k] < lists[k].len() {
                cur[k] = lists[k][idx[k]].clone();
                break;
            }
            idx[k] = 0;
            cur[k] = lists[k][0].clone();
            k += 1;
        }
    }
}

fn order_count(lists: &[Vec<VirtualLevel>]) -> u64 {
    lists.iter().map(|l| l.len() as u64).product()
}

/// Orderings of a virtual level that keep one operand stationary: its
/// irrelevant loops outermost, one ordering per operand, deduplicated.
pub fn stationary_orders(v: &VirtualLevel) -> Vec<VirtualLevel> {
    let mut out: Vec<VirtualLevel> = Vec::new();
    for op in Operand::ALL {
        let mut o = v.clone();
        o.sort_by_key(|l| (classify(l.0, op) == Relevance::Ir, *l));
        if !out.contains(&o) {
            out.push(o);
        }
    }
    out
}

/// Whether W or O has reuse 1 at a level that is neither innermost nor
/// outermost: such a level only adds accesses.
fn useless_level(s: &Schedule, spec: &LayerSpec) -> bool {
    [Operand::W, Operand::O].iter().any(|&op| {
        // levels above the last one holding loops only pass data through once
        let outer = (0..=s.top(op)).rev().find(|&i| !s.temporal_at(op, i).is_empty()).unwrap_or(0);
        (1..outer).any(|i| reuse_factors(s, spec, op, i).is_ok_and(|r| *r.2.numer() == *r.2.denom()))
    })
}

fn finish(ctx: &Ctx, acc: Acc, blockings: u64, kept: u64, candidates: u64) -> Result<SearchOutcome> {
    let best = acc.best.ok_or_else(|| Error::Infeasible(no_mapping(ctx)))?;
    Ok(SearchOutcome {
        schedule: best.schedule,
        report: best.report,
        stats: SearchStats {
            blockings,
            kept_blockings: kept,
            candidates,
            evaluated: acc.evaluated,
            partial_evaluated: 0,
            spread: acc.spread,
        },
    })
}

fn no_mapping(ctx: &Ctx) -> String {
    format!("no valid temporal mapping fits hierarchy {}", ctx.gen.h.key())
}

fn context<'a>(
    spec: &'a LayerSpec,
    h: &'a MemoryHierarchy,
    placed: &'a PlacedUnrolling,
    mac: &'a MacModel,
    cfg: &SearchConfig,
) -> Result<Ctx<'a>> {
    let used = placed.unrolling().product();
    if used > mac.size() {
        return Err(Error::InvalidMapping(format!("spatial unrolling uses {used} MACs, array has {}", mac.size())));
    }
    Ok(Ctx { gen: Generator::new(spec, h, placed, cfg.tmg.clone())?, mac, objective: cfg.objective })
}

pub fn search_exhaustive(
    spec: &LayerSpec,
    h: &MemoryHierarchy,
    placed: &PlacedUnrolling,
    mac: &MacModel,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    let ctx = context(spec, h, placed, mac, cfg)?;
    let blockings = ctx.gen.generate();
    let lists: Vec<Vec<Vec<VirtualLevel>>> =
        blockings.iter().map(|b| b.vlevels.iter().map(|v| enumerate_permutations(v)).collect()).collect();
    let candidates = lists.iter().map(|l| order_count(l)).sum();
    let acc =
        blockings.par_iter().zip(lists.par_iter()).map(|(b, l)| ctx.eval_orders(b, l)).reduce(Acc::default, Acc::merge);
    let n = blockings.len() as u64;
    finish(&ctx, acc, n, n, candidates)
}

pub fn search_heuristic(
    spec: &LayerSpec,
    h: &MemoryHierarchy,
    placed: &PlacedUnrolling,
    mac: &MacModel,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    let ctx = context(spec, h, placed, mac, cfg)?;
    let blockings = ctx.gen.generate();
    let mut kept: Vec<&Blocking> =
        blockings.iter().filter(|b| !useless_level(&b.canonical_schedule(ctx.gen.padded, placed), spec)).collect();
    if kept.is_empty() {
        kept = blockings.iter().collect();
    }
    let lists: Vec<Vec<Vec<VirtualLevel>>> =
        kept.iter().map(|b| b.vlevels.iter().map(stationary_orders).collect()).collect();
    let candidates = lists.iter().map(|l| order_count(l)).sum();
    let acc =
        kept.par_iter().zip(lists.par_iter()).map(|(b, l)| ctx.eval_orders(b, l)).reduce(Acc::default, Acc::merge);
    finish(&ctx, acc, blockings.len() as u64, kept.len() as u64, candidates)
}

/// Greedy beam search over the roof process. Partial blockings are ranked by
/// the cost of the schedule that sends every unassigned LPF to the top level.
pub fn search_iterative(
    spec: &LayerSpec,
    h: &MemoryHierarchy,
    placed: &PlacedUnrolling,
    mac: &MacModel,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    let ctx = context(spec, h, placed, mac, cfg)?;
    let beam = cfg.beam.max(1);
    let mut frontier = vec![ctx.gen.initial()];
    let mut finished: BTreeSet<Blocking> = BTreeSet::new();
    let mut partial_best: Acc = Acc::default();
    // distinct partial states often close to the same blocking
    let mut scores: BTreeMap<Blocking, f64> = BTreeMap::new();
    let score_all = |blockings: Vec<Blocking>, scores: &mut BTreeMap<Blocking, f64>| -> Vec<f64> {
        let fresh: Vec<Blocking> = blockings
            .iter()
            .filter(|b| !scores.contains_key(*b))
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let new: Vec<f64> =
            fresh.par_iter().map(|b| ctx.eval(b.canonical_schedule(ctx.gen.padded, placed)).score).collect();
        scores.extend(fresh.into_iter().zip(new));
        blockings.iter().map(|b| scores[b]).collect()
    };
    while !frontier.is_empty() {
        let mut open: BTreeSet<PartialScheme> = BTreeSet::new();
        for ps in &frontier {
            let (o, d) = ctx.gen.expand(ps);
            open.extend(o);
            finished.extend(d.iter().filter_map(|x| ctx.gen.finalize(x)));
        }
        let open: Vec<PartialScheme> = open.into_iter().collect();
        if open.len() <= beam {
            frontier = open;
            continue;
        }
        let closed: Vec<Blocking> = open
            .iter()
            .map(|ps| {
                let c = ctx.gen.close(ps);
                Blocking::merged(c.vlevels, c.ends)
            })
            .collect();
        let mut scored: Vec<(f64, usize)> = score_all(closed, &mut scores).into_iter().zip(0..).collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        frontier = scored.into_iter().take(beam).map(|(_, k)| open[k].clone()).collect();
    }
    // rank finished blockings in canonical order, then refine orderings of
    // the best one
    let partial_evaluated = scores.len() as u64;
    let finished: Vec<Blocking> = finished.into_iter().collect();
    let mut ranked: Vec<(f64, usize)> = score_all(finished.clone(), &mut scores).into_iter().zip(0..).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let top: Vec<&Blocking> = ranked.iter().take(1).map(|&(_, k)| &finished[k]).collect();
    let mut candidates = finished.len() as u64;
    for b in top {
        let lists: Vec<Vec<VirtualLevel>> = b.vlevels.iter().map(stationary_orders).collect();
        candidates += order_count(&lists);
        partial_best = Acc::merge(partial_best, ctx.eval_orders(b, &lists));
    }
    partial_best.evaluated += finished.len() as u64;
    let n = finished.len() as u64;
    let mut out = finish(&ctx, partial_best, n, n, candidates)?;
    out.stats.partial_evaluated = partial_evaluated;
    Ok(out)
}

pub fn search(
    spec: &LayerSpec,
    h: &MemoryHierarchy,
    placed: &PlacedUnrolling,
    mac: &MacModel,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    match cfg.strategy {
        Strategy::Exhaustive => search_exhaustive(spec, h, placed, mac, cfg),
        Strategy::Heuristic => search_heuristic(spec, h, placed, mac, cfg),
        Strategy::Iterative => search_iterative(spec, h, placed, mac, cfg),
    }
}
