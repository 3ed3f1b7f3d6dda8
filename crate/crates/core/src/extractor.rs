//! Loop-relevance based extraction of per-level data sizes, reuse, unit
//! counts, access counts and bandwidth requirements.
//!
//! Access counting assumes blocking fully determines residency: every period
//! of a level (one iteration of the temporal loops above it) the level is
//! refilled with its whole tile, and every period of the level below, the
//! level feeds the lower tile. Outputs additionally read back partial sums
//! to the level below and write them back from the level above whenever a
//! tile is revisited.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::architecture::MemoryHierarchy;
use crate::error::{Error, Result};
use crate::mapping::Schedule;
use crate::workload::{classify, LayerSpec, LoopDim, Operand, Relevance};

pub type Rational = Ratio<u64>;

fn prod(loops: &[(LoopDim, u64)]) -> u64 {
    loops.iter().map(|l| l.1).product()
}

fn prod_dim(loops: &[(LoopDim, u64)], d: LoopDim) -> u64 {
    loops.iter().filter(|l| l.0 == d).map(|l| l.1).product()
}

fn prod_rel(loops: &[(LoopDim, u64)], op: Operand, rel: Relevance) -> u64 {
    loops.iter().filter(|l| classify(l.0, op) == rel).map(|l| l.1).product()
}

/// Distinct input coordinates along one axis when `po` output positions and
/// `pf` filter taps are covered with stride `s`.
fn input_span(po: u64, pf: u64, s: u64) -> u64 {
    s.min(pf) * (po - 1) + pf
}

/// Distinct elements of `op` touched by the iteration space of `loops`.
pub fn data_elements(op: Operand, loops: &[(LoopDim, u64)], stride: (u64, u64)) -> u64 {
    use LoopDim::*;
    match op {
        Operand::I => {
            let p = |d| prod_dim(loops, d);
            p(B) * p(C) * input_span(p(OX), p(FX), stride.0) * input_span(p(OY), p(FY), stride.1)
        }
        _ => prod_rel(loops, op, Relevance::R),
    }
}

/// MACs per distinct element over the iteration space of `loops`.
pub fn compute_ratio(op: Operand, loops: &[(LoopDim, u64)], stride: (u64, u64)) -> Rational {
    Ratio::new(prod(loops), data_elements(op, loops, stride))
}

/// Product of ir factors accumulated at or above output level `level`.
fn output_reduction_above(s: &Schedule, level: usize) -> u64 {
    let op = Operand::O;
    let temporal = if level == 0 { &s.temporal[..] } else { s.temporal_above(op, level - 1) };
    prod_rel(temporal, op, Relevance::Ir) * prod_rel(&s.spatial_where(op, |b| b > level), op, Relevance::Ir)
}

/// Whether outputs stored at `level` are still partial sums.
pub fn output_partial_at(s: &Schedule, level: usize) -> bool {
    output_reduction_above(s, level) > 1
}

/// Whether outputs drained from `level` to the level above are partial.
pub fn output_drain_partial(s: &Schedule, level: usize) -> bool {
    let op = Operand::O;
    level < s.top(op)
        && prod_rel(s.temporal_above(op, level), op, Relevance::Ir)
            * prod_rel(&s.spatial_where(op, |b| b > level), op, Relevance::Ir)
            > 1
}

/// Product of the ir loops sitting outermost among a level's temporal loops.
pub fn top_ir_product(s: &Schedule, op: Operand, level: usize) -> u64 {
    s.temporal_at(op, level).iter().rev().take_while(|l| classify(l.0, op) == Relevance::Ir).map(|l| l.1).product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrPattern {
    None,
    DiagonalBroadcast,
    FifoTemporal,
    FifoSpatiotemporal,
}

/// Input reuse pattern created by the pr pairs around `level`.
pub fn detect_pr_pattern(s: &Schedule, level: usize) -> PrPattern {
    use LoopDim::*;
    let op = Operand::I;
    let spatial = s.spatial_where(op, |b| b <= level + 1);
    let temporal = s.temporal_at(op, level);
    let has = |ls: &[(LoopDim, u64)], d| ls.iter().any(|l| l.0 == d);
    let pairs = [(OX, FX), (OY, FY)];
    if pairs.iter().any(|&(a, b)| has(&spatial, a) && has(&spatial, b)) {
        return PrPattern::DiagonalBroadcast;
    }
    let below = s.spatial_where(op, |b| b <= level);
    if pairs.iter().any(|&(a, b)| (has(&below, a) && has(temporal, b)) || (has(&below, b) && has(temporal, a))) {
        return PrPattern::FifoSpatiotemporal;
    }
    if pairs.iter().any(|&(a, b)| has(temporal, a) && has(temporal, b)) {
        return PrPattern::FifoTemporal;
    }
    PrPattern::None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    /// W/I: read to the level below (or the MACs).
    Feed,
    /// W/I: written from the level above.
    Fill,
    /// O: written from the level below (or the MACs).
    Collect,
    /// O: partial sums read back to the level below.
    Readback,
    /// O: read to the level above.
    Drain,
    /// O: partial sums written back from the level above.
    Refill,
}

impl FlowKind {
    pub fn direction(self) -> Direction {
        match self {
            FlowKind::Feed | FlowKind::Readback | FlowKind::Drain => Direction::Read,
            _ => Direction::Write,
        }
    }
}

/// One periodic transfer stream of a memory unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flow {
    pub kind: FlowKind,
    /// Elements per period per unit.
    pub elements: u64,
    /// Periods per unit.
    pub periods: u64,
    pub units: u64,
    pub bits: u32,
    /// Cycles available per period, given the double-buffering of the tile
    /// being replaced.
    pub window: u64,
}

impl Flow {
    pub fn accesses(&self) -> u64 {
        self.elements * self.periods * self.units
    }

    pub fn bits_per_period(&self) -> u64 {
        self.elements * self.bits as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub data_size_unit: u64,
    pub data_size_total: u64,
    pub mac_ops: u64,
    pub turnaround: u64,
    pub reuse_temporal: Rational,
    pub reuse_spatial: Rational,
    pub reuse_total: Rational,
    pub units_total: u64,
    pub units_duplicate: u64,
    pub units_unique: u64,
    pub access_read: u64,
    pub access_write: u64,
    /// Refill bandwidth from the level above, bits per cycle.
    pub req_bw_no_db: Rational,
    pub req_bw_db: Rational,
    pub top_ir_product: u64,
    pub partial: bool,
    pub pr_pattern: PrPattern,
    pub flows: Vec<Flow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopInfoTable {
    /// Indexed by `Operand::index()`, bottom-up.
    pub ops: [Vec<LevelInfo>; 3],
    /// Reuse obtained by spatial loops feeding the MACs directly.
    pub mac_spatial_reuse: [Rational; 3],
    /// MACs of the padded loop nest.
    pub macs: u64,
    pub cycles: u64,
}

impl LoopInfoTable {
    pub fn level(&self, op: Operand, level: usize) -> Result<&LevelInfo> {
        let v = &self.ops[op.index()];
        v.get(level).ok_or(Error::LevelOutOfRange { operand: op, level, levels: v.len() })
    }
}

fn check_level(s: &Schedule, op: Operand, level: usize) -> Result<()> {
    if level < s.levels(op) {
        Ok(())
    } else {
        Err(Error::LevelOutOfRange { operand: op, level, levels: s.levels(op) })
    }
}

/// Loops of the total tile at `level`: the unit tile plus the spatial loops
/// replicating the level.
fn total_loops(s: &Schedule, op: Operand, level: usize) -> Vec<(LoopDim, u64)> {
    let mut v = s.unit_loops(op, level);
    v.extend(s.spatial_where(op, |b| b == level + 1));
    v
}

pub fn data_size_unit(s: &Schedule, spec: &LayerSpec, op: Operand, level: usize) -> Result<u64> {
    check_level(s, op, level)?;
    Ok(data_elements(op, &s.unit_loops(op, level), spec.stride))
}

pub fn data_size_total(s: &Schedule, spec: &LayerSpec, op: Operand, level: usize) -> Result<u64> {
    check_level(s, op, level)?;
    Ok(data_elements(op, &total_loops(s, op, level), spec.stride))
}

pub fn mac_ops(s: &Schedule, op: Operand, level: usize) -> Result<u64> {
    check_level(s, op, level)?;
    Ok(prod(&total_loops(s, op, level)))
}

pub fn turnaround_cycles(s: &Schedule, op: Operand, level: usize) -> Result<u64> {
    check_level(s, op, level)?;
    Ok(prod(s.temporal_upto(op, level)))
}

/// `(temporal, spatial, total)` reuse at a level.
pub fn reuse_factors(
    s: &Schedule,
    spec: &LayerSpec,
    op: Operand,
    level: usize,
) -> Result<(Rational, Rational, Rational)> {
    check_level(s, op, level)?;
    let cr = |l: &[(LoopDim, u64)]| compute_ratio(op, l, spec.stride);
    let below = cr(&s.feed_loops(op, level));
    let unit = cr(&s.unit_loops(op, level));
    let total = cr(&total_loops(s, op, level));
    Ok((unit / below, total / unit, total / below))
}

/// `(total, duplicate, unique)` unit counts at a level.
pub fn unit_counts(s: &Schedule, op: Operand, level: usize) -> Result<(u64, u64, u64)> {
    check_level(s, op, level)?;
    let above = s.spatial_where(op, |b| b > level);
    let dup = prod_rel(&above, op, Relevance::Ir);
    let total = prod(&above);
    Ok((total, dup, total / dup))
}

fn level_window(s: &Schedule, h: &MemoryHierarchy, op: Operand, level: usize) -> u64 {
    let t = prod(s.temporal_upto(op, level));
    let db = h.on_chip(op, level).is_some_and(|l| l.double_buffered);
    if db {
        t
    } else {
        t / top_ir_product(s, op, level)
    }
}

/// Transfer streams of one operand at one level.
pub fn flows(s: &Schedule, spec: &LayerSpec, h: &MemoryHierarchy, op: Operand, level: usize) -> Vec<Flow> {
    let st = spec.stride;
    let top = s.top(op);
    let units = prod(&s.spatial_where(op, |b| b > level));
    let t_from = prod(&s.temporal[s.level_range(op, level).start..]);
    let t_above = prod(s.temporal_above(op, level));
    let below = data_elements(op, &s.feed_loops(op, level), st);
    let unit = data_elements(op, &s.unit_loops(op, level), st);
    let below_window = if level == 0 { 1 } else { level_window(s, h, op, level - 1) };
    let own_window = level_window(s, h, op, level);
    let flow = |kind, elements, periods, bits, window| Flow { kind, elements, periods, units, bits, window };

    let mut out = Vec::new();
    if op != Operand::O {
        let bits = spec.bits(op, false);
        out.push(flow(FlowKind::Feed, below, t_from, bits, below_window));
        if level < top {
            out.push(flow(FlowKind::Fill, unit, t_above, bits, own_window));
        }
        return out;
    }

    let r_from = prod_rel(&s.temporal[s.level_range(op, level).start..], op, Relevance::R);
    let r_above = prod_rel(s.temporal_above(op, level), op, Relevance::R);
    let stored = spec.bits(op, output_partial_at(s, level));
    let partial = spec.bits(op, true);
    out.push(flow(FlowKind::Collect, below, t_from, stored, below_window));
    if t_from > r_from {
        out.push(flow(FlowKind::Readback, below, t_from - r_from, partial, below_window));
    }
    if level < top {
        let drained = spec.bits(op, output_drain_partial(s, level));
        out.push(flow(FlowKind::Drain, unit, t_above, drained, own_window));
        if t_above > r_above {
            out.push(flow(FlowKind::Refill, unit, t_above - r_above, partial, own_window));
        }
    }
    out
}

/// Refill bandwidth (bits/cycle) a level needs from the level above.
pub fn required_bandwidth(
    s: &Schedule,
    spec: &LayerSpec,
    op: Operand,
    level: usize,
    double_buffered: bool,
) -> Result<Rational> {
    check_level(s, op, level)?;
    if level == s.top(op) {
        return Ok(Ratio::from_integer(0));
    }
    let bits = spec.bits(op, op == Operand::O && output_partial_at(s, level)) as u64;
    let d = data_elements(op, &s.unit_loops(op, level), spec.stride) * bits;
    let t = prod(s.temporal_upto(op, level));
    let window = if double_buffered { t } else { t / top_ir_product(s, op, level) };
    Ok(Ratio::new(d, window))
}

pub fn extract(s: &Schedule, spec: &LayerSpec, h: &MemoryHierarchy) -> LoopInfoTable {
    let mut ops: [Vec<LevelInfo>; 3] = Default::default();
    let mut mac_spatial_reuse = [Ratio::from_integer(1); 3];
    for op in Operand::ALL {
        mac_spatial_reuse[op.index()] = compute_ratio(op, &s.spatial_where(op, |b| b == 0), spec.stride);
        for i in 0..s.levels(op) {
            let (rt, rs, rtot) = reuse_factors(s, spec, op, i).unwrap();
            let (ut, ud, uu) = unit_counts(s, op, i).unwrap();
            let fl = flows(s, spec, h, op, i);
            let count = |d: Direction| fl.iter().filter(|f| f.kind.direction() == d).map(Flow::accesses).sum();
            ops[op.index()].push(LevelInfo {
                data_size_unit: data_size_unit(s, spec, op, i).unwrap(),
                data_size_total: data_size_total(s, spec, op, i).unwrap(),
                mac_ops: mac_ops(s, op, i).unwrap(),
                turnaround: turnaround_cycles(s, op, i).unwrap(),
                reuse_temporal: rt,
                reuse_spatial: rs,
                reuse_total: rtot,
                units_total: ut,
                units_duplicate: ud,
                units_unique: uu,
                access_read: count(Direction::Read),
                access_write: count(Direction::Write),
                req_bw_no_db: required_bandwidth(s, spec, op, i, false).unwrap(),
                req_bw_db: required_bandwidth(s, spec, op, i, true).unwrap(),
                top_ir_product: top_ir_product(s, op, i),
                partial: op == Operand::O && output_partial_at(s, i),
                pr_pattern: if op == Operand::I { detect_pr_pattern(s, i) } else { PrPattern::None },
                flows: fl,
            });
        }
    }
    LoopInfoTable { ops, mac_spatial_reuse, macs: s.padded_macs(), cycles: s.total_temporal() }
}
