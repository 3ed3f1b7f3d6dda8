//! Energy, latency, area and memory-size costs of a schedule on a hierarchy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::architecture::{total_area, LevelId, MacModel, MemoryHierarchy, PortType, SpatialUnrolling};
use crate::error::{Error, Result};
use crate::extractor::{data_elements, extract, output_partial_at, Direction, Flow, LoopInfoTable};
use crate::mapping::Schedule;
use crate::workload::{classify, LayerSpec, LoopDim, Operand, Relevance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyEntry {
    pub operand: Operand,
    pub level: usize,
    pub memory: String,
    pub read_pj: f64,
    pub write_pj: f64,
}

impl EnergyEntry {
    pub fn total(&self) -> f64 {
        self.read_pj + self.write_pj
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStall {
    pub memory: String,
    pub cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSize {
    pub operand: Operand,
    pub level: usize,
    pub allocated_bits: u64,
    pub effective_bits: u64,
}

impl EffectiveSize {
    pub fn gatable_fraction(&self) -> f64 {
        if self.allocated_bits == 0 {
            0.0
        } else {
            1.0 - self.effective_bits as f64 / self.allocated_bits as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthNeed {
    pub operand: Operand,
    pub level: usize,
    pub direction: Direction,
    pub bits_per_cycle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub energy_total_pj: f64,
    pub mac_energy_pj: f64,
    pub energy_breakdown: Vec<EnergyEntry>,
    pub area_um2: f64,
    pub latency_total: u64,
    /// Cycles of a perfectly utilized array.
    pub latency_ideal: u64,
    /// Cycles lost to unrolling/layer mismatch and unused array capacity.
    pub stall_spatial: u64,
    pub stall_temporal: Vec<LevelStall>,
    pub utilization: f64,
    pub spatial_utilization: f64,
    pub effective_size: Vec<EffectiveSize>,
    pub req_bw: Vec<BandwidthNeed>,
}

impl CostReport {
    pub fn stall_temporal_total(&self) -> u64 {
        self.stall_temporal.iter().map(|s| s.cycles).sum()
    }

    /// Plot-ready per-level energy table.
    pub fn breakdown_csv(&self) -> String {
        let mut s = String::from("operand,level,memory,read_pj,write_pj,total_pj\n");
        for e in &self.energy_breakdown {
            let _ = writeln!(s, "{},{},{},{},{},{}", e.operand, e.level, e.memory, e.read_pj, e.write_pj, e.total());
        }
        let _ = writeln!(s, "MAC,,,,,{}", self.mac_energy_pj);
        s
    }
}

/// Fraction of array work that maps to real loop iterations.
pub fn spatial_utilization(s: &SpatialUnrolling, spec: &LayerSpec) -> f64 {
    LoopDim::ALL
        .iter()
        .map(|&d| {
            let f = s.dim_product(d);
            let b = spec.bound(d);
            b as f64 / (f * b.div_ceil(f)) as f64
        })
        .product()
}

fn memory_name(h: &MemoryHierarchy, id: LevelId) -> String {
    match id {
        LevelId::OnChip(i) => h.levels[i].name.clone(),
        LevelId::Top => "DRAM".into(),
    }
}

fn flow_energy(h: &MemoryHierarchy, id: LevelId, f: &Flow) -> f64 {
    let dir = f.kind.direction();
    match id {
        LevelId::OnChip(i) => {
            let v = h.levels[i].variant();
            let word = v.read_bw();
            let words = f.units * f.periods * f.bits_per_period().div_ceil(word);
            let e = if dir == Direction::Read { v.read_energy() } else { v.write_energy() };
            words as f64 * e
        }
        LevelId::Top => {
            let e = if dir == Direction::Read { h.dram.read_energy_per_bit } else { h.dram.write_energy_per_bit };
            (f.accesses() * f.bits as u64) as f64 * e
        }
    }
}

pub fn energy(info: &LoopInfoTable, h: &MemoryHierarchy) -> Vec<EnergyEntry> {
    let mut out = Vec::new();
    for op in Operand::ALL {
        for (i, li) in info.ops[op.index()].iter().enumerate() {
            let id = h.level_id(op, i);
            let (mut r, mut w) = (0.0, 0.0);
            for f in &li.flows {
                let e = flow_energy(h, id, f);
                match f.kind.direction() {
                    Direction::Read => r += e,
                    Direction::Write => w += e,
                }
            }
            out.push(EnergyEntry { operand: op, level: i, memory: memory_name(h, id), read_pj: r, write_pj: w });
        }
    }
    out
}

/// Streams grouped per physical channel with the bandwidth serving each.
fn channels(info: &LoopInfoTable, h: &MemoryHierarchy) -> BTreeMap<(LevelId, u8), Vec<(Flow, u64)>> {
    let mut ch: BTreeMap<(LevelId, u8), Vec<(Flow, u64)>> = BTreeMap::new();
    for op in Operand::ALL {
        for (i, li) in info.ops[op.index()].iter().enumerate() {
            let id = h.level_id(op, i);
            for f in &li.flows {
                let dir = f.kind.direction();
                let (bw, key) = match id {
                    LevelId::OnChip(x) => {
                        let l = &h.levels[x];
                        let v = l.variant();
                        let bw = if dir == Direction::Read { v.read_bw() } else { v.write_bw() };
                        let key = match l.entry.port {
                            PortType::DualPort => dir as u8,
                            PortType::SinglePort => 0,
                        };
                        (bw, key)
                    }
                    LevelId::Top => match h.dram.bandwidth_bits {
                        Some(bw) => (bw, 0),
                        None => continue,
                    },
                };
                ch.entry((id, key)).or_default().push((*f, bw));
            }
        }
    }
    ch
}

/// Largest number of streams sharing one finite-bandwidth channel.
pub fn busiest_channel(info: &LoopInfoTable, h: &MemoryHierarchy) -> usize {
    channels(info, h).values().map(Vec::len).max().unwrap_or(0)
}

/// Stall cycles per physical memory, channels of a memory summed.
///
/// A channel's streams need `sum(n * ceil(D / A))` busy cycles and may
/// overlap computation for `max(n * W)` of them.
pub fn temporal_stalls(info: &LoopInfoTable, h: &MemoryHierarchy) -> Vec<LevelStall> {
    let mut per: BTreeMap<LevelId, u64> = BTreeMap::new();
    for ((id, _), streams) in channels(info, h) {
        let busy: u64 = streams.iter().map(|(f, bw)| f.periods * f.bits_per_period().div_ceil(*bw)).sum();
        let budget = streams.iter().map(|(f, _)| f.periods * f.window).max().unwrap_or(0);
        *per.entry(id).or_default() += busy.saturating_sub(budget);
    }
    per.into_iter().map(|(id, cycles)| LevelStall { memory: memory_name(h, id), cycles }).collect()
}

/// Bits per cycle each level needs per direction to run without stalls.
pub fn bandwidth_needs(info: &LoopInfoTable) -> Vec<BandwidthNeed> {
    let mut out = Vec::new();
    for op in Operand::ALL {
        for (i, li) in info.ops[op.index()].iter().enumerate() {
            for dir in [Direction::Read, Direction::Write] {
                let fl: Vec<&Flow> = li.flows.iter().filter(|f| f.kind.direction() == dir).collect();
                let bits: u64 = fl.iter().map(|f| f.periods * f.bits_per_period()).sum();
                let budget = fl.iter().map(|f| f.periods * f.window).max().unwrap_or(0);
                let need = if budget == 0 { 0.0 } else { bits as f64 / budget as f64 };
                out.push(BandwidthNeed { operand: op, level: i, direction: dir, bits_per_cycle: need });
            }
        }
    }
    out
}

/// Smallest capacity that sustains the same refill bandwidth. When the
/// outermost loops of a level are relevant, only the chunk in use plus the
/// chunk being fetched must be resident.
pub fn effective_memory_size(s: &Schedule, spec: &LayerSpec, op: Operand, level: usize) -> EffectiveSize {
    let unit = s.unit_loops(op, level);
    let bits = spec.bits(op, op == Operand::O && output_partial_at(s, level)) as u64;
    let d = data_elements(op, &unit, spec.stride);
    let temporal = s.temporal_at(op, level);
    let top_r = temporal.iter().rev().take_while(|l| classify(l.0, op) != Relevance::Ir).count();
    let mut chunk_loops = s.spatial_where(op, |b| b <= level);
    chunk_loops.extend_from_slice(&s.temporal_upto(op, level)[..s.cuts[op.index()][level] - top_r]);
    let chunk = data_elements(op, &chunk_loops, spec.stride);
    EffectiveSize { operand: op, level, allocated_bits: d * bits, effective_bits: d.min(2 * chunk) * bits }
}

pub fn evaluate(s: &Schedule, spec: &LayerSpec, h: &MemoryHierarchy, mac: &MacModel) -> Result<CostReport> {
    for l in &h.levels {
        if l.variant >= l.entry.variants.len() {
            return Err(Error::MissingCost(format!("memory `{}` has no variant {}", l.name, l.variant)));
        }
    }
    if !(mac.mac_energy_pj >= 0.0) {
        return Err(Error::MissingCost("MAC energy".into()));
    }
    let array = mac.size();
    if s.spatial.product() > array {
        return Err(Error::InvalidMapping(format!(
            "spatial unrolling uses {} MACs, array has {array}",
            s.spatial.product()
        )));
    }
    let info = extract(s, spec, h);
    Ok(evaluate_with(s, spec, h, mac, &info))
}

pub fn evaluate_with(
    s: &Schedule,
    spec: &LayerSpec,
    h: &MemoryHierarchy,
    mac: &MacModel,
    info: &LoopInfoTable,
) -> CostReport {
    let real = spec.total_macs();
    let breakdown = energy(info, h);
    let mac_energy = real as f64 * mac.mac_energy_pj;
    let energy_total = mac_energy + breakdown.iter().map(EnergyEntry::total).sum::<f64>();
    let stalls = temporal_stalls(info, h);
    let cycles = info.cycles;
    let ideal = real.div_ceil(mac.size());
    let total = cycles + stalls.iter().map(|x| x.cycles).sum::<u64>();
    let mut eff = Vec::new();
    for op in Operand::ALL {
        for i in 0..s.top(op) {
            eff.push(effective_memory_size(s, spec, op, i));
        }
    }
    CostReport {
        energy_total_pj: energy_total,
        mac_energy_pj: mac_energy,
        energy_breakdown: breakdown,
        area_um2: total_area(h),
        latency_total: total,
        latency_ideal: ideal,
        stall_spatial: cycles.saturating_sub(ideal),
        stall_temporal: stalls,
        utilization: real as f64 / (mac.size() * total) as f64,
        spatial_utilization: spatial_utilization(&s.spatial, spec),
        effective_size: eff,
        req_bw: bandwidth_needs(info),
    }
}
