//! Brute-force loop-nest simulation used as ground truth.
//!
//! The nest is executed literally: every cycle of the common temporal loop
//! sequence, every lane of the spatial unrolling, every MAC's operand
//! coordinates. Per operand level, transfers are counted by grouping the
//! touched coordinates per memory unit and per period; nothing is derived
//! from tile formulas.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::architecture::{LevelId, MemoryHierarchy};
use crate::error::{Error, Result};
use crate::mapping::{validate_mapping, MappingScheme, Schedule};
use crate::workload::{classify, LayerSpec, LoopDim, Operand, Relevance};

pub const DEFAULT_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowCounts {
    pub feed: u64,
    pub fill: u64,
    pub collect: u64,
    pub readback: u64,
    pub drain: u64,
    pub refill: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub reads: u64,
    pub writes: u64,
    pub flows: FlowCounts,
    /// Largest per-unit tile seen, in elements.
    pub peak_occupancy: u64,
    /// Some value held here is not yet a final sum (outputs only).
    pub partial_store: bool,
    /// Some value sent to the level above is not yet a final sum.
    pub partial_drain: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTrace {
    pub levels: [Vec<LevelTrace>; 3],
    pub total_cycles: u64,
    pub macs: u64,
}

/// Parses nothing, trusts nothing: validates the scheme and runs the nest.
pub fn simulate(m: &MappingScheme, spec: &LayerSpec, h: &MemoryHierarchy) -> Result<SimTrace> {
    let s = validate_mapping(m, spec, h).map_err(|v| Error::InvalidMapping(v.join("; ")))?;
    simulate_schedule(&s, spec, DEFAULT_CAP)
}

pub fn simulate_schedule(s: &Schedule, spec: &LayerSpec, cap: u64) -> Result<SimTrace> {
    Ok(Walk::run(s, spec, cap)?.trace)
}

/// Total cycles of a cycle-by-cycle replay with explicit transfers.
///
/// Each stream's transfer for a period may only progress during the window
/// cycles of the preceding period (every cycle when the receiving tile is
/// double-buffered, otherwise only during the last pass of its outermost
/// irrelevant loops). Compute halts at a period boundary until the transfer
/// completes. The first period gets the same head start as any other. This
/// matches the analytical model exactly when every finite-bandwidth channel
/// carries at most one active stream.
pub fn replay_latency(s: &Schedule, spec: &LayerSpec, h: &MemoryHierarchy, cap: u64) -> Result<u64> {
    let w = Walk::run(s, spec, cap)?;
    let cycles = w.trace.total_cycles;
    let mut stall = 0u64;
    for op in Operand::ALL {
        for i in 0..s.levels(op) {
            for st in streams(&w, s, spec, h, op, i) {
                stall += st.replay(s, cycles);
            }
        }
    }
    Ok(cycles + stall)
}

#[derive(Clone, Copy)]
enum Period {
    /// Iterations of the temporal loops starting at this index.
    From(usize),
    /// Every cycle.
    Cycle,
}

#[derive(Clone)]
enum Window {
    Always,
    /// Listed temporal loops sit at their last iteration.
    LastPass(Vec<usize>),
}

struct Stream {
    period: Period,
    window: Window,
    bits: Vec<u64>,
    bw: u64,
}

impl Stream {
    fn replay(&self, s: &Schedule, cycles: u64) -> u64 {
        let f: Vec<u64> = s.temporal.iter().map(|l| l.1).collect();
        let mut idx = vec![0u64; f.len()];
        let window_per_period = self.window_count(s, &f);
        let mut transferred = window_per_period * self.bw;
        let mut cur: Option<u64> = None;
        let mut stall = 0;
        for t in 0..cycles {
            let p = match self.period {
                Period::Cycle => t,
                Period::From(start) => period_id(&idx, &f, start),
            };
            if cur != Some(p) {
                let need = self.bits[p as usize];
                if need > transferred {
                    stall += (need - transferred).div_ceil(self.bw);
                }
                transferred = 0;
                cur = Some(p);
            }
            let open = match &self.window {
                Window::Always => true,
                Window::LastPass(js) => js.iter().all(|&j| idx[j] + 1 == f[j]),
            };
            if open {
                transferred += self.bw;
            }
            advance(&mut idx, &f);
        }
        stall
    }

    fn window_count(&self, s: &Schedule, f: &[u64]) -> u64 {
        let len = match self.period {
            Period::Cycle => return 1,
            Period::From(start) => s.temporal[..start].iter().map(|l| l.1).product::<u64>(),
        };
        let mut idx = vec![0u64; f.len()];
        let mut n = 0;
        for _ in 0..len {
            let open = match &self.window {
                Window::Always => true,
                Window::LastPass(js) => js.iter().all(|&j| idx[j] + 1 == f[j]),
            };
            n += open as u64;
            advance(&mut idx, f);
        }
        n
    }
}

fn last_pass_loops(s: &Schedule, h: &MemoryHierarchy, op: Operand, level: usize) -> Window {
    if h.on_chip(op, level).is_some_and(|l| l.double_buffered) {
        return Window::Always;
    }
    let r = s.level_range(op, level);
    let js = r.rev().take_while(|&j| classify(s.temporal[j].0, op) == Relevance::Ir).collect();
    Window::LastPass(js)
}

fn streams(w: &Walk, s: &Schedule, spec: &LayerSpec, h: &MemoryHierarchy, op: Operand, i: usize) -> Vec<Stream> {
    let id = h.level_id(op, i);
    let (rbw, wbw) = match id {
        LevelId::OnChip(x) => {
            let v = h.levels[x].variant();
            (Some(v.read_bw()), Some(v.write_bw()))
        }
        LevelId::Top => (h.dram.bandwidth_bits, h.dram.bandwidth_bits),
    };
    let top = s.top(op);
    let tr = &w.trace.levels[op.index()][i];
    let u0 = &w.unit0[op.index()][i];
    let below_period = if i == 0 { Period::Cycle } else { Period::From(s.level_range(op, i).start) };
    let below_window = if i == 0 { Window::Always } else { last_pass_loops(s, h, op, i - 1) };
    let own_period = Period::From(s.cuts[op.index()][i]);
    let own_window = last_pass_loops(s, h, op, i);
    let scale = |v: &[u64], b: u32| v.iter().map(|x| x * b as u64).collect::<Vec<_>>();

    let mut out = Vec::new();
    let mut push = |bw: Option<u64>, period, window: &Window, bits: Vec<u64>| {
        if let Some(bw) = bw {
            if bits.iter().any(|&b| b > 0) {
                out.push(Stream { period, window: window.clone(), bits, bw });
            }
        }
    };
    if op != Operand::O {
        let b = spec.bits(op, false);
        push(rbw, below_period, &below_window, scale(&u0.from_new, b));
        if i < top {
            push(wbw, own_period, &own_window, scale(&u0.above_new, b));
        }
    } else {
        let part = spec.bits(op, true);
        push(wbw, below_period, &below_window, scale(&u0.from_new, spec.bits(op, tr.partial_store)));
        push(rbw, below_period, &below_window, scale(&u0.from_rev, part));
        if i < top {
            push(rbw, own_period, &own_window, scale(&u0.above_new, spec.bits(op, tr.partial_drain)));
            push(wbw, own_period, &own_window, scale(&u0.above_rev, part));
        }
    }
    out
}

fn advance(idx: &mut [u64], f: &[u64]) {
    for j in 0..idx.len() {
        idx[j] += 1;
        if idx[j] < f[j] {
            return;
        }
        idx[j] = 0;
    }
}

/// Mixed-radix index of the temporal loops from `start` outward, innermost
/// digit least significant.
fn period_id(idx: &[u64], f: &[u64], start: usize) -> u64 {
    let mut p = 0;
    let mut w = 1;
    for j in start..idx.len() {
        p += idx[j] * w;
        w *= f[j];
    }
    p
}

#[derive(Default)]
struct Unit0 {
    from_new: Vec<u64>,
    from_rev: Vec<u64>,
    above_new: Vec<u64>,
    above_rev: Vec<u64>,
}

#[derive(Default)]
struct OutputSpread {
    unit: u64,
    from: u64,
    above: u64,
    multi_unit: bool,
    multi_from: bool,
    multi_above: bool,
}

struct Walk {
    trace: SimTrace,
    unit0: [Vec<Unit0>; 3],
}

impl Walk {
    fn run(s: &Schedule, spec: &LayerSpec, cap: u64) -> Result<Walk> {
        let macs = s.padded_macs();
        if macs > cap {
            return Err(Error::SimulationCap { macs, cap });
        }
        let f: Vec<u64> = s.temporal.iter().map(|l| l.1).collect();
        let cycles: u64 = f.iter().product();

        // Flattened spatial entries: (group, dim, factor).
        let spatial: Vec<(usize, LoopDim, u64)> = s
            .spatial
            .groups
            .iter()
            .enumerate()
            .flat_map(|(g, grp)| grp.0.iter().map(move |&(d, v)| (g, d, v)))
            .collect();

        // Digit weights follow the input operand's bottom-up loop order.
        let mut tw = vec![0u64; f.len()];
        let mut sw = vec![0u64; spatial.len()];
        let mut run = [1u64; 7];
        let ip = &s.placement[Operand::I.index()];
        for b in 0..=s.levels(Operand::I) {
            for (k, &(g, d, v)) in spatial.iter().enumerate() {
                if ip[g] == b {
                    sw[k] = run[d.index()];
                    run[d.index()] *= v;
                }
            }
            if b < s.levels(Operand::I) {
                for j in s.level_range(Operand::I, b) {
                    let (d, v) = s.temporal[j];
                    tw[j] = run[d.index()];
                    run[d.index()] *= v;
                }
            }
        }
        debug_assert_eq!(run, s.padded);

        // Lanes: spatial digit vectors.
        let sf: Vec<u64> = spatial.iter().map(|e| e.2).collect();
        let n_lanes: u64 = sf.iter().product();
        let mut lanes = Vec::with_capacity(n_lanes as usize);
        let mut sidx = vec![0u64; sf.len()];
        for _ in 0..n_lanes {
            lanes.push(sidx.clone());
            advance(&mut sidx, &sf);
        }
        let lane_vals: Vec<[u64; 7]> = lanes
            .iter()
            .map(|l| {
                let mut v = [0u64; 7];
                for (k, &(_, d, _)) in spatial.iter().enumerate() {
                    v[d.index()] += l[k] * sw[k];
                }
                v
            })
            .collect();
        // unit[op][level][lane]
        let unit: Vec<Vec<Vec<u64>>> = Operand::ALL
            .iter()
            .map(|&op| {
                (0..s.levels(op))
                    .map(|i| {
                        lanes
                            .iter()
                            .map(|l| {
                                let mut u = 0;
                                for (k, &(g, _, v)) in spatial.iter().enumerate() {
                                    if s.placement[op.index()][g] > i {
                                        u = u * v + l[k];
                                    }
                                }
                                u
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let p = s.padded;
        let b = |d: LoopDim| p[d.index()];
        let (sx, sy) = spec.stride;
        let ixm = sx * (b(LoopDim::OX) - 1) + b(LoopDim::FX);
        let iym = sy * (b(LoopDim::OY) - 1) + b(LoopDim::FY);
        let coord = |op: Operand, v: &[u64; 7]| -> u64 {
            use LoopDim::*;
            let g = |d: LoopDim| v[d.index()];
            match op {
                Operand::W => ((g(K) * b(C) + g(C)) * b(FY) + g(FY)) * b(FX) + g(FX),
                Operand::O => ((g(B) * b(K) + g(K)) * b(OY) + g(OY)) * b(OX) + g(OX),
                Operand::I => ((g(B) * b(C) + g(C)) * iym + sy * g(OY) + g(FY)) * ixm + sx * g(OX) + g(FX),
            }
        };

        let mut traces: [Vec<LevelTrace>; 3] = Default::default();
        let mut unit0: [Vec<Unit0>; 3] = Default::default();
        let mut from: Vec<Vec<HashMap<(u64, u64), u64>>> = Vec::new();
        let mut above: Vec<Vec<HashMap<(u64, u64), u64>>> = Vec::new();
        let mut occ: Vec<Vec<HashMap<(u64, u64), u64>>> = Vec::new();
        let mut spread: Vec<HashMap<u64, OutputSpread>> = Vec::new();
        for op in Operand::ALL {
            let n = s.levels(op);
            traces[op.index()] = vec![LevelTrace::default(); n];
            for i in 0..n {
                let n_from: u64 = f[s.level_range(op, i).start..].iter().product();
                let n_above: u64 = f[s.cuts[op.index()][i]..].iter().product();
                unit0[op.index()].push(Unit0 {
                    from_new: vec![0; n_from as usize],
                    from_rev: vec![0; n_from as usize],
                    above_new: vec![0; n_above as usize],
                    above_rev: vec![0; n_above as usize],
                });
            }
            from.push((0..n).map(|_| HashMap::new()).collect());
            above.push((0..n).map(|_| HashMap::new()).collect());
            occ.push((0..n).map(|_| HashMap::new()).collect());
        }
        for _ in 0..s.levels(Operand::O) {
            spread.push(HashMap::new());
        }

        let mut idx = vec![0u64; f.len()];
        for _ in 0..cycles {
            let mut tv = [0u64; 7];
            for (j, &(d, _)) in s.temporal.iter().enumerate() {
                tv[d.index()] += idx[j] * tw[j];
            }
            for (lane, lv) in lane_vals.iter().enumerate() {
                let mut v = tv;
                for k in 0..7 {
                    v[k] += lv[k];
                }
                for op in Operand::ALL {
                    let o = op.index();
                    let x = coord(op, &v);
                    for i in 0..s.levels(op) {
                        let u = unit[o][i][lane];
                        let pf = period_id(&idx, &f, s.level_range(op, i).start);
                        let pa = period_id(&idx, &f, s.cuts[o][i]);
                        let u0 = &mut unit0[o][i];
                        match from[o][i].get(&(u, x)).copied() {
                            Some(q) if q == pf => {}
                            prev => {
                                from[o][i].insert((u, x), pf);
                                if u == 0 {
                                    u0.from_new[pf as usize] += 1;
                                }
                                traces[o][i].flows.feed += 1;
                                if prev.is_some() {
                                    traces[o][i].flows.readback += 1;
                                    if u == 0 {
                                        u0.from_rev[pf as usize] += 1;
                                    }
                                }
                            }
                        }
                        match above[o][i].get(&(u, x)).copied() {
                            Some(q) if q == pa => {}
                            prev => {
                                above[o][i].insert((u, x), pa);
                                *occ[o][i].entry((u, pa)).or_insert(0) += 1;
                                if u == 0 {
                                    u0.above_new[pa as usize] += 1;
                                }
                                traces[o][i].flows.fill += 1;
                                if prev.is_some() {
                                    traces[o][i].flows.refill += 1;
                                    if u == 0 {
                                        u0.above_rev[pa as usize] += 1;
                                    }
                                }
                            }
                        }
                        if op == Operand::O {
                            let e = spread[i].entry(x).or_insert(OutputSpread {
                                unit: u,
                                from: pf,
                                above: pa,
                                ..Default::default()
                            });
                            e.multi_unit |= e.unit != u;
                            e.multi_from |= e.from != pf;
                            e.multi_above |= e.above != pa;
                        }
                    }
                }
            }
            advance(&mut idx, &f);
        }

        for op in Operand::ALL {
            let o = op.index();
            let top = s.top(op);
            for i in 0..s.levels(op) {
                let t = &mut traces[o][i];
                t.peak_occupancy = occ[o][i].values().copied().max().unwrap_or(0);
                let fc = t.flows;
                t.flows = if op == Operand::O {
                    let sp = &spread[i];
                    t.partial_store = sp.values().any(|e| e.multi_unit || e.multi_from);
                    t.partial_drain = i < top && sp.values().any(|e| e.multi_unit || e.multi_above);
                    FlowCounts {
                        collect: fc.feed,
                        readback: fc.readback,
                        drain: if i < top { fc.fill } else { 0 },
                        refill: if i < top { fc.refill } else { 0 },
                        ..Default::default()
                    }
                } else {
                    FlowCounts { feed: fc.feed, fill: if i < top { fc.fill } else { 0 }, ..Default::default() }
                };
                let c = t.flows;
                t.reads = c.feed + c.readback + c.drain;
                t.writes = c.fill + c.collect + c.refill;
            }
        }

        Ok(Walk { trace: SimTrace { levels: traces, total_cycles: cycles, macs }, unit0 })
    }
}
