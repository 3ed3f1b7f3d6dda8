//! Memory-centric loop representation.
//!
//! A [`MappingScheme`] lists, per operand, the loops held at each memory
//! level bottom-up (innermost first). It is the exchange format and may be
//! inconsistent. [`Schedule`] is the validated form every analysis works on:
//! one temporal loop sequence shared by all operands, per-operand cut points
//! into it, and per-operand placement of the spatial unrolling groups.
//!
//! Spatial placement uses boundaries: a group at boundary `b` of an operand
//! sits directly below that operand's memory level `b`, replicating whatever
//! is below it (the MAC array for `b == 0`, memory level `b - 1` otherwise).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::architecture::{LevelId, MemoryHierarchy, SpatialGroup, SpatialUnrolling};
use crate::error::{Error, Result};
use crate::extractor::data_elements;
use crate::workload::{LayerSpec, LoopDim, Operand};

pub const MAPPING_HEADER: &str = "mapping v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoopKind {
    Temporal,
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoopEntry {
    pub dim: LoopDim,
    pub factor: u64,
    pub kind: LoopKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LevelLoops {
    /// Innermost first.
    pub temporal: Vec<(LoopDim, u64)>,
    /// Groups replicating this level.
    pub spatial: Vec<SpatialGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OperandMapping {
    /// Groups replicating the MAC units directly.
    pub mac_spatial: Vec<SpatialGroup>,
    pub levels: Vec<LevelLoops>,
}

impl OperandMapping {
    pub fn entries(&self) -> Vec<Vec<LoopEntry>> {
        self.levels
            .iter()
            .map(|l| {
                l.temporal
                    .iter()
                    .map(|&(dim, factor)| LoopEntry { dim, factor, kind: LoopKind::Temporal })
                    .chain(l.spatial.iter().flat_map(|g| {
                        g.0.iter().map(|&(dim, factor)| LoopEntry { dim, factor, kind: LoopKind::Spatial })
                    }))
                    .collect()
            })
            .collect()
    }
}

/// Per-operand loop assignment as written in mapping files.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MappingScheme {
    pub ops: [OperandMapping; 3],
}

impl MappingScheme {
    pub fn op(&self, op: Operand) -> &OperandMapping {
        &self.ops[op.index()]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(MAPPING_HEADER);
        s.push('\n');
        for op in Operand::ALL {
            let m = self.op(op);
            let mac: Vec<String> = m.mac_spatial.iter().map(|g| g.to_string()).collect();
            let _ = writeln!(s, "{op}.MAC: {}", mac.join(", ")).map(|_| ());
            for (i, l) in m.levels.iter().enumerate() {
                let items: Vec<String> = l
                    .temporal
                    .iter()
                    .map(|(d, f)| format!("{d} {f}"))
                    .chain(l.spatial.iter().map(|g| g.to_string()))
                    .collect();
                let _ = writeln!(s, "{op}.L{i}: {}", items.join(", "));
            }
        }
        // no trailing spaces after empty colons
        s.lines().map(str::trim_end).collect::<Vec<_>>().join("\n") + "\n"
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some(MAPPING_HEADER) => {}
            other => {
                return Err(Error::Parse(format!("expected header `{MAPPING_HEADER}`, found {other:?}")));
            }
        }
        let mut scheme = MappingScheme::default();
        for (lineno, line) in lines.enumerate() {
            let ctx = |msg: String| Error::Parse(format!("mapping line {}: {msg}", lineno + 2));
            let (head, body) = line.split_once(':').ok_or_else(|| ctx(format!("missing `:` in `{line}`")))?;
            let (op, slot) = head.trim().split_once('.').ok_or_else(|| ctx(format!("bad slot `{head}`")))?;
            let op: Operand = op.parse()?;
            let items: Vec<&str> = body.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            let m = &mut scheme.ops[op.index()];
            if slot == "MAC" {
                for it in items {
                    m.mac_spatial.push(parse_group(it).map_err(|e| ctx(e.to_string()))?);
                }
                continue;
            }
            let idx: usize =
                slot.strip_prefix('L').and_then(|n| n.parse().ok()).ok_or_else(|| ctx(format!("bad slot `{slot}`")))?;
            if idx != m.levels.len() {
                return Err(ctx(format!("levels of {op} must be listed in order, expected L{}", m.levels.len())));
            }
            let mut level = LevelLoops::default();
            for it in items {
                let (dims, _) = it.split_once(' ').ok_or_else(|| ctx(format!("bad loop `{it}`")))?;
                if dims.ends_with('u') {
                    level.spatial.push(parse_group(it).map_err(|e| ctx(e.to_string()))?);
                } else {
                    if !level.spatial.is_empty() {
                        return Err(ctx("temporal loops must precede spatial groups".into()));
                    }
                    let (d, f) = it.split_once(' ').unwrap();
                    let f: u64 = f.trim().parse().map_err(|_| ctx(format!("bad factor in `{it}`")))?;
                    level.temporal.push((d.parse()?, f));
                }
            }
            m.levels.push(level);
        }
        Ok(scheme)
    }
}

pub(crate) fn parse_group(s: &str) -> Result<SpatialGroup> {
    let (dims, facs) = s.split_once(' ').ok_or_else(|| Error::Parse(format!("bad spatial group `{s}`")))?;
    let dims: Vec<&str> = dims.split('|').collect();
    let facs: Vec<&str> = facs.trim().split('|').collect();
    if dims.len() != facs.len() {
        return Err(Error::Parse(format!("spatial group `{s}`: dimension/factor count mismatch")));
    }
    let mut out = Vec::new();
    for (d, f) in dims.iter().zip(facs) {
        let d = d.strip_suffix('u').ok_or_else(|| Error::Parse(format!("spatial dim `{d}` lacks `u` suffix")))?;
        let f: u64 = f.parse().map_err(|_| Error::Parse(format!("bad factor `{f}`")))?;
        out.push((d.parse()?, f));
    }
    Ok(SpatialGroup(out))
}

/// Validated mapping: common temporal order plus per-operand cuts and
/// spatial placement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Schedule {
    /// Innermost first.
    pub temporal: Vec<(LoopDim, u64)>,
    /// `cuts[op][i]` is the exclusive end of level `i` in `temporal`; the last
    /// entry equals `temporal.len()`.
    pub cuts: [Vec<usize>; 3],
    /// Canonically sorted groups.
    pub spatial: SpatialUnrolling,
    /// `placement[op][g]` is the boundary of group `g` for `op`.
    pub placement: [Vec<usize>; 3],
    /// Loop bounds actually iterated (layer bounds rounded up to the spatial
    /// unrolling).
    pub padded: [u64; 7],
}

impl Schedule {
    pub fn levels(&self, op: Operand) -> usize {
        self.cuts[op.index()].len()
    }

    pub fn top(&self, op: Operand) -> usize {
        self.levels(op) - 1
    }

    pub fn level_range(&self, op: Operand, level: usize) -> Range<usize> {
        let c = &self.cuts[op.index()];
        let start = if level == 0 { 0 } else { c[level - 1] };
        start..c[level]
    }

    pub fn temporal_at(&self, op: Operand, level: usize) -> &[(LoopDim, u64)] {
        &self.temporal[self.level_range(op, level)]
    }

    /// Temporal loops at levels `<= level`.
    pub fn temporal_upto(&self, op: Operand, level: usize) -> &[(LoopDim, u64)] {
        &self.temporal[..self.cuts[op.index()][level]]
    }

    /// Temporal loops at levels `> level`.
    pub fn temporal_above(&self, op: Operand, level: usize) -> &[(LoopDim, u64)] {
        &self.temporal[self.cuts[op.index()][level]..]
    }

    /// Spatial factors placed at boundaries accepted by `pred`.
    pub fn spatial_where(&self, op: Operand, pred: impl Fn(usize) -> bool) -> Vec<(LoopDim, u64)> {
        self.spatial
            .groups
            .iter()
            .zip(&self.placement[op.index()])
            .filter(|(_, &b)| pred(b))
            .flat_map(|(g, _)| g.0.iter().copied())
            .collect()
    }

    /// Loops that make up one unit's tile at `level`: temporal at levels
    /// `<= level` and spatial at boundaries `<= level`.
    pub fn unit_loops(&self, op: Operand, level: usize) -> Vec<(LoopDim, u64)> {
        let mut v = self.spatial_where(op, |b| b <= level);
        v.extend_from_slice(self.temporal_upto(op, level));
        v
    }

    /// Loops below memory `level` as seen from that memory: temporal at
    /// levels `< level` and spatial at boundaries `<= level`.
    pub fn feed_loops(&self, op: Operand, level: usize) -> Vec<(LoopDim, u64)> {
        let mut v = self.spatial_where(op, |b| b <= level);
        if level > 0 {
            v.extend_from_slice(self.temporal_upto(op, level - 1));
        }
        v
    }

    pub fn total_temporal(&self) -> u64 {
        self.temporal.iter().map(|l| l.1).product()
    }

    pub fn padded_macs(&self) -> u64 {
        self.padded.iter().product()
    }

    pub fn to_scheme(&self) -> MappingScheme {
        let mut scheme = MappingScheme::default();
        for op in Operand::ALL {
            let m = &mut scheme.ops[op.index()];
            let groups_at = |b: usize| -> Vec<SpatialGroup> {
                self.spatial
                    .groups
                    .iter()
                    .zip(&self.placement[op.index()])
                    .filter(|(_, &p)| p == b)
                    .map(|(g, _)| g.clone())
                    .collect()
            };
            m.mac_spatial = groups_at(0);
            for i in 0..self.levels(op) {
                m.levels.push(LevelLoops { temporal: self.temporal_at(op, i).to_vec(), spatial: groups_at(i + 1) });
            }
        }
        scheme
    }

    pub fn to_text(&self) -> String {
        self.to_scheme().to_text()
    }

    /// Build from parts, sorting spatial groups into canonical order.
    pub fn new(
        temporal: Vec<(LoopDim, u64)>,
        cuts: [Vec<usize>; 3],
        groups: Vec<(SpatialGroup, [usize; 3])>,
        padded: [u64; 7],
    ) -> Self {
        let mut groups = groups;
        groups.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut placement: [Vec<usize>; 3] = Default::default();
        for (_, p) in &groups {
            for op in Operand::ALL {
                placement[op.index()].push(p[op.index()]);
            }
        }
        // identical groups are interchangeable per operand
        let mut start = 0;
        while start < groups.len() {
            let end = start + groups[start..].iter().take_while(|g| g.0 == groups[start].0).count();
            for p in &mut placement {
                p[start..end].sort();
            }
            start = end;
        }
        Schedule {
            temporal,
            cuts,
            spatial: SpatialUnrolling { groups: groups.into_iter().map(|g| g.0).collect() },
            placement,
            padded,
        }
    }
}

/// Ceil-rounded loop bounds implied by a spatial unrolling.
pub fn padded_bounds(spec: &LayerSpec, spatial: &SpatialUnrolling) -> [u64; 7] {
    let mut out = [1; 7];
    for d in LoopDim::ALL {
        let s = spatial.dim_product(d);
        out[d.index()] = s * spec.bound(d).div_ceil(s);
    }
    out
}

/// Checks the representation rules and resolves the scheme into a
/// [`Schedule`]. Capacity is checked against the hierarchy using the
/// extractor's per-unit data sizes; shared levels must hold the sum of the
/// served operands.
pub fn validate_mapping(m: &MappingScheme, spec: &LayerSpec, h: &MemoryHierarchy) -> Result<Schedule, Vec<String>> {
    let mut errs = Vec::new();

    for op in Operand::ALL {
        if m.op(op).levels.len() != h.level_count(op) {
            errs.push(format!(
                "operand {op}: mapping has {} levels, hierarchy has {}",
                m.op(op).levels.len(),
                h.level_count(op)
            ));
        }
    }
    if !errs.is_empty() {
        return Err(errs);
    }

    let seqs: Vec<Vec<(LoopDim, u64)>> = Operand::ALL
        .iter()
        .map(|&op| m.op(op).levels.iter().flat_map(|l| l.temporal.iter().copied()).collect())
        .collect();
    for op in [Operand::I, Operand::O] {
        if seqs[op.index()] != seqs[0] {
            errs.push(format!("temporal loop order of {op} differs from W"));
        }
    }
    if seqs[0].iter().any(|l| l.1 < 2) {
        errs.push("temporal loop factors must be >= 2".into());
    }

    // Spatial groups: same multiset for every operand.
    let mut placed: [Vec<(SpatialGroup, usize)>; 3] = Default::default();
    for op in Operand::ALL {
        let om = m.op(op);
        for g in &om.mac_spatial {
            placed[op.index()].push((g.clone(), 0));
        }
        for (i, l) in om.levels.iter().enumerate() {
            for g in &l.spatial {
                placed[op.index()].push((g.clone(), i + 1));
            }
        }
        placed[op.index()].sort();
        if let Some((_, b)) = placed[op.index()].iter().find(|(_, b)| *b >= h.level_count(op)) {
            errs.push(format!("operand {op}: spatial group at boundary {b} replicates the top level"));
        }
    }
    let groups_of = |op: Operand| -> Vec<&SpatialGroup> { placed[op.index()].iter().map(|p| &p.0).collect() };
    for op in [Operand::I, Operand::O] {
        if groups_of(op) != groups_of(Operand::W) {
            errs.push(format!("spatial unrolling of {op} differs from W"));
        }
    }
    if placed.iter().flatten().any(|(g, _)| g.0.is_empty() || g.0.iter().any(|l| l.1 < 2)) {
        errs.push("spatial factors must be >= 2".into());
    }
    if !errs.is_empty() {
        return Err(errs);
    }

    let spatial = SpatialUnrolling { groups: placed[0].iter().map(|p| p.0.clone()).collect() };
    let padded = padded_bounds(spec, &spatial);
    for d in LoopDim::ALL {
        let t: u64 = seqs[0].iter().filter(|l| l.0 == d).map(|l| l.1).product();
        let s = spatial.dim_product(d);
        if t * s != padded[d.index()] {
            errs.push(format!(
                "dimension {d}: loops cover {} (temporal {t} x spatial {s}) but the layer needs {}",
                t * s,
                padded[d.index()]
            ));
        }
    }

    let mut cuts: [Vec<usize>; 3] = Default::default();
    for op in Operand::ALL {
        let mut acc = 0;
        for l in &m.op(op).levels {
            acc += l.temporal.len();
            cuts[op.index()].push(acc);
        }
    }
    let sched = Schedule {
        temporal: seqs[0].clone(),
        cuts,
        spatial,
        placement: [0, 1, 2].map(|o| placed[o].iter().map(|p| p.1).collect()),
        padded,
    };

    for op in Operand::ALL {
        for i in 0..sched.levels(op) {
            let units: u64 = sched.spatial_where(op, |b| b > i).iter().map(|l| l.1).product();
            let unroll = h.unroll(op, i);
            if units > unroll {
                errs.push(format!("operand {op} level {i}: mapping needs {units} units, memory has {unroll}"));
            }
        }
    }
    errs.extend(capacity_violations(&sched, spec, h));

    if errs.is_empty() {
        Ok(sched)
    } else {
        Err(errs)
    }
}

/// Per-unit bits an operand occupies at one of its levels.
pub fn occupied_bits(s: &Schedule, spec: &LayerSpec, op: Operand, level: usize) -> u64 {
    let elems = data_elements(op, &s.unit_loops(op, level), spec.stride);
    let partial = op == Operand::O && crate::extractor::output_partial_at(s, level);
    elems * spec.bits(op, partial) as u64
}

/// Bits occupied in every on-chip physical level, summed over served operands.
pub fn level_occupancy(s: &Schedule, spec: &LayerSpec, h: &MemoryHierarchy) -> BTreeMap<usize, u64> {
    let mut occ = BTreeMap::new();
    for op in Operand::ALL {
        for i in 0..s.levels(op) {
            if let LevelId::OnChip(idx) = h.level_id(op, i) {
                *occ.entry(idx).or_insert(0) += occupied_bits(s, spec, op, i);
            }
        }
    }
    occ
}

pub fn capacity_violations(s: &Schedule, spec: &LayerSpec, h: &MemoryHierarchy) -> Vec<String> {
    level_occupancy(s, spec, h)
        .into_iter()
        .filter(|&(idx, bits)| bits > h.levels[idx].size_bits())
        .map(|(idx, bits)| {
            format!(
                "level `{}` overflows: {bits} bits needed, {} available",
                h.levels[idx].name,
                h.levels[idx].size_bits()
            )
        })
        .collect()
}

/// True iff every shared physical level holds the same loop range of the
/// common temporal sequence for all operands it serves.
pub fn is_even(s: &Schedule, h: &MemoryHierarchy) -> bool {
    h.levels.iter().enumerate().filter(|(_, l)| l.is_shared()).all(|(idx, l)| {
        let ranges: Vec<Range<usize>> = l
            .serves
            .iter()
            .filter_map(|&op| h.position(op, LevelId::OnChip(idx)).map(|p| s.level_range(op, p)))
            .collect();
        ranges.windows(2).all(|w| w[0] == w[1])
    })
}

/// Loops between two consecutive virtual separators; order free.
pub type VirtualLevel = Vec<(LoopDim, u64)>;

/// All distinct orderings of a multiset of loops (lexicographic order).
pub fn enumerate_permutations(v: &[(LoopDim, u64)]) -> Vec<VirtualLevel> {
    let mut cur = v.to_vec();
    cur.sort();
    let mut out = vec![cur.clone()];
    while next_permutation(&mut cur) {
        out.push(cur.clone());
    }
    out
}

pub(crate) fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
