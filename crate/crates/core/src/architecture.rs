//! Memory pool entries, per-operand memory hierarchies, spatial unrolling
//! and the MAC array.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::workload::{LoopDim, Operand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortType {
    SinglePort,
    DualPort,
}

/// One bandwidth/cost option of a pool memory. Tuples in pool files are
/// written `[read, write]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryVariant {
    /// `[read, write]` bits per cycle; the read width is also the word width.
    pub bw: [u64; 2],
    /// `[read, write]` energy per word access in pJ.
    pub cost: [f64; 2],
    pub area: f64,
}

impl MemoryVariant {
    pub fn read_bw(&self) -> u64 {
        self.bw[0]
    }
    pub fn write_bw(&self) -> u64 {
        self.bw[1]
    }
    pub fn read_energy(&self) -> f64 {
        self.cost[0]
    }
    pub fn write_energy(&self) -> f64 {
        self.cost[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryPoolEntry {
    pub name: String,
    pub size_bits: u64,
    pub variants: Vec<MemoryVariant>,
    pub allowed_unrolls: Vec<u64>,
    pub port: PortType,
    #[serde(default)]
    pub double_buffer_capable: bool,
}

impl MemoryPoolEntry {
    pub fn check(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.size_bits == 0 {
            v.push("size must be positive".to_string());
        }
        if self.variants.is_empty() {
            v.push("no bandwidth variants".to_string());
        }
        for (i, var) in self.variants.iter().enumerate() {
            if var.bw.iter().any(|&b| b == 0) {
                v.push(format!("variant {i}: bandwidths must be positive"));
            }
            if var.cost.iter().any(|&c| !(c > 0.0)) || !(var.area > 0.0) {
                v.push(format!("variant {i}: energies and area must be positive"));
            }
        }
        if self.allowed_unrolls.is_empty() || self.allowed_unrolls.contains(&0) {
            v.push("allowed unrolls must be nonempty positive integers".to_string());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MemoryPool {
    pub entries: Vec<MemoryPoolEntry>,
}

/// A concrete on-chip memory level: a pool entry with a chosen variant and
/// replication count, serving one or more operands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryLevel {
    pub name: String,
    pub entry: MemoryPoolEntry,
    pub variant: usize,
    pub unroll: u64,
    pub serves: Vec<Operand>,
    #[serde(default)]
    pub double_buffered: bool,
}

impl MemoryLevel {
    pub fn variant(&self) -> &MemoryVariant {
        &self.entry.variants[self.variant]
    }

    pub fn size_bits(&self) -> u64 {
        self.entry.size_bits
    }

    pub fn area(&self) -> f64 {
        self.variant().area * self.unroll as f64
    }

    pub fn is_shared(&self) -> bool {
        self.serves.len() > 1
    }
}

/// Off-chip top level. Unbounded, present for every operand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dram {
    pub read_energy_per_bit: f64,
    pub write_energy_per_bit: f64,
    /// `None` means unlimited.
    #[serde(default)]
    pub bandwidth_bits: Option<u64>,
}

impl Default for Dram {
    fn default() -> Self {
        Dram { read_energy_per_bit: 1.0, write_energy_per_bit: 1.0, bandwidth_bits: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LevelId {
    OnChip(usize),
    Top,
}

/// Per-operand bottom-up stacks of memory levels, all ending in the shared
/// off-chip top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryHierarchy {
    pub levels: Vec<MemoryLevel>,
    /// Indexed by `Operand::index()`; each stack ends with `LevelId::Top`.
    pub stacks: [Vec<LevelId>; 3],
    pub dram: Dram,
}

impl MemoryHierarchy {
    pub fn stack(&self, op: Operand) -> &[LevelId] {
        &self.stacks[op.index()]
    }

    pub fn level_count(&self, op: Operand) -> usize {
        self.stacks[op.index()].len()
    }

    pub fn top_index(&self, op: Operand) -> usize {
        self.level_count(op) - 1
    }

    pub fn level_id(&self, op: Operand, level: usize) -> LevelId {
        self.stacks[op.index()][level]
    }

    pub fn on_chip(&self, op: Operand, level: usize) -> Option<&MemoryLevel> {
        match self.level_id(op, level) {
            LevelId::OnChip(i) => Some(&self.levels[i]),
            LevelId::Top => None,
        }
    }

    /// Capacity in bits of one unit, `None` for the unbounded top level.
    pub fn capacity_bits(&self, op: Operand, level: usize) -> Option<u64> {
        self.on_chip(op, level).map(|l| l.size_bits())
    }

    pub fn unroll(&self, op: Operand, level: usize) -> u64 {
        self.on_chip(op, level).map_or(1, |l| l.unroll)
    }

    /// Per-operand level index of physical level `id`, if the operand uses it.
    pub fn position(&self, op: Operand, id: LevelId) -> Option<usize> {
        self.stacks[op.index()].iter().position(|&x| x == id)
    }

    /// Operands stored in physical level `id`.
    pub fn served_by(&self, id: LevelId) -> Vec<Operand> {
        match id {
            LevelId::Top => Operand::ALL.to_vec(),
            LevelId::OnChip(i) => self.levels[i].serves.clone(),
        }
    }

    /// Build a hierarchy from a list of levels whose `serves` fields define the
    /// stacks, in bottom-up order of the list.
    pub fn from_levels(levels: Vec<MemoryLevel>, dram: Dram) -> Self {
        let mut stacks: [Vec<LevelId>; 3] = Default::default();
        for (i, l) in levels.iter().enumerate() {
            for &op in &l.serves {
                stacks[op.index()].push(LevelId::OnChip(i));
            }
        }
        for s in &mut stacks {
            s.push(LevelId::Top);
        }
        MemoryHierarchy { levels, stacks, dram }
    }

    /// Canonical key used for deterministic ordering and result records.
    pub fn key(&self) -> String {
        let mut parts = Vec::new();
        for op in Operand::ALL {
            let names: Vec<String> = self
                .stack(op)
                .iter()
                .map(|&id| match id {
                    LevelId::Top => "DRAM".to_string(),
                    LevelId::OnChip(i) => {
                        let l = &self.levels[i];
                        format!("{}x{}v{}{}", l.name, l.unroll, l.variant, if l.double_buffered { "db" } else { "" })
                    }
                })
                .collect();
            parts.push(format!("{}:[{}]", op, names.join(",")));
        }
        parts.join(" ")
    }
}

/// Total on-chip area: every distinct level's variant area times its unroll.
pub fn total_area(h: &MemoryHierarchy) -> f64 {
    h.levels.iter().map(MemoryLevel::area).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub level: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.level {
            Some(l) => write!(f, "level `{l}`: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks every structural invariant, returning all violations found.
pub fn validate_hierarchy(h: &MemoryHierarchy) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut push = |level: Option<&str>, message: String| {
        out.push(Violation { level: level.map(str::to_string), message });
    };

    for l in &h.levels {
        let name = Some(l.name.as_str());
        for m in l.entry.check() {
            push(name, m);
        }
        if l.variant >= l.entry.variants.len() {
            push(name, format!("variant index {} out of range", l.variant));
        }
        if !l.entry.allowed_unrolls.contains(&l.unroll) {
            push(name, format!("unroll {} not in allowed {:?}", l.unroll, l.entry.allowed_unrolls));
        }
        if l.double_buffered && !l.entry.double_buffer_capable {
            push(name, "double buffering requested on a memory that does not support it".into());
        }
        if l.serves.is_empty() {
            push(name, "level serves no operand".into());
        }
        let distinct: BTreeSet<_> = l.serves.iter().collect();
        if distinct.len() != l.serves.len() {
            push(name, "operand listed twice".into());
        }
    }

    for op in Operand::ALL {
        let stack = h.stack(op);
        if stack.is_empty() {
            push(None, format!("operand {op} has no memory levels"));
            continue;
        }
        if stack.last() != Some(&LevelId::Top) || stack.iter().filter(|&&x| x == LevelId::Top).count() != 1 {
            push(None, format!("operand {op}: stack must end with the single top level"));
        }
        for &id in stack {
            if let LevelId::OnChip(i) = id {
                match h.levels.get(i) {
                    None => push(None, format!("operand {op}: unknown level index {i}")),
                    Some(l) if !l.serves.contains(&op) => {
                        push(Some(&l.name), format!("listed in {op}'s stack but does not serve {op}"))
                    }
                    _ => {}
                }
                if stack.iter().filter(|&&x| x == id).count() != 1 {
                    push(None, format!("operand {op}: level {i} appears more than once"));
                }
            }
        }
    }

    for (i, l) in h.levels.iter().enumerate() {
        for &op in &l.serves {
            if h.position(op, LevelId::OnChip(i)).is_none() {
                push(Some(&l.name), format!("serves {op} but is missing from its stack"));
            }
        }
    }

    // Shared levels must stack in the same relative order for every operand.
    for (a, la) in h.levels.iter().enumerate() {
        for b in a + 1..h.levels.len() {
            let mut order = BTreeSet::new();
            for &op in &la.serves {
                if let (Some(pa), Some(pb)) = (h.position(op, LevelId::OnChip(a)), h.position(op, LevelId::OnChip(b))) {
                    order.insert(pa < pb);
                }
            }
            if order.len() > 1 {
                push(Some(&la.name), format!("inconsistent stacking relative to `{}`", h.levels[b].name));
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// A group of loops unrolled together on one physical array axis (`Au|Bu`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpatialGroup(pub Vec<(LoopDim, u64)>);

impl SpatialGroup {
    pub fn product(&self) -> u64 {
        self.0.iter().map(|l| l.1).product()
    }
}

impl fmt::Display for SpatialGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.0.iter().map(|(d, _)| format!("{d}u")).collect();
        let facs: Vec<String> = self.0.iter().map(|(_, v)| v.to_string()).collect();
        write!(f, "{} {}", dims.join("|"), facs.join("|"))
    }
}

/// The physical spatial unrolling of the PE array: one group per array axis
/// (or per replicated memory axis).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct SpatialUnrolling {
    pub groups: Vec<SpatialGroup>,
}

impl SpatialUnrolling {
    pub fn product(&self) -> u64 {
        self.groups.iter().map(SpatialGroup::product).product()
    }

    pub fn dim_product(&self, d: LoopDim) -> u64 {
        self.groups.iter().flat_map(|g| g.0.iter()).filter(|l| l.0 == d).map(|l| l.1).product()
    }
}

/// A spatial group together with the boundary it sits at for each operand
/// (`0` replicates the MACs, `b > 0` replicates operand level `b - 1`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlacedGroup {
    pub group: SpatialGroup,
    pub boundary: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlacedUnrolling {
    pub groups: Vec<PlacedGroup>,
}

impl PlacedUnrolling {
    pub fn unrolling(&self) -> SpatialUnrolling {
        let mut groups: Vec<SpatialGroup> = self.groups.iter().map(|g| g.group.clone()).collect();
        groups.sort();
        SpatialUnrolling { groups }
    }

    /// The same groups placed identically for every operand.
    pub fn uniform(groups: Vec<SpatialGroup>, boundary: usize) -> Self {
        PlacedUnrolling {
            groups: groups.into_iter().map(|group| PlacedGroup { group, boundary: [boundary; 3] }).collect(),
        }
    }

    /// Units each operand level needs.
    pub fn units(&self, op: Operand, level: usize) -> u64 {
        self.groups.iter().filter(|g| g.boundary[op.index()] > level).map(|g| g.group.product()).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacModel {
    pub array: (u64, u64),
    pub mac_energy_pj: f64,
}

impl MacModel {
    pub fn size(&self) -> u64 {
        self.array.0 * self.array.1
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// 64-byte register file from the published sample pool entry.
    pub fn rf_entry() -> MemoryPoolEntry {
        MemoryPoolEntry {
            name: "rf64B".into(),
            size_bits: 2048,
            variants: vec![
                MemoryVariant { bw: [8, 8], cost: [0.88, 0.98], area: 4740.06 },
                MemoryVariant { bw: [16, 16], cost: [0.99, 1.39], area: 4825.56 },
                MemoryVariant { bw: [64, 64], cost: [2.52, 3.49], area: 7457.82 },
            ],
            allowed_unrolls: vec![1, 8, 64],
            port: PortType::DualPort,
            double_buffer_capable: false,
        }
    }

    fn level(name: &str, variant: usize, unroll: u64, serves: &[Operand]) -> MemoryLevel {
        MemoryLevel {
            name: name.into(),
            entry: rf_entry(),
            variant,
            unroll,
            serves: serves.to_vec(),
            double_buffered: false,
        }
    }

    #[test]
    fn area_examples() {
        let h = MemoryHierarchy::from_levels(vec![level("rf", 0, 64, &[Operand::W])], Dram::default());
        assert!((total_area(&h) - 303363.84).abs() < 1e-6);
        let h = MemoryHierarchy::from_levels(vec![], Dram::default());
        assert_eq!(total_area(&h), 0.0);
        let h = MemoryHierarchy::from_levels(
            vec![level("a", 0, 1, &[Operand::W]), level("b", 1, 1, &[Operand::I])],
            Dram::default(),
        );
        assert!((total_area(&h) - 9565.62).abs() < 1e-6);
    }

    #[test]
    fn area_monotone_under_added_level() {
        let mut levels = vec![level("a", 0, 1, &[Operand::W])];
        let before = total_area(&MemoryHierarchy::from_levels(levels.clone(), Dram::default()));
        levels.push(level("b", 2, 8, &[Operand::O]));
        let after = total_area(&MemoryHierarchy::from_levels(levels, Dram::default()));
        assert!(after >= before);
    }

    #[test]
    fn validation() {
        let h = MemoryHierarchy::from_levels(
            vec![
                level("rfI", 0, 64, &[Operand::I]),
                level("rfO", 0, 64, &[Operand::O]),
                level("glb", 2, 1, &[Operand::I, Operand::O]),
            ],
            Dram::default(),
        );
        assert!(validate_hierarchy(&h).is_ok());
        assert_eq!(h.position(Operand::I, LevelId::OnChip(2)), Some(1));
        assert_eq!(h.position(Operand::O, LevelId::OnChip(2)), Some(1));

        let h = MemoryHierarchy::from_levels(vec![level("rf", 0, 5, &[Operand::W])], Dram::default());
        let errs = validate_hierarchy(&h).unwrap_err();
        assert!(errs.iter().any(|v| v.message.contains("unroll 5")));

        let mut h = MemoryHierarchy::from_levels(vec![], Dram::default());
        h.stacks[0].clear();
        assert!(validate_hierarchy(&h).is_err());

        let mut l = level("rf", 0, 1, &[Operand::W]);
        l.double_buffered = true;
        let h = MemoryHierarchy::from_levels(vec![l], Dram::default());
        assert!(validate_hierarchy(&h).is_err());
    }

    #[test]
    fn spatial_group_format() {
        let g = SpatialGroup(vec![(LoopDim::FY, 5), (LoopDim::OY, 13), (LoopDim::OY, 2)]);
        assert_eq!(g.to_string(), "FYu|OYu|OYu 5|13|2");
        assert_eq!(g.product(), 130);
    }
}
