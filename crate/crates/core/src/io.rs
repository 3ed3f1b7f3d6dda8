//! Input documents (TOML) with versioned schema headers.
//!
//! Every document starts with `schema = "<kind>/<version>"`. Unknown fields
//! are rejected so typos surface as errors instead of silent defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archgen::ArchSearchConfig;
use crate::architecture::{
    validate_hierarchy, Dram, MacModel, MemoryHierarchy, MemoryLevel, MemoryPool, MemoryPoolEntry, MemoryVariant,
    PlacedGroup, PlacedUnrolling, PortType, SpatialGroup, SpatialUnrolling,
};
use crate::error::{Error, Result};
use crate::mapping::parse_group;
use crate::tmg::{LevelConstraint, Objective, SearchConfig, Strategy, TmgOptions};
use crate::workload::{LayerSpec, LoopDim, Operand, Precision};

pub const WORKLOAD_SCHEMA: &str = "memdse-workload/1";
pub const POOL_SCHEMA: &str = "memdse-pool/1";
pub const ARCH_SCHEMA: &str = "memdse-arch/1";
pub const CONFIG_SCHEMA: &str = "memdse-config/1";

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn parse_doc<T: for<'de> Deserialize<'de>>(text: &str, schema: &str) -> Result<T> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    match table.get("schema").and_then(|v| v.as_str()) {
        Some(s) if s == schema => {}
        Some(s) => return Err(Error::Parse(format!("schema `{s}` not supported, expected `{schema}`"))),
        None => return Err(Error::Parse(format!("missing `schema = \"{schema}\"` header"))),
    }
    table.try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))
}

fn load<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    let text = read_file(path)?;
    let at = |m: String| format!("{}: {m}", path.display());
    parse(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(at(m)),
        Error::InvalidWorkload(m) => Error::InvalidWorkload(at(m)),
        Error::InvalidArchitecture(m) => Error::InvalidArchitecture(at(m)),
        other => Error::Parse(at(other.to_string())),
    })
}

// ---- workload ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    #[serde(default)]
    pub name: String,
    /// Missing dimensions default to 1.
    pub bounds: BTreeMap<String, u64>,
    #[serde(default = "unit_stride")]
    pub stride: [u64; 2],
    #[serde(default)]
    pub precision: Option<Precision>,
}

fn unit_stride() -> [u64; 2] {
    [1, 1]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadDoc {
    schema: String,
    #[serde(rename = "layer")]
    layers: Vec<LayerDoc>,
}

impl LayerDoc {
    pub fn to_spec(&self) -> Result<LayerSpec> {
        let mut dims = Vec::new();
        for (k, &v) in &self.bounds {
            let d: LoopDim = k.parse().map_err(|_| Error::InvalidWorkload(format!("unknown dimension `{k}`")))?;
            dims.push((d, v));
        }
        let mut spec = LayerSpec::from_dims(&dims, self.precision.unwrap_or_default())?;
        spec = spec.with_stride(self.stride[0], self.stride[1])?;
        Ok(spec.with_name(self.name.clone()))
    }

    pub fn from_spec(spec: &LayerSpec) -> Self {
        LayerDoc {
            name: spec.name.clone(),
            bounds: LoopDim::ALL.iter().map(|&d| (d.to_string(), spec.bound(d))).collect(),
            stride: [spec.stride.0, spec.stride.1],
            precision: Some(spec.precision),
        }
    }
}

pub fn parse_workload(text: &str) -> Result<Vec<LayerSpec>> {
    let doc: WorkloadDoc = parse_doc(text, WORKLOAD_SCHEMA)?;
    if doc.layers.is_empty() {
        return Err(Error::InvalidWorkload("no [[layer]] entries".into()));
    }
    doc.layers
        .iter()
        .enumerate()
        .map(|(k, l)| l.to_spec().map(|s| if s.name.is_empty() { s.with_name(format!("layer{k}")) } else { s }))
        .collect()
}

pub fn workload_to_text(layers: &[LayerSpec]) -> String {
    let doc = WorkloadDoc { schema: WORKLOAD_SCHEMA.into(), layers: layers.iter().map(LayerDoc::from_spec).collect() };
    toml::to_string(&doc).expect("workload serializes")
}

pub fn load_workload(path: &Path) -> Result<Vec<LayerSpec>> {
    load(path, parse_workload)
}

// ---- memory pool ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolDoc {
    schema: String,
    #[serde(rename = "memory")]
    entries: Vec<MemoryPoolEntry>,
}

pub fn parse_pool(text: &str) -> Result<MemoryPool> {
    let doc: PoolDoc = parse_doc(text, POOL_SCHEMA)?;
    for e in &doc.entries {
        let problems = e.check();
        if !problems.is_empty() {
            return Err(Error::InvalidArchitecture(format!("pool entry `{}`: {}", e.name, problems.join("; "))));
        }
    }
    Ok(MemoryPool { entries: doc.entries })
}

pub fn pool_to_text(pool: &MemoryPool) -> String {
    toml::to_string(&PoolDoc { schema: POOL_SCHEMA.into(), entries: pool.entries.clone() }).expect("pool serializes")
}

pub fn load_pool(path: &Path) -> Result<MemoryPool> {
    load(path, parse_pool)
}

// ---- fixed architecture ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelDoc {
    pub name: String,
    /// Pool entry name, when it differs from the level name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
    pub size_bits: u64,
    /// Operands stored here, bottom-up order of the list defines stacking.
    pub serves: Vec<Operand>,
    #[serde(default = "one")]
    pub unroll: u64,
    pub variants: Vec<MemoryVariant>,
    #[serde(default)]
    pub variant: usize,
    #[serde(default = "dual")]
    pub port: PortType,
    #[serde(default)]
    pub double_buffered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_unrolls: Option<Vec<u64>>,
}

fn one() -> u64 {
    1
}

fn dual() -> PortType {
    PortType::DualPort
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Boundary {
    Uniform(usize),
    PerOperand([usize; 3]),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialDoc {
    /// `"FYu|OYu 5|13"`
    pub group: String,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacDoc {
    pub array: [u64; 2],
    pub energy_pj: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchDoc {
    schema: String,
    mac: MacDoc,
    #[serde(default)]
    dram: Dram,
    #[serde(rename = "level")]
    levels: Vec<LevelDoc>,
    #[serde(rename = "spatial", default, skip_serializing_if = "Vec::is_empty")]
    spatial: Vec<SpatialDoc>,
}

/// A fixed accelerator: memories, PE array and spatial placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hierarchy: MemoryHierarchy,
    pub mac: MacModel,
    pub spatial: PlacedUnrolling,
}

pub fn parse_arch(text: &str) -> Result<Architecture> {
    let doc: ArchDoc = parse_doc(text, ARCH_SCHEMA)?;
    let levels = doc
        .levels
        .iter()
        .map(|l| MemoryLevel {
            name: l.name.clone(),
            entry: MemoryPoolEntry {
                name: l.entry.clone().unwrap_or_else(|| l.name.clone()),
                size_bits: l.size_bits,
                variants: l.variants.clone(),
                allowed_unrolls: l.allowed_unrolls.clone().unwrap_or_else(|| vec![l.unroll]),
                port: l.port,
                double_buffer_capable: l.double_buffered,
            },
            variant: l.variant,
            unroll: l.unroll,
            serves: l.serves.clone(),
            double_buffered: l.double_buffered,
        })
        .collect();
    let hierarchy = MemoryHierarchy::from_levels(levels, doc.dram);
    validate_hierarchy(&hierarchy)
        .map_err(|v| Error::InvalidArchitecture(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))?;
    let mut groups = Vec::new();
    for s in &doc.spatial {
        let group = parse_group(&s.group)?;
        let boundary = match s.boundary {
            Boundary::Uniform(b) => [b; 3],
            Boundary::PerOperand(b) => b,
        };
        for op in Operand::ALL {
            if boundary[op.index()] > hierarchy.top_index(op) {
                return Err(Error::InvalidArchitecture(format!(
                    "spatial group `{}`: boundary {} beyond operand {op}'s levels",
                    s.group,
                    boundary[op.index()]
                )));
            }
        }
        groups.push(PlacedGroup { group, boundary });
    }
    let mac = MacModel { array: (doc.mac.array[0], doc.mac.array[1]), mac_energy_pj: doc.mac.energy_pj };
    Ok(Architecture { hierarchy, mac, spatial: PlacedUnrolling { groups } })
}

pub fn arch_to_text(arch: &Architecture) -> String {
    let doc = ArchDoc {
        schema: ARCH_SCHEMA.into(),
        mac: MacDoc { array: [arch.mac.array.0, arch.mac.array.1], energy_pj: arch.mac.mac_energy_pj },
        dram: arch.hierarchy.dram,
        levels: arch
            .hierarchy
            .levels
            .iter()
            .map(|l| LevelDoc {
                name: l.name.clone(),
                entry: (l.entry.name != l.name).then(|| l.entry.name.clone()),
                size_bits: l.entry.size_bits,
                serves: l.serves.clone(),
                unroll: l.unroll,
                variants: l.entry.variants.clone(),
                variant: l.variant,
                port: l.entry.port,
                double_buffered: l.double_buffered,
                allowed_unrolls: (l.entry.allowed_unrolls != [l.unroll]).then(|| l.entry.allowed_unrolls.clone()),
            })
            .collect(),
        spatial: arch
            .spatial
            .groups
            .iter()
            .map(|g| SpatialDoc { group: g.group.to_string(), boundary: Boundary::PerOperand(g.boundary) })
            .collect(),
    };
    toml::to_string(&doc).expect("architecture serializes")
}

pub fn load_arch(path: &Path) -> Result<Architecture> {
    load(path, parse_arch)
}

// ---- run configuration ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintDoc {
    pub operand: Operand,
    pub level: usize,
    /// `["K 4", "C 2"]`
    pub loops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchDoc {
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "default_beam")]
    pub beam: usize,
    #[serde(default = "default_threshold")]
    pub min_shared_utilization: f64,
    #[serde(default)]
    pub even_only: bool,
    #[serde(default, rename = "constraint")]
    pub constraints: Vec<ConstraintDoc>,
}

fn default_strategy() -> Strategy {
    Strategy::Heuristic
}

fn default_beam() -> usize {
    100
}

fn default_threshold() -> f64 {
    0.7
}

impl Default for SearchDoc {
    fn default() -> Self {
        SearchDoc {
            strategy: default_strategy(),
            objective: Objective::Energy,
            beam: default_beam(),
            min_shared_utilization: default_threshold(),
            even_only: false,
            constraints: Vec::new(),
        }
    }
}

impl SearchDoc {
    pub fn to_config(&self) -> Result<SearchConfig> {
        if !(0.0..=1.0).contains(&self.min_shared_utilization) {
            return Err(Error::Parse("min_shared_utilization must lie in [0, 1]".into()));
        }
        if self.beam == 0 {
            return Err(Error::Parse("beam must be at least 1".into()));
        }
        let mut constraints = Vec::new();
        for c in &self.constraints {
            let mut loops = Vec::new();
            for l in &c.loops {
                let (d, f) = l.trim().split_once(' ').ok_or_else(|| Error::Parse(format!("bad loop `{l}`")))?;
                let f: u64 = f.trim().parse().map_err(|_| Error::Parse(format!("bad factor in `{l}`")))?;
                loops.push((d.parse()?, f));
            }
            constraints.push(LevelConstraint { operand: c.operand, level: c.level, loops });
        }
        Ok(SearchConfig {
            strategy: self.strategy,
            objective: self.objective,
            beam: self.beam,
            tmg: TmgOptions {
                min_shared_utilization: self.min_shared_utilization,
                even_only: self.even_only,
                constraints,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchgenDoc {
    pub area_budget_um2: f64,
    pub pe_array: [u64; 2],
    pub mac_energy_pj: f64,
    /// Each candidate is a list of groups, e.g. `["Ku 8", "OXu 8"]`.
    pub spatial: Vec<Vec<String>>,
    #[serde(default = "three")]
    pub max_levels_per_operand: usize,
    #[serde(default = "three")]
    pub max_instances_per_entry: usize,
    #[serde(default)]
    pub dram: Dram,
}

fn three() -> usize {
    3
}

impl ArchgenDoc {
    pub fn to_config(&self) -> Result<ArchSearchConfig> {
        let mut candidates = Vec::new();
        for c in &self.spatial {
            let groups: Vec<SpatialGroup> = c.iter().map(|g| parse_group(g)).collect::<Result<_>>()?;
            candidates.push(SpatialUnrolling { groups });
        }
        if candidates.is_empty() {
            candidates.push(SpatialUnrolling::default());
        }
        let cfg = ArchSearchConfig {
            area_budget_um2: self.area_budget_um2,
            pe_array: (self.pe_array[0], self.pe_array[1]),
            mac_energy_pj: self.mac_energy_pj,
            spatial_candidates: candidates,
            max_levels_per_operand: self.max_levels_per_operand,
            max_instances_per_entry: self.max_instances_per_entry,
            dram: self.dram,
        };
        cfg.check()?;
        Ok(cfg)
    }
}

/// Search settings plus, for exploration runs, the architecture generator
/// settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigDoc {
    pub schema: String,
    #[serde(default)]
    pub search: SearchDoc,
    #[serde(default)]
    pub archgen: Option<ArchgenDoc>,
}

impl Default for RunConfigDoc {
    fn default() -> Self {
        RunConfigDoc { schema: CONFIG_SCHEMA.into(), search: SearchDoc::default(), archgen: None }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfigDoc> {
    let doc: RunConfigDoc = parse_doc(text, CONFIG_SCHEMA)?;
    doc.search.to_config()?;
    if let Some(a) = &doc.archgen {
        a.to_config()?;
    }
    Ok(doc)
}

pub fn load_config(path: &Path) -> Result<RunConfigDoc> {
    load(path, parse_config)
}
