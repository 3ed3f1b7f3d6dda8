//! Ready-made layers and hardware used by the examples, benchmarks and the
//! regression tests. Access energies are CACTI-style estimates, not
//! measured values.

use crate::architecture::{
    Dram, MacModel, MemoryHierarchy, MemoryLevel, MemoryPool, MemoryPoolEntry, MemoryVariant, PlacedUnrolling,
    PortType, SpatialGroup,
};
use crate::workload::{LayerSpec, LoopDim, Operand, Precision};

pub const EYERISS_ARRAY: (u64, u64) = (12, 14);

pub fn precision16() -> Precision {
    Precision { w: 16, i: 16, o_partial: 16, o_final: 16 }
}

/// AlexNet CONV2 with the dimensions used for the Eyeriss chip (B = 1).
pub fn alexnet_conv2() -> LayerSpec {
    use LoopDim::*;
    LayerSpec::from_dims(&[(K, 256), (C, 48), (OX, 26), (OY, 26), (FX, 5), (FY, 5)], precision16())
        .expect("valid layer")
        .with_name("alexnet_conv2")
}

fn variant(bw: u64, read: f64, write: f64, area: f64) -> MemoryVariant {
    MemoryVariant { bw: [bw, bw], cost: [read, write], area }
}

fn entry(
    name: &str,
    size_bits: u64,
    variants: Vec<MemoryVariant>,
    unrolls: Vec<u64>,
    port: PortType,
) -> MemoryPoolEntry {
    MemoryPoolEntry {
        name: name.into(),
        size_bits,
        variants,
        allowed_unrolls: unrolls,
        port,
        double_buffer_capable: false,
    }
}

pub fn eyeriss_dram() -> Dram {
    Dram { read_energy_per_bit: 20.0, write_energy_per_bit: 20.0, bandwidth_bits: None }
}

pub fn eyeriss_mac() -> MacModel {
    MacModel { array: EYERISS_ARRAY, mac_energy_pj: 0.5 }
}

/// Per-PE register files for W, I and O plus a global buffer shared by I
/// and O. Weights stream straight from DRAM into the PEs.
pub fn eyeriss_hierarchy() -> MemoryHierarchy {
    let pe = EYERISS_ARRAY.0 * EYERISS_ARRAY.1;
    let rf = |name: &str, words: u64, read: f64| {
        let e = entry(
            name,
            words * 16,
            vec![variant(16, read, read * 1.25, 60.0 * words as f64)],
            vec![pe],
            PortType::DualPort,
        );
        MemoryLevel { name: name.into(), entry: e, variant: 0, unroll: pe, serves: Vec::new(), double_buffered: false }
    };
    let mut w = rf("w_rf", 224, 1.8);
    w.serves = vec![Operand::W];
    let mut i = rf("i_rf", 12, 0.6);
    i.serves = vec![Operand::I];
    let mut o = rf("o_rf", 24, 0.8);
    o.serves = vec![Operand::O];
    let glb = MemoryLevel {
        name: "glb".into(),
        entry: entry("glb108k", 884_736, vec![variant(64, 40.0, 45.0, 2.0e6)], vec![1], PortType::DualPort),
        variant: 0,
        unroll: 1,
        serves: vec![Operand::I, Operand::O],
        double_buffered: false,
    };
    MemoryHierarchy::from_levels(vec![w, i, o, glb], eyeriss_dram())
}

/// The same levels, but with the global buffer split into separate I and O
/// halves.
pub fn eyeriss_hierarchy_separate() -> MemoryHierarchy {
    let mut h = eyeriss_hierarchy();
    let mut glb_o = h.levels[3].clone();
    h.levels[3].name = "glb_i".into();
    h.levels[3].serves = vec![Operand::I];
    glb_o.name = "glb_o".into();
    glb_o.serves = vec![Operand::O];
    h.levels.push(glb_o);
    MemoryHierarchy::from_levels(h.levels, h.dram)
}

/// `FYu|OYu|OYu 5|13|2` replicating the register files.
pub fn eyeriss_spatial() -> PlacedUnrolling {
    use LoopDim::*;
    PlacedUnrolling::uniform(
        vec![SpatialGroup(vec![(FY, 5)]), SpatialGroup(vec![(OY, 13)]), SpatialGroup(vec![(OY, 2)])],
        1,
    )
}

/// A small CACTI-style pool at 65 nm: register files, scratchpads and a
/// large buffer, each with three bandwidth variants.
pub fn sample_pool() -> MemoryPool {
    let e = |name: &str, bytes: u64, base: f64, area: f64, unrolls: Vec<u64>| {
        let variants = [(8u64, 1.0), (16, 1.15), (64, 2.8)]
            .iter()
            .map(|&(bw, k)| variant(bw, base * k, base * k * 1.12, area * (1.0 + bw as f64 / 64.0)))
            .collect();
        entry(name, bytes * 8, variants, unrolls, PortType::DualPort)
    };
    MemoryPool {
        entries: vec![
            e("rf32B", 32, 0.5, 2500.0, vec![1, 8, 64]),
            e("rf128B", 128, 0.95, 8000.0, vec![1, 8, 64]),
            e("sp2kB", 2048, 3.2, 60_000.0, vec![1, 8]),
            e("sp32kB", 32 * 1024, 9.5, 450_000.0, vec![1]),
            e("buf256kB", 256 * 1024, 26.0, 2.6e6, vec![1]),
        ],
    }
}
