//! Shared fixtures for the benchmarks.

use memdse_core::architecture::{MacModel, MemoryHierarchy, PlacedUnrolling};
use memdse_core::{presets, LayerSpec, LoopDim, Precision};

pub struct Fixture {
    pub spec: LayerSpec,
    pub hierarchy: MemoryHierarchy,
    pub spatial: PlacedUnrolling,
    pub mac: MacModel,
}

pub fn conv2() -> Fixture {
    Fixture {
        spec: presets::alexnet_conv2(),
        hierarchy: presets::eyeriss_hierarchy(),
        spatial: presets::eyeriss_spatial(),
        mac: presets::eyeriss_mac(),
    }
}

/// Small enough for exhaustive search to finish in milliseconds.
pub fn small_layer() -> LayerSpec {
    use LoopDim::*;
    LayerSpec::from_dims(&[(K, 16), (C, 8), (OX, 8), (OY, 4), (FX, 3), (FY, 3)], Precision::default())
        .expect("valid layer")
        .with_name("small")
}
