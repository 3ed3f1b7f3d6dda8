#![allow(dead_code)]

use memdse_core::architecture::{
    Dram, MemoryHierarchy, MemoryLevel, MemoryPoolEntry, MemoryVariant, PortType, SpatialGroup,
};
use memdse_core::mapping::{level_occupancy, padded_bounds, Schedule};
use memdse_core::workload::{lpf_factorize_bounds, prime_factors};
use memdse_core::{LayerSpec, LoopDim, Operand, Precision};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn entry(name: &str, size_bits: u64, bw: [u64; 2], cost: [f64; 2], unroll: u64, port: PortType) -> MemoryPoolEntry {
    MemoryPoolEntry {
        name: name.into(),
        size_bits,
        variants: vec![MemoryVariant { bw, cost, area: 1000.0 }],
        allowed_unrolls: vec![unroll],
        port,
        double_buffer_capable: true,
    }
}

pub fn level(name: &str, e: MemoryPoolEntry, unroll: u64, serves: &[Operand], db: bool) -> MemoryLevel {
    MemoryLevel { name: name.into(), entry: e, variant: 0, unroll, serves: serves.to_vec(), double_buffered: db }
}

pub struct Instance {
    pub spec: LayerSpec,
    pub hierarchy: MemoryHierarchy,
    pub schedule: Schedule,
}

const SMALL: [u64; 9] = [1, 1, 2, 3, 4, 5, 6, 8, 9];

pub fn random_layer(rng: &mut impl Rng, max_macs: u64) -> LayerSpec {
    loop {
        let mut bounds = [1u64; 7];
        for b in bounds.iter_mut() {
            *b = *SMALL.choose(rng).unwrap();
        }
        if rng.gen_bool(0.7) {
            bounds[LoopDim::B.index()] = 1;
        }
        let macs: u64 = bounds.iter().product();
        if macs < 4 || macs > max_macs {
            continue;
        }
        let o_final = [4, 8, 16][rng.gen_range(0..3)];
        let precision = Precision {
            w: [4, 8, 16][rng.gen_range(0..3)],
            i: [4, 8, 16][rng.gen_range(0..3)],
            o_partial: o_final * rng.gen_range(1..=3),
            o_final,
        };
        let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        return LayerSpec::new(bounds, stride, precision).unwrap();
    }
}

/// Random hierarchy shape: per operand 1 or 2 on-chip levels, the upper one
/// optionally shared. Returns `(serves per on-chip level bottom-up)`.
fn random_shape(rng: &mut impl Rng, allow_shared: bool) -> Vec<Vec<Operand>> {
    let mut levels: Vec<Vec<Operand>> = Vec::new();
    let mut upper: Vec<Operand> = Vec::new();
    for op in Operand::ALL {
        match rng.gen_range(0..3) {
            0 => {}
            1 => upper.push(op),
            _ => {
                levels.push(vec![op]);
                upper.push(op);
            }
        }
    }
    if upper.is_empty() {
        return levels;
    }
    if allow_shared && upper.len() > 1 && rng.gen_bool(0.6) {
        levels.push(upper);
    } else {
        for op in upper {
            levels.push(vec![op]);
        }
    }
    levels
}

/// Random valid schedule, then a hierarchy sized to fit it exactly.
pub fn random_instance(rng: &mut impl Rng, max_macs: u64, allow_shared: bool) -> Instance {
    let spec = random_layer(rng, max_macs);
    let shape = random_shape(rng, allow_shared);
    let mut counts = [1usize; 3];
    for serves in &shape {
        for &op in serves {
            counts[op.index()] += 1;
        }
    }

    // Spatial groups, occasionally with a factor that does not divide.
    let mut bounds = spec.bounds();
    let mut groups: Vec<SpatialGroup> = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        let mut g = Vec::new();
        for _ in 0..rng.gen_range(1..=2) {
            let d = LoopDim::ALL[rng.gen_range(0..7)];
            let bd = bounds[d.index()];
            if bd < 2 {
                continue;
            }
            let f = if rng.gen_bool(0.2) && bd > 2 {
                rng.gen_range(2..bd)
            } else {
                *prime_factors(bd).choose(rng).unwrap()
            };
            bounds[d.index()] = bd.div_ceil(f);
            g.push((d, f));
        }
        if !g.is_empty() {
            groups.push(SpatialGroup(g));
        }
    }
    let mut temporal = lpf_factorize_bounds(&bounds);
    temporal.shuffle(rng);

    let len = temporal.len();
    let even = rng.gen_bool(0.3);
    let a = rng.gen_range(0..=len);
    let mixed = shape.iter().filter(|s| s.len() > 1).any(|s| s.iter().any(|o| counts[o.index()] == 2));
    let b = if mixed { 0 } else { rng.gen_range(0..=a) };
    let mut cuts: [Vec<usize>; 3] = Default::default();
    for op in Operand::ALL {
        let n = counts[op.index()];
        let mut c: Vec<usize> = if even {
            [b, a][3 - n..].to_vec()
        } else {
            let mut c: Vec<usize> = (0..n - 1).map(|_| rng.gen_range(0..=len)).collect();
            c.sort();
            c
        };
        c.push(len);
        cuts[op.index()] = c;
    }

    let placed: Vec<(SpatialGroup, [usize; 3])> = groups
        .into_iter()
        .map(|g| {
            let p = [0, 1, 2].map(|o| rng.gen_range(0..counts[o]));
            (g, p)
        })
        .collect();
    let sched0 = Schedule::new(temporal, cuts, placed, [1; 7]);
    let padded = padded_bounds(&spec, &sched0.spatial);
    let schedule = Schedule { padded, ..sched0 };

    // Size the hierarchy to fit.
    let probe = build_hierarchy(rng, &shape, |_| (u64::MAX / 4, 1));
    let occ = level_occupancy(&schedule, &spec, &probe);
    let needed_units = |idx: usize| -> u64 {
        shape[idx]
            .iter()
            .map(|&op| {
                let pos = probe.position(op, memdse_core::architecture::LevelId::OnChip(idx)).unwrap();
                schedule.spatial_where(op, |b| b > pos).iter().map(|l| l.1).product::<u64>()
            })
            .max()
            .unwrap()
    };
    let hierarchy = build_hierarchy(rng, &shape, |idx| (occ[&idx].max(1) + rng_pad(idx), needed_units(idx)));
    Instance { spec, hierarchy, schedule }
}

fn rng_pad(idx: usize) -> u64 {
    (idx as u64 * 7) % 5
}

fn build_hierarchy(
    rng: &mut impl Rng,
    shape: &[Vec<Operand>],
    mut size: impl FnMut(usize) -> (u64, u64),
) -> MemoryHierarchy {
    let levels = shape
        .iter()
        .enumerate()
        .map(|(idx, serves)| {
            let (bits, unroll) = size(idx);
            let bw = [8 * rng.gen_range(1..=8), 8 * rng.gen_range(1..=8)];
            let port = if rng.gen_bool(0.5) { PortType::DualPort } else { PortType::SinglePort };
            let e = entry(&format!("M{idx}"), bits, bw, [0.5 + idx as f64, 0.7 + idx as f64], unroll, port);
            level(&format!("M{idx}"), e, unroll, serves, rng.gen_bool(0.5))
        })
        .collect();
    MemoryHierarchy::from_levels(
        levels,
        Dram { read_energy_per_bit: 10.0, write_energy_per_bit: 12.0, bandwidth_bits: None },
    )
}

/// The spatial placement a schedule was built with.
pub fn placed_of(s: &Schedule) -> memdse_core::architecture::PlacedUnrolling {
    use memdse_core::architecture::{PlacedGroup, PlacedUnrolling};
    PlacedUnrolling {
        groups: s
            .spatial
            .groups
            .iter()
            .enumerate()
            .map(|(g, group)| PlacedGroup { group: group.clone(), boundary: [0, 1, 2].map(|o| s.placement[o][g]) })
            .collect(),
    }
}

pub fn mac_for(s: &Schedule) -> memdse_core::architecture::MacModel {
    memdse_core::architecture::MacModel { array: (s.spatial.product(), 1), mac_energy_pj: 0.5 }
}
