use std::collections::BTreeSet;

use memdse_core::archgen::{
    enumerate_hierarchies, expand_pool, explore, optimize_bandwidth, pareto, pareto_front, ArchSearchConfig,
};
use memdse_core::architecture::{
    total_area, validate_hierarchy, Dram, MemoryHierarchy, MemoryPool, MemoryPoolEntry, MemoryVariant, PortType,
    SpatialGroup, SpatialUnrolling,
};
use memdse_core::tmg::{SearchConfig, Strategy};
use memdse_core::{LayerSpec, LoopDim, Precision};

fn rf64() -> MemoryPoolEntry {
    MemoryPoolEntry {
        name: "rf64B".into(),
        size_bits: 512,
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

fn sized(name: &str, bits: u64, area: f64, unrolls: Vec<u64>) -> MemoryPoolEntry {
    MemoryPoolEntry {
        name: name.into(),
        size_bits: bits,
        variants: vec![MemoryVariant {
            bw: [16, 16],
            cost: [1.0 + bits as f64 / 1000.0, 1.2 + bits as f64 / 1000.0],
            area,
        }],
        allowed_unrolls: unrolls,
        port: PortType::DualPort,
        double_buffer_capable: false,
    }
}

fn cfg(budget: f64, pe: (u64, u64)) -> ArchSearchConfig {
    ArchSearchConfig {
        area_budget_um2: budget,
        pe_array: pe,
        mac_energy_pj: 0.5,
        spatial_candidates: vec![SpatialUnrolling::default()],
        max_levels_per_operand: 3,
        max_instances_per_entry: 3,
        dram: Dram::default(),
    }
}

#[test]
fn pool_expansion() {
    let pool = MemoryPool { entries: vec![rf64()] };
    assert_eq!(expand_pool(&pool, (8, 8)).len(), 9);
    assert_eq!(expand_pool(&pool, (4, 4)).len(), 6);
    let one = MemoryPool { entries: vec![sized("m", 64, 10.0, vec![1])] };
    assert_eq!(expand_pool(&one, (1, 1)).len(), 1);
}

#[test]
fn single_entry_single_instance() {
    let pool = MemoryPool { entries: vec![sized("m", 64, 10.0, vec![1])] };
    let hs = enumerate_hierarchies(&pool, &cfg(15.0, (1, 1)));
    assert_eq!(hs.len(), 1);
    assert_eq!(hs[0].levels.len(), 1);
    assert_eq!(hs[0].levels[0].serves.len(), 3);
    assert!(enumerate_hierarchies(&pool, &cfg(5.0, (1, 1))).is_empty());
    assert!(cfg(0.0, (1, 1)).check().is_err());
}

/// Independent count: every multiset of (entry, unroll) instances, every
/// operand mask per instance, canonicalized as a sorted signature.
fn brute_count(pool: &MemoryPool, c: &ArchSearchConfig) -> usize {
    let mut slots = Vec::new();
    for (e, entry) in pool.entries.iter().enumerate() {
        for &u in &entry.allowed_unrolls {
            if u <= c.pe_array.0 * c.pe_array.1 {
                let area = entry.variants.iter().map(|v| v.area).fold(f64::INFINITY, f64::min) * u as f64;
                slots.push((e, u, area));
            }
        }
    }
    let mut seen: BTreeSet<Vec<(usize, u64, u8)>> = BTreeSet::new();
    let mut counts = vec![0usize; slots.len()];
    loop {
        let per_entry_ok = (0..pool.entries.len()).all(|e| {
            slots.iter().zip(&counts).filter(|(s, _)| s.0 == e).map(|(_, &n)| n).sum::<usize>()
                <= c.max_instances_per_entry
        });
        let area: f64 = slots.iter().zip(&counts).map(|(s, &n)| s.2 * n as f64).sum();
        let members: Vec<(usize, u64)> =
            slots.iter().zip(&counts).flat_map(|(s, &n)| std::iter::repeat((s.0, s.1)).take(n)).collect();
        if per_entry_ok && !members.is_empty() && area <= c.area_budget_um2 {
            let n = members.len();
            for code in 0..7usize.pow(n as u32) {
                let masks: Vec<u8> = (0..n).map(|k| (code / 7usize.pow(k as u32) % 7 + 1) as u8).collect();
                let ok = (0..3).all(|o| {
                    let mut mine: Vec<(u64, u64)> = members
                        .iter()
                        .zip(&masks)
                        .filter(|(_, &m)| m & (1 << o) != 0)
                        .map(|(&(e, u), _)| (pool.entries[e].size_bits, u))
                        .collect();
                    mine.sort_by_key(|&(s, u)| (s, std::cmp::Reverse(u)));
                    !mine.is_empty()
                        && mine.len() <= c.max_levels_per_operand
                        && mine.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 >= w[1].1)
                });
                if ok {
                    let mut sig: Vec<(usize, u64, u8)> =
                        members.iter().zip(&masks).map(|(&(e, u), &m)| (e, u, m)).collect();
                    sig.sort();
                    seen.insert(sig);
                }
            }
        }
        let mut k = 0;
        while k < counts.len() && counts[k] == c.max_instances_per_entry {
            counts[k] = 0;
            k += 1;
        }
        if k == counts.len() {
            break;
        }
        counts[k] += 1;
    }
    seen.len()
}

#[test]
fn enumeration_count_matches_brute_force() {
    let pools = [
        vec![sized("a", 64, 10.0, vec![1, 4])],
        vec![sized("a", 64, 10.0, vec![1, 4]), sized("b", 1024, 40.0, vec![1])],
        vec![sized("a", 64, 10.0, vec![1, 4]), sized("b", 1024, 40.0, vec![1]), sized("c", 1024, 55.0, vec![1])],
    ];
    for (p, entries) in pools.into_iter().enumerate() {
        let pool = MemoryPool { entries };
        for budget in [10.0, 60.0, 120.0, 200.0] {
            let c = cfg(budget, (2, 2));
            let hs = enumerate_hierarchies(&pool, &c);
            assert_eq!(hs.len(), brute_count(&pool, &c), "pool {p} budget {budget}");
            if budget == 200.0 {
                assert!(hs.len() > 5, "pool {p}: {}", hs.len());
            }
            for h in &hs {
                assert!(total_area(h) <= budget);
                assert!(validate_hierarchy(h).is_ok());
            }
            let keys: BTreeSet<String> = hs.iter().map(MemoryHierarchy::key).collect();
            assert_eq!(keys.len(), hs.len());
        }
    }
}

#[test]
fn bandwidth_selection() {
    let pool = MemoryPool { entries: vec![rf64()] };
    let h = enumerate_hierarchies(&pool, &cfg(1e9, (1, 1))).into_iter().find(|h| h.levels.len() == 1).unwrap();
    let pick = |need: f64| optimize_bandwidth(&h, &[[need, need]], 1e9).levels[0].variant().bw[0];
    assert_eq!(pick(12.0), 16);
    assert_eq!(pick(0.0), 8);
    assert_eq!(pick(100.0), 64);
    // the wide variant does not fit a tight budget
    assert_eq!(optimize_bandwidth(&h, &[[100.0, 100.0]], 5000.0).levels[0].variant().bw[0], 16);
}

#[derive(Clone)]
struct P(f64, u64, f64, String);

fn front(ps: &[P]) -> Vec<String> {
    pareto_front(ps, |p| (p.0, p.1, p.2, p.3.as_str())).into_iter().map(|i| ps[i].3.clone()).collect()
}

#[test]
fn pareto_extraction() {
    let a = P(1.0, 10, 5.0, "a".into());
    let b = P(2.0, 5, 5.0, "b".into());
    let c = P(3.0, 3, 1.0, "c".into());
    assert_eq!(front(&[c.clone(), a.clone(), b.clone()]), ["a", "b", "c"]);
    let d = P(2.0, 10, 5.0, "d".into());
    assert_eq!(front(&[d, a.clone()]), ["a"]);
    let a2 = P(1.0, 10, 5.0, "a2".into());
    assert_eq!(front(&[a2, a.clone()]), ["a"]);
    // idempotent and order independent
    let all = [a.clone(), b.clone(), c.clone(), P(4.0, 20, 9.0, "z".into())];
    let f1 = front(&all);
    let mut rev = all.to_vec();
    rev.reverse();
    assert_eq!(front(&rev), f1);
    let kept: Vec<P> = all.iter().filter(|p| f1.contains(&p.3)).cloned().collect();
    assert_eq!(front(&kept), f1);
}

#[test]
fn exploration_respects_the_budget() {
    use LoopDim::*;
    let spec = LayerSpec::from_dims(&[(K, 8), (C, 4), (OX, 4), (FX, 3)], Precision::default()).unwrap();
    let pool = MemoryPool { entries: vec![sized("rf", 256, 100.0, vec![1, 4]), sized("buf", 4096, 900.0, vec![1])] };
    let mut c = cfg(2000.0, (2, 2));
    c.spatial_candidates = vec![
        SpatialUnrolling::default(),
        SpatialUnrolling { groups: vec![SpatialGroup(vec![(K, 2)]), SpatialGroup(vec![(OX, 2)])] },
    ];
    let points = explore(&pool, &spec, &c, &SearchConfig::new(Strategy::Heuristic)).unwrap();
    assert!(!points.is_empty());
    for p in &points {
        assert!(p.area_um2 <= 2000.0);
        assert_eq!(p.key, p.hierarchy.key());
    }
    let front = pareto(&points);
    assert!(!front.is_empty() && front.len() <= points.len());
    assert_eq!(pareto(&front), front);
}
