use std::io::Write;

use memdse_core::io::{self, Architecture};
use memdse_core::tmg::{Objective, Strategy};
use memdse_core::{presets, Error, LoopDim};

#[test]
fn workload_round_trip() {
    let layers = vec![presets::alexnet_conv2(), presets::alexnet_conv2().with_stride(2, 1).unwrap().with_name("s")];
    let text = io::workload_to_text(&layers);
    assert_eq!(io::parse_workload(&text).unwrap(), layers);
}

#[test]
fn workload_defaults() {
    let text = r#"
schema = "memdse-workload/1"
[[layer]]
bounds = { K = 4, C = 2 }
"#;
    let l = io::parse_workload(text).unwrap();
    assert_eq!(l[0].name, "layer0");
    assert_eq!(l[0].bound(LoopDim::K), 4);
    assert_eq!(l[0].bound(LoopDim::OX), 1);
    assert_eq!(l[0].stride, (1, 1));
}

#[test]
fn schema_header_is_checked() {
    let missing = "[[layer]]\nbounds = { K = 4 }\n";
    assert!(matches!(io::parse_workload(missing), Err(Error::Parse(m)) if m.contains("missing")));
    let wrong = "schema = \"memdse-workload/9\"\n[[layer]]\nbounds = { K = 4 }\n";
    assert!(matches!(io::parse_workload(wrong), Err(Error::Parse(m)) if m.contains("not supported")));
}

#[test]
fn bad_values_are_rejected() {
    let dim = "schema = \"memdse-workload/1\"\n[[layer]]\nbounds = { Q = 4 }\n";
    assert!(io::parse_workload(dim).is_err());
    let zero = "schema = \"memdse-workload/1\"\n[[layer]]\nbounds = { K = 0 }\n";
    assert!(io::parse_workload(zero).is_err());
    let typo = "schema = \"memdse-workload/1\"\n[[layer]]\nbound = { K = 2 }\n";
    assert!(io::parse_workload(typo).is_err());
}

#[test]
fn pool_round_trip() {
    let pool = presets::sample_pool();
    assert_eq!(io::parse_pool(&io::pool_to_text(&pool)).unwrap(), pool);
}

#[test]
fn arch_round_trip() {
    let arch = Architecture {
        hierarchy: presets::eyeriss_hierarchy(),
        mac: presets::eyeriss_mac(),
        spatial: presets::eyeriss_spatial(),
    };
    let text = io::arch_to_text(&arch);
    assert_eq!(io::parse_arch(&text).unwrap(), arch);
}

#[test]
fn arch_boundary_forms() {
    let base = io::arch_to_text(&Architecture {
        hierarchy: presets::eyeriss_hierarchy(),
        mac: presets::eyeriss_mac(),
        spatial: Default::default(),
    });
    let uniform = format!("{base}\n[[spatial]]\ngroup = \"Ku 4\"\nboundary = 1\n");
    assert_eq!(io::parse_arch(&uniform).unwrap().spatial.groups[0].boundary, [1, 1, 1]);
    let per = format!("{base}\n[[spatial]]\ngroup = \"Ku|OXu 4|2\"\nboundary = [0, 1, 2]\n");
    assert_eq!(io::parse_arch(&per).unwrap().spatial.groups[0].boundary, [0, 1, 2]);
    let beyond = format!("{base}\n[[spatial]]\ngroup = \"Ku 4\"\nboundary = 9\n");
    assert!(io::parse_arch(&beyond).is_err());
}

#[test]
fn config_defaults_and_constraints() {
    let doc = io::parse_config("schema = \"memdse-config/1\"\n").unwrap();
    let cfg = doc.search.to_config().unwrap();
    assert_eq!(cfg.strategy, Strategy::Heuristic);
    assert_eq!(cfg.objective, Objective::Energy);
    assert_eq!(cfg.beam, 100);
    assert_eq!(cfg.tmg.min_shared_utilization, 0.7);
    let text = r#"
schema = "memdse-config/1"
[search]
strategy = "iterative"
objective = "edp"
beam = 7
[[search.constraint]]
operand = "W"
level = 0
loops = ["K 4", "C 2"]
"#;
    let cfg = io::parse_config(text).unwrap().search.to_config().unwrap();
    assert_eq!(cfg.strategy, Strategy::Iterative);
    assert_eq!(cfg.beam, 7);
    assert_eq!(cfg.tmg.constraints[0].loops, vec![(LoopDim::K, 4), (LoopDim::C, 2)]);
    assert!(io::parse_config("schema = \"memdse-config/1\"\n[search]\nbeam = 0\n").is_err());
}

#[test]
fn archgen_section() {
    let text = r#"
schema = "memdse-config/1"
[archgen]
area_budget_um2 = 1e6
pe_array = [8, 8]
mac_energy_pj = 0.5
spatial = [["Ku 8", "OXu 8"], []]
"#;
    let a = io::parse_config(text).unwrap().archgen.unwrap().to_config().unwrap();
    assert_eq!(a.spatial_candidates.len(), 2);
    assert_eq!(a.max_levels_per_operand, 3);
}

#[test]
fn load_errors_name_the_file() {
    let missing = std::path::Path::new("/nonexistent/w.toml");
    assert!(matches!(io::load_workload(missing), Err(Error::Io { .. })));
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "schema = \"memdse-workload/1\"\n[[layer]]\nbounds = {{ K = -1 }}").unwrap();
    let e = io::load_workload(f.path()).unwrap_err().to_string();
    assert!(e.contains(&f.path().display().to_string()), "{e}");
}
