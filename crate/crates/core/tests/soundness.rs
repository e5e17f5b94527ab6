use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use r2c::cir::oracle::{check_soundness, MicroFixture};
use r2c::kb::KnowledgeBase;

fn kb() -> KnowledgeBase {
    KnowledgeBase::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/kb"))).unwrap()
}

fn fixtures() -> Vec<MicroFixture> {
    MicroFixture::load_dir(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/micro"))).unwrap()
}

#[test]
fn seed_kb_spans_three_domains() {
    let kb = kb();
    let domains: Vec<_> = kb.domains().map(|(d, _)| d.as_str()).collect();
    assert_eq!(domains.len(), 3, "{domains:?}");
    let cov = kb.oracle_coverage();
    assert!(cov.checkable.len() >= 8);
    assert_eq!(cov.excluded, vec!["ts_cross_district_penalty".to_string()]);
}

#[test]
fn every_checkable_archetype_has_a_fixture() {
    let kb = kb();
    let covered: BTreeSet<String> = fixtures().iter().flat_map(|f| f.archetypes.clone()).collect();
    for id in kb.oracle_coverage().checkable {
        assert!(covered.contains(&id), "no fixture exercises {id}");
    }
}

#[test]
fn fixtures_hold_and_mutants_fail() {
    let kb = kb();
    for fx in fixtures() {
        fx.check_big_m().unwrap();
        let report = check_soundness(&fx.instance(&kb).unwrap()).unwrap();
        assert!(report.holds, "{}: witness {:?} violates {:?}", fx.name, report.witness, report.violated_rules);
        assert!(report.model_feasible > 0, "{} has an empty feasible set", fx.name);
        assert!(!fx.mutants.is_empty(), "{} has no mutants", fx.name);
        for m in &fx.mutants {
            let r = check_soundness(&fx.mutant_instance(&kb, m).unwrap()).unwrap();
            assert!(!r.holds, "{}/{} should admit a violating assignment", fx.name, m.name);
            assert!(r.witness.is_some());
        }
    }
}

// Hand enumeration of the two-unit-job machine fixture, independent of the oracle.
#[test]
fn two_unit_jobs_by_hand() {
    let kb = kb();
    let fx = fixtures().into_iter().find(|f| f.name == "js_no_overlap_continuous").unwrap();
    let m = 3;
    let mut feasible = Vec::new();
    for c1 in 1..=2i64 {
        for c2 in 1..=2i64 {
            for o in 0..=1i64 {
                let row1 = c1 - c2 - m * o >= 1 - m;
                let row2 = c2 - c1 + m * o >= 1;
                if row1 && row2 {
                    feasible.push((c1, c2, o));
                }
            }
        }
    }
    // job 1 first (o = 0) or job 2 first (o = 1), never the same slot
    assert_eq!(feasible, vec![(1, 2, 0), (2, 1, 1)]);
    let report = check_soundness(&fx.instance(&kb).unwrap()).unwrap();
    assert_eq!(report.model_feasible, feasible.len() as u64);
    assert_eq!(report.assignments_checked, 8);

    let dropped = &fx.mutants[0];
    let r = check_soundness(&fx.mutant_instance(&kb, dropped).unwrap()).unwrap();
    let w = r.witness.unwrap();
    assert_eq!(w["C_1"], w["C_2"]);
}

#[test]
fn capacity_fixture_by_hand() {
    let kb = kb();
    let fx = fixtures().into_iter().find(|f| f.name == "ts_vehicle_capacity").unwrap();
    let demands = [4, 5, 3];
    let mut expected = 0u64;
    for mask in 0..8u32 {
        let load: i64 = (0..3).filter(|i| mask & (1 << i) != 0).map(|i| demands[i]).sum();
        if load <= 9 {
            expected += 1;
        }
    }
    let report = check_soundness(&fx.instance(&kb).unwrap()).unwrap();
    assert_eq!(report.model_feasible, expected);
    assert!(report.holds);
}

#[test]
fn depot_witness_is_reported() {
    let kb = kb();
    let fx = fixtures().into_iter().find(|f| f.name == "ts_depot_temporal").unwrap();
    let m = fx.mutants.iter().find(|m| m.name == "drop_depot_order").unwrap();
    let r = check_soundness(&fx.mutant_instance(&kb, m).unwrap()).unwrap();
    let w: BTreeMap<String, i64> = r.witness.unwrap();
    assert!(w["depot_end"] < w["depot_start"]);
    assert_eq!(r.violated_rules, vec!["R4".to_string()]);
}
