//! Brute-force check that each template's rows admit no rule-violating
//! assignment, and that weakened variants are caught.

use std::path::Path;
use std::time::Instant;

use r2c::cir::oracle::{check_soundness, MicroFixture};
use r2c::kb::KnowledgeBase;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let kb = KnowledgeBase::load(&root.join("kb")).expect("seed kb");
    let cov = kb.oracle_coverage();
    println!("checkable: {}  opaque: {:?}\n", cov.checkable.len(), cov.excluded);
    let started = Instant::now();
    for fx in MicroFixture::load_dir(&root.join("fixtures/micro")).expect("fixtures") {
        let r = check_soundness(&fx.instance(&kb).expect("instance")).expect("within cap");
        println!(
            "{:<28} holds={} feasible={}/{}",
            fx.name, r.holds, r.model_feasible, r.assignments_checked
        );
        for m in &fx.mutants {
            let r = check_soundness(&fx.mutant_instance(&kb, m).expect("mutant")).expect("within cap");
            println!("  - {:<24} holds={} violates={:?} witness={:?}", m.name, r.holds, r.violated_rules, r.witness.unwrap_or_default());
        }
    }
    println!("\n{:.3}s", started.elapsed().as_secs_f64());
}
