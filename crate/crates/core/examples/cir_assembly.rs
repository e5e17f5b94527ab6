//! Instantiate CIR implementations into concrete constraint rows.

use std::path::Path;

use r2c::cir::oracle::MicroFixture;
use r2c::cir::{assemble_model, ProblemCir};
use r2c::kb::KnowledgeBase;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let kb = KnowledgeBase::load(&root.join("kb")).expect("seed kb");
    let fixtures = MicroFixture::load_dir(&root.join("fixtures/micro")).expect("fixtures");
    for fx in fixtures.iter().take(4) {
        let cir = ProblemCir { implementations: fx.implementations.clone(), ..ProblemCir::default() };
        println!("{}: {}", fx.name, fx.description);
        for block in assemble_model(&cir, &kb).expect("assembles") {
            println!("  [{} / {} / {}] {}", block.source_rule_id, block.archetype_id, block.paradigm.0, block.text());
        }
        println!();
    }
}
