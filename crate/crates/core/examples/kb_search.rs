//! Retrieve constraint templates for natural-language rules.
//!
//! cargo run --example kb_search -- "a machine cannot process two jobs at the same time"

use std::path::Path;

use r2c::kb::{render_domain_knowledge, KnowledgeBase, DEFAULT_TOP_K};

fn main() {
    let kb = KnowledgeBase::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/kb"))).expect("seed kb");
    let query = std::env::args().nth(1).unwrap_or_else(|| "a machine cannot process two jobs at the same time".into());
    for (domain, templates) in kb.domains() {
        println!("{domain}: {} templates", templates.len());
    }
    let hits = kb.retrieve(&["job shop"], &query, DEFAULT_TOP_K).expect("known domain");
    println!("\nquery: {query}");
    for h in &hits {
        println!("  {:<36} {:>7.3}  [{}]", h.template.template_id, h.score, h.matched_terms.join(" "));
    }
    println!("\n{}", render_domain_knowledge(&hits[..hits.len().min(2)]));
}
