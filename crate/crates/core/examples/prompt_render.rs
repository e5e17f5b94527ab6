//! Show the exact request sent to each agent for a problem statement.
//!
//! cargo run --example prompt_render -- extractor

use r2c::agents::{self, prompts, Amendments};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "extractor".into());
    let problem = "Two jobs share one machine. Job 1 takes 2 minutes, job 2 takes 3. Minimize the makespan.";
    match which.as_str() {
        "extractor" => {
            let amend = Amendments { reflection_hints: Some("Record the deadline as a hard rule.".into()), failed_validation: None };
            let req = agents::extractor_request(problem, &amend);
            println!("--- system ({} chars, output schema)\n{}...\n", req.system_text.as_deref().unwrap_or("").len(), &req.system_text.unwrap_or_default()[..200]);
            println!("--- user\n{}", req.user_text);
        }
        "baseline" => println!("{}", agents::baseline_request(problem).user_text),
        name => match prompts::ALL.iter().find(|t| t.name == name) {
            Some(t) => {
                println!("placeholders: {:?}\n", t.placeholders);
                println!("{}", t.raw());
            }
            None => {
                let names: Vec<_> = prompts::ALL.iter().map(|t| t.name).collect();
                eprintln!("unknown prompt {name}; one of extractor, baseline, {}", names.join(", "));
                std::process::exit(2);
            }
        },
    }
}
