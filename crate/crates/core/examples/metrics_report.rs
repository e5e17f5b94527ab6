//! Score outcomes against reference optima and print a benchmark report.

use r2c::cir::DomainTag;
use r2c::eval::{compute_metrics, judge, render_markdown, OutcomeStatus, Sense, SolveOutcome, DEFAULT_ABS_FLOOR};

fn main() {
    for (obj, reference) in [(101.0, 100.0), (101.2, 100.0), (4e-7, 0.0), (-99.5, -100.0)] {
        println!("judge({obj}, {reference}) = {:?}", judge(obj, reference, Sense::Min, DEFAULT_ABS_FLOOR));
    }

    use OutcomeStatus::*;
    let rows = [
        ("js_two_jobs", DomainTag::JobShop, [Correct, Correct, Incorrect]),
        ("js_flow_line", DomainTag::JobShop, [Incorrect, Correct, Correct]),
        ("ts_vans", DomainTag::Transportation, [ExecError, Infeasible, Correct]),
        ("hc_nurses", DomainTag::Healthcare, [Timeout, NoObjective, Incorrect]),
    ];
    let ids: Vec<String> = rows.iter().map(|r| r.0.to_string()).collect();
    let domains: Vec<DomainTag> = rows.iter().map(|r| r.1).collect();
    let matrix: Vec<Vec<SolveOutcome>> = rows.iter().map(|r| r.2.iter().map(|s| SolveOutcome::of(*s)).collect()).collect();
    let report = compute_metrics(&ids, &domains, &matrix, &[1, 2, 3]).expect("rectangular");
    println!("\n{}", render_markdown(&report));
}
