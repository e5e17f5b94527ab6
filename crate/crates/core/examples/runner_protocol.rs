//! The runner contract: `<runner> --code PATH --timeout SECS --scratch DIR`
//! prints exactly one `R2C_RESULT: {json}` line.

use std::path::Path;
use std::time::Duration;

use r2c::runner::{format_result_line, parse_result_line, Executor, RunnerResult, ShimExecutor};

fn main() {
    let line = format_result_line(&RunnerResult::optimal(42.0));
    println!("{line}");
    println!("{:?}\n", parse_result_line(&format!("solver chatter\n{line}\n")).expect("one result line"));

    let stub = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/shim/stub_runner.sh");
    let exec = ShimExecutor::new("sh").with_args([stub.display().to_string()]);
    let scratch = std::env::temp_dir().join("r2c-runner-example");
    let candidates = [
        "print('hi')\n# r2c-stub: {\"status\":\"optimal\",\"objective\":7.0,\"iis_constraints\":[],\"stdout_tail\":\"\",\"stderr_tail\":\"\"}",
        "# r2c-stub: {\"status\":\"infeasible\",\"objective\":null,\"iis_constraints\":[\"cap_1\"],\"stdout_tail\":\"\",\"stderr_tail\":\"\"}",
        "print('no marker')",
    ];
    for code in candidates {
        let r = exec.execute(code, &scratch, Duration::from_secs(10));
        println!("{} objective={:?} iis={:?}", r.status.as_str(), r.objective, r.iis_constraints);
    }
}
