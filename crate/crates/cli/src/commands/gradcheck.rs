use robself::diffengine::GradCheckOptions;
use robself::suite::{run_suite, SUITE_OPS};

use crate::args::GradcheckArgs;
use crate::{CliError, CliResult};

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult {
    if let Some(op) = &a.op {
        if !SUITE_OPS.contains(&op.as_str()) {
            return Err(CliError::Usage(format!("unknown op `{op}` (known: {})", SUITE_OPS.join(", "))));
        }
    }
    if !(a.tolerance > 0.0 && a.step > 0.0) {
        return Err(CliError::Usage("--tolerance and --step must be positive".into()));
    }
    let opts = GradCheckOptions {
        step: a.step,
        tolerance: a.tolerance,
        samples_per_param: a.samples,
        seed: a.seed,
        ..GradCheckOptions::default()
    };
    let cases = run_suite(&opts, a.op.as_deref())?;
    let mut failed = 0usize;
    for case in &cases {
        for e in &case.report.entries {
            let verdict = if e.passed { "PASS" } else { "FAIL" };
            println!("{:<28} {:<24} {:>10.3e} {verdict}", case.label, e.name, e.max_rel_error);
        }
        if !case.report.passed() {
            failed += 1;
        }
    }
    println!("{} cases, {failed} failed, tolerance {:e}", cases.len(), a.tolerance);
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} gradient check cases above tolerance")));
    }
    Ok(())
}
