//! Finite-difference check of every primitive, layer and the model loss.

use meshgeo::apps::run_gradcheck_suite;

fn main() -> meshgeo::Result<()> {
    let report = run_gradcheck_suite(0, |c| {
        println!("{:<14} {:.2e} ({} probes)", c.name, c.report.max_rel_error, c.report.probes);
    })?;
    println!("max {:.2e} in {:.1} s, passed: {}", report.max_rel_error(), report.seconds, report.passed());
    Ok(())
}
