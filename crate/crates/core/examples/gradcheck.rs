//! Finite-difference checks of every analytic gradient.

use stgraph::gradcheck::run_all;
use stgraph::Result;

fn main() -> Result<()> {
    let results = run_all(10, 0)?;
    for r in &results {
        println!(
            "{:<28} cases {:3}  max rel err {:.2e}  tol {:.0e}  {}",
            r.suite,
            r.cases,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
