//! Finite-difference check of every differentiable operation and of a small
//! multitask network. `grad-check` in the CLI runs the same suite.
//!
//! cargo run --release --example grad_check -- [cases]

use mtlforge::experiment::gradcheck;

fn main() -> mtlforge::Result<()> {
    let cases = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    for check in gradcheck::run_all(cases, 7)? {
        println!(
            "{:<24} worst {:.2e} in case {:>3}  {}",
            check.name,
            check.max_rel_error,
            check.worst_case,
            if check.passed() { "ok" } else { "FAIL" }
        );
    }
    let broken = gradcheck::run_check("broken_double", gradcheck::broken_case, 5, 0)?;
    println!(
        "negative control: a backward missing its factor of two gives {:.2e}, caught: {}",
        broken.max_rel_error,
        !broken.passed()
    );
    Ok(())
}
