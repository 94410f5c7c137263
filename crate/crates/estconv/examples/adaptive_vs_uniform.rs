//! Adaptive versus uniform refinement for the Poisson model problem on the
//! L-shape: the corner singularity drags uniform refinement toward slope -1/3
//! in elements, while adaptive marking keeps the optimal -1/2.
//!
//! ```bash
//! cargo run --example adaptive_vs_uniform
//! ```

use estconv::driver::{estimate_rate, run_adaptive, RunConfig};

fn run(strategy_line: &str, cap: usize) -> estconv::Result<estconv::driver::RunLog> {
    let cfg = RunConfig::parse(&format!(
        "problem = poisson\ndomain = l_shape\nf = 1\n{strategy_line}\nmax_elements = {cap}\n"
    ))?;
    run_adaptive(&cfg)
}

fn main() -> estconv::Result<()> {
    let adaptive = run("strategy = maximum\ntheta = 0.5", 20000)?;
    let uniform = run("strategy = maximum\ntheta = 1", 100000)?;

    println!("{:>5} {:>10} {:>10} {:>12}", "level", "elements", "dofs", "eta");
    for s in &adaptive.summaries {
        println!("{:>5} {:>10} {:>10} {:>12.6}", s.level, s.n_elements, s.n_dofs, s.eta);
    }

    let slope_adaptive = estimate_rate(&adaptive, 8)?;
    let slope_uniform = estimate_rate(&uniform, 8)?;
    println!("\nlog-log slope of eta against elements, last 8 levels:");
    println!("  adaptive (maximum, theta 0.5): {slope_adaptive:.4}");
    println!("  uniform  (theta 1):            {slope_uniform:.4}");
    Ok(())
}
