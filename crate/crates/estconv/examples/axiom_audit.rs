//! Numeric audit of the estimator axioms along one adaptive run: per-pair
//! stability of the unrefined elements, reduction on the refined ones, the
//! a-priori bound on solution increments, and the contraction fit implied by
//! bulk marking.
//!
//! ```bash
//! cargo run --example axiom_audit
//! ```

use estconv::axioms::{audit_records, axiom_report_csv, DEFAULT_C_CAP, DEFAULT_Q_RED};
use estconv::driver::{run_adaptive, RunConfig};
use estconv::marking::{MarkingConfig, Strategy};

fn main() -> estconv::Result<()> {
    let cfg = RunConfig::parse(
        "problem = poisson\ndomain = l_shape\nf = 1\n\
         strategy = doerfler_sorted\ntheta = 0.5\nmax_elements = 4000\n",
    )?;
    let log = run_adaptive(&cfg)?;

    let marking = MarkingConfig { strategy: Strategy::DoerflerSorted, theta: 0.5 };
    let audit = audit_records(&log.records, DEFAULT_Q_RED, DEFAULT_C_CAP, Some(&marking), None)?;

    println!("{}", axiom_report_csv(&audit).trim_end());
    println!("\nfitted constants: C_stab = {:.4}, C_red = {:.4}", audit.c_stab_fit, audit.c_red_fit);
    let sum_sq: f64 = audit.apriori.increments.iter().map(|d| d * d).sum();
    println!(
        "a-priori increment bound: sum d^2 = {:.6} <= energy gain {:.6}: {}",
        sum_sq, audit.apriori.energy_gain, audit.apriori.pass
    );
    if let Some(fit) = &audit.doerfler {
        println!(
            "contraction fit: rho = {:.5} (delta {}), perturbations controlled: {}",
            fit.rho, fit.delta, fit.pass
        );
    }
    if let Some(conv) = &audit.convergence {
        println!("tail ratio eta_last / eta_early = {:.3e}", conv.tail_ratio);
    }
    println!("audit: {}", if audit.pass { "pass" } else { "fail" });
    Ok(())
}
