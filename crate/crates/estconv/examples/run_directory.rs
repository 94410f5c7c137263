//! The on-disk run format behind the `estconv` binary: write a full adaptive
//! run into a directory, list what lands there, then audit it back from disk
//! and fit the decay rate, exactly as `estconv audit` and `estconv rates` do.
//!
//! ```bash
//! cargo run --example run_directory
//! ```

use estconv::driver::{
    audit_run_dir, estimate_rate, parse_run_log, run_adaptive, write_run, RunConfig,
};

fn main() -> estconv::Result<()> {
    let cfg = RunConfig::parse(
        "problem = symm\ndomain = square\nside = 0.4\nper_side = 1\nf = 1\n\
         strategy = maximum\ntheta = 0.5\nmax_elements = 256\n",
    )?;
    let log = run_adaptive(&cfg)?;

    let dir = std::env::temp_dir().join(format!("estconv_run_{}", std::process::id()));
    write_run(&log, &dir)?;
    println!("run written to {}", dir.display());
    let mut names: Vec<String> = std::fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    for name in &names {
        println!("  {name}");
    }

    // everything the audit needs is in run_log.csv and pairs.csv
    let audit = audit_run_dir(&dir)?;
    println!(
        "\naudit from disk: {} pairs, C_stab = {:.4}, C_red = {:.4}, pass = {}",
        audit.pairs.len(),
        audit.c_stab_fit,
        audit.c_red_fit,
        audit.pass
    );

    let rows = parse_run_log(&std::fs::read_to_string(dir.join("run_log.csv"))?)?;
    println!("levels on disk: {}", rows.len());
    println!("decay rate over the last 4 levels: {:.4}", estimate_rate(&log, 4)?);

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
