//! Thread-count control for parallelizable assembly and estimation loops.

/// Worker-thread budget: `ESTCONV_THREADS` when set to a positive integer
/// (anything unparseable counts as 1), otherwise the machine parallelism.
pub fn thread_limit() -> usize {
    match std::env::var("ESTCONV_THREADS") {
        Ok(raw) => raw.trim().parse::<usize>().unwrap_or(1).max(1),
        Err(_) => std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
    }
}
