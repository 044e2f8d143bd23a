//! Command implementations and run configuration for the `pscan` binary.

pub mod commands;
pub mod config;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<pscan_core::Error>()) {
        Some(e) if e.is_numeric() => EXIT_NUMERIC,
        Some(pscan_core::Error::Config(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Caps the global worker pool at `PSCN_THREADS` when it is set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("PSCN_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| pscan_core::Error::Config(format!("PSCN_THREADS=`{v}` is not a positive integer")))?;
        if n == 0 {
            anyhow::bail!(pscan_core::Error::Config("PSCN_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
