//! Thread pool for batch evaluation, capped by `WAVESIM_THREADS`.

use std::sync::OnceLock;

/// Shared pool for point-batch parallelism. Defaults to all cores; the
/// `WAVESIM_THREADS` environment variable caps it. All parallel maps in
/// the crate preserve element order, so results do not depend on the
/// thread count.
pub fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(raw) = std::env::var("WAVESIM_THREADS") {
            if let Ok(n) = raw.trim().parse::<usize>() {
                if n >= 1 {
                    builder = builder.num_threads(n);
                }
            }
        }
        builder.build().expect("failed to build thread pool")
    })
}
