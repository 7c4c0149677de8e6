//! Worker pool shared by the embarrassingly parallel parts (episode
//! generation, evaluation rollouts). `HAPFUSE_THREADS` caps its size.

use std::sync::OnceLock;

pub const THREADS_ENV: &str = "HAPFUSE_THREADS";

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map_or(available, |n| n.min(available.max(1)));
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

pub fn install<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    pool().install(f)
}
