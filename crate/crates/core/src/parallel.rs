//! Bounded per-item parallelism shared by the pipeline stages.
//!
//! Results come back in input order regardless of scheduling, so downstream
//! aggregation stays deterministic.

use rayon::prelude::*;

/// Apply `f` to every item with at most `parallelism` worker threads.
/// `parallelism <= 1` runs serially on the calling thread.
pub fn map_bounded<T, R, F>(parallelism: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    if parallelism <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build();
    match pool {
        Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
        // Pool creation can only fail on resource exhaustion; degrade to serial.
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_input_order() {
        let items: Vec<usize> = (0..100).collect();
        let doubled = map_bounded(4, &items, |x| x * 2);
        assert_eq!(doubled, (0..100).map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn serial_path_matches_parallel_path() {
        let items: Vec<usize> = (0..50).collect();
        let serial = map_bounded(1, &items, |x| x + 1);
        let parallel = map_bounded(8, &items, |x| x + 1);
        assert_eq!(serial, parallel);
    }
}
