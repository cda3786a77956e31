//! Minimal fork-join mapping.
//!
//! Work items are claimed from a shared atomic counter and results are
//! placed by index, so the output never depends on the worker count — a
//! closure that is pure in its index gives identical results serial or
//! parallel. The pool size is the smaller of the machine's parallelism and
//! the `DSUR_THREADS` environment variable (when set).

use std::sync::atomic::{AtomicUsize, Ordering};

/// Worker count honoring `DSUR_THREADS`.
pub fn thread_budget() -> usize {
    let hw = std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1);
    match std::env::var("DSUR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(cap) => hw.min(cap.max(1)),
        None => hw,
    }
}

/// `(0..n).map(f)` over an explicit number of workers, output in index order.
pub fn map_indexed_with<T, F>(workers: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.min(n).max(1);
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            break;
                        }
                        local.push((i, f(i)));
                    }
                    local
                })
            })
            .collect();
        for h in handles {
            for (i, v) in h.join().expect("worker panicked") {
                out[i] = Some(v);
            }
        }
    });
    out.into_iter().map(|o| o.expect("index covered")).collect()
}

/// `(0..n).map(f)` on the budgeted pool, output in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    map_indexed_with(thread_budget(), n, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn output_is_in_index_order() {
        let got = map_indexed_with(4, 100, |i| i * i);
        let want: Vec<usize> = (0..100).map(|i| i * i).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let base = RngState::new(42);
        let job = |i: usize| {
            let mut c = base.child(i as u64);
            (0..10).map(|_| c.normal()).collect::<Vec<f64>>()
        };
        let serial = map_indexed_with(1, 33, job);
        let parallel = map_indexed_with(8, 33, job);
        assert_eq!(serial, parallel);
    }

    #[test]
    fn empty_and_single_inputs() {
        assert_eq!(map_indexed_with(4, 0, |i| i), Vec::<usize>::new());
        assert_eq!(map_indexed_with(4, 1, |i| i + 7), vec![7]);
    }

    #[test]
    fn env_cap_limits_budget() {
        // Process-global env: this is the only test that touches it.
        std::env::set_var("DSUR_THREADS", "1");
        assert_eq!(thread_budget(), 1);
        std::env::set_var("DSUR_THREADS", "0"); // nonsense cap clamps to 1
        assert_eq!(thread_budget(), 1);
        std::env::remove_var("DSUR_THREADS");
        assert!(thread_budget() >= 1);
    }
}
