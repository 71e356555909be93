//! Deterministic data parallelism over disjoint output rows.
//!
//! Work is split into contiguous row ranges, one per worker; every row is
//! computed by exactly one worker, so results do not depend on the worker
//! count. `GRIDTD_THREADS` caps the number of workers.

use std::thread;

const MIN_ROWS_PER_WORKER: usize = 2048;

pub fn worker_count() -> usize {
    let available = thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("GRIDTD_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        Some(n) if n >= 1 => n.min(available.max(1)),
        _ => available,
    }
}

/// Calls `f(first_row, rows)` on disjoint chunks of `data` (rows of
/// `row_len` values), possibly on several threads.
pub fn for_rows<F>(data: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let rows = if row_len == 0 { 0 } else { data.len() / row_len };
    let workers = worker_count().min(rows / MIN_ROWS_PER_WORKER).max(1);
    if workers == 1 {
        f(0, data);
        return;
    }
    let per = rows.div_ceil(workers);
    thread::scope(|s| {
        for (w, chunk) in data.chunks_mut(per * row_len).enumerate() {
            let f = &f;
            s.spawn(move || f(w * per, chunk));
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_row_is_visited_once() {
        let mut data = vec![0.0; 3 * 10_000];
        for_rows(&mut data, 3, |start, chunk| {
            for (k, row) in chunk.chunks_mut(3).enumerate() {
                row.iter_mut().for_each(|v| *v += (start + k) as f64);
            }
        });
        for (k, row) in data.chunks(3).enumerate() {
            assert!(row.iter().all(|&v| v == k as f64));
        }
    }
}
