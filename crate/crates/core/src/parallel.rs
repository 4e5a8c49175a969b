//! Worker-thread control for the convolution kernels. The count comes from
//! the `TRIPSE_THREADS` environment variable (default 1) and can be
//! overridden at runtime. Work splits into contiguous per-sample slabs, so
//! results are bitwise identical for every thread count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

static THREADS: OnceLock<AtomicUsize> = OnceLock::new();

pub fn threads() -> usize {
    cell().load(Ordering::Relaxed)
}

pub fn set_threads(n: usize) {
    cell().store(n.max(1), Ordering::Relaxed);
}

fn cell() -> &'static AtomicUsize {
    THREADS.get_or_init(|| {
        let n = std::env::var("TRIPSE_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1);
        AtomicUsize::new(n)
    })
}

/// Splits `buf` into runs of `slab` elements and hands contiguous groups of
/// runs to worker threads. `f` receives the index of its first run and the
/// mutable window covering its runs.
pub(crate) fn for_each_slab<E, F>(buf: &mut [E], slab: usize, f: F)
where
    E: Send,
    F: Fn(usize, &mut [E]) + Sync,
{
    let units = if slab == 0 { 0 } else { buf.len() / slab };
    let workers = threads().min(units);
    if workers <= 1 {
        f(0, buf);
        return;
    }
    let base = units / workers;
    let extra = units % workers;
    std::thread::scope(|scope| {
        let mut rest = buf;
        let mut start = 0usize;
        for i in 0..workers {
            let count = base + usize::from(i < extra);
            let (head, tail) = rest.split_at_mut(count * slab);
            rest = tail;
            let task = &f;
            let first = start;
            scope.spawn(move || task(first, head));
            start += count;
        }
    });
}
