//! Data-parallel helpers.
//!
//! With the `parallel` feature the hot loops (row embedding, k-means
//! assignment, per-column statistics, sweeps) fan out over rayon. Without it,
//! or when the mode is switched to [`ExecMode::Sequential`], everything runs
//! on the calling thread. Both paths produce identical, order-preserving
//! results; only the wall clock differs.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

const SEQUENTIAL: u8 = 0;
const PARALLEL: u8 = 1;

static MODE: AtomicU8 = AtomicU8::new(if cfg!(feature = "parallel") {
    PARALLEL
} else {
    SEQUENTIAL
});

/// Sets the process-wide execution mode. `Parallel` is a no-op request when
/// the crate was built without the `parallel` feature.
pub fn set_mode(mode: ExecMode) {
    let v = match mode {
        ExecMode::Parallel if cfg!(feature = "parallel") => PARALLEL,
        _ => SEQUENTIAL,
    };
    MODE.store(v, Ordering::Relaxed);
}

pub fn mode() -> ExecMode {
    match MODE.load(Ordering::Relaxed) {
        PARALLEL => ExecMode::Parallel,
        _ => ExecMode::Sequential,
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == ExecMode::Parallel && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == ExecMode::Parallel && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Fallible order-preserving map; returns the first error in index order.
pub fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        set_mode(ExecMode::Parallel);
        let a = map(&xs, |x| x * x + 1);
        set_mode(ExecMode::Sequential);
        let b = map(&xs, |x| x * x + 1);
        set_mode(ExecMode::Parallel);
        assert_eq!(a, b);
        assert_eq!(map_range(5, |i| i * 2), vec![0, 2, 4, 6, 8]);
    }

    #[test]
    fn try_map_reports_first_error() {
        let xs = [1, 2, 3, 4];
        let r: Result<Vec<i32>, i32> = try_map(&xs, |&x| if x >= 3 { Err(x) } else { Ok(x) });
        assert_eq!(r, Err(3));
    }
}
