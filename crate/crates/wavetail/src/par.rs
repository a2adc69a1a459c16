//! Data-parallel helpers. With the `parallel` feature the default mode runs
//! on the rayon pool; without it every call runs sequentially.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

impl ExecMode {
    /// Mode actually used: `Parallel` degrades to `Sequential` when the
    /// feature is off.
    pub fn effective(self) -> ExecMode {
        if cfg!(feature = "parallel") {
            self
        } else {
            ExecMode::Sequential
        }
    }
}

/// `items.iter().map(f).collect()`, in parallel when enabled.
pub fn map_slice<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// `(0..n).map(f).collect()`, in parallel when enabled.
pub fn map_range<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Fill `out[i] = f(i)` in chunks.
pub fn fill<R, F>(mode: ExecMode, out: &mut [R], f: F)
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            const CHUNK: usize = 4096;
            out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
                for (k, o) in chunk.iter_mut().enumerate() {
                    *o = f(c * CHUNK + k);
                }
            });
        }
        _ => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = f(i);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let a = map_slice(ExecMode::Parallel, &xs, |x| x.sin());
        let b = map_slice(ExecMode::Sequential, &xs, |x| x.sin());
        assert_eq!(a, b);
        let mut c = vec![0.0; 10_000];
        fill(ExecMode::Parallel, &mut c, |i| i as f64 * 2.0);
        assert!(c.iter().enumerate().all(|(i, v)| *v == i as f64 * 2.0));
    }
}
