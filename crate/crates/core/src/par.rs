//! Deterministic data-parallel helpers.
//!
//! Work is split into fixed-size chunks independent of the thread count, and
//! chunk partial sums are combined sequentially in chunk order, so every
//! reduction is bit-identical for any `--threads` setting.

use rayon::prelude::*;

pub(crate) const CHUNK: usize = 4096;

/// Σ_{i<n} f(i) with a thread-count independent summation order.
pub(crate) fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        })
        .collect();
    partials.iter().sum()
}

/// Fill `out[i] = f(i)` in parallel.
pub(crate) fn fill<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let base = c * CHUNK;
        for (off, v) in chunk.iter_mut().enumerate() {
            *v = f(base + off);
        }
    });
}

/// Index of the largest `key(i)`; ties resolve to the smallest index.
pub(crate) fn argmax<F>(n: usize, key: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let best: Vec<Option<(usize, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut best: Option<(usize, f64)> = None;
            for i in lo..hi {
                let v = key(i);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            best
        })
        .collect();
    best.into_iter()
        .flatten()
        .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
            Some((_, b)) if b >= v => acc,
            _ => Some((i, v)),
        })
}
