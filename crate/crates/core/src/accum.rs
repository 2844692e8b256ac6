//! Deterministic chunked reductions.
//!
//! Every mean or sum over samples in this crate goes through these helpers so
//! that the floating-point combine tree is fixed: the index range `[0, n)` is
//! cut at absolute multiples of [`SUM_CHUNK`], each chunk partial is
//! accumulated in ascending index order, and the partials are folded in
//! ascending chunk order. The tree is therefore a pure function of `n`, never
//! of thread count or scheduling, and the parallel and sequential paths
//! produce identical bits. The distributed full-gradient gather reuses the
//! same chunk boundaries, which is what makes the gathered gradient equal the
//! locally computed one to the bit.

/// Number of consecutive indices accumulated into one partial.
pub const SUM_CHUNK: usize = 256;

/// Chunk boundaries `(lo, hi)` covering `[0, n)`, aligned to `SUM_CHUNK`.
pub fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n / SUM_CHUNK + 1);
    let mut lo = 0;
    while lo < n {
        let hi = usize::min(lo + SUM_CHUNK, n);
        out.push((lo, hi));
        lo = hi;
    }
    out
}

/// Folds chunk partials in ascending chunk order into a single vector.
pub fn combine_partials(d: usize, partials: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    for part in partials {
        debug_assert_eq!(part.len(), d);
        for (a, p) in acc.iter_mut().zip(part) {
            *a += *p;
        }
    }
    acc
}

/// Sequential chunked vector sum over `[0, n)`.
pub fn vector_sum_seq<F>(n: usize, d: usize, partial: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> Vec<f64>,
{
    let parts: Vec<Vec<f64>> = chunk_ranges(n)
        .into_iter()
        .map(|(lo, hi)| partial(lo, hi))
        .collect();
    combine_partials(d, &parts)
}

/// Chunked vector sum over `[0, n)`; data-parallel over chunks when the
/// `parallel` feature is enabled. Bit-identical to [`vector_sum_seq`].
#[cfg(feature = "parallel")]
pub fn vector_sum<F>(n: usize, d: usize, partial: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> Vec<f64> + Sync,
{
    use rayon::prelude::*;
    let ranges = chunk_ranges(n);
    if ranges.len() <= 1 {
        let parts: Vec<Vec<f64>> = ranges.into_iter().map(|(lo, hi)| partial(lo, hi)).collect();
        return combine_partials(d, &parts);
    }
    let parts: Vec<Vec<f64>> = ranges
        .into_par_iter()
        .map(|(lo, hi)| partial(lo, hi))
        .collect();
    combine_partials(d, &parts)
}

#[cfg(not(feature = "parallel"))]
pub fn vector_sum<F>(n: usize, d: usize, partial: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> Vec<f64> + Sync,
{
    vector_sum_seq(n, d, partial)
}

/// Sequential chunked scalar sum over `[0, n)`.
pub fn scalar_sum_seq<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64,
{
    let mut acc = 0.0;
    for (lo, hi) in chunk_ranges(n) {
        let mut part = 0.0;
        for i in lo..hi {
            part += term(i);
        }
        acc += part;
    }
    acc
}

/// Chunked scalar sum; parallel over chunks when enabled, same bits as
/// [`scalar_sum_seq`].
#[cfg(feature = "parallel")]
pub fn scalar_sum<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    use rayon::prelude::*;
    let ranges = chunk_ranges(n);
    if ranges.len() <= 1 {
        return scalar_sum_seq(n, term);
    }
    let parts: Vec<f64> = ranges
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut part = 0.0;
            for i in lo..hi {
                part += term(i);
            }
            part
        })
        .collect();
    parts.iter().fold(0.0, |a, p| a + p)
}

#[cfg(not(feature = "parallel"))]
pub fn scalar_sum<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    scalar_sum_seq(n, term)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_ranges_cover_and_align() {
        for n in [0, 1, 255, 256, 257, 1000, 4096] {
            let ranges = chunk_ranges(n);
            let mut expect = 0;
            for (lo, hi) in &ranges {
                assert_eq!(*lo, expect);
                assert!(*hi > *lo && *hi <= n);
                assert!(lo % SUM_CHUNK == 0);
                expect = *hi;
            }
            assert_eq!(expect, n);
        }
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let n = 1337;
        let d = 7;
        let partial = |lo: usize, hi: usize| {
            let mut p = vec![0.0; d];
            for i in lo..hi {
                for (k, v) in p.iter_mut().enumerate() {
                    *v += ((i * 31 + k) as f64).sin() * 0.001;
                }
            }
            p
        };
        let a = vector_sum(n, d, partial);
        let b = vector_sum_seq(n, d, partial);
        assert_eq!(a, b);

        let term = |i: usize| (i as f64).sqrt() * 1e-3;
        let sa = scalar_sum(n, term);
        let sb = scalar_sum_seq(n, term);
        assert_eq!(sa.to_bits(), sb.to_bits());
    }

    #[test]
    fn sum_independent_of_parallelism_threshold() {
        // A single-chunk input exercises the small-input shortcut.
        let d = 3;
        let partial = |lo: usize, hi: usize| {
            let mut p = vec![0.0; d];
            for i in lo..hi {
                p[i % d] += i as f64;
            }
            p
        };
        assert_eq!(vector_sum(10, d, partial), vector_sum_seq(10, d, partial));
    }
}
