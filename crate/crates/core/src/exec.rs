//! Parallel/sequential execution helpers.
//!
//! Every helper here is deterministic: results depend only on the inputs,
//! never on thread count or scheduling. Reductions carry the sample index and
//! break value ties toward the lowest index, so the `parallel` feature can be
//! toggled without changing any output bit.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Minimum of `eval(i)` over `i in 0..n` together with its index.
///
/// Ties resolve to the lowest index. Returns `None` for `n == 0`.
pub(crate) fn min_by_index<F>(n: usize, eval: F) -> Option<(f64, usize)>
where
    F: Fn(usize) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if n >= PAR_THRESHOLD {
            return (0..n)
                .into_par_iter()
                .map(|i| (eval(i), i))
                .reduce_with(pick_min);
        }
    }
    min_by_index_seq(n, eval)
}

/// Sequential twin of [`min_by_index`]; kept callable with the `parallel`
/// feature enabled so benchmarks can compare the two paths.
pub(crate) fn min_by_index_seq<F>(n: usize, eval: F) -> Option<(f64, usize)>
where
    F: Fn(usize) -> f64,
{
    (0..n).map(|i| (eval(i), i)).reduce(pick_min)
}

/// The `k` smallest `(eval(i), i)` pairs in ascending `(value, index)` order.
pub(crate) fn bottom_k<F>(n: usize, k: usize, eval: F) -> Vec<(f64, usize)>
where
    F: Fn(usize) -> f64 + Sync,
{
    if k == 0 || n == 0 {
        return Vec::new();
    }
    #[cfg(feature = "parallel")]
    {
        if n >= PAR_THRESHOLD {
            let merged = (0..n)
                .into_par_iter()
                .fold(Vec::new, |acc, i| push_capped(acc, (eval(i), i), k))
                .reduce(Vec::new, |a, b| {
                    b.into_iter().fold(a, |acc, p| push_capped(acc, p, k))
                });
            return merged;
        }
    }
    bottom_k_seq(n, k, eval)
}

/// Sequential twin of [`bottom_k`].
pub(crate) fn bottom_k_seq<F>(n: usize, k: usize, eval: F) -> Vec<(f64, usize)>
where
    F: Fn(usize) -> f64,
{
    (0..n).fold(Vec::new(), |acc, i| push_capped(acc, (eval(i), i), k))
}

/// Order-preserving map over a vector, parallel when the feature is on.
pub(crate) fn map_collect<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        return items.into_par_iter().map(f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    items.into_iter().map(f).collect()
}

/// Below this many items the rayon split overhead dominates; stay sequential.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 4096;

fn pick_min(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => a,
        std::cmp::Ordering::Greater => b,
        std::cmp::Ordering::Equal => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

fn push_capped(mut acc: Vec<(f64, usize)>, p: (f64, usize), k: usize) -> Vec<(f64, usize)> {
    let pos = acc
        .binary_search_by(|q| q.0.total_cmp(&p.0).then(q.1.cmp(&p.1)))
        .unwrap_or_else(|e| e);
    if pos < k {
        acc.insert(pos, p);
        acc.truncate(k);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_matches_naive_scan() {
        let vals = [3.0, -1.0, 4.0, -1.0, 5.0];
        let got = min_by_index(vals.len(), |i| vals[i]).unwrap();
        assert_eq!(got, (-1.0, 1));
    }

    #[test]
    fn bottom_k_is_sorted_and_tie_broken() {
        let vals = [2.0, 0.5, 2.0, 0.5, -3.0];
        let got = bottom_k(vals.len(), 3, |i| vals[i]);
        assert_eq!(got, vec![(-3.0, 4), (0.5, 1), (0.5, 3)]);
    }

    #[test]
    fn parallel_and_sequential_agree_on_large_input() {
        let eval = |i: usize| ((i as f64 * 0.7309).sin() * 1e3).round() / 1e3;
        let n = 100_000;
        assert_eq!(min_by_index(n, eval), min_by_index_seq(n, eval));
        assert_eq!(bottom_k(n, 10, eval), bottom_k_seq(n, 10, eval));
    }
}
