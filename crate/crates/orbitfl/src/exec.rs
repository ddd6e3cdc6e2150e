//! Parallel/sequential execution switch.
//!
//! Work items are independent and collected in index order, so both paths
//! produce identical results; reductions downstream run over the collected
//! vector in a fixed order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is enabled.
pub(crate) fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fallible variant of [`indexed_map`]; returns the first error in index
/// order on the sequential path and an arbitrary error on the parallel path
/// (all-or-nothing semantics either way).
pub(crate) fn try_indexed_map<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_map_preserves_order() {
        let v = indexed_map(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }

    #[test]
    fn try_indexed_map_propagates_errors() {
        let r: Result<Vec<usize>, String> =
            try_indexed_map(10, |i| if i == 3 { Err("boom".into()) } else { Ok(i) });
        assert!(r.is_err());
    }
}
