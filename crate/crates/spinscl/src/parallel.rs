//! Execution-mode plumbing for grid passes.
//!
//! Husimi grids are embarrassingly parallel across rows: every cell is a pure
//! function of its coordinates, and reductions (normalization mass, metric
//! sums) use one fixed row-blocked grouping regardless of how the rows were
//! produced. Outputs are therefore byte-identical between the two modes and
//! across thread counts, which is what lets the test suite assert bitwise
//! determinism while still scaling on wide machines.
//!
//! Without the `parallel` cargo feature the [`ExecMode::Parallel`] variant
//! still exists and simply runs sequentially, so callers never need feature
//! gates of their own.

/// How grid passes are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// One thread, rows in ascending order.
    Sequential,
    /// Work-stealing across rows (rayon). Falls back to sequential when the
    /// crate is built without the `parallel` feature.
    #[default]
    Parallel,
}

/// Fill `out`, viewed as consecutive rows of `width` elements, by calling
/// `work(&mut state, row_index, row)` once per row. `make` builds a fresh
/// scratch state per worker (sequential mode builds exactly one).
///
/// Each row must be a pure function of its index; rows are disjoint slices,
/// so scheduling cannot change the result.
///
/// # Panics
/// Panics if `width` is zero or does not divide `out.len()`.
pub fn fill_rows<T, S, M, F>(mode: ExecMode, out: &mut [T], width: usize, make: M, work: F)
where
    T: Send,
    M: Fn() -> S + Sync,
    F: Fn(&mut S, usize, &mut [T]) + Sync,
{
    assert!(
        width > 0 && out.len() % width == 0,
        "rows of {width} cannot tile a buffer of {}",
        out.len()
    );
    match mode {
        ExecMode::Sequential => {
            let mut state = make();
            for (i, row) in out.chunks_mut(width).enumerate() {
                work(&mut state, i, row);
            }
        }
        ExecMode::Parallel => fill_rows_parallel(out, width, make, work),
    }
}

#[cfg(feature = "parallel")]
fn fill_rows_parallel<T, S, M, F>(out: &mut [T], width: usize, make: M, work: F)
where
    T: Send,
    M: Fn() -> S + Sync,
    F: Fn(&mut S, usize, &mut [T]) + Sync,
{
    use rayon::prelude::*;
    out.par_chunks_mut(width)
        .enumerate()
        .for_each_init(&make, |state, (i, row)| work(state, i, row));
}

#[cfg(not(feature = "parallel"))]
fn fill_rows_parallel<T, S, M, F>(out: &mut [T], width: usize, make: M, work: F)
where
    T: Send,
    M: Fn() -> S + Sync,
    F: Fn(&mut S, usize, &mut [T]) + Sync,
{
    let mut state = make();
    for (i, row) in out.chunks_mut(width).enumerate() {
        work(&mut state, i, row);
    }
}

/// The crate's canonical reduction order for grid sums: each row of `width`
/// values is summed left to right, then the row subtotals are added first row
/// to last. Every code path that sums a grid — sequential or parallel,
/// normalization or comparison metrics — goes through this grouping, so the
/// floating-point result is one well-defined number rather than a
/// schedule-dependent one.
///
/// # Panics
/// Panics if `width` is zero or does not divide `values.len()`.
pub fn sum_rowwise(values: &[f64], width: usize) -> f64 {
    assert!(
        width > 0 && values.len() % width == 0,
        "rows of {width} cannot tile a buffer of {}",
        values.len()
    );
    values
        .chunks(width)
        .map(|row| row.iter().sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_produce_identical_bits() {
        let n = 37;
        let width = 19;
        let job = |_: &mut (), i: usize, row: &mut [f64]| {
            for (k, v) in row.iter_mut().enumerate() {
                // A mildly ill-conditioned expression so any reordering
                // would actually show up in the bits.
                *v = ((i * 31 + k) as f64).sqrt().sin() / (1.0 + i as f64);
            }
        };
        let mut seq = vec![0.0; n * width];
        let mut par = vec![0.0; n * width];
        fill_rows(ExecMode::Sequential, &mut seq, width, || (), job);
        fill_rows(ExecMode::Parallel, &mut par, width, || (), job);
        assert!(seq
            .iter()
            .zip(&par)
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        assert_eq!(
            sum_rowwise(&seq, width).to_bits(),
            sum_rowwise(&par, width).to_bits()
        );
    }

    #[test]
    fn per_worker_state_is_isolated() {
        // Each row counts its own invocations through its scratch state; a
        // shared or reused-across-rows counter would disturb the values.
        let mut out = vec![0usize; 4 * 8];
        fill_rows(
            ExecMode::Parallel,
            &mut out,
            8,
            || 0usize,
            |calls, i, row| {
                *calls += 1;
                for v in row.iter_mut() {
                    *v = i;
                }
            },
        );
        for (i, row) in out.chunks(8).enumerate() {
            assert!(row.iter().all(|&v| v == i));
        }
    }

    #[test]
    fn rowwise_sum_is_the_documented_grouping() {
        let values: Vec<f64> = (0..12).map(|k| 1.0 / (1.0 + k as f64)).collect();
        let by_hand = ((values[0] + values[1]) + values[2])
            + ((values[3] + values[4]) + values[5])
            + ((values[6] + values[7]) + values[8])
            + ((values[9] + values[10]) + values[11]);
        assert_eq!(sum_rowwise(&values, 3).to_bits(), by_hand.to_bits());
    }

    #[test]
    #[should_panic]
    fn width_must_tile() {
        let mut out = vec![0.0; 10];
        fill_rows(ExecMode::Sequential, &mut out, 3, || (), |_, _, _| {});
    }
}
