use ndarray::{Array2, ArrayView1};

/// Minimal-cost monotone alignment between the columns of two matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwAlignment {
    /// Zero-based `(i, j)` frame pairs from `(0, 0)` to `(M_a - 1, M_b - 1)`.
    pub path: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Dynamic time warping with steps `(1,0)`, `(0,1)`, `(1,1)` and no slope
/// weights. Among equal-cost predecessors the backtrack prefers the
/// diagonal, then the step along `a`.
///
/// # Panics
/// If either sequence has no frames or the row counts differ.
pub fn dtw_align<F>(a: &Array2<f64>, b: &Array2<f64>, frame_cost: F) -> DtwAlignment
where
    F: Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64,
{
    let (ma, mb) = (a.ncols(), b.ncols());
    assert!(ma > 0 && mb > 0, "dtw_align needs non-empty sequences");
    assert_eq!(a.nrows(), b.nrows(), "dtw_align needs equal frame dimensions");
    let mut acc = Array2::from_elem((ma, mb), f64::INFINITY);
    for i in 0..ma {
        for j in 0..mb {
            let c = frame_cost(a.column(i), b.column(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1, j - 1)] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1, j)] } else { f64::INFINITY };
                let left = if j > 0 { acc[(i, j - 1)] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[(i, j)] = best + c;
        }
    }
    let (mut i, mut j) = (ma - 1, mb - 1);
    let mut path = vec![(i, j)];
    while (i, j) != (0, 0) {
        let mut next = None;
        let mut best = f64::INFINITY;
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            if i >= di && j >= dj && acc[(i - di, j - dj)] < best {
                best = acc[(i - di, j - dj)];
                next = Some((i - di, j - dj));
            }
        }
        (i, j) = next.expect("a finite predecessor always exists");
        path.push((i, j));
    }
    path.reverse();
    DtwAlignment {
        path,
        cost: acc[(ma - 1, mb - 1)],
    }
}

/// Euclidean distance between two frames.
pub fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
