//! Small dense linear-algebra helpers shared by the planner and the solver.

/// Pivot magnitude below which a column is treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-9;

/// Rank of a dense row-major matrix by Gaussian elimination with partial pivoting.
pub fn rank(rows: &[Vec<f64>]) -> usize {
    let mut basis = RowBasis::new(rows.first().map_or(0, Vec::len));
    for r in rows {
        basis.insert(r);
    }
    basis.rank()
}

/// Incrementally maintained row-echelon basis.
///
/// `insert` reports whether a row is linearly independent of everything
/// inserted so far; independent rows are reduced and kept.
#[derive(Debug, Clone)]
pub struct RowBasis {
    cols: usize,
    // (pivot column, normalized row with 1.0 at the pivot)
    rows: Vec<(usize, Vec<f64>)>,
}

impl RowBasis {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            rows: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() == self.cols
    }

    fn reduce(&self, row: &[f64]) -> Vec<f64> {
        debug_assert_eq!(row.len(), self.cols);
        let mut v = row.to_vec();
        for (p, b) in &self.rows {
            let f = v[*p];
            if f != 0.0 {
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= f * y;
                }
            }
        }
        v
    }

    /// Would `row` raise the rank?
    pub fn is_independent(&self, row: &[f64]) -> bool {
        let v = self.reduce(row);
        v.iter().any(|x| x.abs() > PIVOT_TOLERANCE)
    }

    /// Adds `row`; returns true when it raised the rank.
    pub fn insert(&mut self, row: &[f64]) -> bool {
        let mut v = self.reduce(row);
        let Some((pivot, &val)) = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        else {
            return false;
        };
        if val.abs() <= PIVOT_TOLERANCE {
            return false;
        }
        for x in v.iter_mut() {
            *x /= val;
        }
        // keep the basis fully reduced so `reduce` is a single pass
        for (_, b) in self.rows.iter_mut() {
            let f = b[pivot];
            if f != 0.0 {
                for (x, y) in b.iter_mut().zip(&v) {
                    *x -= f * y;
                }
            }
        }
        self.rows.push((pivot, v));
        true
    }
}
