use serde::{Deserialize, Serialize};

/// Dense row-major f64 matrix. Just enough linear algebra for the encoder;
/// general tensor algebra is a non-goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            debug_assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// self (m×k) * other (k×n) -> m×n
    pub fn matmul(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.cols, other.rows);
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (p, &a) in a_row.iter().enumerate().take(k) {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for j in 0..n {
                    out_row[j] += a * b_row[j];
                }
            }
        }
        out
    }

    /// self (m×k) * other^T, other (n×k) -> m×n
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.cols, other.cols);
        let (m, n) = (self.rows, other.rows);
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for j in 0..n {
                out_row[j] = a_row
                    .iter()
                    .zip(other.row(j))
                    .map(|(x, y)| x * y)
                    .sum();
            }
        }
        out
    }

    /// self^T, self (k×m) * other (k×n) -> m×n
    pub fn matmul_tn(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.rows, other.rows);
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Mat::zeros(m, n);
        for p in 0..k {
            let a_row = self.row(p);
            let b_row = other.row(p);
            for (i, &a) in a_row.iter().enumerate().take(m) {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    out_row[j] += a * b_row[j];
                }
            }
        }
        out
    }

    /// Copy a contiguous column block [c0, c0+width) into a new matrix.
    pub fn col_block(&self, c0: usize, width: usize) -> Mat {
        debug_assert!(c0 + width <= self.cols);
        let mut out = Mat::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[c0..c0 + width]);
        }
        out
    }

    /// Add a block into columns [c0, c0+block.cols).
    pub fn add_col_block(&mut self, c0: usize, block: &Mat) {
        debug_assert_eq!(self.rows, block.rows);
        debug_assert!(c0 + block.cols <= self.cols);
        for i in 0..self.rows {
            let dst = &mut self.row_mut(i)[c0..c0 + block.cols];
            for (d, s) in dst.iter_mut().zip(block.row(i)) {
                *d += s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree_with_naive() {
        let a = Mat::from_rows(vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 2.0]]);
        let b = Mat::from_rows(vec![vec![2.0, 0.0], vec![1.0, -1.0], vec![0.5, 4.0]]);
        let c = a.matmul(&b);
        assert_eq!(c.rows, 2);
        assert_eq!(c.cols, 2);
        assert!((c.get(0, 0) - 5.5).abs() < 1e-15);
        assert!((c.get(0, 1) - 10.0).abs() < 1e-15);
        assert!((c.get(1, 0) - (-0.5)).abs() < 1e-15);
        assert!((c.get(1, 1) - 7.5).abs() < 1e-15);

        // a * b == a.matmul_nt(b^T)
        let bt = Mat::from_rows(vec![vec![2.0, 1.0, 0.5], vec![0.0, -1.0, 4.0]]);
        let c2 = a.matmul_nt(&bt);
        assert_eq!(c.data, c2.data);

        // a^T * a via matmul_tn
        let ata = a.matmul_tn(&a);
        assert_eq!(ata.rows, 3);
        assert_eq!(ata.cols, 3);
        assert!((ata.get(0, 0) - 2.0).abs() < 1e-15);
        assert!((ata.get(2, 1) - 7.0).abs() < 1e-15);
    }

    #[test]
    fn col_blocks_round_trip() {
        let a = Mat::from_rows(vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]]);
        let block = a.col_block(2, 2);
        assert_eq!(block.row(0), &[3.0, 4.0]);
        assert_eq!(block.row(1), &[7.0, 8.0]);
        let mut z = Mat::zeros(2, 4);
        z.add_col_block(2, &block);
        assert_eq!(z.row(1), &[0.0, 0.0, 7.0, 8.0]);
    }
}
