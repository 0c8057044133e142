//! Dense row-major tensors of 64-bit reals.
//!
//! Everything that flows through the differentiation tape is one of these.
//! The workloads here are small (matrices of at most a few hundred rows), so
//! the representation is a plain `Vec<f64>` plus a shape; no striding, no
//! views.

use serde::{Deserialize, Serialize};

/// Dense array of `f64` with row-major layout.
///
/// Invariant: `shape.iter().product() == data.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "dimension error: shape {:?} wants {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![value] }
    }

    /// 1 x n row vector.
    pub fn row(values: &[f64]) -> Self {
        Tensor { shape: vec![1, values.len()], data: values.to_vec() }
    }

    /// r x c matrix from a flat row-major slice.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar tensor {:?}", self.shape);
        self.data[0]
    }

    /// Rows of a 2-D tensor (a 1-D tensor counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on tensor of rank {}", self.shape.len()),
        }
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("cols() on tensor of rank {}", self.shape.len()),
        }
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise addition into `self`.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "dimension error: += {:?} vs {:?}", self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    /// Frobenius / Euclidean squared norm.
    pub fn sqnorm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// c = a(m x k) * b(k x n), plain ikj loops; LLVM vectorizes the inner axpy.
pub fn matmul_into(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// dA += dC * B^T without materializing the transpose.
pub fn matmul_dc_bt_into(da: &mut [f64], dc: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        let darow = &mut da[i * k..(i + 1) * k];
        for l in 0..k {
            let brow = &b[l * n..(l + 1) * n];
            let mut acc = 0.0;
            for (dv, bv) in dcrow.iter().zip(brow) {
                acc += dv * bv;
            }
            darow[l] += acc;
        }
    }
}

/// dB += A^T * dC without materializing the transpose.
pub fn matmul_at_dc_into(db: &mut [f64], a: &[f64], dc: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let dcrow = &dc[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let dbrow = &mut db[l * n..(l + 1) * n];
            for (dv, &dcv) in dbrow.iter_mut().zip(dcrow) {
                *dv += av * dcv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_panics() {
        let r = std::panic::catch_unwind(|| Tensor::new(vec![2, 2], vec![1.0, 2.0]));
        assert!(r.is_err());
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2],[3,4]] * [[1],[1]] = [[3],[7]]
        let mut c = vec![0.0; 2];
        matmul_into(&mut c, &[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 2, 2, 1);
        assert_eq!(c, vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_grads_match_definition() {
        // Check the two backward kernels against naive index arithmetic.
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.7 - 2.0).collect();
        let dc: Vec<f64> = (0..m * n).map(|i| (i as f64) * 0.11 + 0.5).collect();

        let mut da = vec![0.0; m * k];
        matmul_dc_bt_into(&mut da, &dc, &b, m, k, n);
        for i in 0..m {
            for l in 0..k {
                let want: f64 = (0..n).map(|j| dc[i * n + j] * b[l * n + j]).sum();
                assert!((da[i * k + l] - want).abs() < 1e-12);
            }
        }

        let mut db = vec![0.0; k * n];
        matmul_at_dc_into(&mut db, &a, &dc, m, k, n);
        for l in 0..k {
            for j in 0..n {
                let want: f64 = (0..m).map(|i| a[i * k + l] * dc[i * n + j]).sum();
                assert!((db[l * n + j] - want).abs() < 1e-12);
            }
        }
    }
}
