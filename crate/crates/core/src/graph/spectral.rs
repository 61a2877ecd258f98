use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SgklError};

/// Eigen-decomposition `L = U Λ Uᵀ` with ascending eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(f(λ)) Uᵀ`.
    pub fn spectral_function(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = self.scaled_columns(self.eigenvalues.iter().map(|&l| f(l)));
        &scaled * self.eigenvectors.transpose()
    }

    /// `U diag(d)`.
    pub(crate) fn scaled_columns(&self, d: impl Iterator<Item = f64>) -> DMatrix<f64> {
        let mut out = self.eigenvectors.clone();
        for (mut col, s) in out.column_iter_mut().zip(d) {
            col *= s;
        }
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.spectral_function(|l| l)
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetric eigen-decomposition with eigenvalues sorted ascending and each
/// eigenvector oriented so that its largest-magnitude entry is positive
/// (first such entry on ties).
pub fn eigendecompose(l: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    let n = l.nrows();
    if l.ncols() != n {
        return Err(SgklError::ShapeMismatch(format!(
            "eigendecompose needs a square matrix, got {}x{}",
            n,
            l.ncols()
        )));
    }
    let scale = l.amax().max(1.0);
    let asym = max_asymmetry(l);
    if asym > 1e-10 * scale {
        return Err(SgklError::NotSymmetric(asym));
    }

    let eig = SymmetricEigen::new(l.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        eigenvectors.set_column(dst, &(col * sign));
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}
