//! Gaussian spectral kernels, dictionary synthesis `D(ψ) = [D_1 … D_J]` with
//! `D_j = U ĝ_j(Λ) Uᵀ`, and the kernel-parameter Jacobian.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SgklError};
use crate::graph::SpectralDecomposition;

/// Floor on kernel scales.
pub const S_MIN: f64 = 1e-3;

/// Center frequency and scale of one Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub mu: f64,
    pub s: f64,
}

/// `exp(-(λ - μ)² / s²)`.
#[inline]
pub fn eval_kernel(p: KernelParams, lambda: f64) -> f64 {
    let d = lambda - p.mu;
    (-(d * d) / (p.s * p.s)).exp()
}

#[inline]
fn kernel_partials(p: KernelParams, lambda: f64) -> (f64, f64) {
    let g = eval_kernel(p, lambda);
    let d = lambda - p.mu;
    let s2 = p.s * p.s;
    (g * 2.0 * d / s2, g * 2.0 * d * d / (s2 * p.s))
}

/// Kernel parameters of all `J` kernels, flattened as `[μ_1..μ_J, s_1..s_J]`.
/// Serializes as `{"mu": [...], "s": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParamVector {
    pub mu: Vec<f64>,
    pub s: Vec<f64>,
}

impl KernelParamVector {
    pub fn new(mu: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        let psi = Self { mu, s };
        psi.validate()?;
        Ok(psi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() || self.mu.len() != self.s.len() {
            return Err(SgklError::InvalidParameter(format!(
                "kernel parameters need J >= 1 centers and as many scales, got {} and {}",
                self.mu.len(),
                self.s.len()
            )));
        }
        if self.mu.iter().chain(&self.s).any(|v| !v.is_finite()) {
            return Err(SgklError::InvalidParameter(
                "kernel parameters must be finite".into(),
            ));
        }
        if let Some(s) = self.s.iter().find(|&&s| s < S_MIN) {
            return Err(SgklError::InvalidParameter(format!(
                "kernel scale {s} is below the floor {S_MIN}"
            )));
        }
        Ok(())
    }

    /// The nominal vector ξ: all centers 0, all scales `s0`.
    pub fn nominal(j: usize, s0: f64) -> Self {
        Self {
            mu: vec![0.0; j],
            s: vec![s0; j],
        }
    }

    /// Inverse of [`Self::to_flat`]. The slice length must be even.
    pub fn from_flat(flat: &[f64]) -> Self {
        let j = flat.len() / 2;
        Self {
            mu: flat[..j].to_vec(),
            s: flat[j..2 * j].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.s).copied().collect()
    }

    pub fn num_kernels(&self) -> usize {
        self.mu.len()
    }

    pub fn kernel(&self, j: usize) -> KernelParams {
        KernelParams {
            mu: self.mu[j],
            s: self.s[j],
        }
    }

    /// Raises every scale to at least [`S_MIN`]; returns whether any moved.
    pub fn clamp_scales(&mut self) -> bool {
        let mut hit = false;
        for s in &mut self.s {
            if *s < S_MIN {
                *s = S_MIN;
                hit = true;
            }
        }
        hit
    }

    /// Euclidean distance between the flattened vectors.
    pub fn distance(&self, other: &Self) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Kernel responses `ĝ_j(λ_n)` as an `N × J` matrix.
    pub fn responses(&self, eigenvalues: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(eigenvalues.len(), self.num_kernels(), |n, j| {
            eval_kernel(self.kernel(j), eigenvalues[n])
        })
    }
}

/// A synthesized dictionary together with the quantities the solvers reuse.
#[derive(Debug, Clone)]
pub struct Dictionary {
    psi: KernelParamVector,
    spectral: Arc<SpectralDecomposition>,
    responses: DMatrix<f64>,
    atoms: DMatrix<f64>,
    gram: DMatrix<f64>,
}

/// Synthesizes `D(ψ)` on the given spectrum.
pub fn build_dictionary(
    dec: &Arc<SpectralDecomposition>,
    psi: &KernelParamVector,
) -> Result<Dictionary> {
    psi.validate()?;
    let n = dec.dim();
    let j_count = psi.num_kernels();
    let responses = psi.responses(&dec.eigenvalues);
    let ut = dec.eigenvectors.transpose();
    let mut atoms = DMatrix::<f64>::zeros(n, j_count * n);
    for j in 0..j_count {
        let scaled = dec.scaled_columns(responses.column(j).iter().copied());
        atoms.columns_mut(j * n, n).copy_from(&(&scaled * &ut));
    }
    for j in 0..j_count {
        let mut block = atoms.columns_mut(j * n, n);
        // exact symmetry; the product above is symmetric up to rounding
        for a in 0..n {
            for b in a + 1..n {
                let avg = 0.5 * (block[(a, b)] + block[(b, a)]);
                block[(a, b)] = avg;
                block[(b, a)] = avg;
            }
        }
    }
    let energy = responses.map(|g| g * g).column_sum();
    let gram = dec.spectral_function_from(energy.iter().copied());
    Ok(Dictionary {
        psi: psi.clone(),
        spectral: Arc::clone(dec),
        responses,
        atoms,
        gram,
    })
}

impl SpectralDecomposition {
    /// `U diag(d) Uᵀ` for explicit diagonal values.
    pub(crate) fn spectral_function_from(&self, d: impl Iterator<Item = f64>) -> DMatrix<f64> {
        let m = &self.scaled_columns(d) * self.eigenvectors.transpose();
        (&m + m.transpose()) * 0.5
    }
}

impl Dictionary {
    pub fn psi(&self) -> &KernelParamVector {
        &self.psi
    }

    pub fn spectral(&self) -> &Arc<SpectralDecomposition> {
        &self.spectral
    }

    pub fn node_count(&self) -> usize {
        self.spectral.dim()
    }

    pub fn num_kernels(&self) -> usize {
        self.psi.num_kernels()
    }

    /// Coefficient dimension `J·N`.
    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    /// `ĝ_j(λ_n)`, `N × J`.
    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    /// Concatenated dictionary, `N × JN`.
    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn block(&self, j: usize) -> DMatrix<f64> {
        let n = self.node_count();
        self.atoms.columns(j * n, n).into_owned()
    }

    /// `D Dᵀ = U (Σ_j ĝ_j(Λ)²) Uᵀ`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// True when this dictionary was synthesized from exactly `psi`.
    pub fn is_for(&self, psi: &KernelParamVector) -> bool {
        &self.psi == psi
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.atoms * x
    }

    pub fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        self.atoms.tr_mul(v)
    }

    pub fn synthesize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.atoms * x
    }
}

/// `∂G/∂ψ` in its block layout: column `j` of `d_mu` holds `∂ĝ_j/∂μ_j` at
/// every eigenvalue and column `j` of `d_s` holds `∂ĝ_j/∂s_j`; all other
/// entries of the `JN × 2J` matrix are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelJacobian {
    pub d_mu: DMatrix<f64>,
    pub d_s: DMatrix<f64>,
}

pub fn kernel_param_jacobian(
    dec: &SpectralDecomposition,
    psi: &KernelParamVector,
) -> KernelJacobian {
    let n = dec.dim();
    let j_count = psi.num_kernels();
    let mut d_mu = DMatrix::<f64>::zeros(n, j_count);
    let mut d_s = DMatrix::<f64>::zeros(n, j_count);
    for j in 0..j_count {
        for (r, &lambda) in dec.eigenvalues.iter().enumerate() {
            let (dm, ds) = kernel_partials(psi.kernel(j), lambda);
            d_mu[(r, j)] = dm;
            d_s[(r, j)] = ds;
        }
    }
    KernelJacobian { d_mu, d_s }
}

impl KernelJacobian {
    pub fn num_kernels(&self) -> usize {
        self.d_mu.ncols()
    }

    /// Dense `JN × 2J` form.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, j_count) = self.d_mu.shape();
        let mut out = DMatrix::<f64>::zeros(j_count * n, 2 * j_count);
        for j in 0..j_count {
            for r in 0..n {
                out[(j * n + r, j)] = self.d_mu[(r, j)];
                out[(j * n + r, j_count + j)] = self.d_s[(r, j)];
            }
        }
        out
    }

    /// `(∂f/∂G)_vᵀ · ∂G/∂ψ` for a gradient given on the `JN` nonzero positions
    /// of `G`, laid out as an `N × J` matrix (column `j` is block `j`).
    pub fn chain(&self, grad_g: &DMatrix<f64>) -> Vec<f64> {
        let j_count = self.num_kernels();
        let mut out = vec![0.0; 2 * j_count];
        for j in 0..j_count {
            out[j] = grad_g.column(j).dot(&self.d_mu.column(j));
            out[j_count + j] = grad_g.column(j).dot(&self.d_s.column(j));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_knn_graph, eigendecompose, normalized_laplacian};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spectrum(n: usize, seed: u64) -> Arc<SpectralDecomposition> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let g = build_knn_graph(&coords, 3, 0.5).unwrap();
        Arc::new(eigendecompose(&normalized_laplacian(&g).unwrap()).unwrap())
    }

    fn random_psi(j: usize, rng: &mut ChaCha8Rng) -> KernelParamVector {
        KernelParamVector::new(
            (0..j).map(|_| rng.random_range(0.0..2.0)).collect(),
            (0..j).map(|_| rng.random_range(0.2..0.8)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn kernel_values() {
        let p = KernelParams { mu: 0.5, s: 0.5 };
        assert_eq!(eval_kernel(p, 0.5), 1.0);
        assert_abs_diff_eq!(eval_kernel(p, 1.0), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(eval_kernel(p, 1.0), 0.367879, epsilon = 1e-6);
        assert_abs_diff_eq!(
            eval_kernel(KernelParams { mu: 0.0, s: 1.0 }, 2.0),
            0.018316,
            epsilon = 1e-6
        );
    }

    #[test]
    fn psi_json_layout() {
        let psi = KernelParamVector::new(vec![0.1, 0.2], vec![0.3, 0.4]).unwrap();
        let json = serde_json::to_string(&psi).unwrap();
        assert_eq!(json, r#"{"mu":[0.1,0.2],"s":[0.3,0.4]}"#);
        assert_eq!(
            serde_json::from_str::<KernelParamVector>(&json).unwrap(),
            psi
        );
        assert_eq!(KernelParamVector::from_flat(&psi.to_flat()), psi);
    }

    #[test]
    fn psi_validation() {
        assert!(KernelParamVector::new(vec![], vec![]).is_err());
        assert!(KernelParamVector::new(vec![0.0], vec![1e-4]).is_err());
        assert!(KernelParamVector::new(vec![0.0, 1.0], vec![0.1]).is_err());
        let mut psi = KernelParamVector {
            mu: vec![0.0],
            s: vec![-1.0],
        };
        assert!(psi.clamp_scales());
        assert_eq!(psi.s[0], S_MIN);
    }

    #[test]
    fn wide_kernel_gives_identity() {
        let dec = random_spectrum(8, 1);
        let psi = KernelParamVector::new(vec![1.0], vec![1e4]).unwrap();
        let d = build_dictionary(&dec, &psi).unwrap();
        assert!((d.block(0) - DMatrix::<f64>::identity(8, 8)).amax() < 1e-7);
    }

    /// 2-node graph, μ = 0, s = 1: D = U diag(1, e^{-4}) Uᵀ entrywise.
    #[test]
    fn two_node_dictionary() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let dec = Arc::new(eigendecompose(&l).unwrap());
        let psi = KernelParamVector::new(vec![0.0], vec![1.0]).unwrap();
        let d = build_dictionary(&dec, &psi).unwrap();
        let e4 = (-4.0f64).exp();
        let diag = 0.5 * (1.0 + e4);
        let off = 0.5 * (1.0 - e4);
        assert_abs_diff_eq!(d.atoms()[(0, 0)], diag, epsilon = 1e-15);
        assert_abs_diff_eq!(d.atoms()[(1, 1)], diag, epsilon = 1e-15);
        assert_abs_diff_eq!(d.atoms()[(0, 1)], off, epsilon = 1e-15);
        assert_abs_diff_eq!(d.atoms()[(1, 0)], off, epsilon = 1e-15);
    }

    #[test]
    fn atoms_are_localized_kernels() {
        let dec = random_spectrum(10, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = random_psi(3, &mut rng);
        let d = build_dictionary(&dec, &psi).unwrap();
        for j in 0..3 {
            let block = d.block(j);
            for n in 0..10 {
                let mut e = DVector::zeros(10);
                e[n] = 1.0;
                assert!((&block * &e - block.column(n)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn dictionary_invariants_and_frame_consistency() {
        let dec = random_spectrum(12, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = random_psi(3, &mut rng);
        let d = build_dictionary(&dec, &psi).unwrap();
        let v = DVector::from_fn(12, |_, _| rng.random::<f64>() - 0.5);
        for j in 0..3 {
            let block = d.block(j);
            assert!((&block - block.transpose()).norm() <= 1e-10);
            let dec_b = eigendecompose(&block).unwrap();
            assert!(dec_b.eigenvalues[0] >= -1e-9);
            assert!(dec_b.eigenvalues[11] <= 1.0 + 1e-9);
            // filtering each eigencomponent separately
            let coeffs = dec.eigenvectors.tr_mul(&v);
            let filtered = DVector::from_fn(12, |n, _| coeffs[n] * d.responses()[(n, j)]);
            assert!((&block * &v - &dec.eigenvectors * filtered).norm() <= 1e-10);
        }
        let gram = d.atoms() * d.atoms().transpose();
        assert!((gram - d.gram()).amax() < 1e-12);
    }

    #[test]
    fn jacobian_zero_at_peak_and_block_structure() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let dec = eigendecompose(&l).unwrap();
        let psi = KernelParamVector::new(vec![0.0, 2.0], vec![0.5, 0.7]).unwrap();
        let jac = kernel_param_jacobian(&dec, &psi);
        // λ_1 = 0 = μ_1 and λ_2 = 2 = μ_2
        assert_eq!(jac.d_mu[(0, 0)], 0.0);
        assert_eq!(jac.d_s[(0, 0)], 0.0);
        assert_abs_diff_eq!(jac.d_mu[(1, 1)], 0.0, epsilon = 1e-14);
        let dense = jac.to_dense();
        assert_eq!(dense.shape(), (4, 4));
        // kernel 1 rows never touch kernel 2 parameters
        for r in 0..2 {
            assert_eq!(dense[(r, 1)], 0.0);
            assert_eq!(dense[(r, 3)], 0.0);
            assert_eq!(dense[(2 + r, 0)], 0.0);
            assert_eq!(dense[(2 + r, 2)], 0.0);
        }
    }

    /// Central finite differences (h = 1e-5) on a random 10-node graph.
    #[test]
    fn jacobian_matches_finite_differences() {
        let dec = random_spectrum(10, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let psi = random_psi(3, &mut rng);
        let jac = kernel_param_jacobian(&dec, &psi).to_dense();
        let h = 1e-5;
        let flat = psi.to_flat();
        for p in 0..flat.len() {
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[p] += h;
            minus[p] -= h;
            let gp = KernelParamVector::from_flat(&plus).responses(&dec.eigenvalues);
            let gm = KernelParamVector::from_flat(&minus).responses(&dec.eigenvalues);
            for j in 0..3 {
                for r in 0..10 {
                    let fd = (gp[(r, j)] - gm[(r, j)]) / (2.0 * h);
                    let an = jac[(j * 10 + r, p)];
                    let err = if an.abs() < 1e-8 {
                        (fd - an).abs()
                    } else {
                        ((fd - an) / an).abs()
                    };
                    assert!(err <= 1e-5, "param {p} kernel {j} node {r}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn jacobian_sparsity_count() {
        let dec = random_spectrum(9, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let psi = random_psi(4, &mut rng);
        let dense = kernel_param_jacobian(&dec, &psi).to_dense();
        let nonzero = dense.iter().filter(|v| **v != 0.0).count();
        assert!(nonzero <= 2 * 4 * 9);
    }

    proptest! {
        #[test]
        fn kernel_in_unit_interval(mu in -1.0f64..3.0, s in S_MIN..5.0, lambda in 0.0f64..2.0) {
            let g = eval_kernel(KernelParams { mu, s }, lambda);
            prop_assert!(g <= 1.0);
            // strictly positive unless the exponent underflows
            prop_assert!(g > 0.0 || (lambda - mu).powi(2) / (s * s) > 700.0);
        }

        #[test]
        fn dictionary_lipschitz(seed in 0u64..200) {
            let dec = random_spectrum(8, 100 + seed % 5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_psi(2, &mut rng);
            let b = random_psi(2, &mut rng);
            let da = build_dictionary(&dec, &a).unwrap();
            let db = build_dictionary(&dec, &b).unwrap();
            let (fa, fb) = (a.to_flat(), b.to_flat());
            let mut c: f64 = 0.0;
            for t in 0..=200 {
                let t = t as f64 / 200.0;
                let mid: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x + t * (y - x)).collect();
                let mid = KernelParamVector::from_flat(&mid);
                for j in 0..2 {
                    for &lambda in dec.eigenvalues.iter() {
                        let (dm, ds) = kernel_partials(mid.kernel(j), lambda);
                        c = c.max((dm * dm + ds * ds).sqrt());
                    }
                }
            }
            let lhs = (da.atoms() - db.atoms()).norm();
            let rhs = c * ((2 * 8) as f64).sqrt() * a.distance(&b);
            prop_assert!(lhs <= rhs + 1e-12, "{} > {}", lhs, rhs);
        }
    }
}
