//! Dense symmetric eigendecomposition and small helpers.
//!
//! Everything here is desk scale: matrices of order up to a few hundred.
//! The eigensolver is a cyclic Jacobi rotation scheme, which is slow but
//! accurate to a few ulps on the eigenvalues of well-scaled symmetric input.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Absolute symmetry tolerance, scaled by `max(1, max|m_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Relative threshold separating zero eigenvalues from positive ones.
pub const RANK_TOL: f64 = 1e-9;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues (ascending) and matching orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Sorted spectrum summary of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue above `RANK_TOL * lambda_max`; `None` for a rank-zero matrix.
    pub lambda_min_plus: Option<f64>,
    pub lambda_max: f64,
}

impl Spectrum {
    /// Number of eigenvalues treated as zero.
    pub fn kernel_dim(&self) -> usize {
        let thr = RANK_TOL * self.lambda_max.abs();
        self.eigenvalues.iter().filter(|v| v.abs() <= thr).count()
    }

    /// `lambda_max / lambda_min_plus`.
    pub fn condition(&self) -> Result<f64> {
        self.lambda_min_plus
            .map(|lo| self.lambda_max / lo)
            .ok_or(Error::RankZero)
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen> {
    check_symmetric(m)?;
    let n = m.nrows();
    // symmetrize to remove sub-tolerance noise
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if total == 0.0 || n <= 1 {
        let values = (0..n).map(|i| a[(i, i)]).collect();
        return Ok(SymmetricEigen { values, vectors: v });
    }

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Full spectrum with the positive-part summary.
pub fn spectrum(m: &DMatrix<f64>) -> Result<Spectrum> {
    let eig = symmetric_eigen(m)?;
    Ok(spectrum_from_values(eig.values))
}

pub(crate) fn spectrum_from_values(eigenvalues: Vec<f64>) -> Spectrum {
    let lambda_max = eigenvalues.last().copied().unwrap_or(0.0);
    let thr = RANK_TOL * lambda_max.abs();
    let lambda_min_plus = if lambda_max > 0.0 {
        eigenvalues.iter().copied().find(|&v| v > thr)
    } else {
        None
    };
    Spectrum { eigenvalues, lambda_min_plus, lambda_max }
}

/// Orthonormal basis of the column space of `m` (eigenvectors of `m mᵀ` above the rank threshold).
pub fn range_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = m * m.transpose();
    let eig = symmetric_eigen(&gram)?;
    let top = eig.values.last().copied().unwrap_or(0.0);
    let thr = RANK_TOL * top.abs().max(f64::MIN_POSITIVE);
    let cols: Vec<usize> = (0..eig.values.len()).filter(|&i| eig.values[i] > thr).collect();
    Ok(DMatrix::from_fn(m.nrows(), cols.len(), |r, c| eig.vectors[(r, cols[c])]))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(k, k, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            for i in 0..k {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

pub fn gaussian_vector<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
}

/// Writes a matrix as CSV, row-major, 17 significant digits.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// 17-significant-digit scientific formatting.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_spectrum() {
        let s = spectrum(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 1.0, 1.0]);
        assert_eq!(s.lambda_min_plus, Some(1.0));
        assert_eq!(s.lambda_max, 1.0);
    }

    #[test]
    fn zero_matrix_is_rank_zero() {
        let s = spectrum(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(s.lambda_max, 0.0);
        assert!(s.lambda_min_plus.is_none());
        assert!(matches!(s.condition(), Err(Error::RankZero)));
    }

    #[test]
    fn diagonal_spectrum() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 0.0, 2.0]));
        let s = spectrum(&m).unwrap();
        assert_eq!(s.lambda_min_plus, Some(2.0));
        assert_eq!(s.lambda_max, 5.0);
        assert_eq!(s.kernel_dim(), 1);
    }

    #[test]
    fn rejects_nonsymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(spectrum(&m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn jacobi_matches_nalgebra_on_random_symmetric() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 17, 40] {
            let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
            let m = &g + g.transpose();
            let ours = symmetric_eigen(&m).unwrap();
            let mut theirs: Vec<f64> = nalgebra::SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
            theirs.sort_by(f64::total_cmp);
            for (a, b) in ours.values.iter().zip(&theirs) {
                assert_relative_eq!(a, b, epsilon = 1e-10, max_relative = 1e-10);
            }
            // A V = V Λ
            let lam = DMatrix::from_diagonal(&DVector::from_vec(ours.values.clone()));
            let resid = &m * &ours.vectors - &ours.vectors * lam;
            assert!(resid.amax() < 1e-9);
        }
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let q = random_orthogonal(6, &mut rng);
        let e = q.transpose() * &q - DMatrix::identity(6, 6);
        assert!(e.amax() < 1e-12);
    }

    #[test]
    fn range_basis_of_rank_deficient() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 0.0, 0.0]);
        let b = range_basis(&m).unwrap();
        assert_eq!(b.ncols(), 1);
    }
}
