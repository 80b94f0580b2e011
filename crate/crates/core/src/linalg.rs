//! Small dense linear-algebra helpers over nalgebra.

use nalgebra::DMatrix;

/// Singular values sorted descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Count of singular values above `rel · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&v| v > rel * smax).count(),
        _ => 0,
    }
}

/// Eigenvalues of the symmetric part, sorted ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut e: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_and_eigen() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert_eq!(numerical_rank(&m, 1e-10), 1);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = sym_eigenvalues(&s);
        assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
        assert_eq!(numerical_rank(&DMatrix::zeros(2, 2), 1e-8), 0);
    }
}
