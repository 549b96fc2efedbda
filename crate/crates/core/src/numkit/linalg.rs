use super::matrix::{dot, norm, Matrix};
use super::rng::RngState;
use crate::error::{Error, Result};

/// Pivots below this magnitude mark a numerically rank-deficient input.
pub const RANK_TOLERANCE: f64 = 1e-12;

const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// `rows × cols` matrix of i.i.d. standard-normal draws, filled row-major.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut RngState) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!(
            "gaussian matrix needs positive dimensions, got {rows}x{cols}"
        )));
    }
    let data = (0..rows * cols).map(|_| rng.standard_normal()).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Orthonormalizes the rows of `m` (requires `cols >= rows`).
///
/// Householder QR is run on `mᵀ` (a tall `cols × rows` matrix); the thin
/// orthogonal factor `Q` is transposed back so row `i` of the output spans the
/// same space as rows `0..=i` of the input. Signs are fixed so that `diag(R)`
/// is non-negative, which makes the result unique.
pub fn qr_row_orthogonalize(m: &Matrix) -> Result<Matrix> {
    let (k, n) = m.shape();
    if k == 0 || n < k {
        return Err(Error::Dimension(format!(
            "cannot orthonormalize {k} rows in dimension {n}"
        )));
    }
    // Working copy of mᵀ, stored column-major: column j is input row j.
    let mut cols: Vec<Vec<f64>> = m.iter_rows().map(|r| r.to_vec()).collect();
    let scale = m.max_abs().max(1.0);
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r_diag = vec![0.0; k];

    for j in 0..k {
        let x = &cols[j][j..];
        let x_norm = norm(x);
        if x_norm <= RANK_TOLERANCE * scale {
            return Err(Error::Rank(format!(
                "pivot {j} has magnitude {x_norm:.3e}; rows are linearly dependent"
            )));
        }
        let alpha = if x[0] >= 0.0 { -x_norm } else { x_norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let v_norm = norm(&v);
        if v_norm > 0.0 {
            v.iter_mut().for_each(|e| *e /= v_norm);
        }
        for col in cols.iter_mut().skip(j) {
            let tail = &mut col[j..];
            let proj = 2.0 * dot(&v, tail);
            for (t, vi) in tail.iter_mut().zip(&v) {
                *t -= proj * vi;
            }
        }
        r_diag[j] = cols[j][j];
        reflectors.push(v);
    }

    // Q e_j by applying the reflectors in reverse order.
    let mut out = Matrix::zeros(k, n);
    for j in 0..k {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        for (i, v) in reflectors.iter().enumerate().rev() {
            let tail = &mut e[i..];
            let proj = 2.0 * dot(v, tail);
            for (t, vi) in tail.iter_mut().zip(v) {
                *t -= proj * vi;
            }
        }
        let sign = if r_diag[j] < 0.0 { -1.0 } else { 1.0 };
        for (o, q) in out.row_mut(j).iter_mut().zip(&e) {
            *o = sign * q;
        }
    }
    Ok(out)
}

/// Lower-triangular Cholesky factor `L` with `a = L·Lᵀ`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.cols()
        )));
    }
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOLERANCE * (1.0 + a[(i, j)].abs()) {
                return Err(Error::NotPositiveDefinite(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for p in 0..j {
            diag -= l[(j, p)] * l[(j, p)];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {j} is {diag:.3e}"
            )));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `a · x = b` for symmetric positive-definite `a` via Cholesky.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != a.rows() {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, system has {}",
            b.rows(),
            a.rows()
        )));
    }
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, b))
}

/// Solves `L·Lᵀ·x = b` given the Cholesky factor.
pub(crate) fn cholesky_solve(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for p in 0..i {
                s -= l[(i, p)] * x[(p, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for p in i + 1..n {
                s -= l[(p, i)] * x[(p, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Pairwise cosine similarities between the rows of `a` and the rows of `b`.
pub fn cosine_rows(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::Dimension(format!(
            "row widths differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let na = row_norms(a)?;
    let nb = row_norms(b)?;
    let mut out = a.matmul_nt(b)?;
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let c = out[(i, j)] / (na[i] * nb[j]);
            out[(i, j)] = c.clamp(-1.0, 1.0);
        }
    }
    // cos(x, x) is exactly 1 and the map symmetric when both sides are equal
    if a == b {
        for i in 0..a.rows() {
            out[(i, i)] = 1.0;
            for j in 0..i {
                out[(j, i)] = out[(i, j)];
            }
        }
    }
    Ok(out)
}

pub(crate) fn row_norms(m: &Matrix) -> Result<Vec<f64>> {
    m.iter_rows()
        .enumerate()
        .map(|(i, r)| {
            let n = norm(r);
            if n > 0.0 && n.is_finite() {
                Ok(n)
            } else {
                Err(Error::DegenerateRow { row: i })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(m: &Matrix) -> Matrix {
        m.matmul_nt(m).unwrap()
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = gaussian_matrix(2, 2, &mut RngState::new(7)).unwrap();
        let b = gaussian_matrix(2, 2, &mut RngState::new(7)).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let one = gaussian_matrix(1, 1, &mut RngState::new(99)).unwrap();
        assert!(one[(0, 0)].is_finite());
        assert!(gaussian_matrix(0, 3, &mut RngState::new(1)).is_err());
    }

    #[test]
    fn identity_orthogonalizes_to_identity() {
        let q = qr_row_orthogonalize(&Matrix::identity(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((q[(i, j)].abs() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_rows_become_orthonormal() {
        let m = gaussian_matrix(2, 4, &mut RngState::new(5)).unwrap();
        let q = qr_row_orthogonalize(&m).unwrap();
        let g = gram(&q);
        assert!(g[(0, 1)].abs() < 1e-10);
        assert!((g[(0, 0)] - 1.0).abs() < 1e-10);
        assert!((g[(1, 1)] - 1.0).abs() < 1e-10);
        // first output row is the normalized first input row
        let n0 = norm(m.row(0));
        for j in 0..4 {
            assert!((q[(0, j)] - m[(0, j)] / n0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_rows_are_rank_deficient() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(qr_row_orthogonalize(&m), Err(Error::Rank(_))));
    }

    #[test]
    fn more_rows_than_columns_rejected() {
        let m = Matrix::zeros(3, 2);
        assert!(matches!(qr_row_orthogonalize(&m), Err(Error::Dimension(_))));
    }

    #[test]
    fn spd_small_systems() {
        let x = solve_spd(
            &Matrix::identity(2),
            &Matrix::from_rows(&[[3.0], [4.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(x.as_slice(), &[3.0, 4.0]);
        let a = Matrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap();
        let x = solve_spd(&a, &Matrix::from_rows(&[[2.0], [4.0]]).unwrap()).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15 && (x[(1, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn indefinite_rejected() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert!(matches!(
            solve_spd(&a, &b),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        let i2 = Matrix::identity(2);
        assert_eq!(cosine_rows(&i2, &i2).unwrap(), i2);
        let a = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert_eq!(cosine_rows(&a, &b).unwrap()[(0, 0)], 1.0);
        let a = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let c = cosine_rows(&a, &b).unwrap()[(0, 0)];
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let z = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(matches!(
            cosine_rows(&z, &b),
            Err(Error::DegenerateRow { row: 0 })
        ));
    }
}
