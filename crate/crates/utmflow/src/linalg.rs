//! Dense linear-algebra kernels shared by the solver modules.
//!
//! Eigenvalue queries go through LAPACK (`dgeev`/`dsyev` via ndarray-linalg);
//! the Lyapunov solver is Bartels-Stewart on top of raw `dgees`/`dtrsyl`.

use ndarray::{Array1, Array2};
use ndarray_linalg::EigVals;
use num_complex::Complex64;

use crate::{Error, Result};

/// Eigenvalues of a general real square matrix.
pub fn eigvals(a: &Array2<f64>) -> Result<Vec<Complex64>> {
    let vals = a
        .eigvals()
        .map_err(|e| Error::Numerical(format!("dgeev failed: {e}")))?;
    Ok(vals.to_vec())
}

/// Largest real part among the eigenvalues of `a`.
pub fn max_real_eig(a: &Array2<f64>) -> Result<f64> {
    Ok(eigvals(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// True iff every eigenvalue of `a` has negative real part.
pub fn is_hurwitz(a: &Array2<f64>) -> Result<bool> {
    Ok(max_real_eig(a)? < 0.0)
}

/// Spectral radius of a real square matrix.
pub fn spectral_radius(a: &Array2<f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(eigvals(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max))
}

fn to_col_major(a: &Array2<f64>) -> Vec<f64> {
    let (rows, cols) = a.dim();
    let mut v = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            v.push(a[[i, j]]);
        }
    }
    v
}

fn from_col_major(v: &[f64], rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| v[j * rows + i])
}

/// Solves `a x = b` for a matrix right-hand side via `dgesv`.
pub fn solve_multi(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Numerical("solve_multi: dimension mismatch".into()));
    }
    let nrhs = b.ncols();
    let mut af = to_col_major(a);
    let mut bf = to_col_major(b);
    let mut ipiv = vec![0i32; n];
    let mut info = 0i32;
    let ni = n as i32;
    let nrhsi = nrhs as i32;
    unsafe {
        lapack_sys::dgesv_(
            &ni,
            &nrhsi,
            af.as_mut_ptr(),
            &ni,
            ipiv.as_mut_ptr(),
            bf.as_mut_ptr(),
            &ni,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!("dgesv failed, info = {info}")));
    }
    Ok(from_col_major(&bf, n, nrhs))
}

/// Solves `a x = b` for a vector right-hand side.
pub fn solve_vec(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = b.len();
    let bm = b.clone().into_shape_with_order((n, 1)).unwrap();
    let x = solve_multi(a, &bm)?;
    Ok(x.column(0).to_owned())
}

/// Real Schur decomposition `a = u t u^T` via `dgees`.
pub fn real_schur(a: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Numerical("real_schur: matrix not square".into()));
    }
    let ni = n as i32;
    let mut t = to_col_major(a);
    let mut vs = vec![0.0f64; n * n];
    let mut wr = vec![0.0f64; n];
    let mut wi = vec![0.0f64; n];
    let mut sdim = 0i32;
    let mut info = 0i32;
    let jobvs = b'V' as std::ffi::c_char;
    let sort = b'N' as std::ffi::c_char;
    // workspace query
    let mut work_query = [0.0f64];
    let lwork_query = -1i32;
    unsafe {
        lapack_sys::dgees_(
            &jobvs,
            &sort,
            None,
            &ni,
            t.as_mut_ptr(),
            &ni,
            &mut sdim,
            wr.as_mut_ptr(),
            wi.as_mut_ptr(),
            vs.as_mut_ptr(),
            &ni,
            work_query.as_mut_ptr(),
            &lwork_query,
            std::ptr::null_mut(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!(
            "dgees workspace query failed, info = {info}"
        )));
    }
    let lwork = work_query[0] as i32;
    let mut work = vec![0.0f64; lwork as usize];
    unsafe {
        lapack_sys::dgees_(
            &jobvs,
            &sort,
            None,
            &ni,
            t.as_mut_ptr(),
            &ni,
            &mut sdim,
            wr.as_mut_ptr(),
            wi.as_mut_ptr(),
            vs.as_mut_ptr(),
            &ni,
            work.as_mut_ptr(),
            &lwork,
            std::ptr::null_mut(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!("dgees failed, info = {info}")));
    }
    Ok((from_col_major(&vs, n, n), from_col_major(&t, n, n)))
}

/// Solves the continuous Lyapunov equation `a^T x + x a + q = 0`.
///
/// Bartels-Stewart: reduce `a` to real Schur form, solve the resulting
/// quasi-triangular Sylvester equation with `dtrsyl`, transform back.
/// Requires `a` and `-a` to have no common eigenvalues (holds for Hurwitz `a`).
pub fn solve_lyapunov(a: &Array2<f64>, q: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if q.dim() != (n, n) {
        return Err(Error::Numerical("solve_lyapunov: dimension mismatch".into()));
    }
    if n == 0 {
        return Ok(Array2::zeros((0, 0)));
    }
    let (u, t) = real_schur(a)?;
    let q_t = u.t().dot(q).dot(&u);
    // solve t^T y + y t = -q_t
    let ni = n as i32;
    let tf = to_col_major(&t);
    let mut cf = to_col_major(&q_t.mapv(|x| -x));
    let mut scale = 0.0f64;
    let mut info = 0i32;
    let trana = b'T' as std::ffi::c_char;
    let tranb = b'N' as std::ffi::c_char;
    let isgn = 1i32;
    unsafe {
        lapack_sys::dtrsyl_(
            &trana,
            &tranb,
            &isgn,
            &ni,
            &ni,
            tf.as_ptr(),
            &ni,
            tf.as_ptr(),
            &ni,
            cf.as_mut_ptr(),
            &ni,
            &mut scale,
            &mut info,
        );
    }
    if info < 0 {
        return Err(Error::Numerical(format!("dtrsyl failed, info = {info}")));
    }
    let y = from_col_major(&cf, n, n).mapv(|x| x / scale);
    let x = u.dot(&y).dot(&u.t());
    // symmetrize against roundoff
    Ok((&x + &x.t()) * 0.5)
}
