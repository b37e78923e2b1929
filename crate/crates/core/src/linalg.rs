//! Dense linear-algebra kernels shared by the latent-process code.
//!
//! Hot loops are written generically over the nalgebra dimension so the
//! common p = 2 case runs on stack-allocated matrices.

use nalgebra::allocator::Allocator;
use nalgebra::{Cholesky, DMatrix, DVector, DefaultAllocator, Dim, DimMin, OMatrix, OVector, U1};

use crate::error::{Error, Result};

pub trait LatentDim: DimMin<Self, Output = Self> {}
impl<D: DimMin<D, Output = D>> LatentDim for D {}

pub type Mat<D> = OMatrix<f64, D, D>;
pub type Vect<D> = OVector<f64, D>;

/// Matrix exponential. Non-finite input is rejected.
pub fn matrix_exp(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidInput("matrix_exp needs a square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix_exp: non-finite entry".into()));
    }
    Ok(expm(a))
}

/// Padé scaling-and-squaring exponential (nalgebra), with a closed form for 2×2.
pub fn expm<D: LatentDim>(a: &Mat<D>) -> Mat<D>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    if a.nrows() == 2 {
        let mut r = a.clone();
        let e = expm_2x2([a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]]);
        r[(0, 0)] = e[0];
        r[(0, 1)] = e[1];
        r[(1, 0)] = e[2];
        r[(1, 1)] = e[3];
        return r;
    }
    a.exp()
}

/// General-path exponential, bypassing the 2×2 shortcut.
pub fn expm_pade(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.exp()
}

/// exp of [[a, b], [c, d]] (row-major in and out).
///
/// Writes A = sI + B with B² = q²I, so e^A = e^s (cosh q · I + sinh(q)/q · B).
pub fn expm_2x2(m: [f64; 4]) -> [f64; 4] {
    let [a, b, c, d] = m;
    let s = 0.5 * (a + d);
    let h = 0.5 * (a - d);
    let q2 = h * h + b * c;
    let (ch, sh) = if q2.abs() < 1e-6 {
        // Taylor series in q²; truncation error below 1e-25.
        let es = s.exp();
        (
            es * (1.0 + q2 / 2.0 + q2 * q2 / 24.0 + q2 * q2 * q2 / 720.0),
            es * (1.0 + q2 / 6.0 + q2 * q2 / 120.0 + q2 * q2 * q2 / 5040.0),
        )
    } else if q2 > 0.0 {
        let q = q2.sqrt();
        let lo = (s - q).exp();
        let diff = lo * (2.0 * q).exp_m1();
        (lo + 0.5 * diff, 0.5 * diff / q)
    } else {
        let w = (-q2).sqrt();
        let es = s.exp();
        (es * w.cos(), es * w.sin() / w)
    };
    [ch + sh * h, sh * b, sh * c, ch - sh * h]
}

pub fn to_static<D: Dim>(m: &DMatrix<f64>, d: D) -> Mat<D>
where
    DefaultAllocator: Allocator<D, D>,
{
    OMatrix::<f64, D, D>::from_fn_generic(d, d, |i, j| m[(i, j)])
}

pub fn vec_to_static<D: Dim>(v: &[f64], d: D) -> Vect<D>
where
    DefaultAllocator: Allocator<D>,
{
    OVector::<f64, D>::from_fn_generic(d, U1, |i, _| v[i])
}

/// Cholesky factorization, retrying with growing diagonal jitter.
pub fn chol_jitter<D: Dim>(m: &Mat<D>) -> Result<Cholesky<f64, D>>
where
    DefaultAllocator: Allocator<D, D>,
{
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0f64, f64::max).max(1e-300);
    let mut jitter = 1e-13 * scale;
    for _ in 0..9 {
        let mut mm = m.clone();
        for i in 0..n {
            mm[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(mm) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical("covariance not positive definite".into()))
}

pub fn symmetrize<D: Dim>(m: &mut Mat<D>)
where
    DefaultAllocator: Allocator<D, D>,
{
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn ln_det_chol<D: Dim>(c: &Cholesky<f64, D>) -> f64
where
    DefaultAllocator: Allocator<D, D>,
{
    let l = c.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Solve A X + X Aᵀ = C through the Kronecker-sum system (A ⊕ A) vec X = vec C.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let eye = DMatrix::<f64>::identity(p, p);
    let ksum = a.kronecker(&eye) + eye.kronecker(a);
    let rhs = DVector::from_column_slice(c.as_slice());
    let lu = ksum.lu();
    let sol = lu
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::DegenerateProcess("Kronecker-sum system is singular".into()))?;
    let mut x = DMatrix::from_column_slice(p, p, sol.as_slice());
    let xt = x.transpose();
    x = (x + xt) * 0.5;
    Ok(x)
}

/// Symmetric PSD square root; `None` when an eigenvalue is materially negative.
pub fn psd_sqrt(m: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Some(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// True when every eigenvalue has strictly positive real part.
pub fn is_stable(theta: &DMatrix<f64>) -> bool {
    if theta.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if theta.nrows() == 1 {
        return theta[(0, 0)] > 0.0;
    }
    if theta.nrows() == 2 {
        let tr = theta[(0, 0)] + theta[(1, 1)];
        let det = theta[(0, 0)] * theta[(1, 1)] - theta[(0, 1)] * theta[(1, 0)];
        return tr > 0.0 && det > 0.0;
    }
    theta.complex_eigenvalues().iter().all(|z| z.re > 0.0)
}
