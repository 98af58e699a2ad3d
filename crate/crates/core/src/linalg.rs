//! Dense helpers on top of faer, plus shifted Hessenberg solves.

use crate::{CMat, Error, Result, C64};
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::hessenberg;
use faer::linalg::solvers::Solve;
use faer::{Par, Side};

pub fn eigenvalues(a: &CMat) -> Result<Vec<C64>> {
    a.eigenvalues().map_err(|_| Error::NoConvergence)
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian matrix.
pub fn herm_eigen(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let e = a.self_adjoint_eigen(Side::Lower).map_err(|_| Error::NoConvergence)?;
    let s = e.S();
    let vals: Vec<f64> = (0..a.nrows()).map(|i| s[i].re).collect();
    Ok((vals, e.U().to_owned()))
}

pub fn herm_eigenvalues(a: &CMat) -> Result<Vec<f64>> {
    let v = a.self_adjoint_eigenvalues(Side::Lower).map_err(|_| Error::NoConvergence)?;
    Ok(v)
}

/// Singular values in non-increasing order.
pub fn singular_values(a: &CMat) -> Result<Vec<f64>> {
    let mut s = a.singular_values().map_err(|_| Error::NoConvergence)?;
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

pub fn op_norm(a: &CMat) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0.0);
    }
    Ok(singular_values(a)?[0])
}

/// Largest entrywise violation of A = A^*.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut d = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            d = d.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    d
}

pub fn max_abs(a: &CMat) -> f64 {
    let mut d = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            d = d.max(a[(i, j)].norm());
        }
    }
    d
}

pub fn shifted(a: &CMat, z: C64) -> CMat {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] -= z;
    }
    m
}

pub fn matvec(a: &CMat, x: &[C64]) -> Vec<C64> {
    let n = a.nrows();
    let mut y = vec![C64::new(0.0, 0.0); n];
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj.re == 0.0 && xj.im == 0.0 {
            continue;
        }
        let col = a.col(j);
        for i in 0..n {
            y[i] += col[i] * xj;
        }
    }
    y
}

pub fn norm2(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn normalize(x: &mut [C64]) -> f64 {
    let n = norm2(x);
    if n > 0.0 {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
    n
}

/// Eigenvector for an eigenvalue estimate `z` by inverse iteration.
pub fn inverse_iteration(a: &CMat, z: C64, iterations: usize) -> Result<Vec<C64>> {
    let n = a.nrows();
    let scale = 1.0 + z.norm();
    // A tiny offset keeps the factorization away from exact singularity.
    let shift = z + C64::new(1e-13 * scale, 1e-13 * scale);
    let lu = shifted(a, shift).partial_piv_lu();
    let mut x = CMat::from_fn(n, 1, |i, _| C64::new(1.0 + 0.1 * ((i * 7919) % 97) as f64 / 97.0, 0.0));
    for _ in 0..iterations.max(1) {
        let y = lu.solve(&x);
        let nrm = (0..n).map(|i| y[(i, 0)].norm_sqr()).sum::<f64>().sqrt();
        if !nrm.is_finite() || nrm == 0.0 {
            return Err(Error::Singular(z));
        }
        x = CMat::from_fn(n, 1, |i, _| y[(i, 0)] / nrm);
    }
    let mut v: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
    // Fix the global phase so results are reproducible.
    let (imax, _) = v.iter().enumerate().fold((0, 0.0), |acc, (i, z)| if z.norm() > acc.1 { (i, z.norm()) } else { acc });
    let ph = v[imax].conj() / v[imax].norm();
    for c in v.iter_mut() {
        *c *= ph;
    }
    Ok(v)
}

/// Unitary reduction to upper Hessenberg form, stored row-major for the
/// shifted solves used by contour integrals.
pub struct Hessenberg {
    n: usize,
    rows: Vec<C64>,
}

impl Hessenberg {
    pub fn reduce(a: &CMat) -> Self {
        let n = a.nrows();
        let mut h = a.clone();
        if n > 2 {
            let bs = faer::linalg::qr::no_pivoting::factor::recommended_block_size::<C64>(n - 1, n - 1);
            let mut hh = CMat::zeros(bs, n - 1);
            let mut mem = MemBuffer::new(hessenberg::hessenberg_in_place_scratch::<C64>(n, bs, Par::Seq, Default::default()));
            hessenberg::hessenberg_in_place(h.as_mut(), hh.as_mut(), Par::Seq, MemStack::new(&mut mem), Default::default());
        }
        let mut rows = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in i.saturating_sub(1)..n {
                rows[i * n + j] = h[(i, j)];
            }
        }
        Hessenberg { n, rows }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.rows[i * self.n + j]
    }

    /// LU factorization of H - zI with adjacent-row pivoting.
    pub fn factor_shifted(&self, z: C64) -> Result<HessLu> {
        let n = self.n;
        let mut u = self.rows.clone();
        for i in 0..n {
            u[i * n + i] -= z;
        }
        let mut mult = vec![C64::new(0.0, 0.0); n.saturating_sub(1)];
        let mut swap = vec![false; n.saturating_sub(1)];
        for k in 0..n.saturating_sub(1) {
            let a = u[k * n + k];
            let b = u[(k + 1) * n + k];
            if b.norm() > a.norm() {
                for j in k..n {
                    u.swap(k * n + j, (k + 1) * n + j);
                }
                swap[k] = true;
            }
            let piv = u[k * n + k];
            if piv.norm() == 0.0 {
                continue;
            }
            let l = u[(k + 1) * n + k] / piv;
            mult[k] = l;
            let (top, bottom) = u.split_at_mut((k + 1) * n);
            let rk = &top[k * n..k * n + n];
            let rk1 = &mut bottom[..n];
            rk1[k] = C64::new(0.0, 0.0);
            for j in k + 1..n {
                rk1[j] -= l * rk[j];
            }
        }
        let mut min_piv = f64::INFINITY;
        for i in 0..n {
            min_piv = min_piv.min(u[i * n + i].norm());
        }
        if min_piv == 0.0 || !min_piv.is_finite() {
            return Err(Error::Singular(z));
        }
        Ok(HessLu { n, u, mult, swap })
    }
}

pub struct HessLu {
    n: usize,
    u: Vec<C64>,
    mult: Vec<C64>,
    swap: Vec<bool>,
}

impl HessLu {
    /// Solves (H - zI) x = b in place.
    pub fn solve(&self, b: &mut [C64]) {
        let n = self.n;
        for k in 0..n.saturating_sub(1) {
            if self.swap[k] {
                b.swap(k, k + 1);
            }
            let t = b[k];
            b[k + 1] -= self.mult[k] * t;
        }
        for i in (0..n).rev() {
            let row = &self.u[i * n..i * n + n];
            let mut s = b[i];
            for j in i + 1..n {
                s -= row[j] * b[j];
            }
            b[i] = s / row[i];
        }
    }

    /// Solves (H - zI)^* x = b in place.
    pub fn solve_adjoint(&self, b: &mut [C64]) {
        let n = self.n;
        for j in 0..n {
            let row = &self.u[j * n..j * n + n];
            let yj = b[j] / row[j].conj();
            b[j] = yj;
            for i in j + 1..n {
                b[i] -= row[i].conj() * yj;
            }
        }
        for k in (0..n.saturating_sub(1)).rev() {
            let t = b[k + 1];
            b[k] -= self.mult[k].conj() * t;
            if self.swap[k] {
                b.swap(k, k + 1);
            }
        }
    }

    /// Estimate of the smallest singular value by inverse power iteration on
    /// (H - zI)^{-*}(H - zI)^{-1}. The estimate is an upper bound up to the
    /// iteration's convergence.
    pub fn sigma_min_estimate(&self, iterations: usize) -> f64 {
        let n = self.n;
        let mut x: Vec<C64> = (0..n).map(|i| C64::new(1.0 + ((i * 31 + 7) % 13) as f64 / 13.0, ((i * 17) % 5) as f64 / 5.0)).collect();
        normalize(&mut x);
        let mut est = 0.0;
        for _ in 0..iterations.max(1) {
            self.solve(&mut x);
            self.solve_adjoint(&mut x);
            let nrm = normalize(&mut x);
            if !nrm.is_finite() {
                return 0.0;
            }
            est = nrm;
        }
        if est > 0.0 {
            1.0 / est.sqrt()
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_matrix(n: usize) -> CMat {
        CMat::from_fn(n, n, |i, j| {
            C64::new(((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.5, ((i * 3 + j * 5) % 11) as f64 / 11.0 - 0.4)
        })
    }

    #[test]
    fn hessenberg_preserves_spectrum_and_solves() {
        let n = 40;
        let a = test_matrix(n);
        let h = Hessenberg::reduce(&a);
        let hm = CMat::from_fn(n, n, |i, j| h.get(i, j));
        let mut ea = eigenvalues(&a).unwrap();
        let mut eh = eigenvalues(&hm).unwrap();
        let key = |z: &C64| (z.re * 1e6).round() as i64 * 1_000_000_000 + (z.im * 1e6).round() as i64;
        ea.sort_by_key(key);
        eh.sort_by_key(key);
        for (x, y) in ea.iter().zip(&eh) {
            assert!((x - y).norm() < 1e-10);
        }
        let z = C64::new(0.3, 0.2);
        let lu = h.factor_shifted(z).unwrap();
        let b: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let mut x = b.clone();
        lu.solve(&mut x);
        let r = matvec(&shifted(&hm, z), &x);
        let err: f64 = r.iter().zip(&b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
        let mut y = b.clone();
        lu.solve_adjoint(&mut y);
        let ha = shifted(&hm, z).adjoint().to_owned();
        let r = matvec(&ha, &y);
        let err: f64 = r.iter().zip(&b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
        let smin = singular_values(&shifted(&hm, z)).unwrap()[n - 1];
        let est = lu.sigma_min_estimate(30);
        assert!((est - smin).abs() < 1e-3 * smin.max(1e-3));
    }
}
