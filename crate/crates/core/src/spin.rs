//! Small stack-allocated complex matrices (spinor dimension up to 4).
//!
//! Symbol calculus evaluates thousands of 2x2/4x4 products per trajectory
//! step, so these avoid heap allocation entirely.

use crate::{CMat, C64};
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

pub const MAX_SPIN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpinMat {
    n: usize,
    a: [C64; MAX_SPIN * MAX_SPIN],
}

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

impl SpinMat {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1 && n <= MAX_SPIN, "spinor dimension {n} out of range");
        SpinMat { n, a: [ZERO; MAX_SPIN * MAX_SPIN] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn scalar(n: usize, s: C64) -> Self {
        Self::identity(n) * s
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let n = rows.len();
        Self::from_fn(n, |i, j| rows[i][j])
    }

    pub fn from_mat(m: &CMat) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        Self::from_fn(m.nrows(), |i, j| m[(i, j)])
    }

    pub fn to_mat(&self) -> CMat {
        CMat::from_fn(self.n, self.n, |i, j| self[(i, j)])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn norm_fro(&self) -> f64 {
        self.entries().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries().iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Spectral norm, from the largest eigenvalue of A^*A.
    pub fn op_norm(&self) -> f64 {
        let g = self.adjoint() * *self;
        let (vals, _) = g.herm_eig();
        vals[..self.n].iter().fold(0.0f64, |m, &v| m.max(v)).max(0.0).sqrt()
    }

    pub fn commutator(&self, other: &Self) -> Self {
        *self * *other - *other * *self
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        *self * *other + *other * *self
    }

    /// Hermitian part (A + A^*)/2.
    pub fn hermitian_part(&self) -> Self {
        (*self + self.adjoint()) * 0.5
    }

    pub fn hermitian_defect(&self) -> f64 {
        (*self - self.adjoint()).max_abs()
    }

    fn entries(&self) -> &[C64] {
        &self.a[..]
    }

    /// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi
    /// rotations. Eigenvalues ascending; eigenvectors are the columns of the
    /// returned matrix.
    pub fn herm_eig(&self) -> ([f64; MAX_SPIN], SpinMat) {
        let n = self.n;
        let mut a = self.hermitian_part();
        let mut v = SpinMat::identity(n);
        let scale = a.norm_fro().max(f64::MIN_POSITIVE);
        for _sweep in 0..64 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[(p, q)].norm_sqr();
                }
            }
            if off.sqrt() <= 1e-17 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    let r = apq.norm();
                    if r <= 1e-300 {
                        continue;
                    }
                    let phase = apq / r;
                    let theta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * r);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    let mut j = SpinMat::identity(n);
                    j[(p, p)] = C64::new(c, 0.0);
                    j[(p, q)] = C64::new(s, 0.0);
                    j[(q, p)] = -phase.conj() * s;
                    j[(q, q)] = phase.conj() * c;
                    a = j.adjoint() * a * j;
                    a[(p, q)] = ZERO;
                    a[(q, p)] = ZERO;
                    v = v * j;
                }
            }
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
        let mut vals = [0.0; MAX_SPIN];
        let mut vecs = SpinMat::zeros(n);
        for (k, &i) in idx.iter().enumerate() {
            vals[k] = a[(i, i)].re;
            for r in 0..n {
                vecs[(r, k)] = v[(r, i)];
            }
        }
        (vals, vecs)
    }

    /// Orthogonal projector onto the span of the given eigenvector columns.
    pub fn projector(vecs: &SpinMat, cols: &[usize]) -> SpinMat {
        let n = vecs.n;
        SpinMat::from_fn(n, |i, j| cols.iter().map(|&k| vecs[(i, k)] * vecs[(j, k)].conj()).sum())
    }
}

impl Index<(usize, usize)> for SpinMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.n && j < self.n);
        &self.a[i * MAX_SPIN + j]
    }
}

impl IndexMut<(usize, usize)> for SpinMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.n && j < self.n);
        &mut self.a[i * MAX_SPIN + j]
    }
}

impl Add for SpinMat {
    type Output = SpinMat;
    fn add(mut self, rhs: SpinMat) -> SpinMat {
        self += rhs;
        self
    }
}

impl AddAssign for SpinMat {
    fn add_assign(&mut self, rhs: SpinMat) {
        debug_assert_eq!(self.n, rhs.n);
        for (x, y) in self.a.iter_mut().zip(rhs.a.iter()) {
            *x += *y;
        }
    }
}

impl Sub for SpinMat {
    type Output = SpinMat;
    fn sub(mut self, rhs: SpinMat) -> SpinMat {
        self -= rhs;
        self
    }
}

impl SubAssign for SpinMat {
    fn sub_assign(&mut self, rhs: SpinMat) {
        debug_assert_eq!(self.n, rhs.n);
        for (x, y) in self.a.iter_mut().zip(rhs.a.iter()) {
            *x -= *y;
        }
    }
}

impl Neg for SpinMat {
    type Output = SpinMat;
    fn neg(self) -> SpinMat {
        self * -1.0
    }
}

impl Mul for SpinMat {
    type Output = SpinMat;
    fn mul(self, rhs: SpinMat) -> SpinMat {
        debug_assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut out = SpinMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self[(i, k)];
                if aik == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.a[i * MAX_SPIN + j] += aik * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl Mul<C64> for SpinMat {
    type Output = SpinMat;
    fn mul(mut self, s: C64) -> SpinMat {
        for x in self.a.iter_mut() {
            *x *= s;
        }
        self
    }
}

impl Mul<f64> for SpinMat {
    type Output = SpinMat;
    fn mul(mut self, s: f64) -> SpinMat {
        for x in self.a.iter_mut() {
            *x *= s;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn jacobi_diagonalizes_hermitian_4x4() {
        let m = SpinMat::from_fn(4, |i, j| {
            let base = c((i + 2 * j) as f64 * 0.3, (i as f64 - j as f64) * 0.7);
            if i == j {
                c(base.re, 0.0)
            } else {
                base
            }
        })
        .hermitian_part();
        let (vals, vecs) = m.herm_eig();
        let recon = vecs * SpinMat::from_fn(4, |i, j| if i == j { c(vals[i], 0.0) } else { ZERO }) * vecs.adjoint();
        assert!((recon - m).max_abs() < 1e-13);
        assert!((vecs.adjoint() * vecs - SpinMat::identity(4)).max_abs() < 1e-14);
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2] && vals[2] <= vals[3]);
    }

    #[test]
    fn op_norm_of_diagonal() {
        let m = SpinMat::from_fn(3, |i, j| if i == j { c(-(i as f64) - 1.0, 0.0) } else { ZERO });
        assert!((m.op_norm() - 3.0).abs() < 1e-14);
    }
}
