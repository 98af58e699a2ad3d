//! Pauli matrices and Dirac representations.

use crate::spin::SpinMat;
use crate::{Error, Result, C64};

/// A set of Hermitian matrices (alpha_1..alpha_d, beta) meant to satisfy the
/// Clifford relations.
#[derive(Clone, Debug, PartialEq)]
pub struct DiracRep {
    pub alphas: Vec<SpinMat>,
    pub beta: SpinMat,
}

impl DiracRep {
    pub fn dim(&self) -> usize {
        self.alphas.len()
    }

    pub fn spinor_dim(&self) -> usize {
        self.beta.dim()
    }

    /// alpha . v + beta * b
    pub fn combine(&self, v: &[f64], b: f64) -> SpinMat {
        let mut m = self.beta * b;
        for (a, &vk) in self.alphas.iter().zip(v) {
            m += *a * vk;
        }
        m
    }

    /// Conjugates every generator by a unitary `u`.
    pub fn conjugated(&self, u: &SpinMat) -> DiracRep {
        let ud = u.adjoint();
        DiracRep {
            alphas: self.alphas.iter().map(|a| *u * *a * ud).collect(),
            beta: *u * self.beta * ud,
        }
    }
}

pub fn pauli_matrices() -> [SpinMat; 3] {
    let o = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    [
        SpinMat::from_rows(&[&[o, one], &[one, o]]),
        SpinMat::from_rows(&[&[o, -i], &[i, o]]),
        SpinMat::from_rows(&[&[one, o], &[o, -one]]),
    ]
}

/// Standard representation: in one dimension alpha = sigma_1, beta = sigma_3;
/// in three, alpha_k = offdiag(sigma_k, sigma_k), beta = diag(I, -I).
pub fn standard_representation(dim: usize) -> Result<DiracRep> {
    let s = pauli_matrices();
    match dim {
        1 => Ok(DiracRep { alphas: vec![s[0]], beta: s[2] }),
        3 => {
            let block = |tl: Option<&SpinMat>, off: Option<&SpinMat>, sign: f64| {
                SpinMat::from_fn(4, |r, c| {
                    let (br, bc) = (r / 2, c / 2);
                    let (i, j) = (r % 2, c % 2);
                    match (br, bc) {
                        (0, 0) => tl.map_or(C64::new(0.0, 0.0), |m| m[(i, j)]),
                        (1, 1) => tl.map_or(C64::new(0.0, 0.0), |m| m[(i, j)] * sign),
                        _ => off.map_or(C64::new(0.0, 0.0), |m| m[(i, j)]),
                    }
                })
            };
            let id = SpinMat::identity(2);
            Ok(DiracRep {
                alphas: s.iter().map(|sk| block(None, Some(sk), 1.0)).collect(),
                beta: block(Some(&id), None, -1.0),
            })
        }
        d => Err(Error::UnsupportedDimension(d)),
    }
}

/// Largest operator-norm violation of
/// {alpha_i, alpha_j} = 2 delta_ij, {alpha_i, beta} = 0, beta^2 = I,
/// and of Hermiticity of every generator.
pub fn clifford_defect(rep: &DiracRep) -> f64 {
    let n = rep.spinor_dim();
    let id = SpinMat::identity(n);
    let mut gens: Vec<SpinMat> = rep.alphas.clone();
    gens.push(rep.beta);
    let mut defect = 0.0f64;
    for (i, a) in gens.iter().enumerate() {
        defect = defect.max((*a - a.adjoint()).op_norm());
        for (j, b) in gens.iter().enumerate().skip(i) {
            let target = if i == j { id * 2.0 } else { SpinMat::zeros(n) };
            defect = defect.max((a.anticommutator(b) - target).op_norm());
        }
    }
    defect
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_reps_are_clifford() {
        for d in [1, 3] {
            let rep = standard_representation(d).unwrap();
            assert_eq!(rep.dim(), d);
            assert!(clifford_defect(&rep) <= 1e-14);
        }
        assert!(standard_representation(2).is_err());
    }

    #[test]
    fn beta_identity_breaks_anticommutation() {
        let mut rep = standard_representation(3).unwrap();
        rep.beta = SpinMat::identity(4);
        assert!(clifford_defect(&rep) >= 2.0 - 1e-12);
    }

    #[test]
    fn pauli_products() {
        let [s1, s2, s3] = pauli_matrices();
        let i = C64::new(0.0, 1.0);
        assert!((s1 * s2 - s3 * i).max_abs() < 1e-15);
        assert!((s1 * s1 - SpinMat::identity(2)).max_abs() < 1e-15);
    }
}
