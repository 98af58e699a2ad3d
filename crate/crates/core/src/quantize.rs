//! Fourier pseudospectral discretization of Dirac-type operators.
//!
//! Matrices are indexed node-major: row `j * s + a` is spinor component `a`
//! at node `j`.

use crate::algebra::DiracRep;
use crate::model::{CapSpec, DistortionParam, ModelSpec, PhysParams};
use crate::spin::SpinMat;
use crate::{CMat, Error, Result, C64};
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Nodes x_j = -L + j h, j = 0..n.
    Periodic,
    /// Interior nodes j = 1..n of the periodic layout; functions vanish at
    /// x = +-L.
    Dirichlet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub half_length: f64,
    pub n: usize,
    pub boundary: Boundary,
}

impl Grid {
    pub fn new(half_length: f64, n: usize, boundary: Boundary) -> Result<Self> {
        if !(half_length > 0.0 && half_length.is_finite()) {
            return Err(Error::InvalidParameter(format!("half-length must be positive, got {half_length}")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidParameter(format!("grid needs an even point count >= 4, got {n}")));
        }
        Ok(Grid { half_length, n, boundary })
    }

    pub fn periodic(half_length: f64, n: usize) -> Result<Self> {
        Self::new(half_length, n, Boundary::Periodic)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.n as f64
    }

    /// Node coordinate of periodic index j.
    pub fn x(&self, j: usize) -> f64 {
        -self.half_length + j as f64 * self.spacing()
    }

    /// Periodic indices of the nodes carried by this grid.
    pub fn node_indices(&self) -> Vec<usize> {
        match self.boundary {
            Boundary::Periodic => (0..self.n).collect(),
            Boundary::Dirichlet => (1..self.n).collect(),
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.node_indices().into_iter().map(|j| self.x(j)).collect()
    }

    /// Wave numbers k_m = pi m / L, m = -n/2 .. n/2 - 1.
    pub fn momenta(&self) -> Vec<f64> {
        let n = self.n as i64;
        (-n / 2..n / 2).map(|m| PI * m as f64 / self.half_length).collect()
    }

    pub fn k_max(&self) -> f64 {
        PI * self.n as f64 / (2.0 * self.half_length)
    }
}

/// First-column coefficients c_d of the circulant spectral derivative:
/// (d/dx f)_j = sum_l c_{(j - l) mod n} f_l. The Nyquist mode is kept with
/// wave number -k_max, which makes -i d/dx exactly Hermitian.
pub fn derivative_coefficients(grid: &Grid) -> Vec<C64> {
    let n = grid.n;
    let (cos, sin): (Vec<f64>, Vec<f64>) =
        (0..n).map(|q| 2.0 * PI * q as f64 / n as f64).map(|t| (t.cos(), t.sin())).unzip();
    let scale = PI / grid.half_length / n as f64;
    (0..n)
        .map(|d| {
            // i/n sum_m k_m e^{2 pi i m d / n}; paired +-m terms give -2 m sin.
            let mut re = 0.0;
            for m in 1..n / 2 {
                re -= 2.0 * m as f64 * sin[(m * d) % n];
            }
            let nyq = -((n / 2) as f64) * cos[((n / 2) * d) % n];
            C64::new(re * scale, nyq * scale)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    FreeDirac,
    PerturbedDirac,
    CapInfinite,
    CapDirichlet,
    DistortedDirac,
    DistortedCap,
}

#[derive(Clone, Debug)]
pub struct AssembledOperator {
    pub matrix: CMat,
    pub kind: OperatorKind,
    pub params: PhysParams,
    pub theta: Option<DistortionParam>,
    pub grid: Grid,
    pub spinor_dim: usize,
    /// Periodic node indices represented by the rows, in order.
    pub nodes: Vec<usize>,
    /// Upper bound for sup |V|, used for the trusted energy window.
    pub potential_bound: f64,
}

impl AssembledOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.nodes.iter().map(|&j| self.grid.x(j)).collect()
    }

    /// Largest |energy| resolved by the grid: half the momentum cutoff on top
    /// of the rest energy and potential.
    pub fn trusted_energy(&self) -> f64 {
        0.5 * self.params.c * self.params.hbar * self.grid.k_max() + self.params.mc2() + self.potential_bound
    }
}

struct DiracPieces<'a> {
    rep: &'a DiracRep,
    params: PhysParams,
    grid: Grid,
    nodes: Vec<usize>,
    /// Coefficient a_j in front of the derivative (1 when undistorted).
    deriv_coeff: Option<Vec<C64>>,
    /// Zeroth-order term b_j subtracted from the derivative.
    deriv_shift: Option<Vec<C64>>,
    diag: Vec<SpinMat>,
}

fn build_dirac(p: DiracPieces<'_>) -> Result<CMat> {
    if p.rep.dim() != 1 {
        return Err(Error::UnsupportedDimension(p.rep.dim()));
    }
    let s = p.rep.spinor_dim();
    let alpha = p.rep.alphas[0];
    let beta = p.rep.beta;
    let coeffs = derivative_coefficients(&p.grid);
    let n = p.grid.n;
    let m = p.nodes.len();
    let pref = C64::new(0.0, -p.params.c * p.params.hbar);
    let mc2 = p.params.mc2();
    let mut mat = CMat::zeros(m * s, m * s);
    let alpha_pairs: Vec<(usize, usize, C64)> =
        (0..s).flat_map(|a| (0..s).map(move |b| (a, b))).filter_map(|(a, b)| {
            let v = alpha[(a, b)];
            (v != C64::new(0.0, 0.0)).then_some((a, b, v))
        }).collect();
    for (cj, &lj) in p.nodes.iter().enumerate() {
        for (ci, &li) in p.nodes.iter().enumerate() {
            let mut d = coeffs[(li + n - lj) % n];
            if let Some(a) = &p.deriv_coeff {
                d *= a[ci];
            }
            if ci == cj {
                if let Some(b) = &p.deriv_shift {
                    d -= b[ci];
                }
            }
            let d = pref * d;
            for &(a, b, v) in &alpha_pairs {
                mat[(ci * s + a, cj * s + b)] = v * d;
            }
        }
    }
    for (ci, block) in p.diag.iter().enumerate() {
        for a in 0..s {
            for b in 0..s {
                mat[(ci * s + a, ci * s + b)] += beta[(a, b)] * mc2 + block[(a, b)];
            }
        }
    }
    Ok(mat)
}

fn zero_diag(m: usize, s: usize) -> Vec<SpinMat> {
    vec![SpinMat::zeros(s); m]
}

pub fn assemble_free(rep: &DiracRep, params: PhysParams, grid: &Grid) -> Result<AssembledOperator> {
    let nodes = grid.node_indices();
    let s = rep.spinor_dim();
    let matrix = build_dirac(DiracPieces {
        rep,
        params,
        grid: *grid,
        diag: zero_diag(nodes.len(), s),
        nodes: nodes.clone(),
        deriv_coeff: None,
        deriv_shift: None,
    })?;
    Ok(AssembledOperator {
        matrix,
        kind: OperatorKind::FreeDirac,
        params,
        theta: None,
        grid: *grid,
        spinor_dim: s,
        nodes,
        potential_bound: 0.0,
    })
}

/// Free operator under the uniform dilation x -> (1 + theta) x:
/// -i c hbar alpha (1 + theta)^-1 d/dx + beta m c^2. Its grid spectrum is
/// +-(c^2 hbar^2 k^2 / (1 + theta)^2 + m^2 c^4)^(1/2) at every grid momentum.
/// Exterior scaling on a periodic grid shifts these values off that curve by
/// a relative O(theta R0 / L), since a periodic mode also crosses the
/// unscaled interior.
pub fn assemble_free_dilated(rep: &DiracRep, params: PhysParams, grid: &Grid, dp: &DistortionParam) -> Result<AssembledOperator> {
    if grid.boundary != Boundary::Periodic {
        return Err(Error::InvalidParameter("uniform dilation needs a periodic grid".into()));
    }
    let nodes = grid.node_indices();
    let s = rep.spinor_dim();
    let factor = C64::new(1.0, 0.0) / (C64::new(1.0, 0.0) + dp.theta);
    let matrix = build_dirac(DiracPieces {
        rep,
        params,
        grid: *grid,
        diag: zero_diag(nodes.len(), s),
        nodes: nodes.clone(),
        deriv_coeff: Some(vec![factor; nodes.len()]),
        deriv_shift: None,
    })?;
    Ok(AssembledOperator {
        matrix,
        kind: OperatorKind::DistortedDirac,
        params,
        theta: Some(*dp),
        grid: *grid,
        spinor_dim: s,
        nodes,
        potential_bound: 0.0,
    })
}

/// D = c alpha (hbar/i) d/dx + beta m c^2 + V on the grid, for any potential.
pub fn assemble_with_potential(
    rep: &DiracRep,
    params: PhysParams,
    potential: &crate::model::MatrixPotential,
    grid: &Grid,
) -> Result<AssembledOperator> {
    let support = potential.support_radius();
    if support >= grid.half_length {
        return Err(Error::SupportExceedsBox { support, half_length: grid.half_length });
    }
    let nodes = grid.node_indices();
    let diag: Vec<SpinMat> = nodes.iter().map(|&j| potential.eval1(grid.x(j))).collect();
    let matrix = build_dirac(DiracPieces {
        rep,
        params,
        grid: *grid,
        diag,
        nodes: nodes.clone(),
        deriv_coeff: None,
        deriv_shift: None,
    })?;
    Ok(AssembledOperator {
        matrix,
        kind: OperatorKind::PerturbedDirac,
        params,
        theta: None,
        grid: *grid,
        spinor_dim: rep.spinor_dim(),
        nodes,
        potential_bound: potential.norm_bound(),
    })
}

fn check_support(model: &ModelSpec, grid: &Grid) -> Result<()> {
    let support = model.potential.support_radius();
    if support >= grid.half_length {
        return Err(Error::SupportExceedsBox { support, half_length: grid.half_length });
    }
    Ok(())
}

fn potential_diag(model: &ModelSpec, grid: &Grid, nodes: &[usize]) -> Vec<SpinMat> {
    nodes.iter().map(|&j| model.potential.eval1(grid.x(j))).collect()
}

fn cap_diag(cap: &CapSpec, grid: &Grid, nodes: &[usize], s: usize) -> Vec<SpinMat> {
    nodes
        .iter()
        .map(|&j| SpinMat::scalar(s, C64::new(0.0, -1.0) * cap.eval(&[grid.x(j)])))
        .collect()
}

pub fn assemble_perturbed(model: &ModelSpec, grid: &Grid) -> Result<AssembledOperator> {
    check_support(model, grid)?;
    let nodes = grid.node_indices();
    let matrix = build_dirac(DiracPieces {
        rep: &model.rep,
        params: model.params,
        grid: *grid,
        diag: potential_diag(model, grid, &nodes),
        nodes: nodes.clone(),
        deriv_coeff: None,
        deriv_shift: None,
    })?;
    Ok(AssembledOperator {
        matrix,
        kind: OperatorKind::PerturbedDirac,
        params: model.params,
        theta: None,
        grid: *grid,
        spinor_dim: model.rep.spinor_dim(),
        nodes,
        potential_bound: model.potential.norm_bound(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CapVariant {
    /// J = D - iW on the whole grid.
    Infinite,
    /// J_R: compression to the nodes with |x| < radius.
    Dirichlet { radius: f64 },
}

pub fn assemble_cap(model: &ModelSpec, grid: &Grid, variant: CapVariant) -> Result<AssembledOperator> {
    check_support(model, grid)?;
    let s = model.rep.spinor_dim();
    let (nodes, kind) = match variant {
        CapVariant::Infinite => (grid.node_indices(), OperatorKind::CapInfinite),
        CapVariant::Dirichlet { radius } => {
            if radius <= model.cap.r2 {
                return Err(Error::DirichletRadius { radius, r2: model.cap.r2 });
            }
            if radius > grid.half_length {
                return Err(Error::InvalidParameter(format!(
                    "Dirichlet radius {radius} exceeds the grid half-length {}",
                    grid.half_length
                )));
            }
            let nodes = grid.node_indices().into_iter().filter(|&j| grid.x(j).abs() < radius).collect();
            (nodes, OperatorKind::CapDirichlet)
        }
    };
    let diag: Vec<SpinMat> = potential_diag(model, grid, &nodes)
        .into_iter()
        .zip(cap_diag(&model.cap, grid, &nodes, s))
        .map(|(v, w)| v + w)
        .collect();
    let matrix = build_dirac(DiracPieces {
        rep: &model.rep,
        params: model.params,
        grid: *grid,
        diag,
        nodes: nodes.clone(),
        deriv_coeff: None,
        deriv_shift: None,
    })?;
    Ok(AssembledOperator {
        matrix,
        kind,
        params: model.params,
        theta: None,
        grid: *grid,
        spinor_dim: s,
        nodes,
        potential_bound: model.potential.norm_bound(),
    })
}

/// Complex-distorted operator
/// D_theta = -i c hbar alpha [J^{-1} d/dx - theta g'' / (2 J^2)] + beta m c^2 + V,
/// J = 1 + theta g', optionally minus iW.
pub fn assemble_distorted(
    model: &ModelSpec,
    grid: &Grid,
    dp: &DistortionParam,
    with_cap: bool,
) -> Result<AssembledOperator> {
    check_support(model, grid)?;
    let dp = DistortionParam::new(dp.theta, dp.eps)?;
    let g = &model.scaling;
    if !g.frozen_on(model.potential.support_radius()) {
        return Err(Error::NotFrozen("potential"));
    }
    if with_cap && model.cap.constant_beyond(g.r0).is_none() {
        return Err(Error::NotFrozen("absorbing potential"));
    }
    if grid.boundary == Boundary::Periodic && grid.half_length < g.r0 + g.eta {
        return Err(Error::InvalidParameter(format!(
            "grid half-length {} must cover the scaling transition R0 + eta = {}",
            grid.half_length,
            g.r0 + g.eta
        )));
    }
    let nodes = grid.node_indices();
    let s = model.rep.spinor_dim();
    let theta = dp.theta;
    let one = C64::new(1.0, 0.0);
    let (a, b): (Vec<C64>, Vec<C64>) = nodes
        .iter()
        .map(|&j| {
            let (_, g1, g2) = g.eval1(grid.x(j));
            let jac = one + theta * g1;
            (one / jac, theta * g2 / (jac * jac * 2.0))
        })
        .unzip();
    let mut diag = potential_diag(model, grid, &nodes);
    if with_cap {
        for (d, w) in diag.iter_mut().zip(cap_diag(&model.cap, grid, &nodes, s)) {
            *d += w;
        }
    }
    let undistorted = theta == C64::new(0.0, 0.0);
    let matrix = build_dirac(DiracPieces {
        rep: &model.rep,
        params: model.params,
        grid: *grid,
        diag,
        nodes: nodes.clone(),
        deriv_coeff: (!undistorted).then_some(a),
        deriv_shift: (!undistorted).then_some(b),
    })?;
    Ok(AssembledOperator {
        matrix,
        kind: if with_cap { OperatorKind::DistortedCap } else { OperatorKind::DistortedDirac },
        params: model.params,
        theta: Some(dp),
        grid: *grid,
        spinor_dim: s,
        nodes,
        potential_bound: model.potential.norm_bound(),
    })
}

/// Discrete Weyl quantization on a periodic grid:
/// (Op a)_{jl} = (1/n) sum_m a(mu_{jl}, hbar k_m) e^{i k_m (x_j - x_l)},
/// with mu_{jl} the midpoint of x_j and x_l taken along the shorter arc of
/// the circle (both arcs averaged when they tie).
pub fn weyl_quantize(
    symbol: &(dyn Fn(f64, f64) -> SpinMat + Sync),
    spinor_dim: usize,
    grid: &Grid,
    hbar: f64,
) -> Result<CMat> {
    if grid.boundary != Boundary::Periodic {
        return Err(Error::InvalidParameter("Weyl quantization needs a periodic grid".into()));
    }
    let n = grid.n;
    let s = spinor_dim;
    let h = grid.spacing();
    let momenta = grid.momenta();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    // kernels[q][(a*s+b)*n + d] = (1/n) sum_m a_ab(mu_q, hbar k_m) e^{2 pi i m d/n}
    let kernels: Vec<Vec<C64>> = (0..2 * n)
        .into_par_iter()
        .map(|q| {
            let mu = -grid.half_length + q as f64 * 0.5 * h;
            let mut buf = vec![C64::new(0.0, 0.0); s * s * n];
            for (mi, &k) in momenta.iter().enumerate() {
                let m = mi as i64 - (n / 2) as i64;
                let slot = m.rem_euclid(n as i64) as usize;
                let val = symbol(mu, hbar * k);
                for a in 0..s {
                    for b in 0..s {
                        buf[(a * s + b) * n + slot] = val[(a, b)];
                    }
                }
            }
            for chunk in buf.chunks_mut(n) {
                fft.process(chunk);
                for v in chunk.iter_mut() {
                    *v /= n as f64;
                }
            }
            buf
        })
        .collect();
    let mut mat = CMat::zeros(n * s, n * s);
    let half = (n / 2) as i64;
    for j in 0..n {
        for l in 0..n {
            let d = j as i64 - l as i64;
            let dw = (d + half).rem_euclid(n as i64) - half;
            let dslot = d.rem_euclid(n as i64) as usize;
            let q1 = (2 * l as i64 + dw).rem_euclid(2 * n as i64) as usize;
            let tie = dw == -half;
            let q2 = (2 * l as i64 - dw).rem_euclid(2 * n as i64) as usize;
            for a in 0..s {
                for b in 0..s {
                    let idx = (a * s + b) * n + dslot;
                    let v = if tie { (kernels[q1][idx] + kernels[q2][idx]) * 0.5 } else { kernels[q1][idx] };
                    mat[(j * s + a, l * s + b)] = v;
                }
            }
        }
    }
    Ok(mat)
}

/// Radial Dirac operator for a spherically symmetric scalar potential on
/// (0, L) with a staggered grid: G_j at r = j h (j = 1..M), F at
/// r = (j + 1/2) h (j = 0..M), both vanishing at r = 0 and r = L.
/// H = [[V + mc^2, c hbar(-d/dr + kappa/r)], [c hbar(d/dr + kappa/r), V - mc^2]].
#[derive(Clone, Debug)]
pub struct RadialOperator {
    pub matrix: CMat,
    pub kappa: i32,
    pub g_radii: Vec<f64>,
    pub f_radii: Vec<f64>,
}

pub fn radial_reduce(
    potential: &crate::model::MatrixPotential,
    kappa: i32,
    params: PhysParams,
    half_length: f64,
    points: usize,
) -> Result<RadialOperator> {
    if kappa == 0 {
        return Err(Error::InvalidParameter("kappa must be a non-zero integer".into()));
    }
    if points < 4 {
        return Err(Error::InvalidParameter(format!("need at least 4 radial points, got {points}")));
    }
    let terms = potential.radial_scalar_terms().ok_or(Error::NonRadial)?;
    let v = |r: f64| terms.iter().map(|&(rad, p)| p * crate::model::bump(r / rad)).sum::<f64>();
    let m = points;
    let h = half_length / (m + 1) as f64;
    let g_radii: Vec<f64> = (1..=m).map(|j| j as f64 * h).collect();
    let f_radii: Vec<f64> = (0..=m).map(|j| (j as f64 + 0.5) * h).collect();
    let ng = m;
    let nf = m + 1;
    let ch = params.c * params.hbar;
    let k = kappa as f64;
    let mut mat = CMat::zeros(ng + nf, ng + nf);
    for (i, &r) in g_radii.iter().enumerate() {
        mat[(i, i)] = C64::new(v(r) + params.mc2(), 0.0);
    }
    for (i, &r) in f_radii.iter().enumerate() {
        mat[(ng + i, ng + i)] = C64::new(v(r) - params.mc2(), 0.0);
    }
    // B maps G to F: (B G)_{j+1/2} = c hbar [(G_{j+1} - G_j)/h + kappa/r (G_j + G_{j+1})/2].
    for (fi, &r) in f_radii.iter().enumerate() {
        // G index fi-1 is G_j (j = fi), G index fi is G_{j+1}.
        let left = fi.checked_sub(1);
        let right = (fi < ng).then_some(fi);
        if let Some(gl) = left {
            let val = ch * (-1.0 / h + 0.5 * k / r);
            mat[(ng + fi, gl)] = C64::new(val, 0.0);
            mat[(gl, ng + fi)] = C64::new(val, 0.0);
        }
        if let Some(gr) = right {
            let val = ch * (1.0 / h + 0.5 * k / r);
            mat[(ng + fi, gr)] = C64::new(val, 0.0);
            mat[(gr, ng + fi)] = C64::new(val, 0.0);
        }
    }
    Ok(RadialOperator { matrix: mat, kappa, g_radii, f_radii })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::standard_representation;
    use crate::linalg;

    #[test]
    fn derivative_is_exact_on_trigonometric_modes() {
        let grid = Grid::periodic(3.0, 32).unwrap();
        let c = derivative_coefficients(&grid);
        let n = grid.n;
        let k = PI * 5.0 / 3.0;
        for j in 0..n {
            let d: C64 = (0..n).map(|l| c[(j + n - l) % n] * (k * grid.x(l)).sin()).sum();
            assert!((d.re - k * (k * grid.x(j)).cos()).abs() < 1e-12);
            assert!(d.im.abs() < 1e-12);
        }
    }

    #[test]
    fn free_operator_is_hermitian() {
        let rep = standard_representation(1).unwrap();
        let p = PhysParams::new(0.3, 1.0, 1.0).unwrap();
        let grid = Grid::periodic(5.0, 64).unwrap();
        let op = assemble_free(&rep, p, &grid).unwrap();
        assert!(linalg::hermitian_defect(&op.matrix) < 1e-12);
    }

    #[test]
    fn weyl_of_momentum_is_derivative() {
        let grid = Grid::periodic(4.0, 32).unwrap();
        let hbar = 0.2;
        let op = weyl_quantize(&|_x, xi| SpinMat::scalar(1, C64::new(xi, 0.0)), 1, &grid, hbar).unwrap();
        let c = derivative_coefficients(&grid);
        let n = grid.n;
        for j in 0..n {
            for l in 0..n {
                let expect = C64::new(0.0, -hbar) * c[(j + n - l) % n];
                assert!((op[(j, l)] - expect).norm() < 1e-13);
            }
        }
        let mult = weyl_quantize(&|x, _| SpinMat::scalar(1, C64::new(x.cos(), 0.0)), 1, &grid, hbar).unwrap();
        for j in 0..n {
            for l in 0..n {
                let expect = if j == l { grid.x(j).cos() } else { 0.0 };
                assert!((mult[(j, l)] - C64::new(expect, 0.0)).norm() < 1e-13);
            }
        }
    }
}

