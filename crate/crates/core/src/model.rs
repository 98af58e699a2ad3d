//! Physical parameters, potentials, absorbing potentials and the exterior
//! scaling profile.

use crate::algebra::{clifford_defect, DiracRep};
use crate::spin::SpinMat;
use crate::{Error, Result, C64};
use std::fmt;
use std::sync::{Arc, OnceLock};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysParams {
    pub hbar: f64,
    pub mass: f64,
    pub c: f64,
}

impl PhysParams {
    pub fn new(hbar: f64, mass: f64, c: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidParameter(format!("hbar must be positive, got {hbar}")));
        }
        if !(mass >= 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("mass must be non-negative, got {mass}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("c must be positive, got {c}")));
        }
        Ok(PhysParams { hbar, mass, c })
    }

    /// Rest energy m c^2.
    pub fn mc2(&self) -> f64 {
        self.mass * self.c * self.c
    }

    pub fn with_hbar(&self, hbar: f64) -> Result<Self> {
        Self::new(hbar, self.mass, self.c)
    }
}

fn logistic_pair(u: f64) -> (f64, f64) {
    // (1/(1+e^u), e^u/(1+e^u)) evaluated without overflow.
    if u > 0.0 {
        let e = (-u).exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    } else {
        let e = u.exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    }
}

/// C-infinity step: 0 for t <= 0, 1 for t >= 1, built from exp(-1/t).
/// Returns (s, s', s'').
pub fn smoothstep3(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let u = 1.0 / t - 1.0 / (1.0 - t);
    let du = -1.0 / (t * t) - 1.0 / ((1.0 - t) * (1.0 - t));
    let ddu = 2.0 / (t * t * t) - 2.0 / ((1.0 - t) * (1.0 - t) * (1.0 - t));
    let (s, one_minus_s) = logistic_pair(u);
    let w = s * one_minus_s;
    let ds = -w * du;
    let dds = -ds * (1.0 - 2.0 * s) * du - w * ddu;
    (s, ds, dds)
}

pub fn smoothstep(t: f64) -> f64 {
    smoothstep3(t).0
}

fn gauss_legendre_16() -> &'static ([f64; 16], [f64; 16]) {
    static RULE: OnceLock<([f64; 16], [f64; 16])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = 16;
        let mut x = [0.0; 16];
        let mut w = [0.0; 16];
        for i in 0..n {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    let (mut q0, mut q1) = (1.0, z);
                    for k in 2..=n {
                        let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                        q0 = q1;
                        q1 = q2;
                    }
                    let dq = n as f64 * (z * q1 - q0) / (z * z - 1.0);
                    w[i] = 2.0 / ((1.0 - z * z) * dq * dq);
                    break;
                }
            }
            x[i] = z;
        }
        (x, w)
    })
}

/// Integral of the smoothstep from 0 to t.
pub fn smoothstep_integral(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 0.5 + (t - 1.0);
    }
    let (x, w) = gauss_legendre_16();
    let panels = 8;
    let hp = t / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let a = p as f64 * hp;
        for k in 0..16 {
            total += w[k] * smoothstep(a + 0.5 * hp * (x[k] + 1.0));
        }
    }
    total * 0.5 * hp
}

/// exp(1 - 1/(1 - r^2)) on r < 1, zero outside; equals 1 at r = 0.
pub fn bump(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BumpTerm {
    pub center: Vec<f64>,
    pub radius: f64,
    pub coeff: SpinMat,
}

impl BumpTerm {
    pub fn profile(&self, x: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        bump(d2.sqrt() / self.radius)
    }
}

/// Hermitian matrix potential built as a finite sum of compactly supported
/// bumps with constant Hermitian coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPotential {
    spinor_dim: usize,
    dim: usize,
    terms: Vec<BumpTerm>,
}

pub fn make_bump_potential(center: &[f64], radius: f64, coeff: SpinMat) -> Result<MatrixPotential> {
    if center.is_empty() || !(center.len() == 1 || center.len() == 3) {
        return Err(Error::UnsupportedDimension(center.len()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("bump radius must be positive, got {radius}")));
    }
    let defect = coeff.hermitian_defect();
    if defect > 1e-12 * (1.0 + coeff.max_abs()) {
        return Err(Error::NotHermitian(defect));
    }
    Ok(MatrixPotential {
        spinor_dim: coeff.dim(),
        dim: center.len(),
        terms: vec![BumpTerm { center: center.to_vec(), radius, coeff: coeff.hermitian_part() }],
    })
}

impl MatrixPotential {
    pub fn zero(dim: usize, spinor_dim: usize) -> Self {
        MatrixPotential { spinor_dim, dim, terms: Vec::new() }
    }

    pub fn sum(mut self, other: MatrixPotential) -> Result<Self> {
        if self.terms.is_empty() && other.dim != self.dim {
            self.dim = other.dim;
        }
        if other.spinor_dim != self.spinor_dim || (!other.terms.is_empty() && other.dim != self.dim) {
            return Err(Error::DimensionMismatch("potentials of different shape".into()));
        }
        self.terms.extend(other.terms);
        Ok(self)
    }

    pub fn terms(&self) -> &[BumpTerm] {
        &self.terms
    }

    pub fn spinor_dim(&self) -> usize {
        self.spinor_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> SpinMat {
        let mut v = SpinMat::zeros(self.spinor_dim);
        for t in &self.terms {
            let p = t.profile(x);
            if p != 0.0 {
                v += t.coeff * p;
            }
        }
        v
    }

    pub fn eval1(&self, x: f64) -> SpinMat {
        self.eval(&[x])
    }

    /// Exact spatial gradient, one matrix per coordinate.
    pub fn gradient(&self, x: &[f64]) -> Vec<SpinMat> {
        let mut grad = vec![SpinMat::zeros(self.spinor_dim); x.len()];
        for t in &self.terms {
            let d: Vec<f64> = x.iter().zip(&t.center).map(|(a, b)| a - b).collect();
            let dist = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = dist / t.radius;
            if r >= 1.0 || dist == 0.0 {
                continue;
            }
            let one_m = 1.0 - r * r;
            let db = bump(r) * (-2.0 * r / (one_m * one_m));
            for (g, dk) in grad.iter_mut().zip(&d) {
                *g += t.coeff * (db * dk / (dist * t.radius));
            }
        }
        grad
    }

    /// R0' = max over terms of |center| + radius; V vanishes outside B(0, R0').
    pub fn support_radius(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.center.iter().map(|c| c * c).sum::<f64>().sqrt() + t.radius)
            .fold(0.0, f64::max)
    }

    /// Upper bound for sup |V(x)| in operator norm.
    pub fn norm_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff.op_norm()).sum()
    }

    /// Scalar radial profile terms (radius, strength) when every bump is
    /// centred at the origin with a real multiple of the identity.
    pub fn radial_scalar_terms(&self) -> Option<Vec<(f64, f64)>> {
        let n = self.spinor_dim;
        self.terms
            .iter()
            .map(|t| {
                let centred = t.center.iter().all(|&c| c == 0.0);
                let p = t.coeff[(0, 0)].re;
                let scalar = (t.coeff - SpinMat::scalar(n, C64::new(p, 0.0))).max_abs() <= 1e-14 * (1.0 + p.abs());
                (centred && scalar).then_some((t.radius, p))
            })
            .collect()
    }
}

/// Radial profile of an absorbing potential, W(x) = w(|x|).
#[derive(Clone)]
pub enum CapProfile {
    /// strength * smoothstep((|x| - R1)/(R2 - R1)).
    Smoothstep { strength: C64 },
    Custom(Arc<dyn Fn(f64) -> C64 + Send + Sync>),
}

impl fmt::Debug for CapProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CapProfile::Smoothstep { strength } => write!(f, "Smoothstep {{ strength: {strength} }}"),
            CapProfile::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CapSpec {
    pub r1: f64,
    pub r2: f64,
    pub delta0: f64,
    pub dom_const: f64,
    pub profile: CapProfile,
}

impl CapSpec {
    pub fn smoothstep(r1: f64, r2: f64, strength: C64, dom_const: f64) -> Result<Self> {
        if !(r1 > 0.0 && r2 > r1) {
            return Err(Error::InvalidParameter(format!("CAP radii need 0 < R1 < R2, got {r1}, {r2}")));
        }
        Ok(CapSpec { r1, r2, delta0: strength.re, dom_const, profile: CapProfile::Smoothstep { strength } })
    }

    pub fn eval_radial(&self, r: f64) -> C64 {
        match &self.profile {
            CapProfile::Smoothstep { strength } => *strength * smoothstep((r - self.r1) / (self.r2 - self.r1)),
            CapProfile::Custom(f) => f(r),
        }
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        self.eval_radial(x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// The constant value of W beyond `r`, if W is constant there.
    pub fn constant_beyond(&self, r: f64) -> Option<C64> {
        match &self.profile {
            CapProfile::Smoothstep { strength } => (r >= self.r2).then_some(*strength),
            CapProfile::Custom(f) => {
                let w0 = f(r);
                let ok = (0..2000).all(|k| (f(r + 0.01 * k as f64) - w0).norm() <= 1e-14 * (1.0 + w0.norm()));
                ok.then_some(w0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapReport {
    /// max of -Re W (positive means violated).
    pub sign_violation: f64,
    /// max |W| on |x| <= R1.
    pub support_violation: f64,
    /// max of delta0 - Re W on |x| > R2.
    pub floor_violation: f64,
    /// max |Im W| / sqrt(Re W) over samples with W != 0.
    pub measured_dom_const: f64,
    pub sign_ok: bool,
    pub support_ok: bool,
    pub floor_ok: bool,
    pub domination_ok: bool,
}

impl CapReport {
    pub fn passes(&self) -> bool {
        self.sign_ok && self.support_ok && self.floor_ok && self.domination_ok
    }
}

pub fn validate_cap(spec: &CapSpec, samples: usize) -> Result<CapReport> {
    if samples < 1000 {
        return Err(Error::InvalidParameter(format!("need at least 1000 samples, got {samples}")));
    }
    let r_max = spec.r2 + 2.0 * (spec.r2 - spec.r1) + 1.0;
    let mut rep = CapReport {
        sign_violation: f64::NEG_INFINITY,
        support_violation: 0.0,
        floor_violation: f64::NEG_INFINITY,
        measured_dom_const: 0.0,
        sign_ok: true,
        support_ok: true,
        floor_ok: true,
        domination_ok: true,
    };
    for k in 0..samples {
        let r = r_max * k as f64 / (samples - 1) as f64;
        let w = spec.eval_radial(r);
        rep.sign_violation = rep.sign_violation.max(-w.re);
        if r <= spec.r1 {
            rep.support_violation = rep.support_violation.max(w.norm());
        }
        if r > spec.r2 {
            rep.floor_violation = rep.floor_violation.max(spec.delta0 - w.re);
        }
        if w.im != 0.0 {
            let ratio = if w.re > 0.0 { w.im.abs() / w.re.sqrt() } else { f64::INFINITY };
            rep.measured_dom_const = rep.measured_dom_const.max(ratio);
        }
    }
    rep.sign_ok = rep.sign_violation <= 0.0;
    rep.support_ok = rep.support_violation == 0.0;
    rep.floor_ok = rep.floor_violation <= 0.0;
    rep.domination_ok = rep.measured_dom_const <= spec.dom_const;
    Ok(rep)
}

/// Exterior scaling profile g(x) = sign(x) G(|x|) (radially x/|x| G(|x|)):
/// zero for |x| <= R0, equal to x for |x| >= R0 + eta. The radial slope
/// G' rises smoothly to a plateau A and then relaxes to 1, with A fixed by
/// G(R0 + eta) = R0 + eta.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFn {
    pub r0: f64,
    pub eta: f64,
    /// Width of each of the two smooth ramps.
    pub ramp: f64,
    /// Plateau slope A.
    pub plateau: f64,
    /// Number of times eta was enlarged to meet the Jacobian bound.
    pub widenings: usize,
    /// Measured sup of the operator norm of Dg.
    pub sup_dg: f64,
}

pub const SCALING_MARGIN: f64 = 0.05;
const RAMP_FRACTION: f64 = 0.05;
const WIDEN_FACTOR: f64 = 1.5;
const MAX_WIDENINGS: usize = 10;

impl ScalingFn {
    fn build(r0: f64, eta: f64, widenings: usize) -> ScalingFn {
        let ramp = RAMP_FRACTION * eta;
        let plateau = (r0 + eta - 0.5 * ramp) / (eta - ramp);
        let mut g = ScalingFn { r0, eta, ramp, plateau, widenings, sup_dg: 0.0 };
        g.sup_dg = g.measure_sup_dg(20_000);
        g
    }

    /// Radial G(r).
    pub fn radial(&self, r: f64) -> f64 {
        let (a, d) = (self.plateau, self.ramp);
        a * d * smoothstep_integral((r - self.r0) / d)
            - (a - 1.0) * d * smoothstep_integral((r - self.r0 - self.eta + d) / d)
    }

    /// Radial slope G'(r) and its derivative G''(r).
    pub fn radial_slope(&self, r: f64) -> (f64, f64) {
        let (a, d) = (self.plateau, self.ramp);
        let (s1, ds1, _) = smoothstep3((r - self.r0) / d);
        let (s2, ds2, _) = smoothstep3((r - self.r0 - self.eta + d) / d);
        (a * s1 - (a - 1.0) * s2, (a * ds1 - (a - 1.0) * ds2) / d)
    }

    /// g, g', g'' in one dimension.
    pub fn eval1(&self, x: f64) -> (f64, f64, f64) {
        let r = x.abs();
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let (h, dh) = self.radial_slope(r);
        (sign * self.radial(r), h, sign * dh)
    }

    /// Operator norm of Dg at radius r: max(G'(r), G(r)/r).
    pub fn dg_norm(&self, r: f64) -> f64 {
        let (h, _) = self.radial_slope(r);
        let tangential = if r > 0.0 { self.radial(r) / r } else { 0.0 };
        h.abs().max(tangential.abs())
    }

    fn measure_sup_dg(&self, samples: usize) -> f64 {
        (0..=samples)
            .map(|k| self.dg_norm(self.r0 + (self.eta + 1.0) * k as f64 / samples as f64))
            .fold(0.0, f64::max)
    }

    /// True when g vanishes identically on B(0, radius).
    pub fn frozen_on(&self, radius: f64) -> bool {
        radius <= self.r0
    }
}

pub fn make_scaling_g(r0: f64, eta: f64) -> Result<ScalingFn> {
    if !(r0 > 0.0 && eta > 0.0 && r0.is_finite() && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("need R0 > 0 and eta > 0, got {r0}, {eta}")));
    }
    let bound = std::f64::consts::SQRT_2 - SCALING_MARGIN;
    let mut eta_k = eta;
    let mut last = 0.0;
    for k in 0..=MAX_WIDENINGS {
        let g = ScalingFn::build(r0, eta_k, k);
        if g.sup_dg < bound {
            return Ok(g);
        }
        last = g.sup_dg;
        eta_k *= WIDEN_FACTOR;
    }
    Err(Error::ScalingBound { widenings: MAX_WIDENINGS, sup: last })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionParam {
    pub theta: C64,
    pub eps: f64,
}

impl DistortionParam {
    pub fn new(theta: C64, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InadmissibleTheta(format!("eps must lie in (0, 1), got {eps}")));
        }
        let r = eps / (1.0 + eps * eps).sqrt();
        if theta.norm() >= r {
            return Err(Error::InadmissibleTheta(format!("|theta| = {} >= r_eps = {r}", theta.norm())));
        }
        if theta.im < 0.0 {
            return Err(Error::InadmissibleTheta(format!("Im theta = {} < 0", theta.im)));
        }
        Ok(DistortionParam { theta, eps })
    }

    pub fn imaginary(tau: f64, eps: f64) -> Result<Self> {
        Self::new(C64::new(0.0, tau), eps)
    }

    pub fn r_eps(&self) -> f64 {
        self.eps / (1.0 + self.eps * self.eps).sqrt()
    }
}

/// phi_theta(x) = x + theta g(x) in one dimension.
pub fn phi_theta(x: f64, theta: C64, g: &ScalingFn) -> C64 {
    C64::new(x, 0.0) + theta * g.eval1(x).0
}

/// det(I + theta Dg(x)). In one dimension this is 1 + theta g'(x); in three
/// it is (1 + theta G')(1 + theta G/r)^2.
pub fn jacobian_theta(x: &[f64], theta: C64, g: &ScalingFn) -> Result<C64> {
    let one = C64::new(1.0, 0.0);
    match x.len() {
        1 => Ok(one + theta * g.eval1(x[0]).1),
        3 => {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (h, _) = g.radial_slope(r);
            let tang = if r > 0.0 { g.radial(r) / r } else { 0.0 };
            let t = one + theta * tang;
            Ok((one + theta * h) * t * t)
        }
        d => Err(Error::UnsupportedDimension(d)),
    }
}

/// [l, r] + i[b, t] in the complex energy plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralBox {
    pub l: f64,
    pub r: f64,
    pub b: f64,
    pub t: f64,
}

impl SpectralBox {
    pub fn new(l: f64, r: f64, b: f64, t: f64) -> Result<Self> {
        if !(l < r && b < t) || ![l, r, b, t].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!("degenerate box [{l}, {r}] + i[{b}, {t}]")));
        }
        Ok(SpectralBox { l, r, b, t })
    }

    pub fn contains(&self, z: C64) -> bool {
        z.re >= self.l && z.re <= self.r && z.im >= self.b && z.im <= self.t
    }

    /// l > mc^2 and b < 0 < t.
    pub fn is_positive_energy(&self, mc2: f64) -> bool {
        self.l > mc2 && self.b < 0.0 && self.t > 0.0
    }

    pub fn corner_modulus(&self) -> f64 {
        self.l.abs().max(self.r.abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// supp V and supp W are separated: R0' < R1.
    NonIntersecting,
    Intersecting,
}

/// A complete model: D = c alpha.(hbar/i)grad + beta m c^2 + V with CAP W and
/// a scaling profile g.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub params: PhysParams,
    pub rep: DiracRep,
    pub potential: MatrixPotential,
    pub cap: CapSpec,
    pub scaling: ScalingFn,
    /// Declared radius R0' of the potential support.
    pub r0_prime: f64,
}

impl ModelSpec {
    pub fn new(
        params: PhysParams,
        rep: DiracRep,
        potential: MatrixPotential,
        cap: CapSpec,
        scaling: ScalingFn,
        r0_prime: f64,
    ) -> Result<Self> {
        let defect = clifford_defect(&rep);
        if defect > 1e-12 {
            return Err(Error::InvalidParameter(format!("representation violates Clifford relations by {defect:e}")));
        }
        if !potential.is_zero() && (potential.spinor_dim() != rep.spinor_dim() || potential.dim() != rep.dim()) {
            return Err(Error::DimensionMismatch("potential shape does not match the representation".into()));
        }
        if potential.support_radius() > r0_prime + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "potential support radius {} exceeds declared R0' = {r0_prime}",
                potential.support_radius()
            )));
        }
        if !(scaling.r0 > r0_prime.max(cap.r2)) {
            return Err(Error::InvalidParameter(format!(
                "scaling radius R0 = {} must exceed max(R0', R2) = {}",
                scaling.r0,
                r0_prime.max(cap.r2)
            )));
        }
        Ok(ModelSpec { params, rep, potential, cap, scaling, r0_prime })
    }

    pub fn regime(&self) -> Regime {
        if self.r0_prime < self.cap.r1 {
            Regime::NonIntersecting
        } else {
            Regime::Intersecting
        }
    }

    pub fn with_hbar(&self, hbar: f64) -> Result<Self> {
        let mut m = self.clone();
        m.params = self.params.with_hbar(hbar)?;
        Ok(m)
    }

    pub fn with_scaling(&self, scaling: ScalingFn) -> Result<Self> {
        Self::new(self.params, self.rep.clone(), self.potential.clone(), self.cap.clone(), scaling, self.r0_prime)
    }

    pub fn with_cap(&self, cap: CapSpec) -> Result<Self> {
        Self::new(self.params, self.rep.clone(), self.potential.clone(), cap, self.scaling, self.r0_prime)
    }
}
