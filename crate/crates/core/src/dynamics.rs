//! Matrix-valued symbols: band decomposition, Hamiltonian flows, first-order
//! Moyal calculus, transport along bands and the Egorov comparison.

use crate::algebra::DiracRep;
use crate::linalg;
use crate::model::{MatrixPotential, ModelSpec, PhysParams};
use crate::quantize::{assemble_with_potential, weyl_quantize, Grid};
use crate::spin::SpinMat;
use crate::{CMat, Error, Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::Mutex;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Principal symbol d(x, xi) = c alpha.xi + beta m c^2 + V(x).
#[derive(Clone, Debug)]
pub struct DiracSymbol {
    pub rep: DiracRep,
    pub params: PhysParams,
    pub potential: MatrixPotential,
    em: Option<Vec<(f64, [f64; 3])>>,
}

impl DiracSymbol {
    pub fn new(rep: DiracRep, params: PhysParams, potential: MatrixPotential) -> Result<Self> {
        if !potential.is_zero() && (potential.spinor_dim() != rep.spinor_dim() || potential.dim() != rep.dim()) {
            return Err(Error::DimensionMismatch("potential shape does not match the representation".into()));
        }
        let em = electromagnetic_split(&rep, &potential);
        Ok(DiracSymbol { rep, params, potential, em })
    }

    pub fn from_model(model: &ModelSpec) -> Result<Self> {
        Self::new(model.rep.clone(), model.params, model.potential.clone())
    }

    pub fn dim(&self) -> usize {
        self.rep.dim()
    }

    pub fn spinor_dim(&self) -> usize {
        self.rep.spinor_dim()
    }

    /// True when every potential coefficient is a combination of I and the
    /// alpha matrices, i.e. V = e phi - e alpha.A.
    pub fn is_electromagnetic(&self) -> bool {
        self.em.is_some()
    }

    pub fn eval(&self, x: &[f64], xi: &[f64]) -> SpinMat {
        let c = self.params.c;
        let cxi: Vec<f64> = xi.iter().map(|v| c * v).collect();
        self.rep.combine(&cxi, self.params.mc2()) + self.potential.eval(x)
    }

    /// (e phi(x), q(x)) with V = e phi I + q.alpha, when electromagnetic.
    fn em_fields(&self, x: &[f64]) -> Option<(f64, [f64; 3])> {
        let em = self.em.as_ref()?;
        let mut phi = 0.0;
        let mut q = [0.0; 3];
        for ((p, qt), term) in em.iter().zip(self.potential.terms()) {
            let prof = term.profile(x);
            if prof != 0.0 {
                phi += p * prof;
                for k in 0..3 {
                    q[k] += qt[k] * prof;
                }
            }
        }
        Some((phi, q))
    }
}

fn electromagnetic_split(rep: &DiracRep, v: &MatrixPotential) -> Option<Vec<(f64, [f64; 3])>> {
    let n = rep.spinor_dim() as f64;
    v.terms()
        .iter()
        .map(|t| {
            let p = t.coeff.trace().re / n;
            let mut q = [0.0; 3];
            let mut rebuilt = SpinMat::scalar(rep.spinor_dim(), C64::new(p, 0.0));
            for (k, a) in rep.alphas.iter().enumerate() {
                q[k] = (*a * t.coeff).trace().re / n;
                rebuilt += *a * q[k];
            }
            ((rebuilt - t.coeff).max_abs() <= 1e-12 * (1.0 + t.coeff.max_abs())).then_some((p, q))
        })
        .collect()
}

/// Distinct eigenvalues (ascending), their multiplicities and spectral projectors.
#[derive(Clone, Debug)]
pub struct SymbolEig {
    pub values: Vec<f64>,
    pub degeneracy: Vec<usize>,
    pub projectors: Vec<SpinMat>,
}

impl SymbolEig {
    pub fn bands(&self) -> usize {
        self.values.len()
    }

    pub fn min_gap(&self) -> f64 {
        self.values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

pub fn symbol_eigs(sym: &DiracSymbol, x: &[f64], xi: &[f64]) -> SymbolEig {
    let s = sym.spinor_dim();
    if let Some((phi, q)) = sym.em_fields(x) {
        let c = sym.params.c;
        let mc2 = sym.params.mc2();
        let mut p = [0.0; 3];
        for k in 0..sym.dim() {
            p[k] = c * xi[k] + q[k];
        }
        let m = (p.iter().map(|v| v * v).sum::<f64>() + mc2 * mc2).sqrt();
        if m <= 1e-12 {
            return SymbolEig { values: vec![phi], degeneracy: vec![s], projectors: vec![SpinMat::identity(s)] };
        }
        let h = sym.rep.combine(&p[..sym.dim()], mc2) * (1.0 / m);
        let id = SpinMat::identity(s);
        return SymbolEig {
            values: vec![phi - m, phi + m],
            degeneracy: vec![s / 2, s / 2],
            projectors: vec![(id - h) * 0.5, (id + h) * 0.5],
        };
    }
    let d = sym.eval(x, xi);
    let (vals, vecs) = d.herm_eig();
    let scale = vals[..s].iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for k in 0..s {
        match groups.last_mut() {
            Some(g) if (vals[k] - vals[*g.last().expect("non-empty")]).abs() <= 1e-10 * scale => g.push(k),
            _ => groups.push(vec![k]),
        }
    }
    SymbolEig {
        values: groups.iter().map(|g| g.iter().map(|&k| vals[k]).sum::<f64>() / g.len() as f64).collect(),
        degeneracy: groups.iter().map(|g| g.len()).collect(),
        projectors: groups.iter().map(|g| SpinMat::projector(&vecs, g)).collect(),
    }
}

/// Region of phase space sampled uniformly (per coordinate).
#[derive(Clone, Debug)]
pub struct PhaseSampler {
    pub x_range: (f64, f64),
    pub xi_range: (f64, f64),
    pub count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct HyperbolicityReport {
    /// min |lambda_j - lambda_k| / <xi> over samples and distinct bands.
    pub margin: f64,
    pub worst_x: Vec<f64>,
    pub worst_xi: Vec<f64>,
    pub admissible: bool,
}

pub fn hyperbolicity_margin(sym: &DiracSymbol, sampler: &PhaseSampler) -> HyperbolicityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let d = sym.dim();
    let s = sym.spinor_dim();
    let mut rep = HyperbolicityReport { margin: f64::INFINITY, worst_x: vec![], worst_xi: vec![], admissible: true };
    for _ in 0..sampler.count {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(sampler.x_range.0..=sampler.x_range.1)).collect();
        let xi: Vec<f64> = (0..d).map(|_| rng.random_range(sampler.xi_range.0..=sampler.xi_range.1)).collect();
        let e = symbol_eigs(sym, &x, &xi);
        let bracket = (1.0 + xi.iter().map(|v| v * v).sum::<f64>()).sqrt();
        // A collapsed band (fewer groups than the generic count) has zero gap.
        let generic = if sym.is_electromagnetic() { 2 } else { s.min(2) };
        let gap = if e.bands() < generic { 0.0 } else { e.min_gap() };
        let m = gap / bracket;
        if m < rep.margin {
            rep.margin = m;
            rep.worst_x = x;
            rep.worst_xi = xi;
        }
    }
    rep.admissible = rep.margin > 1e-8;
    rep
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-12, max_steps: 200_000 }
    }
}

/// Dormand-Prince 5(4) with standard step-size control. `observe` is called
/// after every accepted step and may stop the integration by returning false.
pub fn dopri5(
    f: &mut dyn FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    observe: &mut dyn FnMut(f64, &[f64]) -> bool,
) -> Result<(f64, Vec<f64>, usize)> {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] =
        [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];
    let n = y0.len();
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let span = (t_end - t0).abs();
    let mut t = t0;
    let mut y = y0.to_vec();
    if span == 0.0 {
        return Ok((t, y, 0));
    }
    let mut h = (span * 1e-3).max(1e-6).min(span);
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    k[0] = f(t, &y)?;
    let mut steps = 0;
    let mut tmp = vec![0.0; n];
    while (t_end - t) * dir > 1e-15 * span.max(1.0) {
        if steps >= opts.max_steps {
            return Err(Error::Flow(format!("step limit {} reached at t = {t}", opts.max_steps)));
        }
        h = h.min((t_end - t).abs());
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for j in 0..s {
                    acc += dir * h * A[s][j] * k[j][i];
                }
                tmp[i] = acc;
            }
            k[s] = f(t + dir * h * C[s], &tmp)?;
        }
        let mut err = 0.0;
        let mut y5 = vec![0.0; n];
        for i in 0..n {
            let mut s5 = 0.0;
            let mut s4 = 0.0;
            for j in 0..7 {
                s5 += B5[j] * k[j][i];
                s4 += B4[j] * k[j][i];
            }
            y5[i] = y[i] + dir * h * s5;
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            let e = dir * h * (s5 - s4) / sc;
            err += e * e;
        }
        err = (err / n as f64).sqrt();
        if !err.is_finite() {
            h *= 0.2;
            if h < 1e-14 * span {
                return Err(Error::Flow("step size underflow".into()));
            }
            continue;
        }
        if err <= 1.0 {
            t += dir * h;
            y = y5;
            k[0] = k[6].clone();
            steps += 1;
            if !observe(t, &y) {
                return Ok((t, y, steps));
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * span {
            return Err(Error::Flow("step size underflow".into()));
        }
    }
    Ok((t, y, steps))
}

fn band_data(sym: &DiracSymbol, x: &[f64], xi: &[f64], branch: usize, bands: usize) -> Result<(f64, SpinMat, usize)> {
    let e = symbol_eigs(sym, x, xi);
    if e.bands() != bands || branch >= e.bands() {
        return Err(Error::Degeneracy { x: x.to_vec(), xi: xi.to_vec(), gap: 0.0 });
    }
    let gap = e.min_gap();
    if gap < 1e-8 {
        return Err(Error::Degeneracy { x: x.to_vec(), xi: xi.to_vec(), gap });
    }
    Ok((e.values[branch], e.projectors[branch], e.degeneracy[branch]))
}

/// Hamilton field of band `branch` from Hellmann-Feynman derivatives:
/// grad lambda = tr(P grad d) / rank P.
fn hamilton_field(sym: &DiracSymbol, x: &[f64], xi: &[f64], branch: usize, bands: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, p, deg) = band_data(sym, x, xi, branch, bands)?;
    let deg = deg as f64;
    let c = sym.params.c;
    let dx: Vec<f64> = sym.rep.alphas.iter().map(|a| c * (p * *a).trace().re / deg).collect();
    let grad_v = sym.potential.gradient(x);
    let dxi: Vec<f64> = if sym.potential.is_zero() {
        vec![0.0; x.len()]
    } else {
        grad_v.iter().map(|g| -(p * *g).trace().re / deg).collect()
    };
    Ok((dx, dxi))
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    pub xis: Vec<Vec<f64>>,
    pub branch: usize,
    pub energy: f64,
    /// First time with |x| > exit radius (linearly interpolated between steps).
    pub exit_time: Option<f64>,
    pub max_energy_drift: f64,
}

/// Integrates x' = grad_xi lambda_j, xi' = -grad_x lambda_j from (x0, xi0)
/// up to `t_max` (negative for backward), stopping at the exit radius.
pub fn integrate_flow(
    sym: &DiracSymbol,
    x0: &[f64],
    xi0: &[f64],
    branch: usize,
    t_max: f64,
    exit_radius: Option<f64>,
    opts: &OdeOptions,
) -> Result<Trajectory> {
    let d = sym.dim();
    if x0.len() != d || xi0.len() != d {
        return Err(Error::DimensionMismatch(format!("phase point must have {d} + {d} coordinates")));
    }
    let bands = symbol_eigs(sym, x0, xi0).bands();
    let (energy, _, _) = band_data(sym, x0, xi0, branch, bands)?;
    let mut y0 = x0.to_vec();
    y0.extend_from_slice(xi0);
    let mut rhs = |_t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (dx, dxi) = hamilton_field(sym, &y[..d], &y[d..], branch, bands)?;
        Ok([dx, dxi].concat())
    };
    let mut traj = Trajectory {
        times: vec![0.0],
        xs: vec![x0.to_vec()],
        xis: vec![xi0.to_vec()],
        branch,
        energy,
        exit_time: None,
        max_energy_drift: 0.0,
    };
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if let Some(r) = exit_radius {
        if norm(x0) > r {
            traj.exit_time = Some(0.0);
            return Ok(traj);
        }
    }
    let mut observe = |t: f64, y: &[f64]| -> bool {
        let x = &y[..d];
        let xi = &y[d..];
        let lam = symbol_eigs(sym, x, xi).values.get(branch).copied().unwrap_or(f64::NAN);
        traj.max_energy_drift = traj.max_energy_drift.max((lam - energy).abs());
        let prev_r = norm(traj.xs.last().expect("non-empty"));
        let prev_t = *traj.times.last().expect("non-empty");
        traj.times.push(t);
        traj.xs.push(x.to_vec());
        traj.xis.push(xi.to_vec());
        if let Some(r) = exit_radius {
            let now = norm(x);
            if now > r {
                let frac = if now > prev_r { (r - prev_r) / (now - prev_r) } else { 1.0 };
                traj.exit_time = Some(prev_t + frac.clamp(0.0, 1.0) * (t - prev_t));
                return false;
            }
        }
        true
    };
    dopri5(&mut rhs, 0.0, &y0, t_max, opts, &mut observe)?;
    Ok(traj)
}

#[derive(Clone, Debug)]
pub struct TrappedSeed {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub branch: usize,
    pub forward: bool,
}

#[derive(Clone, Debug)]
pub struct NontrapReport {
    pub nontrapping: bool,
    pub seeds_used: usize,
    /// Largest exit time over seeds and both directions.
    pub worst_exit_time: f64,
    pub trapped: Vec<TrappedSeed>,
    /// No phase point with energy in the window was found.
    pub empty_shell: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct NontrapOptions {
    pub seeds: usize,
    pub seed: u64,
    pub t_max: f64,
    pub ode: OdeOptions,
}

impl Default for NontrapOptions {
    fn default() -> Self {
        NontrapOptions { seeds: 1000, seed: 1, t_max: 50.0, ode: OdeOptions { rtol: 1e-8, atol: 1e-10, max_steps: 100_000 } }
    }
}

/// Finds |xi| = rho along `dir` with lambda_branch(x, rho dir) = energy.
fn solve_momentum(sym: &DiracSymbol, x: &[f64], dir: &[f64], branch: usize, energy: f64, rho_max: f64) -> Option<f64> {
    let lam = |rho: f64| -> Option<f64> {
        let xi: Vec<f64> = dir.iter().map(|v| v * rho).collect();
        let e = symbol_eigs(sym, x, &xi);
        (e.bands() > branch).then(|| e.values[branch] - energy)
    };
    let steps = 400;
    let mut prev = (0.0, lam(0.0)?);
    for k in 1..=steps {
        let rho = rho_max * k as f64 / steps as f64;
        let cur = lam(rho)?;
        if prev.1 == 0.0 {
            return Some(prev.0);
        }
        if prev.1.signum() != cur.signum() {
            let (mut a, mut b) = (prev.0, rho);
            let mut fa = prev.1;
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                let fm = lam(m)?;
                if fm.signum() == fa.signum() {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        prev = (rho, cur);
    }
    None
}

/// Samples seeds with inner_radius <= |x| < radius and lambda_j in the energy
/// window, and checks that every forward and backward trajectory leaves
/// B(0, radius) within t_max.
pub fn nontrapping_verdict(
    sym: &DiracSymbol,
    energies: (f64, f64),
    inner_radius: f64,
    radius: f64,
    opts: &NontrapOptions,
) -> Result<NontrapReport> {
    if !(energies.0 <= energies.1) || !(radius > inner_radius) {
        return Err(Error::InvalidParameter("need e_lo <= e_hi and radius > inner radius".into()));
    }
    let d = sym.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let rho_max = 2.0 * (energies.0.abs().max(energies.1.abs()) + sym.potential.norm_bound() + sym.params.mc2()) / sym.params.c + 1.0;
    let mut seeds: Vec<(Vec<f64>, Vec<f64>, usize)> = Vec::new();
    let mut attempts = 0;
    while seeds.len() < opts.seeds && attempts < 50 * opts.seeds {
        attempts += 1;
        let dir: Vec<f64> = if d == 1 {
            vec![if rng.random::<bool>() { 1.0 } else { -1.0 }]
        } else {
            let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n < 1e-3 || n > 1.0 {
                continue;
            }
            v.iter().map(|a| a / n).collect()
        };
        let r = if d == 1 {
            rng.random_range(inner_radius..radius)
        } else {
            let (a, b) = (inner_radius.powi(3), radius.powi(3));
            (a + rng.random::<f64>() * (b - a)).cbrt()
        };
        let xdir: Vec<f64> = if d == 1 {
            vec![if rng.random::<bool>() { 1.0 } else { -1.0 }]
        } else {
            let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|a| a / n).collect()
        };
        let x: Vec<f64> = xdir.iter().map(|v| v * r).collect();
        let e = rng.random_range(energies.0..=energies.1);
        let bands = symbol_eigs(sym, &x, &vec![0.0; d]).bands().max(1);
        let branch = rng.random_range(0..bands.max(2));
        if let Some(rho) = solve_momentum(sym, &x, &dir, branch, e, rho_max) {
            let xi: Vec<f64> = dir.iter().map(|v| v * rho).collect();
            seeds.push((x, xi, branch));
        }
    }
    if seeds.is_empty() {
        return Ok(NontrapReport { nontrapping: true, seeds_used: 0, worst_exit_time: 0.0, trapped: vec![], empty_shell: true });
    }
    let results: Vec<Result<Vec<(bool, Option<f64>)>>> = seeds
        .par_iter()
        .map(|(x, xi, branch)| {
            [1.0, -1.0]
                .iter()
                .map(|&s| {
                    let tr = integrate_flow(sym, x, xi, *branch, s * opts.t_max, Some(radius), &opts.ode)?;
                    Ok((s > 0.0, tr.exit_time))
                })
                .collect()
        })
        .collect();
    let mut rep = NontrapReport { nontrapping: true, seeds_used: seeds.len(), worst_exit_time: 0.0, trapped: vec![], empty_shell: false };
    for ((x, xi, branch), res) in seeds.iter().zip(results) {
        for (forward, exit) in res? {
            match exit {
                Some(t) => rep.worst_exit_time = rep.worst_exit_time.max(t),
                None => {
                    rep.nontrapping = false;
                    rep.trapped.push(TrappedSeed { x: x.clone(), xi: xi.clone(), branch: *branch, forward });
                }
            }
        }
    }
    Ok(rep)
}

/// Symbol on phase space, evaluated at (x, xi).
pub type SymbolFn<'a> = dyn Fn(&[f64], &[f64]) -> SpinMat + Sync + 'a;

fn fd_step(x: &[f64], xi: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    1e-4 * (1.0 + n(x) + n(xi))
}

/// Central-difference partial derivatives (d/dx_k, d/dxi_k) of a symbol.
fn partials(a: &SymbolFn<'_>, x: &[f64], xi: &[f64], h: f64) -> (Vec<SpinMat>, Vec<SpinMat>) {
    let d = x.len();
    let mut dx = Vec::with_capacity(d);
    let mut dxi = Vec::with_capacity(d);
    for k in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h;
        xm[k] -= h;
        dx.push((a(&xp, xi) - a(&xm, xi)) * (0.5 / h));
        let mut pp = xi.to_vec();
        let mut pm = xi.to_vec();
        pp[k] += h;
        pm[k] -= h;
        dxi.push((a(x, &pp) - a(x, &pm)) * (0.5 / h));
    }
    (dx, dxi)
}

/// Noncommutative Poisson bracket {A, B} = sum_k dA/dxi_k dB/dx_k - dA/dx_k dB/dxi_k.
pub fn poisson_bracket(a: &SymbolFn<'_>, b: &SymbolFn<'_>, x: &[f64], xi: &[f64]) -> SpinMat {
    let h = fd_step(x, xi);
    let (ax, axi) = partials(a, x, xi, h);
    let (bx, bxi) = partials(b, x, xi, h);
    let mut out = SpinMat::zeros(a(x, xi).dim());
    for k in 0..x.len() {
        out += axi[k] * bx[k] - ax[k] * bxi[k];
    }
    out
}

/// First two terms of the Weyl product a # b = c0 + hbar c1 + O(hbar^2):
/// c0 = ab, c1 = (i/2) sum_k (da/dx_k db/dxi_k - da/dxi_k db/dx_k).
pub fn moyal_first_order(a: &SymbolFn<'_>, b: &SymbolFn<'_>, x: &[f64], xi: &[f64]) -> (SpinMat, SpinMat) {
    let h = fd_step(x, xi);
    let (ax, axi) = partials(a, x, xi, h);
    let (bx, bxi) = partials(b, x, xi, h);
    let c0 = a(x, xi) * b(x, xi);
    let mut c1 = SpinMat::zeros(c0.dim());
    for k in 0..x.len() {
        c1 += ax[k] * bxi[k] - axi[k] * bx[k];
    }
    (c0, c1 * (I * 0.5))
}

#[derive(Clone, Copy, Debug)]
pub struct GeneratorTerms {
    /// {P, P}
    pub bracket_self: SpinMat,
    /// {lambda_j, P}
    pub bracket_band: SpinMat,
    /// Subprincipal symbol of P # d # P.
    pub subprincipal: SpinMat,
    /// -i (lambda/2) P{P,P}P - i[P, {lambda, P}] + P T1 P before symmetrization.
    pub raw: SpinMat,
    /// Hermitian part of `raw`; the anti-Hermitian remainder is
    /// finite-difference error.
    pub total: SpinMat,
}

fn projector_fn<'a>(sym: &'a DiracSymbol, branch: usize, bands: usize) -> impl Fn(&[f64], &[f64]) -> SpinMat + Sync + 'a {
    move |x: &[f64], xi: &[f64]| {
        let e = symbol_eigs(sym, x, xi);
        if e.bands() == bands {
            e.projectors[branch]
        } else {
            SpinMat::zeros(sym.spinor_dim())
        }
    }
}

pub fn transport_generator(sym: &DiracSymbol, branch: usize, x: &[f64], xi: &[f64]) -> Result<GeneratorTerms> {
    let bands = symbol_eigs(sym, x, xi).bands();
    let (lam, p, _) = band_data(sym, x, xi, branch, bands)?;
    let s = sym.spinor_dim();
    let pf = projector_fn(sym, branch, bands);
    let lamf = |x: &[f64], xi: &[f64]| {
        let e = symbol_eigs(sym, x, xi);
        SpinMat::scalar(s, C64::new(e.values.get(branch).copied().unwrap_or(0.0), 0.0))
    };
    let df = |x: &[f64], xi: &[f64]| sym.eval(x, xi);
    let pdf = |x: &[f64], xi: &[f64]| pf(x, xi) * sym.eval(x, xi);
    let bracket_self = poisson_bracket(&pf, &pf, x, xi);
    let bracket_band = poisson_bracket(&lamf, &pf, x, xi);
    let (_, c1_pd) = moyal_first_order(&pf, &df, x, xi);
    let (_, c1_pdp) = moyal_first_order(&pdf, &pf, x, xi);
    let subprincipal = c1_pdp + c1_pd * p;
    let raw = p * bracket_self * p * (-I * (lam / 2.0)) + p.commutator(&bracket_band) * (-I) + p * subprincipal * p;
    Ok(GeneratorTerms { bracket_self, bracket_band, subprincipal, raw, total: raw.hermitian_part() })
}

#[derive(Clone, Copy, Debug)]
pub struct TransportResult {
    pub t_matrix: SpinMat,
    /// ||t^* t - I||
    pub unitarity_defect: f64,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct TransportEnd {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub transport: TransportResult,
}

/// Solves dt/ds + i T(Phi^s) t = 0, t(0) = I, jointly with the band flow.
pub fn transport_matrix(
    sym: &DiracSymbol,
    branch: usize,
    x0: &[f64],
    xi0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
) -> Result<TransportEnd> {
    let d = sym.dim();
    let s = sym.spinor_dim();
    let bands = symbol_eigs(sym, x0, xi0).bands();
    band_data(sym, x0, xi0, branch, bands)?;
    let mut y0 = x0.to_vec();
    y0.extend_from_slice(xi0);
    for i in 0..s {
        for j in 0..s {
            y0.push(if i == j { 1.0 } else { 0.0 });
            y0.push(0.0);
        }
    }
    let unpack = |y: &[f64]| SpinMat::from_fn(s, |i, j| C64::new(y[2 * d + 2 * (i * s + j)], y[2 * d + 2 * (i * s + j) + 1]));
    let mut rhs = |_t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (x, xi) = (&y[..d], &y[d..2 * d]);
        let (dx, dxi) = hamilton_field(sym, x, xi, branch, bands)?;
        let gen = transport_generator(sym, branch, x, xi)?.total;
        let dt = gen * unpack(y) * (-I);
        let mut out = [dx, dxi].concat();
        for i in 0..s {
            for j in 0..s {
                out.push(dt[(i, j)].re);
                out.push(dt[(i, j)].im);
            }
        }
        Ok(out)
    };
    let (_, y, steps) = dopri5(&mut rhs, 0.0, &y0, t_end, opts, &mut |_, _| true)?;
    let t = unpack(&y);
    let defect = (t.adjoint() * t - SpinMat::identity(s)).op_norm();
    Ok(TransportEnd {
        x: y[..d].to_vec(),
        xi: y[d..2 * d].to_vec(),
        transport: TransportResult { t_matrix: t, unitarity_defect: defect, steps },
    })
}

/// Axis-aligned phase-space box outside of which a symbol vanishes.
#[derive(Clone, Debug)]
pub struct SymbolSupport {
    pub x: Vec<(f64, f64)>,
    pub xi: Vec<(f64, f64)>,
}

/// a(t)(x, xi) = sum_j t_j^* P_j(Phi_j^t) a0(Phi_j^t) P_j(Phi_j^t) t_j.
pub struct EvolvedSymbol<'a> {
    sym: &'a DiracSymbol,
    a0: &'a SymbolFn<'a>,
    time: f64,
    opts: OdeOptions,
    prune: Option<(SymbolSupport, f64, f64)>,
    cache: Mutex<HashMap<(u64, u64), SpinMat>>,
    first_error: Mutex<Option<Error>>,
}

pub fn evolve_symbol<'a>(
    sym: &'a DiracSymbol,
    a0: &'a SymbolFn<'a>,
    time: f64,
    support: Option<SymbolSupport>,
    opts: OdeOptions,
) -> EvolvedSymbol<'a> {
    let prune = support.map(|sup| {
        // Band velocities are bounded by c; the momentum drift by sup|grad V|.
        let r = sym.potential.support_radius();
        let d = sym.dim();
        let mut force = 0.0f64;
        if !sym.potential.is_zero() {
            let samples = 4000;
            for k in 0..=samples {
                let t = -r + 2.0 * r * k as f64 / samples as f64;
                let mut x = vec![0.0; d];
                x[0] = t;
                let g = sym.potential.gradient(&x);
                force = force.max(g.iter().map(|m| m.op_norm()).fold(0.0, f64::max));
            }
            force *= 1.05;
        }
        (sup, sym.params.c * time.abs() * 1.01 + 1e-9, force * time.abs() + 1e-9)
    });
    EvolvedSymbol { sym, a0, time, opts, prune, cache: Mutex::new(HashMap::new()), first_error: Mutex::new(None) }
}

impl EvolvedSymbol<'_> {
    fn outside(&self, x: &[f64], xi: &[f64]) -> bool {
        let Some((sup, dx, dxi)) = &self.prune else { return false };
        x.iter().zip(&sup.x).any(|(v, (lo, hi))| *v < lo - dx || *v > hi + dx)
            || xi.iter().zip(&sup.xi).any(|(v, (lo, hi))| *v < lo - dxi || *v > hi + dxi)
    }

    pub fn eval(&self, x: &[f64], xi: &[f64]) -> Result<SpinMat> {
        let s = self.sym.spinor_dim();
        if self.outside(x, xi) {
            return Ok(SpinMat::zeros(s));
        }
        let here = symbol_eigs(self.sym, x, xi);
        let bands = here.bands();
        let mut out = SpinMat::zeros(s);
        if here.degeneracy.iter().all(|&d| d == 1) {
            // Rank-one bands: t maps range P_j(x) unitarily onto range P_j(Phi),
            // so t^* P a0 P t = <a0>_j(Phi) P_j(x) and the phase drops out.
            for j in 0..bands {
                let tr = integrate_flow(self.sym, x, xi, j, self.time, None, &self.opts)?;
                let (ex, exi) = (tr.xs.last().expect("non-empty"), tr.xis.last().expect("non-empty"));
                let p = symbol_eigs(self.sym, ex, exi).projectors[j];
                out += here.projectors[j] * (p * (self.a0)(ex, exi)).trace();
            }
            return Ok(out);
        }
        for j in 0..bands {
            let end = transport_matrix(self.sym, j, x, xi, self.time, &self.opts)?;
            let e = symbol_eigs(self.sym, &end.x, &end.xi);
            let p = e.projectors[j];
            let t = end.transport.t_matrix;
            out += t.adjoint() * p * (self.a0)(&end.x, &end.xi) * p * t;
        }
        Ok(out)
    }

    /// Cached one-dimensional evaluation for quantization; errors are stored
    /// and reported by [`EvolvedSymbol::take_error`].
    pub fn eval1_cached(&self, x: f64, xi: f64) -> SpinMat {
        let key = (x.to_bits(), xi.to_bits());
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return *v;
        }
        let v = match self.eval(&[x], &[xi]) {
            Ok(v) => v,
            Err(e) => {
                self.first_error.lock().expect("error lock").get_or_insert(e);
                SpinMat::zeros(self.sym.spinor_dim())
            }
        };
        self.cache.lock().expect("cache lock").insert(key, v);
        v
    }

    pub fn take_error(&self) -> Option<Error> {
        self.first_error.lock().expect("error lock").take()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EgorovReport {
    pub hbar: f64,
    pub time: f64,
    /// Band-diagonal part of U(-t) A0 U(t) - Op(a(t)).
    pub defect: f64,
    /// defect / sup |a0|
    pub normalized_defect: f64,
    /// Interband block of the same difference; carries the oscillating
    /// O(hbar) terms that principal-order band evolution does not model.
    pub interband: f64,
    /// Energy separating the two bands of the assembled operator.
    pub band_split: f64,
}

/// Energy inside the gap between the lower and upper symbol bands, scanned
/// over grid nodes and resolved momenta.
fn band_split(sym: &DiracSymbol, grid: &Grid) -> Result<f64> {
    let xi_max = sym.params.hbar * grid.k_max();
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    let samples = 2001;
    for &x in grid.nodes().iter() {
        for k in 0..samples {
            let xi = -xi_max + 2.0 * xi_max * k as f64 / (samples - 1) as f64;
            let e = symbol_eigs(sym, &[x], &[xi]);
            if e.bands() != 2 {
                return Err(Error::Degeneracy { x: vec![x], xi: vec![xi], gap: 0.0 });
            }
            lower = lower.max(e.values[0]);
            upper = upper.min(e.values[1]);
        }
    }
    if lower >= upper {
        return Err(Error::Precondition(format!("bands overlap in energy: lower band reaches {lower}, upper starts at {upper}")));
    }
    Ok(0.5 * (lower + upper))
}

/// Egorov comparison on a periodic grid in one dimension. The observable is
/// A0 = sum_j Pi_j Op(a0) Pi_j with Pi_j the spectral projectors of the
/// assembled D onto its two bands, U(t) = exp(-i D t / hbar), and the defect
/// is the band-diagonal part of U(-t) A0 U(t) - Op(a(t)) in operator norm.
pub fn egorov_defect(
    sym: &DiracSymbol,
    a0: &SymbolFn<'_>,
    support: Option<SymbolSupport>,
    grid: &Grid,
    time: f64,
    opts: OdeOptions,
) -> Result<EgorovReport> {
    if sym.dim() != 1 {
        return Err(Error::UnsupportedDimension(sym.dim()));
    }
    let s = sym.spinor_dim();
    let hbar = sym.params.hbar;
    let split = band_split(sym, grid)?;
    let op = assemble_with_potential(&sym.rep, sym.params, &sym.potential, grid)?;
    let (vals, vecs) = linalg::herm_eigen(&op.matrix)?;
    let n = vals.len();
    let phases: Vec<C64> = vals.iter().map(|&l| C64::from_polar(1.0, -l * time / hbar)).collect();
    // U(t) = V diag(e^{-i lambda t / hbar}) V^*
    let u = CMat::from_fn(n, n, |i, j| vecs[(i, j)] * phases[j]) * vecs.adjoint();
    let upper = CMat::from_fn(n, n, |i, j| if i == j && vals[i] > split { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    let pi_up = &vecs * &upper * vecs.adjoint();
    let pi_low = CMat::identity(n, n) - &pi_up;
    let diag_part = |m: &CMat| &pi_up * m * &pi_up + &pi_low * m * &pi_low;
    let a0_op = weyl_quantize(&|x, xi| a0(&[x], &[xi]), s, grid, hbar)?;
    let heis = u.adjoint() * diag_part(&a0_op) * &u;
    let evolved = evolve_symbol(sym, a0, time, support, opts);
    let at_op = weyl_quantize(&|x, xi| evolved.eval1_cached(x, xi), s, grid, hbar)?;
    if let Some(e) = evolved.take_error() {
        return Err(e);
    }
    let diff = heis - at_op;
    let diag = diag_part(&diff);
    let defect = linalg::op_norm(&diag)?;
    let interband = linalg::op_norm(&(&diff - &diag))?;
    let mut sup = 0.0f64;
    for &x in grid.nodes().iter() {
        for &k in grid.momenta().iter() {
            sup = sup.max(a0(&[x], &[hbar * k]).op_norm());
        }
    }
    Ok(EgorovReport {
        hbar,
        time,
        defect,
        normalized_defect: if sup > 0.0 { defect / sup } else { defect },
        interband,
        band_split: split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::standard_representation;
    use crate::model::make_bump_potential;

    fn em_symbol() -> DiracSymbol {
        let rep = standard_representation(1).unwrap();
        let [s1, _, _] = crate::algebra::pauli_matrices();
        let v = make_bump_potential(&[0.0], 2.0, SpinMat::identity(2) * 0.4)
            .unwrap()
            .sum(make_bump_potential(&[0.5], 1.5, s1 * -0.3).unwrap())
            .unwrap();
        DiracSymbol::new(rep, PhysParams::new(0.1, 1.0, 1.0).unwrap(), v).unwrap()
    }

    #[test]
    fn closed_form_matches_numerical_eigs() {
        let sym = em_symbol();
        assert!(sym.is_electromagnetic());
        let (x, xi) = ([0.3], [0.7]);
        let e = symbol_eigs(&sym, &x, &xi);
        let (vals, _) = sym.eval(&x, &xi).herm_eig();
        assert!((e.values[0] - vals[0]).abs() < 1e-13 && (e.values[1] - vals[1]).abs() < 1e-13);
        let d = sym.eval(&x, &xi);
        let recon = e.projectors[0] * e.values[0] + e.projectors[1] * e.values[1];
        assert!((recon - d).max_abs() < 1e-13);
        assert!((e.values[1] - e.values[0] - 2.0 * (1.0f64 + 0.49).sqrt()).abs() > 0.0);
    }

    #[test]
    fn three_dimensional_free_bands() {
        let rep = standard_representation(3).unwrap();
        let sym = DiracSymbol::new(rep, PhysParams::new(0.1, 1.0, 1.0).unwrap(), MatrixPotential::zero(3, 4)).unwrap();
        let e = symbol_eigs(&sym, &[0.0; 3], &[3.0, 0.0, 0.0]);
        assert!((e.values[1] - 10f64.sqrt()).abs() < 1e-14);
        assert_eq!(e.degeneracy, vec![2, 2]);
        assert!((e.projectors[1].trace().re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn free_flow_is_straight_at_group_velocity() {
        let rep = standard_representation(1).unwrap();
        let sym = DiracSymbol::new(rep, PhysParams::new(0.1, 1.0, 1.0).unwrap(), MatrixPotential::zero(1, 2)).unwrap();
        let tr = integrate_flow(&sym, &[0.0], &[1.0], 1, 2.0, None, &OdeOptions::default()).unwrap();
        let v = 1.0 / 2f64.sqrt();
        assert!((tr.xs.last().unwrap()[0] - 2.0 * v).abs() < 1e-9);
        assert!((tr.xis.last().unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moyal_of_position_and_momentum() {
        let x_sym = |x: &[f64], _: &[f64]| SpinMat::scalar(1, C64::new(x[0], 0.0));
        let xi_sym = |_: &[f64], xi: &[f64]| SpinMat::scalar(1, C64::new(xi[0], 0.0));
        let (c0, c1) = moyal_first_order(&x_sym, &xi_sym, &[0.4], &[1.3]);
        assert!((c0[(0, 0)] - C64::new(0.52, 0.0)).norm() < 1e-12);
        assert!((c1[(0, 0)] - C64::new(0.0, 0.5)).norm() < 1e-9);
        let (_, d1) = moyal_first_order(&xi_sym, &x_sym, &[0.4], &[1.3]);
        // x#xi - xi#x = i hbar
        assert!(((c1 - d1)[(0, 0)] - C64::new(0.0, 1.0)).norm() < 1e-9);
    }

    #[test]
    fn transport_intertwines_projectors() {
        let sym = em_symbol();
        let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, max_steps: 50_000 };
        let end = transport_matrix(&sym, 1, &[-0.5], &[0.8], 1.0, &opts).unwrap();
        let p0 = symbol_eigs(&sym, &[-0.5], &[0.8]).projectors[1];
        let p1 = symbol_eigs(&sym, &end.x, &end.xi).projectors[1];
        let t = end.transport.t_matrix;
        assert!((t * p0 - p1 * t).max_abs() < 1e-6, "{}", (t * p0 - p1 * t).max_abs());
        assert!(end.transport.unitarity_defect < 1e-6);
    }

    #[test]
    fn generator_raw_part_is_nearly_hermitian() {
        let sym = em_symbol();
        let g = transport_generator(&sym, 0, &[0.2], &[-0.4]).unwrap();
        assert!(g.raw.hermitian_defect() < 1e-6, "{}", g.raw.hermitian_defect());
    }

    #[test]
    fn free_egorov_is_small() {
        let rep = standard_representation(1).unwrap();
        let params = PhysParams::new(0.1, 1.0, 1.0).unwrap();
        let sym = DiracSymbol::new(rep, params, MatrixPotential::zero(1, 2)).unwrap();
        let a0 = |_: &[f64], xi: &[f64]| SpinMat::identity(2) * crate::model::bump(xi[0] / 2.0);
        let grid = Grid::periodic(4.0, 96).unwrap();
        let rep = egorov_defect(&sym, &a0, None, &grid, 0.5, OdeOptions::default()).unwrap();
        assert!(rep.defect < 1e-6, "{}", rep.defect);
    }
}
