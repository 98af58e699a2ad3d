//! Experiment pipelines comparing resonances with CAP eigenvalues along a
//! ladder of semiclassical parameters, plus quasimode and counting tools.

use crate::dynamics::{hyperbolicity_margin, nontrapping_verdict, DiracSymbol, NontrapOptions, NontrapReport, PhaseSampler};
use crate::linalg;
use crate::model::{smoothstep, CapSpec, DistortionParam, ModelSpec, Regime, SpectralBox};
use crate::quantize::{assemble_cap, assemble_distorted, assemble_perturbed, AssembledOperator, CapVariant, Grid};
use crate::spectra::{eigs_in_box, identify_resonances, resolvent_norm, stable_eigenvalues, Resonance, ResonanceOptions};
use crate::{CMat, Error, Result, C64};
use rayon::prelude::*;

/// Constants of the hypothesis gates and box-width laws, which the theory
/// leaves unspecified.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateConstants {
    pub c: f64,
    pub c0: f64,
    pub b: f64,
    pub m: f64,
    pub n: i32,
    pub k: i32,
}

impl Default for GateConstants {
    fn default() -> Self {
        GateConstants { c: 1.0, c0: 1.0, b: 1.0, m: 1.0, n: 0, k: 8 }
    }
}

fn log_inv(hbar: f64) -> f64 {
    (1.0 / hbar).ln()
}

/// Grid sizing: periodic box of half-length R0 + eta + pad, enough nodes to
/// resolve momenta up to `xi_max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPolicy {
    pub xi_max: f64,
    pub pad: f64,
    pub min_nodes: usize,
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy { xi_max: 3.75, pad: 1.0, min_nodes: 256 }
    }
}

impl GridPolicy {
    pub fn grid(&self, model: &ModelSpec) -> Result<Grid> {
        let l = model.scaling.r0 + model.scaling.eta + self.pad;
        let n = (2.0 * l * self.xi_max / (std::f64::consts::PI * model.params.hbar)).ceil() as usize;
        Grid::periodic(l, (n + n % 2).max(self.min_nodes))
    }

    pub fn refined(&self, factor: f64) -> Self {
        GridPolicy { xi_max: self.xi_max * factor, ..*self }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    /// Imaginary distortion angles of the sweep.
    pub taus: Vec<f64>,
    pub eps: f64,
    pub gates: GateConstants,
    pub grid: GridPolicy,
    pub resonance: ResonanceOptions,
    pub cap_variant: CapVariant,
    pub cap_selection: CapSelection,
}

/// Which CAP eigenvalue in the box the CAP-to-resonance pipeline starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CapSelection {
    /// Smallest |Im w0|.
    Narrowest,
    /// Largest |Im w0| among eigenvalues within 0.6 |Im w0| of a
    /// distortion-stable resonance. Very narrow CAP eigenvalues pick up an
    /// absorption floor from the grid's far-field coupling.
    BroadestPaired,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            taus: vec![0.15, 0.2, 0.25],
            eps: 0.6,
            gates: GateConstants::default(),
            grid: GridPolicy::default(),
            resonance: ResonanceOptions { riesz: None, ..Default::default() },
            cap_variant: CapVariant::Infinite,
            cap_selection: CapSelection::Narrowest,
        }
    }
}

impl PipelineOptions {
    fn thetas(&self) -> Result<Vec<DistortionParam>> {
        self.taus.iter().map(|&t| DistortionParam::imaginary(t, self.eps)).collect()
    }
}

pub fn default_ladder() -> Vec<f64> {
    (0..4).map(|k| 0.2 * 0.5f64.powi(k)).collect()
}

/// [c - eps log(1/hbar), c + eps log(1/hbar)] + i[-eps, 0].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonBox {
    pub center: f64,
    pub epsilon: f64,
    pub hbar: f64,
}

impl EpsilonBox {
    pub fn half_width(&self) -> f64 {
        self.epsilon * log_inv(self.hbar)
    }

    pub fn contains(&self, z: C64) -> bool {
        // Rounding slack on the real-axis edge only.
        let slack = 1e-12 * (1.0 + z.norm());
        (z.re - self.center).abs() <= self.half_width() && z.im >= -self.epsilon && z.im <= slack
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ResonanceToCap,
    CapToResonance,
    Intersecting,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RungStatus {
    Compared,
    HypothesisUnmet,
    Skipped(String),
}

#[derive(Clone, Debug)]
pub struct RungRecord {
    pub hbar: f64,
    pub nodes: usize,
    pub z0: Option<Resonance>,
    pub w0: Option<C64>,
    pub epsilon: Option<f64>,
    pub gate_met: bool,
    /// Containment of the paired value in the epsilon-box, when the gate holds.
    pub contained: Option<bool>,
    /// |w0 - z0|; a diagnostic, the theory only asserts containment.
    pub distance: Option<f64>,
    pub status: RungStatus,
    pub resonance_count: usize,
    pub cap_count: usize,
    /// ||(D - Re w0) chi f|| / ||chi f|| for the cut-off J-eigenvector f.
    pub quasimode_residual: Option<f64>,
    /// quasimode_residual / sqrt(-Im w0).
    pub residual_constant: Option<f64>,
    /// | ||sqrt(Re W) f||^2 + Im w0 ||f||^2 |, zero for an exact eigenvector.
    pub cap_identity_defect: Option<f64>,
    pub cap_support_mass: Option<f64>,
}

impl RungRecord {
    fn new(hbar: f64, nodes: usize) -> Self {
        RungRecord {
            hbar,
            nodes,
            z0: None,
            w0: None,
            epsilon: None,
            gate_met: false,
            contained: None,
            distance: None,
            status: RungStatus::Skipped("not run".into()),
            resonance_count: 0,
            cap_count: 0,
            quasimode_residual: None,
            residual_constant: None,
            cap_identity_defect: None,
            cap_support_mass: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ComparisonReport {
    pub direction: Direction,
    pub regime: Regime,
    pub rungs: Vec<RungRecord>,
    /// |w0 - z0| strictly decreasing over rungs where both exist.
    pub distance_decreasing: bool,
    pub nontrapping: Option<NontrapReport>,
    pub hyperbolicity: Option<f64>,
    /// Set when a precondition refused the run; `rungs` is then empty.
    pub refused: Option<String>,
}

fn strictly_decreasing(rungs: &[RungRecord]) -> bool {
    let d: Vec<f64> = rungs.iter().filter_map(|r| r.distance).collect();
    d.len() >= 2 && d.windows(2).all(|w| w[1] < w[0])
}

/// Nearest by modulus, ties toward smaller |Im|.
fn nearest_value(list: &[C64], z: C64) -> Option<C64> {
    list.iter().copied().min_by(|a, b| {
        let (da, db) = ((a - z).norm(), (b - z).norm());
        if (da - db).abs() <= 1e-14 * (1.0 + z.norm()) {
            a.im.abs().total_cmp(&b.im.abs())
        } else {
            da.total_cmp(&db)
        }
    })
}

fn narrowest(res: &[Resonance]) -> Option<Resonance> {
    res.iter().cloned().min_by(|a, b| a.value.im.abs().total_cmp(&b.value.im.abs()))
}

/// Smooth radial cutoff: 1 on |x| <= inner, 0 on |x| >= outer.
pub fn cutoff_profile(r: f64, inner: f64, outer: f64) -> f64 {
    1.0 - smoothstep((r - inner) / (outer - inner))
}

#[derive(Clone, Debug)]
pub struct CutoffState {
    /// chi u / ||chi u||
    pub state: Vec<C64>,
    /// ||[D, chi] u|| / ||chi u||
    pub commutator: f64,
    /// ||chi u|| / ||u||
    pub retained: f64,
}

/// Cuts a grid vector with chi = 1 on B(0, inner), supported in B(0, outer),
/// and reports the commutator with the operator `op`.
pub fn cutoff_state(u: &[C64], op: &AssembledOperator, inner: f64, outer: f64) -> Result<CutoffState> {
    let s = op.spinor_dim;
    if u.len() != op.dim() {
        return Err(Error::DimensionMismatch(format!("state has {} entries, operator {}", u.len(), op.dim())));
    }
    if !(outer > inner && inner >= 0.0) {
        return Err(Error::InvalidParameter(format!("cutoff radii need 0 <= {inner} < {outer}")));
    }
    if outer > op.grid.half_length {
        return Err(Error::InvalidParameter(format!("cut radius {outer} exceeds the grid half-length {}", op.grid.half_length)));
    }
    let chi: Vec<f64> = op.positions().iter().flat_map(|&x| std::iter::repeat(cutoff_profile(x.abs(), inner, outer)).take(s)).collect();
    let cu: Vec<C64> = u.iter().zip(&chi).map(|(a, c)| a * *c).collect();
    let d_cu = linalg::matvec(&op.matrix, &cu);
    let du = linalg::matvec(&op.matrix, u);
    let comm: Vec<C64> = d_cu.iter().zip(&du).zip(&chi).map(|((a, b), c)| a - b * *c).collect();
    let nu = linalg::norm2(u);
    let ncu = linalg::norm2(&cu);
    if ncu == 0.0 {
        return Err(Error::Precondition("state vanishes on the cutoff region".into()));
    }
    Ok(CutoffState {
        state: cu.iter().map(|a| a / ncu).collect(),
        commutator: linalg::norm2(&comm) / ncu,
        retained: ncu / nu,
    })
}

/// sqrt of the squared-norm fraction of `u` on nodes with |x| >= R1.
pub fn cap_support_mass(u: &[C64], positions: &[f64], spinor_dim: usize, cap: &CapSpec) -> f64 {
    let mut inside = 0.0;
    let mut total = 0.0;
    for (j, &x) in positions.iter().enumerate() {
        let m: f64 = u[j * spinor_dim..(j + 1) * spinor_dim].iter().map(|a| a.norm_sqr()).sum();
        total += m;
        if x.abs() >= cap.r1 {
            inside += m;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        (inside / total).sqrt()
    }
}

fn rung_setup(model: &ModelSpec, hbar: f64, opts: &PipelineOptions) -> Result<(ModelSpec, Grid)> {
    let m = model.with_hbar(hbar)?;
    let grid = opts.grid.grid(&m)?;
    Ok((m, grid))
}

fn resonance_gate(hbar: f64, power: i32, g: &GateConstants) -> f64 {
    hbar.powi(power) / (g.c * log_inv(hbar))
}

fn rung_resonance_to_cap(model: &ModelSpec, bx: &SpectralBox, hbar: f64, opts: &PipelineOptions, power: i32) -> Result<(RungRecord, Option<(Vec<C64>, AssembledOperator)>)> {
    let (m, grid) = rung_setup(model, hbar, opts)?;
    let mut rec = RungRecord::new(hbar, grid.n);
    let scan = identify_resonances(&m, &grid, bx, &opts.thetas()?, &opts.resonance)?;
    let cap = assemble_cap(&m, &grid, opts.cap_variant)?;
    let (jbox, jall) = eigs_in_box(&cap, bx)?;
    rec.resonance_count = scan.resonances.len();
    rec.cap_count = jbox.len();
    let Some(z0) = narrowest(&scan.resonances) else {
        rec.status = RungStatus::Skipped("no resonance in box".into());
        return Ok((rec, None));
    };
    let w0 = nearest_value(&jall, z0.value).ok_or(Error::NoConvergence)?;
    let eps = hbar.powi(-power) * z0.value.im.abs();
    rec.gate_met = z0.value.im.abs() <= resonance_gate(hbar, power, &opts.gates);
    rec.epsilon = Some(eps);
    rec.distance = Some((w0 - z0.value).norm());
    if rec.gate_met {
        rec.contained = Some(EpsilonBox { center: z0.value.re, epsilon: eps, hbar }.contains(w0));
        rec.status = RungStatus::Compared;
    } else {
        rec.status = RungStatus::HypothesisUnmet;
    }
    let theta = DistortionParam::imaginary(opts.taus[0], opts.eps)?;
    let distorted = assemble_distorted(&m, &grid, &theta, false)?;
    let state = linalg::inverse_iteration(&distorted.matrix, z0.value, 3)?;
    rec.z0 = Some(z0);
    rec.w0 = Some(w0);
    Ok((rec, Some((state, distorted))))
}

fn finish(direction: Direction, regime: Regime, rungs: Vec<RungRecord>) -> ComparisonReport {
    let distance_decreasing = strictly_decreasing(&rungs);
    ComparisonReport { direction, regime, rungs, distance_decreasing, nontrapping: None, hyperbolicity: None, refused: None }
}

fn run_ladder<F>(ladder: &[f64], f: F) -> Result<Vec<RungRecord>>
where
    F: Fn(f64) -> Result<RungRecord> + Sync,
{
    let out: Vec<Result<RungRecord>> = ladder.par_iter().map(|&h| f(h)).collect();
    out.into_iter().collect()
}

/// Resonance z0 (narrowest in the box) -> nearest CAP eigenvalue w0, with
/// epsilon = hbar^-5 |Im z0|.
pub fn run_resonance_to_cap(model: &ModelSpec, bx: &SpectralBox, ladder: &[f64], opts: &PipelineOptions) -> Result<ComparisonReport> {
    if model.regime() != Regime::NonIntersecting {
        return Err(Error::Precondition("resonance-to-CAP comparison needs R0' < R1".into()));
    }
    let rungs = run_ladder(ladder, |h| Ok(rung_resonance_to_cap(model, bx, h, opts, 5)?.0))?;
    Ok(finish(Direction::ResonanceToCap, Regime::NonIntersecting, rungs))
}

/// CAP eigenvalue w0 (narrowest in the box) -> quasimode from its cut-off
/// eigenvector -> nearest resonance, with epsilon = hbar^-4 sqrt(-Im w0).
pub fn run_cap_to_resonance(model: &ModelSpec, bx: &SpectralBox, ladder: &[f64], opts: &PipelineOptions) -> Result<ComparisonReport> {
    if model.regime() != Regime::NonIntersecting {
        return Err(Error::Precondition("CAP-to-resonance comparison needs R0' < R1".into()));
    }
    let rungs = run_ladder(ladder, |hbar| {
        let (m, grid) = rung_setup(model, hbar, opts)?;
        let mut rec = RungRecord::new(hbar, grid.n);
        let cap = assemble_cap(&m, &grid, opts.cap_variant)?;
        let (jbox, _) = eigs_in_box(&cap, bx)?;
        rec.cap_count = jbox.len();
        let scan = identify_resonances(&m, &grid, bx, &opts.thetas()?, &opts.resonance)?;
        rec.resonance_count = scan.resonances.len();
        let values: Vec<C64> = scan.resonances.iter().map(|r| r.value).collect();
        let w0 = match opts.cap_selection {
            CapSelection::Narrowest => jbox.iter().map(|e| e.value).min_by(|a, b| a.im.abs().total_cmp(&b.im.abs())),
            CapSelection::BroadestPaired => jbox
                .iter()
                .map(|e| e.value)
                .filter(|w| nearest_value(&values, *w).is_some_and(|z| (z - w).norm() <= 0.6 * w.im.abs()))
                .max_by(|a, b| a.im.abs().total_cmp(&b.im.abs())),
        };
        let Some(w0) = w0 else {
            rec.status = RungStatus::Skipped("no CAP eigenvalue in box".into());
            return Ok(rec);
        };
        rec.w0 = Some(w0);
        let f = linalg::inverse_iteration(&cap.matrix, w0, 3)?;
        let s = cap.spinor_dim;
        let w_nodes: Vec<f64> = cap.positions().iter().map(|&x| m.cap.eval(&[x]).re).collect();
        let absorbed: f64 = f.iter().enumerate().map(|(i, a)| w_nodes[i / s] * a.norm_sqr()).sum();
        rec.cap_identity_defect = Some((absorbed + w0.im * linalg::norm2(&f).powi(2)).abs());
        let d = assemble_perturbed(&m, &grid)?;
        let d = restrict_like(&d, &cap);
        let cut = cutoff_state(&f, &d, m.cap.r2, m.scaling.r0)?;
        let shifted = linalg::shifted(&d.matrix, C64::new(w0.re, 0.0));
        let resid = linalg::norm2(&linalg::matvec(&shifted, &cut.state));
        rec.quasimode_residual = Some(resid);
        if w0.im < 0.0 {
            rec.residual_constant = Some(resid / (-w0.im).sqrt());
        }
        let Some(z) = nearest_value(&values, w0) else {
            rec.status = RungStatus::Skipped("no resonance in box".into());
            return Ok(rec);
        };
        let eps = hbar.powi(-4) * (-w0.im).max(0.0).sqrt();
        let gate = hbar.powi(4) / (opts.gates.c * log_inv(hbar));
        rec.gate_met = -w0.im <= gate * gate;
        rec.epsilon = Some(eps);
        rec.distance = Some((z - w0).norm());
        rec.z0 = scan.resonances.into_iter().find(|r| r.value == z);
        if rec.gate_met {
            rec.contained = Some(EpsilonBox { center: w0.re, epsilon: eps, hbar }.contains(z));
            rec.status = RungStatus::Compared;
        } else {
            rec.status = RungStatus::HypothesisUnmet;
        }
        Ok(rec)
    })?;
    Ok(finish(Direction::CapToResonance, Regime::NonIntersecting, rungs))
}

/// Compresses `op` to the rows/nodes used by `like` (identity for J_inf).
fn restrict_like(op: &AssembledOperator, like: &AssembledOperator) -> AssembledOperator {
    if op.nodes == like.nodes {
        return op.clone();
    }
    let s = op.spinor_dim;
    let idx: Vec<usize> = like.nodes.iter().flat_map(|&j| (0..s).map(move |a| j * s + a)).collect();
    let mut out = op.clone();
    out.matrix = CMat::from_fn(idx.len(), idx.len(), |i, k| op.matrix[(idx[i], idx[k])]);
    out.nodes = like.nodes.clone();
    out
}

#[derive(Clone, Copy, Debug)]
pub struct IntersectingOptions {
    pub nontrap: NontrapOptions,
    pub hyperbolicity_samples: usize,
}

impl Default for IntersectingOptions {
    fn default() -> Self {
        IntersectingOptions { nontrap: NontrapOptions::default(), hyperbolicity_samples: 1000 }
    }
}

/// Intersecting regime (R1 <= R0'): requires nontrapping for |x| > R1 on the
/// box energies and a positive hyperbolicity margin; epsilon = hbar^-6 |Im z0|.
pub fn run_intersecting(
    model: &ModelSpec,
    bx: &SpectralBox,
    ladder: &[f64],
    opts: &PipelineOptions,
    iopts: &IntersectingOptions,
) -> Result<ComparisonReport> {
    if model.regime() != Regime::Intersecting {
        return Err(Error::Precondition("intersecting comparison needs R1 <= R0'".into()));
    }
    let sym = DiracSymbol::from_model(model)?;
    let radius = model.scaling.r0;
    let verdict = nontrapping_verdict(&sym, (bx.l, bx.r), model.cap.r1, radius, &iopts.nontrap)?;
    let sampler = PhaseSampler {
        x_range: (-radius, radius),
        xi_range: (-4.0, 4.0),
        count: iopts.hyperbolicity_samples,
        seed: iopts.nontrap.seed,
    };
    let hyp = hyperbolicity_margin(&sym, &sampler);
    let mut report = finish(Direction::Intersecting, Regime::Intersecting, Vec::new());
    report.hyperbolicity = Some(hyp.margin);
    let refusal = if !verdict.nontrapping {
        Some(format!("{} trapped trajectories for |x| > R1 = {}", verdict.trapped.len(), model.cap.r1))
    } else if !hyp.admissible {
        Some(format!("hyperbolicity margin {} is not positive", hyp.margin))
    } else {
        None
    };
    report.nontrapping = Some(verdict);
    if refusal.is_some() {
        report.refused = refusal;
        return Ok(report);
    }
    let inner = model.r0_prime;
    let rungs = run_ladder(ladder, |h| {
        let (mut rec, state) = rung_resonance_to_cap(model, bx, h, opts, 6)?;
        if let Some((u, op)) = state {
            let cut = cutoff_state(&u, &op, inner, model.scaling.r0)?;
            rec.cap_support_mass = Some(cap_support_mass(&cut.state, &op.positions(), op.spinor_dim, &model.cap));
        }
        Ok(rec)
    })?;
    report.distance_decreasing = strictly_decreasing(&rungs);
    report.rungs = rungs;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct CountingReport {
    pub hbars: Vec<f64>,
    pub resonance_counts: Vec<usize>,
    pub cap_counts: Vec<usize>,
    /// Least-squares slope of log count against log(1/hbar), nonzero counts only.
    pub resonance_exponent: Option<f64>,
    pub cap_exponent: Option<f64>,
}

/// Slope of log y against log(1/x) over pairs with y > 0.
pub fn fit_exponent(hbars: &[f64], counts: &[usize]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = hbars.iter().zip(counts).filter(|(_, &c)| c > 0).map(|(&h, &c)| (log_inv(h), (c as f64).ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn counting_sweep(model: &ModelSpec, bx: &SpectralBox, ladder: &[f64], opts: &PipelineOptions) -> Result<CountingReport> {
    let thetas = opts.thetas()?;
    let counts: Vec<Result<(usize, usize)>> = ladder
        .par_iter()
        .map(|&h| {
            let (m, grid) = rung_setup(model, h, opts)?;
            let scan = identify_resonances(&m, &grid, bx, &thetas, &opts.resonance)?;
            let cap = assemble_cap(&m, &grid, opts.cap_variant)?;
            let (jbox, _) = eigs_in_box(&cap, bx)?;
            Ok((scan.resonances.iter().map(|r| r.multiplicity).sum(), jbox.iter().map(|e| e.multiplicity).sum()))
        })
        .collect();
    let counts = counts.into_iter().collect::<Result<Vec<_>>>()?;
    let resonance_counts: Vec<usize> = counts.iter().map(|c| c.0).collect();
    let cap_counts: Vec<usize> = counts.iter().map(|c| c.1).collect();
    Ok(CountingReport {
        hbars: ladder.to_vec(),
        resonance_exponent: fit_exponent(ladder, &resonance_counts),
        cap_exponent: fit_exponent(ladder, &cap_counts),
        resonance_counts,
        cap_counts,
    })
}

/// sup over sample points z = x + iy above the box (y in [hbar^K, 0.5],
/// log-spaced) of ||(D_theta - z)^-1|| * Im z.
pub fn resolvent_bound_constant(
    model: &ModelSpec,
    grid: &Grid,
    theta: &DistortionParam,
    bx: &SpectralBox,
    k: i32,
    samples: (usize, usize),
) -> Result<f64> {
    let op = assemble_distorted(model, grid, theta, false)?;
    let y_lo = model.params.hbar.powi(k).max(1e-12);
    let y_hi = 0.5f64;
    let pts: Vec<C64> = (0..samples.0)
        .flat_map(|i| {
            let x = bx.l + (bx.r - bx.l) * i as f64 / (samples.0.max(2) - 1) as f64;
            (0..samples.1).map(move |j| {
                let t = j as f64 / (samples.1.max(2) - 1) as f64;
                C64::new(x, y_lo * (y_hi / y_lo).powf(t))
            })
        })
        .collect();
    let vals: Vec<Result<f64>> = pts.par_iter().map(|&z| Ok(resolvent_norm(&op.matrix, z)? * z.im)).collect();
    vals.into_iter().try_fold(0.0f64, |m, v| Ok(m.max(v?)))
}

/// An approximate eigenpair (E, u) of D on the periodic grid.
#[derive(Clone, Debug)]
pub struct QuasimodeTrial {
    pub energy: f64,
    pub state: Vec<C64>,
    /// ||(D - E) u||
    pub residual: f64,
    /// Radius outside of which the state vanishes exactly.
    pub support_radius: f64,
    pub hbar: f64,
}

impl QuasimodeTrial {
    /// Normalizes `state` and recomputes the residual against D.
    pub fn new(model: &ModelSpec, grid: &Grid, energy: f64, state: Vec<C64>) -> Result<Self> {
        let d = assemble_perturbed(model, grid)?;
        if state.len() != d.dim() {
            return Err(Error::DimensionMismatch(format!("state has {} entries, operator {}", state.len(), d.dim())));
        }
        let n = linalg::norm2(&state);
        if n == 0.0 {
            return Err(Error::InvalidParameter("zero trial state".into()));
        }
        let state: Vec<C64> = state.iter().map(|a| a / n).collect();
        let s = d.spinor_dim;
        let residual = linalg::norm2(&linalg::matvec(&linalg::shifted(&d.matrix, C64::new(energy, 0.0)), &state));
        let support_radius = d
            .positions()
            .iter()
            .enumerate()
            .filter(|(j, _)| state[j * s..(j + 1) * s].iter().any(|a| a.norm() > 0.0))
            .map(|(_, x)| x.abs())
            .fold(0.0, f64::max);
        Ok(QuasimodeTrial { energy, state, residual, support_radius, hbar: model.params.hbar })
    }

    /// Eigenstate of D compressed to |x| < radius (Dirichlet problem) closest
    /// to `target`, cut off smoothly between `inner` and `radius` and
    /// extended by zero.
    pub fn from_dirichlet(model: &ModelSpec, grid: &Grid, radius: f64, inner: f64, target: f64) -> Result<Self> {
        let d = assemble_perturbed(model, grid)?;
        let s = d.spinor_dim;
        let keep: Vec<usize> = (0..grid.n).filter(|&j| grid.x(j).abs() < radius).collect();
        let idx: Vec<usize> = keep.iter().flat_map(|&j| (0..s).map(move |a| j * s + a)).collect();
        let sub = CMat::from_fn(idx.len(), idx.len(), |i, k| d.matrix[(idx[i], idx[k])]);
        let (vals, vecs) = linalg::herm_eigen(&sub)?;
        let (best, &e) = vals
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
            .ok_or(Error::NoConvergence)?;
        let mut full = vec![C64::new(0.0, 0.0); d.dim()];
        for (i, &row) in idx.iter().enumerate() {
            let x = grid.x(row / s).abs();
            full[row] = vecs[(i, best)] * cutoff_profile(x, inner, radius);
        }
        Self::new(model, grid, e, full)
    }

    /// Exact eigenvector of D on the grid nearest to `target`.
    pub fn from_eigenvector(model: &ModelSpec, grid: &Grid, target: f64) -> Result<Self> {
        let d = assemble_perturbed(model, grid)?;
        let (vals, vecs) = linalg::herm_eigen(&d.matrix)?;
        let (best, &e) = vals
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
            .ok_or(Error::NoConvergence)?;
        let u: Vec<C64> = (0..d.dim()).map(|i| vecs[(i, best)]).collect();
        Self::new(model, grid, e, u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuasimodeTarget {
    /// Resonances of D via complex scaling; gate rho <= hbar^(4+N) / (C log 1/hbar).
    Resonances,
    /// Eigenvalues of J; gate rho <= hbar^(5+N) / (C log 1/hbar).
    CapEigenvalues,
}

#[derive(Clone, Debug)]
pub struct QuasimodeVerdict {
    pub gate: f64,
    pub gate_met: bool,
    /// Box-width b(hbar).
    pub width: f64,
    pub search_box: Option<SpectralBox>,
    pub found: Option<C64>,
}

/// Searches [E - b log(1/hbar), E + b log(1/hbar)] + i[-b, 0] for a
/// resonance (or J-eigenvalue) generated by the trial.
pub fn quasimode_to_resonance(
    trial: &QuasimodeTrial,
    model: &ModelSpec,
    grid: &Grid,
    target: QuasimodeTarget,
    opts: &PipelineOptions,
) -> Result<QuasimodeVerdict> {
    let g = &opts.gates;
    let h = trial.hbar;
    let p = match target {
        QuasimodeTarget::Resonances => 4 + g.n,
        QuasimodeTarget::CapEigenvalues => 5 + g.n,
    };
    let gate = h.powi(p) / (g.c * log_inv(h));
    let mut width = (g.c0 * g.b * g.m * trial.residual * h.powi(-p)).max((-g.b / h).exp());
    if target == QuasimodeTarget::Resonances {
        width = width.max(h.powi(g.k));
    }
    let mut verdict = QuasimodeVerdict { gate, gate_met: trial.residual <= gate, width, search_box: None, found: None };
    if !verdict.gate_met {
        return Ok(verdict);
    }
    let half = width * log_inv(h);
    // The lower edge is -b; a sliver above the axis keeps real values inside.
    let bx = SpectralBox::new(trial.energy - half, trial.energy + half, -width, width.min(1e-9))?;
    verdict.search_box = Some(bx);
    let e = C64::new(trial.energy, 0.0);
    let candidates: Vec<C64> = match target {
        QuasimodeTarget::Resonances => {
            let scan = stable_eigenvalues(model, grid, &bx, &opts.thetas()?, &opts.resonance)?;
            scan.resonances.iter().map(|r| r.value).collect()
        }
        QuasimodeTarget::CapEigenvalues => {
            let cap = assemble_cap(model, grid, opts.cap_variant)?;
            eigs_in_box(&cap, &bx)?.0.iter().map(|b| b.value).collect()
        }
    };
    verdict.found = nearest_value(&candidates, e).filter(|z| z.im <= 1e-10);
    Ok(verdict)
}

/// Reference models used by the CLI presets and the test suites.
pub mod presets {
    use crate::algebra::{pauli_matrices, standard_representation};
    use crate::model::{make_bump_potential, make_scaling_g, CapSpec, MatrixPotential, ModelSpec, PhysParams, SpectralBox};
    use crate::spin::SpinMat;
    use crate::{Result, C64};

    /// Two scalar bumps of height `vb` at +-xb, half-width w: a well between
    /// barriers with shape resonances above mc^2.
    pub fn double_barrier(vb: f64, xb: f64, w: f64) -> Result<MatrixPotential> {
        let id = SpinMat::identity(2);
        make_bump_potential(&[-xb], w, id * vb)?.sum(make_bump_potential(&[xb], w, id * vb)?)
    }

    /// Barrier model with the CAP outside the potential support.
    pub fn barrier(hbar: f64) -> Result<ModelSpec> {
        barrier_with_cap(hbar, 1.4, 2.0)
    }

    pub fn barrier_with_cap(hbar: f64, r1: f64, r2: f64) -> Result<ModelSpec> {
        double_barrier_model(hbar, [1.2, 0.9, 0.3], r1, r2)
    }

    /// Double barrier `[vb, xb, w]` with a smoothstep CAP of strength 0.5 on
    /// [r1, r2] and scaling radius max(r2 + 0.2, R0' + 1.4).
    pub fn double_barrier_model(hbar: f64, barrier: [f64; 3], r1: f64, r2: f64) -> Result<ModelSpec> {
        let [vb, xb, w] = barrier;
        let cap = CapSpec::smoothstep(r1, r2, C64::new(0.5, 0.0), 1.0)?;
        let r0 = (r2 + 0.2).max(xb + w + 1.4);
        ModelSpec::new(
            PhysParams::new(hbar, 1.0, 1.0)?,
            standard_representation(1)?,
            double_barrier(vb, xb, w)?,
            cap,
            make_scaling_g(r0, 3.2 * r0)?,
            xb + w,
        )
    }

    /// Energy window of the barrier resonances.
    pub fn barrier_box() -> SpectralBox {
        SpectralBox { l: 1.1, r: 1.6, b: -0.05, t: 0.05 }
    }

    /// Box straddling the barrier top, where resonance widths stay well
    /// above the grid's absorption floor on every rung.
    pub fn barrier_top_box() -> SpectralBox {
        SpectralBox { l: 1.9, r: 2.4, b: -0.1, t: 0.05 }
    }

    /// Barrier model with R1 inside the outer flank of the barriers.
    pub fn intersecting(hbar: f64) -> Result<ModelSpec> {
        barrier_with_cap(hbar, 1.0, 2.0)
    }

    /// Barrier model with R1 inside the well, where orbits are trapped.
    pub fn trapped(hbar: f64) -> Result<ModelSpec> {
        barrier_with_cap(hbar, 0.3, 2.0)
    }

    /// Deep scalar well with bound states in the gap (-mc^2, mc^2).
    pub fn deep_well(hbar: f64) -> Result<ModelSpec> {
        let v = make_bump_potential(&[0.0], 1.0, SpinMat::identity(2) * -1.5)?;
        let cap = CapSpec::smoothstep(1.2, 2.2, C64::new(0.5, 0.0), 1.0)?;
        ModelSpec::new(PhysParams::new(hbar, 1.0, 1.0)?, standard_representation(1)?, v, cap, make_scaling_g(2.4, 7.68)?, 1.0)
    }

    /// Electromagnetic example V = e phi I - e A sigma_1 (1D), used for the
    /// classical layer.
    pub fn electromagnetic() -> Result<MatrixPotential> {
        let [s1, _, _] = pauli_matrices();
        make_bump_potential(&[0.0], 2.5, SpinMat::identity(2) * 0.5)?.sum(make_bump_potential(&[0.5], 2.0, s1 * -0.4)?)
    }

    pub fn free(hbar: f64) -> Result<ModelSpec> {
        let cap = CapSpec::smoothstep(1.4, 2.4, C64::new(0.5, 0.0), 1.0)?;
        ModelSpec::new(
            PhysParams::new(hbar, 1.0, 1.0)?,
            standard_representation(1)?,
            MatrixPotential::zero(1, 2),
            cap,
            make_scaling_g(2.6, 8.32)?,
            0.0,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_box_is_monotone() {
        let z = C64::new(1.001, -0.002);
        let small = EpsilonBox { center: 1.0, epsilon: 1e-3, hbar: 0.1 };
        let big = EpsilonBox { epsilon: 1e-2, ..small };
        assert!(!small.contains(z));
        assert!(big.contains(z));
    }

    #[test]
    fn exponent_fit_of_power_law() {
        let h = [0.2, 0.1, 0.05, 0.025];
        let c: Vec<usize> = h.iter().map(|x| (3.0 / x) as usize).collect();
        assert!((fit_exponent(&h, &c).unwrap() - 1.0).abs() < 0.02);
        assert_eq!(fit_exponent(&h, &[0, 0, 0, 0]), None);
    }

    #[test]
    fn cutoff_profile_limits() {
        assert_eq!(cutoff_profile(0.5, 1.0, 2.0), 1.0);
        assert_eq!(cutoff_profile(2.5, 1.0, 2.0), 0.0);
        assert!((cutoff_profile(1.5, 1.0, 2.0) - 0.5).abs() < 1e-12);
    }
}
