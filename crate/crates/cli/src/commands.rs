use crate::config::{DirectionChoice, OperatorChoice, RegimeFlag, RunConfig};
use crate::error::CliError;
use crate::report::{write_dump, DumpMeta, Report, DUMP_LAYOUT};
use capdirac::dynamics::{egorov_defect, nontrapping_verdict, DiracSymbol, NontrapOptions, OdeOptions, SymbolSupport};
use capdirac::harness::{
    counting_sweep, run_cap_to_resonance, run_intersecting, run_resonance_to_cap, ComparisonReport, IntersectingOptions,
    PipelineOptions, RungStatus,
};
use capdirac::linalg;
use capdirac::model::{bump, DistortionParam, ModelSpec, PhysParams};
use capdirac::quantize::{assemble_cap, assemble_distorted, assemble_free, assemble_perturbed, AssembledOperator, CapVariant, Grid};
use capdirac::spectra::{cluster_eigenvalues, eigs_in_box, identify_resonances, ResonanceOptions, RieszOptions};
use capdirac::spin::SpinMat;
use serde_json::{json, Value};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CommandKind {
    Spectrum,
    Resonances,
    Cap,
    Compare,
    Flow,
    Egorov,
    Count,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Spectrum => "spectrum",
            CommandKind::Resonances => "resonances",
            CommandKind::Cap => "cap",
            CommandKind::Compare => "compare",
            CommandKind::Flow => "flow",
            CommandKind::Egorov => "egorov",
            CommandKind::Count => "count",
        }
    }
}

/// A validated configuration ready for dispatch.
pub struct Job<'a> {
    pub cfg: &'a RunConfig,
    pub model: ModelSpec,
    /// Explicit ladder from the command line or config, if any.
    pub ladder: Option<Vec<f64>>,
    pub out: &'a Path,
    pub stem: String,
}

impl Job<'_> {
    /// Ladder for single-rung commands: the explicit ladder or the model's hbar.
    fn hbars(&self) -> Vec<f64> {
        self.ladder.clone().unwrap_or_else(|| vec![self.model.params.hbar])
    }

    /// Ladder for sweep commands.
    fn sweep(&self) -> Vec<f64> {
        self.ladder.clone().unwrap_or_else(|| self.cfg.ladder())
    }

    fn resonance_options(&self) -> ResonanceOptions {
        let d = &self.cfg.distortion;
        ResonanceOptions {
            stability_tol: d.stability_tol,
            margin: d.margin,
            riesz: Some(RieszOptions { seed: self.cfg.experiment.seed, ..RieszOptions::default() }),
        }
    }

    fn cap_variant(&self) -> CapVariant {
        match self.cfg.experiment.operator {
            OperatorChoice::CapDirichlet => {
                CapVariant::Dirichlet { radius: self.cfg.experiment.dirichlet_radius.unwrap_or(self.cfg.geometry.r0) }
            }
            _ => CapVariant::Infinite,
        }
    }

    fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            taus: self.cfg.distortion.taus.clone(),
            eps: self.cfg.distortion.eps,
            gates: self.cfg.gate_constants(),
            grid: self.cfg.grid_policy(),
            resonance: self.resonance_options(),
            cap_variant: self.cap_variant(),
            cap_selection: self.cfg.cap_selection(),
        }
    }

    fn nontrap_options(&self) -> NontrapOptions {
        let f = &self.cfg.experiment.flow;
        NontrapOptions { seeds: f.seeds, seed: self.cfg.experiment.seed, t_max: f.t_max, ..NontrapOptions::default() }
    }

    fn rung(&self, hbar: f64) -> Result<(ModelSpec, Grid), CliError> {
        let m = self.model.with_hbar(hbar)?;
        let grid = self.cfg.grid_policy().grid(&m)?;
        Ok((m, grid))
    }
}

pub fn dispatch(kind: CommandKind, job: &Job<'_>, report: &mut Report) -> Result<(), CliError> {
    match kind {
        CommandKind::Spectrum => spectrum(job, report),
        CommandKind::Resonances => resonances(job, report),
        CommandKind::Cap => cap(job, report),
        CommandKind::Compare => compare(job, report),
        CommandKind::Flow => flow(job, report),
        CommandKind::Egorov => egorov(job, report),
        CommandKind::Count => count(job, report),
    }
}

fn grid_record(report: &mut Report, hbar: f64, grid: &Grid) {
    report.push("grid", json!({ "hbar": hbar, "half_length": grid.half_length, "nodes": grid.n }));
}

fn assemble(job: &Job<'_>, m: &ModelSpec, grid: &Grid) -> Result<(AssembledOperator, Option<f64>), CliError> {
    let e = &job.cfg.experiment;
    Ok(match e.operator {
        OperatorChoice::Free => (assemble_free(&m.rep, m.params, grid)?, None),
        OperatorChoice::Perturbed => (assemble_perturbed(m, grid)?, None),
        OperatorChoice::Cap | OperatorChoice::CapDirichlet => (assemble_cap(m, grid, job.cap_variant())?, None),
        OperatorChoice::Distorted => {
            let tau = e.tau.or_else(|| job.cfg.distortion.taus.first().copied()).ok_or_else(|| CliError::Config {
                line: None,
                message: "distorted spectrum needs experiment.tau or distortion.taus".into(),
            })?;
            let dp = DistortionParam::imaginary(tau, job.cfg.distortion.eps)?;
            (assemble_distorted(m, grid, &dp, false)?, Some(tau))
        }
    })
}

fn spectrum(job: &Job<'_>, report: &mut Report) -> Result<(), CliError> {
    let e = &job.cfg.experiment;
    for (i, h) in job.hbars().into_iter().enumerate() {
        let (m, grid) = job.rung(h)?;
        grid_record(report, h, &grid);
        let (op, tau) = assemble(job, &m, &grid)?;
        let eigs = match e.spectral_box {
            Some(_) => eigs_in_box(&op, &job.cfg.spectral_box()?)?.0,
            None => {
                let mut all = cluster_eigenvalues(&linalg::eigenvalues(&op.matrix)?);
                all.sort_by(|a, b| a.value.re.total_cmp(&b.value.re).then(a.value.im.total_cmp(&b.value.im)));
                all
            }
        };
        for b in eigs {
            report.push("row", json!({ "hbar": h, "re": b.value.re, "im": b.value.im, "multiplicity": b.multiplicity }));
        }
        if e.dump {
            let operator = serde_json::to_value(e.operator).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let meta = DumpMeta {
                rows: op.matrix.nrows(),
                cols: op.matrix.ncols(),
                layout: DUMP_LAYOUT.into(),
                operator: operator.clone(),
                hbar: h,
                theta_im: tau,
                grid_half_length: grid.half_length,
                grid_nodes: grid.n,
                spinor_dim: op.spinor_dim,
                model_hash: job.cfg.model_hash(),
            };
            let (bin, side) = write_dump(job.out, &format!("{}-{operator}-{i}", job.stem), &op.matrix, &meta)?;
            report.push("dump", json!({ "hbar": h, "matrix": file_name(&bin), "sidecar": file_name(&side) }));
        }
    }
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn resonances(job: &Job<'_>, report: &mut Report) -> Result<(), CliError> {
    let bx = job.cfg.spectral_box()?;
    let thetas = job.cfg.thetas()?;
    for h in job.hbars() {
        let (m, grid) = job.rung(h)?;
        grid_record(report, h, &grid);
        let scan = identify_resonances(&m, &grid, &bx, &thetas, &job.resonance_options())?;
        for r in scan.resonances {
            report.push(
                "row",
                json!({
                    "hbar": h,
                    "theta_im": r.theta_used.im,
                    "re": r.value.re,
                    "im": r.value.im,
                    "multiplicity": r.multiplicity,
                    "drift": r.stability,
                    "ambiguous": r.ambiguous,
                }),
            );
        }
    }
    Ok(())
}

fn cap(job: &Job<'_>, report: &mut Report) -> Result<(), CliError> {
    let bx = job.cfg.spectral_box()?;
    for h in job.hbars() {
        let (m, grid) = job.rung(h)?;
        grid_record(report, h, &grid);
        let op = assemble_cap(&m, &grid, job.cap_variant())?;
        for b in eigs_in_box(&op, &bx)?.0 {
            report.push("row", json!({ "hbar": h, "re": b.value.re, "im": b.value.im, "multiplicity": b.multiplicity }));
        }
    }
    Ok(())
}

fn compare(job: &Job<'_>, report: &mut Report) -> Result<(), CliError> {
    let bx = job.cfg.spectral_box()?;
    let ladder = job.sweep();
    let opts = job.pipeline_options();
    let r = match (job.cfg.geometry.regime, job.cfg.experiment.direction) {
        (RegimeFlag::Intersecting, _) => {
            let io = IntersectingOptions { nontrap: job.nontrap_options(), ..IntersectingOptions::default() };
            run_intersecting(&job.model, &bx, &ladder, &opts, &io)?
        }
        (RegimeFlag::NonIntersecting, DirectionChoice::ResonanceToCap) => run_resonance_to_cap(&job.model, &bx, &ladder, &opts)?,
        (RegimeFlag::NonIntersecting, DirectionChoice::CapToResonance) => run_cap_to_resonance(&job.model, &bx, &ladder, &opts)?,
    };
    comparison_records(&r, report);
    match &r.refused {
        Some(reason) => Err(CliError::Precondition(reason.clone())),
        None => Ok(()),
    }
}

fn comparison_records(r: &ComparisonReport, report: &mut Report) {
    for g in &r.rungs {
        let (status, reason) = match &g.status {
            RungStatus::Compared => ("compared", None),
            RungStatus::HypothesisUnmet => ("hypothesis-unmet", None),
            RungStatus::Skipped(why) => ("skipped", Some(why.clone())),
        };
        report.push(
            "row",
            json!({
                "hbar": g.hbar,
                "nodes": g.nodes,
                "status": status,
                "skip_reason": reason,
                "z0_re": g.z0.as_ref().map(|z| z.value.re),
                "z0_im": g.z0.as_ref().map(|z| z.value.im),
                "w0_re": g.w0.map(|w| w.re),
                "w0_im": g.w0.map(|w| w.im),
                "epsilon": g.epsilon,
                "gate_met": g.gate_met,
                "contained": g.contained,
                "distance": g.distance,
                "resonance_count": g.resonance_count,
                "cap_count": g.cap_count,
                "quasimode_residual": g.quasimode_residual,
                "residual_constant": g.residual_constant,
                "cap_identity_defect": g.cap_identity_defect,
                "cap_support_mass": g.cap_support_mass,
            }),
        );
    }
    let nontrap = r.nontrapping.as_ref().map(|v| {
        json!({
            "nontrapping": v.nontrapping,
            "seeds_used": v.seeds_used,
            "worst_exit_time": v.worst_exit_time,
            "trapped": v.trapped.len(),
            "empty_shell": v.empty_shell,
        })
    });
    report.push(
        "summary",
        json!({
            "direction": format!("{:?}", r.direction),
            "regime": format!("{:?}", r.regime),
            "distance_decreasing": r.distance_decreasing,
            "hyperbolicity_margin": r.hyperbolicity,
            "nontrapping": nontrap,
            "refused": r.refused,
        }),
    );
}

fn flow(job: &Job<'_>, report: &mut Report) -> Result<(), CliError> {
    let f = &job.cfg.experiment.flow;
    let energies = match f.energies {
        Some([lo, hi]) => (lo, hi),
        None => {
            let bx = job.cfg.spectral_box()?;
            (bx.l, bx.r)
        }
    };
    let inner = f.inner_radius.unwrap_or(job.cfg.cap.r1);
    let radius = f.radius.unwrap_or(job.cfg.geometry.r0);
    let sym = DiracSymbol::from_model(&job.model)?;
    let v = nontrapping_verdict(&sym, energies, inner, radius, &job.nontrap_options())?;
    for t in &v.trapped {
        report.push("row", json!({ "x": t.x, "xi": t.xi, "branch": t.branch, "forward": t.forward }));
    }
    report.push(
        "summary",
        json!({
            "verdict": if v.nontrapping { "nontrapping" } else { "trapping" },
            "energies": [energies.0, energies.1],
            "inner_radius": inner,
            "radius": radius,
            "seeds_used": v.seeds_used,
            "worst_exit_time": v.worst_exit_time,
            "trapped": v.trapped.len(),
            "empty_shell": v.empty_shell,
        }),
    );
    Ok(())
}

fn egorov(job: &Job<'_>, report: &mut Report) -> Result<(), CliError> {
    let e = &job.cfg.experiment.egorov;
    let a0 = |x: &[f64], xi: &[f64]| {
        SpinMat::identity(job.model.rep.spinor_dim()) * (bump(x[0] / e.x_radius) * bump((xi[0] - e.xi_center) / e.xi_radius))
    };
    for h in job.sweep() {
        let params = PhysParams::new(h, job.model.params.mass, job.model.params.c)?;
        let sym = DiracSymbol::new(job.model.rep.clone(), params, job.model.potential.clone())?;
        let n = ((2.0 * e.half_length * e.xi_factor / (h * std::f64::consts::PI)).ceil() as usize + 1) & !1;
        let grid = Grid::periodic(e.half_length, n)?;
        grid_record(report, h, &grid);
        let support = SymbolSupport { x: vec![(-e.x_radius, e.x_radius)], xi: vec![(e.xi_center - e.xi_radius, e.xi_center + e.xi_radius)] };
        let r = egorov_defect(&sym, &a0, Some(support), &grid, e.time, OdeOptions::default())?;
        report.push(
            "row",
            json!({
                "hbar": h,
                "time": r.time,
                "defect": r.defect,
                "normalized_defect": r.normalized_defect,
                "interband": r.interband,
                "band_split": r.band_split,
            }),
        );
    }
    Ok(())
}

fn count(job: &Job<'_>, report: &mut Report) -> Result<(), CliError> {
    let bx = job.cfg.spectral_box()?;
    let r = counting_sweep(&job.model, &bx, &job.sweep(), &job.pipeline_options())?;
    for ((h, nr), nc) in r.hbars.iter().zip(&r.resonance_counts).zip(&r.cap_counts) {
        report.push("row", json!({ "hbar": h, "resonances": nr, "cap_eigenvalues": nc }));
    }
    report.push("summary", json!({ "resonance_exponent": r.resonance_exponent, "cap_exponent": r.cap_exponent }));
    Ok(())
}

/// Header record shared by every command.
pub fn header(kind: CommandKind, job: &Job<'_>) -> Value {
    json!({
        "command": kind.name(),
        "tag": job.cfg.experiment.tag,
        "model_hash": job.cfg.model_hash(),
        "seed": job.cfg.experiment.seed,
        "ladder": job.ladder,
        "config": job.cfg.to_toml(),
    })
}
