//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
//! Positional arguments filter criteria by substring.

use capdirac::algebra::standard_representation;
use capdirac::dynamics::{egorov_defect, transport_matrix, DiracSymbol, OdeOptions, SymbolSupport};
use capdirac::harness::*;
use capdirac::linalg;
use capdirac::model::*;
use capdirac::quantize::{assemble_cap, assemble_free, assemble_free_dilated, CapVariant, Grid};
use capdirac::spectra::{distance_to_essential, identify_resonances, riesz_rank, ResonanceOptions, RieszOptions};
use capdirac::spin::SpinMat;
use capdirac::{CMat, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::Instant;

fn verdict(n: usize, name: &str, ok: bool, detail: String) {
    println!("criterion {n:>2} {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn thetas() -> Vec<DistortionParam> {
    [0.15, 0.2, 0.25].iter().map(|&t| DistortionParam::imaginary(t, 0.6).unwrap()).collect()
}

fn barrier_r2c() -> &'static ComparisonReport {
    static REPORT: OnceLock<ComparisonReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        run_resonance_to_cap(&presets::barrier(0.1).unwrap(), &presets::barrier_box(), &default_ladder(), &PipelineOptions::default())
            .unwrap()
    })
}

fn criterion_01_clifford() {
    let start = Instant::now();
    let mut worst_defect = 0.0f64;
    let mut worst_disp = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for d in [1, 3] {
        let rep = standard_representation(d).unwrap();
        worst_defect = worst_defect.max(capdirac::algebra::clifford_defect(&rep));
        for _ in 0..100 {
            let xi: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p = rep.combine(&xi, 1.0);
            let e2 = 1.0 + xi.iter().map(|v| v * v).sum::<f64>();
            let diff = p * p - SpinMat::identity(rep.spinor_dim()) * e2;
            worst_disp = worst_disp.max(diff.max_abs() / e2);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "Clifford relations",
        worst_defect <= 1e-14 && worst_disp <= 1e-12 && secs < 1.0,
        format!("defect {worst_defect:.1e}, dispersion {worst_disp:.1e}, {secs:.2} s"),
    );
}

fn criterion_02_free_spectrum() {
    let start = Instant::now();
    let grid = Grid::periodic(30.0, 1024).unwrap();
    let rep = standard_representation(1).unwrap();
    let mut worst = 0.0f64;
    for hbar in [1.0, 0.1] {
        let params = PhysParams::new(hbar, 1.0, 1.0).unwrap();
        let d = assemble_free(&rep, params, &grid).unwrap();
        let mut got = linalg::herm_eigenvalues(&d.matrix).unwrap();
        got.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = grid
            .momenta()
            .iter()
            .flat_map(|k| {
                let e = (hbar * hbar * k * k + 1.0).sqrt();
                [e, -e]
            })
            .collect();
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs() / w.abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(2, "free spectrum", worst <= 1e-10 && secs < 30.0, format!("max rel err {worst:.1e}, {secs:.1} s"));
}

fn criterion_03_essential_rotation() {
    let start = Instant::now();
    let params = PhysParams::new(0.1, 1.0, 1.0).unwrap();
    let grid = Grid::periodic(30.0, 1024).unwrap();
    let dp = DistortionParam::imaginary(0.2, 0.6).unwrap();
    let op = assemble_free_dilated(&standard_representation(1).unwrap(), params, &grid, &dp).unwrap();
    let vals = linalg::eigenvalues(&op.matrix).unwrap();
    let cutoff = 0.5 * params.hbar * grid.k_max();
    let mut checked = 0;
    let mut worst = 0.0f64;
    for z in vals.iter().filter(|z| z.norm() <= cutoff) {
        checked += 1;
        worst = worst.max(distance_to_essential(*z, dp.theta, &params) / (1.0 + z.norm()));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        3,
        "essential spectrum rotation",
        checked > 0 && worst <= 1e-6 && secs < 120.0,
        format!("{checked} eigenvalues, worst scaled distance {worst:.1e}, {secs:.1} s"),
    );
}

fn criterion_04_distortion_independence() {
    let model = presets::barrier(0.1).unwrap();
    let bx = presets::barrier_box();
    let opts = ResonanceOptions { riesz: None, ..Default::default() };
    let alt = model.with_scaling(make_scaling_g(model.scaling.r0 + 0.5, 1.25 * model.scaling.eta).unwrap()).unwrap();
    // One grid for both profiles, so only the distortion changes.
    let grid = GridPolicy::default().grid(&alt).unwrap();
    let scan_a = identify_resonances(&model, &grid, &bx, &thetas(), &opts).unwrap();
    let scan_b = identify_resonances(&alt, &grid, &bx, &thetas(), &opts).unwrap();
    let Some(z) = scan_a.resonances.iter().min_by(|a, b| a.value.im.abs().total_cmp(&b.value.im.abs())) else {
        return verdict(4, "distortion independence", false, "no resonance in the box".into());
    };
    let sweep = z.stability / z.value.norm();
    let across = scan_b.resonances.iter().map(|r| (r.value - z.value).norm() / z.value.norm()).fold(f64::INFINITY, f64::min);
    verdict(
        4,
        "distortion independence",
        sweep <= 1e-6 && across <= 1e-6,
        format!("z = {:.10}{:+.3e}i, sweep drift {sweep:.1e}, across profiles {across:.1e}", z.value.re, z.value.im),
    );
}

fn criterion_05_cap_confinement() {
    let hbar = 0.1;
    let em = {
        let well = presets::deep_well(hbar).unwrap();
        ModelSpec::new(well.params, well.rep.clone(), presets::electromagnetic().unwrap(), well.cap.clone(), make_scaling_g(2.6, 8.32).unwrap(), 2.5)
    };
    let battery = [
        ("barrier", presets::barrier(hbar).unwrap()),
        ("intersecting", presets::intersecting(hbar).unwrap()),
        ("deep well", presets::deep_well(hbar).unwrap()),
        ("free", presets::free(hbar).unwrap()),
        ("electromagnetic", em.unwrap()),
    ];
    let mut worst = f64::NEG_INFINITY;
    let mut worst_name = "";
    for (name, m) in &battery {
        let grid = GridPolicy::default().grid(m).unwrap();
        for variant in [CapVariant::Infinite, CapVariant::Dirichlet { radius: m.scaling.r0 }] {
            let op = assemble_cap(m, &grid, variant).unwrap();
            let top = linalg::eigenvalues(&op.matrix).unwrap().iter().map(|z| z.im).fold(f64::NEG_INFINITY, f64::max);
            if top > worst {
                worst = top;
                worst_name = name;
            }
        }
    }
    verdict(5, "CAP confinement", worst <= 1e-10, format!("max Im over battery {worst:.1e} ({worst_name})"));
}

fn criterion_06_cap_scaling_agreement() {
    let start = Instant::now();
    let r = barrier_r2c();
    let compared: Vec<&RungRecord> = r.rungs.iter().filter(|g| g.status == RungStatus::Compared).collect();
    let contained = compared.iter().all(|g| g.contained == Some(true));
    let dists: Vec<String> = r.rungs.iter().map(|g| g.distance.map_or("-".into(), |d| format!("{d:.1e}"))).collect();
    verdict(
        6,
        "CAP and scaling agreement",
        r.distance_decreasing && !compared.is_empty() && contained,
        format!("|w0 - z0| = [{}], {} gated rungs contained, {:.0} s", dists.join(", "), compared.len(), start.elapsed().as_secs_f64()),
    );
}

fn criterion_07_converse_pipeline() {
    let opts = PipelineOptions { cap_selection: CapSelection::BroadestPaired, ..Default::default() };
    let r = run_cap_to_resonance(&presets::barrier(0.1).unwrap(), &presets::barrier_top_box(), &default_ladder(), &opts).unwrap();
    let cs: Vec<f64> = r.rungs.iter().filter_map(|g| g.residual_constant).collect();
    let identity = r.rungs.iter().filter_map(|g| g.cap_identity_defect).fold(0.0, f64::max);
    let mut sorted = cs.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(f64::NAN);
    let stable = cs.iter().all(|c| (c / median - 1.0).abs() <= 0.5);
    verdict(
        7,
        "converse pipeline",
        cs.len() >= 3 && stable && identity <= 1e-10,
        format!("C = {:.3?} (median {median:.3}), absorption identity defect {identity:.1e}", cs),
    );
}

fn criterion_08_intersecting() {
    let ladder = default_ladder();
    let opts = PipelineOptions::default();
    let r = run_intersecting(&presets::intersecting(0.1).unwrap(), &presets::barrier_box(), &ladder, &opts, &IntersectingOptions::default()).unwrap();
    let gate = r.refused.is_none() && r.nontrapping.as_ref().is_some_and(|v| v.nontrapping);
    let trapped = run_intersecting(&presets::trapped(0.1).unwrap(), &presets::barrier_box(), &ladder, &opts, &IntersectingOptions::default()).unwrap();
    let masses: Vec<f64> = r.rungs.iter().filter_map(|g| g.cap_support_mass).collect();
    let decreasing = masses.len() >= 2 && masses.windows(2).all(|w| w[1] < w[0]);
    let paired = barrier_r2c();
    let mut pairs = Vec::new();
    for (a, b) in r.rungs.iter().zip(&paired.rungs) {
        if a.status == RungStatus::Compared {
            pairs.push((a.hbar, b.distance.unwrap_or(f64::INFINITY), a.distance.unwrap_or(0.0)));
        }
    }
    let closer = !pairs.is_empty() && pairs.iter().all(|(_, non, int)| non < int);
    verdict(
        8,
        "intersecting regime",
        gate && trapped.refused.is_some() && decreasing && closer,
        format!(
            "nontrapping gate {gate}, trapped model refused {}, mass {}, (hbar, non-intersecting, intersecting) {}",
            trapped.refused.is_some(),
            sci(&masses),
            pairs.iter().map(|(h, a, b)| format!("({h}, {a:.1e}, {b:.1e})")).collect::<Vec<_>>().join(" ")
        ),
    );
}

fn criterion_09_riesz_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let opts = RieszOptions::default();
    let mut agree = 0;
    let total = 200;
    for _ in 0..total {
        let n = rng.random_range(20..=100);
        let a = CMat::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let vals = linalg::eigenvalues(&a).unwrap();
        let center = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        // Keep the contour clear of the spectrum so the count is well defined.
        let mut radius = rng.random_range(0.5..3.0);
        while vals.iter().any(|z| ((z - center).norm() - radius).abs() < 1e-2) {
            radius *= 1.013;
        }
        let dense = vals.iter().filter(|z| (*z - center).norm() < radius).count();
        if riesz_rank(&a, center, radius, &opts).is_ok_and(|r| r.rank == dense) {
            agree += 1;
        }
    }
    let jordan = CMat::from_fn(2, 2, |i, j| match (i, j) {
        (0, 0) | (1, 1) => C64::new(0.3, 0.0),
        (0, 1) => C64::new(1.0, 0.0),
        _ => C64::new(0.0, 0.0),
    });
    let jrank = riesz_rank(&jordan, C64::new(0.3, 0.0), 0.5, &opts).map(|r| r.rank).unwrap_or(0);
    verdict(9, "Riesz rank", agree == total && jrank == 2, format!("{agree}/{total} random matrices agree, Jordan block rank {jrank}"));
}

fn criterion_10_resolvent_bound() {
    let model = presets::barrier(0.1).unwrap();
    let dp = DistortionParam::imaginary(0.2, 0.6).unwrap();
    let bx = presets::barrier_box();
    let cs: Vec<f64> = [0.1, 0.05]
        .iter()
        .map(|&h| {
            let m = model.with_hbar(h).unwrap();
            let grid = GridPolicy::default().grid(&m).unwrap();
            resolvent_bound_constant(&m, &grid, &dp, &bx, 8, (6, 8)).unwrap()
        })
        .collect();
    let spread = (cs[0] / cs[1] - 1.0).abs();
    verdict(10, "resolvent bound", spread <= 0.3, format!("C_K = {:.4?}, relative spread {spread:.2e}", cs));
}

fn criterion_11_transport_unitarity() {
    let params = PhysParams::new(0.1, 1.0, 1.0).unwrap();
    let sym = DiracSymbol::new(standard_representation(1).unwrap(), params, presets::electromagnetic().unwrap()).unwrap();
    let loose = OdeOptions { rtol: 1e-9, atol: 1e-11, ..Default::default() };
    let tight = OdeOptions { rtol: 1e-10, atol: 1e-12, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst, mut sum_loose, mut sum_tight) = (0.0f64, 0.0, 0.0);
    for _ in 0..100 {
        let x = rng.random_range(-3.0..3.0);
        let xi = rng.random_range(-2.0..2.0);
        let branch = rng.random_range(0..2);
        let a = transport_matrix(&sym, branch, &[x], &[xi], 2.0, &loose).unwrap().transport.unitarity_defect;
        let b = transport_matrix(&sym, branch, &[x], &[xi], 2.0, &tight).unwrap().transport.unitarity_defect;
        worst = worst.max(a).max(b);
        sum_loose += a;
        sum_tight += b;
    }
    let shrink = sum_loose / sum_tight;
    verdict(
        11,
        "transport unitarity",
        worst <= 1e-8 && shrink >= 5.0,
        format!("max defect {worst:.1e}, mean defect shrinks x{shrink:.1} under 10x tighter tolerance"),
    );
}

fn criterion_12_egorov() {
    let start = Instant::now();
    let sym = |h: f64| DiracSymbol::new(standard_representation(1).unwrap(), PhysParams::new(h, 1.0, 1.0).unwrap(), presets::electromagnetic().unwrap()).unwrap();
    let a0 = |x: &[f64], xi: &[f64]| SpinMat::identity(2) * (bump(x[0] / 2.0) * bump((xi[0] - 0.5) / 1.5));
    let support = || Some(SymbolSupport { x: vec![(-2.0, 2.0)], xi: vec![(-1.0, 2.0)] });
    let grid = |h: f64| {
        let n = ((2.0 * 6.0 * 4.0 / h / std::f64::consts::PI).ceil() as usize + 1) & !1;
        Grid::periodic(6.0, n).unwrap()
    };
    let defects: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| egorov_defect(&sym(h), &a0, support(), &grid(h), 0.5, OdeOptions::default()).unwrap().normalized_defect)
        .collect();
    let ratios = [defects[1] / defects[0], defects[2] / defects[1]];
    let one = |_: &[f64], _: &[f64]| SpinMat::identity(2);
    let identity = egorov_defect(&sym(0.1), &one, None, &grid(0.1), 0.5, OdeOptions::default()).unwrap().defect;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        12,
        "Egorov defect",
        ratios.iter().all(|r| (0.3..=0.7).contains(r)) && identity <= 1e-10 && secs < 1200.0,
        format!("normalized {}, ratios {:.3?}, a = I defect {identity:.1e}, {secs:.0} s", sci(&defects), ratios),
    );
}

fn criterion_13_counting() {
    let model = presets::barrier(0.1).unwrap();
    let bx = presets::barrier_box();
    let opts = PipelineOptions::default();
    let base = counting_sweep(&model, &bx, &default_ladder(), &opts).unwrap();
    let fine = counting_sweep(&model, &bx, &default_ladder(), &PipelineOptions { grid: opts.grid.refined(1.25), ..opts.clone() }).unwrap();
    let (Some(e0), Some(e1)) = (base.resonance_exponent, fine.resonance_exponent) else {
        return verdict(13, "counting", false, "exponent fit failed".into());
    };
    let dominated = base.cap_counts.iter().zip(&base.resonance_counts).all(|(j, r)| j >= r);
    verdict(
        13,
        "counting",
        e0 <= 1.3 && dominated && (e0 - e1).abs() <= 0.2,
        format!(
            "resonances {:?}, CAP {:?}, exponent {e0:.3} (refined {e1:.3})",
            base.resonance_counts, base.cap_counts
        ),
    );
}

fn criterion_14_quasimode() {
    let opts = PipelineOptions::default();
    let mut located = Vec::new();
    let mut exact_err = 0.0f64;
    for h in [0.1, 0.05] {
        let m = presets::deep_well(h).unwrap();
        let grid = opts.grid.grid(&m).unwrap();
        let trial = QuasimodeTrial::from_dirichlet(&m, &grid, 2.2, 1.6, 0.0).unwrap();
        let v = quasimode_to_resonance(&trial, &m, &grid, QuasimodeTarget::Resonances, &opts).unwrap();
        let inside = match (v.found, v.search_box) {
            (Some(z), Some(bx)) => v.gate_met && bx.contains(z),
            _ => false,
        };
        located.push((h, inside));
        let exact = QuasimodeTrial::from_eigenvector(&m, &grid, 0.0).unwrap();
        let ve = quasimode_to_resonance(&exact, &m, &grid, QuasimodeTarget::Resonances, &opts).unwrap();
        exact_err = exact_err.max(ve.found.map_or(f64::INFINITY, |z| (z - C64::new(exact.energy, 0.0)).norm()));
    }
    verdict(
        14,
        "quasimode to resonance",
        located.iter().all(|l| l.1) && exact_err <= 1e-10,
        format!("located {:?}, exact trial error {exact_err:.1e}", located),
    );
}

fn main() {
    let criteria: [(&str, fn()); 14] = [
        ("criterion_01_clifford", criterion_01_clifford),
        ("criterion_02_free_spectrum", criterion_02_free_spectrum),
        ("criterion_03_essential_rotation", criterion_03_essential_rotation),
        ("criterion_04_distortion_independence", criterion_04_distortion_independence),
        ("criterion_05_cap_confinement", criterion_05_cap_confinement),
        ("criterion_06_cap_scaling_agreement", criterion_06_cap_scaling_agreement),
        ("criterion_07_converse_pipeline", criterion_07_converse_pipeline),
        ("criterion_08_intersecting", criterion_08_intersecting),
        ("criterion_09_riesz_rank", criterion_09_riesz_rank),
        ("criterion_10_resolvent_bound", criterion_10_resolvent_bound),
        ("criterion_11_transport_unitarity", criterion_11_transport_unitarity),
        ("criterion_12_egorov", criterion_12_egorov),
        ("criterion_13_counting", criterion_13_counting),
        ("criterion_14_quasimode", criterion_14_quasimode),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        if let Err(payload) = std::panic::catch_unwind(run) {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            if !msg.starts_with("criterion") {
                println!("criterion {} FAIL {name}: {msg}", &name[10..12]);
            }
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
