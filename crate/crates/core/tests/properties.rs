use capdirac::algebra::{clifford_defect, pauli_matrices, standard_representation};
use capdirac::dynamics::{hyperbolicity_margin, nontrapping_verdict, symbol_eigs, DiracSymbol, NontrapOptions, PhaseSampler};
use capdirac::harness::presets;
use capdirac::linalg;
use capdirac::model::{
    bump, jacobian_theta, make_bump_potential, make_scaling_g, smoothstep, validate_cap, CapSpec, DistortionParam,
    MatrixPotential, PhysParams,
};
use capdirac::quantize::{assemble_cap, assemble_free_dilated, CapVariant, Grid};
use capdirac::spectra::{cluster_eigenvalues, distance_to_essential, essential_point, riesz_rank, RieszOptions};
use capdirac::spin::SpinMat;
use capdirac::{CMat, C64};
use proptest::prelude::*;

fn hermitian(re: [f64; 4], im: f64) -> SpinMat {
    SpinMat::from_rows(&[
        &[C64::new(re[0], 0.0), C64::new(re[1], im)],
        &[C64::new(re[1], -im), C64::new(re[2], 0.0)],
    ]) * re[3]
}

fn free_symbol(mass: f64) -> DiracSymbol {
    let rep = standard_representation(1).unwrap();
    DiracSymbol::new(rep, PhysParams::new(0.1, mass, 1.0).unwrap(), MatrixPotential::zero(1, 2)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clifford_survives_unitary_conjugation(re in prop::array::uniform4(-1.0f64..1.0), im in -1.0f64..1.0, d in prop::sample::select(vec![1usize, 3])) {
        let rep = standard_representation(d).unwrap();
        let n = rep.spinor_dim();
        let h = SpinMat::from_fn(n, |i, j| {
            let k = (i * n + j) % 4;
            C64::new(re[k] + (i + j) as f64 * 0.1, if i == j { 0.0 } else { im * (j as f64 - i as f64) })
        });
        let (_, u) = h.hermitian_part().herm_eig();
        prop_assert!(clifford_defect(&rep.conjugated(&u)) < 1e-12);
    }

    #[test]
    fn free_symbol_bands_follow_dispersion(xi in -20.0f64..20.0, mass in 0.1f64..3.0, x in -5.0f64..5.0) {
        let e = symbol_eigs(&free_symbol(mass), &[x], &[xi]);
        let w = (xi * xi + mass * mass).sqrt();
        prop_assert_eq!(e.bands(), 2);
        prop_assert!((e.values[0] + w).abs() < 1e-12 * w.max(1.0));
        prop_assert!((e.values[1] - w).abs() < 1e-12 * w.max(1.0));
    }

    #[test]
    fn symbol_projectors_resolve_identity(re in prop::array::uniform4(-1.0f64..1.0), im in -1.0f64..1.0, x in -1.0f64..1.0, xi in -5.0f64..5.0) {
        let rep = standard_representation(1).unwrap();
        let v = make_bump_potential(&[0.2], 1.5, hermitian(re, im)).unwrap();
        let sym = DiracSymbol::new(rep, PhysParams::new(0.1, 1.0, 1.0).unwrap(), v).unwrap();
        let e = symbol_eigs(&sym, &[x], &[xi]);
        let d = sym.eval(&[x], &[xi]);
        let mut sum = SpinMat::zeros(2);
        for (j, p) in e.projectors.iter().enumerate() {
            prop_assert!((*p * *p - *p).op_norm() < 1e-10);
            prop_assert!(p.hermitian_defect() < 1e-10);
            prop_assert!((d * *p - *p * e.values[j]).op_norm() < 1e-9);
            for q in &e.projectors[j + 1..] {
                prop_assert!((*p * *q).op_norm() < 1e-10);
            }
            sum += *p;
        }
        prop_assert!((sum - SpinMat::identity(2)).op_norm() < 1e-10);
    }

    #[test]
    fn scalar_shift_moves_every_band(shift in -2.0f64..2.0, x in -1.0f64..1.0, xi in -5.0f64..5.0) {
        let rep = standard_representation(1).unwrap();
        let [s1, _, s3] = pauli_matrices();
        let base = make_bump_potential(&[0.0], 2.0, s1 * 0.3 + s3 * 0.2).unwrap();
        let shifted = base.clone().sum(make_bump_potential(&[0.0], 3.0, SpinMat::identity(2) * shift).unwrap()).unwrap();
        let p = PhysParams::new(0.1, 1.0, 1.0).unwrap();
        let a = symbol_eigs(&DiracSymbol::new(rep.clone(), p, base).unwrap(), &[x], &[xi]);
        let b = symbol_eigs(&DiracSymbol::new(rep, p, shifted).unwrap(), &[x], &[xi]);
        let s = shift * bump(x / 3.0);
        for (u, v) in a.values.iter().zip(&b.values) {
            prop_assert!((v - u - s).abs() < 1e-10);
        }
    }

    #[test]
    fn cap_profile_is_admissible(r1 in 0.2f64..3.0, width in 0.1f64..2.0, strength in 0.01f64..5.0, r in 0.0f64..10.0) {
        let cap = CapSpec::smoothstep(r1, r1 + width, C64::new(strength, 0.0), 1.0).unwrap();
        prop_assert!(validate_cap(&cap, 2000).unwrap().passes());
        let w = cap.eval_radial(r);
        prop_assert!(w.re >= 0.0 && w.re <= strength * (1.0 + 1e-15));
        if r <= r1 {
            prop_assert_eq!(w, C64::new(0.0, 0.0));
        }
        if r >= r1 + width {
            prop_assert!((w.re - strength).abs() < 1e-14 * strength);
        }
    }

    #[test]
    fn smoothstep_is_monotone(a in -0.5f64..1.5, b in -0.5f64..1.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(smoothstep(lo) <= smoothstep(hi));
        prop_assert!((0.0..=1.0).contains(&smoothstep(a)));
    }

    #[test]
    fn scaling_jacobian_regions(r0 in 1.0f64..4.0, factor in 2.0f64..5.0, tau in 0.0f64..0.5, x in -30.0f64..30.0) {
        let g = make_scaling_g(r0, factor * r0).unwrap();
        let theta = C64::new(0.0, tau);
        let j = jacobian_theta(&[x], theta, &g).unwrap();
        prop_assert!(g.dg_norm(x.abs()) < std::f64::consts::SQRT_2);
        if x.abs() <= r0 {
            prop_assert!((j - C64::new(1.0, 0.0)).norm() < 1e-14);
            prop_assert_eq!(g.eval1(x).0, 0.0);
        }
        if x.abs() >= r0 + g.eta {
            prop_assert!((j - C64::new(1.0, tau)).norm() < 1e-12);
            prop_assert!((g.eval1(x).0 - x).abs() < 1e-9 * x.abs());
        }
    }

    #[test]
    fn essential_curve_distance(lambda in 0.0f64..50.0, tau in 0.0f64..0.5, z in -0.99f64..0.99, positive: bool) {
        let p = PhysParams::new(0.1, 1.0, 1.0).unwrap();
        let theta = C64::new(0.0, tau);
        let w = essential_point(lambda, theta, &p, positive);
        prop_assert!(distance_to_essential(w, theta, &p) < 1e-8);
        let q = C64::new(1.0, 0.0) + theta;
        prop_assert!((w * w - C64::new(lambda, 0.0) / (q * q) - 1.0).norm() < 1e-10 * (1.0 + lambda));
        let gap = distance_to_essential(C64::new(z, 0.0), C64::new(0.0, 0.0), &p);
        prop_assert!((gap - (1.0 - z.abs())).abs() < 1e-8);
    }

    #[test]
    fn clusters_preserve_count(vals in prop::collection::vec((-3.0f64..3.0, -1.0f64..1.0), 1..40), dup in 0usize..5) {
        let mut zs: Vec<C64> = vals.iter().map(|&(a, b)| C64::new(a, b)).collect();
        for k in 0..dup.min(zs.len()) {
            let z = zs[k];
            zs.push(z + C64::new(1e-12, 0.0));
        }
        let c = cluster_eigenvalues(&zs);
        prop_assert_eq!(c.iter().map(|b| b.multiplicity).sum::<usize>(), zs.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn riesz_rank_counts_triangular_eigenvalues(
        diag in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 4..24),
        upper in -1.0f64..1.0,
        radius in 0.3f64..1.5,
    ) {
        let n = diag.len();
        let center = C64::new(0.1, -0.2);
        let clear = diag.iter().all(|&(a, b)| ((C64::new(a, b) - center).norm() - radius).abs() > 0.05);
        prop_assume!(clear);
        let a = CMat::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Equal => C64::new(diag[i].0, diag[i].1),
            std::cmp::Ordering::Less => C64::new(upper * ((i + 2 * j) % 5) as f64 / 5.0, upper * 0.1),
            std::cmp::Ordering::Greater => C64::new(0.0, 0.0),
        });
        let expected = diag.iter().filter(|&&(x, y)| (C64::new(x, y) - center).norm() < radius).count();
        let r = riesz_rank(&a, center, radius, &RieszOptions::default()).unwrap();
        prop_assert_eq!(r.rank, expected);
    }

    #[test]
    fn dilated_free_spectrum_lies_on_rotated_curve(tau in 0.05f64..0.4, hbar in 0.05f64..0.3) {
        let rep = standard_representation(1).unwrap();
        let p = PhysParams::new(hbar, 1.0, 1.0).unwrap();
        let grid = Grid::periodic(10.0, 128).unwrap();
        let dp = DistortionParam::imaginary(tau, 0.6).unwrap();
        let op = assemble_free_dilated(&rep, p, &grid, &dp).unwrap();
        let limit = 0.5 * hbar * grid.k_max();
        for z in linalg::eigenvalues(&op.matrix).unwrap() {
            if z.norm() <= limit {
                prop_assert!(distance_to_essential(z, dp.theta, &p) < 1e-8 * z.norm().max(1.0));
            }
        }
    }
}

#[test]
fn free_cap_spectrum_has_charge_conjugation_symmetry() {
    let m = presets::free(0.2).unwrap();
    let grid = Grid::periodic(6.0, 96).unwrap();
    let op = assemble_cap(&m, &grid, CapVariant::Infinite).unwrap();
    let vals = linalg::eigenvalues(&op.matrix).unwrap();
    for z in &vals {
        assert!(z.im <= 1e-10);
        let mirror = -z.conj();
        let d = vals.iter().map(|w| (w - mirror).norm()).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-8, "{z} has no partner");
    }
}

#[test]
fn massless_symbol_is_not_hyperbolic() {
    let sampler = PhaseSampler { x_range: (-1.0, 1.0), xi_range: (0.0, 0.0), count: 16, seed: 3 };
    assert!(!hyperbolicity_margin(&free_symbol(0.0), &sampler).admissible);
    let massive = hyperbolicity_margin(&free_symbol(1.0), &sampler);
    assert!(massive.admissible);
    assert!((massive.margin - 2.0).abs() < 1e-12);
}

#[test]
fn well_orbits_are_trapped_and_free_orbits_escape() {
    let opts = NontrapOptions { seeds: 100, ..NontrapOptions::default() };
    let well = DiracSymbol::from_model(&presets::deep_well(0.1).unwrap()).unwrap();
    let v = nontrapping_verdict(&well, (0.2, 0.6), 0.0, 2.2, &opts).unwrap();
    assert!(!v.nontrapping && !v.trapped.is_empty() && !v.empty_shell);

    let free = free_symbol(1.0);
    let v = nontrapping_verdict(&free, (1.1, 1.6), 0.0, 2.6, &opts).unwrap();
    assert!(v.nontrapping);
    // Slowest escape: group velocity sqrt(1 - 1/E^2) at E = 1.1 across the diameter.
    let slowest = (1.0f64 - 1.0 / 1.21).sqrt();
    assert!(v.worst_exit_time <= 2.0 * 2.6 / slowest + 1e-6);

    let v = nontrapping_verdict(&free, (0.2, 0.6), 0.0, 2.6, &opts).unwrap();
    assert!(v.empty_shell);
}

#[test]
fn admissible_theta_range() {
    let r = 0.6 / (1.0f64 + 0.36).sqrt();
    assert!(DistortionParam::imaginary(r * 0.99, 0.6).is_ok());
    assert!(DistortionParam::imaginary(r * 1.01, 0.6).is_err());
    assert!(DistortionParam::new(C64::new(0.1, -0.01), 0.6).is_err());
    assert!(PhysParams::new(0.0, 1.0, 1.0).is_err());
    assert!(PhysParams::new(0.1, -1.0, 1.0).is_err());
}
