//! Run configuration: a TOML file with explicit model sections and an
//! optional experiment section.

use crate::error::CliError;
use capdirac::algebra::{pauli_matrices, standard_representation};
use capdirac::harness::{default_ladder, CapSelection, GateConstants, GridPolicy};
use capdirac::model::{
    make_bump_potential, make_scaling_g, CapSpec, DistortionParam, MatrixPotential, ModelSpec, PhysParams, Regime, SpectralBox,
};
use capdirac::spin::SpinMat;
use capdirac::C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub physics: Physics,
    pub potential: Potential,
    pub cap: Cap,
    pub distortion: Distortion,
    pub geometry: Geometry,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default)]
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub hbar: f64,
    pub mass: f64,
    pub c: f64,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Potential {
    /// Declared support radius R0'.
    pub support_radius: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<PotentialTerm>,
}

/// One bump term b((x - center)/radius) * M with
/// M = scalar I + sum_k sigma[k] sigma_k + matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialTerm {
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default)]
    pub scalar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<[f64; 3]>,
    /// Row-major rows of [re, im] pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<[f64; 2]>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cap {
    pub r1: f64,
    pub r2: f64,
    pub strength: f64,
    #[serde(default)]
    pub strength_im: f64,
    #[serde(default = "one")]
    pub dom_const: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Distortion {
    pub taus: Vec<f64>,
    pub eps: f64,
    #[serde(default = "default_stability")]
    pub stability_tol: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeFlag {
    NonIntersecting,
    Intersecting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    /// Freeze radius R0 of the scaling profile.
    pub r0: f64,
    pub eta: f64,
    pub regime: RegimeFlag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    pub xi_max: f64,
    pub pad: f64,
    pub min_nodes: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        let p = GridPolicy::default();
        GridSettings { xi_max: p.xi_max, pad: p.pad, min_nodes: p.min_nodes }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorChoice {
    Free,
    Perturbed,
    Cap,
    CapDirichlet,
    Distorted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionChoice {
    ResonanceToCap,
    CapToResonance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionChoice {
    Narrowest,
    BroadestPaired,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub tag: String,
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    pub spectral_box: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ladder: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub seed: u64,
    pub operator: OperatorChoice,
    /// Imaginary part of theta for `spectrum` on the distorted operator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dirichlet_radius: Option<f64>,
    pub dump: bool,
    pub direction: DirectionChoice,
    pub cap_selection: SelectionChoice,
    pub gates: Gates,
    pub flow: FlowSettings,
    pub egorov: EgorovSettings,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            tag: "run".into(),
            spectral_box: None,
            ladder: Vec::new(),
            output: None,
            seed: 1,
            operator: OperatorChoice::Cap,
            tau: None,
            dirichlet_radius: None,
            dump: false,
            direction: DirectionChoice::ResonanceToCap,
            cap_selection: SelectionChoice::Narrowest,
            gates: Gates::default(),
            flow: FlowSettings::default(),
            egorov: EgorovSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gates {
    pub c: f64,
    pub c0: f64,
    pub b: f64,
    pub m: f64,
    pub n: i32,
    pub k: i32,
}

impl Default for Gates {
    fn default() -> Self {
        let g = GateConstants::default();
        Gates { c: g.c, c0: g.c0, b: g.b, m: g.m, n: g.n, k: g.k }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSettings {
    /// Energy window [lo, hi]; defaults to the real extent of the box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energies: Option<[f64; 2]>,
    /// Defaults to R1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_radius: Option<f64>,
    /// Defaults to R0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub seeds: usize,
    pub t_max: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings { energies: None, inner_radius: None, radius: None, seeds: 1000, t_max: 50.0 }
    }
}

/// Observable a0 = b(x / x_radius) b((xi - xi_center) / xi_radius) I on a
/// periodic grid of the given half-length with momenta up to xi_factor / hbar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EgorovSettings {
    pub time: f64,
    pub half_length: f64,
    pub xi_factor: f64,
    pub x_radius: f64,
    pub xi_center: f64,
    pub xi_radius: f64,
}

impl Default for EgorovSettings {
    fn default() -> Self {
        EgorovSettings { time: 0.5, half_length: 6.0, xi_factor: 4.0, x_radius: 2.0, xi_center: 0.5, xi_radius: 1.5 }
    }
}

fn one() -> f64 {
    1.0
}

fn default_stability() -> f64 {
    1e-6
}

fn default_margin() -> f64 {
    1e-3
}

/// 1-based line of `key = ...` inside `[section]`, or of the section header.
pub fn locate(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_start_matches('[').trim_end_matches(']').trim().to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(k) = key {
                let name = line.split('=').next().unwrap_or("").trim();
                if name == k {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1));
            CliError::Config { line, message: e.message().trim().to_string() }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the canonical serialization of the model sections.
    pub fn model_hash(&self) -> String {
        let model = RunConfig { experiment: Experiment::default(), ..self.clone() };
        let digest = Sha256::digest(model.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn ladder(&self) -> Vec<f64> {
        if self.experiment.ladder.is_empty() {
            default_ladder()
        } else {
            self.experiment.ladder.clone()
        }
    }

    /// Rejects inconsistent radii and builds the model. `text` is the source
    /// used for line anchors.
    pub fn validate(&self, text: Option<&str>) -> Result<ModelSpec, CliError> {
        let fail = |section: &'static str, key: Option<&'static str>, message: String| CliError::Config {
            line: text.and_then(|t| locate(t, section, key)),
            message: format!("{section}{}: {message}", key.map(|k| format!(".{k}")).unwrap_or_default()),
        };
        let core = |section: &'static str, key: Option<&'static str>| {
            move |e: capdirac::Error| fail(section, key, e.to_string())
        };
        let p = &self.physics;
        let params = PhysParams::new(p.hbar, p.mass, p.c).map_err(core("physics", None))?;
        let rep = standard_representation(p.dim).map_err(core("physics", Some("dim")))?;
        let s = rep.spinor_dim();
        let mut potential = MatrixPotential::zero(p.dim, s);
        for (i, t) in self.potential.terms.iter().enumerate() {
            let coeff = term_matrix(t, s).map_err(|m| fail("potential", Some("terms"), format!("term {i}: {m}")))?;
            let bump = make_bump_potential(&t.center, t.radius, coeff).map_err(core("potential", Some("terms")))?;
            potential = potential.sum(bump).map_err(core("potential", Some("terms")))?;
        }
        let c = &self.cap;
        if !(c.r1 < c.r2) {
            return Err(fail("cap", Some("r1"), format!("R1 = {} must be below R2 = {}", c.r1, c.r2)));
        }
        let cap = CapSpec::smoothstep(c.r1, c.r2, C64::new(c.strength, c.strength_im), c.dom_const).map_err(core("cap", None))?;
        let g = &self.geometry;
        if !(g.r0 > self.potential.support_radius.max(c.r2)) {
            return Err(fail(
                "geometry",
                Some("r0"),
                format!("R0 = {} must exceed max(R0', R2) = {}", g.r0, self.potential.support_radius.max(c.r2)),
            ));
        }
        let scaling = make_scaling_g(g.r0, g.eta).map_err(core("geometry", None))?;
        let model = ModelSpec::new(params, rep, potential, cap, scaling, self.potential.support_radius)
            .map_err(core("potential", Some("support_radius")))?;
        let expected = match model.regime() {
            Regime::NonIntersecting => RegimeFlag::NonIntersecting,
            Regime::Intersecting => RegimeFlag::Intersecting,
        };
        if expected != g.regime {
            return Err(fail(
                "geometry",
                Some("regime"),
                format!("radii R0' = {} and R1 = {} put the model in the {:?} regime", model.r0_prime, c.r1, expected),
            ));
        }
        let d = &self.distortion;
        for &tau in &d.taus {
            DistortionParam::imaginary(tau, d.eps).map_err(core("distortion", Some("taus")))?;
        }
        if let Some(b) = self.experiment.spectral_box {
            SpectralBox::new(b[0], b[1], b[2], b[3]).map_err(core("experiment", Some("box")))?;
        }
        if self.experiment.ladder.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
            return Err(fail("experiment", Some("ladder"), "every hbar must lie in (0, 1)".into()));
        }
        Ok(model)
    }

    pub fn spectral_box(&self) -> Result<SpectralBox, CliError> {
        let b = self.experiment.spectral_box.ok_or_else(|| CliError::Config {
            line: None,
            message: "experiment.box is required for this command".into(),
        })?;
        SpectralBox::new(b[0], b[1], b[2], b[3]).map_err(|e| CliError::Config { line: None, message: e.to_string() })
    }

    pub fn thetas(&self) -> Result<Vec<DistortionParam>, CliError> {
        self.distortion
            .taus
            .iter()
            .map(|&t| DistortionParam::imaginary(t, self.distortion.eps))
            .collect::<capdirac::Result<_>>()
            .map_err(|e| CliError::Config { line: None, message: e.to_string() })
    }

    pub fn grid_policy(&self) -> GridPolicy {
        GridPolicy { xi_max: self.grid.xi_max, pad: self.grid.pad, min_nodes: self.grid.min_nodes }
    }

    pub fn cap_selection(&self) -> CapSelection {
        match self.experiment.cap_selection {
            SelectionChoice::Narrowest => CapSelection::Narrowest,
            SelectionChoice::BroadestPaired => CapSelection::BroadestPaired,
        }
    }

    pub fn gate_constants(&self) -> GateConstants {
        let g = &self.experiment.gates;
        GateConstants { c: g.c, c0: g.c0, b: g.b, m: g.m, n: g.n, k: g.k }
    }
}

fn term_matrix(t: &PotentialTerm, s: usize) -> Result<SpinMat, String> {
    let mut m = SpinMat::identity(s) * t.scalar;
    if let Some(sig) = t.sigma {
        if s != 2 {
            return Err("sigma coefficients need two-component spinors".into());
        }
        let pauli = pauli_matrices();
        for (p, &v) in pauli.iter().zip(&sig) {
            m += *p * v;
        }
    }
    if let Some(rows) = &t.matrix {
        if rows.len() != s || rows.iter().any(|r| r.len() != s) {
            return Err(format!("matrix must be {s}x{s}"));
        }
        m += SpinMat::from_fn(s, |i, j| C64::new(rows[i][j][0], rows[i][j][1]));
    }
    Ok(m)
}
