//! Flat TOML run configuration with an explicit schema version. Unknown keys
//! are rejected so a manifest always describes the whole run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{mode_forcing, ns_forcing, Model, ModelSpec};
use crate::poly::PolyVectorField;
use crate::sde::{Forcing, Scheme, SpdeConfig};
use crate::spectral::{BasisSpec, Mode, Trig};
use crate::variation::AdjointScheme;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Simulate,
    Variation,
    Malliavin,
    Spectrum,
    Smallball,
    Brackets,
    Qv,
    Events,
    Audit,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Simulate,
        Experiment::Variation,
        Experiment::Malliavin,
        Experiment::Spectrum,
        Experiment::Smallball,
        Experiment::Brackets,
        Experiment::Qv,
        Experiment::Events,
        Experiment::Audit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Variation => "variation",
            Experiment::Malliavin => "malliavin",
            Experiment::Spectrum => "spectrum",
            Experiment::Smallball => "smallball",
            Experiment::Brackets => "brackets",
            Experiment::Qv => "qv",
            Experiment::Events => "events",
            Experiment::Audit => "audit",
        }
    }

    /// The checkable statement an experiment reproduces, by name.
    pub fn anchor(self) -> &'static str {
        match self {
            Experiment::Simulate => "Galerkin SPDE trajectories and the linear (Ornstein-Uhlenbeck) closed forms",
            Experiment::Variation => "duality of the linearized flow and its time-reversed adjoint; Malliavin derivative as a directional derivative",
            Experiment::Malliavin => "forward and adjoint representations of the Malliavin matrix; positivity on bracket-generated subspaces",
            Experiment::Spectrum => "spectrum of the Malliavin covariance matrix",
            Experiment::Smallball => "small-ball estimate for the Malliavin quadratic form on a cone",
            Experiment::Brackets => "growth of the constant-field bracket spans and the lattice spanning condition",
            Experiment::Qv => "quadratic variation of Wiener polynomials and their Ito decomposition",
            Experiment::Events => "pathwise inclusions for small Wiener polynomials and the deterministic Norris-type lemmas",
            Experiment::Audit => "moment assumptions on the solution, the linearized flow and its adjoint",
        }
    }

    /// Sub-checks run when `parts` is empty.
    pub fn default_parts(self) -> &'static [&'static str] {
        match self {
            Experiment::Simulate => &["paths", "ou"],
            Experiment::Variation => &["duality", "fd", "second"],
            Experiment::Malliavin => &["representation", "positivity", "closed-form"],
            Experiment::Spectrum => &["spectrum"],
            Experiment::Smallball => &["smallball"],
            Experiment::Brackets => &["span", "condition"],
            Experiment::Qv => &["qv", "ito"],
            Experiment::Events => &["inclusions", "lemmas"],
            Experiment::Audit => &["moments", "alpha"],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rd,
    Ns,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AdjointChoice {
    #[default]
    Discrete,
    Continuous,
}

impl From<AdjointChoice> for AdjointScheme {
    fn from(a: AdjointChoice) -> Self {
        match a {
            AdjointChoice::Discrete => AdjointScheme::Discrete,
            AdjointChoice::Continuous => AdjointScheme::Continuous,
        }
    }
}

/// What a run is expected to show, for experiments with a two-sided oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Expect {
    #[default]
    Unspecified,
    /// Malliavin matrix on `S` is positive definite.
    Positive,
    /// Malliavin matrix on `S` is singular.
    Degenerate,
    /// Bracket span reaches the whole truncation.
    FullRank,
    /// Bracket span saturates below the truncation.
    Deficient,
}

fn d_one() -> f64 {
    1.0
}
fn d_half() -> f64 {
    0.5
}
fn d_out() -> PathBuf {
    PathBuf::from("out")
}
fn d_threads() -> usize {
    1
}
fn d_directions() -> usize {
    10
}
fn d_bump() -> f64 {
    1e-4
}
fn d_mixed_bump() -> f64 {
    1e-3
}
fn d_rank_tol() -> f64 {
    crate::brackets::DEFAULT_RANK_TOL
}
fn d_bracket_steps() -> usize {
    12
}
fn d_poly_d() -> usize {
    3
}
fn d_poly_degree() -> usize {
    4
}
fn d_event_degrees() -> Vec<usize> {
    vec![1, 2]
}
fn d_p_values() -> Vec<u32> {
    vec![2, 4, 8]
}
fn d_one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    /// Sub-checks to run; empty means the experiment's default set.
    #[serde(default)]
    pub parts: Vec<String>,

    pub model: ModelKind,
    /// Modes per axis.
    pub k: usize,
    #[serde(default = "d_one")]
    pub nu: f64,
    /// `a_0, a_1, …` of the reaction term `Σ a_j u^j` (rd only).
    #[serde(default)]
    pub rd_coeffs: Vec<f64>,
    /// Forced wave vectors (ns); both signs name the same cos/sin pair.
    #[serde(default)]
    pub z0: Vec<[i32; 2]>,
    /// Forced basis modes, as mode names (see `parse_mode`).
    #[serde(default)]
    pub forced_modes: Vec<String>,
    #[serde(default = "d_one")]
    pub noise_amplitude: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub adjoint: AdjointChoice,
    #[serde(default)]
    pub u0_modes: Vec<String>,
    #[serde(default)]
    pub u0_values: Vec<f64>,

    pub t_final: f64,
    pub steps: usize,
    /// Start of the audited window `[T_0, T]` as a fraction of `T`.
    #[serde(default = "d_half")]
    pub t_star_fraction: f64,

    /// Basis of the subspace `S`, as mode names.
    #[serde(default)]
    pub s_modes: Vec<String>,
    #[serde(default = "d_half")]
    pub delta: f64,
    #[serde(default)]
    pub eps_grid: Vec<f64>,

    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_out")]
    pub out_dir: PathBuf,
    #[serde(default = "d_threads")]
    pub threads: usize,
    #[serde(default)]
    pub expect: Expect,

    // simulate
    #[serde(default = "d_one_usize")]
    pub trajectory_replicas: usize,
    // variation
    #[serde(default)]
    pub fd_seeds: usize,
    #[serde(default = "d_directions")]
    pub directions: usize,
    #[serde(default = "d_bump")]
    pub bump: f64,
    #[serde(default = "d_mixed_bump")]
    pub mixed_bump: f64,
    // malliavin
    #[serde(default)]
    pub refine_seeds: usize,
    // brackets
    #[serde(default = "d_bracket_steps")]
    pub max_bracket_steps: usize,
    #[serde(default = "d_rank_tol")]
    pub rank_tol: f64,
    // qv
    #[serde(default = "d_poly_d")]
    pub poly_d: usize,
    #[serde(default = "d_poly_degree")]
    pub poly_degree: usize,
    #[serde(default)]
    pub ito_replicas: usize,
    #[serde(default)]
    pub ito_steps: usize,
    // events
    #[serde(default = "d_event_degrees")]
    pub event_degrees: Vec<usize>,
    #[serde(default)]
    pub lemma_trials: usize,
    // audit
    #[serde(default = "d_p_values")]
    pub p_values: Vec<u32>,
}

/// Parses `"7"` (0-based basis index), `"sin(3)"` (Dirichlet sine of
/// wavenumber 3) or `"cos(2,1)"` / `"sin(2,1)"` (torus Fourier modes).
pub fn parse_mode(basis: &BasisSpec, name: &str) -> Result<usize> {
    let s = name.trim();
    let bad = || Error::Config(format!("mode {name:?} is not in the truncation"));
    if let Ok(i) = s.parse::<usize>() {
        return if i < basis.dim() { Ok(i) } else { Err(bad()) };
    }
    let (head, rest) = s
        .split_once('(')
        .ok_or_else(|| Error::Config(format!("cannot parse mode {name:?}")))?;
    let args: Vec<i32> = rest
        .strip_suffix(')')
        .ok_or_else(|| Error::Config(format!("cannot parse mode {name:?}")))?
        .split(',')
        .map(|a| {
            a.trim()
                .parse::<i32>()
                .map_err(|_| Error::Config(format!("cannot parse mode {name:?}")))
        })
        .collect::<Result<_>>()?;
    let trig = match head.trim() {
        "cos" => Trig::Cos,
        "sin" => Trig::Sin,
        _ => return Err(Error::Config(format!("cannot parse mode {name:?}"))),
    };
    match (args.as_slice(), trig) {
        ([k], Trig::Sin) if *k > 0 => basis
            .modes
            .iter()
            .position(|m| *m == Mode::Sine(*k as u32))
            .ok_or_else(bad),
        ([a, b], t) => basis.fourier_index(*a, *b, t).ok_or_else(bad),
        _ => Err(bad()),
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex_sha256(bytes)
}

/// Seed of replica `index` of the stream `tag`: the first 8 bytes of
/// `sha256(master ‖ tag ‖ 0 ‖ index)`. Independent of the replica count, so
/// runs with more replicas extend runs with fewer.
pub fn replica_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 has 32 bytes"))
}

/// `key=value` with `value` read as a TOML value, or as a bare string when it
/// does not parse.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    let key = k.trim().to_string();
    if key.is_empty() {
        return Err(Error::Config(format!("override {s:?} has an empty key")));
    }
    let raw = v.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key, value))
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides, and validates.
    pub fn from_toml(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a `.json` path is taken as a run manifest and its
    /// recorded config is used.
    pub fn load(path: &Path, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: serde_json::Value = serde_json::from_str(&text)?;
            let cfg = m.get("config").and_then(|c| c.as_str()).ok_or_else(|| {
                Error::Config(format!("{} is not a run manifest", path.display()))
            })?;
            return Self::from_toml(cfg, overrides);
        }
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("{e}")))
    }

    /// Hash of the canonical TOML form; keys the per-replica cache.
    pub fn hash(&self) -> Result<String> {
        Ok(hex_sha256(self.to_toml()?.as_bytes()))
    }

    pub fn parts(&self) -> Vec<String> {
        if self.parts.is_empty() {
            self.experiment
                .default_parts()
                .iter()
                .map(|s| s.to_string())
                .collect()
        } else {
            self.parts.clone()
        }
    }

    pub fn wants(&self, part: &str) -> bool {
        self.parts().iter().any(|p| p == part)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!(
                "schema_version {} is not {SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        let allowed = self.experiment.default_parts();
        if let Some(p) = self.parts.iter().find(|p| !allowed.contains(&p.as_str())) {
            return fail(format!(
                "part {p:?} is not one of {allowed:?} for {}",
                self.experiment
            ));
        }
        if self.k == 0 || !(self.nu > 0.0) || !(self.t_final > 0.0) || self.steps == 0 {
            return fail("k, nu, t_final and steps must be positive".into());
        }
        if self.replicas == 0 || self.threads == 0 {
            return fail("replicas and threads must be at least 1".into());
        }
        if !(self.noise_amplitude.is_finite())
            || !(self.bump > 0.0)
            || !(self.mixed_bump > 0.0)
            || !(self.rank_tol > 0.0)
        {
            return fail(
                "noise_amplitude, bump, mixed_bump and rank_tol must be positive and finite".into(),
            );
        }
        if !(self.t_star_fraction >= 0.0 && self.t_star_fraction < 1.0) {
            return fail("t_star_fraction must lie in [0, 1)".into());
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return fail("delta must lie in (0, 1]".into());
        }
        if self.eps_grid.iter().any(|e| !(*e > 0.0))
            || self.eps_grid.windows(2).any(|w| w[1] >= w[0])
        {
            return fail("eps_grid must be positive and strictly decreasing".into());
        }
        if self.u0_modes.len() != self.u0_values.len() {
            return fail("u0_modes and u0_values differ in length".into());
        }
        if self.p_values.contains(&0) || self.event_degrees.iter().any(|&n| n == 0 || n > 4) {
            return fail("p_values must be >= 1 and event_degrees in 1..=4".into());
        }
        match self.model {
            ModelKind::Rd => {
                if !self.z0.is_empty() {
                    return fail("z0 applies to the ns model only".into());
                }
            }
            ModelKind::Ns => {
                if !self.rd_coeffs.is_empty() {
                    return fail("rd_coeffs applies to the rd model only".into());
                }
            }
        }
        // S and the forcing must live in the truncation
        let basis = self.basis()?;
        for m in self
            .s_modes
            .iter()
            .chain(&self.forced_modes)
            .chain(&self.u0_modes)
        {
            parse_mode(&basis, m)?;
        }
        let mut seen = Vec::new();
        for m in &self.s_modes {
            let i = parse_mode(&basis, m)?;
            if seen.contains(&i) {
                return fail(format!("s_modes repeats mode {m:?}"));
            }
            seen.push(i);
        }
        self.forcing(&basis)?;
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model {
            ModelKind::Rd => ModelSpec::Rd {
                k: self.k,
                nu: self.nu,
                a: self.rd_coeffs.clone(),
            },
            ModelKind::Ns => ModelSpec::Ns {
                k: self.k,
                nu: self.nu,
            },
        }
    }

    pub fn basis(&self) -> Result<std::sync::Arc<BasisSpec>> {
        match self.model {
            ModelKind::Rd => BasisSpec::dirichlet(self.k, self.nu),
            ModelKind::Ns => BasisSpec::torus(self.k, self.nu),
        }
    }

    /// Forcing directions `g_k`: the `z0` pairs followed by `forced_modes`.
    pub fn forcing(&self, basis: &BasisSpec) -> Result<Vec<DVector<f64>>> {
        let mut gs = Vec::new();
        if !self.z0.is_empty() {
            let z: Vec<(i32, i32)> = self.z0.iter().map(|p| (p[0], p[1])).collect();
            gs.extend(ns_forcing(basis, &z, self.noise_amplitude)?);
        }
        let modes: Vec<usize> = self
            .forced_modes
            .iter()
            .map(|m| parse_mode(basis, m))
            .collect::<Result<_>>()?;
        gs.extend(mode_forcing(basis, &modes, self.noise_amplitude)?);
        if gs.is_empty() {
            return Err(Error::Config("no forcing: set z0 or forced_modes".into()));
        }
        Ok(gs)
    }

    pub fn build_model(&self) -> Result<Model> {
        Model::build(&self.model_spec())
    }

    /// Galerkin system and initial condition.
    pub fn spde(&self) -> Result<(SpdeConfig, DVector<f64>)> {
        let model = self.build_model()?;
        let g = self.forcing(&model.basis)?;
        let mut u0 = DVector::zeros(model.dim());
        for (m, v) in self.u0_modes.iter().zip(&self.u0_values) {
            u0[parse_mode(&model.basis, m)?] += v;
        }
        let cfg = SpdeConfig {
            basis: model.basis,
            nonlinear: model.nonlinear,
            forcing: Forcing::Zero,
            g,
            scheme: self.scheme,
        };
        Ok((cfg, u0))
    }

    /// Orthonormal basis of `S` (unit vectors of the named modes).
    pub fn subspace(&self, basis: &BasisSpec) -> Result<Vec<DVector<f64>>> {
        if self.s_modes.is_empty() {
            return Err(Error::Config("s_modes is empty".into()));
        }
        self.s_modes
            .iter()
            .map(|m| {
                let mut v = DVector::zeros(basis.dim());
                v[parse_mode(basis, m)?] = 1.0;
                Ok(v)
            })
            .collect()
    }
}

/// True when the drift is `-L` alone, so every statistic has a closed form.
pub fn is_linear(cfg: &SpdeConfig) -> bool {
    cfg.nonlinear.is_constant()
        && cfg.nonlinear.constant.is_none()
        && matches!(cfg.forcing, Forcing::Zero)
}

/// Same system with the nonlinearity removed.
pub fn linearized_control(cfg: &SpdeConfig) -> SpdeConfig {
    SpdeConfig {
        nonlinear: PolyVectorField::zero(cfg.dim()),
        forcing: Forcing::Zero,
        ..cfg.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RD: &str = r#"
schema_version = 1
experiment = "variation"
model = "rd"
k = 16
rd_coeffs = [0.0, 0.0, 0.0, -1.0]
forced_modes = ["sin(1)", "sin(2)"]
noise_amplitude = 2.0
t_final = 1.0
steps = 1024
replicas = 4
"#;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let c = ExperimentConfig::from_toml(RD, &[]).unwrap();
        assert_eq!(c.experiment, Experiment::Variation);
        assert_eq!(c.parts(), vec!["duality", "fd", "second"]);
        let bad = format!("{RD}\nstepz = 3\n");
        assert!(matches!(
            ExperimentConfig::from_toml(&bad, &[]),
            Err(Error::Config(_))
        ));
        let v2 = RD.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml(&v2, &[]).is_err());
    }

    #[test]
    fn overrides_and_round_trip() {
        let o = vec![
            parse_override("steps=2048").unwrap(),
            parse_override("scheme=semi-implicit").unwrap(),
        ];
        let c = ExperimentConfig::from_toml(RD, &o).unwrap();
        assert_eq!(c.steps, 2048);
        assert_eq!(c.scheme, Scheme::SemiImplicit);
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash().unwrap(), c.hash().unwrap());
        assert!(ExperimentConfig::from_toml(RD, &[parse_override("replicas=0").unwrap()]).is_err());
        assert!(ExperimentConfig::from_toml(
            RD,
            &[parse_override("parts=[\"smallball\"]").unwrap()]
        )
        .is_err());
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn mode_names() {
        let d = BasisSpec::dirichlet(4, 1.0).unwrap();
        assert_eq!(parse_mode(&d, "sin(3)").unwrap(), 2);
        assert_eq!(parse_mode(&d, "1").unwrap(), 1);
        assert!(parse_mode(&d, "sin(5)").is_err());
        assert!(parse_mode(&d, "cos(1)").is_err());
        let t = BasisSpec::torus(4, 1.0).unwrap();
        let i = parse_mode(&t, "cos(2,1)").unwrap();
        assert_eq!(t.modes[i], Mode::Fourier(2, 1, Trig::Cos));
        assert_eq!(
            parse_mode(&t, "sin(-2,-1)").unwrap(),
            parse_mode(&t, "sin(2,1)").unwrap()
        );
        assert!(parse_mode(&t, "cos(9,9)").is_err());
    }

    #[test]
    fn subspace_outside_truncation_is_rejected_before_compute() {
        let o = vec![parse_override("s_modes=[\"sin(40)\"]").unwrap()];
        assert!(matches!(
            ExperimentConfig::from_toml(RD, &o),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = replica_seed(1, "audit", 0);
        assert_eq!(a, replica_seed(1, "audit", 0));
        assert_ne!(a, replica_seed(1, "audit", 1));
        assert_ne!(a, replica_seed(2, "audit", 0));
        assert_ne!(a, replica_seed(1, "events", 0));
    }
}
