//! Scenario configuration: a sectioned TOML file, every key optional with a
//! documented default, unknown keys rejected.

use hjbflow_core::flows::FlowKind;
use hjbflow_core::fnspace::{make_grid, Grid1D, MeasureFlow, TimeGrid};
use hjbflow_core::generator::{Coef, GeneratorSpec, Kernel};
use hjbflow_core::hjb::{HamiltonianSpec, TerminalSpec};
use hjbflow_core::propagator::Scheme;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// A validation failure with the dotted path of the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn bad(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub grid: GridSection,
    pub time: TimeSection,
    pub generator: GeneratorSection,
    pub hamiltonian: HamiltonianSection,
    pub terminal: TerminalSection,
    pub flows: FlowsSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub n_points: usize,
    pub half_width: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n_points: 64, half_width: PI }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub horizon: f64,
    pub steps: usize,
    pub substeps: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 50, substeps: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    /// heat | diffusion | stable | drift_only
    pub name: String,
    /// σ² of heat; base σ² of diffusion.
    pub sigma_sq: f64,
    /// diffusion: σ²(x) = sigma_sq·(1 + modulation·cos(πx/L)).
    pub modulation: f64,
    /// stable: order α ∈ (0, 2).
    pub order: f64,
    pub intensity: f64,
    /// Constant base drift b₀.
    pub drift: f64,
    /// zero | cos | gaussian: interaction kernel K of b = b₀ + K*μ.
    pub kernel: String,
    pub kernel_amplitude: f64,
    pub kernel_width: f64,
    /// crank_nicolson | spectral_exact
    pub scheme: String,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            name: "heat".into(),
            sigma_sq: 2.0,
            modulation: 0.0,
            order: 1.5,
            intensity: 1.0,
            drift: 0.0,
            kernel: "zero".into(),
            kernel_amplitude: 0.0,
            kernel_width: 1.0,
            scheme: "crank_nicolson".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HamiltonianSection {
    /// zero | quadratic | legendre | finite
    pub kind: String,
    /// Running cost J = alpha − theta·u²; drift h = beta·u (quadratic) or u.
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    /// legendre: control interval.
    pub control_min: f64,
    pub control_max: f64,
    /// finite: control set.
    pub controls: Vec<f64>,
    /// zero | cos | gaussian: additive mean-field term K_H*μ.
    pub coupling: String,
    pub coupling_amplitude: f64,
    pub coupling_width: f64,
}

impl Default for HamiltonianSection {
    fn default() -> Self {
        Self {
            kind: "quadratic".into(),
            alpha: 0.0,
            beta: 1.0,
            theta: 0.5,
            control_min: -2.0,
            control_max: 2.0,
            controls: vec![-1.0, 0.0, 1.0],
            coupling: "zero".into(),
            coupling_amplitude: 0.0,
            coupling_width: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerminalSection {
    /// zero | cos | sin: amplitude·cos(wavenumber·πx/L) and so on.
    pub field: String,
    pub amplitude: f64,
    pub wavenumber: f64,
    /// Adds coupling_amplitude·cos(π(x − y)/L) * μ_T to the terminal data.
    pub coupling: bool,
    pub coupling_amplitude: f64,
}

impl Default for TerminalSection {
    fn default() -> Self {
        Self { field: "cos".into(), amplitude: 1.0, wavenumber: 1.0, coupling: false, coupling_amplitude: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// uniform | bump | two_bump | translating
    pub kind: String,
    pub center: f64,
    pub second_center: f64,
    pub weight: f64,
    pub velocity: f64,
    pub concentration: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { kind: "bump".into(), center: 0.0, second_center: 1.5, weight: 0.5, velocity: 0.0, concentration: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowsSection {
    /// Flow of solve-hjb, first flow of sensitivity, μ0 source of mfg.
    pub mu1: FlowConfig,
    pub mu2: FlowConfig,
    pub alpha_grid: Vec<f64>,
    /// Seeded random translating-bump pairs for the feedback study.
    pub random_pairs: usize,
}

impl Default for FlowsSection {
    fn default() -> Self {
        Self {
            mu1: FlowConfig::default(),
            mu2: FlowConfig { kind: "translating".into(), center: 1.0, velocity: 0.5, ..FlowConfig::default() },
            alpha_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            random_pairs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// solve-hjb | sensitivity | mfg | verify
    pub command: String,
    pub tol: f64,
    pub max_iters: usize,
    pub max_split_depth: usize,
    pub damping: f64,
    pub mfg_tol: f64,
    pub mfg_max_iters: usize,
    pub seed: u64,
    /// propagator | hjb | sensitivity | mfg | all
    pub suite: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            command: "solve-hjb".into(),
            tol: 1e-8,
            max_iters: 100,
            max_split_depth: 6,
            damping: 0.5,
            mfg_tol: 1e-6,
            mfg_max_iters: 100,
            seed: 0,
            suite: "all".into(),
        }
    }
}

pub const COMMANDS: [&str; 4] = ["solve-hjb", "sensitivity", "mfg", "verify"];
pub const SUITES: [&str; 5] = ["propagator", "hjb", "sensitivity", "mfg", "all"];

/// Reads a TOML config, or the `config` object of a JSON manifest.
pub fn load(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| bad("", format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| bad("", format!("{}: {e}", path.display())))?;
        let inner = value.get("config").cloned().unwrap_or(value);
        serde_json::from_value(inner).map_err(|e| bad("", format!("{}: {e}", path.display())))
    } else {
        parse_toml(&text)
    }
}

pub fn parse_toml(text: &str) -> Result<ScenarioConfig, ConfigError> {
    toml::from_str(text).map_err(|e| bad("", e.message().to_string()).with_span(text, e.span()))
}

impl ConfigError {
    fn with_span(mut self, text: &str, span: Option<std::ops::Range<usize>>) -> Self {
        if let Some(r) = span {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            self.message = format!("line {line}: {}", self.message);
        }
        self
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(path, format!("must be a positive number (got {v})")))
    }
}

fn one_of(path: &str, v: &str, names: &[&str]) -> Result<(), ConfigError> {
    if names.contains(&v) {
        Ok(())
    } else {
        Err(bad(path, format!("unknown name {v:?}; expected one of {}", names.join(", "))))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid()?;
        self.time_grid()?;
        if self.time.substeps == 0 {
            return Err(bad("time.substeps", "must be ≥ 1"));
        }
        self.generator()?;
        self.scheme()?;
        self.hamiltonian()?;
        self.terminal()?;
        for (key, f) in [("flows.mu1", &self.flows.mu1), ("flows.mu2", &self.flows.mu2)] {
            flow_kind(key, f)?;
        }
        let a = &self.flows.alpha_grid;
        if a.len() < 2 || a[0] != 0.0 || a[a.len() - 1] != 1.0 || !a.windows(2).all(|w| w[0] < w[1]) {
            return Err(bad("flows.alpha_grid", "must increase strictly from 0 to 1"));
        }
        let r = &self.run;
        one_of("run.command", &r.command, &COMMANDS)?;
        one_of("run.suite", &r.suite, &SUITES)?;
        positive("run.tol", r.tol)?;
        positive("run.mfg_tol", r.mfg_tol)?;
        if !(r.damping > 0.0 && r.damping <= 1.0) {
            return Err(bad("run.damping", format!("must lie in (0, 1] (got {})", r.damping)));
        }
        if r.max_iters == 0 {
            return Err(bad("run.max_iters", "must be ≥ 1"));
        }
        if r.mfg_max_iters == 0 {
            return Err(bad("run.mfg_max_iters", "must be ≥ 1"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D, ConfigError> {
        make_grid(self.grid.n_points, self.grid.half_width).map_err(|e| bad("grid", e.to_string()))
    }

    pub fn time_grid(&self) -> Result<TimeGrid, ConfigError> {
        positive("time.horizon", self.time.horizon)?;
        if self.time.steps == 0 {
            return Err(bad("time.steps", "must be ≥ 1"));
        }
        TimeGrid::uniform(self.time.horizon, self.time.steps).map_err(|e| bad("time", e.to_string()))
    }

    pub fn scheme(&self) -> Result<Scheme, ConfigError> {
        match self.generator.scheme.as_str() {
            "crank_nicolson" => Ok(Scheme::CrankNicolson),
            "spectral_exact" => Ok(Scheme::SpectralExact),
            other => Err(bad(
                "generator.scheme",
                format!("unknown name {other:?}; expected one of crank_nicolson, spectral_exact"),
            )),
        }
    }

    pub fn generator(&self) -> Result<GeneratorSpec, ConfigError> {
        let g = &self.generator;
        let err = |e: hjbflow_core::Error| bad("generator", e.to_string());
        let base = match g.name.as_str() {
            "heat" => GeneratorSpec::heat(g.sigma_sq).map_err(err)?,
            "diffusion" => {
                if g.modulation.abs() >= 1.0 {
                    return Err(bad("generator.modulation", "must satisfy |modulation| < 1"));
                }
                let (s, m, w) = (g.sigma_sq, g.modulation, PI / self.grid.half_width);
                GeneratorSpec::diffusion(Coef::var(move |_, x| s * (1.0 + m * (w * x).cos()))).map_err(err)?
            }
            "stable" => {
                GeneratorSpec::stable_like(Coef::Const(g.intensity), Coef::Const(g.order)).map_err(err)?
            }
            "drift_only" => GeneratorSpec::drift_only(),
            other => {
                return Err(bad(
                    "generator.name",
                    format!("unknown name {other:?}; expected one of heat, diffusion, stable, drift_only"),
                ))
            }
        };
        let kernel = kernel("generator.kernel", &g.kernel, g.kernel_amplitude, g.kernel_width, self.grid.half_width)?;
        Ok(base.with_drift(Coef::Const(g.drift)).with_kernel(kernel))
    }

    pub fn hamiltonian(&self) -> Result<HamiltonianSpec, ConfigError> {
        let h = &self.hamiltonian;
        let err = |e: hjbflow_core::Error| bad("hamiltonian", e.to_string());
        let (alpha, theta) = (h.alpha, h.theta);
        let spec = match h.kind.as_str() {
            "zero" => HamiltonianSpec::zero(),
            "quadratic" => HamiltonianSpec::quadratic(Coef::Const(alpha), Coef::Const(h.beta), Coef::Const(theta))
                .map_err(err)?,
            "legendre" => {
                positive("hamiltonian.theta", theta)?;
                HamiltonianSpec::legendre(move |_, _, u| alpha - theta * u * u, (h.control_min, h.control_max))
                    .map_err(err)?
            }
            "finite" => HamiltonianSpec::finite(h.controls.clone(), |_, _, u| u, move |_, _, u| alpha - theta * u * u)
                .map_err(err)?,
            other => {
                return Err(bad(
                    "hamiltonian.kind",
                    format!("unknown name {other:?}; expected one of zero, quadratic, legendre, finite"),
                ))
            }
        };
        let k = kernel("hamiltonian.coupling", &h.coupling, h.coupling_amplitude, h.coupling_width, self.grid.half_width)?;
        Ok(spec.with_coupling(k))
    }

    pub fn terminal(&self) -> Result<TerminalSpec, ConfigError> {
        let t = &self.terminal;
        let (a, w) = (t.amplitude, t.wavenumber * PI / self.grid.half_width);
        let base = match t.field.as_str() {
            "zero" => Coef::Const(0.0),
            "cos" => Coef::var(move |_, x| a * (w * x).cos()),
            "sin" => Coef::var(move |_, x| a * (w * x).sin()),
            other => {
                return Err(bad("terminal.field", format!("unknown name {other:?}; expected one of zero, cos, sin")))
            }
        };
        let coupling = if t.coupling { Kernel::cos(t.coupling_amplitude, self.grid.half_width) } else { Kernel::Zero };
        Ok(TerminalSpec::new(base).with_coupling(coupling))
    }

    pub fn flow(&self, which: usize) -> Result<MeasureFlow, ConfigError> {
        let (key, f) = match which {
            1 => ("flows.mu1", &self.flows.mu1),
            _ => ("flows.mu2", &self.flows.mu2),
        };
        flow_kind(key, f)?.build(self.grid()?, &self.time_grid()?).map_err(|e| bad(key, e.to_string()))
    }
}

fn kernel(path: &str, name: &str, amplitude: f64, width: f64, half_width: f64) -> Result<Kernel, ConfigError> {
    match name {
        "zero" => Ok(Kernel::Zero),
        "cos" => Ok(Kernel::cos(amplitude, half_width)),
        "gaussian" => {
            positive(&format!("{path}_width"), width)?;
            Ok(Kernel::Gaussian { amplitude, width })
        }
        other => Err(bad(path, format!("unknown name {other:?}; expected one of zero, cos, gaussian"))),
    }
}

fn flow_kind(path: &str, f: &FlowConfig) -> Result<FlowKind, ConfigError> {
    if !(f.concentration.is_finite() && f.concentration >= 0.0) {
        return Err(bad(&format!("{path}.concentration"), "must be a nonnegative number"));
    }
    match f.kind.as_str() {
        "uniform" => Ok(FlowKind::Uniform),
        "bump" => Ok(FlowKind::Bump { center: f.center, concentration: f.concentration }),
        "two_bump" => {
            if !(0.0..=1.0).contains(&f.weight) {
                return Err(bad(&format!("{path}.weight"), "must lie in [0, 1]"));
            }
            Ok(FlowKind::TwoBump {
                centers: (f.center, f.second_center),
                concentration: f.concentration,
                weight: f.weight,
            })
        }
        "translating" => Ok(FlowKind::Translating {
            center: f.center,
            velocity: f.velocity,
            concentration: f.concentration,
        }),
        other => Err(bad(
            &format!("{path}.kind"),
            format!("unknown name {other:?}; expected one of uniform, bump, two_bump, translating"),
        )),
    }
}
