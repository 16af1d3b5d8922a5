//! Scenario runner: TOML configuration, correlation sweeps, the oracle suite and
//! residual diagnostics. Output is CSV with `#` metadata lines.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlators::{
    bound_check, evaluate, CorrelationResult, DetectorSetting, Picture, Scenario, TransformCase,
};
use crate::error::{Error, Result};
use crate::fock_oracle::{
    discrete_coincident, discrete_four_term, discrete_norm, epr_oracle, inner, DiscreteGrid, FockSpace, LadderKind,
    Mode, OscillatorTruncation, SparseMatrix,
};
use crate::measure::{invariant_node_set, DetectorRegion, QuadratureSpec};
use crate::spinor_tetrad::{
    flagpole_residual, gauge_reduced_covariance_residual, null_tetrad, omicron_covariance_residual,
    tetrad_covariance_residual, wigner_phase, LorentzMap, NullMomentum, Vec3,
};
use crate::states::{
    bell_condition_residual, covariance_residual, fit_theta, symmetry_residual, theta_wigner_residual, BellKind,
    Envelope, GeneralForm, Helicity, OscillatorCount, ThetaField, ThetaKind, TwoPhotonAmplitude,
};
use crate::vacuum::{normalize, VacuumFamily};
use crate::wrap_angle;

/// Environment variable overriding the worker-thread count.
pub const THREADS_ENV: &str = "PHOTON_EPR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "photon-epr", version, about = "Two-photon EPR correlators and their Fock-space oracle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output file (overrides `output.path`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Quadrature / sampling seed (overrides `quadrature.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (overrides the environment variable).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the configured scenario over its sweep and write CSV.
    Correlate { config: PathBuf },
    /// Run the Fock-space oracle suite.
    OracleVerify { config: PathBuf },
    /// Report geometric and state residuals.
    Diagnose { config: PathBuf },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    Bell11,
    Bell12,
    Bell21,
    Bell22,
    SpinorProduct,
    TetradTable,
}

impl StateKind {
    fn bell(self) -> Option<BellKind> {
        match self {
            StateKind::Bell11 => Some(BellKind::Bell11),
            StateKind::Bell12 => Some(BellKind::Bell12),
            StateKind::Bell21 => Some(BellKind::Bell21),
            StateKind::Bell22 => Some(BellKind::Bell22),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvelopeConfig {
    #[default]
    Unit,
    Regions,
    PairGaussian { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ThetaConfig {
    /// Least-squares cone-linear field on the two detector regions.
    Fit,
    Constant { theta0: f64 },
    Azimuthal { theta0: f64, slope: f64 },
    /// Rows of `[x, y, z, theta]`.
    Tabulated { points: Vec<[f64; 4]> },
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum CountConfig {
    Finite(u64),
    Marker(String),
}

impl Default for CountConfig {
    fn default() -> Self {
        CountConfig::Finite(2)
    }
}

impl CountConfig {
    fn resolve(&self) -> Result<OscillatorCount> {
        match self {
            CountConfig::Finite(n) => OscillatorCount::new(*n),
            CountConfig::Marker(s) if s == "inf" => Ok(OscillatorCount::Infinite),
            CountConfig::Marker(s) => Err(Error::Config(format!("scenario.n_osc: expected an integer or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub axis: Vec3,
    pub half_angle: f64,
    /// `[low, high]`, in the unit of the vacuum scale.
    pub freq: [f64; 2],
    pub angle: f64,
}

impl DetectorConfig {
    fn region(&self, name: &str) -> Result<DetectorRegion> {
        DetectorRegion::new(self.axis, self.half_angle, self.freq[0], self.freq[1])
            .map_err(|e| Error::Config(format!("scenario.{name}: {e}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseKind {
    #[default]
    Rest,
    Joint,
    AliceOnly,
    BobOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PictureConfig {
    #[default]
    Detector,
    Vacuum,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapConfig {
    Boost { rapidity: f64, axis: Vec3 },
    Rotation { angle: f64, axis: Vec3 },
}

impl MapConfig {
    fn build(&self) -> Result<LorentzMap> {
        match *self {
            MapConfig::Boost { rapidity, axis } => LorentzMap::boost(rapidity, axis),
            MapConfig::Rotation { angle, axis } => LorentzMap::rotation(angle, axis),
        }
    }

    fn with_parameter(&self, x: f64) -> MapConfig {
        match *self {
            MapConfig::Boost { axis, .. } => MapConfig::Boost { rapidity: x, axis },
            MapConfig::Rotation { axis, .. } => MapConfig::Rotation { angle: x, axis },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    #[serde(default)]
    pub case: CaseKind,
    #[serde(default)]
    pub picture: PictureConfig,
    #[serde(default)]
    pub map: Option<MapConfig>,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub state: StateKind,
    /// `tetrad-table` coefficients `[s][s'] = [re, im]`, index 0 is `+`.
    #[serde(default)]
    pub table: Option<[[[f64; 2]; 2]; 2]>,
    #[serde(default)]
    pub envelope: EnvelopeConfig,
    #[serde(default)]
    pub theta: Option<ThetaConfig>,
    pub vacuum: VacuumFamily,
    #[serde(default)]
    pub n_osc: CountConfig,
    pub alice: DetectorConfig,
    pub bob: DetectorConfig,
    #[serde(default)]
    pub transform: TransformConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    Beta,
    Alpha,
    Rapidity,
    N,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl SweepConfig {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.count == 0 || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::Config("sweep: count must be >= 1 and bounds finite".into()));
        }
        if self.count == 1 {
            return Ok(vec![self.start]);
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        Ok((0..self.count).map(|i| self.start + step * i as f64).collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub freq: f64,
    pub dir: Vec3,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleState {
    /// Seeded random symmetric table.
    #[default]
    Random,
    Bell11,
    Bell12,
    Bell21,
    Bell22,
    SpinorProduct,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub cells: Vec<CellConfig>,
    /// Vacuum density per cell (rescaled to unit total).
    pub z: Vec<f64>,
    pub n_osc: Vec<usize>,
    pub cutoff: usize,
    pub state: OracleState,
    pub table_seed: u64,
    pub alice: Vec<usize>,
    pub bob: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    /// Second subset pair, overlapping, for the coincident-term check.
    pub overlap_alice: Vec<usize>,
    pub overlap_bob: Vec<usize>,
    /// `[cell, factor]`: scales one weight on the reference side of the commutator checks.
    pub weight_fault: Option<(usize, f64)>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            cells: vec![
                CellConfig { freq: 1.0, dir: [1.0, 0.0, 0.0], weight: 0.7 },
                CellConfig { freq: 1.5, dir: [0.0, 1.0, 0.0], weight: 0.4 },
                CellConfig { freq: 0.8, dir: [0.0, 0.0, 1.0], weight: 1.1 },
            ],
            z: vec![0.3, 0.9, 0.5],
            n_osc: vec![1, 2, 3],
            cutoff: 2,
            state: OracleState::Random,
            table_seed: 7,
            alice: vec![0],
            bob: vec![1, 2],
            alpha: 0.3,
            beta: 1.1,
            overlap_alice: vec![0, 1],
            overlap_bob: vec![1, 2],
            weight_fault: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub samples: usize,
    pub seed: u64,
    pub max_rapidity: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self { samples: 200, seed: 1, max_rapidity: 1.0 }
    }
}

/// Parses a configuration document; errors carry line/field context.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<(RunConfig, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok((parse_config(&text)?, text))
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Everything a sweep point needs, resolved from the configuration.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub scenario: Scenario,
    pub map_config: Option<MapConfig>,
}

fn amplitude_for(cfg: &ScenarioConfig, ra: &DetectorRegion, rb: &DetectorRegion) -> Result<TwoPhotonAmplitude> {
    let envelope = match cfg.envelope {
        EnvelopeConfig::Unit => Envelope::Unit,
        EnvelopeConfig::Regions => Envelope::Regions(vec![*ra, *rb]),
        EnvelopeConfig::PairGaussian { scale } => {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::Config(format!("scenario.envelope.scale must be positive, got {scale}")));
            }
            Envelope::PairGaussian { scale }
        }
    };
    if cfg.table.is_some() && cfg.state != StateKind::TetradTable {
        return Err(Error::Config("scenario.table is only valid with state = \"tetrad-table\"".into()));
    }
    Ok(match cfg.state {
        StateKind::SpinorProduct => TwoPhotonAmplitude::general(GeneralForm::SpinorProduct, envelope),
        StateKind::TetradTable => {
            let t = cfg
                .table
                .ok_or_else(|| Error::Config("state = \"tetrad-table\" needs scenario.table".into()))?;
            let coeffs = t.map(|row| row.map(|[re, im]| C64::new(re, im)));
            TwoPhotonAmplitude::general(GeneralForm::TetradTable { coeffs }, envelope)
        }
        other => TwoPhotonAmplitude::bell(other.bell().expect("bell state"), envelope),
    })
}

fn theta_for(
    cfg: &ScenarioConfig,
    amp: &TwoPhotonAmplitude,
    ra: &DetectorRegion,
    rb: &DetectorRegion,
    spec: &QuadratureSpec,
) -> Result<Option<ThetaField>> {
    let Some(kind) = cfg.state.bell() else {
        if cfg.theta.is_some() {
            return Err(Error::Config("scenario.theta applies to Bell states only".into()));
        }
        return Ok(None);
    };
    let field = match cfg.theta.clone().unwrap_or(ThetaConfig::Fit) {
        ThetaConfig::Fit => fit_theta(kind, amp, ra, rb, spec)?.0,
        ThetaConfig::Constant { theta0 } => ThetaField::constant(theta0),
        ThetaConfig::Azimuthal { theta0, slope } => ThetaField::new(ThetaKind::Azimuthal { theta0, slope })?,
        ThetaConfig::Tabulated { points } => {
            let mut pts = Vec::with_capacity(points.len());
            for [x, y, z, t] in points {
                let n = (x * x + y * y + z * z).sqrt();
                if !(n > 0.0) {
                    return Err(Error::Config("scenario.theta.points: zero direction".into()));
                }
                pts.push(([x / n, y / n, z / n], t));
            }
            ThetaField::new(ThetaKind::Tabulated { points: pts })?
        }
    };
    Ok(Some(field))
}

pub fn resolve(cfg: &RunConfig) -> Result<Resolved> {
    let sc = &cfg.scenario;
    let spec = cfg.quadrature;
    spec.validate()?;
    let ra = sc.alice.region("alice")?;
    let rb = sc.bob.region("bob")?;
    let vacuum = normalize(sc.vacuum, &spec)?;
    let amplitude = amplitude_for(sc, &ra, &rb)?;
    let theta = theta_for(sc, &amplitude, &ra, &rb, &spec)?;
    let map = match (sc.transform.case, &sc.transform.map) {
        (CaseKind::Rest, None) => None,
        (CaseKind::Rest, Some(_)) => {
            return Err(Error::Config("scenario.transform.map given but case = \"rest\"".into()));
        }
        (_, None) => return Err(Error::Config("scenario.transform.map is required for transformed cases".into())),
        (_, Some(m)) => Some(*m),
    };
    let case = case_for(sc.transform.case, map.as_ref())?;
    let picture = match sc.transform.picture {
        PictureConfig::Detector => Picture::Detector,
        PictureConfig::Vacuum => Picture::Vacuum,
    };
    Ok(Resolved {
        scenario: Scenario {
            amplitude,
            theta,
            vacuum,
            n_osc: sc.n_osc.resolve()?,
            alice: DetectorSetting::new(ra, sc.alice.angle)?,
            bob: DetectorSetting::new(rb, sc.bob.angle)?,
            case,
            picture,
            quadrature: spec,
        },
        map_config: map,
    })
}

fn case_for(kind: CaseKind, map: Option<&MapConfig>) -> Result<TransformCase> {
    let m = match map {
        Some(m) => m.build()?,
        None => return Ok(TransformCase::Rest),
    };
    Ok(match kind {
        CaseKind::Rest => TransformCase::Rest,
        CaseKind::Joint => TransformCase::Joint(m),
        CaseKind::AliceOnly => TransformCase::AliceOnly(m),
        CaseKind::BobOnly => TransformCase::BobOnly(m),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub result: CorrelationResult,
}

fn point_scenario(cfg: &RunConfig, base: &Resolved, variable: Option<SweepVariable>, x: f64) -> Result<Scenario> {
    let mut sc = base.scenario.clone();
    match variable {
        None => {}
        Some(SweepVariable::Beta) => sc.bob.angle = x,
        Some(SweepVariable::Alpha) => sc.alice.angle = x,
        Some(SweepVariable::N) => {
            if x.fract() != 0.0 || x < 1.0 {
                return Err(Error::Config(format!("sweep over N needs positive integers, got {x}")));
            }
            sc.n_osc = OscillatorCount::new(x as u64)?;
        }
        Some(SweepVariable::Rapidity) => {
            let m = base.map_config.ok_or_else(|| {
                Error::Config("sweep over rapidity needs scenario.transform.map".into())
            })?;
            sc.case = case_for(cfg.scenario.transform.case, Some(&m.with_parameter(x)))?;
        }
    }
    Ok(sc)
}

/// Evaluates every sweep point (in parallel, returned in sweep order).
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<ResultRow>> {
    let base = resolve(cfg)?;
    let (variable, xs) = match &cfg.sweep {
        Some(s) => (Some(s.variable), s.values()?),
        None => (None, vec![f64::NAN]),
    };
    xs.par_iter()
        .map(|&x| {
            let sc = point_scenario(cfg, &base, variable, x)?;
            let result = evaluate(&sc)?;
            if !bound_check(&result) {
                return Err(Error::Consistency(format!(
                    "EPR value {} at sweep point {x} violates |value| <= 1 + err ({})",
                    result.value, result.err_estimate
                )));
            }
            Ok(ResultRow { sweep_value: x, result })
        })
        .collect()
}

fn fmt_num(x: f64) -> String {
    format!("{x:.17e}")
}

pub fn render_csv(cfg: &RunConfig, config_text: &str, rows: &[ResultRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# photon-epr {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# command: correlate");
    let _ = writeln!(s, "# config_sha256: {}", config_hash(config_text));
    let _ = writeln!(s, "# seed: {}", cfg.quadrature.seed);
    let _ = writeln!(s, "# state: {:?}", cfg.scenario.state);
    let _ = writeln!(s, "# case: {:?} ({:?} picture)", cfg.scenario.transform.case, cfg.scenario.transform.picture);
    let _ = writeln!(
        s,
        "# sweep: {}",
        cfg.sweep.map(|w| format!("{:?} {}..{} x{}", w.variable, w.start, w.stop, w.count)).unwrap_or("none".into())
    );
    let _ = writeln!(s, "sweep_value,numerator,denominator,epr_value,err_estimate,bell_residual_max");
    for r in rows {
        let res = &r.result;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_num(r.sweep_value),
            fmt_num(res.numerator),
            fmt_num(res.denominator),
            fmt_num(res.value),
            fmt_num(res.err_estimate),
            res.bell_residual_max.map(fmt_num).unwrap_or_default()
        );
    }
    s
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        cfg.quadrature.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.path = Some(out.clone());
    }
}

/// Runs `correlate`; returns the CSV text (also written to the output path if any).
pub fn cmd_correlate(config: &Path, cli: &Cli) -> Result<String> {
    let (mut cfg, text) = load_config(config)?;
    apply_overrides(&mut cfg, cli);
    let rows = run_sweep(&cfg)?;
    let csv = render_csv(&cfg, &text, &rows);
    if let Some(p) = &cfg.output.path {
        std::fs::write(p, &csv).map_err(|e| Error::Config(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(csv)
}

/// One named check of a report.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub threshold: f64,
    /// Informational checks never fail the run.
    pub fatal: bool,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.residual.is_finite() && self.residual <= self.threshold
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    fn push(&mut self, name: impl Into<String>, residual: f64, threshold: f64, fatal: bool) {
        self.checks.push(Check { name: name.into(), residual, threshold, fatal });
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.fatal && !c.passed()).collect()
    }

    pub fn render(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {title}");
        for c in &self.checks {
            let tag = match (c.passed(), c.fatal) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "INFO",
            };
            let _ = writeln!(s, "{tag} {} residual={:.3e} threshold={:.1e}", c.name, c.residual, c.threshold);
        }
        let f = self.failures();
        if f.is_empty() {
            let _ = writeln!(s, "# all checks passed");
        } else {
            let names: Vec<&str> = f.iter().map(|c| c.name.as_str()).collect();
            let _ = writeln!(s, "# failing: {}", names.join(", "));
        }
        s
    }
}

/// Seeded random table with the exchange symmetry `psi_{ss'}(i,j) = psi_{s's}(j,i)`.
pub fn random_symmetric_table(m: usize, seed: u64) -> Vec<Vec<[[C64; 2]; 2]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = vec![vec![[[C64::new(0.0, 0.0); 2]; 2]; m]; m];
    for row in raw.iter_mut() {
        for t in row.iter_mut() {
            for a in t.iter_mut() {
                for v in a.iter_mut() {
                    *v = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                }
            }
        }
    }
    let mut out = raw.clone();
    for i in 0..m {
        for j in 0..m {
            for a in 0..2 {
                for b in 0..2 {
                    out[i][j][a][b] = 0.5 * (raw[i][j][a][b] + raw[j][i][b][a]);
                }
            }
        }
    }
    out
}

/// Amplitude table on grid cells.
pub fn amplitude_table(amp: &TwoPhotonAmplitude, grid: &DiscreteGrid) -> Result<Vec<Vec<[[C64; 2]; 2]>>> {
    let m = grid.len();
    let mut out = vec![vec![[[C64::new(0.0, 0.0); 2]; 2]; m]; m];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, t) in row.iter_mut().enumerate() {
            for s in Helicity::BOTH {
                for s2 in Helicity::BOTH {
                    t[s.index()][s2.index()] = amp.psi(s, s2, grid.momentum(i), grid.momentum(j))?;
                }
            }
        }
    }
    Ok(out)
}

fn max_abs_diff(a: &SparseMatrix, b: &SparseMatrix, mask: Option<&[bool]>) -> f64 {
    let d = a.sub(b);
    match mask {
        Some(m) => d.restrict_columns(m).max_abs(),
        None => d.max_abs(),
    }
}

/// Commutator, basis-change and spectrum checks on one Fock space.
pub fn algebra_checks(space: &FockSpace, reference_weights: &[f64], report: &mut Report) -> Result<()> {
    let n = space.n_osc();
    let m = space.grid().len();
    let mask = space.sub_cutoff_mask();
    let modes = [Mode::First, Mode::Second];
    let tol = 1e-12;
    let mut ccr: f64 = 0.0;
    let mut ladder_mix: f64 = 0.0;
    let mut num_comm: f64 = 0.0;
    let mut center: f64 = 0.0;
    let mut basis: f64 = 0.0;
    let mut basis_ccr: f64 = 0.0;
    let lowers: Vec<Vec<SparseMatrix>> = (0..m)
        .map(|i| modes.iter().map(|&md| space.ladder(i, md, LadderKind::Lower)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let numbers: Vec<Vec<SparseMatrix>> =
        (0..m).map(|i| modes.iter().map(|&md| space.number_op(i, md)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
    let centers: Vec<SparseMatrix> = (0..m).map(|i| space.center(i)).collect::<Result<_>>()?;
    let zero = SparseMatrix::zeros(space.dim(), space.dim());
    for i in 0..m {
        for j in 0..m {
            for a in 0..2 {
                for b in 0..2 {
                    let (ai, aj) = (&lowers[i][a], &lowers[j][b]);
                    let expected = if i == j && a == b {
                        centers[i].scale(C64::new(1.0 / reference_weights[i], 0.0))
                    } else {
                        zero.clone()
                    };
                    ccr = ccr.max(max_abs_diff(&ai.commutator(&aj.adjoint()), &expected, Some(&mask)));
                    ladder_mix = ladder_mix.max(ai.commutator(aj).max_abs());
                    let en = if i == j && a == b {
                        ai.scale(C64::new(1.0 / reference_weights[i], 0.0))
                    } else {
                        zero.clone()
                    };
                    num_comm = num_comm.max(max_abs_diff(&ai.commutator(&numbers[j][b]), &en, None));
                    num_comm = num_comm.max(max_abs_diff(
                        &ai.adjoint().commutator(&numbers[j][b]),
                        &en.adjoint().scale(C64::new(-1.0, 0.0)),
                        None,
                    ));
                }
                center = center.max(lowers[i][a].commutator(&centers[j]).max_abs());
                center = center.max(lowers[i][a].adjoint().commutator(&centers[j]).max_abs());
            }
            let theta_i = 0.37 + 0.5 * i as f64;
            let theta_j = 0.37 + 0.5 * j as f64;
            let li = space.linear(i, theta_i)?;
            if i == j {
                basis = basis.max(max_abs_diff(&li, &space.linear_from_circular(i, theta_i)?, None));
            }
            let lj = space.linear(j, theta_j)?;
            let expected = if i == j {
                centers[i].scale(C64::new(1.0 / reference_weights[i], 0.0))
            } else {
                zero.clone()
            };
            basis_ccr = basis_ccr.max(max_abs_diff(&li.commutator(&lj.adjoint()), &expected, Some(&mask)));
        }
    }
    report.push(format!("ccr N={n}"), ccr.max(ladder_mix), tol, true);
    report.push(format!("number-commutators N={n}"), num_comm, tol, true);
    report.push(format!("center N={n}"), center, tol, true);
    report.push(format!("basis-change N={n}"), basis, tol, true);
    report.push(format!("linear-ccr N={n}"), basis_ccr, tol, true);

    let mut whole: f64 = 0.0;
    let mut spectrum: f64 = 0.0;
    for &md in &modes {
        let a = space.whole_lower(md)?;
        let id = SparseMatrix::identity(space.dim());
        whole = whole.max(max_abs_diff(&a.commutator(&a.adjoint()), &id, Some(&mask)));
        let nn = space.whole_number(md)?;
        for r in 0..space.dim() {
            for (c, v) in nn.row(r) {
                let dev = if c == r { (v.re - v.re.round()).abs() + v.im.abs() } else { v.norm() };
                spectrum = spectrum.max(dev);
            }
        }
    }
    report.push(format!("whole-spectrum-ccr N={n}"), whole, tol, true);
    report.push(format!("integer-spectrum N={n}"), spectrum, tol, true);

    let h = space.hamiltonian(Mode::First)?;
    let mut ham: f64 = 0.0;
    for r in 0..space.dim() {
        let parts = space.decompose(r);
        let expected: f64 = parts
            .iter()
            .map(|&(cell, n1, _)| {
                let w = space.grid().momentum(cell).freq();
                w * n1 as f64 + 0.5 * w / n as f64
            })
            .sum();
        for (c, v) in h.row(r) {
            let target = if c == r { C64::new(expected, 0.0) } else { C64::new(0.0, 0.0) };
            ham = ham.max((v - target).norm());
        }
    }
    report.push(format!("hamiltonian N={n}"), ham, tol, true);
    Ok(())
}

/// Yes-no observable checks: both constructions and the +-1 eigenvalues.
pub fn yes_no_checks(space: &FockSpace, z: &[f64], cells: &[usize], angle: f64, report: &mut Report) -> Result<()> {
    let n = space.n_osc();
    let y_num = space.yes_no_number(cells, angle)?;
    let y_circ = space.yes_no_circular(cells, angle)?;
    report.push(format!("yes-no-forms N={n}"), max_abs_diff(&y_num, &y_circ, None), 1e-12, true);
    let vac = space.vacuum_vector(z)?;
    let mut eig: f64 = 0.0;
    for &i in cells {
        for (shift, target) in [(0.0, 1.0), (FRAC_PI_2, -1.0)] {
            let v = space.linear(i, angle + shift)?.adjoint().matvec(&vac);
            let yv = y_num.matvec(&v);
            let scale = inner(&v, &v).re.sqrt();
            let dev: f64 = yv.iter().zip(&v).map(|(a, b)| (a - b * target).norm_sqr()).sum::<f64>().sqrt() / scale;
            eig = eig.max(dev);
        }
    }
    report.push(format!("yes-no-eigenvalues N={n}"), eig, 1e-12, true);
    let lower_on_vacuum: f64 = [Mode::First, Mode::Second]
        .iter()
        .map(|&md| space.whole_lower(md).map(|a| a.matvec(&vac).iter().map(|x| x.norm()).fold(0.0, f64::max)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    report.push(format!("vacuum-annihilated N={n}"), lower_on_vacuum, 1e-12, true);
    report.push(format!("vacuum-norm N={n}"), (inner(&vac, &vac).re - 1.0).abs(), 1e-12, true);
    Ok(())
}

/// The full oracle suite described by `cfg`.
pub fn oracle_suite(cfg: &OracleConfig) -> Result<Report> {
    let cells = cfg
        .cells
        .iter()
        .map(|c| NullMomentum::new(c.freq, c.dir).map(|k| (k, c.weight)))
        .collect::<Result<Vec<_>>>()?;
    let grid = DiscreteGrid::new(cells)?;
    let z = grid.normalize_density(&cfg.z)?;
    let table = match cfg.state {
        OracleState::Random => random_symmetric_table(grid.len(), cfg.table_seed),
        OracleState::SpinorProduct => {
            amplitude_table(&TwoPhotonAmplitude::general(GeneralForm::SpinorProduct, Envelope::Unit), &grid)?
        }
        s => {
            let kind = match s {
                OracleState::Bell11 => BellKind::Bell11,
                OracleState::Bell12 => BellKind::Bell12,
                OracleState::Bell21 => BellKind::Bell21,
                _ => BellKind::Bell22,
            };
            amplitude_table(&TwoPhotonAmplitude::bell(kind, Envelope::Unit), &grid)?
        }
    };
    let psi = |i: usize, j: usize| table[i][j];
    let mut reference = grid.weights();
    if let Some((cell, factor)) = cfg.weight_fault {
        if cell >= reference.len() {
            return Err(Error::Config(format!("oracle.weight_fault cell {cell} outside grid")));
        }
        reference[cell] *= factor;
    }
    let trunc = OscillatorTruncation::new(cfg.cutoff)?;
    let mut report = Report::default();
    for &n in &cfg.n_osc {
        let space = FockSpace::new(grid.clone(), trunc, n)?;
        let count = space.count();
        algebra_checks(&space, &reference, &mut report)?;
        yes_no_checks(&space, &z, &cfg.alice, cfg.alpha, &mut report)?;

        let state = space.two_photon_vector(psi, &z)?;
        let oracle_norm = inner(&state, &state).re;
        let closed = discrete_norm(&grid, psi, &z, count);
        report.push(format!("scalar-product N={n}"), (oracle_norm - closed).abs() / closed.abs().max(1e-300), 1e-10, true);

        for (label, la, lb) in [("epr", &cfg.alice, &cfg.bob), ("epr-overlap", &cfg.overlap_alice, &cfg.overlap_bob)] {
            if la.is_empty() || lb.is_empty() {
                continue;
            }
            let o = epr_oracle(&space, psi, &z, la, lb, cfg.alpha, cfg.beta)?;
            let four = discrete_four_term(&grid, psi, &z, count, la, lb, cfg.alpha, cfg.beta);
            let coinc = discrete_coincident(&grid, psi, &z, count, la, lb, cfg.alpha, cfg.beta);
            let overlap = la.iter().any(|i| lb.contains(i));
            let residual = (o.numerator - four - coinc).norm() / oracle_norm;
            let name = if overlap { format!("{label}-coincident N={n}") } else { format!("{label}-disjoint N={n}") };
            report.push(name, residual, 1e-8, true);
        }
    }
    Ok(report)
}

pub fn cmd_oracle_verify(config: &Path, cli: &Cli) -> Result<(String, bool)> {
    let (mut cfg, text) = load_config(config)?;
    apply_overrides(&mut cfg, cli);
    let report = oracle_suite(&cfg.oracle)?;
    let mut out = format!("# config_sha256: {}\n", config_hash(&text));
    out.push_str(&report.render("oracle suite"));
    Ok((out, report.failures().is_empty()))
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let z = 2.0 * rng.random::<f64>() - 1.0;
        let phi = 2.0 * PI * rng.random::<f64>();
        let s = (1.0 - z * z).sqrt();
        let d = [s * phi.cos(), s * phi.sin(), z];
        // stay clear of the chart cut
        if z > -0.999 {
            return d;
        }
    }
}

fn random_momentum(rng: &mut ChaCha8Rng) -> NullMomentum {
    let w = 0.1 + 9.9 * rng.random::<f64>();
    NullMomentum::new(w, random_direction(rng)).expect("unit direction")
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> LorentzMap {
    LorentzMap::rotation(2.0 * PI * rng.random::<f64>() - PI, random_direction(rng)).expect("unit axis")
}

pub fn random_boost(rng: &mut ChaCha8Rng, max_rapidity: f64) -> LorentzMap {
    LorentzMap::boost(max_rapidity * rng.random::<f64>(), random_direction(rng)).expect("unit axis")
}

/// Momentum whose image under `map^-1` is also inside the chart.
fn charted_momentum(rng: &mut ChaCha8Rng, map: &LorentzMap) -> NullMomentum {
    let inv = map.inverse();
    loop {
        let k = random_momentum(rng);
        if inv.apply(&k).dir()[2] > -0.999 {
            return k;
        }
    }
}

/// Residual survey for the scenario in `cfg`.
pub fn diagnose(cfg: &RunConfig) -> Result<Report> {
    let d = cfg.diagnose;
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let mut report = Report::default();
    let samples = d.samples.max(1);

    let mut tetrad: f64 = 0.0;
    let mut flag: f64 = 0.0;
    for _ in 0..samples {
        let k = random_momentum(&mut rng);
        tetrad = tetrad.max(null_tetrad(&k)?.invariant_residual());
        flag = flag.max(flagpole_residual(&k)? / (2.0 * k.freq()));
    }
    report.push("tetrad-invariants", tetrad, 1e-10, true);
    report.push("flagpole", flag, 1e-10, true);

    let mut cocycle: f64 = 0.0;
    let mut freq_indep: f64 = 0.0;
    let mut rot_cov: f64 = 0.0;
    let mut boost_cov: f64 = 0.0;
    let mut boost_gauge: f64 = 0.0;
    let mut omicron: f64 = 0.0;
    for t in 0..samples {
        let a = if t % 2 == 0 { random_rotation(&mut rng) } else { random_boost(&mut rng, d.max_rapidity) };
        let b = random_boost(&mut rng, d.max_rapidity).compose(&random_rotation(&mut rng));
        let ab = a.compose(&b);
        let k = loop {
            let k = charted_momentum(&mut rng, &ab);
            if a.inverse().apply(&k).dir()[2] > -0.999 {
                break k;
            }
        };
        let lhs = wigner_phase(&ab, &k)?;
        let rhs = wigner_phase(&a, &k)? + wigner_phase(&b, &a.inverse().apply(&k))?;
        cocycle = cocycle.max(wrap_angle(lhs - rhs).abs());
        for lam in [0.5, 2.0, 10.0] {
            freq_indep = freq_indep.max(wrap_angle(wigner_phase(&a, &k.scaled(lam)?)? - wigner_phase(&a, &k)?).abs());
        }
        let r = random_rotation(&mut rng);
        let kr = charted_momentum(&mut rng, &r);
        rot_cov = rot_cov.max(tetrad_covariance_residual(&r, &kr)?);
        let bst = random_boost(&mut rng, d.max_rapidity);
        let kb = charted_momentum(&mut rng, &bst);
        boost_cov = boost_cov.max(tetrad_covariance_residual(&bst, &kb)?);
        boost_gauge = boost_gauge.max(gauge_reduced_covariance_residual(&bst, &kb)?);
        omicron = omicron.max(omicron_covariance_residual(&bst, &kb)?);
    }
    report.push("wigner-cocycle", cocycle, 1e-8, true);
    report.push("wigner-frequency-independence", freq_indep, 1e-8, true);
    report.push("m-covariance rotations", rot_cov, 1e-8, true);
    report.push("m-covariance boosts", boost_cov, 1e-8, false);
    report.push("m-covariance boosts modulo k", boost_gauge, 1e-8, true);
    report.push("omicron-covariance boosts", omicron, 1e-8, false);

    let res = resolve(cfg)?;
    let sc = &res.scenario;
    let amp = &sc.amplitude;
    let mut sym: f64 = 0.0;
    for _ in 0..samples {
        let (k, k2) = (random_momentum(&mut rng), random_momentum(&mut rng));
        sym = sym.max(symmetry_residual(amp, &k, &k2)?);
    }
    report.push("exchange-symmetry", sym, 1e-10, true);

    let spec = QuadratureSpec { n_freq: 2, n_polar: 3, n_azimuth: 6, ..sc.quadrature };
    let na = invariant_node_set(&sc.alice.region, &spec)?;
    let nb = invariant_node_set(&sc.bob.region, &spec)?;
    if let (Some(kind), Some(theta)) = (amp.bell_kind(), &sc.theta) {
        let mut worst: f64 = 0.0;
        let (s, s2) = kind.active_pairs()[0];
        for a in &na {
            for b in &nb {
                let scale = amp.psi(s, s2, &a.k, &b.k)?.norm();
                if scale > 0.0 {
                    worst = worst.max(bell_condition_residual(kind, amp, theta, &a.k, &b.k)? / scale);
                }
            }
        }
        report.push("bell-condition (relative)", worst, 1e-2, true);
    }

    let map = match sc.case {
        TransformCase::Rest => LorentzMap::identity(),
        TransformCase::Joint(m) | TransformCase::AliceOnly(m) | TransformCase::BobOnly(m) => m,
    };
    if let Some(theta) = &sc.theta {
        let mut worst: f64 = 0.0;
        let mut transformed: f64 = 0.0;
        let moved = theta.with_transform(&map);
        for n in na.iter().chain(&nb) {
            worst = worst.max(theta_wigner_residual(theta, &map, &n.k)?);
            transformed = transformed.max(theta_wigner_residual(&moved, &map, &n.k)?);
        }
        report.push("theta-wigner-shift closed-form field", worst, 1e-10, false);
        report.push("theta-wigner-shift transformed field", transformed, 1e-10, true);
    }
    let mut cov: f64 = 0.0;
    for a in &na {
        for b in &nb {
            cov = cov.max(covariance_residual(amp, &map, &a.k, &b.k)?);
        }
    }
    report.push("amplitude-covariance configured map", cov, 1e-8, true);
    Ok(report)
}

pub fn cmd_diagnose(config: &Path, cli: &Cli) -> Result<(String, bool)> {
    let (mut cfg, text) = load_config(config)?;
    apply_overrides(&mut cfg, cli);
    if let Some(seed) = cli.seed {
        cfg.diagnose.seed = seed;
    }
    let report = diagnose(&cfg)?;
    let mut out = format!("# config_sha256: {}\n", config_hash(&text));
    out.push_str(&report.render("diagnostics"));
    Ok((out, report.failures().is_empty()))
}

fn thread_count(cli: &Cli) -> Result<Option<usize>> {
    if let Some(t) = cli.threads {
        return Ok(Some(t));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn write_report(text: &str, cli: &Cli, cfg_out: Option<PathBuf>) -> Result<()> {
    print!("{text}");
    if let Some(p) = cli.out.clone().or(cfg_out) {
        std::fs::write(&p, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(t) = thread_count(cli)? {
        if t == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure threads: {e}")))?;
    }
    match &cli.command {
        Command::Correlate { config } => {
            let csv = cmd_correlate(config, cli)?;
            let (cfg, _) = load_config(config)?;
            if cli.out.is_none() && cfg.output.path.is_none() {
                print!("{csv}");
            }
            Ok(true)
        }
        Command::OracleVerify { config } => {
            let (text, ok) = cmd_oracle_verify(config, cli)?;
            write_report(&text, cli, None)?;
            Ok(ok)
        }
        Command::Diagnose { config } => {
            let (text, ok) = cmd_diagnose(config, cli)?;
            write_report(&text, cli, None)?;
            Ok(ok)
        }
    }
}

/// Binary entry point.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
