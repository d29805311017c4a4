use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twolevel::pde::Conditioning;
use twolevel::regime::{VerifyOptions, DEFAULT_TIE_TOL};
use twolevel::{DecomposedMeasure, ModelParams};

use crate::error::{CliError, Context, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Ibm,
    Pde,
    Qsd,
    Classify,
    VerifyRate,
    Scan,
    Invasion,
    Figure,
}

/// One experiment file. Kind-specific blocks are optional in the file and
/// checked against `kind` by [`ExperimentConfig::validate`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub params: ModelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Initial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde: Option<PdeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qsd: Option<QsdBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classify: Option<ClassifyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ibm: Option<IbmBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invasion: Option<InvasionBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<FigureBlock>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Initial {
    Point { x: f64 },
    Uniform,
    Delta0,
    Delta1,
}

impl Default for Initial {
    fn default() -> Self {
        Initial::Point { x: 0.5 }
    }
}

impl Initial {
    pub fn measure(&self, n: usize) -> Result<DecomposedMeasure> {
        Ok(match *self {
            Initial::Point { x } => DecomposedMeasure::point(x, n).ctx("initial")?,
            Initial::Uniform => DecomposedMeasure::uniform(n),
            Initial::Delta0 => DecomposedMeasure::delta0(n),
            Initial::Delta1 => DecomposedMeasure::delta1(n),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeBlock {
    pub horizon: f64,
    /// Defaults to the solver's stable step for the parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub sample_every: f64,
    #[serde(default)]
    pub conditioning: Conditioning,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QsdBlock {
    #[serde(default = "default_qsd_tol")]
    pub tol: f64,
    #[serde(default = "default_qsd_iter")]
    pub max_iter: usize,
}

fn default_qsd_tol() -> f64 {
    twolevel::qsd::QsdOptions::default().tol
}

fn default_qsd_iter() -> usize {
    twolevel::qsd::QsdOptions::default().max_iter
}

impl Default for QsdBlock {
    fn default() -> Self {
        QsdBlock {
            tol: default_qsd_tol(),
            max_iter: default_qsd_iter(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyBlock {
    #[serde(default = "default_tie_tol")]
    pub tie_tol: f64,
}

impl Default for ClassifyBlock {
    fn default() -> Self {
        ClassifyBlock {
            tie_tol: DEFAULT_TIE_TOL,
        }
    }
}

fn default_tie_tol() -> f64 {
    DEFAULT_TIE_TOL
}

/// Fit settings; omitted fields take the library defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_every: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_r_squared: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
}

impl VerifyBlock {
    pub fn options(&self) -> VerifyOptions {
        let d = VerifyOptions::default();
        VerifyOptions {
            tie_tol: self.tie_tol.unwrap_or(d.tie_tol),
            window_fraction: self.window_fraction.unwrap_or(d.window_fraction),
            dt: self.dt,
            sample_every: self.sample_every,
            rate_tol: self.rate_tol.unwrap_or(d.rate_tol),
            min_r_squared: self.min_r_squared.unwrap_or(d.min_r_squared),
            max_ratio: self.max_ratio.unwrap_or(d.max_ratio),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IbmMode {
    /// Snapshots of every replicate at `times`.
    Trajectory,
    /// Absorption counts at `horizon`.
    Absorption,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbmBlock {
    pub mode: IbmMode,
    pub n: usize,
    pub m: usize,
    pub gamma_g_bar: f64,
    pub replicates: usize,
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub horizon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Directions {
    #[serde(rename = "D->C")]
    DToC,
    #[serde(rename = "C->D")]
    CToD,
    #[serde(rename = "both")]
    Both,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvasionBlock {
    pub n: usize,
    pub m: usize,
    pub gamma_g: f64,
    /// Monte Carlo replicates per direction; 0 gives the closed forms only.
    #[serde(default)]
    pub replicates: usize,
    #[serde(default = "default_invasion_horizon")]
    pub horizon: f64,
    #[serde(default = "default_directions")]
    pub direction: Directions,
}

fn default_invasion_horizon() -> f64 {
    f64::INFINITY
}

fn default_directions() -> Directions {
    Directions::Both
}

/// A list of values or an evenly spaced (optionally log-spaced) range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range {
        from: f64,
        to: f64,
        count: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Grid {
    pub fn values(&self, field: &str) -> Result<Vec<f64>> {
        let bad = |why: &str| CliError::Validation(format!("{field}: {why}"));
        let v = match *self {
            Grid::List(ref v) => v.clone(),
            Grid::Range { from, to, count, log } => {
                if count == 0 {
                    return Err(bad("count must be >= 1"));
                }
                if log && !(from > 0.0 && to > 0.0) {
                    return Err(bad("log ranges need positive ends"));
                }
                let (a, b) = if log { (from.ln(), to.ln()) } else { (from, to) };
                (0..count)
                    .map(|i| {
                        let u = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
                        let v = a + (b - a) * u;
                        if log {
                            v.exp()
                        } else {
                            v
                        }
                    })
                    .collect()
            }
        };
        if v.is_empty() {
            return Err(bad("is empty"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(bad("values must be finite"));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "over", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScanBlock {
    /// `rho_alpha` as a function of `gamma`.
    Gamma {
        values: Grid,
        #[serde(default = "default_tail")]
        tail: usize,
    },
    /// Critical brackets in `R` for `r = R * params.r`.
    RScale {
        values: Grid,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
    },
    /// Emergence time of the atom at 1 under truncation.
    Eta {
        values: Grid,
        horizon: f64,
        dt: Option<f64>,
        #[serde(default = "default_level")]
        level: f64,
    },
    /// Closed-form invasion probabilities over `s/gamma` x `r1/gamma_G`.
    InvasionRatio {
        n: usize,
        m: usize,
        s_over_gamma: Grid,
        r1_over_gamma_g: Grid,
    },
}

fn default_tail() -> usize {
    4
}

fn default_rel_tol() -> f64 {
    1e-4
}

fn default_level() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureBlock {
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_figure_sample")]
    pub sample_every: f64,
    /// Times of the interior profile snapshots.
    #[serde(default)]
    pub profile_times: Vec<f64>,
    #[serde(default = "default_plateau_tol")]
    pub plateau_rel_tol: f64,
    #[serde(default = "default_plateau_len")]
    pub plateau_min_duration: f64,
    /// Minimal dip and recovery of the interior mean counted as a u-turn.
    #[serde(default = "default_min_rise")]
    pub u_turn_min_rise: f64,
}

fn default_figure_sample() -> f64 {
    1.0
}

fn default_plateau_tol() -> f64 {
    0.02
}

fn default_plateau_len() -> f64 {
    50.0
}

fn default_min_rise() -> f64 {
    0.1
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{field}: must be finite and > 0, got {v}")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{field}: must be finite and >= 0, got {v}")))
    }
}

fn times_in(field: &str, times: &[f64], horizon: f64) -> Result<()> {
    for (i, t) in times.iter().enumerate() {
        if !(t.is_finite() && *t >= 0.0 && *t <= horizon) {
            return Err(CliError::Validation(format!("{field}[{i}]: {t} is outside [0, {horizon}]")));
        }
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Validation(format!("{field}: must be strictly increasing")));
    }
    Ok(())
}

fn require<'a, T>(block: &'a Option<T>, name: &str, kind: Kind) -> Result<&'a T> {
    block
        .as_ref()
        .ok_or_else(|| CliError::Validation(format!("{name}: block required for kind {kind:?}")))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn initial(&self) -> Initial {
        self.initial.unwrap_or_default()
    }

    /// Field-level checks beyond what the file format enforces.
    pub fn validate(&self) -> Result<()> {
        self.params.validate().ctx("params")?;
        self.initial().measure(self.params.grid_size)?;
        match self.kind {
            Kind::Pde => {
                let b = require(&self.pde, "pde", self.kind)?;
                nonnegative("pde.horizon", b.horizon)?;
                if let Some(dt) = b.dt {
                    positive("pde.dt", dt)?;
                }
                nonnegative("pde.sample_every", b.sample_every)?;
                nonnegative("pde.eta", b.eta)?;
                times_in("pde.snapshots", &b.snapshots, b.horizon)?;
            }
            Kind::Qsd => {
                if let Some(b) = &self.qsd {
                    positive("qsd.tol", b.tol)?;
                    if b.max_iter == 0 {
                        return Err(CliError::Validation("qsd.max_iter: must be >= 1".into()));
                    }
                }
            }
            Kind::Classify => {
                if let Some(b) = &self.classify {
                    nonnegative("classify.tie_tol", b.tie_tol)?;
                }
            }
            Kind::VerifyRate => {
                let b = require(&self.verify, "verify", self.kind)?;
                positive("verify.horizon", b.horizon)?;
                let o = b.options();
                nonnegative("verify.tie_tol", o.tie_tol)?;
                if let Some(dt) = o.dt {
                    positive("verify.dt", dt)?;
                }
                if let Some(e) = o.sample_every {
                    positive("verify.sample_every", e)?;
                }
                let w = o.window_fraction;
                if !(w > 0.0 && w <= 1.0) {
                    return Err(CliError::Validation(format!("verify.window_fraction: must be in (0, 1], got {w}")));
                }
            }
            Kind::Ibm => {
                let b = require(&self.ibm, "ibm", self.kind)?;
                if b.replicates == 0 {
                    return Err(CliError::Validation("ibm.replicates: must be >= 1".into()));
                }
                twolevel::ibm_rates_from_limit(&self.params, b.n, b.m, b.gamma_g_bar).ctx("ibm")?;
                match b.mode {
                    IbmMode::Trajectory => {
                        if b.times.is_empty() {
                            return Err(CliError::Validation("ibm.times: required in trajectory mode".into()));
                        }
                        times_in("ibm.times", &b.times, f64::INFINITY)?;
                    }
                    IbmMode::Absorption => positive("ibm.horizon", b.horizon)?,
                }
                if matches!(self.initial(), Initial::Uniform) {
                    return Err(CliError::Validation(
                        "initial.kind: the IBM starts from a common group composition (point, delta0 or delta1)".into(),
                    ));
                }
            }
            Kind::Invasion => {
                let b = require(&self.invasion, "invasion", self.kind)?;
                positive("invasion.gamma_g", b.gamma_g)?;
                if !(b.horizon > 0.0) {
                    return Err(CliError::Validation("invasion.horizon: must be > 0".into()));
                }
                if self.params.r.linear_slope().is_none() {
                    return Err(CliError::Validation("params.r: invasion needs a linear rate".into()));
                }
            }
            Kind::Scan => match require(&self.scan, "scan", self.kind)? {
                ScanBlock::Gamma { values, .. } => {
                    for (i, g) in values.values("scan.values")?.iter().enumerate() {
                        positive(&format!("scan.values[{i}]"), *g)?;
                    }
                }
                ScanBlock::RScale { values, rel_tol } => {
                    values.values("scan.values")?;
                    positive("scan.rel_tol", *rel_tol)?;
                }
                ScanBlock::Eta { values, horizon, dt, level } => {
                    for (i, e) in values.values("scan.values")?.iter().enumerate() {
                        nonnegative(&format!("scan.values[{i}]"), *e)?;
                    }
                    positive("scan.horizon", *horizon)?;
                    if let Some(dt) = dt {
                        positive("scan.dt", *dt)?;
                    }
                    if !(*level > 0.0 && *level < 1.0) {
                        return Err(CliError::Validation(format!("scan.level: must be in (0, 1), got {level}")));
                    }
                }
                ScanBlock::InvasionRatio {
                    n,
                    m,
                    s_over_gamma,
                    r1_over_gamma_g,
                } => {
                    if *n < 2 || *m < 2 {
                        return Err(CliError::Validation("scan.n, scan.m: must be >= 2".into()));
                    }
                    s_over_gamma.values("scan.s_over_gamma")?;
                    r1_over_gamma_g.values("scan.r1_over_gamma_g")?;
                }
            },
            Kind::Figure => {
                let b = require(&self.figure, "figure", self.kind)?;
                positive("figure.horizon", b.horizon)?;
                if let Some(dt) = b.dt {
                    positive("figure.dt", dt)?;
                }
                positive("figure.sample_every", b.sample_every)?;
                times_in("figure.profile_times", &b.profile_times, b.horizon)?;
                positive("figure.plateau_rel_tol", b.plateau_rel_tol)?;
                nonnegative("figure.plateau_min_duration", b.plateau_min_duration)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PDE: &str = r#"
kind = "pde"
seed = 3
[params]
gamma = 0.01
s = 0.1
grid_size = 50
r = { kind = "linear", slope = 0.5 }
[initial]
kind = "point"
x = 0.3
[pde]
horizon = 2.0
snapshots = [1.0, 2.0]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(PDE).unwrap();
        assert_eq!(cfg.kind, Kind::Pde);
        assert_eq!(cfg.initial(), Initial::Point { x: 0.3 });
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again.to_toml(), cfg.to_toml());
    }

    #[test]
    fn missing_block_names_it() {
        let text = PDE.replace("kind = \"pde\"", "kind = \"figure\"");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("figure"), "{err}");
    }

    #[test]
    fn bad_values_carry_field_paths() {
        let err = ExperimentConfig::parse(&PDE.replace("gamma = 0.01", "gamma = -1.0"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("params.gamma"), "{err}");
        let err = ExperimentConfig::parse(&PDE.replace("[1.0, 2.0]", "[1.0, 3.0]"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("pde.snapshots[1]"), "{err}");
        let err = ExperimentConfig::parse(&PDE.replace("horizon = 2.0", "horizon = 2.0\nbogus = 1"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn ranges_expand() {
        let g = Grid::Range {
            from: 1e-3,
            to: 1e-1,
            count: 3,
            log: true,
        };
        let v = g.values("x").unwrap();
        assert!((v[1] - 1e-2).abs() < 1e-15);
        assert_eq!(Grid::List(vec![]).values("x").unwrap_err().to_string(), "invalid config: x: is empty");
    }
}
