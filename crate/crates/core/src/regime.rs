//! Long-time regimes of the normalized flow: classification from the three
//! extinction rates, rate verification against solver runs, parameter scans
//! and detectors for the transient phenomena.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::measure::{tv_distance, DecomposedMeasure};
use crate::model::ModelParams;
use crate::pde::{default_dt, EvolveOptions, ForwardOperator, PdeSolver, Sample};
use crate::qsd::{
    composite_alpha01, critical_mixture_x, limit_mixture_x_with, solve_qsd, solve_qsd_operator,
    QsdOptions, QsdSolution,
};
use crate::stats::{linear_fit, LinearFit};

pub const DEFAULT_TIE_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// rho1 < rho0 < rho_alpha
    A,
    /// rho1 < rho_alpha < rho0
    B,
    /// rho1 < rho0 = rho_alpha
    C,
    /// rho0 = rho1 < rho_alpha
    D,
    /// rho_alpha < min(rho0, rho1)
    E,
    /// rho1 = rho_alpha < rho0
    F,
    /// rho0 = rho1 = rho_alpha
    G,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictedLimit {
    Delta1,
    /// `x delta0 + (1 - x) delta1`; `x` is filled in once an initial law is known.
    Mixture { x: Option<f64> },
    Alpha01,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateForm {
    Exponential,
    LinearTimesExponential,
    InverseTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub quantity: String,
    pub window_start: f64,
    pub window_end: f64,
    pub points: usize,
    /// Fitted exponential rate, or the fitted power of `1/t` for the
    /// inverse-time form.
    pub fitted: f64,
    pub r_squared: f64,
    /// `max / min` of `t * TV` over the window (inverse-time form only).
    pub ratio_max_min: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// Rates after the canonical relabeling, so that `rho1 <= rho0`.
    pub rho0: f64,
    pub rho1: f64,
    pub rho_alpha: f64,
    /// True when 0 and 1 were exchanged to reach the canonical order.
    pub swapped: bool,
    pub regime: Regime,
    pub limit: PredictedLimit,
    pub rate_form: RateForm,
    /// Predicted exponential rate (0 for the inverse-time form).
    pub lambda: f64,
    pub tie_tol: f64,
    pub fit: Option<FitReport>,
}

impl RegimeReport {
    pub fn verdict(&self) -> Option<bool> {
        self.fit.as_ref().map(|f| f.pass)
    }

    /// Fixed-column one-line summary.
    pub fn summary_line(&self) -> String {
        let fit = match &self.fit {
            Some(f) => format!(
                "{:>12.6e} {:>8.5} {:>5}",
                f.fitted,
                f.r_squared,
                if f.pass { "PASS" } else { "FAIL" }
            ),
            None => format!("{:>12} {:>8} {:>5}", "-", "-", "-"),
        };
        format!(
            "{:<2} {:>12.6e} {:>12.6e} {:>12.6e} {:>7} {:>24} {:>12.6e} {}",
            self.regime.to_string(),
            self.rho0,
            self.rho1,
            self.rho_alpha,
            if self.swapped { "swapped" } else { "-" },
            format!("{:?}", self.rate_form),
            self.lambda,
            fit
        )
    }
}

fn tie(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.max(b).max(1.0)
}

/// Classification from the three rates alone.
pub fn classify_rates(rho0: f64, rho1: f64, rho_alpha: f64, tie_tol: f64) -> RegimeReport {
    let swapped = rho1 > rho0 && !tie(rho0, rho1, tie_tol);
    let (r0, r1) = if swapped { (rho1, rho0) } else { (rho0, rho1) };
    let ra = rho_alpha;
    let t01 = tie(r0, r1, tie_tol);
    let t0a = tie(r0, ra, tie_tol);
    let t1a = tie(r1, ra, tie_tol);
    let regime = if (t01 && t1a) || (t0a && t1a) {
        Regime::G
    } else if t01 {
        if ra > r1 {
            Regime::D
        } else {
            Regime::E
        }
    } else if t0a {
        Regime::C
    } else if t1a {
        Regime::F
    } else if ra > r0 {
        Regime::A
    } else if ra > r1 {
        Regime::B
    } else {
        Regime::E
    };
    let (limit, rate_form, lambda) = match regime {
        Regime::A => (PredictedLimit::Delta1, RateForm::Exponential, r0 - r1),
        Regime::B => (PredictedLimit::Delta1, RateForm::Exponential, ra - r1),
        Regime::C => (PredictedLimit::Delta1, RateForm::LinearTimesExponential, r0 - r1),
        Regime::D => (PredictedLimit::Mixture { x: None }, RateForm::Exponential, ra - r1),
        Regime::E => (PredictedLimit::Alpha01, RateForm::Exponential, r0.min(r1) - ra),
        Regime::F => (PredictedLimit::Delta1, RateForm::InverseTime, 0.0),
        Regime::G => (PredictedLimit::Mixture { x: None }, RateForm::InverseTime, 0.0),
    };
    RegimeReport {
        rho0: r0,
        rho1: r1,
        rho_alpha: ra,
        swapped,
        regime,
        limit,
        rate_form,
        lambda,
        tie_tol,
        fit: None,
    }
}

pub fn classify(params: &ModelParams, tie_tol: f64) -> Result<RegimeReport> {
    let sol = solve_qsd(params)?;
    Ok(classify_rates(sol.rho0, sol.rho1, sol.rho_alpha, tie_tol))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub tie_tol: f64,
    /// Fraction of the horizon, counted from its end, used for the fit.
    pub window_fraction: f64,
    /// Defaults to [`default_dt`].
    pub dt: Option<f64>,
    /// Spacing of fit points; defaults to horizon / 400.
    pub sample_every: Option<f64>,
    /// Relative tolerance on the fitted rate.
    pub rate_tol: f64,
    pub min_r_squared: f64,
    /// Bound on `max / min` of `t * TV` for the inverse-time form.
    pub max_ratio: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tie_tol: DEFAULT_TIE_TOL,
            window_fraction: 0.5,
            dt: None,
            sample_every: None,
            rate_tol: 0.1,
            min_r_squared: 0.99,
            max_ratio: 3.0,
        }
    }
}

/// Orientation with `rho1 <= rho0`; returns the params, the initial law and
/// whether they were relabeled.
fn canonical(
    params: &ModelParams,
    mu0: &DecomposedMeasure,
    report: &RegimeReport,
) -> (ModelParams, DecomposedMeasure) {
    if report.swapped {
        (params.relabeled(), mu0.reflected())
    } else {
        (params.clone(), mu0.clone())
    }
}

/// Distance floor below which TV values are treated as round-off.
const TV_FLOOR: f64 = 1e-13;

/// Runs the flow and fits the distance to the predicted limit against the
/// predicted rate form over the late window.
pub fn verify_rate(
    params: &ModelParams,
    mu0: &DecomposedMeasure,
    horizon: f64,
    opts: &VerifyOptions,
) -> Result<RegimeReport> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid("horizon", "must be > 0"));
    }
    if !(opts.window_fraction > 0.0 && opts.window_fraction <= 1.0) {
        return Err(invalid("window_fraction", "must lie in (0, 1]"));
    }
    let op0 = ForwardOperator::build(params)?;
    let sol0 = solve_qsd_operator(&op0, &QsdOptions::default())?;
    let mut report = classify_rates(sol0.rho0, sol0.rho1, sol0.rho_alpha, opts.tie_tol);
    let (cp, cmu) = canonical(params, mu0, &report);
    let op = if report.swapped {
        ForwardOperator::build(&cp)?
    } else {
        op0
    };
    let sol = if report.swapped {
        solve_qsd_operator(&op, &QsdOptions::default())?
    } else {
        sol0
    };

    let target = match report.regime {
        Regime::A | Regime::B | Regime::C | Regime::F => Target::Delta1,
        Regime::D => {
            let x = mixture_x_tolerant(&cmu, &op, &sol)?;
            report.limit = PredictedLimit::Mixture { x: Some(x) };
            Target::Mixture(x)
        }
        Regime::G => {
            let x = critical_mixture_x(&sol);
            report.limit = PredictedLimit::Mixture { x: Some(x) };
            Target::Mixture(x)
        }
        Regime::E => Target::Measure(composite_alpha01(&sol)?.measure),
    };

    let dt = match opts.dt {
        Some(dt) => dt,
        None => default_dt(&cp)?,
    };
    let every = opts.sample_every.unwrap_or(horizon / 400.0);
    let solver = PdeSolver::from_operator(op);
    let mut series: Vec<(f64, f64)> = Vec::new();
    let evo_opts = EvolveOptions::new(dt).sample_every(every);
    solver.evolve_observed(&cmu, horizon, &evo_opts, |s, mu| {
        series.push((s.time, target.distance(s, mu)));
    })?;

    let t0 = horizon * (1.0 - opts.window_fraction);
    let floor = target.floor();
    if let Some(&(tf, _)) = series.iter().find(|(t, d)| *t <= t0 && *d < floor) {
        return Err(Error::WindowTooLate { floor_time: tf });
    }
    let window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, d)| *t >= t0 && *t > 0.0 && *d >= floor)
        .collect();
    if window.len() < 3 {
        let floor_time = series
            .iter()
            .find(|(_, d)| *d < floor)
            .map(|p| p.0)
            .unwrap_or(t0);
        return Err(Error::WindowTooLate { floor_time });
    }
    report.fit = Some(fit_window(&report, &window, opts)?);
    Ok(report)
}

/// Mixture weight for regime D. The rates only need to tie within the
/// classification tolerance, so the resolvent is taken at `rho1`.
fn mixture_x_tolerant(
    mu0: &DecomposedMeasure,
    op: &ForwardOperator,
    sol: &QsdSolution,
) -> Result<f64> {
    let mut tied = op.clone();
    tied.rho0 = op.rho1;
    limit_mixture_x_with(mu0, &tied, sol)
}

enum Target {
    Delta1,
    Mixture(f64),
    Measure(DecomposedMeasure),
}

impl Target {
    fn distance(&self, s: &Sample, mu: &DecomposedMeasure) -> f64 {
        match self {
            // written without 1 - x1 to avoid cancellation
            Target::Delta1 => s.x0 + s.xint,
            Target::Mixture(x) => 0.5 * ((s.x0 - x).abs() + (s.x1 - (1.0 - x)).abs() + s.xint),
            Target::Measure(m) => tv_distance(mu, m).unwrap_or(f64::NAN),
        }
    }

    fn floor(&self) -> f64 {
        match self {
            Target::Delta1 => TV_FLOOR,
            _ => 1e-11,
        }
    }
}

fn fit_window(report: &RegimeReport, window: &[(f64, f64)], opts: &VerifyOptions) -> Result<FitReport> {
    let t: Vec<f64> = window.iter().map(|p| p.0).collect();
    let fail = || Error::WindowTooLate {
        floor_time: t[0],
    };
    let (quantity, fitted, fit, ratio, pass) = match report.rate_form {
        RateForm::Exponential | RateForm::LinearTimesExponential => {
            let linear = report.rate_form == RateForm::LinearTimesExponential;
            let y: Vec<f64> = window
                .iter()
                .map(|(t, d)| d.ln() - if linear { (1.0 + t).ln() } else { 0.0 })
                .collect();
            let fit: LinearFit = linear_fit(&t, &y).ok_or_else(fail)?;
            let lam = -fit.slope;
            let pass = ((lam - report.lambda) / report.lambda).abs() <= opts.rate_tol
                && fit.r_squared >= opts.min_r_squared;
            let q = if linear { "log(TV/(1+t))" } else { "log TV" };
            (q.to_string(), lam, fit, None, pass)
        }
        RateForm::InverseTime => {
            let lx: Vec<f64> = t.iter().map(|v| v.ln()).collect();
            let ly: Vec<f64> = window.iter().map(|p| p.1.ln()).collect();
            let fit = linear_fit(&lx, &ly).ok_or_else(fail)?;
            let prod: Vec<f64> = window.iter().map(|(t, d)| t * d).collect();
            let max = prod.iter().copied().fold(f64::MIN, f64::max);
            let min = prod.iter().copied().fold(f64::MAX, f64::min);
            let ratio = max / min;
            let pass = ratio <= opts.max_ratio && min > 0.0;
            ("t * TV".to_string(), -fit.slope, fit, Some(ratio), pass)
        }
    };
    Ok(FitReport {
        quantity,
        window_start: t[0],
        window_end: *t.last().unwrap(),
        points: window.len(),
        fitted,
        r_squared: fit.r_squared,
        ratio_max_min: ratio,
        pass,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioCheck {
    /// `x^xi_t / x^0_t` at the horizon.
    pub observed: f64,
    /// `y_alpha / y_0` of the composite QSD.
    pub predicted: f64,
    pub relative_error: f64,
}

/// In regime B the interior-to-atom0 ratio settles at `y_alpha / y0`.
pub fn interior_to_atom0_ratio(
    params: &ModelParams,
    mu0: &DecomposedMeasure,
    horizon: f64,
    dt: f64,
) -> Result<RatioCheck> {
    let sol = solve_qsd(params)?;
    let c = crate::qsd::composite_alpha1(&sol)?;
    let ev = PdeSolver::new(params)?.evolve_normalized(mu0, horizon, &EvolveOptions::new(dt).sample_every(horizon))?;
    let s = ev.final_sample();
    let observed = s.xint / s.x0;
    let predicted = c.y_alpha / c.y0;
    Ok(RatioCheck {
        observed,
        predicted,
        relative_error: (observed - predicted).abs() / predicted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaScanRow {
    pub gamma: f64,
    pub rho_alpha: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaScan {
    pub rows: Vec<GammaScanRow>,
    /// Whether `rho_alpha` increases strictly over the last `tail` points.
    pub tail_increasing: bool,
    pub tail: usize,
}

pub fn scan_gamma(base: &ModelParams, gammas: &[f64], tail: usize, exec: Exec) -> Result<GammaScan> {
    if gammas.iter().any(|g| !(*g > 0.0)) || gammas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("gamma_grid", "must be positive and ascending"));
    }
    let rows = exec.map(gammas.len(), |i| {
        let g = gammas[i];
        match solve_qsd(&base.with_gamma(g)) {
            Ok(sol) => GammaScanRow {
                gamma: g,
                rho_alpha: Some(sol.rho_alpha),
                error: None,
            },
            Err(e) => GammaScanRow {
                gamma: g,
                rho_alpha: None,
                error: Some(e.to_string()),
            },
        }
    });
    let tail = tail.min(rows.len());
    let last: Vec<Option<f64>> = rows[rows.len() - tail..].iter().map(|r| r.rho_alpha).collect();
    let tail_increasing = tail >= 2
        && last.iter().all(|v| v.is_some())
        && last.windows(2).all(|w| w[1].unwrap() > w[0].unwrap());
    Ok(GammaScan {
        rows,
        tail_increasing,
        tail,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RScanRow {
    pub r_scale: f64,
    pub rho_alpha: Option<f64>,
    pub min_rho01: f64,
    /// Sign of `rho_alpha - min(rho0, rho1)`.
    pub sign: i8,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub critical: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RScan {
    pub rows: Vec<RScanRow>,
    pub brackets: Vec<Bracket>,
}

/// `rho_alpha - min(rho0, rho1)` for the rate `scale * r`.
fn polymorphism_margin(base: &ModelParams, scale: f64) -> Result<(f64, f64)> {
    let p = base.with_r(base.r.scaled(scale));
    let sol = solve_qsd(&p)?;
    let m = sol.rho0.min(sol.rho1);
    Ok((sol.rho_alpha - m, m))
}

/// Scan over `R` with `r = R * base.r`, bracketing every sign change of
/// `rho_alpha - min(rho0, rho1)` to relative width `rel_tol`.
pub fn scan_r_scale(base: &ModelParams, scales: &[f64], rel_tol: f64, exec: Exec) -> Result<RScan> {
    if scales.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("r_grid", "must be ascending"));
    }
    let rows = exec.map(scales.len(), |i| {
        let r = scales[i];
        match polymorphism_margin(base, r) {
            Ok((d, m)) => RScanRow {
                r_scale: r,
                rho_alpha: Some(d + m),
                min_rho01: m,
                sign: if d > 0.0 {
                    1
                } else if d < 0.0 {
                    -1
                } else {
                    0
                },
                error: None,
            },
            Err(e) => RScanRow {
                r_scale: r,
                rho_alpha: None,
                min_rho01: f64::NAN,
                sign: 0,
                error: Some(e.to_string()),
            },
        }
    });
    let pairs: Vec<(f64, f64)> = rows
        .windows(2)
        .filter(|w| w[0].sign * w[1].sign < 0)
        .map(|w| (w[0].r_scale, w[1].r_scale))
        .collect();
    let brackets = exec
        .map(pairs.len(), |i| {
            let (lo, hi) = pairs[i];
            bisect(|r| polymorphism_margin(base, r).map(|v| v.0), lo, hi, rel_tol)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(RScan { rows, brackets })
}

/// Bisection on a sign change of `f` over `[lo, hi]` to relative width `rel_tol`.
pub fn bisect(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, rel_tol: f64) -> Result<Bracket> {
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo * fhi > 0.0 {
        return Err(invalid("bracket", "no sign change"));
    }
    for _ in 0..200 {
        if (hi - lo).abs() <= rel_tol * hi.abs().max(lo.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(Bracket {
        lo,
        hi,
        critical: 0.5 * (lo + hi),
    })
}

/// Which equality a tuned configuration should satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieTarget {
    /// `rho_alpha = rho0`
    Rho0,
    /// `rho_alpha = rho1`
    Rho1,
}

/// Scale `R` in `[lo, hi]` at which `rho_alpha` meets the requested atom rate
/// for `r = R * base.r`.
pub fn tune_r_scale(base: &ModelParams, target: TieTarget, lo: f64, hi: f64, rel_tol: f64) -> Result<f64> {
    let f = |r: f64| -> Result<f64> {
        let sol = solve_qsd(&base.with_r(base.r.scaled(r)))?;
        Ok(sol.rho_alpha
            - match target {
                TieTarget::Rho0 => sol.rho0,
                TieTarget::Rho1 => sol.rho1,
            })
    };
    Ok(bisect(f, lo, hi, rel_tol)?.critical)
}

/// `-d/dt log` of the unnormalized interior mass between consecutive samples.
pub fn interior_decay_rates(samples: &[Sample]) -> Vec<(f64, f64)> {
    samples
        .windows(2)
        .filter(|w| w[0].xint > 0.0 && w[1].xint > 0.0)
        .map(|w| {
            let l0 = w[0].log_mass + w[0].xint.ln();
            let l1 = w[1].log_mass + w[1].xint.ln();
            (0.5 * (w[0].time + w[1].time), -(l1 - l0) / (w[1].time - w[0].time))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub start: f64,
    pub end: f64,
    pub level: f64,
}

/// Maximal runs over which a rate series stays within `rel_tol` of its
/// running mean for at least `min_duration`.
pub fn find_plateaus(series: &[(f64, f64)], rel_tol: f64, min_duration: f64) -> Vec<Plateau> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < series.len() {
        let mut sum = series[i].1;
        let mut j = i + 1;
        while j < series.len() {
            let mean = sum / (j - i) as f64;
            if (series[j].1 - mean).abs() > rel_tol * mean.abs() {
                break;
            }
            sum += series[j].1;
            j += 1;
        }
        let (start, end) = (series[i].0, series[j - 1].0);
        if end - start >= min_duration {
            out.push(Plateau {
                start,
                end,
                level: sum / (j - i) as f64,
            });
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UTurn {
    pub initial: f64,
    pub turn_time: f64,
    pub minimum: f64,
    pub last: f64,
}

/// A series that first decreases to an interior minimum and then rises
/// again by at least `min_rise` from it.
pub fn detect_u_turn(series: &[(f64, f64)], min_rise: f64) -> Option<UTurn> {
    let (k, &(turn_time, minimum)) = series
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))?;
    let initial = series.first()?.1;
    let last = series.last()?.1;
    let interior = k > 0 && k + 1 < series.len();
    (interior && initial - minimum >= min_rise && last - minimum >= min_rise).then_some(UTurn {
        initial,
        turn_time,
        minimum,
        last,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaRow {
    pub eta: f64,
    /// First time `x1` exceeds the level, if within the horizon.
    pub emergence_time: Option<f64>,
    pub truncated_mass: f64,
    pub final_x1: f64,
    pub error: Option<String>,
}

/// Emergence time of the atom at 1 for each truncation level.
pub fn eta_sweep(
    params: &ModelParams,
    mu0: &DecomposedMeasure,
    etas: &[f64],
    horizon: f64,
    dt: f64,
    level: f64,
    exec: Exec,
) -> Result<Vec<EtaRow>> {
    let solver = PdeSolver::new(params)?;
    Ok(exec.map(etas.len(), |i| {
        let eta = etas[i];
        match solver.truncated_evolve(mu0, eta, horizon, &EvolveOptions::new(dt)) {
            Ok(ev) => EtaRow {
                eta,
                emergence_time: ev.first_time_x1_above(level),
                truncated_mass: ev.total_truncated(),
                final_x1: ev.final_sample().x1,
                error: None,
            },
            Err(e) => EtaRow {
                eta,
                emergence_time: None,
                truncated_mass: f64::NAN,
                final_x1: f64::NAN,
                error: Some(e.to_string()),
            },
        }
    }))
}
