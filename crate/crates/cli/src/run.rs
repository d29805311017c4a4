use serde::Serialize;
use twolevel::ibm::{self, IbmState};
use twolevel::invasion::{self, Invasion, InvasionSetting};
use twolevel::measure::MeasureRow;
use twolevel::pde::{default_dt, write_series_csv, Conditioning, EvolveOptions, ForwardOperator, PdeSolver};
use twolevel::qsd::{self, QsdOptions};
use twolevel::regime::{self, Plateau, UTurn};
use twolevel::{DecomposedMeasure, Exec};

use crate::config::{Directions, ExperimentConfig, IbmMode, Initial, Kind, ScanBlock};
use crate::error::{CliError, Context, Result};
use crate::output::{num, opt, Outputs};

/// Runs the experiment, writing every artifact into `out`. Returns the lines
/// meant for stdout.
pub fn execute(cfg: &ExperimentConfig, out: &mut Outputs, exec: Exec) -> Result<Vec<String>> {
    match cfg.kind {
        Kind::Pde => pde(cfg, out),
        Kind::Qsd => qsd(cfg, out),
        Kind::Classify => classify(cfg, out),
        Kind::VerifyRate => verify_rate(cfg, out),
        Kind::Ibm => ibm(cfg, out, exec),
        Kind::Invasion => invasion(cfg, out, exec),
        Kind::Scan => scan(cfg, out, exec),
        Kind::Figure => figure(cfg, out),
    }
}

fn measure_rows(time: f64, mu: &DecomposedMeasure) -> impl Iterator<Item = Vec<String>> {
    mu.rows().into_iter().map(move |MeasureRow { location, mass, kind }| {
        let kind = serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_string));
        vec![num(time), num(location), num(mass), kind.unwrap_or_default()]
    })
}

fn resolve_dt(cfg: &ExperimentConfig, dt: Option<f64>) -> Result<f64> {
    match dt {
        Some(dt) => Ok(dt),
        None => default_dt(&cfg.params).ctx("params"),
    }
}

#[derive(Serialize)]
struct PdeSummary {
    dt: f64,
    steps: usize,
    conditioning: Conditioning,
    eta: f64,
    final_x0: f64,
    final_x1: f64,
    final_xint: f64,
    log_mass: f64,
    total_truncated: f64,
}

fn pde(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>> {
    let b = cfg.pde.as_ref().expect("validated");
    let mu0 = cfg.initial().measure(cfg.params.grid_size)?;
    let opts = EvolveOptions::new(resolve_dt(cfg, b.dt)?)
        .sample_every(b.sample_every)
        .conditioning(b.conditioning)
        .eta(b.eta)
        .snapshots(b.snapshots.clone());
    let ev = PdeSolver::new(&cfg.params).ctx("params")?.evolve(&mu0, b.horizon, &opts).ctx("pde")?;
    out.csv("series.csv", |w| write_series_csv(&ev.samples, w).ctx("pde"))?;
    out.table(
        "snapshots.csv",
        &["time", "location", "mass", "kind"],
        ev.snapshots.iter().flat_map(|(t, mu)| measure_rows(*t, mu)),
    )?;
    out.csv("final_measure.csv", |w| ev.final_measure.write_csv(w).ctx("pde"))?;
    out.table(
        "truncations.csv",
        &["time", "removed"],
        ev.truncations.iter().map(|e| vec![num(e.time), num(e.removed)]),
    )?;
    let last = ev.final_sample();
    let summary = PdeSummary {
        dt: ev.dt,
        steps: if b.horizon == 0.0 { 0 } else { (b.horizon / ev.dt).round() as usize },
        conditioning: b.conditioning,
        eta: b.eta,
        final_x0: last.x0,
        final_x1: last.x1,
        final_xint: last.xint,
        log_mass: last.log_mass,
        total_truncated: ev.total_truncated(),
    };
    out.json("summary.json", &summary)?;
    Ok(vec![format!(
        "t={} x0={:.6e} x1={:.6e} xint={:.6e} log_mass={:.6e}",
        b.horizon, last.x0, last.x1, last.xint, last.log_mass
    )])
}

#[derive(Serialize)]
struct QsdSummary {
    rho_alpha: f64,
    rho0: f64,
    rho1: f64,
    rho_left: f64,
    rho_right: f64,
    p0: f64,
    p1: f64,
    p_soft: f64,
    residual_left: f64,
    residual_right: f64,
    gap_estimate: f64,
    iterations: usize,
    alpha_mean: f64,
    critical_mixture_x: f64,
    ext_rho_residual: f64,
}

fn qsd(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>> {
    let b = cfg.qsd.clone().unwrap_or_default();
    let op = ForwardOperator::build(&cfg.params).ctx("params")?;
    let sol = qsd::solve_qsd_operator(
        &op,
        &QsdOptions {
            tol: b.tol,
            max_iter: b.max_iter,
        },
    )
    .ctx("qsd")?;
    let check = qsd::verify_ext_rho(&sol, &cfg.params).ctx("qsd")?;
    out.csv("profiles.csv", |w| qsd::write_profiles_csv(&sol, w).ctx("qsd"))?;
    let summary = QsdSummary {
        rho_alpha: sol.rho_alpha,
        rho0: sol.rho0,
        rho1: sol.rho1,
        rho_left: sol.rho_left,
        rho_right: sol.rho_right,
        p0: sol.p0,
        p1: sol.p1,
        p_soft: sol.p_soft,
        residual_left: sol.residual_left,
        residual_right: sol.residual_right,
        gap_estimate: sol.gap_estimate,
        iterations: sol.iterations,
        alpha_mean: sol.alpha_mean(),
        critical_mixture_x: qsd::critical_mixture_x(&sol),
        ext_rho_residual: check.residual,
    };
    out.json("qsd.json", &summary)?;
    Ok(vec![format!(
        "rho_alpha={:.9e} rho0={:.6e} rho1={:.6e} gap={:.3e}",
        sol.rho_alpha, sol.rho0, sol.rho1, sol.gap_estimate
    )])
}

fn classify(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>> {
    let tol = cfg.classify.clone().unwrap_or_default().tie_tol;
    let report = regime::classify(&cfg.params, tol).ctx("classify")?;
    out.json("report.json", &report)?;
    Ok(vec![report.summary_line()])
}

fn verify_rate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>> {
    let b = cfg.verify.as_ref().expect("validated");
    let mu0 = cfg.initial().measure(cfg.params.grid_size)?;
    let report = regime::verify_rate(&cfg.params, &mu0, b.horizon, &b.options()).ctx("verify")?;
    out.json("report.json", &report)?;
    Ok(vec![report.summary_line()])
}

fn ibm_initial(cfg: &ExperimentConfig, rates: twolevel::IbmRates) -> Result<IbmState> {
    let n = rates.n;
    let k = match cfg.initial() {
        Initial::Point { x } => (x * n as f64).round() as usize,
        Initial::Delta0 => 0,
        Initial::Delta1 => n,
        Initial::Uniform => unreachable!("rejected by validation"),
    };
    IbmState::uniform(rates, k).ctx("initial")
}

fn ibm(cfg: &ExperimentConfig, out: &mut Outputs, exec: Exec) -> Result<Vec<String>> {
    let b = cfg.ibm.as_ref().expect("validated");
    let rates = twolevel::ibm_rates_from_limit(&cfg.params, b.n, b.m, b.gamma_g_bar).ctx("ibm")?;
    let initial = ibm_initial(cfg, rates)?;
    let grid = cfg.params.grid_size;
    match b.mode {
        IbmMode::Trajectory => {
            let runs = ibm::trajectories(&initial, &b.times, grid, b.replicates, cfg.seed, exec).ctx("ibm")?;
            out.csv("trajectory.csv", |w| ibm::write_trajectory_csv(&runs, w).ctx("ibm"))?;
            let mean = ibm::average_runs(&runs, grid).ctx("ibm")?;
            out.table(
                "mean.csv",
                &["time", "x0", "x1", "xint", "mean"],
                mean.iter().map(|(t, mu)| vec![num(*t), num(mu.x0), num(mu.x1), num(mu.interior_mass()), num(mu.mean())]),
            )?;
            let (t, last) = mean.last().expect("times are non-empty");
            Ok(vec![format!(
                "{} replicates; mean at t={t}: x0={:.4} x1={:.4} xint={:.4}",
                b.replicates,
                last.x0,
                last.x1,
                last.interior_mass()
            )])
        }
        IbmMode::Absorption => {
            let stats = ibm::absorption_stats(&initial, b.replicates, b.horizon, cfg.seed, exec).ctx("ibm")?;
            out.json("absorption.json", &stats)?;
            Ok(vec![format!(
                "all-D {:.4} all-C {:.4} alive {:.4} ({} replicates)",
                stats.all_d.estimate, stats.all_c.estimate, stats.alive.estimate, stats.replicates
            )])
        }
    }
}

#[derive(Serialize)]
struct InvasionReport {
    closed_form: invasion::InvasionProbs,
    direction: invasion::DirectionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    strong_selection: Option<invasion::StrongSelection>,
    monte_carlo: Vec<invasion::InvasionMc>,
}

fn invasion(cfg: &ExperimentConfig, out: &mut Outputs, exec: Exec) -> Result<Vec<String>> {
    let b = cfg.invasion.as_ref().expect("validated");
    let setting = InvasionSetting {
        params: cfg.params.clone(),
        n: b.n,
        m: b.m,
        gamma_g: b.gamma_g,
    };
    let closed_form = invasion::invasion_probs(&setting).ctx("invasion")?;
    let direction = invasion::selection_direction(&setting, true).ctx("invasion")?;
    let strong_selection = invasion::strong_selection_asymptotics(&setting).ok();
    let dirs: &[Invasion] = match b.direction {
        Directions::DToC => &[Invasion::DToC],
        Directions::CToD => &[Invasion::CToD],
        Directions::Both => &[Invasion::DToC, Invasion::CToD],
    };
    let mut monte_carlo = Vec::new();
    if b.replicates > 0 {
        for (i, d) in dirs.iter().enumerate() {
            // distinct seeds per direction so the two ensembles are independent
            let seed = cfg.seed.wrapping_add(i as u64);
            monte_carlo.push(invasion::invasion_mc(&setting, *d, b.replicates, b.horizon, seed, exec).ctx("invasion")?);
        }
    }
    let mut lines = vec![format!(
        "pi_DC={:.6e} pi_CD={:.6e} direction={:?}",
        closed_form.pi_dc, closed_form.pi_cd, direction.direction
    )];
    for mc in &monte_carlo {
        lines.push(format!(
            "{:?}: {}/{} fixed ({:.3e}, predicted {:.3e}, z={:.2})",
            mc.direction,
            mc.fixation.successes,
            mc.fixation.trials,
            mc.fixation.estimate,
            mc.predicted,
            mc.fixation.z_score(mc.predicted)
        ));
    }
    out.json(
        "invasion.json",
        &InvasionReport {
            closed_form,
            direction,
            strong_selection,
            monte_carlo,
        },
    )?;
    Ok(lines)
}

fn all_failed<T>(rows: &[T], failed: impl Fn(&T) -> bool) -> Result<()> {
    if !rows.is_empty() && rows.iter().all(failed) {
        Err(CliError::Numerical("scan: every grid point failed".into()))
    } else {
        Ok(())
    }
}

fn scan(cfg: &ExperimentConfig, out: &mut Outputs, exec: Exec) -> Result<Vec<String>> {
    let b = cfg.scan.as_ref().expect("validated");
    match b {
        ScanBlock::Gamma { values, tail } => {
            let gammas = values.values("scan.values")?;
            let s = regime::scan_gamma(&cfg.params, &gammas, *tail, exec).ctx("scan")?;
            out.table(
                "gamma_scan.csv",
                &["gamma", "rho_alpha", "error"],
                s.rows.iter().map(|r| vec![num(r.gamma), opt(r.rho_alpha), r.error.clone().unwrap_or_default()]),
            )?;
            out.json("scan.json", &s)?;
            all_failed(&s.rows, |r| r.error.is_some())?;
            Ok(vec![format!("{} points; rho_alpha increasing over the last {}: {}", s.rows.len(), s.tail, s.tail_increasing)])
        }
        ScanBlock::RScale { values, rel_tol } => {
            let scales = values.values("scan.values")?;
            let s = regime::scan_r_scale(&cfg.params, &scales, *rel_tol, exec).ctx("scan")?;
            out.table(
                "r_scan.csv",
                &["r_scale", "rho_alpha", "min_rho01", "sign", "error"],
                s.rows.iter().map(|r| {
                    vec![
                        num(r.r_scale),
                        opt(r.rho_alpha),
                        num(r.min_rho01),
                        r.sign.to_string(),
                        r.error.clone().unwrap_or_default(),
                    ]
                }),
            )?;
            out.table(
                "brackets.csv",
                &["lo", "hi", "critical"],
                s.brackets.iter().map(|k| vec![num(k.lo), num(k.hi), num(k.critical)]),
            )?;
            all_failed(&s.rows, |r| r.error.is_some())?;
            Ok(s.brackets.iter().map(|k| format!("critical R = {:.6e} in [{:.6e}, {:.6e}]", k.critical, k.lo, k.hi)).collect())
        }
        ScanBlock::Eta {
            values,
            horizon,
            dt,
            level,
        } => {
            let etas = values.values("scan.values")?;
            let mu0 = cfg.initial().measure(cfg.params.grid_size)?;
            let dt = resolve_dt(cfg, *dt)?;
            let rows = regime::eta_sweep(&cfg.params, &mu0, &etas, *horizon, dt, *level, exec).ctx("scan")?;
            out.table(
                "eta_sweep.csv",
                &["eta", "emergence_time", "truncated_mass", "final_x1", "error"],
                rows.iter().map(|r| {
                    vec![
                        num(r.eta),
                        opt(r.emergence_time),
                        num(r.truncated_mass),
                        num(r.final_x1),
                        r.error.clone().unwrap_or_default(),
                    ]
                }),
            )?;
            all_failed(&rows, |r| r.error.is_some())?;
            Ok(rows
                .iter()
                .map(|r| match r.emergence_time {
                    Some(t) => format!("eta={:e}: x1 > {level} at t={t}", r.eta),
                    None => format!("eta={:e}: no emergence before t={horizon}", r.eta),
                })
                .collect())
        }
        ScanBlock::InvasionRatio {
            n,
            m,
            s_over_gamma,
            r1_over_gamma_g,
        } => {
            let a = s_over_gamma.values("scan.s_over_gamma")?;
            let bgrid = r1_over_gamma_g.values("scan.r1_over_gamma_g")?;
            let rows = invasion::ratio_sweep(*n, *m, &a, &bgrid).ctx("scan")?;
            out.csv("invasion_ratio.csv", |w| invasion::write_sweep_csv(&rows, w).ctx("scan"))?;
            Ok(vec![format!("{} grid points", rows.len())])
        }
    }
}

#[derive(Serialize)]
struct FigureSummary {
    rho0: f64,
    rho1: f64,
    rho_alpha: f64,
    regime: regime::Regime,
    dt: f64,
    plateaus: Vec<Plateau>,
    u_turn: Option<UTurn>,
}

fn ln(v: f64) -> String {
    num(v.ln())
}

fn figure(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Vec<String>> {
    let b = cfg.figure.as_ref().expect("validated");
    let mu0 = cfg.initial().measure(cfg.params.grid_size)?;
    let dt = resolve_dt(cfg, b.dt)?;
    let opts = EvolveOptions::new(dt)
        .sample_every(b.sample_every)
        .snapshots(b.profile_times.clone());
    let mut means = Vec::new();
    let ev = PdeSolver::new(&cfg.params)
        .ctx("params")?
        .evolve_observed(&mu0, b.horizon, &opts, |s, mu| means.push((s.time, mu.interior_mean())))
        .ctx("figure")?;
    out.table(
        "log_series.csv",
        &["time", "log_x0", "log_x1", "log_xint", "log_mass", "interior_mean"],
        ev.samples
            .iter()
            .zip(&means)
            .map(|(s, (_, m))| vec![num(s.time), ln(s.x0), ln(s.x1), ln(s.xint), num(s.log_mass), opt(*m)]),
    )?;
    out.table(
        "profiles.csv",
        &["time", "location", "density"],
        ev.snapshots.iter().flat_map(|(t, mu)| {
            let n = mu.grid_size();
            let profile = mu.interior_profile().unwrap_or_else(|| vec![f64::NAN; n]);
            profile
                .into_iter()
                .enumerate()
                .map(move |(k, v)| vec![num(*t), num(twolevel::model::midpoint(k, n)), num(v * n as f64)])
        }),
    )?;
    let sol = twolevel::solve_qsd(&cfg.params).ctx("figure")?;
    out.csv("qsd_profiles.csv", |w| qsd::write_profiles_csv(&sol, w).ctx("figure"))?;
    let rates = regime::interior_decay_rates(&ev.samples);
    out.table("decay_rates.csv", &["time", "rate"], rates.iter().map(|(t, r)| vec![num(*t), num(*r)]))?;
    let plateaus = regime::find_plateaus(&rates, b.plateau_rel_tol, b.plateau_min_duration);
    let mean_series: Vec<(f64, f64)> = means.iter().filter_map(|(t, m)| m.map(|m| (*t, m))).collect();
    let u_turn = regime::detect_u_turn(&mean_series, b.u_turn_min_rise);
    let class = regime::classify_rates(sol.rho0, sol.rho1, sol.rho_alpha, regime::DEFAULT_TIE_TOL);
    let summary = FigureSummary {
        rho0: sol.rho0,
        rho1: sol.rho1,
        rho_alpha: sol.rho_alpha,
        regime: class.regime,
        dt: ev.dt,
        plateaus,
        u_turn,
    };
    out.json("figure.json", &summary)?;
    let mut line = format!("regime {} rho_alpha={:.4e}; decay-rate plateaus:", summary.regime, summary.rho_alpha);
    for p in &summary.plateaus {
        line.push_str(&format!(" {:.4e}@[{},{}]", p.level, p.start, p.end));
    }
    if let Some(u) = &summary.u_turn {
        line.push_str(&format!("; interior mean u-turn at t={}", u.turn_time));
    }
    Ok(vec![line])
}
