//! Monte Carlo for the limiting diffusion: Euler-Maruyama Wright-Fisher
//! paths, Feynman-Kac weighting, exponential-clock killing and fixation
//! probabilities.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::{chunk_ranges, stream_rng, Exec};
use crate::measure::{cell_of, DecomposedMeasure};
use crate::model::{ModelParams, RateFunction};
use crate::stats::{wilson, Proportion, Z95};

/// Paths closer than this to a boundary are absorbed there.
pub const EPS_ABS: f64 = 1e-6;

const CHUNK: usize = 1024;

/// `rho(x) = sup r - r(x)` evaluated pointwise.
#[derive(Clone, Debug)]
pub struct Rho {
    r: RateFunction,
    sup: f64,
    pub rho0: f64,
    pub rho1: f64,
}

impl Rho {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let k = params.killing()?;
        Ok(Rho {
            r: params.r.clone(),
            sup: k.sup_r,
            rho0: k.rho0,
            rho1: k.rho1,
        })
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.sup - self.r.eval(x)).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WfPath {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    /// Accumulated `int_0^t rho(X_s) ds` at each sample time.
    pub penalty: Vec<f64>,
    pub tau0: f64,
    pub tau1: f64,
    /// Time at which the penalty crossed an independent Exp(1) level, if drawn.
    pub kill_time: Option<f64>,
}

/// `min(1e-3 / gamma, 1e-2 / (|s| + max rho), 0.01)`
pub fn default_dt(params: &ModelParams) -> Result<f64> {
    let k = params.killing()?;
    Ok((1e-3 / params.gamma)
        .min(1e-2 / (params.s.abs() + k.max()).max(1e-12))
        .min(0.01))
}

fn check_dt(params: &ModelParams, dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid("dt", format!("must be > 0, got {dt}")));
    }
    if dt >= 1.0 / (4.0 * params.gamma) {
        return Err(invalid(
            "dt",
            format!("must be < 1/(4 gamma) = {}", 1.0 / (4.0 * params.gamma)),
        ));
    }
    Ok(())
}

/// One Euler-Maruyama step with clamping and absorption.
#[inline]
fn em_step<R: Rng + ?Sized>(x: f64, s: f64, gamma: f64, dt: f64, rng: &mut R) -> f64 {
    let v = x * (1.0 - x);
    let z: f64 = StandardNormal.sample(rng);
    let y = x - s * v * dt + (2.0 * gamma * v * dt).sqrt() * z;
    if y <= EPS_ABS {
        0.0
    } else if y >= 1.0 - EPS_ABS {
        1.0
    } else {
        y
    }
}

/// Simulates one path, recording every `record_every`-th step.
pub fn simulate_path<R: Rng + ?Sized>(
    x0: f64,
    params: &ModelParams,
    dt: f64,
    horizon: f64,
    record_every: usize,
    with_clock: bool,
    rng: &mut R,
) -> Result<WfPath> {
    if !(0.0..=1.0).contains(&x0) {
        return Err(invalid("x0", format!("{x0} is outside [0,1]")));
    }
    check_dt(params, dt)?;
    let rho = Rho::new(params)?;
    let steps = (horizon / dt).ceil() as usize;
    let every = record_every.max(1);
    let level: f64 = if with_clock {
        Exp1.sample(rng)
    } else {
        f64::INFINITY
    };
    let mut path = WfPath {
        times: vec![0.0],
        positions: vec![x0],
        penalty: vec![0.0],
        tau0: if x0 == 0.0 { 0.0 } else { f64::INFINITY },
        tau1: if x0 == 1.0 { 0.0 } else { f64::INFINITY },
        kill_time: None,
    };
    let mut x = x0;
    let mut pen = 0.0;
    for i in 1..=steps {
        let t = i as f64 * dt;
        let y = if x == 0.0 || x == 1.0 {
            x
        } else {
            em_step(x, params.s, params.gamma, dt, rng)
        };
        pen += 0.5 * (rho.eval(x) + rho.eval(y)) * dt;
        if y == 0.0 && x != 0.0 {
            path.tau0 = t;
        }
        if y == 1.0 && x != 1.0 {
            path.tau1 = t;
        }
        if path.kill_time.is_none() && pen > level {
            path.kill_time = Some(t);
        }
        x = y;
        if i % every == 0 || i == steps {
            path.times.push(t);
            path.positions.push(x);
            path.penalty.push(pen);
        }
    }
    Ok(path)
}

/// State of one path at the target time.
#[derive(Clone, Copy, Debug)]
struct PathEnd {
    x: f64,
    penalty: f64,
    /// Penalty accumulated up to the absorption time (NaN if not absorbed).
    crossed: bool,
}

/// Runs a path to time `t`. Once absorbed the penalty is extended exactly
/// with the atom's killing rate. `threshold` records whether the path went
/// at or below that level.
#[inline]
#[allow(clippy::too_many_arguments)]
fn run_to<R: Rng + ?Sized>(
    x0: f64,
    s: f64,
    gamma: f64,
    rho: &Rho,
    dt: f64,
    steps: usize,
    threshold: f64,
    rng: &mut R,
) -> PathEnd {
    let mut x = x0;
    let mut pen = 0.0;
    let mut rx = rho.eval(x);
    let mut crossed = x <= threshold;
    for i in 0..steps {
        if x == 0.0 || x == 1.0 {
            let rb = if x == 0.0 { rho.rho0 } else { rho.rho1 };
            pen += rb * (steps - i) as f64 * dt;
            break;
        }
        let y = em_step(x, s, gamma, dt, rng);
        let ry = rho.eval(y);
        pen += 0.5 * (rx + ry) * dt;
        x = y;
        rx = ry;
        crossed |= x <= threshold;
    }
    PathEnd {
        x,
        penalty: pen,
        crossed,
    }
}

/// Weighted ensemble estimate of the normalized measure at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEstimate {
    pub measure: DecomposedMeasure,
    pub x0: f64,
    pub x1: f64,
    pub xint: f64,
    pub paths: usize,
    /// `(1/K) sum Z_t`, an estimate of the survival probability.
    pub normalizer: f64,
    /// `(sum Z)^2 / sum Z^2`
    pub effective_sample_size: f64,
    /// Fraction of paths alive at `t` (clock mode only, else 1).
    pub survival_fraction: f64,
    pub dt: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Weighting {
    FeynmanKac,
    KillClock,
}

struct Partial {
    hist: DecomposedMeasure,
    sum_w: f64,
    sum_w2: f64,
    alive: usize,
}

#[allow(clippy::too_many_arguments)]
fn ensemble(
    mu0: &DecomposedMeasure,
    t: f64,
    paths: usize,
    params: &ModelParams,
    dt: f64,
    seed: u64,
    exec: Exec,
    mode: Weighting,
) -> Result<EnsembleEstimate> {
    mu0.validate_normalized()?;
    check_dt(params, dt)?;
    if paths == 0 {
        return Err(invalid("paths", "must be >= 1"));
    }
    let n = mu0.grid_size();
    let h = 1.0 / n as f64;
    let rho = Rho::new(params)?;
    let steps = (t / dt).round() as usize;
    let dt = if steps > 0 { t / steps as f64 } else { dt };
    let mut weights = Vec::with_capacity(n + 2);
    weights.push(mu0.x0);
    weights.extend_from_slice(&mu0.interior);
    weights.push(mu0.x1);
    let picker = WeightedIndex::new(&weights).map_err(|e| invalid("mu0", e.to_string()))?;
    let chunks = chunk_ranges(paths, CHUNK);
    let partials = exec.map(chunks.len(), |c| {
        let mut rng = stream_rng(seed, c as u64);
        let mut hist = DecomposedMeasure::zero(n);
        let (mut sum_w, mut sum_w2, mut alive) = (0.0, 0.0, 0usize);
        for _ in chunks[c].clone() {
            let idx = picker.sample(&mut rng);
            let x0 = if idx == 0 {
                0.0
            } else if idx == n + 1 {
                1.0
            } else {
                (idx as f64 - 1.0 + rng.random::<f64>()) * h
            };
            let level: f64 = match mode {
                Weighting::KillClock => Exp1.sample(&mut rng),
                Weighting::FeynmanKac => 0.0,
            };
            let end = run_to(x0, params.s, params.gamma, &rho, dt, steps, -1.0, &mut rng);
            let w = match mode {
                Weighting::FeynmanKac => (-end.penalty).exp(),
                Weighting::KillClock => {
                    if end.penalty < level {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            if w > 0.0 {
                alive += 1;
            }
            sum_w += w;
            sum_w2 += w * w;
            if end.x == 0.0 {
                hist.x0 += w;
            } else if end.x == 1.0 {
                hist.x1 += w;
            } else {
                hist.interior[cell_of(end.x, n)] += w;
            }
        }
        Partial {
            hist,
            sum_w,
            sum_w2,
            alive,
        }
    });
    let mut hist = DecomposedMeasure::zero(n);
    let (mut sum_w, mut sum_w2, mut alive) = (0.0, 0.0, 0usize);
    for p in &partials {
        hist.add_scaled(1.0, &p.hist)?;
        sum_w += p.sum_w;
        sum_w2 += p.sum_w2;
        alive += p.alive;
    }
    let survival_fraction = alive as f64 / paths as f64;
    if !(sum_w > f64::MIN_POSITIVE) {
        return Err(match mode {
            Weighting::FeynmanKac => Error::DegenerateWeights,
            Weighting::KillClock => Error::DegenerateSample { survival_fraction },
        });
    }
    hist.scale(1.0 / sum_w);
    Ok(EnsembleEstimate {
        x0: hist.x0,
        x1: hist.x1,
        xint: hist.interior_mass(),
        measure: hist,
        paths,
        normalizer: sum_w / paths as f64,
        effective_sample_size: sum_w * sum_w / sum_w2,
        survival_fraction,
        dt,
        seed,
    })
}

/// Feynman-Kac weighted estimate of the normalized flow at time `t`.
pub fn feynman_kac_estimate(
    mu0: &DecomposedMeasure,
    t: f64,
    paths: usize,
    params: &ModelParams,
    dt: f64,
    seed: u64,
    exec: Exec,
) -> Result<EnsembleEstimate> {
    ensemble(mu0, t, paths, params, dt, seed, exec, Weighting::FeynmanKac)
}

/// Estimate of the law at `t` conditioned on survival, by killing each path
/// once its penalty passes an independent Exp(1) level.
pub fn kill_clock_estimate(
    mu0: &DecomposedMeasure,
    t: f64,
    paths: usize,
    params: &ModelParams,
    dt: f64,
    seed: u64,
    exec: Exec,
) -> Result<EnsembleEstimate> {
    ensemble(mu0, t, paths, params, dt, seed, exec, Weighting::KillClock)
}

/// `(exp(s x / gamma) - 1) / (exp(s / gamma) - 1)`
pub fn kimura_fixation_prob(x: f64, s: f64, gamma: f64) -> f64 {
    let a = s / gamma;
    if a.abs() < 1e-8 {
        return x;
    }
    if a > 0.0 {
        // rewritten to avoid overflow for large a
        (a * (x - 1.0)).exp() * (-a * x).exp_m1() / (-a).exp_m1()
    } else {
        (a * x).exp_m1() / a.exp_m1()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixationCounts {
    pub at0: u64,
    pub at1: u64,
    pub alive: u64,
    pub fixation: Proportion,
}

/// Absorption at 1 versus 0 for unkilled paths started at `x0`.
pub fn fixation_mc(
    x0: f64,
    params: &ModelParams,
    dt: f64,
    horizon: f64,
    paths: usize,
    seed: u64,
    exec: Exec,
) -> Result<FixationCounts> {
    check_dt(params, dt)?;
    let steps = (horizon / dt).ceil() as usize;
    let rho = Rho {
        r: RateFunction::zero(),
        sup: 0.0,
        rho0: 0.0,
        rho1: 0.0,
    };
    let chunks = chunk_ranges(paths, CHUNK);
    let parts = exec.map(chunks.len(), |c| {
        let mut rng = stream_rng(seed, c as u64);
        let mut counts = [0u64; 3];
        for _ in chunks[c].clone() {
            let end = run_to(x0, params.s, params.gamma, &rho, dt, steps, -1.0, &mut rng);
            let slot = if end.x == 0.0 {
                0
            } else if end.x == 1.0 {
                1
            } else {
                2
            };
            counts[slot] += 1;
        }
        counts
    });
    let mut c = [0u64; 3];
    for p in parts {
        for i in 0..3 {
            c[i] += p[i];
        }
    }
    Ok(FixationCounts {
        at0: c[0],
        at1: c[1],
        alive: c[2],
        fixation: wilson(c[1], paths as u64, Z95),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub lower: f64,
    pub upper: f64,
    pub paths: usize,
}

/// `P_{1-eps}(t < tau_eps | t < tau_kill)` as a Feynman-Kac weighted ratio,
/// where `tau_eps` is the first time the path is at or below `eps`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_escape_prob(
    eps: f64,
    t: f64,
    params: &ModelParams,
    paths: usize,
    dt: f64,
    seed: u64,
    exec: Exec,
) -> Result<RatioEstimate> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(invalid("eps", format!("must lie in (0, 1/2], got {eps}")));
    }
    check_dt(params, dt)?;
    let rho = Rho::new(params)?;
    let steps = (t / dt).round() as usize;
    let chunks = chunk_ranges(paths, CHUNK);
    let parts = exec.map(chunks.len(), |c| {
        let mut rng = stream_rng(seed, c as u64);
        chunks[c]
            .clone()
            .map(|_| {
                let end = run_to(1.0 - eps, params.s, params.gamma, &rho, dt, steps, eps, &mut rng);
                let w = (-end.penalty).exp();
                (w, if end.crossed { 0.0 } else { w })
            })
            .collect::<Vec<_>>()
    });
    let all: Vec<(f64, f64)> = parts.into_iter().flatten().collect();
    let sw: f64 = all.iter().map(|p| p.0).sum();
    if !(sw > f64::MIN_POSITIVE) {
        return Err(Error::DegenerateSample {
            survival_fraction: 0.0,
        });
    }
    let r = all.iter().map(|p| p.1).sum::<f64>() / sw;
    let var: f64 = all
        .iter()
        .map(|(w, wi)| {
            let ind = if *w > 0.0 { wi / w } else { 0.0 };
            (w * (ind - r)).powi(2)
        })
        .sum::<f64>()
        / (sw * sw);
    let se = var.sqrt();
    Ok(RatioEstimate {
        estimate: r,
        stderr: se,
        lower: (r - Z95 * se).max(0.0),
        upper: (r + Z95 * se).min(1.0),
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::tv_distance;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(gamma: f64, s: f64, r: RateFunction) -> ModelParams {
        ModelParams::new(gamma, s, r, 50).unwrap()
    }

    #[test]
    fn boundary_paths_stay_put() {
        let p = params(0.5, 0.2, RateFunction::Linear { slope: 0.3 });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let path = simulate_path(0.0, &p, 0.01, 2.0, 10, false, &mut rng).unwrap();
        assert!(path.positions.iter().all(|x| *x == 0.0));
        assert_eq!(path.tau0, 0.0);
        assert_relative_eq!(*path.penalty.last().unwrap(), 0.3 * 2.0, max_relative = 1e-12);
        let path = simulate_path(1.0, &p, 0.01, 2.0, 10, false, &mut rng).unwrap();
        assert!(path.positions.iter().all(|x| *x == 1.0));
        assert_eq!(path.tau1, 0.0);
        assert_eq!(*path.penalty.last().unwrap(), 0.0);
    }

    #[test]
    fn penalty_is_nondecreasing_and_positions_bounded() {
        let p = params(0.5, 0.2, RateFunction::Linear { slope: 0.3 });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let path = simulate_path(0.4, &p, 0.01, 3.0, 1, true, &mut rng).unwrap();
            assert!(path.penalty.windows(2).all(|w| w[1] >= w[0]));
            assert!(path.positions.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn unstable_dt_rejected() {
        let p = params(1.0, 0.0, RateFunction::zero());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(simulate_path(0.5, &p, 0.25, 1.0, 1, false, &mut rng).is_err());
    }

    #[test]
    fn neutral_fixation_equals_start() {
        let p = params(0.5, 0.0, RateFunction::zero());
        let c = fixation_mc(0.3, &p, 1e-3, 40.0, 20_000, 7, Exec::Parallel).unwrap();
        assert_eq!(c.alive, 0);
        assert!(c.fixation.consistent_with(0.3, 3.0), "{:?}", c.fixation);
    }

    #[test]
    fn kimura_values() {
        assert_eq!(kimura_fixation_prob(0.0, 0.3, 1.0), 0.0);
        assert_relative_eq!(kimura_fixation_prob(1.0, 0.3, 1.0), 1.0, epsilon = 1e-15);
        assert_eq!(kimura_fixation_prob(0.4, 1e-12, 1.0), 0.4);
        let e = 1f64.exp();
        assert_relative_eq!(kimura_fixation_prob(0.5, 1.0, 1.0), (0.5f64.exp() - 1.0) / (e - 1.0), epsilon = 1e-15);
        assert_relative_eq!(kimura_fixation_prob(0.5, 1.0, 1.0), 0.377541, epsilon = 1e-6);
        assert!(kimura_fixation_prob(0.5, 1e4, 1.0) >= 0.0);
    }

    #[test]
    fn kimura_matches_monte_carlo() {
        let p = params(0.5, 0.5, RateFunction::zero());
        let c = fixation_mc(0.5, &p, 1e-3, 60.0, 20_000, 11, Exec::Parallel).unwrap();
        let expected = kimura_fixation_prob(0.5, 0.5, 0.5);
        assert_relative_eq!(expected, 0.377541, epsilon = 1e-6);
        assert!(c.fixation.consistent_with(expected, 3.0), "{:?} vs {expected}", c.fixation);
    }

    #[test]
    fn constant_rate_gives_unweighted_law() {
        let p = params(0.2, 0.1, RateFunction::Polynomial { coefficients: vec![1.5] });
        let mu0 = DecomposedMeasure::point(0.5, 50).unwrap();
        let est = feynman_kac_estimate(&mu0, 1.0, 2000, &p, 1e-3, 3, Exec::Parallel).unwrap();
        assert_eq!(est.normalizer, 1.0);
        assert_relative_eq!(est.effective_sample_size, 2000.0, max_relative = 1e-12);
        let clock = kill_clock_estimate(&mu0, 1.0, 2000, &p, 1e-3, 3, Exec::Parallel).unwrap();
        assert_eq!(clock.survival_fraction, 1.0);
    }

    #[test]
    fn delta0_estimate_is_delta0() {
        let p = params(0.2, 0.1, RateFunction::Linear { slope: 1.0 });
        let est = feynman_kac_estimate(&DecomposedMeasure::delta0(50), 2.0, 500, &p, 1e-3, 1, Exec::Sequential).unwrap();
        assert_eq!(est.measure, DecomposedMeasure::delta0(50));
    }

    #[test]
    fn clock_survival_for_constant_killing() {
        // rho = 1 - 1{x = 1}... use rho(0) only: start at 0 with r = x, so rho = 1 at 0
        let p = params(0.2, 0.1, RateFunction::Linear { slope: 1.0 });
        let est = kill_clock_estimate(&DecomposedMeasure::delta0(50), 0.7, 20_000, &p, 1e-3, 5, Exec::Parallel).unwrap();
        let q = (-0.7f64).exp();
        let sigma = (q * (1.0 - q) / 20_000.0).sqrt();
        assert!((est.survival_fraction - q).abs() < 3.0 * sigma);
    }

    #[test]
    fn weighting_and_clock_agree() {
        let p = params(0.1, 0.2, RateFunction::Linear { slope: 1.0 });
        let mu0 = DecomposedMeasure::point(0.5, 10).unwrap();
        let fk = feynman_kac_estimate(&mu0, 2.0, 40_000, &p, 1e-3, 9, Exec::Parallel).unwrap();
        let kc = kill_clock_estimate(&mu0, 2.0, 40_000, &p, 1e-3, 10, Exec::Parallel).unwrap();
        let tv = tv_distance(&fk.measure, &kc.measure).unwrap();
        assert!(tv < 0.03, "tv {tv}");
        // normalizer estimates survival probability
        let sigma = (kc.survival_fraction * (1.0 - kc.survival_fraction) / 40_000.0).sqrt();
        assert!((fk.normalizer - kc.survival_fraction).abs() < 4.0 * sigma + 0.005);
    }

    #[test]
    fn backends_give_identical_estimates() {
        let p = params(0.1, 0.2, RateFunction::Linear { slope: 1.0 });
        let mu0 = DecomposedMeasure::uniform(10);
        let a = feynman_kac_estimate(&mu0, 1.0, 3000, &p, 1e-3, 4, Exec::Sequential).unwrap();
        let b = feynman_kac_estimate(&mu0, 1.0, 3000, &p, 1e-3, 4, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn escape_from_threshold_is_impossible() {
        let p = params(0.1, 0.2, RateFunction::Linear { slope: 1.0 });
        let e = conditional_escape_prob(0.5, 1.0, &p, 100, 1e-3, 1, Exec::Sequential).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert!(conditional_escape_prob(0.0, 1.0, &p, 100, 1e-3, 1, Exec::Sequential).is_err());
    }

    proptest! {
        #[test]
        fn kimura_monotone_and_exchange_symmetric(
            x in 0.0f64..1.0, dx in 1e-3f64..0.5, s in -20.0f64..20.0, g in 0.05f64..5.0,
        ) {
            let y = (x + dx).min(1.0);
            let px = kimura_fixation_prob(x, s, g);
            prop_assert!(kimura_fixation_prob(y, s, g) > px - 1e-12);
            prop_assert!((px + kimura_fixation_prob(1.0 - x, -s, g) - 1.0).abs() < 1e-9);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&px));
        }
    }
}
