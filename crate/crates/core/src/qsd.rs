//! Quasi-stationary analysis of the interior-restricted killed flow.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Tridiag;
use crate::measure::DecomposedMeasure;
use crate::model::ModelParams;
use crate::pde::ForwardOperator;

/// Relative tolerance used when a proposition needs two rates to be equal.
pub const HYPOTHESIS_TIE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QsdSolution {
    /// Interior QSD, cell masses summing to 1.
    pub alpha: Vec<f64>,
    /// Survival capacity on the cells, max-normalized.
    pub h: Vec<f64>,
    pub rho_alpha: f64,
    /// Total outflow rate of `alpha`.
    pub rho_left: f64,
    /// Rayleigh quotient of `h`.
    pub rho_right: f64,
    pub p0: f64,
    pub p1: f64,
    pub p_soft: f64,
    pub rho0: f64,
    pub rho1: f64,
    /// `||A alpha - rho alpha||_1`
    pub residual_left: f64,
    /// `||A^T h - rho h||_inf`
    pub residual_right: f64,
    /// Estimated distance from `rho_alpha` to the next eigenvalue.
    pub gap_estimate: f64,
    pub iterations: usize,
}

impl QsdSolution {
    pub fn grid_size(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha_measure(&self) -> DecomposedMeasure {
        DecomposedMeasure {
            x0: 0.0,
            x1: 0.0,
            interior: self.alpha.clone(),
        }
    }

    pub fn alpha_mean(&self) -> f64 {
        self.alpha_measure().mean()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QsdOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QsdOptions {
    fn default() -> Self {
        QsdOptions {
            tol: 1e-13,
            max_iter: 5000,
        }
    }
}

struct Eigen {
    vec: Vec<f64>,
    iterations: usize,
    gap: f64,
}

/// Smallest eigenvalue's positive eigenvector of the irreducible M-matrix
/// `a`, by shifted inverse iteration. Shifts come from the Collatz-Wielandt
/// lower bound, so they never pass the target eigenvalue.
fn dominant_vector(a: &Tridiag, opts: &QsdOptions) -> Result<Eigen> {
    let n = a.len();
    let mut x = vec![1.0 / n as f64; n];
    let mut sigma = 0.0;
    let mut prev_res = f64::INFINITY;
    let mut ratio = f64::NAN;
    for it in 0..opts.max_iter {
        let ax = a.mul(&x);
        let xmax = x.iter().copied().fold(0.0, f64::max);
        let norm: f64 = x.iter().sum();
        let lambda = ax.iter().sum::<f64>() / norm;
        let res: f64 = ax.iter().zip(&x).map(|(u, v)| (u - lambda * v).abs()).sum::<f64>() / norm;
        let scale = a.diag.iter().copied().fold(0.0, f64::max);
        if res <= opts.tol * scale || (it > 20 && res >= prev_res && res <= 1e3 * opts.tol * scale) {
            let gap = if ratio.is_finite() && ratio > 0.0 && ratio < 1.0 {
                (lambda - sigma) * (1.0 / ratio - 1.0)
            } else {
                f64::NAN
            };
            return Ok(Eigen {
                vec: x,
                iterations: it,
                gap,
            });
        }
        if prev_res.is_finite() && res > 0.0 {
            ratio = res / prev_res;
        }
        prev_res = res;

        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (u, v) in ax.iter().zip(&x) {
            if *v > 1e-200 * xmax {
                let q = u / v;
                lo = lo.min(q);
                hi = hi.max(q);
            }
        }
        let target = if it < 3 {
            0.0
        } else {
            (lo - 0.1 * (hi - lo)).min(lo * (1.0 - 1e-9)).max(0.0)
        };

        let mut next = x.clone();
        let ok = a
            .shifted(target)
            .factor()
            .map(|lu| {
                lu.solve_in_place(&mut next);
                next.iter().all(|v| *v >= 0.0 && v.is_finite())
            })
            .unwrap_or(false);
        if ok {
            sigma = target;
        } else {
            next = x.clone();
            sigma = 0.0;
            a.factor()
                .ok_or(Error::ConvergenceFailure {
                    iterations: it,
                    gap_estimate: f64::NAN,
                })?
                .solve_in_place(&mut next);
        }
        let s: f64 = next.iter().sum();
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::ConvergenceFailure {
                iterations: it,
                gap_estimate: f64::NAN,
            });
        }
        x = next.into_iter().map(|v| v.max(0.0) / s).collect();
    }
    Err(Error::ConvergenceFailure {
        iterations: opts.max_iter,
        gap_estimate: if ratio.is_finite() { 1.0 - ratio } else { f64::NAN },
    })
}

pub fn solve_qsd(params: &ModelParams) -> Result<QsdSolution> {
    solve_qsd_operator(&ForwardOperator::build(params)?, &QsdOptions::default())
}

pub fn solve_qsd_operator(op: &ForwardOperator, opts: &QsdOptions) -> Result<QsdSolution> {
    let a = op.loss_matrix();
    let at = a.transpose();
    let left = dominant_vector(&a, opts)?;
    let right = dominant_vector(&at, opts)?;
    let alpha = left.vec;
    let hmax = right.vec.iter().copied().fold(0.0, f64::max);
    let h: Vec<f64> = right.vec.iter().map(|v| v / hmax).collect();

    let aa = a.mul(&alpha);
    let ath = at.mul(&h);
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let rho_alpha = dot(&h, &aa) / dot(&h, &alpha);
    let rho_left = aa.iter().sum::<f64>() / alpha.iter().sum::<f64>();
    let rho_right = dot(&ath, &h) / dot(&h, &h);
    let residual_left = aa
        .iter()
        .zip(&alpha)
        .map(|(u, v)| (u - rho_alpha * v).abs())
        .sum();
    let residual_right = ath
        .iter()
        .zip(&h)
        .map(|(u, v)| (u - rho_alpha * v).abs())
        .fold(0.0, f64::max);

    let (flux0, flux1) = op.boundary_flux(&alpha);
    let soft: f64 = alpha.iter().zip(&op.kill).map(|(a, k)| a * k).sum();
    let out = flux0 + flux1 + soft;
    Ok(QsdSolution {
        alpha,
        h,
        rho_alpha,
        rho_left,
        rho_right,
        p0: flux0 / out,
        p1: flux1 / out,
        p_soft: soft / out,
        rho0: op.rho0,
        rho1: op.rho1,
        residual_left,
        residual_right,
        gap_estimate: left.gap,
        iterations: left.iterations.max(right.iterations),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtRhoCheck {
    /// `<alpha|rho>`
    pub lhs: f64,
    /// `rho_alpha * p_soft`
    pub rhs: f64,
    pub residual: f64,
    /// `<alpha|rho> < rho_alpha` whenever some mass leaves through an atom.
    pub strict: bool,
}

/// Checks that the soft-killing part of the extinction rate is `<alpha|rho>`.
pub fn verify_ext_rho(sol: &QsdSolution, params: &ModelParams) -> Result<ExtRhoCheck> {
    let killing = params.killing()?;
    if killing.grid_size() != sol.grid_size() {
        return Err(Error::GridMismatch {
            left: killing.grid_size(),
            right: sol.grid_size(),
        });
    }
    let lhs: f64 = sol.alpha.iter().zip(&killing.cells).map(|(a, k)| a * k).sum();
    let rhs = sol.rho_alpha * sol.p_soft;
    let strict = if sol.p0 + sol.p1 > 0.0 {
        lhs < sol.rho_alpha
    } else {
        true
    };
    Ok(ExtRhoCheck {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        strict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeQsd {
    pub measure: DecomposedMeasure,
    pub y0: f64,
    pub y1: f64,
    pub y_alpha: f64,
}

/// Weight ratio `y_b / y_alpha` of an atom next to the interior QSD.
fn atom_ratio(rho_alpha: f64, rho_b: f64, p_b: f64, name: &str) -> Result<f64> {
    if rho_b <= rho_alpha {
        return Err(Error::RegimeHypothesis(format!(
            "need rho_alpha < {name}, got rho_alpha = {rho_alpha}, {name} = {rho_b}"
        )));
    }
    Ok(rho_alpha * p_b / (rho_b - rho_alpha))
}

/// `(y0, y_alpha)` for the QSD of the flow where reaching 1 means extinction.
pub fn alpha1_weights(rho_alpha: f64, rho0: f64, p0: f64) -> Result<(f64, f64)> {
    let q = atom_ratio(rho_alpha, rho0, p0, "rho0")?;
    Ok((q / (1.0 + q), 1.0 / (1.0 + q)))
}

/// `(y0, y1, y_alpha)` for the QSD of the full flow.
pub fn alpha01_weights(
    rho_alpha: f64,
    rho0: f64,
    rho1: f64,
    p0: f64,
    p1: f64,
) -> Result<(f64, f64, f64)> {
    let q0 = atom_ratio(rho_alpha, rho0, p0, "rho0")?;
    let q1 = atom_ratio(rho_alpha, rho1, p1, "rho1")?;
    let z = 1.0 + q0 + q1;
    Ok((q0 / z, q1 / z, 1.0 / z))
}

pub fn composite_alpha1(sol: &QsdSolution) -> Result<CompositeQsd> {
    let (y0, y_alpha) = alpha1_weights(sol.rho_alpha, sol.rho0, sol.p0)?;
    let mut measure = sol.alpha_measure();
    measure.scale(y_alpha);
    measure.x0 = y0;
    Ok(CompositeQsd {
        measure,
        y0,
        y1: 0.0,
        y_alpha,
    })
}

pub fn composite_alpha01(sol: &QsdSolution) -> Result<CompositeQsd> {
    let (y0, y1, y_alpha) = alpha01_weights(sol.rho_alpha, sol.rho0, sol.rho1, sol.p0, sol.p1)?;
    let mut measure = sol.alpha_measure();
    measure.scale(y_alpha);
    measure.x0 = y0;
    measure.x1 = y1;
    Ok(CompositeQsd {
        measure,
        y0,
        y1,
        y_alpha,
    })
}

/// Cell values of `u(x) = E_x[exp(rate * tau); exit through an atom]` with
/// atom payoffs `b0`, `b1`, where `tau` is the first atom hit and soft
/// killing forfeits the payoff.
pub fn exit_resolvent(op: &ForwardOperator, rate: f64, b0: f64, b1: f64) -> Result<Vec<f64>> {
    let n = op.grid_size();
    let sys = op.loss_matrix().transpose().shifted(rate);
    let mut u = vec![0.0; n];
    u[0] += op.down[0] * b0;
    u[n - 1] += op.up[n - 1] * b1;
    let lu = sys.factor().ok_or_else(|| {
        Error::RegimeHypothesis(format!("resolvent at rate {rate} is singular"))
    })?;
    lu.solve_in_place(&mut u);
    if u.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::RegimeHypothesis(format!(
            "resolvent at rate {rate} diverges (rate is not below rho_alpha)"
        )));
    }
    Ok(u)
}

/// Weight of the atom at 0 in the long-run mixture when `rho0 = rho1 < rho_alpha`.
pub fn limit_mixture_x(mu0: &DecomposedMeasure, params: &ModelParams) -> Result<f64> {
    let op = ForwardOperator::build(params)?;
    let sol = solve_qsd_operator(&op, &QsdOptions::default())?;
    limit_mixture_x_with(mu0, &op, &sol)
}

pub fn limit_mixture_x_with(
    mu0: &DecomposedMeasure,
    op: &ForwardOperator,
    sol: &QsdSolution,
) -> Result<f64> {
    if mu0.grid_size() != op.grid_size() {
        return Err(Error::GridMismatch {
            left: mu0.grid_size(),
            right: op.grid_size(),
        });
    }
    let (r0, r1) = (op.rho0, op.rho1);
    if (r0 - r1).abs() > HYPOTHESIS_TIE_TOL * r0.max(r1).max(1.0) {
        return Err(Error::RegimeHypothesis(format!(
            "need rho0 = rho1, got {r0} and {r1}"
        )));
    }
    if r1 >= sol.rho_alpha {
        return Err(Error::RegimeHypothesis(format!(
            "need rho1 < rho_alpha, got {r1} >= {}",
            sol.rho_alpha
        )));
    }
    let u0 = exit_resolvent(op, r1, 1.0, 0.0)?;
    let u01 = exit_resolvent(op, r1, 1.0, 1.0)?;
    let pair = |u: &[f64], b0: f64, b1: f64| {
        mu0.x0 * b0 + mu0.x1 * b1 + mu0.interior.iter().zip(u).map(|(m, v)| m * v).sum::<f64>()
    };
    let den = pair(&u01, 1.0, 1.0);
    if den <= 0.0 {
        return Err(invalid("mu0", "has no mass that can reach an atom"));
    }
    Ok(pair(&u0, 1.0, 0.0) / den)
}

/// `p0 / (p0 + p1)`, the mixture weight when all three rates coincide.
pub fn critical_mixture_x(sol: &QsdSolution) -> f64 {
    sol.p0 / (sol.p0 + sol.p1)
}

pub fn write_profiles_csv<W: std::io::Write>(sol: &QsdSolution, w: W) -> Result<()> {
    let n = sol.grid_size();
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["location", "alpha", "h"])?;
    for k in 0..n {
        wtr.write_record(&[
            crate::model::midpoint(k, n).to_string(),
            sol.alpha[k].to_string(),
            sol.h[k].to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{midpoint, RateFunction};
    use crate::pde::{Conditioning, EvolveOptions, PdeSolver};
    use approx::assert_relative_eq;

    fn params(gamma: f64, s: f64, r: RateFunction, n: usize) -> ModelParams {
        ModelParams::new(gamma, s, r, n).unwrap()
    }

    #[test]
    fn neutral_spectrum() {
        let sol = solve_qsd(&params(0.5, 0.0, RateFunction::zero(), 200)).unwrap();
        assert_relative_eq!(sol.rho_alpha, 1.0, max_relative = 1e-9);
        assert!(sol.residual_left < 1e-8 && sol.residual_right < 1e-8);
        assert_relative_eq!(sol.p0, sol.p1, max_relative = 1e-9);
        assert_eq!(sol.p_soft, 0.0);
        for k in 0..200 {
            let x = midpoint(k, 200);
            assert!((sol.h[k] - x * (1.0 - x) / 0.24999375).abs() < 1e-9);
        }
    }

    #[test]
    fn left_and_right_rates_agree() {
        let sol = solve_qsd(&params(2e-4, 0.1, RateFunction::Linear { slope: 0.1 }, 200)).unwrap();
        assert!((sol.rho_left - sol.rho_alpha).abs() < 1e-8);
        assert!((sol.rho_right - sol.rho_alpha).abs() < 1e-8);
        assert!((sol.p0 + sol.p1 + sol.p_soft - 1.0).abs() < 1e-8);
        let check = verify_ext_rho(&sol, &params(2e-4, 0.1, RateFunction::Linear { slope: 0.1 }, 200)).unwrap();
        assert!(check.residual < 1e-4 && check.strict);
    }

    #[test]
    fn small_gamma_qsd_under_refinement() {
        // sqrt(2 gamma) = 0.02, s = 0.1, r = 0.1 x. On a coarse grid the
        // scheme's numerical diffusion pushes alpha toward 1; the refined
        // profile sits near 0 and rho_alpha approaches rho0 from below.
        let base = params(2e-4, 0.1, RateFunction::Linear { slope: 0.1 }, 100);
        let coarse = solve_qsd(&base).unwrap();
        let fine = solve_qsd(&base.with_grid(3200)).unwrap();
        let finer = solve_qsd(&base.with_grid(6400)).unwrap();
        assert!(coarse.alpha_mean() > 0.5);
        assert!(fine.alpha_mean() < 0.2);
        assert!((fine.alpha_mean() - finer.alpha_mean()).abs() < 2e-3);
        assert!(fine.rho_alpha < fine.rho0 && finer.rho_alpha < finer.rho0);
        assert!(finer.rho_alpha > fine.rho_alpha);
    }

    #[test]
    fn ext_rho_with_constant_rate() {
        let p = params(0.3, 0.2, RateFunction::Polynomial { coefficients: vec![2.0] }, 100);
        let sol = solve_qsd(&p).unwrap();
        let c = verify_ext_rho(&sol, &p).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert_eq!(sol.p_soft, 0.0);
        assert_eq!(c.residual, 0.0);
    }

    #[test]
    fn composite_weights() {
        let (y0, ya) = alpha1_weights(1.0, 2.0, 0.5).unwrap();
        assert_relative_eq!(y0, 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(ya, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(alpha1_weights(1.0, 2.0, 0.0).unwrap(), (0.0, 1.0));
        assert!(matches!(alpha1_weights(1.0, 1.0, 0.5), Err(Error::RegimeHypothesis(_))));
        assert_eq!(alpha01_weights(1.0, 2.0, 3.0, 0.0, 0.0).unwrap(), (0.0, 0.0, 1.0));
    }

    #[test]
    fn symmetric_alpha01_has_equal_atoms() {
        let r = RateFunction::Polynomial { coefficients: vec![0.0, 4.0, -4.0] };
        let p = params(0.05, 0.0, r, 100);
        let sol = solve_qsd(&p).unwrap();
        let c = composite_alpha01(&sol).unwrap();
        assert_relative_eq!(c.y0, c.y1, max_relative = 1e-8);
    }

    #[test]
    fn alpha1_is_a_fixed_point_of_the_a1_flow() {
        let p = params(0.05, 0.02, RateFunction::Linear { slope: 0.5 }, 100);
        let sol = solve_qsd(&p).unwrap();
        assert!(sol.rho_alpha < sol.rho0);
        let c = composite_alpha1(&sol).unwrap();
        let ev = PdeSolver::new(&p)
            .unwrap()
            .evolve_conditioned(&c.measure, Conditioning::A1, 10.0 / sol.rho_alpha, &EvolveOptions::new(0.05))
            .unwrap();
        let drift = crate::measure::tv_distance(&ev.final_measure, &c.measure).unwrap();
        assert!(drift < 1e-8, "drift {drift}");
    }

    #[test]
    fn mixture_is_half_for_symmetric_data() {
        let r = RateFunction::Polynomial { coefficients: vec![0.0, 0.2, -0.2] };
        let p = params(0.1, 0.0, r, 100);
        let mut mu = DecomposedMeasure::zero(100);
        mu.interior[49] = 0.5;
        mu.interior[50] = 0.5;
        let x = limit_mixture_x(&mu, &p).unwrap();
        assert_relative_eq!(x, 0.5, epsilon = 1e-10);
        let x = limit_mixture_x(&DecomposedMeasure::point(0.001, 100).unwrap(), &p).unwrap();
        assert!(x > 0.9);
        let x_fine = limit_mixture_x(
            &DecomposedMeasure::point(0.0001, 1000).unwrap(),
            &p.with_grid(1000),
        )
        .unwrap();
        assert!(x_fine > x);
    }

    #[test]
    fn mixture_rejects_wrong_regime() {
        let p = params(0.1, 0.0, RateFunction::Linear { slope: 0.1 }, 50);
        assert!(matches!(
            limit_mixture_x(&DecomposedMeasure::uniform(50), &p),
            Err(Error::RegimeHypothesis(_))
        ));
    }
}
