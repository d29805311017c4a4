//! Parameters shared by every route: the group rate `r`, the killing rate
//! `rho = sup r - r`, and the IBM <-> limit scaling.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default number of interior cells.
pub const DEFAULT_GRID_SIZE: usize = 200;

/// Midpoint of interior cell `k` on an `n`-cell uniform grid of (0,1).
#[inline]
pub fn midpoint(k: usize, n: usize) -> f64 {
    (k as f64 + 0.5) / n as f64
}

/// Group-level growth-rate increment as a function of the C proportion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateFunction {
    /// `slope * x`
    Linear { slope: f64 },
    /// `sum_i coefficients[i] * x^i`
    Polynomial { coefficients: Vec<f64> },
    /// Values on a uniform grid of [0,1] (first at 0, last at 1), linearly interpolated.
    Tabulated { values: Vec<f64> },
}

impl RateFunction {
    pub fn zero() -> Self {
        RateFunction::Polynomial {
            coefficients: vec![0.0],
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            RateFunction::Linear { slope } => slope * x,
            RateFunction::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
            RateFunction::Tabulated { values } => {
                let last = values.len() - 1;
                let pos = x * last as f64;
                let i = (pos.floor() as usize).min(last - 1);
                let w = pos - i as f64;
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|c| c.is_finite());
        match self {
            RateFunction::Linear { slope } if !slope.is_finite() => {
                Err(Error::InvalidRateFunction("non-finite slope".into()))
            }
            RateFunction::Polynomial { coefficients } if coefficients.is_empty() => Err(
                Error::InvalidRateFunction("polynomial needs at least one coefficient".into()),
            ),
            RateFunction::Polynomial { coefficients } if !finite(coefficients) => {
                Err(Error::InvalidRateFunction("non-finite coefficient".into()))
            }
            RateFunction::Tabulated { values } if values.len() < 2 => Err(
                Error::InvalidRateFunction("tabulated rate needs at least 2 nodes".into()),
            ),
            RateFunction::Tabulated { values } if !finite(values) => {
                Err(Error::InvalidRateFunction("non-finite tabulated value".into()))
            }
            _ => Ok(()),
        }
    }

    /// `factor * r`
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            RateFunction::Linear { slope } => RateFunction::Linear {
                slope: slope * factor,
            },
            RateFunction::Polynomial { coefficients } => RateFunction::Polynomial {
                coefficients: coefficients.iter().map(|c| c * factor).collect(),
            },
            RateFunction::Tabulated { values } => RateFunction::Tabulated {
                values: values.iter().map(|v| v * factor).collect(),
            },
        }
    }

    /// `r + c`
    pub fn shifted(&self, c: f64) -> Self {
        match self {
            RateFunction::Linear { slope } => RateFunction::Polynomial {
                coefficients: vec![c, *slope],
            },
            RateFunction::Polynomial { coefficients } => {
                let mut coefficients = coefficients.clone();
                coefficients[0] += c;
                RateFunction::Polynomial { coefficients }
            }
            RateFunction::Tabulated { values } => RateFunction::Tabulated {
                values: values.iter().map(|v| v + c).collect(),
            },
        }
    }

    /// `x -> r(1 - x)`, the rate seen after swapping the roles of C and D.
    pub fn reflected(&self) -> Self {
        match self {
            RateFunction::Linear { slope } => RateFunction::Polynomial {
                coefficients: vec![*slope, -slope],
            },
            RateFunction::Polynomial { coefficients } => {
                // sum_i c_i (1 - x)^i expanded with binomial coefficients
                let d = coefficients.len();
                let mut out = vec![0.0; d];
                for (i, c) in coefficients.iter().enumerate() {
                    let mut binom = 1.0;
                    for (j, o) in out.iter_mut().enumerate().take(i + 1) {
                        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                        *o += c * binom * sign;
                        binom = binom * (i - j) as f64 / (j + 1) as f64;
                    }
                }
                RateFunction::Polynomial { coefficients: out }
            }
            RateFunction::Tabulated { values } => RateFunction::Tabulated {
                values: values.iter().rev().copied().collect(),
            },
        }
    }

    /// Slope if this is `r1 * x` (a linear function vanishing at 0), in any representation.
    pub fn linear_slope(&self) -> Option<f64> {
        match self {
            RateFunction::Linear { slope } => Some(*slope),
            RateFunction::Polynomial { coefficients } => {
                let tail_zero = coefficients.iter().skip(2).all(|c| *c == 0.0);
                (tail_zero && coefficients[0] == 0.0)
                    .then(|| coefficients.get(1).copied().unwrap_or(0.0))
            }
            RateFunction::Tabulated { .. } => None,
        }
    }
}

/// Killing rate tabulated on the solver grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KillingRate {
    /// `rho` at the cell midpoints.
    pub cells: Vec<f64>,
    pub rho0: f64,
    pub rho1: f64,
    /// `sup r` over the evaluation grid (midpoints plus endpoints).
    pub sup_r: f64,
}

impl KillingRate {
    pub fn grid_size(&self) -> usize {
        self.cells.len()
    }

    pub fn max(&self) -> f64 {
        self.cells
            .iter()
            .copied()
            .fold(self.rho0.max(self.rho1), f64::max)
    }
}

/// `rho(x) = max r - r(x)` on the `n`-cell grid plus both endpoints.
pub fn rho_from_r(r: &RateFunction, n: usize) -> Result<KillingRate> {
    r.validate()?;
    if n == 0 {
        return Err(invalid("grid_size", "must be positive"));
    }
    let r_cells: Vec<f64> = (0..n).map(|k| r.eval(midpoint(k, n))).collect();
    let (r0, r1) = (r.eval(0.0), r.eval(1.0));
    if !(r0.is_finite() && r1.is_finite() && r_cells.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidRateFunction(
            "rate function is not finite on [0,1]".into(),
        ));
    }
    let sup_r = r_cells.iter().copied().fold(r0.max(r1), f64::max);
    Ok(KillingRate {
        cells: r_cells.iter().map(|v| sup_r - v).collect(),
        rho0: sup_r - r0,
        rho1: sup_r - r1,
        sup_r,
    })
}

/// Parameters of the limiting model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Within-group diffusion intensity.
    pub gamma: f64,
    /// Within-group selection against C. Negative values describe the
    /// relabeled (C <-> D) orientation.
    pub s: f64,
    pub r: RateFunction,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

impl ModelParams {
    pub fn new(gamma: f64, s: f64, r: RateFunction, grid_size: usize) -> Result<Self> {
        let p = ModelParams {
            gamma,
            s,
            r,
            grid_size,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(invalid("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        if !self.s.is_finite() {
            return Err(invalid("s", "must be finite"));
        }
        if self.grid_size < 8 {
            return Err(invalid(
                "grid_size",
                format!("must be >= 8, got {}", self.grid_size),
            ));
        }
        self.r.validate()?;
        rho_from_r(&self.r, self.grid_size).map(|_| ())
    }

    pub fn killing(&self) -> Result<KillingRate> {
        rho_from_r(&self.r, self.grid_size)
    }

    pub fn with_grid(&self, grid_size: usize) -> Self {
        ModelParams {
            grid_size,
            ..self.clone()
        }
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        ModelParams {
            gamma,
            ..self.clone()
        }
    }

    pub fn with_r(&self, r: RateFunction) -> Self {
        ModelParams {
            r,
            ..self.clone()
        }
    }

    /// The same model with the roles of C and D exchanged (x -> 1 - x).
    pub fn relabeled(&self) -> Self {
        ModelParams {
            s: -self.s,
            r: self.r.reflected(),
            ..self.clone()
        }
    }
}

/// Rates of the finite individual-based model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbmRates {
    /// Individuals per group.
    pub n: usize,
    /// Number of groups.
    pub m: usize,
    pub gamma_i_bar: f64,
    pub s_bar: f64,
    pub gamma_g_bar: f64,
    pub r_bar: RateFunction,
}

impl IbmRates {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(invalid("n", "must be >= 1"));
        }
        if self.m < 1 {
            return Err(invalid("m", "must be >= 1"));
        }
        if !(self.gamma_i_bar.is_finite() && self.gamma_i_bar >= 0.0) {
            return Err(invalid("gamma_i_bar", "must be finite and >= 0"));
        }
        if !(self.s_bar.is_finite() && self.s_bar >= 0.0) {
            return Err(invalid("s_bar", "must be finite and >= 0"));
        }
        if !(self.gamma_g_bar.is_finite() && self.gamma_g_bar >= 0.0) {
            return Err(invalid("gamma_g_bar", "must be finite and >= 0"));
        }
        self.r_bar.validate()?;
        for k in 0..=self.n {
            let v = self.r_bar.eval(k as f64 / self.n as f64);
            if 1.0 + v < 0.0 {
                return Err(invalid(
                    "r_bar",
                    format!("group birth rate factor 1 + r_bar({k}/n) = {} is negative", 1.0 + v),
                ));
            }
        }
        Ok(())
    }

    /// `s_bar > 1`: outside the weak-selection range the limit assumes.
    pub fn strong_selection(&self) -> bool {
        self.s_bar > 1.0
    }

    /// Inverse of [`ibm_rates_from_limit`]: `(gamma, s)`.
    pub fn limit_gamma_s(&self) -> (f64, f64) {
        (
            self.gamma_i_bar / self.n as f64,
            self.gamma_i_bar * self.s_bar,
        )
    }

    /// Group-level fluctuation intensity of the matching limit, `gamma_g_bar / m`.
    pub fn limit_gamma_g(&self) -> f64 {
        self.gamma_g_bar / self.m as f64
    }
}

/// IBM rates whose large-population limit is `params`:
/// `gamma_i_bar = n gamma`, `s_bar = s / (n gamma)`, `r_bar = r / gamma_g_bar`.
pub fn ibm_rates_from_limit(
    params: &ModelParams,
    n: usize,
    m: usize,
    gamma_g_bar: f64,
) -> Result<IbmRates> {
    params.validate()?;
    if n < 2 {
        return Err(invalid("n", "must be >= 2"));
    }
    if m < 2 {
        return Err(invalid("m", "must be >= 2"));
    }
    if !(gamma_g_bar.is_finite() && gamma_g_bar > 0.0) {
        return Err(invalid("gamma_g_bar", "must be > 0"));
    }
    if params.s < 0.0 {
        return Err(invalid("s", "the IBM needs s >= 0"));
    }
    let gamma_i_bar = n as f64 * params.gamma;
    if gamma_i_bar == 0.0 {
        return Err(invalid("gamma", "n * gamma vanishes"));
    }
    let rates = IbmRates {
        n,
        m,
        gamma_i_bar,
        s_bar: params.s / gamma_i_bar,
        gamma_g_bar,
        r_bar: params.r.scaled(1.0 / gamma_g_bar),
    };
    rates.validate()?;
    Ok(rates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lin(slope: f64) -> RateFunction {
        RateFunction::Linear { slope }
    }

    #[test]
    fn rho_of_increasing_linear() {
        let k = rho_from_r(&lin(0.1), 100).unwrap();
        assert_relative_eq!(k.rho0, 0.1, epsilon = 1e-15);
        assert_eq!(k.rho1, 0.0);
        assert_relative_eq!(k.cells[0], 0.1 - 0.1 * 0.005, epsilon = 1e-15);
    }

    #[test]
    fn rho_of_constant_vanishes() {
        let r = RateFunction::Polynomial {
            coefficients: vec![3.7],
        };
        let k = rho_from_r(&r, 50).unwrap();
        assert!(k.cells.iter().all(|v| *v == 0.0));
        assert_eq!((k.rho0, k.rho1), (0.0, 0.0));
    }

    #[test]
    fn rho_figure_parameters() {
        let k = rho_from_r(&lin(0.005), 200).unwrap();
        assert_relative_eq!(k.rho0, 0.005, epsilon = 1e-15);
        assert_eq!(k.rho1, 0.0);
    }

    #[test]
    fn non_finite_rate_rejected() {
        assert!(matches!(
            rho_from_r(&lin(f64::NAN), 10),
            Err(Error::InvalidRateFunction(_))
        ));
        let t = RateFunction::Tabulated { values: vec![1.0] };
        assert!(t.validate().is_err());
    }

    #[test]
    fn tabulated_interpolates() {
        let t = RateFunction::Tabulated {
            values: vec![0.0, 1.0, 0.0],
        };
        assert_relative_eq!(t.eval(0.25), 0.5);
        assert_relative_eq!(t.eval(0.5), 1.0);
        assert_relative_eq!(t.eval(1.0), 0.0);
    }

    #[test]
    fn reflection_of_polynomial() {
        let p = RateFunction::Polynomial {
            coefficients: vec![0.3, -1.0, 2.0, 0.5],
        };
        let q = p.reflected();
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            assert_relative_eq!(q.eval(x), p.eval(1.0 - x), epsilon = 1e-12);
        }
        assert_relative_eq!(lin(0.4).reflected().eval(0.25), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn ibm_scaling_examples() {
        let p = ModelParams::new(0.5, 0.1, lin(0.0), 100).unwrap();
        let r = ibm_rates_from_limit(&p, 100, 10, 1.0).unwrap();
        assert_relative_eq!(r.gamma_i_bar, 50.0);
        assert_relative_eq!(r.s_bar, 0.002);

        let p = ModelParams::new(0.5, 0.0, lin(0.0), 100).unwrap();
        assert_eq!(ibm_rates_from_limit(&p, 10, 10, 1.0).unwrap().s_bar, 0.0);

        let p = ModelParams::new(1.0, 2.0, lin(0.1), 100).unwrap();
        let r = ibm_rates_from_limit(&p, 100, 10, 1.0).unwrap();
        assert_relative_eq!(r.gamma_i_bar, 100.0);
        assert_relative_eq!(r.s_bar, 0.02);
        for k in 0..=10 {
            let x = k as f64 / 10.0;
            assert_relative_eq!(r.r_bar.eval(x), 0.1 * x, epsilon = 1e-15);
        }
        assert!(!r.strong_selection());
    }

    #[test]
    fn strong_selection_is_flagged_not_rejected() {
        let p = ModelParams::new(2e-4, 0.1, lin(0.1), 100).unwrap();
        let r = ibm_rates_from_limit(&p, 100, 2000, 1.0).unwrap();
        assert!(r.strong_selection());
        assert_relative_eq!(r.s_bar, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_params() {
        assert!(ModelParams::new(0.0, 0.1, lin(0.1), 100).is_err());
        assert!(ModelParams::new(1.0, 0.1, lin(0.1), 4).is_err());
        let p = ModelParams::new(1.0, 0.1, lin(0.1), 100).unwrap();
        assert!(ibm_rates_from_limit(&p, 1, 10, 1.0).is_err());
        assert!(ibm_rates_from_limit(&p, 10, 10, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn killing_is_nonnegative_with_zero_min(
            coeffs in proptest::collection::vec(-5.0f64..5.0, 1..5),
            n in 8usize..300,
        ) {
            let k = rho_from_r(&RateFunction::Polynomial { coefficients: coeffs }, n).unwrap();
            let min = k.cells.iter().copied().fold(k.rho0.min(k.rho1), f64::min);
            prop_assert!(k.cells.iter().all(|v| *v >= 0.0));
            prop_assert!(k.rho0 >= 0.0 && k.rho1 >= 0.0);
            prop_assert!(min.abs() < 1e-12);
        }

        #[test]
        fn ibm_scaling_round_trips(
            gamma in 1e-4f64..10.0,
            s in 0.0f64..5.0,
            n in 2usize..500,
            m in 2usize..500,
            g in 0.01f64..10.0,
        ) {
            let p = ModelParams::new(gamma, s, RateFunction::Linear { slope: 0.3 }, 16).unwrap();
            let rates = ibm_rates_from_limit(&p, n, m, g).unwrap();
            let (g2, s2) = rates.limit_gamma_s();
            prop_assert!((g2 - gamma).abs() <= 1e-12 * gamma);
            prop_assert!((s2 - s).abs() <= 1e-12 * s.max(1e-300));
            for k in 0..=8 {
                let x = k as f64 / 8.0;
                let back = rates.gamma_g_bar * rates.r_bar.eval(x);
                prop_assert!((back - 0.3 * x).abs() <= 1e-12 * (0.3 * x).max(1e-300));
            }
        }
    }
}
