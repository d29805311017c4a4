//! Invasion probabilities of a single mutant under separated individual and
//! group time scales, and their Monte Carlo counterpart through the IBM.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::ibm::{absorption_outcomes, Absorption, IbmState};
use crate::model::{ibm_rates_from_limit, IbmRates, ModelParams};
use crate::stats::{wilson, Proportion, Z95};

/// Ratios below this make the first-order expansions trustworthy.
pub const WEAK_SELECTION_LIMIT: f64 = 0.1;
/// Group-level ratio from which the strong-selection forms are used.
pub const STRONG_SELECTION_THRESHOLD: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvasionSetting {
    /// Must carry a linear `r`.
    pub params: ModelParams,
    pub n: usize,
    pub m: usize,
    /// Group-level fluctuation intensity.
    pub gamma_g: f64,
}

impl InvasionSetting {
    /// `r1`, the slope of the linear group rate.
    pub fn r1(&self) -> Result<f64> {
        self.params.r.linear_slope().ok_or(Error::UnsupportedRateShape)
    }

    /// `s / gamma`
    pub fn individual_ratio(&self) -> f64 {
        self.params.s / self.params.gamma
    }

    /// `r1 / gamma_G`
    pub fn group_ratio(&self) -> Result<f64> {
        Ok(self.r1()? / self.gamma_g)
    }

    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n < 1 || self.m < 1 {
            return Err(invalid("n, m", "must be >= 1"));
        }
        if !(self.gamma_g.is_finite() && self.gamma_g > 0.0) {
            return Err(invalid("gamma_g", "must be > 0"));
        }
        if self.params.s < 0.0 {
            return Err(invalid("s", "must be >= 0"));
        }
        if self.r1()? < 0.0 {
            return Err(invalid("r", "slope must be >= 0"));
        }
        Ok(())
    }

    /// IBM rates whose limits are `gamma`, `s`, `r` and `gamma_G = gamma_g_bar / m`.
    pub fn ibm_rates(&self) -> Result<IbmRates> {
        ibm_rates_from_limit(&self.params, self.n, self.m, self.gamma_g * self.m as f64)
    }
}

/// `a / (e^a - 1)`, equal to 1 at 0.
fn disadvantaged(a: f64) -> f64 {
    if a.abs() < 1e-12 {
        1.0 - 0.5 * a
    } else {
        a / a.exp_m1()
    }
}

/// `a / (1 - e^-a)`, equal to 1 at 0.
fn advantaged(a: f64) -> f64 {
    disadvantaged(-a)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvasionProbs {
    pub pi_i_dc: f64,
    pub pi_g_dc: f64,
    pub pi_dc: f64,
    pub pi_i_cd: f64,
    pub pi_g_cd: f64,
    pub pi_cd: f64,
    /// First-order expansions in the two ratios.
    pub weak_dc: f64,
    pub weak_cd: f64,
    pub weak_valid: bool,
}

/// Closed-form invasion probabilities for a single C mutant among D
/// residents and the reverse, for a linear group rate. These are large-size
/// approximations: an advantaged factor `a / (1 - e^-a)` exceeds 1, so the
/// values are probabilities only while it stays below `n` (resp. `m`).
pub fn invasion_probs(setting: &InvasionSetting) -> Result<InvasionProbs> {
    setting.validate()?;
    let a = setting.individual_ratio();
    let b = setting.group_ratio()?;
    let (n, m) = (setting.n as f64, setting.m as f64);
    let pi_i_dc = disadvantaged(a) / n;
    let pi_g_dc = advantaged(b) / m;
    let pi_i_cd = advantaged(a) / n;
    let pi_g_cd = disadvantaged(b) / m;
    let base = 1.0 / (n * m);
    Ok(InvasionProbs {
        pi_i_dc,
        pi_g_dc,
        pi_dc: pi_i_dc * pi_g_dc,
        pi_i_cd,
        pi_g_cd,
        pi_cd: pi_i_cd * pi_g_cd,
        weak_dc: base * (1.0 + 0.5 * (b - a)),
        weak_cd: base * (1.0 - 0.5 * (b - a)),
        weak_valid: a.max(b) < WEAK_SELECTION_LIMIT,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongSelection {
    /// `(1/m) b e^-b`
    pub pi_g_cd: f64,
    /// `(1/m) b`
    pub pi_g_dc: f64,
    pub ratio: f64,
    /// False when `r1 / gamma_G` is below the asymptotic threshold.
    pub in_regime: bool,
}

pub fn strong_selection_asymptotics(setting: &InvasionSetting) -> Result<StrongSelection> {
    setting.validate()?;
    let b = setting.group_ratio()?;
    let m = setting.m as f64;
    let (cd, dc) = if b == 0.0 {
        (1.0 / m, 1.0 / m)
    } else {
        (b * (-b).exp() / m, b / m)
    };
    Ok(StrongSelection {
        pi_g_cd: cd,
        pi_g_dc: dc,
        ratio: dc / cd,
        in_regime: b >= STRONG_SELECTION_THRESHOLD,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TowardC,
    TowardD,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub direction: Direction,
    /// `r1 / gamma_G - s / gamma`
    pub margin: f64,
    pub weak_valid: bool,
}

/// Sign of `r1/gamma_G - s/gamma`. Outside weak selection the call fails
/// unless `force` is set.
pub fn selection_direction(setting: &InvasionSetting, force: bool) -> Result<DirectionReport> {
    setting.validate()?;
    let a = setting.individual_ratio();
    let b = setting.group_ratio()?;
    let weak_valid = a.max(b) < WEAK_SELECTION_LIMIT;
    if !weak_valid && !force {
        return Err(invalid(
            "setting",
            format!("outside weak selection (s/gamma = {a}, r1/gamma_G = {b})"),
        ));
    }
    let margin = b - a;
    let direction = if margin.abs() <= 1e-9 * a.max(b).max(1.0) {
        Direction::Neutral
    } else if margin > 0.0 {
        Direction::TowardC
    } else {
        Direction::TowardD
    };
    Ok(DirectionReport {
        direction,
        margin,
        weak_valid,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Invasion {
    #[serde(rename = "D->C")]
    DToC,
    #[serde(rename = "C->D")]
    CToD,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvasionMc {
    pub direction: Invasion,
    pub fixation: Proportion,
    /// Runs still polymorphic at the horizon.
    pub unresolved: u64,
    /// Closed-form product under separated time scales.
    pub predicted: f64,
    /// Product of the exact discrete Moran fixation probabilities at each level.
    pub moran_product: f64,
    /// `gamma_g_bar <= gamma_i_bar / 100`
    pub separated: bool,
    pub rates: IbmRates,
    pub seed: u64,
}

/// Fixation probability of one mutant in a Moran process of size `size`
/// whose residents reproduce `1 + adv` times faster than the mutant
/// (`adv` may be negative).
pub fn moran_fixation(adv: f64, size: usize) -> f64 {
    if adv == 0.0 {
        return 1.0 / size as f64;
    }
    let q = 1.0 + adv;
    (1.0 - q) / (1.0 - q.powi(size as i32))
}

/// Fraction of IBM runs started from one mutant individual that end with the
/// mutant type everywhere.
pub fn invasion_mc(
    setting: &InvasionSetting,
    direction: Invasion,
    replicates: usize,
    horizon: f64,
    seed: u64,
    exec: Exec,
) -> Result<InvasionMc> {
    let probs = invasion_probs(setting)?;
    let rates = setting.ibm_rates()?;
    let initial = IbmState::single_mutant(rates.clone(), direction == Invasion::DToC)?;
    let outcomes = absorption_outcomes(&initial, replicates, horizon, seed, exec);
    let win = match direction {
        Invasion::DToC => Absorption::AllC,
        Invasion::CToD => Absorption::AllD,
    };
    let fixed = outcomes.iter().filter(|o| **o == Some(win)).count() as u64;
    let unresolved = outcomes.iter().filter(|o| o.is_none()).count() as u64;
    let r1_bar = rates.r_bar.eval(1.0) - rates.r_bar.eval(0.0);
    let s_bar = rates.s_bar;
    let moran_product = match direction {
        Invasion::DToC => moran_fixation(s_bar, rates.n) * moran_fixation(-r1_bar / (1.0 + r1_bar), rates.m),
        Invasion::CToD => moran_fixation(-s_bar / (1.0 + s_bar), rates.n) * moran_fixation(r1_bar, rates.m),
    };
    Ok(InvasionMc {
        direction,
        fixation: wilson(fixed, replicates as u64, Z95),
        unresolved,
        predicted: match direction {
            Invasion::DToC => probs.pi_dc,
            Invasion::CToD => probs.pi_cd,
        },
        moran_product,
        separated: rates.gamma_g_bar <= rates.gamma_i_bar / 100.0,
        rates,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub s_over_gamma: f64,
    pub r1_over_gamma_g: f64,
    pub pi_dc: f64,
    pub pi_cd: f64,
    pub direction: Direction,
}

/// Closed forms over a grid of the two ratios, with `gamma = gamma_G = 1`.
pub fn ratio_sweep(n: usize, m: usize, a_grid: &[f64], b_grid: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(a_grid.len() * b_grid.len());
    for &a in a_grid {
        for &b in b_grid {
            let setting = InvasionSetting {
                params: ModelParams::new(1.0, a, crate::model::RateFunction::Linear { slope: b }, 8)?,
                n,
                m,
                gamma_g: 1.0,
            };
            let p = invasion_probs(&setting)?;
            rows.push(SweepRow {
                s_over_gamma: a,
                r1_over_gamma_g: b,
                pi_dc: p.pi_dc,
                pi_cd: p.pi_cd,
                direction: selection_direction(&setting, true)?.direction,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["s_over_gamma", "r1_over_gammaG", "pi_DC", "pi_CD", "direction"])?;
    for r in rows {
        let dir = serde_json::to_value(r.direction)?;
        wtr.write_record(&[
            r.s_over_gamma.to_string(),
            r.r1_over_gamma_g.to_string(),
            r.pi_dc.to_string(),
            r.pi_cd.to_string(),
            dir.as_str().unwrap_or_default().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
