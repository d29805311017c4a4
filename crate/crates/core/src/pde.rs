//! Deterministic solver for the normalized limiting flow.
//!
//! The forward equation is discretized as a birth-death jump process on
//! cell midpoints: cell `k` moves mass to `k+1` at rate `up[k]` and to
//! `k-1` at rate `down[k]`, the outermost cells feeding the two atoms.
//! Rates are chosen so that the first two moments of each jump match the
//! drift and diffusion, with Scharfetter-Gummel fitting of the diffusion so
//! every rate stays nonnegative. Without drift the scheme is central and the
//! quadratic `x(1-x)` is an exact eigenfunction of the discrete generator.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{Tridiag, TridiagLu};
use crate::measure::DecomposedMeasure;
use crate::model::{midpoint, KillingRate, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardOperator {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    /// Interior killing rates.
    pub kill: Vec<f64>,
    pub rho0: f64,
    pub rho1: f64,
}

/// `(p/2) coth(p/2)`, equal to 1 at `p = 0`.
fn fitting_factor(p: f64) -> f64 {
    let q = 0.5 * p;
    if q < 1e-4 {
        1.0 + q * q / 3.0
    } else {
        q / q.tanh()
    }
}

impl ForwardOperator {
    pub fn build(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let killing = params.killing()?;
        Ok(Self::with_killing(params.gamma, params.s, &killing))
    }

    pub fn with_killing(gamma: f64, s: f64, killing: &KillingRate) -> Self {
        let n = killing.grid_size();
        let h = 1.0 / n as f64;
        let mut up = vec![0.0; n];
        let mut down = vec![0.0; n];
        for k in 0..n {
            let x = midpoint(k, n);
            let hl = if k == 0 { 0.5 * h } else { h };
            let hr = if k == n - 1 { 0.5 * h } else { h };
            let a = gamma * x * (1.0 - x);
            let v = -s * x * (1.0 - x);
            let sigma = fitting_factor(v.abs() * hl.max(hr) / a);
            let two_a = 2.0 * a * sigma;
            up[k] = ((two_a + hl * v) / (hr * (hl + hr))).max(0.0);
            down[k] = ((two_a - hr * v) / (hl * (hl + hr))).max(0.0);
        }
        ForwardOperator {
            up,
            down,
            kill: killing.cells.clone(),
            rho0: killing.rho0,
            rho1: killing.rho1,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.kill.len()
    }

    pub fn without_killing(&self) -> Self {
        ForwardOperator {
            kill: vec![0.0; self.grid_size()],
            rho0: 0.0,
            rho1: 0.0,
            ..self.clone()
        }
    }

    /// The operator seen after the x -> 1-x relabeling.
    pub fn reflected(&self) -> Self {
        let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<_>>();
        ForwardOperator {
            up: rev(&self.down),
            down: rev(&self.up),
            kill: rev(&self.kill),
            rho0: self.rho1,
            rho1: self.rho0,
        }
    }

    /// Interior loss matrix `A`, so that interior masses obey `m' = -A m`.
    pub fn loss_matrix(&self) -> Tridiag {
        let n = self.grid_size();
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let diag = (0..n)
            .map(|k| self.up[k] + self.down[k] + self.kill[k])
            .collect();
        for k in 1..n {
            lower[k] = -self.up[k - 1];
            upper[k - 1] = -self.down[k];
        }
        Tridiag { lower, diag, upper }
    }

    /// Flux into the atom at 0 and at 1 from interior masses `m`.
    pub fn boundary_flux(&self, m: &[f64]) -> (f64, f64) {
        let n = self.grid_size();
        (self.down[0] * m[0], self.up[n - 1] * m[n - 1])
    }

    /// Forward generator applied to a measure (time derivative of masses).
    pub fn apply(&self, mu: &DecomposedMeasure) -> DecomposedMeasure {
        let a = self.loss_matrix();
        let (f0, f1) = self.boundary_flux(&mu.interior);
        DecomposedMeasure {
            x0: f0 - self.rho0 * mu.x0,
            x1: f1 - self.rho1 * mu.x1,
            interior: a.mul(&mu.interior).into_iter().map(|v| -v).collect(),
        }
    }

    /// Backward generator with killing on a function given by its cell
    /// values and its values at the two atoms.
    pub fn apply_backward(&self, g: &[f64], g0: f64, g1: f64) -> Vec<f64> {
        let n = self.grid_size();
        (0..n)
            .map(|k| {
                let left = if k == 0 { g0 } else { g[k - 1] };
                let right = if k == n - 1 { g1 } else { g[k + 1] };
                self.up[k] * (right - g[k]) + self.down[k] * (left - g[k]) - self.kill[k] * g[k]
            })
            .collect()
    }

    /// Dense `(N+2)x(N+2)` generator ordered as `[atom0, cells.., atom1]`,
    /// column `j` holding the rates out of state `j`.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.grid_size();
        let mut q = vec![vec![0.0; n + 2]; n + 2];
        q[0][0] = -self.rho0;
        q[n + 1][n + 1] = -self.rho1;
        for k in 0..n {
            let j = k + 1;
            q[j][j] = -(self.up[k] + self.down[k] + self.kill[k]);
            q[j + 1][j] += self.up[k];
            q[j - 1][j] += self.down[k];
        }
        q
    }
}

/// Which states are kept when renormalizing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// Both atoms and the interior.
    #[default]
    A,
    /// The atom at 1 counts as extinction.
    A1,
    /// Interior only.
    A01,
}

impl Conditioning {
    fn project(self, m: &mut DecomposedMeasure) {
        match self {
            Conditioning::A => {}
            Conditioning::A1 => m.x1 = 0.0,
            Conditioning::A01 => {
                m.x0 = 0.0;
                m.x1 = 0.0;
            }
        }
    }
}

/// Backward-Euler step of the killed forward equation with a fixed `dt`.
#[derive(Clone, Debug)]
pub struct ImplicitStepper {
    op: ForwardOperator,
    dt: f64,
    lu: TridiagLu,
}

impl ImplicitStepper {
    pub fn new(op: &ForwardOperator, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("dt", format!("must be > 0, got {dt}")));
        }
        let mut sys = op.loss_matrix();
        sys.diag.iter_mut().for_each(|d| *d = 1.0 + dt * *d);
        sys.lower.iter_mut().for_each(|v| *v *= dt);
        sys.upper.iter_mut().for_each(|v| *v *= dt);
        let lu = sys
            .factor()
            .ok_or_else(|| invalid("dt", "implicit system is singular"))?;
        Ok(ImplicitStepper {
            op: op.clone(),
            dt,
            lu,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One unnormalized step; returns the flux into (atom0, atom1) over the step.
    pub fn step(&self, m: &mut DecomposedMeasure) -> (f64, f64) {
        self.lu.solve_in_place(&mut m.interior);
        let (f0, f1) = self.op.boundary_flux(&m.interior);
        let (in0, in1) = (self.dt * f0, self.dt * f1);
        m.x0 = (m.x0 + in0) / (1.0 + self.dt * self.op.rho0);
        m.x1 = (m.x1 + in1) / (1.0 + self.dt * self.op.rho1);
        (in0, in1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub dt: f64,
    /// Spacing of recorded samples; 0 records every step.
    #[serde(default)]
    pub sample_every: f64,
    #[serde(default)]
    pub conditioning: Conditioning,
    /// Interior cells below this mass are zeroed after each step.
    #[serde(default)]
    pub eta: f64,
    /// Times at which full measures are kept.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

impl EvolveOptions {
    pub fn new(dt: f64) -> Self {
        EvolveOptions {
            dt,
            sample_every: 0.0,
            conditioning: Conditioning::A,
            eta: 0.0,
            snapshot_times: Vec::new(),
        }
    }

    pub fn sample_every(mut self, every: f64) -> Self {
        self.sample_every = every;
        self
    }

    pub fn conditioning(mut self, c: Conditioning) -> Self {
        self.conditioning = c;
        self
    }

    pub fn eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }
}

/// Step size keeping the per-step change of every slow rate near 1%.
///
/// Backward Euler smears a drift `v` like an extra diffusion of variance
/// rate `v^2 dt`; with `v <= |s|/4` against `2 gamma x(1-x) ~ gamma/2` the
/// second bound keeps that below 1% of the true spread.
pub fn default_dt(params: &ModelParams) -> Result<f64> {
    let k = params.killing()?;
    let fast = k.max().max(params.s.abs()).max(2.0 * params.gamma);
    let smear = if params.s == 0.0 {
        f64::INFINITY
    } else {
        0.08 * params.gamma / (params.s * params.s)
    };
    Ok((0.01 / fast).min(smear).min(0.1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub x0: f64,
    pub x1: f64,
    pub xint: f64,
    /// `ln` of the unnormalized mass kept by the conditioning, accumulated since 0.
    pub log_mass: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationEvent {
    pub time: f64,
    pub removed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evolution {
    pub samples: Vec<Sample>,
    pub snapshots: Vec<(f64, DecomposedMeasure)>,
    pub truncations: Vec<TruncationEvent>,
    pub final_measure: DecomposedMeasure,
    pub dt: f64,
}

impl Evolution {
    pub fn final_sample(&self) -> Sample {
        *self.samples.last().expect("evolution has samples")
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }

    pub fn total_truncated(&self) -> f64 {
        self.truncations.iter().map(|e| e.removed).sum()
    }

    /// First sample time at which `x1` exceeds `level`.
    pub fn first_time_x1_above(&self, level: f64) -> Option<f64> {
        self.samples.iter().find(|s| s.x1 > level).map(|s| s.time)
    }
}

pub fn write_series_csv<W: std::io::Write>(samples: &[Sample], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["time", "x0", "x1", "xint", "log_mass"])?;
    for s in samples {
        wtr.write_record(&[
            s.time.to_string(),
            s.x0.to_string(),
            s.x1.to_string(),
            s.xint.to_string(),
            s.log_mass.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Solver for one parameter set.
#[derive(Clone, Debug)]
pub struct PdeSolver {
    pub op: ForwardOperator,
}

impl PdeSolver {
    pub fn new(params: &ModelParams) -> Result<Self> {
        Ok(PdeSolver {
            op: ForwardOperator::build(params)?,
        })
    }

    pub fn from_operator(op: ForwardOperator) -> Self {
        PdeSolver { op }
    }

    /// Normalized flow over both atoms and the interior.
    pub fn evolve_normalized(
        &self,
        mu0: &DecomposedMeasure,
        t: f64,
        opts: &EvolveOptions,
    ) -> Result<Evolution> {
        let opts = EvolveOptions {
            conditioning: Conditioning::A,
            eta: 0.0,
            ..opts.clone()
        };
        self.evolve(mu0, t, &opts)
    }

    pub fn evolve_conditioned(
        &self,
        mu0: &DecomposedMeasure,
        variant: Conditioning,
        t: f64,
        opts: &EvolveOptions,
    ) -> Result<Evolution> {
        let opts = EvolveOptions {
            conditioning: variant,
            ..opts.clone()
        };
        self.evolve(mu0, t, &opts)
    }

    pub fn truncated_evolve(
        &self,
        mu0: &DecomposedMeasure,
        eta: f64,
        t: f64,
        opts: &EvolveOptions,
    ) -> Result<Evolution> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(invalid("eta", "must be finite and >= 0"));
        }
        let opts = EvolveOptions { eta, ..opts.clone() };
        self.evolve(mu0, t, &opts)
    }

    /// General driver: implicit step, projection onto the kept states,
    /// optional truncation, renormalization.
    pub fn evolve(
        &self,
        mu0: &DecomposedMeasure,
        t: f64,
        opts: &EvolveOptions,
    ) -> Result<Evolution> {
        self.evolve_observed(mu0, t, opts, |_, _| {})
    }

    /// As [`PdeSolver::evolve`], calling `observe` with every recorded sample
    /// and the normalized measure at that time.
    pub fn evolve_observed(
        &self,
        mu0: &DecomposedMeasure,
        t: f64,
        opts: &EvolveOptions,
        mut observe: impl FnMut(&Sample, &DecomposedMeasure),
    ) -> Result<Evolution> {
        let n = self.op.grid_size();
        if mu0.grid_size() != n {
            return Err(Error::GridMismatch {
                left: mu0.grid_size(),
                right: n,
            });
        }
        mu0.validate_normalized()?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(invalid("t", "must be finite and >= 0"));
        }
        let steps = if t == 0.0 {
            0
        } else {
            ((t / opts.dt) - 1e-9).ceil().max(1.0) as usize
        };
        let dt = if steps == 0 { opts.dt } else { t / steps as f64 };
        let stepper = ImplicitStepper::new(&self.op, dt)?;
        let stride = if opts.sample_every > 0.0 {
            ((opts.sample_every / dt).round() as usize).max(1)
        } else {
            1
        };

        let mut mu = mu0.clone();
        opts.conditioning.project(&mut mu);
        let mut log_mass = mu
            .normalize()
            .map_err(|_| invalid("mu0", "has no mass on the states kept by the conditioning"))?
            .ln();

        let mut snap_times: Vec<f64> = opts.snapshot_times.clone();
        snap_times.sort_by(f64::total_cmp);
        let mut snap_iter = snap_times.into_iter().peekable();
        let mut snapshots = Vec::new();
        let mut samples = Vec::with_capacity(steps / stride + 2);
        let mut truncations = Vec::new();

        let record = |time: f64, mu: &DecomposedMeasure, log_mass: f64| Sample {
            time,
            x0: mu.x0,
            x1: mu.x1,
            xint: mu.interior_mass(),
            log_mass,
        };
        samples.push(record(0.0, &mu, log_mass));
        observe(&samples[0], &mu);
        while let Some(&ts) = snap_iter.peek() {
            if ts > 0.5 * dt {
                break;
            }
            snapshots.push((0.0, mu.clone()));
            snap_iter.next();
        }

        for i in 1..=steps {
            let time = i as f64 * dt;
            stepper.step(&mut mu);
            opts.conditioning.project(&mut mu);
            if opts.eta > 0.0 {
                let mut removed = 0.0;
                for v in mu.interior.iter_mut() {
                    if *v > 0.0 && *v < opts.eta {
                        removed += *v;
                        *v = 0.0;
                    }
                }
                if removed > 0.0 {
                    truncations.push(TruncationEvent { time, removed });
                }
                if mu.total() <= 0.0 {
                    return Err(Error::DegenerateTruncation { time });
                }
            }
            let total = mu.total();
            if !(total.is_finite() && total > f64::MIN_POSITIVE) {
                return Err(Error::PrecisionLoss { time });
            }
            mu.scale(1.0 / total);
            log_mass += total.ln();
            if i % stride == 0 || i == steps {
                let sample = record(time, &mu, log_mass);
                observe(&sample, &mu);
                samples.push(sample);
            }
            while let Some(&ts) = snap_iter.peek() {
                if ts > time + 0.5 * dt {
                    break;
                }
                snapshots.push((time, mu.clone()));
                snap_iter.next();
            }
        }
        Ok(Evolution {
            samples,
            snapshots,
            truncations,
            final_measure: mu,
            dt,
        })
    }
}
