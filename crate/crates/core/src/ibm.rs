//! Exact Gillespie simulation of the two-level Moran process on the
//! histogram of group compositions.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::{stream_rng, Exec};
use crate::measure::{cell_of, DecomposedMeasure};
use crate::model::IbmRates;
use crate::stats::{wilson, Proportion, Z95};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbmState {
    pub rates: IbmRates,
    /// `counts[k]` groups hold exactly `k` C individuals.
    pub counts: Vec<u64>,
    pub time: f64,
}

/// Per-class rate table.
#[derive(Clone, Debug, PartialEq)]
pub struct RateTable {
    /// One C replaced by a D in a class-k group.
    pub down: Vec<f64>,
    /// One D replaced by a C in a class-k group.
    pub up: Vec<f64>,
    /// Group birth with a class-k parent (the victim may share the class).
    pub group: Vec<f64>,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Down(usize),
    Up(usize),
    Group { parent: usize, victim: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    /// An event happened after `wait`.
    Event { wait: f64, channel: Channel },
    /// All groups are pure of the same type.
    Absorbed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Absorption {
    AllD,
    AllC,
}

impl IbmState {
    pub fn new(rates: IbmRates, counts: Vec<u64>) -> Result<Self> {
        rates.validate()?;
        if counts.len() != rates.n + 1 {
            return Err(invalid(
                "counts",
                format!("needs n + 1 = {} entries, got {}", rates.n + 1, counts.len()),
            ));
        }
        let m: u64 = counts.iter().sum();
        if m != rates.m as u64 {
            return Err(invalid(
                "counts",
                format!("sum to {m} groups, expected m = {}", rates.m),
            ));
        }
        Ok(IbmState {
            rates,
            counts,
            time: 0.0,
        })
    }

    /// All groups with the same composition `k`.
    pub fn uniform(rates: IbmRates, k: usize) -> Result<Self> {
        let mut counts = vec![0; rates.n + 1];
        if k > rates.n {
            return Err(invalid("k", "exceeds n"));
        }
        counts[k] = rates.m as u64;
        Self::new(rates, counts)
    }

    /// One mutant individual in one group, every other individual resident.
    /// `mutant_is_c` picks a C mutant among D residents, otherwise a D mutant
    /// among C residents.
    pub fn single_mutant(rates: IbmRates, mutant_is_c: bool) -> Result<Self> {
        let n = rates.n;
        let m = rates.m as u64;
        let mut counts = vec![0; n + 1];
        if mutant_is_c {
            counts[0] = m - 1;
            counts[1] += 1;
        } else {
            counts[n] = m - 1;
            counts[n - 1] += 1;
        }
        Self::new(rates, counts)
    }

    pub fn groups(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn absorbed(&self) -> Option<Absorption> {
        let m = self.rates.m as u64;
        if self.counts[0] == m {
            Some(Absorption::AllD)
        } else if self.counts[self.rates.n] == m {
            Some(Absorption::AllC)
        } else {
            None
        }
    }

    /// Empirical measure of group compositions on an `grid`-cell grid.
    pub fn empirical_measure(&self, grid: usize) -> DecomposedMeasure {
        let n = self.rates.n;
        let m = self.rates.m as f64;
        let mut mu = DecomposedMeasure::zero(grid);
        for (k, c) in self.counts.iter().enumerate() {
            if *c == 0 {
                continue;
            }
            let w = *c as f64 / m;
            if k == 0 {
                mu.x0 += w;
            } else if k == n {
                mu.x1 += w;
            } else {
                mu.interior[cell_of(k as f64 / n as f64, grid)] += w;
            }
        }
        mu
    }

    /// Mean C proportion over groups, `<mu|x>`.
    pub fn mean_proportion(&self) -> f64 {
        let n = self.rates.n as f64;
        let m = self.rates.m as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(k, c)| k as f64 * *c as f64)
            .sum::<f64>()
            / (n * m)
    }
}

/// Per-group weights of the three channel families, independent of counts.
#[derive(Clone, Debug)]
struct ClassWeights {
    down: Vec<f64>,
    up: Vec<f64>,
    group: Vec<f64>,
    total: Vec<f64>,
}

impl ClassWeights {
    fn new(rates: &IbmRates) -> Self {
        let n = rates.n;
        let mut w = ClassWeights {
            down: vec![0.0; n + 1],
            up: vec![0.0; n + 1],
            group: vec![0.0; n + 1],
            total: vec![0.0; n + 1],
        };
        for k in 0..=n {
            let frac = k as f64 / n as f64;
            let ind = rates.gamma_i_bar * k as f64 * (1.0 - frac);
            w.down[k] = ind * (1.0 + rates.s_bar);
            w.up[k] = ind;
            w.group[k] = rates.gamma_g_bar * (1.0 + rates.r_bar.eval(frac));
            w.total[k] = w.down[k] + w.up[k] + w.group[k];
        }
        w
    }
}

pub fn event_rates(state: &IbmState) -> RateTable {
    let w = ClassWeights::new(&state.rates);
    let scale = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .zip(&state.counts)
            .map(|(a, c)| a * *c as f64)
            .collect()
    };
    let down = scale(&w.down);
    let up = scale(&w.up);
    let group = scale(&w.group);
    let total = down.iter().chain(&up).chain(&group).sum();
    RateTable {
        down,
        up,
        group,
        total,
    }
}

/// Simulator holding precomputed per-class weights.
#[derive(Clone, Debug)]
pub struct Gillespie {
    w: ClassWeights,
    class_rate: Vec<f64>,
}

impl Gillespie {
    pub fn new(state: &IbmState) -> Self {
        let w = ClassWeights::new(&state.rates);
        let class_rate = w
            .total
            .iter()
            .zip(&state.counts)
            .map(|(a, c)| a * *c as f64)
            .collect();
        Gillespie { w, class_rate }
    }

    fn refresh(&mut self, state: &IbmState, k: usize) {
        self.class_rate[k] = self.w.total[k] * state.counts[k] as f64;
    }

    fn pick_victim<R: Rng + ?Sized>(state: &IbmState, rng: &mut R) -> usize {
        let mut u = rng.random_range(0..state.rates.m as u64);
        for (i, c) in state.counts.iter().enumerate() {
            if u < *c {
                return i;
            }
            u -= c;
        }
        unreachable!("victim index beyond m")
    }

    pub fn sample_channel<R: Rng + ?Sized>(&self, state: &IbmState, rng: &mut R) -> Option<Channel> {
        let total: f64 = self.class_rate.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        let mut k = self.class_rate.len() - 1;
        for (i, r) in self.class_rate.iter().enumerate() {
            if u < *r {
                k = i;
                break;
            }
            u -= r;
        }
        while self.class_rate[k] == 0.0 {
            k -= 1;
        }
        let mut v = rng.random::<f64>() * self.w.total[k];
        if v < self.w.down[k] {
            return Some(Channel::Down(k));
        }
        v -= self.w.down[k];
        if v < self.w.up[k] {
            return Some(Channel::Up(k));
        }
        Some(Channel::Group {
            parent: k,
            victim: Self::pick_victim(state, rng),
        })
    }

    fn apply(&mut self, state: &mut IbmState, channel: Channel) {
        let (from, to) = match channel {
            Channel::Down(k) => (k, k - 1),
            Channel::Up(k) => (k, k + 1),
            Channel::Group { parent, victim } => (victim, parent),
        };
        if from != to {
            state.counts[from] -= 1;
            state.counts[to] += 1;
            self.refresh(state, from);
            self.refresh(state, to);
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, state: &mut IbmState, rng: &mut R) -> StepOutcome {
        if state.absorbed().is_some() {
            return StepOutcome::Absorbed;
        }
        let total: f64 = self.class_rate.iter().sum();
        let Some(channel) = self.sample_channel(state, rng) else {
            return StepOutcome::Absorbed;
        };
        let e: f64 = Exp1.sample(rng);
        let wait = e / total;
        state.time += wait;
        self.apply(state, channel);
        StepOutcome::Event { wait, channel }
    }

    /// Advances until just before `until` or absorption; returns whether absorbed.
    /// The event that would cross `until` is discarded, which is exact by
    /// memorylessness.
    pub fn run_until<R: Rng + ?Sized>(&mut self, state: &mut IbmState, until: f64, rng: &mut R) -> bool {
        loop {
            if state.absorbed().is_some() {
                return true;
            }
            let total: f64 = self.class_rate.iter().sum();
            if !(total > 0.0) {
                return true;
            }
            let e: f64 = Exp1.sample(rng);
            let wait = e / total;
            if state.time + wait > until {
                state.time = until;
                return false;
            }
            let channel = self.sample_channel(state, rng).expect("positive total rate");
            state.time += wait;
            self.apply(state, channel);
        }
    }
}

/// Snapshots of the empirical measure at `sample_times` (sorted, within the horizon).
pub fn simulate<R: Rng + ?Sized>(
    initial: &IbmState,
    sample_times: &[f64],
    grid: usize,
    rng: &mut R,
) -> Result<Vec<(f64, DecomposedMeasure)>> {
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("sample_times", "must be sorted"));
    }
    let mut state = initial.clone();
    let mut sim = Gillespie::new(&state);
    let mut out = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        if t < state.time {
            return Err(invalid("sample_times", "precede the initial time"));
        }
        sim.run_until(&mut state, t, rng);
        out.push((t, state.empirical_measure(grid)));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionStats {
    pub replicates: u64,
    pub all_d: Proportion,
    pub all_c: Proportion,
    pub alive: Proportion,
    pub seed: u64,
    /// Replicate `i` used stream `i` of the seed.
    pub streams: std::ops::Range<u64>,
}

/// Outcome per replicate: `Some(absorption)` or `None` at the horizon.
pub fn absorption_outcomes(
    initial: &IbmState,
    replicates: usize,
    horizon: f64,
    seed: u64,
    exec: Exec,
) -> Vec<Option<Absorption>> {
    exec.map(replicates, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let mut state = initial.clone();
        let mut sim = Gillespie::new(&state);
        sim.run_until(&mut state, horizon, &mut rng);
        state.absorbed()
    })
}

pub fn absorption_stats(
    initial: &IbmState,
    replicates: usize,
    horizon: f64,
    seed: u64,
    exec: Exec,
) -> Result<AbsorptionStats> {
    if replicates == 0 {
        return Err(invalid("replicates", "must be >= 1"));
    }
    let outcomes = absorption_outcomes(initial, replicates, horizon, seed, exec);
    let count = |a: Option<Absorption>| outcomes.iter().filter(|o| **o == a).count() as u64;
    let r = replicates as u64;
    Ok(AbsorptionStats {
        replicates: r,
        all_d: wilson(count(Some(Absorption::AllD)), r, Z95),
        all_c: wilson(count(Some(Absorption::AllC)), r, Z95),
        alive: wilson(count(None), r, Z95),
        seed,
        streams: 0..r,
    })
}

/// Snapshots for each replicate; replicate `i` uses stream `i` of `seed`.
pub fn trajectories(
    initial: &IbmState,
    sample_times: &[f64],
    grid: usize,
    replicates: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<Vec<(f64, DecomposedMeasure)>>> {
    exec.map(replicates, |i| {
        let mut rng = stream_rng(seed, i as u64);
        simulate(initial, sample_times, grid, &mut rng)
    })
    .into_iter()
    .collect()
}

/// Average of per-replicate snapshots.
pub fn average_runs(runs: &[Vec<(f64, DecomposedMeasure)>], grid: usize) -> Result<Vec<(f64, DecomposedMeasure)>> {
    let first = runs.first().ok_or_else(|| invalid("replicates", "must be >= 1"))?;
    let mut mean: Vec<(f64, DecomposedMeasure)> =
        first.iter().map(|(t, _)| (*t, DecomposedMeasure::zero(grid))).collect();
    for run in runs {
        for ((_, acc), (_, mu)) in mean.iter_mut().zip(run) {
            acc.add_scaled(1.0 / runs.len() as f64, mu)?;
        }
    }
    Ok(mean)
}

/// Replicate-averaged snapshots, one simulation per stream.
pub fn mean_trajectory(
    initial: &IbmState,
    sample_times: &[f64],
    grid: usize,
    replicates: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<(f64, DecomposedMeasure)>> {
    if replicates == 0 {
        return Err(invalid("replicates", "must be >= 1"));
    }
    let runs = trajectories(initial, sample_times, grid, replicates, seed, exec)?;
    average_runs(&runs, grid)
}

pub fn write_trajectory_csv<W: std::io::Write>(
    runs: &[Vec<(f64, DecomposedMeasure)>],
    w: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["replicate", "time", "location", "mass", "kind"])?;
    for (rep, run) in runs.iter().enumerate() {
        for (t, mu) in run {
            for row in mu.rows() {
                if row.mass == 0.0 {
                    continue;
                }
                let kind = serde_json::to_value(row.kind)?;
                wtr.write_record(&[
                    rep.to_string(),
                    t.to_string(),
                    row.location.to_string(),
                    row.mass.to_string(),
                    kind.as_str().unwrap_or_default().to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}
