//! Measures on [0,1] split into an atom at 0, an atom at 1 and per-cell
//! interior masses.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::midpoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposedMeasure {
    pub x0: f64,
    pub x1: f64,
    /// Mass of each of the `N` uniform cells of (0,1).
    pub interior: Vec<f64>,
}

/// One CSV row of the measure schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub location: f64,
    pub mass: f64,
    pub kind: MassKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassKind {
    Atom0,
    Atom1,
    Cell,
}

impl DecomposedMeasure {
    pub fn zero(n: usize) -> Self {
        DecomposedMeasure {
            x0: 0.0,
            x1: 0.0,
            interior: vec![0.0; n],
        }
    }

    pub fn delta0(n: usize) -> Self {
        DecomposedMeasure {
            x0: 1.0,
            ..Self::zero(n)
        }
    }

    pub fn delta1(n: usize) -> Self {
        DecomposedMeasure {
            x1: 1.0,
            ..Self::zero(n)
        }
    }

    /// Unit mass at `x`: an atom when `x` is 0 or 1, otherwise the cell containing `x`.
    pub fn point(x: f64, n: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) {
            return Err(invalid("x", format!("{x} is outside [0,1]")));
        }
        let mut m = Self::zero(n);
        if x == 0.0 {
            m.x0 = 1.0;
        } else if x == 1.0 {
            m.x1 = 1.0;
        } else {
            m.interior[cell_of(x, n)] = 1.0;
        }
        Ok(m)
    }

    /// Uniform density on (0,1).
    pub fn uniform(n: usize) -> Self {
        DecomposedMeasure {
            x0: 0.0,
            x1: 0.0,
            interior: vec![1.0 / n as f64; n],
        }
    }

    /// Interior profile built from a density evaluated at cell midpoints, normalized.
    pub fn from_density(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut m = DecomposedMeasure {
            x0: 0.0,
            x1: 0.0,
            interior: (0..n).map(|k| f(midpoint(k, n)).max(0.0)).collect(),
        };
        m.normalize()?;
        Ok(m)
    }

    pub fn grid_size(&self) -> usize {
        self.interior.len()
    }

    pub fn interior_mass(&self) -> f64 {
        self.interior.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.x0 + self.x1 + self.interior_mass()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.x0 >= 0.0 && self.x1 >= 0.0 && self.interior.iter().all(|v| *v >= 0.0)
    }

    pub fn is_normalized(&self) -> bool {
        self.is_nonnegative() && (self.total() - 1.0).abs() <= 1e-10
    }

    pub fn validate_normalized(&self) -> Result<()> {
        if !self.is_nonnegative() {
            return Err(invalid("measure", "has negative components"));
        }
        if (self.total() - 1.0).abs() > 1e-10 {
            return Err(invalid(
                "measure",
                format!("total mass {} is not 1", self.total()),
            ));
        }
        Ok(())
    }

    /// Rescale to unit mass, returning the previous total.
    pub fn normalize(&mut self) -> Result<f64> {
        let total = self.total();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        self.scale(1.0 / total);
        Ok(total)
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    pub fn scale(&mut self, c: f64) {
        self.x0 *= c;
        self.x1 *= c;
        self.interior.iter_mut().for_each(|v| *v *= c);
    }

    /// `self + c * other`
    pub fn add_scaled(&mut self, c: f64, other: &Self) -> Result<()> {
        check_grid(self, other)?;
        self.x0 += c * other.x0;
        self.x1 += c * other.x1;
        for (a, b) in self.interior.iter_mut().zip(&other.interior) {
            *a += c * b;
        }
        Ok(())
    }

    /// Interior part renormalized to a probability (the profile `xi`).
    pub fn interior_profile(&self) -> Option<Vec<f64>> {
        let mass = self.interior_mass();
        (mass > 0.0).then(|| self.interior.iter().map(|v| v / mass).collect())
    }

    /// `<mu|f>` with the midpoint rule on the interior.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let n = self.grid_size();
        let inner: f64 = self
            .interior
            .iter()
            .enumerate()
            .map(|(k, m)| f(midpoint(k, n)) * m)
            .sum();
        f(0.0) * self.x0 + f(1.0) * self.x1 + inner
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|x| x)
    }

    /// Mean of the interior profile, `None` without interior mass.
    pub fn interior_mean(&self) -> Option<f64> {
        let n = self.grid_size();
        let mass = self.interior_mass();
        (mass > 0.0).then(|| {
            self.interior
                .iter()
                .enumerate()
                .map(|(k, m)| midpoint(k, n) * m)
                .sum::<f64>()
                / mass
        })
    }

    /// The measure seen after swapping the two types: x -> 1 - x.
    pub fn reflected(&self) -> Self {
        DecomposedMeasure {
            x0: self.x1,
            x1: self.x0,
            interior: self.interior.iter().rev().copied().collect(),
        }
    }

    /// Merges each run of `factor` consecutive cells; the grid size must be
    /// a multiple of `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let n = self.grid_size();
        if factor == 0 || n % factor != 0 {
            return Err(invalid("factor", "must divide the grid size"));
        }
        Ok(DecomposedMeasure {
            x0: self.x0,
            x1: self.x1,
            interior: self.interior.chunks(factor).map(|c| c.iter().sum()).collect(),
        })
    }

    /// Splits every cell into `factor` equal cells sharing its mass evenly,
    /// the law of a uniform point inside each cell.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("factor", "must be >= 1"));
        }
        let share = 1.0 / factor as f64;
        Ok(DecomposedMeasure {
            x0: self.x0,
            x1: self.x1,
            interior: self
                .interior
                .iter()
                .flat_map(|m| std::iter::repeat_n(m * share, factor))
                .collect(),
        })
    }

    pub fn rows(&self) -> Vec<MeasureRow> {
        let n = self.grid_size();
        let mut rows = Vec::with_capacity(n + 2);
        rows.push(MeasureRow {
            location: 0.0,
            mass: self.x0,
            kind: MassKind::Atom0,
        });
        rows.extend(self.interior.iter().enumerate().map(|(k, m)| MeasureRow {
            location: midpoint(k, n),
            mass: *m,
            kind: MassKind::Cell,
        }));
        rows.push(MeasureRow {
            location: 1.0,
            mass: self.x1,
            kind: MassKind::Atom1,
        });
        rows
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in self.rows() {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut m = DecomposedMeasure::zero(0);
        for row in rdr.deserialize() {
            let row: MeasureRow = row?;
            match row.kind {
                MassKind::Atom0 => m.x0 = row.mass,
                MassKind::Atom1 => m.x1 = row.mass,
                MassKind::Cell => m.interior.push(row.mass),
            }
        }
        Ok(m)
    }
}

/// Index of the cell of an `n`-cell grid containing `x` in (0,1).
pub fn cell_of(x: f64, n: usize) -> usize {
    ((x * n as f64) as usize).min(n - 1)
}

fn check_grid(a: &DecomposedMeasure, b: &DecomposedMeasure) -> Result<()> {
    if a.grid_size() != b.grid_size() {
        return Err(Error::GridMismatch {
            left: a.grid_size(),
            right: b.grid_size(),
        });
    }
    Ok(())
}

/// Total-variation distance between two measures on the same grid.
pub fn tv_distance(a: &DecomposedMeasure, b: &DecomposedMeasure) -> Result<f64> {
    check_grid(a, b)?;
    let inner: f64 = a
        .interior
        .iter()
        .zip(&b.interior)
        .map(|(p, q)| (p - q).abs())
        .sum();
    Ok(0.5 * ((a.x0 - b.x0).abs() + (a.x1 - b.x1).abs() + inner))
}

/// TV distance between two probability vectors of equal length.
pub fn tv_vec(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>()
}
