//! Tridiagonal systems.

/// `lower[k]` couples row k to k-1 (unused at k = 0), `upper[k]` couples
/// row k to k+1 (unused at the last row).
#[derive(Clone, Debug)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiag {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn transpose(&self) -> Tridiag {
        let n = self.len();
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for k in 0..n.saturating_sub(1) {
            upper[k] = self.lower[k + 1];
            lower[k + 1] = self.upper[k];
        }
        Tridiag {
            lower,
            diag: self.diag.clone(),
            upper,
        }
    }

    pub fn shifted(&self, sigma: f64) -> Tridiag {
        Tridiag {
            lower: self.lower.clone(),
            diag: self.diag.iter().map(|d| d - sigma).collect(),
            upper: self.upper.clone(),
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|k| {
                let mut y = self.diag[k] * x[k];
                if k > 0 {
                    y += self.lower[k] * x[k - 1];
                }
                if k + 1 < n {
                    y += self.upper[k] * x[k + 1];
                }
                y
            })
            .collect()
    }

    /// LU factors without pivoting; intended for M-matrices.
    pub fn factor(&self) -> Option<TridiagLu> {
        let n = self.len();
        let mut inv_pivot = vec![0.0; n];
        let mut cprime = vec![0.0; n];
        let mut prev_c = 0.0;
        for k in 0..n {
            let l = if k > 0 { self.lower[k] } else { 0.0 };
            let piv = self.diag[k] - l * prev_c;
            if !(piv.is_finite() && piv != 0.0) {
                return None;
            }
            inv_pivot[k] = 1.0 / piv;
            prev_c = if k + 1 < n {
                self.upper[k] * inv_pivot[k]
            } else {
                0.0
            };
            cprime[k] = prev_c;
        }
        Some(TridiagLu {
            lower: self.lower.clone(),
            inv_pivot,
            cprime,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TridiagLu {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    cprime: Vec<f64>,
}

impl TridiagLu {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        let mut prev = 0.0;
        for k in 0..n {
            let l = if k > 0 { self.lower[k] } else { 0.0 };
            x[k] = (x[k] - l * prev) * self.inv_pivot[k];
            prev = x[k];
        }
        for k in (0..n.saturating_sub(1)).rev() {
            x[k] -= self.cprime[k] * x[k + 1];
        }
    }
}
