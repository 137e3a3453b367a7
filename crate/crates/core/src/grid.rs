//! Uniform (ρ, θ) grids on a chart and a banded Cholesky solver for the
//! symmetric systems assembled on them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::domains::ConformalChart;
use crate::error::{LabError, Result};

pub const MIN_N_RHO: usize = 16;
pub const MIN_N_THETA: usize = 8;

/// Uniform grid `ρ_i = ρ₊ − (n_ρ − 1 − i)·dρ`, `θ_j = 2πj/n_θ`. Fields on it
/// are stored row-major with index `i·n_θ + j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rho_max: f64,
    pub drho: f64,
    pub n_rho: usize,
    pub n_theta: usize,
}

impl Grid {
    pub fn new(rho_min: f64, rho_max: f64, n_rho: usize, n_theta: usize) -> Result<Self> {
        if !(rho_max > rho_min) {
            return Err(LabError::Config(format!("empty ρ-interval [{rho_min}, {rho_max}]")));
        }
        let drho = (rho_max - rho_min) / (n_rho.max(2) - 1) as f64;
        Grid::anchored(rho_max, drho, n_rho, n_theta)
    }

    /// Grid whose last row sits at `rho_max`; members of a family built with
    /// the same anchor and spacing share their rows bit for bit.
    pub fn anchored(rho_max: f64, drho: f64, n_rho: usize, n_theta: usize) -> Result<Self> {
        if n_rho < MIN_N_RHO || n_theta < MIN_N_THETA {
            return Err(LabError::Config(format!(
                "grid needs n_rho >= {MIN_N_RHO} and n_theta >= {MIN_N_THETA}, got {n_rho}×{n_theta}"
            )));
        }
        if !(drho > 0.0 && drho.is_finite() && rho_max.is_finite()) {
            return Err(LabError::Config(format!("invalid grid spacing {drho}")));
        }
        Ok(Grid {
            rho_max,
            drho,
            n_rho,
            n_theta,
        })
    }

    /// Grid filling the chart with a margin of one spacing at each edge.
    /// `cusp_depth` is the lower ρ-limit used on cusp charts.
    pub fn for_chart(chart: &ConformalChart, n_rho: usize, n_theta: usize, cusp_depth: f64) -> Result<Self> {
        let (lo, hi) = chart.rho_bounds();
        let lo = if lo.is_finite() { lo } else { cusp_depth };
        if !(lo < hi) {
            return Err(LabError::Config(format!("cusp depth {cusp_depth} above chart edge {hi}")));
        }
        let drho = (hi - lo) / (n_rho + 1) as f64;
        Grid::anchored(hi - drho, drho, n_rho, n_theta)
    }

    pub fn rho(&self, i: usize) -> f64 {
        self.rho_max - (self.n_rho - 1 - i) as f64 * self.drho
    }

    pub fn rho_min(&self) -> f64 {
        self.rho(0)
    }

    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta()
    }

    pub fn len(&self) -> usize {
        self.n_rho * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_theta + j
    }

    pub fn is_interior_row(&self, i: usize) -> bool {
        i > 0 && i + 1 < self.n_rho
    }

    /// Rejects grids touching or leaving the chart.
    pub fn check_inside(&self, chart: &ConformalChart) -> Result<()> {
        let (lo, hi) = chart.rho_bounds();
        if self.rho_min() > lo && self.rho_max < hi {
            Ok(())
        } else {
            Err(LabError::GridMismatch(format!(
                "grid rows [{}, {}] leave the chart interval ({lo}, {hi})",
                self.rho_min(),
                self.rho_max
            )))
        }
    }

    pub fn check_field(&self, v: &[f64]) -> Result<()> {
        if v.len() == self.len() {
            Ok(())
        } else {
            Err(LabError::GridMismatch(format!(
                "field of length {} on a {}×{} grid",
                v.len(),
                self.n_rho,
                self.n_theta
            )))
        }
    }

    /// Row index `i` with `rho(i)` equal to `rho` up to 1e-9 spacings.
    pub fn row_of(&self, rho: f64) -> Option<usize> {
        let x = (rho - self.rho_min()) / self.drho;
        let i = x.round();
        ((x - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < self.n_rho).then_some(i as usize)
    }
}

/// Symmetric positive definite band matrix stored by rows of its lower band.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `value` to entry `(i, j)` of the symmetric matrix.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
        self.data[i * (self.bw + 1) + (i - j)] += value;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[i * (self.bw + 1) + (i - j)]
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            for k in 0..=self.bw.min(i) {
                let a = self.data[i * (self.bw + 1) + k];
                let j = i - k;
                y[i] += a * x[j];
                if k > 0 {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// In-place Cholesky factorization `A = L Lᵀ`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let w = self.bw + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            for j in j0..=i {
                let mut s = self.data[i * w + (i - j)];
                let m0 = j0.max(j.saturating_sub(self.bw));
                for m in m0..j {
                    s -= self.data[i * w + (i - m)] * self.data[j * w + (j - m)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(LabError::Degenerate(format!(
                            "band matrix not positive definite at pivot {i} ({s:e})"
                        )));
                    }
                    self.data[i * w] = s.sqrt();
                } else {
                    self.data[i * w + (i - j)] = s / self.data[j * w];
                }
            }
        }
        Ok(BandCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.l.n, self.l.bw);
        let w = bw + 1;
        let d = &self.l.data;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for m in i.saturating_sub(bw)..i {
                s -= d[i * w + (i - m)] * y[m];
            }
            y[i] = s / d[i * w];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= d[k * w + (k - i)] * y[k];
            }
            y[i] = s / d[i * w];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_rows_and_anchoring() {
        let g = Grid::new(-3.0, -1.0, 21, 8).unwrap();
        assert_eq!(g.rho(20), -1.0);
        assert!((g.rho(0) + 3.0).abs() < 1e-14);
        assert_eq!(g.row_of(g.rho(7)), Some(7));
        assert_eq!(g.row_of(-1.05), None);
        let a = Grid::anchored(-0.7, 0.02, 100, 8).unwrap();
        let b = Grid::anchored(-0.7, 0.02, 400, 8).unwrap();
        for i in 0..100 {
            assert_eq!(a.rho(99 - i).to_bits(), b.rho(399 - i).to_bits());
        }
        assert!(Grid::new(-1.0, 0.0, 15, 8).is_err());
        assert!(Grid::new(-1.0, 0.0, 16, 7).is_err());
    }

    #[test]
    fn chart_grids_keep_a_margin() {
        let chart = ConformalChart::annulus(num_complex::Complex64::new(1e-3, 0.0), 0.5).unwrap();
        let g = Grid::for_chart(&chart, 64, 16, -10.0).unwrap();
        let (lo, hi) = chart.rho_bounds();
        assert!(g.rho_min() - lo >= 0.999 * g.drho);
        assert!(hi - g.rho_max >= 0.999 * g.drho);
        g.check_inside(&chart).unwrap();
        let wide = Grid::new(lo - 0.1, hi, 64, 16).unwrap();
        assert!(wide.check_inside(&chart).is_err());
    }

    #[test]
    fn banded_cholesky_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(n, bw) in &[(1usize, 0usize), (10, 1), (40, 7), (60, 59), (50, 8)] {
            let mut a = BandMatrix::zeros(n, bw);
            let mut dense = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in i.saturating_sub(bw)..i {
                    let x = rng.gen_range(-1.0..1.0);
                    a.add(i, j, x);
                    dense[(i, j)] += x;
                    dense[(j, i)] += x;
                }
            }
            for i in 0..n {
                let d = 2.0 * bw as f64 + 1.0 + rng.gen_range(0.0..1.0);
                a.add(i, i, d);
                dense[(i, i)] += d;
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = a.mul_vec(&b);
            let yd = &dense * DVector::from_vec(b.clone());
            for i in 0..n {
                assert!((y[i] - yd[i]).abs() < 1e-12);
            }
            let x = a.clone().cholesky().unwrap().solve(&b);
            let xd = dense.cholesky().unwrap().solve(&DVector::from_vec(b));
            for i in 0..n {
                assert!((x[i] - xd[i]).abs() < 1e-11, "n={n} bw={bw}");
            }
        }
    }

    #[test]
    fn indefinite_band_is_rejected() {
        let mut a = BandMatrix::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -1.0);
        a.add(2, 2, 1.0);
        assert!(a.cholesky().is_err());
    }
}
