//! Precomputed SAR precision blocks on the grid of spatial-correlation values.
//!
//! With `Q_all(r) = (I - rW)(I - rW)ᵀ = I - r(W + Wᵀ) + r² W Wᵀ`, every block is
//! a quadratic polynomial in `r`, so quadratic forms at all grid points cost
//! three products.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{quad_form, Cholesky};
use crate::model::SpatialGraph;

/// Factors for drawing non-sampled effects given the sampled ones.
#[derive(Debug, Clone)]
pub struct Interpolation {
    /// Cholesky factor of `Q_22(r)`.
    pub chol22: Cholesky,
    /// `Q_22(r)⁻¹ Q_21(r)`, shape `m* × m`.
    pub gain: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct RhoGrid {
    points: Vec<f64>,
    n_sampled: usize,
    n_areas: usize,
    // sampled block of W + Wᵀ and W Wᵀ
    a11: DMatrix<f64>,
    b11: DMatrix<f64>,
    a11_iota: DVector<f64>,
    b11_iota: DVector<f64>,
    log_dets: Vec<f64>,
    interpolation: Vec<Interpolation>,
}

impl RhoGrid {
    pub fn new(graph: &SpatialGraph, points: &[f64]) -> Result<Self> {
        RhoGrid::from_weights(&graph.weights(), graph.n_sampled(), points)
    }

    /// Independent effects: `Q_all = I` at the single point `r = 0`.
    pub fn identity(n_areas: usize, n_sampled: usize) -> Result<Self> {
        RhoGrid::from_weights(&DMatrix::zeros(n_areas, n_areas), n_sampled, &[0.0])
    }

    /// Grid for an arbitrary weight matrix whose first `n_sampled` rows are sampled areas.
    pub fn from_weights(w: &DMatrix<f64>, n_sampled: usize, points: &[f64]) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n || n_sampled == 0 || n_sampled > n {
            return Err(Error::Config(format!("weights {}x{} with {n_sampled} sampled areas", n, w.ncols())));
        }
        if points.is_empty() || points.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("grid points must lie in [0, 1)".into()));
        }
        let m = n_sampled;
        let ms = n - m;
        let a_all = w + w.transpose();
        let b_all = w * w.transpose();
        let a11 = a_all.view((0, 0), (m, m)).into_owned();
        let b11 = b_all.view((0, 0), (m, m)).into_owned();
        let ones = DVector::from_element(m, 1.0);
        let a11_iota = &a11 * &ones;
        let b11_iota = &b11 * &ones;

        let mut log_dets = Vec::with_capacity(points.len());
        let mut interpolation = Vec::new();
        for &r in points {
            let q11 = block(&a11, &b11, r, true);
            let chol = Cholesky::new(&q11)
                .map_err(|_| Error::Config(format!("Q_11 is not positive definite at rho = {r}")))?;
            log_dets.push(chol.log_det());
            if ms > 0 {
                let a22 = a_all.view((m, m), (ms, ms)).into_owned();
                let b22 = b_all.view((m, m), (ms, ms)).into_owned();
                let a21 = a_all.view((m, 0), (ms, m)).into_owned();
                let b21 = b_all.view((m, 0), (ms, m)).into_owned();
                let q22 = block(&a22, &b22, r, true);
                let q21 = block(&a21, &b21, r, false);
                let chol22 = Cholesky::new(&q22)
                    .map_err(|_| Error::Config(format!("Q_22 is not positive definite at rho = {r}")))?;
                let gain = chol22.solve_matrix(&q21);
                interpolation.push(Interpolation { chol22, gain });
            }
        }
        Ok(RhoGrid {
            points: points.to_vec(),
            n_sampled: m,
            n_areas: n,
            a11,
            b11,
            a11_iota,
            b11_iota,
            log_dets,
            interpolation,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, j: usize) -> f64 {
        self.points[j]
    }

    pub fn n_sampled(&self) -> usize {
        self.n_sampled
    }

    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    /// Index of the grid point closest to `r`.
    pub fn nearest_index(&self, r: f64) -> usize {
        let mut best = 0;
        for (j, p) in self.points.iter().enumerate() {
            if (p - r).abs() < (self.points[best] - r).abs() {
                best = j;
            }
        }
        best
    }

    pub fn log_det(&self, j: usize) -> f64 {
        self.log_dets[j]
    }

    /// `Q_11` at grid point `j`.
    pub fn q11(&self, j: usize) -> DMatrix<f64> {
        block(&self.a11, &self.b11, self.points[j], true)
    }

    /// `Q_11 ι` at grid point `j`.
    pub fn q11_iota(&self, j: usize) -> DVector<f64> {
        let r = self.points[j];
        DVector::from_fn(self.n_sampled, |i, _| 1.0 - r * self.a11_iota[i] + r * r * self.b11_iota[i])
    }

    /// `ιᵀ Q_11 ι` at grid point `j`.
    pub fn iota_q11_iota(&self, j: usize) -> f64 {
        self.q11_iota(j).sum()
    }

    /// `vᵀ Q_11 v` at grid point `j`.
    pub fn quad_form(&self, j: usize, v: &[f64]) -> f64 {
        let (c0, c1, c2) = self.quad_coefficients(v);
        let r = self.points[j];
        c0 - r * c1 + r * r * c2
    }

    /// `vᵀ Q_11 v` at every grid point.
    pub fn quad_forms(&self, v: &[f64]) -> Vec<f64> {
        let (c0, c1, c2) = self.quad_coefficients(v);
        self.points.iter().map(|r| c0 - r * c1 + r * r * c2).collect()
    }

    fn quad_coefficients(&self, v: &[f64]) -> (f64, f64, f64) {
        let c0: f64 = v.iter().map(|x| x * x).sum();
        (c0, quad_form(&self.a11, v), quad_form(&self.b11, v))
    }

    /// Interpolation factors at grid point `j`, `None` when every area is sampled.
    pub fn interpolation(&self, j: usize) -> Option<&Interpolation> {
        self.interpolation.get(j)
    }
}

/// `δ I - r A + r² B`, with the identity only on diagonal blocks.
fn block(a: &DMatrix<f64>, b: &DMatrix<f64>, r: f64, diagonal: bool) -> DMatrix<f64> {
    let mut q = b * (r * r) - a * r;
    if diagonal {
        for i in 0..q.nrows() {
            q[(i, i)] += 1.0;
        }
    }
    q
}
