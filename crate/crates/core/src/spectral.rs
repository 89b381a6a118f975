//! Truncated eigenbases of the dissipative operator `L`, Sobolev inner
//! products and grid transforms.
//!
//! Two domains are supported: the unit interval with Dirichlet conditions
//! (sine basis, Gauss-Legendre quadrature) and the mean-zero torus of side
//! 2π (cos/sin pairs on a half lattice, trapezoid quadrature).

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Extra Gauss-Legendre nodes beyond `2·dim`; below this the sine basis is
/// not orthonormal to 1e-12 on the discrete grid.
pub const GL_GUARD: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    /// `[0,1]` with `u(0) = u(1) = 0`.
    DirichletInterval,
    /// `[0,2π]²`, periodic, spatial mean zero.
    Torus2D,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trig {
    Cos,
    Sin,
}

/// One real basis function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// `√2 sin(kπx)`.
    Sine(u32),
    /// `cos(k·x)/(√2π)` or `sin(k·x)/(√2π)` with `k` in the upper half lattice.
    Fourier(i32, i32, Trig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub domain: Domain,
    /// Modes per axis.
    pub k: usize,
    pub nu: f64,
    pub modes: Vec<Mode>,
    /// Eigenvalues of `L = -νΔ`, nondecreasing.
    pub eigenvalues: Vec<f64>,
}

impl BasisSpec {
    pub fn dirichlet(k: usize, nu: f64) -> Result<Arc<Self>> {
        if k == 0 || !(nu > 0.0) {
            return invalid("dirichlet basis needs k >= 1 and nu > 0");
        }
        let modes: Vec<Mode> = (1..=k as u32).map(Mode::Sine).collect();
        let eigenvalues = (1..=k).map(|j| nu * PI * PI * (j * j) as f64).collect();
        Ok(Arc::new(Self {
            domain: Domain::DirichletInterval,
            k,
            nu,
            modes,
            eigenvalues,
        }))
    }

    /// Half-lattice truncation `|k1|, |k2| <= k`, ordered by `|k|²`, then
    /// lexicographically, cos before sin.
    pub fn torus(k: usize, nu: f64) -> Result<Arc<Self>> {
        if k == 0 || !(nu > 0.0) {
            return invalid("torus basis needs k >= 1 and nu > 0");
        }
        let kk = k as i32;
        let mut lattice = Vec::new();
        for k1 in -kk..=kk {
            for k2 in -kk..=kk {
                if k1 > 0 || (k1 == 0 && k2 > 0) {
                    lattice.push((k1, k2));
                }
            }
        }
        lattice.sort_by_key(|&(a, b)| (a * a + b * b, a, b));
        let mut modes = Vec::with_capacity(2 * lattice.len());
        let mut eigenvalues = Vec::with_capacity(2 * lattice.len());
        for (a, b) in lattice {
            for t in [Trig::Cos, Trig::Sin] {
                modes.push(Mode::Fourier(a, b, t));
                eigenvalues.push(nu * (a * a + b * b) as f64);
            }
        }
        Ok(Arc::new(Self {
            domain: Domain::Torus2D,
            k,
            nu,
            modes,
            eigenvalues,
        }))
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    /// Index of a torus mode, accepting either sign of the wave vector.
    pub fn fourier_index(&self, k1: i32, k2: i32, trig: Trig) -> Option<usize> {
        let (a, b) = if k1 > 0 || (k1 == 0 && k2 > 0) {
            (k1, k2)
        } else {
            (-k1, -k2)
        };
        self.modes
            .iter()
            .position(|m| *m == Mode::Fourier(a, b, trig))
    }

    /// Value of basis function `i` at a point (`y` ignored on the interval).
    pub fn eval_mode(&self, i: usize, x: f64, y: f64) -> f64 {
        match self.modes[i] {
            Mode::Sine(k) => SQRT_2 * (k as f64 * PI * x).sin(),
            Mode::Fourier(a, b, t) => {
                let phase = a as f64 * x + b as f64 * y;
                let norm = 1.0 / (SQRT_2 * PI);
                match t {
                    Trig::Cos => norm * phase.cos(),
                    Trig::Sin => norm * phase.sin(),
                }
            }
        }
    }

    /// Smallest grid (points for the interval, points per axis for the torus)
    /// that integrates products of `degree + 1` basis functions exactly.
    pub fn grid_size_for_degree(&self, degree: usize) -> usize {
        match self.domain {
            Domain::DirichletInterval => (degree + 1) * self.k + GL_GUARD,
            Domain::Torus2D => (degree + 1) * self.k + 1,
        }
    }

    fn min_grid(&self) -> usize {
        match self.domain {
            Domain::DirichletInterval => 2 * self.dim() + GL_GUARD,
            Domain::Torus2D => 2 * self.k + 1,
        }
    }

    /// Quadrature grid with `n` points (interval) or `n × n` points (torus).
    pub fn grid(&self, n: usize) -> Result<Grid> {
        let need = self.min_grid();
        if n < need {
            return Err(Error::Undersampled { got: n, need });
        }
        let (points, weights): (Vec<(f64, f64)>, Vec<f64>) = match self.domain {
            Domain::DirichletInterval => {
                let (x, w) = gauss_legendre01(n);
                (x.into_iter().map(|x| (x, 0.0)).collect(), w)
            }
            Domain::Torus2D => {
                let h = 2.0 * PI / n as f64;
                let mut p = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        p.push((i as f64 * h, j as f64 * h));
                    }
                }
                (p, vec![h * h; n * n])
            }
        };
        let dim = self.dim();
        let synth = DMatrix::from_fn(points.len(), dim, |p, i| {
            self.eval_mode(i, points[p].0, points[p].1)
        });
        let mut analysis = synth.transpose();
        for (p, w) in weights.iter().enumerate() {
            analysis.column_mut(p).scale_mut(*w);
        }
        Ok(Grid {
            n,
            points,
            weights,
            synth,
            analysis,
        })
    }
}

/// A quadrature grid together with the synthesis (`coeffs → values`) and
/// analysis (`values → coeffs`) matrices of its basis.
#[derive(Clone, Debug)]
pub struct Grid {
    pub n: usize,
    pub points: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
    synth: DMatrix<f64>,
    analysis: DMatrix<f64>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn synthesize(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.synth * coeffs
    }

    pub fn analyze(&self, values: &DVector<f64>) -> DVector<f64> {
        &self.analysis * values
    }

    pub fn synthesis_matrix(&self) -> &DMatrix<f64> {
        &self.synth
    }

    pub fn analysis_matrix(&self) -> &DMatrix<f64> {
        &self.analysis
    }
}

/// Gauss-Legendre nodes and weights on `[0,1]`.
pub fn gauss_legendre01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wz = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wz;
        w[n - 1 - i] = 0.5 * wz;
    }
    (x, w)
}

/// Coefficients of a function in a truncated basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub basis: Arc<BasisSpec>,
    pub coeffs: DVector<f64>,
}

impl SpectralField {
    pub fn new(basis: Arc<BasisSpec>, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != basis.dim() {
            return Err(Error::BasisMismatch(format!(
                "{} coefficients for a basis of dimension {}",
                coeffs.len(),
                basis.dim()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("SpectralField::new"));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: Arc<BasisSpec>) -> Self {
        let n = basis.dim();
        Self {
            basis,
            coeffs: DVector::zeros(n),
        }
    }

    pub fn unit(basis: Arc<BasisSpec>, i: usize) -> Self {
        let mut f = Self::zeros(basis);
        f.coeffs[i] = 1.0;
        f
    }

    fn same_basis(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.basis, &other.basis) || *self.basis == *other.basis {
            Ok(())
        } else {
            Err(Error::BasisMismatch(
                "fields live in different bases".into(),
            ))
        }
    }
}

/// `Σ λ_k^{2s} u_k v_k`.
pub fn sobolev_inner(u: &SpectralField, v: &SpectralField, s: f64) -> Result<f64> {
    u.same_basis(v)?;
    let r = weighted_inner(&u.basis.eigenvalues, &u.coeffs, &v.coeffs, s);
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::NonFinite("sobolev_inner"))
    }
}

pub fn sobolev_norm(u: &SpectralField, s: f64) -> Result<f64> {
    sobolev_inner(u, u, s).map(f64::sqrt)
}

pub(crate) fn weighted_inner(lambda: &[f64], u: &DVector<f64>, v: &DVector<f64>, s: f64) -> f64 {
    lambda
        .iter()
        .zip(u.iter().zip(v.iter()))
        .map(|(l, (a, b))| l.powf(2.0 * s) * a * b)
        .sum()
}

/// `|u|_s` for a raw coefficient vector.
pub fn norm_s(lambda: &[f64], u: &DVector<f64>, s: f64) -> f64 {
    weighted_inner(lambda, u, u, s).sqrt()
}

/// `(Lu)_k = λ_k u_k`.
pub fn apply_l(u: &SpectralField) -> Result<SpectralField> {
    let c = DVector::from_iterator(
        u.coeffs.len(),
        u.coeffs
            .iter()
            .zip(&u.basis.eigenvalues)
            .map(|(c, l)| c * l),
    );
    SpectralField::new(u.basis.clone(), c)
}

pub fn to_grid(u: &SpectralField, n_points: usize) -> Result<DVector<f64>> {
    let g = u.basis.grid(n_points)?;
    Ok(g.synthesize(&u.coeffs))
}

/// Inverse of [`to_grid`] on the same grid size; values must have been
/// sampled on `basis.grid(n_points)`.
pub fn from_grid(
    basis: Arc<BasisSpec>,
    n_points: usize,
    values: &DVector<f64>,
) -> Result<SpectralField> {
    let g = basis.grid(n_points)?;
    if values.len() != g.len() {
        return invalid(format!(
            "{} grid values for a grid of {} points",
            values.len(),
            g.len()
        ));
    }
    SpectralField::new(basis, g.analyze(values))
}
