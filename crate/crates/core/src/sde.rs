//! Wiener paths, time stepping of the truncated SPDE, the shifted process
//! `X = u - GW`, and windowed path norms.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::poly::PolyVectorField;
use crate::spectral::{norm_s, BasisSpec};
use std::sync::Arc;

pub const BLOWUP_THRESHOLD: f64 = 1e8;

/// `d` Brownian motions on a uniform grid of `[0, T]`. The increments are
/// the stored primitive; values are their cumulative sums.
#[derive(Clone, Debug)]
pub struct WienerPath {
    pub t_final: f64,
    pub seed: u64,
    /// `d × steps`
    increments: DMatrix<f64>,
    /// `d × (steps + 1)`, first column zero.
    values: DMatrix<f64>,
}

impl WienerPath {
    pub fn sample(d: usize, t_final: f64, steps: usize, seed: u64) -> Result<Self> {
        if steps == 0 || d == 0 {
            return invalid("Wiener path needs d >= 1 and steps >= 1");
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return invalid("horizon T must be positive");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sq = (t_final / steps as f64).sqrt();
        let mut inc = DMatrix::zeros(d, steps);
        for i in 0..steps {
            for k in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                inc[(k, i)] = sq * z;
            }
        }
        Self::from_increments(t_final, inc, seed)
    }

    pub fn from_increments(t_final: f64, increments: DMatrix<f64>, seed: u64) -> Result<Self> {
        if increments.ncols() == 0 || increments.nrows() == 0 {
            return invalid("empty increments");
        }
        let (d, steps) = increments.shape();
        let mut values = DMatrix::zeros(d, steps + 1);
        for i in 0..steps {
            for k in 0..d {
                values[(k, i + 1)] = values[(k, i)] + increments[(k, i)];
            }
        }
        Ok(Self {
            t_final,
            seed,
            increments,
            values,
        })
    }

    pub fn d(&self) -> usize {
        self.increments.nrows()
    }

    pub fn steps(&self) -> usize {
        self.increments.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps() as f64
    }

    pub fn increments(&self) -> &DMatrix<f64> {
        &self.increments
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.values[(k, i)]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t_final * i as f64 / self.steps() as f64
    }

    /// The same path observed on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return invalid(format!("cannot coarsen {} steps by {factor}", self.steps()));
        }
        let steps = self.steps() / factor;
        let inc = DMatrix::from_fn(self.d(), steps, |k, i| {
            self.values[(k, (i + 1) * factor)] - self.values[(k, i * factor)]
        });
        Self::from_increments(self.t_final, inc, self.seed)
    }

    /// `W + eps * ∫h`, with `h` given per step (`d × steps`, constant on
    /// each step).
    pub fn shifted(&self, h: &DMatrix<f64>, eps: f64) -> Result<Self> {
        if h.shape() != self.increments.shape() {
            return invalid("shift has the wrong shape");
        }
        Self::from_increments(
            self.t_final,
            &self.increments + h * (eps * self.dt()),
            self.seed,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    ExponentialEuler,
    SemiImplicit,
}

#[derive(Clone, Debug)]
pub enum Forcing {
    Zero,
    Constant(DVector<f64>),
    /// One value per grid node.
    Sampled(Vec<DVector<f64>>),
}

/// Truncated `du = (-Lu + N(u) + f) dt + Σ g_k dW_k`. `nonlinear` excludes
/// `-L`, which is taken from the basis eigenvalues.
#[derive(Clone, Debug)]
pub struct SpdeConfig {
    pub basis: Arc<BasisSpec>,
    pub nonlinear: PolyVectorField,
    pub forcing: Forcing,
    pub g: Vec<DVector<f64>>,
    pub scheme: Scheme,
}

/// Per-mode diagonal factors of one step `u+ = E u + Δt P (N(u) + f) + S G ΔW`.
#[derive(Clone, Debug)]
pub struct StepWeights {
    pub dt: f64,
    pub e: DVector<f64>,
    pub p: DVector<f64>,
    pub s: DVector<f64>,
}

impl StepWeights {
    pub fn new(eigenvalues: &[f64], dt: f64, scheme: Scheme) -> Self {
        let n = eigenvalues.len();
        let (mut e, mut p, mut s) = (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n));
        for (k, &l) in eigenvalues.iter().enumerate() {
            let z = l * dt;
            match scheme {
                Scheme::ExponentialEuler => {
                    e[k] = (-z).exp();
                    p[k] = if z < 1e-8 {
                        1.0 - z / 2.0
                    } else {
                        -(-z).exp_m1() / z
                    };
                    s[k] = if z < 1e-8 {
                        1.0 - z / 2.0
                    } else {
                        (-(-2.0 * z).exp_m1() / (2.0 * z)).sqrt()
                    };
                }
                Scheme::SemiImplicit => {
                    let r = 1.0 / (1.0 + z);
                    (e[k], p[k], s[k]) = (r, r, r);
                }
            }
        }
        Self { dt, e, p, s }
    }
}

impl SpdeConfig {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn d(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if self.nonlinear.dim() != dim {
            return Err(Error::BasisMismatch(
                "nonlinearity and basis differ in dimension".into(),
            ));
        }
        if self.g.iter().any(|g| g.len() != dim) {
            return Err(Error::BasisMismatch(
                "forcing direction outside the truncation".into(),
            ));
        }
        match &self.forcing {
            Forcing::Constant(f) if f.len() != dim => Err(Error::BasisMismatch("forcing f".into())),
            Forcing::Sampled(v) if v.iter().any(|f| f.len() != dim) => {
                Err(Error::BasisMismatch("forcing f".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn forcing_at(&self, i: usize) -> Option<&DVector<f64>> {
        match &self.forcing {
            Forcing::Zero => None,
            Forcing::Constant(f) => Some(f),
            Forcing::Sampled(v) => v.get(i),
        }
    }

    /// Columns `g_k`.
    pub fn g_matrix(&self) -> DMatrix<f64> {
        if self.g.is_empty() {
            return DMatrix::zeros(self.dim(), 0);
        }
        DMatrix::from_columns(&self.g)
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    /// Index of the first node whose V-norm exceeded the blow-up threshold.
    pub diverged: Option<usize>,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        self.dt * i as f64
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("nonempty trajectory")
    }
}

pub fn integrate(cfg: &SpdeConfig, u0: &DVector<f64>, w: &WienerPath) -> Result<Trajectory> {
    cfg.validate()?;
    if u0.len() != cfg.dim() {
        return Err(Error::BasisMismatch("initial condition".into()));
    }
    if w.d() != cfg.d() {
        return invalid(format!(
            "path has {} drivers, forcing has {}",
            w.d(),
            cfg.d()
        ));
    }
    if let Forcing::Sampled(v) = &cfg.forcing {
        if v.len() < w.steps() {
            return invalid("sampled forcing shorter than the grid");
        }
    }
    let dt = w.dt();
    let sw = StepWeights::new(&cfg.basis.eigenvalues, dt, cfg.scheme);
    let g = cfg.g_matrix();
    let lambda = &cfg.basis.eigenvalues;
    let mut states = Vec::with_capacity(w.steps() + 1);
    states.push(u0.clone());
    let mut u = u0.clone();
    let mut diverged = None;
    for i in 0..w.steps() {
        let mut drift = cfg.nonlinear.eval_unchecked(&u);
        if let Some(f) = cfg.forcing_at(i) {
            drift += f;
        }
        let noise = &g * w.increments().column(i);
        let next =
            sw.e.component_mul(&u) + dt * sw.p.component_mul(&drift) + sw.s.component_mul(&noise);
        let vn = norm_s(lambda, &next, 0.5);
        if !(vn <= BLOWUP_THRESHOLD) {
            diverged = Some(i + 1);
            break;
        }
        states.push(next.clone());
        u = next;
    }
    Ok(Trajectory {
        dt,
        states,
        diverged,
        scheme: cfg.scheme,
        seed: w.seed,
    })
}

/// `X(t_i) = u(t_i) - Σ_k g_k W_k(t_i)`.
pub fn shifted_x(
    traj: &Trajectory,
    g: &[DVector<f64>],
    w: &WienerPath,
) -> Result<Vec<DVector<f64>>> {
    if traj.states.len() > w.steps() + 1 || g.len() != w.d() {
        return invalid("trajectory and path do not match");
    }
    Ok(traj
        .states
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut x = u.clone();
            for (k, gk) in g.iter().enumerate() {
                x.axpy(-w.value(k, i), gk, 1.0);
            }
            x
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathNorms {
    pub sup: f64,
    pub lip: f64,
    pub hol: f64,
    pub norm_lip: f64,
    pub norm_hol: f64,
}

/// Lag below which all pairs are visited in the Hölder estimate; beyond
/// it only pairs on the stride-`HOLDER_STRIDE` subgrid.
pub const HOLDER_STRIDE: usize = 16;

/// Discrete ρ-Hölder quotient. Exact over all grid pairs for up to 2048
/// samples; otherwise all lags `<= HOLDER_STRIDE` plus every pair of the
/// stride subgrid, which is a lower bound.
pub fn holder(f: &[f64], dt: f64, rho: f64) -> f64 {
    let n = f.len();
    let mut best = 0.0f64;
    let mut visit = |i: usize, j: usize| {
        let q = (f[j] - f[i]).abs() / ((j - i) as f64 * dt).powf(rho);
        if q > best {
            best = q;
        }
    };
    if n <= 2048 {
        for i in 0..n {
            for j in i + 1..n {
                visit(i, j);
            }
        }
        return best;
    }
    for i in 0..n {
        for j in i + 1..(i + HOLDER_STRIDE + 1).min(n) {
            visit(i, j);
        }
    }
    let idx: Vec<usize> = (0..n).step_by(HOLDER_STRIDE).collect();
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            visit(idx[a], idx[b]);
        }
    }
    best
}

/// Lipschitz constant of the piecewise linear interpolant.
pub fn lipschitz(f: &[f64], dt: f64) -> f64 {
    f.windows(2)
        .map(|w| (w[1] - w[0]).abs() / dt)
        .fold(0.0, f64::max)
}

/// Norms of a scalar path restricted to the nodes `window.0..=window.1`.
pub fn path_norms(f: &[f64], dt: f64, rho: f64, window: (usize, usize)) -> Result<PathNorms> {
    let (a, b) = window;
    if b >= f.len() || a >= b {
        return invalid("path norm window needs at least two samples");
    }
    let w = &f[a..=b];
    let sup = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lip = lipschitz(w, dt);
    let hol = holder(w, dt, rho);
    Ok(PathNorms {
        sup,
        lip,
        hol,
        norm_lip: lip.max(sup),
        norm_hol: hol.max(sup),
    })
}

/// Norms of a field-valued path in the norm `|·|_s`, via increments.
pub fn field_path_norms(
    states: &[DVector<f64>],
    lambda: &[f64],
    s: f64,
    dt: f64,
    window: (usize, usize),
) -> Result<PathNorms> {
    let (a, b) = window;
    if b >= states.len() || a >= b {
        return invalid("path norm window needs at least two samples");
    }
    let w = &states[a..=b];
    let sup = w.iter().map(|u| norm_s(lambda, u, s)).fold(0.0, f64::max);
    let lip = w
        .windows(2)
        .map(|p| norm_s(lambda, &(&p[1] - &p[0]), s) / dt)
        .fold(0.0, f64::max);
    Ok(PathNorms {
        sup,
        lip,
        hol: lip * (dt * (b - a) as f64),
        norm_lip: lip.max(sup),
        norm_hol: f64::NAN,
    })
}
