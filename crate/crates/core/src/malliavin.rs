//! Malliavin covariance matrices (forward and adjoint assembly), a Jacobi
//! eigensolver, cone-restricted minimization of the quadratic form, and
//! small-ball Monte Carlo.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::sde::{integrate, SpdeConfig, WienerPath};
use crate::variation::{AdjointScheme, FlowBundle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    Forward,
    Adjoint,
}

#[derive(Clone, Debug)]
pub struct MalliavinMatrix {
    pub entries: DMatrix<f64>,
    pub psi: Vec<DVector<f64>>,
    pub representation: Representation,
}

impl MalliavinMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }
}

fn check_orthonormal(psi: &[DVector<f64>], dim: usize) -> Result<()> {
    if psi.is_empty() {
        return invalid("empty ψ basis");
    }
    for (i, a) in psi.iter().enumerate() {
        if a.len() != dim {
            return invalid("ψ vector of the wrong length");
        }
        for (j, b) in psi.iter().enumerate().take(i + 1) {
            let want = if i == j { 1.0 } else { 0.0 };
            if (a.dot(b) - want).abs() > 1e-10 {
                return invalid("ψ basis is not orthonormal");
            }
        }
    }
    Ok(())
}

/// Standard basis vectors of `dim`.
pub fn identity_basis(dim: usize) -> Vec<DVector<f64>> {
    (0..dim)
        .map(|i| {
            let mut v = DVector::zeros(dim);
            v[i] = 1.0;
            v
        })
        .collect()
}

/// Full matrix `Σ_i Δt Σ_k (J_{i+1,N} S g_k)(J_{i+1,N} S g_k)ᵀ` by the
/// Lyapunov recursion `M ← A_i M A_iᵀ + Δt Σ_k (S g_k)(S g_k)ᵀ`.
pub fn forward_full(bundle: &FlowBundle) -> DMatrix<f64> {
    let n = bundle.dim();
    let dt = bundle.dt();
    let mut q = DMatrix::zeros(n, n);
    for sg in &bundle.sg {
        q.ger(dt, sg, sg, 1.0);
    }
    let mut m = DMatrix::zeros(n, n);
    for r in 0..bundle.steps() {
        let a = bundle.step_matrix(r);
        m = &a * m * a.transpose() + &q;
    }
    (&m + m.transpose()) * 0.5
}

pub fn assemble_forward(bundle: &FlowBundle, psi: &[DVector<f64>]) -> Result<MalliavinMatrix> {
    check_orthonormal(psi, bundle.dim())?;
    let full = forward_full(bundle);
    let p = DMatrix::from_columns(psi);
    let entries = p.transpose() * full * &p;
    Ok(MalliavinMatrix {
        entries: (&entries + entries.transpose()) * 0.5,
        psi: psi.to_vec(),
        representation: Representation::Forward,
    })
}

/// `M_ij = Σ_i Δt Σ_k ⟨S g_k, K_{i+1,N}ψ_i⟩⟨S g_k, K_{i+1,N}ψ_j⟩`, one
/// backward solve per `ψ`.
pub fn assemble_adjoint(bundle: &FlowBundle, psi: &[DVector<f64>]) -> Result<MalliavinMatrix> {
    check_orthonormal(psi, bundle.dim())?;
    let steps = bundle.steps();
    let d = bundle.sg.len();
    // coefficients c[j][(k, i)] = ⟨S g_k, K_{i+1,N} ψ_j⟩
    let coeffs: Vec<DMatrix<f64>> = psi
        .iter()
        .map(|p| {
            let path = bundle.backward_path(0, steps, p)?;
            Ok(DMatrix::from_fn(d, steps, |k, i| {
                bundle.sg[k].dot(&path[i + 1])
            }))
        })
        .collect::<Result<_>>()?;
    let n = psi.len();
    let dt = bundle.dt();
    let entries = DMatrix::from_fn(n, n, |a, b| dt * coeffs[a].dot(&coeffs[b]));
    Ok(MalliavinMatrix {
        entries,
        psi: psi.to_vec(),
        representation: Representation::Adjoint,
    })
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn spectrum(m: &DMatrix<f64>) -> Result<Spectrum> {
    let n = m.nrows();
    if n != m.ncols() {
        return invalid("spectrum needs a square matrix");
    }
    let scale = m.norm();
    if (m - m.transpose()).amax() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return invalid("spectrum needs a symmetric matrix");
    }
    if m.iter().any(|v| !v.is_finite()) {
        return invalid("matrix has non-finite entries");
    }
    let mut a = m.clone();
    let mut v = DMatrix::identity(n, n);
    let mut sweeps = 0;
    while sweeps < 100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(Spectrum {
        values,
        vectors,
        sweeps,
    })
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug)]
pub struct InfCone {
    /// Best value found by projected gradient: an upper bound of the infimum.
    pub value: f64,
    pub argmin: DVector<f64>,
    /// Lagrangian dual bound: a lower bound of the infimum.
    pub lower_bound: f64,
    /// Values reached by the individual restarts.
    pub restarts: Vec<f64>,
}

pub const INF_CONE_RESTARTS: usize = 16;

struct Cone {
    b: DMatrix<f64>,
    delta: f64,
    range_dir: DVector<f64>,
}

impl Cone {
    fn feasible(&self, y: &DVector<f64>) -> bool {
        y.norm() <= 1.0 + 1e-12 && (&self.b * y).norm() >= self.delta * (1.0 - 1e-12)
    }

    /// Nearest point of `{α ≥ δ, α² + ρ² ≤ 1}` in the `(|By|, |y - By|)`
    /// plane, mapped back along the two components.
    fn retract(&self, z: &DVector<f64>) -> Option<DVector<f64>> {
        let a = &self.b * z;
        let r = z - &a;
        let (alpha, rho) = (a.norm(), r.norm());
        let d = self.delta;
        let (na, nr) = if alpha >= d && alpha * alpha + rho * rho <= 1.0 {
            (alpha, rho)
        } else {
            let mut cands = vec![(d, (1.0 - d * d).max(0.0).sqrt())];
            let h = alpha.hypot(rho);
            if h > 0.0 && alpha / h >= d {
                cands.push((alpha / h, rho / h));
            }
            if alpha < d && d * d + rho * rho <= 1.0 {
                cands.push((d, rho));
            }
            cands
                .into_iter()
                .min_by(|p, q| {
                    ((p.0 - alpha).hypot(p.1 - rho)).total_cmp(&(q.0 - alpha).hypot(q.1 - rho))
                })
                .unwrap()
        };
        let ahat = if alpha > 1e-300 {
            a / alpha
        } else {
            self.range_dir.clone()
        };
        let mut y = ahat * na;
        if rho > 1e-300 {
            y += r * (nr / rho);
        }
        let n = y.norm();
        if n > 1.0 {
            y /= n;
        }
        self.feasible(&y).then_some(y)
    }
}

/// `inf {⟨Mφ,φ⟩ : ‖φ‖ ≤ 1, ‖Πφ‖ ≥ δ}` where `‖φ‖ = |Wφ|` with
/// `W = diag(weights)` and `Π` the orthogonal projection onto `span(pi)`.
pub fn inf_cone(
    m: &DMatrix<f64>,
    pi: &[DVector<f64>],
    delta: f64,
    weights: &[f64],
    seed: u64,
) -> Result<InfCone> {
    let n = m.nrows();
    if !(delta > 0.0 && delta <= 1.0) {
        return invalid("cone parameter δ must lie in (0, 1]");
    }
    if weights.len() != n || weights.iter().any(|w| !(*w > 0.0)) {
        return invalid("weights must be positive, one per coordinate");
    }
    check_orthonormal(pi, n)?;
    let w = DVector::from_column_slice(weights);
    let winv = w.map(|x| 1.0 / x);
    let mt = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * winv[i] * winv[j]);
    let mt = (&mt + mt.transpose()) * 0.5;
    let mut proj = DMatrix::zeros(n, n);
    for p in pi {
        proj.ger(1.0, p, p, 1.0);
    }
    let b = DMatrix::from_fn(n, n, |i, j| w[i] * proj[(i, j)] * winv[j]);
    let range_dir = {
        let c = b
            .column_iter()
            .max_by(|x, y| x.norm().total_cmp(&y.norm()))
            .unwrap()
            .into_owned();
        let cn = c.norm();
        c / cn
    };
    let cone = Cone {
        b,
        delta,
        range_dir,
    };
    let f = |y: &DVector<f64>| y.dot(&(&mt * y));
    let mnorm = mt.norm().max(f64::MIN_POSITIVE);

    let eig = SymmetricEigen::new(mt.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut starts: Vec<DVector<f64>> = order
        .iter()
        .take(INF_CONE_RESTARTS / 2)
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    for p in pi.iter().take(INF_CONE_RESTARTS / 4) {
        starts.push(p.component_mul(&w));
    }
    let (lower_bound, beta) = dual_bound(&mt, &cone.b, delta);
    let mut candidates = dual_candidates(&mt, &cone, beta);
    candidates.append(&mut starts);
    let mut starts = candidates;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while starts.len() < INF_CONE_RESTARTS {
        starts.push(DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)));
    }

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut restarts = Vec::new();
    for s in starts {
        let Some(mut y) = cone
            .retract(&s)
            .or_else(|| cone.retract(&(&s + &cone.range_dir)))
        else {
            continue;
        };
        let mut fy = f(&y);
        let mut eta = 0.5 / mnorm;
        for _ in 0..5000 {
            let grad = &mt * &y * 2.0;
            let mut moved = false;
            while eta > 1e-12 / mnorm {
                if let Some(c) = cone.retract(&(&y - &grad * eta)) {
                    let fc = f(&c);
                    if fc < fy {
                        let gain = fy - fc;
                        y = c;
                        fy = fc;
                        eta *= 2.0;
                        moved = gain > 1e-13 * (fy.abs() + 1e-300 * mnorm).max(1e-16 * mnorm);
                        break;
                    }
                }
                eta *= 0.5;
            }
            if !moved {
                break;
            }
        }
        restarts.push(fy);
        if best.as_ref().is_none_or(|(v, _)| fy < *v) {
            best = Some((fy, y));
        }
        // the dual bound certifies the minimum; no restart can go lower
        if fy <= lower_bound + 1e-9 * lower_bound.abs() + 1e-15 * mnorm {
            break;
        }
    }
    let Some((value, y)) = best else {
        return invalid("no feasible start found for the cone");
    };
    let argmin = y.component_mul(&winv);
    Ok(InfCone {
        value,
        argmin,
        lower_bound,
        restarts,
    })
}

/// `max_{β ≥ 0} βδ² + min(0, λ_min(M - β BᵀB))` by golden section (the
/// function is concave in β).
fn dual_bound(mt: &DMatrix<f64>, b: &DMatrix<f64>, delta: f64) -> (f64, f64) {
    let c = b.transpose() * b;
    let cmax = SymmetricEigen::new(c.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    let h = |beta: f64| beta * delta * delta + min_eigenvalue(&(mt - &c * beta)).min(0.0);
    // h ≤ |M| - β(cmax - δ²) and h(0) = 0 bound the maximizer; when
    // cmax = δ² (δ = 1 with an orthogonal Π) h increases to its supremum
    // and the bound is only approached
    let excess = (cmax - delta * delta).max(1e-6);
    let (mut lo, mut hi) = (0.0, 1.01 * mt.norm() / excess + 1e-300);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
    let (mut f1, mut f2) = (h(x1), h(x2));
    for _ in 0..80 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = h(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = h(x1);
        }
    }
    let (beta, best) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    let at_zero = h(0.0);
    if at_zero >= best {
        (at_zero, 0.0)
    } else {
        (best, beta)
    }
}

/// Unit eigenvector of the smallest eigenvalue of `M - βC`.
fn bottom_vector(mt: &DMatrix<f64>, c: &DMatrix<f64>, beta: f64) -> DVector<f64> {
    let e = SymmetricEigen::new(mt - c * beta);
    let i = (0..e.eigenvalues.len())
        .min_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]))
        .expect("nonempty matrix");
    e.eigenvectors.column(i).into_owned()
}

/// Primal points suggested by the dual maximizer `β*`: the bottom
/// eigenvector at `β*`, and the unit combination of the bottom eigenvectors
/// just below and above `β*` that puts `|By|` exactly on `δ`.
fn dual_candidates(mt: &DMatrix<f64>, cone: &Cone, beta: f64) -> Vec<DVector<f64>> {
    let c = cone.b.transpose() * &cone.b;
    let mut out = vec![bottom_vector(mt, &c, beta)];
    if beta <= 0.0 {
        return out;
    }
    let lo = bottom_vector(mt, &c, beta * (1.0 - 1e-6));
    let hi = bottom_vector(mt, &c, beta * (1.0 + 1e-6));
    // eigenvectors carry an arbitrary sign, so try both pairings
    for hi in [hi.clone(), -hi] {
        let at = |theta: f64| {
            let y = &lo * theta.cos() + &hi * theta.sin();
            let y = &y / y.norm().max(f64::MIN_POSITIVE);
            ((&cone.b * &y).norm() - cone.delta, y)
        };
        let (mut a, mut z) = (0.0, std::f64::consts::FRAC_PI_2);
        let ea = at(a).0;
        if ea * at(z).0 > 0.0 {
            continue;
        }
        for _ in 0..60 {
            let m = 0.5 * (a + z);
            if at(m).0 * ea > 0.0 {
                a = m;
            } else {
                z = m;
            }
        }
        out.push(at(z).1);
    }
    out
}

/// Wilson score interval for `hits` successes out of `n` (z = 1.96).
pub fn wilson(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054;
    let nf = n as f64;
    let p = hits as f64 / nf;
    let den = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / den;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / den;
    let lo = if hits == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if hits == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallBallRow {
    pub eps: f64,
    pub hits: usize,
    pub n: usize,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallBallTable {
    pub rows: Vec<SmallBallRow>,
    /// Least-squares slope of `log P̂` against `log ε` over resolved rows.
    pub slope: Option<f64>,
    pub resolved: usize,
    pub diverged: usize,
    pub monotone: bool,
}

/// Minimum number of hits and of misses for a row to count as resolved.
pub const RESOLVED_MIN: usize = 5;

pub fn smallball_table(
    values: &[f64],
    eps_grid: &[f64],
    diverged: usize,
) -> Result<SmallBallTable> {
    if values.is_empty() {
        return invalid("small-ball table needs at least one replica");
    }
    if eps_grid.iter().any(|e| !(*e > 0.0)) || eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("ε-grid must be positive and strictly decreasing");
    }
    let n = values.len();
    let rows: Vec<SmallBallRow> = eps_grid
        .iter()
        .map(|&eps| {
            let hits = values.iter().filter(|&&v| v < eps).count();
            let (lo, hi) = wilson(hits, n);
            SmallBallRow {
                eps,
                hits,
                n,
                p: hits as f64 / n as f64,
                lo,
                hi,
            }
        })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].p <= w[0].p);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.hits >= RESOLVED_MIN && n - r.hits >= RESOLVED_MIN)
        .map(|r| (r.eps.ln(), r.p.ln()))
        .collect();
    let slope = (pts.len() >= 2).then(|| {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    Ok(SmallBallTable {
        rows,
        slope,
        resolved: pts.len(),
        diverged,
        monotone,
    })
}

/// Inputs of one small-ball experiment.
#[derive(Clone, Debug)]
pub struct SmallBallSetup {
    pub cfg: SpdeConfig,
    pub u0: DVector<f64>,
    pub t_final: f64,
    pub steps: usize,
    /// H-orthonormal basis of `S`.
    pub s: Vec<DVector<f64>>,
    pub delta: f64,
    pub eps_grid: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SmallBallOutcome {
    pub table: SmallBallTable,
    /// `(seed, inf_cone value, dual lower bound)` per finished replica.
    pub samples: Vec<(u64, f64, f64)>,
}

/// One replica: `Some((inf_cone value, dual lower bound))`, or `None` when
/// the trajectory diverged.
pub fn smallball_replica(setup: &SmallBallSetup, seed: u64) -> Result<Option<(f64, f64)>> {
    let weights: Vec<f64> = setup
        .cfg
        .basis
        .eigenvalues
        .iter()
        .map(|l| l.sqrt())
        .collect();
    let w = WienerPath::sample(setup.cfg.d(), setup.t_final, setup.steps, seed)?;
    let tr = integrate(&setup.cfg, &setup.u0, &w)?;
    if tr.diverged.is_some() {
        return Ok(None);
    }
    let b = FlowBundle::new(&setup.cfg, &tr, AdjointScheme::Discrete)?;
    let m = forward_full(&b);
    let ic = inf_cone(&m, &setup.s, setup.delta, &weights, seed)?;
    Ok(Some((ic.value, ic.lower_bound)))
}

/// Runs one replica per seed; diverged runs are excluded and counted.
pub fn smallball(setup: &SmallBallSetup, seeds: &[u64]) -> Result<SmallBallOutcome> {
    if seeds.is_empty() {
        return invalid("zero replicas");
    }
    let mut samples = Vec::new();
    let mut diverged = 0;
    for &seed in seeds {
        match smallball_replica(setup, seed)? {
            Some((v, lb)) => samples.push((seed, v, lb)),
            None => diverged += 1,
        }
    }
    let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
    if values.is_empty() {
        return invalid("every replica diverged");
    }
    let table = smallball_table(&values, &setup.eps_grid, diverged)?;
    Ok(SmallBallOutcome { table, samples })
}

/// `E[min(det^{-p}, cap)]` and how many samples hit the cap.
pub fn truncated_inverse_moment(dets: &[f64], p: f64, cap: f64) -> (f64, usize) {
    let mut exceed = 0;
    let mut sum = 0.0;
    for &d in dets {
        let v = if d > 0.0 { d.powf(-p) } else { f64::INFINITY };
        if v >= cap {
            exceed += 1;
            sum += cap;
        } else {
            sum += v;
        }
    }
    (sum / dets.len().max(1) as f64, exceed)
}
