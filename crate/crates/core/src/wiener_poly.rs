//! Polynomials in `d` Brownian motions with (possibly non-adapted) process
//! coefficients, their quadratic variation, the degree-reduction recursion,
//! the Itô split for constant coefficients, the pathwise event calculus of
//! the small-`Z` inclusions, and the two deterministic interpolation lemmas.
//!
//! Driver indices are 0-based. Coefficients are stored once per sorted
//! index tuple, so `A_{i1..iα}` is symmetric by construction and a sorted
//! tuple `t` contributes `mult(t) · A_t · W^t` to `Z`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::brackets::multisets;
use crate::error::{invalid, Error, Result};
use crate::lp::minimax_fit;
use crate::sde::{holder, lipschitz, WienerPath};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Coefficient {
    Constant(f64),
    /// One value per grid node of the driving path.
    Sampled(Vec<f64>),
}

impl Coefficient {
    pub fn at(&self, i: usize) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Sampled(v) => v[i],
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Coefficient::Constant(c) => c.abs(),
            Coefficient::Sampled(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn lip(&self, dt: f64) -> f64 {
        match self {
            Coefficient::Constant(_) => 0.0,
            Coefficient::Sampled(v) => lipschitz(v, dt),
        }
    }

    fn scaled(&self, s: f64) -> Self {
        match self {
            Coefficient::Constant(c) => Coefficient::Constant(s * c),
            Coefficient::Sampled(v) => Coefficient::Sampled(v.iter().map(|x| s * x).collect()),
        }
    }
}

/// Number of orderings of a sorted tuple.
pub fn tuple_multiplicity(t: &[usize]) -> f64 {
    let mut m = 1.0;
    let mut run = 1.0;
    for (k, w) in t.windows(2).enumerate() {
        if w[0] == w[1] {
            run += 1.0;
            m *= (k + 2) as f64 / run;
        } else {
            run = 1.0;
            m *= (k + 2) as f64;
        }
    }
    m
}

fn count(t: &[usize], r: usize) -> usize {
    t.iter().filter(|&&x| x == r).count()
}

/// `t` with one copy of `r` removed.
fn without(t: &[usize], r: usize) -> Vec<usize> {
    let mut out = t.to_vec();
    if let Some(p) = out.iter().position(|&x| x == r) {
        out.remove(p);
    }
    out
}

/// All sorted index tuples of length `0..=n` over `d` drivers.
pub fn all_tuples(n: usize, d: usize) -> Vec<Vec<usize>> {
    (0..=n).flat_map(|a| multisets(d, a)).collect()
}

fn monomial(w: &WienerPath, t: &[usize], i: usize) -> f64 {
    t.iter().map(|&k| w.value(k, i)).product()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WienerPolynomial {
    n: usize,
    d: usize,
    coeffs: BTreeMap<Vec<usize>, Coefficient>,
    /// Shared length of every sampled coefficient.
    samples: Option<usize>,
}

impl WienerPolynomial {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        if d == 0 {
            return invalid("Wiener polynomial needs d >= 1");
        }
        Ok(Self {
            n,
            d,
            coeffs: BTreeMap::new(),
            samples: None,
        })
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn samples(&self) -> Option<usize> {
        self.samples
    }

    /// Sets the symmetric coefficient `A_{idx}`; the order of `idx` is
    /// irrelevant.
    pub fn set(&mut self, idx: &[usize], c: Coefficient) -> Result<()> {
        if idx.len() > self.n {
            return Err(Error::DegreeTooHigh {
                got: idx.len(),
                max: self.n,
            });
        }
        if idx.iter().any(|&k| k >= self.d) {
            return invalid(format!("driver index out of range 0..{}", self.d));
        }
        if let Coefficient::Sampled(v) = &c {
            match self.samples {
                Some(s) if s != v.len() => {
                    return invalid("sampled coefficients must share one grid")
                }
                _ => self.samples = Some(v.len()),
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("sampled coefficient"));
            }
        }
        let mut key = idx.to_vec();
        key.sort_unstable();
        self.coeffs.insert(key, c);
        Ok(())
    }

    /// Adds `c · W_{idx}` to `Z`, i.e. `A_{idx} += c / mult(idx)`.
    pub fn add_monomial(&mut self, idx: &[usize], c: f64) -> Result<()> {
        let mut key = idx.to_vec();
        key.sort_unstable();
        let a = c / tuple_multiplicity(&key);
        let next = match self.coeffs.get(&key) {
            None => Coefficient::Constant(a),
            Some(Coefficient::Constant(b)) => Coefficient::Constant(a + b),
            Some(Coefficient::Sampled(v)) => {
                Coefficient::Sampled(v.iter().map(|x| x + a).collect())
            }
        };
        self.set(&key, next)
    }

    pub fn get(&self, idx: &[usize]) -> Option<&Coefficient> {
        let mut key = idx.to_vec();
        key.sort_unstable();
        self.coeffs.get(&key)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<usize>, &Coefficient)> {
        self.coeffs.iter()
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs
            .values()
            .all(|c| matches!(c, Coefficient::Constant(_)))
    }

    /// `A_t(i)` for every stored tuple.
    pub fn snapshot(&self, i: usize) -> BTreeMap<Vec<usize>, f64> {
        self.coeffs
            .iter()
            .map(|(t, c)| (t.clone(), c.at(i)))
            .collect()
    }

    fn check_path(&self, w: &WienerPath) -> Result<()> {
        if w.d() != self.d {
            return invalid(format!(
                "polynomial has d = {}, path has d = {}",
                self.d,
                w.d()
            ));
        }
        if let Some(s) = self.samples {
            if s != w.steps() + 1 {
                return invalid(format!(
                    "coefficient grid has {s} nodes, path has {}",
                    w.steps() + 1
                ));
            }
        }
        Ok(())
    }

    /// Max over `α >= 1` of `sup |A^{(α)}|` and of `Lip(A^{(α)})`.
    pub fn positive_degree_bounds(&self, dt: f64) -> (f64, f64) {
        self.coeffs
            .iter()
            .filter(|(t, _)| !t.is_empty())
            .fold((0.0f64, 0.0f64), |(s, l), (_, c)| {
                (s.max(c.sup()), l.max(c.lip(dt)))
            })
    }
}

/// `Z` at every node of `w`.
pub fn evaluate_z(z: &WienerPolynomial, w: &WienerPath) -> Result<Vec<f64>> {
    z.check_path(w)?;
    let nodes = w.steps() + 1;
    let mut out = vec![0.0; nodes];
    for (t, c) in &z.coeffs {
        let m = tuple_multiplicity(t);
        for (i, o) in out.iter_mut().enumerate() {
            *o += m * c.at(i) * monomial(w, t, i);
        }
    }
    Ok(out)
}

/// `Σ_j Δ_j z1 Δ_j z2` over the partition made of every `stride`-th node.
pub fn discrete_qv(z1: &[f64], z2: &[f64], stride: usize) -> Result<f64> {
    if z1.len() != z2.len() || z1.len() < 2 {
        return invalid("quadratic variation needs two samples of equal length");
    }
    if stride == 0 || !(z1.len() - 1).is_multiple_of(stride) {
        return invalid(format!(
            "partition with stride {stride} is not nested in a grid of {} steps",
            z1.len() - 1
        ));
    }
    let mut s = 0.0;
    let mut i = 0;
    while i + stride < z1.len() {
        s += (z1[i + stride] - z1[i]) * (z2[i + stride] - z2[i]);
        i += stride;
    }
    Ok(s)
}

pub(crate) fn trapezoid(f: &[f64], dt: f64) -> f64 {
    if f.len() < 2 {
        return 0.0;
    }
    dt * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[f.len() - 1]))
}

/// Closed-form `⟨Z1, Z2⟩` over the nodes `window.0..=window.1`: the
/// integral of `Σ A B Σ_p Σ_q δ_{i_p k_q} W^i/W_{i_p} · W^k/W_{k_q}`. The
/// pair sum is grouped by the matched driver `r`, where each side reduces
/// to `Σ_t mult(t) A_t count_t(r) W^{t - r}`.
pub fn qv_formula(
    z1: &WienerPolynomial,
    z2: &WienerPolynomial,
    w: &WienerPath,
    window: (usize, usize),
) -> Result<f64> {
    z1.check_path(w)?;
    z2.check_path(w)?;
    let (a, b) = window;
    if b > w.steps() || a > b {
        return invalid("quadrature window outside the grid");
    }
    let side = |z: &WienerPolynomial, r: usize, i: usize| -> f64 {
        z.coeffs
            .iter()
            .filter(|(t, _)| t.contains(&r))
            .map(|(t, c)| {
                tuple_multiplicity(t)
                    * c.at(i)
                    * count(t, r) as f64
                    * monomial(w, &without(t, r), i)
            })
            .sum()
    };
    let integrand: Vec<f64> = (a..=b)
        .map(|i| (0..z1.d).map(|r| side(z1, r, i) * side(z2, r, i)).sum())
        .collect();
    Ok(trapezoid(&integrand, w.dt()))
}

/// `Z_r`: the degree `n-1` polynomial with `A'_j = α A_{j ∪ r}` for every
/// `j` of length `α - 1`.
pub fn reduce_zr(z: &WienerPolynomial, r: usize) -> Result<WienerPolynomial> {
    if z.n == 0 {
        return invalid("degree-0 polynomial has no reduction");
    }
    if r >= z.d {
        return invalid(format!("driver {r} out of range"));
    }
    let mut out = WienerPolynomial::new(z.n - 1, z.d)?;
    for (t, c) in &z.coeffs {
        if t.contains(&r) {
            out.set(&without(t, r), c.scaled(t.len() as f64))?;
        }
    }
    out.samples = z.samples;
    Ok(out)
}

/// `Σ_r ∫ Z_r²` over the window, through `reduce_zr`.
pub fn reduced_energy(z: &WienerPolynomial, w: &WienerPath, window: (usize, usize)) -> Result<f64> {
    let (a, b) = window;
    if b > w.steps() || a > b {
        return invalid("quadrature window outside the grid");
    }
    let mut total = 0.0;
    for r in 0..z.d {
        let zr = evaluate_z(&reduce_zr(z, r)?, w)?;
        let sq: Vec<f64> = zr[a..=b].iter().map(|v| v * v).collect();
        total += trapezoid(&sq, w.dt());
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryLevel {
    /// Nondecreasing driver sequence `r_1 <= .. <= r_k`.
    pub path: Vec<usize>,
    pub sup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub z_sup: f64,
    pub levels: Vec<RecoveryLevel>,
    pub coefficient_sup: f64,
    /// `sup |Z| <= tol`.
    pub forced_zero: bool,
    /// Every reduced polynomial and every coefficient is `<= tol`.
    pub recovered_zero: bool,
    pub pass: bool,
}

/// Applies `reduce_zr` down to degree 0 along every nondecreasing driver
/// sequence (mixed reductions commute) and records the sup norms.
pub fn coefficient_recovery_check(
    z: &WienerPolynomial,
    w: &WienerPath,
    tol: f64,
) -> Result<RecoveryReport> {
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let z_sup = sup(&evaluate_z(z, w)?);
    let mut levels = Vec::new();
    let mut frontier: Vec<(Vec<usize>, WienerPolynomial)> = vec![(vec![], z.clone())];
    for _ in 0..z.n {
        let mut next = Vec::new();
        for (path, p) in &frontier {
            let from = path.last().copied().unwrap_or(0);
            for r in from..z.d {
                let q = reduce_zr(p, r)?;
                let mut qp = path.clone();
                qp.push(r);
                levels.push(RecoveryLevel {
                    path: qp.clone(),
                    sup: sup(&evaluate_z(&q, w)?),
                });
                next.push((qp, q));
            }
        }
        frontier = next;
    }
    let coefficient_sup = z.coeffs.values().fold(0.0f64, |m, c| m.max(c.sup()));
    let forced_zero = z_sup <= tol;
    let recovered_zero = coefficient_sup <= tol && levels.iter().all(|l| l.sup <= tol);
    Ok(RecoveryReport {
        z_sup,
        levels,
        coefficient_sup,
        forced_zero,
        recovered_zero,
        pass: !forced_zero || recovered_zero,
    })
}

/// Semimartingale split `Z_λ = V + M` on the nodes `start..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoDecomposition {
    pub start: usize,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    pub m: Vec<f64>,
}

/// `V(t) = Z_λ(t_1) + ½ ∫_{t_1}^t Σ_{k1≠k2} δ_{i_k1 i_k2} λ_i W^i/(W_{i_k1} W_{i_k2}) ds`
/// by the trapezoid rule, and `M = Z_λ - V`.
pub fn ito_decompose(
    z: &WienerPolynomial,
    w: &WienerPath,
    start: usize,
) -> Result<ItoDecomposition> {
    if !z.is_constant() {
        return invalid("Itô split needs constant coefficients");
    }
    if start > w.steps() {
        return invalid("start node outside the grid");
    }
    let full = evaluate_z(z, w)?;
    let zs = full[start..].to_vec();
    // Σ_{k1≠k2} δ over ordered tuples = mult(t) Σ_r c_r (c_r - 1) W^{t - 2r}
    let drift = |i: usize| -> f64 {
        z.coeffs
            .iter()
            .map(|(t, c)| {
                let m = tuple_multiplicity(t) * c.at(i);
                (0..z.d)
                    .map(|r| {
                        let k = count(t, r);
                        if k < 2 {
                            0.0
                        } else {
                            (k * (k - 1)) as f64 * monomial(w, &without(&without(t, r), r), i)
                        }
                    })
                    .sum::<f64>()
                    * m
            })
            .sum()
    };
    let dt = w.dt();
    let mut v = Vec::with_capacity(zs.len());
    v.push(zs[0]);
    let mut prev = drift(start);
    for i in start + 1..=w.steps() {
        let cur = drift(i);
        let last = *v.last().expect("nonempty");
        v.push(last + 0.25 * dt * (prev + cur));
        prev = cur;
    }
    let m = zs.iter().zip(&v).map(|(a, b)| a - b).collect();
    Ok(ItoDecomposition { start, z: zs, v, m })
}

/// Parameters of one event evaluation. `n` is the polynomial degree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    pub eps: f64,
    pub n: usize,
    /// Initial value of `g = g0 + ∫Z` for the integral inclusion.
    pub g0: f64,
    /// Evaluate `B^c ∪ F` even when the left-hand side is empty.
    pub tail: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InclusionStatus {
    /// Left-hand side empty on this path.
    Vacuous,
    /// Left-hand side holds and so does `B^c`.
    ViaBc,
    /// Left-hand side and `B` hold, and some `D*(I_k)` holds.
    ViaF,
    /// Left-hand side and `B` hold but `F` fails.
    Violated,
    /// `F` is needed but the grid cannot resolve the interval partition.
    Unresolved,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// `ln` of the target interval length `L`; lengths lie in `(L/2, L]`.
    pub ln_length: f64,
    /// Number of intervals `[T/L] + 1`, saturating.
    pub intervals: u64,
    pub resolvable: bool,
    /// Smallest power-of-two step count that resolves it (`u64::MAX` when
    /// out of reach).
    pub required_steps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FEvaluation {
    pub holds: bool,
    /// Interval index of the first `D*` hit.
    pub interval: Option<u64>,
    /// Hits found by the left-endpoint snapshot alone.
    pub snapshot_witness: bool,
    pub lp_solves: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionRecord {
    /// `D` (or `D̄`) of the left-hand side.
    pub small: bool,
    pub e_complement: bool,
    pub c: bool,
    pub b: bool,
    pub lhs: bool,
    pub partition: Partition,
    pub f: Option<FEvaluation>,
    pub status: InclusionStatus,
}

impl InclusionRecord {
    /// `B^c ∪ F`, when decided.
    pub fn rhs(&self) -> Option<bool> {
        if !self.b {
            return Some(true);
        }
        self.f.map(|f| f.holds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub params: EventParams,
    pub z_sup: f64,
    pub g_sup: f64,
    pub coeff_sup: f64,
    pub coeff_lip: f64,
    /// `max ⦀W^t⦀_{1/4}` over monomials of degree `1..=n`.
    pub monomial_norm: f64,
    pub sup_version: InclusionRecord,
    pub integral_version: InclusionRecord,
}

impl EventRecord {
    pub fn violated(&self) -> bool {
        self.sup_version.status == InclusionStatus::Violated
            || self.integral_version.status == InclusionStatus::Violated
    }

    /// Turns an unresolved inclusion into the grid error.
    pub fn require_resolved(&self) -> Result<()> {
        for r in [&self.sup_version, &self.integral_version] {
            if r.status == InclusionStatus::Unresolved {
                return Err(Error::GridTooCoarse {
                    required_steps: r.partition.required_steps,
                });
            }
        }
        Ok(())
    }
}

/// `ln x`, with `ln 0 = -∞`.
fn ln(x: f64) -> f64 {
    if x == 0.0 {
        f64::NEG_INFINITY
    } else {
        x.ln()
    }
}

fn eight_pow(k: i32) -> f64 {
    8f64.powi(k)
}

/// Interval partition of `[0, T]` for `F(ε̂, ·)` at degree `n`.
pub fn partition(ln_eps_hat: f64, n: usize, t_final: f64, steps: usize) -> Partition {
    let ln_length = 1.5 * eight_pow(n as i32 + 1) * ln_eps_hat;
    let ln_count = t_final.ln() - ln_length;
    let fits = |m: u64, s: u64| -> bool {
        if s < m {
            return false;
        }
        let dt = t_final / s as f64;
        let lo = (s / m) as f64 * dt;
        let hi = s.div_ceil(m) as f64 * dt;
        ln(lo) > ln_length - std::f64::consts::LN_2 && ln(hi) <= ln_length
    };
    if ln_count > 60.0 * std::f64::consts::LN_2 {
        return Partition {
            ln_length,
            intervals: u64::MAX,
            resolvable: false,
            required_steps: u64::MAX,
        };
    }
    // the relative nudge keeps exact powers such as T/L = 16 from rounding down
    let m = (ln_count.exp() * (1.0 + 1e-12)).floor() as u64 + 1;
    let resolvable = fits(m, steps as u64);
    let required_steps = (0..63)
        .map(|j| 1u64 << j)
        .find(|&s| fits(m, s))
        .unwrap_or(u64::MAX);
    Partition {
        ln_length,
        intervals: m,
        resolvable,
        required_steps,
    }
}

/// `Z_λ` basis values at nodes `a..=b` (one row per stored tuple order).
fn lambda_basis(tuples: &[Vec<usize>], w: &WienerPath, a: usize, b: usize) -> Vec<Vec<f64>> {
    tuples
        .iter()
        .map(|t| {
            let m = tuple_multiplicity(t);
            (a..=b).map(|i| m * monomial(w, t, i)).collect()
        })
        .collect()
}

/// `D*(ε̂, I, Λ(ε', n))` on nodes `a..=b`: the snapshot `λ = A(t_a)` is
/// tried first; otherwise the exact value
/// `ε' · min_j min_{λ_j = 1, |λ| <= 1} sup_I |Z_λ|` comes from LPs.
fn d_star(
    z: &WienerPolynomial,
    tuples: &[Vec<usize>],
    w: &WienerPath,
    (a, b): (usize, usize),
    ln_eps_hat: f64,
    ln_eps_prime: f64,
    lp_solves: &mut usize,
) -> Result<(bool, bool)> {
    let basis = lambda_basis(tuples, w, a, b);
    let snap: Vec<f64> = tuples
        .iter()
        .map(|t| z.get(t).map_or(0.0, |c| c.at(a)))
        .collect();
    let snap_max = snap.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if ln(snap_max) >= ln_eps_prime {
        let sup = (0..=b - a)
            .map(|k| {
                snap.iter()
                    .zip(&basis)
                    .map(|(l, m)| l * m[k])
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max);
        if ln(sup) < ln_eps_hat {
            return Ok((true, true));
        }
    }
    for j in 0..tuples.len() {
        let others: Vec<Vec<f64>> = basis
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, v)| v.clone())
            .collect();
        let fit = minimax_fit(&basis[j], &others)?;
        *lp_solves += 1;
        if ln(fit.upper) + ln_eps_prime < ln_eps_hat {
            return Ok((true, false));
        }
    }
    Ok((false, false))
}

fn evaluate_f(
    z: &WienerPolynomial,
    w: &WienerPath,
    part: &Partition,
    ln_eps_hat: f64,
    ln_eps_prime: f64,
) -> Result<FEvaluation> {
    let tuples = all_tuples(z.n, z.d);
    let steps = w.steps() as u64;
    let m = part.intervals;
    let mut lp_solves = 0;
    for k in 0..m {
        let a = (k as u128 * steps as u128 / m as u128) as usize;
        let b = ((k + 1) as u128 * steps as u128 / m as u128) as usize;
        let (hit, snapshot) = d_star(
            z,
            &tuples,
            w,
            (a, b),
            ln_eps_hat,
            ln_eps_prime,
            &mut lp_solves,
        )?;
        if hit {
            return Ok(FEvaluation {
                holds: true,
                interval: Some(k),
                snapshot_witness: snapshot,
                lp_solves,
            });
        }
    }
    Ok(FEvaluation {
        holds: false,
        interval: None,
        snapshot_witness: false,
        lp_solves,
    })
}

#[allow(clippy::too_many_arguments)]
fn inclusion(
    z: &WienerPolynomial,
    w: &WienerPath,
    small: bool,
    e_complement: bool,
    c: bool,
    b: bool,
    ln_eps_hat: f64,
    ln_eps_prime: f64,
    tail: bool,
) -> Result<InclusionRecord> {
    let part = partition(ln_eps_hat, z.n, w.t_final, w.steps());
    let lhs = small && e_complement && c;
    let need_f = b && (lhs || tail);
    let f = if need_f && part.resolvable {
        Some(evaluate_f(z, w, &part, ln_eps_hat, ln_eps_prime)?)
    } else {
        None
    };
    let status = if !lhs {
        InclusionStatus::Vacuous
    } else if !b {
        InclusionStatus::ViaBc
    } else {
        match f {
            None => InclusionStatus::Unresolved,
            Some(fe) if fe.holds => InclusionStatus::ViaF,
            Some(_) => InclusionStatus::Violated,
        }
    };
    Ok(InclusionRecord {
        small,
        e_complement,
        c,
        b,
        lhs,
        partition: part,
        f,
        status,
    })
}

/// Max over monomials of degree `1..=n` of `⦀W^t⦀_{1/4} = max(sup, Hol_{1/4})`.
/// The Hölder part is exact up to 2048 nodes and a lower bound beyond, which
/// can only make `B` look larger and so never hides a violation.
pub fn monomial_norm(w: &WienerPath, n: usize) -> f64 {
    let nodes = w.steps() + 1;
    let mut best = 0.0f64;
    for t in all_tuples(n, w.d()).into_iter().filter(|t| !t.is_empty()) {
        let v: Vec<f64> = (0..nodes).map(|i| monomial(w, &t, i)).collect();
        let sup = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        best = best.max(sup.max(holder(&v, w.dt(), 0.25)));
    }
    best
}

/// Every indicator of the two small-`Z` inclusions on one path. Thresholds
/// such as `ε^{8^{n+2}}` are compared in the log domain.
pub fn evaluate_events(
    z: &WienerPolynomial,
    w: &WienerPath,
    p: &EventParams,
) -> Result<EventRecord> {
    evaluate_events_with_norm(z, w, p, monomial_norm(w, z.n))
}

/// As `evaluate_events` with `monomial_norm(w, z.n)` supplied by the caller,
/// which lets an ε-sweep on one path pay for the Hölder scan once.
pub fn evaluate_events_with_norm(
    z: &WienerPolynomial,
    w: &WienerPath,
    p: &EventParams,
    monomial_norm: f64,
) -> Result<EventRecord> {
    if !(p.eps > 0.0 && p.eps < 1.0) {
        return invalid("event calculus needs 0 < eps < 1");
    }
    if p.n != z.n {
        return invalid(format!(
            "params say n = {}, polynomial has degree {}",
            p.n, z.n
        ));
    }
    let zv = evaluate_z(z, w)?;
    let dt = w.dt();
    let z_sup = zv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut g = p.g0;
    let mut g_sup = g.abs();
    for s in zv.windows(2) {
        g += 0.5 * dt * (s[0] + s[1]);
        g_sup = g_sup.max(g.abs());
    }
    let (coeff_sup, coeff_lip) = z.positive_degree_bounds(dt);
    let n = z.n as i32;
    let le = p.eps.ln();
    let shape = 2.0 + 1.0 / (z.n as f64 + 1.0);

    let sup_version = inclusion(
        z,
        w,
        ln(z_sup) < eight_pow(n + 2) * le,
        coeff_sup >= p.eps,
        coeff_lip < 1.0 / p.eps,
        ln(monomial_norm) < -le / 5.0,
        eight_pow(n + 1) * 1.25 * le,
        shape * le,
        p.tail,
    )?;

    // δ = ε^{8^{-(n+3)}}
    let ld = eight_pow(-(n + 3)) * le;
    let integral_version = inclusion(
        z,
        w,
        g_sup < p.eps,
        ln(coeff_sup) >= ld,
        ln(coeff_lip) < -ld && ln(coeff_sup) < -ld,
        ln(monomial_norm) < -ld / 5.0,
        5.0 / 256.0 * le,
        shape * ld,
        p.tail,
    )?;

    Ok(EventRecord {
        params: *p,
        z_sup,
        g_sup,
        coeff_sup,
        coeff_lip,
        monomial_norm,
        sup_version,
        integral_version,
    })
}

/// As `evaluate_events`, but an inclusion that needs an unresolvable
/// partition is the `GridTooCoarse` error.
pub fn event_calculus(
    z: &WienerPolynomial,
    w: &WienerPath,
    p: &EventParams,
) -> Result<EventRecord> {
    let r = evaluate_events(z, w, p)?;
    r.require_resolved()?;
    Ok(r)
}

/// Exact `∫ |f|^l` of the piecewise linear interpolant on a uniform grid.
pub fn pl_abs_power_integral(f: &[f64], dt: f64, l: f64) -> f64 {
    let seg = |y0: f64, y1: f64| -> f64 {
        let (a, b) = (y0.abs(), y1.abs());
        if y0 * y1 < 0.0 {
            let s = dt * a / (a + b);
            (s * a.powf(l) + (dt - s) * b.powf(l)) / (l + 1.0)
        } else if (a - b).abs() <= 1e-14 * a.max(b) {
            dt * a.powf(l)
        } else {
            dt * (b.powf(l + 1.0) - a.powf(l + 1.0)) / ((l + 1.0) * (b - a))
        }
    };
    f.windows(2).map(|w| seg(w[0], w[1])).sum()
}

/// Exact ρ-Hölder constant of the piecewise linear interpolant: the
/// quotient is quasiconvex along each segment, so node pairs suffice.
pub fn pl_holder(f: &[f64], dt: f64, rho: f64) -> f64 {
    let mut best = 0.0f64;
    for i in 0..f.len() {
        for j in i + 1..f.len() {
            best = best.max((f[j] - f[i]).abs() / ((j - i) as f64 * dt).powf(rho));
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NorrisParams {
    pub l: f64,
    pub rho: f64,
    pub gamma: f64,
    pub eps: f64,
    pub c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaOutcome {
    pub hypotheses: bool,
    pub conclusion: bool,
    pub bound: f64,
    pub observed: f64,
    /// Parameters inside the lemma's stated range.
    pub in_scope: bool,
    /// `hypotheses => conclusion`.
    pub holds: bool,
}

/// `∫_0^t |f|^l < ε` and `Hol_ρ(f) < c ε^{-γ}` imply
/// `‖f‖_∞ < (1+c) ε^{(ρ-γ)/(1+lρ)}`, for the piecewise linear `f` on a
/// uniform grid of `[0, t]`. The implication is only claimed for `t >= 1`
/// and `ε <= 1`: short horizons admit constant counterexamples.
pub fn norris_lp_check(f: &[f64], t: f64, p: &NorrisParams) -> Result<LemmaOutcome> {
    if f.len() < 2 || !(t > 0.0) {
        return invalid("need at least two samples on a positive horizon");
    }
    if !(p.l > 0.0
        && p.eps > 0.0
        && p.c > 0.0
        && p.rho > 0.0
        && p.rho <= 1.0
        && p.gamma >= 0.0
        && p.gamma < p.rho)
    {
        return invalid("need l, eps, c > 0 and 0 <= gamma < rho <= 1");
    }
    let dt = t / (f.len() - 1) as f64;
    let integral = pl_abs_power_integral(f, dt, p.l);
    let hol = pl_holder(f, dt, p.rho);
    let sup = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let hypotheses = integral < p.eps && hol < p.c * p.eps.powf(-p.gamma);
    let bound = (1.0 + p.c) * p.eps.powf((p.rho - p.gamma) / (1.0 + p.l * p.rho));
    let conclusion = sup < bound;
    Ok(LemmaOutcome {
        hypotheses,
        conclusion,
        bound,
        observed: sup,
        in_scope: t >= 1.0 && p.eps <= 1.0,
        holds: !hypotheses || conclusion,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mp2Params {
    pub alpha: f64,
    pub gamma: f64,
    pub c: f64,
    pub eps: f64,
}

/// Sup of `G = G0 + ∫H` on the grid, exact for piecewise linear `H`.
pub fn pl_antiderivative_sup(g0: f64, h: &[f64], dt: f64) -> f64 {
    let mut g = g0;
    let mut best = g.abs();
    for w in h.windows(2) {
        if w[0] * w[1] < 0.0 {
            let theta = w[0] / (w[0] - w[1]);
            best = best.max((g + 0.5 * dt * theta * w[0]).abs());
        }
        g += 0.5 * dt * (w[0] + w[1]);
        best = best.max(g.abs());
    }
    best
}

/// `Hol_α(H) <= c ε^{-γ}`, `t >= ε^{(1+γ)/(1+α)}` and `‖G‖_∞ <= ε` imply
/// `‖H‖_∞ <= (2+c) ε^{(α-γ)/(1+α)}`. A violated horizon condition is
/// reported through `in_scope`, not raised.
pub fn integral_derivative_check(
    g0: f64,
    h: &[f64],
    t: f64,
    p: &Mp2Params,
) -> Result<LemmaOutcome> {
    if h.len() < 2 || !(t > 0.0) {
        return invalid("need at least two samples on a positive horizon");
    }
    if !(p.eps > 0.0 && p.c > 0.0) {
        return invalid("need eps, c > 0");
    }
    let dt = t / (h.len() - 1) as f64;
    let in_scope = p.alpha > p.gamma
        && p.gamma > 0.0
        && p.alpha <= 1.0
        && t >= p.eps.powf((1.0 + p.gamma) / (1.0 + p.alpha));
    let hol = pl_holder(h, dt, p.alpha);
    let g_sup = pl_antiderivative_sup(g0, h, dt);
    let h_sup = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let hypotheses = hol <= p.c * p.eps.powf(-p.gamma) && g_sup <= p.eps;
    let bound = (2.0 + p.c) * p.eps.powf((p.alpha - p.gamma) / (1.0 + p.alpha));
    let conclusion = h_sup <= bound;
    Ok(LemmaOutcome {
        hypotheses,
        conclusion,
        bound,
        observed: h_sup,
        in_scope,
        holds: !hypotheses || conclusion,
    })
}

/// Random piecewise linear samples across many amplitude scales, with
/// increments small enough that the Hölder hypotheses fire often.
pub fn random_pl(rng: &mut impl Rng, knots: usize) -> Vec<f64> {
    let amp = 10f64.powf(rng.random_range(-6.0..1.0));
    let mut v = Vec::with_capacity(knots);
    let mut x = rng.random_range(-1.0..1.0) * amp;
    for _ in 0..knots {
        v.push(x);
        x += rng.random_range(-1.0..1.0) * amp * rng.random_range(0.0..1.0f64).powi(2);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_constant(n: usize, d: usize, seed: u64) -> WienerPolynomial {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = WienerPolynomial::new(n, d).unwrap();
        for t in all_tuples(n, d) {
            z.set(&t, Coefficient::Constant(rng.random_range(-1.0..1.0)))
                .unwrap();
        }
        z
    }

    #[test]
    fn multiplicities() {
        assert_eq!(tuple_multiplicity(&[]), 1.0);
        assert_eq!(tuple_multiplicity(&[0, 1]), 2.0);
        assert_eq!(tuple_multiplicity(&[1, 1]), 1.0);
        assert_eq!(tuple_multiplicity(&[0, 0, 1]), 3.0);
        assert_eq!(tuple_multiplicity(&[0, 1, 2]), 6.0);
        assert_eq!(tuple_multiplicity(&[0, 0, 1, 1]), 6.0);
        assert_eq!(all_tuples(2, 3).len(), 1 + 3 + 6);
    }

    #[test]
    fn symmetric_storage_and_validation() {
        let mut z = WienerPolynomial::new(2, 2).unwrap();
        z.set(&[1, 0], Coefficient::Constant(0.5)).unwrap();
        assert_eq!(z.get(&[0, 1]), Some(&Coefficient::Constant(0.5)));
        assert!(z.set(&[0, 0, 1], Coefficient::Constant(1.0)).is_err());
        assert!(z.set(&[2], Coefficient::Constant(1.0)).is_err());
        z.set(&[0], Coefficient::Sampled(vec![0.0; 5])).unwrap();
        assert!(z.set(&[1], Coefficient::Sampled(vec![0.0; 6])).is_err());
    }

    #[test]
    fn evaluation_oracles() {
        let w = WienerPath::sample(3, 1.0, 64, 3).unwrap();
        // A^{(0)} only gives the coefficient process itself
        let proc: Vec<f64> = (0..65).map(|i| (i as f64).sin()).collect();
        let mut z0 = WienerPolynomial::new(0, 3).unwrap();
        z0.set(&[], Coefficient::Sampled(proc.clone())).unwrap();
        assert_eq!(evaluate_z(&z0, &w).unwrap(), proc);
        // W_1 W_2 with W_1 ≡ 0
        let mut inc = w.increments().clone();
        inc.row_mut(0).fill(0.0);
        let w0 = WienerPath::from_increments(1.0, inc, 0).unwrap();
        let mut z = WienerPolynomial::new(2, 3).unwrap();
        z.add_monomial(&[0, 1], 1.0).unwrap();
        assert!(evaluate_z(&z, &w0).unwrap().iter().all(|&v| v == 0.0));
        // random λ against the ordered-tuple sum
        let z = random_constant(3, 3, 9);
        let vals = evaluate_z(&z, &w).unwrap();
        for &i in &[0usize, 7, 19, 40, 64] {
            let x = [w.value(0, i), w.value(1, i), w.value(2, i)];
            let mut direct = 0.0;
            for a in 0..=3usize {
                for flat in 0..3usize.pow(a as u32) {
                    let mut idx = Vec::new();
                    let mut r = flat;
                    for _ in 0..a {
                        idx.push(r % 3);
                        r /= 3;
                    }
                    let c = z.get(&idx).unwrap().at(i);
                    direct += c * idx.iter().map(|&k| x[k]).product::<f64>();
                }
            }
            assert!(
                (direct - vals[i]).abs() <= 1e-14 * direct.abs().max(1.0),
                "{direct} {}",
                vals[i]
            );
        }
        let wrong = WienerPath::sample(2, 1.0, 64, 3).unwrap();
        assert!(evaluate_z(&z, &wrong).is_err());
    }

    #[test]
    fn discrete_qv_of_brownian_and_smooth_paths() {
        let steps = 1 << 14;
        let mut within = 0;
        for seed in 0..40 {
            let w = WienerPath::sample(2, 1.0, steps, seed).unwrap();
            let w1: Vec<f64> = (0..=steps).map(|i| w.value(0, i)).collect();
            let w2: Vec<f64> = (0..=steps).map(|i| w.value(1, i)).collect();
            let q = discrete_qv(&w1, &w1, 1).unwrap();
            if (q - 1.0).abs() <= 0.05 {
                within += 1;
            }
            let cross = discrete_qv(&w1, &w2, 1).unwrap();
            assert!(
                cross.abs() <= 3.0 * (1.0 / steps as f64).sqrt() * 3.0,
                "{cross}"
            );
        }
        assert!(within >= 38, "{within}/40");
        let t: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
        assert!(discrete_qv(&t, &t, 1).unwrap() <= 1.0 / steps as f64 + 1e-18);
        assert!(discrete_qv(&t, &t, 3).is_err());
    }

    #[test]
    fn qv_formula_specializations() {
        let w = WienerPath::sample(2, 1.0, 256, 4).unwrap();
        let mono = |idx: &[usize]| {
            let mut z = WienerPolynomial::new(idx.len(), 2).unwrap();
            z.add_monomial(idx, 1.0).unwrap();
            z
        };
        let q11 = qv_formula(&mono(&[0]), &mono(&[0]), &w, (64, 192)).unwrap();
        let q12 = qv_formula(&mono(&[0]), &mono(&[1]), &w, (0, 256)).unwrap();
        assert!((q11 - 0.5).abs() < 1e-14 && q12 == 0.0);
        let z = mono(&[0, 1]);
        let q = qv_formula(&z, &z, &w, (0, 256)).unwrap();
        let integrand: Vec<f64> = (0..=256)
            .map(|i| w.value(0, i).powi(2) + w.value(1, i).powi(2))
            .collect();
        assert!((q - trapezoid(&integrand, w.dt())).abs() < 1e-13);
    }

    #[test]
    fn reduction_examples_and_energy_identity() {
        let w = WienerPath::sample(3, 1.0, 128, 8).unwrap();
        let mut z = WienerPolynomial::new(1, 3).unwrap();
        z.add_monomial(&[0], 1.0).unwrap();
        assert_eq!(
            reduce_zr(&z, 0).unwrap().get(&[]),
            Some(&Coefficient::Constant(1.0))
        );
        assert!(evaluate_z(&reduce_zr(&z, 1).unwrap(), &w)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let mut z = WienerPolynomial::new(2, 3).unwrap();
        z.add_monomial(&[0, 1], 1.0).unwrap();
        let z1 = evaluate_z(&reduce_zr(&z, 0).unwrap(), &w).unwrap();
        let z2 = evaluate_z(&reduce_zr(&z, 1).unwrap(), &w).unwrap();
        for i in 0..=128 {
            assert!((z1[i] - w.value(1, i)).abs() < 1e-15 && (z2[i] - w.value(0, i)).abs() < 1e-15);
        }
        let z0 = WienerPolynomial::new(0, 3).unwrap();
        assert!(reduce_zr(&z0, 0).is_err());
        for seed in 0..5 {
            let z = random_constant(3, 3, seed);
            let a = qv_formula(&z, &z, &w, (0, 128)).unwrap();
            let b = reduced_energy(&z, &w, (0, 128)).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn sampled_coefficients_in_reduction() {
        let w = WienerPath::sample(2, 1.0, 64, 2).unwrap();
        let a: Vec<f64> = (0..65).map(|i| 1.0 + 0.01 * i as f64).collect();
        let mut z = WienerPolynomial::new(2, 2).unwrap();
        z.set(&[0, 0], Coefficient::Sampled(a.clone())).unwrap();
        let z0 = evaluate_z(&reduce_zr(&z, 0).unwrap(), &w).unwrap();
        for i in 0..=64 {
            assert!((z0[i] - 2.0 * a[i] * w.value(0, i)).abs() < 1e-14);
        }
        let q = qv_formula(&z, &z, &w, (0, 64)).unwrap();
        let e = reduced_energy(&z, &w, (0, 64)).unwrap();
        assert!((q - e).abs() < 1e-12);
    }

    #[test]
    fn recovery_planted_cases() {
        let w = WienerPath::sample(2, 1.0, 128, 1).unwrap();
        let mut zero = WienerPolynomial::new(2, 2).unwrap();
        for t in all_tuples(2, 2) {
            zero.set(&t, Coefficient::Constant(0.0)).unwrap();
        }
        let r = coefficient_recovery_check(&zero, &w, 1e-12).unwrap();
        assert!(r.pass && r.forced_zero && r.recovered_zero);
        assert!(r.levels.iter().all(|l| l.sup == 0.0));
        let mut z = WienerPolynomial::new(2, 2).unwrap();
        z.set(&[0, 1], Coefficient::Constant(1.0)).unwrap();
        let r = coefficient_recovery_check(&z, &w, 1e-12).unwrap();
        assert!(r.pass && !r.forced_zero);
        let top: Vec<_> = r
            .levels
            .iter()
            .filter(|l| l.path.len() == 2 && l.sup > 0.0)
            .collect();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].path, vec![0, 1]);
        assert!((top[0].sup - 2.0).abs() < 1e-15);
        // non-adapted, non-BV A^{(0)} = -W_1 cancels W_1: Z ≡ 0 yet Z_1 = 1
        let mut z = WienerPolynomial::new(1, 2).unwrap();
        z.set(
            &[],
            Coefficient::Sampled((0..=128).map(|i| -w.value(0, i)).collect()),
        )
        .unwrap();
        z.set(&[0], Coefficient::Constant(1.0)).unwrap();
        let r = coefficient_recovery_check(&z, &w, 1e-12).unwrap();
        assert!(r.forced_zero && !r.pass);
    }

    #[test]
    fn ito_split_cases() {
        let steps = 1 << 12;
        let w = WienerPath::sample(2, 1.0, steps, 6).unwrap();
        let start = steps / 4;
        let mut lin = WienerPolynomial::new(1, 2).unwrap();
        lin.add_monomial(&[0], 2.0).unwrap();
        lin.add_monomial(&[1], -1.0).unwrap();
        lin.add_monomial(&[], 0.5).unwrap();
        let dec = ito_decompose(&lin, &w, start).unwrap();
        for (k, i) in (start..=steps).enumerate() {
            assert_eq!(dec.v[k], dec.v[0]);
            let m = 2.0 * (w.value(0, i) - w.value(0, start)) - (w.value(1, i) - w.value(1, start));
            assert!((dec.m[k] - m).abs() < 1e-13);
        }
        let mut sq = WienerPolynomial::new(2, 2).unwrap();
        sq.add_monomial(&[0, 0], 1.0).unwrap();
        let dec = ito_decompose(&sq, &w, start).unwrap();
        let mut ito_sum = 0.0;
        let mut worst = 0.0f64;
        for (k, i) in (start..=steps).enumerate() {
            let t = w.time(i) - w.time(start);
            assert!((dec.v[k] - (w.value(0, start).powi(2) + t)).abs() < 1e-12);
            worst = worst.max((dec.m[k] - ito_sum).abs());
            if i < steps {
                ito_sum += 2.0 * w.value(0, i) * (w.value(0, i + 1) - w.value(0, i));
            }
        }
        // Σ(ΔW)² - t fluctuates at the sqrt(dt) scale
        assert!(worst < 10.0 * (1.0 / steps as f64).sqrt(), "{worst}");
        let mut z = WienerPolynomial::new(1, 2).unwrap();
        z.set(&[0], Coefficient::Sampled(vec![1.0; steps + 1]))
            .unwrap();
        assert!(ito_decompose(&z, &w, 0).is_err());
    }

    #[test]
    fn martingale_part_quadratic_variation() {
        let steps = 1 << 14;
        let w = WienerPath::sample(3, 1.0, steps, 12).unwrap();
        let z = random_constant(3, 3, 5);
        let dec = ito_decompose(&z, &w, 0).unwrap();
        let qv = discrete_qv(&dec.m, &dec.m, 1).unwrap();
        let e = reduced_energy(&z, &w, (0, steps)).unwrap();
        assert!((qv - e).abs() / e < 0.05, "{qv} {e}");
        assert!(lipschitz(&dec.v, w.dt()).is_finite());
    }

    #[test]
    fn partition_resolution() {
        // L = 2^-4 on [0,1]: 17 intervals, 2^5 steps give lengths 1..2 steps of 2^-5
        let p = partition(-4.0 * std::f64::consts::LN_2 / (1.5 * 64.0), 1, 1.0, 1 << 5);
        assert_eq!(p.intervals, 17);
        assert!(!p.resolvable);
        let p = partition(-4.0 * std::f64::consts::LN_2 / (1.5 * 64.0), 1, 1.0, 1 << 6);
        assert!(p.resolvable);
        assert_eq!(p.required_steps, 1 << 6);
        let huge = partition(-100.0, 2, 1.0, 1 << 12);
        assert!(!huge.resolvable && huge.required_steps == u64::MAX);
    }

    #[test]
    fn event_trivial_cases() {
        let steps = 1 << 10;
        let w = WienerPath::sample(2, 1.0, steps, 2).unwrap();
        let mut zero = WienerPolynomial::new(1, 2).unwrap();
        for t in all_tuples(1, 2) {
            zero.set(&t, Coefficient::Constant(0.0)).unwrap();
        }
        let p = EventParams {
            eps: 0.25,
            n: 1,
            g0: 0.0,
            tail: false,
        };
        let r = event_calculus(&zero, &w, &p).unwrap();
        assert!(r.sup_version.small && !r.sup_version.e_complement);
        assert_eq!(r.sup_version.status, InclusionStatus::Vacuous);
        assert_eq!(r.integral_version.status, InclusionStatus::Vacuous);
        // degree 0 with a large constant: sup |Z| is large, D fails
        let mut c = WienerPolynomial::new(0, 2).unwrap();
        c.set(&[], Coefficient::Constant(5.0)).unwrap();
        let r = evaluate_events(&c, &w, &EventParams { n: 0, ..p }).unwrap();
        assert!(!r.sup_version.lhs && !r.integral_version.lhs);
    }

    #[test]
    fn planted_cancellation_exercises_f() {
        // Z = a(s) (W_1 - W_1) ≡ 0 with Lipschitz a ≈ 1: the integral
        // left-hand side holds, so the inclusion is decided by B^c or F
        let steps = 1 << 12;
        let planted = |w: &WienerPath| {
            let a: Vec<f64> = (0..=steps)
                .map(|i| 1.0 + 0.0002 * (i as f64 / steps as f64))
                .collect();
            let mut z = WienerPolynomial::new(1, 1).unwrap();
            z.set(&[0], Coefficient::Sampled(a.clone())).unwrap();
            z.set(
                &[],
                Coefficient::Sampled((0..=steps).map(|i| -a[i] * w.value(0, i)).collect()),
            )
            .unwrap();
            z
        };
        let p = EventParams {
            eps: 0.25,
            n: 1,
            g0: 0.0,
            tail: false,
        };
        for seed in 0..10 {
            let w = WienerPath::sample(1, 1.0, steps, seed).unwrap();
            let r = evaluate_events(&planted(&w), &w, &p).unwrap();
            assert!(r.integral_version.lhs, "{r:?}");
            assert_ne!(r.integral_version.status, InclusionStatus::Violated);
        }
        // a damped path keeps every monomial norm below the B radius
        let w = WienerPath::sample(1, 1.0, steps, 3).unwrap();
        let w = WienerPath::from_increments(1.0, w.increments() * 0.01, 3).unwrap();
        let r = evaluate_events(&planted(&w), &w, &p).unwrap();
        assert!(r.integral_version.b);
        assert_eq!(r.integral_version.status, InclusionStatus::ViaF);
        assert!(r.integral_version.f.unwrap().snapshot_witness);
        // the sup version needs sub-grid intervals here
        assert_eq!(r.sup_version.status, InclusionStatus::Unresolved);
        assert!(matches!(
            r.require_resolved(),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn d_star_uses_lp_when_snapshot_fails() {
        // W = 0, .3, .6, .9, .6 and Z = W with A^{(1)} = 1: the snapshot
        // λ = (0, 1) leaves sup |W| = 0.9, while λ = (-0.45, 1) reaches the
        // half range 0.45 < ε̂ = 0.5
        let inc = DMatrix::from_row_slice(1, 4, &[0.3, 0.3, 0.3, -0.3]);
        let w = WienerPath::from_increments(1.0, inc, 0).unwrap();
        let mut z = WienerPolynomial::new(1, 1).unwrap();
        z.set(&[0], Coefficient::Constant(1.0)).unwrap();
        let tuples = all_tuples(1, 1);
        let mut solves = 0;
        let (hit, snap) = d_star(&z, &tuples, &w, (0, 4), 0.5f64.ln(), 0.0, &mut solves).unwrap();
        assert!(hit && !snap && solves >= 1);
        let (hit, _) = d_star(&z, &tuples, &w, (0, 4), 0.4f64.ln(), 0.0, &mut solves).unwrap();
        assert!(!hit);
    }

    #[test]
    fn norris_lemma_examples() {
        let p = NorrisParams {
            l: 2.0,
            rho: 0.5,
            gamma: 0.1,
            eps: 0.01,
            c: 1.0,
        };
        let zero = norris_lp_check(&[0.0; 9], 1.0, &p).unwrap();
        assert!(zero.hypotheses && zero.conclusion && zero.holds);
        let big = norris_lp_check(&[50.0; 9], 1.0, &p).unwrap();
        assert!(!big.hypotheses && big.holds);
        // short horizon: constant f with small integral breaks the bound
        let short = norris_lp_check(
            &[10.0; 3],
            1e-6,
            &NorrisParams {
                l: 1.0,
                rho: 0.5,
                gamma: 0.1,
                eps: 1e-3,
                c: 1.0,
            },
        )
        .unwrap();
        assert!(!short.in_scope && !short.holds);
        assert!(norris_lp_check(&[0.0; 3], 1.0, &NorrisParams { gamma: 0.6, ..p }).is_err());
    }

    #[test]
    fn norris_lemma_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut active = 0;
        for _ in 0..2000 {
            let knots = rng.random_range(2..48);
            let f = random_pl(&mut rng, knots);
            let rho = rng.random_range(0.05..1.0);
            let p = NorrisParams {
                l: [1.0, 2.0, 4.0][rng.random_range(0..3)],
                rho,
                gamma: rng.random_range(0.0..rho),
                eps: 10f64.powf(rng.random_range(-8.0..0.0)),
                c: rng.random_range(0.1..10.0),
            };
            let o = norris_lp_check(&f, 1.0, &p).unwrap();
            assert!(o.holds, "{f:?} {p:?} {o:?}");
            active += o.hypotheses as usize;
        }
        assert!(active > 100, "{active}");
    }

    #[test]
    fn mp2_lemma_examples_and_random() {
        let p = Mp2Params {
            alpha: 0.5,
            gamma: 0.2,
            c: 1.0,
            eps: 1e-3,
        };
        assert!(
            integral_derivative_check(0.0, &[0.0; 17], 1.0, &p)
                .unwrap()
                .holds
        );
        let h: Vec<f64> = (0..=256)
            .map(|i| 1e-4 * (i as f64 / 256.0 * 6.0).sin())
            .collect();
        let o = integral_derivative_check(0.0, &h, 1.0, &p).unwrap();
        assert!(o.holds && o.hypotheses);
        let out = integral_derivative_check(0.0, &h, 1e-9, &p).unwrap();
        assert!(!out.in_scope);
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let mut active = 0;
        for _ in 0..2000 {
            let knots = rng.random_range(2..48);
            let h = random_pl(&mut rng, knots);
            let alpha = rng.random_range(0.05..1.0);
            let p = Mp2Params {
                alpha,
                gamma: rng.random_range(1e-3..alpha),
                c: rng.random_range(0.1..10.0),
                eps: 10f64.powf(rng.random_range(-8.0..0.0)),
            };
            let g0 = -pl_antiderivative_sup(0.0, &h, 1.0 / (h.len() - 1) as f64)
                * rng.random_range(0.0..1.0);
            let o = integral_derivative_check(g0, &h, 1.0, &p).unwrap();
            assert!(o.in_scope);
            assert!(o.holds, "{h:?} {p:?} {o:?}");
            active += o.hypotheses as usize;
        }
        assert!(active > 50, "{active}");
    }

    #[test]
    fn exact_pl_helpers() {
        // ∫_0^1 |2s - 1| ds = 1/2; ∫ (2s-1)^2 = 1/3
        let f = [-1.0, 1.0];
        assert!((pl_abs_power_integral(&f, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((pl_abs_power_integral(&f, 1.0, 2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((pl_abs_power_integral(&[1.0, 3.0], 1.0, 1.0) - 2.0).abs() < 1e-15);
        // G = ∫(2s-1) = s^2 - s has sup 1/4 at s = 1/2
        assert!((pl_antiderivative_sup(0.0, &f, 1.0) - 0.25).abs() < 1e-15);
    }
}
