//! Dense tableau simplex for the small linear programs behind the
//! uniform-approximation events. Problems have at most a few dozen
//! variables, so clarity wins over sparse machinery.

use crate::error::{invalid, Error, Result};

const PIVOT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

/// `max cᵀx` subject to `Ax <= b`, `x >= 0`, with `b >= 0` so the origin is
/// a feasible vertex. Bland's rule keeps it from cycling. Errors when the
/// problem is unbounded.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let n = c.len();
    let m = a.len();
    if b.len() != m || a.iter().any(|r| r.len() != n) {
        return invalid("LP shapes disagree");
    }
    if b.iter().any(|&v| !(v >= 0.0)) {
        return invalid("LP right-hand side must be nonnegative");
    }
    let width = n + m + 1;
    // rows 0..m are constraints, row m is the reduced-cost row
    let mut t = vec![0.0; (m + 1) * width];
    for i in 0..m {
        let scale = a[i]
            .iter()
            .fold(b[i].abs(), |s, v| s.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for j in 0..n {
            t[i * width + j] = a[i][j] / scale;
        }
        t[i * width + n + i] = 1.0;
        t[i * width + n + m] = b[i] / scale;
    }
    for j in 0..n {
        t[m * width + j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let cap = 50 * (n + m + 10) * (n + m + 10);
    let mut pivots = 0;
    loop {
        let Some(enter) = (0..n + m).find(|&j| t[m * width + j] < -PIVOT_TOL) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let aij = t[i * width + enter];
            if aij > PIVOT_TOL {
                let ratio = t[i * width + n + m] / aij;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((l, r)) => {
                        if ratio < r - 1e-15 * r.abs().max(1.0)
                            || (ratio <= r + 1e-15 * r.abs().max(1.0) && basis[i] < basis[l])
                        {
                            Some((i, ratio))
                        } else {
                            Some((l, r))
                        }
                    }
                };
            }
        }
        let Some((row, _)) = leave else {
            return Err(Error::Unsupported("unbounded linear program".into()));
        };
        pivot(&mut t, width, m, row, enter);
        basis[row] = enter;
        pivots += 1;
        if pivots > cap {
            return Err(Error::Unsupported("simplex iteration cap reached".into()));
        }
    }
    let mut x = vec![0.0; n];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = t[i * width + n + m].max(0.0);
        }
    }
    let value = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(LpSolution { x, value, pivots })
}

fn pivot(t: &mut [f64], width: usize, m: usize, row: usize, col: usize) {
    let p = t[row * width + col];
    for j in 0..width {
        t[row * width + j] /= p;
    }
    for i in 0..=m {
        if i == row {
            continue;
        }
        let f = t[i * width + col];
        if f == 0.0 {
            continue;
        }
        for j in 0..width {
            t[i * width + j] -= f * t[row * width + j];
        }
        t[i * width + col] = 0.0;
    }
}

/// Best uniform fit with box-constrained coefficients:
/// `min over λ ∈ [-1,1]^p of max_t |f(t) + Σ_i λ_i m_i(t)|`.
#[derive(Clone, Debug, PartialEq)]
pub struct MinimaxFit {
    /// Optimal value of the LP over the active points; a lower bound.
    pub lower: f64,
    /// Residual sup over all points at `lambda`; an attained upper bound.
    pub upper: f64,
    pub lambda: Vec<f64>,
    pub active_points: usize,
}

/// `f` has one value per point, `basis[i]` holds `m_i` at the same points.
/// Points are added to the LP one at a time (most violated first) until
/// the attained residual matches the LP value.
pub fn minimax_fit(f: &[f64], basis: &[Vec<f64>]) -> Result<MinimaxFit> {
    let np = f.len();
    let p = basis.len();
    if np == 0 || basis.iter().any(|b| b.len() != np) {
        return invalid("minimax fit needs matching, nonempty samples");
    }
    let residual =
        |lam: &[f64], t: usize| f[t] + lam.iter().zip(basis).map(|(l, b)| l * b[t]).sum::<f64>();
    let sup_at = |lam: &[f64]| {
        (0..np).fold((0.0f64, 0usize), |(best, arg), t| {
            let r = residual(lam, t).abs();
            if r > best {
                (r, t)
            } else {
                (best, arg)
            }
        })
    };
    if p == 0 {
        let (upper, _) = sup_at(&[]);
        return Ok(MinimaxFit {
            lower: upper,
            upper,
            lambda: vec![],
            active_points: np,
        });
    }
    let mut active: Vec<usize> = vec![0, np - 1];
    let (_, arg) = sup_at(&vec![0.0; p]);
    active.push(arg);
    active.sort_unstable();
    active.dedup();
    loop {
        let (lower, lambda) = solve_active(f, basis, &active)?;
        let (upper, worst) = sup_at(&lambda);
        let converged =
            upper <= lower * (1.0 + 1e-9) + 1e-300 || active.contains(&worst) || active.len() == np;
        if converged {
            return Ok(MinimaxFit {
                lower: lower.min(upper),
                upper,
                lambda,
                active_points: active.len(),
            });
        }
        active.push(worst);
    }
}

/// Variables `μ_i = λ_i + 1 ∈ [0, 2]` and `σ = big - τ`; maximize σ.
fn solve_active(f: &[f64], basis: &[Vec<f64>], active: &[usize]) -> Result<(f64, Vec<f64>)> {
    let p = basis.len();
    let shift: Vec<f64> = active
        .iter()
        .map(|&t| f[t] - basis.iter().map(|b| b[t]).sum::<f64>())
        .collect();
    let big = 1.0 + shift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut a = Vec::with_capacity(2 * active.len() + p);
    let mut b = Vec::with_capacity(2 * active.len() + p);
    for (k, &t) in active.iter().enumerate() {
        // +(shift + Σ μ m) <= τ and -(shift + Σ μ m) <= τ
        let mut up: Vec<f64> = basis.iter().map(|bi| bi[t]).collect();
        up.push(1.0);
        a.push(up);
        b.push(big - shift[k]);
        let mut dn: Vec<f64> = basis.iter().map(|bi| -bi[t]).collect();
        dn.push(1.0);
        a.push(dn);
        b.push(big + shift[k]);
    }
    for i in 0..p {
        let mut row = vec![0.0; p + 1];
        row[i] = 1.0;
        a.push(row);
        b.push(2.0);
    }
    let mut c = vec![0.0; p + 1];
    c[p] = 1.0;
    let sol = maximize(&c, &a, &b)?;
    let lambda: Vec<f64> = sol.x[..p]
        .iter()
        .map(|mu| (mu - 1.0).clamp(-1.0, 1.0))
        .collect();
    Ok(((big - sol.x[p]).max(0.0), lambda))
}
