//! Malliavin matrix on `S`: forward against adjoint assembly under
//! refinement, positivity (or degeneracy) across seeds with the matching
//! bracket containment, and the linear closed form.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{is_linear, linearized_control, Expect};
use super::{row, Context, Table};
use crate::brackets::{check_subspace, grow_span, BracketMode};
use crate::error::{Error, Result};
use crate::malliavin::{assemble_adjoint, assemble_forward, forward_full, spectrum};
use crate::sde::{integrate, SpdeConfig, WienerPath};
use crate::variation::{AdjointScheme, FlowBundle};

/// Per-doubling ratio of the representation gap: first order.
const FIRST_ORDER: (f64, f64) = (0.4, 0.7);
const EXACT_TOL: f64 = 1e-12;
/// Eigenvalues below this fraction of the trace count as zero.
const DEGENERATE: f64 = 1e-10;
const CLOSED_FORM_TOL: f64 = 0.05;

/// Relative Frobenius gap; absolute when `a = 0` (e.g. `S` unforced and `N = 0`).
fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let gap = (a - b).norm();
    if a.norm() > 0.0 {
        gap / a.norm()
    } else {
        gap
    }
}

/// Relative Frobenius gap between the forward (discrete) and the adjoint
/// assembly with the configured adjoint scheme; `None` when diverged.
fn representation_gap(
    cfg: &SpdeConfig,
    u0: &nalgebra::DVector<f64>,
    w: &WienerPath,
    s: &[nalgebra::DVector<f64>],
) -> Result<Option<f64>> {
    let tr = integrate(cfg, u0, w)?;
    if tr.diverged.is_some() {
        return Ok(None);
    }
    let fwd = assemble_forward(&FlowBundle::new(cfg, &tr, AdjointScheme::Discrete)?, s)?;
    let adj = assemble_adjoint(&FlowBundle::new(cfg, &tr, AdjointScheme::Continuous)?, s)?;
    Ok(Some(rel_frobenius(&fwd.entries, &adj.entries)))
}

#[derive(Serialize, Deserialize)]
struct RefineRep {
    coarse: Option<f64>,
    fine: Option<f64>,
    linear: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct PositivityRep {
    diverged: bool,
    eigenvalues: Vec<f64>,
    trace: f64,
}

pub(super) fn run(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.cfg;
    let (spde, u0) = cfg.spde()?;
    let s = cfg.subspace(&spde.basis)?;
    let steps = cfg.steps;

    if cfg.wants("representation") && cfg.refine_seeds > 0 {
        let lin = linearized_control(&spde);
        let seeds = ctx.seeds("representation", cfg.refine_seeds);
        let reps: Vec<RefineRep> =
            ctx.replicate("representation", cfg.refine_seeds, |_, seed| {
                let fine = WienerPath::sample(spde.d(), cfg.t_final, 2 * steps, seed)?;
                let coarse = fine.coarsen(2)?;
                Ok(RefineRep {
                    coarse: representation_gap(&spde, &u0, &coarse, &s)?,
                    fine: representation_gap(&spde, &u0, &fine, &s)?,
                    linear: representation_gap(&lin, &u0, &coarse, &s)?,
                })
            })?;
        let mut t = Table::new(
            "representation",
            &[
                "replica",
                "seed",
                "steps",
                "rel_gap_coarse",
                "rel_gap_fine",
                "ratio",
                "rel_gap_linear",
            ],
        );
        let (mut rmin, mut rmax, mut lmax) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        let mut diverged = 0;
        for (i, r) in reps.iter().enumerate() {
            let ratio = match (r.coarse, r.fine) {
                (Some(c), Some(f)) => Some(f / c),
                _ => None,
            };
            match ratio {
                Some(q) => {
                    rmin = rmin.min(q);
                    rmax = rmax.max(q);
                }
                None => diverged += 1,
            }
            lmax = match r.linear {
                Some(g) if !g.is_nan() => lmax.max(g),
                _ => f64::INFINITY,
            };
            t.push(row![i, seeds[i], steps, r.coarse, r.fine, ratio, r.linear]);
        }
        ctx.table(t);
        // with N = 0 both gaps are round-off, so there is no rate to test
        if !is_linear(&spde) {
            ctx.check(
            "representations-first-order",
            diverged == 0 && rmin >= FIRST_ORDER.0 && rmax <= FIRST_ORDER.1,
            format!(
                "relative Frobenius gap ratio per doubling in [{rmin:.3}, {rmax:.3}] (want [{}, {}]), {} seeds, {diverged} diverged",
                FIRST_ORDER.0,
                FIRST_ORDER.1,
                reps.len()
            ),
        );
        }
        ctx.check(
            "representations-linear-exact",
            lmax <= EXACT_TOL,
            format!("max relative gap with N = 0: {lmax:.2e}"),
        );
    }

    if cfg.wants("positivity") {
        // which bracket level, if any, contains S
        let growth = grow_span(
            &spde.g,
            &spde.nonlinear,
            cfg.max_bracket_steps,
            BracketMode::TopDegree,
            cfg.rank_tol,
        )?;
        let mut ct = Table::new(
            "containment",
            &["level", "rank", "contained", "margin", "max_residual"],
        );
        let mut first = None;
        for (n, h) in growth.levels.iter().enumerate() {
            let c = check_subspace(&s, h)?;
            if c.contained && first.is_none() {
                first = Some(n + 1);
            }
            ct.push(row![n + 1, h.rank(), c.contained, c.margin, c.max_residual]);
        }
        ctx.table(ct);

        let adjoint: AdjointScheme = cfg.adjoint.into();
        let seeds = ctx.seeds("positivity", cfg.replicas);
        let reps: Vec<PositivityRep> = ctx.replicate("positivity", cfg.replicas, |_, seed| {
            let w = WienerPath::sample(spde.d(), cfg.t_final, steps, seed)?;
            let tr = integrate(&spde, &u0, &w)?;
            if tr.diverged.is_some() {
                return Ok(PositivityRep {
                    diverged: true,
                    eigenvalues: vec![],
                    trace: f64::NAN,
                });
            }
            let m = assemble_adjoint(&FlowBundle::new(&spde, &tr, adjoint)?, &s)?;
            let sp = spectrum(&m.entries)?;
            Ok(PositivityRep {
                diverged: false,
                eigenvalues: sp.values,
                trace: m.trace(),
            })
        })?;
        let mut t = Table::new(
            "positivity",
            &[
                "replica",
                "seed",
                "min_eigenvalue",
                "max_eigenvalue",
                "trace",
                "min_over_trace",
            ],
        );
        let (mut positive, mut degenerate, mut diverged) = (0, 0, 0);
        let mut worst = (f64::INFINITY, 0.0f64);
        for (i, r) in reps.iter().enumerate() {
            if r.diverged {
                diverged += 1;
                t.push(row![i, seeds[i], f64::NAN, f64::NAN, f64::NAN, f64::NAN]);
                continue;
            }
            let (lo, hi) = (r.eigenvalues[0], *r.eigenvalues.last().expect("nonempty S"));
            let q = lo / r.trace;
            if r.trace > 0.0 && q > DEGENERATE {
                positive += 1;
            } else {
                degenerate += 1;
            }
            worst = (
                worst.0.min(q),
                worst.1.max(if q.is_finite() { q } else { 0.0 }),
            );
            t.push(row![i, seeds[i], lo, hi, r.trace, q]);
        }
        ctx.table(t);
        let n = reps.len();
        let level = first
            .map(|l| l.to_string())
            .unwrap_or_else(|| "none".into());
        match cfg.expect {
            Expect::Positive => ctx.check(
                "positive-on-subspace",
                positive == n && first.is_some(),
                format!(
                    "{positive}/{n} seeds with min eigenvalue > {DEGENERATE:e} x trace (smallest ratio {:.3e}); S first contained at bracket level {level}",
                    worst.0
                ),
            ),
            Expect::Degenerate => ctx.check(
                "degenerate-on-subspace",
                degenerate == n && diverged == 0 && first.is_none(),
                format!(
                    "{degenerate}/{n} seeds with min eigenvalue <= {DEGENERATE:e} x trace (largest ratio {:.3e}); S contained at level {level}",
                    worst.1
                ),
            ),
            other => {
                return Err(Error::Config(format!("positivity needs expect = \"positive\" or \"degenerate\", not {other:?}")));
            }
        }
    }

    if cfg.wants("closed-form") && is_linear(&spde) {
        let w = WienerPath::sample(spde.d(), cfg.t_final, steps, ctx.seeds("closed-form", 1)[0])?;
        let tr = integrate(&spde, &u0, &w)?;
        let m = forward_full(&FlowBundle::new(&spde, &tr, AdjointScheme::Discrete)?);
        let lambda = &spde.basis.eigenvalues;
        let big_t = cfg.t_final;
        let mut t = Table::new(
            "closed_form",
            &["row", "col", "numeric", "exact", "rel_err"],
        );
        let mut worst = 0.0f64;
        let mut zero_ok = true;
        for a in 0..m.nrows() {
            for b in a..m.ncols() {
                let gg: f64 = spde.g.iter().map(|g| g[a] * g[b]).sum();
                let rate = lambda[a] + lambda[b];
                let exact = gg * -(-rate * big_t).exp_m1() / rate;
                if exact == 0.0 {
                    zero_ok &= m[(a, b)].abs() <= 1e-14 * m.amax();
                    continue;
                }
                let rel = (m[(a, b)] / exact - 1.0).abs();
                worst = worst.max(rel);
                t.push(row![a, b, m[(a, b)], exact, rel]);
            }
        }
        ctx.table(t);
        ctx.check(
            "linear-closed-form",
            worst <= CLOSED_FORM_TOL && zero_ok,
            format!("worst relative error of M against (1-exp(-2 lambda T))/(2 lambda) entries: {worst:.2e}; zero pattern {}", if zero_ok { "exact" } else { "broken" }),
        );
    }
    Ok(())
}
