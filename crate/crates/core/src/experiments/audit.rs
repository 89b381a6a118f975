//! Moment audit of the constants that control the bracket estimates:
//! `J*`, `u*_p`, `K*_p`, `D*_p`, with a replica-doubling stability check,
//! and the empirical smoothing exponent of `‖W J_{s,s+τ}‖`.
//!
//! Sup and Lipschitz quantities over pairs of times are taken on a 17-node
//! subgrid (every `N/16` steps), so they are lower bounds of the continuum
//! values; `u*` uses every node.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::ModelKind;
use super::{lp_norm, row, Context, Table};
use crate::error::{Error, Result};
use crate::sde::{integrate, shifted_x, WienerPath};
use crate::variation::{AdjointScheme, FlowBundle};

const SUBGRID: usize = 16;
/// Smoothing exponent used in `D*`: `(t-s)^{1/2} ‖W J_{s,t}‖`.
const SMOOTHING: f64 = 0.5;
const STABLE: f64 = 0.1;
const ALPHA_RANGE: (f64, f64) = (0.4, 0.6);
/// `τ = 2^{-k}` for these `k`, finest first.
const ALPHA_LEVELS: std::ops::RangeInclusive<i32> = 5..=10;

fn op_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Products of `m` consecutive step matrices, `blocks[j] = A_{(j+1)m-1} ⋯ A_{jm}`.
fn blocks(b: &FlowBundle, m: usize) -> Vec<DMatrix<f64>> {
    let n = b.steps() / m;
    (0..n)
        .map(|j| {
            let mut p = b.step_matrix(j * m);
            for r in j * m + 1..(j + 1) * m {
                p = b.step_matrix(r) * p;
            }
            p
        })
        .collect()
}

/// Pairwise products of neighbouring blocks.
fn coarsen(bs: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    bs.chunks_exact(2).map(|c| &c[1] * &c[0]).collect()
}

#[derive(Serialize, Deserialize)]
struct AuditRep {
    diverged: bool,
    /// `|J_{a,b} g_k|²` for subgrid pairs `a < b` and each `k`, flattened.
    jg: Vec<f64>,
    u_sup: f64,
    u_lip: f64,
    k_sup: f64,
    k_lip: f64,
    d_sup: f64,
    d_hol: f64,
    /// `sup_s ‖W J_{s,s+τ}‖₂` per τ level, finest first.
    alpha_sups: Vec<f64>,
}

impl AuditRep {
    fn quantity(&self, name: &str) -> f64 {
        match name {
            "u_sup" => self.u_sup,
            "u_lip" => self.u_lip,
            "k_sup" => self.k_sup,
            "k_lip" => self.k_lip,
            "d_sup" => self.d_sup,
            "d_hol" => self.d_hol,
            _ => unreachable!("unknown audit quantity {name}"),
        }
    }
}

const MOMENT_QUANTITIES: [&str; 6] = ["u_sup", "u_lip", "k_sup", "k_lip", "d_sup", "d_hol"];

/// `max_{pair, k} E|J g_k|²` over a set of replicas.
fn j_star(reps: &[&AuditRep]) -> f64 {
    let len = reps[0].jg.len();
    (0..len)
        .map(|i| reps.iter().map(|r| r.jg[i]).sum::<f64>() / reps.len() as f64)
        .fold(0.0, f64::max)
}

fn estimates(reps: &[&AuditRep], p_values: &[u32]) -> Vec<(String, Option<u32>, f64)> {
    let mut out = vec![("J".to_string(), None, j_star(reps))];
    for q in MOMENT_QUANTITIES {
        let v: Vec<f64> = reps.iter().map(|r| r.quantity(q)).collect();
        for &p in p_values {
            out.push((q.to_string(), Some(p), lp_norm(&v, p)));
        }
    }
    out
}

pub(super) fn run(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.cfg;
    let (spde, u0) = cfg.spde()?;
    let steps = cfg.steps;
    if !steps.is_multiple_of(SUBGRID) {
        return Err(Error::Config(format!(
            "audit needs steps divisible by {SUBGRID}"
        )));
    }
    let dt = cfg.t_final / steps as f64;
    let alpha_wanted = cfg.wants("alpha");
    // finest alpha block length in steps
    let m0 = if alpha_wanted {
        let m0 = (2f64.powi(-ALPHA_LEVELS.end()) / dt).round() as usize;
        let span = m0 << (ALPHA_LEVELS.end() - ALPHA_LEVELS.start());
        if m0 == 0
            || ((m0 as f64) * dt - 2f64.powi(-ALPHA_LEVELS.end())).abs() > 1e-12
            || !steps.is_multiple_of(span)
        {
            return Err(Error::Config(format!(
                "alpha needs a step that divides 2^-{} (got dt = {dt:e})",
                ALPHA_LEVELS.end()
            )));
        }
        Some(m0)
    } else {
        None
    };
    let sqrt_l =
        DVector::from_iterator(spde.dim(), spde.basis.eigenvalues.iter().map(|l| l.sqrt()));
    let w_mat = DMatrix::from_diagonal(&sqrt_l);
    let w_inv = DMatrix::from_diagonal(&sqrt_l.map(|x| 1.0 / x));
    let vnorm = |v: &DVector<f64>| v.component_mul(&sqrt_l).norm();
    let node_step = steps / SUBGRID;
    let t_star = cfg.t_star_fraction * cfg.t_final;
    let first_star = (0..=SUBGRID)
        .find(|&a| (a * node_step) as f64 * dt >= t_star - 1e-12)
        .unwrap_or(SUBGRID);

    ctx.seeds("audit", cfg.replicas);
    let reps: Vec<AuditRep> = ctx.replicate("audit", cfg.replicas, |_, seed| {
        let w = WienerPath::sample(spde.d(), cfg.t_final, steps, seed)?;
        let tr = integrate(&spde, &u0, &w)?;
        if tr.diverged.is_some() {
            return Ok(AuditRep {
                diverged: true,
                jg: vec![],
                u_sup: 0.0,
                u_lip: 0.0,
                k_sup: 0.0,
                k_lip: 0.0,
                d_sup: 0.0,
                d_hol: 0.0,
                alpha_sups: vec![],
            });
        }
        let b = FlowBundle::new(&spde, &tr, AdjointScheme::Discrete)?;

        // u*: the shifted state on [T0, T]
        let x = shifted_x(&tr, &spde.g, &w)?;
        let i0 = (t_star / dt - 1e-9).ceil() as usize;
        let u_sup = x[i0..].iter().map(&vnorm).fold(0.0, f64::max);
        let u_lip = x[i0..]
            .windows(2)
            .map(|p| (&p[1] - &p[0]).norm() / dt)
            .fold(0.0, f64::max);

        // subgrid blocks, built from the alpha blocks when available
        let (sub, alpha_sups) = match m0 {
            Some(m0) => {
                let base = blocks(&b, m0);
                let mut level = base.clone();
                let mut sups = Vec::new();
                for k in ALPHA_LEVELS.rev() {
                    sups.push(
                        level
                            .iter()
                            .map(|j| op_norm(&(&w_mat * j)))
                            .fold(0.0, f64::max),
                    );
                    if k > *ALPHA_LEVELS.start() {
                        level = coarsen(&level);
                    }
                }
                let mut sub = base;
                while sub.len() > SUBGRID {
                    sub = coarsen(&sub);
                }
                (sub, sups)
            }
            None => (blocks(&b, node_step), vec![]),
        };

        // J_{a,b} for subgrid nodes a < b
        let mut jg = Vec::new();
        let (mut k_sup, mut d_sup, mut d_hol) = (0.0f64, 0.0f64, 0.0f64);
        let mut to_end = vec![DMatrix::identity(spde.dim(), spde.dim()); SUBGRID + 1];
        for a in 0..SUBGRID {
            let mut j = DMatrix::identity(spde.dim(), spde.dim());
            for bnode in a + 1..=SUBGRID {
                j = &sub[bnode - 1] * j;
                for g in &spde.g {
                    let v = &j * g;
                    jg.push(v.norm_squared());
                    d_sup = d_sup.max(vnorm(&v));
                }
                let gap = ((bnode - a) * node_step) as f64 * dt;
                d_hol = d_hol.max(gap.powf(SMOOTHING) * op_norm(&(&w_mat * &j)));
                if a >= first_star {
                    k_sup = k_sup.max(op_norm(&(&w_mat * j.transpose() * &w_inv)));
                }
            }
            to_end[a] = j;
        }
        // Lipschitz constant of K_a = J_{a,N}ᵀ on [T0, T]
        let mut k_lip = 0.0f64;
        for a in first_star..=SUBGRID {
            for c in a + 1..=SUBGRID {
                let diff = (to_end[a].transpose() - to_end[c].transpose()) * &w_inv;
                k_lip = k_lip.max(op_norm(&diff) / (((c - a) * node_step) as f64 * dt));
            }
        }
        Ok(AuditRep {
            diverged: false,
            jg,
            u_sup,
            u_lip,
            k_sup,
            k_lip,
            d_sup,
            d_hol,
            alpha_sups,
        })
    })?;

    let diverged = reps.iter().filter(|r| r.diverged).count();
    ctx.check(
        "no-divergence",
        diverged == 0,
        format!("{diverged} of {} replicas diverged", reps.len()),
    );
    if diverged > 0 {
        return Ok(());
    }
    let all: Vec<&AuditRep> = reps.iter().collect();

    if cfg.wants("moments") {
        let full = estimates(&all, &cfg.p_values);
        let mut t = Table::new("audit", &["quantity", "p", "replicas", "estimate"]);
        for (q, p, e) in &full {
            t.push(row![q.as_str(), *p, all.len(), *e]);
        }
        ctx.table(t);
        let finite = full.iter().all(|(_, _, e)| e.is_finite());
        ctx.check("finite", finite, "every moment estimate is finite");

        let mut mono = true;
        for q in MOMENT_QUANTITIES {
            let v: Vec<f64> = full
                .iter()
                .filter(|(n, _, _)| n == q)
                .map(|x| x.2)
                .collect();
            mono &= v.windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-12));
        }
        ctx.check("monotone-in-p", mono, "L^p estimates nondecreasing in p");

        if all.len() >= 2 {
            let half = estimates(&all[..all.len() / 2], &cfg.p_values);
            let mut s = Table::new(
                "stability",
                &["quantity", "p", "half", "full", "rel_change"],
            );
            let mut worst = (0.0f64, String::new());
            for ((q, p, h), (_, _, f)) in half.iter().zip(&full) {
                let rel = if *f == 0.0 {
                    (h - f).abs()
                } else {
                    ((h - f) / f).abs()
                };
                if rel > worst.0 || worst.1.is_empty() {
                    worst = (
                        rel,
                        format!("{q}{}", p.map(|p| format!(" p={p}")).unwrap_or_default()),
                    );
                }
                s.push(row![q.as_str(), *p, *h, *f, rel]);
            }
            ctx.table(s);
            ctx.check(
                "stable-under-doubling",
                worst.0 <= STABLE,
                format!("largest relative change {:.3} ({}) between {} and {} replicas (tolerance {STABLE})", worst.0, worst.1, all.len() / 2, all.len()),
            );
        }
    }

    if alpha_wanted {
        if cfg.model != ModelKind::Rd {
            return Err(Error::Config(
                "the alpha part is calibrated for the RD model only".into(),
            ));
        }
        let levels: Vec<i32> = ALPHA_LEVELS.rev().collect();
        let mut t = Table::new("alpha", &["tau", "mean_sup_norm"]);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (i, k) in levels.iter().enumerate() {
            let tau = 2f64.powi(-k);
            let mean = all.iter().map(|r| r.alpha_sups[i]).sum::<f64>() / all.len() as f64;
            t.push(row![tau, mean]);
            xs.push(tau.ln());
            ys.push(mean.ln());
        }
        ctx.table(t);
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let alpha = -sxy / sxx;
        ctx.check(
            "alpha-range",
            alpha >= ALPHA_RANGE.0 && alpha <= ALPHA_RANGE.1,
            format!(
                "fitted exponent {alpha:.3} over tau = 2^-10..2^-5 (want [{}, {}])",
                ALPHA_RANGE.0, ALPHA_RANGE.1
            ),
        );
    }
    Ok(())
}
