//! Rank growth of the bracket spans, their provenance, and the lattice
//! condition for Navier-Stokes forcing.

use nalgebra::DVector;

use super::config::{Expect, ModelKind};
use super::{row, Context, Table};
use crate::brackets::{grow_span, multisets, ns_condition, BracketMode, Origin};
use crate::error::Result;

/// First-generation brackets below this are exact cancellations.
const ZERO_BRACKET: f64 = 1e-12;

pub(super) fn run(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.cfg;
    let model = cfg.build_model()?;
    let gs = cfg.forcing(&model.basis)?;
    let dim = model.dim();
    let growth = grow_span(
        &gs,
        &model.nonlinear,
        cfg.max_bracket_steps,
        BracketMode::TopDegree,
        cfg.rank_tol,
    )?;
    let ranks = growth.ranks();
    let last = *ranks.last().expect("at least one level");

    // largest first-generation bracket N_m(g_{k_1}, …, g_{k_m})
    let mut first_gen = 0.0f64;
    if let Some(form) = model.nonlinear.forms().last() {
        for ks in multisets(gs.len(), form.degree()) {
            let args: Vec<&[f64]> = ks.iter().map(|&k| gs[k].as_slice()).collect();
            let mut out = vec![0.0; dim];
            form.eval_multi(&args, &mut out);
            first_gen = first_gen.max(DVector::from_vec(out).norm());
        }
    }

    if cfg.wants("span") {
        let mut t = Table::new("ranks", &["n", "rank", "new_modes"]);
        let mut prev = 0;
        for (n, &r) in ranks.iter().enumerate() {
            t.push(row![n + 1, r, r - prev]);
            prev = r;
        }
        ctx.table(t);
        let mut p = Table::new(
            "provenance",
            &["index", "step", "origin", "degree", "parent", "generators"],
        );
        for (i, pr) in growth.last().provenance.iter().enumerate() {
            match &pr.origin {
                Origin::Generator { k } => {
                    p.push(row![i, pr.step, "generator", "", "", k.to_string()])
                }
                Origin::Bracket { degree, parent, ks } => {
                    let g: Vec<String> = ks.iter().map(|k| k.to_string()).collect();
                    p.push(row![i, pr.step, "bracket", *degree, *parent, g.join(" ")])
                }
            }
        }
        ctx.table(p);
        ctx.check(
            "saturated",
            growth.saturated,
            format!("ranks {ranks:?} of {dim}"),
        );
    }

    let cond = if cfg.model == ModelKind::Ns && !cfg.z0.is_empty() {
        // the config names each ± pair once
        let z: Vec<(i32, i32)> = cfg
            .z0
            .iter()
            .flat_map(|p| [(p[0], p[1]), (-p[0], -p[1])])
            .collect();
        Some(ns_condition(&z)?)
    } else {
        None
    };
    if cfg.wants("condition") {
        let mut t = Table::new(
            "condition",
            &["generates_z2", "unequal_norms", "first_generation_max"],
        );
        t.push(row![
            cond.map(|c| c.generates_z2),
            cond.map(|c| c.unequal_norms),
            first_gen
        ]);
        ctx.table(t);
    }

    match cfg.expect {
        Expect::FullRank => {
            ctx.check(
                "full-rank",
                last == dim && growth.saturated,
                format!("final rank {last} of {dim}"),
            );
            if let Some(c) = cond {
                ctx.check(
                    "lattice-condition",
                    c.generates_z2 && c.unequal_norms,
                    format!("{c:?}"),
                );
            }
        }
        Expect::Deficient => {
            ctx.check(
                "rank-deficient",
                last < dim && growth.saturated,
                format!("saturated at rank {last} of {dim}"),
            );
            if let Some(c) = cond {
                ctx.check(
                    "lattice-condition-fails",
                    !(c.generates_z2 && c.unequal_norms),
                    format!("{c:?}"),
                );
                ctx.check(
                    "first-generation-vanishes",
                    first_gen <= ZERO_BRACKET,
                    format!("largest first-generation bracket {first_gen:.2e} (tolerance {ZERO_BRACKET:e})"),
                );
            }
        }
        _ => {}
    }
    Ok(())
}
