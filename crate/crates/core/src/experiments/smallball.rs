//! Empirical lower tail of `inf_cone` over seeded replicas.

use super::config::Expect;
use super::{row, Context, Table};
use crate::error::{Error, Result};
use crate::malliavin::{smallball_replica, smallball_table, SmallBallSetup, RESOLVED_MIN};

/// Frequency that counts as "almost surely small" for a degenerate `S`.
const DEGENERATE_P: f64 = 0.99;

pub(super) fn run(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.cfg;
    if cfg.eps_grid.is_empty() {
        return Err(Error::Config("smallball needs a nonempty eps_grid".into()));
    }
    let (spde, u0) = cfg.spde()?;
    let setup = SmallBallSetup {
        s: cfg.subspace(&spde.basis)?,
        cfg: spde,
        u0,
        t_final: cfg.t_final,
        steps: cfg.steps,
        delta: cfg.delta,
        eps_grid: cfg.eps_grid.clone(),
    };
    let seeds = ctx.seeds("replicas", cfg.replicas);
    let reps: Vec<Option<(f64, f64)>> = ctx.replicate("replicas", cfg.replicas, |_, seed| {
        smallball_replica(&setup, seed)
    })?;

    let mut samples = Table::new(
        "samples",
        &[
            "replica",
            "seed",
            "diverged",
            "inf_cone",
            "dual_lower_bound",
        ],
    );
    for (i, r) in reps.iter().enumerate() {
        samples.push(row![
            i,
            seeds[i],
            r.is_none(),
            r.map(|v| v.0),
            r.map(|v| v.1)
        ]);
    }
    ctx.table(samples);
    let values: Vec<f64> = reps.iter().flatten().map(|v| v.0).collect();
    let diverged = reps.len() - values.len();
    if values.is_empty() {
        ctx.check("replicas-finished", false, "every replica diverged");
        return Ok(());
    }
    let table = smallball_table(&values, &cfg.eps_grid, diverged)?;
    let mut t = Table::new(
        "smallball",
        &[
            "eps",
            "hits",
            "n",
            "p",
            "wilson_lo",
            "wilson_hi",
            "resolved",
        ],
    );
    for r in &table.rows {
        let resolved = r.hits >= RESOLVED_MIN && r.n - r.hits >= RESOLVED_MIN;
        t.push(row![r.eps, r.hits, r.n, r.p, r.lo, r.hi, resolved]);
    }
    ctx.table(t);
    ctx.check(
        "replicas-finished",
        diverged == 0,
        format!("{} finished, {diverged} diverged", values.len()),
    );
    ctx.check(
        "monotone-in-eps",
        table.monotone,
        "empirical frequency nonincreasing as eps decreases",
    );
    match cfg.expect {
        Expect::Degenerate => {
            let pmin = table.rows.iter().map(|r| r.p).fold(1.0, f64::min);
            ctx.check(
                "degenerate-mass",
                pmin >= DEGENERATE_P,
                format!("smallest frequency over the grid {pmin:.3} (want >= {DEGENERATE_P})"),
            );
        }
        _ => {
            let slope = table.slope;
            ctx.check(
                "tail-slope",
                slope.is_some_and(|s| s >= 1.0),
                match slope {
                    Some(s) => format!(
                        "log-log slope {s:.3} over {} resolved rows (want >= 1)",
                        table.resolved
                    ),
                    None => format!("only {} resolved rows; need 2 for a slope", table.resolved),
                },
            );
        }
    }
    Ok(())
}
