//! Trajectories of the Galerkin system and, for a linear drift, the
//! Ornstein-Uhlenbeck mean and variance per mode.

use serde::{Deserialize, Serialize};

use super::config::is_linear;
use super::{row, Context, Table};
use crate::error::Result;
use crate::sde::{integrate, WienerPath};
use crate::spectral::norm_s;

/// Relative tolerance of the Monte Carlo variance check.
const OU_TOL: f64 = 0.05;

#[derive(Serialize, Deserialize)]
struct Rep {
    diverged: Option<usize>,
    last: Vec<f64>,
    sup_v: f64,
}

pub(super) fn run(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.cfg;
    let (spde, u0) = cfg.spde()?;
    let lambda = spde.basis.eigenvalues.clone();
    let seeds = ctx.seeds("paths", cfg.replicas);
    let reps: Vec<Rep> = ctx.replicate("paths", cfg.replicas, |_, seed| {
        let w = WienerPath::sample(spde.d(), cfg.t_final, cfg.steps, seed)?;
        let tr = integrate(&spde, &u0, &w)?;
        let sup_v = tr
            .states
            .iter()
            .map(|u| norm_s(&lambda, u, 0.5))
            .fold(0.0, f64::max);
        Ok(Rep {
            diverged: tr.diverged,
            last: tr.last().as_slice().to_vec(),
            sup_v,
        })
    })?;

    let mut paths = Table::new(
        "paths",
        &[
            "replica",
            "seed",
            "diverged_at",
            "final_h_norm",
            "final_v_norm",
            "sup_v_norm",
        ],
    );
    for (i, r) in reps.iter().enumerate() {
        let last = nalgebra::DVector::from_column_slice(&r.last);
        paths.push(row![
            i,
            seeds[i],
            r.diverged,
            last.norm(),
            norm_s(&lambda, &last, 0.5),
            r.sup_v
        ]);
    }
    ctx.table(paths);
    let diverged = reps.iter().filter(|r| r.diverged.is_some()).count();
    let finite = reps.iter().all(|r| {
        r.diverged.is_some() || (r.sup_v.is_finite() && r.last.iter().all(|x| x.is_finite()))
    });
    ctx.check(
        "no-divergence",
        diverged == 0,
        format!(
            "{diverged} of {} replicas crossed the blow-up threshold",
            reps.len()
        ),
    );
    ctx.check("finite-states", finite, "all non-diverged states finite");

    if cfg.wants("paths") {
        let shown = cfg.trajectory_replicas.min(cfg.replicas);
        let dim = spde.dim();
        let mut header: Vec<String> = vec!["replica".into(), "t".into()];
        header.extend((0..dim).map(|j| format!("u{j}")));
        let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut traj = Table::new("trajectory", &hdr);
        let stride = (cfg.steps / 256).max(1);
        for (i, &seed) in seeds.iter().enumerate().take(shown) {
            let w = WienerPath::sample(spde.d(), cfg.t_final, cfg.steps, seed)?;
            let tr = integrate(&spde, &u0, &w)?;
            for n in (0..=cfg.steps).step_by(stride) {
                let mut r = row![i, tr.time(n)];
                r.extend(tr.states[n].iter().map(|x| super::fmt_f64(*x)));
                traj.push(r);
            }
        }
        ctx.table(traj);
    }

    if cfg.wants("ou") && is_linear(&spde) && reps.len() >= 2 {
        let t = cfg.t_final;
        let ok: Vec<&Rep> = reps.iter().filter(|r| r.diverged.is_none()).collect();
        let n = ok.len() as f64;
        let mut table = Table::new(
            "ou",
            &[
                "mode",
                "lambda",
                "exact_mean",
                "mc_mean",
                "exact_var",
                "mc_var",
                "rel_err",
            ],
        );
        let mut worst = 0.0f64;
        let mut pass = true;
        for (j, &l) in lambda.iter().enumerate() {
            let exact_mean = (-l * t).exp() * u0[j];
            let exact_var: f64 = spde.g.iter().map(|g| g[j] * g[j]).sum::<f64>()
                * -(-2.0 * l * t).exp_m1()
                / (2.0 * l);
            let mean = ok.iter().map(|r| r.last[j]).sum::<f64>() / n;
            let var = ok.iter().map(|r| (r.last[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let rel = if exact_var > 0.0 {
                (var / exact_var - 1.0).abs()
            } else {
                var
            };
            if exact_var > 0.0 {
                worst = worst.max(rel);
                pass &= rel <= OU_TOL;
            } else {
                pass &= var <= 1e-24 * (1.0 + exact_mean * exact_mean);
            }
            table.push(row![j, l, exact_mean, mean, exact_var, var, rel]);
        }
        ctx.table(table);
        ctx.check(
            "ou-variance",
            pass,
            format!("worst relative variance error {worst:.4} over forced modes (tolerance {OU_TOL}), {} replicas", ok.len()),
        );
    }
    Ok(())
}
