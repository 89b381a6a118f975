//! Jacobi spectrum of the full Malliavin matrix, checked against a
//! reference eigensolver and, when `S` is given, against the projected
//! assembly.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{row, Context, Table};
use crate::error::Result;
use crate::malliavin::{assemble_forward, forward_full, spectrum};
use crate::sde::{integrate, WienerPath};
use crate::variation::{AdjointScheme, FlowBundle};

const RESIDUAL_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

#[derive(Serialize, Deserialize)]
struct Rep {
    diverged: bool,
    values: Vec<f64>,
    residuals: Vec<f64>,
    norm: f64,
    reference_gap: f64,
    projection_gap: Option<f64>,
}

pub(super) fn run(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.cfg;
    let (spde, u0) = cfg.spde()?;
    let s = if cfg.s_modes.is_empty() {
        None
    } else {
        Some(cfg.subspace(&spde.basis)?)
    };
    let seeds = ctx.seeds("spectrum", cfg.replicas);
    let reps: Vec<Rep> = ctx.replicate("spectrum", cfg.replicas, |_, seed| {
        let w = WienerPath::sample(spde.d(), cfg.t_final, cfg.steps, seed)?;
        let tr = integrate(&spde, &u0, &w)?;
        if tr.diverged.is_some() {
            return Ok(Rep {
                diverged: true,
                values: vec![],
                residuals: vec![],
                norm: f64::NAN,
                reference_gap: f64::NAN,
                projection_gap: None,
            });
        }
        let b = FlowBundle::new(&spde, &tr, AdjointScheme::Discrete)?;
        let m = forward_full(&b);
        let sp = spectrum(&m)?;
        let residuals = (0..m.nrows())
            .map(|i| {
                let v = sp.vectors.column(i);
                (&m * v - v * sp.values[i]).norm()
            })
            .collect();
        let mut reference: Vec<f64> = SymmetricEigen::new(m.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        reference.sort_by(f64::total_cmp);
        let reference_gap = sp
            .values
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let projection_gap = match &s {
            Some(s) => {
                let p = DMatrix::from_columns(s);
                let sub = p.transpose() * &m * &p;
                Some((sub - assemble_forward(&b, s)?.entries).norm())
            }
            None => None,
        };
        Ok(Rep {
            diverged: false,
            values: sp.values,
            residuals,
            norm: m.norm(),
            reference_gap,
            projection_gap,
        })
    })?;

    let mut t = Table::new(
        "spectrum",
        &["replica", "seed", "index", "eigenvalue", "residual"],
    );
    let (mut res_ok, mut psd_ok, mut ref_ok, mut proj_ok) = (true, true, true, true);
    let (mut worst_res, mut smallest) = (0.0f64, f64::INFINITY);
    let mut diverged = 0;
    for (i, r) in reps.iter().enumerate() {
        if r.diverged {
            diverged += 1;
            continue;
        }
        for (j, (v, res)) in r.values.iter().zip(&r.residuals).enumerate() {
            t.push(row![i, seeds[i], j, *v, *res]);
            worst_res = worst_res.max(res / r.norm);
            res_ok &= *res <= RESIDUAL_TOL * r.norm;
        }
        smallest = smallest.min(r.values[0] / r.norm);
        psd_ok &= r.values[0] >= -PSD_TOL * r.norm;
        ref_ok &= r.reference_gap <= RESIDUAL_TOL * r.norm;
        if let Some(g) = r.projection_gap {
            proj_ok &= g <= 1e-12 * r.norm;
        }
    }
    ctx.table(t);
    ctx.check(
        "no-divergence",
        diverged == 0,
        format!("{diverged} of {} replicas diverged", reps.len()),
    );
    ctx.check(
        "eigen-residuals",
        res_ok,
        format!("max |Mv - lambda v| / |M| = {worst_res:.2e} (tolerance {RESIDUAL_TOL:e})"),
    );
    ctx.check(
        "positive-semidefinite",
        psd_ok,
        format!("smallest eigenvalue / |M| = {smallest:.2e} (tolerance -{PSD_TOL:e})"),
    );
    ctx.check(
        "jacobi-matches-reference",
        ref_ok,
        "eigenvalues agree with a reference symmetric eigensolver",
    );
    if s.is_some() {
        ctx.check(
            "projection-consistency",
            proj_ok,
            "projected assembly equals the principal block of the full matrix",
        );
    }
    Ok(())
}
