//! Duality between the linearized flow and its adjoint under refinement, and
//! the Malliavin derivative and second variation against finite differences.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::linearized_control;
use super::{row, Context, Table};
use crate::error::Result;
use crate::sde::{integrate, SpdeConfig, WienerPath};
use crate::variation::{AdjointScheme, FlowBundle};

/// A halving gap ratio within ±20% of one half.
const HALVING: (f64, f64) = (0.4, 0.6);
const EXACT_TOL: f64 = 1e-12;
const FD_TOL: f64 = 1e-3;
const MIXED_TOL: f64 = 1e-2;

/// Random unit vector with coefficients decaying like `1/(1+i)`.
pub(super) fn smooth_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| rng.random_range(-1.0..1.0) / (1.0 + i as f64)).normalize()
}

#[derive(Serialize, Deserialize)]
struct DualityRep {
    diverged: bool,
    gap_coarse: f64,
    gap_fine: f64,
    gap_discrete: f64,
    gap_linear: f64,
}

fn gap(
    cfg: &SpdeConfig,
    u0: &DVector<f64>,
    w: &WienerPath,
    adj: AdjointScheme,
    phi: &DVector<f64>,
    psi: &DVector<f64>,
) -> Result<Option<f64>> {
    let tr = integrate(cfg, u0, w)?;
    if tr.diverged.is_some() {
        return Ok(None);
    }
    let b = FlowBundle::new(cfg, &tr, adj)?;
    Ok(Some(b.duality_gap(0, w.steps(), phi, psi)?))
}

#[derive(Serialize, Deserialize)]
struct FdRep {
    diverged: bool,
    /// `(|D|, relative error)` per direction.
    directions: Vec<(f64, f64)>,
    second: (f64, f64),
}

pub(super) fn run(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.cfg;
    let (spde, u0) = cfg.spde()?;
    let dim = spde.dim();
    let steps = cfg.steps;
    let dt = cfg.t_final / steps as f64;

    if cfg.wants("duality") {
        let lin = linearized_control(&spde);
        let seeds = ctx.seeds("duality", cfg.replicas);
        let reps: Vec<DualityRep> = ctx.replicate("duality", cfg.replicas, |_, seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let (phi, psi) = (smooth_unit(&mut rng, dim), smooth_unit(&mut rng, dim));
            let fine = WienerPath::sample(spde.d(), cfg.t_final, 2 * steps, seed)?;
            let coarse = fine.coarsen(2)?;
            let gc = gap(&spde, &u0, &coarse, AdjointScheme::Continuous, &phi, &psi)?;
            let gf = gap(&spde, &u0, &fine, AdjointScheme::Continuous, &phi, &psi)?;
            let gd = gap(&spde, &u0, &coarse, AdjointScheme::Discrete, &phi, &psi)?;
            let gl = gap(&lin, &u0, &coarse, AdjointScheme::Continuous, &phi, &psi)?;
            Ok(match (gc, gf, gd, gl) {
                (Some(a), Some(b), Some(c), Some(d)) => DualityRep {
                    diverged: false,
                    gap_coarse: a,
                    gap_fine: b,
                    gap_discrete: c,
                    gap_linear: d,
                },
                _ => DualityRep {
                    diverged: true,
                    gap_coarse: f64::NAN,
                    gap_fine: f64::NAN,
                    gap_discrete: f64::NAN,
                    gap_linear: f64::NAN,
                },
            })
        })?;
        let mut t = Table::new(
            "duality",
            &[
                "replica",
                "seed",
                "steps",
                "gap_coarse",
                "gap_fine",
                "ratio",
                "c_coarse",
                "c_fine",
                "gap_discrete",
                "gap_linear",
            ],
        );
        let (mut rmin, mut rmax, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        let (mut dmax, mut lmax) = (0.0f64, 0.0f64);
        let diverged = reps.iter().filter(|r| r.diverged).count();
        for (i, r) in reps.iter().enumerate() {
            let ratio = r.gap_fine / r.gap_coarse;
            t.push(row![
                i,
                seeds[i],
                steps,
                r.gap_coarse,
                r.gap_fine,
                ratio,
                r.gap_coarse / dt,
                r.gap_fine / (dt / 2.0),
                r.gap_discrete,
                r.gap_linear
            ]);
            if !r.diverged {
                rmin = rmin.min(ratio);
                rmax = rmax.max(ratio);
                cmax = cmax.max(r.gap_coarse / dt);
                dmax = dmax.max(r.gap_discrete);
                lmax = lmax.max(r.gap_linear);
            }
        }
        ctx.table(t);
        let halving = diverged == 0 && rmin >= HALVING.0 && rmax <= HALVING.1;
        ctx.check(
            "duality-gap-halves",
            halving,
            format!(
                "gap ratio per doubling in [{rmin:.3}, {rmax:.3}] (want [{}, {}]), gap <= C dt with C = {cmax:.3e}, {} seeds, {diverged} diverged",
                HALVING.0,
                HALVING.1,
                reps.len()
            ),
        );
        ctx.check(
            "duality-linear-exact",
            lmax <= EXACT_TOL,
            format!("max gap with N = 0: {lmax:.2e} (tolerance {EXACT_TOL:e})"),
        );
        ctx.check(
            "duality-discrete-exact",
            dmax <= EXACT_TOL,
            format!("max gap of the discrete adjoint: {dmax:.2e}"),
        );
    }

    if (cfg.wants("fd") || cfg.wants("second")) && cfg.fd_seeds > 0 {
        let d = spde.d();
        let seeds = ctx.seeds("fd", cfg.fd_seeds);
        let reps: Vec<FdRep> = ctx.replicate("fd", cfg.fd_seeds, |_, seed| {
            let w = WienerPath::sample(d, cfg.t_final, steps, seed)?;
            let tr = integrate(&spde, &u0, &w)?;
            if tr.diverged.is_some() {
                return Ok(FdRep {
                    diverged: true,
                    directions: vec![],
                    second: (f64::NAN, f64::NAN),
                });
            }
            let b = FlowBundle::new(&spde, &tr, AdjointScheme::Discrete)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
            let mut directions = Vec::with_capacity(cfg.directions);
            for _ in 0..cfg.directions {
                let h = DMatrix::from_fn(d, steps, |_, _| rng.random_range(-1.0..1.0));
                let dv = b.malliavin_derivative(&h)?;
                let up = integrate(&spde, &u0, &w.shifted(&h, cfg.bump)?)?;
                let um = integrate(&spde, &u0, &w.shifted(&h, -cfg.bump)?)?;
                let fd = (up.last() - um.last()) / (2.0 * cfg.bump);
                directions.push((dv.norm(), (&fd - &dv).norm() / dv.norm()));
            }
            // second variation at two increments, against a four-point mixed difference
            let (i1, i2) = (steps / 5, steps / 2);
            let (k1, k2) = (0, 1 % d);
            let v2 = b.higher_variation(
                &[i1 + 1, i2 + 1],
                &[b.sg[k1].clone(), b.sg[k2].clone()],
                steps,
            )?;
            let e = cfg.mixed_bump;
            let bumped = |a: f64, c: f64| -> Result<DVector<f64>> {
                let mut inc = w.increments().clone();
                inc[(k1, i1)] += a;
                inc[(k2, i2)] += c;
                let wp = WienerPath::from_increments(cfg.t_final, inc, seed)?;
                Ok(integrate(&spde, &u0, &wp)?.last().clone())
            };
            let mixed =
                (bumped(e, e)? - bumped(e, -e)? - bumped(-e, e)? + bumped(-e, -e)?) / (4.0 * e * e);
            let second = (v2.norm(), (&mixed - &v2).norm() / v2.norm());
            Ok(FdRep {
                diverged: false,
                directions,
                second,
            })
        })?;
        let diverged = reps.iter().filter(|r| r.diverged).count();
        if cfg.wants("fd") {
            let mut t = Table::new(
                "fd",
                &["replica", "seed", "direction", "derivative_norm", "rel_err"],
            );
            let mut worst = 0.0f64;
            for (i, r) in reps.iter().enumerate() {
                for (j, (n, e)) in r.directions.iter().enumerate() {
                    t.push(row![i, seeds[i], j, *n, *e]);
                    worst = worst.max(if e.is_finite() { *e } else { f64::INFINITY });
                }
            }
            ctx.table(t);
            ctx.check(
                "derivative-vs-finite-difference",
                diverged == 0 && worst <= FD_TOL,
                format!(
                    "worst relative error {worst:.2e} at bump {:e} over {} directions x {} seeds (tolerance {FD_TOL:e})",
                    cfg.bump,
                    cfg.directions,
                    reps.len()
                ),
            );
        }
        if cfg.wants("second") {
            let mut t = Table::new(
                "second_variation",
                &["replica", "seed", "variation_norm", "rel_err"],
            );
            let mut worst = 0.0f64;
            for (i, r) in reps.iter().enumerate() {
                t.push(row![i, seeds[i], r.second.0, r.second.1]);
                worst = worst.max(if r.second.1.is_finite() {
                    r.second.1
                } else {
                    f64::INFINITY
                });
            }
            ctx.table(t);
            ctx.check(
                "second-variation-vs-mixed-difference",
                diverged == 0 && worst <= MIXED_TOL,
                format!(
                    "worst relative error {worst:.2e} at bump {:e} (tolerance {MIXED_TOL:e})",
                    cfg.mixed_bump
                ),
            );
        }
    }
    Ok(())
}
