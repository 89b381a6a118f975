//! Small-`Z` event inclusions on seeded paths, and the two real-variable
//! lemmas on random piecewise linear functions.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{row, Context, Table};
use crate::error::{Error, Result};
use crate::sde::{integrate, shifted_x, SpdeConfig, WienerPath};
use crate::wiener_poly::{
    all_tuples, evaluate_events_with_norm, integral_derivative_check, monomial_norm,
    norris_lp_check, pl_antiderivative_sup, random_pl, tuple_multiplicity, Coefficient,
    EventParams, InclusionStatus, Mp2Params, NorrisParams, WienerPolynomial,
};

const FAMILIES: [&str; 3] = ["rd-coefficients", "planted", "planted-damped"];
/// Slope of the planted coefficient `a(t) = 1 + PLANTED_SLOPE t`.
const PLANTED_SLOPE: f64 = 2e-5;
const DAMPING: f64 = 0.01;

pub(super) fn status_name(s: InclusionStatus) -> &'static str {
    match s {
        InclusionStatus::Vacuous => "vacuous",
        InclusionStatus::ViaBc => "via-bc",
        InclusionStatus::ViaF => "via-f",
        InclusionStatus::Violated => "violated",
        InclusionStatus::Unresolved => "unresolved",
    }
}

/// Coefficients read off the shifted RD state backwards in time, so they
/// are Lipschitz but not adapted.
fn rd_polynomial(
    n: usize,
    x: &[nalgebra::DVector<f64>],
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Result<WienerPolynomial> {
    let nodes = x.len();
    let dim = x[0].len();
    let mut z = WienerPolynomial::new(n, d)?;
    for t in all_tuples(n, d) {
        let c =
            10f64.powf(rng.random_range(-3.0..0.0)) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let j = rng.random_range(0..dim);
        let a: Vec<f64> = (0..nodes).map(|i| c * x[nodes - 1 - i][j]).collect();
        z.set(&t, Coefficient::Sampled(a))?;
    }
    Ok(z)
}

/// `Σ_t a(s) mult(t) W^t(s)` minus itself through the degree-0 slot, which
/// is identically zero with nonzero positive-degree coefficients.
fn planted_polynomial(n: usize, w: &WienerPath) -> Result<WienerPolynomial> {
    let d = w.d();
    let steps = w.steps();
    let a: Vec<f64> = (0..=steps)
        .map(|i| 1.0 + PLANTED_SLOPE * w.time(i))
        .collect();
    // [0], [0, 1], [0, 1, 2], … clipped to the available drivers
    let tuples: Vec<Vec<usize>> = (1..=n)
        .map(|len| (0..len).map(|k| k.min(d - 1)).collect())
        .collect();
    let mut z = WienerPolynomial::new(n, d)?;
    let mut constant = vec![0.0; steps + 1];
    for t in &tuples {
        let m = tuple_multiplicity(t);
        for (i, c) in constant.iter_mut().enumerate() {
            let mono: f64 = t.iter().map(|&k| w.value(k, i)).product();
            *c -= m * a[i] * mono;
        }
        z.set(t, Coefficient::Sampled(a.clone()))?;
    }
    z.set(&[], Coefficient::Sampled(constant))?;
    Ok(z)
}

#[derive(Serialize, Deserialize)]
struct EventRow {
    n: usize,
    eps: f64,
    sup_lhs: bool,
    sup_status: InclusionStatus,
    int_lhs: bool,
    int_status: InclusionStatus,
}

fn path_events(
    spde: &SpdeConfig,
    u0: &nalgebra::DVector<f64>,
    family: usize,
    seed: u64,
    t_final: f64,
    steps: usize,
    degrees: &[usize],
    eps_grid: &[f64],
) -> Result<Vec<EventRow>> {
    let d = spde.d();
    let mut w = WienerPath::sample(d, t_final, steps, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7);
    let x = if family == 0 {
        let tr = integrate(spde, u0, &w)?;
        if tr.diverged.is_some() {
            return Err(Error::NonFinite(
                "the RD path behind the event coefficients",
            ));
        }
        Some(shifted_x(&tr, &spde.g, &w)?)
    } else {
        if family == 2 {
            w = WienerPath::from_increments(t_final, w.increments() * DAMPING, seed)?;
        }
        None
    };
    let mut rows = Vec::new();
    for &n in degrees {
        let z = match &x {
            Some(x) => rd_polynomial(n, x, d, &mut rng)?,
            None => planted_polynomial(n, &w)?,
        };
        let norm = monomial_norm(&w, n);
        for &eps in eps_grid {
            let r = evaluate_events_with_norm(
                &z,
                &w,
                &EventParams {
                    eps,
                    n,
                    g0: 0.0,
                    tail: false,
                },
                norm,
            )?;
            rows.push(EventRow {
                n,
                eps,
                sup_lhs: r.sup_version.lhs,
                sup_status: r.sup_version.status,
                int_lhs: r.integral_version.lhs,
                int_status: r.integral_version.status,
            });
        }
    }
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct LemmaRep {
    norris: (bool, bool, bool),
    mp2: (bool, bool, bool),
}

pub(super) fn run(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.cfg;
    if cfg.wants("inclusions") {
        if cfg.eps_grid.iter().any(|e| !(*e > 0.0 && *e < 1.0)) || cfg.eps_grid.is_empty() {
            return Err(Error::Config(
                "events need eps_grid values in (0, 1)".into(),
            ));
        }
        let (spde, u0) = cfg.spde()?;
        let seeds = ctx.seeds("inclusions", cfg.replicas);
        let reps: Vec<Vec<EventRow>> = ctx.replicate("inclusions", cfg.replicas, |i, seed| {
            path_events(
                &spde,
                &u0,
                i % FAMILIES.len(),
                seed,
                cfg.t_final,
                cfg.steps,
                &cfg.event_degrees,
                &cfg.eps_grid,
            )
        })?;
        let mut t = Table::new(
            "inclusions",
            &[
                "replica",
                "seed",
                "family",
                "n",
                "eps",
                "sup_lhs",
                "sup_status",
                "int_lhs",
                "int_status",
            ],
        );
        let mut counts: BTreeMap<(&str, &str, usize, &str), usize> = BTreeMap::new();
        for (i, rows) in reps.iter().enumerate() {
            let fam = FAMILIES[i % FAMILIES.len()];
            for r in rows {
                t.push(row![
                    i,
                    seeds[i],
                    fam,
                    r.n,
                    r.eps,
                    r.sup_lhs,
                    status_name(r.sup_status),
                    r.int_lhs,
                    status_name(r.int_status)
                ]);
                *counts
                    .entry((fam, "sup", r.n, status_name(r.sup_status)))
                    .or_default() += 1;
                *counts
                    .entry((fam, "integral", r.n, status_name(r.int_status)))
                    .or_default() += 1;
            }
        }
        ctx.table(t);
        let mut c = Table::new(
            "status_counts",
            &["family", "version", "n", "status", "count"],
        );
        let (mut violated, mut unresolved, mut decided) = (0, BTreeMap::new(), 0);
        for (&(fam, version, n, status), &k) in &counts {
            c.push(row![fam, version, n, status, k]);
            match status {
                "violated" => violated += k,
                "unresolved" => *unresolved.entry((version, n)).or_insert(0) += k,
                "via-bc" | "via-f" => decided += k,
                _ => {}
            }
        }
        ctx.table(c);
        let unresolved: Vec<String> = unresolved
            .iter()
            .map(|((v, n), k)| format!("{v} n={n}: {k}"))
            .collect();
        ctx.check(
            "no-violations",
            violated == 0,
            format!(
                "{violated} violated inclusions over {} paths x {} eps x {:?}; unresolved (grid too coarse) {}",
                reps.len(),
                cfg.eps_grid.len(),
                cfg.event_degrees,
                if unresolved.is_empty() { "none".to_string() } else { unresolved.join(", ") }
            ),
        );
        ctx.check(
            "exercised",
            decided > 0,
            format!("{decided} non-vacuous inclusions decided by B^c or F"),
        );
    }

    if cfg.wants("lemmas") && cfg.lemma_trials > 0 {
        let reps: Vec<LemmaRep> = ctx.replicate("lemmas", cfg.lemma_trials, |_, seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let knots = rng.random_range(2..48);
            let t = rng.random_range(1.0..4.0);
            let f = random_pl(&mut rng, knots);
            let rho = rng.random_range(0.05..1.0);
            let np = NorrisParams {
                l: [1.0, 2.0, 4.0][rng.random_range(0..3)],
                rho,
                gamma: rng.random_range(0.0..rho),
                eps: 10f64.powf(rng.random_range(-8.0..0.0)),
                c: rng.random_range(0.1..10.0),
            };
            let o = norris_lp_check(&f, t, &np)?;
            let h = random_pl(&mut rng, knots);
            let alpha = rng.random_range(0.05..1.0);
            let mp = Mp2Params {
                alpha,
                gamma: rng.random_range(1e-3..alpha),
                c: rng.random_range(0.1..10.0),
                eps: 10f64.powf(rng.random_range(-8.0..0.0)),
            };
            let g0 = -pl_antiderivative_sup(0.0, &h, t / (knots - 1) as f64)
                * rng.random_range(0.0..1.0);
            let q = integral_derivative_check(g0, &h, t, &mp)?;
            Ok(LemmaRep {
                norris: (o.hypotheses, o.in_scope, o.holds),
                mp2: (q.hypotheses, q.in_scope, q.holds),
            })
        })?;
        let mut t = Table::new(
            "lemmas",
            &["lemma", "trials", "active", "in_scope", "counterexamples"],
        );
        for (name, pick) in [("lp-to-sup", 0), ("integral-to-derivative", 1)] {
            let outcomes = reps
                .iter()
                .map(|r| if pick == 0 { r.norris } else { r.mp2 });
            let (mut active, mut scope, mut bad) = (0, 0, 0);
            for (hyp, in_scope, holds) in outcomes {
                active += hyp as usize;
                scope += in_scope as usize;
                bad += (in_scope && !holds) as usize;
            }
            t.push(row![name, reps.len(), active, scope, bad]);
            ctx.check(
                &format!("{name}-no-counterexample"),
                bad == 0 && active > 0,
                format!("{bad} counterexamples in {} trials ({active} with active hypotheses, {scope} in scope)", reps.len()),
            );
        }
        ctx.table(t);
    }
    Ok(())
}
