//! Quadratic variation of constant-coefficient Wiener polynomials against
//! the closed form, the energy identity, and the Ito split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{median, row, Context, Table};
use crate::error::{Error, Result};
use crate::sde::WienerPath;
use crate::wiener_poly::{
    all_tuples, discrete_qv, evaluate_z, ito_decompose, qv_formula, reduced_energy, Coefficient,
    WienerPolynomial,
};

const MEDIAN_TOL: f64 = 0.02;
const ENERGY_TOL: f64 = 1e-10;
const IDENTITY_TOL: f64 = 1e-12;
/// Martingale means must sit inside this many standard errors of zero.
const CLT_BAND: f64 = 3.0;

/// Every coefficient of degree `1..=n` uniform in `[-1, 1]`, plus a constant.
pub(super) fn random_constant_poly(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
) -> Result<WienerPolynomial> {
    let mut z = WienerPolynomial::new(n, d)?;
    for t in all_tuples(n, d) {
        z.set(&t, Coefficient::Constant(rng.random_range(-1.0..1.0)))?;
    }
    Ok(z)
}

fn poly(n: usize, d: usize, terms: &[(&[usize], f64)]) -> Result<WienerPolynomial> {
    let mut z = WienerPolynomial::new(n, d)?;
    for (t, c) in terms {
        z.add_monomial(t, *c)?;
    }
    Ok(z)
}

#[derive(Serialize, Deserialize)]
struct QvRep {
    /// `(degree, formula, discrete, energy via formula, energy via reduction)`.
    rows: Vec<(usize, f64, f64, f64, f64)>,
}

pub(super) fn run(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.cfg;
    let d = cfg.poly_d;
    if d == 0 || cfg.poly_degree == 0 {
        return Err(Error::Config(
            "poly_d and poly_degree must be at least 1".into(),
        ));
    }

    if cfg.wants("qv") {
        let seeds = ctx.seeds("qv", cfg.replicas);
        let reps: Vec<QvRep> = ctx.replicate("qv", cfg.replicas, |_, seed| {
            let w = WienerPath::sample(d, cfg.t_final, cfg.steps, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9f);
            let window = (0, cfg.steps);
            let mut rows = Vec::new();
            for n in 1..=cfg.poly_degree {
                let z1 = random_constant_poly(&mut rng, n, d)?;
                let z2 = random_constant_poly(&mut rng, n, d)?;
                let (v1, v2) = (evaluate_z(&z1, &w)?, evaluate_z(&z2, &w)?);
                let formula = qv_formula(&z1, &z2, &w, window)?;
                let discrete = discrete_qv(&v1, &v2, 1)?;
                let e_formula = qv_formula(&z1, &z1, &w, window)?;
                let e_reduced = reduced_energy(&z1, &w, window)?;
                rows.push((n, formula, discrete, e_formula, e_reduced));
            }
            Ok(QvRep { rows })
        })?;
        let mut t = Table::new(
            "qv",
            &[
                "replica",
                "seed",
                "degree",
                "formula",
                "discrete",
                "rel_err",
                "energy_formula",
                "energy_reduced",
                "energy_rel",
            ],
        );
        let mut by_degree = vec![Vec::new(); cfg.poly_degree + 1];
        let mut energy_worst = 0.0f64;
        for (i, r) in reps.iter().enumerate() {
            for &(n, f, dq, ef, er) in &r.rows {
                let rel = ((dq - f) / f).abs();
                let erel = ((ef - er) / er).abs();
                by_degree[n].push(rel);
                energy_worst = energy_worst.max(erel);
                t.push(row![i, seeds[i], n, f, dq, rel, ef, er, erel]);
            }
        }
        ctx.table(t);
        let medians: Vec<f64> = by_degree[1..].iter().map(|v| median(v)).collect();
        let worst = medians.iter().copied().fold(0.0, f64::max);
        ctx.check(
            "qv-matches-formula",
            worst <= MEDIAN_TOL,
            format!(
                "median relative error per degree {:?} (tolerance {MEDIAN_TOL}) at mesh {:e}, {} seeds",
                medians.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>(),
                cfg.t_final / cfg.steps as f64,
                reps.len()
            ),
        );
        ctx.check(
            "energy-identity",
            energy_worst <= ENERGY_TOL,
            format!("worst relative gap {energy_worst:.2e} (tolerance {ENERGY_TOL:e})"),
        );
    }

    if cfg.wants("ito") && cfg.ito_replicas > 0 {
        let steps = if cfg.ito_steps > 0 {
            cfg.ito_steps
        } else {
            cfg.steps
        };
        let mut prng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x170);
        let cases: Vec<(&str, WienerPolynomial)> = vec![
            ("w0^2", poly(2, d, &[(&[0, 0], 1.0)])?),
            (
                "w0^3+w0*w1",
                poly(3, d, &[(&[0, 0, 0], 1.0), (&[0, d.min(2) - 1], 1.0)])?,
            ),
            (
                "random-degree-4",
                random_constant_poly(&mut prng, cfg.poly_degree.min(4), d)?,
            ),
        ];
        // identities: V for W0² is t, for W0³ is 3∫W0
        let w = WienerPath::sample(d, cfg.t_final, steps, ctx.seeds("ito-identity", 1)[0])?;
        let sq = ito_decompose(&cases[0].1, &w, 0)?;
        let err_sq =
            sq.v.iter()
                .enumerate()
                .map(|(i, v)| (v - w.time(i)).abs())
                .fold(0.0, f64::max);
        let err_m =
            sq.m.iter()
                .enumerate()
                .map(|(i, m)| (m - (w.value(0, i).powi(2) - w.time(i))).abs())
                .fold(0.0, f64::max);
        let cube = ito_decompose(&poly(3, d, &[(&[0, 0, 0], 1.0)])?, &w, 0)?;
        let mut acc = 0.0;
        let mut err_cube = cube.v[0].abs();
        for i in 1..=steps {
            acc += 0.5 * w.dt() * (w.value(0, i - 1) + w.value(0, i));
            err_cube = err_cube.max((cube.v[i] - 3.0 * acc).abs());
        }
        let mut t = Table::new("ito_identities", &["case", "max_abs_err"]);
        t.push(row!["V(w0^2) - t", err_sq]);
        t.push(row!["M(w0^2) - (w0^2 - t)", err_m]);
        t.push(row!["V(w0^3) - 3 int w0", err_cube]);
        ctx.table(t);
        let id_ok = err_sq <= IDENTITY_TOL
            && err_m <= IDENTITY_TOL
            && err_cube <= IDENTITY_TOL * (1.0 + acc.abs());
        ctx.check(
            "ito-identities",
            id_ok,
            format!("W0^2 - t: {err_sq:.1e} / {err_m:.1e}; W0^3: {err_cube:.1e}"),
        );

        let finals: Vec<Vec<f64>> = ctx.replicate("ito", cfg.ito_replicas, |_, seed| {
            let w = WienerPath::sample(d, cfg.t_final, steps, seed)?;
            cases
                .iter()
                .map(|(_, z)| Ok(*ito_decompose(z, &w, 0)?.m.last().expect("nonempty")))
                .collect()
        })?;
        let n = finals.len() as f64;
        let mut t = Table::new(
            "ito_martingale",
            &["case", "replicas", "mean", "std", "z_score"],
        );
        let mut ok = true;
        let mut zs = Vec::new();
        for (c, (name, _)) in cases.iter().enumerate() {
            let mean = finals.iter().map(|f| f[c]).sum::<f64>() / n;
            let sd = (finals.iter().map(|f| (f[c] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let z = mean / (sd / n.sqrt());
            ok &= z.abs() <= CLT_BAND;
            zs.push(format!("{name}: {z:.2}"));
            t.push(row![*name, finals.len(), mean, sd, z]);
        }
        ctx.table(t);
        ctx.check(
            "martingale-mean-zero",
            ok,
            format!(
                "z-scores of E[M(T)] {zs:?} (band {CLT_BAND} sigma), {} seeds",
                finals.len()
            ),
        );
    }
    Ok(())
}
