//! Small-`Z` event inclusions on one path, and the two real-variable lemmas
//! on a random piecewise linear function.
//!
//!     cargo run --release --example events

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spdelab::sde::WienerPath;
use spdelab::wiener_poly::{
    evaluate_events, integral_derivative_check, norris_lp_check, random_pl, Coefficient,
    EventParams, Mp2Params, NorrisParams, WienerPolynomial,
};

fn needs(steps: u64) -> String {
    if steps == u64::MAX {
        "an out-of-reach grid".into()
    } else {
        format!("{steps} steps")
    }
}

fn main() -> spdelab::Result<()> {
    let w = WienerPath::from_increments(
        1.0,
        WienerPath::sample(2, 1.0, 1 << 14, 1)?.increments() * 0.01,
        1,
    )?;
    // a(t)(W0 - W0) with a nonzero coefficient: Z vanishes while a does not
    let a: Vec<f64> = (0..=w.steps()).map(|i| 1.0 + 1e-5 * w.time(i)).collect();
    let mut z = WienerPolynomial::new(1, 2)?;
    z.set(&[0], Coefficient::Sampled(a.clone()))?;
    z.set(
        &[],
        Coefficient::Sampled(
            a.iter()
                .enumerate()
                .map(|(i, c)| -c * w.value(0, i))
                .collect(),
        ),
    )?;

    for eps in [0.25, 0.0625, 0.015625] {
        let r = evaluate_events(
            &z,
            &w,
            &EventParams {
                eps,
                n: 1,
                g0: 0.0,
                tail: false,
            },
        )?;
        // unresolved: the partition needs more steps than the path has
        println!(
            "eps {eps}: sup version {:?} (partition needs {}), integral version {:?} (partition needs {})",
            r.sup_version.status,
            needs(r.sup_version.partition.required_steps),
            r.integral_version.status,
            needs(r.integral_version.partition.required_steps)
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = random_pl(&mut rng, 24);
    let o = norris_lp_check(
        &f,
        2.0,
        &NorrisParams {
            l: 2.0,
            rho: 0.5,
            gamma: 0.25,
            eps: 1e-4,
            c: 1.0,
        },
    )?;
    println!(
        "Lp-to-sup: hypotheses {}, conclusion {}, bound {:.3e}, observed {:.3e}",
        o.hypotheses, o.conclusion, o.bound, o.observed
    );
    let q = integral_derivative_check(
        0.0,
        &f,
        2.0,
        &Mp2Params {
            alpha: 0.5,
            gamma: 0.1,
            c: 1.0,
            eps: 1e-4,
        },
    )?;
    println!(
        "integral-to-derivative: hypotheses {}, conclusion {}",
        q.hypotheses, q.conclusion
    );
    Ok(())
}
