//! Wiener polynomials: quadratic variation by formula and by summing
//! squared increments, and the Ito split `Z = Z(0) + V + M`.
//!
//!     cargo run --release --example wiener_poly

use spdelab::sde::WienerPath;
use spdelab::wiener_poly::{
    discrete_qv, evaluate_z, ito_decompose, qv_formula, reduced_energy, WienerPolynomial,
};

fn main() -> spdelab::Result<()> {
    // Z = W0² + 0.5 W0 W1 - W1³
    let mut z = WienerPolynomial::new(3, 2)?;
    z.add_monomial(&[0, 0], 1.0)?;
    z.add_monomial(&[0, 1], 0.5)?;
    z.add_monomial(&[1, 1, 1], -1.0)?;

    for steps in [1 << 10, 1 << 13, 1 << 16] {
        let w = WienerPath::sample(2, 1.0, steps, 5)?;
        let v = evaluate_z(&z, &w)?;
        let formula = qv_formula(&z, &z, &w, (0, steps))?;
        println!(
            "steps {steps:>6}: <Z>_1 formula {formula:.5}, discrete {:.5}, reduced energy {:.5}",
            discrete_qv(&v, &v, 1)?,
            reduced_energy(&z, &w, (0, steps))?
        );
    }

    let w = WienerPath::sample(2, 1.0, 4096, 9)?;
    let s = ito_decompose(&z, &w, 0)?;
    let end = s.z.len() - 1;
    println!(
        "Z(1) - Z(0) = {:.5} = V {:.5} + M {:.5}",
        s.z[end] - s.z[0],
        s.v[end],
        s.m[end]
    );
    Ok(())
}
