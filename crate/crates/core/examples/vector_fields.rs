//! Polynomial vector fields: Lie brackets against constant forcing, and the
//! expansion of `N(X + Σ g_k w_k)` in the noise values.
//!
//!     cargo run --example vector_fields

use spdelab::models::{Model, ModelSpec};
use spdelab::poly::{expand_shift, iterated_bracket, lie_bracket, reassemble, PolyVectorField};

fn main() -> spdelab::Result<()> {
    let model = Model::build(&ModelSpec::Rd {
        k: 8,
        nu: 1.0,
        a: vec![0.0, 0.0, 0.0, -1.0],
    })?;
    let f = model.drift();
    let g1 = model.mode_field(0, 1.0);
    let g2 = model.mode_field(1, 1.0);
    let x = &g1 * 0.3 - &g2 * 0.2;

    let b = lie_bracket(&f, &PolyVectorField::constant(g1.clone()), &x)?;
    println!("|[F, g1](x)| = {:.6}", b.norm());

    // [[[F, g1], g1], g1] is constant for a cubic drift
    let third = iterated_bracket(
        &f,
        &PolyVectorField::constant(g1.clone()),
        &[g1.clone(), g1.clone()],
    )?;
    println!(
        "third bracket degree {} and norm {:.6}",
        third.degree(),
        third.evaluate(&x)?.norm()
    );

    let coeffs = expand_shift(&model.nonlinear, &x, &[g1.clone(), g2.clone()])?;
    println!("{} coefficients in the shift expansion", coeffs.len());
    let w = [0.7, -1.1];
    let direct = model.nonlinear.evaluate(&(&x + &g1 * w[0] + &g2 * w[1]))?;
    println!(
        "reassembly error {:.1e}",
        (direct - reassemble(&coeffs, &w)).norm()
    );
    Ok(())
}
