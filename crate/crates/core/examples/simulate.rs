//! One stochastic Allen-Cahn path by exponential Euler, with the path norms
//! of the solution and a mesh refinement on the same Brownian path.
//!
//!     cargo run --release --example simulate

use spdelab::models::{Model, ModelSpec};
use spdelab::sde::{field_path_norms, integrate, Forcing, Scheme, SpdeConfig, WienerPath};

fn main() -> spdelab::Result<()> {
    let model = Model::build(&ModelSpec::Rd {
        k: 16,
        nu: 1.0,
        a: vec![0.0, 1.0, 0.0, -1.0],
    })?;
    let cfg = SpdeConfig {
        basis: model.basis.clone(),
        nonlinear: model.nonlinear.clone(),
        forcing: Forcing::Zero,
        g: vec![model.mode_field(0, 2.0), model.mode_field(1, 2.0)],
        scheme: Scheme::ExponentialEuler,
    };
    let u0 = model.mode_field(0, 1.0);
    let fine = WienerPath::sample(cfg.d(), 1.0, 4096, 7)?;
    let tr = integrate(&cfg, &u0, &fine)?;
    let lambda = &model.basis.eigenvalues;
    let norms = field_path_norms(&tr.states, lambda, 0.5, tr.dt, (0, tr.steps()))?;
    println!(
        "sup |u|_1/2 = {:.4}, Lipschitz quotient {:.2}",
        norms.sup, norms.lip
    );

    for factor in [64, 16, 4] {
        let coarse = integrate(&cfg, &u0, &fine.coarsen(factor)?)?;
        println!(
            "dt = {:.1e}: |u_coarse(1) - u_fine(1)| = {:.2e}",
            coarse.dt,
            (coarse.last() - tr.last()).norm()
        );
    }
    Ok(())
}
