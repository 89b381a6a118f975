//! Linearized flow and its two adjoints: the duality gap under the exact
//! discrete transpose and under the backward exponential Euler scheme, and
//! a directional derivative against a finite difference of the noise.
//!
//!     cargo run --release --example variation

use nalgebra::DMatrix;
use spdelab::models::{Model, ModelSpec};
use spdelab::sde::{integrate, Forcing, Scheme, SpdeConfig, WienerPath};
use spdelab::variation::{AdjointScheme, FlowBundle};

fn main() -> spdelab::Result<()> {
    let model = Model::build(&ModelSpec::Rd {
        k: 16,
        nu: 1.0,
        a: vec![0.0, 0.0, 0.0, -1.0],
    })?;
    let cfg = SpdeConfig {
        basis: model.basis.clone(),
        nonlinear: model.nonlinear.clone(),
        forcing: Forcing::Zero,
        g: vec![model.mode_field(0, 2.0), model.mode_field(1, 2.0)],
        scheme: Scheme::ExponentialEuler,
    };
    let u0 = model.mode_field(0, 1.0);
    let phi = model.mode_field(2, 1.0);
    let psi = model.mode_field(0, 1.0);

    let w = WienerPath::sample(cfg.d(), 1.0, 4096, 11)?;
    for steps in [256, 512, 1024, 2048] {
        let wc = w.coarsen(4096 / steps)?;
        let tr = integrate(&cfg, &u0, &wc)?;
        let exact = FlowBundle::new(&cfg, &tr, AdjointScheme::Discrete)?;
        let cont = FlowBundle::new(&cfg, &tr, AdjointScheme::Continuous)?;
        println!(
            "steps {steps:>5}: discrete gap {:.1e}, continuous gap {:.3e}",
            exact.duality_gap(0, steps, &phi, &psi)?,
            cont.duality_gap(0, steps, &phi, &psi)?
        );
    }

    // D_h u(T) against (u(T; W + εH) - u(T; W)) / ε
    let tr = integrate(&cfg, &u0, &w)?;
    let b = FlowBundle::new(&cfg, &tr, AdjointScheme::Discrete)?;
    let h = DMatrix::from_fn(cfg.d(), 4096, |k, i| {
        if k == 0 {
            (i as f64 / 4096.0).cos()
        } else {
            0.5
        }
    });
    let dv = b.malliavin_derivative(&h)?;
    for eps in [1e-3, 1e-5, 1e-7] {
        let shifted = integrate(&cfg, &u0, &w.shifted(&h, eps)?)?;
        let fd = (shifted.last() - tr.last()) / eps;
        println!(
            "eps {eps:.0e}: relative gap {:.2e}",
            (&fd - &dv).norm() / dv.norm()
        );
    }
    Ok(())
}
