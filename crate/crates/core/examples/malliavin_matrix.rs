//! Malliavin matrix of a Navier-Stokes Galerkin state: the full matrix by
//! the forward recursion, its spectrum, and a 2×2 block assembled from the
//! adjoint side.
//!
//!     cargo run --release --example malliavin_matrix

use spdelab::malliavin::{assemble_adjoint, assemble_forward, forward_full, spectrum};
use spdelab::models::{ns_forcing, Model, ModelSpec};
use spdelab::sde::{integrate, Forcing, Scheme, SpdeConfig, WienerPath};
use spdelab::spectral::Trig;
use spdelab::variation::{AdjointScheme, FlowBundle};

fn main() -> spdelab::Result<()> {
    let model = Model::build(&ModelSpec::Ns { k: 4, nu: 1.0 })?;
    let cfg = SpdeConfig {
        basis: model.basis.clone(),
        nonlinear: model.nonlinear.clone(),
        forcing: Forcing::Zero,
        g: ns_forcing(&model.basis, &[(1, 0), (1, 1)], 1.0)?,
        scheme: Scheme::ExponentialEuler,
    };
    let u0 = model.mode_field(
        model.basis.fourier_index(1, 0, Trig::Cos).expect("mode"),
        0.5,
    );
    let w = WienerPath::sample(cfg.d(), 1.0, 1024, 3)?;
    let tr = integrate(&cfg, &u0, &w)?;
    let b = FlowBundle::new(&cfg, &tr, AdjointScheme::Discrete)?;

    let full = forward_full(&b);
    let sp = spectrum(&full)?;
    println!(
        "dim {}, eigenvalues from {:.3e} to {:.3e} ({} Jacobi sweeps)",
        full.nrows(),
        sp.values[0],
        sp.values[sp.values.len() - 1],
        sp.sweeps
    );

    let s: Vec<_> = [(2, 1, Trig::Cos), (2, 1, Trig::Sin)]
        .iter()
        .map(|&(a, c, t)| model.mode_field(model.basis.fourier_index(a, c, t).expect("mode"), 1.0))
        .collect();
    let fwd = assemble_forward(&b, &s)?;
    let adj = assemble_adjoint(&b, &s)?;
    println!("forward block\n{}", fwd.entries);
    println!(
        "adjoint block differs by {:.1e}",
        (&fwd.entries - &adj.entries).norm()
    );
    Ok(())
}
