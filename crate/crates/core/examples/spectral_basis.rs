//! Sine and torus bases: grid round trips, Sobolev norms and `L`.
//!
//!     cargo run --example spectral_basis

use nalgebra::DVector;
use spdelab::spectral::{apply_l, from_grid, sobolev_norm, to_grid, BasisSpec, SpectralField};

fn main() -> spdelab::Result<()> {
    let basis = BasisSpec::dirichlet(16, 1.0)?;
    let c = DVector::from_fn(basis.dim(), |i, _| 1.0 / (1.0 + i as f64).powi(2));
    let u = SpectralField::new(basis.clone(), c)?;

    let n = basis.grid_size_for_degree(3);
    let values = to_grid(&u, n)?;
    let back = from_grid(basis.clone(), n, &values)?;
    println!(
        "grid of {n} points, round-trip error {:.1e}",
        (&back.coeffs - &u.coeffs).norm()
    );

    for s in [-0.5, 0.0, 0.5, 1.0] {
        println!("|u|_{s:<4} = {:.6}", sobolev_norm(&u, s)?);
    }
    // |u|_s = |L^s u|_0
    println!(
        "|Lu|_0 = {:.6}, |u|_1 = {:.6}",
        sobolev_norm(&apply_l(&u)?, 0.0)?,
        sobolev_norm(&u, 1.0)?
    );

    let torus = BasisSpec::torus(4, 1.0)?;
    println!("torus basis with K = 4 has {} real modes", torus.dim());
    Ok(())
}
