//! Rank growth of bracket spans for two Navier-Stokes forcings, and the
//! lattice condition that separates them.
//!
//!     cargo run --example bracket_span

use spdelab::brackets::{grow_span, ns_condition, BracketMode};
use spdelab::models::{Model, ModelSpec};
use spdelab::spectral::Trig;

fn main() -> spdelab::Result<()> {
    let model = Model::build(&ModelSpec::Ns { k: 4, nu: 1.0 })?;
    for z0 in [[(1, 0), (1, 1)], [(1, 0), (0, 1)]] {
        let mut gs = Vec::new();
        for &(a, b) in &z0 {
            for trig in [Trig::Cos, Trig::Sin] {
                let i = model
                    .basis
                    .fourier_index(a, b, trig)
                    .expect("mode in the truncation");
                gs.push(model.mode_field(i, 1.0));
            }
        }
        let growth = grow_span(&gs, &model.nonlinear, 8, BracketMode::TopDegree, 1e-10)?;
        let sym: Vec<(i32, i32)> = z0.iter().flat_map(|&(a, b)| [(a, b), (-a, -b)]).collect();
        println!(
            "Z0 = {z0:?}: ranks {:?} of {}, lattice condition {:?}",
            growth.ranks(),
            model.dim(),
            ns_condition(&sym)?
        );
    }
    Ok(())
}
