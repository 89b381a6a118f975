//! Model presets: the Dirichlet reaction-diffusion equation with polynomial
//! reaction term, and 2D Navier-Stokes in vorticity form on the torus.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::poly::{Linear, MultilinearForm, PolyVectorField};
use crate::spectral::{BasisSpec, Mode, Trig};

/// Coefficients below this are treated as quadrature noise of an exactly
/// vanishing integral.
const TENSOR_DROP: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    /// `du = (νu'' + Σ a_k u^k) dt + …` on `[0,1]`.
    Rd { k: usize, nu: f64, a: Vec<f64> },
    /// `dw = (νΔw + B(𝒦w, w)) dt + …` on the torus.
    Ns { k: usize, nu: f64 },
}

/// A truncated model: the basis (with `L = -νΔ`) and the nonlinearity `N`,
/// so that the drift is `F = -L + N`.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub basis: Arc<BasisSpec>,
    pub nonlinear: PolyVectorField,
}

impl Model {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        match spec {
            ModelSpec::Rd { k, nu, a } => {
                let basis = BasisSpec::dirichlet(*k, *nu)?;
                let nonlinear = rd_nonlinearity(&basis, a)?;
                Ok(Self {
                    spec: spec.clone(),
                    basis,
                    nonlinear,
                })
            }
            ModelSpec::Ns { k, nu } => {
                let basis = BasisSpec::torus(*k, *nu)?;
                let nonlinear =
                    PolyVectorField::zero(basis.dim()).with_form(ns_bilinear(&basis)?)?;
                Ok(Self {
                    spec: spec.clone(),
                    basis,
                    nonlinear,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// `F = -L + N` as one polynomial field.
    pub fn drift(&self) -> PolyVectorField {
        let mut f = self.nonlinear.clone();
        let minus_l = DVector::from_iterator(self.dim(), self.basis.eigenvalues.iter().map(|l| -l));
        f.linear = Some(match f.linear.take() {
            None => Linear::Diagonal(minus_l),
            Some(Linear::Diagonal(d)) => Linear::Diagonal(d + minus_l),
            Some(Linear::Dense(m)) => Linear::Dense(m + nalgebra::DMatrix::from_diagonal(&minus_l)),
        });
        f
    }

    /// Unit vector of basis mode `i` scaled by `amplitude`.
    pub fn mode_field(&self, i: usize, amplitude: f64) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v[i] = amplitude;
        v
    }
}

/// Projection of `Σ_k a_k u^k` onto the sine basis.
pub fn rd_nonlinearity(basis: &Arc<BasisSpec>, a: &[f64]) -> Result<PolyVectorField> {
    let dim = basis.dim();
    let m = a.len().saturating_sub(1);
    if m >= 1 && !(a[m] < 0.0 && m % 2 == 1) {
        return invalid("reaction term needs odd top degree with negative leading coefficient");
    }
    let mut p =
        PolyVectorField::zero(dim).with_max_degree(m.max(crate::poly::DEFAULT_MAX_DEGREE))?;
    if let Some(&a0) = a.first() {
        if a0 != 0.0 {
            // ∫ √2 sin(kπx) dx = √2 (1 - cos kπ)/(kπ)
            let c = DVector::from_iterator(
                dim,
                basis.modes.iter().map(|md| match md {
                    Mode::Sine(k) if k % 2 == 1 => {
                        a0 * 2.0 * std::f64::consts::SQRT_2 / (*k as f64 * PI)
                    }
                    _ => 0.0,
                }),
            );
            p.constant = Some(c);
        }
    }
    if a.len() > 1 && a[1] != 0.0 {
        p.linear = Some(Linear::Diagonal(DVector::from_element(dim, a[1])));
    }
    for (j, &aj) in a.iter().enumerate().skip(2) {
        if aj != 0.0 {
            p = p.with_form(interval_product_form(basis, j, aj)?)?;
        }
    }
    Ok(p)
}

/// `T_{t,o} = c ∫ e_{t_1}⋯e_{t_j} e_o dx` by Gauss-Legendre quadrature.
fn interval_product_form(basis: &Arc<BasisSpec>, j: usize, c: f64) -> Result<MultilinearForm> {
    let dim = basis.dim();
    let grid = basis.grid(basis.grid_size_for_degree(j))?;
    let vals = grid.synthesis_matrix();
    let np = grid.len();
    let mut triples = Vec::new();
    let mut t = vec![0u32; j];
    let mut prod = vec![0.0; np];
    loop {
        for (p, v) in prod.iter_mut().enumerate() {
            *v = grid.weights[p] * t.iter().map(|&i| vals[(p, i as usize)]).product::<f64>();
        }
        for o in 0..dim {
            let s: f64 = (0..np).map(|p| prod[p] * vals[(p, o)]).sum();
            if s.abs() > TENSOR_DROP {
                triples.push((t.clone(), o as u32, c * s));
            }
        }
        let mut q = j;
        while q > 0 && t[q - 1] as usize == dim - 1 {
            q -= 1;
        }
        if q == 0 {
            break;
        }
        t[q - 1] += 1;
        let v = t[q - 1];
        t[q..].iter_mut().for_each(|x| *x = v);
    }
    MultilinearForm::from_triples(j, dim, triples)
}

/// Values of mode `i`, its gradient, and the Biot-Savart velocity of the
/// mode at a point.
fn mode_data(basis: &BasisSpec, i: usize, x: f64, y: f64) -> (f64, [f64; 2], [f64; 2]) {
    let Mode::Fourier(a, b, trig) = basis.modes[i] else {
        unreachable!("torus basis")
    };
    let c = 1.0 / (std::f64::consts::SQRT_2 * PI);
    let (kx, ky) = (a as f64, b as f64);
    let phase = kx * x + ky * y;
    let (v, dv) = match trig {
        Trig::Cos => (c * phase.cos(), -c * phase.sin()),
        Trig::Sin => (c * phase.sin(), c * phase.cos()),
    };
    let grad = [kx * dv, ky * dv];
    // ψ = e/|k|², u = (∂₂ψ, -∂₁ψ)
    let k2 = kx * kx + ky * ky;
    let vel = [grad[1] / k2, -grad[0] / k2];
    (v, grad, vel)
}

/// Symmetric `N_2(a,b) = ½(B(𝒦a,b) + B(𝒦b,a))` with `B(u,v) = -(u·∇)v`,
/// projected exactly with a trapezoid grid of `3K+1` points per axis.
pub fn ns_bilinear(basis: &Arc<BasisSpec>) -> Result<MultilinearForm> {
    let dim = basis.dim();
    let grid = basis.grid(basis.grid_size_for_degree(2))?;
    let np = grid.len();
    let data: Vec<Vec<(f64, [f64; 2], [f64; 2])>> = (0..dim)
        .map(|i| {
            grid.points
                .iter()
                .map(|&(x, y)| mode_data(basis, i, x, y))
                .collect()
        })
        .collect();
    let analysis = grid.analysis_matrix();
    let mut triples = Vec::new();
    let mut f = vec![0.0; np];
    for a in 0..dim {
        for b in a..dim {
            for (p, v) in f.iter_mut().enumerate() {
                let (_, ga, ua) = data[a][p];
                let (_, gb, ub) = data[b][p];
                *v = -0.5 * (ua[0] * gb[0] + ua[1] * gb[1] + ub[0] * ga[0] + ub[1] * ga[1]);
            }
            for o in 0..dim {
                let s: f64 = (0..np).map(|p| analysis[(o, p)] * f[p]).sum();
                if s.abs() > TENSOR_DROP {
                    triples.push((vec![a as u32, b as u32], o as u32, s));
                }
            }
        }
    }
    MultilinearForm::from_triples(2, dim, triples)
}

/// Forcing directions for NS: for each wave vector of `z0` (up to sign) the
/// cos and sin modes, scaled by `amplitude`.
pub fn ns_forcing(
    basis: &BasisSpec,
    z0: &[(i32, i32)],
    amplitude: f64,
) -> Result<Vec<DVector<f64>>> {
    let mut seen = Vec::new();
    let mut gs = Vec::new();
    for &(a, b) in z0 {
        if (a, b) == (0, 0) {
            return invalid("forcing wave vector is zero");
        }
        let key = if a > 0 || (a == 0 && b > 0) {
            (a, b)
        } else {
            (-a, -b)
        };
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        for t in [Trig::Cos, Trig::Sin] {
            let Some(i) = basis.fourier_index(key.0, key.1, t) else {
                return invalid(format!("wave vector {key:?} is outside the truncation"));
            };
            let mut v = DVector::zeros(basis.dim());
            v[i] = amplitude;
            gs.push(v);
        }
    }
    Ok(gs)
}

/// Forcing on a list of basis modes (0-based).
pub fn mode_forcing(
    basis: &BasisSpec,
    modes: &[usize],
    amplitude: f64,
) -> Result<Vec<DVector<f64>>> {
    modes
        .iter()
        .map(|&i| {
            if i >= basis.dim() {
                return invalid(format!("mode {i} outside the truncation"));
            }
            let mut v = DVector::zeros(basis.dim());
            v[i] = amplitude;
            Ok(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::SQRT_2;

    #[test]
    fn ns_energy_orthogonality() {
        let m = Model::build(&ModelSpec::Ns { k: 4, nu: 1.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let w = DVector::from_fn(80, |_, _| rng.random_range(-1.0..1.0));
            let n = m.nonlinear.evaluate(&w).unwrap();
            assert!(n.dot(&w).abs() < 1e-10 * (1.0 + n.norm() * w.norm()));
        }
    }

    #[test]
    fn ns_mode_product_matches_grid_oracle() {
        // Frozen from an independent FFT pseudo-spectral computation: for
        // unnormalized cos(x1) and cos(x1+x2) the symmetrized -(u·∇)w has
        // -1/8 on cos(2x1+x2) and +1/8 on cos(x2).
        let m = Model::build(&ModelSpec::Ns { k: 4, nu: 1.0 }).unwrap();
        let b = &m.basis;
        let i = b.fourier_index(1, 0, Trig::Cos).unwrap();
        let j = b.fourier_index(1, 1, Trig::Cos).unwrap();
        let n2 = m.nonlinear.form(2).unwrap();
        let mut out = vec![0.0; 80];
        let (ei, ej) = (m.mode_field(i, 1.0), m.mode_field(j, 1.0));
        n2.eval_multi(&[ei.as_slice(), ej.as_slice()], &mut out);
        // e = cos/(√2π): N_2(e_i,e_j) = N_2(cos,cos)/(2π²), cos = √2π e
        let scale = SQRT_2 * PI / (2.0 * PI * PI);
        let o21 = b.fourier_index(2, 1, Trig::Cos).unwrap();
        let o01 = b.fourier_index(0, 1, Trig::Cos).unwrap();
        assert!((out[o21] + 0.125 * scale).abs() < 1e-13);
        assert!((out[o01] - 0.125 * scale).abs() < 1e-13);
        let rest: f64 = out
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != o21 && *k != o01)
            .map(|(_, v)| v.abs())
            .sum();
        assert!(rest < 1e-13);
    }

    #[test]
    fn ns_equal_norm_modes_do_not_interact() {
        let m = Model::build(&ModelSpec::Ns { k: 4, nu: 1.0 }).unwrap();
        let gs = ns_forcing(&m.basis, &[(1, 0), (0, 1)], 1.0).unwrap();
        let n2 = m.nonlinear.form(2).unwrap();
        for a in &gs {
            for b in &gs {
                let mut out = vec![0.0; 80];
                n2.eval_multi(&[a.as_slice(), b.as_slice()], &mut out);
                assert!(out.iter().all(|v| v.abs() <= 1e-12));
            }
        }
    }

    #[test]
    fn rd_cubic_matches_pointwise_cube() {
        let m = Model::build(&ModelSpec::Rd {
            k: 16,
            nu: 1.0,
            a: vec![0.0, 0.0, 0.0, -1.0],
        })
        .unwrap();
        let b = &m.basis;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u = DVector::from_fn(16, |i, _| rng.random_range(-1.0..1.0) / (1.0 + i as f64));
        let n = m.nonlinear.evaluate(&u).unwrap();
        let g = b.grid(b.grid_size_for_degree(3)).unwrap();
        let vals = g.synthesize(&u).map(|v| -v * v * v);
        let oracle = g.analyze(&vals);
        assert!((n - oracle).amax() < 1e-12);
        // at u = e_1: -(√2 sin πx)³ = -2√2 (3 sin πx - sin 3πx)/4
        let e1 = m.mode_field(0, 1.0);
        let n = m.nonlinear.evaluate(&e1).unwrap();
        assert!((n[0] + 1.5).abs() < 1e-12);
        assert!((n[2] - 0.5).abs() < 1e-12);
        assert!(n
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 0 && *i != 2)
            .all(|(_, v)| v.abs() < 1e-12));
    }

    #[test]
    fn rd_constant_and_linear_terms() {
        let m = Model::build(&ModelSpec::Rd {
            k: 8,
            nu: 1.0,
            a: vec![1.0, 2.0, 0.0, -1.0],
        })
        .unwrap();
        let z = DVector::zeros(8);
        let c = m.nonlinear.evaluate(&z).unwrap();
        assert!((c[0] - 2.0 * SQRT_2 / PI).abs() < 1e-14);
        assert_eq!(c[1], 0.0);
        let f = m.drift();
        let e2 = m.mode_field(1, 1.0);
        let d = f.frechet(&z, &[&e2]).unwrap();
        assert!((d[1] - (2.0 - 4.0 * PI * PI)).abs() < 1e-12);
        assert!(Model::build(&ModelSpec::Rd {
            k: 8,
            nu: 1.0,
            a: vec![0.0, 0.0, 1.0]
        })
        .is_err());
    }
}
