//! Linearizations along a stored trajectory: forward variations `J_{s,t}`,
//! the backward adjoint `K_{s,t}`, higher variations, and the Malliavin
//! derivative of the final state.
//!
//! Times are grid node indices. All operators are derivatives of the
//! discrete step map `u+ = E u + Δt P (N(u) + f) + S G ΔW`, whose
//! linearization at node `r` is `A_r = E + Δt P DN(u_r)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::poly::PolyVectorField;
use crate::sde::{SpdeConfig, StepWeights, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointScheme {
    /// `K_{r,t} = A_rᵀ K_{r+1,t}`: the exact transpose of the forward steps.
    #[default]
    Discrete,
    /// Exponential Euler for the backward adjoint equation, explicit at the
    /// start of each backward step:
    /// `K_{r,t} = E K_{r+1,t} + Δt P DN(u_{r+1})ᵀ K_{r+1,t}`.
    Continuous,
}

pub const MAX_VARIATION_ORDER: usize = 4;

#[derive(Clone, Debug)]
pub struct FlowBundle {
    pub weights: StepWeights,
    pub nonlinear: PolyVectorField,
    pub states: Vec<DVector<f64>>,
    pub g: Vec<DVector<f64>>,
    /// `S g_k`: the direction a unit increment of `W_k` moves the state.
    pub sg: Vec<DVector<f64>>,
    pub adjoint: AdjointScheme,
}

impl FlowBundle {
    pub fn new(cfg: &SpdeConfig, traj: &Trajectory, adjoint: AdjointScheme) -> Result<Self> {
        if let Some(i) = traj.diverged {
            return invalid(format!("trajectory diverged at node {i}"));
        }
        if traj.scheme != cfg.scheme {
            return invalid("trajectory was produced by a different scheme");
        }
        let weights = StepWeights::new(&cfg.basis.eigenvalues, traj.dt, cfg.scheme);
        let sg = cfg.g.iter().map(|g| weights.s.component_mul(g)).collect();
        Ok(Self {
            weights,
            nonlinear: cfg.nonlinear.clone(),
            states: traj.states.clone(),
            g: cfg.g.clone(),
            sg,
            adjoint,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.e.len()
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.weights.dt
    }

    fn check(&self, s: usize, t: usize) -> Result<()> {
        if s > t {
            return invalid(format!("start node {s} after end node {t}"));
        }
        if t > self.steps() {
            return invalid(format!("node {t} beyond the last node {}", self.steps()));
        }
        Ok(())
    }

    /// `A_r v`.
    pub fn step(&self, r: usize, v: &DVector<f64>) -> DVector<f64> {
        let w = &self.weights;
        let dn = self.nonlinear.jvp(&self.states[r], v);
        w.e.component_mul(v) + w.dt * w.p.component_mul(&dn)
    }

    /// `A_rᵀ w`.
    pub fn step_t(&self, r: usize, v: &DVector<f64>) -> DVector<f64> {
        let w = &self.weights;
        let dn = self.nonlinear.vjp(&self.states[r], &w.p.component_mul(v));
        w.e.component_mul(v) + w.dt * dn
    }

    /// One backward step of the adjoint from node `r+1` to `r`.
    fn adjoint_step(&self, r: usize, v: &DVector<f64>) -> DVector<f64> {
        match self.adjoint {
            AdjointScheme::Discrete => self.step_t(r, v),
            AdjointScheme::Continuous => {
                let w = &self.weights;
                let dn = self.nonlinear.vjp(&self.states[r + 1], v);
                w.e.component_mul(v) + w.dt * w.p.component_mul(&dn)
            }
        }
    }

    /// Dense `A_r`.
    pub fn step_matrix(&self, r: usize) -> DMatrix<f64> {
        let w = &self.weights;
        let mut a = self.nonlinear.jacobian(&self.states[r]);
        for (i, mut row) in a.row_iter_mut().enumerate() {
            row *= w.dt * w.p[i];
        }
        for i in 0..self.dim() {
            a[(i, i)] += w.e[i];
        }
        a
    }

    pub fn forward_j(&self, s: usize, t: usize, phi: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(s, t)?;
        let mut v = phi.clone();
        for r in s..t {
            v = self.step(r, &v);
        }
        Ok(v)
    }

    /// `J_{s,r} φ` for `r = s..=t`.
    pub fn forward_path(
        &self,
        s: usize,
        t: usize,
        phi: &DVector<f64>,
    ) -> Result<Vec<DVector<f64>>> {
        self.check(s, t)?;
        let mut out = Vec::with_capacity(t - s + 1);
        out.push(phi.clone());
        for r in s..t {
            let next = self.step(r, out.last().unwrap());
            out.push(next);
        }
        Ok(out)
    }

    pub fn backward_k(&self, s: usize, t: usize, psi: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(s, t)?;
        let mut v = psi.clone();
        for r in (s..t).rev() {
            v = self.adjoint_step(r, &v);
        }
        Ok(v)
    }

    /// `K_{r,t} ψ` for `r = s..=t`, indexed by `r - s`.
    pub fn backward_path(
        &self,
        s: usize,
        t: usize,
        psi: &DVector<f64>,
    ) -> Result<Vec<DVector<f64>>> {
        self.check(s, t)?;
        let mut out = vec![DVector::zeros(0); t - s + 1];
        out[t - s] = psi.clone();
        for r in (s..t).rev() {
            out[r - s] = self.adjoint_step(r, &out[r + 1 - s]);
        }
        Ok(out)
    }

    /// `max_r |⟨J_{s,r}φ, K_{r,t}ψ⟩ - ⟨φ, K_{s,t}ψ⟩|` over nodes `s ≤ r ≤ t`.
    pub fn duality_gap(
        &self,
        s: usize,
        t: usize,
        phi: &DVector<f64>,
        psi: &DVector<f64>,
    ) -> Result<f64> {
        let j = self.forward_path(s, t, phi)?;
        let k = self.backward_path(s, t, psi)?;
        let c0 = j[0].dot(&k[0]);
        Ok(j.iter()
            .zip(&k)
            .map(|(a, b)| (a.dot(b) - c0).abs())
            .fold(0.0, f64::max))
    }

    /// Derivative of the final state in direction `h` (`d × steps`, one
    /// value per step): `Σ_i Δt J_{i+1,N} S G h_i`.
    pub fn malliavin_derivative(&self, h: &DMatrix<f64>) -> Result<DVector<f64>> {
        if h.nrows() != self.sg.len() || h.ncols() != self.steps() {
            return invalid(format!(
                "direction must be {}×{}",
                self.sg.len(),
                self.steps()
            ));
        }
        let dt = self.dt();
        let mut v = DVector::zeros(self.dim());
        for i in 0..self.steps() {
            v = self.step(i, &v);
            for (k, sg) in self.sg.iter().enumerate() {
                if h[(k, i)] != 0.0 {
                    v.axpy(dt * h[(k, i)], sg, 1.0);
                }
            }
        }
        Ok(v)
    }

    /// `J^{(n)}_{s_1…s_n; t}(φ_1…φ_n)`: the mixed derivative of `u(t)` when
    /// each `u(s_i)` is moved along `φ_i`.
    pub fn higher_variation(
        &self,
        s: &[usize],
        phi: &[DVector<f64>],
        t: usize,
    ) -> Result<DVector<f64>> {
        let n = s.len();
        if n < 2 || n != phi.len() {
            return invalid("higher variations need n >= 2 matching times and directions");
        }
        if n > MAX_VARIATION_ORDER {
            return invalid(format!("variation order {n} exceeds {MAX_VARIATION_ORDER}"));
        }
        let smax = *s.iter().max().unwrap();
        self.check(smax, t.max(smax))?;
        if t <= smax {
            return Ok(DVector::zeros(self.dim()));
        }
        let smin = *s.iter().min().unwrap();
        let full = (1usize << n) - 1;
        let start: Vec<usize> = (0..=full)
            .map(|m| {
                (0..n)
                    .filter(|i| m >> i & 1 == 1)
                    .map(|i| s[i])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let parts: Vec<Vec<Vec<usize>>> = (0..=full).map(partitions).collect();
        let mut v: Vec<Option<DVector<f64>>> = vec![None; full + 1];
        let w = &self.weights;
        let zero = DVector::zeros(self.dim());
        for r in smin..t {
            for i in 0..n {
                if s[i] == r {
                    v[1 << i] = Some(phi[i].clone());
                }
            }
            let mut next = v.clone();
            for m in 1..=full {
                if start[m] > r {
                    continue;
                }
                let cur = v[m].clone().unwrap_or_else(|| DVector::zeros(self.dim()));
                let mut nv = self.step(r, &cur);
                if m.count_ones() >= 2 {
                    let mut src = DVector::zeros(self.dim());
                    for p in &parts[m] {
                        // a block is zero at its own start node
                        let dirs: Vec<&DVector<f64>> =
                            p.iter().map(|&b| v[b].as_ref().unwrap_or(&zero)).collect();
                        src += self.nonlinear.frechet(&self.states[r], &dirs)?;
                    }
                    nv += w.dt * w.p.component_mul(&src);
                }
                next[m] = Some(nv);
            }
            v = next;
        }
        Ok(v[full]
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.dim())))
    }
}

/// Partitions of the bit set `mask` into at least two nonempty blocks,
/// enumerated by restricted-growth strings.
pub(crate) fn partitions(mask: usize) -> Vec<Vec<usize>> {
    let elems: Vec<usize> = (0..usize::BITS as usize)
        .filter(|i| mask >> i & 1 == 1)
        .collect();
    let k = elems.len();
    let mut out = Vec::new();
    if k < 2 {
        return out;
    }
    let mut rgs = vec![0usize; k];
    loop {
        let blocks = rgs.iter().max().unwrap() + 1;
        if blocks >= 2 {
            let mut p = vec![0usize; blocks];
            for (e, &b) in elems.iter().zip(&rgs) {
                p[b] |= 1 << e;
            }
            out.push(p);
        }
        // next restricted-growth string
        let mut i = k - 1;
        loop {
            let prefix_max = rgs[..i].iter().max().copied().unwrap_or(0);
            if i > 0 && rgs[i] <= prefix_max {
                rgs[i] += 1;
                rgs[i + 1..].iter_mut().for_each(|x| *x = 0);
                break;
            }
            if i == 0 {
                return out;
            }
            i -= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{mode_forcing, Model, ModelSpec};
    use crate::sde::{integrate, Forcing, Scheme, WienerPath};
    use crate::spectral::BasisSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rd_setup(
        steps: usize,
        seed: u64,
        adjoint: AdjointScheme,
    ) -> (SpdeConfig, WienerPath, FlowBundle) {
        let m = Model::build(&ModelSpec::Rd {
            k: 16,
            nu: 1.0,
            a: vec![0.0, 0.0, 0.0, -1.0],
        })
        .unwrap();
        let g = mode_forcing(&m.basis, &[0, 1], 2.0).unwrap();
        let cfg = SpdeConfig {
            basis: m.basis.clone(),
            nonlinear: m.nonlinear,
            forcing: Forcing::Zero,
            g,
            scheme: Scheme::ExponentialEuler,
        };
        let w = WienerPath::sample(2, 1.0, steps, seed).unwrap();
        let mut u0 = DVector::zeros(16);
        u0[0] = 1.0;
        u0[2] = -0.5;
        let tr = integrate(&cfg, &u0, &w).unwrap();
        let b = FlowBundle::new(&cfg, &tr, adjoint).unwrap();
        (cfg, w, b)
    }

    fn rand_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        let v = DVector::from_fn(n, |i, _| rng.random_range(-1.0..1.0) / (1.0 + i as f64));
        v.normalize()
    }

    #[test]
    fn partition_counts_are_bell_numbers_minus_one() {
        assert_eq!(partitions(0b11).len(), 1);
        assert_eq!(partitions(0b111).len(), 4);
        assert_eq!(partitions(0b1111).len(), 14);
        assert_eq!(partitions(0b1010).len(), 1);
        assert!(partitions(0b100).is_empty());
    }

    #[test]
    fn linear_flow_is_semigroup_and_adjoint_exact() {
        let basis = BasisSpec::dirichlet(6, 1.0).unwrap();
        let cfg = SpdeConfig {
            basis: basis.clone(),
            nonlinear: PolyVectorField::zero(6),
            forcing: Forcing::Zero,
            g: vec![DVector::from_element(6, 1.0)],
            scheme: Scheme::ExponentialEuler,
        };
        let w = WienerPath::sample(1, 1.0, 64, 0).unwrap();
        let tr = integrate(&cfg, &DVector::zeros(6), &w).unwrap();
        for adj in [AdjointScheme::Discrete, AdjointScheme::Continuous] {
            let b = FlowBundle::new(&cfg, &tr, adj).unwrap();
            let phi = DVector::from_fn(6, |i, _| 1.0 + i as f64);
            let v = b.forward_j(8, 40, &phi).unwrap();
            for k in 0..6 {
                let exact = (-basis.eigenvalues[k] * 32.0 / 64.0).exp() * phi[k];
                assert!((v[k] - exact).abs() <= 1e-12 * phi[k]);
            }
            assert_eq!(b.forward_j(5, 5, &phi).unwrap(), phi);
            assert!(b.forward_j(6, 5, &phi).is_err());
            assert!(b.duality_gap(0, 64, &phi, &phi).unwrap() < 1e-12);
            let mut e1 = DVector::zeros(6);
            e1[1] = 1.0;
            let mut e3 = DVector::zeros(6);
            e3[3] = 1.0;
            assert_eq!(b.duality_gap(0, 64, &e1, &e3).unwrap(), 0.0);
        }
    }

    #[test]
    fn cocycle_and_discrete_duality() {
        let (_, _, b) = rd_setup(512, 1, AdjointScheme::Discrete);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (phi, psi) = (rand_unit(&mut rng, 16), rand_unit(&mut rng, 16));
        let a = b
            .forward_j(10, 300, &b.forward_j(3, 10, &phi).unwrap())
            .unwrap();
        let c = b.forward_j(3, 300, &phi).unwrap();
        assert!((a - c).amax() < 1e-14);
        assert!(b.duality_gap(0, 512, &phi, &psi).unwrap() < 1e-13);
        let dense = (0..20).fold(DMatrix::identity(16, 16), |acc, r| b.step_matrix(r) * acc);
        assert!((dense * &phi - b.forward_j(0, 20, &phi).unwrap()).amax() < 1e-13);
    }

    #[test]
    fn continuous_adjoint_gap_is_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (phi, psi) = (rand_unit(&mut rng, 16), rand_unit(&mut rng, 16));
        let (_, w, _) = rd_setup(1 << 13, 4, AdjointScheme::Continuous);
        let gap = |steps: usize| {
            let (cfg, _, _) = rd_setup(8, 4, AdjointScheme::Continuous);
            let wc = w.coarsen((1 << 13) / steps).unwrap();
            let mut u0 = DVector::zeros(16);
            u0[0] = 1.0;
            u0[2] = -0.5;
            let tr = integrate(&cfg, &u0, &wc).unwrap();
            FlowBundle::new(&cfg, &tr, AdjointScheme::Continuous)
                .unwrap()
                .duality_gap(0, steps, &phi, &psi)
                .unwrap()
        };
        let (g1, g2) = (gap(1 << 11), gap(1 << 12));
        assert!(g1 > 1e-8);
        let ratio = g2 / g1;
        assert!((0.4..0.7).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn malliavin_derivative_matches_finite_difference() {
        let (cfg, w, b) = rd_setup(1024, 5, AdjointScheme::Discrete);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = DMatrix::from_fn(2, 1024, |_, _| rng.random_range(-1.0..1.0));
        let d = b.malliavin_derivative(&h).unwrap();
        let eps = 1e-4;
        let mut u0 = DVector::zeros(16);
        u0[0] = 1.0;
        u0[2] = -0.5;
        let up = integrate(&cfg, &u0, &w.shifted(&h, eps).unwrap()).unwrap();
        let um = integrate(&cfg, &u0, &w.shifted(&h, -eps).unwrap()).unwrap();
        let fd = (up.last() - um.last()) / (2.0 * eps);
        assert!((&fd - &d).norm() <= 1e-6 * d.norm());
        assert_eq!(
            b.malliavin_derivative(&DMatrix::zeros(2, 1024))
                .unwrap()
                .amax(),
            0.0
        );
        assert!(b.malliavin_derivative(&DMatrix::zeros(2, 10)).is_err());
    }

    #[test]
    fn second_variation_matches_mixed_difference() {
        let (cfg, w, b) = rd_setup(512, 7, AdjointScheme::Discrete);
        let (i1, i2) = (100, 250);
        let phi = vec![b.sg[0].clone(), b.sg[1].clone()];
        let v2 = b.higher_variation(&[i1 + 1, i2 + 1], &phi, 512).unwrap();
        let eps = 1e-3;
        let mut u0 = DVector::zeros(16);
        u0[0] = 1.0;
        u0[2] = -0.5;
        let run = |a: f64, c: f64| {
            let mut inc = w.increments().clone();
            inc[(0, i1)] += a;
            inc[(1, i2)] += c;
            let wp = WienerPath::from_increments(1.0, inc, 0).unwrap();
            integrate(&cfg, &u0, &wp).unwrap().last().clone()
        };
        let mixed =
            (run(eps, eps) - run(eps, -eps) - run(-eps, eps) + run(-eps, -eps)) / (4.0 * eps * eps);
        assert!(
            (&mixed - &v2).norm() <= 1e-2 * v2.norm(),
            "{} vs {}",
            mixed.norm(),
            v2.norm()
        );
        // symmetric under swapping the (s, φ) pairs
        let sw = b
            .higher_variation(&[i2 + 1, i1 + 1], &[phi[1].clone(), phi[0].clone()], 512)
            .unwrap();
        assert!((&sw - &v2).amax() < 1e-14);
        assert_eq!(b.higher_variation(&[10, 20], &phi, 20).unwrap().amax(), 0.0);
    }

    #[test]
    fn third_variation_matches_finite_difference() {
        let (cfg, w, b) = rd_setup(256, 8, AdjointScheme::Discrete);
        let idx = [40usize, 90, 160];
        let ks = [0usize, 1, 0];
        let phi: Vec<DVector<f64>> = ks.iter().map(|&k| b.sg[k].clone()).collect();
        let s: Vec<usize> = idx.iter().map(|i| i + 1).collect();
        let v3 = b.higher_variation(&s, &phi, 256).unwrap();
        let mut u0 = DVector::zeros(16);
        u0[0] = 1.0;
        u0[2] = -0.5;
        let eps = 2e-2;
        let mut acc = DVector::zeros(16);
        for signs in 0..8u32 {
            let mut inc = w.increments().clone();
            let mut sgn = 1.0;
            for j in 0..3 {
                let e = if signs >> j & 1 == 1 { -eps } else { eps };
                if e < 0.0 {
                    sgn = -sgn;
                }
                inc[(ks[j], idx[j])] += e;
            }
            let wp = WienerPath::from_increments(1.0, inc, 0).unwrap();
            acc += integrate(&cfg, &u0, &wp).unwrap().last() * sgn;
        }
        let fd = acc / (8.0 * eps * eps * eps);
        assert!(
            (&fd - &v3).norm() <= 2e-2 * v3.norm(),
            "{} vs {}",
            fd.norm(),
            v3.norm()
        );
    }

    #[test]
    fn linear_higher_variations_vanish() {
        let basis = BasisSpec::dirichlet(4, 1.0).unwrap();
        let cfg = SpdeConfig {
            basis,
            nonlinear: PolyVectorField::zero(4),
            forcing: Forcing::Zero,
            g: vec![DVector::from_element(4, 1.0)],
            scheme: Scheme::ExponentialEuler,
        };
        let w = WienerPath::sample(1, 1.0, 32, 0).unwrap();
        let tr = integrate(&cfg, &DVector::zeros(4), &w).unwrap();
        let b = FlowBundle::new(&cfg, &tr, AdjointScheme::Discrete).unwrap();
        let phi = vec![DVector::from_element(4, 1.0); 3];
        assert_eq!(
            b.higher_variation(&[1, 2, 3], &phi, 32).unwrap().amax(),
            0.0
        );
        assert!(b
            .higher_variation(&[1; 5], &vec![phi[0].clone(); 5], 32)
            .is_err());
    }
}
