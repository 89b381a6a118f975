//! Constant-field bracket spans `Hbb_n`: growth by the top-degree form,
//! rank decisions, and the model-specific spanning conditions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::poly::{MultilinearForm, PolyVectorField};
use crate::spectral::BasisSpec;

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Origin {
    /// One of the forcing directions `g_k`.
    Generator { k: usize },
    /// `N_j(b, g_{k_1}, …)` with `b` the `parent`-th basis vector.
    Bracket {
        degree: usize,
        parent: usize,
        ks: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub step: usize,
    pub origin: Origin,
}

/// Orthonormal basis of a span, with the record of how each vector arose.
#[derive(Clone, Debug)]
pub struct SpanBasis {
    pub vectors: Vec<DVector<f64>>,
    pub provenance: Vec<Provenance>,
    pub rank_tol: f64,
}

impl SpanBasis {
    pub fn empty(rank_tol: f64) -> Self {
        Self {
            vectors: Vec::new(),
            provenance: Vec::new(),
            rank_tol,
        }
    }

    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    /// `v` minus its projection, with one reorthogonalization pass.
    pub fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut r = v.clone();
        for _ in 0..2 {
            for q in &self.vectors {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        r
    }

    /// Adds the normalized residual when it exceeds `rank_tol * |v|`.
    pub fn try_push(&mut self, v: &DVector<f64>, p: Provenance) -> bool {
        let n = v.norm();
        if n == 0.0 || !n.is_finite() {
            return false;
        }
        let r = self.residual(v);
        let rn = r.norm();
        if rn > self.rank_tol * n {
            self.vectors.push(r / rn);
            self.provenance.push(p);
            true
        } else {
            false
        }
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        self.residual(v).norm() <= self.rank_tol * v.norm().max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BracketMode {
    /// Only the top-degree form `N_m`.
    #[default]
    TopDegree,
    /// Every form `N_j`, `j ≥ 2`, with `j-1` generator slots.
    AllDegrees,
}

#[derive(Clone, Debug)]
pub struct SpanGrowth {
    /// `levels[n-1]` spans `Hbb_n`.
    pub levels: Vec<SpanBasis>,
    pub saturated: bool,
    /// Largest `|N_j(b, g_k…)|` among candidates that were dropped as zero.
    pub max_dropped: f64,
}

impl SpanGrowth {
    pub fn ranks(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.rank()).collect()
    }

    pub fn last(&self) -> &SpanBasis {
        self.levels.last().expect("at least Hbb_1")
    }
}

/// Nondecreasing sorted tuples of length `len` over `0..d`.
pub(crate) fn multisets(d: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if len == 0 {
        out.push(Vec::new());
        return out;
    }
    if d == 0 {
        return out;
    }
    let mut t = vec![0usize; len];
    loop {
        out.push(t.clone());
        let mut q = len;
        while q > 0 && t[q - 1] == d - 1 {
            q -= 1;
        }
        if q == 0 {
            return out;
        }
        t[q - 1] += 1;
        let v = t[q - 1];
        t[q..].iter_mut().for_each(|x| *x = v);
    }
}

fn form_scale(form: &MultilinearForm, gmax: f64) -> f64 {
    let cmax = form.triples().map(|(_, _, c)| c.abs()).fold(0.0, f64::max);
    cmax * gmax.powi(form.degree() as i32 - 1)
}

/// Grows `Hbb_1 ⊂ Hbb_2 ⊂ …` up to `max_steps` levels or saturation.
///
/// A candidate `N_j(b, g…)` counts as zero when its norm is below
/// `rank_tol` times the largest coefficient of `N_j` times `max|g|^{j-1}`;
/// otherwise its residual must exceed `rank_tol` relative to its own norm.
pub fn grow_span(
    gs: &[DVector<f64>],
    field: &PolyVectorField,
    max_steps: usize,
    mode: BracketMode,
    rank_tol: f64,
) -> Result<SpanGrowth> {
    if gs.is_empty() || gs.iter().any(|g| g.norm() == 0.0) {
        return invalid("forcing directions must be nonzero");
    }
    if gs.iter().any(|g| g.len() != field.dim()) {
        return invalid("forcing direction dimension differs from the field");
    }
    if max_steps == 0 {
        return invalid("max_steps must be at least 1");
    }
    let mut h = SpanBasis::empty(rank_tol);
    for (k, g) in gs.iter().enumerate() {
        h.try_push(
            g,
            Provenance {
                step: 1,
                origin: Origin::Generator { k },
            },
        );
    }
    let forms: Vec<&MultilinearForm> = match mode {
        BracketMode::TopDegree => field
            .forms()
            .last()
            .into_iter()
            .filter(|f| f.degree() >= 2)
            .collect(),
        BracketMode::AllDegrees => field.forms().iter().filter(|f| f.degree() >= 2).collect(),
    };
    let gmax = gs.iter().map(|g| g.norm()).fold(0.0, f64::max);
    let tuples: Vec<Vec<Vec<usize>>> = forms
        .iter()
        .map(|f| multisets(gs.len(), f.degree() - 1))
        .collect();
    let mut levels = vec![h.clone()];
    let mut fresh = 0..h.rank();
    let mut max_dropped = 0.0f64;
    let mut saturated = false;
    for step in 2..=max_steps {
        let before = h.rank();
        for parent in fresh.clone() {
            let b = h.vectors[parent].clone();
            for (form, tups) in forms.iter().zip(&tuples) {
                let zero_tol = rank_tol * form_scale(form, gmax);
                for ks in tups {
                    let mut args: Vec<&[f64]> = vec![b.as_slice()];
                    args.extend(ks.iter().map(|&k| gs[k].as_slice()));
                    let mut out = vec![0.0; field.dim()];
                    form.eval_multi(&args, &mut out);
                    let v = DVector::from_vec(out);
                    let n = v.norm();
                    if n <= zero_tol {
                        max_dropped = max_dropped.max(n);
                        continue;
                    }
                    let origin = Origin::Bracket {
                        degree: form.degree(),
                        parent,
                        ks: ks.clone(),
                    };
                    h.try_push(&v, Provenance { step, origin });
                }
            }
        }
        levels.push(h.clone());
        if h.rank() == before {
            saturated = true;
            break;
        }
        fresh = before..h.rank();
    }
    if h.rank() == field.dim() {
        saturated = true;
    }
    Ok(SpanGrowth {
        levels,
        saturated,
        max_dropped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Containment {
    pub contained: bool,
    /// Smallest singular value of the coordinates of the normalized `S` in `H`.
    pub margin: f64,
    pub max_residual: f64,
}

pub fn check_subspace(s: &[DVector<f64>], h: &SpanBasis) -> Result<Containment> {
    if s.is_empty() {
        return invalid("empty subspace");
    }
    let dim = s[0].len();
    let mut indep = SpanBasis::empty(h.rank_tol);
    for v in s {
        if v.len() != dim {
            return invalid("subspace vectors have different lengths");
        }
        if !indep.try_push(
            v,
            Provenance {
                step: 0,
                origin: Origin::Generator { k: 0 },
            },
        ) {
            return invalid("subspace vectors are linearly dependent");
        }
    }
    let mut max_residual = 0.0f64;
    for v in s {
        max_residual = max_residual.max(h.residual(v).norm() / v.norm());
    }
    let contained = max_residual <= h.rank_tol;
    let margin = if h.rank() == 0 {
        0.0
    } else {
        let coords = DMatrix::from_fn(h.rank(), s.len(), |i, j| {
            h.vectors[i].dot(&s[j]) / s[j].norm()
        });
        let sv = coords.singular_values();
        sv.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    Ok(Containment {
        contained,
        margin,
        max_residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsCondition {
    pub generates_z2: bool,
    pub unequal_norms: bool,
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// The two lattice conditions on the forced wave vectors: `Z0 ∩ -Z0`
/// generates `ℤ²` (gcd of all 2×2 minors is 1), and `Z0` has two elements of
/// different length.
pub fn ns_condition(z0: &[(i32, i32)]) -> Result<NsCondition> {
    if z0.contains(&(0, 0)) {
        return invalid("Z0 contains the origin");
    }
    let sym: Vec<(i64, i64)> = z0
        .iter()
        .filter(|&&(a, b)| z0.contains(&(-a, -b)))
        .map(|&(a, b)| (a as i64, b as i64))
        .collect();
    let mut g = 0;
    for i in 0..sym.len() {
        for j in i + 1..sym.len() {
            g = gcd(g, sym[i].0 * sym[j].1 - sym[i].1 * sym[j].0);
        }
    }
    let norms: Vec<i64> = z0
        .iter()
        .map(|&(a, b)| (a as i64).pow(2) + (b as i64).pow(2))
        .collect();
    let unequal_norms = norms.iter().any(|&n| n != norms[0]);
    Ok(NsCondition {
        generates_z2: g == 1,
        unequal_norms,
    })
}

/// Whether every product of at most `2q` elements of `i0`, projected onto
/// the truncation, lies in `span(gs)`.
pub fn rd_condition(
    basis: &BasisSpec,
    i0: &[DVector<f64>],
    gs: &[DVector<f64>],
    q: usize,
    rank_tol: f64,
) -> Result<bool> {
    if i0.is_empty() {
        return Ok(true);
    }
    let grid = basis.grid(basis.grid_size_for_degree(2 * q))?;
    let vals: Vec<DVector<f64>> = i0.iter().map(|f| grid.synthesize(f)).collect();
    let mut span = SpanBasis::empty(rank_tol);
    for g in gs {
        span.try_push(
            g,
            Provenance {
                step: 1,
                origin: Origin::Generator { k: 0 },
            },
        );
    }
    for k in 1..=2 * q {
        for t in multisets(i0.len(), k) {
            let mut p = DVector::from_element(grid.len(), 1.0);
            for &i in &t {
                p.component_mul_assign(&vals[i]);
            }
            let c = grid.analyze(&p);
            if c.norm() > 0.0 && !span.contains(&c) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ns_forcing, Model, ModelSpec};
    use crate::poly::{iterated_bracket, Linear};
    use crate::spectral::BasisSpec;

    fn ns() -> Model {
        Model::build(&ModelSpec::Ns { k: 4, nu: 1.0 }).unwrap()
    }

    #[test]
    fn linear_field_keeps_generator_rank() {
        let f =
            PolyVectorField::zero(6).with_linear(Linear::Diagonal(DVector::from_element(6, -1.0)));
        let gs = vec![
            DVector::from_fn(6, |i, _| i as f64),
            DVector::from_fn(6, |i, _| (i * i) as f64),
        ];
        let g = grow_span(&gs, &f, 5, BracketMode::TopDegree, DEFAULT_RANK_TOL).unwrap();
        assert!(g.ranks().iter().all(|&r| r == 2));
        assert!(g.saturated);
        assert!(grow_span(&[DVector::zeros(6)], &f, 3, BracketMode::TopDegree, 1e-10).is_err());
    }

    #[test]
    fn ns_good_z0_reaches_full_rank() {
        let m = ns();
        let gs = ns_forcing(&m.basis, &[(1, 0), (-1, 0), (1, 1), (-1, -1)], 1.0).unwrap();
        let g = grow_span(
            &gs,
            &m.nonlinear,
            40,
            BracketMode::TopDegree,
            DEFAULT_RANK_TOL,
        )
        .unwrap();
        assert_eq!(g.last().rank(), 80);
        assert!(g.saturated);
        let r = g.ranks();
        assert!(r.windows(2).all(|w| w[0] <= w[1]));
        for (a, b) in g.levels.iter().zip(g.levels.iter().skip(1)) {
            assert!(a.vectors.iter().all(|v| b.contains(v)));
        }
    }

    #[test]
    fn ns_equal_norm_z0_saturates_below_full_rank() {
        let m = ns();
        let gs = ns_forcing(&m.basis, &[(1, 0), (-1, 0), (0, 1), (0, -1)], 1.0).unwrap();
        let g = grow_span(
            &gs,
            &m.nonlinear,
            40,
            BracketMode::TopDegree,
            DEFAULT_RANK_TOL,
        )
        .unwrap();
        assert!(g.saturated);
        assert_eq!(g.last().rank(), 4);
        assert!(g.max_dropped <= 1e-12);
        let unreachable = m.mode_field(
            m.basis
                .fourier_index(1, 1, crate::spectral::Trig::Cos)
                .unwrap(),
            1.0,
        );
        let c = check_subspace(&[unreachable], g.last()).unwrap();
        assert!(!c.contained);
    }

    #[test]
    fn added_vectors_are_iterated_brackets() {
        let m = ns();
        let gs = ns_forcing(&m.basis, &[(1, 0), (1, 1)], 1.0).unwrap();
        let g = grow_span(
            &gs,
            &m.nonlinear,
            2,
            BracketMode::TopDegree,
            DEFAULT_RANK_TOL,
        )
        .unwrap();
        let h1 = &g.levels[0];
        let x = DVector::zeros(80);
        let f = m.drift();
        for (v, p) in g.levels[1].vectors.iter().zip(&g.levels[1].provenance) {
            let Origin::Bracket { parent, ks, .. } = &p.origin else {
                continue;
            };
            let q = PolyVectorField::constant(&h1.vectors[*parent] / 2.0);
            let kg: Vec<DVector<f64>> = ks.iter().map(|&k| gs[k].clone()).collect();
            let b = iterated_bracket(&f, &q, &kg).unwrap();
            assert!(b.is_constant());
            let bv = b.evaluate(&x).unwrap();
            // v is the normalized residual of bv against earlier vectors
            assert!(bv.norm() > 0.0);
            assert!(g.levels[1].contains(&bv));
            assert!(v.dot(&bv).abs() > 0.0);
        }
    }

    #[test]
    fn check_subspace_cases() {
        let m = ns();
        let gs = ns_forcing(&m.basis, &[(1, 0), (1, 1)], 1.0).unwrap();
        let g = grow_span(
            &gs,
            &m.nonlinear,
            40,
            BracketMode::TopDegree,
            DEFAULT_RANK_TOL,
        )
        .unwrap();
        let c = check_subspace(&gs[..2], &g.levels[0]).unwrap();
        assert!(c.contained && (c.margin - 1.0).abs() < 1e-12);
        let c = check_subspace(&[m.mode_field(79, 1.0)], g.last()).unwrap();
        assert!(c.contained && (c.margin - 1.0).abs() < 1e-10);
        assert!(check_subspace(&[gs[0].clone(), gs[0].clone() * 2.0], g.last()).is_err());
    }

    #[test]
    fn ns_condition_table() {
        let t = |z: &[(i32, i32)]| ns_condition(z).unwrap();
        assert_eq!(
            t(&[(1, 0), (-1, 0), (1, 1), (-1, -1)]),
            NsCondition {
                generates_z2: true,
                unequal_norms: true
            }
        );
        assert_eq!(
            t(&[(1, 0), (-1, 0), (0, 1), (0, -1)]),
            NsCondition {
                generates_z2: true,
                unequal_norms: false
            }
        );
        assert_eq!(
            t(&[(2, 0), (-2, 0), (0, 2), (0, -2)]),
            NsCondition {
                generates_z2: false,
                unequal_norms: false
            }
        );
        // without the symmetric partners nothing is generated
        assert!(!t(&[(1, 0), (1, 1)]).generates_z2);
        assert!(ns_condition(&[(0, 0)]).is_err());
    }

    #[test]
    fn rd_condition_cases() {
        let b = BasisSpec::dirichlet(16, 1.0).unwrap();
        let grid = b.grid(b.grid_size_for_degree(2)).unwrap();
        let mut e1 = DVector::zeros(16);
        e1[0] = 1.0;
        let mut e2 = DVector::zeros(16);
        e2[1] = 1.0;
        let sin1 = &e1 / std::f64::consts::SQRT_2;
        let prod = |a: &DVector<f64>, c: &DVector<f64>| {
            grid.analyze(&grid.synthesize(a).component_mul(&grid.synthesize(c)))
        };
        let s2 = prod(&sin1, &sin1);
        assert!(rd_condition(
            &b,
            std::slice::from_ref(&sin1),
            &[sin1.clone(), s2.clone()],
            1,
            1e-10
        )
        .unwrap());
        assert!(!rd_condition(
            &b,
            std::slice::from_ref(&sin1),
            std::slice::from_ref(&sin1),
            1,
            1e-10
        )
        .unwrap());
        let gs = vec![
            e1.clone(),
            e2.clone(),
            prod(&e1, &e1),
            prod(&e1, &e2),
            prod(&e2, &e1),
            prod(&e2, &e2),
        ];
        assert!(rd_condition(&b, &[e1, e2], &gs, 1, 1e-10).unwrap());
    }

    #[test]
    fn multiset_counts() {
        assert_eq!(multisets(4, 1).len(), 4);
        assert_eq!(multisets(4, 2).len(), 10);
        assert_eq!(multisets(3, 0), vec![Vec::<usize>::new()]);
    }
}
