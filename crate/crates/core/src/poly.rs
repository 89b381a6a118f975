//! Continuous polynomial vector fields on a truncated space.
//!
//! A homogeneous degree-`j` part is a symmetric multilinear form stored as
//! sparse `(sorted input tuple, output, T)` triples; as a polynomial the
//! tuple contributes the monomial coefficient `mult(tuple) · T`, where
//! `mult` counts the distinct orderings of the tuple.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_MAX_DEGREE: usize = 5;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Number of distinct orderings of a sorted tuple.
pub fn multiplicity(sorted: &[u32]) -> f64 {
    let mut denom = 1.0;
    let mut run = 1;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
            denom *= run as f64;
        } else {
            run = 1;
        }
    }
    factorial(sorted.len()) / denom
}

/// Rearranges `a` into the next lexicographic permutation; false at the last.
pub(crate) fn next_permutation(a: &mut [u32]) -> bool {
    if a.len() < 2 {
        return false;
    }
    let mut i = a.len() - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = a.len() - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Symmetric multilinear form `N_j : (R^dim)^j → R^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultilinearForm {
    degree: usize,
    dim: usize,
    /// Flattened sorted input tuples, `degree` entries per term.
    idx: Vec<u32>,
    out: Vec<u32>,
    /// Symmetric coefficient `T`.
    sym: Vec<f64>,
    /// Monomial coefficient `mult · T`.
    mono: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FormJson {
    degree: usize,
    dim: usize,
    triples: Vec<(Vec<u32>, u32, f64)>,
}

impl MultilinearForm {
    /// Builds a form from symmetric coefficients; input tuples are sorted and
    /// duplicates summed, exact zeros dropped.
    pub fn from_triples<I>(degree: usize, dim: usize, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, u32, f64)>,
    {
        if degree == 0 {
            return invalid("multilinear forms have degree >= 1");
        }
        let mut map: BTreeMap<(Vec<u32>, u32), f64> = BTreeMap::new();
        for (mut t, o, c) in triples {
            if t.len() != degree {
                return invalid(format!(
                    "tuple of length {} in a degree-{degree} form",
                    t.len()
                ));
            }
            if t.iter()
                .chain(std::iter::once(&o))
                .any(|&i| i as usize >= dim)
            {
                return invalid("form index out of range");
            }
            if !c.is_finite() {
                return Err(Error::NonFinite("MultilinearForm::from_triples"));
            }
            t.sort_unstable();
            *map.entry((t, o)).or_insert(0.0) += c;
        }
        let mut f = Self {
            degree,
            dim,
            idx: vec![],
            out: vec![],
            sym: vec![],
            mono: vec![],
        };
        for ((t, o), c) in map {
            if c != 0.0 {
                f.mono.push(c * multiplicity(&t));
                f.idx.extend_from_slice(&t);
                f.out.push(o);
                f.sym.push(c);
            }
        }
        Ok(f)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out.is_empty()
    }

    pub fn tuple(&self, e: usize) -> &[u32] {
        &self.idx[e * self.degree..(e + 1) * self.degree]
    }

    /// `(sorted inputs, output, symmetric coefficient)` for every stored term.
    pub fn triples(&self) -> impl Iterator<Item = (&[u32], u32, f64)> + '_ {
        (0..self.len()).map(move |e| (self.tuple(e), self.out[e], self.sym[e]))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut f = self.clone();
        f.sym.iter_mut().for_each(|c| *c *= s);
        f.mono.iter_mut().for_each(|c| *c *= s);
        f
    }

    /// `N_j(x, …, x)`.
    pub fn eval_diag(&self, x: &[f64], acc: &mut [f64]) {
        for e in 0..self.len() {
            let mut p = self.mono[e];
            for &i in self.tuple(e) {
                p *= x[i as usize];
            }
            acc[self.out[e] as usize] += p;
        }
    }

    /// `N_j(a_1, …, a_j)` for arbitrary arguments.
    pub fn eval_multi(&self, args: &[&[f64]], acc: &mut [f64]) {
        debug_assert_eq!(args.len(), self.degree);
        let mut perm = vec![0u32; self.degree];
        for e in 0..self.len() {
            perm.copy_from_slice(self.tuple(e));
            let mut s = 0.0;
            loop {
                let mut p = 1.0;
                for (slot, &i) in perm.iter().enumerate() {
                    p *= args[slot][i as usize];
                }
                s += p;
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            acc[self.out[e] as usize] += self.sym[e] * s;
        }
    }

    /// Calls `visit(o, l, ∂_l N_j(x)_o)` once per stored entry and distinct
    /// index `l` of its tuple; contributions to one `(o, l)` may repeat.
    fn visit_jacobian(&self, x: &[f64], mut visit: impl FnMut(usize, usize, f64)) {
        let d = self.degree;
        for e in 0..self.len() {
            let t = self.tuple(e);
            let o = self.out[e] as usize;
            let mut k = 0;
            while k < d {
                let l = t[k];
                let mut count = 0;
                while k < d && t[k] == l {
                    count += 1;
                    k += 1;
                }
                let mut p = self.mono[e] * count as f64;
                let mut skipped = false;
                for &i in t {
                    if i == l && !skipped {
                        skipped = true;
                    } else {
                        p *= x[i as usize];
                    }
                }
                visit(o, l as usize, p);
            }
        }
    }

    /// Adds `D N_j(x)` (the Jacobian of `x ↦ N_j(x,…,x)`) into `jac`.
    pub fn add_jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        self.visit_jacobian(x, |o, l, p| jac[(o, l)] += p);
    }

    /// `acc += D N_j(x) v`.
    pub fn add_jvp(&self, x: &[f64], v: &[f64], acc: &mut [f64]) {
        self.visit_jacobian(x, |o, l, p| acc[o] += p * v[l]);
    }

    /// `acc += D N_j(x)ᵀ w`.
    pub fn add_vjp(&self, x: &[f64], w: &[f64], acc: &mut [f64]) {
        self.visit_jacobian(x, |o, l, p| acc[l] += p * w[o]);
    }

    /// The form of degree `j-1` given by `(y…) ↦ j N_j(y…, g)`; for `j = 1`
    /// the result is the constant `N_1(g)` returned as `Err(vector)`.
    pub fn directional(&self, g: &[f64]) -> std::result::Result<MultilinearForm, DVector<f64>> {
        let j = self.degree;
        if j == 1 {
            let mut v = DVector::zeros(self.dim);
            self.eval_multi(&[g], v.as_mut_slice());
            return Err(v);
        }
        let mut triples = Vec::new();
        for e in 0..self.len() {
            let t = self.tuple(e);
            let mut k = 0;
            while k < j {
                let l = t[k];
                while k < j && t[k] == l {
                    k += 1;
                }
                let gl = g[l as usize];
                if gl != 0.0 {
                    let mut rest = t.to_vec();
                    let pos = rest.iter().position(|&i| i == l).unwrap();
                    rest.remove(pos);
                    triples.push((rest, self.out[e], j as f64 * self.sym[e] * gl));
                }
            }
        }
        Ok(MultilinearForm::from_triples(j - 1, self.dim, triples)
            .expect("contraction keeps indices valid"))
    }

    pub fn to_json(&self) -> Result<String> {
        let triples = self.triples().map(|(t, o, c)| (t.to_vec(), o, c)).collect();
        Ok(serde_json::to_string(&FormJson {
            degree: self.degree,
            dim: self.dim,
            triples,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: FormJson = serde_json::from_str(s)?;
        Self::from_triples(f.degree, f.dim, f.triples)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Linear {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl Linear {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Linear::Diagonal(d) => d.component_mul(x),
            Linear::Dense(m) => m * x,
        }
    }

    fn matrix(&self) -> DMatrix<f64> {
        match self {
            Linear::Diagonal(d) => DMatrix::from_diagonal(d),
            Linear::Dense(m) => m.clone(),
        }
    }
}

/// `P(x) = c + Lin(x) + Σ_j N_j(x, …, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyVectorField {
    dim: usize,
    pub constant: Option<DVector<f64>>,
    pub linear: Option<Linear>,
    forms: Vec<MultilinearForm>,
    pub max_degree: usize,
}

impl PolyVectorField {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            constant: None,
            linear: None,
            forms: vec![],
            max_degree: DEFAULT_MAX_DEGREE,
        }
    }

    pub fn constant(v: DVector<f64>) -> Self {
        let mut p = Self::zero(v.len());
        p.constant = Some(v);
        p
    }

    pub fn diagonal(d: DVector<f64>) -> Self {
        let mut p = Self::zero(d.len());
        p.linear = Some(Linear::Diagonal(d));
        p
    }

    pub fn with_max_degree(mut self, m: usize) -> Result<Self> {
        self.max_degree = m;
        self.check_degree()?;
        Ok(self)
    }

    /// Adds a homogeneous form; degrees must be distinct and at least 2.
    pub fn with_form(mut self, f: MultilinearForm) -> Result<Self> {
        if f.dim != self.dim {
            return invalid("form dimension differs from field dimension");
        }
        if f.degree < 2 {
            return invalid("degree-1 parts belong in the linear slot");
        }
        if self.forms.iter().any(|g| g.degree == f.degree) {
            return invalid(format!("duplicate degree {}", f.degree));
        }
        self.forms.push(f);
        self.forms.sort_by_key(|f| f.degree);
        self.check_degree()?;
        Ok(self)
    }

    pub fn with_linear(mut self, l: Linear) -> Self {
        self.linear = Some(l);
        self
    }

    fn check_degree(&self) -> Result<()> {
        let d = self.degree();
        if d > self.max_degree {
            return Err(Error::DegreeTooHigh {
                got: d,
                max: self.max_degree,
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forms(&self) -> &[MultilinearForm] {
        &self.forms
    }

    pub fn form(&self, degree: usize) -> Option<&MultilinearForm> {
        self.forms.iter().find(|f| f.degree == degree)
    }

    pub fn degree(&self) -> usize {
        if let Some(f) = self.forms.last() {
            f.degree
        } else if self.linear.is_some() {
            1
        } else {
            0
        }
    }

    pub fn is_constant(&self) -> bool {
        self.linear.is_none() && self.forms.is_empty()
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::BasisMismatch(format!(
                "vector of length {} for a field on dimension {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = match &self.constant {
            Some(c) => c.clone(),
            None => DVector::zeros(self.dim),
        };
        if let Some(l) = &self.linear {
            y += l.apply(x);
        }
        for f in &self.forms {
            f.eval_diag(x.as_slice(), y.as_mut_slice());
        }
        y
    }

    /// `D^i P(x)(dirs)`: `Σ_j j!/(j-i)! N_j(x^{j-i}, dirs)`.
    pub fn frechet(&self, x: &DVector<f64>, dirs: &[&DVector<f64>]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        for d in dirs {
            self.check_dim(d)?;
        }
        let i = dirs.len();
        if i == 0 {
            return invalid("frechet needs at least one direction");
        }
        let mut y = DVector::zeros(self.dim);
        if i == 1 {
            if let Some(l) = &self.linear {
                y += l.apply(dirs[0]);
            }
        }
        for f in &self.forms {
            let j = f.degree;
            if j < i {
                continue;
            }
            let mut args: Vec<&[f64]> = vec![x.as_slice(); j - i];
            args.extend(dirs.iter().map(|d| d.as_slice()));
            let mut part = DVector::zeros(self.dim);
            f.eval_multi(&args, part.as_mut_slice());
            y.axpy(factorial(j) / factorial(j - i), &part, 1.0);
        }
        Ok(y)
    }

    /// Dense `DP(x)`.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = match &self.linear {
            Some(l) => l.matrix(),
            None => DMatrix::zeros(self.dim, self.dim),
        };
        for f in &self.forms {
            f.add_jacobian(x.as_slice(), &mut jac);
        }
        jac
    }

    /// `DP(x) v` without forming the Jacobian.
    pub fn jvp(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut y = match &self.linear {
            Some(l) => l.apply(v),
            None => DVector::zeros(self.dim),
        };
        for f in &self.forms {
            f.add_jvp(x.as_slice(), v.as_slice(), y.as_mut_slice());
        }
        y
    }

    /// `DP(x)ᵀ w` without forming the Jacobian.
    pub fn vjp(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut y = match &self.linear {
            Some(Linear::Diagonal(d)) => d.component_mul(w),
            Some(Linear::Dense(m)) => m.tr_mul(w),
            None => DVector::zeros(self.dim),
        };
        for f in &self.forms {
            f.add_vjp(x.as_slice(), w.as_slice(), y.as_mut_slice());
        }
        y
    }

    /// The field `x ↦ DP(x) g` for a constant `g`.
    pub fn directional(&self, g: &DVector<f64>) -> Result<PolyVectorField> {
        self.check_dim(g)?;
        let mut out = PolyVectorField::zero(self.dim);
        out.max_degree = self.max_degree;
        let mut c: Option<DVector<f64>> = self.linear.as_ref().map(|l| l.apply(g));
        for f in &self.forms {
            match f.directional(g.as_slice()) {
                Ok(h) if h.degree == 1 => {
                    let mut m = DMatrix::zeros(self.dim, self.dim);
                    for (t, o, v) in h.triples() {
                        m[(o as usize, t[0] as usize)] += v;
                    }
                    out.linear = Some(Linear::Dense(m));
                }
                Ok(h) => out.forms.push(h),
                Err(v) => {
                    c = Some(c.map_or(v.clone(), |c| c + v));
                }
            }
        }
        out.constant = c;
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut p = self.clone();
        p.constant = p.constant.map(|c| c * s);
        p.linear = p.linear.map(|l| match l {
            Linear::Diagonal(d) => Linear::Diagonal(d * s),
            Linear::Dense(m) => Linear::Dense(m * s),
        });
        p.forms = p.forms.iter().map(|f| f.scaled(s)).collect();
        p
    }

    pub(crate) fn to_monomials(&self) -> Monomials {
        let mut m = Monomials {
            dim: self.dim,
            terms: BTreeMap::new(),
        };
        if let Some(c) = &self.constant {
            for (o, v) in c.iter().enumerate() {
                m.add(vec![], o as u32, *v);
            }
        }
        if let Some(l) = &self.linear {
            let mat = l.matrix();
            for o in 0..self.dim {
                for i in 0..self.dim {
                    m.add(vec![i as u32], o as u32, mat[(o, i)]);
                }
            }
        }
        for f in &self.forms {
            for e in 0..f.len() {
                m.add(f.tuple(e).to_vec(), f.out[e], f.mono[e]);
            }
        }
        m
    }
}

/// Polynomial vector field in plain monomial form, used for symbolic
/// composition.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Monomials {
    dim: usize,
    terms: BTreeMap<(Vec<u32>, u32), f64>,
}

impl Monomials {
    fn add(&mut self, t: Vec<u32>, o: u32, c: f64) {
        if c == 0.0 {
            return;
        }
        let e = self.terms.entry((t, o)).or_insert(0.0);
        *e += c;
    }

    /// `DA(x) B(x)` as a polynomial.
    fn derivative_along(a: &Monomials, b: &Monomials) -> Monomials {
        let mut by_out: BTreeMap<u32, Vec<(&Vec<u32>, f64)>> = BTreeMap::new();
        for ((t, o), c) in &b.terms {
            by_out.entry(*o).or_default().push((t, *c));
        }
        let mut r = Monomials {
            dim: a.dim,
            terms: BTreeMap::new(),
        };
        for ((t, o), c) in &a.terms {
            let mut k = 0;
            while k < t.len() {
                let l = t[k];
                let mut count = 0;
                while k < t.len() && t[k] == l {
                    count += 1;
                    k += 1;
                }
                let Some(bl) = by_out.get(&l) else { continue };
                let mut rest = t.clone();
                let pos = rest.iter().position(|&i| i == l).unwrap();
                rest.remove(pos);
                for (s, d) in bl {
                    let mut u = rest.clone();
                    u.extend_from_slice(s);
                    u.sort_unstable();
                    r.add(u, *o, c * count as f64 * d);
                }
            }
        }
        r
    }

    fn sub(mut self, other: &Monomials) -> Monomials {
        for ((t, o), c) in &other.terms {
            self.add(t.clone(), *o, -c);
        }
        self
    }

    fn into_field(self, max_degree: usize) -> Result<PolyVectorField> {
        let dim = self.dim;
        let mut p = PolyVectorField::zero(dim);
        p.max_degree = max_degree;
        let mut by_degree: BTreeMap<usize, Vec<(Vec<u32>, u32, f64)>> = BTreeMap::new();
        for ((t, o), c) in self.terms {
            if c == 0.0 {
                continue;
            }
            match t.len() {
                0 => {
                    p.constant.get_or_insert_with(|| DVector::zeros(dim))[o as usize] += c;
                }
                1 => {
                    let lin = p
                        .linear
                        .get_or_insert_with(|| Linear::Dense(DMatrix::zeros(dim, dim)));
                    if let Linear::Dense(m) = lin {
                        m[(o as usize, t[0] as usize)] += c;
                    }
                }
                j => {
                    let m = multiplicity(&t);
                    by_degree.entry(j).or_default().push((t, o, c / m));
                }
            }
        }
        for (j, triples) in by_degree {
            if j > max_degree {
                return Err(Error::DegreeTooHigh {
                    got: j,
                    max: max_degree,
                });
            }
            p.forms
                .push(MultilinearForm::from_triples(j, dim, triples)?);
        }
        Ok(p)
    }
}

/// `[A,B](x) = DA(x)B(x) - DB(x)A(x)`.
pub fn lie_bracket(
    a: &PolyVectorField,
    b: &PolyVectorField,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let ax = a.evaluate(x)?;
    let bx = b.evaluate(x)?;
    let mut r = if a.is_constant() {
        DVector::zeros(a.dim)
    } else {
        a.frechet(x, &[&bx])?
    };
    if !b.is_constant() {
        r -= b.frechet(x, &[&ax])?;
    }
    Ok(r)
}

/// Symbolic `[A,B] = DA(·)B` for constant `B`.
pub fn lie_bracket_sym(a: &PolyVectorField, b: &PolyVectorField) -> Result<PolyVectorField> {
    if !b.is_constant() {
        return Err(Error::Unsupported(
            "symbolic bracket needs a constant second argument".into(),
        ));
    }
    let g = b.constant.clone().unwrap_or_else(|| DVector::zeros(b.dim));
    a.directional(&g)
}

/// Left-nested `[…[[F,Q],g_1],…,g_n]`; the first bracket is formed by
/// polynomial composition when `Q` is not constant.
pub fn iterated_bracket(
    f: &PolyVectorField,
    q: &PolyVectorField,
    gs: &[DVector<f64>],
) -> Result<PolyVectorField> {
    if f.dim != q.dim {
        return Err(Error::BasisMismatch(
            "F and Q live on different dimensions".into(),
        ));
    }
    let max = f.max_degree.max(q.max_degree);
    let mut cur = if q.is_constant() {
        lie_bracket_sym(f, q)?
    } else {
        let mf = f.to_monomials();
        let mq = q.to_monomials();
        Monomials::derivative_along(&mf, &mq)
            .sub(&Monomials::derivative_along(&mq, &mf))
            .into_field(max)?
    };
    for g in gs {
        cur = cur.directional(g)?;
    }
    Ok(cur)
}

/// Coefficients of `Q(X + Σ_k g_k w_k)` as a polynomial in `w`, keyed by the
/// sorted index multiset `κ`: `D^{|κ|}Q(X)(g_κ) / Π_k (count of k in κ)!`.
pub fn expand_shift(
    q: &PolyVectorField,
    x: &DVector<f64>,
    gs: &[DVector<f64>],
) -> Result<BTreeMap<Vec<usize>, DVector<f64>>> {
    let mut out = BTreeMap::new();
    out.insert(vec![], q.evaluate(x)?);
    let d = gs.len();
    for i in 1..=q.degree() {
        let mut kappa = vec![0usize; i];
        loop {
            let dirs: Vec<&DVector<f64>> = kappa.iter().map(|&k| &gs[k]).collect();
            let mut denom = 1.0;
            let mut run = 1;
            for w in kappa.windows(2) {
                if w[0] == w[1] {
                    run += 1;
                    denom *= run as f64;
                } else {
                    run = 1;
                }
            }
            out.insert(kappa.clone(), q.frechet(x, &dirs)? / denom);
            // next nondecreasing tuple over 0..d
            let mut p = i;
            while p > 0 && kappa[p - 1] == d - 1 {
                p -= 1;
            }
            if p == 0 {
                break;
            }
            kappa[p - 1] += 1;
            let v = kappa[p - 1];
            kappa[p..].iter_mut().for_each(|k| *k = v);
        }
    }
    Ok(out)
}

/// Reassembles an [`expand_shift`] expansion at noise value `w`.
pub fn reassemble(coeffs: &BTreeMap<Vec<usize>, DVector<f64>>, w: &[f64]) -> DVector<f64> {
    let mut it = coeffs.iter();
    let (_, first) = it.next().expect("expansion has a constant term");
    let mut y = first.clone();
    for (k, c) in it {
        let p: f64 = k.iter().map(|&i| w[i]).product();
        y.axpy(p, c, 1.0);
    }
    y
}

/// Sampled lower bound on the smallest `C` with
/// `|N(u_1,…,u_j)|_{-1/2} <= C |u_1|_0 |u_2|_{1/2} ⋯ |u_j|_{1/2}`.
///
/// The sample sequence starts with the diagonal basis tuples and continues
/// with seeded Gaussian directions, so the estimate is nondecreasing in
/// `samples`.
pub fn multilinear_bound(
    form: &MultilinearForm,
    eigenvalues: &[f64],
    samples: usize,
    seed: u64,
) -> f64 {
    let dim = form.dim;
    let j = form.degree;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = |v: &[f64], s: f64| -> f64 {
        v.iter()
            .zip(eigenvalues)
            .map(|(a, l)| l.powf(2.0 * s) * a * a)
            .sum::<f64>()
            .sqrt()
    };
    let mut best: f64 = 0.0;
    let mut out = vec![0.0; dim];
    for k in 0..samples {
        let args: Vec<Vec<f64>> = if k < dim {
            (0..j)
                .map(|_| (0..dim).map(|i| if i == k { 1.0 } else { 0.0 }).collect())
                .collect()
        } else {
            (0..j)
                .map(|_| {
                    (0..dim)
                        .map(|_| rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()
        };
        let refs: Vec<&[f64]> = args.iter().map(|a| a.as_slice()).collect();
        out.iter_mut().for_each(|v| *v = 0.0);
        form.eval_multi(&refs, &mut out);
        let mut denom = norm(&args[0], 0.0);
        for a in &args[1..] {
            denom *= norm(a, 0.5);
        }
        if denom > 0.0 {
            best = best.max(norm(&out, -0.5) / denom);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_form(
        rng: &mut ChaCha8Rng,
        degree: usize,
        dim: usize,
        terms: usize,
    ) -> MultilinearForm {
        let t = (0..terms)
            .map(|_| {
                let idx = (0..degree)
                    .map(|_| rng.random_range(0..dim as u32))
                    .collect();
                (
                    idx,
                    rng.random_range(0..dim as u32),
                    rng.sample::<f64, _>(StandardNormal),
                )
            })
            .collect::<Vec<_>>();
        MultilinearForm::from_triples(degree, dim, t).unwrap()
    }

    #[test]
    fn multiplicities() {
        assert_eq!(multiplicity(&[1, 2, 3]), 6.0);
        assert_eq!(multiplicity(&[1, 1, 3]), 3.0);
        assert_eq!(multiplicity(&[2, 2, 2]), 1.0);
        assert_eq!(multiplicity(&[]), 1.0);
    }

    #[test]
    fn eval_multi_on_diagonal_matches_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_form(&mut rng, 3, 5, 20);
        let x = rand_vec(&mut rng, 5);
        let (mut a, mut b) = (vec![0.0; 5], vec![0.0; 5]);
        f.eval_diag(x.as_slice(), &mut a);
        f.eval_multi(&[x.as_slice(), x.as_slice(), x.as_slice()], &mut b);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn bilinear_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n2 = random_form(&mut rng, 2, 6, 15);
        let p = PolyVectorField::zero(6).with_form(n2.clone()).unwrap();
        let (x, h1, h2) = (
            rand_vec(&mut rng, 6),
            rand_vec(&mut rng, 6),
            rand_vec(&mut rng, 6),
        );
        let mut n_xh = vec![0.0; 6];
        n2.eval_multi(&[x.as_slice(), h1.as_slice()], &mut n_xh);
        let d1 = p.frechet(&x, &[&h1]).unwrap();
        for (a, b) in d1.iter().zip(&n_xh) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        let mut n_hh = vec![0.0; 6];
        n2.eval_multi(&[h1.as_slice(), h2.as_slice()], &mut n_hh);
        let d2 = p.frechet(&x, &[&h1, &h2]).unwrap();
        for (a, b) in d2.iter().zip(&n_hh) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        assert_eq!(p.frechet(&x, &[&h1, &h2, &h1]).unwrap().amax(), 0.0);
        assert!(p.frechet(&x, &[]).is_err());
    }

    #[test]
    fn jacobian_matches_frechet() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PolyVectorField::diagonal(rand_vec(&mut rng, 5))
            .with_form(random_form(&mut rng, 2, 5, 10))
            .unwrap()
            .with_form(random_form(&mut rng, 3, 5, 10))
            .unwrap();
        let (x, h) = (rand_vec(&mut rng, 5), rand_vec(&mut rng, 5));
        let a = p.jacobian(&x) * &h;
        let b = p.frechet(&x, &[&h]).unwrap();
        assert!((&a - &b).amax() < 1e-12);
        assert!((p.jvp(&x, &h) - b).amax() < 1e-12);
        let w = rand_vec(&mut rng, 5);
        assert!((p.vjp(&x, &w) - p.jacobian(&x).tr_mul(&w)).amax() < 1e-12);
    }

    #[test]
    fn constant_brackets_vanish_and_bilinear_bracket() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = PolyVectorField::constant(rand_vec(&mut rng, 4));
        let b = PolyVectorField::constant(rand_vec(&mut rng, 4));
        let x = rand_vec(&mut rng, 4);
        assert_eq!(lie_bracket(&a, &b, &x).unwrap().amax(), 0.0);
        let n2 = random_form(&mut rng, 2, 4, 8);
        let pa = PolyVectorField::zero(4).with_form(n2.clone()).unwrap();
        let g = rand_vec(&mut rng, 4);
        let r = lie_bracket(&pa, &PolyVectorField::constant(g.clone()), &x).unwrap();
        let mut o = vec![0.0; 4];
        n2.eval_multi(&[g.as_slice(), x.as_slice()], &mut o);
        for (p, q) in r.iter().zip(&o) {
            assert!((p - 2.0 * q).abs() < 1e-12);
        }
        let sym = lie_bracket_sym(&pa, &PolyVectorField::constant(g)).unwrap();
        assert!((sym.evaluate(&x).unwrap() - r).amax() < 1e-12);
        assert!(matches!(
            lie_bracket_sym(&pa, &pa),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn top_degree_bracket_recovers_form() {
        // [F, g/m!, g_1, …, g_{m-1}] = N_m(g, g_1, …, g_{m-1})
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 5;
        let n3 = random_form(&mut rng, 3, dim, 25);
        let f = PolyVectorField::diagonal(-rand_vec(&mut rng, dim).abs())
            .with_form(random_form(&mut rng, 2, dim, 10))
            .unwrap()
            .with_form(n3.clone())
            .unwrap();
        let g = rand_vec(&mut rng, dim);
        let gs = vec![rand_vec(&mut rng, dim), rand_vec(&mut rng, dim)];
        let q = PolyVectorField::constant(&g / 6.0);
        let b = iterated_bracket(&f, &q, &gs).unwrap();
        assert!(b.is_constant());
        let mut o = vec![0.0; dim];
        n3.eval_multi(&[g.as_slice(), gs[0].as_slice(), gs[1].as_slice()], &mut o);
        let c = b.constant.unwrap();
        for (p, q) in c.iter().zip(&o) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_bracket_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dim = 4;
        let f = PolyVectorField::diagonal(rand_vec(&mut rng, dim))
            .with_form(random_form(&mut rng, 2, dim, 8))
            .unwrap();
        let q = PolyVectorField::constant(rand_vec(&mut rng, dim))
            .with_form(random_form(&mut rng, 2, dim, 6))
            .unwrap();
        let sym = iterated_bracket(&f, &q, &[]).unwrap();
        for _ in 0..5 {
            let x = rand_vec(&mut rng, dim);
            let direct = lie_bracket(&f, &q, &x).unwrap();
            assert!((sym.evaluate(&x).unwrap() - &direct).amax() < 1e-10 * (1.0 + direct.amax()));
        }
        let big = q
            .clone()
            .with_form(random_form(&mut rng, 5, dim, 3))
            .unwrap();
        let f5 = f
            .clone()
            .with_form(random_form(&mut rng, 5, dim, 3))
            .unwrap();
        assert!(matches!(
            iterated_bracket(&f5, &big, &[]),
            Err(Error::DegreeTooHigh { .. })
        ));
        assert!(matches!(
            f.clone().with_max_degree(1),
            Err(Error::DegreeTooHigh { .. })
        ));
    }

    #[test]
    fn expand_shift_linear_and_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 3;
        let n2 = random_form(&mut rng, 2, dim, 6);
        let q = PolyVectorField::zero(dim).with_form(n2.clone()).unwrap();
        let (x, g) = (rand_vec(&mut rng, dim), rand_vec(&mut rng, dim));
        let e = expand_shift(&q, &x, std::slice::from_ref(&g)).unwrap();
        let mut xx = vec![0.0; dim];
        n2.eval_multi(&[x.as_slice(), x.as_slice()], &mut xx);
        let mut gx = vec![0.0; dim];
        n2.eval_multi(&[g.as_slice(), x.as_slice()], &mut gx);
        let mut gg = vec![0.0; dim];
        n2.eval_multi(&[g.as_slice(), g.as_slice()], &mut gg);
        for o in 0..dim {
            assert!((e[&vec![]][o] - xx[o]).abs() < 1e-12);
            assert!((e[&vec![0]][o] - 2.0 * gx[o]).abs() < 1e-12);
            assert!((e[&vec![0, 0]][o] - gg[o]).abs() < 1e-12);
        }
        let lin = PolyVectorField::diagonal(rand_vec(&mut rng, dim));
        let e = expand_shift(&lin, &x, std::slice::from_ref(&g)).unwrap();
        assert_eq!(e.len(), 2);
        assert!((&e[&vec![0]] - lin.evaluate(&g).unwrap()).amax() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_form(&mut rng, 3, 6, 12);
        let g = MultilinearForm::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn bound_of_rank_one_form() {
        let lam = [2.0, 5.0, 7.0];
        let f = MultilinearForm::from_triples(2, 3, vec![(vec![0, 0], 0, 1.0)]).unwrap();
        let b = multilinear_bound(&f, &lam, 200, 0);
        assert!((b - 1.0 / lam[0]).abs() < 1e-12, "{b}");
        let z = MultilinearForm::from_triples(2, 3, Vec::new()).unwrap();
        assert_eq!(multilinear_bound(&z, &lam, 50, 0), 0.0);
    }
}
