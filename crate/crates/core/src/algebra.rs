//! Standard graded algebras `k[x_0..x_{m-1}]/I` realized degree by degree.
//!
//! Each degree slice keeps the grevlex-sorted monomials, the standard
//! (non-leading) monomials that form the basis of `R_t`, and normal forms of
//! the leading monomials. Multiplication matrices are built on first use.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{FpMatrix, PrimeField};
use crate::poly::{binomial, monomials_of_degree, total_degree, Exponents, Polynomial};

const NOT_BASIS: u32 = u32::MAX;
const MAX_ATTEMPTS: u64 = 32;

type SparseRow = Vec<(u32, u64)>;

#[derive(Debug)]
struct DegreeSlice {
    monomials: Vec<Exponents>,
    index: HashMap<Exponents, u32>,
    /// Basis position of each monomial, or `NOT_BASIS`.
    basis_pos: Vec<u32>,
    /// Monomial indices of the standard monomials.
    standard: Vec<u32>,
    /// Normal form (over the basis) of each leading monomial.
    normal_forms: HashMap<u32, SparseRow>,
}

#[derive(Debug)]
pub struct GradedAlgebra {
    field: PrimeField,
    nvars: usize,
    gens: Vec<Polynomial>,
    max_degree: usize,
    slices: Vec<DegreeSlice>,
    actions: Vec<Vec<OnceLock<FpMatrix>>>,
}

impl GradedAlgebra {
    /// Builds `R_t` for `0 <= t <= max_degree`.
    pub fn build(field: PrimeField, nvars: usize, gens: Vec<Polynomial>, max_degree: usize) -> Result<Self> {
        if max_degree < 2 {
            return Err(Error::Input(format!("window D = {max_degree} must be at least 2")));
        }
        if nvars == 0 {
            return Err(Error::Input("need at least one variable".into()));
        }
        for g in &gens {
            if g.nvars() != nvars {
                return Err(Error::Input(format!("generator {g} has the wrong number of variables")));
            }
            if g.field() != field {
                return Err(Error::Input("generator over a different field".into()));
            }
            let deg = g.require_homogeneous()?;
            if deg == 0 {
                return Err(Error::Input("generators must have degree at least 1".into()));
            }
        }
        let slices: Vec<DegreeSlice> =
            (0..=max_degree).into_par_iter().map(|t| build_slice(field, nvars, &gens, t as u32)).collect();
        let actions = (0..nvars).map(|_| (0..max_degree).map(|_| OnceLock::new()).collect()).collect();
        Ok(GradedAlgebra { field, nvars, gens, max_degree, slices, actions })
    }

    /// Polynomial ring in `nvars` variables.
    pub fn polynomial_ring(field: PrimeField, nvars: usize, max_degree: usize) -> Result<Self> {
        Self::build(field, nvars, Vec::new(), max_degree)
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn generators(&self) -> &[Polynomial] {
        &self.gens
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Same ideal, larger window.
    pub fn rebuild(&self, max_degree: usize) -> Result<Self> {
        Self::build(self.field, self.nvars, self.gens.clone(), max_degree)
    }

    fn check(&self, t: i64) -> Result<&DegreeSlice> {
        if t < 0 || t as usize > self.max_degree {
            return Err(Error::Window(format!("degree {t} outside the realized window [0, {}]", self.max_degree)));
        }
        Ok(&self.slices[t as usize])
    }

    /// `dim_k R_t`; zero below degree 0.
    pub fn hilbert_function(&self, t: i64) -> Result<usize> {
        if t < 0 {
            return Ok(0);
        }
        Ok(self.check(t)?.standard.len())
    }

    /// `dim_k R_t` for `t` known to be in the window.
    pub fn dim(&self, t: usize) -> usize {
        self.slices[t].standard.len()
    }

    /// Standard monomials spanning `R_t`, in grevlex-descending order.
    pub fn basis(&self, t: usize) -> Vec<&Exponents> {
        let s = &self.slices[t];
        s.standard.iter().map(|&i| &s.monomials[i as usize]).collect()
    }

    /// Basis position of a standard monomial.
    pub fn basis_index(&self, e: &[u32]) -> Option<usize> {
        let s = self.slices.get(total_degree(e) as usize)?;
        let &i = s.index.get(e)?;
        let pos = s.basis_pos[i as usize];
        (pos != NOT_BASIS).then_some(pos as usize)
    }

    /// Coordinates of a monomial in the basis of its degree (sparse).
    pub fn normal_form_monomial(&self, e: &[u32]) -> Result<SparseRow> {
        let t = total_degree(e) as i64;
        let s = self.check(t)?;
        let i = *s.index.get(e).ok_or_else(|| Error::Input("exponent length mismatch".into()))?;
        let pos = s.basis_pos[i as usize];
        if pos != NOT_BASIS {
            return Ok(vec![(pos, 1)]);
        }
        Ok(s.normal_forms[&i].clone())
    }

    /// Dense coordinates of a homogeneous polynomial of degree `t` in `R_t`.
    pub fn normal_form(&self, poly: &Polynomial) -> Result<Vec<u64>> {
        let t = poly.require_homogeneous().unwrap_or(0) as usize;
        let dim = self.hilbert_function(t as i64)?;
        let f = self.field;
        let mut out = vec![0u64; dim];
        for (e, c) in poly.terms() {
            for (j, v) in self.normal_form_monomial(e)? {
                out[j as usize] = f.mul_add(out[j as usize], *c, v);
            }
        }
        Ok(out)
    }

    /// Multiplication by `x_var` from `R_t` to `R_{t+1}`.
    pub fn variable_action(&self, var: usize, t: usize) -> Result<&FpMatrix> {
        if var >= self.nvars {
            return Err(Error::Index(format!("variable x{var} out of range")));
        }
        if t >= self.max_degree {
            return Err(Error::Window(format!(
                "action from degree {t} needs degree {} beyond the window {}",
                t + 1,
                self.max_degree
            )));
        }
        Ok(self.actions[var][t].get_or_init(|| {
            let src = &self.slices[t];
            let cols = src.standard.len();
            let mut m = FpMatrix::zeros(self.field, self.dim(t + 1), cols);
            for (c, &mi) in src.standard.iter().enumerate() {
                let mut e = src.monomials[mi as usize].clone();
                e[var] += 1;
                for (r, v) in self.normal_form_monomial(&e).expect("degree in window") {
                    m.set(r as usize, c, v);
                }
            }
            m
        }))
    }

    /// Degree-one basis elements as variable indices (the standard monomials
    /// of degree one).
    pub fn degree_one_variables(&self) -> Vec<usize> {
        self.basis(1).iter().map(|e| e.iter().position(|&x| x == 1).unwrap()).collect()
    }

    /// Multiplication `R_t -> R_{t+1}` by `Σ coeffs[k] b_k`, where `b_k` is the
    /// degree-one basis.
    pub fn linear_action(&self, coeffs: &[u64], t: usize) -> Result<FpMatrix> {
        let vars = self.degree_one_variables();
        if coeffs.len() != vars.len() {
            return Err(Error::Shape(format!(
                "form has {} coordinates, R_1 has dimension {}",
                coeffs.len(),
                vars.len()
            )));
        }
        if t >= self.max_degree {
            return Err(Error::Window(format!("action from degree {t} leaves the window {}", self.max_degree)));
        }
        let mut out = FpMatrix::zeros(self.field, self.dim(t + 1), self.dim(t));
        for (&c, &v) in coeffs.iter().zip(&vars) {
            if c % self.field.p() != 0 {
                out.add_scaled(self.variable_action(v, t)?, c);
            }
        }
        Ok(out)
    }

    /// A degree-one form as a polynomial in the ambient variables.
    pub fn form_polynomial(&self, coeffs: &[u64]) -> Polynomial {
        let vars = self.degree_one_variables();
        let mut full = vec![0u64; self.nvars];
        for (&c, &v) in coeffs.iter().zip(&vars) {
            full[v] = c;
        }
        Polynomial::linear(self.field, &full)
    }

    /// Hilbert function of `R/(forms)R` in degree `t`.
    pub fn quotient_hilbert(&self, forms: &[Vec<u64>], t: usize) -> Result<usize> {
        if t == 0 {
            return Ok(1);
        }
        let dim = self.hilbert_function(t as i64)?;
        let blocks: Vec<FpMatrix> = forms.iter().map(|z| self.linear_action(z, t - 1)).collect::<Result<_>>()?;
        let refs: Vec<&FpMatrix> = blocks.iter().collect();
        Ok(dim - FpMatrix::hstack_all(self.field, dim, &refs).rank())
    }

    /// Degree of the Hilbert polynomial as read from the top of the window:
    /// the smallest `k` whose `(k+1)`-th finite difference vanishes on the
    /// last values. `None` when the window is too short to tell.
    pub fn hilbert_polynomial_degree(&self) -> Option<usize> {
        let h: Vec<i128> = (0..=self.max_degree).map(|t| self.dim(t) as i128).collect();
        let mut diffs = vec![h];
        while diffs.last().unwrap().len() > 1 {
            let last = diffs.last().unwrap();
            diffs.push(last.windows(2).map(|w| w[1] - w[0]).collect());
        }
        // the k-th difference must be nonzero, and the (k+1)-th must vanish
        // on its last two entries
        for k in 0..diffs.len() {
            let next = diffs.get(k + 1)?;
            if next.len() < 2 {
                return None;
            }
            let tail = &next[next.len() - 2..];
            if tail.iter().all(|&x| x == 0) && *diffs[k].last().unwrap() != 0 {
                return Some(k);
            }
        }
        None
    }

    /// Draws `d` seeded random linear forms until `R/(z)R` has finite length
    /// inside the window. The Hilbert-polynomial degree must be `d - 1` and
    /// each form must act injectively in low degrees.
    pub fn noether_normalize(&self, d: usize, seed: u64) -> Result<LinearFormSet> {
        if d == 0 {
            return Err(Error::Input("dimension must be positive".into()));
        }
        match self.hilbert_polynomial_degree() {
            Some(k) if k + 1 == d => {}
            Some(k) => {
                return Err(Error::Normalization(format!(
                    "asserted dimension {d} but the Hilbert polynomial has degree {k} (dimension {})",
                    k + 1
                )))
            }
            None => {
                return Err(Error::Normalization(format!(
                    "window D = {} too small to read off the Hilbert polynomial",
                    self.max_degree
                )))
            }
        }
        let r1 = self.dim(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for attempt in 1..=MAX_ATTEMPTS {
            let forms: Vec<Vec<u64>> =
                (0..d).map(|_| (0..r1).map(|_| rng.gen_range(0..self.field.p())).collect()).collect();
            if !self.forms_look_regular(&forms)? {
                continue;
            }
            if let Some(t0) = self.certificate(&forms)? {
                return Ok(LinearFormSet { forms, seed, t0, attempts: attempt });
            }
        }
        Err(Error::Normalization(format!(
            "no system of parameters after {MAX_ATTEMPTS} attempts (seed {seed}); check d, enlarge the window, or use a larger p"
        )))
    }

    /// Checks given forms: returns the certificate degree or a failure.
    pub fn certify_forms(&self, forms: Vec<Vec<u64>>, seed: u64) -> Result<LinearFormSet> {
        match self.certificate(&forms)? {
            Some(t0) => Ok(LinearFormSet { forms, seed, t0, attempts: 1 }),
            None => Err(Error::Normalization("forms do not cut out a finite-length quotient in the window".into())),
        }
    }

    fn certificate(&self, forms: &[Vec<u64>]) -> Result<Option<usize>> {
        for t in 1..=self.max_degree {
            if self.quotient_hilbert(forms, t)? == 0 {
                return Ok(Some(t));
            }
        }
        Ok(None)
    }

    fn forms_look_regular(&self, forms: &[Vec<u64>]) -> Result<bool> {
        for z in forms {
            if z.iter().all(|&c| c == 0) {
                return Ok(false);
            }
            for t in 0..self.max_degree.min(3) {
                if self.linear_action(z, t)?.rank() < self.dim(t) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Change of coordinates putting the forms last. Returns `None` when the
    /// ring has linear relations or is not visibly free over `k[z]`.
    pub fn adapted(&self, forms: &LinearFormSet) -> Result<Option<AdaptedAlgebra>> {
        AdaptedAlgebra::new(self, forms)
    }
}

fn build_slice(field: PrimeField, nvars: usize, gens: &[Polynomial], t: u32) -> DegreeSlice {
    let monomials = monomials_of_degree(nvars, t);
    let index: HashMap<Exponents, u32> = monomials.iter().enumerate().map(|(i, e)| (e.clone(), i as u32)).collect();
    let mut pivots: HashMap<u32, SparseRow> = HashMap::new();
    for g in gens {
        let dg = g.degree().unwrap();
        if dg > t {
            continue;
        }
        for mu in monomials_of_degree(nvars, t - dg) {
            let mut row: SparseRow = g
                .terms()
                .iter()
                .map(|(e, c)| {
                    let prod: Exponents = e.iter().zip(&mu).map(|(a, b)| a + b).collect();
                    (index[&prod], *c)
                })
                .collect();
            row.sort_unstable_by_key(|&(c, _)| c);
            insert_row(field, &mut pivots, row);
        }
    }
    let mut basis_pos = vec![NOT_BASIS; monomials.len()];
    let mut standard = Vec::new();
    for i in 0..monomials.len() as u32 {
        if !pivots.contains_key(&i) {
            basis_pos[i as usize] = standard.len() as u32;
            standard.push(i);
        }
    }
    // back substitution from the smallest leading monomial upwards
    let mut leads: Vec<u32> = pivots.keys().copied().collect();
    leads.sort_unstable_by(|a, b| b.cmp(a));
    let mut normal_forms: HashMap<u32, SparseRow> = HashMap::with_capacity(leads.len());
    let mut dense = vec![0u64; standard.len()];
    for lead in leads {
        let row = &pivots[&lead];
        for &(c, v) in &row[1..] {
            let neg = field.neg(v);
            if basis_pos[c as usize] != NOT_BASIS {
                let j = basis_pos[c as usize] as usize;
                dense[j] = field.add(dense[j], neg);
            } else {
                for &(j, w) in &normal_forms[&c] {
                    dense[j as usize] = field.mul_add(dense[j as usize], neg, w);
                }
            }
        }
        let nf: SparseRow = dense
            .iter_mut()
            .enumerate()
            .filter(|(_, x)| **x != 0)
            .map(|(j, x)| (j as u32, std::mem::take(x)))
            .collect();
        normal_forms.insert(lead, nf);
    }
    DegreeSlice { monomials, index, basis_pos, standard, normal_forms }
}

/// Reduces `row` by existing pivots and stores it if a new leading column
/// appears. Pivot rows are monic.
fn insert_row(field: PrimeField, pivots: &mut HashMap<u32, SparseRow>, mut row: SparseRow) {
    while let Some(&(lead, c)) = row.first() {
        match pivots.get(&lead) {
            Some(piv) => row = axpy(field, &row, field.neg(c), piv),
            None => {
                let inv = field.inv(c);
                for (_, v) in row.iter_mut() {
                    *v = field.mul(*v, inv);
                }
                pivots.insert(lead, row);
                return;
            }
        }
    }
}

/// `a + s*b` for sorted sparse rows.
fn axpy(field: PrimeField, a: &SparseRow, s: u64, b: &SparseRow) -> SparseRow {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let ca = a.get(i).map_or(u32::MAX, |x| x.0);
        let cb = b.get(j).map_or(u32::MAX, |x| x.0);
        let (c, v) = if ca < cb {
            i += 1;
            (ca, a[i - 1].1)
        } else if cb < ca {
            j += 1;
            (cb, field.mul(s, b[j - 1].1))
        } else {
            i += 1;
            j += 1;
            (ca, field.mul_add(a[i - 1].1, s, b[j - 1].1))
        };
        if v != 0 {
            out.push((c, v));
        }
    }
    out
}

/// `d` linear forms on `R`, coordinates over the degree-one basis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LinearFormSet {
    pub forms: Vec<Vec<u64>>,
    pub seed: u64,
    /// First degree where `R/(z)R` vanishes.
    pub t0: usize,
    pub attempts: u64,
}

impl LinearFormSet {
    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }
}

/// `R` in coordinates `(w_1..w_{m-d}, z_1..z_d)` with the forms last, so that
/// grevlex standard monomials factor as `b * z^γ` when `R` is free over
/// `A = k[z]`. The basis `b` runs over the z-free standard monomials.
#[derive(Debug)]
pub struct AdaptedAlgebra {
    pub ring: GradedAlgebra,
    /// Rows are the new variables written in the old ones.
    pub change: FpMatrix,
    /// Old variables written in the new ones.
    pub inverse: FpMatrix,
    pub d: usize,
    /// Free basis over `A`: exponents in the `w` variables.
    pub free_basis: Vec<Exponents>,
    /// `mult[l][b]` is `w_l * b` as A-coefficients per basis element, each a
    /// polynomial in the `d` variables `z`.
    pub mult: Vec<Vec<Vec<Polynomial>>>,
}

impl AdaptedAlgebra {
    fn new(alg: &GradedAlgebra, forms: &LinearFormSet) -> Result<Option<Self>> {
        let f = alg.field;
        let m = alg.nvars;
        let d = forms.len();
        if alg.dim(1) != m || d > m {
            return Ok(None);
        }
        // complete the forms with unit vectors
        let z_rows: Vec<Vec<u64>> = forms.forms.clone();
        let mut rows: Vec<Vec<u64>> = Vec::new();
        for k in 0..m {
            if rows.len() + d == m {
                break;
            }
            let mut e = vec![0u64; m];
            e[k] = 1;
            let mut trial = rows.clone();
            trial.push(e.clone());
            trial.extend(z_rows.iter().cloned());
            let mat = FpMatrix::from_fn(f, trial.len(), m, |r, c| trial[r][c]);
            if mat.rank() == trial.len() {
                rows.push(e);
            }
        }
        rows.extend(z_rows);
        let change = FpMatrix::from_fn(f, m, m, |r, c| rows[r][c]);
        let Some(inverse) = change.solve(&FpMatrix::identity(f, m)) else {
            return Ok(None);
        };
        // x = inverse * y
        let images: Vec<Polynomial> = (0..m).map(|i| Polynomial::linear(f, inverse.row(i))).collect();
        let gens: Vec<Polynomial> = alg.gens.iter().map(|g| g.substitute(&images)).collect();
        let top = alg.gens.iter().filter_map(Polynomial::degree).max().unwrap_or(1) as usize;
        let ring = GradedAlgebra::build(f, m, gens, (top + 2).max(alg.max_degree.min(top + 4)))?;
        let nw = m - d;
        let is_z_free = |e: &[u32]| e[nw..].iter().all(|&x| x == 0);
        let mut free_basis: Vec<Exponents> = Vec::new();
        for t in 0..=ring.max_degree {
            free_basis.extend(ring.basis(t).into_iter().filter(|e| is_z_free(e)).cloned());
        }
        let top_b = free_basis.iter().map(|e| total_degree(e)).max().unwrap_or(0) as usize;
        if top_b + 2 > ring.max_degree {
            return Ok(None);
        }
        // standard monomials must be exactly b * z^γ
        for t in 0..=ring.max_degree {
            let expected: u128 = free_basis
                .iter()
                .map(|b| {
                    let k = t as i64 - total_degree(b) as i64;
                    if k < 0 {
                        0
                    } else {
                        binomial(k + d as i64 - 1, d as i64 - 1)
                    }
                })
                .sum();
            let basis = ring.basis(t);
            let ok = basis.len() as u128 == expected
                && basis.iter().all(|e| {
                    let mut w = e.to_vec();
                    w[nw..].iter_mut().for_each(|x| *x = 0);
                    free_basis.contains(&w)
                });
            if !ok {
                return Ok(None);
            }
        }
        let b_index: HashMap<&Exponents, usize> = free_basis.iter().enumerate().map(|(i, b)| (b, i)).collect();
        let s = free_basis.len();
        let mut mult = vec![vec![vec![Polynomial::zero(f, d); s]; s]; nw];
        for (l, table) in mult.iter_mut().enumerate() {
            for (bi, b) in free_basis.iter().enumerate() {
                let mut e = b.clone();
                e[l] += 1;
                let t = total_degree(&e) as usize;
                let basis = ring.basis(t);
                for (j, v) in ring.normal_form_monomial(&e)? {
                    let std = basis[j as usize];
                    let mut w = std.clone();
                    w[nw..].iter_mut().for_each(|x| *x = 0);
                    let target = b_index[&w];
                    let zpart = Polynomial::monomial(f, std[nw..].to_vec(), v);
                    table[target][bi] = table[target][bi].add(&zpart);
                }
            }
        }
        Ok(Some(AdaptedAlgebra { ring, change, inverse, d, free_basis, mult }))
    }

    pub fn rank(&self) -> usize {
        self.free_basis.len()
    }

    /// Degrees `a_b` of the free basis.
    pub fn shifts(&self) -> Vec<usize> {
        self.free_basis.iter().map(|b| total_degree(b) as usize).collect()
    }

    /// `w_l^k * b` for every basis element `b`, as A-coefficient columns:
    /// `out[b][b']` is the coefficient of `b'`.
    pub fn power_action(&self, l: usize, k: u32) -> Vec<Vec<Polynomial>> {
        let s = self.rank();
        let f = self.ring.field();
        (0..s)
            .map(|b| {
                let mut v: Vec<Polynomial> = (0..s)
                    .map(|j| if j == b { Polynomial::constant(f, self.d, 1) } else { Polynomial::zero(f, self.d) })
                    .collect();
                for _ in 0..k {
                    let mut next = vec![Polynomial::zero(f, self.d); s];
                    for (src, coeff) in v.iter().enumerate() {
                        if coeff.is_zero() {
                            continue;
                        }
                        for (dst, slot) in next.iter_mut().enumerate() {
                            let entry = &self.mult[l][dst][src];
                            if !entry.is_zero() {
                                *slot = slot.add(&entry.mul(coeff));
                            }
                        }
                    }
                    v = next;
                }
                v
            })
            .collect()
    }
}
