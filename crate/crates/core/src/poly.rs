//! Sparse multivariate polynomials over GF(p) and monomial enumeration.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::PrimeField;

pub type Exponents = Vec<u32>;

pub fn total_degree(e: &[u32]) -> u32 {
    e.iter().sum()
}

/// Graded reverse lexicographic comparison: higher degree is larger; on ties
/// the monomial with the smaller exponent in the last differing variable is
/// larger.
pub fn grevlex_cmp(a: &[u32], b: &[u32]) -> Ordering {
    let (da, db) = (total_degree(a), total_degree(b));
    if da != db {
        return da.cmp(&db);
    }
    for (x, y) in a.iter().zip(b).rev() {
        if x != y {
            return y.cmp(x);
        }
    }
    Ordering::Equal
}

/// All exponent vectors of total degree `t` in `m` variables, largest first
/// in grevlex order.
pub fn monomials_of_degree(m: usize, t: u32) -> Vec<Exponents> {
    let mut out = Vec::new();
    if m == 0 {
        if t == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    let mut cur = vec![0u32; m];
    fill(&mut cur, 0, t, &mut out);
    out.sort_by(|a, b| grevlex_cmp(b, a));
    out
}

fn fill(cur: &mut Vec<u32>, i: usize, left: u32, out: &mut Vec<Exponents>) {
    if i + 1 == cur.len() {
        cur[i] = left;
        out.push(cur.clone());
        return;
    }
    for a in 0..=left {
        cur[i] = a;
        fill(cur, i + 1, left - a, out);
    }
    cur[i] = 0;
}

pub fn binomial(n: i64, k: i64) -> u128 {
    if k < 0 || n < k || n < 0 {
        return 0;
    }
    let k = k.min(n - k) as u128;
    let n = n as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Number of monomials of degree `t` in `m` variables.
pub fn monomial_count(m: usize, t: i64) -> u128 {
    if t < 0 {
        return 0;
    }
    if m == 0 {
        return u128::from(t == 0);
    }
    binomial(t + m as i64 - 1, m as i64 - 1)
}

/// A polynomial with terms kept in decreasing grevlex order, merged, and free
/// of zero coefficients.
#[derive(Clone, PartialEq, Eq)]
pub struct Polynomial {
    field: PrimeField,
    nvars: usize,
    terms: Vec<(Exponents, u64)>,
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (e, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            let mut parts = Vec::new();
            if *c != 1 || e.iter().all(|&x| x == 0) {
                parts.push(c.to_string());
            }
            for (v, &x) in e.iter().enumerate() {
                match x {
                    0 => {}
                    1 => parts.push(format!("x{v}")),
                    _ => parts.push(format!("x{v}^{x}")),
                }
            }
            write!(f, "{}", parts.join("*"))?;
        }
        Ok(())
    }
}

impl Polynomial {
    pub fn zero(field: PrimeField, nvars: usize) -> Self {
        Polynomial { field, nvars, terms: Vec::new() }
    }

    pub fn constant(field: PrimeField, nvars: usize, c: u64) -> Self {
        Self::from_terms(field, nvars, vec![(vec![0; nvars], c)])
    }

    /// The variable `x_i`.
    pub fn var(field: PrimeField, nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Self::from_terms(field, nvars, vec![(e, 1)])
    }

    pub fn monomial(field: PrimeField, exps: Exponents, c: u64) -> Self {
        let n = exps.len();
        Self::from_terms(field, n, vec![(exps, c)])
    }

    /// Linear form `Σ coeffs[i] x_i`.
    pub fn linear(field: PrimeField, coeffs: &[u64]) -> Self {
        let n = coeffs.len();
        let terms = coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut e = vec![0; n];
                e[i] = 1;
                (e, c)
            })
            .collect();
        Self::from_terms(field, n, terms)
    }

    /// Canonicalizes arbitrary terms (coefficients reduced mod p).
    pub fn from_terms(field: PrimeField, nvars: usize, terms: Vec<(Exponents, u64)>) -> Self {
        let mut acc: BTreeMap<Exponents, u64> = BTreeMap::new();
        for (e, c) in terms {
            assert_eq!(e.len(), nvars, "exponent length mismatch");
            let c = field.reduce(c);
            let slot = acc.entry(e).or_insert(0);
            *slot = field.add(*slot, c);
        }
        let mut terms: Vec<_> = acc.into_iter().filter(|(_, c)| *c != 0).collect();
        terms.sort_by(|a, b| grevlex_cmp(&b.0, &a.0));
        Polynomial { field, nvars, terms }
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[(Exponents, u64)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Leading term in grevlex order.
    pub fn leading(&self) -> Option<&(Exponents, u64)> {
        self.terms.first()
    }

    /// Total degree of the leading term; `None` for zero.
    pub fn degree(&self) -> Option<u32> {
        self.terms.iter().map(|(e, _)| total_degree(e)).max()
    }

    pub fn is_homogeneous(&self) -> bool {
        let mut degs = self.terms.iter().map(|(e, _)| total_degree(e));
        match degs.next() {
            None => true,
            Some(d) => degs.all(|x| x == d),
        }
    }

    /// Coefficient of a monomial.
    pub fn coeff(&self, e: &[u32]) -> u64 {
        self.terms.iter().find(|(x, _)| x == e).map_or(0, |(_, c)| *c)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, other.nvars);
        let terms = self.terms.iter().chain(&other.terms).cloned().collect();
        Self::from_terms(self.field, self.nvars, terms)
    }

    pub fn scale(&self, c: u64) -> Polynomial {
        let f = self.field;
        let terms = self.terms.iter().map(|(e, x)| (e.clone(), f.mul(*x, f.reduce(c)))).collect();
        Self::from_terms(f, self.nvars, terms)
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(self.field.p() - 1))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, other.nvars);
        let f = self.field;
        let mut acc: BTreeMap<Exponents, u64> = BTreeMap::new();
        for (a, x) in &self.terms {
            for (b, y) in &other.terms {
                let e: Exponents = a.iter().zip(b).map(|(u, v)| u + v).collect();
                let slot = acc.entry(e).or_insert(0);
                *slot = f.mul_add(*slot, *x, *y);
            }
        }
        Self::from_terms(f, self.nvars, acc.into_iter().collect())
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Self::constant(self.field, self.nvars, 1);
        for _ in 0..k {
            acc = acc.mul(self);
        }
        acc
    }

    /// Substitutes `x_i ↦ images[i]`; all images share a variable count.
    pub fn substitute(&self, images: &[Polynomial]) -> Polynomial {
        assert_eq!(images.len(), self.nvars, "substitute: wrong number of images");
        let n = images.first().map_or(0, |p| p.nvars);
        let mut out = Self::zero(self.field, n);
        // small powers are shared between terms
        let mut powers: Vec<Vec<Polynomial>> =
            images.iter().map(|p| vec![Self::constant(self.field, n, 1), p.clone()]).collect();
        for (e, c) in &self.terms {
            let mut t = Self::constant(self.field, n, *c);
            for (i, &k) in e.iter().enumerate() {
                while powers[i].len() <= k as usize {
                    let next = powers[i].last().unwrap().mul(&images[i]);
                    powers[i].push(next);
                }
                if k > 0 {
                    t = t.mul(&powers[i][k as usize]);
                }
            }
            out = out.add(&t);
        }
        out
    }

    /// Pads with extra variables on the right.
    pub fn extend_vars(&self, nvars: usize) -> Polynomial {
        assert!(nvars >= self.nvars);
        let terms = self
            .terms
            .iter()
            .map(|(e, c)| {
                let mut e = e.clone();
                e.resize(nvars, 0);
                (e, *c)
            })
            .collect();
        Self::from_terms(self.field, nvars, terms)
    }

    /// Requires every term to have total degree `deg`.
    pub fn require_homogeneous(&self) -> Result<u32> {
        if self.is_zero() {
            return Err(Error::Input("zero polynomial has no degree".into()));
        }
        if !self.is_homogeneous() {
            return Err(Error::Input(format!("polynomial {self} is not homogeneous")));
        }
        Ok(self.degree().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gf(p: u64) -> PrimeField {
        PrimeField::new(p).unwrap()
    }

    #[test]
    fn grevlex_order_in_degree_two() {
        let ms = monomials_of_degree(3, 2);
        let want: Vec<Exponents> =
            vec![vec![2, 0, 0], vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1], vec![0, 1, 1], vec![0, 0, 2]];
        assert_eq!(ms, want);
    }

    #[test]
    fn monomial_counts_match_binomials() {
        for m in 1..5 {
            for t in 0..7 {
                assert_eq!(monomials_of_degree(m, t).len() as u128, monomial_count(m, t as i64));
            }
        }
        assert_eq!(monomial_count(3, -1), 0);
    }

    #[test]
    fn product_and_power() {
        let f = gf(5);
        let x = Polynomial::var(f, 2, 0);
        let y = Polynomial::var(f, 2, 1);
        let s = x.add(&y);
        // Frobenius: (x+y)^5 = x^5 + y^5 in characteristic 5
        let p5 = s.pow(5);
        assert_eq!(p5, x.pow(5).add(&y.pow(5)));
        assert_eq!(s.pow(2).coeff(&[1, 1]), 2);
    }

    #[test]
    fn substitution_is_composition() {
        let f = gf(7);
        let x = Polynomial::var(f, 2, 0);
        let y = Polynomial::var(f, 2, 1);
        let g = x.mul(&x).sub(&y.mul(&y));
        // x -> x+y, y -> x-y gives 4xy
        let h = g.substitute(&[x.add(&y), x.sub(&y)]);
        assert_eq!(h, x.mul(&y).scale(4));
    }

    #[test]
    fn homogeneity() {
        let f = gf(5);
        let x = Polynomial::var(f, 2, 0);
        let y = Polynomial::var(f, 2, 1);
        assert_eq!(x.mul(&y).add(&x.mul(&x)).require_homogeneous().unwrap(), 2);
        assert!(x.add(&y.mul(&y)).require_homogeneous().is_err());
    }
}
