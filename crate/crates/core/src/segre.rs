//! Segre products of polynomial rings in two variables.
//!
//! `T_n = k[x_1,y_1] # ... # k[x_n,y_n]` has one variable `u_v` per
//! `v < 2^n`: bit `i` of `v` set means factor `i` contributes `x_{i+1}`,
//! otherwise `y_{i+1}`. `W_q^n` twists factor `i` by `(i-1)q`. Slice `t` of a
//! twisted module with twists `c_i` has the monomial basis
//! `Π x_i^{a_i} y_i^{t+c_i-a_i}`, listed lexicographically in `(a_1, .., a_n)`.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{GradedAlgebra, LinearFormSet};
use crate::error::{Error, Result};
use crate::linalg::{FpMatrix, PrimeField};
use crate::modules::SlicedModule;
use crate::poly::Polynomial;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct WDescriptor {
    pub n: usize,
    pub q: u64,
}

impl WDescriptor {
    /// Any `q >= 1` is accepted; the Frobenius statements need `q = p^e`.
    pub fn new(n: usize, q: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("W needs at least one Segre factor".into()));
        }
        if q == 0 {
            return Err(Error::Input("q must be positive".into()));
        }
        Ok(WDescriptor { n, q })
    }

    /// `q = p^e` with `e >= 1`.
    pub fn frobenius(n: usize, p: u64, e: u32) -> Result<Self> {
        if e == 0 {
            return Err(Error::Input("e must be at least 1".into()));
        }
        Self::new(n, p.checked_pow(e).ok_or_else(|| Error::Input("p^e overflows".into()))?)
    }

    /// Ambient dimension of `T_n`.
    pub fn d(&self) -> usize {
        self.n + 1
    }

    pub fn twists(&self) -> Vec<i64> {
        (0..self.n).map(|i| i as i64 * self.q as i64).collect()
    }
}

/// `dim_k k[x,y]_s`.
fn sym(s: i64) -> u128 {
    if s >= 0 {
        (s + 1) as u128
    } else {
        0
    }
}

/// `dim_k H^2_𝔪(k[x,y])_s`.
fn h2(s: i64) -> u128 {
    if s <= -2 {
        (-s - 1) as u128
    } else {
        0
    }
}

/// `dim W_t = Π_i (t + (i-1)q + 1)` for `t >= 0`.
pub fn w_dim(n: usize, q: u64, t: i64) -> u128 {
    if t < 0 {
        return 0;
    }
    (0..n).map(|i| sym(t + i as i64 * q as i64)).product()
}

/// `dim (T_n)_t = (t+1)^n`.
pub fn t_dim(n: usize, t: i64) -> u128 {
    if t < 0 {
        return 0;
    }
    ((t + 1) as u128).pow(n as u32)
}

/// `dim H^j_𝔪(W_q^n)_t` from the Kunneth recursion over the last factor.
pub fn lc_dim(n: usize, q: u64, j: usize, t: i64) -> Result<u128> {
    if n == 0 {
        return Err(Error::Input("n must be at least 1".into()));
    }
    if j > n + 1 {
        return Err(Error::Index(format!("local cohomology index {j} outside [0, {}]", n + 1)));
    }
    Ok(lc_rec(n, q as i64, j, t))
}

fn lc_rec(n: usize, q: i64, j: usize, t: i64) -> u128 {
    if n == 1 {
        return if j == 2 { h2(t) } else { 0 };
    }
    let s = t + (n as i64 - 1) * q;
    if j <= n {
        let inner = lc_rec(n - 1, q, j, t);
        if inner == 0 {
            0
        } else {
            inner * sym(s)
        }
    } else {
        let inner = lc_rec(n - 1, q, n, t);
        if inner == 0 {
            0
        } else {
            inner * h2(s)
        }
    }
}

/// Degrees outside which `H^j` vanishes: `[-(j-1)q, -(j-2)q-2]` for
/// `2 <= j <= n`, `(-∞, -(n-1)q-2]` for `j = n+1`, empty otherwise.
pub fn lc_window(n: usize, q: u64, j: usize) -> Option<(Option<i64>, i64)> {
    let q = q as i64;
    let j_ = j as i64;
    if j < 2 || j > n + 1 {
        return None;
    }
    if j == n + 1 {
        return Some((None, -(n as i64 - 1) * q - 2));
    }
    let lo = -(j_ - 1) * q;
    let hi = -(j_ - 2) * q - 2;
    (lo <= hi).then_some((Some(lo), hi))
}

/// `Σ_{t ≡ -r mod q} dim H^j_𝔪(W_q^n)_t` for `j <= n`.
pub fn lc_slice_total(n: usize, q: u64, j: usize, r: u64) -> Result<u128> {
    if r == 0 {
        return Err(Error::Input("r must be positive".into()));
    }
    if j > n + 1 {
        return Err(Error::Index(format!("local cohomology index {j} outside [0, {}]", n + 1)));
    }
    if j == n + 1 {
        return Err(Error::Input(format!("H^{j} has unbounded support; its class totals are infinite")));
    }
    let Some((Some(lo), hi)) = lc_window(n, q, j) else {
        return Ok(0);
    };
    let q_ = q as i64;
    let target = (-(r as i64)).rem_euclid(q_);
    let mut total = 0;
    for t in lo..=hi {
        if t.rem_euclid(q_) == target {
            total += lc_dim(n, q, j, t)?;
        }
    }
    Ok(total)
}

/// Tabulated local cohomology dimensions over a degree range.
#[derive(Clone, Debug, Serialize)]
pub struct LcTable {
    pub n: usize,
    pub q: u64,
    pub t_lo: i64,
    pub t_hi: i64,
    /// Nonzero entries only, keyed by `(j, t)`.
    pub entries: BTreeMap<(usize, i64), u128>,
}

impl LcTable {
    pub fn build(desc: WDescriptor, t_lo: i64, t_hi: i64) -> Result<Self> {
        let cells: Vec<(usize, i64)> = (0..=desc.n + 1).flat_map(|j| (t_lo..=t_hi).map(move |t| (j, t))).collect();
        let values: Vec<((usize, i64), u128)> =
            cells.into_par_iter().map(|(j, t)| Ok(((j, t), lc_dim(desc.n, desc.q, j, t)?))).collect::<Result<_>>()?;
        let entries = values.into_iter().filter(|(_, v)| *v != 0).collect();
        Ok(LcTable { n: desc.n, q: desc.q, t_lo, t_hi, entries })
    }

    pub fn get(&self, j: usize, t: i64) -> u128 {
        self.entries.get(&(j, t)).copied().unwrap_or(0)
    }
}

/// Bits of `v` as per-factor exponent increments.
fn bit(v: usize, i: usize) -> usize {
    (v >> i) & 1
}

/// The Segre ring `T_n` as a quotient of `k[u_0..u_{2^n - 1}]` by the
/// quadrics `u_a u_b - u_c u_d` whose per-factor choices agree.
pub fn segre_algebra(field: PrimeField, n: usize, max_degree: usize) -> Result<GradedAlgebra> {
    let m = 1usize << n;
    let mut groups: HashMap<Vec<usize>, Vec<(usize, usize)>> = HashMap::new();
    for a in 0..m {
        for b in a..m {
            let key: Vec<usize> = (0..n).map(|i| bit(a, i) + bit(b, i)).collect();
            groups.entry(key).or_default().push((a, b));
        }
    }
    let mut keys: Vec<&Vec<usize>> = groups.keys().collect();
    keys.sort();
    let mut gens = Vec::new();
    for key in keys {
        let pairs = &groups[key];
        let quad = |(a, b): (usize, usize)| {
            let mut e = vec![0u32; m];
            e[a] += 1;
            e[b] += 1;
            Polynomial::monomial(field, e, 1)
        };
        for &pair in &pairs[1..] {
            gens.push(quad(pairs[0]).sub(&quad(pair)));
        }
    }
    GradedAlgebra::build(field, m, gens, max_degree)
}

/// `n + 1` seeded forms on `T_n` certified as a system of parameters.
pub fn segre_forms(field: PrimeField, n: usize, seed: u64) -> Result<LinearFormSet> {
    let t = segre_algebra(field, n, n + 3)?;
    t.noether_normalize(n + 1, seed)
}

/// Lexicographic monomial basis of one slice with per-factor degrees `s_i`.
struct SliceIndex {
    radices: Vec<usize>,
}

impl SliceIndex {
    fn new(t: i64, twists: &[i64]) -> Option<Self> {
        let radices: Vec<usize> = twists.iter().map(|c| t + c + 1).map(|r| r.max(0) as usize).collect();
        radices.iter().all(|&r| r > 0).then_some(SliceIndex { radices })
    }

    fn len(&self) -> usize {
        self.radices.iter().product()
    }

    fn index(&self, a: &[usize]) -> usize {
        a.iter().zip(&self.radices).fold(0, |acc, (&x, &r)| acc * r + x)
    }

    fn tuple(&self, mut k: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        for i in (0..self.radices.len()).rev() {
            out[i] = k % self.radices[i];
            k /= self.radices[i];
        }
        out
    }
}

/// Dimension of slice `t` of the twisted Segre module `#_i k[x_i,y_i](c_i)`.
pub fn twisted_dim(twists: &[i64], t: i64) -> usize {
    SliceIndex::new(t, twists).map_or(0, |s| s.len())
}

/// `#_i k[x_i, y_i](c_i)` on degrees `[lo, hi]`, as a module over
/// `A = k[z_1..z_d]` where `z_k` acts by the linear form `forms[k]` in the
/// variables `u_v`.
pub fn twisted_segre_module(
    field: PrimeField,
    twists: &[i64],
    forms: &[Vec<u64>],
    lo: i64,
    hi: i64,
) -> Result<SlicedModule> {
    let n = twists.len();
    let m = 1usize << n;
    if forms.iter().any(|f| f.len() != m) {
        return Err(Error::Shape(format!("forms on T_{n} need {m} coordinates")));
    }
    if hi < lo {
        return Err(Error::Window(format!("empty window [{lo}, {hi}]")));
    }
    let dims: Vec<usize> = (lo..=hi).map(|t| twisted_dim(twists, t)).collect();
    let actions = forms
        .iter()
        .map(|form| (lo..hi).into_par_iter().map(|t| segre_form_matrix(field, twists, form, t)).collect::<Vec<_>>())
        .collect();
    SlicedModule::new(field, lo, dims, actions)
}

/// Multiplication by `Σ c_v u_v` from slice `t` to slice `t + 1`.
fn segre_form_matrix(field: PrimeField, twists: &[i64], form: &[u64], t: i64) -> FpMatrix {
    let n = twists.len();
    let (Some(src), Some(dst)) = (SliceIndex::new(t, twists), SliceIndex::new(t + 1, twists)) else {
        return FpMatrix::zeros(field, twisted_dim(twists, t + 1), twisted_dim(twists, t));
    };
    let mut out = FpMatrix::zeros(field, dst.len(), src.len());
    let mut target = vec![0usize; n];
    for k in 0..src.len() {
        let a = src.tuple(k);
        for (v, &c) in form.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for i in 0..n {
                target[i] = a[i] + bit(v, i);
            }
            out.add_at(dst.index(&target), k, c);
        }
    }
    out
}

/// `W_q^n` on degrees `[0, hi]` over `A`, with `z_k` acting by `forms[k]`.
pub fn realize_w(field: PrimeField, desc: WDescriptor, forms: &LinearFormSet, hi: i64) -> Result<SlicedModule> {
    if forms.len() != desc.d() {
        return Err(Error::Input(format!("W_q^{} needs {} forms, got {}", desc.n, desc.d(), forms.len())));
    }
    if hi < 2 {
        return Err(Error::Window(format!("window top {hi} is too small to certify lengths")));
    }
    twisted_segre_module(field, &desc.twists(), &forms.forms, 0, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modules::{koszul_report_forms, rank_over_a};

    fn gf(p: u64) -> PrimeField {
        PrimeField::new(p).unwrap()
    }

    #[test]
    fn w_dim_examples() {
        assert_eq!(w_dim(2, 4, 3), 32);
        assert_eq!(w_dim(3, 7, -1), 0);
        // oracle: enumerate x1^a y1^b x2^c y2^f with a+b = 2, c+f = 6
        let mut count = 0;
        for a in 0..=2 {
            for c in 0..=6 {
                let (_b, _f) = (2 - a, 6 - c);
                count += 1;
            }
        }
        assert_eq!(w_dim(2, 4, 2), count);
        assert_eq!(count, 21);
    }

    #[test]
    fn t_dim_examples() {
        assert_eq!(t_dim(2, 3), 16);
        assert_eq!(t_dim(5, 0), 1);
        assert_eq!(t_dim(3, 2), 27);
    }

    #[test]
    fn lc_dim_examples() {
        // Čech oracle for k[x,y]: the degree -2 part of H^2 is spanned by 1/(xy)
        assert_eq!(lc_dim(1, 3, 2, -2).unwrap(), 1);
        assert_eq!(lc_dim(2, 4, 2, -2).unwrap(), 3);
        assert_eq!(lc_dim(2, 4, 3, -1).unwrap(), 0);
        assert!(matches!(lc_dim(2, 4, 4, -1), Err(Error::Index(_))));
        for t in -20..5 {
            assert_eq!(lc_dim(3, 5, 0, t).unwrap(), 0);
            assert_eq!(lc_dim(3, 5, 1, t).unwrap(), 0);
        }
    }

    #[test]
    fn lc_windows() {
        for n in 1..=4 {
            for q in [2u64, 3, 4, 5, 8, 9, 16, 25, 27, 32, 64] {
                let qi = q as i64;
                for j in 0..=n + 1 {
                    for t in -(n as i64 + 2) * qi..=qi {
                        let v = lc_dim(n, q, j, t).unwrap();
                        let inside = match lc_window(n, q, j) {
                            None => false,
                            Some((lo, hi)) => lo.is_none_or(|lo| t >= lo) && t <= hi,
                        };
                        if !inside {
                            assert_eq!(v, 0, "n={n} q={q} j={j} t={t}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn euler_characteristic_identity() {
        // dim W_t - Σ (-1)^j dim H^j_t = Π (t + (i-1)q + 1)
        for n in 1..=4 {
            for q in [2u64, 3, 5, 8] {
                for t in -(n as i64 + 2) * q as i64..=2 * q as i64 {
                    let mut chi: i128 = w_dim(n, q, t) as i128;
                    for j in 0..=n + 1 {
                        let v = lc_dim(n, q, j, t).unwrap() as i128;
                        chi -= if j % 2 == 0 { v } else { -v };
                    }
                    let prod: i128 = (0..n).map(|i| t as i128 + i as i128 * q as i128 + 1).product();
                    assert_eq!(chi, prod, "n={n} q={q} t={t}");
                }
            }
        }
    }

    #[test]
    fn lc_slice_total_examples() {
        for j in 0..=1 {
            for r in 1..4 {
                assert_eq!(lc_slice_total(1, 5, j, r).unwrap(), 0);
            }
        }
        // direct summation oracle over the window [-4, -2] for class -1 mod 4
        let oracle: u128 = (-4..=-2).filter(|t: &i64| t.rem_euclid(4) == 3).map(|t| lc_dim(2, 4, 2, t).unwrap()).sum();
        assert_eq!(lc_slice_total(2, 4, 2, 1).unwrap(), oracle);
        assert_eq!(oracle, 0);
        assert!(lc_slice_total(2, 4, 3, 1).is_err());
    }

    #[test]
    fn lc_slice_total_class_minus_one_is_empty() {
        // every window [-(j-1)q, -(j-2)q-2] misses the class -1 mod q
        for e in 1..=4 {
            let q = 3u64.pow(e);
            for j in 0..=3 {
                assert_eq!(lc_slice_total(3, q, j, 1).unwrap(), 0);
            }
        }
    }

    #[test]
    fn lc_slice_total_trend_for_r_two() {
        // class -2 mod q does meet the windows; the mass shrinks relative to q^3
        let ratios: Vec<f64> = (1..=4)
            .map(|e| {
                let q = 3u64.pow(e);
                lc_slice_total(3, q, 3, 2).unwrap() as f64 / (q as f64).powi(3)
            })
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    }

    #[test]
    fn segre_algebra_hilbert_function() {
        let f = gf(5);
        for n in 1..=3 {
            let t = segre_algebra(f, n, 4).unwrap();
            for deg in 0..=4 {
                assert_eq!(t.hilbert_function(deg).unwrap() as u128, t_dim(n, deg));
            }
        }
    }

    #[test]
    fn realized_w_dims_and_multiplicity() {
        let f = gf(5);
        let desc = WDescriptor::new(2, 5).unwrap();
        let forms = segre_forms(f, 2, 3).unwrap();
        let w = realize_w(f, desc, &forms, 14).unwrap();
        for t in 0..=14 {
            assert_eq!(w.dims()[t as usize] as u128, w_dim(2, 5, t));
        }
        assert!(w.actions_commute());
        let rep = koszul_report_forms(&w, &[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]).unwrap();
        assert_eq!(rep.multiplicity, 2);
        assert_eq!(rank_over_a(&w).unwrap(), 2);
    }

    #[test]
    fn single_factor_is_polynomial_ring() {
        let f = gf(7);
        let desc = WDescriptor::new(1, 7).unwrap();
        let forms = segre_forms(f, 1, 1).unwrap();
        let w = realize_w(f, desc, &forms, 8).unwrap();
        assert_eq!(rank_over_a(&w).unwrap(), 1);
        let rep = koszul_report_forms(&w, &[vec![1, 0], vec![0, 1]]).unwrap();
        assert_eq!(rep.lengths, vec![1, 0, 0]);
    }
}
