//! The sequence `U_e = F^e_*((R ⊗_A W_q^{d-1})_{-1 mod q})`, its convergence
//! table, residue counts for `W`, and the multiplicity comparison for free
//! extensions `S = R[u]/(g)`.
//!
//! Two evaluators produce the same numbers. The dense one realizes `U_e` as a
//! [`SlicedModule`] and runs the Koszul machinery on it. The structured one
//! applies when `R` is free over `A`: as an `A`-module `R ⊗_A W` is a sum of
//! shifted copies of `W`, and on one degree class the `q`-th powers of the
//! forms act on `W` through small twisted Segre modules `S(c)`, so Koszul
//! lengths become weighted sums over at most `2^{d-1}` of them. Only the
//! generator count needs the actual action of `R`, and that is done on
//! `U / z^q U` with `w_l^q` read off the multiplication table.

use std::collections::HashMap;
use std::ops::RangeInclusive;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{AdaptedAlgebra, GradedAlgebra, LinearFormSet};
use crate::error::{Error, Result};
use crate::linalg::{FpMatrix, PrimeField, Quotient};
use crate::modules::{self, koszul_report, koszul_report_forms, tensor_over_a, KoszulReport, SlicedModule};
use crate::poly::{binomial, Exponents, Polynomial};
use crate::segre::{realize_w, segre_forms, twisted_segre_module, w_dim, WDescriptor};

/// Default number of slices `J` beyond the two certification slices.
pub const DEFAULT_SLICES: usize = 4;

/// Default bound on the ambient dimension of one slice of `R ⊗_A W` in the
/// dense evaluator.
pub const DEFAULT_SLICE_GUARD: usize = 4000;

/// Bound on the entries held while expanding `w_l^q` over `T_n`.
const EXPANSION_GUARD: u128 = 1 << 26;

/// An exact ratio with a six-digit decimal rendering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fraction {
    pub num: i64,
    pub den: i64,
}

impl Fraction {
    pub fn new(num: i64, den: i64) -> Fraction {
        let r = Ratio::new(num, den);
        Fraction { num: *r.numer(), den: *r.denom() }
    }

    pub fn ratio(&self) -> Ratio<i64> {
        Ratio::new(self.num, self.den)
    }

    pub fn decimal(&self) -> String {
        format!("{:.6}", self.num as f64 / self.den as f64)
    }

    /// `|self - 1|`.
    pub fn distance_to_one(&self) -> Ratio<i64> {
        let d = self.ratio() - 1;
        if d < Ratio::from_integer(0) {
            -d
        } else {
            d
        }
    }
}

impl Serialize for Fraction {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = serializer.serialize_struct("Fraction", 3)?;
        st.serialize_field("num", &self.num)?;
        st.serialize_field("den", &self.den)?;
        st.serialize_field("decimal", &self.decimal())?;
        st.end()
    }
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{} ({})", self.num, self.den, self.decimal())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Structured,
    Dense,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConvergenceRow {
    pub e: u32,
    pub q: u64,
    pub nu: u64,
    pub mult: i64,
    pub chi1: i64,
    pub ratio_mult_nu: Fraction,
    pub ratio_chi1_nu: Fraction,
    pub predicted_mult: i64,
    pub slice_dim_q1: u64,
    /// Total length of each `H_i(z^q; U_e)`.
    pub lengths: Vec<u64>,
    pub method: Method,
}

/// Result of evaluating one `e`, kept even when the row failed.
#[derive(Debug)]
pub struct TableEntry {
    pub e: u32,
    pub row: Result<ConvergenceRow>,
}

/// `R` normalized over `A`, with everything reused across `e`.
#[derive(Debug)]
pub struct Pipeline {
    ring: GradedAlgebra,
    d: usize,
    forms: LinearFormSet,
    w_forms: LinearFormSet,
    ring_report: KoszulReport,
    adapted: Option<AdaptedAlgebra>,
    /// Slice count `J`.
    pub slices: usize,
    /// Degree class `-r mod q` selected from `R ⊗_A W`; 1 unless
    /// reproducing the failure for other classes.
    pub r: i64,
    pub slice_guard: usize,
    pub force_dense: bool,
}

impl Pipeline {
    /// Samples the forms on `R` and on `T_{d-1}` from `seed`, growing the
    /// window of `R` until the multiplicity is certified.
    pub fn new(ring: &GradedAlgebra, d: usize, seed: u64) -> Result<Self> {
        if d < 2 {
            return Err(Error::Input(format!("the construction needs d >= 2, got {d}")));
        }
        let (ring, forms, ring_report) = normalized(ring, d, seed)?;
        let w_forms = segre_forms(ring.field(), d - 1, seed)?;
        let adapted = ring.adapted(&forms)?;
        if let Some(ad) = &adapted {
            if ad.rank() as i64 != ring_report.multiplicity {
                return Err(Error::TheoremViolated(format!(
                    "R is free of rank {} over A but e(z, R) = {}",
                    ad.rank(),
                    ring_report.multiplicity
                )));
            }
        }
        Ok(Pipeline {
            ring,
            d,
            forms,
            w_forms,
            ring_report,
            adapted,
            slices: DEFAULT_SLICES,
            r: 1,
            slice_guard: DEFAULT_SLICE_GUARD,
            force_dense: false,
        })
    }

    pub fn ring(&self) -> &GradedAlgebra {
        &self.ring
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn forms(&self) -> &LinearFormSet {
        &self.forms
    }

    pub fn w_forms(&self) -> &LinearFormSet {
        &self.w_forms
    }

    /// `s = e(𝔪, R)`, computed as the Koszul multiplicity of the forms.
    pub fn s(&self) -> i64 {
        self.ring_report.multiplicity
    }

    /// Whether `R` was certified free over `A`, which enables the structured
    /// evaluator.
    pub fn is_free(&self) -> bool {
        self.adapted.is_some()
    }

    pub fn predicted_mult(&self, q: u64) -> i64 {
        let fact: i64 = (1..self.d as i64).product();
        fact * self.s() * (q as i64).pow(self.d as u32 - 1)
    }

    fn q(&self, e: u32) -> Result<u64> {
        Ok(WDescriptor::frobenius(self.d - 1, self.ring.field().p(), e)?.q)
    }

    /// `U_e` realized densely on `J + 2` slices.
    pub fn build_ue(&self, e: u32) -> Result<SlicedModule> {
        build_ue(&self.ring, &self.forms, &self.w_forms, e, self.slices, self.r, self.slice_guard)
    }

    /// One row, using the structured evaluator when available.
    pub fn row(&self, e: u32) -> Result<ConvergenceRow> {
        if self.adapted.is_some() && !self.force_dense {
            self.row_structured(e)
        } else {
            self.row_dense(e)
        }
    }

    pub fn row_dense(&self, e: u32) -> Result<ConvergenceRow> {
        let q = self.q(e)?;
        let u = self.build_ue(e)?;
        let report = koszul_report_forms(&u, &self.forms.forms)?;
        let nu = modules::nu(&u)?;
        self.finish_row(e, q, nu, &report, Method::Dense)
    }

    pub fn row_structured(&self, e: u32) -> Result<ConvergenceRow> {
        let ad = self.adapted.as_ref().ok_or_else(|| Error::Input("R is not certified free over A".into()))?;
        let q = self.q(e)?;
        let eval = StructuredUe::new(ad, &self.w_forms, q, class_base(self.r, q))?;
        let report = eval.koszul_report();
        let nu = eval.nu()?;
        self.finish_row(e, q, nu, &report, Method::Structured)
    }

    fn finish_row(&self, e: u32, q: u64, nu: u64, report: &KoszulReport, method: Method) -> Result<ConvergenceRow> {
        if nu == 0 {
            return Err(Error::Window("U_e has no generators in the window".into()));
        }
        let predicted = self.predicted_mult(q);
        let slice_dim_q1 = self.slice_dim_q1(q)?;
        let row = ConvergenceRow {
            e,
            q,
            nu,
            mult: report.multiplicity,
            chi1: report.chi1,
            ratio_mult_nu: Fraction::new(report.multiplicity, nu as i64),
            ratio_chi1_nu: Fraction::new(report.chi1, nu as i64),
            predicted_mult: predicted,
            slice_dim_q1,
            lengths: report.lengths.clone(),
            method,
        };
        if row.mult != predicted {
            return Err(Error::TheoremViolated(format!(
                "e = {e}: e(z, U_e) = {} but (d-1)! s q^(d-1) = {predicted}",
                row.mult
            )));
        }
        if nu < slice_dim_q1 {
            return Err(Error::TheoremViolated(format!("e = {e}: nu = {nu} below dim (R ⊗ W)_(q-1) = {slice_dim_q1}")));
        }
        if row.chi1 < 0 || nu as i64 > row.mult + row.chi1 {
            return Err(Error::TheoremViolated(format!(
                "e = {e}: chi1 = {} and nu = {nu} violate 0 <= chi1, nu <= e + chi1",
                row.chi1
            )));
        }
        Ok(row)
    }

    /// Dimension of the lowest slice of `U_e`: `(R ⊗_A W)_{q-1}` for the
    /// default class.
    pub fn slice_dim_q1(&self, q: u64) -> Result<u64> {
        let n = self.d - 1;
        let t = class_base(self.r, q) as i64;
        let total: u128 = match &self.adapted {
            Some(ad) => ad.shifts().iter().map(|&a| w_dim(n, q, t - a as i64)).sum(),
            None => {
                let w = realize_w(self.ring.field(), WDescriptor::new(n, q)?, &self.w_forms, t.max(2))?;
                let ring = self.ring.rebuild(self.ring.max_degree().max(t as usize + 2).max(4))?;
                tensor_over_a(&ring, &self.forms, &w)?.dim_at(t)? as u128
            }
        };
        Ok(total as u64)
    }

    /// Rows for every `e` in the range, evaluated in parallel. Failed rows
    /// keep their error; the others are unaffected.
    pub fn convergence_table(&self, e_range: RangeInclusive<u32>) -> Vec<TableEntry> {
        let es: Vec<u32> = e_range.collect();
        es.into_par_iter().map(|e| TableEntry { e, row: self.row(e) }).collect()
    }
}

/// Normalizes `ring` and certifies `e(z, R)`, enlarging the window as needed.
fn normalized(ring: &GradedAlgebra, d: usize, seed: u64) -> Result<(GradedAlgebra, LinearFormSet, KoszulReport)> {
    let top = ring.generators().iter().filter_map(Polynomial::degree).max().unwrap_or(1) as usize;
    let mut window = ring.max_degree().max(top + d + 2);
    let cap = window.max(4 * (top + d) + 8);
    loop {
        let alg = ring.rebuild(window)?;
        let attempt = alg.noether_normalize(d, seed).and_then(|forms| {
            let m = SlicedModule::from_algebra(&alg, window)?;
            let rep = koszul_report_forms(&m, &forms.forms)?;
            Ok((forms, rep))
        });
        match attempt {
            Ok((forms, rep)) => return Ok((alg, forms, rep)),
            Err(Error::Window(_) | Error::Uncertified { .. } | Error::Normalization(_)) if window < cap => {
                window = (window * 3 / 2).min(cap);
            }
            Err(err) => return Err(err),
        }
    }
}

/// Hilbert–Samuel multiplicity of a standard graded ring with its sampled
/// minimal reduction.
#[derive(Clone, Debug, Serialize)]
pub struct RingMultiplicity {
    pub e: i64,
    pub forms: LinearFormSet,
    pub window: usize,
}

/// `e(𝔪, R)` from `d` seeded linear forms; any linear system of parameters
/// of a standard graded ring is a minimal reduction of `𝔪`.
pub fn ring_multiplicity(ring: &GradedAlgebra, d: usize, seed: u64) -> Result<RingMultiplicity> {
    let (alg, forms, rep) = normalized(ring, d, seed)?;
    Ok(RingMultiplicity { e: rep.multiplicity, forms, window: alg.max_degree() })
}

/// Lowest non-negative degree in the class `-r mod q`.
pub fn class_base(r: i64, q: u64) -> u64 {
    (-r).rem_euclid(q as i64) as u64
}

/// `U_e` on `slices + 2` slices: slice `j` is `(R ⊗_A W_q^{d-1})_{a+jq}`
/// with `a = -r mod q`, and each variable of `R` acts by its `q`-th power.
pub fn build_ue(
    ring: &GradedAlgebra,
    forms: &LinearFormSet,
    w_forms: &LinearFormSet,
    e: u32,
    slices: usize,
    r: i64,
    slice_guard: usize,
) -> Result<SlicedModule> {
    let d = forms.len();
    if d < 2 {
        return Err(Error::Input(format!("the construction needs d >= 2, got {d}")));
    }
    let desc = WDescriptor::frobenius(d - 1, ring.field().p(), e)?;
    let q = desc.q as i64;
    let hi = (slices as i64 + 2) * q + q - 1;
    let colength: usize = (0..=forms.t0).map(|t| ring.quotient_hilbert(&forms.forms, t)).sum::<Result<usize>>()?;
    let estimate = colength as u128 * w_dim(desc.n, desc.q, hi);
    if estimate > slice_guard as u128 {
        return Err(Error::MemoryGuard(format!(
            "a slice of R ⊗ W may reach dimension {estimate} at q = {q}, above the bound {slice_guard}"
        )));
    }
    let ring = if ring.max_degree() < hi as usize + 1 {
        ring.rebuild(hi as usize + 1)?
    } else {
        ring.rebuild(ring.max_degree())?
    };
    let w = realize_w(ring.field(), desc, w_forms, hi)?;
    let rw = tensor_over_a(&ring, forms, &w)?;
    modules::select_and_pushforward(&rw, class_base(r, desc.q) as i64, desc.q, slices + 2)
}

/// Bits of `v` as per-factor exponent increments.
fn bit(v: usize, i: usize) -> u32 {
    ((v >> i) & 1) as u32
}

/// Number of residue vectors `ρ ∈ [0, q)^n` with the given carry pattern
/// for class `κ`: `ρ_i <= κ` exactly where `ε_i = 0`.
fn class_count(q: u64, kappa: u64, eps: usize, n: usize) -> u64 {
    (0..n).map(|i| if bit(eps, i) == 0 { kappa + 1 } else { q - 1 - kappa }).product()
}

fn piece_twists(eps: usize, n: usize) -> Vec<i64> {
    (0..n).map(|i| i as i64 - bit(eps, i) as i64).collect()
}

/// One twisted Segre module `S(c)` with its Koszul data on the `L` forms.
#[derive(Debug)]
struct SegrePiece {
    twists: Vec<i64>,
    report: KoszulReport,
    /// `S(c)_T / L S(c)_{T-1}` for every realized `T`.
    cokernels: Vec<Quotient>,
}

impl SegrePiece {
    fn new(field: PrimeField, twists: Vec<i64>, w_forms: &LinearFormSet) -> Result<Self> {
        let n = twists.len();
        let mut hi = n as i64 + 4;
        let cap = 4 * n as i64 + 16;
        loop {
            let m = twisted_segre_module(field, &twists, &w_forms.forms, 0, hi)?;
            let ops: Vec<_> = (0..m.num_generators()).map(|g| m.generator(g)).collect();
            match koszul_report(&m, &ops) {
                Ok(report) => {
                    let cokernels = m.image_quotients(&ops);
                    return Ok(SegrePiece { twists, report, cokernels });
                }
                Err(Error::Uncertified { .. }) if hi < cap => hi += 3,
                Err(err) => return Err(err),
            }
        }
    }

    /// Lexicographic index of `α` in `S(c)_T`.
    fn index(&self, t: i64, alpha: &[u64]) -> usize {
        alpha.iter().zip(&self.twists).fold(0, |acc, (&a, &c)| {
            let radix = (t + c + 1) as usize;
            debug_assert!((a as usize) < radix);
            acc * radix + a as usize
        })
    }

    fn tuple(&self, t: i64, mut k: usize) -> Vec<u64> {
        let mut out = vec![0; self.twists.len()];
        for i in (0..self.twists.len()).rev() {
            let radix = (t + self.twists[i] + 1) as usize;
            out[i] = (k % radix) as u64;
            k /= radix;
        }
        out
    }
}

/// `U_e / z^q U_e` block for one free basis element, residue vector and `T`.
#[derive(Clone, Copy, Debug)]
struct Block {
    b: usize,
    rho: usize,
    t: usize,
    eps: usize,
    slice: usize,
    offset: usize,
}

/// Blocks, per-slice dimensions, and the `(b, ρ, T)` block lookup.
type Layout = (Vec<Block>, Vec<usize>, HashMap<(usize, usize, usize), usize>);

/// Structured evaluator for `R` free over `A`.
struct StructuredUe<'a> {
    ad: &'a AdaptedAlgebra,
    w_forms: &'a LinearFormSet,
    q: u64,
    /// Degree of slice 0 of `U_e`.
    base: u64,
    n: usize,
    shifts: Vec<usize>,
    pieces: Vec<SegrePiece>,
}

impl<'a> StructuredUe<'a> {
    fn new(ad: &'a AdaptedAlgebra, w_forms: &'a LinearFormSet, q: u64, base: u64) -> Result<Self> {
        let n = ad.d - 1;
        if w_forms.len() != ad.d || w_forms.forms.iter().any(|f| f.len() != 1 << n) {
            return Err(Error::Shape(format!("need {} forms on T_{n}", ad.d)));
        }
        let field = ad.ring.field();
        let pieces = (0..1usize << n)
            .into_par_iter()
            .map(|eps| SegrePiece::new(field, piece_twists(eps, n), w_forms))
            .collect::<Result<Vec<_>>>()?;
        Ok(StructuredUe { ad, w_forms, q, base, n, shifts: ad.shifts(), pieces })
    }

    /// `κ_b`: the class of `W`-degrees paired with basis element `b`.
    fn kappa(&self, b: usize) -> u64 {
        (self.base as i64 - self.shifts[b] as i64).rem_euclid(self.q as i64) as u64
    }

    /// Slice of `U_e` holding `T = 0` for basis element `b`.
    fn slice_offset(&self, b: usize) -> usize {
        ((self.kappa(b) + self.shifts[b] as u64 - self.base) / self.q) as usize
    }

    fn koszul_report(&self) -> KoszulReport {
        let r = self.ad.d;
        let mut slice_dims: Vec<Vec<u64>> = vec![Vec::new(); r + 1];
        for b in 0..self.shifts.len() {
            let kappa = self.kappa(b);
            let off = self.slice_offset(b);
            for (eps, piece) in self.pieces.iter().enumerate() {
                let count = class_count(self.q, kappa, eps, self.n);
                if count == 0 {
                    continue;
                }
                for (i, dims) in piece.report.slice_dims.iter().enumerate() {
                    for (t, &x) in dims.iter().enumerate() {
                        let slot = &mut slice_dims[i];
                        if slot.len() <= t + off {
                            slot.resize(t + off + 1, 0);
                        }
                        slot[t + off] += count * x;
                    }
                }
            }
        }
        let len = slice_dims.iter().map(Vec::len).max().unwrap_or(0);
        slice_dims.iter_mut().for_each(|v| v.resize(len, 0));
        let lengths = slice_dims.iter().map(|v| v.iter().sum()).collect();
        KoszulReport::from_lengths(lengths, slice_dims, true)
    }

    fn residues(&self, rho: usize) -> Vec<u64> {
        let mut out = vec![0; self.n];
        let mut k = rho as u64;
        for i in (0..self.n).rev() {
            out[i] = k % self.q;
            k /= self.q;
        }
        out
    }

    fn carries(&self, rho: &[u64], kappa: u64) -> usize {
        rho.iter().enumerate().filter(|(_, &r)| r > kappa).map(|(i, _)| 1 << i).sum()
    }

    /// Blocks of `U / z^q U` grouped by slice, with per-slice dimensions and
    /// a lookup from `(b, ρ, T)` to the block.
    fn layout(&self) -> Layout {
        let nrho = (self.q as usize).pow(self.n as u32);
        let mut blocks = Vec::new();
        for b in 0..self.shifts.len() {
            let kappa = self.kappa(b);
            let off = self.slice_offset(b);
            for rho in 0..nrho {
                let eps = self.carries(&self.residues(rho), kappa);
                for (t, coker) in self.pieces[eps].cokernels.iter().enumerate() {
                    if coker.dim() > 0 {
                        blocks.push(Block { b, rho, t, eps, slice: t + off, offset: 0 });
                    }
                }
            }
        }
        let nslices = blocks.iter().map(|bl| bl.slice + 1).max().unwrap_or(0);
        let mut dims = vec![0usize; nslices];
        for bl in blocks.iter_mut() {
            bl.offset = dims[bl.slice];
            dims[bl.slice] += self.pieces[bl.eps].cokernels[bl.t].dim();
        }
        let index = blocks.iter().enumerate().map(|(i, bl)| ((bl.b, bl.rho, bl.t), i)).collect();
        (blocks, dims, index)
    }

    /// `w_l^q b = Σ_{b'} f_{b b'}(z) b'`, with each `f` truncated to
    /// monomials having every exponent below `q` and evaluated at the `L`
    /// forms as an element of `T_n`.
    fn expansions(&self) -> Result<Vec<Vec<Vec<Option<TElem>>>>> {
        let nw = self.ad.ring.nvars() - self.ad.d;
        if nw == 0 {
            return Ok(Vec::new());
        }
        let s = self.shifts.len();
        let top = self.shifts.iter().max().copied().unwrap_or(0) as u64 + self.q;
        let monos = binomial(top as i64 + self.ad.d as i64, self.ad.d as i64);
        let entries = monos * (top as u128 + 1).pow(self.n as u32);
        if entries > EXPANSION_GUARD {
            return Err(Error::MemoryGuard(format!(
                "expanding w^q over T_{} needs about {entries} entries at q = {}",
                self.n, self.q
            )));
        }
        let field = self.ad.ring.field();
        let mut powers = PowerCache::new(field, self.n, &self.w_forms.forms);
        let mut out = Vec::with_capacity(nw);
        for l in 0..nw {
            let pa = self.ad.power_action(l, self.q as u32);
            let mut per_b = Vec::with_capacity(s);
            for row in pa.iter() {
                let mut per_bp = Vec::with_capacity(s);
                for f in row {
                    per_bp.push(powers.evaluate(f, self.q as u32));
                }
                per_b.push(per_bp);
            }
            out.push(per_b);
        }
        Ok(out)
    }

    /// `ν_R(U_e) = dim U / (z^q, w^q) U`.
    fn nu(&self) -> Result<u64> {
        let (blocks, dims, index) = self.layout();
        let exps = self.expansions()?;
        let field = self.ad.ring.field();
        let q = self.q;
        let mut total = dims.iter().sum::<usize>() as u64;
        for j in 1..dims.len() {
            if dims[j] == 0 {
                continue;
            }
            let sources: Vec<&Block> = blocks.iter().filter(|bl| bl.slice == j - 1).collect();
            let columns: Vec<Vec<u64>> = sources
                .par_iter()
                .flat_map_iter(|bl| {
                    let piece = &self.pieces[bl.eps];
                    let rho = self.residues(bl.rho);
                    let t = bl.t as i64;
                    let tau = t as u64 * q + self.kappa(bl.b);
                    let lifts = piece.cokernels[bl.t].lift_coordinates();
                    let mut cols = Vec::new();
                    for per_b in &exps {
                        for &k in lifts {
                            let alpha = piece.tuple(t, k);
                            let a: Vec<u64> = alpha.iter().zip(&rho).map(|(&x, &r)| q * x + r).collect();
                            let mut col = vec![0u64; dims[j]];
                            for (bp, expansion) in per_b[bl.b].iter().enumerate() {
                                let Some(expansion) = expansion else { continue };
                                self.add_image(&mut col, &a, tau, bp, expansion, &index, &blocks, j, field);
                            }
                            cols.push(col);
                        }
                    }
                    cols
                })
                .collect();
            if columns.is_empty() {
                continue;
            }
            let rank = FpMatrix::from_columns(field, dims[j], &columns).rank();
            total -= rank as u64;
        }
        Ok(total)
    }

    /// Adds the class of `b' ⊗ F·x^a` in `U / z^q U` (slice `j`) to `col`.
    #[allow(clippy::too_many_arguments)]
    fn add_image(
        &self,
        col: &mut [u64],
        a: &[u64],
        tau: u64,
        bp: usize,
        expansion: &TElem,
        index: &HashMap<(usize, usize, usize), usize>,
        blocks: &[Block],
        j: usize,
        field: PrimeField,
    ) {
        let q = self.q;
        let tau2 = tau + expansion.degree as u64;
        let kappa = tau2 % q;
        debug_assert_eq!(kappa, self.kappa(bp));
        let t2 = tau2 / q;
        let mut rho2 = vec![0u64; self.n];
        let mut alpha2 = vec![0u64; self.n];
        for (inc, c) in expansion.terms() {
            let mut rho_idx = 0usize;
            for i in 0..self.n {
                let x = a[i] + inc[i] as u64;
                rho2[i] = x % q;
                alpha2[i] = x / q;
                rho_idx = rho_idx * q as usize + rho2[i] as usize;
            }
            let Some(&bi) = index.get(&(bp, rho_idx, t2 as usize)) else { continue };
            let block = &blocks[bi];
            debug_assert_eq!(block.slice, j);
            let piece = &self.pieces[block.eps];
            let k = piece.index(t2 as i64, &alpha2);
            let proj = piece.cokernels[block.t].projection();
            for r in 0..proj.rows() {
                let v = proj.get(r, k);
                if v != 0 {
                    let slot = &mut col[block.offset + r];
                    *slot = field.mul_add(*slot, v, c);
                }
            }
        }
    }
}

/// A homogeneous element of `T_n` of degree `D`, stored densely over the
/// per-factor `x`-exponents `[0, D]^n`.
#[derive(Clone, Debug)]
struct TElem {
    degree: usize,
    n: usize,
    coeffs: Vec<u64>,
}

impl TElem {
    fn one(n: usize) -> TElem {
        TElem { degree: 0, n, coeffs: vec![1] }
    }

    fn zero(n: usize, degree: usize) -> TElem {
        TElem { degree, n, coeffs: vec![0; (degree + 1).pow(n as u32)] }
    }

    fn decode(&self, mut k: usize) -> Vec<u32> {
        let radix = self.degree + 1;
        let mut out = vec![0; self.n];
        for i in (0..self.n).rev() {
            out[i] = (k % radix) as u32;
            k /= radix;
        }
        out
    }

    fn terms(&self) -> impl Iterator<Item = (Vec<u32>, u64)> + '_ {
        self.coeffs.iter().enumerate().filter(|(_, &c)| c != 0).map(|(k, &c)| (self.decode(k), c))
    }

    /// Product with the linear form `Σ_v form[v] u_v`.
    fn times_linear(&self, field: PrimeField, form: &[u64]) -> TElem {
        let mut out = TElem::zero(self.n, self.degree + 1);
        let radix = self.degree + 2;
        for (k, &c) in self.coeffs.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let inc = self.decode(k);
            for (v, &f) in form.iter().enumerate() {
                if f == 0 {
                    continue;
                }
                let target = (0..self.n).fold(0, |acc, i| acc * radix + (inc[i] + bit(v, i)) as usize);
                out.coeffs[target] = field.mul_add(out.coeffs[target], c, f);
            }
        }
        out
    }

    fn add_scaled(&mut self, field: PrimeField, other: &TElem, s: u64) {
        debug_assert_eq!(self.degree, other.degree);
        for (x, &y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x = field.mul_add(*x, s, y);
        }
    }

    fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }
}

/// Products `L^γ` of the forms, memoized by exponent.
struct PowerCache<'a> {
    field: PrimeField,
    n: usize,
    forms: &'a [Vec<u64>],
    cache: HashMap<Exponents, TElem>,
}

impl<'a> PowerCache<'a> {
    fn new(field: PrimeField, n: usize, forms: &'a [Vec<u64>]) -> Self {
        PowerCache { field, n, forms, cache: HashMap::new() }
    }

    fn power(&mut self, gamma: &[u32]) -> TElem {
        if let Some(hit) = self.cache.get(gamma) {
            return hit.clone();
        }
        let out = match gamma.iter().position(|&x| x > 0) {
            None => TElem::one(self.n),
            Some(k) => {
                let mut rest = gamma.to_vec();
                rest[k] -= 1;
                self.power(&rest).times_linear(self.field, &self.forms[k])
            }
        };
        self.cache.insert(gamma.to_vec(), out.clone());
        out
    }

    /// `f(L)` over the monomials of `f` with all exponents below `q`;
    /// `None` when nothing survives.
    fn evaluate(&mut self, f: &Polynomial, q: u32) -> Option<TElem> {
        let deg = f.degree()? as usize;
        let mut acc = TElem::zero(self.n, deg);
        for (gamma, c) in f.terms() {
            if gamma.iter().any(|&g| g >= q) {
                continue;
            }
            let p = self.power(gamma);
            acc.add_scaled(self.field, &p, *c);
        }
        (!acc.is_zero()).then_some(acc)
    }
}

/// Off-degree mass of `W_q^{d-1}` on one degree class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ResidueProfile {
    pub d: usize,
    pub p: u64,
    pub e: u32,
    pub q: u64,
    pub r: i64,
    /// `length(W_{-r mod q} / (z^q))`.
    pub length: u64,
    /// `dim W_{q-r}`.
    pub degree_dim: u64,
    /// `length - degree_dim`.
    pub residue: i64,
    /// `(d-1)! q^{d-1}`.
    pub leading: u64,
}

impl ResidueProfile {
    /// `residue / q^{d-1}`.
    pub fn normalized(&self) -> Fraction {
        Fraction::new(self.residue, self.q.pow(self.d as u32 - 1) as i64)
    }
}

/// Length of `W_{-r mod q} / (z^q)` minus `dim W_{q-r}`, where the forms on
/// `T_{d-1}` play the role of `z`. Requires `r >= 1`.
pub fn residue_profile(field: PrimeField, d: usize, e: u32, r: i64, w_forms: &LinearFormSet) -> Result<ResidueProfile> {
    if r < 1 {
        return Err(Error::Input(format!("r must be at least 1, got {r}")));
    }
    residue_profile_any(field, d, e, r, w_forms)
}

/// [`residue_profile`] without the sign condition on `r`, for showing what
/// goes wrong when `r <= 0`.
pub fn residue_profile_any(
    field: PrimeField,
    d: usize,
    e: u32,
    r: i64,
    w_forms: &LinearFormSet,
) -> Result<ResidueProfile> {
    if d < 2 {
        return Err(Error::Input(format!("W needs d >= 2, got {d}")));
    }
    let n = d - 1;
    let desc = WDescriptor::frobenius(n, field.p(), e)?;
    let q = desc.q;
    let kappa = class_base(r, q);
    let mut length = 0u64;
    for eps in 0..1usize << n {
        let count = class_count(q, kappa, eps, n);
        if count == 0 {
            continue;
        }
        let piece = SegrePiece::new(field, piece_twists(eps, n), w_forms)?;
        length += count * piece.report.coker_length;
    }
    let degree_dim = w_dim(n, q, q as i64 - r) as u64;
    let leading = (1..d as u64).product::<u64>() * q.pow(n as u32);
    Ok(ResidueProfile {
        d,
        p: field.p(),
        e,
        q,
        r,
        length,
        degree_dim,
        residue: length as i64 - degree_dim as i64,
        leading,
    })
}

/// Multiplicities of `R` and of `S = R[u]/(g)`.
#[derive(Clone, Debug, Serialize)]
pub struct LechDemoReport {
    #[serde(rename = "e_R")]
    pub e_r: i64,
    #[serde(rename = "e_S")]
    pub e_s: i64,
    pub holds: bool,
    pub seed_r: u64,
    pub seed_s: u64,
    pub forms_r: LinearFormSet,
    pub forms_s: LinearFormSet,
}

/// Seed used for `S` when `R` uses `seed`.
pub fn extension_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Compares `e(R)` and `e(S)` for `S = R[u]/(g)`, with `g` homogeneous
/// (`deg u = 1`) and monic in `u`, so that `S` is free over `R`.
pub fn lech_demo(ring: &GradedAlgebra, d: usize, g: &Polynomial, seed: u64) -> Result<LechDemoReport> {
    let m = ring.nvars();
    if g.nvars() != m + 1 {
        return Err(Error::Input(format!("g must be a polynomial in x0..x{} and u", m.saturating_sub(1))));
    }
    let delta = g.require_homogeneous()?;
    if delta == 0 {
        return Err(Error::Input("g must have positive degree".into()));
    }
    let mut top = vec![0u32; m + 1];
    top[m] = delta;
    let lead = g.coeff(&top);
    if lead == 0 {
        return Err(Error::Input(format!("g = {g} is not monic in u: no u^{delta} term")));
    }
    let field = ring.field();
    let g = g.scale(field.inv(lead));
    let mut gens: Vec<Polynomial> = ring.generators().iter().map(|h| h.extend_vars(m + 1)).collect();
    gens.push(g);
    let ext = GradedAlgebra::build(field, m + 1, gens, ring.max_degree().max(delta as usize + d + 2))?;
    let seed_s = extension_seed(seed);
    let er = ring_multiplicity(ring, d, seed)?;
    let es = ring_multiplicity(&ext, d, seed_s)?;
    Ok(LechDemoReport {
        e_r: er.e,
        e_s: es.e,
        holds: er.e <= es.e,
        seed_r: seed,
        seed_s,
        forms_r: er.forms,
        forms_s: es.forms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modules::coker_dims;
    use crate::parse::{parse_extension_polynomial, parse_polynomial};

    fn gf(p: u64) -> PrimeField {
        PrimeField::new(p).unwrap()
    }

    fn ring(p: u64, m: usize, gens: &[&str], window: usize) -> GradedAlgebra {
        let f = gf(p);
        let gens = gens.iter().map(|g| parse_polynomial(g, m, f).unwrap()).collect();
        GradedAlgebra::build(f, m, gens, window).unwrap()
    }

    fn cubic_surface() -> GradedAlgebra {
        ring(5, 4, &["x0^3 + x1^3 + x2^3 + x3^3"], 8)
    }

    /// Independent oracle for the length of `W_{class}/(z^q)`: realize `W`
    /// densely and take cokernels of the pushed-forward forms.
    fn dense_class_length(field: PrimeField, d: usize, q: u64, r: i64, w_forms: &LinearFormSet) -> u64 {
        let desc = WDescriptor::new(d - 1, q).unwrap();
        let a = (-r).rem_euclid(q as i64);
        let slices = 2 * d + 2;
        let w = realize_w(field, desc, w_forms, a + (slices as i64 - 1) * q as i64).unwrap();
        let u = modules::select_and_pushforward(&w, a, q, slices).unwrap();
        let ops: Vec<_> = (0..u.num_generators()).map(|g| u.generator(g)).collect();
        let dims = coker_dims(&u, &ops);
        assert!(dims[dims.len() - 2..].iter().all(|&x| x == 0), "oracle window too small: {dims:?}");
        dims.iter().sum()
    }

    #[test]
    fn fraction_rendering() {
        let f = Fraction::new(150, 160);
        assert_eq!((f.num, f.den), (15, 16));
        assert_eq!(f.to_string(), "15/16 (0.937500)");
        assert_eq!(Fraction::new(0, 7).to_string(), "0/1 (0.000000)");
        assert_eq!(Fraction::new(3, 2).distance_to_one(), Ratio::new(1, 2));
    }

    #[test]
    fn class_counts_partition_residues() {
        for q in [2u64, 3, 5, 7] {
            for kappa in 0..q {
                for n in 1..4 {
                    let total: u64 = (0..1usize << n).map(|eps| class_count(q, kappa, eps, n)).sum();
                    assert_eq!(total, q.pow(n as u32));
                }
            }
        }
    }

    #[test]
    fn t_elem_power_matches_polynomial_expansion() {
        // (u0 + 2 u1)^3 on T_1 = k[x,y] with u0 = y, u1 = x
        let f = gf(7);
        let forms = vec![vec![1, 2]];
        let mut cache = PowerCache::new(f, 1, &forms);
        let cube = cache.power(&[3]);
        assert_eq!(cube.coeffs, vec![1, 6, 12 % 7, 8 % 7]);
    }

    #[test]
    fn polynomial_ring_d2_slices() {
        let r = ring(5, 2, &[], 4);
        let pipe = Pipeline::new(&r, 2, 1).unwrap();
        let u = pipe.build_ue(1).unwrap();
        // oracle: R = A, so slice j is W_{4 + 5j} = k[x,y]_{4+5j}
        let want: Vec<usize> = (0..6).map(|j| w_dim(1, 5, 4 + 5 * j) as usize).collect();
        assert_eq!(u.dims(), &want[..]);
        assert_eq!(&want[..3], &[5, 10, 15]);
    }

    #[test]
    fn polynomial_ring_d2_is_ulrich_at_each_level() {
        let r = ring(5, 2, &[], 4);
        let pipe = Pipeline::new(&r, 2, 3).unwrap();
        assert!(pipe.is_free());
        for e in 1..=2 {
            let row = pipe.row(e).unwrap();
            assert_eq!(row.chi1, 0);
            assert_eq!(row.ratio_mult_nu, Fraction::new(1, 1));
            assert_eq!(row.mult, 5i64.pow(e));
        }
        let dense = pipe.row_dense(1).unwrap();
        assert_eq!(dense.chi1, 0);
        assert_eq!(dense.nu, 5);
    }

    #[test]
    fn structured_matches_dense_on_cubic_curve_cone() {
        let r = ring(5, 3, &["x0^3 + x1^3 + x2^3"], 6);
        let pipe = Pipeline::new(&r, 2, 11).unwrap();
        assert_eq!(pipe.s(), 3);
        assert!(pipe.is_free());
        let s = pipe.row_structured(1).unwrap();
        let d = pipe.row_dense(1).unwrap();
        assert_eq!((s.nu, s.mult, s.chi1, &s.lengths), (d.nu, d.mult, d.chi1, &d.lengths));
        assert_eq!(s.mult, 15);
    }

    #[test]
    fn other_classes_agree_across_evaluators() {
        let r = ring(5, 3, &["x0^3 + x1^3 + x2^3"], 6);
        let mut pipe = Pipeline::new(&r, 2, 11).unwrap();
        for class in [0, 2, -1] {
            pipe.r = class;
            let s = pipe.row_structured(1).unwrap();
            let d = pipe.row_dense(1).unwrap();
            assert_eq!((s.nu, s.mult, s.chi1, &s.lengths), (d.nu, d.mult, d.chi1, &d.lengths), "r = {class}");
        }
    }

    #[test]
    fn structured_matches_dense_on_quadric_cone() {
        let r = ring(3, 4, &["x0*x3 - x1*x2"], 6);
        let pipe = Pipeline::new(&r, 3, 5).unwrap();
        assert_eq!(pipe.s(), 2);
        assert!(pipe.is_free());
        let s = pipe.row_structured(1).unwrap();
        let d = pipe.row_dense(1).unwrap();
        assert_eq!((s.nu, s.mult, s.chi1, &s.lengths), (d.nu, d.mult, d.chi1, &d.lengths));
        assert_eq!(s.mult, 2 * 2 * 9);
    }

    #[test]
    fn structured_matches_dense_on_polynomial_ring_q25() {
        let r = ring(5, 2, &[], 4);
        let mut pipe = Pipeline::new(&r, 2, 9).unwrap();
        pipe.slices = 2;
        let s = pipe.row_structured(2).unwrap();
        let d = pipe.row_dense(2).unwrap();
        assert_eq!((s.nu, s.mult, s.chi1), (d.nu, d.mult, d.chi1));
        assert_eq!(s.nu, 25);
    }

    #[test]
    fn cubic_surface_multiplicity() {
        let pipe = Pipeline::new(&cubic_surface(), 3, 7).unwrap();
        assert_eq!(pipe.s(), 3);
        let row = pipe.row(1).unwrap();
        assert_eq!(row.mult, 150);
        assert_eq!(row.predicted_mult, 150);
        assert!(row.nu >= row.slice_dim_q1);
        assert!(row.nu as i64 <= row.mult + row.chi1);
        // (R ⊗ W)_4 = W_4 ⊕ W_3 ⊕ W_2 with dim W_t = (t+1)(t+6)
        assert_eq!(row.slice_dim_q1, 50 + 36 + 24);
    }

    #[test]
    fn non_free_ring_falls_back_to_dense() {
        // two planes meeting in a point: not Cohen–Macaulay, so not free
        let r = ring(7, 4, &["x0*x2", "x0*x3", "x1*x2", "x1*x3"], 6);
        let mut pipe = Pipeline::new(&r, 2, 4).unwrap();
        assert!(!pipe.is_free());
        assert_eq!(pipe.s(), 2);
        pipe.slices = 3;
        let row = pipe.row(1).unwrap();
        assert_eq!(row.method, Method::Dense);
        assert_eq!(row.mult, 2 * 7);
    }

    #[test]
    fn memory_guard_trips() {
        let r = cubic_surface();
        let mut pipe = Pipeline::new(&r, 3, 7).unwrap();
        pipe.slice_guard = 100;
        assert!(matches!(pipe.row_dense(1), Err(Error::MemoryGuard(_))));
    }

    #[test]
    fn residue_d2_vanishes() {
        let f = gf(5);
        let w_forms = segre_forms(f, 1, 2).unwrap();
        for e in 1..=2 {
            let prof = residue_profile(f, 2, e, 1, &w_forms).unwrap();
            assert_eq!(prof.residue, 0);
        }
        let prof = residue_profile(f, 2, 1, 1, &w_forms).unwrap();
        assert_eq!(prof.length, dense_class_length(f, 2, 5, 1, &w_forms));
    }

    #[test]
    fn residue_matches_dense_oracle_d3() {
        let f = gf(3);
        let w_forms = segre_forms(f, 2, 1).unwrap();
        for r in 1..=3 {
            let prof = residue_profile(f, 3, 1, r, &w_forms).unwrap();
            assert_eq!(prof.length, dense_class_length(f, 3, 3, r, &w_forms), "r = {r}");
        }
    }

    #[test]
    fn residue_for_non_positive_r() {
        let f = gf(3);
        let w_forms = segre_forms(f, 2, 1).unwrap();
        assert!(matches!(residue_profile(f, 3, 1, 0, &w_forms), Err(Error::Input(_))));
        for r in [0, -1] {
            let prof = residue_profile_any(f, 3, 1, r, &w_forms).unwrap();
            assert_eq!(prof.length, dense_class_length(f, 3, 3, r, &w_forms), "r = {r}");
        }
    }

    #[test]
    fn residue_trend_d3() {
        let f = gf(3);
        let w_forms = segre_forms(f, 2, 1).unwrap();
        let norm: Vec<Ratio<i64>> =
            (1..=3).map(|e| residue_profile(f, 3, e, 2, &w_forms).unwrap().normalized().ratio()).collect();
        assert!(norm[0] > norm[1] && norm[1] > norm[2], "{norm:?}");
        // the class of q - 1 carries no off-degree mass
        assert_eq!(residue_profile(f, 3, 2, 1, &w_forms).unwrap().residue, 0);
        // length = (d-1)! q^(d-1) + lower order
        let prof = residue_profile(f, 3, 3, 2, &w_forms).unwrap();
        assert!(prof.length >= prof.degree_dim);
        assert!(prof.length.abs_diff(prof.leading) < prof.leading / 4);
    }

    #[test]
    fn lech_trivial_extension() {
        let r = ring(5, 2, &[], 4);
        let g = parse_extension_polynomial("u", 2, gf(5)).unwrap();
        let rep = lech_demo(&r, 2, &g, 1).unwrap();
        assert_eq!((rep.e_r, rep.e_s, rep.holds), (1, 1, true));
    }

    #[test]
    fn lech_quadric_over_plane() {
        let r = ring(5, 2, &[], 4);
        let g = parse_extension_polynomial("u^2 - x0*x1", 2, gf(5)).unwrap();
        let rep = lech_demo(&r, 2, &g, 1).unwrap();
        // oracle: S is a quadric hypersurface, of degree 2
        assert_eq!((rep.e_r, rep.e_s, rep.holds), (1, 2, true));
    }

    #[test]
    fn lech_over_cubic_curve_cone() {
        let r = ring(5, 3, &["x0^3 + x1^3 + x2^3"], 5);
        let g = parse_extension_polynomial("u^2 - x0*x1", 3, gf(5)).unwrap();
        let rep = lech_demo(&r, 2, &g, 1).unwrap();
        assert_eq!(rep.e_r, 3);
        // complete intersection of degrees 3 and 2
        assert_eq!(rep.e_s, 6);
        assert!(rep.holds);
    }

    #[test]
    fn lech_rejects_non_monic() {
        let r = ring(5, 2, &[], 4);
        let g = parse_extension_polynomial("x0*u - x1^2", 2, gf(5)).unwrap();
        assert!(matches!(lech_demo(&r, 2, &g, 1), Err(Error::Input(_))));
        let g = parse_extension_polynomial("u^2 - x0", 2, gf(5)).unwrap();
        assert!(matches!(lech_demo(&r, 2, &g, 1), Err(Error::Input(_))));
    }

    #[test]
    fn wrong_dimension_is_a_normalization_error() {
        let r = ring(5, 2, &[], 4);
        assert!(matches!(Pipeline::new(&r, 3, 1), Err(Error::Normalization(_))));
        assert!(matches!(Pipeline::new(&r, 1, 1), Err(Error::Input(_))));
    }
}
