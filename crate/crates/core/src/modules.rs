//! Finitely generated graded modules realized on a window of slices.
//!
//! A [`SlicedModule`] stores `M_t` for `t` in `[lo, lo + len)`, with one
//! action matrix per generator of the acting algebra between consecutive
//! slices. Everything below `lo` is zero by contract; everything above the
//! window is unknown, so lengths are only trusted when the last two slices
//! of the relevant quantity vanish.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{GradedAlgebra, LinearFormSet};
use crate::error::{Error, Result};
use crate::linalg::{FpMatrix, PrimeField, Quotient};
use crate::poly::{monomials_of_degree, total_degree, Exponents, Polynomial};

#[derive(Clone, Debug)]
pub struct SlicedModule {
    field: PrimeField,
    lo: i64,
    dims: Vec<usize>,
    /// `actions[g][i]` maps slice `i` to slice `i + 1`.
    actions: Vec<Vec<FpMatrix>>,
}

/// A graded endomorphism of a sliced module raising slice index by `degree`.
/// `mats[i]` maps slice `i` to slice `i + degree`.
#[derive(Clone, Debug)]
pub struct Operator {
    pub degree: usize,
    pub mats: Vec<FpMatrix>,
}

impl Operator {
    /// `self ∘ other`.
    pub fn after(&self, other: &Operator) -> Operator {
        let degree = self.degree + other.degree;
        let mats = other
            .mats
            .iter()
            .enumerate()
            .filter_map(|(i, m)| self.mats.get(i + other.degree).map(|a| a.compose(m).expect("operator shapes")))
            .collect();
        Operator { degree, mats }
    }

    pub fn power(&self, k: usize) -> Operator {
        assert!(k >= 1, "operator power must be positive");
        let mut acc = self.clone();
        for _ in 1..k {
            acc = self.after(&acc);
        }
        acc
    }

    /// Matrix from slice `i`, if it lands inside the window.
    pub fn at(&self, i: usize) -> Option<&FpMatrix> {
        self.mats.get(i)
    }
}

impl SlicedModule {
    pub fn new(field: PrimeField, lo: i64, dims: Vec<usize>, actions: Vec<Vec<FpMatrix>>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("a sliced module needs at least one slice".into()));
        }
        for (g, mats) in actions.iter().enumerate() {
            if mats.len() + 1 != dims.len() {
                return Err(Error::Shape(format!("generator {g}: {} matrices for {} slices", mats.len(), dims.len())));
            }
            for (i, m) in mats.iter().enumerate() {
                if m.rows() != dims[i + 1] || m.cols() != dims[i] {
                    return Err(Error::Shape(format!(
                        "generator {g}, slice {i}: matrix {}x{} but slices {} -> {}",
                        m.rows(),
                        m.cols(),
                        dims[i],
                        dims[i + 1]
                    )));
                }
            }
        }
        Ok(SlicedModule { field, lo, dims, actions })
    }

    /// The algebra as a module over itself, degrees `0..=hi`. Generators are
    /// the degree-one basis variables.
    pub fn from_algebra(alg: &GradedAlgebra, hi: usize) -> Result<Self> {
        if hi > alg.max_degree() {
            return Err(Error::Window(format!("module window {hi} exceeds algebra window {}", alg.max_degree())));
        }
        let vars = alg.degree_one_variables();
        let dims = (0..=hi).map(|t| alg.dim(t)).collect();
        let actions = vars
            .iter()
            .map(|&v| (0..hi).map(|t| alg.variable_action(v, t).cloned()).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Self::new(alg.field(), 0, dims, actions)
    }

    /// The residue field `k` in degree 0 over `ngens` generators, on the
    /// window `[0, hi]`.
    pub fn residue_field(field: PrimeField, ngens: usize, hi: usize) -> Self {
        let dims: Vec<usize> = (0..=hi).map(|t| usize::from(t == 0)).collect();
        let actions =
            (0..ngens).map(|_| (0..hi).map(|i| FpMatrix::zeros(field, dims[i + 1], dims[i])).collect()).collect();
        SlicedModule { field, lo: 0, dims, actions }
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    /// Degree of slice 0.
    pub fn lo(&self) -> i64 {
        self.lo
    }

    /// Highest realized degree.
    pub fn hi(&self) -> i64 {
        self.lo + self.dims.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.iter().all(|&d| d == 0)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// `dim M_t`, zero below the window.
    pub fn dim_at(&self, t: i64) -> Result<usize> {
        if t < self.lo {
            return Ok(0);
        }
        self.dims
            .get((t - self.lo) as usize)
            .copied()
            .ok_or_else(|| Error::Window(format!("degree {t} above the window (top {})", self.hi())))
    }

    pub fn num_generators(&self) -> usize {
        self.actions.len()
    }

    pub fn action(&self, g: usize, i: usize) -> &FpMatrix {
        &self.actions[g][i]
    }

    pub fn generator(&self, g: usize) -> Operator {
        Operator { degree: 1, mats: self.actions[g].clone() }
    }

    /// The operator `Σ coeffs[g] X_g`.
    pub fn form(&self, coeffs: &[u64]) -> Result<Operator> {
        if coeffs.len() != self.actions.len() {
            return Err(Error::Shape(format!(
                "form has {} coefficients for {} generators",
                coeffs.len(),
                self.actions.len()
            )));
        }
        let mats = (0..self.dims.len() - 1)
            .map(|i| {
                let mut m = FpMatrix::zeros(self.field, self.dims[i + 1], self.dims[i]);
                for (g, &c) in coeffs.iter().enumerate() {
                    if c % self.field.p() != 0 {
                        m.add_scaled(&self.actions[g][i], c);
                    }
                }
                m
            })
            .collect();
        Ok(Operator { degree: 1, mats })
    }

    pub fn forms(&self, set: &[Vec<u64>]) -> Result<Vec<Operator>> {
        set.iter().map(|c| self.form(c)).collect()
    }

    /// `M(a)`, so that `M(a)_t = M_{a+t}`.
    pub fn twist(&self, a: i64) -> SlicedModule {
        SlicedModule { lo: self.lo - a, ..self.clone() }
    }

    /// Same module with zero slices prepended down to degree `lo`.
    pub fn extend_down(&self, lo: i64) -> SlicedModule {
        if lo >= self.lo {
            return self.clone();
        }
        let pad = (self.lo - lo) as usize;
        let mut dims = vec![0; pad];
        dims.extend_from_slice(&self.dims);
        let actions = self
            .actions
            .iter()
            .map(|mats| {
                let mut out: Vec<FpMatrix> =
                    (0..pad).map(|i| FpMatrix::zeros(self.field, dims[i + 1], dims[i])).collect();
                out.extend(mats.iter().cloned());
                out
            })
            .collect();
        SlicedModule { field: self.field, lo, dims, actions }
    }

    /// Restricts the window to degrees `<= hi`.
    pub fn truncate(&self, hi: i64) -> Result<SlicedModule> {
        if hi < self.lo || hi > self.hi() {
            return Err(Error::Window(format!("cannot truncate [{}, {}] at {hi}", self.lo, self.hi())));
        }
        let len = (hi - self.lo) as usize + 1;
        Ok(SlicedModule {
            field: self.field,
            lo: self.lo,
            dims: self.dims[..len].to_vec(),
            actions: self.actions.iter().map(|m| m[..len - 1].to_vec()).collect(),
        })
    }

    /// Direct sum over a common top degree and generator count.
    pub fn direct_sum(parts: &[&SlicedModule]) -> Result<SlicedModule> {
        let first = parts.first().ok_or_else(|| Error::Input("empty direct sum".into()))?;
        let hi = first.hi();
        let ngens = first.num_generators();
        if parts.iter().any(|m| m.hi() != hi || m.num_generators() != ngens) {
            return Err(Error::Shape("direct summands need the same top degree and generators".into()));
        }
        let lo = parts.iter().map(|m| m.lo).min().unwrap();
        let padded: Vec<SlicedModule> = parts.iter().map(|m| m.extend_down(lo)).collect();
        let len = padded[0].dims.len();
        let dims: Vec<usize> = (0..len).map(|i| padded.iter().map(|m| m.dims[i]).sum()).collect();
        let field = first.field;
        let actions = (0..ngens)
            .map(|g| {
                (0..len - 1)
                    .map(|i| {
                        let mut out = FpMatrix::zeros(field, dims[i + 1], dims[i]);
                        let (mut r, mut c) = (0, 0);
                        for m in &padded {
                            out.set_block(r, c, &m.actions[g][i]);
                            r += m.dims[i + 1];
                            c += m.dims[i];
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        Self::new(field, lo, dims, actions)
    }

    /// `M / (ops) M`, slice by slice, with induced generator actions.
    pub fn quotient_by(&self, ops: &[Operator]) -> SlicedModule {
        let quotients = self.image_quotients(ops);
        let dims = quotients.iter().map(Quotient::dim).collect();
        let actions = (0..self.actions.len())
            .map(|g| (0..self.dims.len() - 1).map(|i| induced(&quotients, &self.actions[g][i], i, 1)).collect())
            .collect();
        SlicedModule { field: self.field, lo: self.lo, dims, actions }
    }

    /// Per slice, the quotient of `M_s` by `Σ op(M_{s - deg op})`.
    pub fn image_quotients(&self, ops: &[Operator]) -> Vec<Quotient> {
        (0..self.dims.len())
            .into_par_iter()
            .map(|s| {
                let blocks: Vec<&FpMatrix> =
                    ops.iter().filter(|op| op.degree <= s).filter_map(|op| op.at(s - op.degree)).collect();
                if blocks.is_empty() {
                    return Quotient::trivial(self.field, self.dims[s]);
                }
                Quotient::by_columns(&FpMatrix::hstack_all(self.field, self.dims[s], &blocks))
            })
            .collect()
    }

    /// Checks `X_i X_j = X_j X_i` on every slice.
    pub fn actions_commute(&self) -> bool {
        let n = self.actions.len();
        (0..self.dims.len().saturating_sub(2)).all(|s| {
            (0..n).all(|i| {
                (0..i).all(|j| {
                    let a = self.actions[i][s + 1].compose(&self.actions[j][s]).unwrap();
                    let b = self.actions[j][s + 1].compose(&self.actions[i][s]).unwrap();
                    a == b
                })
            })
        })
    }
}

/// Matrix of `m` (slice `i` to slice `i + deg`) induced on the quotients.
fn induced(quotients: &[Quotient], m: &FpMatrix, i: usize, deg: usize) -> FpMatrix {
    let src = &quotients[i];
    let dst = &quotients[i + deg];
    let lifted = m.select_columns(src.lift_coordinates());
    dst.projection().compose(&lifted).expect("induced shapes")
}

/// Homology lengths of the Koszul complex on a module.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KoszulReport {
    pub num_forms: usize,
    /// `lengths[i]` is the total length of `H_i`.
    pub lengths: Vec<u64>,
    /// `dims[i][s]` is `dim H_i` in slice `s`.
    pub slice_dims: Vec<Vec<u64>>,
    pub chi1: i64,
    pub coker_length: u64,
    pub multiplicity: i64,
    pub tail_certified: bool,
}

impl KoszulReport {
    /// Builds the derived fields from homology lengths.
    pub fn from_lengths(lengths: Vec<u64>, slice_dims: Vec<Vec<u64>>, tail_certified: bool) -> Self {
        let chi1: i64 =
            lengths.iter().enumerate().skip(1).map(|(i, &l)| if i % 2 == 1 { l as i64 } else { -(l as i64) }).sum();
        let coker_length = lengths[0];
        KoszulReport {
            num_forms: lengths.len() - 1,
            lengths,
            slice_dims,
            chi1,
            coker_length,
            multiplicity: coker_length as i64 - chi1,
            tail_certified,
        }
    }
}

/// Subsets of `0..r` of size `i`, as sorted index lists in lexicographic order.
fn subsets(r: usize, i: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn go(start: usize, r: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for k in start..=r - left {
            cur.push(k);
            go(k + 1, r, left - 1, cur, out);
            cur.pop();
        }
    }
    go(0, r, i, &mut cur, &mut out);
    out
}

struct KoszulLayout {
    /// Per homological index, the subsets and their total degree.
    terms: Vec<Vec<(Vec<usize>, usize)>>,
}

impl KoszulLayout {
    fn new(ops: &[Operator]) -> Self {
        let r = ops.len();
        let terms = (0..=r)
            .map(|i| {
                subsets(r, i)
                    .into_iter()
                    .map(|s| {
                        let deg = s.iter().map(|&k| ops[k].degree).sum();
                        (s, deg)
                    })
                    .collect()
            })
            .collect();
        KoszulLayout { terms }
    }

    /// Offsets of each summand of `K_i` in slice `s`, plus the total.
    fn offsets(&self, m: &SlicedModule, i: usize, s: usize) -> (Vec<Option<(usize, usize)>>, usize) {
        let mut total = 0;
        let offs = self.terms[i]
            .iter()
            .map(|(_, deg)| {
                if *deg > s {
                    return None;
                }
                let src = s - deg;
                let here = (total, src);
                total += m.dims[src];
                Some(here)
            })
            .collect();
        (offs, total)
    }

    /// Matrix of `∂_i : K_i(s) -> K_{i-1}(s)`.
    fn differential(&self, m: &SlicedModule, ops: &[Operator], i: usize, s: usize) -> FpMatrix {
        let (src_offs, cols) = self.offsets(m, i, s);
        let (dst_offs, rows) = self.offsets(m, i - 1, s);
        let mut out = FpMatrix::zeros(m.field, rows, cols);
        let index: HashMap<&Vec<usize>, usize> =
            self.terms[i - 1].iter().enumerate().map(|(j, (set, _))| (set, j)).collect();
        let p = m.field.p();
        for (si, (set, _)) in self.terms[i].iter().enumerate() {
            let Some((col0, src)) = src_offs[si] else { continue };
            for (pos, &k) in set.iter().enumerate() {
                let mut rest = set.clone();
                rest.remove(pos);
                let (row0, _) = dst_offs[index[&rest]].expect("target summand exists");
                let block = ops[k].at(src).expect("operator inside window");
                let block = if pos % 2 == 1 { block.scale(p - 1) } else { block.clone() };
                out.set_block(row0, col0, &block);
            }
        }
        out
    }
}

/// Slice-by-slice Koszul homology dimensions, without certification.
pub fn koszul_homology_dims(m: &SlicedModule, ops: &[Operator]) -> Vec<Vec<u64>> {
    let r = ops.len();
    let layout = KoszulLayout::new(ops);
    let per_slice: Vec<Vec<u64>> = (0..m.dims.len())
        .into_par_iter()
        .map(|s| {
            let dims: Vec<usize> = (0..=r).map(|i| layout.offsets(m, i, s).1).collect();
            let mut ranks = vec![0usize; r + 2];
            for i in 1..=r {
                if dims[i] > 0 && dims[i - 1] > 0 {
                    ranks[i] = layout.differential(m, ops, i, s).rank();
                }
            }
            (0..=r).map(|i| (dims[i] - ranks[i] - ranks[i + 1]) as u64).collect()
        })
        .collect();
    (0..=r).map(|i| per_slice.iter().map(|v| v[i]).collect()).collect()
}

fn tail_vanishes(v: &[u64]) -> bool {
    v.len() >= 2 && v[v.len() - 2..].iter().all(|&x| x == 0)
}

/// Koszul report with the certification flag set but no error on failure.
pub fn koszul_report_unchecked(m: &SlicedModule, ops: &[Operator]) -> KoszulReport {
    let slice_dims = koszul_homology_dims(m, ops);
    let certified = slice_dims.iter().all(|v| tail_vanishes(v));
    let lengths = slice_dims.iter().map(|v| v.iter().sum()).collect();
    KoszulReport::from_lengths(lengths, slice_dims, certified)
}

/// Koszul homology of `m` on the operators; a window error carrying the
/// partial report when some `H_i` does not vanish on the top two slices.
pub fn koszul_report(m: &SlicedModule, ops: &[Operator]) -> Result<KoszulReport> {
    let rep = koszul_report_unchecked(m, ops);
    if rep.tail_certified {
        Ok(rep)
    } else {
        let bad: Vec<usize> = (0..rep.slice_dims.len()).filter(|&i| !tail_vanishes(&rep.slice_dims[i])).collect();
        Err(Error::Uncertified {
            reason: format!("H_i nonzero near the top of the window for i in {bad:?}"),
            partial: Box::new(rep),
        })
    }
}

/// Koszul report for linear forms given by coefficient vectors.
pub fn koszul_report_forms(m: &SlicedModule, forms: &[Vec<u64>]) -> Result<KoszulReport> {
    koszul_report(m, &m.forms(forms)?)
}

/// Per-slice dimensions of `M / (ops) M`.
pub fn coker_dims(m: &SlicedModule, ops: &[Operator]) -> Vec<u64> {
    m.image_quotients(ops).iter().map(|q| q.dim() as u64).collect()
}

/// Minimal number of generators: the length of `M / 𝔪M`.
pub fn nu(m: &SlicedModule) -> Result<u64> {
    let ops: Vec<Operator> = (0..m.num_generators()).map(|g| m.generator(g)).collect();
    let dims = coker_dims(m, &ops);
    if !tail_vanishes(&dims) {
        return Err(Error::Window(format!("M/mM does not vanish on the top two slices: {dims:?}")));
    }
    Ok(dims.iter().sum())
}

/// Per-slice kernel dimensions of `w` on `M / (x⁻) M`, for slices whose
/// target is inside the window.
fn ann_dims(m: &SlicedModule, x_minus: &[Operator], w: &Operator) -> Vec<u64> {
    let quotients = m.image_quotients(x_minus);
    (0..m.dims.len().saturating_sub(w.degree))
        .into_par_iter()
        .map(|s| {
            let q = &quotients[s];
            if q.dim() == 0 {
                return 0;
            }
            let mat = induced(&quotients, w.at(s).unwrap(), s, w.degree);
            (q.dim() - mat.rank()) as u64
        })
        .collect()
}

/// Length of `Ann_{M/x⁻M} w`.
pub fn ann_length(m: &SlicedModule, x_minus: &[Operator], w: &Operator) -> Result<u64> {
    let dims = ann_dims(m, x_minus, w);
    if !tail_vanishes(&dims) {
        return Err(Error::Window(format!("annihilator does not vanish near the top of the window: {dims:?}")));
    }
    Ok(dims.iter().sum())
}

/// `e(w, N) = length(N/wN) - length(Ann_N w)` for a single operator.
pub fn elem_multiplicity(n: &SlicedModule, w: &Operator) -> Result<i64> {
    let rep = koszul_report(n, std::slice::from_ref(w))?;
    Ok(rep.multiplicity)
}

/// Rank over a polynomial base: the Koszul multiplicity on the generators.
pub fn rank_over_a(m: &SlicedModule) -> Result<i64> {
    let ops: Vec<Operator> = (0..m.num_generators()).map(|g| m.generator(g)).collect();
    Ok(koszul_report(m, &ops)?.multiplicity)
}

/// `H_j(ops; M)` materialized as a sliced module with the induced action of
/// every generator of `M`.
pub fn homology_module(m: &SlicedModule, ops: &[Operator], j: usize) -> Result<SlicedModule> {
    let r = ops.len();
    if j > r {
        return Err(Error::Index(format!("H_{j} of a Koszul complex on {r} elements")));
    }
    let layout = KoszulLayout::new(ops);
    let len = m.dims.len();
    struct Piece {
        kernel: crate::linalg::Kernel,
        quotient: Quotient,
        offsets: Vec<Option<(usize, usize)>>,
        total: usize,
    }
    let pieces: Vec<Piece> = (0..len)
        .into_par_iter()
        .map(|s| {
            let (offsets, total) = layout.offsets(m, j, s);
            let kernel = if j == 0 {
                FpMatrix::zeros(m.field, 0, total).kernel()
            } else {
                layout.differential(m, ops, j, s).kernel()
            };
            let image = if j < r {
                let d = layout.differential(m, ops, j + 1, s);
                kernel.coordinates_of_columns(&d)
            } else {
                FpMatrix::zeros(m.field, kernel.dim(), 0)
            };
            let quotient = Quotient::by_columns(&image);
            Piece { kernel, quotient, offsets, total }
        })
        .collect();
    let dims: Vec<usize> = pieces.iter().map(|p| p.quotient.dim()).collect();
    let field = m.field;
    let actions = (0..m.num_generators())
        .map(|g| {
            (0..len - 1)
                .map(|s| {
                    let (src, dst) = (&pieces[s], &pieces[s + 1]);
                    // diagonal action of X_g on K_j(s) -> K_j(s+1)
                    let mut diag = FpMatrix::zeros(field, dst.total, src.total);
                    for (k, off) in src.offsets.iter().enumerate() {
                        if let (Some((c0, slice)), Some((r0, _))) = (off, dst.offsets[k]) {
                            diag.set_block(r0, *c0, &m.actions[g][*slice]);
                        }
                    }
                    let lifts = src.kernel.basis.select_columns(src.quotient.lift_coordinates());
                    let moved = diag.compose(&lifts).unwrap();
                    let coords = dst.kernel.coordinates_of_columns(&moved);
                    dst.quotient.projection().compose(&coords).unwrap()
                })
                .collect()
        })
        .collect();
    SlicedModule::new(field, m.lo, dims, actions)
}

/// Both sides of the alternating identity relating `e(w, H_j(x⁻, M))` to
/// `χ₁((w, x⁻), M)` and the annihilator of `w` on `M/x⁻M`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IdentitySides {
    pub lhs: i64,
    pub chi1: i64,
    pub ann: u64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Prop24Report {
    pub yz: IdentitySides,
    pub y: IdentitySides,
    pub z: IdentitySides,
    /// `e(yz, H_j)`, `e(y, H_j)`, `e(z, H_j)` for `j = 1..d-1`.
    pub elem: Vec<[i64; 3]>,
    pub additivity_holds: bool,
}

impl Prop24Report {
    pub fn all_hold(&self) -> bool {
        self.yz.holds && self.y.holds && self.z.holds && self.additivity_holds
    }
}

fn identity_sides(
    m: &SlicedModule,
    x_minus: &[Operator],
    homology: &[SlicedModule],
    w_of: impl Fn(&SlicedModule) -> Result<Operator>,
) -> Result<(IdentitySides, Vec<i64>)> {
    let mut lhs = 0;
    let mut elems = Vec::new();
    for (j, h) in homology.iter().enumerate() {
        let e = elem_multiplicity(h, &w_of(h)?)?;
        elems.push(e);
        lhs += if j % 2 == 0 { e } else { -e };
    }
    let w = w_of(m)?;
    let mut ops = vec![w.clone()];
    ops.extend(x_minus.iter().cloned());
    let chi1 = koszul_report(m, &ops)?.chi1;
    let ann = ann_length(m, x_minus, &w)?;
    Ok((IdentitySides { lhs, chi1, ann, holds: lhs == chi1 - ann as i64 }, elems))
}

/// Checks the identities for `yz`, `y` and `z` against `x⁻`, plus additivity
/// `e(yz, H_j) = e(y, H_j) + e(z, H_j)`. Forms are coefficient vectors over
/// the generators of `m`.
pub fn prop24_check(m: &SlicedModule, x_minus: &[Vec<u64>], y: &[u64], z: &[u64]) -> Result<Prop24Report> {
    let xm = m.forms(x_minus)?;
    let homology: Vec<SlicedModule> = (1..=x_minus.len()).map(|j| homology_module(m, &xm, j)).collect::<Result<_>>()?;
    let yz_of = |n: &SlicedModule| Ok(n.form(y)?.after(&n.form(z)?));
    let (yz, e_yz) = identity_sides(m, &xm, &homology, yz_of)?;
    let (ys, e_y) = identity_sides(m, &xm, &homology, |n| n.form(y))?;
    let (zs, e_z) = identity_sides(m, &xm, &homology, |n| n.form(z))?;
    let elem: Vec<[i64; 3]> = (0..homology.len()).map(|j| [e_yz[j], e_y[j], e_z[j]]).collect();
    let additivity_holds = elem.iter().all(|[a, b, c]| a == &(b + c));
    Ok(Prop24Report { yz, y: ys, z: zs, elem, additivity_holds })
}

/// Matrices of monomials in the generators, cached by exponent and source
/// slice.
pub struct MonomialActions<'a> {
    module: &'a SlicedModule,
    cache: HashMap<(Exponents, usize), FpMatrix>,
}

impl<'a> MonomialActions<'a> {
    pub fn new(module: &'a SlicedModule) -> Self {
        MonomialActions { module, cache: HashMap::new() }
    }

    /// `X^e` from slice `i` to slice `i + |e|`.
    pub fn monomial(&mut self, e: &[u32], i: usize) -> Result<FpMatrix> {
        let deg = total_degree(e) as usize;
        let m = self.module;
        if i + deg >= m.dims.len() {
            return Err(Error::Window(format!("monomial of degree {deg} from slice {i} leaves the window")));
        }
        if deg == 0 {
            return Ok(FpMatrix::identity(m.field, m.dims[i]));
        }
        if let Some(hit) = self.cache.get(&(e.to_vec(), i)) {
            return Ok(hit.clone());
        }
        let g = e.iter().position(|&x| x > 0).unwrap();
        let mut rest = e.to_vec();
        rest[g] -= 1;
        let inner = self.monomial(&rest, i)?;
        let out = m.actions[g][i + deg - 1].compose(&inner)?;
        self.cache.insert((e.to_vec(), i), out.clone());
        Ok(out)
    }

    /// A homogeneous polynomial in the generators, from slice `i`.
    pub fn polynomial(&mut self, f: &Polynomial, i: usize) -> Result<FpMatrix> {
        let deg = f.degree().unwrap_or(0) as usize;
        let m = self.module;
        if i + deg >= m.dims.len() {
            return Err(Error::Window(format!("polynomial of degree {deg} from slice {i} leaves the window")));
        }
        let mut out = FpMatrix::zeros(m.field, m.dims[i + deg], m.dims[i]);
        for (e, c) in f.terms() {
            let mono = self.monomial(e, i)?;
            out.add_scaled(&mono, *c);
        }
        Ok(out)
    }
}

/// Presentation of `R` as a graded `A`-module, `A = k[z_1..z_d]`.
#[derive(Debug)]
pub struct APresentation {
    /// Degrees `a_b` of the generators.
    pub shifts: Vec<usize>,
    /// Generators as coordinate vectors in `R_{a_b}`.
    pub generators: Vec<Vec<u64>>,
    /// Minimal relations: degree and one A-polynomial per generator.
    pub relations: Vec<(usize, Vec<Polynomial>)>,
    d: usize,
    /// Per degree `t`, the columns of `Φ_t : ⊕ A_{t-a_b} -> R_t` and their
    /// (generator, monomial) labels.
    phi: Vec<(FpMatrix, Vec<(usize, Exponents)>)>,
}

impl APresentation {
    /// Builds the presentation through degree `hi` of `alg`.
    pub fn new(alg: &GradedAlgebra, forms: &LinearFormSet, hi: usize) -> Result<Self> {
        if hi > alg.max_degree() {
            return Err(Error::Window(format!(
                "presentation to degree {hi} exceeds the algebra window {}",
                alg.max_degree()
            )));
        }
        let f = alg.field();
        let d = forms.len();
        let z: Vec<Vec<FpMatrix>> = forms
            .forms
            .iter()
            .map(|c| (0..hi).map(|t| alg.linear_action(c, t)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let mut shifts = Vec::new();
        let mut generators: Vec<Vec<u64>> = Vec::new();
        // images[b][γ] = z^γ b
        let mut images: Vec<HashMap<Exponents, Vec<u64>>> = Vec::new();
        let mut phi: Vec<(FpMatrix, Vec<(usize, Exponents)>)> = Vec::with_capacity(hi + 1);
        let mut kernels: Vec<FpMatrix> = Vec::new();
        let mut relations = Vec::new();
        for t in 0..=hi {
            // extend images of old generators to degree t
            for (b, imgs) in images.iter_mut().enumerate() {
                if shifts[b] >= t {
                    continue;
                }
                for gamma in monomials_of_degree(d, (t - shifts[b]) as u32) {
                    let i = gamma.iter().position(|&x| x > 0).unwrap();
                    let mut prev = gamma.clone();
                    prev[i] -= 1;
                    let v = z[i][t - 1].apply(&imgs[&prev]);
                    imgs.insert(gamma, v);
                }
            }
            let labels_old: Vec<(usize, Exponents)> = (0..shifts.len())
                .flat_map(|b| {
                    let k = t.checked_sub(shifts[b]);
                    k.map(|k| monomials_of_degree(d, k as u32).into_iter().map(move |g| (b, g)).collect::<Vec<_>>())
                        .unwrap_or_default()
                })
                .collect();
            let dim = alg.dim(t);
            let cols: Vec<Vec<u64>> = labels_old.iter().map(|(b, g)| images[*b][g].clone()).collect();
            let old = FpMatrix::from_columns(f, dim, &cols);
            // new generators: a basis of R_t modulo the image
            let q = Quotient::by_columns(&old);
            let mut labels = labels_old;
            let mut all_cols = cols;
            for &c in q.lift_coordinates() {
                let mut v = vec![0u64; dim];
                v[c] = 1;
                let b = shifts.len();
                shifts.push(t);
                generators.push(v.clone());
                let mut imgs = HashMap::new();
                imgs.insert(vec![0; d], v.clone());
                images.push(imgs);
                labels.push((b, vec![0; d]));
                all_cols.push(v);
            }
            let mat = FpMatrix::from_columns(f, dim, &all_cols);
            // relations: kernel of Φ_t modulo z * (kernel of Φ_{t-1})
            let ker = mat.kernel_basis();
            if ker.cols() > 0 {
                let label_index: HashMap<&(usize, Exponents), usize> =
                    labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
                let mut shifted_cols: Vec<Vec<u64>> = Vec::new();
                if t > 0 {
                    let (_, prev_labels) = &phi[t - 1];
                    let prev_ker: &FpMatrix = &kernels[t - 1];
                    for i in 0..d {
                        for c in 0..prev_ker.cols() {
                            let mut v = vec![0u64; labels.len()];
                            for (r, (b, g)) in prev_labels.iter().enumerate() {
                                let x = prev_ker.get(r, c);
                                if x != 0 {
                                    let mut g2: Exponents = g.clone();
                                    g2[i] += 1;
                                    v[label_index[&(*b, g2)]] = x;
                                }
                            }
                            shifted_cols.push(v);
                        }
                    }
                }
                let n_shift = shifted_cols.len();
                let mut stacked = shifted_cols;
                stacked.extend((0..ker.cols()).map(|c| ker.column(c)));
                let mut ech = FpMatrix::from_columns(f, labels.len(), &stacked);
                let pivots = ech.eliminate(false);
                for &pc in pivots.iter().filter(|&&pc| pc >= n_shift) {
                    let col = &stacked[pc];
                    let mut comps: Vec<Polynomial> = vec![Polynomial::zero(f, d); shifts.len()];
                    for (r, (b, g)) in labels.iter().enumerate() {
                        if col[r] != 0 {
                            comps[*b] = comps[*b].add(&Polynomial::monomial(f, g.clone(), col[r]));
                        }
                    }
                    relations.push((t, comps));
                }
            }
            kernels.push(ker);
            phi.push((mat, labels));
        }
        Ok(APresentation { shifts, generators, relations, d, phi })
    }

    pub fn rank(&self) -> usize {
        self.shifts.len()
    }

    /// Writes `v ∈ R_t` as `Σ f_b(z) b`.
    pub fn express(&self, v: &[u64], t: usize) -> Result<Vec<Polynomial>> {
        let (mat, labels) =
            self.phi.get(t).ok_or_else(|| Error::Window(format!("degree {t} beyond the presentation")))?;
        let f = mat.field();
        let rhs = FpMatrix::from_columns(f, v.len(), &[v.to_vec()]);
        let sol = mat.solve(&rhs).ok_or_else(|| Error::Shape("element not in the span of the generators".into()))?;
        let mut comps = vec![Polynomial::zero(f, self.d); self.shifts.len()];
        for (r, (b, g)) in labels.iter().enumerate() {
            let x = sol.get(r, 0);
            if x != 0 {
                comps[*b] = comps[*b].add(&Polynomial::monomial(f, g.clone(), x));
            }
        }
        Ok(comps)
    }
}

/// `R ⊗_A W` for `W` realized over `A = k[z_1..z_d]` (one generator per
/// form). The result is a module over `R` with one generator per degree-one
/// variable, on the degrees `[0, W.hi()]`.
pub fn tensor_over_a(alg: &GradedAlgebra, forms: &LinearFormSet, w: &SlicedModule) -> Result<SlicedModule> {
    if w.num_generators() != forms.len() {
        return Err(Error::Shape(format!("W has {} generators, A has {}", w.num_generators(), forms.len())));
    }
    if w.lo() < 0 {
        return Err(Error::Input("W must live in non-negative degrees".into()));
    }
    let hi = w.hi().max(0) as usize;
    let pres = APresentation::new(alg, forms, hi.min(alg.max_degree()))?;
    if alg.max_degree() < hi + 1 {
        return Err(Error::Window(format!("algebra window {} too small for W up to {hi}", alg.max_degree())));
    }
    tensor_with_presentation(alg, &pres, w)
}

/// Tensor product given a precomputed presentation.
pub fn tensor_with_presentation(alg: &GradedAlgebra, pres: &APresentation, w: &SlicedModule) -> Result<SlicedModule> {
    let f = alg.field();
    let hi = w.hi() as usize;
    let wfull = w.extend_down(0);
    let mut acts = MonomialActions::new(&wfull);
    let wdim = |t: i64| if t < 0 { 0 } else { wfull.dims[t as usize] };
    // ambient slice t = ⊕_b W_{t - a_b}
    let offsets: Vec<Vec<usize>> = (0..=hi)
        .map(|t| {
            let mut offs = Vec::with_capacity(pres.rank() + 1);
            let mut acc = 0;
            for &a in &pres.shifts {
                offs.push(acc);
                acc += wdim(t as i64 - a as i64);
            }
            offs.push(acc);
            offs
        })
        .collect();
    let ambient = |t: usize| *offsets[t].last().unwrap();
    // relation images
    let mut quotients = Vec::with_capacity(hi + 1);
    for t in 0..=hi {
        let mut cols: Vec<FpMatrix> = Vec::new();
        for (deg, comps) in &pres.relations {
            if *deg > t || wdim(t as i64 - *deg as i64) == 0 {
                continue;
            }
            let src = t - deg;
            let mut block = FpMatrix::zeros(f, ambient(t), wdim(src as i64));
            for (b, fb) in comps.iter().enumerate() {
                if fb.is_zero() {
                    continue;
                }
                let m = acts.polynomial(fb, src)?;
                block.set_block(offsets[t][b], 0, &m);
            }
            cols.push(block);
        }
        let refs: Vec<&FpMatrix> = cols.iter().collect();
        quotients.push(if refs.is_empty() {
            Quotient::trivial(f, ambient(t))
        } else {
            Quotient::by_columns(&FpMatrix::hstack_all(f, ambient(t), &refs))
        });
    }
    // x_j acts through x_j * b = Σ f_{b'}(z) b'
    let vars = alg.degree_one_variables();
    let mut actions = Vec::with_capacity(vars.len());
    for &v in &vars {
        let mut exprs = Vec::with_capacity(pres.rank());
        for (b, gen) in pres.generators.iter().enumerate() {
            let a = pres.shifts[b];
            let img = alg.variable_action(v, a)?.apply(gen);
            exprs.push(pres.express(&img, a + 1)?);
        }
        let mut mats = Vec::with_capacity(hi);
        for t in 0..hi {
            let mut amb = FpMatrix::zeros(f, ambient(t + 1), ambient(t));
            for (b, expr) in exprs.iter().enumerate() {
                let src = t as i64 - pres.shifts[b] as i64;
                if src < 0 || wdim(src) == 0 {
                    continue;
                }
                for (bp, fb) in expr.iter().enumerate() {
                    if fb.is_zero() {
                        continue;
                    }
                    let m = acts.polynomial(fb, src as usize)?;
                    amb.set_block(offsets[t + 1][bp], offsets[t][b], &m);
                }
            }
            mats.push(induced(&quotients, &amb, t, 1));
        }
        actions.push(mats);
    }
    let dims = quotients.iter().map(Quotient::dim).collect();
    SlicedModule::new(f, 0, dims, actions)
}

/// `F^e_*(M_{a mod q})` restricted to `slices` slices: slice `j` is
/// `M_{a + jq}` and each generator acts by its `q`-th power.
pub fn select_and_pushforward(m: &SlicedModule, a: i64, q: u64, slices: usize) -> Result<SlicedModule> {
    if q == 0 || slices == 0 {
        return Err(Error::Input("need q >= 1 and at least one slice".into()));
    }
    let q = q as i64;
    let top = a + (slices as i64 - 1) * q;
    if top > m.hi() {
        return Err(Error::Window(format!("pushforward needs degree {top}, window ends at {}", m.hi())));
    }
    let lo = a.min(m.lo());
    let full = m.extend_down(lo);
    let idx = |t: i64| (t - lo) as usize;
    let dims: Vec<usize> = (0..slices).map(|j| full.dims[idx(a + j as i64 * q)]).collect();
    let f = m.field();
    let actions = (0..m.num_generators())
        .map(|g| {
            (0..slices - 1)
                .into_par_iter()
                .map(|j| {
                    let start = idx(a + j as i64 * q);
                    let mut acc = full.actions[g][start].clone();
                    for s in 1..q as usize {
                        acc = full.actions[g][start + s].compose(&acc).unwrap();
                    }
                    acc
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let _ = f;
    SlicedModule::new(m.field(), 0, dims, actions)
}
