//! Dense linear algebra over prime fields GF(p), p an odd prime below 2^31.
//!
//! Entries are stored reduced in `u64`; every multiply-accumulate is reduced
//! immediately with a Barrett step, so `a + b*c` never exceeds 2^63.
//! Elimination is plain Gaussian elimination with first-nonzero pivoting.
//! Large eliminations split the row updates across the rayon pool; the result
//! does not depend on the number of threads.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row updates touching fewer entries than this stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

/// The prime field GF(p).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrimeField {
    p: u64,
    barrett: u64,
}

impl fmt::Debug for PrimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GF({})", self.p)
    }
}

impl PrimeField {
    /// Checks primality once; all later arithmetic trusts `p`.
    pub fn new(p: u64) -> Result<Self> {
        if !(3..1 << 31).contains(&p) {
            return Err(Error::Input(format!("modulus {p} must be an odd prime below 2^31")));
        }
        if !is_prime(p) {
            return Err(Error::Input(format!("modulus {p} is not prime")));
        }
        Ok(PrimeField { p, barrett: u64::MAX / p })
    }

    #[inline]
    pub fn p(&self) -> u64 {
        self.p
    }

    /// Reduces any `x < 2^64`.
    #[inline(always)]
    pub fn reduce(&self, x: u64) -> u64 {
        let q = ((x as u128 * self.barrett as u128) >> 64) as u64;
        let mut r = x - q * self.p;
        while r >= self.p {
            r -= self.p;
        }
        r
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.p {
            s - self.p
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.p - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.p - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce(a * b)
    }

    /// `acc + a*b`, all operands reduced.
    #[inline(always)]
    pub fn mul_add(&self, acc: u64, a: u64, b: u64) -> u64 {
        self.reduce(acc + a * b)
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1;
        base = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse of a nonzero element.
    pub fn inv(&self, a: u64) -> u64 {
        debug_assert!(!a.is_multiple_of(self.p), "inverse of zero");
        self.pow(a, self.p - 2)
    }

    /// Image of a signed integer.
    pub fn from_i64(&self, x: i64) -> u64 {
        let r = x.rem_euclid(self.p as i64);
        r as u64
    }

    pub fn scalar(&self, x: i64) -> FpScalar {
        FpScalar { value: self.from_i64(x), field: *self }
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// A single field element carrying its field.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct FpScalar {
    value: u64,
    field: PrimeField,
}

impl FpScalar {
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn field(&self) -> PrimeField {
        self.field
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0
    }

    pub fn inverse(&self) -> Option<FpScalar> {
        (self.value != 0).then(|| FpScalar { value: self.field.inv(self.value), field: self.field })
    }
}

impl Add for FpScalar {
    type Output = FpScalar;
    fn add(self, rhs: FpScalar) -> FpScalar {
        debug_assert_eq!(self.field, rhs.field);
        FpScalar { value: self.field.add(self.value, rhs.value), field: self.field }
    }
}

impl Sub for FpScalar {
    type Output = FpScalar;
    fn sub(self, rhs: FpScalar) -> FpScalar {
        debug_assert_eq!(self.field, rhs.field);
        FpScalar { value: self.field.sub(self.value, rhs.value), field: self.field }
    }
}

impl Mul for FpScalar {
    type Output = FpScalar;
    fn mul(self, rhs: FpScalar) -> FpScalar {
        debug_assert_eq!(self.field, rhs.field);
        FpScalar { value: self.field.mul(self.value, rhs.value), field: self.field }
    }
}

impl Neg for FpScalar {
    type Output = FpScalar;
    fn neg(self) -> FpScalar {
        FpScalar { value: self.field.neg(self.value), field: self.field }
    }
}

/// Dense row-major matrix over GF(p).
#[derive(Clone, PartialEq, Eq)]
pub struct FpMatrix {
    field: PrimeField,
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl fmt::Debug for FpMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "FpMatrix {}x{} over {:?}", self.rows, self.cols, self.field)?;
        if self.rows * self.cols <= 400 {
            for r in 0..self.rows {
                writeln!(f, "  {:?}", self.row(r))?;
            }
        }
        Ok(())
    }
}

impl FpMatrix {
    pub fn zeros(field: PrimeField, rows: usize, cols: usize) -> Self {
        FpMatrix { field, rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(field: PrimeField, n: usize) -> Self {
        let mut m = Self::zeros(field, n, n);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    /// Builds a matrix from signed integer rows, reducing mod p.
    pub fn from_rows(field: PrimeField, rows: &[Vec<i64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().map(|&x| field.from_i64(x)).collect();
        Ok(FpMatrix { field, rows: rows.len(), cols, data })
    }

    pub fn from_fn(field: PrimeField, rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> u64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(field.reduce(f(r, c)));
            }
        }
        FpMatrix { field, rows, cols, data }
    }

    /// Matrix whose columns are the given vectors (all of length `rows`).
    pub fn from_columns(field: PrimeField, rows: usize, columns: &[Vec<u64>]) -> Self {
        let cols = columns.len();
        let mut m = Self::zeros(field, rows, cols);
        for (c, col) in columns.iter().enumerate() {
            debug_assert_eq!(col.len(), rows);
            for (r, &v) in col.iter().enumerate() {
                m.data[r * cols + c] = v;
            }
        }
        m
    }

    #[inline]
    pub fn field(&self) -> PrimeField {
        self.field
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u64) {
        self.data[r * self.cols + c] = self.field.reduce(v);
    }

    /// Adds `v` into entry (r, c).
    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: u64) {
        let i = r * self.cols + c;
        self.data[i] = self.field.add(self.data[i], v);
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<u64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0)
    }

    pub fn nonzeros(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0).count()
    }

    pub fn transpose(&self) -> FpMatrix {
        let mut t = Self::zeros(self.field, self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn scale(&self, s: u64) -> FpMatrix {
        let f = self.field;
        let s = f.reduce(s);
        FpMatrix { data: self.data.iter().map(|&x| f.mul(x, s)).collect(), ..*self.shape_only() }
    }

    fn shape_only(&self) -> Box<FpMatrix> {
        Box::new(FpMatrix { field: self.field, rows: self.rows, cols: self.cols, data: Vec::new() })
    }

    /// Entrywise sum.
    pub fn add(&self, other: &FpMatrix) -> Result<FpMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let f = self.field;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f.add(a, b)).collect();
        Ok(FpMatrix { field: f, rows: self.rows, cols: self.cols, data })
    }

    /// `self += s * other`, shapes must agree.
    pub fn add_scaled(&mut self, other: &FpMatrix, s: u64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add_scaled shape mismatch");
        let f = self.field;
        if s == 0 {
            return;
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            if b != 0 {
                *a = f.mul_add(*a, s, b);
            }
        }
    }

    /// Exact product `self * other`.
    pub fn compose(&self, other: &FpMatrix) -> Result<FpMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot compose {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.mul_unchecked(other))
    }

    /// Product skipping zero entries of `self`, which makes products of the
    /// sparse action matrices cheap.
    fn mul_unchecked(&self, other: &FpMatrix) -> FpMatrix {
        let f = self.field;
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0u64; n * m];
        let body = |(i, out_row): (usize, &mut [u64])| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (l, &a) in a_row.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                let b_row = &other.data[l * m..(l + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = f.reduce(*o + a * b);
                }
            }
        };
        if n * k * m.max(1) >= PAR_THRESHOLD * 8 && m > 0 {
            out.par_chunks_mut(m).enumerate().for_each(body);
        } else if m > 0 {
            out.chunks_mut(m).enumerate().for_each(body);
        }
        FpMatrix { field: f, rows: n, cols: m, data: out }
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[u64]) -> Vec<u64> {
        assert_eq!(v.len(), self.cols, "apply: length mismatch");
        let f = self.field;
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(v)
                    .fold(0u64, |acc, (&a, &b)| if a == 0 || b == 0 { acc } else { f.mul_add(acc, a, b) })
            })
            .collect()
    }

    /// `[self | other]`.
    pub fn hstack(&self, other: &FpMatrix) -> Result<FpMatrix> {
        if self.rows != other.rows {
            return Err(Error::Shape("hstack: row counts differ".into()));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(FpMatrix { field: self.field, rows: self.rows, cols, data })
    }

    /// Horizontal concatenation of many blocks with `rows` rows.
    pub fn hstack_all(field: PrimeField, rows: usize, blocks: &[&FpMatrix]) -> FpMatrix {
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut m = Self::zeros(field, rows, cols);
        let mut off = 0;
        for b in blocks {
            assert_eq!(b.rows, rows, "hstack_all: row mismatch");
            for r in 0..rows {
                m.data[r * cols + off..r * cols + off + b.cols].copy_from_slice(b.row(r));
            }
            off += b.cols;
        }
        m
    }

    /// Vertical concatenation of many blocks with `cols` columns.
    pub fn vstack_all(field: PrimeField, cols: usize, blocks: &[&FpMatrix]) -> FpMatrix {
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for b in blocks {
            assert_eq!(b.cols, cols, "vstack_all: column mismatch");
            data.extend_from_slice(&b.data);
        }
        FpMatrix { field, rows, cols, data }
    }

    /// Copies `block` into position (r0, c0).
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &FpMatrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols, "set_block out of range");
        for r in 0..block.rows {
            let dst = (r0 + r) * self.cols + c0;
            self.data[dst..dst + block.cols].copy_from_slice(block.row(r));
        }
    }

    /// Keeps the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> FpMatrix {
        FpMatrix::from_fn(self.field, self.rows, cols.len(), |r, c| self.get(r, cols[c]))
    }

    /// Gaussian elimination in place. Returns pivot columns; row `i` holds the
    /// pivot for `pivots[i]` (normalized to 1). With `reduced`, pivot columns
    /// are cleared above the pivot too.
    pub fn eliminate(&mut self, reduced: bool) -> Vec<usize> {
        let (rows, cols, f) = (self.rows, self.cols, self.field);
        let p = f.p;
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..cols {
            if r == rows {
                break;
            }
            let Some(pr) = (r..rows).find(|&i| self.data[i * cols + c] != 0) else {
                continue;
            };
            if pr != r {
                for k in c..cols {
                    self.data.swap(r * cols + k, pr * cols + k);
                }
            }
            let inv = f.inv(self.data[r * cols + c]);
            for x in &mut self.data[r * cols + c..(r + 1) * cols] {
                *x = f.mul(*x, inv);
            }
            let pivot_row: Vec<u64> = self.data[r * cols + c..(r + 1) * cols].to_vec();
            let work = |row: &mut [u64]| {
                let factor = row[c];
                if factor != 0 {
                    let neg = p - factor;
                    for (x, &y) in row[c..].iter_mut().zip(&pivot_row) {
                        *x = f.reduce(*x + neg * y);
                    }
                }
            };
            let (above, rest) = self.data.split_at_mut(r * cols);
            let below = &mut rest[cols..];
            let big = (rows - r) * (cols - c) >= PAR_THRESHOLD;
            if big {
                below.par_chunks_mut(cols).for_each(work);
                if reduced {
                    above.par_chunks_mut(cols).for_each(work);
                }
            } else {
                below.chunks_mut(cols).for_each(work);
                if reduced {
                    above.chunks_mut(cols).for_each(work);
                }
            }
            pivots.push(c);
            r += 1;
        }
        pivots
    }

    /// Rank over GF(p).
    pub fn rank(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        // eliminating along the shorter side does less work
        if self.cols > self.rows * 2 {
            self.transpose().eliminate(false).len()
        } else {
            self.clone().eliminate(false).len()
        }
    }

    /// Basis of the right kernel, as columns. Column `i` has a 1 in free
    /// coordinate `free[i]` and zeros in the other free coordinates.
    pub fn kernel(&self) -> Kernel {
        let mut m = self.clone();
        let pivots = m.eliminate(true);
        let f = self.field;
        let mut is_pivot = vec![false; self.cols];
        for &c in &pivots {
            is_pivot[c] = true;
        }
        let free: Vec<usize> = (0..self.cols).filter(|&c| !is_pivot[c]).collect();
        let mut basis = FpMatrix::zeros(f, self.cols, free.len());
        for (j, &fc) in free.iter().enumerate() {
            basis.data[fc * free.len() + j] = 1;
            for (i, &pc) in pivots.iter().enumerate() {
                basis.data[pc * free.len() + j] = f.neg(m.get(i, fc));
            }
        }
        Kernel { basis, free }
    }

    /// Columns spanning the right kernel; count = cols - rank.
    pub fn kernel_basis(&self) -> FpMatrix {
        self.kernel().basis
    }

    /// Solves `self * X = rhs` for one particular solution, free variables set
    /// to zero. `None` when inconsistent.
    pub fn solve(&self, rhs: &FpMatrix) -> Option<FpMatrix> {
        assert_eq!(self.rows, rhs.rows, "solve: row mismatch");
        let mut aug = self.hstack(rhs).ok()?;
        let pivots = aug.eliminate(true);
        if pivots.iter().any(|&c| c >= self.cols) {
            return None;
        }
        let mut x = FpMatrix::zeros(self.field, self.cols, rhs.cols);
        for (i, &c) in pivots.iter().enumerate() {
            for j in 0..rhs.cols {
                x.data[c * rhs.cols + j] = aug.get(i, self.cols + j);
            }
        }
        Some(x)
    }
}

/// Right kernel with its free-coordinate normalization.
#[derive(Clone, Debug)]
pub struct Kernel {
    pub basis: FpMatrix,
    pub free: Vec<usize>,
}

impl Kernel {
    pub fn dim(&self) -> usize {
        self.free.len()
    }

    /// Coordinates of a kernel vector in the kernel basis.
    pub fn coordinates(&self, v: &[u64]) -> Vec<u64> {
        self.free.iter().map(|&c| v[c]).collect()
    }

    /// Coordinates for every column of `m` (each column must lie in the kernel).
    pub fn coordinates_of_columns(&self, m: &FpMatrix) -> FpMatrix {
        let mut out = FpMatrix::zeros(m.field(), self.free.len(), m.cols());
        for (i, &c) in self.free.iter().enumerate() {
            out.data[i * m.cols()..(i + 1) * m.cols()].copy_from_slice(m.row(c));
        }
        out
    }
}

/// The quotient of GF(p)^n by the span of some vectors. Quotient coordinates
/// are the non-pivot coordinates of the reduced spanning set, so each
/// quotient basis vector lifts to a unit vector.
#[derive(Clone, Debug)]
pub struct Quotient {
    ambient: usize,
    pivots: Vec<usize>,
    free: Vec<usize>,
    /// `proj` has shape (dim, ambient).
    proj: FpMatrix,
}

impl Quotient {
    /// Quotient of GF(p)^n by the column span of `span` (n rows).
    pub fn by_columns(span: &FpMatrix) -> Quotient {
        Self::by_rows(&span.transpose())
    }

    /// Quotient of GF(p)^n by the row span of `rows` (n columns).
    pub fn by_rows(rows: &FpMatrix) -> Quotient {
        let f = rows.field();
        let n = rows.cols();
        let mut m = rows.clone();
        let pivots = m.eliminate(true);
        let mut is_pivot = vec![false; n];
        for &c in &pivots {
            is_pivot[c] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        let mut pos = vec![usize::MAX; n];
        for (i, &c) in free.iter().enumerate() {
            pos[c] = i;
        }
        let mut proj = FpMatrix::zeros(f, free.len(), n);
        for (i, &c) in free.iter().enumerate() {
            proj.data[i * n + c] = 1;
        }
        for (i, &pc) in pivots.iter().enumerate() {
            for (j, &fc) in free.iter().enumerate() {
                let v = m.get(i, fc);
                if v != 0 {
                    proj.data[j * n + pc] = f.neg(v);
                }
            }
        }
        Quotient { ambient: n, pivots, free, proj }
    }

    /// The whole space (nothing divided out).
    pub fn trivial(field: PrimeField, n: usize) -> Quotient {
        Quotient { ambient: n, pivots: Vec::new(), free: (0..n).collect(), proj: FpMatrix::identity(field, n) }
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn rank_divided(&self) -> usize {
        self.pivots.len()
    }

    /// Ambient coordinates whose unit vectors form the quotient basis.
    pub fn lift_coordinates(&self) -> &[usize] {
        &self.free
    }

    pub fn projection(&self) -> &FpMatrix {
        &self.proj
    }

    /// Image of the ambient vector in quotient coordinates.
    pub fn project(&self, v: &[u64]) -> Vec<u64> {
        self.proj.apply(v)
    }

    /// Column `c` of the projection: the image of the `c`-th unit vector.
    pub fn project_unit(&self, c: usize) -> Vec<u64> {
        self.proj.column(c)
    }
}
