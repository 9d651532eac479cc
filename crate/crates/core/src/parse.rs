//! Polynomial and ring-file input language.
//!
//! ```text
//! expr   := sign? term (('+'|'-') term)*
//! term   := factor ('*' factor)*
//! factor := coefficient | var ('^' nat)?
//! var    := 'x' nat | 'u'
//! ```
//!
//! Whitespace is insignificant. `u` is only accepted when the caller asks for
//! an extension variable; it becomes variable index `m`.

use crate::error::{Error, Result};
use crate::linalg::PrimeField;
use crate::poly::Polynomial;

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    nvars: usize,
    allow_u: bool,
    field: PrimeField,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse { offset, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn nat(&mut self) -> Result<u64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err(start, "expected a natural number");
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match text.parse::<u64>() {
            Ok(v) => Ok(v),
            Err(_) => self.err(start, format!("number {text} is too large")),
        }
    }

    fn total_vars(&self) -> usize {
        self.nvars + usize::from(self.allow_u)
    }

    fn expr(&mut self) -> Result<Polynomial> {
        let n = self.total_vars();
        let mut acc = Polynomial::zero(self.field, n);
        let mut negative = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                true
            }
            Some(b'+') => {
                self.pos += 1;
                false
            }
            _ => false,
        };
        loop {
            let t = self.term()?;
            acc = if negative { acc.sub(&t) } else { acc.add(&t) };
            match self.peek() {
                Some(b'+') => negative = false,
                Some(b'-') => negative = true,
                None => return Ok(acc),
                Some(c) => return self.err(self.pos, format!("unexpected character {:?}", c as char)),
            }
            self.pos += 1;
        }
    }

    fn term(&mut self) -> Result<Polynomial> {
        let mut acc = Polynomial::constant(self.field, self.total_vars(), 1);
        loop {
            acc = acc.mul(&self.factor()?);
            if self.peek() == Some(b'*') {
                self.pos += 1;
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor(&mut self) -> Result<Polynomial> {
        let n = self.total_vars();
        let start = match self.peek() {
            None => return self.err(self.pos, "empty term"),
            Some(_) => self.pos,
        };
        let c = self.src[start];
        if c.is_ascii_digit() {
            let v = self.nat()?;
            return Ok(Polynomial::constant(self.field, n, v % self.field.p()));
        }
        let var = match c {
            b'x' => {
                self.pos += 1;
                if !self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                    return self.err(self.pos, "variable x needs an index");
                }
                let i = self.nat()?;
                if i as usize >= self.nvars {
                    return self.err(start, format!("unknown variable x{i} (ring has {} variables)", self.nvars));
                }
                i as usize
            }
            b'u' if self.allow_u => {
                self.pos += 1;
                self.nvars
            }
            b'u' => return self.err(start, "variable u is not allowed here"),
            b'+' | b'-' | b'*' => return self.err(start, "empty term"),
            other => return self.err(start, format!("unknown variable {:?}", other as char)),
        };
        let mut exp = 1;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            if !self.peek().is_some_and(|c| c.is_ascii_digit()) {
                return self.err(self.pos, "malformed exponent");
            }
            let at = self.pos;
            exp = self.nat()?;
            if exp > u32::MAX as u64 / 2 {
                return self.err(at, "exponent too large");
            }
        }
        Ok(Polynomial::var(self.field, n, var).pow(exp as u32))
    }
}

fn parse_with(src: &str, m: usize, field: PrimeField, allow_u: bool) -> Result<Polynomial> {
    if src.trim().is_empty() {
        return Err(Error::Parse { offset: 0, message: "empty polynomial".into() });
    }
    let mut p = Parser { src: src.as_bytes(), pos: 0, nvars: m, allow_u, field };
    p.expr()
}

/// Parses a polynomial in `x0..x{m-1}`.
pub fn parse_polynomial(src: &str, m: usize, field: PrimeField) -> Result<Polynomial> {
    parse_with(src, m, field, false)
}

/// Parses a polynomial in `x0..x{m-1}` and `u`; the result has `m + 1`
/// variables with `u` last.
pub fn parse_extension_polynomial(src: &str, m: usize, field: PrimeField) -> Result<Polynomial> {
    parse_with(src, m, field, true)
}

/// Contents of a ring description file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingSpecFile {
    pub p: u64,
    pub vars: usize,
    pub dim: Option<usize>,
    pub generators: Vec<String>,
}

impl RingSpecFile {
    /// Reads `p=`, `vars=`, optional `dim=`, then one polynomial per line.
    /// Blank lines and `#` comments are ignored. Offsets in errors are byte
    /// offsets into `text`.
    pub fn parse(text: &str) -> Result<RingSpecFile> {
        let mut p = None;
        let mut vars = None;
        let mut dim = None;
        let mut generators = Vec::new();
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            let line_start = offset;
            offset += raw.len();
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let key_value = line.split_once('=').map(|(k, v)| (k.trim(), v.trim()));
            let number = |v: &str| {
                v.parse::<u64>().map_err(|_| Error::Parse { offset: line_start, message: format!("bad number {v:?}") })
            };
            match key_value {
                Some(("p", v)) => p = Some(number(v)?),
                Some(("vars", v)) => vars = Some(number(v)? as usize),
                Some(("dim", v)) => dim = Some(number(v)? as usize),
                Some((k, _)) => return Err(Error::Parse { offset: line_start, message: format!("unknown key {k:?}") }),
                None => generators.push(line.to_string()),
            }
        }
        let p = p.ok_or_else(|| Error::Input("ring file is missing p=".into()))?;
        let vars = vars.ok_or_else(|| Error::Input("ring file is missing vars=".into()))?;
        Ok(RingSpecFile { p, vars, dim, generators })
    }

    pub fn field(&self) -> Result<PrimeField> {
        PrimeField::new(self.p)
    }

    /// Parses every generator; each must be homogeneous.
    pub fn polynomials(&self) -> Result<Vec<Polynomial>> {
        let field = self.field()?;
        self.generators
            .iter()
            .map(|g| {
                let poly = parse_polynomial(g, self.vars, field)?;
                poly.require_homogeneous()?;
                Ok(poly)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gf(p: u64) -> PrimeField {
        PrimeField::new(p).unwrap()
    }

    #[test]
    fn fermat_cubic() {
        let g = parse_polynomial("x0^3 + x1^3 + x2^3", 3, gf(5)).unwrap();
        assert_eq!(g.terms().len(), 3);
        assert_eq!(g.degree(), Some(3));
        assert!(g.is_homogeneous());
    }

    #[test]
    fn sign_normalization() {
        let g = parse_polynomial("x0*x2 - x1^2", 3, gf(7)).unwrap();
        assert_eq!(g.terms().len(), 2);
        assert_eq!(g.coeff(&[0, 2, 0]), 6);
        assert_eq!(g.coeff(&[1, 0, 1]), 1);
    }

    #[test]
    fn inhomogeneous_parses() {
        let g = parse_polynomial("x0 + x1^2", 2, gf(5)).unwrap();
        assert!(!g.is_homogeneous());
    }

    #[test]
    fn coefficients_and_leading_sign() {
        let g = parse_polynomial(" -3*x0 +  7 * x1 ", 2, gf(5)).unwrap();
        assert_eq!(g.coeff(&[1, 0]), 2);
        assert_eq!(g.coeff(&[0, 1]), 2);
    }

    #[test]
    fn errors_carry_offsets() {
        let f = gf(5);
        match parse_polynomial("x0 + x9", 3, f) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        match parse_polynomial("x0^ + x1", 3, f) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_polynomial("x0 + + x1", 3, f), Err(Error::Parse { offset: 5, .. })));
        assert!(matches!(parse_polynomial("x0 * ", 3, f), Err(Error::Parse { .. })));
        assert!(matches!(parse_polynomial("u^2", 3, f), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse_polynomial("y", 3, f), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn extension_variable() {
        let g = parse_extension_polynomial("u^2 - x0*x1", 2, gf(5)).unwrap();
        assert_eq!(g.nvars(), 3);
        assert_eq!(g.coeff(&[0, 0, 2]), 1);
        assert_eq!(g.coeff(&[1, 1, 0]), 4);
    }

    #[test]
    fn ring_file() {
        let text = "# cubic\np=5\nvars=3\ndim=2\nx0^3 + x1^3 + x2^3  # Fermat\n\n";
        let spec = RingSpecFile::parse(text).unwrap();
        assert_eq!(spec, RingSpecFile { p: 5, vars: 3, dim: Some(2), generators: vec!["x0^3 + x1^3 + x2^3".into()] });
        assert_eq!(spec.polynomials().unwrap().len(), 1);
        assert!(RingSpecFile::parse("vars=3\n").is_err());
        let bad = RingSpecFile::parse("p=5\nvars=2\nx0 + x1^2\n").unwrap();
        assert!(bad.polynomials().is_err());
    }
}
