//! Symmetry operations written as coordinate triples such as `-x, y+1/2, -z`.

use std::fmt;

use num_rational::Rational64;
use num_traits::{CheckedAdd, CheckedMul, One, Signed, Zero};

use crate::error::{Error, Result};
use crate::linalg::Vec3;

/// Largest numerator or denominator accepted in an expression.
const MAX_LITERAL: i64 = 1_000_000;

/// Affine map `f -> R f + t` on fractional coordinates with exact entries.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SymmetryOp {
    pub rotation: [[Rational64; 3]; 3],
    /// Reduced to [0, 1).
    pub translation: [Rational64; 3],
}

fn r(n: i64) -> Rational64 {
    Rational64::from_integer(n)
}

fn det3(m: &[[Rational64; 3]; 3]) -> Option<Rational64> {
    let term = |a: usize, b: usize, c: usize| -> Option<Rational64> {
        m[0][a].checked_mul(&m[1][b])?.checked_mul(&m[2][c])
    };
    let plus = term(0, 1, 2)?.checked_add(&term(1, 2, 0)?)?.checked_add(&term(2, 0, 1)?)?;
    let minus = term(0, 2, 1)?.checked_add(&term(1, 0, 2)?)?.checked_add(&term(2, 1, 0)?)?;
    plus.checked_add(&-minus)
}

/// Reduces a rational to [0, 1).
pub fn reduce_unit(x: Rational64) -> Rational64 {
    x - x.floor()
}

impl SymmetryOp {
    pub fn identity() -> Self {
        let mut rotation = [[r(0); 3]; 3];
        for (k, row) in rotation.iter_mut().enumerate() {
            row[k] = r(1);
        }
        SymmetryOp { rotation, translation: [r(0); 3] }
    }

    pub fn new(rotation: [[Rational64; 3]; 3], translation: [Rational64; 3]) -> Result<Self> {
        match det3(&rotation) {
            Some(d) if d.abs() == Rational64::one() => Ok(SymmetryOp { rotation, translation: translation.map(reduce_unit) }),
            Some(d) => Err(Error::Cif(format!("rotation part has determinant {d}, expected ±1"))),
            None => Err(Error::Cif("rotation part overflows".into())),
        }
    }

    pub fn apply(&self, f: &Vec3<f64>) -> Vec3<f64> {
        let to_f = |q: Rational64| *q.numer() as f64 / *q.denom() as f64;
        std::array::from_fn(|i| {
            (0..3).map(|j| to_f(self.rotation[i][j]) * f[j]).sum::<f64>() + to_f(self.translation[i])
        })
    }
}

struct Cursor<'a> {
    chars: Vec<char>,
    pos: usize,
    /// Column of the first character of this component in the full text.
    offset: usize,
    text: &'a str,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn error(&self, reason: impl Into<String>) -> Error {
        Error::Parse { line: 1, column: self.offset + self.pos + 1, reason: format!("{} in `{}`", reason.into(), self.text) }
    }

    fn integer(&mut self) -> Result<i64> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a number"));
        }
        let digits: String = self.chars[start..self.pos].iter().collect();
        match digits.parse::<i64>() {
            Ok(v) if v <= MAX_LITERAL => Ok(v),
            _ => Err(self.error("number too large")),
        }
    }

    /// `12`, `0.25`, `.5` or `3/4`.
    fn number(&mut self) -> Result<Rational64> {
        let whole = if self.peek() == Some('.') { 0 } else { self.integer()? };
        let mut value = r(whole);
        if self.peek() == Some('.') {
            self.pos += 1;
            let start = self.pos;
            let frac = if self.peek().is_some_and(|c| c.is_ascii_digit()) { self.integer()? } else { 0 };
            let digits = (self.pos - start) as u32;
            if digits > 6 {
                return Err(self.error("too many decimal digits"));
            }
            value += Rational64::new(frac, 10i64.pow(digits));
        }
        self.skip_ws();
        if self.peek() == Some('/') {
            self.pos += 1;
            self.skip_ws();
            let den = self.integer()?;
            if den == 0 {
                return Err(self.error("division by zero"));
            }
            value /= r(den);
        }
        Ok(value)
    }

    fn variable(&mut self) -> Option<usize> {
        let k = match self.peek()?.to_ascii_lowercase() {
            'x' => 0,
            'y' => 1,
            'z' => 2,
            _ => return None,
        };
        self.pos += 1;
        Some(k)
    }
}

fn parse_component(text: &str, part: &str, offset: usize) -> Result<([Rational64; 3], Rational64)> {
    let mut c = Cursor { chars: part.chars().collect(), pos: 0, offset, text };
    let mut coeffs = [r(0); 3];
    let mut constant = r(0);
    let mut first = true;
    c.skip_ws();
    if c.peek().is_none() {
        return Err(c.error("empty component"));
    }
    while c.peek().is_some() {
        let sign = match c.peek() {
            Some('+') => {
                c.pos += 1;
                r(1)
            }
            Some('-') => {
                c.pos += 1;
                r(-1)
            }
            _ if first => r(1),
            Some(ch) => return Err(c.error(format!("expected `+` or `-`, found `{ch}`"))),
            None => unreachable!(),
        };
        first = false;
        c.skip_ws();
        let (coef, var) = match c.peek() {
            Some(ch) if ch.is_ascii_digit() || ch == '.' => {
                let q = c.number()?;
                c.skip_ws();
                if c.peek() == Some('*') {
                    c.pos += 1;
                    c.skip_ws();
                    match c.variable() {
                        Some(v) => (q, Some(v)),
                        None => return Err(c.error("expected x, y or z after `*`")),
                    }
                } else {
                    (q, c.variable())
                }
            }
            Some(_) => match c.variable() {
                Some(v) => {
                    c.skip_ws();
                    match c.peek() {
                        Some('*') | Some('/') => {
                            let divide = c.peek() == Some('/');
                            c.pos += 1;
                            c.skip_ws();
                            if c.peek().is_some_and(|ch| "xyzXYZ".contains(ch)) {
                                return Err(c.error("nonlinear term"));
                            }
                            let q = c.number()?;
                            if divide && q.is_zero() {
                                return Err(c.error("division by zero"));
                            }
                            (if divide { q.recip() } else { q }, Some(v))
                        }
                        _ => (r(1), Some(v)),
                    }
                }
                None => return Err(c.error(format!("unexpected character `{}`", c.peek().unwrap()))),
            },
            None => return Err(c.error("dangling sign")),
        };
        c.skip_ws();
        if c.peek().is_some_and(|ch| "xyzXYZ*/(^".contains(ch)) {
            return Err(c.error("nonlinear or malformed term"));
        }
        let term = sign * coef;
        let slot = match var {
            Some(v) => &mut coeffs[v],
            None => &mut constant,
        };
        *slot = slot.checked_add(&term).ok_or_else(|| c.error("coefficient overflow"))?;
        if slot.numer().abs() > MAX_LITERAL || *slot.denom() > MAX_LITERAL {
            return Err(c.error("coefficient too large"));
        }
    }
    Ok((coeffs, constant))
}

/// Parses `"x, y+1/2, -z"` style triples; case-insensitive in x, y, z.
pub fn parse_symop(text: &str) -> Result<SymmetryOp> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            reason: format!("expected three comma-separated components in `{text}`, found {}", parts.len()),
        });
    }
    let mut rotation = [[r(0); 3]; 3];
    let mut translation = [r(0); 3];
    let mut offset = 0;
    for (i, part) in parts.iter().enumerate() {
        let (row, t) = parse_component(text, part, offset)?;
        rotation[i] = row;
        translation[i] = t;
        offset += part.chars().count() + 1;
    }
    SymmetryOp::new(rotation, translation)
}

fn render_component(row: &[Rational64; 3], t: Rational64) -> String {
    let mut s = String::new();
    for (k, &q) in row.iter().enumerate() {
        if q.is_zero() {
            continue;
        }
        let var = ["x", "y", "z"][k];
        let sign = if q.is_negative() { "-" } else if s.is_empty() { "" } else { "+" };
        let mag = q.abs();
        if mag.is_one() {
            s += &format!("{sign}{var}");
        } else {
            s += &format!("{sign}{mag}*{var}");
        }
    }
    if !t.is_zero() || s.is_empty() {
        let sign = if t.is_negative() { "-" } else if s.is_empty() { "" } else { "+" };
        s += &format!("{sign}{}", t.abs());
    }
    s
}

/// Canonical text form, e.g. `-x, y+1/2, -z+1/2`.
pub fn render_symop(op: &SymmetryOp) -> String {
    (0..3).map(|i| render_component(&op.rotation[i], op.translation[i])).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for SymmetryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_symop(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn examples() {
        assert_eq!(parse_symop("x, y, z").unwrap(), SymmetryOp::identity());
        let op = parse_symop("-x, y+1/2, -z+1/2").unwrap();
        assert_eq!(op.rotation, [[r(-1), r(0), r(0)], [r(0), r(1), r(0)], [r(0), r(0), r(-1)]]);
        assert_eq!(op.translation, [r(0), q(1, 2), q(1, 2)]);
        let op = parse_symop("x+y, y, z").unwrap();
        assert_eq!(op.rotation, [[r(1), r(1), r(0)], [r(0), r(1), r(0)], [r(0), r(0), r(1)]]);
        assert_eq!(parse_symop("1/2+X,-Y , 0.75-z").unwrap().translation, [q(1, 2), r(0), q(3, 4)]);
        assert_eq!(parse_symop("x-1/4, y, z").unwrap().translation[0], q(3, 4));
    }

    #[test]
    fn rejects_malformed_and_nonlinear() {
        for bad in ["x, y", "x*y, y, z", "x, y, z^2", "x, , z", "x, y, z+", "x, y, q", "x, x, z", "x, y, z/0", "x y, y, z"] {
            match parse_symop(bad) {
                Err(Error::Parse { .. }) | Err(Error::Cif(_)) => {}
                other => panic!("{bad}: {other:?}"),
            }
        }
        match parse_symop("x, y, z*y") {
            Err(Error::Parse { column, .. }) => assert_eq!(column, 9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn apply_matches_manual_evaluation() {
        let op = parse_symop("-y, x-y, z+1/3").unwrap();
        let f = [0.1, 0.25, 0.7];
        let g = op.apply(&f);
        let expect = [-0.25, 0.1 - 0.25, 0.7 + 1.0 / 3.0];
        for k in 0..3 {
            assert!((g[k] - expect[k]).abs() < 1e-15);
        }
    }

    /// The 48 signed permutation matrices.
    fn cubic_ops() -> Vec<[[Rational64; 3]; 3]> {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::new();
        for p in perms {
            for signs in 0..8 {
                let mut m = [[r(0); 3]; 3];
                for i in 0..3 {
                    m[i][p[i]] = if signs >> i & 1 == 1 { r(-1) } else { r(1) };
                }
                out.push(m);
            }
        }
        out
    }

    #[test]
    fn render_then_parse_is_identity_on_cubic_ops() {
        let quarters = [r(0), q(1, 4), q(1, 2), q(3, 4)];
        let mut count = 0;
        for m in cubic_ops() {
            for a in quarters {
                for b in quarters {
                    for c in quarters {
                        let op = SymmetryOp::new(m, [a, b, c]).unwrap();
                        assert_eq!(parse_symop(&render_symop(&op)).unwrap(), op);
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 48 * 64);
    }
}
