//! The truncated algebra `A (x) T(V) / T^{>d}` with polynomial coefficients,
//! ordered substitution `[[P(e)]]`, and the coefficient-wise PBW
//! decomposition `x = sum [[f_lambda(e)]] M_lambda`.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lyndon::{bracketing, pbw_basis, ConstTensor, LyndonWord, PBWMonomial, Word};
use crate::ring::{Poly, Rational, RingError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error("shape mismatch: (n={0}, d={1}) vs (n={2}, d={3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("degree {degree} exceeds truncation {d}")]
    DegreeTooHigh { degree: usize, d: usize },
    #[error("letter {letter} out of range 1..={n}")]
    LetterOutOfRange { letter: u8, n: usize },
    #[error(transparent)]
    Ring(#[from] RingError),
}

/// Element of `A<e1..en>` modulo words longer than `d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorPoly {
    n: usize,
    d: usize,
    terms: BTreeMap<Word, Poly>,
}

impl TensorPoly {
    pub fn zero(n: usize, d: usize) -> Self {
        TensorPoly {
            n,
            d,
            terms: BTreeMap::new(),
        }
    }

    pub fn scalar(n: usize, d: usize, p: Poly) -> Self {
        let mut t = Self::zero(n, d);
        t.add_term(Word::empty(), p);
        t
    }

    pub fn one(n: usize, d: usize) -> Self {
        Self::scalar(n, d, Poly::one(n))
    }

    pub fn letter(n: usize, d: usize, k: u8) -> Self {
        let mut t = Self::zero(n, d);
        t.add_term(Word::letter(k), Poly::one(n));
        t
    }

    pub fn from_const(n: usize, d: usize, x: &ConstTensor) -> Self {
        let mut t = Self::zero(n, d);
        for (w, c) in x.terms() {
            t.add_term(w.clone(), Poly::constant(n, c.clone()));
        }
        t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Poly)> {
        self.terms.iter()
    }

    pub fn coeff(&self, w: &Word) -> Poly {
        self.terms.get(w).cloned().unwrap_or_else(|| Poly::zero(self.n))
    }

    /// Adds `p * w`; words longer than the truncation are dropped.
    pub fn add_term(&mut self, w: Word, p: Poly) {
        if p.is_zero() || w.len() > self.d {
            return;
        }
        match self.terms.entry(w) {
            Entry::Vacant(v) => {
                v.insert(p);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += &p;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    fn check(&self, other: &TensorPoly) -> Result<(), SeriesError> {
        if self.n != other.n || self.d != other.d {
            Err(SeriesError::ShapeMismatch(self.n, self.d, other.n, other.d))
        } else {
            Ok(())
        }
    }

    pub fn checked_add(&self, other: &TensorPoly) -> Result<TensorPoly, SeriesError> {
        self.check(other)?;
        let mut out = self.clone();
        for (w, p) in &other.terms {
            out.add_term(w.clone(), p.clone());
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &TensorPoly) {
        assert_eq!((self.n, self.d), (other.n, other.d), "TensorPoly shape");
        for (w, p) in &other.terms {
            self.add_term(w.clone(), p.clone());
        }
    }

    pub fn sub(&self, other: &TensorPoly) -> TensorPoly {
        let mut out = self.clone();
        out.add_assign(&other.neg());
        out
    }

    pub fn add(&self, other: &TensorPoly) -> TensorPoly {
        self.checked_add(other).expect("TensorPoly add")
    }

    pub fn neg(&self) -> TensorPoly {
        self.scale(&Rational::from_integer((-1).into()))
    }

    pub fn scale(&self, c: &Rational) -> TensorPoly {
        let mut out = Self::zero(self.n, self.d);
        for (w, p) in &self.terms {
            out.add_term(w.clone(), p.scale(c));
        }
        out
    }

    pub fn scale_poly(&self, f: &Poly) -> TensorPoly {
        let mut out = Self::zero(self.n, self.d);
        for (w, p) in &self.terms {
            out.add_term(w.clone(), p * f);
        }
        out
    }

    /// Concatenation product, dropping words longer than `d`.
    pub fn nc_mul(&self, other: &TensorPoly) -> Result<TensorPoly, SeriesError> {
        self.check(other)?;
        let mut out = Self::zero(self.n, self.d);
        for (w1, p1) in &self.terms {
            for (w2, p2) in &other.terms {
                if w1.len() + w2.len() <= self.d {
                    out.add_term(w1.concat(w2), p1 * p2);
                }
            }
        }
        Ok(out)
    }

    pub fn mul(&self, other: &TensorPoly) -> TensorPoly {
        self.nc_mul(other).expect("TensorPoly mul")
    }

    pub fn commutator(&self, other: &TensorPoly) -> TensorPoly {
        self.mul(other).sub(&other.mul(self))
    }

    /// Tensor-degree-`m` component.
    pub fn component(&self, m: usize) -> TensorPoly {
        TensorPoly {
            n: self.n,
            d: self.d,
            terms: self
                .terms
                .iter()
                .filter(|(w, _)| w.len() == m)
                .map(|(w, p)| (w.clone(), p.clone()))
                .collect(),
        }
    }

    /// Drops all words longer than `k`.
    pub fn truncate_above(&self, k: usize) -> TensorPoly {
        TensorPoly {
            n: self.n,
            d: self.d,
            terms: self
                .terms
                .iter()
                .filter(|(w, _)| w.len() <= k)
                .map(|(w, p)| (w.clone(), p.clone()))
                .collect(),
        }
    }

    pub fn lowest_degree(&self) -> Option<usize> {
        self.terms.keys().map(Word::len).min()
    }

    pub fn max_degree(&self) -> Option<usize> {
        self.terms.keys().map(Word::len).max()
    }

    /// Same element with a different truncation (words beyond it dropped).
    pub fn with_truncation(&self, d: usize) -> TensorPoly {
        let mut out = Self::zero(self.n, d);
        for (w, p) in &self.terms {
            out.add_term(w.clone(), p.clone());
        }
        out
    }

    /// Scalar (empty-word) coefficient.
    pub fn scalar_part(&self) -> Poly {
        self.coeff(&Word::empty())
    }

    /// Constant-coefficient part, if every coefficient is a constant.
    pub fn to_const(&self) -> Option<ConstTensor> {
        let mut out = ConstTensor::zero();
        for (w, p) in &self.terms {
            if !p.is_constant() {
                return None;
            }
            out.add_term(w.clone(), p.constant_term());
        }
        Some(out)
    }
}

impl fmt::Display for TensorPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(w, p)| format!("({p})*{w}"))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    word: Vec<u8>,
    coeff: String,
}

#[derive(Serialize, Deserialize)]
struct TensorPolyJson {
    n: usize,
    d: usize,
    terms: Vec<TermJson>,
}

impl Serialize for TensorPoly {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TensorPolyJson {
            n: self.n,
            d: self.d,
            terms: self
                .terms
                .iter()
                .map(|(w, p)| TermJson {
                    word: w.0.clone(),
                    coeff: p.to_string(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TensorPoly {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let j = TensorPolyJson::deserialize(de)?;
        let mut out = TensorPoly::zero(j.n, j.d);
        for t in j.terms {
            if let Some(&bad) = t.word.iter().find(|&&a| a == 0 || a as usize > j.n) {
                return Err(D::Error::custom(SeriesError::LetterOutOfRange { letter: bad, n: j.n }));
            }
            if t.word.len() > j.d {
                return Err(D::Error::custom(SeriesError::DegreeTooHigh {
                    degree: t.word.len(),
                    d: j.d,
                }));
            }
            let p = Poly::parse(&t.coeff, j.n).map_err(D::Error::custom)?;
            out.add_term(Word(t.word), p);
        }
        Ok(out)
    }
}

/// Polynomial in commuting auxiliary variables `y1..yn` with coefficients in
/// `A = k[x1..xn]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YPoly {
    n: usize,
    terms: BTreeMap<Vec<u32>, Poly>,
}

impl YPoly {
    pub fn zero(n: usize) -> Self {
        YPoly {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Poly)> {
        self.terms.iter()
    }

    pub fn add_term(&mut self, exps: Vec<u32>, p: Poly) {
        assert_eq!(exps.len(), self.n, "y-exponent length");
        if p.is_zero() {
            return;
        }
        match self.terms.entry(exps) {
            Entry::Vacant(v) => {
                v.insert(p);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += &p;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn mul(&self, other: &YPoly) -> YPoly {
        let mut out = YPoly::zero(self.n);
        for (a, p) in &self.terms {
            for (b, q) in &other.terms {
                let e = a.iter().zip(b).map(|(x, y)| x + y).collect();
                out.add_term(e, p * q);
            }
        }
        out
    }

    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum()).max()
    }
}

impl fmt::Display for YPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(e, p)| {
                let ys: Vec<String> = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a > 0)
                    .map(|(i, &a)| if a == 1 { format!("y{}", i + 1) } else { format!("y{}^{}", i + 1, a) })
                    .collect();
                if ys.is_empty() {
                    format!("({p})")
                } else {
                    format!("({p})*{}", ys.join("*"))
                }
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// `[[P(e)]]`: each monomial `y^i` becomes the ordered word `e1^i1 ... en^in`.
pub fn ordered_substitution(p: &YPoly, d: usize) -> Result<TensorPoly, SeriesError> {
    let mut out = TensorPoly::zero(p.n, d);
    for (e, c) in &p.terms {
        let degree = e.iter().sum::<u32>() as usize;
        if degree > d {
            return Err(SeriesError::DegreeTooHigh { degree, d });
        }
        let mut letters = Vec::with_capacity(degree);
        for (i, &a) in e.iter().enumerate() {
            letters.extend(std::iter::repeat((i + 1) as u8).take(a as usize));
        }
        out.add_term(Word(letters), c.clone());
    }
    Ok(out)
}

/// `sum_lambda [[f_lambda(e)]] M_lambda`, keyed by the bracket part of
/// `M_lambda` (letters live in the y-polynomial).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PBWSeries {
    n: usize,
    d: usize,
    entries: BTreeMap<Vec<LyndonWord>, YPoly>,
}

impl PBWSeries {
    pub fn entries(&self) -> impl Iterator<Item = (&Vec<LyndonWord>, &YPoly)> {
        self.entries.iter()
    }

    pub fn get(&self, brackets: &[LyndonWord]) -> Option<&YPoly> {
        self.entries.get(brackets)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when only the empty bracket product carries letters, i.e. when
    /// every entry with a nonzero y-degree is absent.
    pub fn has_letter_part(&self) -> bool {
        self.entries
            .values()
            .any(|y| y.terms().any(|(e, _)| e.iter().any(|&a| a > 0)))
    }

    /// Inverse of [`pbw_decompose`].
    pub fn recompose(&self) -> TensorPoly {
        let mut out = TensorPoly::zero(self.n, self.d);
        for (brackets, y) in &self.entries {
            let mut m = TensorPoly::one(self.n, self.d);
            for b in brackets {
                m = m.mul(&TensorPoly::from_const(self.n, self.d, &bracketing(b)));
            }
            let f = ordered_substitution(y, self.d).expect("degree bounded by construction");
            out.add_assign(&f.mul(&m));
        }
        out
    }
}

/// Writes `a` uniquely as `sum [[f_lambda(e)]] M_lambda` with ordered letters.
pub fn pbw_decompose(a: &TensorPoly) -> PBWSeries {
    let basis = pbw_basis(a.n, a.d.max(1));
    let mut entries: BTreeMap<Vec<LyndonWord>, YPoly> = BTreeMap::new();
    for (w, p) in &a.terms {
        for (m, c) in basis.word_normal_form(w).iter() {
            let PBWMonomial {
                letter_exponents,
                brackets,
            } = m;
            entries
                .entry(brackets.clone())
                .or_insert_with(|| YPoly::zero(a.n))
                .add_term(letter_exponents.clone(), p.scale(c));
        }
    }
    entries.retain(|_, y| !y.is_zero());
    PBWSeries {
        n: a.n,
        d: a.d,
        entries,
    }
}

/// Single-term `YPoly`: `c * y^exps`.
pub fn ymonomial(n: usize, exps: Vec<u32>, c: Poly) -> YPoly {
    let mut y = YPoly::zero(n);
    y.add_term(exps, c);
    y
}
