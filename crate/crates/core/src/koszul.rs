//! Minimal A-infinity algebras at a point, their bar-dual differential and
//! relation ideal, and the homological perturbation series.
//!
//! Basis elements of `E` are `(degree, index)` pairs; `E^0` is spanned by the
//! strict unit `(0, 0)`. Products `m_k` have degree `2 - k`. Unit rules are
//! implicit: `m_2(1, a) = m_2(a, 1) = a` and `m_k` vanishes on tuples
//! containing the unit for `k >= 3`.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::lyndon::{ConstTensor, Word};
use crate::ncseries::TensorPoly;
use crate::ring::{format_rational, parse_rational, rat, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KoszulError {
    #[error("E^0 must be one-dimensional, got dims {0:?}")]
    BadUnit(Vec<usize>),
    #[error("product arity {0} is not allowed (need k >= 2)")]
    BadArity(usize),
    #[error("basis element ({degree}, {index}) is out of range")]
    OutOfRange { degree: usize, index: usize },
    #[error("m_{k} entry {entry} violates the degree law |out| = sum|in| + 2 - k")]
    DegreeLaw { k: usize, entry: String },
    #[error("m_{k} entry {entry} contradicts strict unitality")]
    Unit { k: usize, entry: String },
    #[error("bad rational {0:?}")]
    BadCoefficient(String),
    #[error("bad degree {0:?}")]
    BadDegree(String),
    #[error("A-infinity identity of arity {arity} fails on {input}")]
    IdentityFails { arity: usize, input: String },
    #[error("retraction side condition fails: {0}")]
    SideCondition(&'static str),
    #[error("matrix shapes do not fit the retraction")]
    ShapeMismatch,
    #[error("perturbation does not strictly raise the filtration at ({row}, {col})")]
    NotFiltrationRaising { row: usize, col: usize },
    #[error("homotopy lowers the filtration at ({row}, {col})")]
    HomotopyLowers { row: usize, col: usize },
    #[error("perturbation series does not terminate within {0} terms")]
    Divergent(usize),
}

/// A basis element `(degree, index)` of `E`, 0-based index within the degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Basis {
    pub degree: usize,
    pub index: usize,
}

impl Basis {
    pub const UNIT: Basis = Basis { degree: 0, index: 0 };

    pub fn new(degree: usize, index: usize) -> Self {
        Basis { degree, index }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.degree, self.index)
    }
}

impl Serialize for Basis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.degree.to_string(), self.index).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Basis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (deg, index): (String, usize) = Deserialize::deserialize(d)?;
        let degree = deg
            .trim()
            .parse()
            .map_err(|_| serde::de::Error::custom(KoszulError::BadDegree(deg)))?;
        Ok(Basis { degree, index })
    }
}

fn tuple_string(t: &[Basis]) -> String {
    t.iter().map(Basis::to_string).collect::<Vec<_>>().join("|")
}

type Vector = BTreeMap<Basis, Rational>;

fn add_to(v: &mut Vector, b: Basis, c: Rational) {
    if c.is_zero() {
        return;
    }
    let e = v.entry(b).or_insert_with(Rational::zero);
    *e += c;
    if e.is_zero() {
        v.remove(&b);
    }
}

/// One sparse entry of an `m_k` table, in JSON form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductEntry {
    #[serde(rename = "in")]
    pub inputs: Vec<Basis>,
    pub out: Basis,
    pub coeff: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductTable {
    pub k: usize,
    pub entries: Vec<ProductEntry>,
}

/// JSON form: `{"dims":[1,2,1],"products":[{"k":2,"entries":[...]}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AInfinitySpec {
    pub dims: Vec<usize>,
    #[serde(default)]
    pub products: Vec<ProductTable>,
}

/// A minimal strictly unital A-infinity algebra with exact rational tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinimalAInfinity {
    dims: Vec<usize>,
    /// Non-unit inputs only: `k -> inputs -> output vector`.
    tables: BTreeMap<usize, BTreeMap<Vec<Basis>, Vector>>,
}

impl MinimalAInfinity {
    pub fn new(dims: Vec<usize>) -> Result<Self, KoszulError> {
        if dims.first() != Some(&1) {
            return Err(KoszulError::BadUnit(dims));
        }
        Ok(MinimalAInfinity {
            dims,
            tables: BTreeMap::new(),
        })
    }

    pub fn from_spec(spec: &AInfinitySpec) -> Result<Self, KoszulError> {
        let mut a = MinimalAInfinity::new(spec.dims.clone())?;
        for table in &spec.products {
            if table.k < 2 {
                return Err(KoszulError::BadArity(table.k));
            }
            for e in &table.entries {
                if e.inputs.len() != table.k {
                    return Err(KoszulError::BadArity(e.inputs.len()));
                }
                let c = parse_rational(&e.coeff)
                    .map_err(|_| KoszulError::BadCoefficient(e.coeff.clone()))?;
                a.set(&e.inputs, e.out, c)?;
            }
        }
        Ok(a)
    }

    pub fn to_spec(&self) -> AInfinitySpec {
        let products = self
            .tables
            .iter()
            .map(|(&k, t)| ProductTable {
                k,
                entries: t
                    .iter()
                    .flat_map(|(inputs, out)| {
                        out.iter().map(move |(b, c)| ProductEntry {
                            inputs: inputs.clone(),
                            out: *b,
                            coeff: format_rational(c),
                        })
                    })
                    .collect(),
            })
            .collect();
        AInfinitySpec {
            dims: self.dims.clone(),
            products,
        }
    }

    fn check(&self, b: Basis) -> Result<(), KoszulError> {
        if self.dims.get(b.degree).is_some_and(|&n| b.index < n) {
            Ok(())
        } else {
            Err(KoszulError::OutOfRange {
                degree: b.degree,
                index: b.index,
            })
        }
    }

    /// Adds `c * out` to `m_k(inputs)`, `k = inputs.len()`.
    pub fn set(&mut self, inputs: &[Basis], out: Basis, c: Rational) -> Result<(), KoszulError> {
        let k = inputs.len();
        if k < 2 {
            return Err(KoszulError::BadArity(k));
        }
        for &b in inputs.iter().chain(std::iter::once(&out)) {
            self.check(b)?;
        }
        let entry = format!("{} -> {}", tuple_string(inputs), out);
        let total: usize = inputs.iter().map(|b| b.degree).sum();
        if out.degree + k != total + 2 {
            return Err(KoszulError::DegreeLaw { k, entry });
        }
        if inputs.contains(&Basis::UNIT) {
            // Unit entries are implied; only consistent restatements are accepted.
            let implied = self.product(inputs);
            if implied.get(&out) != Some(&c) {
                return Err(KoszulError::Unit { k, entry });
            }
            return Ok(());
        }
        let slot = self
            .tables
            .entry(k)
            .or_default()
            .entry(inputs.to_vec())
            .or_default();
        add_to(slot, out, c);
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn k_max(&self) -> usize {
        self.tables.keys().next_back().copied().unwrap_or(2)
    }

    pub fn basis(&self) -> Vec<Basis> {
        self.dims
            .iter()
            .enumerate()
            .flat_map(|(p, &n)| (0..n).map(move |i| Basis::new(p, i)))
            .collect()
    }

    /// `m_k(inputs)` including the implicit unit rules.
    pub fn product(&self, inputs: &[Basis]) -> Vector {
        let k = inputs.len();
        let mut out = Vector::new();
        if inputs.contains(&Basis::UNIT) {
            if k == 2 {
                let other = if inputs[0] == Basis::UNIT { inputs[1] } else { inputs[0] };
                out.insert(other, Rational::one());
            }
            return out;
        }
        if let Some(v) = self.tables.get(&k).and_then(|t| t.get(inputs)) {
            out = v.clone();
        }
        out
    }

    /// The left side of the arity-`n` identity
    /// `sum (-1)^{i + l j} m_{i+1+j}(1^i (x) m_l (x) 1^j) = 0` on a basis tuple,
    /// with the Koszul sign `(-1)^{l (|a_1| + ... + |a_i|)}`.
    pub fn identity_value(&self, a: &[Basis]) -> Vector {
        let n = a.len();
        let mut total = Vector::new();
        for l in 2..n {
            for i in 0..=n - l {
                let j = n - l - i;
                let inner = self.product(&a[i..i + l]);
                if inner.is_empty() {
                    continue;
                }
                let pre: usize = a[..i].iter().map(|b| b.degree).sum();
                let odd = (i + l * j + l * pre) % 2 == 1;
                let mut tuple: Vec<Basis> = a[..i].to_vec();
                tuple.push(Basis::UNIT);
                tuple.extend_from_slice(&a[i + l..]);
                for (c, x) in inner {
                    tuple[i] = c;
                    for (b, y) in self.product(&tuple) {
                        let v = &x * &y;
                        add_to(&mut total, b, if odd { -v } else { v });
                    }
                }
            }
        }
        total
    }

    /// Checks every identity of arity `3 ..= n_max` on all basis tuples.
    pub fn validate(&self, n_max: usize) -> AInfinityReport {
        let basis = self.basis();
        let checks = (3..=n_max)
            .map(|arity| {
                let tuples = all_tuples(basis.len(), arity);
                let failures: Vec<Vec<Basis>> = tuples
                    .par_iter()
                    .filter_map(|idx| {
                        let t: Vec<Basis> = idx.iter().map(|&i| basis[i]).collect();
                        (!self.identity_value(&t).is_empty()).then_some(t)
                    })
                    .collect();
                IdentityCheck {
                    arity,
                    tuples: tuples.len(),
                    failures: failures.len(),
                    first_failure: failures.first().map(|t| tuple_string(t)),
                }
            })
            .collect();
        AInfinityReport { n_max, checks }
    }

    /// Default arity bound: every identity that can involve two tabulated products.
    pub fn default_n_max(&self) -> usize {
        (2 * self.k_max() - 1).max(3)
    }

    /// Validates through `n_max` and returns the checked algebra.
    pub fn validated(self, n_max: usize) -> Result<ValidatedAInfinity, KoszulError> {
        let report = self.validate(n_max);
        if let Some(c) = report.checks.iter().find(|c| c.failures > 0) {
            return Err(KoszulError::IdentityFails {
                arity: c.arity,
                input: c.first_failure.clone().unwrap_or_default(),
            });
        }
        Ok(ValidatedAInfinity(self))
    }
}

fn all_tuples(base: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..base).map(move |i| {
                    let mut u = t.clone();
                    u.push(i);
                    u
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentityCheck {
    pub arity: usize,
    pub tuples: usize,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AInfinityReport {
    pub n_max: usize,
    pub checks: Vec<IdentityCheck>,
}

impl AInfinityReport {
    pub fn valid(&self) -> bool {
        self.checks.iter().all(|c| c.failures == 0)
    }
}

/// An algebra whose identities have been checked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedAInfinity(MinimalAInfinity);

impl ValidatedAInfinity {
    pub fn algebra(&self) -> &MinimalAInfinity {
        &self.0
    }
}

/// The dual generators: one letter per basis element of `E_+`, numbered from 1
/// with the `E^1` letters first. Letter `g` has degree `1 - |a_g|`.
#[derive(Debug, Clone)]
pub struct BarDual {
    letters: Vec<Basis>,
    index: BTreeMap<Basis, u8>,
    d: usize,
    images: Vec<ConstTensor>,
}

impl BarDual {
    /// `d_m(xi_c) = sum_k sum_a (-1)^{sum_q (k-q)|a_q|} xi_c(m_k(a)) xi_{a_1}...xi_{a_k}`
    /// over tuples `a` in `E_+`, truncated to words of length `<= d`.
    pub fn new(a: &ValidatedAInfinity, d: usize) -> Self {
        let alg = a.algebra();
        let letters: Vec<Basis> = alg
            .basis()
            .into_iter()
            .filter(|b| b.degree > 0)
            .collect();
        assert!(letters.len() < u8::MAX as usize, "too many dual generators");
        let index: BTreeMap<Basis, u8> = letters
            .iter()
            .enumerate()
            .map(|(i, b)| (*b, (i + 1) as u8))
            .collect();
        let mut images = vec![ConstTensor::zero(); letters.len()];
        for (&k, table) in &alg.tables {
            if k > d {
                continue;
            }
            for (inputs, out) in table {
                let sign: usize = inputs
                    .iter()
                    .enumerate()
                    .map(|(q, b)| (k - 1 - q) * b.degree)
                    .sum();
                let word = Word(inputs.iter().map(|b| index[b]).collect());
                for (c, x) in out {
                    let g = index[c] as usize - 1;
                    let v = if sign % 2 == 1 { -x.clone() } else { x.clone() };
                    images[g].add_term(word.clone(), v);
                }
            }
        }
        BarDual {
            letters,
            index,
            d,
            images,
        }
    }

    pub fn letters(&self) -> &[Basis] {
        &self.letters
    }

    pub fn letter_of(&self, b: Basis) -> Option<u8> {
        self.index.get(&b).copied()
    }

    /// `d_m` on the dual generator of `b`.
    pub fn image(&self, b: Basis) -> &ConstTensor {
        &self.images[self.index[&b] as usize - 1]
    }

    fn letter_degree(&self, g: u8) -> i64 {
        1 - self.letters[g as usize - 1].degree as i64
    }

    /// `D_m` extended as a derivation of degree one with Koszul signs.
    pub fn apply(&self, x: &ConstTensor) -> ConstTensor {
        let mut out = ConstTensor::zero();
        for (w, c) in x.terms() {
            let mut prefix_degree = 0i64;
            for (q, &g) in w.0.iter().enumerate() {
                let img = &self.images[g as usize - 1];
                let c = if prefix_degree.rem_euclid(2) == 1 { -c.clone() } else { c.clone() };
                for (u, y) in img.terms() {
                    let len = w.len() - 1 + u.len();
                    if len > self.d {
                        continue;
                    }
                    let mut word = w.0[..q].to_vec();
                    word.extend_from_slice(&u.0);
                    word.extend_from_slice(&w.0[q + 1..]);
                    out.add_term(Word(word), &c * y);
                }
                prefix_degree += self.letter_degree(g);
            }
        }
        out
    }

    /// Whether `D_m^2` vanishes on every generator (hence everywhere).
    pub fn square_zero(&self) -> bool {
        (1..=self.letters.len() as u8).all(|g| {
            let x = ConstTensor::word(Word::letter(g));
            self.apply(&self.apply(&x)).terms().next().is_none()
        })
    }
}

/// The degree-0 presentation `O^nc / <R>`: letters dual to `E^1`, relations
/// `R = d_m((E^2)^vee)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KoszulDualPresentation {
    pub generators: usize,
    pub truncation: usize,
    pub relations: Vec<TensorPoly>,
    /// Rank of the relations; equals `dim E^2` exactly when `d_m` is injective there.
    pub relation_rank: usize,
    pub injective: bool,
    /// Dimensions of the associated graded quotient in degrees `0..=d`.
    pub quotient_dims: Vec<usize>,
}

/// Relation ideal and quotient dimensions at constant coefficients.
pub fn relation_ideal(a: &ValidatedAInfinity, d: usize) -> KoszulDualPresentation {
    let alg = a.algebra();
    let n = alg.dims().get(1).copied().unwrap_or(0);
    let dual = BarDual::new(a, d);
    let e2 = alg.dims().get(2).copied().unwrap_or(0);
    let relations: Vec<ConstTensor> = (0..e2)
        .map(|i| dual.image(Basis::new(2, i)).clone())
        .collect();
    let relation_rank = span_rank(&relations, n, d);
    KoszulDualPresentation {
        generators: n,
        truncation: d,
        relations: relations.iter().map(|r| TensorPoly::from_const(n.max(1), d, r)).collect(),
        relation_rank,
        injective: relation_rank == e2,
        quotient_dims: quotient_dimensions(n, &relations, d),
    }
}

fn words_up_to(n: usize, d: usize) -> Vec<Word> {
    (0..=d).flat_map(|m| Word::all_of_length(n, m)).collect()
}

fn span_rank(xs: &[ConstTensor], n: usize, d: usize) -> usize {
    let cols = words_up_to(n, d);
    let pos: BTreeMap<&Word, usize> = cols.iter().enumerate().map(|(i, w)| (w, i)).collect();
    let m: Matrix = xs
        .iter()
        .map(|x| {
            let mut row = vec![Rational::zero(); cols.len()];
            for (w, c) in x.terms() {
                if let Some(&j) = pos.get(w) {
                    row[j] = c.clone();
                }
            }
            row
        })
        .collect();
    linalg::rank(&m)
}

/// Dimensions of `gr T(V) / <R>` in degrees `0..=d`, where `<R>` is spanned by
/// all `u r v` truncated above `d` and the grading is by lowest degree.
pub fn quotient_dimensions(n: usize, relations: &[ConstTensor], d: usize) -> Vec<usize> {
    let cols = words_up_to(n, d);
    let pos: BTreeMap<&Word, usize> = cols.iter().enumerate().map(|(i, w)| (w, i)).collect();
    let rows: Vec<Vec<Rational>> = relations
        .par_iter()
        .flat_map_iter(|r| {
            let low = r.terms().map(|(w, _)| w.len()).min().unwrap_or(d + 1);
            let mut rows = Vec::new();
            for extra in 0..=d.saturating_sub(low) {
                for split in 0..=extra {
                    for u in Word::all_of_length(n, split) {
                        for v in Word::all_of_length(n, extra - split) {
                            let mut row = vec![Rational::zero(); cols.len()];
                            for (w, c) in r.terms() {
                                if w.len() + extra > d {
                                    continue;
                                }
                                row[pos[&u.concat(w).concat(&v)]] += c;
                            }
                            rows.push(row);
                        }
                    }
                }
            }
            rows
        })
        .collect();
    let mut m = rows;
    let pivots = linalg::rref(&mut m);
    // Columns run by increasing degree, so a pivot in degree m marks a
    // leading term of degree m.
    (0..=d)
        .map(|deg| {
            let total = n.pow(deg as u32);
            total - pivots.iter().filter(|&&p| cols[p].len() == deg).count()
        })
        .collect()
}

/// A filtered strong deformation retraction of a big complex onto a small one
/// with `p i = id` and `i p = id + d h + h d`. Matrices act on column vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retraction {
    pub big_d: Matrix,
    pub small_d: Matrix,
    pub inclusion: Matrix,
    pub projection: Matrix,
    pub homotopy: Matrix,
    /// Filtration index of each big basis vector.
    pub filtration: Vec<usize>,
}

fn mmul(a: &Matrix, b: &Matrix) -> Matrix {
    linalg::mat_mul(a, b)
}

fn madd(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn msub(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x - y).collect())
        .collect()
}

fn is_zero(a: &Matrix) -> bool {
    a.iter().flatten().all(Zero::is_zero)
}

fn zeros(r: usize, c: usize) -> Matrix {
    vec![vec![Rational::zero(); c]; r]
}

impl Retraction {
    pub fn new(
        big_d: Matrix,
        small_d: Matrix,
        inclusion: Matrix,
        projection: Matrix,
        homotopy: Matrix,
        filtration: Vec<usize>,
    ) -> Result<Self, KoszulError> {
        let big = big_d.len();
        let small = small_d.len();
        let shape_ok = big_d.iter().all(|r| r.len() == big)
            && small_d.iter().all(|r| r.len() == small)
            && inclusion.len() == big
            && inclusion.iter().all(|r| r.len() == small)
            && projection.len() == small
            && projection.iter().all(|r| r.len() == big)
            && homotopy.len() == big
            && homotopy.iter().all(|r| r.len() == big)
            && filtration.len() == big;
        if !shape_ok {
            return Err(KoszulError::ShapeMismatch);
        }
        let r = Retraction {
            big_d,
            small_d,
            inclusion,
            projection,
            homotopy,
            filtration,
        };
        r.check()?;
        Ok(r)
    }

    fn check(&self) -> Result<(), KoszulError> {
        let (d, i, p, h) = (&self.big_d, &self.inclusion, &self.projection, &self.homotopy);
        if !is_zero(&mmul(d, d)) || !is_zero(&mmul(&self.small_d, &self.small_d)) {
            return Err(KoszulError::SideCondition("differentials square to zero"));
        }
        if mmul(p, i) != linalg::identity(self.small_d.len()) {
            return Err(KoszulError::SideCondition("p i = id"));
        }
        let rhs = madd(
            &linalg::identity(d.len()),
            &madd(&mmul(d, h), &mmul(h, d)),
        );
        if mmul(i, p) != rhs {
            return Err(KoszulError::SideCondition("i p = id + d h + h d"));
        }
        if mmul(d, i) != mmul(i, &self.small_d) || mmul(p, d) != mmul(&self.small_d, p) {
            return Err(KoszulError::SideCondition("i and p are chain maps"));
        }
        for (row, r) in h.iter().enumerate() {
            for (col, x) in r.iter().enumerate() {
                if !x.is_zero() && self.filtration[row] < self.filtration[col] {
                    return Err(KoszulError::HomotopyLowers { row, col });
                }
            }
        }
        Ok(())
    }

    pub fn big_dim(&self) -> usize {
        self.big_d.len()
    }

    pub fn small_dim(&self) -> usize {
        self.small_d.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perturbed {
    pub small_d: Matrix,
    pub inclusion: Matrix,
    /// Number of nonzero terms `(h delta)^k i` used.
    pub terms: usize,
}

impl Perturbed {
    /// `d'^2 = 0` and `(d + delta) i' = i' d'`.
    pub fn verify(&self, r: &Retraction, delta: &Matrix) -> bool {
        let total = madd(&r.big_d, delta);
        is_zero(&mmul(&self.small_d, &self.small_d))
            && mmul(&total, &self.inclusion) == mmul(&self.inclusion, &self.small_d)
    }
}

/// `d' = d_small + sum_k p delta (h delta)^k i` and `i' = sum_k (h delta)^k i`,
/// summed while `(h delta)^k i` is nonzero, for at most `d + 1` terms.
pub fn perturbation_series(r: &Retraction, delta: &Matrix, d: usize) -> Result<Perturbed, KoszulError> {
    let big = r.big_dim();
    if delta.len() != big || delta.iter().any(|row| row.len() != big) {
        return Err(KoszulError::ShapeMismatch);
    }
    for (row, x) in delta.iter().enumerate() {
        for (col, c) in x.iter().enumerate() {
            if !c.is_zero() && r.filtration[row] <= r.filtration[col] {
                return Err(KoszulError::NotFiltrationRaising { row, col });
            }
        }
    }
    let h_delta = mmul(&r.homotopy, delta);
    let mut term = r.inclusion.clone();
    let mut inclusion = zeros(big, r.small_dim());
    let mut terms = 0;
    while !is_zero(&term) {
        if terms > d {
            return Err(KoszulError::Divergent(d + 1));
        }
        inclusion = madd(&inclusion, &term);
        term = mmul(&h_delta, &term);
        terms += 1;
    }
    let small_d = madd(&r.small_d, &mmul(&mmul(&r.projection, delta), &inclusion));
    Ok(Perturbed {
        small_d,
        inclusion,
        terms,
    })
}

/// Builds the perturbation `g d g^{-1} - d` of a retraction's big differential
/// for a unipotent `g = id + n`, which strictly raises the filtration when `n` does.
pub fn conjugation_perturbation(r: &Retraction, n: &Matrix) -> Option<Matrix> {
    let g = madd(&linalg::identity(r.big_dim()), n);
    let inv = linalg::inverse(&g)?;
    Some(msub(&mmul(&mmul(&g, &r.big_d), &inv), &r.big_d))
}

/// Scalar helper used by callers building toy complexes.
pub fn scalar_matrix(rows: &[&[i64]]) -> Matrix {
    rows.iter().map(|r| r.iter().map(|&x| rat(x)).collect()).collect()
}
