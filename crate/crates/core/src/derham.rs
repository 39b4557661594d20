//! The graded algebra `Omega^* (x) T^{<=d}(Omega^1)` on a chart, with
//! `dx_i` in the exterior slot and the letter `e_i` in the tensor slot.
//!
//! Letters have homological degree 0, so a derivation of degree `s` only
//! picks up the sign `(-1)^{s |S|}` when it moves past `dx_S`.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::lyndon::{pbw_basis, ConstTensor, Word};
use crate::ncseries::TensorPoly;
use crate::ring::{rat, Poly, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DerhamError {
    #[error("shape mismatch: (n={0}, d={1}) vs (n={2}, d={3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("generator rule: {0}")]
    InconsistentRule(String),
    #[error("index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
}

/// Exterior monomial `dx_S`, stored as a bit set (bit `i-1` for `dx_i`) with
/// indices in increasing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Wedge(pub u16);

impl Wedge {
    pub const EMPTY: Wedge = Wedge(0);

    pub fn single(i: usize) -> Wedge {
        Wedge(1 << (i - 1))
    }

    pub fn from_indices(idx: &[usize]) -> Option<(Wedge, i32)> {
        let mut w = Wedge::EMPTY;
        let mut sign = 1;
        for &i in idx {
            let (next, s) = w.wedge(Wedge::single(i))?;
            w = next;
            sign *= s;
        }
        Some((w, sign))
    }

    pub fn degree(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn indices(self) -> Vec<usize> {
        (0..16).filter(|b| self.0 >> b & 1 == 1).map(|b| b + 1).collect()
    }

    /// `dx_S ^ dx_T = sign * dx_{S+T}`, or `None` if they overlap.
    pub fn wedge(self, other: Wedge) -> Option<(Wedge, i32)> {
        if self.0 & other.0 != 0 {
            return None;
        }
        // Count pairs (s in S, t in T) with s > t.
        let mut swaps = 0;
        for t in other.indices() {
            swaps += (self.0 >> t).count_ones();
        }
        Some((Wedge(self.0 | other.0), if swaps % 2 == 0 { 1 } else { -1 }))
    }
}

impl fmt::Display for Wedge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            return write!(f, "1");
        }
        let parts: Vec<String> = self.indices().iter().map(|i| format!("dx{i}")).collect();
        write!(f, "{}", parts.join("^"))
    }
}

fn sign_rat(s: i32) -> Rational {
    rat(s as i64)
}

/// Element of `Omega^* (x) T^{<=d}(Omega^1)` with polynomial coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DgElement {
    n: usize,
    d: usize,
    terms: BTreeMap<(Wedge, Word), Poly>,
}

impl DgElement {
    pub fn zero(n: usize, d: usize) -> Self {
        DgElement {
            n,
            d,
            terms: BTreeMap::new(),
        }
    }

    /// `dx_S (x) a`.
    pub fn form(wedge: Wedge, a: &TensorPoly) -> Self {
        let mut out = Self::zero(a.n(), a.d());
        for (w, p) in a.terms() {
            out.add_term(wedge, w.clone(), p.clone());
        }
        out
    }

    pub fn from_tensor(a: &TensorPoly) -> Self {
        Self::form(Wedge::EMPTY, a)
    }

    pub fn basis(n: usize, d: usize, wedge: Wedge, word: Word) -> Self {
        let mut out = Self::zero(n, d);
        out.add_term(wedge, word, Poly::one(n));
        out
    }

    /// `df = sum_i (d f / d x_i) dx_i (x) 1`.
    pub fn differential(f: &Poly, d: usize) -> Self {
        let n = f.nvars();
        let mut out = Self::zero(n, d);
        for i in 1..=n {
            out.add_term(Wedge::single(i), Word::empty(), f.partial(i).expect("index in range"));
        }
        out
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

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(Wedge, Word), &Poly)> {
        self.terms.iter()
    }

    pub fn coeff(&self, wedge: Wedge, w: &Word) -> Poly {
        self.terms
            .get(&(wedge, w.clone()))
            .cloned()
            .unwrap_or_else(|| Poly::zero(self.n))
    }

    pub fn add_term(&mut self, wedge: Wedge, w: Word, p: Poly) {
        if p.is_zero() || w.len() > self.d {
            return;
        }
        match self.terms.entry((wedge, w)) {
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

    fn check(&self, other: &DgElement) -> Result<(), DerhamError> {
        if self.n != other.n || self.d != other.d {
            Err(DerhamError::ShapeMismatch(self.n, self.d, other.n, other.d))
        } else {
            Ok(())
        }
    }

    pub fn add_assign(&mut self, other: &DgElement) {
        self.check(other).expect("DgElement shape");
        for ((s, w), p) in &other.terms {
            self.add_term(*s, w.clone(), p.clone());
        }
    }

    pub fn add(&self, other: &DgElement) -> DgElement {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn sub(&self, other: &DgElement) -> DgElement {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> DgElement {
        self.scale(&rat(-1))
    }

    pub fn scale(&self, c: &Rational) -> DgElement {
        let mut out = Self::zero(self.n, self.d);
        if c.is_zero() {
            return out;
        }
        for ((s, w), p) in &self.terms {
            out.add_term(*s, w.clone(), p.scale(c));
        }
        out
    }

    pub fn scale_poly(&self, f: &Poly) -> DgElement {
        let mut out = Self::zero(self.n, self.d);
        for ((s, w), p) in &self.terms {
            out.add_term(*s, w.clone(), p * f);
        }
        out
    }

    /// Graded product: `(dx_S (x) a)(dx_T (x) b) = (dx_S ^ dx_T) (x) ab`.
    pub fn mul(&self, other: &DgElement) -> DgElement {
        self.check(other).expect("DgElement shape");
        let mut out = Self::zero(self.n, self.d);
        for ((s, w1), p1) in &self.terms {
            for ((t, w2), p2) in &other.terms {
                if w1.len() + w2.len() > self.d {
                    continue;
                }
                if let Some((st, sign)) = s.wedge(*t) {
                    out.add_term(st, w1.concat(w2), (p1 * p2).scale(&sign_rat(sign)));
                }
            }
        }
        out
    }

    pub fn filter(&self, keep: impl Fn(Wedge, &Word) -> bool) -> DgElement {
        DgElement {
            n: self.n,
            d: self.d,
            terms: self
                .terms
                .iter()
                .filter(|((s, w), _)| keep(*s, w))
                .map(|(k, p)| (k.clone(), p.clone()))
                .collect(),
        }
    }

    pub fn tensor_component(&self, m: usize) -> DgElement {
        self.filter(|_, w| w.len() == m)
    }

    pub fn exterior_component(&self, q: usize) -> DgElement {
        self.filter(|s, _| s.degree() == q)
    }

    /// Drops tensor degrees above `k`.
    pub fn truncate_above(&self, k: usize) -> DgElement {
        self.filter(|_, w| w.len() <= k)
    }

    pub fn with_truncation(&self, d: usize) -> DgElement {
        let mut out = Self::zero(self.n, d);
        for ((s, w), p) in &self.terms {
            out.add_term(*s, w.clone(), p.clone());
        }
        out
    }

    pub fn lowest_tensor_degree(&self) -> Option<usize> {
        self.terms.keys().map(|(_, w)| w.len()).min()
    }

    pub fn max_tensor_degree(&self) -> Option<usize> {
        self.terms.keys().map(|(_, w)| w.len()).max()
    }

    /// The exterior-degree-0 part as a tensor series.
    pub fn to_tensor(&self) -> TensorPoly {
        let mut out = TensorPoly::zero(self.n, self.d);
        for ((s, w), p) in &self.terms {
            if *s == Wedge::EMPTY {
                out.add_term(w.clone(), p.clone());
            }
        }
        out
    }

    /// The coefficient of `dx_S` as a tensor series.
    pub fn slot(&self, wedge: Wedge) -> TensorPoly {
        let mut out = TensorPoly::zero(self.n, self.d);
        for ((s, w), p) in &self.terms {
            if *s == wedge {
                out.add_term(w.clone(), p.clone());
            }
        }
        out
    }

    /// Left multiplication of the tensor part: `dx_S (x) a b` for each term
    /// `dx_S (x) b`.
    pub fn left_tensor_mul(&self, a: &TensorPoly) -> DgElement {
        DgElement::from_tensor(a).mul(self)
    }

    /// Right multiplication of the tensor part.
    pub fn right_tensor_mul(&self, a: &TensorPoly) -> DgElement {
        self.mul(&DgElement::from_tensor(a))
    }
}

impl fmt::Display for DgElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|((s, w), p)| format!("({p})*{s}(x){w}"))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

#[derive(Serialize, Deserialize)]
struct DgTermJson {
    wedge: Vec<usize>,
    word: Vec<u8>,
    coeff: String,
}

#[derive(Serialize, Deserialize)]
struct DgElementJson {
    n: usize,
    d: usize,
    terms: Vec<DgTermJson>,
}

impl Serialize for DgElement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DgElementJson {
            n: self.n,
            d: self.d,
            terms: self
                .terms
                .iter()
                .map(|((wedge, w), p)| DgTermJson {
                    wedge: wedge.indices(),
                    word: w.0.clone(),
                    coeff: p.to_string(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DgElement {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let j = DgElementJson::deserialize(de)?;
        let mut out = DgElement::zero(j.n, j.d);
        for t in j.terms {
            if let Some(&bad) = t.wedge.iter().find(|&&i| i == 0 || i > j.n) {
                return Err(D::Error::custom(DerhamError::IndexOutOfRange { index: bad, n: j.n }));
            }
            if let Some(&bad) = t.word.iter().find(|&&a| a == 0 || a as usize > j.n) {
                return Err(D::Error::custom(DerhamError::IndexOutOfRange {
                    index: bad as usize,
                    n: j.n,
                }));
            }
            if t.word.len() > j.d {
                return Err(D::Error::custom(format!(
                    "word of length {} exceeds truncation {}",
                    t.word.len(),
                    j.d
                )));
            }
            let Some((wedge, sign)) = Wedge::from_indices(&t.wedge) else {
                continue;
            };
            let p = Poly::parse(&t.coeff, j.n).map_err(D::Error::custom)?;
            out.add_term(wedge, Word(t.word), p.scale(&sign_rat(sign)));
        }
        Ok(out)
    }
}

/// The differential `tau = D0`: the degree-one derivation that is zero on
/// forms and coefficients and sends `e_k` to `dx_k (x) 1`.
pub fn tau(a: &DgElement) -> DgElement {
    let mut out = DgElement::zero(a.n, a.d);
    for ((s, w), p) in &a.terms {
        let base = if s.degree() % 2 == 0 { 1 } else { -1 };
        for pos in 0..w.len() {
            let k = w.0[pos] as usize;
            let Some((st, sign)) = s.wedge(Wedge::single(k)) else {
                continue;
            };
            let mut rest = w.0.clone();
            rest.remove(pos);
            out.add_term(st, Word(rest), p.scale(&sign_rat(base * sign)));
        }
    }
    out
}

type ConstForm = Vec<(Wedge, Word, Rational)>;

static HOMOTOPY_CACHE: OnceLock<Mutex<HashMap<(usize, Wedge, Word), Arc<ConstForm>>>> =
    OnceLock::new();

/// Euler homotopy on a constant basis element `dx_S (x) w`.
///
/// The word is written as `sum c * sym(y^alpha) * M` (symmetrized letters,
/// ordered Lyndon brackets). On the polynomial form `y^alpha dy_S` the
/// contraction with the Euler field divided by `|alpha| + |S|` is applied; the
/// bracket factor `M` is inert.
fn homotopy_basis(n: usize, wedge: Wedge, w: &Word) -> Arc<ConstForm> {
    let cache = HOMOTOPY_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (n, wedge, w.clone());
    if let Some(v) = cache.lock().unwrap().get(&key) {
        return v.clone();
    }
    let mut acc: BTreeMap<(Wedge, Word), Rational> = BTreeMap::new();
    let q = wedge.degree();
    if q > 0 {
        let basis = pbw_basis(n, w.len().max(5));
        let idx = wedge.indices();
        for (mono, c) in basis.word_symmetric_form(w).iter() {
            let p = mono.letter_degree();
            let weight = c / rat((p + q) as i64);
            for (j, &sj) in idx.iter().enumerate() {
                let sign = if j % 2 == 0 { 1 } else { -1 };
                let mut m2 = mono.clone();
                m2.letter_exponents[sj - 1] += 1;
                let rest = Wedge(wedge.0 & !(1 << (sj - 1)));
                let c2 = &weight * sign_rat(sign);
                for (word, a) in m2.expand_symmetric().terms() {
                    let e = acc.entry((rest, word.clone())).or_insert_with(Rational::zero);
                    *e += a * &c2;
                }
            }
        }
    }
    let form: ConstForm = acc
        .into_iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|((s, w), c)| (s, w, c))
        .collect();
    let form = Arc::new(form);
    cache.lock().unwrap().insert(key, form.clone());
    form
}

/// The GL(V)-equivariant homotopy `h` with `h tau + tau h = id` on exterior
/// degree `>= 1`. It is `A`-linear, raises tensor degree by one and lowers
/// exterior degree by one; it vanishes on exterior degree 0.
pub fn homotopy_h(a: &DgElement) -> DgElement {
    let mut out = DgElement::zero(a.n, a.d);
    for ((s, w), p) in &a.terms {
        if w.len() + 1 > a.d || s.degree() == 0 {
            continue;
        }
        for (s2, w2, c) in homotopy_basis(a.n, *s, w).iter() {
            out.add_term(*s2, w2.clone(), p.scale(c));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientRule {
    /// `f -> df`.
    DeRham,
    /// Coefficients are constants for the derivation.
    Zero,
}

/// A derivation given on generators: its value on each letter `e_k`, and on
/// coefficients either `d` or zero. Forms `dx_i` are always sent to zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorRule {
    shift: usize,
    letters: Vec<DgElement>,
    coefficients: CoefficientRule,
}

impl GeneratorRule {
    pub fn new(
        shift: usize,
        letters: Vec<DgElement>,
        coefficients: CoefficientRule,
    ) -> Result<Self, DerhamError> {
        if coefficients == CoefficientRule::DeRham && shift != 1 {
            return Err(DerhamError::InconsistentRule(format!(
                "de Rham coefficients need shift 1, got {shift}"
            )));
        }
        let Some(first) = letters.first() else {
            return Err(DerhamError::InconsistentRule("no letters".into()));
        };
        let (n, d) = (first.n, first.d);
        if letters.len() != n {
            return Err(DerhamError::InconsistentRule(format!(
                "{} letter images for {n} letters",
                letters.len()
            )));
        }
        for (k, v) in letters.iter().enumerate() {
            if (v.n, v.d) != (n, d) {
                return Err(DerhamError::ShapeMismatch(n, d, v.n, v.d));
            }
            if let Some(((s, _), _)) = v.terms.iter().find(|((s, _), _)| s.degree() != shift) {
                return Err(DerhamError::InconsistentRule(format!(
                    "image of e{} has exterior degree {}, expected {shift}",
                    k + 1,
                    s.degree()
                )));
            }
        }
        Ok(GeneratorRule {
            shift,
            letters,
            coefficients,
        })
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn letter_image(&self, k: usize) -> &DgElement {
        &self.letters[k - 1]
    }

    pub fn coefficients(&self) -> CoefficientRule {
        self.coefficients
    }

    /// Applies the Leibniz extension of the rule.
    pub fn apply(&self, a: &DgElement) -> DgElement {
        self.apply_in(a, 0, a.d)
    }

    /// The part of `apply(a)` in tensor degrees `lo..=hi`, computing nothing else.
    pub fn apply_in(&self, a: &DgElement, lo: usize, hi: usize) -> DgElement {
        let hi = hi.min(a.d);
        let mut out = DgElement::zero(a.n, a.d);
        for ((s, w), p) in &a.terms {
            if self.coefficients == CoefficientRule::DeRham && (lo..=hi).contains(&w.len()) {
                for i in 1..=a.n {
                    let dp = p.partial(i).expect("index in range");
                    if dp.is_zero() {
                        continue;
                    }
                    if let Some((st, sign)) = Wedge::single(i).wedge(*s) {
                        out.add_term(st, w.clone(), dp.scale(&sign_rat(sign)));
                    }
                }
            }
            let pass = if (self.shift * s.degree()) % 2 == 0 { 1 } else { -1 };
            for pos in 0..w.len() {
                let image = &self.letters[w.0[pos] as usize - 1];
                for ((t, u), g) in &image.terms {
                    if !(lo..=hi).contains(&(w.len() - 1 + u.len())) {
                        continue;
                    }
                    let Some((st, sign)) = s.wedge(*t) else {
                        continue;
                    };
                    let mut letters = Vec::with_capacity(w.len() - 1 + u.len());
                    letters.extend_from_slice(&w.0[..pos]);
                    letters.extend_from_slice(&u.0);
                    letters.extend_from_slice(&w.0[pos + 1..]);
                    let c = p * g;
                    out.add_term(st, Word(letters), if pass * sign < 0 { -&c } else { c });
                }
            }
        }
        out
    }
}

/// Leibniz extension of `rule` applied to `a`.
pub fn extend_derivation(rule: &GeneratorRule, a: &DgElement) -> Result<DgElement, DerhamError> {
    let v = &rule.letters[0];
    if (v.n, v.d) != (a.n, a.d) {
        return Err(DerhamError::ShapeMismatch(v.n, v.d, a.n, a.d));
    }
    Ok(rule.apply(a))
}

/// The rule of `tau` itself (`e_k -> dx_k`, coefficients inert).
pub fn tau_rule(n: usize, d: usize) -> GeneratorRule {
    let letters = (1..=n)
        .map(|k| DgElement::basis(n, d, Wedge::single(k), Word::empty()))
        .collect();
    GeneratorRule::new(1, letters, CoefficientRule::Zero).expect("tau rule is consistent")
}

/// All constant basis elements `dx_S (x) w` with `|S| = q` and `|w| = m`.
pub fn basis_elements(n: usize, d: usize, q: usize, m: usize) -> Vec<DgElement> {
    let mut out = Vec::new();
    for mask in 0u16..(1 << n) {
        if Wedge(mask).degree() != q {
            continue;
        }
        for w in Word::all_of_length(n, m) {
            out.push(DgElement::basis(n, d, Wedge(mask), w));
        }
    }
    out
}

fn tau_matrix(n: usize, m: usize) -> (Vec<Word>, linalg::Matrix) {
    let cols = Word::all_of_length(n, m);
    let rows: Vec<(Wedge, Word)> = (1..=n)
        .flat_map(|i| {
            Word::all_of_length(n, m - 1)
                .into_iter()
                .map(move |w| (Wedge::single(i), w))
        })
        .collect();
    let row_index: HashMap<(Wedge, Word), usize> =
        rows.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
    let mut matrix = vec![vec![Rational::zero(); cols.len()]; rows.len()];
    for (j, w) in cols.iter().enumerate() {
        let image = tau(&DgElement::basis(n, m, Wedge::EMPTY, w.clone()));
        for ((s, u), p) in image.terms() {
            matrix[row_index[&(*s, u.clone())]][j] = p.constant_term();
        }
    }
    (cols, matrix)
}

/// Dimension of the kernel of `tau` on constant elements of exterior degree 0
/// and tensor degree `m`, by exact rank computation.
pub fn tau_kernel_dimension(n: usize, m: usize) -> usize {
    if m == 0 {
        return 1;
    }
    let (cols, matrix) = tau_matrix(n, m);
    cols.len() - linalg::rank(&matrix)
}

/// A basis of that kernel as constant tensors.
pub fn tau_kernel_basis(n: usize, m: usize) -> Vec<ConstTensor> {
    if m == 0 {
        return vec![ConstTensor::word(Word::empty())];
    }
    let (cols, matrix) = tau_matrix(n, m);
    linalg::nullspace(&matrix, cols.len())
        .into_iter()
        .map(|v| {
            let mut t = ConstTensor::zero();
            for (w, c) in cols.iter().zip(v) {
                t.add_term(w.clone(), c);
            }
            t
        })
        .collect()
}

/// `sum_{m} dim U(Lie_{>=2}(V))_m t^m` for `dim V = n`, through degree `max`,
/// from the product formula over Lyndon words of length at least 2.
pub fn enveloping_dimensions(n: usize, max: usize) -> Vec<usize> {
    let mut series = vec![0usize; max + 1];
    series[0] = 1;
    if max == 0 {
        return series;
    }
    for l in crate::lyndon::enumerate_lyndon(n, max) {
        let len = l.len();
        if len < 2 {
            continue;
        }
        // Multiply by 1 / (1 - t^len).
        for k in len..=max {
            series[k] += series[k - len];
        }
    }
    series
}

/// Constant-coefficient element helper for tests and callers: `c * dx_S (x) w`.
pub fn const_term(n: usize, d: usize, wedge: &[usize], w: &[u8], c: Rational) -> DgElement {
    let (s, sign) = Wedge::from_indices(wedge).expect("distinct indices");
    let mut out = DgElement::zero(n, d);
    out.add_term(s, Word(w.to_vec()), Poly::constant(n, c * sign_rat(sign)));
    out
}
