//! Free Lie algebra combinatorics: words, Lyndon words with their standard
//! bracketing, and PBW normal forms in the tensor algebra `k<e1..en>`.
//!
//! The PBW basis is built from Lyndon words ordered by (length, lex); the
//! single letters come first. A monomial is a nondecreasing product of such
//! factors. Normal forms are computed by straightening: an adjacent pair of
//! factors `b_i b_j` with `b_i > b_j` is rewritten as `b_j b_i + [b_i, b_j]`,
//! and the commutator is re-expanded in the Lyndon basis.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_traits::{One, Zero};

use crate::ring::{rat, Rational};

/// A word in the letters `1..=n`. The empty word is the unit of `T(V)`.
/// Ordered by length first, then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Word(pub Vec<u8>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn letter(i: u8) -> Self {
        Word(vec![i])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = Vec::with_capacity(self.0.len() + other.0.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        Word(v)
    }

    /// All words of length exactly `m` over `n` letters, in lex order.
    pub fn all_of_length(n: usize, m: usize) -> Vec<Word> {
        let mut out = vec![Word::empty()];
        for _ in 0..m {
            let mut next = Vec::with_capacity(out.len() * n);
            for w in &out {
                for a in 1..=n as u8 {
                    let mut v = w.0.clone();
                    v.push(a);
                    next.push(Word(v));
                }
            }
            out = next;
        }
        out
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self.0.iter().map(|a| format!("e{a}")).collect();
        write!(f, "{}", parts.join("*"))
    }
}

/// Constant-coefficient element of `T(V)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConstTensor(BTreeMap<Word, Rational>);

impl ConstTensor {
    pub fn zero() -> Self {
        ConstTensor(BTreeMap::new())
    }

    pub fn word(w: Word) -> Self {
        Self::term(w, Rational::one())
    }

    pub fn term(w: Word, c: Rational) -> Self {
        let mut t = Self::zero();
        t.add_term(w, c);
        t
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Rational)> {
        self.0.iter()
    }

    pub fn coeff(&self, w: &Word) -> Rational {
        self.0.get(w).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn add_term(&mut self, w: Word, c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.0.entry(w) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn add_scaled(&mut self, other: &ConstTensor, c: &Rational) {
        for (w, a) in &other.0 {
            self.add_term(w.clone(), a * c);
        }
    }

    pub fn scale(&self, c: &Rational) -> ConstTensor {
        let mut out = ConstTensor::zero();
        out.add_scaled(self, c);
        out
    }

    /// Concatenation product.
    pub fn mul(&self, other: &ConstTensor) -> ConstTensor {
        let mut out = ConstTensor::zero();
        for (w1, a) in &self.0 {
            for (w2, b) in &other.0 {
                out.add_term(w1.concat(w2), a * b);
            }
        }
        out
    }

    pub fn commutator(&self, other: &ConstTensor) -> ConstTensor {
        let mut out = self.mul(other);
        out.add_scaled(&other.mul(self), &rat(-1));
        out
    }

    pub fn into_map(self) -> BTreeMap<Word, Rational> {
        self.0
    }
}

impl fmt::Display for ConstTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(w, c)| format!("({})*{}", crate::ring::format_rational(c), w))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

pub fn is_lyndon(w: &[u8]) -> bool {
    if w.is_empty() {
        return false;
    }
    (1..w.len()).all(|k| {
        let rot: Vec<u8> = w[k..].iter().chain(&w[..k]).copied().collect();
        w < rot.as_slice()
    })
}

/// A Lyndon word together with its standard factorization `w = uv`, `v` the
/// longest proper Lyndon suffix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LyndonWord {
    word: Word,
    split: Option<usize>,
}

impl LyndonWord {
    pub fn new(letters: Vec<u8>) -> Option<Self> {
        if !is_lyndon(&letters) {
            return None;
        }
        let split = (1..letters.len()).find(|&k| is_lyndon(&letters[k..]));
        Some(LyndonWord {
            word: Word(letters),
            split,
        })
    }

    pub fn word(&self) -> &Word {
        &self.word
    }

    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn standard_factorization(&self) -> Option<(LyndonWord, LyndonWord)> {
        self.split.map(|k| {
            let l = &self.word.0;
            (
                LyndonWord::new(l[..k].to_vec()).expect("left factor is Lyndon"),
                LyndonWord::new(l[k..].to_vec()).expect("right factor is Lyndon"),
            )
        })
    }
}

impl Ord for LyndonWord {
    fn cmp(&self, other: &Self) -> Ordering {
        self.word.cmp(&other.word)
    }
}

impl PartialOrd for LyndonWord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for LyndonWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.word.0 {
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// All Lyndon words over `n` letters of length `<= max_len`, sorted by
/// (length, lex). Generated with Duval's algorithm.
pub fn enumerate_lyndon(n: usize, max_len: usize) -> Vec<LyndonWord> {
    let mut out = Vec::new();
    if n == 0 || max_len == 0 {
        return out;
    }
    let n = n as u8;
    let mut w: Vec<u8> = vec![1];
    loop {
        out.push(LyndonWord::new(w.clone()).expect("Duval yields Lyndon words"));
        let m = w.len();
        while w.len() < max_len {
            let c = w[w.len() - m];
            w.push(c);
        }
        while w.last() == Some(&n) {
            w.pop();
        }
        match w.last_mut() {
            None => break,
            Some(last) => *last += 1,
        }
    }
    out.sort();
    out
}

/// Standard bracketing of a Lyndon word, expanded into words.
pub fn bracketing(w: &LyndonWord) -> ConstTensor {
    match w.standard_factorization() {
        None => ConstTensor::word(w.word.clone()),
        Some((u, v)) => bracketing(&u).commutator(&bracketing(&v)),
    }
}

/// An ordered PBW monomial `e1^a1 ... en^an * [w1] * [w2] ...` with bracket
/// factors nondecreasing in (length, lex) order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PBWMonomial {
    pub letter_exponents: Vec<u32>,
    pub brackets: Vec<LyndonWord>,
}

impl PBWMonomial {
    pub fn unit(n: usize) -> Self {
        PBWMonomial {
            letter_exponents: vec![0; n],
            brackets: Vec::new(),
        }
    }

    pub fn degree(&self) -> usize {
        self.letter_exponents.iter().sum::<u32>() as usize
            + self.brackets.iter().map(LyndonWord::len).sum::<usize>()
    }

    pub fn letter_degree(&self) -> usize {
        self.letter_exponents.iter().sum::<u32>() as usize
    }

    pub fn has_letters(&self) -> bool {
        self.letter_exponents.iter().any(|&a| a > 0)
    }

    /// Expansion with the letter part as the ordered word `e1^a1 ... en^an`.
    pub fn expand(&self) -> ConstTensor {
        let mut letters = Vec::new();
        for (i, &a) in self.letter_exponents.iter().enumerate() {
            letters.extend(std::iter::repeat((i + 1) as u8).take(a as usize));
        }
        let mut out = ConstTensor::word(Word(letters));
        for b in &self.brackets {
            out = out.mul(&bracketing(b));
        }
        out
    }

    /// Expansion with the letter part symmetrized: the average over all
    /// orderings of the letter multiset.
    pub fn expand_symmetric(&self) -> ConstTensor {
        let mut out = symmetrized_letters(&self.letter_exponents);
        for b in &self.brackets {
            out = out.mul(&bracketing(b));
        }
        out
    }

    pub fn brackets_display(&self) -> String {
        self.brackets.iter().map(|b| format!("[{b}]")).collect()
    }
}

impl fmt::Display for PBWMonomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (i, &a) in self.letter_exponents.iter().enumerate() {
            match a {
                0 => {}
                1 => parts.push(format!("e{}", i + 1)),
                _ => parts.push(format!("e{}^{}", i + 1, a)),
            }
        }
        for b in &self.brackets {
            parts.push(format!("[{b}]"));
        }
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join("*"))
        }
    }
}

/// `sym(y^alpha)`: the average of all words with letter multiset `alpha`.
pub fn symmetrized_letters(alpha: &[u32]) -> ConstTensor {
    let mut words: Vec<Vec<u8>> = vec![Vec::new()];
    let m: u32 = alpha.iter().sum();
    for _ in 0..m {
        let mut next = Vec::new();
        for w in &words {
            for (i, &a) in alpha.iter().enumerate() {
                let used = w.iter().filter(|&&c| c as usize == i + 1).count() as u32;
                if used < a {
                    let mut v = w.clone();
                    v.push((i + 1) as u8);
                    next.push(v);
                }
            }
        }
        words = next;
    }
    let c = Rational::new(1.into(), (words.len() as i64).into());
    let mut out = ConstTensor::zero();
    for w in words {
        out.add_term(Word(w), c.clone());
    }
    out
}

type Seq = Vec<u16>;
type SeqForm = BTreeMap<Seq, Rational>;

/// PBW data over `n` letters up to a maximal degree, with memo tables.
pub struct PbwBasis {
    n: usize,
    max_len: usize,
    factors: Vec<LyndonWord>,
    index: HashMap<Word, u16>,
    expansions: Vec<ConstTensor>,
    commutators: Mutex<HashMap<(u16, u16), Vec<(u16, Rational)>>>,
    straighten_memo: Mutex<HashMap<Seq, SeqForm>>,
    word_memo: Mutex<HashMap<Word, Arc<BTreeMap<PBWMonomial, Rational>>>>,
    sym_memo: Mutex<HashMap<Word, Arc<BTreeMap<PBWMonomial, Rational>>>>,
}

static BASES: OnceLock<Mutex<HashMap<(usize, usize), Arc<PbwBasis>>>> = OnceLock::new();

/// Shared basis for `n` letters and degrees `<= max_len`.
pub fn pbw_basis(n: usize, max_len: usize) -> Arc<PbwBasis> {
    let table = BASES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = table.lock().expect("basis table poisoned");
    guard
        .entry((n, max_len))
        .or_insert_with(|| Arc::new(PbwBasis::new(n, max_len)))
        .clone()
}

impl PbwBasis {
    fn new(n: usize, max_len: usize) -> Self {
        let factors = enumerate_lyndon(n, max_len.max(1));
        let index = factors
            .iter()
            .enumerate()
            .map(|(i, l)| (l.word.clone(), i as u16))
            .collect();
        let expansions = factors.iter().map(bracketing).collect();
        PbwBasis {
            n,
            max_len,
            factors,
            index,
            expansions,
            commutators: Mutex::new(HashMap::new()),
            straighten_memo: Mutex::new(HashMap::new()),
            word_memo: Mutex::new(HashMap::new()),
            sym_memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn lyndon_words(&self) -> &[LyndonWord] {
        &self.factors
    }

    /// Writes a homogeneous Lie element in the Lyndon basis, by repeatedly
    /// removing the lex-smallest word, which is always Lyndon.
    fn lie_coordinates(&self, mut x: ConstTensor) -> Vec<(u16, Rational)> {
        let mut out = Vec::new();
        while let Some((w, c)) = x.0.iter().next().map(|(w, c)| (w.clone(), c.clone())) {
            let idx = *self
                .index
                .get(&w)
                .unwrap_or_else(|| panic!("minimal word {w} of a Lie element is not Lyndon"));
            x.add_scaled(&self.expansions[idx as usize], &(-&c));
            out.push((idx, c));
        }
        out
    }

    fn commutator(&self, i: u16, j: u16) -> Vec<(u16, Rational)> {
        if let Some(v) = self.commutators.lock().unwrap().get(&(i, j)) {
            return v.clone();
        }
        let x = self.expansions[i as usize].commutator(&self.expansions[j as usize]);
        let v = self.lie_coordinates(x);
        self.commutators.lock().unwrap().insert((i, j), v.clone());
        v
    }

    fn straighten(&self, seq: &[u16]) -> SeqForm {
        let Some(pos) = (0..seq.len().saturating_sub(1)).find(|&p| seq[p] > seq[p + 1]) else {
            let mut m = SeqForm::new();
            m.insert(seq.to_vec(), Rational::one());
            return m;
        };
        if let Some(v) = self.straighten_memo.lock().unwrap().get(seq) {
            return v.clone();
        }
        let mut out = SeqForm::new();
        let mut add = |form: SeqForm, c: &Rational| {
            for (s, a) in form {
                let e = out.entry(s).or_insert_with(Rational::zero);
                *e += a * c;
            }
        };
        let mut swapped = seq.to_vec();
        swapped.swap(pos, pos + 1);
        add(self.straighten(&swapped), &Rational::one());
        for (l, c) in self.commutator(seq[pos], seq[pos + 1]) {
            let mut s = seq[..pos].to_vec();
            s.push(l);
            s.extend_from_slice(&seq[pos + 2..]);
            add(self.straighten(&s), &c);
        }
        out.retain(|_, c| !c.is_zero());
        self.straighten_memo
            .lock()
            .unwrap()
            .insert(seq.to_vec(), out.clone());
        out
    }

    fn monomial_of(&self, seq: &[u16]) -> PBWMonomial {
        let mut m = PBWMonomial::unit(self.n);
        for &f in seq {
            let l = &self.factors[f as usize];
            if l.len() == 1 {
                m.letter_exponents[(l.word.0[0] - 1) as usize] += 1;
            } else {
                m.brackets.push(l.clone());
            }
        }
        m
    }

    /// Ordered PBW normal form of a single word.
    pub fn word_normal_form(&self, w: &Word) -> Arc<BTreeMap<PBWMonomial, Rational>> {
        assert!(w.len() <= self.max_len, "word longer than basis degree");
        if let Some(v) = self.word_memo.lock().unwrap().get(w) {
            return v.clone();
        }
        let seq: Seq = w.0.iter().map(|&a| (a - 1) as u16).collect();
        let form = self.straighten(&seq);
        let out: BTreeMap<PBWMonomial, Rational> = form
            .into_iter()
            .map(|(s, c)| (self.monomial_of(&s), c))
            .collect();
        let out = Arc::new(out);
        self.word_memo.lock().unwrap().insert(w.clone(), out.clone());
        out
    }

    pub fn normal_form(&self, x: &ConstTensor) -> BTreeMap<PBWMonomial, Rational> {
        let mut out: BTreeMap<PBWMonomial, Rational> = BTreeMap::new();
        for (w, c) in x.terms() {
            for (m, a) in self.word_normal_form(w).iter() {
                let e = out.entry(m.clone()).or_insert_with(Rational::zero);
                *e += a * c;
            }
        }
        out.retain(|_, c| !c.is_zero());
        out
    }

    /// Decomposition of a word as `sum c * sym(y^alpha) * M_lambda`, where the
    /// letter part of each returned monomial is read symmetrized (see
    /// [`PBWMonomial::expand_symmetric`]).
    pub fn word_symmetric_form(&self, w: &Word) -> Arc<BTreeMap<PBWMonomial, Rational>> {
        if let Some(v) = self.sym_memo.lock().unwrap().get(w) {
            return v.clone();
        }
        let mut rest = (*self.word_normal_form(w)).clone();
        let mut out: BTreeMap<PBWMonomial, Rational> = BTreeMap::new();
        // Each pass removes the terms of top letter degree; ordered and
        // symmetrized letters differ only by terms of lower letter degree.
        while let Some(top) = rest.keys().map(PBWMonomial::letter_degree).max() {
            let lead: Vec<(PBWMonomial, Rational)> = rest
                .iter()
                .filter(|(m, _)| m.letter_degree() == top)
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect();
            for (m, c) in lead {
                let correction = self.normal_form(&m.expand_symmetric());
                for (m2, a) in correction {
                    let e = rest.entry(m2).or_insert_with(Rational::zero);
                    *e -= a * &c;
                }
                *out.entry(m).or_insert_with(Rational::zero) += c;
            }
            rest.retain(|_, c| !c.is_zero());
        }
        out.retain(|_, c| !c.is_zero());
        let out = Arc::new(out);
        self.sym_memo.lock().unwrap().insert(w.clone(), out.clone());
        out
    }
}

/// Ordered PBW normal form of a constant tensor of degree `<= d`.
pub fn pbw_normal_form(n: usize, x: &ConstTensor, d: usize) -> BTreeMap<PBWMonomial, Rational> {
    pbw_basis(n, d).normal_form(x)
}

/// Recomposes `sum c_M * M` with ordered letters.
pub fn pbw_recompose(form: &BTreeMap<PBWMonomial, Rational>) -> ConstTensor {
    let mut out = ConstTensor::zero();
    for (m, c) in form {
        out.add_scaled(&m.expand(), c);
    }
    out
}
