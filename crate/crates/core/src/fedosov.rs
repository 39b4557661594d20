//! NC-connections on a chart: the degree-by-degree recursion that extends a
//! torsion-free connection to a square-zero derivation
//! `D = tau + nabla_1 + nabla_2 + ...`, the conjugation `id + h D_{>=1}`
//! and homotopy `h_D`, flat sections `sigma(f) = f - h_D(df)`, and gauge
//! transformations between two such `D`.
//!
//! Conventions: `nabla_1(e_k) = -Gamma^k_ij dx_i (x) e_j` and `D` acts on
//! coefficients by the de Rham differential. `nabla_i(e_k)` has exterior
//! degree 1 and tensor degree `i`.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derham::{homotopy_h, tau, CoefficientRule, DgElement, GeneratorRule, Wedge};
use crate::lyndon::{bracketing, enumerate_lyndon, LyndonWord, Word};
use crate::ncseries::{pbw_decompose, PBWSeries, TensorPoly};
use crate::ring::{Poly, RingError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FedosovError {
    #[error("torsion: Gamma^{k}_{{{i}{j}}} != Gamma^{k}_{{{j}{i}}}")]
    Torsion { k: usize, i: usize, j: usize },
    #[error("truncation {0} too small (need at least 2)")]
    TruncationTooSmall(usize),
    #[error("shape mismatch: (n={0}, d={1}) vs (n={2}, d={3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("bad Christoffel table: {0}")]
    BadTable(String),
    #[error("element is not D-closed: nonzero component in tensor degree {degree}")]
    NotClosed { degree: usize },
    #[error("leading term has a letter part: not in A (x) U(Lie_+)")]
    LetterPart,
    #[error("zero element has no leading term")]
    ZeroElement,
    #[error("gauge does not start with the identity on e{0}")]
    BadGauge(usize),
    #[error(transparent)]
    Ring(#[from] RingError),
}

/// Christoffel symbols `Gamma^k_ij` of a torsion-free connection on `k[x1..xn]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionSpec {
    n: usize,
    gamma: Vec<Poly>,
}

impl ConnectionSpec {
    /// `gamma[k-1][i-1][j-1] = Gamma^k_ij`; must be symmetric in `i, j`.
    pub fn new(n: usize, gamma: Vec<Vec<Vec<Poly>>>) -> Result<Self, FedosovError> {
        let flat = flatten_gamma(n, &gamma)?;
        let spec = ConnectionSpec { n, gamma: flat };
        for k in 1..=n {
            for i in 1..=n {
                for j in (i + 1)..=n {
                    if spec.gamma(k, i, j) != spec.gamma(k, j, i) {
                        return Err(FedosovError::Torsion { k, i, j });
                    }
                }
            }
        }
        Ok(spec)
    }

    pub fn flat(n: usize) -> Self {
        ConnectionSpec {
            n,
            gamma: vec![Poly::zero(n); n * n * n],
        }
    }

    /// Reads `{"k": {"i,j": "poly"}}`. A missing mirror entry `(j,i)` is
    /// filled in from `(i,j)`; if both are present they must agree.
    pub fn from_table(
        n: usize,
        table: &BTreeMap<String, BTreeMap<String, String>>,
    ) -> Result<Self, FedosovError> {
        let mut gamma = vec![vec![vec![None::<Poly>; n]; n]; n];
        let index = |s: &str| -> Result<usize, FedosovError> {
            let v: usize = s
                .trim()
                .parse()
                .map_err(|_| FedosovError::BadTable(format!("bad index {s:?}")))?;
            if v == 0 || v > n {
                return Err(FedosovError::BadTable(format!("index {v} out of range 1..={n}")));
            }
            Ok(v - 1)
        };
        for (ks, row) in table {
            let k = index(ks)?;
            for (ij, expr) in row {
                let (is, js) = ij
                    .split_once(',')
                    .ok_or_else(|| FedosovError::BadTable(format!("bad index pair {ij:?}")))?;
                let (i, j) = (index(is)?, index(js)?);
                let p = Poly::parse(expr, n)?;
                gamma[k][i][j] = Some(p);
            }
        }
        let mut full = vec![vec![vec![Poly::zero(n); n]; n]; n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    full[k][i][j] = match (&gamma[k][i][j], &gamma[k][j][i]) {
                        (Some(a), _) => a.clone(),
                        (None, Some(b)) => b.clone(),
                        (None, None) => Poly::zero(n),
                    };
                }
            }
        }
        Self::new(n, full)
    }

    /// Inverse of [`ConnectionSpec::from_table`]; lists each unordered pair once
    /// as `"i,j"` with `i <= j` and omits zeros.
    pub fn to_table(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for k in 1..=self.n {
            let mut row = BTreeMap::new();
            for i in 1..=self.n {
                for j in i..=self.n {
                    let g = self.gamma(k, i, j);
                    if !g.is_zero() {
                        row.insert(format!("{i},{j}"), g.to_string());
                    }
                }
            }
            if !row.is_empty() {
                out.insert(k.to_string(), row);
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `Gamma^k_ij`, 1-based.
    pub fn gamma(&self, k: usize, i: usize, j: usize) -> &Poly {
        let n = self.n;
        &self.gamma[((k - 1) * n + (i - 1)) * n + (j - 1)]
    }

    pub fn is_flat(&self) -> bool {
        self.gamma.iter().all(Poly::is_zero)
    }

    pub fn table(&self) -> Vec<Vec<Vec<Poly>>> {
        let n = self.n;
        (1..=n)
            .map(|k| {
                (1..=n)
                    .map(|i| (1..=n).map(|j| self.gamma(k, i, j).clone()).collect())
                    .collect()
            })
            .collect()
    }
}

fn flatten_gamma(n: usize, gamma: &[Vec<Vec<Poly>>]) -> Result<Vec<Poly>, FedosovError> {
    let mut flat = Vec::with_capacity(n * n * n);
    if gamma.len() != n {
        return Err(FedosovError::BadTable(format!("expected {n} slices")));
    }
    for slice in gamma {
        if slice.len() != n || slice.iter().any(|r| r.len() != n) {
            return Err(FedosovError::BadTable(format!("expected {n}x{n} slices")));
        }
        for row in slice {
            for p in row {
                if p.nvars() != n {
                    return Err(RingError::DimensionMismatch(p.nvars(), n).into());
                }
                flat.push(p.clone());
            }
        }
    }
    Ok(flat)
}

/// `nabla_1(e_k) = -Gamma^k_ij dx_i (x) e_j` for an arbitrary (possibly
/// asymmetric) table.
pub fn christoffel_images(n: usize, d: usize, gamma: &[Vec<Vec<Poly>>]) -> Vec<DgElement> {
    (0..n)
        .map(|k| {
            let mut img = DgElement::zero(n, d);
            for i in 0..n {
                for j in 0..n {
                    img.add_term(Wedge::single(i + 1), Word::letter((j + 1) as u8), -&gamma[k][i][j]);
                }
            }
            img
        })
        .collect()
}

/// `[D0, D1](e_k) = tau(D1 e_k) + D1(tau e_k)` for the rule built from `gamma`.
pub fn d0_d1_commutator(n: usize, d: usize, gamma: &[Vec<Vec<Poly>>]) -> Vec<DgElement> {
    let images = christoffel_images(n, d, gamma);
    let rule = GeneratorRule::new(1, images.clone(), CoefficientRule::DeRham)
        .expect("Christoffel rule is consistent");
    (0..n)
        .map(|k| {
            let dx = DgElement::basis(n, d, Wedge::single(k + 1), Word::empty());
            tau(&images[k]).add(&rule.apply(&dx))
        })
        .collect()
}

/// The family `nabla_1 .. nabla_d` determining `D` on generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NCConnection {
    spec: ConnectionSpec,
    d: usize,
    /// `nabla[i-1][k-1] = nabla_i(e_k)`.
    nabla: Vec<Vec<DgElement>>,
    full: GeneratorRule,
    higher: GeneratorRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "zero")]
    Zero,
    #[serde(rename = "nonzero")]
    Nonzero,
    #[serde(rename = "untracked")]
    Untracked,
}

/// One line of a square-zero report: the component of `D^2` on a generator
/// in a given tensor degree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SquareZeroEntry {
    pub generator: usize,
    pub tensor_degree: usize,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<DgElement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SquareZeroReport {
    pub entries: Vec<SquareZeroEntry>,
}

impl SquareZeroReport {
    pub fn all_zero(&self) -> bool {
        self.entries.iter().all(|e| e.status != Status::Nonzero)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SquareZeroEntry> {
        self.entries.iter().filter(|e| e.status == Status::Nonzero)
    }
}

/// Builds the square-zero report for the images `D^2(e_k)`: tensor degrees
/// `0..d-1` are checked, degree `d` is reported as untracked.
pub(crate) fn square_zero_report(squares: Vec<DgElement>, d: usize) -> SquareZeroReport {
    let mut entries = Vec::new();
    for (k, sq) in squares.into_iter().enumerate() {
        for m in 0..d {
            let comp = sq.tensor_component(m);
            let zero = comp.is_zero();
            entries.push(SquareZeroEntry {
                generator: k + 1,
                tensor_degree: m,
                status: if zero { Status::Zero } else { Status::Nonzero },
                residual: if zero { None } else { Some(comp) },
            });
        }
        entries.push(SquareZeroEntry {
            generator: k + 1,
            tensor_degree: d,
            status: Status::Untracked,
            residual: None,
        });
    }
    SquareZeroReport { entries }
}

impl NCConnection {
    /// Runs the recursion `nabla_{m+1}(e_k) = -h([D_{>=1}(nabla_{<=m}(e_k))]_m)`
    /// for `m = 1 .. d-1`, which makes `D^2(e_k)` vanish in tensor degrees
    /// `<= d-1`. The first step is `nabla_2 = -h(D_1^2)`.
    pub fn build(spec: &ConnectionSpec, d: usize) -> Result<Self, FedosovError> {
        if d < 2 {
            return Err(FedosovError::TruncationTooSmall(d));
        }
        let n = spec.n;
        let mut nabla = vec![christoffel_images(n, d, &spec.table())];
        for m in 1..d {
            let higher = higher_rule(n, d, &nabla);
            let next: Vec<DgElement> = (0..n)
                .into_par_iter()
                .map(|k| {
                    let mut sum = DgElement::zero(n, d);
                    for level in &nabla {
                        sum.add_assign(&level[k]);
                    }
                    let x = higher.apply_in(&sum.truncate_above(m), m, m);
                    homotopy_h(&x).neg()
                })
                .collect();
            nabla.push(next);
        }
        Ok(Self::from_nabla(spec.clone(), d, nabla))
    }

    /// Wraps given images without checking any identity.
    pub fn from_nabla(spec: ConnectionSpec, d: usize, nabla: Vec<Vec<DgElement>>) -> Self {
        let n = spec.n;
        let higher = higher_rule(n, d, &nabla);
        let full_images = (0..n)
            .map(|k| {
                let mut img = DgElement::basis(n, d, Wedge::single(k + 1), Word::empty());
                for level in &nabla {
                    img.add_assign(&level[k]);
                }
                img
            })
            .collect();
        let full = GeneratorRule::new(1, full_images, CoefficientRule::DeRham)
            .expect("connection images have exterior degree 1");
        NCConnection {
            spec,
            d,
            nabla,
            full,
            higher,
        }
    }

    pub fn spec(&self) -> &ConnectionSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `nabla_i(e_k)`, both 1-based; zero for `i > d`.
    pub fn nabla(&self, i: usize, k: usize) -> DgElement {
        self.nabla
            .get(i - 1)
            .map(|l| l[k - 1].clone())
            .unwrap_or_else(|| DgElement::zero(self.n(), self.d))
    }

    pub fn nabla_levels(&self) -> &[Vec<DgElement>] {
        &self.nabla
    }

    /// `D(e_k) = dx_k + sum_i nabla_i(e_k)`.
    pub fn generator_image(&self, k: usize) -> &DgElement {
        self.full.letter_image(k)
    }

    pub fn apply_d(&self, a: &DgElement) -> DgElement {
        self.full.apply(a)
    }

    /// `D_{>=1} = D - tau`.
    pub fn apply_d_higher(&self, a: &DgElement) -> DgElement {
        self.higher.apply(a)
    }

    /// The part of `D_{>=1}(a)` in tensor degrees `lo..=hi`.
    pub fn apply_d_higher_in(&self, a: &DgElement, lo: usize, hi: usize) -> DgElement {
        self.higher.apply_in(a, lo, hi)
    }

    pub fn verify_square_zero(&self) -> SquareZeroReport {
        let n = self.n();
        let squares: Vec<DgElement> = (1..=n)
            .into_par_iter()
            .map(|k| self.full.apply_in(self.generator_image(k), 0, self.d - 1))
            .collect();
        square_zero_report(squares, self.d)
    }

    pub fn conjugator(&self) -> Conjugator<'_> {
        Conjugator { nc: self }
    }

    /// `sigma(f) = f - h_D(df)`.
    pub fn sigma(&self, f: &Poly) -> FlatSection {
        let df = DgElement::differential(f, self.d);
        let value = TensorPoly::scalar(self.n(), self.d, f.clone())
            .sub(&self.conjugator().h_d(&df).to_tensor());
        self.flat_section(value)
            .expect("sigma lifts are closed by construction")
    }

    /// Checks `D(value) = 0` in tensor degrees `<= d-1`.
    pub fn flat_section(&self, value: TensorPoly) -> Result<FlatSection, FedosovError> {
        if (value.n(), value.d()) != (self.n(), self.d) {
            return Err(FedosovError::ShapeMismatch(value.n(), value.d(), self.n(), self.d));
        }
        let witness = self.apply_d(&DgElement::from_tensor(&value));
        if let Some(degree) = witness.truncate_above(self.d - 1).lowest_tensor_degree() {
            return Err(FedosovError::NotClosed { degree });
        }
        Ok(FlatSection { value, witness })
    }

    /// Product of flat sections; the result is re-verified.
    pub fn mul_flat(&self, a: &FlatSection, b: &FlatSection) -> Result<FlatSection, FedosovError> {
        for x in [a, b] {
            if (x.value.n(), x.value.d()) != (self.n(), self.d) {
                return Err(FedosovError::ShapeMismatch(x.value.n(), x.value.d(), self.n(), self.d));
            }
        }
        self.flat_section(a.value.mul(&b.value))
    }

    pub fn commutator_flat(&self, a: &FlatSection, b: &FlatSection) -> Result<FlatSection, FedosovError> {
        self.flat_section(a.value.commutator(&b.value))
    }

    /// Conjugates `D` by the gauge: `D' = phi D phi^{-1}`. Computed one
    /// degree higher internally so that all `nabla'_i`, `i <= d`, are exact.
    pub fn conjugate(&self, gauge: &GaugeTransform) -> Result<NCConnection, FedosovError> {
        let (n, d) = (self.n(), self.d);
        if (gauge.n, gauge.d) != (n, d) {
            return Err(FedosovError::ShapeMismatch(gauge.n, gauge.d, n, d));
        }
        let up = d + 1;
        let lifted: Vec<Vec<DgElement>> = self
            .nabla
            .iter()
            .map(|l| l.iter().map(|x| x.with_truncation(up)).collect())
            .collect();
        let big = NCConnection::from_nabla(self.spec.clone(), up, lifted);
        let g = gauge.with_truncation(up);
        let ginv = g.inverse();
        let images: Vec<DgElement> = (1..=n)
            .into_par_iter()
            .map(|k| {
                let pre = DgElement::from_tensor(&ginv.images[k - 1]);
                g.apply(&big.apply_d(&pre)).with_truncation(d)
            })
            .collect();
        let mut nabla = vec![Vec::with_capacity(n); d];
        for (k, img) in images.iter().enumerate() {
            let dx = DgElement::basis(n, d, Wedge::single(k + 1), Word::empty());
            if img.tensor_component(0) != dx {
                return Err(FedosovError::BadGauge(k + 1));
            }
            for (i, level) in nabla.iter_mut().enumerate() {
                level.push(img.tensor_component(i + 1));
            }
        }
        let mut gamma = vec![vec![vec![Poly::zero(n); n]; n]; n];
        for (k, img) in nabla[0].iter().enumerate() {
            for ((s, w), p) in img.terms() {
                let i = s.indices()[0];
                let j = w.letters()[0] as usize;
                gamma[k][i - 1][j - 1] = -p;
            }
        }
        let spec = ConnectionSpec::new(n, gamma)?;
        Ok(NCConnection::from_nabla(spec, d, nabla))
    }

    /// Differences `D'(e_k) - D(e_k)` in tensor degrees `<= d-1`.
    pub fn generator_difference(&self, other: &NCConnection) -> Vec<DgElement> {
        (1..=self.n())
            .map(|k| {
                self.generator_image(k)
                    .sub(other.generator_image(k))
                    .truncate_above(self.d - 1)
            })
            .collect()
    }

    /// Dimensions of the span of leading terms of products of iterated
    /// sigma-commutators, in tensor degrees `0..=max` (constant coefficients).
    pub fn leading_term_dimensions(&self, max: usize) -> Result<Vec<usize>, FedosovError> {
        leading_term_dimensions(self, max)
    }
}

fn higher_rule(n: usize, d: usize, nabla: &[Vec<DgElement>]) -> GeneratorRule {
    let images = (0..n)
        .map(|k| {
            let mut img = DgElement::zero(n, d);
            for level in nabla {
                img.add_assign(&level[k]);
            }
            img
        })
        .collect();
    GeneratorRule::new(1, images, CoefficientRule::DeRham).expect("images have exterior degree 1")
}

/// The operators `Phi = id + h D_{>=1}`, its inverse, and `h_D = Phi^{-1} h Phi`.
pub struct Conjugator<'a> {
    nc: &'a NCConnection,
}

impl Conjugator<'_> {
    pub fn phi(&self, a: &DgElement) -> DgElement {
        a.add(&homotopy_h(&self.nc.apply_d_higher(a)))
    }

    /// `sum_{j=0}^{d} (-h D_{>=1})^j`; exact because `h D_{>=1}` raises the
    /// tensor degree.
    pub fn phi_inverse(&self, a: &DgElement) -> DgElement {
        let mut term = a.clone();
        let mut out = a.clone();
        for _ in 0..self.nc.d {
            term = homotopy_h(&self.nc.apply_d_higher(&term)).neg();
            if term.is_zero() {
                break;
            }
            out.add_assign(&term);
        }
        out
    }

    pub fn h_d(&self, a: &DgElement) -> DgElement {
        self.phi_inverse(&homotopy_h(&self.phi(a)))
    }
}

/// An element of `ker(D)` in exterior degree 0, with `D(value)` cached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatSection {
    value: TensorPoly,
    witness: DgElement,
}

impl FlatSection {
    pub fn value(&self) -> &TensorPoly {
        &self.value
    }

    /// `D(value)`: zero in tensor degrees `<= d-1`; the top degree is untracked.
    pub fn witness(&self) -> &DgElement {
        &self.witness
    }

    /// Scalar projection `pi`.
    pub fn scalar_part(&self) -> Poly {
        self.value.scalar_part()
    }
}

impl Serialize for FlatSection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct J<'a> {
            value: &'a TensorPoly,
            closed_through_degree: usize,
        }
        J {
            value: &self.value,
            closed_through_degree: self.value.d() - 1,
        }
        .serialize(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeadingTerm {
    pub degree: usize,
    pub component: TensorPoly,
    pub pbw: PBWSeries,
}

/// Lowest tensor degree component of a flat section, certified to lie in
/// `A (x) U(Lie_+)`: its PBW decomposition has no letter part.
pub fn leading_term(a: &FlatSection) -> Result<LeadingTerm, FedosovError> {
    let degree = a.value.lowest_degree().ok_or(FedosovError::ZeroElement)?;
    let component = a.value.component(degree);
    let pbw = pbw_decompose(&component);
    if pbw.has_letter_part() {
        return Err(FedosovError::LetterPart);
    }
    Ok(LeadingTerm {
        degree,
        component,
        pbw,
    })
}

/// The iterated sigma-commutator attached to a Lyndon word: the standard
/// bracketing with `sigma(x_i)` in place of `e_i`.
pub fn sigma_bracket(nc: &NCConnection, l: &LyndonWord) -> FlatSection {
    match l.standard_factorization() {
        None => {
            let i = l.word().letters()[0] as usize;
            nc.sigma(&Poly::var(nc.n(), i).expect("letter in range"))
        }
        Some((u, v)) => nc
            .commutator_flat(&sigma_bracket(nc, &u), &sigma_bracket(nc, &v))
            .expect("commutators of flat sections are flat"),
    }
}

fn leading_term_dimensions(nc: &NCConnection, max: usize) -> Result<Vec<usize>, FedosovError> {
    let n = nc.n();
    let max = max.min(nc.d());
    let lie: Vec<(LyndonWord, FlatSection)> = enumerate_lyndon(n, max)
        .into_iter()
        .filter(|l| l.len() >= 2)
        .map(|l| {
            let s = sigma_bracket(nc, &l);
            (l, s)
        })
        .collect();
    let mut dims = Vec::with_capacity(max + 1);
    for m in 0..=max {
        // All ordered products of Lie elements of total degree m.
        let mut products: Vec<FlatSection> = Vec::new();
        let mut stack: Vec<(usize, FlatSection)> =
            vec![(0, nc.flat_section(TensorPoly::one(n, nc.d()))?)];
        while let Some((deg, x)) = stack.pop() {
            if deg == m {
                products.push(x);
                continue;
            }
            for (l, s) in &lie {
                if deg + l.len() <= m {
                    stack.push((deg + l.len(), nc.mul_flat(&x, s)?));
                }
            }
        }
        let mut rows: Vec<Vec<crate::ring::Rational>> = Vec::new();
        let words = Word::all_of_length(n, m);
        for p in &products {
            let lt = leading_term(p)?;
            if lt.degree != m {
                // The product lies deeper in the filtration than expected.
                return Err(FedosovError::NotClosed { degree: lt.degree });
            }
            let c = lt
                .component
                .to_const()
                .ok_or_else(|| FedosovError::BadTable("non-constant leading term".into()))?;
            rows.push(words.iter().map(|w| c.coeff(w)).collect());
        }
        dims.push(if rows.is_empty() { 0 } else { crate::linalg::rank(&rows) });
    }
    Ok(dims)
}

/// An algebra automorphism `phi(e_k) = e_k + phi_2(e_k) + ... + phi_d(e_k)`,
/// acting trivially on forms and coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaugeTransform {
    n: usize,
    d: usize,
    images: Vec<TensorPoly>,
}

impl GaugeTransform {
    pub fn identity(n: usize, d: usize) -> Self {
        GaugeTransform {
            n,
            d,
            images: (1..=n).map(|k| TensorPoly::letter(n, d, k as u8)).collect(),
        }
    }

    /// `e_k -> e_k + corrections[k-1]`; corrections must have tensor degree >= 2.
    pub fn from_corrections(corrections: Vec<TensorPoly>) -> Result<Self, FedosovError> {
        let first = corrections
            .first()
            .ok_or_else(|| FedosovError::BadTable("empty gauge".into()))?;
        let (n, d) = (first.n(), first.d());
        let mut images = Vec::with_capacity(n);
        for (k, c) in corrections.iter().enumerate() {
            if c.lowest_degree().is_some_and(|m| m < 2) {
                return Err(FedosovError::BadGauge(k + 1));
            }
            images.push(TensorPoly::letter(n, d, (k + 1) as u8).add(c));
        }
        Ok(GaugeTransform { n, d, images })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn image(&self, k: usize) -> &TensorPoly {
        &self.images[k - 1]
    }

    /// `phi_j(e_k)`.
    pub fn component(&self, j: usize, k: usize) -> TensorPoly {
        self.images[k - 1].component(j)
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.n, self.d)
    }

    pub fn with_truncation(&self, d: usize) -> Self {
        GaugeTransform {
            n: self.n,
            d,
            images: self.images.iter().map(|x| x.with_truncation(d)).collect(),
        }
    }

    /// Substitutes `e_k -> phi(e_k)` in a tensor series.
    pub fn apply_tensor(&self, a: &TensorPoly) -> TensorPoly {
        self.apply_tensor_with(a, &mut HashMap::new())
    }

    /// Image of a word, built from the image of its longest proper prefix.
    fn word_image<'a>(&self, w: &[u8], memo: &'a mut HashMap<Vec<u8>, TensorPoly>) -> &'a TensorPoly {
        if !memo.contains_key(w) {
            let img = match w.split_last() {
                None => TensorPoly::one(self.n, self.d),
                Some((&last, prefix)) => {
                    let head = self.word_image(prefix, memo).clone();
                    head.mul(&self.images[last as usize - 1])
                }
            };
            memo.insert(w.to_vec(), img);
        }
        &memo[w]
    }

    fn apply_tensor_with(&self, a: &TensorPoly, memo: &mut HashMap<Vec<u8>, TensorPoly>) -> TensorPoly {
        let mut out = TensorPoly::zero(self.n, self.d);
        for (w, p) in a.terms() {
            let img = self.word_image(w.letters(), memo);
            out.add_assign(&img.scale_poly(p));
        }
        out
    }

    /// Substitution on the tensor slot of a form.
    pub fn apply(&self, a: &DgElement) -> DgElement {
        let mut slots: BTreeMap<Wedge, TensorPoly> = BTreeMap::new();
        for ((s, w), p) in a.terms() {
            slots
                .entry(*s)
                .or_insert_with(|| TensorPoly::zero(self.n, self.d))
                .add_term(w.clone(), p.clone());
        }
        let mut memo = HashMap::new();
        let mut out = DgElement::zero(self.n, self.d);
        for (s, t) in slots {
            out.add_assign(&DgElement::form(s, &self.apply_tensor_with(&t, &mut memo)));
        }
        out
    }

    /// `self o other`: first `other`, then `self`.
    pub fn compose(&self, other: &GaugeTransform) -> GaugeTransform {
        GaugeTransform {
            n: self.n,
            d: self.d,
            images: {
                let mut memo = HashMap::new();
                other.images.iter().map(|x| self.apply_tensor_with(x, &mut memo)).collect()
            },
        }
    }

    /// Inverse by the fixed-point iteration `y <- y + (e_k - phi(y))`.
    pub fn inverse(&self) -> GaugeTransform {
        let mut memo = HashMap::new();
        let images = (1..=self.n)
            .map(|k| {
                let e = TensorPoly::letter(self.n, self.d, k as u8);
                let mut y = e.clone();
                for _ in 0..self.d {
                    let next = y.add(&e.sub(&self.apply_tensor_with(&y, &mut memo)));
                    if next == y {
                        break;
                    }
                    y = next;
                }
                y
            })
            .collect();
        GaugeTransform {
            n: self.n,
            d: self.d,
            images,
        }
    }
}

impl Serialize for GaugeTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut by_degree: BTreeMap<String, BTreeMap<String, TensorPoly>> = BTreeMap::new();
        for j in 2..=self.d {
            for k in 1..=self.n {
                let c = self.component(j, k);
                if !c.is_zero() {
                    by_degree.entry(j.to_string()).or_default().insert(k.to_string(), c);
                }
            }
        }
        #[derive(Serialize)]
        struct J {
            n: usize,
            d: usize,
            phi: BTreeMap<String, BTreeMap<String, TensorPoly>>,
        }
        J {
            n: self.n,
            d: self.d,
            phi: by_degree,
        }
        .serialize(s)
    }
}

/// A gauge `phi` with `phi D_a phi^{-1} = D_b` on generators in tensor
/// degrees `<= d-1`.
///
/// Degree by degree: if the two differentials agree below degree `m`, the
/// difference of their degree-`m` parts is `tau`-closed, and conjugating by
/// `e_k -> e_k + h(difference)` removes it without touching lower degrees.
pub fn find_gauge(a: &NCConnection, b: &NCConnection) -> Result<GaugeTransform, FedosovError> {
    let (n, d) = (a.n(), a.d());
    if (b.n(), b.d()) != (n, d) {
        return Err(FedosovError::ShapeMismatch(b.n(), b.d(), n, d));
    }
    let mut total = GaugeTransform::identity(n, d);
    let mut cur = a.clone();
    for m in 1..d {
        let corrections: Vec<TensorPoly> = (1..=n)
            .map(|k| {
                let diff = cur
                    .generator_image(k)
                    .sub(b.generator_image(k))
                    .tensor_component(m);
                homotopy_h(&diff).to_tensor()
            })
            .collect();
        if corrections.iter().all(TensorPoly::is_zero) {
            continue;
        }
        let step = GaugeTransform::from_corrections(corrections)?;
        cur = cur.conjugate(&step)?;
        total = step.compose(&total);
    }
    Ok(total)
}

impl Serialize for NCConnection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut nabla: BTreeMap<String, BTreeMap<String, DgElement>> = BTreeMap::new();
        for (i, level) in self.nabla.iter().enumerate() {
            let entry = nabla.entry((i + 1).to_string()).or_default();
            for (k, img) in level.iter().enumerate() {
                if !img.is_zero() {
                    entry.insert((k + 1).to_string(), img.clone());
                }
            }
        }
        #[derive(Serialize)]
        struct J {
            n: usize,
            truncation: usize,
            christoffel: BTreeMap<String, BTreeMap<String, String>>,
            nabla: BTreeMap<String, BTreeMap<String, DgElement>>,
        }
        J {
            n: self.n(),
            truncation: self.d,
            christoffel: self.spec.to_table(),
            nabla,
        }
        .serialize(s)
    }
}

/// The constant-coefficient Lie element for a Lyndon word, as a series.
pub fn lie_element(n: usize, d: usize, l: &LyndonWord) -> TensorPoly {
    TensorPoly::from_const(n, d, &bracketing(l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::Rational;

    fn p(s: &str, n: usize) -> Poly {
        Poly::parse(s, n).unwrap()
    }

    fn spec(n: usize, entries: &[(usize, usize, usize, &str)]) -> ConnectionSpec {
        let mut table: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for &(k, i, j, e) in entries {
            table
                .entry(k.to_string())
                .or_default()
                .insert(format!("{i},{j}"), e.to_string());
        }
        ConnectionSpec::from_table(n, &table).unwrap()
    }

    fn example_spec() -> ConnectionSpec {
        spec(2, &[(1, 2, 2, "x1")])
    }

    fn tp(n: usize, d: usize, terms: &[(&[u8], &str)]) -> TensorPoly {
        let mut t = TensorPoly::zero(n, d);
        for (w, c) in terms {
            t.add_term(Word(w.to_vec()), p(c, n));
        }
        t
    }

    #[test]
    fn torsion_is_rejected() {
        let mut g = vec![vec![vec![Poly::zero(2); 2]; 2]; 2];
        g[0][0][1] = Poly::one(2);
        assert_eq!(
            ConnectionSpec::new(2, g),
            Err(FedosovError::Torsion { k: 1, i: 1, j: 2 })
        );
        let mut table: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        table.entry("1".into()).or_default().insert("1,2".into(), "1".into());
        table.entry("1".into()).or_default().insert("2,1".into(), "0".into());
        assert!(matches!(ConnectionSpec::from_table(2, &table), Err(FedosovError::Torsion { .. })));
        // A single entry is mirrored.
        let s = spec(2, &[(1, 1, 2, "x2")]);
        assert_eq!(s.gamma(1, 2, 1), &p("x2", 2));
    }

    #[test]
    fn d0_d1_commute_iff_symmetric() {
        let sym = example_spec().table();
        assert!(d0_d1_commutator(2, 3, &sym).iter().all(DgElement::is_zero));
        let mut asym = sym.clone();
        asym[0][0][1] = Poly::one(2);
        assert!(d0_d1_commutator(2, 3, &asym).iter().any(|x| !x.is_zero()));
        let mut sym2 = asym.clone();
        sym2[0][1][0] = Poly::one(2);
        assert!(d0_d1_commutator(2, 3, &sym2).iter().all(DgElement::is_zero));
    }

    #[test]
    fn flat_connection_has_no_corrections() {
        let nc = NCConnection::build(&ConnectionSpec::flat(2), 4).unwrap();
        for i in 1..=4 {
            for k in 1..=2 {
                assert!(nc.nabla(i, k).is_zero());
            }
        }
        assert!(nc.verify_square_zero().all_zero());
        assert!(matches!(
            NCConnection::build(&ConnectionSpec::flat(2), 1),
            Err(FedosovError::TruncationTooSmall(1))
        ));
    }

    /// Independent curvature: `D_1^2(e_k) = -sum_{l<i} R^k_{b l i} dx_l ^ dx_i (x) e_b`
    /// with `R^k_{bli} = d_l G^k_ib - d_i G^k_lb + G^k_lj G^j_ib - G^k_ij G^j_lb`.
    fn curvature_oracle(s: &ConnectionSpec, d: usize, k: usize) -> DgElement {
        let n = s.n();
        let g = |k: usize, i: usize, j: usize| s.gamma(k, i, j).clone();
        let mut out = DgElement::zero(n, d);
        for l in 1..=n {
            for i in (l + 1)..=n {
                for b in 1..=n {
                    let mut r = &g(k, i, b).partial(l).unwrap() - &g(k, l, b).partial(i).unwrap();
                    for j in 1..=n {
                        r += &(&g(k, l, j) * &g(j, i, b));
                        r -= &(&g(k, i, j) * &g(j, l, b));
                    }
                    let (wedge, _) = Wedge::from_indices(&[l, i]).unwrap();
                    out.add_term(wedge, Word::letter(b as u8), -&r);
                }
            }
        }
        out
    }

    #[test]
    fn d1_squared_is_curvature_and_satisfies_bianchi() {
        let specs = [
            example_spec(),
            spec(2, &[(1, 1, 2, "x2"), (2, 1, 1, "x1^2 + x2"), (2, 2, 2, "x1*x2")]),
            spec(3, &[(1, 2, 3, "x1"), (3, 1, 1, "x2*x3"), (2, 2, 2, "1 + x3")]),
        ];
        for s in specs {
            let n = s.n();
            let images = christoffel_images(n, 3, &s.table());
            let rule = GeneratorRule::new(1, images.clone(), CoefficientRule::DeRham).unwrap();
            for k in 1..=n {
                let sq = rule.apply(&images[k - 1]);
                assert_eq!(sq, curvature_oracle(&s, 3, k));
                assert!(tau(&sq).is_zero());
            }
        }
    }

    #[test]
    fn recursion_example_satisfies_degree_two_equation() {
        let nc = NCConnection::build(&example_spec(), 3).unwrap();
        let report = nc.verify_square_zero();
        assert!(report.all_zero(), "{report:?}");
        // [D0, D2] + D1^2 = 0 on generators, computed directly.
        let d1 = GeneratorRule::new(
            1,
            (1..=2).map(|k| nc.nabla(1, k)).collect(),
            CoefficientRule::DeRham,
        )
        .unwrap();
        for k in 1..=2 {
            let lhs = tau(&nc.nabla(2, k)).add(&d1.apply(&nc.nabla(1, k)));
            assert!(lhs.is_zero());
            // nabla_2 = -h(D1^2).
            assert_eq!(nc.nabla(2, k), homotopy_h(&d1.apply(&nc.nabla(1, k))).neg());
        }
        assert!(!nc.nabla(2, 1).is_zero());
        assert!(report
            .entries
            .iter()
            .any(|e| e.tensor_degree == 3 && e.status == Status::Untracked));
    }

    #[test]
    fn corrupted_connection_is_flagged() {
        let nc = NCConnection::build(&spec(2, &[(1, 2, 2, "x1"), (2, 1, 1, "x2")]), 4).unwrap();
        let mut levels = nc.nabla_levels().to_vec();
        let mut bump = DgElement::zero(2, 4);
        bump.add_term(Wedge::single(1), Word(vec![1, 1, 2]), Poly::one(2));
        levels[2][0].add_assign(&bump);
        let bad = NCConnection::from_nabla(nc.spec().clone(), 4, levels);
        let report = bad.verify_square_zero();
        assert!(!report.all_zero());
        let first = report.failures().next().unwrap();
        assert_eq!((first.generator, first.tensor_degree), (1, 2));
    }

    #[test]
    fn conjugator_flat_examples() {
        let nc = NCConnection::build(&ConnectionSpec::flat(2), 3).unwrap();
        let c = nc.conjugator();
        let dx1 = DgElement::basis(2, 3, Wedge::single(1), Word::empty());
        assert_eq!(c.phi(&dx1), dx1);
        assert_eq!(c.h_d(&dx1), DgElement::basis(2, 3, Wedge::EMPTY, Word::letter(1)));
    }

    #[test]
    fn conjugation_identities_on_nonflat_example() {
        let nc = NCConnection::build(&spec(2, &[(1, 2, 2, "x1"), (2, 1, 2, "x2^2")]), 4).unwrap();
        let c = nc.conjugator();
        let mut x = DgElement::zero(2, 4);
        x.add_term(Wedge::EMPTY, Word(vec![2, 1]), p("x1*x2", 2));
        x.add_term(Wedge::single(2), Word(vec![1]), p("x1 + 1", 2));
        x.add_term(Wedge(0b11), Word(vec![]), p("x2", 2));
        let lhs = c.phi(&nc.apply_d(&x));
        let rhs = tau(&c.phi(&x));
        assert!(lhs.sub(&rhs).truncate_above(3).is_zero());
        assert_eq!(c.phi_inverse(&c.phi(&x)), x);
        let y = x.filter(|s, _| s.degree() >= 1);
        let hd = c.h_d(&nc.apply_d(&y)).add(&nc.apply_d(&c.h_d(&y)));
        assert!(hd.sub(&y).truncate_above(3).is_zero());
    }

    #[test]
    fn sigma_examples() {
        let flat = NCConnection::build(&ConnectionSpec::flat(2), 3).unwrap();
        assert_eq!(flat.sigma(&p("x1", 2)).value(), &tp(2, 3, &[(&[], "x1"), (&[1], "-1")]));
        assert_eq!(flat.sigma(&Poly::one(2)).value(), &TensorPoly::one(2, 3));
        let nc = NCConnection::build(&example_spec(), 3).unwrap();
        let s = nc.sigma(&p("x1*x2", 2));
        assert_eq!(s.scalar_part(), p("x1*x2", 2));
        assert!(s.witness().truncate_above(2).is_zero());
        // Phi maps flat sections into ker(tau).
        let img = nc.conjugator().phi(&DgElement::from_tensor(s.value()));
        assert!(tau(&img).truncate_above(2).is_zero());
    }

    #[test]
    fn flat_products_and_commutator_law() {
        let flat = NCConnection::build(&ConnectionSpec::flat(2), 3).unwrap();
        let (a, b) = (flat.sigma(&p("x1", 2)), flat.sigma(&p("x2", 2)));
        let comm = flat.mul_flat(&a, &b).unwrap().value().sub(flat.mul_flat(&b, &a).unwrap().value());
        assert_eq!(comm, tp(2, 3, &[(&[1, 2], "1"), (&[2, 1], "-1")]));
        let one = flat.sigma(&Poly::one(2));
        assert_eq!(flat.mul_flat(&a, &one).unwrap(), a);

        let nc = NCConnection::build(&example_spec(), 4).unwrap();
        let (f, g) = (p("x1^2 + x2", 2), p("x1*x2", 2));
        let (sf, sg) = (nc.sigma(&f), nc.sigma(&g));
        let prod = nc.mul_flat(&sf, &sg).unwrap();
        let df = DgElement::differential(&f, 4);
        let dg = DgElement::differential(&g, 4);
        let as_tensor = |x: &DgElement| {
            let mut t = TensorPoly::zero(2, 4);
            for ((s, _), q) in x.terms() {
                t.add_term(Word::letter(s.indices()[0] as u8), q.clone());
            }
            t
        };
        let (tf, tg) = (as_tensor(&df), as_tensor(&dg));
        let half = Rational::new(1.into(), 2.into());
        let law = prod
            .value()
            .sub(nc.sigma(&(&f * &g)).value())
            .sub(&tf.mul(&tg).sub(&tg.mul(&tf)).scale(&half));
        assert!(law.truncate_above(2).is_zero(), "{law}");
    }

    #[test]
    fn leading_terms() {
        let flat = NCConnection::build(&ConnectionSpec::flat(2), 3).unwrap();
        let (a, b) = (flat.sigma(&p("x1", 2)), flat.sigma(&p("x2", 2)));
        let lt = leading_term(&flat.commutator_flat(&a, &b).unwrap()).unwrap();
        assert_eq!(lt.degree, 2);
        assert_eq!(lt.component, lie_element(2, 3, &LyndonWord::new(vec![1, 2]).unwrap()));
        let lt = leading_term(&a).unwrap();
        assert_eq!((lt.degree, lt.component.clone()), (0, tp(2, 3, &[(&[], "x1")])));
        let zero = flat.flat_section(TensorPoly::zero(2, 3)).unwrap();
        assert_eq!(leading_term(&zero), Err(FedosovError::ZeroElement));
    }

    #[test]
    fn leading_term_dimensions_match_tau_nullity() {
        let nc = NCConnection::build(&example_spec(), 5).unwrap();
        let dims = nc.leading_term_dimensions(5).unwrap();
        let oracle: Vec<usize> = (0..=5).map(|m| crate::derham::tau_kernel_dimension(2, m)).collect();
        // Degree 0 is spanned by the unit; the product search starts there.
        assert_eq!(dims, oracle);
    }

    #[test]
    fn gauge_identity_and_recovery() {
        let nc = NCConnection::build(&example_spec(), 3).unwrap();
        assert!(find_gauge(&nc, &nc).unwrap().is_identity());

        let mut c1 = TensorPoly::zero(2, 3);
        c1.add_term(Word(vec![1, 2]), p("x2", 2));
        c1.add_term(Word(vec![2, 2, 1]), p("1", 2));
        let c2 = tp(2, 3, &[(&[1, 1], "3"), (&[1, 2], "-1"), (&[2, 1], "-1")]);
        let psi = GaugeTransform::from_corrections(vec![c1, c2]).unwrap();
        let other = nc.conjugate(&psi).unwrap();
        assert!(other.verify_square_zero().all_zero());
        let phi = find_gauge(&nc, &other).unwrap();
        let back = nc.conjugate(&phi).unwrap();
        assert!(back.generator_difference(&other).iter().all(DgElement::is_zero));
    }

    #[test]
    fn gauge_between_different_christoffels() {
        let a = NCConnection::build(&example_spec(), 3).unwrap();
        let b = NCConnection::build(&spec(2, &[(2, 1, 2, "x1 - x2"), (1, 1, 1, "1")]), 3).unwrap();
        let phi = find_gauge(&a, &b).unwrap();
        let conj = a.conjugate(&phi).unwrap();
        assert!(conj.generator_difference(&b).iter().all(DgElement::is_zero));
        let inv = phi.inverse();
        assert!(inv.compose(&phi).is_identity());
    }
}
