//! Module NC-connections for a trivialized rank-`r` bundle on the chart.
//!
//! A section is a column `v = sum_a s_a (x) v_a` with `v_a` in the algebra of
//! forms; the differential is `D^F v = Theta v + D v`, where `Theta` is an
//! `r x r` matrix of one-forms whose tensor-degree-0 part is the classical
//! connection matrix `omega`. Square-zero is `D(Theta) + Theta Theta = 0`.
//! `Theta_m` denotes the part of tensor degree `m - 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derham::{homotopy_h, tau, tau_kernel_basis, DgElement};
use crate::fedosov::{NCConnection, SquareZeroEntry, SquareZeroReport, Status};
use crate::ncseries::TensorPoly;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModuleError {
    #[error("rank must be positive")]
    ZeroRank,
    #[error("connection matrix must be {0}x{0}")]
    NotSquare(usize),
    #[error("omega[{row}][{col}] must have exterior degree 1 and tensor degree 0")]
    BadEntry { row: usize, col: usize },
    #[error("shape mismatch: (n={0}, d={1}) vs (n={2}, d={3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("modules live over different base connections")]
    DifferentBase,
    #[error("leading map has the wrong size or is not tau-closed")]
    BadLeading,
}

pub type DgMatrix = Vec<Vec<DgElement>>;

/// Classical connection on the trivial bundle: `nabla s_a = sum_b s_b omega[b][a]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleConnectionSpec {
    pub rank: usize,
    pub omega: DgMatrix,
}

impl ModuleConnectionSpec {
    pub fn new(omega: DgMatrix) -> Result<Self, ModuleError> {
        let rank = omega.len();
        if rank == 0 {
            return Err(ModuleError::ZeroRank);
        }
        for (b, row) in omega.iter().enumerate() {
            if row.len() != rank {
                return Err(ModuleError::NotSquare(rank));
            }
            for (a, x) in row.iter().enumerate() {
                if x.terms().any(|((s, w), _)| s.degree() != 1 || !w.is_empty()) {
                    return Err(ModuleError::BadEntry { row: b + 1, col: a + 1 });
                }
            }
        }
        Ok(ModuleConnectionSpec { rank, omega })
    }

    pub fn trivial(rank: usize, n: usize, d: usize) -> Self {
        ModuleConnectionSpec {
            rank,
            omega: vec![vec![DgElement::zero(n, d); rank]; rank],
        }
    }

    /// Re-truncates all entries.
    pub fn with_truncation(&self, d: usize) -> Self {
        ModuleConnectionSpec {
            rank: self.rank,
            omega: self
                .omega
                .iter()
                .map(|r| r.iter().map(|x| x.with_truncation(d)).collect())
                .collect(),
        }
    }
}

fn zero_matrix(rows: usize, cols: usize, n: usize, d: usize) -> DgMatrix {
    vec![vec![DgElement::zero(n, d); cols]; rows]
}

pub fn mat_mul(a: &DgMatrix, b: &DgMatrix) -> DgMatrix {
    let (n, d) = (a[0][0].n(), a[0][0].d());
    let cols = b[0].len();
    let mut out = zero_matrix(a.len(), cols, n, d);
    for (i, row) in a.iter().enumerate() {
        for j in 0..cols {
            for (k, x) in row.iter().enumerate() {
                if !x.is_zero() && !b[k][j].is_zero() {
                    out[i][j].add_assign(&x.mul(&b[k][j]));
                }
            }
        }
    }
    out
}

fn mat_add(a: &DgMatrix, b: &DgMatrix) -> DgMatrix {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x.add(y)).collect())
        .collect()
}

fn mat_map(a: &DgMatrix, f: impl Fn(&DgElement) -> DgElement + Sync) -> DgMatrix {
    a.par_iter()
        .map(|r| r.iter().map(&f).collect())
        .collect()
}

fn mat_is_zero(a: &DgMatrix) -> bool {
    a.iter().flatten().all(DgElement::is_zero)
}

/// The module differential `D^F = Theta + D` on `F (x) AA`.
#[derive(Debug, Clone)]
pub struct ModuleNCConnection {
    base: NCConnection,
    spec: ModuleConnectionSpec,
    /// `theta[m-1]`: tensor degree `m-1`, for `m = 1 .. d+1`.
    theta: Vec<DgMatrix>,
}

impl ModuleNCConnection {
    /// Recursion `Theta_{t+2} = -h([D_{>=1} Theta_{<=t+1} + Theta_{<=t+1}^2]_t)`
    /// for `t = 0 .. d-1`, so that `(D^F)^2` vanishes in tensor degrees
    /// `<= d-1`. The first correction is `-h(d omega + omega omega)`.
    pub fn build(base: &NCConnection, spec: &ModuleConnectionSpec) -> Result<Self, ModuleError> {
        let (n, d) = (base.n(), base.d());
        let spec = ModuleConnectionSpec::new(spec.omega.clone())?;
        for x in spec.omega.iter().flatten() {
            if (x.n(), x.d()) != (n, d) {
                return Err(ModuleError::ShapeMismatch(x.n(), x.d(), n, d));
            }
        }
        let mut theta = vec![spec.omega.clone()];
        for t in 0..d {
            let total = theta.iter().skip(1).fold(theta[0].clone(), |acc, m| mat_add(&acc, m));
            let curv = mat_add(
                &mat_map(&total, |x| base.apply_d_higher_in(x, t, t)),
                &mat_mul(&total, &total),
            );
            theta.push(mat_map(&curv, |x| homotopy_h(&x.tensor_component(t)).neg()));
        }
        Ok(ModuleNCConnection {
            base: base.clone(),
            spec,
            theta,
        })
    }

    /// Wraps given levels without checking anything.
    pub fn from_levels(base: &NCConnection, spec: ModuleConnectionSpec, theta: Vec<DgMatrix>) -> Self {
        ModuleNCConnection {
            base: base.clone(),
            spec,
            theta,
        }
    }

    pub fn base(&self) -> &NCConnection {
        &self.base
    }

    pub fn spec(&self) -> &ModuleConnectionSpec {
        &self.spec
    }

    pub fn rank(&self) -> usize {
        self.spec.rank
    }

    pub fn levels(&self) -> &[DgMatrix] {
        &self.theta
    }

    /// `nabla^F_m(s_a)`: column `a` of `Theta_m`.
    pub fn nabla(&self, m: usize, a: usize) -> Vec<DgElement> {
        self.theta[m - 1].iter().map(|r| r[a - 1].clone()).collect()
    }

    pub fn theta(&self) -> DgMatrix {
        self.theta
            .iter()
            .skip(1)
            .fold(self.theta[0].clone(), |acc, m| mat_add(&acc, m))
    }

    /// True when every `Theta_m`, `m >= 2`, vanishes.
    pub fn corrections_vanish(&self) -> bool {
        self.theta.iter().skip(1).all(mat_is_zero)
    }

    /// `D^F v = Theta v + D v` on a column of forms.
    pub fn apply(&self, v: &[DgElement]) -> Vec<DgElement> {
        let col: DgMatrix = v.iter().map(|x| vec![x.clone()]).collect();
        let tv = mat_mul(&self.theta(), &col);
        v.iter()
            .zip(tv)
            .map(|(x, t)| self.base.apply_d(x).add(&t[0]))
            .collect()
    }

    /// `(D^F)^2(s_a)` is column `a` of `D(Theta) + Theta Theta`; checked in
    /// tensor degrees `<= d-1`, degree `d` is reported as untracked. The
    /// residual shown is the first nonzero row.
    pub fn verify_square_zero(&self) -> SquareZeroReport {
        let curv = self.curvature();
        let d = self.base.d();
        let mut entries = Vec::new();
        for a in 0..self.rank() {
            for m in 0..d {
                let residual = curv
                    .iter()
                    .map(|row| row[a].tensor_component(m))
                    .find(|x| !x.is_zero());
                entries.push(SquareZeroEntry {
                    generator: a + 1,
                    tensor_degree: m,
                    status: if residual.is_some() { Status::Nonzero } else { Status::Zero },
                    residual,
                });
            }
            entries.push(SquareZeroEntry {
                generator: a + 1,
                tensor_degree: d,
                status: Status::Untracked,
                residual: None,
            });
        }
        SquareZeroReport { entries }
    }

    /// `D(Theta) + Theta Theta`.
    pub fn curvature(&self) -> DgMatrix {
        let theta = self.theta();
        mat_add(&mat_map(&theta, |x| self.base.apply_d(x)), &mat_mul(&theta, &theta))
    }

    /// Flat lifts `s~_a` of the basis sections: columns of exterior-degree-0
    /// series with `D^F s~_a = 0` in tensor degrees `<= d-1` and scalar part
    /// the unit vector.
    pub fn flat_basis(&self) -> Vec<Vec<TensorPoly>> {
        let (n, d) = (self.base.n(), self.base.d());
        let r = self.rank();
        let trivial = ModuleNCConnection::build(&self.base, &ModuleConnectionSpec::trivial(1, n, d))
            .expect("trivial module is valid");
        (0..r)
            .map(|a| {
                let lead: DgMatrix = (0..r)
                    .map(|b| {
                        vec![if a == b {
                            DgElement::from_tensor(&TensorPoly::one(n, d))
                        } else {
                            DgElement::zero(n, d)
                        }]
                    })
                    .collect();
                let psi = hom_lift(&trivial, self, &lead).expect("unit leading term is closed");
                psi.iter().map(|row| row[0].to_tensor()).collect()
            })
            .collect()
    }
}

fn hom_residual(f: &ModuleNCConnection, g: &ModuleNCConnection, psi: &DgMatrix) -> DgMatrix {
    let d_psi = mat_map(psi, |x| f.base.apply_d(x));
    let left = mat_mul(&g.theta(), psi);
    let right = mat_mul(psi, &f.theta());
    let neg_right: DgMatrix = right.iter().map(|r| r.iter().map(DgElement::neg).collect()).collect();
    mat_add(&mat_add(&d_psi, &left), &neg_right)
}

/// Extends a tau-closed leading map `F -> G (x) T^n` (an `r_G x r_F` matrix of
/// exterior-degree-0 elements) to `Psi` with `D Psi + Theta^G Psi - Psi Theta^F = 0`
/// in tensor degrees `<= d-1`.
pub fn hom_lift(
    f: &ModuleNCConnection,
    g: &ModuleNCConnection,
    leading: &DgMatrix,
) -> Result<DgMatrix, ModuleError> {
    if f.base.spec() != g.base.spec() || f.base.d() != g.base.d() {
        return Err(ModuleError::DifferentBase);
    }
    let d = f.base.d();
    if leading.len() != g.rank() || leading.iter().any(|r| r.len() != f.rank()) {
        return Err(ModuleError::BadLeading);
    }
    let Some(start) = leading
        .iter()
        .flatten()
        .filter_map(DgElement::lowest_tensor_degree)
        .min()
    else {
        return Ok(leading.clone());
    };
    if leading
        .iter()
        .flatten()
        .any(|x| !tau(x).is_zero() || x.terms().any(|((s, _), _)| s.degree() != 0))
    {
        return Err(ModuleError::BadLeading);
    }
    let mut psi = leading.clone();
    for m in start..d {
        let res = hom_residual(f, g, &psi);
        let step = mat_map(&res, |x| homotopy_h(&x.tensor_component(m)).neg());
        psi = mat_add(&psi, &step);
    }
    Ok(psi)
}

/// Whether `Psi` intertwines `D^F` and `D^G` in tensor degrees `<= d-1`.
pub fn hom_is_closed(f: &ModuleNCConnection, g: &ModuleNCConnection, psi: &DgMatrix) -> bool {
    let d = f.base.d();
    hom_residual(f, g, psi)
        .iter()
        .flatten()
        .all(|x| x.truncate_above(d - 1).is_zero())
}

/// Basis of the degree-`m` graded piece `Hom(F, G (x) U(Lie_+)_m)` at constant
/// coefficients: maps `s_a -> s_b (x) u` with `u` running over a basis of
/// the kernel of `tau` in tensor degree `m`.
pub fn hom_leading(
    f: &ModuleNCConnection,
    g: &ModuleNCConnection,
    m: usize,
) -> Result<Vec<DgMatrix>, ModuleError> {
    if f.base.spec() != g.base.spec() || f.base.d() != g.base.d() {
        return Err(ModuleError::DifferentBase);
    }
    let (n, d) = (f.base.n(), f.base.d());
    let kernel = tau_kernel_basis(n, m);
    let mut out = Vec::new();
    for b in 0..g.rank() {
        for a in 0..f.rank() {
            for u in &kernel {
                let mut mat = zero_matrix(g.rank(), f.rank(), n, d);
                mat[b][a] = DgElement::from_tensor(&TensorPoly::from_const(n, d, u));
                out.push(mat);
            }
        }
    }
    Ok(out)
}

/// An isomorphism `g: F -> G` of module NC-connections over the same base and
/// of the same rank, with leading term the identity:
/// `D g + Theta^G g - g Theta^F = 0` in tensor degrees `<= d-1`.
pub fn module_gauge(f: &ModuleNCConnection, g: &ModuleNCConnection) -> Result<DgMatrix, ModuleError> {
    if f.rank() != g.rank() {
        return Err(ModuleError::NotSquare(f.rank()));
    }
    let (n, d) = (f.base.n(), f.base.d());
    let r = f.rank();
    let id: DgMatrix = (0..r)
        .map(|b| {
            (0..r)
                .map(|a| {
                    if a == b {
                        DgElement::from_tensor(&TensorPoly::one(n, d))
                    } else {
                        DgElement::zero(n, d)
                    }
                })
                .collect()
        })
        .collect();
    hom_lift(f, g, &id)
}

impl Serialize for ModuleNCConnection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct J<'a> {
            rank: usize,
            levels: &'a [DgMatrix],
        }
        J {
            rank: self.rank(),
            levels: &self.theta,
        }
        .serialize(s)
    }
}
