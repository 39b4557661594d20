//! Exact symbolic engine for degree-truncated NC-smooth thickenings of affine
//! charts.
//!
//! The crate builds, from torsion-free Christoffel data on `k[x1..xn]`, the
//! square-zero derivation `D = D0 + D1 + ... + Dd` on
//! `Omega^* (x) T^{<=d}(Omega^1)`, its flat sections, module analogues, gauge
//! transformations, and a small Koszul-duality / homological-perturbation
//! toolkit. All arithmetic is over exact rationals.

pub mod cli;
pub mod derham;
pub mod fedosov;
pub mod koszul;
pub mod linalg;
pub mod lyndon;
pub mod ncmodule;
pub mod ncseries;
pub mod ring;

pub use derham::{DgElement, GeneratorRule, Wedge};
pub use fedosov::{ConnectionSpec, FlatSection, GaugeTransform, NCConnection};
pub use lyndon::{ConstTensor, LyndonWord, PBWMonomial, Word};
pub use ncmodule::{ModuleConnectionSpec, ModuleNCConnection};
pub use ncseries::{PBWSeries, TensorPoly, YPoly};
pub use ring::{Poly, Rational};
