//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use ncthick::derham::{basis_elements, homotopy_h, tau, tau_kernel_dimension, DgElement};
use ncthick::fedosov::{find_gauge, ConnectionSpec, NCConnection};
use ncthick::koszul::{
    conjugation_perturbation, perturbation_series, relation_ideal, MinimalAInfinity,
};
use ncthick::lyndon::{ConstTensor, Word};
use ncthick::ncmodule::{ModuleConnectionSpec, ModuleNCConnection};
use ncthick::ncseries::TensorPoly;
use ncthick::ring::{rat, ratio, Poly};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Connections shared by the conjugation and commutator-law criteria.
fn built_connections() -> Vec<(String, NCConnection)> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut out = vec![
        ("flat n=2 d=4".to_string(), NCConnection::build(&ConnectionSpec::flat(2), 4).unwrap()),
        ("flat n=3 d=3".to_string(), NCConnection::build(&ConnectionSpec::flat(3), 3).unwrap()),
        (
            "nonflat n=2 d=4".to_string(),
            NCConnection::build(&table_spec(2, &[(1, 2, 2, "x1"), (2, 1, 2, "x2^2 + 1")]), 4).unwrap(),
        ),
    ];
    for (n, d) in [(2, 5), (3, 3)] {
        let spec = random_spec(&mut rng, n);
        out.push((format!("random n={n} d={d}"), NCConnection::build(&spec, d).unwrap()));
    }
    out
}

fn criterion_1() -> Outcome {
    let mut count = 0;
    for n in [2, 3] {
        // Truncation 6 so that h of a degree-5 element is not cut off.
        for q in 1..=n {
            for m in 0..=5 {
                for x in basis_elements(n, 6, q, m) {
                    let y = homotopy_h(&tau(&x)).add(&tau(&homotopy_h(&x)));
                    ensure(y == x, || format!("fails on {x} (n={n})"))?;
                    count += 1;
                }
            }
        }
    }
    Ok(format!("{count} basis elements, n=2,3, tensor degree <= 5"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shapes = [(2, 3), (2, 4), (2, 5), (3, 3), (3, 4)];
    let mut checked = 0;
    for t in 0..20 {
        let (n, d) = if t == 19 { (3, 5) } else { shapes[t % shapes.len()] };
        let spec = random_spec(&mut rng, n);
        let nc = NCConnection::build(&spec, d).map_err(|e| e.to_string())?;
        let report = nc.verify_square_zero();
        if let Some(f) = report.failures().next() {
            return Err(format!(
                "spec {t} (n={n}, d={d}): D^2 nonzero on generator {} in degree {}",
                f.generator, f.tensor_degree
            ));
        }
        checked += 1;
    }
    for (n, d) in [(2, 5), (3, 4)] {
        let nc = NCConnection::build(&ConnectionSpec::flat(n), d).unwrap();
        let higher = nc.nabla_levels().iter().skip(1).flatten().all(DgElement::is_zero);
        ensure(higher, || format!("flat n={n}: nonzero nabla_(i>=2)"))?;
    }
    Ok(format!("{checked} random specs all-zero through d-1; flat specs have no corrections"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut total = 0;
    for (name, nc) in built_connections() {
        let (n, d) = (nc.n(), nc.d());
        let c = nc.conjugator();
        for _ in 0..50 {
            let x = random_element(&mut rng, n, d, d);
            let lhs = c.phi(&nc.apply_d(&x));
            let rhs = tau(&c.phi(&x));
            ensure(lhs.sub(&rhs).truncate_above(d - 1).is_zero(), || {
                format!("{name}: Phi D != D0 Phi on {x}")
            })?;
            let y = x.filter(|s, _| s.degree() >= 1);
            let hd = c.h_d(&nc.apply_d(&y)).add(&nc.apply_d(&c.h_d(&y)));
            ensure(hd.sub(&y).truncate_above(d - 1).is_zero(), || {
                format!("{name}: h_D D + D h_D != id on {y}")
            })?;
            total += 1;
        }
    }
    Ok(format!("{total} random elements over 5 connections"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut count = 0;
    for (n, d) in [(2, 4), (3, 3)] {
        let nc = NCConnection::build(&ConnectionSpec::flat(n), d).unwrap();
        for i in 1..=n {
            let s = nc.sigma(&Poly::var(n, i).unwrap());
            let expect = TensorPoly::scalar(n, d, Poly::var(n, i).unwrap()).sub(&TensorPoly::letter(n, d, i as u8));
            ensure(*s.value() == expect, || format!("sigma(x{i}) = {}", s.value()))?;
        }
        let c = nc.conjugator();
        for _ in 0..20 {
            let f = random_poly(&mut rng, n, 3);
            let s = nc.sigma(&f);
            let image = c.phi(&DgElement::from_tensor(s.value()));
            ensure(tau(&image).truncate_above(d - 1).is_zero(), || {
                format!("Phi(sigma({f})) not in ker D0")
            })?;
            count += 1;
        }
    }
    Ok(format!("sigma(x_i) = x_i - e_i; {count} Phi-images of lifts in ker D0"))
}

fn anti_gradient(f: &Poly, g: &Poly, n: usize, d: usize) -> TensorPoly {
    let mut out = TensorPoly::zero(n, d);
    for i in 1..=n {
        for j in 1..=n {
            let a = f.partial(i).unwrap().checked_mul(&g.partial(j).unwrap()).unwrap();
            let b = g.partial(i).unwrap().checked_mul(&f.partial(j).unwrap()).unwrap();
            out.add_term(Word(vec![i as u8, j as u8]), a.checked_sub(&b).unwrap());
        }
    }
    out
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut count = 0;
    for (name, nc) in built_connections() {
        let (n, d) = (nc.n(), nc.d());
        for _ in 0..5 {
            let (f, g) = (random_poly(&mut rng, n, 2), random_poly(&mut rng, n, 2));
            let lhs = nc.sigma(&f).value().mul(nc.sigma(&g).value());
            let rest = lhs
                .sub(nc.sigma(&(&f * &g)).value())
                .sub(&anti_gradient(&f, &g, n, d).scale(&ratio(1, 2)));
            ensure(rest.truncate_above(2).is_zero(), || {
                format!("{name}: law fails for f={f}, g={g}: {}", rest.truncate_above(2))
            })?;
            count += 1;
        }
    }
    Ok(format!("{count} random pairs over 5 connections, degrees <= 2 vanish"))
}

fn criterion_6() -> Outcome {
    let nc = NCConnection::build(&ConnectionSpec::flat(2), 5).unwrap();
    let dims = nc.leading_term_dimensions(5).map_err(|e| e.to_string())?;
    let oracle: Vec<usize> = (0..=5).map(|m| tau_kernel_dimension(2, m)).collect();
    ensure(dims == vec![1, 0, 1, 2, 4, 8] && oracle == dims, || {
        format!("n=2: leading {dims:?}, nullity {oracle:?}")
    })?;
    let nonflat = NCConnection::build(&table_spec(2, &[(1, 2, 2, "x1")]), 5).unwrap();
    let dims_nf = nonflat.leading_term_dimensions(5).map_err(|e| e.to_string())?;
    ensure(dims_nf == dims, || format!("nonflat n=2: {dims_nf:?}"))?;
    let nc3 = NCConnection::build(&ConnectionSpec::flat(3), 4).unwrap();
    let dims3 = nc3.leading_term_dimensions(4).map_err(|e| e.to_string())?;
    let oracle3: Vec<usize> = (0..=4).map(|m| tau_kernel_dimension(3, m)).collect();
    ensure(dims3 == oracle3, || format!("n=3: leading {dims3:?}, nullity {oracle3:?}"))?;
    Ok(format!("n=2 {dims:?}; n=3 {dims3:?} agree with the tau nullity"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = 3;
    let mut pairs = 0;
    while pairs < 5 {
        let n = if pairs < 3 { 2 } else { 3 };
        let (sa, sb) = (random_spec(&mut rng, n), random_spec(&mut rng, n));
        if sa == sb {
            continue;
        }
        let a = NCConnection::build(&sa, d).unwrap();
        let b = NCConnection::build(&sb, d).unwrap();
        let phi = find_gauge(&a, &b).map_err(|e| e.to_string())?;
        let conj = a.conjugate(&phi).map_err(|e| e.to_string())?;
        for (k, diff) in conj.generator_difference(&b).iter().enumerate() {
            ensure(diff.truncate_above(d - 1).is_zero(), || {
                format!("pair {pairs}: generator {} differs", k + 1)
            })?;
        }
        pairs += 1;
    }
    Ok("5 pairs, differentials agree on generators through degree 2".into())
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = 3;
    let bases = [
        ("flat", NCConnection::build(&ConnectionSpec::flat(2), d).unwrap()),
        ("nonflat", NCConnection::build(&table_spec(2, &[(1, 2, 2, "x1"), (2, 1, 1, "x2")]), d).unwrap()),
        ("random n=3", NCConnection::build(&random_spec(&mut rng, 3), d).unwrap()),
    ];
    let mut count = 0;
    for (name, base) in &bases {
        let n = base.n();
        for rank in 1..=2 {
            for _ in 0..3 {
                let omega: Vec<Vec<DgElement>> = (0..rank)
                    .map(|_| (0..rank).map(|_| random_one_form(&mut rng, n, d)).collect())
                    .collect();
                let spec = ModuleConnectionSpec::new(omega).unwrap();
                let mc = ModuleNCConnection::build(base, &spec).map_err(|e| e.to_string())?;
                if let Some(f) = mc.verify_square_zero().failures().next() {
                    return Err(format!(
                        "{name} rank {rank}: (D^F)^2 nonzero on s_{} in degree {}",
                        f.generator, f.tensor_degree
                    ));
                }
                count += 1;
            }
        }
    }
    // Flat connection matrices over the flat base: exact one-forms in rank
    // one, a constant matrix times dx1 in rank two.
    let flat = &bases[0].1;
    let g = Poly::parse("x1^2*x2 - 3*x2", 2).unwrap();
    let rank1 = vec![vec![DgElement::differential(&g, d)]];
    let mut a = DgElement::zero(2, d);
    a.add_term(ncthick::Wedge::single(1), Word::empty(), Poly::constant(2, rat(2)));
    let mut b = DgElement::zero(2, d);
    b.add_term(ncthick::Wedge::single(1), Word::empty(), Poly::constant(2, rat(-1)));
    let rank2 = vec![vec![a.clone(), b], vec![DgElement::zero(2, d), a]];
    for omega in [rank1, rank2] {
        let mc = ModuleNCConnection::build(flat, &ModuleConnectionSpec::new(omega).unwrap()).unwrap();
        ensure(mc.corrections_vanish(), || "flat-over-flat input has corrections".into())?;
    }
    Ok(format!("{count} random matrices (rank 1, 2) square to zero; flat-over-flat has no corrections"))
}

fn commutator(i: u8, j: u8) -> ConstTensor {
    let mut t = ConstTensor::word(Word(vec![i, j]));
    t.add_term(Word(vec![j, i]), rat(-1));
    t
}

fn span_rank(xs: &[ConstTensor], n: usize) -> usize {
    let words = Word::all_of_length(n, 2);
    let m: Vec<Vec<_>> = xs.iter().map(|x| words.iter().map(|w| x.coeff(w)).collect()).collect();
    ncthick::linalg::rank(&m)
}

fn criterion_9() -> Outcome {
    for n in [2usize, 3] {
        let a = exterior(n).validated(3).map_err(|e| e.to_string())?;
        let pres = relation_ideal(&a, 4);
        let rels: Vec<ConstTensor> = pres.relations.iter().map(|r| r.to_const().unwrap()).collect();
        let comms: Vec<ConstTensor> = (1..=n as u8)
            .flat_map(|i| (i + 1..=n as u8).map(move |j| commutator(i, j)))
            .collect();
        let both: Vec<ConstTensor> = rels.iter().chain(&comms).cloned().collect();
        let k = binom(n, 2);
        ensure(span_rank(&rels, n) == k && span_rank(&both, n) == k, || {
            format!("n={n}: relations do not span the commutators")
        })?;
        let expect: Vec<usize> = (0..=4).map(|m| binom(n + m - 1, m)).collect();
        ensure(pres.quotient_dims == expect, || {
            format!("n={n}: quotient dims {:?}, expected {expect:?}", pres.quotient_dims)
        })?;
    }
    for n in [2usize, 3] {
        let a = MinimalAInfinity::new(vec![1, n]).unwrap().validated(3).unwrap();
        let pres = relation_ideal(&a, 4);
        let expect: Vec<usize> = (0..=4).map(|m| n.pow(m as u32)).collect();
        ensure(pres.relations.is_empty() && pres.quotient_dims == expect, || {
            format!("curve n={n}: {:?}", pres.quotient_dims)
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for t in 0..10 {
        let hs: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..3)).collect();
        let ps: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..3)).collect();
        let r = toy_retraction(&hs, &ps);
        let delta = conjugation_perturbation(&r, &random_raising(&mut rng, &r.filtration)).unwrap();
        let out = perturbation_series(&r, &delta, 5).map_err(|e| e.to_string())?;
        ensure(out.verify(&r, &delta), || format!("toy complex {t}: perturbed data fails"))?;
    }
    Ok("exterior n=2,3 give commutators and C(n+m-1,m); E^2=0 gives n^m; 10 perturbations square to zero".into())
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn run_cli(args: &[String], threads: usize) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ncthick"))
        .args(args)
        .arg("--threads")
        .arg(threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} exited with {:?}", out.status.code())
    })?;
    Ok(out.stdout)
}

fn criterion_10() -> Outcome {
    let spec = |f: &str| data(f).display().to_string();
    let runs: Vec<Vec<String>> = vec![
        vec!["thicken".into(), "--spec".into(), spec("nonflat2.json")],
        vec!["mul".into(), "x1^2".into(), "x1*x2".into(), "--spec".into(), spec("nonflat2.json")],
        vec!["bracket".into(), "x1".into(), "x2".into(), "--spec".into(), spec("flat2.json")],
        vec!["module".into(), "--spec".into(), spec("module2.json")],
        vec!["gauge".into(), "--spec".into(), spec("flat2.json"), "--other".into(), spec("nonflat2.json"), "--truncation".into(), "3".into()],
        vec!["koszul".into(), "--spec".into(), spec("exterior2.json")],
        vec!["dims".into(), "--n".into(), "2".into(), "--max".into(), "5".into()],
    ];
    for args in &runs {
        let reference = run_cli(args, 1)?;
        for threads in [1, 8, 8] {
            let again = run_cli(args, threads)?;
            ensure(again == reference, || format!("{args:?} differs under --threads {threads}"))?;
        }
    }
    Ok(format!("{} commands byte-identical under --threads 1 and 8", runs.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("homotopy identity", criterion_1),
        ("Fedosov recursion", criterion_2),
        ("perturbation conjugation", criterion_3),
        ("flat local model", criterion_4),
        ("degree-2 commutator law", criterion_5),
        ("graded-piece dimensions", criterion_6),
        ("gauge uniqueness", criterion_7),
        ("module recursion", criterion_8),
        ("Koszul duals and perturbation", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
