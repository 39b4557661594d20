#![allow(dead_code)]

use std::collections::BTreeMap;

use ncthick::derham::{DgElement, Wedge};
use ncthick::fedosov::ConnectionSpec;
use ncthick::koszul::{Basis, MinimalAInfinity, Retraction};
use ncthick::linalg::Matrix;
use ncthick::lyndon::Word;
use ncthick::ring::{rat, ratio, Poly};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random polynomial of total degree `<= deg` with small integer coefficients.
pub fn random_poly(rng: &mut ChaCha8Rng, n: usize, deg: u32) -> Poly {
    let mut terms = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        let mut e = vec![0u32; n];
        let mut left = rng.gen_range(0..=deg);
        while left > 0 {
            e[rng.gen_range(0..n)] += 1;
            left -= 1;
        }
        terms.push((e, rat(rng.gen_range(-2..=2))));
    }
    Poly::from_terms(n, terms)
}

/// Random torsion-free Christoffel symbols of degree `<= 2`.
pub fn random_spec(rng: &mut ChaCha8Rng, n: usize) -> ConnectionSpec {
    let mut table: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for k in 1..=n {
        for i in 1..=n {
            for j in i..=n {
                if rng.gen_bool(0.4) {
                    let p = random_poly(rng, n, 2);
                    if !p.is_zero() {
                        table
                            .entry(k.to_string())
                            .or_default()
                            .insert(format!("{i},{j}"), p.to_string());
                    }
                }
            }
        }
    }
    ConnectionSpec::from_table(n, &table).unwrap()
}

pub fn table_spec(n: usize, entries: &[(usize, usize, usize, &str)]) -> ConnectionSpec {
    let mut table: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for &(k, i, j, e) in entries {
        table
            .entry(k.to_string())
            .or_default()
            .insert(format!("{i},{j}"), e.to_string());
    }
    ConnectionSpec::from_table(n, &table).unwrap()
}

/// Random element with words of length `<= max_len` and any exterior degree.
pub fn random_element(rng: &mut ChaCha8Rng, n: usize, d: usize, max_len: usize) -> DgElement {
    let mut x = DgElement::zero(n, d);
    for _ in 0..rng.gen_range(1..=4) {
        let wedge = Wedge(rng.gen_range(0..(1u16 << n)));
        let len = rng.gen_range(0..=max_len);
        let word = Word((0..len).map(|_| rng.gen_range(1..=n as u8)).collect());
        x.add_term(wedge, word, random_poly(rng, n, 2));
    }
    x
}

/// Random one-form `sum_i p_i dx_i` in tensor degree 0.
pub fn random_one_form(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DgElement {
    let mut x = DgElement::zero(n, d);
    for i in 1..=n {
        if rng.gen_bool(0.6) {
            x.add_term(Wedge::single(i), Word::empty(), random_poly(rng, n, 2));
        }
    }
    x
}

/// Exterior algebra on `n` generators; `E^p` has the increasing `p`-subsets in
/// lexicographic order as basis.
pub fn exterior(n: usize) -> MinimalAInfinity {
    let subsets: Vec<Vec<Vec<usize>>> = (0..=n)
        .map(|p| {
            let mut v: Vec<Vec<usize>> = (0u32..1 << n)
                .filter(|m| m.count_ones() as usize == p)
                .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
                .collect();
            v.sort();
            v
        })
        .collect();
    let mut a = MinimalAInfinity::new(subsets.iter().map(Vec::len).collect()).unwrap();
    for p in 1..=n {
        for q in 1..=n - p {
            for (i, s) in subsets[p].iter().enumerate() {
                for (j, t) in subsets[q].iter().enumerate() {
                    if s.iter().any(|x| t.contains(x)) {
                        continue;
                    }
                    let all: Vec<usize> = s.iter().chain(t).copied().collect();
                    let inversions = (0..all.len())
                        .flat_map(|x| (x + 1..all.len()).map(move |y| (x, y)))
                        .filter(|&(x, y)| all[x] > all[y])
                        .count();
                    let mut sorted = all.clone();
                    sorted.sort();
                    let k = subsets[p + q].iter().position(|u| *u == sorted).unwrap();
                    let c = if inversions % 2 == 0 { rat(1) } else { rat(-1) };
                    a.set(&[Basis::new(p, i), Basis::new(q, j)], Basis::new(p + q, k), c)
                        .unwrap();
                }
            }
        }
    }
    a
}

pub fn zeros(r: usize, c: usize) -> Matrix {
    vec![vec![rat(0); c]; r]
}

/// Retraction of `H (+) pairs` onto `H`: `d b_j = a_j`, `h a_j = -b_j`, each
/// pair on one filtration level.
pub fn toy_retraction(h_levels: &[usize], pair_levels: &[usize]) -> Retraction {
    let small = h_levels.len();
    let big = small + 2 * pair_levels.len();
    let mut d = zeros(big, big);
    let mut h = zeros(big, big);
    let mut i = zeros(big, small);
    let mut p = zeros(small, big);
    let mut filt = h_levels.to_vec();
    for k in 0..small {
        i[k][k] = rat(1);
        p[k][k] = rat(1);
    }
    for (j, &lvl) in pair_levels.iter().enumerate() {
        let (a, b) = (small + 2 * j, small + 2 * j + 1);
        d[a][b] = rat(1);
        h[b][a] = rat(-1);
        filt.push(lvl);
        filt.push(lvl);
    }
    Retraction::new(d, zeros(small, small), i, p, h, filt).unwrap()
}

/// Random strictly filtration-raising matrix.
pub fn random_raising(rng: &mut ChaCha8Rng, filt: &[usize]) -> Matrix {
    let n = filt.len();
    let mut m = zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            if filt[r] > filt[c] && rng.gen_bool(0.6) {
                m[r][c] = ratio(rng.gen_range(-3..=3), rng.gen_range(1..=2));
            }
        }
    }
    m
}

pub fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}
