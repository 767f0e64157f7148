//! Nested lattice pairs, coset leaders and the Construction-A generator.

use std::collections::{HashSet, VecDeque};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;

const INTEGRAL_TOL: f64 = 1e-9;

/// Enumeration guard for [`NestedPair::coset_leaders`].
pub const MAX_COSETS: u64 = 4096;

/// `coarse ⊂ fine`, with `G_coarse = G_fine * J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedPair {
    pub fine: Lattice,
    pub coarse: Lattice,
    pub nesting_matrix: Vec<Vec<i64>>,
}

/// `J = G_fine^-1 G_coarse` rounded to integers, if it is integral.
fn nesting_matrix(fine: &Lattice, coarse: &Lattice) -> Result<Option<Vec<Vec<i64>>>> {
    if fine.dim() != coarse.dim() {
        return Err(Error::DimensionMismatch {
            expected: fine.dim(),
            actual: coarse.dim(),
        });
    }
    let inv = fine
        .generator()
        .clone()
        .try_inverse()
        .ok_or(Error::SingularGenerator(0.0))?;
    let j = inv * coarse.generator();
    let mut out = Vec::with_capacity(j.nrows());
    for row in j.row_iter() {
        let mut r = Vec::with_capacity(row.len());
        for &v in row.iter() {
            let k = v.round();
            if (v - k).abs() > INTEGRAL_TOL {
                return Ok(None);
            }
            r.push(k as i64);
        }
        out.push(r);
    }
    Ok(Some(out))
}

/// True iff `G_fine^-1 G_coarse` is integral and `|det| >= 1`.
pub fn verify_nesting(fine: &Lattice, coarse: &Lattice) -> Result<bool> {
    Ok(match nesting_matrix(fine, coarse)? {
        Some(j) => int_det(&j).unsigned_abs() as f64 > 1.0 - INTEGRAL_TOL,
        None => false,
    })
}

/// Exact determinant of a small integer matrix (fraction-free elimination).
pub fn int_det(m: &[Vec<i64>]) -> i64 {
    let n = m.len();
    if n == 0 {
        return 1;
    }
    let mut a: Vec<Vec<i128>> = m
        .iter()
        .map(|r| r.iter().map(|&v| v as i128).collect())
        .collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if a[k][k] == 0 {
            match (k + 1..n).find(|&i| a[i][k] != 0) {
                Some(i) => {
                    a.swap(i, k);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
        }
        prev = a[k][k];
    }
    (sign * a[n - 1][n - 1]) as i64
}

impl NestedPair {
    pub fn new(fine: Lattice, coarse: Lattice) -> Result<Self> {
        let j = nesting_matrix(&fine, &coarse)?.ok_or(Error::NotNested)?;
        if int_det(&j) == 0 {
            return Err(Error::NotNested);
        }
        Ok(NestedPair {
            fine,
            coarse,
            nesting_matrix: j,
        })
    }

    pub fn dim(&self) -> usize {
        self.fine.dim()
    }

    /// `|det J|`, the number of cosets of the coarse lattice in the fine one.
    pub fn index(&self) -> u64 {
        int_det(&self.nesting_matrix).unsigned_abs()
    }

    /// `(V_coarse / V_fine)^(1/n)`.
    pub fn nesting_ratio(&self) -> f64 {
        (self.index() as f64).powf(1.0 / self.dim() as f64)
    }

    pub fn verify(&self) -> Result<bool> {
        verify_nesting(&self.fine, &self.coarse)
    }

    /// `fine ∩ V0(coarse)`: one representative per coset, reduced modulo the
    /// coarse lattice (boundary ties follow the nearest-point tie-break).
    ///
    /// Found by closing `{0}` under addition of the fine basis vectors.
    pub fn coset_leaders(&self) -> Result<Vec<Vec<f64>>> {
        let index = self.index();
        if index > MAX_COSETS {
            return Err(Error::TooManyCosets {
                index,
                limit: MAX_COSETS,
            });
        }
        let n = self.dim();
        let basis: Vec<Vec<f64>> = (0..n)
            .map(|j| self.fine.generator().column(j).iter().copied().collect())
            .collect();
        let origin = vec![0.0; n];
        let mut seen: HashSet<Vec<i64>> = HashSet::new();
        let mut leaders = Vec::new();
        let mut queue = VecDeque::new();
        seen.insert(self.fine_coords(&origin)?);
        leaders.push(origin.clone());
        queue.push_back(origin);
        while let Some(x) = queue.pop_front() {
            for b in &basis {
                for sign in [1.0, -1.0] {
                    let y: Vec<f64> = x.iter().zip(b).map(|(a, v)| a + sign * v).collect();
                    let red = self.coarse.mod_lattice(&y)?.into_vec();
                    let key = self.fine_coords(&red)?;
                    if seen.insert(key) {
                        leaders.push(red.clone());
                        queue.push_back(red);
                    }
                }
            }
        }
        Ok(leaders)
    }

    fn fine_coords(&self, x: &[f64]) -> Result<Vec<i64>> {
        self.fine
            .coords_of(x)?
            .ok_or_else(|| Error::InvalidArgument("point left the fine lattice".into()))
    }
}

/// Output of the Construction-A generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstructionA {
    pub pair: NestedPair,
    pub p: u64,
    /// The drawn k x n matrix over Z_p.
    pub code_matrix: Vec<Vec<u64>>,
    /// Rank of the code matrix over Z_p.
    pub rank: usize,
    /// `p^rank`.
    pub coset_count: u64,
}

impl ConstructionA {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.code_matrix.len()
    }

    pub fn nesting_ratio(&self) -> f64 {
        (self.coset_count as f64).powf(1.0 / self.pair.dim() as f64)
    }
}

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= p {
        if p % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Draws a uniform k x n matrix over Z_p and builds the fine lattice
/// `G_coarse * (C/p + Z^n)` from its row space `C`.
pub fn construction_a<R: Rng + ?Sized>(
    coarse: &Lattice,
    p: u64,
    k: usize,
    rng: &mut R,
) -> Result<ConstructionA> {
    if !is_prime(p) {
        return Err(Error::InvalidPrime(p));
    }
    let n = coarse.dim();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "code dimension k must satisfy 1 <= k < n = {n} (got {k})"
        )));
    }
    let code: Vec<Vec<u64>> = (0..k)
        .map(|_| (0..n).map(|_| rng.random_range(0..p)).collect())
        .collect();
    construction_a_from_code(coarse, p, code)
}

/// Deterministic half of [`construction_a`] for a given code matrix.
pub fn construction_a_from_code(
    coarse: &Lattice,
    p: u64,
    code: Vec<Vec<u64>>,
) -> Result<ConstructionA> {
    if !is_prime(p) {
        return Err(Error::InvalidPrime(p));
    }
    let n = coarse.dim();
    for row in &code {
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: row.len(),
            });
        }
    }
    let (rref, pivots) = row_reduce_mod_p(&code, p);
    let rank = pivots.len();

    // Column j of H is the reduced codeword with pivot j, or p * e_j when j
    // is not a pivot. H is lower triangular with det p^(n - rank), and its
    // columns generate {x in Z^n : x mod p in C}.
    let mut h = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        match pivots.iter().position(|&pc| pc == j) {
            Some(r) => {
                for i in 0..n {
                    h[(i, j)] = rref[r][i] as f64;
                }
            }
            None => h[(j, j)] = p as f64,
        }
    }
    let fine_gen = coarse.generator() * h / p as f64;
    let fine = Lattice::new(fine_gen)?;
    let pair = NestedPair::new(fine, coarse.clone())?;
    let coset_count = p.pow(rank as u32);
    debug_assert_eq!(pair.index(), coset_count);
    Ok(ConstructionA {
        pair,
        p,
        code_matrix: code,
        rank,
        coset_count,
    })
}

fn mod_pow(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut acc = 1u64;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % p;
        }
        b = b * b % p;
        e >>= 1;
    }
    acc
}

/// Reduced row echelon form over Z_p; returns nonzero rows and pivot columns.
fn row_reduce_mod_p(m: &[Vec<u64>], p: u64) -> (Vec<Vec<u64>>, Vec<usize>) {
    let mut a: Vec<Vec<u64>> = m.iter().map(|r| r.iter().map(|v| v % p).collect()).collect();
    let rows = a.len();
    let cols = a.first().map_or(0, Vec::len);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(piv) = (r..rows).find(|&i| a[i][c] != 0) else {
            continue;
        };
        a.swap(r, piv);
        let inv = mod_pow(a[r][c], p - 2, p);
        for v in a[r].iter_mut() {
            *v = *v * inv % p;
        }
        for i in 0..rows {
            if i != r && a[i][c] != 0 {
                let f = a[i][c];
                for j in 0..cols {
                    a[i][j] = (a[i][j] + p - f * a[r][j] % p) % p;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    a.truncate(r);
    (a, pivots)
}
