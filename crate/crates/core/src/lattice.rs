//! Finite-dimensional lattices: nearest-point quantization, modulo reduction,
//! Voronoi-uniform dither and second moments.
//!
//! A lattice is stored as its generator matrix `G`; points are `G * i` for
//! integer column vectors `i`. Diagonal generators are handled by
//! componentwise rounding at any dimension. General generators use an exact
//! sphere search over the triangular factor of `G` and are limited to
//! dimension 8.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension accepted for non-diagonal generators.
pub const MAX_GENERAL_DIM: usize = 8;

const MEMBERSHIP_TOL: f64 = 1e-9;
const SINGULAR_TOL: f64 = 1e-12;
/// Relative tolerance under which two candidate distances count as a tie.
const TIE_TOL: f64 = 1e-10;

/// Monte Carlo (or exact) estimate of the per-dimension second moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub sigma2: f64,
    pub std_error: f64,
    /// Zero when the value is exact.
    pub sample_count: u64,
}

impl MomentEstimate {
    pub fn exact(sigma2: f64) -> Self {
        MomentEstimate {
            sigma2,
            std_error: 0.0,
            sample_count: 0,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.sample_count == 0
    }
}

/// A point of `V0`, the Voronoi cell of the origin.
///
/// Only produced by [`Lattice::mod_lattice`] and [`Lattice::sample_dither`],
/// so the wrapped vector always reduces to itself.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiSample(Vec<f64>);

impl VoronoiSample {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl AsRef<[f64]> for VoronoiSample {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Square matrix in JSON: nested rows, or one flat row-major list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub(crate) enum MatrixRepr {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixRepr {
    pub(crate) fn into_rows(self, n: usize) -> Option<Vec<Vec<f64>>> {
        match self {
            MatrixRepr::Rows(rows) => (rows.len() == n && rows.iter().all(|r| r.len() == n)).then_some(rows),
            MatrixRepr::Flat(v) => (v.len() == n * n).then(|| v.chunks(n.max(1)).map(<[f64]>::to_vec).collect()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LatticeRepr {
    dim: usize,
    gen: MatrixRepr,
    #[serde(default)]
    moment_cache: Option<MomentEstimate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "LatticeRepr", into = "LatticeRepr")]
pub struct Lattice {
    gen: DMatrix<f64>,
    inv: DMatrix<f64>,
    /// Upper-triangular factor of `G = Q R`, with `q_t = Q^T`.
    r: DMatrix<f64>,
    q_t: DMatrix<f64>,
    diagonal: bool,
    moment_cache: Option<MomentEstimate>,
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.gen == other.gen
    }
}

impl TryFrom<LatticeRepr> for Lattice {
    type Error = Error;

    fn try_from(repr: LatticeRepr) -> Result<Self> {
        let dim = repr.dim;
        let rows = repr
            .gen
            .into_rows(dim)
            .ok_or_else(|| Error::InvalidArgument(format!("gen must be {dim}x{dim}")))?;
        let mut lat = Lattice::from_rows(&rows)?;
        lat.moment_cache = repr.moment_cache;
        Ok(lat)
    }
}

impl From<Lattice> for LatticeRepr {
    fn from(lat: Lattice) -> Self {
        LatticeRepr {
            dim: lat.dim(),
            gen: MatrixRepr::Rows(lat.rows()),
            moment_cache: lat.moment_cache,
        }
    }
}

impl Lattice {
    pub fn new(gen: DMatrix<f64>) -> Result<Self> {
        let n = gen.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("lattice dimension must be positive".into()));
        }
        if gen.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: gen.ncols(),
            });
        }
        if gen.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("generator has non-finite entries".into()));
        }
        // Hadamard ratio: 1 for orthogonal bases, 0 for singular ones.
        let row_norms: f64 = gen.row_iter().map(|r| r.norm()).product();
        let det = gen.determinant();
        let ratio = if row_norms > 0.0 {
            det.abs() / row_norms
        } else {
            0.0
        };
        if !(ratio > SINGULAR_TOL) {
            return Err(Error::SingularGenerator(ratio));
        }
        let inv = gen
            .clone()
            .try_inverse()
            .ok_or(Error::SingularGenerator(ratio))?;
        let qr = gen.clone().qr();
        let r = qr.r();
        let q_t = qr.q().transpose();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || gen[(i, j)] == 0.0));
        Ok(Lattice {
            gen,
            inv,
            r,
            q_t,
            diagonal,
            moment_cache: None,
        })
    }

    /// Builds from a row-major nested array.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
        }
        Lattice::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn integer(n: usize) -> Result<Self> {
        Lattice::scaled_integer(n, 1.0)
    }

    /// `s * Z^n`.
    pub fn scaled_integer(n: usize, s: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("lattice dimension must be positive".into()));
        }
        Lattice::new(DMatrix::from_diagonal_element(n, n, s))
    }

    pub fn diagonal(widths: &[f64]) -> Result<Self> {
        Lattice::new(DMatrix::from_diagonal(&DVector::from_column_slice(widths)))
    }

    /// The hexagonal lattice A2 with basis (1, 0), (1/2, sqrt(3)/2).
    pub fn hexagonal() -> Self {
        let s = 3f64.sqrt() / 2.0;
        Lattice::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, s]))
            .expect("A2 generator is nonsingular")
    }

    pub fn dim(&self) -> usize {
        self.gen.nrows()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.gen
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.gen
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// Cell volume `|det G|`.
    pub fn volume(&self) -> f64 {
        self.gen.determinant().abs()
    }

    pub fn moment_cache(&self) -> Option<MomentEstimate> {
        self.moment_cache
    }

    pub fn with_moment_cache(mut self, cache: MomentEstimate) -> Self {
        self.moment_cache = Some(cache);
        self
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }

    pub fn point(&self, coords: &[i64]) -> Result<Vec<f64>> {
        self.check_dim(coords.len())?;
        let z = DVector::from_iterator(coords.len(), coords.iter().map(|&c| c as f64));
        Ok((&self.gen * z).iter().copied().collect())
    }

    /// Integer coordinates of `x` if it is a lattice point (within 1e-9).
    pub fn coords_of(&self, x: &[f64]) -> Result<Option<Vec<i64>>> {
        self.check_dim(x.len())?;
        let z = &self.inv * DVector::from_column_slice(x);
        let mut out = Vec::with_capacity(z.len());
        for v in z.iter() {
            let r = v.round();
            if (v - r).abs() > MEMBERSHIP_TOL {
                return Ok(None);
            }
            out.push(r as i64);
        }
        Ok(Some(out))
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        Ok(self.coords_of(x)?.is_some())
    }

    /// Integer coordinates of the nearest lattice point. Ties go to the
    /// lexicographically smallest coordinate vector.
    pub fn nearest_coords(&self, x: &[f64]) -> Result<Vec<i64>> {
        self.check_dim(x.len())?;
        if self.diagonal {
            return Ok(x
                .iter()
                .enumerate()
                .map(|(j, &v)| round_half_down(v / self.gen[(j, j)]))
                .collect());
        }
        if self.dim() > MAX_GENERAL_DIM {
            return Err(Error::UnsupportedDimension(self.dim()));
        }
        Ok(self.sphere_search(x))
    }

    pub fn nearest_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.nearest_coords(x)?;
        self.point(&z)
    }

    /// `x mod L = x - Q_L(x)`.
    pub fn mod_lattice(&self, x: &[f64]) -> Result<VoronoiSample> {
        let p = self.nearest_point(x)?;
        Ok(VoronoiSample(x.iter().zip(&p).map(|(a, b)| a - b).collect()))
    }

    /// Uniform sample over `V0`: uniform over the fundamental parallelepiped
    /// `G [0,1)^n`, then reduced modulo the lattice.
    pub fn sample_dither<R: Rng + ?Sized>(&self, rng: &mut R) -> VoronoiSample {
        let n = self.dim();
        let w = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let u: Vec<f64> = (&self.gen * w).iter().copied().collect();
        self.mod_lattice(&u)
            .expect("generator dimension was validated at construction")
    }

    /// Exact for diagonal generators, otherwise the cached value (if it used
    /// at least `samples` draws) or a fresh Monte Carlo estimate.
    pub fn second_moment<R: Rng + ?Sized>(
        &self,
        samples: usize,
        rng: &mut R,
    ) -> Result<MomentEstimate> {
        if let Some(m) = self.exact_second_moment() {
            return Ok(m);
        }
        if samples < 1000 {
            return Err(Error::InvalidArgument(format!(
                "second-moment estimation needs at least 1000 samples (got {samples})"
            )));
        }
        if let Some(cache) = self.moment_cache {
            if cache.sample_count >= samples as u64 {
                return Ok(cache);
            }
        }
        let n = self.dim() as f64;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let v = self.sample_dither(rng).norm_sq() / n;
            sum += v;
            sum_sq += v * v;
        }
        let m = samples as f64;
        let mean = sum / m;
        let var = (sum_sq / m - mean * mean).max(0.0) * m / (m - 1.0);
        Ok(MomentEstimate {
            sigma2: mean,
            std_error: (var / m).sqrt(),
            sample_count: samples as u64,
        })
    }

    /// Estimates the second moment and stores it in the cache.
    pub fn with_estimated_moment<R: Rng + ?Sized>(self, samples: usize, rng: &mut R) -> Result<Self> {
        let m = self.second_moment(samples, rng)?;
        Ok(self.with_moment_cache(m))
    }

    /// Closed-form `sum_j s_j^2 / 12 / n` for diagonal generators.
    pub fn exact_second_moment(&self) -> Option<MomentEstimate> {
        if !self.diagonal {
            return None;
        }
        let n = self.dim();
        let s: f64 = (0..n).map(|j| self.gen[(j, j)].powi(2) / 12.0).sum();
        Some(MomentEstimate::exact(s / n as f64))
    }

    /// Exact moment if available, otherwise the cache.
    pub fn known_second_moment(&self) -> Option<MomentEstimate> {
        self.exact_second_moment().or(self.moment_cache)
    }

    /// `G(L) = sigma^2 / V^(2/n)`, with its standard error.
    pub fn normalized_second_moment<R: Rng + ?Sized>(
        &self,
        samples: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        let m = self.second_moment(samples, rng)?;
        let scale = self.volume().powf(2.0 / self.dim() as f64);
        Ok((m.sigma2 / scale, m.std_error / scale))
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut lat = Lattice::new(&self.gen * factor)?;
        lat.moment_cache = self.moment_cache.map(|m| MomentEstimate {
            sigma2: m.sigma2 * factor * factor,
            std_error: m.std_error * factor * factor,
            sample_count: m.sample_count,
        });
        Ok(lat)
    }

    /// Rescales so that the second moment equals `target`.
    pub fn scale_to_second_moment(&self, target: f64) -> Result<Self> {
        if !(target > 0.0) || !target.is_finite() {
            return Err(Error::NonPositiveTarget(target));
        }
        let current = self.known_second_moment().ok_or(Error::MomentUnknown)?;
        let ratio = target / current.sigma2;
        if ratio == 1.0 {
            return Ok(self.clone());
        }
        self.scaled(ratio.sqrt())
    }

    /// Exhaustive search of all integer vectors inside the sphere whose
    /// radius is the Babai rounding distance.
    fn sphere_search(&self, x: &[f64]) -> Vec<i64> {
        let n = self.dim();
        let xv = DVector::from_column_slice(x);
        let babai: Vec<i64> = (&self.inv * &xv).iter().map(|v| v.round() as i64).collect();
        let d0 = self.dist_sq(&xv, &babai);
        let y = &self.q_t * &xv;

        let mut search = Search {
            r: &self.r,
            y: &y,
            radius_sq: d0 * (1.0 + 4.0 * TIE_TOL) + 1e-300,
            z: vec![0i64; n],
            best: babai,
            best_dist: d0,
            lat: self,
            x: &xv,
        };
        search.descend(n - 1, 0.0);
        search.best
    }

    fn dist_sq(&self, x: &DVector<f64>, z: &[i64]) -> f64 {
        let zv = DVector::from_iterator(z.len(), z.iter().map(|&c| c as f64));
        (x - &self.gen * zv).norm_squared()
    }
}

struct Search<'a> {
    r: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    radius_sq: f64,
    z: Vec<i64>,
    best: Vec<i64>,
    best_dist: f64,
    lat: &'a Lattice,
    x: &'a DVector<f64>,
}

impl Search<'_> {
    fn descend(&mut self, level: usize, partial: f64) {
        let n = self.z.len();
        let rkk = self.r[(level, level)];
        let mut acc = self.y[level];
        for j in level + 1..n {
            acc -= self.r[(level, j)] * self.z[j] as f64;
        }
        let center = acc / rkk;
        let rem = self.radius_sq - partial;
        if rem < 0.0 {
            return;
        }
        let half = rem.sqrt() / rkk.abs();
        let lo = (center - half).floor() as i64;
        let hi = (center + half).ceil() as i64;
        for zk in lo..=hi {
            let d = rkk * (zk as f64 - center);
            let p = partial + d * d;
            if p > self.radius_sq {
                continue;
            }
            self.z[level] = zk;
            if level == 0 {
                self.leaf();
            } else {
                self.descend(level - 1, p);
            }
        }
    }

    fn leaf(&mut self) {
        let d = self.lat.dist_sq(self.x, &self.z);
        let tol = TIE_TOL * self.best_dist.max(f64::MIN_POSITIVE);
        if d < self.best_dist - tol || (d <= self.best_dist + tol && self.z < self.best) {
            self.best.clone_from(&self.z);
            self.best_dist = d.min(self.best_dist);
        }
    }
}

/// Nearest integer, with exact halves going down.
pub(crate) fn round_half_down(t: f64) -> i64 {
    (t - 0.5).ceil() as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rounding_on_integer_lattices() {
        let z1 = Lattice::integer(1).unwrap();
        assert_eq!(z1.nearest_point(&[0.3]).unwrap(), vec![0.0]);
        let z2 = Lattice::integer(2).unwrap();
        assert_eq!(z2.nearest_point(&[1.7, -2.2]).unwrap(), vec![2.0, -2.0]);
    }

    #[test]
    fn half_ties_break_low() {
        let z1 = Lattice::integer(1).unwrap();
        assert_eq!(z1.nearest_coords(&[2.5]).unwrap(), vec![2]);
        assert_eq!(z1.nearest_coords(&[-2.5]).unwrap(), vec![-3]);
        // Same lattice through the general search path.
        let rot = Lattice::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(!rot.is_diagonal());
        // (0.5, 0) is equidistant from (0,0) [z=(0,0)] and (1,0) [z=(1,0)].
        assert_eq!(rot.nearest_coords(&[0.5, 0.0]).unwrap(), vec![0, 0]);
    }

    #[test]
    fn mod_examples() {
        let z1 = Lattice::integer(1).unwrap();
        assert!((z1.mod_lattice(&[0.3]).unwrap().as_slice()[0] - 0.3).abs() < 1e-15);
        assert!((z1.mod_lattice(&[0.7]).unwrap().as_slice()[0] + 0.3).abs() < 1e-15);
        let a2 = Lattice::hexagonal();
        let p = a2.point(&[3, -2]).unwrap();
        let m = a2.mod_lattice(&p).unwrap();
        assert!(m.norm_sq() < 1e-24);
    }

    #[test]
    fn a2_nearest_point_matches_enumeration() {
        let a2 = Lattice::hexagonal();
        let x = [0.9, 0.9];
        // Brute force over integer coordinates in [-3, 3]^2.
        let mut best = (f64::INFINITY, vec![0i64, 0]);
        for i in -3..=3 {
            for j in -3..=3 {
                let p = a2.point(&[i, j]).unwrap();
                let d = (x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2);
                if d < best.0 {
                    best = (d, vec![i, j]);
                }
            }
        }
        assert_eq!(a2.nearest_coords(&x).unwrap(), best.1);
        // (0.5, sqrt(3)/2) is the lattice point (0, 1).
        assert_eq!(best.1, vec![0, 1]);
    }

    #[test]
    fn dimension_errors() {
        let z2 = Lattice::integer(2).unwrap();
        assert!(matches!(
            z2.nearest_point(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
        let mut g = DMatrix::<f64>::identity(9, 9);
        g[(0, 1)] = 0.5;
        let big = Lattice::new(g).unwrap();
        assert!(matches!(
            big.nearest_point(&[0.0; 9]),
            Err(Error::UnsupportedDimension(9))
        ));
        // Diagonal generators have no dimension limit.
        let z20 = Lattice::integer(20).unwrap();
        assert_eq!(z20.nearest_point(&[0.4; 20]).unwrap(), vec![0.0; 20]);
    }

    #[test]
    fn singular_generator_rejected() {
        let r = Lattice::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(r, Err(Error::SingularGenerator(_))));
    }

    #[test]
    fn membership_round_trip() {
        let a2 = Lattice::hexagonal();
        for i in -4..=4 {
            for j in -4..=4 {
                let p = a2.point(&[i, j]).unwrap();
                assert_eq!(a2.coords_of(&p).unwrap(), Some(vec![i, j]));
            }
        }
        assert!(!a2.contains(&[0.3, 0.1]).unwrap());
    }

    #[test]
    fn exact_moments() {
        let s = (12.0f64 * 0.06).sqrt();
        let lat = Lattice::scaled_integer(1, s).unwrap();
        let m = lat.exact_second_moment().unwrap();
        assert!((m.sigma2 - 0.06).abs() < 1e-15);
        let z2 = Lattice::scaled_integer(2, 2.0).unwrap();
        assert!((z2.exact_second_moment().unwrap().sigma2 - 1.0 / 3.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (nsm, se) = Lattice::integer(1)
            .unwrap()
            .normalized_second_moment(1000, &mut rng)
            .unwrap();
        assert!((nsm - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn scaling_to_target() {
        let z1 = Lattice::integer(1).unwrap();
        let l = z1.scale_to_second_moment(0.06).unwrap();
        assert!((l.generator()[(0, 0)] - 0.848528137423857).abs() < 1e-12);
        let again = l.scale_to_second_moment(l.exact_second_moment().unwrap().sigma2).unwrap();
        assert_eq!(again.generator(), l.generator());
        let z2 = Lattice::integer(2).unwrap().scale_to_second_moment(1.0 / 3.0).unwrap();
        assert!((z2.generator() - DMatrix::from_diagonal_element(2, 2, 2.0)).norm() < 1e-12);
        assert!(matches!(z1.scale_to_second_moment(0.0), Err(Error::NonPositiveTarget(_))));
        assert!(matches!(
            Lattice::hexagonal().scale_to_second_moment(1.0),
            Err(Error::MomentUnknown)
        ));
    }

    #[test]
    fn dither_is_deterministic_per_stream() {
        let a2 = Lattice::hexagonal();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(a2.sample_dither(&mut r1), a2.sample_dither(&mut r2));
        }
    }

    #[test]
    fn json_shape() {
        let a2 = Lattice::hexagonal();
        let v = serde_json::to_value(&a2).unwrap();
        assert_eq!(v["dim"], 2);
        assert_eq!(v["gen"][0][1], 0.5);
        let back: Lattice = serde_json::from_value(v).unwrap();
        assert_eq!(back, a2);
        let bad = serde_json::json!({"dim": 2, "gen": [[1.0, 0.0]]});
        assert!(serde_json::from_value::<Lattice>(bad).is_err());
    }
}
