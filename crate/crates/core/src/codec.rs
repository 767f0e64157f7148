//! Monte Carlo simulation of the nested-lattice encoders and decoders.
//!
//! Trials run in chunks of a fixed size. Chunk `k` draws from a ChaCha8
//! stream seeded by `seed` with stream number `k`, so reports are identical
//! for a given `(seed, trials, chunk_size)` regardless of thread count.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{cell_stages, final_estimator, function_variance, mmse_coeffs, CellStage, Observation};
use crate::gauss::{PartitionPlan, SourceModel};
use crate::lattice::Lattice;
use crate::nested::verify_nesting;
use crate::regions::{RatePoint, Scheme};

pub const MIN_TRIALS: u64 = 10_000;
pub const DEFAULT_CHUNK: u64 = 1 << 15;
const FIXED_DITHER_STREAM: u64 = u64::MAX;

/// Draws `X ~ N(0, Sigma)` through a symmetric square root, so singular
/// covariances work.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(model: &SourceModel) -> Self {
        let eig = SymmetricEigen::new(model.cov().clone());
        let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        GaussianSampler {
            factor: &eig.eigenvectors * DMatrix::from_diagonal(&sqrt),
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let g = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * g
    }

    /// `n` independent draws; row `k` holds source `k` across the block.
    pub fn sample_block<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; n]; self.dim()];
        for j in 0..n {
            let x = self.sample(rng);
            for (k, row) in out.iter_mut().enumerate() {
                row[j] = x[k];
            }
        }
        out
    }
}

/// `(Q_fine(x + u)) mod coarse`.
pub fn nested_encode(fine: &Lattice, coarse: &Lattice, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if x.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: u.len(),
        });
    }
    let y: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + b).collect();
    let q = fine.nearest_point(&y)?;
    Ok(coarse.mod_lattice(&q)?.into_vec())
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn axpy(acc: &mut [f64], w: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += w * v;
    }
}

fn mean_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn check_dim(expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

fn default_base(n: usize, base: Option<&Lattice>) -> Result<Lattice> {
    match base {
        Some(b) => {
            if b.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: b.dim(),
                });
            }
            if b.known_second_moment().is_none() {
                return Err(Error::MomentUnknown);
            }
            Ok(b.clone())
        }
        None => Lattice::integer(n),
    }
}

fn check_margin(margin: f64) -> Result<()> {
    if !(margin >= 1.0) || !margin.is_finite() {
        return Err(Error::InvalidArgument(format!("margin must be >= 1 (got {margin})")));
    }
    Ok(())
}

fn moment(l: &Lattice) -> f64 {
    l.known_second_moment()
        .expect("codec lattices are scaled from a lattice with a known moment")
        .sigma2
}

/// Two encoders sharing one coarse lattice: encoder `i` quantizes
/// `weights[i] * X_i`, the decoder combines `signs[i] * (S_i - U_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoUserCodec {
    pub model: SourceModel,
    pub d_target: f64,
    pub q1: f64,
    pub fine1: Lattice,
    pub fine2: Lattice,
    pub coarse: Lattice,
    pub margin: f64,
    pub n: usize,
    /// `sigma_Z^2`, or the innovations variance with side information.
    pub variance: f64,
    weights: [f64; 2],
    signs: [f64; 2],
}

fn build_pair(
    model: SourceModel,
    variance: f64,
    d: f64,
    q1: f64,
    n: usize,
    margin: f64,
    base: Option<&Lattice>,
    weights: [f64; 2],
    signs: [f64; 2],
) -> Result<TwoUserCodec> {
    if !(d > 0.0 && d < variance) {
        return Err(Error::DistortionOutOfRange {
            d,
            range: format!("(0, {variance})"),
        });
    }
    let upper = d * variance / (variance - d);
    if !(q1 > 0.0 && q1 < upper) {
        return Err(Error::QOutOfRange { q1, upper });
    }
    check_margin(margin)?;
    let base = default_base(n, base)?;
    let coarse_moment = variance * variance / (variance - d) * margin * margin;
    Ok(TwoUserCodec {
        fine1: base.scale_to_second_moment(q1)?,
        fine2: base.scale_to_second_moment(upper - q1)?,
        coarse: base.scale_to_second_moment(coarse_moment)?,
        model,
        d_target: d,
        q1,
        margin,
        n,
        variance,
        weights,
        signs,
    })
}

/// Codec for `Z = X1 - c X2`: encoder 2 quantizes `c X2` and the decoder
/// takes the difference.
pub fn build_two_user_codec(
    model: &SourceModel,
    d: f64,
    q1: f64,
    n: usize,
    margin: f64,
    base: Option<&Lattice>,
) -> Result<TwoUserCodec> {
    let (_, c) = model.unit_pair()?;
    let s2 = function_variance(model);
    build_pair(model.clone(), s2, d, q1, n, margin, base, [1.0, c], [1.0, -1.0])
}

/// Coordinates of the coarse lattice point nearest to `v`; all zero when
/// there is no overload.
fn wraps(coarse: &Lattice, v: &[f64]) -> Result<bool> {
    Ok(coarse.nearest_coords(v)?.iter().any(|&z| z != 0))
}

impl TwoUserCodec {
    pub fn fine(&self, i: usize) -> &Lattice {
        if i == 0 {
            &self.fine1
        } else {
            &self.fine2
        }
    }

    /// Encoder weights: the block given to encoder `i` is `weights[i] * X_i`.
    pub fn weights(&self) -> [f64; 2] {
        self.weights
    }

    /// `(sigma^2 - D) / sigma^2`.
    pub fn shrink(&self) -> f64 {
        (self.variance - self.d_target) / self.variance
    }

    /// Second moment of `fine2`.
    pub fn q2(&self) -> f64 {
        moment(&self.fine2)
    }

    /// Rates at `margin = 1`.
    pub fn rates(&self) -> [f64; 2] {
        let s = self.variance;
        let top = s * s / (s - self.d_target);
        [0.5 * (top / self.q1).log2(), 0.5 * (top / self.q2()).log2()]
    }

    /// Rates of the lattices actually used, including the margin.
    pub fn lattice_rates(&self) -> [f64; 2] {
        let c = moment(&self.coarse);
        [0.5 * (c / moment(&self.fine1)).log2(), 0.5 * (c / moment(&self.fine2)).log2()]
    }

    pub fn rate_point(&self) -> RatePoint {
        RatePoint {
            rates: self.rates().to_vec(),
            distortion: self.d_target,
            scheme: Scheme::LatticeBinning,
        }
    }

    /// Replaces the fine lattices by `coarse / m_i` with the smallest integer
    /// `m_i` that keeps each fine moment at or below its target, so the pair
    /// is nested exactly. `q1` and the implied distortion follow the snapped
    /// lattices.
    pub fn with_commensurate_nesting(&self) -> Result<Self> {
        let mut out = self.clone();
        let c = moment(&self.coarse);
        let snap = |target: f64| -> Result<Lattice> {
            let m = (c / target).sqrt().ceil().max(1.0);
            self.coarse.scaled(1.0 / m)
        };
        out.fine1 = snap(moment(&self.fine1))?;
        out.fine2 = snap(moment(&self.fine2))?;
        if !verify_nesting(&out.fine1, &out.coarse)? || !verify_nesting(&out.fine2, &out.coarse)? {
            return Err(Error::NotNested);
        }
        out.q1 = moment(&out.fine1);
        let qa = out.q1 + moment(&out.fine2);
        out.d_target = qa * self.variance / (self.variance + qa);
        Ok(out)
    }

    pub fn is_nested(&self) -> Result<bool> {
        Ok(verify_nesting(&self.fine1, &self.coarse)? && verify_nesting(&self.fine2, &self.coarse)?)
    }

    /// `S = Q_fine(x + u) mod coarse`; `x` is the already weighted block.
    pub fn encode(&self, encoder: usize, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if encoder > 1 {
            return Err(Error::InvalidArgument(format!("encoder index {encoder} (expected 0 or 1)")));
        }
        check_dim(self.n, x)?;
        check_dim(self.n, u)?;
        nested_encode(self.fine(encoder), &self.coarse, x, u)
    }

    /// The combination `sum_i signs[i] (S_i - U_i)` before the final modulo.
    fn combine(&self, s: [&[f64]; 2], u: [&[f64]; 2]) -> Result<Vec<f64>> {
        for v in s.iter().chain(u.iter()) {
            check_dim(self.n, v)?;
        }
        let mut acc = vec![0.0; self.n];
        for i in 0..2 {
            axpy(&mut acc, self.signs[i], &sub(s[i], u[i]));
        }
        Ok(acc)
    }

    /// `Z^ = ((sigma^2 - D) / sigma^2) ([(S1 - U1) - (S2 - U2)] mod coarse)`.
    pub fn decode_two_user(&self, s1: &[f64], s2: &[f64], u1: &[f64], u2: &[f64]) -> Result<Vec<f64>> {
        let v = self.combine([s1, s2], [u1, u2])?;
        let m = self.coarse.mod_lattice(&v)?;
        let b = self.shrink();
        Ok(m.as_slice().iter().map(|x| b * x).collect())
    }

    /// Equivalent single-channel form: `Z + e_q` reduced modulo the coarse
    /// lattice, with `e_q = sum_i signs[i] (Q_i(y_i) - y_i)`.
    pub fn decode_equivalent(&self, x: [&[f64]; 2], u: [&[f64]; 2]) -> Result<Vec<f64>> {
        let v = self.unwrapped(x, u)?;
        let m = self.coarse.mod_lattice(&v)?;
        let b = self.shrink();
        Ok(m.as_slice().iter().map(|x| b * x).collect())
    }

    /// `e_q_i = Q_i(x_i + u_i) - x_i - u_i = -((x_i + u_i) mod fine_i)`.
    pub fn quantization_error(&self, encoder: usize, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let y = add(x, u);
        Ok(self.fine(encoder).mod_lattice(&y)?.as_slice().iter().map(|v| -v).collect())
    }

    /// `Z + e_q` built from the weighted blocks without any coarse modulo.
    pub fn unwrapped(&self, x: [&[f64]; 2], u: [&[f64]; 2]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.n];
        for i in 0..2 {
            check_dim(self.n, x[i])?;
            check_dim(self.n, u[i])?;
            let e = self.quantization_error(i, x[i], u[i])?;
            axpy(&mut acc, self.signs[i], &add(x[i], &e));
        }
        Ok(acc)
    }
}

/// Two-user codec with side information `Y` at the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfoCodec {
    pub inner: TwoUserCodec,
    pub side: Vec<usize>,
    /// `E(Z | Y) = sum_j gamma_j Y_j`.
    pub gamma: Vec<f64>,
    pub innovations_var: f64,
}

/// Sources are model indices 0 and 1; `side` lists the decoder's side
/// variables, whose coefficients in `Z` must be zero.
pub fn build_side_info_codec(
    model: &SourceModel,
    side: &[usize],
    d: f64,
    q1: f64,
    n: usize,
    margin: f64,
    base: Option<&Lattice>,
) -> Result<SideInfoCodec> {
    let k = model.k();
    let coeffs = model.coeffs();
    if k < 2 {
        return Err(Error::InvalidModel("side-information codec needs two sources".into()));
    }
    for &j in side {
        if j < 2 || j >= k {
            return Err(Error::InvalidArgument(format!("side variable index {j} out of range")));
        }
    }
    for j in 2..k {
        if coeffs[j] != 0.0 {
            return Err(Error::InvalidModel("side variables must not enter the function".into()));
        }
    }
    let obs: Vec<Observation> = side
        .iter()
        .map(|&j| {
            let mut f = vec![0.0; k];
            f[j] = 1.0;
            Observation::new(f, 0.0)
        })
        .collect();
    let target: Vec<f64> = coeffs.iter().copied().collect();
    let est = mmse_coeffs(model, &target, &obs)?;
    let eta = est.error_var;
    if eta <= 1e-12 * function_variance(model).max(1.0) {
        return Err(Error::DegenerateSideInfo(eta));
    }
    let inner = build_pair(
        model.clone(),
        eta,
        d,
        q1,
        n,
        margin,
        base,
        [coeffs[0], coeffs[1]],
        [1.0, 1.0],
    )?;
    Ok(SideInfoCodec {
        inner,
        side: side.to_vec(),
        gamma: est.coeffs,
        innovations_var: eta,
    })
}

impl SideInfoCodec {
    /// `E(Z | Y)` for one block; `y[j]` is side variable `side[j]`.
    pub fn side_estimate(&self, y: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.inner.n];
        for (g, row) in self.gamma.iter().zip(y) {
            axpy(&mut out, *g, row);
        }
        out
    }

    /// `Z^ = (1 - D / sigma_eta^2) ([sum_i (S_i - U_i) - Z^_Y] mod coarse) + Z^_Y`.
    pub fn decode_side_info(&self, s1: &[f64], s2: &[f64], u1: &[f64], u2: &[f64], z_y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.inner.n, z_y)?;
        let v = sub(&self.inner.combine([s1, s2], [u1, u2])?, z_y);
        let m = self.inner.coarse.mod_lattice(&v)?;
        let b = self.inner.shrink();
        Ok(m.as_slice().iter().zip(z_y).map(|(x, y)| b * x + y).collect())
    }
}

/// Per-source fine lattices and per-cell coarse lattices for the sequential
/// scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct KUserCodec {
    pub model: SourceModel,
    pub plan: PartitionPlan,
    pub n: usize,
    pub margin: f64,
    pub fine: Vec<Lattice>,
    pub coarse: Vec<Lattice>,
    pub stages: Vec<CellStage>,
    pub final_coeffs: Vec<f64>,
    pub distortion: f64,
}

pub fn build_k_user_codec(
    model: &SourceModel,
    plan: &PartitionPlan,
    n: usize,
    margin: f64,
    base: Option<&Lattice>,
) -> Result<KUserCodec> {
    check_margin(margin)?;
    let base = default_base(n, base)?;
    let stages = cell_stages(model, plan)?;
    let fin = final_estimator(model, plan)?;
    let fine = plan
        .q()
        .iter()
        .map(|&q| base.scale_to_second_moment(q))
        .collect::<Result<Vec<_>>>()?;
    let mut coarse = vec![base.clone(); plan.cells().len()];
    for s in &stages {
        let m = (s.residual_var + plan.q_cell(s.cell)) * margin * margin;
        coarse[s.cell] = base.scale_to_second_moment(m)?;
    }
    Ok(KUserCodec {
        model: model.clone(),
        plan: plan.clone(),
        n,
        margin,
        fine,
        coarse,
        stages,
        final_coeffs: fin.coeffs,
        distortion: fin.distortion,
    })
}

impl KUserCodec {
    pub fn rate_point(&self) -> Result<RatePoint> {
        crate::regions::k_user_rates(&self.model, &self.plan)
    }

    /// Rates of the lattices actually used, including the margin.
    pub fn lattice_rates(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.plan.k()];
        for (a, cell) in self.plan.cells().iter().enumerate() {
            let c = moment(&self.coarse[a]);
            for &i in cell {
                r[i] = 0.5 * (c / moment(&self.fine[i])).log2();
            }
        }
        r
    }
}

/// Simulation controls shared by all experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub trials: u64,
    pub seed: u64,
    pub chunk_size: u64,
    /// Draw one dither per encoder and reuse it for every trial.
    pub fixed_dither: bool,
}

impl SimOptions {
    pub fn new(trials: u64, seed: u64) -> Self {
        SimOptions {
            trials,
            seed,
            chunk_size: DEFAULT_CHUNK,
            fixed_dither: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials < MIN_TRIALS {
            return Err(Error::InvalidArgument(format!(
                "at least {MIN_TRIALS} trials required (got {})",
                self.trials
            )));
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidArgument("chunk size must be positive".into()));
        }
        Ok(())
    }

    fn chunks(&self) -> Vec<(u64, u64)> {
        let count = self.trials.div_ceil(self.chunk_size);
        (0..count)
            .map(|k| {
                let start = k * self.chunk_size;
                (k, (self.trials - start).min(self.chunk_size))
            })
            .collect()
    }

    fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.sum / self.n as f64
    }

    fn std_error(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let m = self.n as f64;
        let mean = self.sum / m;
        let var = (self.sum_sq / m - mean * mean).max(0.0) * m / (m - 1.0);
        (var / m).sqrt()
    }
}

#[derive(Debug, Clone, Default)]
struct Acc {
    distortion: Moments,
    conditional: Moments,
    channel: Moments,
    source: Moments,
    overloads: u64,
    cell_overloads: Vec<u64>,
}

impl Acc {
    fn with_cells(cells: usize) -> Self {
        Acc {
            cell_overloads: vec![0; cells],
            ..Acc::default()
        }
    }

    fn merge(&mut self, o: &Acc) {
        self.distortion.merge(&o.distortion);
        self.conditional.merge(&o.conditional);
        self.channel.merge(&o.channel);
        self.source.merge(&o.source);
        self.overloads += o.overloads;
        for (a, b) in self.cell_overloads.iter_mut().zip(&o.cell_overloads) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trials: u64,
    pub n: usize,
    pub seed: u64,
    pub margin: f64,
    pub empirical_distortion: f64,
    pub distortion_std_error: f64,
    pub overload_rate: f64,
    pub conditional_distortion: f64,
    pub conditional_std_error: f64,
    /// Per-dimension second moment of the unwrapped decoder input
    /// (`Z + e_q` in the two-user case; summed over cells for the sequential
    /// scheme).
    pub dither_moment_check: f64,
    pub dither_moment_std_error: f64,
    /// Coarse second moment divided by `margin^2`.
    pub dither_moment_target: f64,
    pub source_variance: f64,
    pub target_distortion: f64,
    pub cell_overload_rates: Vec<f64>,
    pub rates: RatePoint,
    /// Rates including the margin.
    pub lattice_rates: Vec<f64>,
}

pub const SIM_CSV_HEADER: &str = "experiment,trials,n,seed,margin,target_distortion,empirical_distortion,distortion_std_error,conditional_distortion,conditional_std_error,overload_rate,dither_moment_check,rates";

impl SimReport {
    fn from_acc(acc: &Acc, opts: &SimOptions, n: usize, margin: f64, target_moment: f64, target_d: f64, rates: RatePoint, lattice_rates: Vec<f64>) -> Self {
        let t = opts.trials as f64;
        SimReport {
            trials: opts.trials,
            n,
            seed: opts.seed,
            margin,
            empirical_distortion: acc.distortion.mean(),
            distortion_std_error: acc.distortion.std_error(),
            overload_rate: acc.overloads as f64 / t,
            conditional_distortion: acc.conditional.mean(),
            conditional_std_error: acc.conditional.std_error(),
            dither_moment_check: acc.channel.mean(),
            dither_moment_std_error: acc.channel.std_error(),
            dither_moment_target: target_moment,
            source_variance: acc.source.mean(),
            target_distortion: target_d,
            cell_overload_rates: acc.cell_overloads.iter().map(|&c| c as f64 / t).collect(),
            rates,
            lattice_rates,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One CSV row matching [`SIM_CSV_HEADER`]; rates are `;`-separated.
    pub fn csv_row(&self, experiment: &str) -> String {
        let rates: Vec<String> = self.rates.rates.iter().map(|r| format!("{r}")).collect();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            experiment,
            self.trials,
            self.n,
            self.seed,
            self.margin,
            self.target_distortion,
            self.empirical_distortion,
            self.distortion_std_error,
            self.conditional_distortion,
            self.conditional_std_error,
            self.overload_rate,
            self.dither_moment_check,
            rates.join(";")
        )
    }
}

fn run_chunks<F>(opts: &SimOptions, cells: usize, trial: F) -> Result<Acc>
where
    F: Fn(&mut ChaCha8Rng, &mut Acc) -> Result<()> + Sync,
{
    opts.validate()?;
    let parts: Vec<Result<Acc>> = opts
        .chunks()
        .into_par_iter()
        .map(|(k, len)| {
            let mut rng = opts.stream(k);
            let mut acc = Acc::with_cells(cells);
            for _ in 0..len {
                trial(&mut rng, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Acc::with_cells(cells);
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}

fn dithers<R: Rng + ?Sized>(lats: &[&Lattice], rng: &mut R) -> Vec<Vec<f64>> {
    lats.iter().map(|l| l.sample_dither(rng).into_vec()).collect()
}

fn fixed_dithers(opts: &SimOptions, lats: &[&Lattice]) -> Option<Vec<Vec<f64>>> {
    opts.fixed_dither
        .then(|| dithers(lats, &mut opts.stream(FIXED_DITHER_STREAM)))
}

/// One trial of a pair codec. Returns the wrapped reconstruction, the
/// unwrapped decoder input and the overload flag.
fn pair_trial(
    codec: &TwoUserCodec,
    x: [&[f64]; 2],
    u: [&[f64]; 2],
    offset: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let wx: Vec<Vec<f64>> = (0..2)
        .map(|i| x[i].iter().map(|v| codec.weights[i] * v).collect())
        .collect();
    let s1 = codec.encode(0, &wx[0], u[0])?;
    let s2 = codec.encode(1, &wx[1], u[1])?;
    let v = sub(&codec.combine([&s1, &s2], u)?, offset);
    let m = codec.coarse.mod_lattice(&v)?;
    let b = codec.shrink();
    let zhat: Vec<f64> = m.as_slice().iter().zip(offset).map(|(x, y)| b * x + y).collect();
    let unwrapped = sub(&codec.unwrapped([&wx[0], &wx[1]], u)?, offset);
    let over = wraps(&codec.coarse, &unwrapped)?;
    Ok((zhat, unwrapped, over))
}

fn record(acc: &mut Acc, z: &[f64], zhat: &[f64], channel_moment: f64, over: bool) {
    let err = mean_sq(&sub(z, zhat));
    acc.distortion.push(err);
    acc.channel.push(channel_moment);
    acc.source.push(mean_sq(z));
    if over {
        acc.overloads += 1;
    } else {
        acc.conditional.push(err);
    }
}

fn function_block(model: &SourceModel, x: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for (k, row) in x.iter().enumerate() {
        axpy(&mut z, model.coeffs()[k], row);
    }
    z
}

pub fn run_two_user_experiment(codec: &TwoUserCodec, opts: &SimOptions) -> Result<SimReport> {
    let sampler = GaussianSampler::new(&codec.model);
    let fine = [&codec.fine1, &codec.fine2];
    let fixed = fixed_dithers(opts, &fine);
    let zero = vec![0.0; codec.n];
    let acc = run_chunks(opts, 0, |rng, acc| {
        let x = sampler.sample_block(codec.n, rng);
        let u = match &fixed {
            Some(f) => f.clone(),
            None => dithers(&fine, rng),
        };
        let z = function_block(&codec.model, &x, codec.n);
        let (zhat, channel, over) = pair_trial(codec, [&x[0], &x[1]], [&u[0], &u[1]], &zero)?;
        record(acc, &z, &zhat, mean_sq(&channel), over);
        Ok(())
    })?;
    let target = moment(&codec.coarse) / (codec.margin * codec.margin);
    Ok(SimReport::from_acc(
        &acc,
        opts,
        codec.n,
        codec.margin,
        target,
        codec.d_target,
        codec.rate_point(),
        codec.lattice_rates().to_vec(),
    ))
}

pub fn run_side_info_experiment(codec: &SideInfoCodec, opts: &SimOptions) -> Result<SimReport> {
    let inner = &codec.inner;
    let sampler = GaussianSampler::new(&inner.model);
    let fine = [&inner.fine1, &inner.fine2];
    let fixed = fixed_dithers(opts, &fine);
    let acc = run_chunks(opts, 0, |rng, acc| {
        let x = sampler.sample_block(inner.n, rng);
        let u = match &fixed {
            Some(f) => f.clone(),
            None => dithers(&fine, rng),
        };
        let z = function_block(&inner.model, &x, inner.n);
        let y: Vec<Vec<f64>> = codec.side.iter().map(|&j| x[j].clone()).collect();
        let zy = codec.side_estimate(&y);
        let (zhat, channel, over) = pair_trial(inner, [&x[0], &x[1]], [&u[0], &u[1]], &zy)?;
        record(acc, &z, &zhat, mean_sq(&channel), over);
        Ok(())
    })?;
    let target = moment(&inner.coarse) / (inner.margin * inner.margin);
    Ok(SimReport::from_acc(
        &acc,
        opts,
        inner.n,
        inner.margin,
        target,
        inner.d_target,
        inner.rate_point(),
        inner.lattice_rates().to_vec(),
    ))
}

pub fn run_k_user_experiment(codec: &KUserCodec, opts: &SimOptions) -> Result<SimReport> {
    let n = codec.n;
    let cells = codec.plan.cells();
    let sampler = GaussianSampler::new(&codec.model);
    let fine: Vec<&Lattice> = codec.fine.iter().collect();
    let fixed = fixed_dithers(opts, &fine);
    let c = codec.model.coeffs();
    let acc = run_chunks(opts, cells.len(), |rng, acc| {
        let x = sampler.sample_block(n, rng);
        let u = match &fixed {
            Some(f) => f.clone(),
            None => dithers(&fine, rng),
        };
        let z = function_block(&codec.model, &x, n);
        let mut decoded: Vec<Vec<f64>> = vec![Vec::new(); cells.len()];
        let mut channel = 0.0;
        let mut any = false;
        for stage in &codec.stages {
            let a = stage.cell;
            let coarse = &codec.coarse[a];
            let mut f = vec![0.0; n];
            for (&b, &w) in stage.prior.iter().zip(&stage.coeffs) {
                axpy(&mut f, w, &decoded[b]);
            }
            let mut sum = vec![0.0; n];
            let mut unwrapped = vec![0.0; n];
            for &i in &cells[a] {
                let wx: Vec<f64> = x[i].iter().map(|v| c[i] * v).collect();
                let t = nested_encode(&codec.fine[i], coarse, &wx, &u[i])?;
                axpy(&mut sum, 1.0, &sub(&t, &u[i]));
                let e: Vec<f64> = codec.fine[i]
                    .mod_lattice(&add(&wx, &u[i]))?
                    .as_slice()
                    .iter()
                    .map(|v| -v)
                    .collect();
                axpy(&mut unwrapped, 1.0, &add(&wx, &e));
            }
            let m = coarse.mod_lattice(&sub(&sum, &f))?;
            decoded[a] = add(m.as_slice(), &f);
            let resid = sub(&unwrapped, &f);
            if wraps(coarse, &resid)? {
                acc.cell_overloads[a] += 1;
                any = true;
            }
            channel += mean_sq(&resid);
        }
        let mut zhat = vec![0.0; n];
        for (a, w) in codec.final_coeffs.iter().enumerate() {
            axpy(&mut zhat, *w, &decoded[a]);
        }
        record(acc, &z, &zhat, channel, any);
        Ok(())
    })?;
    let target = codec
        .stages
        .iter()
        .map(|s| moment(&codec.coarse[s.cell]))
        .sum::<f64>()
        / (codec.margin * codec.margin);
    Ok(SimReport::from_acc(
        &acc,
        opts,
        n,
        codec.margin,
        target,
        codec.distortion,
        codec.rate_point()?,
        codec.lattice_rates(),
    ))
}
