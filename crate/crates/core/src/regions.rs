//! Achievable rate regions: lattice binning, the Berger-Tung scheme, the
//! sequential K-user scheme, side information and scaled encoders.
//!
//! All rates are in bits per sample.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{alpha, final_estimator, function_variance, mmse_coeffs, sigma_theta, Observation};
use crate::gauss::{PartitionPlan, SourceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    LatticeBinning,
    BergerTung,
    Hybrid { plan: PartitionPlan },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub rates: Vec<f64>,
    pub distortion: f64,
    pub scheme: Scheme,
}

impl RatePoint {
    pub fn sum_rate(&self) -> f64 {
        self.rates.iter().sum()
    }
}

fn log2_half(x: f64) -> f64 {
    0.5 * x.log2()
}

fn distortion_range(d: f64, upper: f64, inclusive: bool) -> Result<()> {
    let ok = d > 0.0 && if inclusive { d <= upper * (1.0 + 1e-12) } else { d < upper };
    if ok {
        Ok(())
    } else {
        let close = if inclusive { "]" } else { ")" };
        Err(Error::DistortionOutOfRange {
            d,
            range: format!("(0, {upper}{close}"),
        })
    }
}

/// Whether `(r1, r2, d)` lies in the lattice-binning region
/// `2^-2R1 + 2^-2R2 <= D / sigma_Z^2`.
pub fn lattice_two_user_check(model: &SourceModel, r1: f64, r2: f64, d: f64) -> Result<bool> {
    model.unit_pair()?;
    let s2 = function_variance(model);
    distortion_range(d, s2, true)?;
    let lhs = (-2.0 * r1).exp2() + (-2.0 * r2).exp2();
    Ok(lhs <= d / s2 * (1.0 + 1e-12))
}

/// `log2(2 sigma_Z^2 / D)`, attained at `R1 = R2`.
pub fn lattice_two_user_min_sum(model: &SourceModel, d: f64) -> Result<f64> {
    model.unit_pair()?;
    let s2 = function_variance(model);
    distortion_range(d, s2, true)?;
    Ok((2.0 * s2 / d).log2())
}

/// Symmetric minimum-sum point of the lattice-binning region.
pub fn lattice_two_user_point(model: &SourceModel, d: f64) -> Result<RatePoint> {
    let sum = lattice_two_user_min_sum(model, d)?;
    Ok(RatePoint {
        rates: vec![sum / 2.0, sum / 2.0],
        distortion: d,
        scheme: Scheme::LatticeBinning,
    })
}

/// Smallest `R2` for a given `R1` on the lattice-binning boundary; infinite
/// when `R1` alone exhausts the budget.
pub fn lattice_min_r2(model: &SourceModel, r1: f64, d: f64) -> Result<f64> {
    model.unit_pair()?;
    let s2 = function_variance(model);
    distortion_range(d, s2, true)?;
    let slack = d / s2 - (-2.0 * r1).exp2();
    if slack <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((-0.5 * slack.log2()).max(0.0))
}

/// Berger-Tung bounds at test-channel noise variances `(q1, q2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BtRates {
    pub r1: f64,
    pub r2: f64,
    pub sum: f64,
    pub distortion: f64,
}

impl BtRates {
    /// Corner point with encoder 1 decoded first: `(sum - r2, r2)`.
    pub fn corner(&self) -> RatePoint {
        RatePoint {
            rates: vec![self.sum - self.r2, self.r2],
            distortion: self.distortion,
            scheme: Scheme::BergerTung,
        }
    }
}

pub fn bt_rate_point(model: &SourceModel, q1: f64, q2: f64) -> Result<BtRates> {
    let (rho, c) = model.unit_pair()?;
    if !(q1 > 0.0 && q2 > 0.0) {
        return Err(Error::NonPositiveQ { q1, q2 });
    }
    let a = alpha(rho);
    let s2 = function_variance(model);
    let det = (1.0 + q1) * (1.0 + q2) - rho * rho;
    Ok(BtRates {
        r1: log2_half(det / (q1 * (1.0 + q2))),
        r2: log2_half(det / (q2 * (1.0 + q1))),
        sum: log2_half(det / (q1 * q2)),
        distortion: (q1 * a + q2 * c * c * a + q1 * q2 * s2) / det,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BtRegime {
    Interior,
    /// Encoder 2 silent.
    Q2Infinite,
    /// Encoder 1 silent.
    Q1Infinite,
    ZeroRate,
}

impl BtRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            BtRegime::Interior => "interior",
            BtRegime::Q2Infinite => "q2_infinite",
            BtRegime::Q1Infinite => "q1_infinite",
            BtRegime::ZeroRate => "zero_rate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BtOptimum {
    pub q1_star: f64,
    pub q2_star: f64,
    pub regime: BtRegime,
    pub sum_rate: f64,
}

/// Stationary point of the sum rate on the distortion constraint, when both
/// noise variances are positive and finite.
pub fn bt_interior_q(rho: f64, c: f64, d: f64) -> Option<(f64, f64)> {
    let a = alpha(rho);
    let q1 = a * c * d / (2.0 * a * c - (rho + c) * d);
    let q2 = a * d / (2.0 * a * c * c - (1.0 + rho * c) * d);
    (q1 > 0.0 && q2 > 0.0 && q1.is_finite() && q2.is_finite()).then_some((q1, q2))
}

/// The boundary of the interior regime for `c > 0`.
pub fn bt_interior_limit(rho: f64, c: f64) -> f64 {
    let a = alpha(rho);
    (2.0 * a * c / (rho + c)).min(2.0 * a * c * c / (1.0 + rho * c))
}

fn bt_candidates(rho: f64, c: f64, d: f64) -> Vec<BtOptimum> {
    let a = alpha(rho);
    let s2 = 1.0 + c * c - 2.0 * rho * c;
    let mut out = Vec::with_capacity(3);
    if let Some((q1, q2)) = bt_interior_q(rho, c, d) {
        let arg = 4.0 * c * (a * c - rho * d) / (d * d);
        if arg > 0.0 {
            out.push(BtOptimum {
                q1_star: q1,
                q2_star: q2,
                regime: BtRegime::Interior,
                sum_rate: log2_half(arg),
            });
        }
    }
    if d > a * c * c {
        out.push(BtOptimum {
            q1_star: (d - a * c * c) / (s2 - d),
            q2_star: f64::INFINITY,
            regime: BtRegime::Q2Infinite,
            sum_rate: log2_half((1.0 - rho * c).powi(2) / (d - a * c * c)),
        });
    }
    if d > a {
        out.push(BtOptimum {
            q1_star: f64::INFINITY,
            q2_star: (d - a) / (s2 - d),
            regime: BtRegime::Q1Infinite,
            sum_rate: log2_half((c - rho).powi(2) / (d - a)),
        });
    }
    out
}

/// Optimal Berger-Tung operating point; `D >= sigma_Z^2` gives the zero-rate
/// regime.
pub fn bt_solution(model: &SourceModel, d: f64) -> Result<BtOptimum> {
    let (rho, c) = model.correlated_pair()?;
    if !(d > 0.0) {
        return Err(Error::DistortionOutOfRange {
            d,
            range: "(0, inf)".into(),
        });
    }
    let s2 = function_variance(model);
    if d >= s2 {
        return Ok(BtOptimum {
            q1_star: f64::INFINITY,
            q2_star: f64::INFINITY,
            regime: BtRegime::ZeroRate,
            sum_rate: 0.0,
        });
    }
    bt_candidates(rho, c, d)
        .into_iter()
        .min_by(|x, y| x.sum_rate.total_cmp(&y.sum_rate))
        .map(|mut o| {
            o.sum_rate = o.sum_rate.max(0.0);
            o
        })
        .ok_or(Error::DistortionOutOfRange {
            d,
            range: format!("(0, {s2})"),
        })
}

pub fn bt_optimal_q(model: &SourceModel, d: f64) -> Result<BtOptimum> {
    let s2 = function_variance(model);
    model.correlated_pair()?;
    distortion_range(d, s2, false)?;
    bt_solution(model, d)
}

/// Pointwise minimum Berger-Tung sum rate; zero for `D >= sigma_Z^2`.
pub fn bt_min_sum_rate(model: &SourceModel, d: f64) -> Result<f64> {
    Ok(bt_solution(model, d)?.sum_rate)
}

/// Lower convex envelope of `(x, y)` points sorted by `x`, evaluated back at
/// each input abscissa.
pub fn lower_convex_envelope(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let mut seg = 0;
    points
        .iter()
        .map(|&(x, y)| {
            while seg + 1 < hull.len() && hull[seg + 1].0 < x {
                seg += 1;
            }
            if seg + 1 >= hull.len() {
                return (x, y.min(hull[hull.len() - 1].1));
            }
            let (a, b) = (hull[seg], hull[seg + 1]);
            let t = if b.0 > a.0 { (x - a.0) / (b.0 - a.0) } else { 0.0 };
            (x, (a.1 + t * (b.1 - a.1)).min(y))
        })
        .collect()
}

/// Berger-Tung sum rate on a uniform grid of `points` distortions in
/// `[d_min, d_max]`, convexified in `D`.
pub fn bt_sum_rate_envelope(model: &SourceModel, d_min: f64, d_max: f64, points: usize) -> Result<Vec<(f64, f64)>> {
    if points < 2 || !(d_min > 0.0) || !(d_max > d_min) {
        return Err(Error::InvalidArgument(
            "envelope grid needs 0 < d_min < d_max and at least 2 points".into(),
        ));
    }
    let step = (d_max - d_min) / (points - 1) as f64;
    let raw = (0..points)
        .map(|i| {
            let d = d_min + step * i as f64;
            bt_min_sum_rate(model, d).map(|r| (d, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(lower_convex_envelope(&raw))
}

pub const DEFAULT_ENVELOPE_POINTS: usize = 512;

/// `R_i = 1/2 log2((sigma^2_Theta(A) + q_A) / q_i)` for `i` in `A`, with the
/// distortion of the final estimator.
pub fn k_user_rates(model: &SourceModel, plan: &PartitionPlan) -> Result<RatePoint> {
    let theta = sigma_theta(model, plan)?;
    let fin = final_estimator(model, plan)?;
    let mut rates = vec![0.0; plan.k()];
    for (a, cell) in plan.cells().iter().enumerate() {
        let top = theta[a] + plan.q_cell(a);
        for &i in cell {
            rates[i] = log2_half(top / plan.q()[i]).max(0.0);
        }
    }
    Ok(RatePoint {
        rates,
        distortion: fin.distortion,
        scheme: Scheme::Hybrid { plan: plan.clone() },
    })
}

/// Region `sum 2^-2R_i <= D / sigma_eta^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideInfoRegion {
    pub innovations_var: f64,
    pub distortion: f64,
    pub rhs: f64,
}

impl SideInfoRegion {
    pub fn contains(&self, rates: &[f64]) -> bool {
        rates.iter().map(|r| (-2.0 * r).exp2()).sum::<f64>() <= self.rhs * (1.0 + 1e-12)
    }

    /// Symmetric two-encoder minimum sum rate.
    pub fn min_sum_two(&self) -> f64 {
        (2.0 / self.rhs).log2()
    }
}

/// `Var(Z - E(Z | side))` where `side` lists the noiselessly observed
/// variables of `model`.
pub fn innovations_variance(model: &SourceModel, side: &[usize]) -> Result<f64> {
    let k = model.k();
    let obs = side
        .iter()
        .map(|&j| {
            if j >= k {
                return Err(Error::InvalidArgument(format!("side variable {j} out of range")));
            }
            let mut form = vec![0.0; k];
            form[j] = 1.0;
            Ok(Observation::new(form, 0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let target: Vec<f64> = model.coeffs().iter().copied().collect();
    Ok(mmse_coeffs(model, &target, &obs)?.error_var)
}

const DEGENERATE_REL: f64 = 1e-12;

pub fn side_info_rate_region(model: &SourceModel, side: &[usize], d: f64) -> Result<SideInfoRegion> {
    let s2 = function_variance(model);
    let eta = innovations_variance(model, side)?;
    if eta <= DEGENERATE_REL * s2.max(1.0) {
        return Err(Error::DegenerateSideInfo(eta));
    }
    distortion_range(d, eta, false)?;
    Ok(SideInfoRegion {
        innovations_var: eta,
        distortion: d,
        rhs: d / eta,
    })
}

/// Appends `Y = Z + W`, `Var(W) = noise_var`, as a side variable with a zero
/// coefficient. `noise_var = inf` is not representable; use an independent
/// variable instead.
pub fn with_noisy_function_side_info(model: &SourceModel, noise_var: f64) -> Result<SourceModel> {
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::InvalidArgument(format!("side-information noise variance {noise_var}")));
    }
    let k = model.k();
    let sigma = model.cov();
    let c = model.coeffs();
    let sc = sigma * c;
    let mut cov = nalgebra::DMatrix::zeros(k + 1, k + 1);
    cov.view_mut((0, 0), (k, k)).copy_from(sigma);
    for i in 0..k {
        cov[(i, k)] = sc[i];
        cov[(k, i)] = sc[i];
    }
    cov[(k, k)] = function_variance(model) + noise_var;
    let mut coeffs: Vec<f64> = c.iter().copied().collect();
    coeffs.push(0.0);
    SourceModel::new(cov, coeffs)
}

/// Right-hand side `1 - (sigma_Z^2 - D) eta Sigma eta^T / (c Sigma eta^T)^2`
/// of the region reached when encoder `i` scales by `eta_i` instead of `c_i`.
pub fn scaling_region_rhs(model: &SourceModel, d: f64, eta: &[f64]) -> Result<f64> {
    let k = model.k();
    if eta.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: eta.len(),
        });
    }
    let c: Vec<f64> = model.coeffs().iter().copied().collect();
    let s2 = model.cross(&c, &c);
    let cross = model.cross(&c, eta);
    let ee = model.cross(eta, eta);
    if cross == 0.0 || cross.abs() <= 1e-12 * (s2 * ee).sqrt() {
        return Err(Error::OrthogonalScaling);
    }
    Ok(1.0 - (s2 - d) * ee / (cross * cross))
}

/// Unit directions covering the projective sphere in `k` dimensions.
///
/// `k = 2` uses equally spaced half-circle angles, `k = 3` a Fibonacci
/// hemisphere, larger `k` seeded Gaussian directions.
pub fn sphere_directions(k: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    match k {
        0 => Vec::new(),
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * i as f64;
                    vec![r * t.cos(), r * t.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSearch {
    pub direction: Vec<f64>,
    pub rhs: f64,
    pub index: usize,
}

/// Best direction among `directions` for [`scaling_region_rhs`]; directions
/// orthogonal to the function are skipped.
pub fn best_scaling_direction(model: &SourceModel, d: f64, directions: &[Vec<f64>]) -> Result<ScalingSearch> {
    let mut best: Option<ScalingSearch> = None;
    for (i, eta) in directions.iter().enumerate() {
        let rhs = match scaling_region_rhs(model, d, eta) {
            Ok(v) => v,
            Err(Error::OrthogonalScaling) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| rhs > b.rhs) {
            best = Some(ScalingSearch {
                direction: eta.clone(),
                rhs,
                index: i,
            });
        }
    }
    best.ok_or(Error::OrthogonalScaling)
}

pub fn optimal_scaling(model: &SourceModel, d: f64, grid: usize, seed: u64) -> Result<ScalingSearch> {
    best_scaling_direction(model, d, &sphere_directions(model.k(), grid, seed))
}

/// Angle between two lines through the origin, in `[0, pi/2]`.
pub fn line_angle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot.abs() / (na * nb)).min(1.0).acos()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub rho: f64,
    pub c: f64,
    pub d: f64,
    pub lattice_sum_bits: f64,
    pub bt_sum_bits: f64,
    pub gap_bits: f64,
    pub regime: BtRegime,
}

/// Berger-Tung minus lattice-binning minimum sum rate; positive when lattice
/// binning wins.
pub fn sum_rate_gap(rho: f64, c: f64, d: f64) -> Result<GapPoint> {
    let model = SourceModel::two_user(rho, c)?;
    model.correlated_pair()?;
    let lattice = lattice_two_user_min_sum(&model, d)?;
    let bt = bt_solution(&model, d)?;
    Ok(GapPoint {
        rho,
        c,
        d,
        lattice_sum_bits: lattice,
        bt_sum_bits: bt.sum_rate,
        gap_bits: bt.sum_rate - lattice,
        regime: bt.regime,
    })
}
