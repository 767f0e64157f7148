//! Parameter sweeps comparing lattice binning with the Berger-Tung scheme.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{function_variance, SourceModel};
use crate::regions::{sum_rate_gap, GapPoint};

pub const CSV_SCHEMA: &str = "# schema=1";
pub const CSV_HEADER: &str = "rho,c,D,lattice_sum_bits,bt_sum_bits,gap_bits,regime";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default)]
    pub log: bool,
}

impl GridSpec {
    pub fn linear(min: f64, max: f64, count: usize) -> Self {
        GridSpec {
            min,
            max,
            count,
            log: false,
        }
    }

    pub fn log(min: f64, max: f64, count: usize) -> Self {
        GridSpec {
            min,
            max,
            count,
            log: true,
        }
    }

    pub fn fixed(v: f64) -> Self {
        GridSpec::linear(v, v, 1)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("{name} grid: {msg}")));
        if !self.min.is_finite() || !self.max.is_finite() {
            return bad("bounds must be finite");
        }
        if self.count == 1 {
            if self.min != self.max {
                return bad("a single-point grid needs min = max");
            }
            return Ok(());
        }
        if self.count < 2 {
            return bad("count must be at least 2");
        }
        if !(self.max > self.min) {
            return bad("max must exceed min");
        }
        if self.log && !(self.min > 0.0) {
            return bad("log grids need positive bounds");
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    return self.max;
                }
                let t = i as f64 / last;
                if self.log {
                    (self.min.ln() + t * (self.max.ln() - self.min.ln())).exp()
                } else {
                    self.min + t * (self.max - self.min)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduce {
    /// Every grid point.
    None,
    /// The row with the largest gap for each `(rho, c)`.
    MaxGapOverD,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub rho: GridSpec,
    pub c: GridSpec,
    pub d: GridSpec,
    /// Interpret the `D` grid as fractions of `sigma_Z^2`.
    #[serde(default)]
    pub d_relative: bool,
    pub reduce: Reduce,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.rho.validate("rho")?;
        self.c.validate("c")?;
        self.d.validate("D")?;
        let rhos = self.rho.values();
        if rhos.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::InvalidArgument("rho grid must lie in (0, 1)".into()));
        }
        if !(self.d.min > 0.0) {
            return Err(Error::InvalidArgument("D grid must be positive".into()));
        }
        if self.d_relative && self.d.max > 1.0 {
            return Err(Error::InvalidArgument("relative D grid must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Lattice min-sum surface over `c` and `D / sigma_Z^2` at `rho = 0.8`.
    pub fn fig3() -> Self {
        SweepSpec {
            rho: GridSpec::fixed(0.8),
            c: GridSpec::linear(0.05, 2.0, 40),
            d: GridSpec::log(0.02, 1.0, 40),
            d_relative: true,
            reduce: Reduce::None,
        }
    }

    /// Both sum rates against `D` at `rho = c = 0.8`.
    pub fn fig4() -> Self {
        SweepSpec {
            rho: GridSpec::fixed(0.8),
            c: GridSpec::fixed(0.8),
            d: GridSpec::log(0.02, 0.36, 256),
            d_relative: false,
            reduce: Reduce::None,
        }
    }

    /// Largest gap over `D` on a `(rho, c)` grid.
    pub fn fig5() -> Self {
        SweepSpec {
            rho: GridSpec::linear(0.1, 0.9, 9),
            c: GridSpec::linear(-2.0, 2.0, 81),
            d: GridSpec::log(0.005, 1.0, 256),
            d_relative: true,
            reduce: Reduce::MaxGapOverD,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "fig3" => Some(SweepSpec::fig3()),
            "fig4" => Some(SweepSpec::fig4()),
            "fig5" => Some(SweepSpec::fig5()),
            _ => None,
        }
    }
}

/// Evaluates the sweep in grid-major order (`rho`, then `c`, then `D`).
/// Absolute distortions above `sigma_Z^2` are skipped.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<GapPoint>> {
    spec.validate()?;
    let (rhos, cs, ds) = (spec.rho.values(), spec.c.values(), spec.d.values());
    let pairs: Vec<(f64, f64)> = rhos
        .iter()
        .flat_map(|&r| cs.iter().map(move |&c| (r, c)))
        .collect();
    let blocks: Vec<Result<Vec<GapPoint>>> = pairs
        .par_iter()
        .map(|&(rho, c)| {
            let s2 = function_variance(&SourceModel::two_user(rho, c)?);
            let mut rows = Vec::with_capacity(ds.len());
            for &d in &ds {
                let d = if spec.d_relative { d * s2 } else { d };
                if d > s2 * (1.0 + 1e-12) {
                    continue;
                }
                rows.push(sum_rate_gap(rho, c, d)?);
            }
            if spec.reduce == Reduce::MaxGapOverD {
                let best = rows
                    .iter()
                    .copied()
                    .reduce(|a, b| if b.gap_bits > a.gap_bits { b } else { a });
                rows = best.into_iter().collect();
            }
            Ok(rows)
        })
        .collect();
    let mut out = Vec::new();
    for b in blocks {
        out.extend(b?);
    }
    Ok(out)
}

/// Six significant digits, printed in the shortest form that reads back to
/// the rounded value.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn regime_label(p: &GapPoint) -> String {
    if p.c < 0.0 {
        format!("{};bt_tight", p.regime.as_str())
    } else {
        p.regime.as_str().to_string()
    }
}

pub fn csv_row(p: &GapPoint) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        sig6(p.rho),
        sig6(p.c),
        sig6(p.d),
        sig6(p.lattice_sum_bits),
        sig6(p.bt_sum_bits),
        sig6(p.gap_bits),
        regime_label(p)
    )
}

pub fn write_csv<W: Write + ?Sized>(rows: &[GapPoint], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{CSV_SCHEMA}")?;
    writeln!(w, "{CSV_HEADER}")?;
    for p in rows {
        writeln!(w, "{}", csv_row(p))?;
    }
    Ok(())
}
