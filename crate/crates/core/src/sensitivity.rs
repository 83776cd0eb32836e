//! Latin hypercube sampling and partial rank correlation coefficients.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::integrate::{simulate, TimeGrid};
use crate::model::{ControlConst, ParamSet, StateVec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    /// Normal truncated to positive values.
    Normal { mean: f64, sd: f64 },
}

impl Distribution {
    fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo < hi => {
                Ok(())
            }
            Distribution::Normal { mean, sd } if mean.is_finite() && sd.is_finite() && sd > 0.0 => {
                Ok(())
            }
            d => Err(Error::Config(format!("invalid distribution {d:?}"))),
        }
    }

    /// Inverse CDF at probability `q` in `[0, 1)`.
    pub fn quantile(&self, q: f64) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => lo + q * (hi - lo),
            Distribution::Normal { mean, sd } => {
                let n = Normal::new(mean, sd).expect("validated normal");
                let floor = n.cdf(0.0);
                let q = q.clamp(1e-12, 1.0 - 1e-12);
                n.inverse_cdf(floor + q * (1.0 - floor)).max(f64::MIN_POSITIVE)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub name: String,
    pub distribution: Distribution,
    #[serde(default)]
    pub source: String,
}

impl ParamRange {
    pub fn uniform(name: &str, lo: f64, hi: f64) -> Self {
        ParamRange {
            name: name.to_string(),
            distribution: Distribution::Uniform { lo, hi },
            source: "custom".into(),
        }
    }
}

/// Uniform ranges `value * (1 -/+ spread)` around `base` for every parameter.
pub fn uniform_ranges(base: &ParamSet, spread: f64) -> Vec<ParamRange> {
    ParamSet::NAMES
        .iter()
        .map(|name| {
            let v = base.get(name).expect("known name");
            ParamRange {
                name: name.to_string(),
                distribution: Distribution::Uniform {
                    lo: v * (1.0 - spread),
                    hi: v * (1.0 + spread),
                },
                source: format!("uniform +/-{}%", spread * 100.0),
            }
        })
        .collect()
}

/// Truncated normal ranges from the tabulated mean and standard deviation.
pub fn normal_ranges() -> Vec<ParamRange> {
    ParamSet::NAMES
        .iter()
        .map(|name| {
            let (mean, sd) = ParamSet::normal_moments(name).expect("known name");
            ParamRange {
                name: name.to_string(),
                distribution: Distribution::Normal { mean, sd },
                source: "normal table".into(),
            }
        })
        .collect()
}

/// `n x ranges.len()` Latin hypercube sample: each column has exactly one
/// draw in each of `n` equal-probability strata, with the stratum order
/// permuted independently per column.
pub fn lhs_sample(ranges: &[ParamRange], n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("LHS needs N >= 2, got {n}")));
    }
    if ranges.is_empty() {
        return Err(Error::Config("LHS needs at least one range".into()));
    }
    for r in ranges {
        r.distribution
            .validate()
            .map_err(|e| Error::Config(format!("range '{}': {e}", r.name)))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, ranges.len());
    let mut strata: Vec<usize> = (0..n).collect();
    for (j, r) in ranges.iter().enumerate() {
        strata.shuffle(&mut rng);
        for (i, &s) in strata.iter().enumerate() {
            let q = (s as f64 + rng.random::<f64>()) / n as f64;
            x[(i, j)] = r.distribution.quantile(q);
        }
    }
    Ok(x)
}

/// Ranks starting at 1; ties share their average rank.
pub fn rank(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let denom = (saa * sbb).sqrt();
    if !(denom > 0.0) {
        return None;
    }
    Some((sab / denom).clamp(-1.0, 1.0))
}

/// Least-squares residual projector onto the column space of a design
/// matrix, via thin QR.
struct Residualizer {
    q: DMatrix<f64>,
}

impl Residualizer {
    /// `Err(k)` names the first design column that is numerically dependent
    /// on the ones before it.
    fn new(design: DMatrix<f64>) -> std::result::Result<Self, usize> {
        let rows = design.nrows();
        let qr = design.qr();
        let r = qr.r();
        let scale = r.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-10 * scale.max(f64::MIN_POSITIVE) * (rows as f64).sqrt();
        if let Some(k) = r.diagonal().iter().position(|d| d.abs() <= tol) {
            return Err(k);
        }
        Ok(Residualizer { q: qr.q() })
    }

    fn residual(&self, b: &DVector<f64>) -> DVector<f64> {
        let proj = &self.q * (self.q.transpose() * b);
        b - proj
    }
}

/// PRCC of every column of `x` against each output vector in `zs`.
/// Returns `zs.len()` vectors of `x.ncols()` coefficients.
pub fn prcc_many(x: &DMatrix<f64>, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (n, p) = x.shape();
    if n <= p + 2 {
        return Err(Error::Config(format!(
            "PRCC needs N > P + 2 samples, got N = {n}, P = {p}"
        )));
    }
    for z in zs {
        if z.len() != n {
            return Err(Error::Config(format!(
                "output has {} values for {n} samples",
                z.len()
            )));
        }
    }
    let col_ranks: Vec<Vec<f64>> = (0..p)
        .map(|j| rank(x.column(j).as_slice()))
        .collect();
    for (j, r) in col_ranks.iter().enumerate() {
        if r.iter().all(|v| *v == r[0]) {
            return Err(Error::Degenerate(format!("column {j} is constant")));
        }
    }
    let z_ranks: Vec<DVector<f64>> = zs.iter().map(|z| DVector::from_vec(rank(z))).collect();

    let mut out = vec![vec![0.0; p]; zs.len()];
    for i in 0..p {
        let others: Vec<usize> = (0..p).filter(|&j| j != i).collect();
        let design = DMatrix::from_fn(n, p, |r, c| {
            if c == 0 {
                1.0
            } else {
                col_ranks[others[c - 1]][r]
            }
        });
        let res = Residualizer::new(design).map_err(|k| {
            let which = if k == 0 {
                "the intercept".to_string()
            } else {
                format!("column {}", others[k - 1])
            };
            Error::Degenerate(format!(
                "rank regression for column {i} is rank-deficient: {which} is collinear with earlier columns"
            ))
        })?;
        let rx = res.residual(&DVector::from_column_slice(&col_ranks[i]));
        for (k, rz) in z_ranks.iter().enumerate() {
            let rz = res.residual(rz);
            out[k][i] = match pearson(&rx, &rz) {
                Some(r) => r,
                None if rz.norm() <= 1e-9 * (n as f64) => 0.0,
                None => {
                    return Err(Error::Degenerate(format!(
                        "column {i} is fully explained by the other columns"
                    )))
                }
            };
        }
    }
    Ok(out)
}

/// Partial rank correlation of each column of `x` with `z`.
pub fn prcc(x: &DMatrix<f64>, z: &[f64]) -> Result<Vec<f64>> {
    Ok(prcc_many(x, std::slice::from_ref(&z.to_vec()))?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrccResult {
    pub output: String,
    pub times: Vec<f64>,
    pub params: Vec<String>,
    /// `coefficients[t][j]` is the PRCC of parameter `j` at `times[t]`.
    pub coefficients: Vec<Vec<f64>>,
    pub n: usize,
    pub seed: u64,
}

impl PrccResult {
    pub fn coefficient(&self, time_index: usize, param: &str) -> Option<f64> {
        let j = self.params.iter().position(|p| p == param)?;
        Some(self.coefficients[time_index][j])
    }

    /// Long-format CSV `time,param,prcc`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time", "param", "prcc"])?;
        for (t, row) in self.times.iter().zip(&self.coefficients) {
            for (name, r) in self.params.iter().zip(row) {
                out.write_record([t.to_string(), name.clone(), r.to_string()])?;
            }
        }
        out.flush().map_err(|e| Error::io("<prcc csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PrccStudy {
    pub results: Vec<PrccResult>,
    /// Sample rows whose parameters were invalid or whose run blew up.
    pub dropped: usize,
}

/// Largest tolerated share of dropped rows.
pub const MAX_DROP_FRACTION: f64 = 0.05;

/// Samples parameters, runs the uncontrolled model per sample, and computes
/// PRCC for each requested output at each sample time.
#[allow(clippy::too_many_arguments)]
pub fn prcc_study(
    ranges: &[ParamRange],
    n: usize,
    seed: u64,
    outputs: &[String],
    sample_times: &[f64],
    p_base: &ParamSet,
    y0: &StateVec,
    grid: &TimeGrid,
) -> Result<PrccStudy> {
    grid.validate()?;
    let out_idx: Vec<usize> = outputs
        .iter()
        .map(|o| {
            StateVec::index_of(o).ok_or_else(|| Error::Config(format!("unknown output '{o}'")))
        })
        .collect::<Result<_>>()?;
    for r in ranges {
        if p_base.get(&r.name).is_none() {
            return Err(Error::Config(format!("unknown parameter '{}'", r.name)));
        }
    }
    if let Some(t) = sample_times.iter().find(|t| !grid.contains(**t)) {
        return Err(Error::Config(format!(
            "sample time {t} outside [{}, {}]",
            grid.t0, grid.tf
        )));
    }
    if n <= ranges.len() + 2 {
        return Err(Error::Config(format!(
            "PRCC needs N > P + 2, got N = {n} for P = {}",
            ranges.len()
        )));
    }

    let x = lhs_sample(ranges, n, seed)?;
    let nodes: Vec<usize> = sample_times.iter().map(|t| grid.nearest(*t)).collect();

    // rows[i] = Some(obs[output][time])
    let rows: Vec<Option<Vec<Vec<f64>>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut p = *p_base;
            for (j, r) in ranges.iter().enumerate() {
                p.set(&r.name, x[(i, j)]).ok()?;
            }
            p.validate().ok()?;
            let traj = simulate(&p, ControlConst::zero(), y0, grid).ok()?;
            Some(
                out_idx
                    .iter()
                    .map(|&k| nodes.iter().map(|&t| traj.states[t][k]).collect())
                    .collect(),
            )
        })
        .collect();

    let kept: Vec<usize> = (0..n).filter(|&i| rows[i].is_some()).collect();
    let dropped = n - kept.len();
    if dropped as f64 > MAX_DROP_FRACTION * n as f64 {
        return Err(Error::Numeric(format!(
            "{dropped} of {n} sample runs failed (limit {}%)",
            MAX_DROP_FRACTION * 100.0
        )));
    }
    let xk = DMatrix::from_fn(kept.len(), ranges.len(), |r, c| x[(kept[r], c)]);
    let params: Vec<String> = ranges.iter().map(|r| r.name.clone()).collect();

    let results = outputs
        .iter()
        .enumerate()
        .map(|(o, name)| {
            let zs: Vec<Vec<f64>> = (0..nodes.len())
                .map(|t| kept.iter().map(|&i| rows[i].as_ref().unwrap()[o][t]).collect())
                .collect();
            Ok(PrccResult {
                output: name.clone(),
                times: sample_times.to_vec(),
                params: params.clone(),
                coefficients: prcc_many(&xk, &zs)?,
                n: kept.len(),
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrccStudy { results, dropped })
}
