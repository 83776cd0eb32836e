//! Least-squares fitting of yearly human case counts with Nelder-Mead.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::BLOWUP_THRESHOLD;
use crate::model::{idx, rhs, ControlConst, ParamSet, StateVec, N_STATE};

pub const DEFAULT_EULER_STEP: f64 = 0.01;
pub const MAX_EULER_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceSeries {
    pub years: Vec<i32>,
    pub cases: Vec<f64>,
}

#[derive(Deserialize)]
struct Row {
    year: i32,
    cases: f64,
}

impl IncidenceSeries {
    pub fn new(years: Vec<i32>, cases: Vec<f64>) -> Result<Self> {
        let s = IncidenceSeries { years, cases };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.years.is_empty() {
            return Err(Error::Config("incidence series is empty".into()));
        }
        if self.years.len() != self.cases.len() {
            return Err(Error::Config(format!(
                "{} years but {} case counts",
                self.years.len(),
                self.cases.len()
            )));
        }
        if let Some(w) = self.years.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "years must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some((y, c)) = self
            .years
            .iter()
            .zip(&self.cases)
            .find(|(_, c)| !(c.is_finite() && **c >= 0.0))
        {
            return Err(Error::Config(format!("year {y}: invalid case count {c}")));
        }
        Ok(())
    }

    /// Reads `year,cases` CSV. Lines starting with `#` are ignored.
    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["year", "cases"] {
            return Err(Error::Config(format!(
                "expected CSV header 'year,cases', found '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let (mut years, mut cases) = (Vec::new(), Vec::new());
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            years.push(row.year);
            cases.push(row.cases);
        }
        IncidenceSeries::new(years, cases)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["year", "cases"])?;
        for (y, c) in self.years.iter().zip(&self.cases) {
            out.write_record([y.to_string(), c.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<incidence csv>", e))?;
        Ok(())
    }
}

/// Forward-Euler run of the uncontrolled system starting at `years[0]`,
/// returning `I_H` at each year. Intervals are split into equal steps no
/// longer than `dt`.
pub fn predict_incidence(p: &ParamSet, y0: &StateVec, years: &[i32], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt <= MAX_EULER_STEP) {
        return Err(Error::Config(format!(
            "Euler step must be in (0, {MAX_EULER_STEP}], got {dt}"
        )));
    }
    if years.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(w) = years.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "years must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    y0.validate()?;
    let u = ControlConst::zero();
    let mut y = *y0;
    let mut out = vec![y[idx::I_H]];
    let mut t = 0.0;
    for w in years.windows(2) {
        let span = f64::from(w[1] - w[0]);
        let n = (span / dt).ceil() as usize;
        let h = span / n as f64;
        for _ in 0..n {
            let d = rhs(t, &y, &u, p);
            t += h;
            for j in 0..N_STATE {
                let v = y[j] + h * d[j];
                if !v.is_finite() || v < BLOWUP_THRESHOLD {
                    return Err(Error::IntegrationBlowup {
                        component: StateVec::NAMES[j],
                        value: v,
                        time: t,
                        step: h,
                    });
                }
                y[j] = v.max(0.0);
            }
        }
        out.push(y[idx::I_H]);
    }
    Ok(out)
}

pub fn mse(observed: &IncidenceSeries, predicted: &[f64]) -> Result<f64> {
    if observed.cases.len() != predicted.len() {
        return Err(Error::Config(format!(
            "{} observations but {} predictions",
            observed.cases.len(),
            predicted.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Config("mse of an empty series".into()));
    }
    let ss: f64 = observed
        .cases
        .iter()
        .zip(predicted)
        .map(|(y, yh)| (y - yh) * (y - yh))
        .sum();
    Ok(ss / predicted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmCoefficients {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
}

impl Default for NmCoefficients {
    fn default() -> Self {
        NmCoefficients {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
        }
    }
}

impl NmCoefficients {
    pub fn validate(&self) -> Result<()> {
        let ok = self.reflection > 0.0
            && self.expansion > 1.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "invalid Nelder-Mead coefficients {self:?}: need reflection > 0, \
                 expansion > 1, contraction and shrink in (0, 1)"
            )));
        }
        if self.expansion <= self.reflection {
            return Err(Error::Config(
                "Nelder-Mead expansion must exceed reflection".into(),
            ));
        }
        Ok(())
    }
}

/// One fitted coordinate with its box bounds. A missing `x0` is filled from
/// the base parameter set by [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParam {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub x0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub free: Vec<FreeParam>,
    pub coefficients: NmCoefficients,
    pub max_evals: usize,
    /// Stop once the spread of objective values over the simplex is below this.
    pub tol: f64,
    pub dt: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            free: Vec::new(),
            coefficients: NmCoefficients::default(),
            max_evals: 5000,
            tol: 1e-10,
            dt: DEFAULT_EULER_STEP,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.coefficients.validate()?;
        if self.max_evals == 0 {
            return Err(Error::Config("max_evals must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        for fp in &self.free {
            if !(fp.lo.is_finite() && fp.hi.is_finite() && fp.lo < fp.hi) {
                return Err(Error::Config(format!(
                    "'{}': invalid bounds [{}, {}]",
                    fp.name, fp.lo, fp.hi
                )));
            }
            if let Some(x) = fp.x0 {
                if !(x > fp.lo && x < fp.hi) {
                    return Err(Error::Config(format!(
                        "'{}': start {x} not strictly inside [{}, {}]",
                        fp.name, fp.lo, fp.hi
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

fn to_unbounded(x: f64, lo: f64, hi: f64) -> f64 {
    let s = (x - lo) / (hi - lo);
    (s / (1.0 - s)).ln()
}

fn to_bounded(z: f64, lo: f64, hi: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    (lo + (hi - lo) * s).clamp(lo, hi)
}

/// Start vertex offset for coordinate `j`: 5% of the value, or 0.00025 for
/// a zero value, flipped or halved to stay inside the bounds.
fn perturbed(x: f64, lo: f64, hi: f64) -> f64 {
    let d = if x == 0.0 { 0.00025 } else { 0.05 * x.abs() };
    for cand in [x + d, x - d] {
        if cand > lo && cand < hi {
            return cand;
        }
    }
    if hi - x > x - lo {
        0.5 * (x + hi)
    } else {
        0.5 * (x + lo)
    }
}

/// Bounded Nelder-Mead. Each coordinate is mapped through a logit onto the
/// real line, so every trial point lies strictly inside its bounds.
pub fn nelder_mead<F>(mut f: F, cfg: &FitConfig) -> Result<NmResult>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    let bounds: Vec<(f64, f64)> = cfg.free.iter().map(|fp| (fp.lo, fp.hi)).collect();
    let x0: Vec<f64> = cfg
        .free
        .iter()
        .map(|fp| {
            fp.x0
                .ok_or_else(|| Error::Config(format!("'{}': no starting value", fp.name)))
        })
        .collect::<Result<_>>()?;
    let n = x0.len();
    let decode = |z: &[f64]| -> Vec<f64> {
        z.iter()
            .zip(&bounds)
            .map(|(z, (lo, hi))| to_bounded(*z, *lo, *hi))
            .collect()
    };
    let evals = std::cell::Cell::new(0usize);
    let mut eval = |z: &[f64]| -> f64 {
        evals.set(evals.get() + 1);
        let v = f(&decode(z));
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let z0: Vec<f64> = x0
        .iter()
        .zip(&bounds)
        .map(|(x, (lo, hi))| to_unbounded(*x, *lo, *hi))
        .collect();
    let mut simplex: Vec<Vec<f64>> = vec![z0.clone()];
    for j in 0..n {
        let (lo, hi) = bounds[j];
        let mut z = z0.clone();
        z[j] = to_unbounded(perturbed(x0[j], lo, hi), lo, hi);
        simplex.push(z);
    }
    let mut fs: Vec<f64> = simplex.iter().map(|z| eval(z)).collect();
    if fs.iter().all(|v| v.is_infinite()) {
        return Err(Error::Numeric(
            "objective is not finite at any starting vertex".into(),
        ));
    }
    let c = cfg.coefficients;
    let mut converged = false;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fs = order.iter().map(|&i| fs[i]).collect();

        if n == 0 || fs[n] - fs[0] < cfg.tol {
            converged = true;
            break;
        }
        if evals.get() >= cfg.max_evals {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|k| centroid[k] + t * (simplex[n][k] - centroid[k]))
                .collect()
        };

        let xr = along(-c.reflection);
        let fr = eval(&xr);
        if fr < fs[0] {
            let xe = along(-c.reflection * c.expansion);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                fs[n] = fe;
            } else {
                simplex[n] = xr;
                fs[n] = fr;
            }
            continue;
        }
        if fr < fs[n - 1] {
            simplex[n] = xr;
            fs[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < fs[n] {
            let xc = along(-c.reflection * c.contraction);
            let fc = eval(&xc);
            (xc, fc, fc <= fr)
        } else {
            let xc = along(c.contraction);
            let fc = eval(&xc);
            (xc, fc, fc < fs[n])
        };
        if accept {
            simplex[n] = xc;
            fs[n] = fc;
            continue;
        }
        for i in 1..=n {
            let v: Vec<f64> = (0..n)
                .map(|k| simplex[0][k] + c.shrink * (simplex[i][k] - simplex[0][k]))
                .collect();
            fs[i] = eval(&v);
            simplex[i] = v;
        }
    }
    Ok(NmResult {
        x: decode(&simplex[0]),
        fx: fs[0],
        evals: evals.get(),
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub estimates: Vec<Estimate>,
    pub mse: f64,
    pub evals: usize,
    pub converged: bool,
    pub years: Vec<i32>,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl FitResult {
    /// CSV `year,observed,predicted`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["year", "observed", "predicted"])?;
        for ((y, o), p) in self.years.iter().zip(&self.observed).zip(&self.predicted) {
            out.write_record([y.to_string(), o.to_string(), p.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<fit csv>", e))?;
        Ok(())
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.estimates.iter().find(|e| e.name == name).map(|e| e.value)
    }
}

/// Fits the free parameters of `cfg` to `data`, holding the rest of
/// `p_base` fixed and starting every candidate run from `y0`.
pub fn fit(data: &IncidenceSeries, cfg: &FitConfig, p_base: &ParamSet, y0: &StateVec) -> Result<FitResult> {
    data.validate()?;
    p_base.validate()?;
    let mut cfg = cfg.clone();
    for fp in &mut cfg.free {
        let base = p_base
            .get(&fp.name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{}'", fp.name)))?;
        fp.x0.get_or_insert(base);
    }
    cfg.validate()?;

    let build = |x: &[f64]| -> Result<ParamSet> {
        let mut p = *p_base;
        for (fp, v) in cfg.free.iter().zip(x) {
            p.set(&fp.name, *v)?;
        }
        p.validate()?;
        Ok(p)
    };
    let objective = |x: &[f64]| -> f64 {
        build(x)
            .and_then(|p| predict_incidence(&p, y0, &data.years, cfg.dt))
            .and_then(|pred| mse(data, &pred))
            .unwrap_or(f64::INFINITY)
    };
    let nm = nelder_mead(objective, &cfg)?;
    let p = build(&nm.x)?;
    let predicted = predict_incidence(&p, y0, &data.years, cfg.dt)?;
    Ok(FitResult {
        estimates: cfg
            .free
            .iter()
            .zip(&nm.x)
            .map(|(fp, v)| Estimate {
                name: fp.name.clone(),
                value: *v,
            })
            .collect(),
        mse: mse(data, &predicted)?,
        evals: nm.evals,
        converged: nm.converged,
        years: data.years.clone(),
        observed: data.cases.clone(),
        predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repro::{dfe, seeded_infection};

    fn one_d(lo: f64, hi: f64, x0: f64) -> FitConfig {
        FitConfig {
            free: vec![FreeParam {
                name: "x".into(),
                lo,
                hi,
                x0: Some(x0),
            }],
            tol: 1e-20,
            ..FitConfig::default()
        }
    }

    #[test]
    fn mse_by_hand() {
        let obs = IncidenceSeries::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(mse(&obs, &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&obs, &[2.0, 4.0]).unwrap(), 2.5);
        assert!(mse(&obs, &[2.0]).is_err());
    }

    #[test]
    fn series_validation() {
        assert!(IncidenceSeries::new(vec![2000, 2000], vec![1.0, 2.0]).is_err());
        assert!(IncidenceSeries::new(vec![2000], vec![-1.0]).is_err());
        assert!(IncidenceSeries::new(vec![2000, 2001], vec![1.0]).is_err());
        let s = IncidenceSeries::from_csv("# note\nyear,cases\n1990, 3\n1991,4.5\n".as_bytes())
            .unwrap();
        assert_eq!(s.years, vec![1990, 1991]);
        assert_eq!(s.cases, vec![3.0, 4.5]);
        assert!(IncidenceSeries::from_csv("yr,cases\n1990,3\n".as_bytes()).is_err());
    }

    #[test]
    fn one_euler_step_by_hand() {
        let p = ParamSet {
            beta1: 1.0 / 6.0,
            sigma1: 1.0,
            mu1: 0.0142,
            ..ParamSet::estimated()
        };
        let mut y0 = StateVec::zeros();
        y0[idx::E_H] = 100.0;
        y0[idx::I_H] = 10.0;
        // A one-year interval at dt = 0.05 takes 20 steps; check the first
        // step directly through the same update.
        let d = rhs(0.0, &y0, &ControlConst::zero(), &p);
        let next = y0[idx::I_H] + 0.1 * d[idx::I_H];
        assert!((next - 10.6525).abs() < 1e-4, "{next}");
    }

    #[test]
    fn no_infection_predicts_zero() {
        let p = ParamSet::estimated();
        let pred = predict_incidence(&p, &dfe(&p), &[2000, 2001, 2002], 0.01).unwrap();
        assert!(pred.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn euler_step_halving() {
        let p = ParamSet::estimated();
        let y0 = seeded_infection(&p);
        let years: Vec<i32> = (1990..=2018).collect();
        let a = predict_incidence(&p, &y0, &years, 0.01).unwrap();
        let b = predict_incidence(&p, &y0, &years, 0.005).unwrap();
        for (x, y) in a.iter().zip(&b).skip(1) {
            assert!((x - y).abs() < 0.005 * y.abs(), "{x} vs {y}");
        }
        assert!(predict_incidence(&p, &y0, &years, 0.1).is_err());
    }

    #[test]
    fn quadratic_minimum() {
        let r = nelder_mead(|x| (x[0] - 3.0).powi(2), &one_d(-10.0, 10.0, 0.0)).unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-6, "{r:?}");
        assert!(r.converged);
    }

    #[test]
    fn rosenbrock() {
        let cfg = FitConfig {
            free: vec![
                FreeParam { name: "x".into(), lo: -5.0, hi: 5.0, x0: Some(-1.2) },
                FreeParam { name: "y".into(), lo: -5.0, hi: 5.0, x0: Some(1.0) },
            ],
            max_evals: 2000,
            tol: 1e-20,
            ..FitConfig::default()
        };
        let r = nelder_mead(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &cfg,
        )
        .unwrap();
        assert!(r.evals <= 2000 + 2);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn estimates_respect_bounds() {
        // Unconstrained minimum at 3 lies outside [0, 1].
        let r = nelder_mead(|x| (x[0] - 3.0).powi(2), &one_d(0.0, 1.0, 0.5)).unwrap();
        assert!(r.x[0] >= 0.0 && r.x[0] <= 1.0);
        assert!(r.x[0] > 0.99);
    }

    #[test]
    fn nonfinite_start_is_an_error() {
        let err = nelder_mead(|_| f64::NAN, &one_d(0.0, 1.0, 0.5)).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn coefficient_validation() {
        let mut cfg = one_d(0.0, 1.0, 0.5);
        cfg.coefficients.expansion = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = one_d(0.0, 1.0, 1.0);
        assert!(cfg.validate().is_err());
        cfg.free[0].x0 = Some(0.5);
        cfg.coefficients.shrink = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn no_free_params_reproduces_generator() {
        let p = ParamSet::estimated();
        let y0 = seeded_infection(&p);
        let years: Vec<i32> = (1990..=2018).collect();
        let cases = predict_incidence(&p, &y0, &years, 0.01).unwrap();
        let data = IncidenceSeries::new(years, cases).unwrap();
        let r = fit(&data, &FitConfig::default(), &p, &y0).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.evals, 1);
        assert!(r.converged);
    }
}
