//! Per-DoF Student-t motion model.
//!
//! Each of the six motion components is an independent location-scale
//! Student-t. Fitting runs EM on the Gaussian scale-mixture form of the
//! distribution (latent precision weights). Location and scale take the
//! usual M-step; the degrees of freedom maximize the observed likelihood
//! directly (the ECME variant), which avoids the very slow drift of plain EM
//! when the data are close to Gaussian.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use rand::Rng;
use rand_distr::Distribution;
use thiserror::Error;

use crate::geom::Motion6DoF;
use crate::math;

pub const NU_MIN: f64 = 0.5;
pub const NU_MAX: f64 = 1000.0;
pub const SCALE_FLOOR: f64 = 1e-12;
pub const MIN_FIT_SAMPLES: usize = 30;
pub const MAX_EM_ITERATIONS: usize = 500;
pub const EM_RELATIVE_TOLERANCE: f64 = 1e-10;

/// Record keys of the six components, in `Motion6DoF::to_array` order.
pub const DOF_NAMES: [&str; 6] = ["t_x", "t_y", "t_z", "alpha", "beta", "gamma"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MotionModelError {
    #[error("need at least {MIN_FIT_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite sample value in component {0}")]
    NonFiniteSample(&'static str),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: &'static str },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Location-scale Student-t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentT {
    pub nu: f64,
    pub loc: f64,
    pub scale: f64,
}

impl StudentT {
    pub fn new(nu: f64, loc: f64, scale: f64) -> Result<Self, MotionModelError> {
        let bad = |reason| MotionModelError::InvalidParameter {
            name: "student-t".to_string(),
            reason,
        };
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(bad("nu must be positive and finite"));
        }
        if !loc.is_finite() {
            return Err(bad("loc must be finite"));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(bad("scale must be positive and finite"));
        }
        Ok(StudentT { nu, loc, scale })
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.loc) / self.scale;
        let nu = self.nu;
        math::lgamma((nu + 1.0) / 2.0)
            - math::lgamma(nu / 2.0)
            - 0.5 * math::log(nu * core::f64::consts::PI)
            - math::log(self.scale)
            - (nu + 1.0) / 2.0 * math::log1p(z * z / nu)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let t = rand_distr::StudentT::new(self.nu)
            .expect("validated degrees of freedom")
            .sample(rng);
        self.loc + self.scale * t
    }
}

/// Closed truncation interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

/// Six independent Student-t marginals, optionally truncated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub marginals: [StudentT; 6],
    pub bounds: [Option<Bounds>; 6],
}

impl MotionModel {
    pub fn new(marginals: [StudentT; 6]) -> Self {
        MotionModel {
            marginals,
            bounds: [None; 6],
        }
    }

    /// Restricts component `dof` to `[lower, upper]`; the interval must contain `loc`.
    pub fn with_bounds(mut self, dof: usize, lower: f64, upper: f64) -> Result<Self, MotionModelError> {
        let loc = self.marginals[dof].loc;
        if !(lower < upper) || !(lower <= loc && loc <= upper) {
            return Err(MotionModelError::InvalidParameter {
                name: DOF_NAMES[dof].to_string(),
                reason: "bounds must satisfy lower < upper and contain loc",
            });
        }
        self.bounds[dof] = Some(Bounds { lower, upper });
        Ok(self)
    }

    /// Draws one motion. Truncated components are rejection-resampled.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Motion6DoF {
        let mut out = [0.0; 6];
        for (k, slot) in out.iter_mut().enumerate() {
            let dist = &self.marginals[k];
            *slot = loop {
                let x = dist.sample(rng);
                match self.bounds[k] {
                    Some(b) if !b.contains(x) => continue,
                    _ => break x,
                }
            };
        }
        Motion6DoF::from_array(out)
    }

    /// Serializes as `key = value` lines, one block per component.
    pub fn to_record(&self) -> String {
        let mut s = String::from("# per-DoF Student-t motion model\n");
        for (k, name) in DOF_NAMES.iter().enumerate() {
            let m = &self.marginals[k];
            let _ = writeln!(s, "{name}.nu = {:?}", m.nu);
            let _ = writeln!(s, "{name}.loc = {:?}", m.loc);
            let _ = writeln!(s, "{name}.scale = {:?}", m.scale);
            if let Some(b) = self.bounds[k] {
                let _ = writeln!(s, "{name}.lower = {:?}", b.lower);
                let _ = writeln!(s, "{name}.upper = {:?}", b.upper);
            }
        }
        s
    }

    pub fn from_record(text: &str) -> Result<Self, MotionModelError> {
        // [nu, loc, scale, lower, upper] per component.
        let mut fields = [[None::<f64>; 5]; 6];
        const ATTRS: [&str; 5] = ["nu", "loc", "scale", "lower", "upper"];
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |message: String| MotionModelError::Malformed {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| malformed("expected `key = value`".to_string()))?;
            let (key, value) = (key.trim(), value.trim());
            let (dof, attr) = key
                .split_once('.')
                .ok_or_else(|| malformed(format!("unknown key `{key}`")))?;
            let k = DOF_NAMES
                .iter()
                .position(|n| *n == dof)
                .ok_or_else(|| malformed(format!("unknown component `{dof}`")))?;
            let a = ATTRS
                .iter()
                .position(|n| *n == attr)
                .ok_or_else(|| malformed(format!("unknown attribute `{attr}`")))?;
            let v: f64 = value
                .parse()
                .map_err(|_| malformed(format!("`{key}`: `{value}` is not a number")))?;
            if fields[k][a].replace(v).is_some() {
                return Err(malformed(format!("duplicate key `{key}`")));
            }
        }
        let mut marginals = [StudentT {
            nu: 1.0,
            loc: 0.0,
            scale: 1.0,
        }; 6];
        let mut bounds = [None; 6];
        for k in 0..6 {
            let get = |a: usize| {
                fields[k][a].ok_or_else(|| MotionModelError::MissingField(format!("{}.{}", DOF_NAMES[k], ATTRS[a])))
            };
            marginals[k] = StudentT::new(get(0)?, get(1)?, get(2)?).map_err(|e| match e {
                MotionModelError::InvalidParameter { reason, .. } => MotionModelError::InvalidParameter {
                    name: DOF_NAMES[k].to_string(),
                    reason,
                },
                other => other,
            })?;
            match (fields[k][3], fields[k][4]) {
                (None, None) => {}
                (Some(lower), Some(upper)) => bounds[k] = Some(Bounds { lower, upper }),
                (Some(_), None) => return Err(MotionModelError::MissingField(format!("{}.upper", DOF_NAMES[k]))),
                (None, Some(_)) => return Err(MotionModelError::MissingField(format!("{}.lower", DOF_NAMES[k]))),
            }
        }
        let mut model = MotionModel::new(marginals);
        for (k, b) in bounds.iter().enumerate() {
            if let Some(b) = b {
                model = model.with_bounds(k, b.lower, b.upper)?;
            }
        }
        Ok(model)
    }
}

/// Outcome of fitting one marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalFit {
    pub dist: StudentT,
    pub iterations: usize,
    pub converged: bool,
    /// `nu` ended at [`NU_MAX`]: the data look Gaussian.
    pub nu_at_upper_bound: bool,
    /// Zero spread; `scale` was clamped to [`SCALE_FLOOR`].
    pub degenerate: bool,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: MotionModel,
    pub marginals: [MarginalFit; 6],
}

/// Fits all six marginals by maximum likelihood.
pub fn fit(samples: &[Motion6DoF]) -> Result<FitReport, MotionModelError> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(MotionModelError::TooFewSamples(samples.len()));
    }
    let mut fits = Vec::with_capacity(6);
    for (k, name) in DOF_NAMES.iter().enumerate() {
        let column: Vec<f64> = samples.iter().map(|m| m.to_array()[k]).collect();
        if column.iter().any(|x| !x.is_finite()) {
            return Err(MotionModelError::NonFiniteSample(name));
        }
        fits.push(fit_student_t(&column)?);
    }
    let marginals: [MarginalFit; 6] = fits.try_into().expect("six components");
    let model = MotionModel::new(marginals.map(|f| f.dist));
    Ok(FitReport { model, marginals })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// EM fit of a single location-scale Student-t.
pub fn fit_student_t(x: &[f64]) -> Result<MarginalFit, MotionModelError> {
    let n = x.len();
    if n < MIN_FIT_SAMPLES {
        return Err(MotionModelError::TooFewSamples(n));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let loc0 = median(&sorted);
    let mut dev: Vec<f64> = x.iter().map(|v| (v - loc0).abs()).collect();
    dev.sort_by(|a, b| a.total_cmp(b));
    let mut scale0 = 1.4826 * median(&dev);
    if !(scale0 > 0.0) {
        let mean = x.iter().sum::<f64>() / n as f64;
        scale0 = math::sqrt(x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64);
    }
    if !(scale0 > SCALE_FLOOR) {
        let dist = StudentT {
            nu: NU_MAX,
            loc: loc0,
            scale: SCALE_FLOOR,
        };
        return Ok(MarginalFit {
            dist,
            iterations: 0,
            converged: true,
            nu_at_upper_bound: true,
            degenerate: true,
            log_likelihood: x.iter().map(|v| dist.log_pdf(*v)).sum(),
        });
    }

    let mut dist = StudentT {
        nu: 5.0,
        loc: loc0,
        scale: scale0,
    };
    let mut ll = log_likelihood(x, &dist);
    let mut weights = alloc::vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_EM_ITERATIONS {
        iterations += 1;
        // E-step: posterior mean of the latent precision of each sample.
        let (nu, loc, scale) = (dist.nu, dist.loc, dist.scale);
        let mut sum_w = 0.0;
        let mut sum_wx = 0.0;
        for (w, &xi) in weights.iter_mut().zip(x) {
            let z = (xi - loc) / scale;
            *w = (nu + 1.0) / (nu + z * z);
            sum_w += *w;
            sum_wx += *w * xi;
        }
        // M-step.
        let new_loc = sum_wx / sum_w;
        let ss: f64 = weights.iter().zip(x).map(|(w, xi)| w * (xi - new_loc) * (xi - new_loc)).sum();
        let new_scale = math::sqrt(ss / n as f64).max(SCALE_FLOOR);
        let new_nu = maximize_nu(x, new_loc, new_scale);
        dist = StudentT {
            nu: new_nu,
            loc: new_loc,
            scale: new_scale,
        };
        let new_ll = log_likelihood(x, &dist);
        let change = (new_ll - ll).abs() / new_ll.abs().max(1.0);
        ll = new_ll;
        if change < EM_RELATIVE_TOLERANCE {
            converged = true;
            break;
        }
    }
    Ok(MarginalFit {
        dist,
        iterations,
        converged,
        nu_at_upper_bound: dist.nu >= NU_MAX,
        degenerate: false,
        log_likelihood: ll,
    })
}

fn log_likelihood(x: &[f64], d: &StudentT) -> f64 {
    let nu = d.nu;
    let constant = math::lgamma((nu + 1.0) / 2.0)
        - math::lgamma(nu / 2.0)
        - 0.5 * math::log(nu * core::f64::consts::PI)
        - math::log(d.scale);
    let tail: f64 = x
        .iter()
        .map(|xi| {
            let z = (xi - d.loc) / d.scale;
            math::log1p(z * z / nu)
        })
        .sum();
    x.len() as f64 * constant - (nu + 1.0) / 2.0 * tail
}

/// Maximizer of the likelihood over `nu` in `[NU_MIN, NU_MAX]` with location
/// and scale held fixed, by bisection on the sign of the derivative in `ln nu`.
fn maximize_nu(x: &[f64], loc: f64, scale: f64) -> f64 {
    let n = x.len() as f64;
    let z2: Vec<f64> = x.iter().map(|v| ((v - loc) / scale) * ((v - loc) / scale)).collect();
    let slope = |nu: f64| {
        let (mut a, mut b) = (0.0, 0.0);
        for q in &z2 {
            a += math::log1p(q / nu);
            b += q / (nu + q);
        }
        0.5 * n * (digamma((nu + 1.0) / 2.0) - digamma(nu / 2.0) - 1.0 / nu) - 0.5 * a
            + (nu + 1.0) / (2.0 * nu) * b
    };
    if slope(NU_MAX) >= 0.0 {
        return NU_MAX;
    }
    if slope(NU_MIN) <= 0.0 {
        return NU_MIN;
    }
    let (mut lo, mut hi) = (math::log(NU_MIN), math::log(NU_MAX));
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if slope(math::exp(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    math::exp(0.5 * (lo + hi))
}

/// Digamma function for positive arguments.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    acc + math::log(x) - 0.5 * inv - series
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::vec;

    fn t_model(nu: f64, loc: f64, scale: f64) -> MotionModel {
        MotionModel::new([StudentT::new(nu, loc, scale).unwrap(); 6])
    }

    #[test]
    fn digamma_matches_reference() {
        for x in [0.1, 0.5, 1.0, 1.5, 2.0, 3.7, 10.0, 250.0, 1e4] {
            let reference = statrs::function::gamma::digamma(x);
            assert!((digamma(x) - reference).abs() < 1e-12 * reference.abs().max(1.0), "x={x} {} {reference}", digamma(x));
        }
    }

    #[test]
    fn too_few_samples() {
        let s = vec![Motion6DoF::ZERO; 29];
        assert_eq!(fit(&s), Err(MotionModelError::TooFewSamples(29)));
    }

    #[test]
    fn constant_samples_are_degenerate() {
        let m = Motion6DoF::new(0.25, 1.0, -2.0, 0.1, 0.0, -0.3);
        let report = fit(&vec![m; 50]).unwrap();
        for (k, f) in report.marginals.iter().enumerate() {
            assert!(f.degenerate);
            assert_eq!(f.dist.loc, m.to_array()[k]);
            assert_eq!(f.dist.scale, SCALE_FLOOR);
            assert_eq!(f.dist.nu, NU_MAX);
        }
    }

    #[test]
    fn recovers_heavy_tailed_marginal() {
        let truth = StudentT::new(3.0, 0.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x: Vec<f64> = (0..100_000).map(|_| truth.sample(&mut rng)).collect();
        let f = fit_student_t(&x).unwrap();
        assert!(f.converged);
        assert!((f.dist.nu - 3.0).abs() < 0.3, "{:?}", f.dist);
        assert!((f.dist.scale - 0.1).abs() < 0.01);
        assert!(f.dist.loc.abs() < 0.01);
    }

    #[test]
    fn gaussian_samples_push_nu_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x: Vec<f64> = (0..100_000)
            .map(|_| 1.5 + 0.2 * rand_distr::Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let f = fit_student_t(&x).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        assert!(f.dist.nu > 100.0, "{:?}", f.dist);
        assert!(((f.dist.loc - mean) / mean).abs() < 0.05);
        assert!(((f.dist.scale - std) / std).abs() < 0.05);
    }

    #[test]
    fn light_tailed_quantile_sample_hits_upper_bound() {
        // Normal quantiles at midpoints: no sampling noise, tails lighter than any t.
        let n = 20_000;
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..n)
            .map(|i| {
                use statrs::distribution::ContinuousCDF;
                normal.inverse_cdf((i as f64 + 0.5) / n as f64)
            })
            .collect();
        let f = fit_student_t(&x).unwrap();
        assert!(f.nu_at_upper_bound);
        assert!((f.dist.scale - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_scale_sample_returns_loc() {
        let model = t_model(4.0, 0.75, SCALE_FLOOR);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..100 {
            let m = model.sample(&mut rng);
            assert!((m.tx - 0.75).abs() < 1e-9);
        }
        let exact = MotionModel {
            marginals: [StudentT { nu: 4.0, loc: 0.5, scale: 0.0 }; 6],
            bounds: [None; 6],
        };
        assert_eq!(exact.sample(&mut rng).tx, 0.5);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let model = t_model(3.0, 0.0, 0.1);
        let a = model.sample(&mut ChaCha8Rng::seed_from_u64(33));
        let b = model.sample(&mut ChaCha8Rng::seed_from_u64(33));
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_bounds_hold() {
        let model = t_model(1.0, 0.0, 1.0).with_bounds(0, -0.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..10_000 {
            let m = model.sample(&mut rng);
            assert!(m.tx >= -0.5 && m.tx <= 0.5);
        }
        assert!(t_model(1.0, 0.0, 1.0).with_bounds(0, 0.1, 0.5).is_err());
        assert!(t_model(1.0, 0.0, 1.0).with_bounds(0, 0.5, -0.5).is_err());
    }

    #[test]
    fn record_round_trip() {
        let model = MotionModel::new([
            StudentT::new(3.0, 0.1, 0.2).unwrap(),
            StudentT::new(1000.0, -1e-3, 1e-12).unwrap(),
            StudentT::new(2.5, 1.0 / 3.0, 0.1).unwrap(),
            StudentT::new(0.5, 0.0, 5e-3).unwrap(),
            StudentT::new(7.0, -0.0, 1e-4).unwrap(),
            StudentT::new(12.5, 0.002, 0.003).unwrap(),
        ])
        .with_bounds(2, -1.0, 2.0)
        .unwrap();
        let back = MotionModel::from_record(&model.to_record()).unwrap();
        assert_eq!(back, model);
        for (a, b) in model.marginals.iter().zip(&back.marginals) {
            assert_eq!(a.loc.to_bits(), b.loc.to_bits());
        }
    }

    #[test]
    fn record_missing_field_is_named() {
        let rec = t_model(3.0, 0.0, 1.0).to_record().replace("beta.scale = 1.0\n", "");
        assert_eq!(
            MotionModel::from_record(&rec),
            Err(MotionModelError::MissingField("beta.scale".to_string()))
        );
        let bad = t_model(3.0, 0.0, 1.0).to_record().replace("gamma.nu = 3.0", "gamma.nu = three");
        assert!(matches!(MotionModel::from_record(&bad), Err(MotionModelError::Malformed { .. })));
    }

    #[test]
    fn hand_written_record_matches_constructor() {
        let mut text = String::new();
        for name in DOF_NAMES {
            text.push_str(&format!("{name}.nu = 3\n{name}.loc = 0\n{name}.scale = 0.1\n"));
        }
        assert_eq!(MotionModel::from_record(&text).unwrap(), t_model(3.0, 0.0, 0.1));
    }
}
