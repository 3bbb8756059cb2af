//! Constructive check that a linear image encoder cannot align a composite
//! image perfectly with a label when only one part of it does.
//!
//! Setting: `f(x) = A x`, image `x = x1 + x2` with `f(x1)` pointing exactly
//! along the label embedding `g_y` and `x2` an independent, imperfectly
//! aligned part. Then `cos(f(x), g_y) < 1`. Instances enforce margins
//! (bounded `cos(f(x2), g_y)`, a norm floor, a conditioning floor) so the
//! strict inequality can be tested with a gap of `1e-9`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::encoder::LinearEncoder;
use crate::error::{Result, WcaError};
use crate::math::cosine;
use crate::rng::Stream;

pub const DEFAULT_COS2_MAX: f64 = 0.9;
pub const DEFAULT_NORM_FLOOR: f64 = 0.1;
/// Gap below 1 every constructed instance must show.
pub const THEOREM_EPS: f64 = 1e-9;
pub const LINEARITY_TOL: f64 = 1e-9;
pub const RESAMPLE_BUDGET: usize = 1000;
/// Smallest accepted ratio of singular values for `[x1; x2]`, `[Ax1; Ax2]` and `A`.
pub const CONDITION_FLOOR: f64 = 1e-6;
const ALIGN_TOL: f64 = 1e-9;
const RESIDUAL_TOL: f64 = 1e-8;
/// Lower bound on `cos(f(x2), g_y)`; keeps `f(x2)` off the negative label axis.
const ANTI_ALIGN_FLOOR: f64 = -0.99;

/// Hypothesis an instance can violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Invariant {
    EncoderRank,
    Residual,
    Aligned,
    CosineBound,
    Independence,
    NormFloor,
    NonzeroImage,
    ImageIndependence,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Invariant::EncoderRank => "encoder A is rank deficient",
            Invariant::Residual => "least-squares residual of A x1 = c g_y above 1e-8",
            Invariant::Aligned => "cos(A x1, g_y) differs from 1",
            Invariant::CosineBound => "cos(A x2, g_y) outside [-0.99, cos2_max]",
            Invariant::Independence => "x1 and x2 are not linearly independent",
            Invariant::NormFloor => "component norm below the floor",
            Invariant::NonzeroImage => "A x1 or A x2 is zero",
            Invariant::ImageIndependence => "A x1 and A x2 are not linearly independent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub cos2_max: f64,
    pub min_component_norm: f64,
}

impl TheoremConfig {
    pub fn new(d_in: usize, d_out: usize, cos2_max: f64) -> Self {
        TheoremConfig {
            d_in,
            d_out,
            cos2_max,
            min_component_norm: DEFAULT_NORM_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in < 2 || self.d_out < 2 {
            return Err(WcaError::config(format!(
                "theorem dimensions must be at least 2, got d_in={} d_out={}",
                self.d_in, self.d_out
            )));
        }
        if !(-1.0..=0.99).contains(&self.cos2_max) {
            return Err(WcaError::config(format!(
                "--cos2-max must lie in [-1, 0.99], got {}",
                self.cos2_max
            )));
        }
        if !(self.min_component_norm > 0.0 && self.min_component_norm.is_finite()) {
            return Err(WcaError::config("norm floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremInstance {
    pub encoder: LinearEncoder,
    pub g_y: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub cos2_max: f64,
    pub min_component_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sigma_min / sigma_max` of the two-row matrix `[a; b]`.
fn pair_condition(a: &[f64], b: &[f64]) -> f64 {
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let tr = aa + bb;
    let disc = ((aa - bb).powi(2) + 4.0 * ab * ab).sqrt();
    let hi = 0.5 * (tr + disc);
    let lo = (0.5 * (tr - disc)).max(0.0);
    if hi <= 0.0 {
        0.0
    } else {
        (lo / hi).sqrt()
    }
}

fn matrix_condition(m: &DMatrix<f64>) -> f64 {
    let s = m.singular_values();
    let hi = s.max();
    if hi <= 0.0 {
        0.0
    } else {
        s.min() / hi
    }
}

impl TheoremInstance {
    /// Builds an instance from explicit parts and checks every invariant.
    pub fn from_parts(
        encoder: LinearEncoder,
        g_y: Vec<f64>,
        x1: Vec<f64>,
        x2: Vec<f64>,
        cos2_max: f64,
        min_component_norm: f64,
    ) -> Result<Self> {
        let inst = TheoremInstance {
            encoder,
            g_y,
            x1,
            x2,
            cos2_max,
            min_component_norm,
        };
        inst.check().map_err(|inv| WcaError::domain(format!("invalid theorem instance: {inv}")))?;
        Ok(inst)
    }

    pub fn fx1(&self) -> Vec<f64> {
        self.encoder.apply(&self.x1).expect("dimensions checked")
    }

    pub fn fx2(&self) -> Vec<f64> {
        self.encoder.apply(&self.x2).expect("dimensions checked")
    }

    pub fn whole(&self) -> Vec<f64> {
        self.x1.iter().zip(&self.x2).map(|(a, b)| a + b).collect()
    }

    /// `cos(A (x1 + x2), g_y)` with no validity checks.
    pub fn whole_cosine(&self) -> Result<f64> {
        cosine(&self.encoder.apply(&self.whole())?, &self.g_y)
    }

    /// `max |A x1 + A x2 - A (x1 + x2)|`.
    pub fn linearity_error(&self) -> f64 {
        let sum: Vec<f64> = self.fx1().iter().zip(self.fx2()).map(|(a, b)| a + b).collect();
        let joint = self.encoder.apply(&self.whole()).expect("dimensions checked");
        sum.iter().zip(joint).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// First violated invariant, if any.
    pub fn check(&self) -> std::result::Result<(), Invariant> {
        let d_in = self.encoder.d_in();
        if self.x1.len() != d_in || self.x2.len() != d_in || self.g_y.len() != self.encoder.d_out() {
            return Err(Invariant::EncoderRank);
        }
        if norm(&self.g_y) == 0.0 {
            return Err(Invariant::Aligned);
        }
        if norm(&self.x1) < self.min_component_norm || norm(&self.x2) < self.min_component_norm {
            return Err(Invariant::NormFloor);
        }
        let (fx1, fx2) = (self.fx1(), self.fx2());
        if norm(&fx1) == 0.0 || norm(&fx2) == 0.0 {
            return Err(Invariant::NonzeroImage);
        }
        let c1 = cosine(&fx1, &self.g_y).map_err(|_| Invariant::NonzeroImage)?;
        if (c1 - 1.0).abs() > ALIGN_TOL {
            return Err(Invariant::Aligned);
        }
        let c2 = cosine(&fx2, &self.g_y).map_err(|_| Invariant::NonzeroImage)?;
        if c2 > self.cos2_max || c2 < ANTI_ALIGN_FLOOR {
            return Err(Invariant::CosineBound);
        }
        if pair_condition(&self.x1, &self.x2) < CONDITION_FLOOR {
            return Err(Invariant::Independence);
        }
        if pair_condition(&fx1, &fx2) < CONDITION_FLOOR {
            return Err(Invariant::ImageIndependence);
        }
        Ok(())
    }
}

/// Samples a valid instance: Gaussian `A`, unit `g_y`, `x1` solving
/// `A x1 = c g_y` for `c ~ U(0.5, 2)`, then `x2` by rejection.
///
/// When `d_out > d_in` not every `g_y` is reachable, so `g_y` is drawn
/// inside the column space of `A`.
pub fn construct_instance(stream: &mut Stream, cfg: &TheoremConfig) -> Result<TheoremInstance> {
    construct_with(stream, cfg, None, None)
}

/// [`construct_instance`] with the encoder and/or `g_y` fixed by the caller.
pub fn construct_with(
    stream: &mut Stream,
    cfg: &TheoremConfig,
    encoder: Option<&LinearEncoder>,
    g_y: Option<&[f64]>,
) -> Result<TheoremInstance> {
    cfg.validate()?;
    if let Some(a) = encoder {
        if a.d_in() != cfg.d_in || a.d_out() != cfg.d_out {
            return Err(WcaError::config(format!(
                "forced encoder is {}x{}, expected {}x{}",
                a.d_out(),
                a.d_in(),
                cfg.d_out,
                cfg.d_in
            )));
        }
    }
    if let Some(g) = g_y {
        if g.len() != cfg.d_out || norm(g) == 0.0 {
            return Err(WcaError::config("forced g_y must be a nonzero vector of length d_out"));
        }
    }

    let mut failures: BTreeMap<Invariant, usize> = BTreeMap::new();
    let mut attempts = 0;
    while attempts < RESAMPLE_BUDGET {
        attempts += 1;
        let a = match encoder {
            Some(a) => a.clone(),
            None => LinearEncoder::gaussian(stream, cfg.d_out, cfg.d_in)?,
        };
        let rank_ok = matrix_condition(a.matrix()) >= CONDITION_FLOOR;
        if !rank_ok && encoder.is_none() {
            *failures.entry(Invariant::EncoderRank).or_default() += 1;
            continue;
        }
        let g: Vec<f64> = match g_y {
            Some(g) => g.to_vec(),
            None if cfg.d_out > cfg.d_in => a.apply(&stream.normal_vec(cfg.d_in))?,
            None => stream.normal_vec(cfg.d_out),
        };
        let gn = norm(&g);
        if gn == 0.0 {
            *failures.entry(Invariant::Aligned).or_default() += 1;
            continue;
        }
        let g: Vec<f64> = g.iter().map(|v| v / gn).collect();

        let c = stream.uniform(0.5, 2.0);
        let target = DVector::from_iterator(cfg.d_out, g.iter().map(|v| c * v));
        let svd = a.matrix().clone().svd(true, true);
        let x1 = match svd.solve(&target, 1e-12) {
            Ok(x) => x,
            Err(_) => {
                *failures.entry(Invariant::EncoderRank).or_default() += 1;
                continue;
            }
        };
        let residual = (a.matrix() * &x1 - &target).norm();
        if residual > RESIDUAL_TOL {
            *failures.entry(Invariant::Residual).or_default() += 1;
            if encoder.is_some() && g_y.is_some() {
                break;
            }
            continue;
        }
        let x1: Vec<f64> = x1.as_slice().to_vec();

        // x2 by rejection; A and x1 stay fixed while we search.
        let mut inst = TheoremInstance {
            encoder: a,
            g_y: g,
            x1,
            x2: Vec::new(),
            cos2_max: cfg.cos2_max,
            min_component_norm: cfg.min_component_norm,
        };
        if norm(&inst.x1) < cfg.min_component_norm {
            // Rescaling x1 keeps A x1 on the g_y ray.
            let s = 2.0 * cfg.min_component_norm / norm(&inst.x1);
            inst.x1.iter_mut().for_each(|v| *v *= s);
        }
        let fx1 = inst.fx1();
        if norm(&fx1) == 0.0 || cosine(&fx1, &inst.g_y).map_or(true, |c| (c - 1.0).abs() > ALIGN_TOL) {
            *failures.entry(Invariant::Aligned).or_default() += 1;
            continue;
        }
        while attempts <= RESAMPLE_BUDGET {
            inst.x2 = stream.normal_vec(cfg.d_in);
            match inst.check() {
                Ok(()) => return Ok(inst),
                Err(inv) => *failures.entry(inv).or_default() += 1,
            }
            attempts += 1;
        }
    }
    let invariant = failures
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map_or("none recorded".to_string(), |(inv, _)| inv.to_string());
    Err(WcaError::Construction {
        attempts: attempts.min(RESAMPLE_BUDGET),
        invariant,
    })
}

/// `cos(f(x1 + x2), g_y)` for a valid instance.
pub fn verify_theorem(inst: &TheoremInstance) -> Result<f64> {
    inst.check()
        .map_err(|inv| WcaError::domain(format!("invalid theorem instance: {inv}")))?;
    inst.whole_cosine()
}

/// Cosine of the whole as `x2` is scaled by each factor, with `A`, `x1`, `g_y` fixed.
pub fn shrink_profile(inst: &TheoremInstance, factors: &[f64]) -> Result<Vec<f64>> {
    factors
        .iter()
        .map(|s| {
            let mut scaled = inst.clone();
            scaled.x2.iter_mut().for_each(|v| *v *= s);
            scaled.whole_cosine()
        })
        .collect()
}

pub const SHRINK_SCHEDULE: [f64; 5] = [1.0, 0.5, 0.25, 0.1, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub trials: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub cos2_max: f64,
    pub max_cos: Option<f64>,
    /// Seed that reproduces the worst trial with `trials = 1`.
    pub worst_seed: Option<u64>,
    pub violations: usize,
    pub linearity_max_err: f64,
    pub shrink_monotone: bool,
}

/// Stream for trial seed `s`.
pub fn trial_stream(trial_seed: u64) -> Stream {
    Stream::new(trial_seed, "theorem-trial")
}

/// Constructs `trials` instances with trial seeds `seed, seed + 1, ...`,
/// recording the largest whole-image cosine, margin violations, the worst
/// linearity error and whether shrinking `x2` ever lowered the cosine.
pub fn counterexample_probe(seed: u64, trials: usize, cfg: &TheoremConfig) -> Result<ProbeSummary> {
    cfg.validate()?;
    let per_trial = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let trial_seed = seed.wrapping_add(t);
            let inst = construct_instance(&mut trial_stream(trial_seed), cfg)?;
            let cos = verify_theorem(&inst)?;
            let profile = shrink_profile(&inst, &SHRINK_SCHEDULE)?;
            let monotone = profile.windows(2).all(|w| w[1] >= w[0] - 1e-12);
            Ok((trial_seed, cos, inst.linearity_error(), monotone))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = ProbeSummary {
        trials,
        d_in: cfg.d_in,
        d_out: cfg.d_out,
        cos2_max: cfg.cos2_max,
        max_cos: None,
        worst_seed: None,
        violations: 0,
        linearity_max_err: 0.0,
        shrink_monotone: true,
    };
    for (trial_seed, cos, lin, monotone) in per_trial {
        if summary.max_cos.is_none_or(|m| cos > m) {
            summary.max_cos = Some(cos);
            summary.worst_seed = Some(trial_seed);
        }
        if cos >= 1.0 - THEOREM_EPS {
            summary.violations += 1;
        }
        summary.linearity_max_err = summary.linearity_max_err.max(lin);
        summary.shrink_monotone &= monotone;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn identity_instance(x2: Vec<f64>) -> TheoremInstance {
        TheoremInstance {
            encoder: LinearEncoder::identity(2).unwrap(),
            g_y: vec![1.0, 0.0],
            x1: vec![1.0, 0.0],
            x2,
            cos2_max: 0.9,
            min_component_norm: 0.1,
        }
    }

    #[test]
    fn hand_example() {
        let inst = identity_instance(vec![0.0, 1.0]);
        let c = verify_theorem(&inst).unwrap();
        assert_abs_diff_eq!(c, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn tiny_x2_approaches_one_but_stays_below() {
        let inst = identity_instance(vec![0.0, 0.001]);
        assert_eq!(inst.check(), Err(Invariant::NormFloor));
        let c = inst.whole_cosine().unwrap();
        assert!(c < 1.0 && c > 0.9999);
    }

    #[test]
    fn dependent_x2_rejected() {
        let inst = identity_instance(vec![2.0, 0.0]);
        assert!(inst.check().is_err());
        assert!(verify_theorem(&inst).is_err());
    }

    #[test]
    fn anti_aligned_x2_rejected() {
        // A x2 on the negative g_y axis would give cos = 1 for the whole.
        let inst = identity_instance(vec![-0.5, 0.0]);
        assert!(inst.check().is_err());
        assert_abs_diff_eq!(inst.whole_cosine().unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn forced_identity_construction() {
        let cfg = TheoremConfig::new(2, 2, 0.9);
        let a = LinearEncoder::identity(2).unwrap();
        let mut s = Stream::new(3, "forced");
        let inst = construct_with(&mut s, &cfg, Some(&a), Some(&[1.0, 0.0])).unwrap();
        assert!(inst.x1[0] > 0.0);
        assert_abs_diff_eq!(inst.x1[1], 0.0, epsilon = 1e-12);
        assert!(inst.check().is_ok());
    }

    #[test]
    fn thousand_instances_construct() {
        let cfg = TheoremConfig::new(8, 8, 0.9);
        for t in 0..1000 {
            let inst = construct_instance(&mut trial_stream(t), &cfg).unwrap();
            assert_eq!(inst.check(), Ok(()));
            assert!(verify_theorem(&inst).unwrap() < 1.0 - THEOREM_EPS);
        }
    }

    #[test]
    fn rectangular_encoders() {
        for (d_in, d_out) in [(4, 9), (9, 4), (2, 2)] {
            let cfg = TheoremConfig::new(d_in, d_out, 0.5);
            let s = counterexample_probe(11, 50, &cfg).unwrap();
            assert_eq!(s.violations, 0, "{d_in}x{d_out}");
        }
    }

    #[test]
    fn impossible_margin_reports_invariant() {
        // g_y forced outside the column space of a rank-one encoder.
        let cfg = TheoremConfig::new(2, 2, 0.9);
        let a = LinearEncoder::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let err = construct_with(&mut Stream::new(0, "x"), &cfg, Some(&a), Some(&[0.0, 1.0])).unwrap_err();
        match err {
            WcaError::Construction { invariant, .. } => assert!(invariant.contains("residual")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_probe() {
        let s = counterexample_probe(0, 0, &TheoremConfig::new(8, 8, 0.9)).unwrap();
        assert_eq!(s.trials, 0);
        assert_eq!(s.max_cos, None);
        assert_eq!(s.worst_seed, None);
    }

    #[test]
    fn worst_seed_reproduces() {
        let cfg = TheoremConfig::new(6, 6, 0.9);
        let s = counterexample_probe(100, 40, &cfg).unwrap();
        let again = counterexample_probe(s.worst_seed.unwrap(), 1, &cfg).unwrap();
        assert_eq!(again.max_cos, s.max_cos);
    }

    #[test]
    fn bad_config() {
        assert!(TheoremConfig::new(1, 8, 0.9).validate().is_err());
        assert!(TheoremConfig::new(8, 8, 0.995).validate().is_err());
        assert!(TheoremConfig::new(8, 8, -1.0).validate().is_ok());
    }
}
