//! Evaluable modular functions M(t, x, xi) with structural validation.
//!
//! A modular function is a black box; every structural property (evenness,
//! convexity, superlinearity, growth bounds) is checked by seeded sampling,
//! never symbolically.

use std::fmt;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::grid::Domain;

pub type EvalFn = dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync;

/// Declared growth class of a modular function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Growth {
    Arbitrary,
    /// M(t,x,xi) >= c_gr |xi|^p for |xi| > threshold.
    PowerLower { p: f64, c_gr: f64, threshold: f64 },
}

/// Evaluable N-function candidate with metadata.
#[derive(Clone)]
pub struct ModularFunction {
    eval: Arc<EvalFn>,
    dim: usize,
    isotropic: bool,
    growth: Growth,
    family: String,
    /// Largest |xi| with a finite f64 evaluation; `None` when unrestricted.
    eval_cap: Option<f64>,
}

impl fmt::Debug for ModularFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModularFunction")
            .field("dim", &self.dim)
            .field("isotropic", &self.isotropic)
            .field("growth", &self.growth)
            .field("family", &self.family)
            .field("eval_cap", &self.eval_cap)
            .finish()
    }
}

impl ModularFunction {
    pub fn new(
        dim: usize,
        isotropic: bool,
        growth: Growth,
        family: impl Into<String>,
        eval: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        assert!(dim == 1 || dim == 2, "modular functions support N in {{1, 2}}");
        ModularFunction {
            eval: Arc::new(eval),
            dim,
            isotropic,
            growth,
            family: family.into(),
            eval_cap: None,
        }
    }

    /// Isotropic modular built from a radial profile `g(t, x, |xi|)`.
    pub fn from_radial(
        dim: usize,
        growth: Growth,
        family: impl Into<String>,
        profile: impl Fn(f64, &[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ModularFunction::new(dim, true, growth, family, move |t, x, xi| {
            profile(t, x, norm(xi))
        })
    }

    /// Homogeneous power modular |xi|^p.
    pub fn power(dim: usize, p: f64) -> Self {
        ModularFunction::from_radial(
            dim,
            Growth::PowerLower { p, c_gr: 1.0, threshold: 0.0 },
            format!("power_p({p})"),
            move |_, _, s| s.powf(p),
        )
    }

    pub fn with_eval_cap(mut self, cap: f64) -> Self {
        self.eval_cap = Some(cap);
        self
    }

    pub fn eval(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        debug_assert_eq!(xi.len(), self.dim);
        (self.eval)(t, x, xi)
    }

    /// Evaluation at radius `s` along the first axis (exact for isotropic M).
    pub fn radial(&self, t: f64, x: &[f64], s: f64) -> f64 {
        let mut xi = [0.0; 2];
        xi[0] = s;
        self.eval(t, x, &xi[..self.dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn isotropic(&self) -> bool {
        self.isotropic
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn eval_cap(&self) -> Option<f64> {
        self.eval_cap
    }

    /// Radius actually used when a request exceeds the declared finite range.
    pub fn capped_radius(&self, s: f64) -> f64 {
        match self.eval_cap {
            Some(cap) => s.min(cap),
            None => s,
        }
    }
}

pub(crate) fn norm(xi: &[f64]) -> f64 {
    match xi.len() {
        1 => xi[0].abs(),
        2 => xi[0].hypot(xi[1]),
        _ => xi.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// Seeded sampling plan covering (t, x) in the domain and xi on log-spaced rays.
#[derive(Debug, Clone, Serialize)]
pub struct SamplePlan {
    pub seed: u64,
    pub tx_samples: usize,
    pub directions: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub radius_count: usize,
    pub convexity_pairs: usize,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan {
            seed: 0,
            tx_samples: 32,
            directions: 8,
            radius_min: 1e-3,
            radius_max: 1e4,
            radius_count: 22,
            convexity_pairs: 256,
        }
    }
}

impl SamplePlan {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn log_radii(&self, cap: Option<f64>) -> Vec<f64> {
        let hi = cap.map_or(self.radius_max, |c| self.radius_max.min(c));
        let (lo, n) = (self.radius_min, self.radius_count);
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    pub fn sample_tx(&self, rng: &mut ChaCha8Rng, domain: &Domain, horizon: f64) -> (f64, Vec<f64>) {
        let t = rng.random_range(0.0..horizon);
        let x = (0..domain.dim())
            .map(|k| {
                let (lo, hi) = domain.axis(k);
                rng.random_range(lo..hi)
            })
            .collect();
        (t, x)
    }

    pub fn sample_direction(&self, rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        match dim {
            1 => vec![if rng.random::<bool>() { 1.0 } else { -1.0 }],
            _ => {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                vec![theta.cos(), theta.sin()]
            }
        }
    }
}

/// Worst sample found while checking a structural condition.
#[derive(Debug, Clone, Serialize)]
pub struct WorstSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub worst: Option<WorstSample>,
}

/// Validation report for the four N-function conditions plus local integrability.
#[derive(Debug, Clone, Serialize)]
pub struct NFunctionReport {
    pub family: String,
    pub conditions: Vec<ConditionCheck>,
    /// Non-finite evaluations are structural failures, not panics.
    pub structural_failure: Option<WorstSample>,
}

impl NFunctionReport {
    pub fn pass(&self) -> bool {
        self.structural_failure.is_none() && self.conditions.iter().all(|c| c.pass)
    }
}

const EXACT_TOL: f64 = 1e-10;

/// Checks the defining conditions of an N-function by seeded sampling:
/// vanishing at zero with even, positive values; convexity in xi; sublinear
/// decay near zero; superlinear growth at infinity; local integrability; and
/// the declared power lower bound when one is present.
pub fn check_nfunction(
    m: &ModularFunction,
    domain: &Domain,
    horizon: f64,
    plan: &SamplePlan,
) -> NFunctionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let dim = m.dim();
    let mut structural: Option<WorstSample> = None;
    let track = |t: f64, x: &[f64], xi: &[f64], v: f64, structural: &mut Option<WorstSample>| {
        if !v.is_finite() && structural.is_none() {
            *structural = Some(WorstSample { t, x: x.to_vec(), xi: xi.to_vec(), value: v });
        }
        v
    };

    let txs: Vec<(f64, Vec<f64>)> =
        (0..plan.tx_samples).map(|_| plan.sample_tx(&mut rng, domain, horizon)).collect();
    let dirs: Vec<Vec<f64>> =
        (0..plan.directions).map(|_| plan.sample_direction(&mut rng, dim)).collect();
    let radii = plan.log_radii(m.eval_cap().map(|c| c / 2.0));

    let mut conditions = Vec::new();

    // Condition 1: M(t,x,0) = 0, positive away from zero, even.
    {
        let zero = vec![0.0; dim];
        let mut pass = true;
        let mut worst: Option<WorstSample> = None;
        let mut detail = String::new();
        for (t, x) in &txs {
            let v0 = track(*t, x, &zero, m.eval(*t, x, &zero), &mut structural);
            if v0.abs() > EXACT_TOL {
                pass = false;
                detail = format!("M(t,x,0) = {v0}");
                worst = Some(WorstSample { t: *t, x: x.clone(), xi: zero.clone(), value: v0 });
                break;
            }
        }
        // Positivity: the infimum over (t,x) at a unit sample must be positive.
        if pass {
            for dir in &dirs {
                let xi: Vec<f64> = dir.iter().map(|d| d * 1.0).collect();
                let inf = txs
                    .iter()
                    .map(|(t, x)| track(*t, x, &xi, m.eval(*t, x, &xi), &mut structural))
                    .fold(f64::INFINITY, f64::min);
                if !(inf > 0.0) {
                    pass = false;
                    detail = format!("ess inf M at |xi|=1 along {dir:?} is {inf}");
                    worst = Some(WorstSample { t: txs[0].0, x: txs[0].1.clone(), xi, value: inf });
                    break;
                }
            }
        }
        // Evenness.
        if pass {
            'outer: for (t, x) in &txs {
                for dir in &dirs {
                    for &r in &[0.5, 2.0] {
                        let xi: Vec<f64> = dir.iter().map(|d| d * r).collect();
                        let neg: Vec<f64> = xi.iter().map(|v| -v).collect();
                        let a = track(*t, x, &xi, m.eval(*t, x, &xi), &mut structural);
                        let b = track(*t, x, &neg, m.eval(*t, x, &neg), &mut structural);
                        if (a - b).abs() > EXACT_TOL * (1.0 + a.abs() + b.abs()) {
                            pass = false;
                            detail = format!("M(xi) = {a} but M(-xi) = {b}");
                            worst =
                                Some(WorstSample { t: *t, x: x.clone(), xi, value: (a - b).abs() });
                            break 'outer;
                        }
                    }
                }
            }
        }
        conditions.push(ConditionCheck {
            name: "zero_positive_even".into(),
            pass,
            detail,
            worst,
        });
    }

    // Condition 2: convexity in xi (midpoint test on sampled pairs).
    {
        let mut pass = true;
        let mut worst: Option<WorstSample> = None;
        let mut detail = String::new();
        let r_hi = radii.last().copied().unwrap_or(1.0).min(1e3);
        for _ in 0..plan.convexity_pairs {
            let (t, x) = &txs[rng.random_range(0..txs.len())];
            let mut pair = || -> Vec<f64> {
                let dir = plan.sample_direction(&mut rng, dim);
                let r = plan.radius_min
                    * (r_hi / plan.radius_min).powf(rng.random::<f64>());
                dir.iter().map(|d| d * r).collect()
            };
            let (xi, eta) = (pair(), pair());
            let mid: Vec<f64> = xi.iter().zip(&eta).map(|(a, b)| 0.5 * (a + b)).collect();
            let fa = track(*t, x, &xi, m.eval(*t, x, &xi), &mut structural);
            let fb = track(*t, x, &eta, m.eval(*t, x, &eta), &mut structural);
            let fm = track(*t, x, &mid, m.eval(*t, x, &mid), &mut structural);
            let slack = 1e-9 * (1.0 + fa.abs() + fb.abs());
            if fm > 0.5 * (fa + fb) + slack {
                pass = false;
                detail = format!("midpoint value {fm} exceeds chord {}", 0.5 * (fa + fb));
                worst = Some(WorstSample { t: *t, x: x.to_vec(), xi: mid, value: fm });
                break;
            }
        }
        conditions.push(ConditionCheck { name: "convex_in_xi".into(), pass, detail, worst });
    }

    // Conditions 3 and 4: M/|xi| -> 0 near zero and -> infinity at infinity,
    // read off monotone trends of the sampled sup/inf ratios along rays.
    let ray_ratio = |r: f64, reduce_min: bool, structural: &mut Option<WorstSample>| -> f64 {
        let mut acc = if reduce_min { f64::INFINITY } else { f64::NEG_INFINITY };
        for (t, x) in &txs {
            for dir in &dirs {
                let xi: Vec<f64> = dir.iter().map(|d| d * r).collect();
                let v = m.eval(*t, x, &xi);
                if !v.is_finite() && structural.is_none() {
                    *structural =
                        Some(WorstSample { t: *t, x: x.clone(), xi: xi.clone(), value: v });
                }
                let ratio = v / r;
                acc = if reduce_min { acc.min(ratio) } else { acc.max(ratio) };
            }
        }
        acc
    };

    {
        let small: Vec<f64> = radii.iter().copied().filter(|&r| r <= 1.0).collect();
        let sup_ratios: Vec<f64> =
            small.iter().map(|&r| ray_ratio(r, false, &mut structural)).collect();
        let first = sup_ratios.first().copied().unwrap_or(f64::NAN);
        let anchor = sup_ratios.last().copied().unwrap_or(f64::NAN);
        let monotone = sup_ratios.windows(2).all(|w| w[0] <= w[1] * 1.1);
        let vanishing = first <= 0.9 * anchor;
        let pass = monotone && vanishing;
        conditions.push(ConditionCheck {
            name: "sublinear_near_zero".into(),
            pass,
            detail: format!(
                "sup M/|xi| is {first:.3e} at |xi|={:.1e} vs {anchor:.3e} at |xi|={:.1e}",
                small.first().copied().unwrap_or(f64::NAN),
                small.last().copied().unwrap_or(f64::NAN)
            ),
            worst: if pass {
                None
            } else {
                Some(WorstSample {
                    t: txs[0].0,
                    x: txs[0].1.clone(),
                    xi: vec![small.first().copied().unwrap_or(0.0); dim],
                    value: first,
                })
            },
        });
    }

    {
        let large: Vec<f64> = radii.iter().copied().filter(|&r| r >= 1.0).collect();
        let inf_ratios: Vec<f64> =
            large.iter().map(|&r| ray_ratio(r, true, &mut structural)).collect();
        let anchor = inf_ratios.first().copied().unwrap_or(f64::NAN);
        let last = inf_ratios.last().copied().unwrap_or(f64::NAN);
        let monotone = inf_ratios.windows(2).all(|w| w[1] >= w[0] * 0.9);
        let growing = last >= 5.0 * anchor;
        let pass = monotone && growing;
        conditions.push(ConditionCheck {
            name: "superlinear_at_infinity".into(),
            pass,
            detail: format!(
                "inf M/|xi| grows from {anchor:.3e} to {last:.3e} across |xi| in [{:.1e}, {:.1e}]",
                large.first().copied().unwrap_or(f64::NAN),
                large.last().copied().unwrap_or(f64::NAN)
            ),
            worst: if pass {
                None
            } else {
                Some(WorstSample {
                    t: txs[0].0,
                    x: txs[0].1.clone(),
                    xi: vec![large.last().copied().unwrap_or(0.0); dim],
                    value: last,
                })
            },
        });
    }

    // Local integrability: a domain quadrature at fixed arguments stays finite.
    {
        let mut pass = true;
        let mut worst = None;
        for &r in &[0.5, 1.0, radii.last().copied().unwrap_or(1.0)] {
            let xi: Vec<f64> = dirs[0].iter().map(|d| d * r).collect();
            let mut acc = 0.0;
            for (t, x) in &txs {
                acc += m.eval(*t, x, &xi);
            }
            let mean = acc / txs.len() as f64 * domain.measure() * horizon;
            if !mean.is_finite() {
                pass = false;
                worst = Some(WorstSample { t: 0.0, x: domain.center(), xi, value: mean });
                break;
            }
        }
        conditions.push(ConditionCheck {
            name: "locally_integrable".into(),
            pass,
            detail: "sampled domain quadrature at fixed xi".into(),
            worst,
        });
    }

    // Declared power lower bound, when present.
    if let Growth::PowerLower { p, c_gr, threshold } = m.growth() {
        let mut pass = true;
        let mut worst = None;
        let mut detail = String::new();
        'outer: for (t, x) in &txs {
            for dir in &dirs {
                for &r in &radii {
                    if r <= threshold {
                        continue;
                    }
                    let xi: Vec<f64> = dir.iter().map(|d| d * r).collect();
                    let v = m.eval(*t, x, &xi);
                    let bound = c_gr * r.powf(p);
                    if v < bound * (1.0 - 1e-9) {
                        pass = false;
                        detail = format!("M = {v} below {c_gr}|xi|^{p} = {bound} at |xi| = {r}");
                        worst = Some(WorstSample { t: *t, x: x.clone(), xi, value: v });
                        break 'outer;
                    }
                }
            }
        }
        conditions.push(ConditionCheck { name: "power_lower_bound".into(), pass, detail, worst });
    }

    NFunctionReport { family: m.family().to_string(), conditions, structural_failure: structural }
}

/// Doubling diagnostic for the Delta-2 condition close to infinity.
#[derive(Debug, Clone, Serialize)]
pub struct Delta2Report {
    pub family: String,
    /// (shell radius, worst M(2 xi)/M(xi) over the shell).
    pub shells: Vec<(f64, f64)>,
    pub worst_ratio: f64,
    pub likely_delta2: bool,
}

/// Sweeps dyadic shells and reports the worst doubling ratio per shell.
/// A bounded trend suggests the Delta-2 condition close to infinity; growth
/// without bound across shells suggests it fails.
pub fn check_delta2(
    m: &ModularFunction,
    domain: &Domain,
    horizon: f64,
    plan: &SamplePlan,
) -> Delta2Report {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let txs: Vec<(f64, Vec<f64>)> =
        (0..plan.tx_samples).map(|_| plan.sample_tx(&mut rng, domain, horizon)).collect();
    let dirs: Vec<Vec<f64>> =
        (0..plan.directions).map(|_| plan.sample_direction(&mut rng, m.dim())).collect();

    let cap = m.eval_cap().map(|c| c / 2.0).unwrap_or(512.0).min(512.0);
    let mut shells = Vec::new();
    let mut radius = 1.0;
    while radius <= cap {
        let mut worst = 0.0f64;
        for (t, x) in &txs {
            for dir in &dirs {
                let xi: Vec<f64> = dir.iter().map(|d| d * radius).collect();
                let two: Vec<f64> = xi.iter().map(|v| 2.0 * v).collect();
                let num = m.eval(*t, x, &two);
                let den = m.eval(*t, x, &xi);
                let ratio = if den > 0.0 { num / den } else { f64::INFINITY };
                worst = worst.max(ratio);
            }
        }
        shells.push((radius, worst));
        radius *= 2.0;
    }

    let half = shells.len() / 2;
    let first_max =
        shells[..half.max(1)].iter().map(|s| s.1).fold(0.0f64, f64::max);
    let last_max = shells[half..].iter().map(|s| s.1).fold(0.0f64, f64::max);
    let worst_ratio = shells.iter().map(|s| s.1).fold(0.0f64, f64::max);
    let likely_delta2 = last_max.is_finite() && last_max <= 2.0 * first_max;

    Delta2Report { family: m.family().to_string(), shells, worst_ratio, likely_delta2 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan() -> SamplePlan {
        SamplePlan::default().with_seed(7)
    }

    #[test]
    fn quadratic_is_an_nfunction() {
        let m = ModularFunction::power(1, 2.0);
        let report = check_nfunction(&m, &Domain::unit_interval(), 1.0, &plan());
        assert!(report.pass(), "{report:#?}");
    }

    #[test]
    fn linear_growth_fails_superlinearity() {
        let m = ModularFunction::from_radial(1, Growth::Arbitrary, "linear", |_, _, s| s);
        let report = check_nfunction(&m, &Domain::unit_interval(), 1.0, &plan());
        assert!(!report.pass());
        let cond = report
            .conditions
            .iter()
            .find(|c| c.name == "superlinear_at_infinity")
            .unwrap();
        assert!(!cond.pass, "{report:#?}");
        // Sublinearity near zero fails as well for |xi|.
        let near = report.conditions.iter().find(|c| c.name == "sublinear_near_zero").unwrap();
        assert!(!near.pass);
    }

    #[test]
    fn variable_exponent_passes() {
        let m = ModularFunction::from_radial(
            1,
            Growth::PowerLower { p: 1.5, c_gr: 1.0, threshold: 1.0 },
            "variable_exponent",
            |t, x, s| {
                let p = 2.25 + 0.75 * (std::f64::consts::PI * x[0]).sin() * (t * 2.0).cos();
                s.powf(p)
            },
        );
        let report = check_nfunction(&m, &Domain::unit_interval(), 1.0, &plan());
        assert!(report.pass(), "{report:#?}");
    }

    #[test]
    fn non_finite_eval_is_structural_failure() {
        let m = ModularFunction::from_radial(1, Growth::Arbitrary, "overflowing", |_, _, s| {
            s.exp() - 1.0
        });
        let report = check_nfunction(&m, &Domain::unit_interval(), 1.0, &plan());
        assert!(report.structural_failure.is_some());
        assert!(!report.pass());
    }

    #[test]
    fn delta2_power_holds_exponential_fails() {
        let power = ModularFunction::power(1, 3.0);
        let report = check_delta2(&power, &Domain::unit_interval(), 1.0, &plan());
        assert!(report.likely_delta2, "{report:?}");
        assert!((report.worst_ratio - 8.0).abs() < 1e-6);

        let exponential = ModularFunction::from_radial(
            1,
            Growth::Arbitrary,
            "exp_orlicz",
            |_, _, s| s.exp() - 1.0 + s,
        )
        .with_eval_cap(600.0);
        let report = check_delta2(&exponential, &Domain::unit_interval(), 1.0, &plan());
        assert!(!report.likely_delta2, "{report:?}");

        let log_weighted = ModularFunction::from_radial(
            1,
            Growth::Arbitrary,
            "quadratic_log",
            |_, _, s| {
                if s == 0.0 {
                    0.0
                } else {
                    s * s * (1.0 + s.ln().abs())
                }
            },
        );
        let report = check_delta2(&log_weighted, &Domain::unit_interval(), 1.0, &plan());
        assert!(report.likely_delta2, "{report:?}");
    }
}
