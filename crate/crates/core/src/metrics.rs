//! Modular integrals, Luxemburg norms, and the convergence / integrability
//! diagnostics of the generalized Orlicz class.

use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridField, Mesh};
use crate::modular::ModularFunction;

/// Midpoint-rule modular of a vector field: the integral of
/// M(t, x, xi(t,x)/lambda) over the space-time mesh.
pub fn modular_integral(m: &ModularFunction, xi: &GridField, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidScale(lambda));
    }
    assert_eq!(
        xi.components,
        m.dim(),
        "field has {} components but the modular expects {}",
        xi.components,
        m.dim()
    );
    let mut acc = 0.0;
    let mut scaled = vec![0.0; xi.components];
    xi.for_each_cell(|t, x, vol, avg| {
        for (s, a) in scaled.iter_mut().zip(avg) {
            *s = a / lambda;
        }
        acc += vol * m.eval(t, x, &scaled);
    });
    Ok(acc)
}

/// Luxemburg norm: the infimum of scales bringing the modular below one,
/// located by geometric bracketing and bisection to relative `tol`.
pub fn luxemburg_norm(m: &ModularFunction, xi: &GridField, tol: f64) -> Result<f64> {
    if xi.values.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let rho = |lambda: f64| modular_integral(m, xi, lambda);

    let mut hi = 1.0;
    let mut tries = 0;
    while !(rho(hi)? <= 1.0) {
        hi *= 2.0;
        tries += 1;
        if tries > 600 {
            return Err(Error::UnboundedNorm { tried: hi });
        }
    }
    let mut lo = hi;
    loop {
        let candidate = lo / 2.0;
        if rho(candidate)? <= 1.0 {
            lo = candidate;
            if lo < f64::MIN_POSITIVE * 1e10 {
                // Modular stays below one for arbitrarily small scales.
                return Ok(0.0);
            }
        } else {
            break;
        }
    }
    // Invariant: rho(hi) <= 1 < rho(lo / ...), bisect on the bracket [lo/2, lo]
    // against [lo, hi]; here lo <= hi with rho(lo) <= 1, rho(lo/2) > 1.
    let mut bad = lo / 2.0;
    let mut good = lo.min(hi);
    while (good - bad) > tol * good {
        let mid = 0.5 * (good + bad);
        if rho(mid)? <= 1.0 {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

/// Outcome of the dyadic-scale modular convergence search.
#[derive(Debug, Clone, Serialize)]
pub struct ModularConvergenceReport {
    pub lambda_found: Option<f64>,
    pub lambdas_tried: Vec<f64>,
    /// Modulars of the differences at the found scale (empty when none).
    pub integrals: Vec<f64>,
}

/// Searches scales lambda in {2^j : j >= 0} for one along which the modulars
/// of xi_i - limit trend to zero: the last third of the sequence must sit
/// below 1e-3 of the first term and be nonincreasing up to 10 percent.
pub fn modular_convergence_check(
    m: &ModularFunction,
    sequence: &[GridField],
    limit: &GridField,
) -> Result<ModularConvergenceReport> {
    assert!(sequence.len() >= 3, "need at least three terms for a trend");
    let mut tried = Vec::new();
    for j in 0..=20u32 {
        let lambda = (1u64 << j) as f64;
        tried.push(lambda);
        let mut integrals = Vec::with_capacity(sequence.len());
        for field in sequence {
            let diff = field.sub(limit)?;
            integrals.push(modular_integral(m, &diff, lambda)?);
        }
        if trend_to_zero(&integrals) {
            return Ok(ModularConvergenceReport {
                lambda_found: Some(lambda),
                lambdas_tried: tried,
                integrals,
            });
        }
    }
    Ok(ModularConvergenceReport { lambda_found: None, lambdas_tried: tried, integrals: vec![] })
}

fn trend_to_zero(integrals: &[f64]) -> bool {
    let first = integrals[0];
    if !first.is_finite() {
        return false;
    }
    let tail_start = integrals.len() - integrals.len() / 3;
    let tail = &integrals[tail_start..];
    let threshold = 1e-3 * first;
    let small = tail.iter().all(|&v| v <= threshold || v == 0.0);
    let nonincreasing = tail.windows(2).all(|w| w[1] <= 1.1 * w[0] || w[1] == 0.0);
    small && nonincreasing
}

/// Tail masses sup_n of the integral of |f_n| over {|f_n| >= R} per R.
#[derive(Debug, Clone, Serialize)]
pub struct UniformIntegrabilityReport {
    pub tails: Vec<(f64, f64)>,
    pub vanishing: bool,
}

pub fn uniform_integrability_index(
    fields: &[GridField],
    r_grid: &[f64],
) -> UniformIntegrabilityReport {
    assert!(!fields.is_empty());
    assert!(fields.iter().all(|f| f.components == 1), "tail masses are a scalar diagnostic");
    let mut tails = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let mut sup = 0.0f64;
        for field in fields {
            let mut acc = 0.0;
            field.for_each_cell(|_, _, vol, avg| {
                if avg[0].abs() >= r {
                    acc += vol * avg[0].abs();
                }
            });
            sup = sup.max(acc);
        }
        tails.push((r, sup));
    }
    let first = tails.first().map(|t| t.1).unwrap_or(0.0);
    let last = tails.last().map(|t| t.1).unwrap_or(0.0);
    let vanishing = last == 0.0 || last <= 1e-3 * first;
    UniformIntegrabilityReport { tails, vanishing }
}

/// Isotropic Young function B: [0, infinity) -> [0, infinity).
#[derive(Clone)]
pub struct YoungFunction {
    name: String,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl YoungFunction {
    pub fn new(name: impl Into<String>, eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        YoungFunction { name: name.into(), eval: Arc::new(eval) }
    }

    pub fn power(p: f64) -> Self {
        YoungFunction::new(format!("power({p})"), move |s| s.powf(p))
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.eval)(s.abs())
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl std::fmt::Debug for YoungFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "YoungFunction({})", self.name)
    }
}

/// Calibrated constants of the modular Poincare inequality for one
/// (domain, Young function) pair.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PoincareConstants {
    pub c1: f64,
    pub c2: f64,
}

impl PoincareConstants {
    /// Uncalibrated reference constants (raw ratio reporting).
    pub fn identity() -> Self {
        PoincareConstants { c1: 1.0, c2: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PoincareReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub c1: f64,
    pub c2: f64,
    pub pass: bool,
}

/// Zero-trace check followed by the two modular integrals of the Poincare
/// inequality: lhs integrates B(c1 |g|), rhs integrates B(|grad g|), and the
/// check passes when lhs <= c2 rhs.
pub fn poincare_check(
    b: &YoungFunction,
    g: &GridField,
    constants: &PoincareConstants,
) -> Result<PoincareReport> {
    if !g.zero_trace {
        let probe = g.clone().with_zero_trace()?;
        return poincare_check(b, &probe, constants);
    }
    assert_eq!(g.components, 1);
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for_each_cell_with_gradient(g, |_, _, vol, avg, grad| {
        lhs += vol * b.eval(constants.c1 * avg.abs());
        let gn = match grad.len() {
            1 => grad[0].abs(),
            _ => grad[0].hypot(grad[1]),
        };
        rhs += vol * b.eval(gn);
    });
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(PoincareReport {
        lhs,
        rhs,
        ratio,
        c1: constants.c1,
        c2: constants.c2,
        pass: lhs <= constants.c2 * rhs || (lhs == 0.0 && rhs == 0.0),
    })
}

/// Sweeps space-time cells of a scalar field reporting the cell-average value
/// and the spatial gradient at the cell center.
pub fn for_each_cell_with_gradient(
    g: &GridField,
    mut visit: impl FnMut(f64, &[f64], f64, f64, &[f64]),
) {
    assert_eq!(g.components, 1);
    let mesh = &g.mesh;
    let vol = mesh.dt() * mesh.space.cell_volume();
    let dim = mesh.space.dim();
    let mut grad = vec![0.0; dim];
    for m in 0..mesh.time_cells {
        let t_mid = mesh.time(m) + 0.5 * mesh.dt();
        for cell in 0..mesh.space.cell_count() {
            let center = mesh.space.cell_center(cell);
            let corners = mesh.space.cell_corners(cell);
            let mut avg = 0.0;
            for &s in &corners {
                avg += g.get(m, s, 0) + g.get(m + 1, s, 0);
            }
            avg /= (2 * corners.len()) as f64;
            match dim {
                1 => {
                    let h = mesh.space.step(0);
                    let d = |tm: usize| (g.get(tm, corners[1], 0) - g.get(tm, corners[0], 0)) / h;
                    grad[0] = 0.5 * (d(m) + d(m + 1));
                }
                _ => {
                    // corners = [(x0,y0), (x1,y0), (x0,y1), (x1,y1)]
                    let hx = mesh.space.step(0);
                    let hy = mesh.space.step(1);
                    let v = |tm: usize, c: usize| g.get(tm, corners[c], 0);
                    let dx = |tm: usize| {
                        0.5 * ((v(tm, 1) - v(tm, 0)) + (v(tm, 3) - v(tm, 2))) / hx
                    };
                    let dy = |tm: usize| {
                        0.5 * ((v(tm, 2) - v(tm, 0)) + (v(tm, 3) - v(tm, 1))) / hy
                    };
                    grad[0] = 0.5 * (dx(m) + dx(m + 1));
                    grad[1] = 0.5 * (dy(m) + dy(m + 1));
                }
            }
            visit(t_mid, &center, vol, avg, &grad);
        }
    }
}

/// Searches the largest c1 keeping the Poincare ratio below c2 = 1 over a
/// seeded family of zero-trace training fields, then applies a 10 percent
/// safety margin. The theorem only asserts existence of the constants, so
/// they are calibrated per (mesh, Young function) pair.
pub fn calibrate_poincare(
    b: &YoungFunction,
    mesh: &Mesh,
    training_fields: usize,
    seed: u64,
) -> Result<PoincareConstants> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fields = Vec::with_capacity(training_fields);
    for _ in 0..training_fields {
        fields.push(random_zero_trace_field(mesh, &mut rng)?);
    }
    let worst_ratio = |c1: f64| -> Result<f64> {
        let mut worst = 0.0f64;
        for g in &fields {
            let report = poincare_check(b, g, &PoincareConstants { c1, c2: 1.0 })?;
            worst = worst.max(report.ratio);
        }
        Ok(worst)
    };
    let mut hi = 1.0;
    if worst_ratio(hi)? <= 1.0 {
        while hi < 1e6 && worst_ratio(hi * 2.0)? <= 1.0 {
            hi *= 2.0;
        }
    } else {
        while hi > 1e-6 && worst_ratio(hi)? > 1.0 {
            hi /= 2.0;
        }
    }
    let mut lo = hi / 2.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if worst_ratio(mid)? <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(PoincareConstants { c1: 0.9 * lo, c2: 1.0 })
}

/// Random superposition of the first sine modes; vanishes on the boundary.
pub fn random_zero_trace_field(mesh: &Mesh, rng: &mut ChaCha8Rng) -> Result<GridField> {
    let dim = mesh.space.dim();
    let coeffs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let time_amp = rng.random_range(0.0..0.5);
    let domain = mesh.space.domain;
    let horizon = mesh.horizon;
    let field = GridField::from_scalar_fn(*mesh, move |t, x| {
        let mut acc = 0.0;
        for (j, &c) in coeffs.iter().enumerate() {
            let mode = (j + 1) as f64;
            let mut shape = 1.0;
            for k in 0..dim {
                let (lo, hi) = domain.axis(k);
                shape *= (mode * std::f64::consts::PI * (x[k] - lo) / (hi - lo)).sin();
            }
            acc += c * shape;
        }
        acc * (1.0 + time_amp * (std::f64::consts::PI * t / horizon).cos())
    });
    field.with_zero_trace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, SpaceGrid};
    use proptest::prelude::*;

    fn mesh_1d(nx: usize) -> Mesh {
        Mesh::new(1.0, 4, SpaceGrid::new_1d(Domain::unit_interval(), nx))
    }

    fn constant_vector_field(mesh: Mesh, v: &[f64]) -> GridField {
        let v = v.to_vec();
        GridField::from_vector_fn(mesh, v.len(), move |_, _, out| out.copy_from_slice(&v))
    }

    #[test]
    fn modular_integral_examples() {
        let m = ModularFunction::power(1, 2.0);
        let mesh = mesh_1d(8);
        let xi = constant_vector_field(mesh, &[1.0]);
        assert!((modular_integral(&m, &xi, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((modular_integral(&m, &xi, 2.0).unwrap() - 0.25).abs() < 1e-12);
        assert!(modular_integral(&m, &xi, 0.0).is_err());

        // Single cell of measure 0.5 with |xi| = 2 and p = 2 integrates to 2.
        let half = Mesh::new(0.5, 1, SpaceGrid::new_1d(Domain::unit_interval(), 1));
        let xi = constant_vector_field(half, &[2.0]);
        assert!((modular_integral(&m, &xi, 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn luxemburg_norm_examples() {
        let m = ModularFunction::power(1, 2.0);
        let mesh = mesh_1d(8);
        let xi = constant_vector_field(mesh, &[3.0]);
        let norm = luxemburg_norm(&m, &xi, 1e-12).unwrap();
        assert!((norm - 3.0).abs() < 1e-9, "norm {norm}");

        let zero = constant_vector_field(mesh, &[0.0]);
        assert_eq!(luxemburg_norm(&m, &zero, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn luxemburg_matches_lp_norm_on_unit_measure() {
        for p in [1.5, 2.0, 3.0] {
            let m = ModularFunction::power(1, p);
            let mesh = mesh_1d(64);
            let xi = GridField::from_vector_fn(mesh, 1, |t, x, out| {
                out[0] = (x[0] * 3.0).sin() + 0.3 * t;
            });
            let norm = luxemburg_norm(&m, &xi, 1e-13).unwrap();
            let mut acc = 0.0;
            xi.for_each_cell(|_, _, vol, avg| acc += vol * avg[0].abs().powf(p));
            let lp = acc.powf(1.0 / p);
            assert!((norm - lp).abs() < 1e-8 * (1.0 + lp), "p={p}: {norm} vs {lp}");
        }
    }

    #[test]
    fn modular_convergence_quadratic_decay() {
        let m = ModularFunction::power(1, 2.0);
        let mesh = mesh_1d(8);
        let limit = constant_vector_field(mesh, &[0.5]);
        // 1/i^2 modular decay needs ~48 terms before the last third of the
        // sequence sits below 1e-3 of the first term.
        let seq: Vec<GridField> = (1..=48)
            .map(|i| constant_vector_field(mesh, &[0.5 + 1.0 / i as f64]))
            .collect();
        let report = modular_convergence_check(&m, &seq, &limit).unwrap();
        assert_eq!(report.lambda_found, Some(1.0), "{report:?}");
    }

    #[test]
    fn modular_convergence_constant_sequence() {
        let m = ModularFunction::power(1, 2.0);
        let mesh = mesh_1d(8);
        let limit = constant_vector_field(mesh, &[0.25]);
        let seq = vec![limit.clone(), limit.clone(), limit.clone()];
        let report = modular_convergence_check(&m, &seq, &limit).unwrap();
        assert_eq!(report.lambda_found, Some(1.0));
        assert!(report.integrals.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn modular_convergence_spike_blowup() {
        // Spikes of unit mass and growing height under an exponential modular:
        // the modular of the difference diverges for every scale.
        let m = ModularFunction::from_radial(
            1,
            crate::modular::Growth::Arbitrary,
            "exp",
            |_, _, s| s.exp() - 1.0,
        );
        let nx = 64;
        let mesh = mesh_1d(nx);
        let limit = constant_vector_field(mesh, &[0.0]);
        let seq: Vec<GridField> = (1..=9)
            .map(|i| {
                let height = (40 * i) as f64;
                GridField::from_vector_fn(mesh, 1, move |_, x, out| {
                    // One cell of measure ~1/height carries the spike.
                    out[0] = if (x[0] - 0.5).abs() * height <= 0.5 { height } else { 0.0 };
                })
            })
            .collect();
        let report = modular_convergence_check(&m, &seq, &limit).unwrap();
        assert_eq!(report.lambda_found, None, "{report:?}");
    }

    #[test]
    fn uniform_integrability_examples() {
        let mesh = mesh_1d(64);
        let ones: Vec<GridField> =
            (0..4).map(|_| GridField::from_scalar_fn(mesh, |_, _| 1.0)).collect();
        let report = uniform_integrability_index(&ones, &[0.5, 1.5, 3.0]);
        assert_eq!(report.tails[1].1, 0.0);
        assert_eq!(report.tails[2].1, 0.0);
        assert!(report.vanishing);

        // Equal-mass spikes f_n = n on a set of measure 1/n are not uniformly
        // integrable: every tail keeps mass ~1.
        let spikes: Vec<GridField> = [4usize, 8, 16, 32]
            .iter()
            .map(|&n| {
                GridField::from_scalar_fn(mesh, move |_, x| {
                    if x[0] < 1.0 / n as f64 { n as f64 } else { 0.0 }
                })
            })
            .collect();
        let report = uniform_integrability_index(&spikes, &[1.0, 2.0, 3.9]);
        assert!(report.tails.iter().all(|&(_, tail)| tail > 0.8), "{report:?}");
        assert!(!report.vanishing);
    }

    #[test]
    fn poincare_sine_closed_form() {
        let b = YoungFunction::power(2.0);
        let mesh = Mesh::new(1.0, 1, SpaceGrid::new_1d(Domain::unit_interval(), 256));
        let g = GridField::from_scalar_fn(mesh, |_, x| (std::f64::consts::PI * x[0]).sin())
            .with_zero_trace()
            .unwrap();
        let report = poincare_check(&b, &g, &PoincareConstants::identity()).unwrap();
        assert!((report.lhs - 0.5).abs() < 1e-3, "lhs {}", report.lhs);
        assert!((report.rhs - 0.5 * std::f64::consts::PI.powi(2)).abs() < 1e-2);
        let expect = 1.0 / std::f64::consts::PI.powi(2);
        assert!((report.ratio - expect).abs() < 1e-3);
        assert!(report.pass);
    }

    #[test]
    fn poincare_zero_field_and_hat() {
        let b = YoungFunction::power(2.0);
        let mesh = Mesh::new(1.0, 1, SpaceGrid::new_1d(Domain::unit_interval(), 256));
        let zero = GridField::from_scalar_fn(mesh, |_, _| 0.0).with_zero_trace().unwrap();
        let report = poincare_check(&b, &zero, &PoincareConstants::identity()).unwrap();
        assert_eq!(report.lhs, 0.0);
        assert_eq!(report.rhs, 0.0);
        assert!(report.pass);

        let hat = GridField::from_scalar_fn(mesh, |_, x| 1.0 - (2.0 * x[0] - 1.0).abs())
            .with_zero_trace()
            .unwrap();
        let report = poincare_check(&b, &hat, &PoincareConstants::identity()).unwrap();
        assert!((report.lhs - 1.0 / 3.0).abs() < 1e-3);
        assert!((report.rhs - 4.0).abs() < 1e-9);
        assert!(report.pass);
    }

    #[test]
    fn poincare_calibration_holds_on_fresh_fields() {
        let b = YoungFunction::power(2.0);
        let mesh = Mesh::new(1.0, 2, SpaceGrid::new_1d(Domain::unit_interval(), 64));
        let constants = calibrate_poincare(&b, &mesh, 12, 11).unwrap();
        assert!(constants.c1 > 0.5, "calibrated c1 {}", constants.c1);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..8 {
            let g = random_zero_trace_field(&mesh, &mut rng).unwrap();
            let report = poincare_check(&b, &g, &constants).unwrap();
            assert!(report.pass, "{report:?}");
        }
    }

    #[test]
    fn poincare_rejects_nonzero_trace() {
        let b = YoungFunction::power(2.0);
        let mesh = mesh_1d(16);
        let g = GridField::from_scalar_fn(mesh, |_, x| x[0] + 1.0);
        assert!(matches!(
            poincare_check(&b, &g, &PoincareConstants::identity()),
            Err(Error::NonZeroTrace(_))
        ));
    }

    proptest! {
        // Norm-modular consistency and homogeneity of the Luxemburg norm.
        #[test]
        fn luxemburg_properties(amp in 0.05..20.0f64, alpha in 0.1..5.0f64) {
            let m = ModularFunction::power(1, 2.5);
            let mesh = mesh_1d(16);
            let xi = GridField::from_vector_fn(mesh, 1, move |t, x, out| {
                out[0] = amp * ((7.3 * x[0]).sin() + 0.4 * (t * 3.1).cos());
            });
            let norm = luxemburg_norm(&m, &xi, 1e-13).unwrap();
            prop_assume!(norm > 0.0);
            let at_norm = modular_integral(&m, &xi, norm).unwrap();
            prop_assert!(at_norm <= 1.0 + 1e-9, "modular at norm {at_norm}");
            let below = modular_integral(&m, &xi, norm * (1.0 - 1e-9)).unwrap();
            prop_assert!(below > 1.0 - 1e-6, "modular just below norm {below}");
            // Homogeneity.
            let scaled_norm = luxemburg_norm(&m, &xi.scaled(alpha), 1e-13).unwrap();
            prop_assert!((scaled_norm - alpha * norm).abs() <= 1e-8 * (1.0 + alpha * norm));
        }
    }
}
