//! Scalar truncation and cutoff operators, lifted pointwise to fields.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::grid::GridField;

/// Symmetric truncation at level `k`: the identity on [-k, k], clamped outside.
pub fn truncate(k: f64, v: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::InvalidLevel(k));
    }
    Ok(truncate_at(k, v))
}

/// Unvalidated symmetric truncation for hot loops; callers check `k > 0` once.
#[inline]
pub(crate) fn truncate_at(k: f64, v: f64) -> f64 {
    v.clamp(-k, k)
}

/// Asymmetric truncation: clamps `v` to [-k, l].
pub fn asym_truncate(k: f64, l: f64, v: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::InvalidLevel(k));
    }
    if !(l > 0.0) {
        return Err(Error::InvalidLevel(l));
    }
    Ok(v.clamp(-k, l))
}

/// Slice of `v` between levels `l` and `l+1`; values in [-1, 1], zero on |v| <= l.
pub fn level_remainder(l: f64, v: f64) -> Result<f64> {
    if !(l >= 0.0) {
        return Err(Error::InvalidLevel(l));
    }
    let raw = truncate_at(l + 1.0, v) - if l == 0.0 { 0.0 } else { truncate_at(l, v) };
    // (l+1) - l can round one ulp past 1; the contract is exact.
    Ok(raw.clamp(-1.0, 1.0))
}

/// Plateau cutoff: 1 on |v| <= l, affine down to 0 on l <= |v| <= l+1.
pub fn plateau_cutoff(l: f64, v: f64) -> Result<f64> {
    if !(l >= 0.0) {
        return Err(Error::InvalidLevel(l));
    }
    Ok((l + 1.0 - v.abs()).max(0.0).min(1.0))
}

/// Pointwise symmetric truncation of every component of a field.
pub fn truncate_field(k: f64, field: &GridField) -> Result<GridField> {
    if !(k > 0.0) {
        return Err(Error::InvalidLevel(k));
    }
    let mut out = field.clone();
    for v in &mut out.values {
        *v = truncate_at(k, *v);
    }
    Ok(out)
}

// Normalized C^infinity bump on (-1, 1): c * exp(-1/(1-u^2)), unit mass.

fn bump_unnormalized(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

/// Composite Simpson on [a, b] with `n` panels (n even).
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    debug_assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

fn bump_half_mass() -> f64 {
    static HALF: OnceLock<f64> = OnceLock::new();
    *HALF.get_or_init(|| simpson(bump_unnormalized, 0.0, 1.0, 4096))
}

/// Normalized bump kernel on (-1, 1).
pub fn bump(u: f64) -> f64 {
    bump_unnormalized(u) / (2.0 * bump_half_mass())
}

/// Bump profile rescaled to peak one at the origin; handy as a smooth
/// compactly supported spatial shape.
pub fn bump_shape(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

/// CDF of the normalized bump; exactly 0.5 at 0 by symmetric quadrature.
fn bump_cdf(y: f64) -> f64 {
    if y <= -1.0 {
        return 0.0;
    }
    if y >= 1.0 {
        return 1.0;
    }
    // The partial quadrature can overshoot the cached half mass by rounding.
    let tail = (simpson(bump_unnormalized, 0.0, y.abs(), 512) / (2.0 * bump_half_mass())).min(0.5);
    if y >= 0.0 {
        0.5 + tail
    } else {
        0.5 - tail
    }
}

/// Smooth time cutoff: the bump of radius `r` convolved with the indicator of
/// [0, tau). Equals 1 on [r, tau - r], vanishes outside (-r, tau + r).
pub fn time_window(tau: f64, r: f64, t: f64) -> Result<f64> {
    check_window(tau, r)?;
    Ok(bump_cdf(t / r) - bump_cdf((t - tau) / r))
}

/// Time derivative of [`time_window`].
pub fn time_window_dt(tau: f64, r: f64, t: f64) -> Result<f64> {
    check_window(tau, r)?;
    Ok((bump(t / r) - bump((t - tau) / r)) / r)
}

fn check_window(tau: f64, r: f64) -> Result<()> {
    if !(r > 0.0) || r >= tau / 2.0 {
        return Err(Error::DegenerateWindow { r, half_tau: tau / 2.0 });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate(2.0, 3.0).unwrap(), 2.0);
        assert_eq!(truncate(2.0, -5.0).unwrap(), -2.0);
        assert_eq!(truncate(2.0, 1.0).unwrap(), 1.0);
        assert!(truncate(0.0, 1.0).is_err());
        assert!(truncate(-1.0, 1.0).is_err());
    }

    #[test]
    fn asym_truncate_examples() {
        assert_eq!(asym_truncate(1.0, 3.0, -5.0).unwrap(), -1.0);
        assert_eq!(asym_truncate(1.0, 3.0, 2.0).unwrap(), 2.0);
        assert_eq!(asym_truncate(1.0, 3.0, 7.0).unwrap(), 3.0);
        assert!(asym_truncate(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn level_remainder_examples() {
        assert_eq!(level_remainder(2.0, 2.5).unwrap(), 0.5);
        assert_eq!(level_remainder(2.0, 1.0).unwrap(), 0.0);
        assert_eq!(level_remainder(2.0, 10.0).unwrap(), 1.0);
        assert_eq!(level_remainder(2.0, -10.0).unwrap(), -1.0);
    }

    #[test]
    fn plateau_cutoff_examples() {
        assert_eq!(plateau_cutoff(2.0, 1.5).unwrap(), 1.0);
        assert!((plateau_cutoff(2.0, 2.4).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(plateau_cutoff(2.0, 3.5).unwrap(), 0.0);
        assert_eq!(plateau_cutoff(2.0, -3.5).unwrap(), 0.0);
    }

    #[test]
    fn time_window_plateau_and_edges() {
        assert_eq!(time_window(1.0, 0.1, 0.5).unwrap(), 1.0);
        assert_eq!(time_window(1.0, 0.1, -0.2).unwrap(), 0.0);
        // Symmetry of the bump integral puts the edge midpoints at exactly 1/2.
        assert_eq!(time_window(1.0, 0.1, 1.0).unwrap(), 0.5);
        assert_eq!(time_window(1.0, 0.1, 0.0).unwrap(), 0.5);
        assert!(time_window(1.0, 0.5, 0.2).is_err());
        assert!(time_window(1.0, 0.0, 0.2).is_err());
    }

    #[test]
    fn bump_kernel_mass() {
        let mass = simpson(bump, -1.0, 1.0, 2048);
        assert!((mass - 1.0).abs() < 1e-10, "bump mass {mass}");
    }

    proptest! {
        #[test]
        fn truncation_algebra(
            k in 1e-3..10.0f64,
            a in -50.0..50.0f64,
            b in -50.0..50.0f64,
        ) {
            let ta = truncate(k, a).unwrap();
            // Idempotent.
            prop_assert_eq!(truncate(k, ta).unwrap(), ta);
            // 1-Lipschitz.
            let tb = truncate(k, b).unwrap();
            prop_assert!((ta - tb).abs() <= (a - b).abs() + 1e-15);
            // Monotone.
            if a <= b {
                prop_assert!(ta <= tb);
            }
        }

        #[test]
        fn level_remainder_vanishes_iff_inside(l in 0.0..20.0f64, v in -50.0..50.0f64) {
            let g = level_remainder(l, v).unwrap();
            prop_assert!((-1.0..=1.0).contains(&g));
            if v.abs() <= l {
                prop_assert_eq!(g, 0.0);
            } else if v.abs() > l + 1e-9 {
                prop_assert!(g != 0.0);
                prop_assert_eq!(g.signum(), v.signum());
            }
        }

        #[test]
        fn window_bounded_and_supported(
            t in -2.0..3.0f64,
        ) {
            let w = time_window(1.0, 0.2, t).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
            if !(-0.2..1.2).contains(&t) {
                prop_assert_eq!(w, 0.0);
            }
            if (0.2..=0.8).contains(&t) {
                prop_assert_eq!(w, 1.0);
            }
        }
    }
}
