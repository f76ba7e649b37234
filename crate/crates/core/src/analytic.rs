//! Closed-form and fitted hitting probabilities, and their conversion to
//! discrete channel taps.
//!
//! For a single absorbing sphere of radius `r` at center distance `d` from a
//! point source in an infinite 3-D medium, the probability that a molecule
//! has been absorbed by time `t` is
//!
//! ```text
//! F(t) = (r / d) * erfc((d - r) / sqrt(4 D t))
//! ```
//!
//! With two absorbing spheres no closed form exists; the direct and cross
//! subchannel responses are instead modeled by the same shape with fit
//! coefficients `b1..b3` (direct link) and `b4..b6` (cross link):
//!
//! ```text
//! F11(t) = b1 * (r / d ) * erfc((d  - r) / ((4 D)^b2 * t^b3))      d  = aligned distance
//! F21(t) = b4 * (r / d') * erfc((d' - r) / ((4 D)^b5 * t^b6))      d' = sqrt(d² + a²)
//! ```
//!
//! At `(b1, b2, b3) = (1, 0.5, 0.5)` the direct response reduces exactly to
//! the closed form. A channel tap is the probability mass absorbed within
//! one symbol slot, `h[l] = F((l+1) Ts) - F(l Ts)`, with `F(0)` defined as
//! exactly 0.
//!
//! `erfc` comes from `libm` (relative error well below the 1e-12 accuracy
//! this module promises).

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::taps::TapSet;

/// Differences below this magnitude are treated as rounding noise when a
/// CDF is turned into taps; anything more negative is a malformed CDF.
pub const CDF_DECREASE_TOLERANCE: f64 = 1e-12;

/// Closed-form SISO hitting CDF. Defined for `t >= 0` with `F(0) = 0`;
/// nondecreasing in `t` and bounded above by `r / d`.
pub fn hitting_cdf_siso(g: &Geometry, t: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let arg = (g.distance - g.radius) / (4.0 * g.diffusion * t).sqrt();
    Ok(g.radius / g.distance * libm::erfc(arg))
}

/// Fit coefficients `b1..b6` of the direct and cross response functions.
///
/// Construction enforces the sanity bounds `b1 > 0`, `b4 > 0` and time
/// exponents `b3, b6` in `(0, 1.5)`; outside that range the responses stop
/// behaving like first-passage CDFs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams {
    coeffs: [f64; 6],
}

impl FitParams {
    pub fn new(coeffs: [f64; 6]) -> Result<Self> {
        if coeffs.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidFitParams(format!(
                "coefficients must be finite, got {coeffs:?}"
            )));
        }
        let [b1, _, b3, b4, _, b6] = coeffs;
        if !(b1 > 0.0) || !(b4 > 0.0) {
            return Err(Error::InvalidFitParams(format!(
                "scale coefficients must be positive, got b1 = {b1}, b4 = {b4}"
            )));
        }
        for (name, b) in [("b3", b3), ("b6", b6)] {
            if !(b > 0.0 && b < 1.5) {
                return Err(Error::InvalidFitParams(format!(
                    "time exponent {name} = {b} is outside (0, 1.5)"
                )));
            }
        }
        Ok(FitParams { coeffs })
    }

    /// Parameters at which the fitted responses coincide with the closed
    /// form: `(1, 0.5, 0.5, 1, 0.5, 0.5)`.
    pub fn analytic() -> Self {
        FitParams {
            coeffs: [1.0, 0.5, 0.5, 1.0, 0.5, 0.5],
        }
    }

    pub fn from_parts(direct: [f64; 3], cross: [f64; 3]) -> Result<Self> {
        FitParams::new([direct[0], direct[1], direct[2], cross[0], cross[1], cross[2]])
    }

    pub fn as_array(&self) -> [f64; 6] {
        self.coeffs
    }

    /// `(b1, b2, b3)`.
    pub fn direct(&self) -> [f64; 3] {
        [self.coeffs[0], self.coeffs[1], self.coeffs[2]]
    }

    /// `(b4, b5, b6)`.
    pub fn cross(&self) -> [f64; 3] {
        [self.coeffs[3], self.coeffs[4], self.coeffs[5]]
    }
}

/// Evaluates the response shape `b1 * (r/dist) * erfc((dist - r) / ((4D)^b2 * t^b3))`.
///
/// Shared by the direct and cross responses and by the curve fitter, which
/// probes coefficients outside the [`FitParams`] sanity bounds.
pub(crate) fn response_shape(b: [f64; 3], dist: f64, radius: f64, diffusion: f64, t: f64) -> f64 {
    let scale = (4.0 * diffusion).powf(b[1]) * t.powf(b[2]);
    b[0] * radius / dist * libm::erfc((dist - radius) / scale)
}

/// Fitted direct-link response `F11(t)`. Requires `t > 0` (fractional powers
/// of `t` are only defined there); the `t = 0` value is 0 by definition.
pub fn fitted_cdf_direct(g: &Geometry, p: &FitParams, t: f64) -> Result<f64> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::NonPositiveTime(t));
    }
    Ok(response_shape(p.direct(), g.distance, g.radius, g.diffusion, t))
}

/// Fitted cross-link response `F21(t)` at distance `d' = sqrt(d² + a²)`.
pub fn fitted_cdf_cross(g: &Geometry, p: &FitParams, t: f64) -> Result<f64> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::NonPositiveTime(t));
    }
    let dist = g.cross_distance();
    if dist <= g.radius {
        return Err(Error::InvalidGeometry(format!(
            "cross distance d' = {dist} does not exceed the receiver radius r = {}",
            g.radius
        )));
    }
    Ok(response_shape(p.cross(), dist, g.radius, g.diffusion, t))
}

/// Converts a cumulative hitting probability into per-slot taps,
/// `h[l] = F((l+1) Ts) - F(l Ts)` for `l = 0..=memory`.
///
/// The telescoping sum makes `sum_l h[l] = F((memory+1) Ts) - F(0)` exact up
/// to rounding. A decrease beyond [`CDF_DECREASE_TOLERANCE`] is reported as
/// a malformed CDF; smaller negative differences are clamped to 0.
pub fn taps_from_cdf<F>(cdf: F, symbol_duration: f64, memory: usize) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(symbol_duration > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "symbol duration must be positive, got Ts = {symbol_duration}"
        )));
    }
    let mut taps = Vec::with_capacity(memory + 1);
    let mut prev = cdf(0.0)?;
    for lag in 0..=memory {
        let t0 = lag as f64 * symbol_duration;
        let t1 = (lag + 1) as f64 * symbol_duration;
        let next = cdf(t1)?;
        let diff = next - prev;
        if diff < -CDF_DECREASE_TOLERANCE {
            return Err(Error::MalformedCdf {
                t0,
                t1,
                decrease: -diff,
            });
        }
        taps.push(diff.max(0.0));
        prev = next;
    }
    Ok(taps)
}

/// Zero-extends a fitted response to `t = 0` so it can feed
/// [`taps_from_cdf`]; `F(0)` is 0 by definition for every response function.
fn zero_extended<'a>(
    f: impl Fn(f64) -> Result<f64> + 'a,
) -> impl Fn(f64) -> Result<f64> + 'a {
    move |t| if t == 0.0 { Ok(0.0) } else { f(t) }
}

/// SISO taps from the closed-form CDF.
pub fn siso_taps(g: &Geometry) -> Result<TapSet> {
    let row = taps_from_cdf(|t| hitting_cdf_siso(g, t), g.symbol_duration, g.memory)?;
    TapSet::siso(row)
}

/// SISO taps from the fitted direct response (used when a SISO experiment
/// should share the fitted channel family of a MIMO comparison).
pub fn fitted_siso_taps(g: &Geometry, p: &FitParams) -> Result<TapSet> {
    let row = taps_from_cdf(
        zero_extended(|t| fitted_cdf_direct(g, p, t)),
        g.symbol_duration,
        g.memory,
    )?;
    TapSet::siso(row)
}

/// Full symmetric 2x2 tap set: direct rows from `F11`, cross rows from
/// `F21`, with `h11 = h22` and `h12 = h21`.
pub fn symmetric_mimo_taps(g: &Geometry, p: &FitParams) -> Result<TapSet> {
    let direct = taps_from_cdf(
        zero_extended(|t| fitted_cdf_direct(g, p, t)),
        g.symbol_duration,
        g.memory,
    )?;
    let cross = taps_from_cdf(
        zero_extended(|t| fitted_cdf_cross(g, p, t)),
        g.symbol_duration,
        g.memory,
    )?;
    TapSet::symmetric(direct, cross)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // High-precision reference values for the default geometry
    // (d = 20, r = 5, D = 100, Ts = 0.6), frozen from a 30-digit erfc.
    pub(crate) const F_REF: [f64; 4] = [
        0.042725880057699365992,
        0.083230402016391481917,
        0.10729882511008729955,
        0.12339069742584733255,
    ];
    pub(crate) const H_REF: [f64; 4] = [
        0.042725880057699365992,
        0.040504521958692115925,
        0.02406842309369581763,
        0.016091872315760033001,
    ];

    fn reference() -> Geometry {
        Geometry::reference()
    }

    #[test]
    fn siso_cdf_matches_reference_values() {
        let g = reference();
        for (i, want) in F_REF.iter().enumerate() {
            let t = 0.6 * (i + 1) as f64;
            assert_abs_diff_eq!(hitting_cdf_siso(&g, t).unwrap(), want, epsilon = 1e-14);
        }
    }

    #[test]
    fn siso_cdf_boundaries() {
        let g = reference();
        assert_eq!(hitting_cdf_siso(&g, 0.0).unwrap(), 0.0);
        // limit r/d as t -> infinity
        assert_abs_diff_eq!(hitting_cdf_siso(&g, 1e18).unwrap(), 0.25, epsilon = 1e-9);
        assert!(hitting_cdf_siso(&g, -1.0).is_err());
        assert!(hitting_cdf_siso(&g, f64::NAN).is_err());
    }

    #[test]
    fn siso_cdf_monotone_and_bounded() {
        let g = reference();
        let bound = g.radius / g.distance + 1e-12;
        let mut prev = 0.0;
        for i in 0..1000 {
            let t = (i + 1) as f64 * 0.05;
            let f = hitting_cdf_siso(&g, t).unwrap();
            assert!(f >= prev, "CDF decreased at t = {t}");
            assert!(f <= bound, "CDF exceeded r/d at t = {t}");
            prev = f;
        }
    }

    #[test]
    fn fitted_direct_reduces_to_closed_form() {
        let g = reference();
        let p = FitParams::analytic();
        // deterministic pseudo-random sweep over t
        let mut t = 0.013;
        for _ in 0..100 {
            let a = fitted_cdf_direct(&g, &p, t).unwrap();
            let b = hitting_cdf_siso(&g, t).unwrap();
            assert!((a - b).abs() <= 1e-12, "mismatch at t = {t}: {a} vs {b}");
            t = (t * 1.17 + 0.007) % 50.0 + 1e-3;
        }
    }

    #[test]
    fn fitted_direct_scales_with_b1() {
        let g = reference();
        let p = FitParams::new([0.9, 0.5, 0.5, 1.0, 0.5, 0.5]).unwrap();
        let want = 0.9 * F_REF[0];
        assert_abs_diff_eq!(fitted_cdf_direct(&g, &p, 0.6).unwrap(), want, epsilon = 1e-14);
        // range bound: output in [0, b1 * r/d]
        for t in [1e-3, 0.1, 1.0, 10.0, 1e6] {
            let f = fitted_cdf_direct(&g, &p, t).unwrap();
            assert!((0.0..=0.9 * 0.25 + 1e-15).contains(&f));
        }
        assert!(fitted_cdf_direct(&g, &p, 0.0).is_err());
        assert!(fitted_cdf_direct(&g, &p, -0.5).is_err());
    }

    #[test]
    fn fitted_cross_uses_cross_distance() {
        let p = FitParams::analytic();
        // a = 0 reduces to the direct response
        let g0 = Geometry::new(20.0, 0.0, 5.0, 100.0, 0.6, 3).unwrap();
        for t in [0.2, 0.6, 1.7] {
            assert_abs_diff_eq!(
                fitted_cdf_cross(&g0, &p, t).unwrap(),
                hitting_cdf_siso(&g0, t).unwrap(),
                epsilon = 1e-14
            );
        }
        // larger separation gives a smaller response at fixed t
        let g11 = Geometry::new(20.0, 11.0, 5.0, 100.0, 0.6, 3).unwrap();
        let g17 = Geometry::new(20.0, 17.0, 5.0, 100.0, 0.6, 3).unwrap();
        for t in [0.3, 0.6, 2.4] {
            assert!(
                fitted_cdf_cross(&g17, &p, t).unwrap() < fitted_cdf_cross(&g11, &p, t).unwrap()
            );
        }
    }

    #[test]
    fn fit_params_sanity_bounds() {
        assert!(FitParams::new([0.0, 0.5, 0.5, 1.0, 0.5, 0.5]).is_err());
        assert!(FitParams::new([1.0, 0.5, 0.5, -1.0, 0.5, 0.5]).is_err());
        assert!(FitParams::new([1.0, 0.5, 1.5, 1.0, 0.5, 0.5]).is_err());
        assert!(FitParams::new([1.0, 0.5, 0.5, 1.0, 0.5, 0.0]).is_err());
        assert!(FitParams::new([1.0, 0.5, 0.5, 1.0, 0.5, f64::NAN]).is_err());
        assert!(FitParams::new([0.93, 0.48, 0.55, 0.9, 0.52, 0.6]).is_ok());
    }

    #[test]
    fn taps_match_reference_values() {
        let g = reference();
        let taps = taps_from_cdf(|t| hitting_cdf_siso(&g, t), 0.6, 3).unwrap();
        for (lag, want) in H_REF.iter().enumerate() {
            assert_abs_diff_eq!(taps[lag], want, epsilon = 1e-14);
        }
    }

    #[test]
    fn taps_from_constant_cdf_are_zero() {
        let taps = taps_from_cdf(|_| Ok(0.2), 0.6, 3).unwrap();
        assert_eq!(taps, vec![0.0; 4]);
    }

    #[test]
    fn taps_telescope_to_final_cdf_value() {
        let g = reference();
        let taps = taps_from_cdf(|t| hitting_cdf_siso(&g, t), 0.6, 3).unwrap();
        let total: f64 = taps.iter().sum();
        assert_abs_diff_eq!(
            total,
            hitting_cdf_siso(&g, 2.4).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn taps_reject_decreasing_cdf() {
        let err = taps_from_cdf(|t| Ok(if t > 1.0 { 0.1 } else { 0.3 }), 0.6, 3).unwrap_err();
        match err {
            Error::MalformedCdf { decrease, .. } => assert!(decrease > 0.1),
            other => panic!("unexpected error {other:?}"),
        }
        // a decrease within tolerance is clamped, not rejected
        let taps = taps_from_cdf(|t| Ok(if t > 1.0 { 0.3 - 1e-13 } else { 0.3 }), 0.6, 3).unwrap();
        assert!(taps.iter().all(|&h| h >= 0.0));
    }

    #[test]
    fn symmetric_taps_structure() {
        let g = reference();
        let p = FitParams::analytic();
        let set = symmetric_mimo_taps(&g, &p).unwrap();
        assert_eq!((set.rx_count(), set.tx_count(), set.lag_count()), (2, 2, 4));
        for lag in 0..4 {
            assert_eq!(set.tap(0, 0, lag), set.tap(1, 1, lag));
            assert_eq!(set.tap(0, 1, lag), set.tap(1, 0, lag));
            // d' > d, so the direct taps dominate at every lag
            assert!(set.tap(0, 0, lag) > set.tap(0, 1, lag));
        }
        // frozen cross-row reference (d' = sqrt(521))
        let cross_ref = [
            0.022713270732802619754,
            0.032025262378270094463,
            0.021379032092473667747,
            0.014979361973451515317,
        ];
        for (lag, want) in cross_ref.iter().enumerate() {
            assert_abs_diff_eq!(set.tap(0, 1, lag), want, epsilon = 1e-14);
        }
    }

    #[test]
    fn symmetric_taps_vanish_for_large_separation() {
        let g = Geometry::new(20.0, 1e3, 5.0, 100.0, 0.6, 3).unwrap();
        let set = symmetric_mimo_taps(&g, &FitParams::analytic()).unwrap();
        for lag in 0..4 {
            assert!(set.tap(0, 1, lag) < 1e-12);
        }
    }
}
