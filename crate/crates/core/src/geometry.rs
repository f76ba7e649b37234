//! Physical scenario description.
//!
//! A [`Geometry`] captures the symmetric link layout: point transmit
//! antennas, spherical absorbing receive antennas of radius `r`, aligned
//! Tx/Rx pairs a distance `d` apart (measured to the sphere *center*), and
//! antenna separation `a` between the two Tx (and the two Rx). The fluid is
//! characterized by the diffusion coefficient `D`. Discrete-time operation
//! is fixed by the symbol duration `Ts` and the channel memory length `L`.

use crate::error::{Error, Result};

/// Link geometry plus discrete-time parameters.
///
/// Distances are in µm, the diffusion coefficient in µm²/s and times in
/// seconds. `memory` is the number of interfering past symbols `L`, so a
/// channel has `L + 1` taps.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Tx-to-aligned-Rx-center distance `d` (µm).
    pub distance: f64,
    /// Antenna separation `a` between the two Tx and the two Rx (µm).
    pub separation: f64,
    /// Receive sphere radius `r` (µm).
    pub radius: f64,
    /// Diffusion coefficient `D` (µm²/s).
    pub diffusion: f64,
    /// Symbol duration `Ts` (s).
    pub symbol_duration: f64,
    /// Channel memory length `L` (number of interfering past symbols).
    pub memory: usize,
}

impl Geometry {
    /// Validates `d > r > 0`, `a >= 0`, `D > 0` and `Ts > 0`.
    pub fn new(
        distance: f64,
        separation: f64,
        radius: f64,
        diffusion: f64,
        symbol_duration: f64,
        memory: usize,
    ) -> Result<Self> {
        let g = Geometry {
            distance,
            separation,
            radius,
            diffusion,
            symbol_duration,
            memory,
        };
        g.validate()?;
        Ok(g)
    }

    /// Default scenario: d = 20 µm, a = 11 µm, r = 5 µm, D = 100 µm²/s,
    /// Ts = 0.6 s, L = 3.
    pub fn reference() -> Self {
        Geometry {
            distance: 20.0,
            separation: 11.0,
            radius: 5.0,
            diffusion: 100.0,
            symbol_duration: 0.6,
            memory: 3,
        }
    }

    /// Distance from a Tx to the center of the non-aligned Rx,
    /// `d' = sqrt(d² + a²)`.
    pub fn cross_distance(&self) -> f64 {
        self.distance.hypot(self.separation)
    }

    /// Number of channel taps, `L + 1`.
    pub fn tap_count(&self) -> usize {
        self.memory + 1
    }

    /// Re-checks the construction invariants (useful after field edits).
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidGeometry(msg));
        if !(self.radius > 0.0) {
            return fail(format!("radius must be positive, got r = {}", self.radius));
        }
        if !(self.distance > self.radius) {
            return fail(format!(
                "distance must exceed the receiver radius, got d = {}, r = {}",
                self.distance, self.radius
            ));
        }
        if !(self.separation >= 0.0) {
            return fail(format!(
                "separation must be non-negative, got a = {}",
                self.separation
            ));
        }
        if !(self.diffusion > 0.0) {
            return fail(format!(
                "diffusion coefficient must be positive, got D = {}",
                self.diffusion
            ));
        }
        if !(self.symbol_duration > 0.0) {
            return fail(format!(
                "symbol duration must be positive, got Ts = {}",
                self.symbol_duration
            ));
        }
        for (name, v) in [
            ("d", self.distance),
            ("a", self.separation),
            ("r", self.radius),
            ("D", self.diffusion),
            ("Ts", self.symbol_duration),
        ] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite, got {v}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_valid() {
        Geometry::reference().validate().unwrap();
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(Geometry::new(5.0, 11.0, 5.0, 100.0, 0.6, 3).is_err()); // d == r
        assert!(Geometry::new(20.0, -1.0, 5.0, 100.0, 0.6, 3).is_err());
        assert!(Geometry::new(20.0, 11.0, 0.0, 100.0, 0.6, 3).is_err());
        assert!(Geometry::new(20.0, 11.0, 5.0, 0.0, 0.6, 3).is_err());
        assert!(Geometry::new(20.0, 11.0, 5.0, 100.0, 0.0, 3).is_err());
        assert!(Geometry::new(f64::NAN, 11.0, 5.0, 100.0, 0.6, 3).is_err());
    }

    #[test]
    fn cross_distance_is_pythagorean() {
        let g = Geometry::new(20.0, 11.0, 5.0, 100.0, 0.6, 3).unwrap();
        assert!((g.cross_distance() - (400.0f64 + 121.0).sqrt()).abs() < 1e-12);
        let g0 = Geometry::new(20.0, 0.0, 5.0, 100.0, 0.6, 3).unwrap();
        assert_eq!(g0.cross_distance(), 20.0);
    }
}
