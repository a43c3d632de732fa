//! Model-based machinery for downlink mmWave positioning with multiple
//! multi-antenna base stations.
//!
//! The crate covers the world geometry ([`scenario`]), ideal and impaired
//! uniform linear arrays ([`array`]), the pilot observation model
//! ([`channel`]), Fisher-information bounds on angle of departure and
//! position ([`bounds`]) and the model-based benchmark transmitter and
//! receivers ([`baseline`]).
//!
//! All angles are radians. Degrees appear only at I/O boundaries.

pub mod array;
pub mod baseline;
pub mod bounds;
pub mod channel;
mod error;
pub mod scenario;

pub use error::{Error, Result};

/// Planar point in meters, `[x, y]`.
pub type Point2 = [f64; 2];

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::PI;
    let two_pi = 2.0 * PI;
    let mut a = angle.rem_euclid(two_pi);
    if a > PI {
        a -= two_pi;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::wrap_angle;
    use std::f64::consts::PI;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_angle(0.25), 0.25);
    }
}
