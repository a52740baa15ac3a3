//! Boundary conversions. Internally times are in μs and angular frequencies
//! in rad/μs.

use std::f64::consts::TAU;

pub const US_PER_S: f64 = 1e6;

/// Ordinary frequency in Hz to angular frequency in rad/μs.
pub fn hz_to_rad_per_us(hz: f64) -> f64 {
    TAU * hz / US_PER_S
}

pub fn rad_per_us_to_hz(w: f64) -> f64 {
    w * US_PER_S / TAU
}

pub fn rad_per_us_to_rad_per_s(w: f64) -> f64 {
    w * US_PER_S
}

pub fn s_to_us(t: f64) -> f64 {
    t * US_PER_S
}

pub fn us_to_s(t: f64) -> f64 {
    t / US_PER_S
}
