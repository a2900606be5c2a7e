//! Scalar transcendentals for `no_std` builds, backed by `libm`.

pub(crate) use libm::{atan2, cos, exp, hypot, log, log1p, sin, sqrt};

pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

pub(crate) fn lgamma(x: f64) -> f64 {
    libm::lgamma(x)
}
