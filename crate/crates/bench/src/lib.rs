//! Fixtures shared by the benchmarks.

use ordstat_core::distributions::{profile_from_mip, MipSpec};
use ordstat_core::FadingProfile;

/// Exponentially decaying profile `γ̄_l = e^{-δ (l-1)}`.
pub fn mip(n: usize) -> FadingProfile {
    profile_from_mip(MipSpec::new(1.0, 0.5, n)).expect("valid MIP profile")
}
