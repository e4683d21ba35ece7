//! Built-in parameter sets.
//!
//! Rates that the experiment does not print directly are back-derived:
//! the bright rate from the trap-limited lifetime and its normalized rate,
//! the background from the depump-free optimum detection time.

use crate::atomic::{TrapConfig, TrapPolarization};
use crate::counts::DetectionParams;
use crate::depump::trap_depump_rate;

/// Collected counts/s from a bright atom, excluding background.
pub const BRIGHT_RATE: f64 = 1.96e4;
/// Alternative bright rate implied by the probe-channel numbers.
pub const BRIGHT_RATE_PROBE_IMPLIED: f64 = 2.5e4;
/// Collected background counts/s.
pub const BACKGROUND_RATE: f64 = 60.0;
pub const COLLECTION_EFFICIENCY: f64 = 0.0037;
pub const THRESHOLD: u32 = 2;
/// Depump-free optimum detection time.
pub const IDEAL_DETECTION_TIME: f64 = 0.59e-3;
/// Integrated probe time of the adaptive protocol.
pub const DETECTION_TIME: f64 = 500e-6;
/// Measured bright and dark errors, out of 10⁵ shots each.
pub const MEASURED_EPS_BRIGHT: f64 = 152.0 / 1e5;
pub const MEASURED_EPS_DARK: f64 = 159.0 / 1e5;

fn full_depth_trap_rate() -> f64 {
    trap_depump_rate(TrapConfig::DEFAULT_DEPTH_FREQ).expect("positive depth")
}

/// Default rates with both depump channels off, at the ideal detection time.
pub fn detection_depump_free() -> DetectionParams {
    DetectionParams {
        t_d: IDEAL_DETECTION_TIME,
        r_bright: BRIGHT_RATE,
        r_background: BACKGROUND_RATE,
        r_dep_bright: 0.0,
        r_dep_dark: 0.0,
        threshold: THRESHOLD,
        ce: COLLECTION_EFFICIENCY,
    }
}

/// Final configuration: bright depump from the normalized rate `r_norm`,
/// dark repump at the trap scattering rate.
pub fn detection_with_normalized_rate(r_norm: f64) -> DetectionParams {
    DetectionParams {
        t_d: DETECTION_TIME,
        r_dep_bright: r_norm * BRIGHT_RATE,
        r_dep_dark: full_depth_trap_rate(),
        ..detection_depump_free()
    }
}

/// Normalized depump rate inferred from the measured bright error.
pub fn measured_normalized_rate() -> f64 {
    crate::counts::r_from_eps_bright(MEASURED_EPS_BRIGHT, THRESHOLD).expect("valid measured error")
}

pub fn detection_paper_final() -> DetectionParams {
    detection_with_normalized_rate(measured_normalized_rate())
}

pub fn trap_sigma() -> TrapConfig {
    TrapConfig::from_depth_freq(TrapConfig::DEFAULT_DEPTH_FREQ, TrapPolarization::SigmaPm)
}

pub fn trap_pi() -> TrapConfig {
    TrapConfig::from_depth_freq(TrapConfig::DEFAULT_DEPTH_FREQ, TrapPolarization::PiAligned)
}

/// Detection time of the synthetic depump-fit histograms.
pub const FIT_DETECTION_TIME: f64 = 1e-3;

/// Bright-prepared parameters with a given per-scatter depump probability,
/// for synthetic fit histograms.
pub fn detection_fit(p_scatter: f64) -> DetectionParams {
    let base = detection_depump_free();
    let lit = base.r_bright + base.r_background;
    DetectionParams {
        t_d: FIT_DETECTION_TIME,
        r_dep_bright: p_scatter * lit / base.ce,
        ..base
    }
}
