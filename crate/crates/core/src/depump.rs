//! State-information loss channels during detection: off-resonant trap
//! scatter, off-resonant probe scatter through polarization impurities, and
//! trap-driven V-type Raman leakage out of the cycling transition.
//!
//! All three channels are reduced to the normalized figure of merit 𝓡,
//! the depump probability per collected photon.

use serde::{Deserialize, Serialize};

use crate::atomic::{
    rabi_squared_from_depth, DLineConstants, ExcitedState, Polarization, TransitionEntry,
    TransitionTable, TrapConfig, TrapPolarization,
};
use crate::error::{Error, Result};

/// Trap off-resonant depump rate per Hz of trap depth (U₀/h).
pub const TRAP_DEPUMP_PER_HZ: f64 = 2.5e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// On-resonance saturation parameter s of the cycling transition.
    pub intensity_sat: f64,
    pub pol_fraction_sigma_plus: f64,
    pub pol_fraction_sigma_minus: f64,
    pub pol_fraction_pi: f64,
}

impl ProbeConfig {
    /// Probe at the quoted alignment bound: 10% of the intensity in each of
    /// σ⁻ and π. The saturation parameter is set so this bound stays within
    /// the quoted ≤ 5 s⁻¹ off-resonant depump rate.
    pub fn impurity_bound() -> Self {
        Self {
            intensity_sat: 0.075,
            pol_fraction_sigma_plus: 0.8,
            pol_fraction_sigma_minus: 0.1,
            pol_fraction_pi: 0.1,
        }
    }

    /// Pure σ⁺ probe with the same intensity as [`Self::impurity_bound`].
    pub fn pure() -> Self {
        Self {
            pol_fraction_sigma_plus: 1.0,
            pol_fraction_sigma_minus: 0.0,
            pol_fraction_pi: 0.0,
            ..Self::impurity_bound()
        }
    }

    /// Nominally σ⁺, so the purity is the σ⁺ intensity fraction.
    pub fn polarization_purity(&self) -> f64 {
        self.pol_fraction_sigma_plus
    }

    pub fn fraction(&self, polarization: Polarization) -> f64 {
        match polarization {
            Polarization::SigmaPlus => self.pol_fraction_sigma_plus,
            Polarization::SigmaMinus => self.pol_fraction_sigma_minus,
            Polarization::Pi => self.pol_fraction_pi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("probe.intensity_sat", self.intensity_sat),
            (
                "probe.pol_fraction_sigma_plus",
                self.pol_fraction_sigma_plus,
            ),
            (
                "probe.pol_fraction_sigma_minus",
                self.pol_fraction_sigma_minus,
            ),
            ("probe.pol_fraction_pi", self.pol_fraction_pi),
        ];
        for (path, value) in fields {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::invalid(path, format!("must be >= 0, got {value}")));
            }
        }
        let sum =
            self.pol_fraction_sigma_plus + self.pol_fraction_sigma_minus + self.pol_fraction_pi;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "probe.pol_fraction_*",
                format!("fractions sum to {sum}, expected 1"),
            ));
        }
        Ok(())
    }
}

/// Depump rate from off-resonant trap scatter, `2.5×10⁻⁷ · U₀/h` in s⁻¹.
pub fn trap_depump_rate(depth_freq: f64) -> Result<f64> {
    if !(depth_freq >= 0.0) {
        return Err(Error::domain(format!(
            "depth must be >= 0, got {depth_freq}"
        )));
    }
    Ok(TRAP_DEPUMP_PER_HZ * depth_freq)
}

/// Off-resonant probe depump rate in s⁻¹,
/// `Σ_α b_α (Γ/2) s_α / (1 + s_α + (2δ_α/Γ)²)` with
/// `s_α = f_pol(α) · s / (I_sat,α / I_sat)`.
///
/// `gamma` is the natural linewidth in rad/s; row detunings are angular too.
pub fn probe_depump_rate(probe: &ProbeConfig, rows: &[TransitionEntry], gamma: f64) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::domain("no transition rows"));
    }
    if !(gamma > 0.0) {
        return Err(Error::domain(format!(
            "linewidth must be positive, got {gamma}"
        )));
    }
    if !(probe.intensity_sat >= 0.0) {
        return Err(Error::domain(format!(
            "saturation parameter must be >= 0, got {}",
            probe.intensity_sat
        )));
    }
    let mut rate = 0.0;
    for row in rows {
        let fraction = probe.fraction(row.polarization);
        if !(fraction >= 0.0) {
            return Err(Error::domain(format!(
                "negative polarization fraction {fraction} for {:?}",
                row.polarization
            )));
        }
        let s = fraction * probe.intensity_sat / row.sat_intensity_ratio;
        let detuning = 2.0 * row.detuning / gamma;
        rate += row.branching_ratio * 0.5 * gamma * s / (1.0 + s + detuning * detuning);
    }
    Ok(rate)
}

/// Single-photon Rabi rate of each Raman leg in units of Ω_i, as
/// `(Ω₊/Ω_i, Ω₋/Ω_i)`. Ω₊ drives `|4,4⟩ → |5',5'⟩`, Ω₋ drives
/// `|4,4⟩ → target`. Both follow the relative-strength normalization in which
/// the cycling leg is 3/2.
fn raman_leg_factors(target: ExcitedState) -> Result<(f64, f64)> {
    match (target.f_prime, target.m_f_prime) {
        (4, 3) => Ok((1.5, 7.0 / 40.0)),
        (3, 3) => Ok((1.5, 7.0 / 24.0)),
        _ => Err(Error::NotFound(format!("no Raman leg data for {target}"))),
    }
}

/// States reached from `|5',5'⟩` through a σ⁺/σ⁻ trap photon pair.
pub const RAMAN_TARGETS: [ExcitedState; 2] = [ExcitedState::new(4, 3), ExcitedState::new(3, 3)];

/// Effective two-photon Rabi rate `Ω₊Ω₋ / (2|Δ_D2|)` in Hz.
///
/// `rabi_sq` is `(Ω_i/2π)²` in Hz², `delta_d2` the trap detuning from D2 in Hz.
/// A π-aligned trap has no σ components, so the coupling vanishes.
pub fn raman_effective_rabi(
    rabi_sq: f64,
    delta_d2: f64,
    target: ExcitedState,
    mode: TrapPolarization,
) -> Result<f64> {
    let (plus, minus) = raman_leg_factors(target)?;
    if mode == TrapPolarization::PiAligned {
        return Ok(0.0);
    }
    if !(rabi_sq >= 0.0) {
        return Err(Error::domain(format!("Ω_i² must be >= 0, got {rabi_sq}")));
    }
    if delta_d2 == 0.0 {
        return Err(Error::domain("zero D2 detuning"));
    }
    Ok(plus * minus * rabi_sq / (2.0 * delta_d2.abs()))
}

/// Steady-state target population relative to `|5',5'⟩`,
/// `Ω_eff² / (2(δ² + Ω_eff²))`. Always in `[0, 1/2]`.
pub fn raman_population_ratio(omega_eff: f64, delta_raman: f64) -> Result<f64> {
    let o2 = omega_eff * omega_eff;
    let denom = 2.0 * (delta_raman * delta_raman + o2);
    if denom == 0.0 {
        return Err(Error::domain(
            "Raman population ratio undefined for zero Rabi rate and zero detuning",
        ));
    }
    Ok(o2 / denom)
}

/// Contribution of one Raman target to the per-scatter depump probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RamanTerm {
    pub target: ExcitedState,
    /// Ω_eff/2π in Hz.
    pub omega_eff: f64,
    pub population_ratio: f64,
    pub depump_prob: f64,
}

pub fn raman_terms(
    trap: &TrapConfig,
    constants: &DLineConstants,
    table: &TransitionTable,
) -> Result<Vec<RamanTerm>> {
    let rabi_sq = rabi_squared_from_depth(constants, trap.depth_freq)?;
    let delta_d2 = constants.delta_d2_hz();
    RAMAN_TARGETS
        .iter()
        .map(|&target| {
            let row = table.lookup(target)?;
            let omega_eff =
                raman_effective_rabi(rabi_sq, delta_d2, target, trap.polarization_mode)?;
            let delta = row.detuning.abs() / (2.0 * std::f64::consts::PI);
            let population_ratio = raman_population_ratio(omega_eff, delta)?;
            Ok(RamanTerm {
                target,
                omega_eff,
                population_ratio,
                depump_prob: row.branching_ratio * population_ratio,
            })
        })
        .collect()
}

/// Raman depump probability per resonant scattering event, summed over
/// [`RAMAN_TARGETS`]. Zero for a π-aligned trap.
pub fn raman_depump_probability(
    trap: &TrapConfig,
    constants: &DLineConstants,
    table: &TransitionTable,
) -> Result<f64> {
    Ok(raman_terms(trap, constants, table)?
        .iter()
        .map(|t| t.depump_prob)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    /// Events per second, normalized by the bright collected-count rate.
    PerSecond,
    /// Probability per resonant scatter, normalized by collection efficiency.
    PerScatter,
}

/// Depump probability per collected photon, 𝓡.
pub fn normalized_rate(
    value: f64,
    bright_rate: f64,
    collection_efficiency: f64,
    kind: RateKind,
) -> Result<f64> {
    if !(bright_rate > 0.0) {
        return Err(Error::domain(format!(
            "bright rate must be positive, got {bright_rate}"
        )));
    }
    if !(collection_efficiency > 0.0 && collection_efficiency <= 1.0) {
        return Err(Error::domain(format!(
            "collection efficiency must be in (0, 1], got {collection_efficiency}"
        )));
    }
    Ok(match kind {
        RateKind::PerSecond => value / bright_rate,
        RateKind::PerScatter => value / collection_efficiency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepumpBudget {
    /// s⁻¹
    pub trap_rate: f64,
    /// s⁻¹
    pub probe_rate: f64,
    pub raman_prob_per_scatter: f64,
    pub r_trap: f64,
    pub r_probe: f64,
    pub r_raman: f64,
    pub total_r: f64,
}

impl DepumpBudget {
    /// Total bright-state depump rate in s⁻¹ implied by `total_r`.
    pub fn total_rate(&self, bright_rate: f64) -> f64 {
        self.total_r * bright_rate
    }
}

pub fn depump_budget(
    trap: &TrapConfig,
    probe: &ProbeConfig,
    constants: &DLineConstants,
    table: &TransitionTable,
    bright_rate: f64,
    collection_efficiency: f64,
) -> Result<DepumpBudget> {
    trap.validate()?;
    probe.validate()?;
    let trap_rate = trap_depump_rate(trap.depth_freq)?;
    let probe_rate = probe_depump_rate(probe, table.rows(), constants.gamma)?;
    let raman = raman_depump_probability(trap, constants, table)?;
    let r_trap = normalized_rate(
        trap_rate,
        bright_rate,
        collection_efficiency,
        RateKind::PerSecond,
    )?;
    let r_probe = normalized_rate(
        probe_rate,
        bright_rate,
        collection_efficiency,
        RateKind::PerSecond,
    )?;
    let r_raman = normalized_rate(
        raman,
        bright_rate,
        collection_efficiency,
        RateKind::PerScatter,
    )?;
    Ok(DepumpBudget {
        trap_rate,
        probe_rate,
        raman_prob_per_scatter: raman,
        r_trap,
        r_probe,
        r_raman,
        total_r: r_trap + r_probe + r_raman,
    })
}
