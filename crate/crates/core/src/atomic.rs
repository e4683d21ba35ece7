//! Cesium D-line data, the probe depump transition table, and trap-depth
//! conversions.
//!
//! Conventions: fields suffixed with an angular unit (`rad/s`) store
//! ω-type quantities; everything documented in `Hz` is an ordinary
//! frequency (ω/2π). Trap depths are carried both as `U₀/h` and `U₀/k_B`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SI constants (exact in the 2019 SI, or CODATA 2018).
pub mod consts {
    pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
    pub const PLANCK: f64 = 6.626_070_15e-34;
    pub const BOLTZMANN: f64 = 1.380_649e-23;
    /// Mass of ¹³³Cs in kg.
    pub const CS_MASS: f64 = 2.206_946_9e-25;
    /// Default tweezer wavelength in m.
    pub const TRAP_WAVELENGTH: f64 = 937.0e-9;
    /// `k_B / h` in Hz/K.
    pub const HZ_PER_KELVIN: f64 = BOLTZMANN / PLANCK;
}

const LINE_DATA_JSON: &str = include_str!("../data/cs_d_lines.json");
const DEPUMP_ROWS_JSON: &str = include_str!("../data/cs_d2_depump_rows.json");

/// Raw line data as stored on disk, in spectroscopists' units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineData {
    /// Natural linewidth Γ/2π of the D2 line in MHz.
    pub linewidth_mhz: f64,
    pub d1_thz: f64,
    pub d2_thz: f64,
    pub hyperfine_ground_ghz: f64,
    /// F'=5 to F'=4 splitting of the D2 excited state in MHz.
    pub excited_splitting_45_mhz: f64,
}

impl LineData {
    pub fn cesium() -> Self {
        serde_json::from_str(LINE_DATA_JSON).expect("bundled cesium line data is valid")
    }
}

/// D-line constants seen from a trap at a particular wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DLineConstants {
    /// Natural linewidth Γ of the D2 line (rad/s).
    pub gamma: f64,
    /// D2 resonance ω₀ (rad/s).
    pub omega0: f64,
    /// Trap detuning from D1, ω_trap − ω_D1 (rad/s).
    pub delta_d1: f64,
    /// Trap detuning from D2, ω_trap − ω_D2 (rad/s).
    pub delta_d2: f64,
    /// Ground-state hyperfine splitting (Hz).
    pub hyperfine_ground_splitting: f64,
    /// δ₄,₅/2π, the F'=5 to F'=4 excited splitting (Hz).
    pub excited_splitting_45: f64,
}

impl DLineConstants {
    pub fn from_line_data(data: &LineData, trap_wavelength: f64) -> Result<Self> {
        if !(trap_wavelength > 0.0) || !trap_wavelength.is_finite() {
            return Err(Error::domain(format!(
                "trap wavelength must be positive, got {trap_wavelength}"
            )));
        }
        let nu_trap = consts::SPEED_OF_LIGHT / trap_wavelength;
        let two_pi = 2.0 * PI;
        Ok(Self {
            gamma: two_pi * data.linewidth_mhz * 1e6,
            omega0: two_pi * data.d2_thz * 1e12,
            delta_d1: two_pi * (nu_trap - data.d1_thz * 1e12),
            delta_d2: two_pi * (nu_trap - data.d2_thz * 1e12),
            hyperfine_ground_splitting: data.hyperfine_ground_ghz * 1e9,
            excited_splitting_45: data.excited_splitting_45_mhz * 1e6,
        })
    }

    /// Cesium constants for the given trap wavelength.
    pub fn cesium(trap_wavelength: f64) -> Result<Self> {
        Self::from_line_data(&LineData::cesium(), trap_wavelength)
    }

    /// Cesium constants for the default 937 nm tweezer.
    pub fn cesium_default() -> Self {
        Self::cesium(consts::TRAP_WAVELENGTH).expect("default wavelength is valid")
    }

    pub fn delta_d1_hz(&self) -> f64 {
        self.delta_d1 / (2.0 * PI)
    }

    pub fn delta_d2_hz(&self) -> f64 {
        self.delta_d2 / (2.0 * PI)
    }

    pub fn gamma_hz(&self) -> f64 {
        self.gamma / (2.0 * PI)
    }

    /// D2 wavelength in m.
    pub fn d2_wavelength(&self) -> f64 {
        2.0 * PI * consts::SPEED_OF_LIGHT / self.omega0
    }
}

/// Photon recoil temperature `h² / (λ² m k_B)` for a transition at `wavelength`.
pub fn recoil_temperature(wavelength: f64, mass: f64) -> f64 {
    consts::PLANCK * consts::PLANCK / (wavelength * wavelength * mass * consts::BOLTZMANN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    #[serde(rename = "sigma+")]
    SigmaPlus,
    #[serde(rename = "sigma-")]
    SigmaMinus,
    #[serde(rename = "pi")]
    Pi,
}

/// An excited hyperfine sublevel `|F', m_F'⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExcitedState {
    pub f_prime: u8,
    pub m_f_prime: i8,
}

impl ExcitedState {
    pub const fn new(f_prime: u8, m_f_prime: i8) -> Self {
        Self { f_prime, m_f_prime }
    }
}

impl std::fmt::Display for ExcitedState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "|F'={}, m'={}>", self.f_prime, self.m_f_prime)
    }
}

/// Off-resonant probe coupling from the stretched ground state `|4, 4⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub final_state: ExcitedState,
    pub polarization: Polarization,
    /// Probe detuning δ_α from this transition (rad/s).
    pub detuning: f64,
    /// Branching ratio b_α into the F=3 ground manifold.
    pub branching_ratio: f64,
    /// I_sat,α / I_sat of the cycling transition.
    pub sat_intensity_ratio: f64,
}

/// On-disk form of a [`TransitionEntry`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRow {
    pub f_prime: u8,
    pub m_f_prime: i8,
    pub polarization: Polarization,
    pub detuning_mhz: f64,
    pub branching_num: u32,
    pub branching_den: u32,
    pub sat_ratio: f64,
}

impl TryFrom<&TransitionRow> for TransitionEntry {
    type Error = Error;

    fn try_from(row: &TransitionRow) -> Result<Self> {
        let state = ExcitedState::new(row.f_prime, row.m_f_prime);
        if row.branching_den == 0 || row.branching_num > row.branching_den {
            return Err(Error::invalid(
                format!("{state}.branching"),
                format!(
                    "{}/{} is not in [0, 1]",
                    row.branching_num, row.branching_den
                ),
            ));
        }
        if !(row.sat_ratio > 0.0) {
            return Err(Error::invalid(
                format!("{state}.sat_ratio"),
                format!("must be positive, got {}", row.sat_ratio),
            ));
        }
        if !row.detuning_mhz.is_finite() {
            return Err(Error::invalid(
                format!("{state}.detuning_mhz"),
                "must be finite",
            ));
        }
        Ok(Self {
            final_state: state,
            polarization: row.polarization,
            detuning: 2.0 * PI * row.detuning_mhz * 1e6,
            branching_ratio: f64::from(row.branching_num) / f64::from(row.branching_den),
            sat_intensity_ratio: row.sat_ratio,
        })
    }
}

/// The probe depump rows, keyed by final excited state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    rows: Vec<TransitionEntry>,
}

impl TransitionTable {
    pub fn from_json(json: &str) -> Result<Self> {
        let rows: Vec<TransitionRow> = serde_json::from_str(json)?;
        let rows = rows
            .iter()
            .map(TransitionEntry::try_from)
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(Error::invalid("transitions", "table has no rows"));
        }
        Ok(Self { rows })
    }

    /// The three cesium rows reachable from `|4, 4⟩` by probe impurities.
    pub fn cesium() -> Self {
        Self::from_json(DEPUMP_ROWS_JSON).expect("bundled transition table is valid")
    }

    pub fn rows(&self) -> &[TransitionEntry] {
        &self.rows
    }

    pub fn lookup(&self, state: ExcitedState) -> Result<&TransitionEntry> {
        self.rows
            .iter()
            .find(|row| row.final_state == state)
            .ok_or_else(|| Error::NotFound(format!("no depump row for {state}")))
    }
}

/// Orientation of the linear trap polarization relative to the bias field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapPolarization {
    /// Parallel to the field: pure π light.
    PiAligned,
    /// Orthogonal to the field: equal σ⁺ and σ⁻ components.
    SigmaPm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    /// U₀/h in Hz.
    pub depth_freq: f64,
    /// U₀/k_B in K.
    pub depth_temp: f64,
    /// Vacuum wavelength in m.
    pub wavelength: f64,
    pub polarization_mode: TrapPolarization,
}

impl TrapConfig {
    /// Canonical full-depth trap, U₀/h = 11.9 MHz.
    pub const DEFAULT_DEPTH_FREQ: f64 = 11.9e6;
    /// Reduced-depth trap, U₀/h = 5.9 MHz.
    pub const LOW_DEPTH_FREQ: f64 = 5.9e6;

    pub fn from_depth_freq(depth_freq: f64, polarization_mode: TrapPolarization) -> Self {
        Self {
            depth_freq,
            depth_temp: depth_freq / consts::HZ_PER_KELVIN,
            wavelength: consts::TRAP_WAVELENGTH,
            polarization_mode,
        }
    }

    pub fn from_depth_temp(depth_temp: f64, polarization_mode: TrapPolarization) -> Self {
        Self {
            depth_freq: depth_temp * consts::HZ_PER_KELVIN,
            depth_temp,
            wavelength: consts::TRAP_WAVELENGTH,
            polarization_mode,
        }
    }

    /// Copy with a new depth, keeping both depth fields consistent.
    pub fn with_depth_freq(&self, depth_freq: f64) -> Self {
        Self {
            depth_freq,
            depth_temp: depth_freq / consts::HZ_PER_KELVIN,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth_freq > 0.0) || !self.depth_freq.is_finite() {
            return Err(Error::invalid(
                "trap.depth_freq",
                "must be positive and finite",
            ));
        }
        let expected = self.depth_temp * consts::HZ_PER_KELVIN;
        if ((expected - self.depth_freq) / self.depth_freq).abs() > 1e-9 {
            return Err(Error::invalid(
                "trap.depth_temp",
                format!(
                    "inconsistent with depth_freq: {} K corresponds to {} Hz, not {} Hz",
                    self.depth_temp, expected, self.depth_freq
                ),
            ));
        }
        if !(self.wavelength > 0.0) {
            return Err(Error::invalid("trap.wavelength", "must be positive"));
        }
        Ok(())
    }
}

/// Ground-state light shift `U = (π c² Γ / 2ω₀³)(2/Δ_D2 + 1/Δ_D1)·I` in J.
///
/// Angular units throughout; `intensity` in W/m². Negative for red detuning.
pub fn stark_shift(constants: &DLineConstants, intensity: f64) -> Result<f64> {
    if !(intensity >= 0.0) {
        return Err(Error::domain(format!(
            "intensity must be >= 0, got {intensity}"
        )));
    }
    if constants.delta_d1 == 0.0 || constants.delta_d2 == 0.0 {
        return Err(Error::domain("trap detuning from a D line is zero"));
    }
    let c = consts::SPEED_OF_LIGHT;
    let prefactor = PI * c * c * constants.gamma / (2.0 * constants.omega0.powi(3));
    Ok(prefactor * (2.0 / constants.delta_d2 + 1.0 / constants.delta_d1) * intensity)
}

/// Squared single-beam Rabi rate `(Ω_i/2π)²` in Hz² for half the trap depth
/// in each of two circular components:
/// `2·(U₀/h)·|Δ_D1 Δ_D2 / (2Δ_D1 + Δ_D2)|`, detunings in Hz.
pub fn rabi_squared_from_depth(constants: &DLineConstants, depth_freq: f64) -> Result<f64> {
    if !(depth_freq >= 0.0) {
        return Err(Error::domain(format!(
            "depth must be >= 0, got {depth_freq}"
        )));
    }
    let d1 = constants.delta_d1_hz();
    let d2 = constants.delta_d2_hz();
    let denom = 2.0 * d1 + d2;
    if denom == 0.0 {
        return Err(Error::domain("degenerate detunings: 2Δ_D1 + Δ_D2 = 0"));
    }
    Ok(2.0 * depth_freq * (d1 * d2 / denom).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stored_detunings_are_red() {
        let c = DLineConstants::cesium_default();
        assert!(c.gamma > 0.0 && c.omega0 > 0.0);
        assert!(c.delta_d1 < 0.0 && c.delta_d2 < 0.0);
        // 31.9 THz as quoted; the 937 nm vacuum wavelength lands within 1%.
        let d2 = c.delta_d2_hz().abs();
        assert!((d2 / 31.9e12 - 1.0).abs() < 0.01, "{d2}");
        assert!((c.excited_splitting_45 - 251.0916e6).abs() < 1.0);
        assert!((c.hyperfine_ground_splitting - 9.2e9).abs() < 0.01e9);
    }

    #[test]
    fn stark_shift_zero_and_linear() {
        let c = DLineConstants::cesium_default();
        assert_eq!(stark_shift(&c, 0.0).unwrap(), 0.0);
        let base = stark_shift(&c, 1.0e9).unwrap();
        assert!(base < 0.0);
        for k in [0.5, 2.0, 3.0, 7.5, 100.0] {
            let u = stark_shift(&c, k * 1.0e9).unwrap();
            assert!((u / (k * base) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn stark_shift_rejects_zero_detuning() {
        let mut c = DLineConstants::cesium_default();
        c.delta_d1 = 0.0;
        assert!(matches!(stark_shift(&c, 1.0), Err(Error::Domain(_))));
        assert!(stark_shift(&DLineConstants::cesium_default(), -1.0).is_err());
    }

    #[test]
    fn stark_shift_regression_at_default_depth() {
        // Intensity giving |U|/h = 11.9 MHz, evaluated by hand from the
        // closed form with the bundled constants (independent script):
        //   Γ = 2π·5.2345e6, ω₀ = 2π·351.7257185e12,
        //   ν_trap = c/937 nm, Δ's from the bundled D1/D2 frequencies.
        let c = DLineConstants::cesium_default();
        let i_ref = 8.936_260_18e8;
        let u = stark_shift(&c, i_ref).unwrap() / consts::PLANCK;
        assert!((u + 11.9e6).abs() / 11.9e6 < 1e-8, "{u}");
    }

    #[test]
    fn rabi_coefficient_is_15_5_thz() {
        let c = DLineConstants::cesium_default();
        assert_eq!(rabi_squared_from_depth(&c, 0.0).unwrap(), 0.0);
        let per_hz = rabi_squared_from_depth(&c, 1e6).unwrap() / 1e6;
        assert!((per_hz / 15.5e12 - 1.0).abs() < 0.01, "{per_hz}");
        for depth in [1e5, 3.3e6, 11.9e6, 40e6] {
            let ratio = rabi_squared_from_depth(&c, depth).unwrap() / depth;
            assert!((ratio / per_hz - 1.0).abs() < 1e-12);
        }
        let at_default = rabi_squared_from_depth(&c, 11.9e6).unwrap();
        assert!((at_default / 1.84e20 - 1.0).abs() < 0.01, "{at_default}");
    }

    #[test]
    fn rabi_rejects_degenerate_denominator() {
        let mut c = DLineConstants::cesium_default();
        c.delta_d2 = -2.0 * c.delta_d1;
        assert!(rabi_squared_from_depth(&c, 1e6).is_err());
    }

    #[test]
    fn table_rows_match_stored_values() {
        let table = TransitionTable::cesium();
        assert_eq!(table.rows().len(), 3);
        let r = table.lookup(ExcitedState::new(4, 3)).unwrap();
        assert_eq!(r.polarization, Polarization::SigmaMinus);
        assert!((r.detuning / (2.0 * PI) - 251e6).abs() < 1e-3);
        assert_eq!(r.branching_ratio, 5.0 / 12.0);
        assert_eq!(r.sat_intensity_ratio, 8.57);

        let r = table.lookup(ExcitedState::new(3, 3)).unwrap();
        assert_eq!(r.polarization, Polarization::SigmaMinus);
        assert!((r.detuning / (2.0 * PI) - 452e6).abs() < 1e-3);
        assert_eq!(r.branching_ratio, 0.75);
        assert_eq!(r.sat_intensity_ratio, 5.14);

        let r = table.lookup(ExcitedState::new(4, 4)).unwrap();
        assert_eq!(r.polarization, Polarization::Pi);
        assert_eq!(r.sat_intensity_ratio, 2.14);

        for row in table.rows() {
            assert!((0.0..=1.0).contains(&row.branching_ratio));
            assert!(row.sat_intensity_ratio >= 1.0);
        }
    }

    #[test]
    fn cycling_state_is_not_a_depump_row() {
        let table = TransitionTable::cesium();
        assert!(matches!(
            table.lookup(ExcitedState::new(5, 5)),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn table_loader_rejects_bad_rows() {
        let bad = r#"[{"f_prime":4,"m_f_prime":3,"polarization":"sigma-","detuning_mhz":251,
            "branching_num":13,"branching_den":12,"sat_ratio":8.57}]"#;
        assert!(TransitionTable::from_json(bad).is_err());
        let extra = r#"[{"f_prime":4,"m_f_prime":3,"polarization":"sigma-","detuning_mhz":251,
            "branching_num":5,"branching_den":12,"sat_ratio":8.57,"note":1}]"#;
        assert!(TransitionTable::from_json(extra).is_err());
        assert!(TransitionTable::from_json("[]").is_err());
    }

    #[test]
    fn depth_units_agree() {
        let trap = TrapConfig::from_depth_temp(0.57e-3, TrapPolarization::PiAligned);
        assert!(
            (trap.depth_freq - 11.88e6).abs() < 0.25e6,
            "{}",
            trap.depth_freq
        );
        trap.validate().unwrap();
        let trap = TrapConfig::from_depth_freq(11.9e6, TrapPolarization::PiAligned);
        trap.validate().unwrap();
        let mut broken = trap;
        broken.depth_temp *= 1.001;
        assert!(broken.validate().is_err());
        let low = trap.with_depth_freq(TrapConfig::LOW_DEPTH_FREQ);
        assert!((low.depth_temp - 0.283e-3).abs() < 0.001e-3);
    }

    #[test]
    fn cesium_recoil_is_about_0_2_microkelvin() {
        let c = DLineConstants::cesium_default();
        let t = recoil_temperature(c.d2_wavelength(), consts::CS_MASS);
        assert!((t - 0.198e-6).abs() < 0.002e-6, "{t}");
    }
}
