//! Complete scenario configuration, built-in presets, and canonical JSON.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::atomic::{DLineConstants, TransitionTable, TrapConfig};
use crate::counts::{DetectionParams, ErrorReport, Prepared};
use crate::depump::{depump_budget, DepumpBudget, ProbeConfig};
use crate::error::{Error, Result};
use crate::inference::{wilson_interval, Interval, ONE_SIGMA_Z, Z_95};
use crate::montecarlo::{
    detection_loss, run_batch, run_summary, wait_time_histogram, AdaptiveProtocol, BatchSummary,
    HeatingModel, LossEstimate, ShotRecord, WaitTimeHistogram,
};
use crate::presets;

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESET_NAMES: [&str; 4] = ["paper-sigma", "paper-pi", "paper-final", "paper-lowdepth"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset_name: Option<String>,
    pub trap: TrapConfig,
    pub probe: ProbeConfig,
    pub detection: DetectionParams,
    pub protocol: AdaptiveProtocol,
    pub heating: HeatingModel,
}

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let trap = match name {
            "paper-sigma" => presets::trap_sigma(),
            "paper-pi" | "paper-final" => presets::trap_pi(),
            "paper-lowdepth" => presets::trap_pi().with_depth_freq(TrapConfig::LOW_DEPTH_FREQ),
            other => {
                return Err(Error::NotFound(format!(
                    "unknown preset {other:?}; known presets: {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        let probe = ProbeConfig::impurity_bound();
        let mut detection = presets::detection_paper_final();
        if matches!(name, "paper-sigma" | "paper-pi") {
            // Modelled budget at the base trap; `with_trap` adds the change.
            let budget = budget_for(&presets::trap_pi(), &probe, &detection)?;
            detection.r_dep_bright = budget.total_rate(detection.r_bright);
        }
        let base = Self {
            schema_version: SCHEMA_VERSION,
            preset_name: Some(name.to_string()),
            trap: presets::trap_pi(),
            probe,
            detection,
            protocol: AdaptiveProtocol::default(),
            heating: HeatingModel::cesium(&presets::trap_pi()),
        };
        base.with_trap(trap)
    }

    /// Replace the trap and carry the change into depth-dependent rates:
    /// the bright depump rate moves by the change in the modelled budget,
    /// the dark repump follows the trap scattering rate, and the heating
    /// model takes the new depth.
    pub fn with_trap(&self, trap: TrapConfig) -> Result<Self> {
        let old = budget_for(&self.trap, &self.probe, &self.detection)?;
        let new = budget_for(&trap, &self.probe, &self.detection)?;
        let shift =
            new.total_rate(self.detection.r_bright) - old.total_rate(self.detection.r_bright);
        let mut out = self.clone();
        out.trap = trap;
        out.detection.r_dep_bright = (self.detection.r_dep_bright + shift).max(0.0);
        out.detection.r_dep_dark = new.trap_rate;
        out.heating.trap_depth_temp = trap.depth_temp;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema_version",
                format!(
                    "unsupported version {}, expected {SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        if let Some(name) = &self.preset_name {
            if name.is_empty() {
                return Err(Error::invalid("preset_name", "must not be empty"));
            }
        }
        self.trap.validate()?;
        self.probe.validate()?;
        self.detection.validate()?;
        self.protocol.validate()?;
        self.heating.validate()?;
        if self.protocol.threshold != self.detection.threshold {
            return Err(Error::invalid(
                "protocol.threshold",
                format!(
                    "must equal detection.threshold ({} != {})",
                    self.protocol.threshold, self.detection.threshold
                ),
            ));
        }
        Ok(())
    }

    /// Parse strict JSON and validate.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn budget(&self) -> Result<DepumpBudget> {
        budget_for(&self.trap, &self.probe, &self.detection)
    }
}

/// Shots per preparation block when alternating bright and dark.
pub const BLOCK_SIZE: u64 = 100;

/// Split `n_shots` into alternating bright/dark blocks of [`BLOCK_SIZE`],
/// starting with bright.
pub fn split_shots(n_shots: u64) -> (u64, u64) {
    let full = n_shots / BLOCK_SIZE;
    let rem = n_shots % BLOCK_SIZE;
    let bright_blocks = full.div_ceil(2);
    let dark_blocks = full / 2;
    let (mut b, mut d) = (bright_blocks * BLOCK_SIZE, dark_blocks * BLOCK_SIZE);
    if full.is_multiple_of(2) {
        b += rem;
    } else {
        d += rem;
    }
    (b, d)
}

/// Outcome of a simulated readout experiment over both preparations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutRun {
    pub seed: u64,
    pub n_shots: u64,
    pub bright: Option<BatchSummary>,
    pub dark: Option<BatchSummary>,
    pub eps_bright: Option<f64>,
    pub eps_dark: Option<f64>,
    pub infidelity: Option<f64>,
    pub fidelity: Option<f64>,
    /// Wilson intervals on the pooled error fraction.
    pub infidelity_interval: Option<Interval>,
    pub infidelity_interval_95: Option<Interval>,
    pub loss: Option<LossEstimate>,
    pub wait_time_bright: Option<WaitTimeHistogram>,
    pub wait_time_dark: Option<WaitTimeHistogram>,
    #[serde(skip)]
    pub records_bright: Vec<ShotRecord>,
    #[serde(skip)]
    pub records_dark: Vec<ShotRecord>,
}

impl ScenarioConfig {
    /// Simulate `n_shots` shots split between the two preparations.
    pub fn simulate(&self, n_shots: u64, seed: u64, keep_records: bool) -> Result<ReadoutRun> {
        self.validate()?;
        if n_shots == 0 {
            return Err(Error::invalid("n_shots", "must be >= 1"));
        }
        let (n_bright, n_dark) = split_shots(n_shots);
        let mut records = [Vec::new(), Vec::new()];
        let mut summaries = [None, None];
        for (i, (prepared, n)) in [(Prepared::Bright, n_bright), (Prepared::Dark, n_dark)]
            .into_iter()
            .enumerate()
        {
            if n == 0 {
                continue;
            }
            if keep_records {
                let batch = run_batch(
                    &self.detection,
                    &self.protocol,
                    &self.heating,
                    prepared,
                    n,
                    seed,
                )?;
                records[i] = batch.records;
                summaries[i] = Some(batch.summary);
            } else {
                summaries[i] = Some(run_summary(
                    &self.detection,
                    &self.protocol,
                    &self.heating,
                    prepared,
                    n,
                    seed,
                )?);
            }
        }
        let [bright, dark] = summaries;
        let reference = self.detection.r_bright + self.detection.r_background;
        let wait = |s: &Option<BatchSummary>| -> Result<Option<WaitTimeHistogram>> {
            s.as_ref()
                .map(|s| wait_time_histogram(&s.pulse_histogram, &self.protocol, reference))
                .transpose()
        };
        let (mut eps_bright, mut eps_dark, mut infidelity, mut fidelity) = (None, None, None, None);
        let (mut interval, mut interval_95, mut loss) = (None, None, None);
        if let (Some(b), Some(d)) = (&bright, &dark) {
            let report = ErrorReport::from_errors(b.error_rate, d.error_rate)?;
            let errors = (b.n_shots - b.bright_labels) + d.bright_labels;
            let total = b.n_shots + d.n_shots;
            eps_bright = Some(report.eps_bright);
            eps_dark = Some(report.eps_dark);
            infidelity = Some(report.infidelity);
            fidelity = Some(report.fidelity);
            interval = Some(wilson_interval(errors, total, ONE_SIGMA_Z)?);
            interval_95 = Some(wilson_interval(errors, total, Z_95)?);
            loss = detection_loss(b.lost, b.n_shots, d.lost, d.n_shots).ok();
        }
        Ok(ReadoutRun {
            seed,
            n_shots,
            wait_time_bright: wait(&bright)?,
            wait_time_dark: wait(&dark)?,
            bright,
            dark,
            eps_bright,
            eps_dark,
            infidelity,
            fidelity,
            infidelity_interval: interval,
            infidelity_interval_95: interval_95,
            loss,
            records_bright: std::mem::take(&mut records[0]),
            records_dark: std::mem::take(&mut records[1]),
        })
    }
}

fn budget_for(
    trap: &TrapConfig,
    probe: &ProbeConfig,
    detection: &DetectionParams,
) -> Result<DepumpBudget> {
    let constants = DLineConstants::cesium(trap.wavelength)?;
    depump_budget(
        trap,
        probe,
        &constants,
        &TransitionTable::cesium(),
        detection.r_bright,
        detection.ce,
    )
}

/// Serialize with sorted keys and floats rounded to 12 significant digits.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&v, &mut out)?;
    Ok(out)
}

fn write_value(v: &Value, out: &mut String) -> Result<()> {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&format_float(n.as_f64().expect("f64 number"))?);
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s)?),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k)?);
                out.push(':');
                write_value(&map[k], out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

/// 12 significant digits; plain decimal for moderate magnitudes, otherwise
/// exponent form with trailing zeros trimmed.
pub fn format_float(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(Error::Numerical(format!(
            "cannot serialize non-finite value {x}"
        )));
    }
    if x == 0.0 {
        return Ok("0".into());
    }
    let sci = format!("{x:.11e}");
    let rounded: f64 = sci.parse().expect("formatted float parses");
    let mag = rounded.abs();
    if (1e-4..1e15).contains(&mag) {
        return Ok(format!("{rounded}"));
    }
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
    Ok(format!("{mantissa}e{exp}"))
}
