//! Shot-by-shot simulation of pulsed fluorescence detection.
//!
//! Each shot probes in fixed-length pulses. Under the adaptive stop rule the
//! shot ends as soon as the collected count reaches threshold; under the
//! fixed-time rule every pulse is used. At most one state change is drawn
//! per shot, from an exponential clock started at `t = 0`.
//!
//! Heating uses the free-atom estimate: every scattered photon adds a fixed
//! energy, and the atom counts as lost when the accumulated energy exceeds
//! the trap depth. By default loss is judged after detection (a presence
//! check), so a heated atom keeps fluorescing for the rest of the shot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::atomic::{consts, recoil_temperature, DLineConstants, TrapConfig};
use crate::counts::{ChannelRates, DetectionParams, Prepared};
use crate::error::{Error, Result};
use crate::inference::{wilson_interval, Interval, ONE_SIGMA_Z};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once the threshold is reached.
    #[default]
    Adaptive,
    /// Always probe for the full time.
    FixedTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveProtocol {
    /// s
    pub pulse_duration: f64,
    /// s
    pub max_total_time: f64,
    pub threshold: u32,
    #[serde(default)]
    pub stop_rule: StopRule,
}

impl Default for AdaptiveProtocol {
    fn default() -> Self {
        Self {
            pulse_duration: 5e-6,
            max_total_time: 500e-6,
            threshold: 2,
            stop_rule: StopRule::Adaptive,
        }
    }
}

impl AdaptiveProtocol {
    pub fn fixed_time(total: f64, pulse_duration: f64, threshold: u32) -> Self {
        Self {
            pulse_duration,
            max_total_time: total,
            threshold,
            stop_rule: StopRule::FixedTime,
        }
    }

    pub fn max_pulses(&self) -> u32 {
        // Guard against 500e-6 / 5e-6 landing just below an integer.
        (self.max_total_time / self.pulse_duration * (1.0 + 1e-12)).floor() as u32
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_duration > 0.0) || !self.pulse_duration.is_finite() {
            return Err(Error::invalid(
                "protocol.pulse_duration",
                "must be positive",
            ));
        }
        if !(self.max_total_time >= self.pulse_duration) || !self.max_total_time.is_finite() {
            return Err(Error::invalid(
                "protocol.max_total_time",
                "must be finite and at least one pulse long",
            ));
        }
        if self.threshold < 1 {
            return Err(Error::invalid("protocol.threshold", "must be >= 1"));
        }
        if self.max_pulses() > 10_000_000 {
            return Err(Error::invalid(
                "protocol.max_total_time",
                "more than 1e7 pulses per shot",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingModel {
    /// K
    pub recoil_temp: f64,
    /// K added per scattered photon.
    pub energy_per_scatter: f64,
    /// U₀/k_B in K.
    pub trap_depth_temp: f64,
    /// Stop scattering the moment the atom is lost instead of judging loss
    /// after detection.
    #[serde(default)]
    pub loss_stops_scattering: bool,
}

impl HeatingModel {
    pub fn new(recoil_temp: f64, trap_depth_temp: f64) -> Self {
        Self {
            recoil_temp,
            energy_per_scatter: 2.0 * recoil_temp,
            trap_depth_temp,
            loss_stops_scattering: false,
        }
    }

    /// Cesium D2 recoil heating in the given trap.
    pub fn cesium(trap: &TrapConfig) -> Self {
        let lambda = DLineConstants::cesium_default().d2_wavelength();
        Self::new(recoil_temperature(lambda, consts::CS_MASS), trap.depth_temp)
    }

    /// No heating, hence no loss.
    pub fn disabled(trap_depth_temp: f64) -> Self {
        Self::new(0.0, trap_depth_temp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.recoil_temp >= 0.0) || !self.recoil_temp.is_finite() {
            return Err(Error::invalid(
                "heating.recoil_temp",
                "must be finite and >= 0",
            ));
        }
        let expect = 2.0 * self.recoil_temp;
        if (self.energy_per_scatter - expect).abs() > 1e-9 * expect.max(f64::MIN_POSITIVE) {
            return Err(Error::invalid(
                "heating.energy_per_scatter",
                format!(
                    "must equal 2 * recoil_temp = {expect:e}, got {:e}",
                    self.energy_per_scatter
                ),
            ));
        }
        if !(self.trap_depth_temp > 0.0) || !self.trap_depth_temp.is_finite() {
            return Err(Error::invalid(
                "heating.trap_depth_temp",
                "must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub collected_counts: u32,
    pub pulses_used: u32,
    /// s
    pub wait_time: f64,
    pub scattered_photons: u64,
    /// Time of the state change, if it happened before the shot ended.
    pub depump_time: Option<f64>,
    /// K
    pub final_energy_temp: f64,
    pub lost: bool,
    pub label: Prepared,
}

/// Largest expected number of scattered photons allowed in one pulse.
const MAX_SCATTER_PER_PULSE: f64 = 1e12;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of shot `index` in a batch rooted at `root`.
pub fn shot_seed(root: u64, prepared: Prepared, index: u64) -> u64 {
    let tag = match prepared {
        Prepared::Bright => 0x6272_6967_6874,
        Prepared::Dark => 0x6461_726b,
    };
    splitmix64(splitmix64(root ^ tag).wrapping_add(index))
}

fn sample_poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // Means are bounded by MAX_SCATTER_PER_PULSE, far below the sampler limit.
    Poisson::new(mean)
        .expect("finite positive mean")
        .sample(rng) as u64
}

fn sample_binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p in (0, 1)").sample(rng)
}

fn check_inputs(
    params: &DetectionParams,
    protocol: &AdaptiveProtocol,
    heating: &HeatingModel,
) -> Result<()> {
    params.validate()?;
    protocol.validate()?;
    heating.validate()?;
    let scatter_per_pulse = params.r_bright / params.ce * protocol.pulse_duration;
    if !(scatter_per_pulse <= MAX_SCATTER_PER_PULSE) {
        return Err(Error::Numerical(format!(
            "expected scatter per pulse {scatter_per_pulse:e} exceeds {MAX_SCATTER_PER_PULSE:e}"
        )));
    }
    Ok(())
}

/// Simulate one shot.
pub fn simulate_shot(
    params: &DetectionParams,
    protocol: &AdaptiveProtocol,
    heating: &HeatingModel,
    prepared: Prepared,
    seed: u64,
) -> Result<ShotRecord> {
    check_inputs(params, protocol, heating)?;
    Ok(shot_unchecked(params, protocol, heating, prepared, seed))
}

fn shot_unchecked(
    params: &DetectionParams,
    protocol: &AdaptiveProtocol,
    heating: &HeatingModel,
    prepared: Prepared,
    seed: u64,
) -> ShotRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let change_rate = match prepared {
        Prepared::Bright => params.r_dep_bright,
        Prepared::Dark => params.r_dep_dark,
    };
    let change_at = if change_rate > 0.0 {
        Exp::new(change_rate)
            .expect("positive rate")
            .sample(&mut rng)
    } else {
        f64::INFINITY
    };
    let scatter_rate = params.r_bright / params.ce;
    let fluoresces = |t: f64| (prepared == Prepared::Bright) == (t < change_at);

    let dt = protocol.pulse_duration;
    let max_pulses = protocol.max_pulses();
    let depth_in_scatters = if heating.energy_per_scatter > 0.0 {
        heating.trap_depth_temp / heating.energy_per_scatter
    } else {
        f64::INFINITY
    };

    let mut collected: u64 = 0;
    let mut scattered: u64 = 0;
    let mut pulses = 0;
    while pulses < max_pulses {
        let t0 = pulses as f64 * dt;
        let t1 = t0 + dt;
        pulses += 1;
        let dark_after_loss = heating.loss_stops_scattering && scattered as f64 > depth_in_scatters;
        // Split the pulse at the state change, if it falls inside.
        let segments: [(f64, f64); 2] = if change_at > t0 && change_at < t1 {
            [(t0, change_at), (change_at, t1)]
        } else {
            [(t0, t1), (t1, t1)]
        };
        for (a, b) in segments {
            let len = b - a;
            if len <= 0.0 {
                continue;
            }
            if fluoresces(a) && !dark_after_loss {
                let s = sample_poisson(&mut rng, scatter_rate * len);
                scattered += s;
                collected += sample_binomial(&mut rng, s, params.ce);
            }
            collected += sample_poisson(&mut rng, params.r_background * len);
        }
        if protocol.stop_rule == StopRule::Adaptive && collected >= u64::from(protocol.threshold) {
            break;
        }
    }

    let wait_time = pulses as f64 * dt;
    let energy = scattered as f64 * heating.energy_per_scatter;
    let collected_counts = u32::try_from(collected).unwrap_or(u32::MAX);
    ShotRecord {
        collected_counts,
        pulses_used: pulses,
        wait_time,
        scattered_photons: scattered,
        depump_time: (change_at < wait_time).then_some(change_at),
        final_energy_temp: energy,
        lost: energy > heating.trap_depth_temp,
        label: if collected_counts >= protocol.threshold {
            Prepared::Bright
        } else {
            Prepared::Dark
        },
    }
}

/// Integer tallies over a set of shots. Merging is exact, so any split of a
/// batch across threads yields the same totals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tally {
    pub shots: u64,
    pub bright_labels: u64,
    pub lost: u64,
    pub reached_max_time: u64,
    pub scattered: u128,
    pub pulses: u64,
    pub depumped: u64,
    /// Index = collected counts.
    pub count_histogram: Vec<u64>,
    /// Index = pulses used.
    pub pulse_histogram: Vec<u64>,
}

impl Tally {
    fn add(&mut self, r: &ShotRecord, max_pulses: u32) {
        self.shots += 1;
        self.bright_labels += u64::from(r.label == Prepared::Bright);
        self.lost += u64::from(r.lost);
        self.reached_max_time += u64::from(r.pulses_used == max_pulses);
        self.scattered += u128::from(r.scattered_photons);
        self.pulses += u64::from(r.pulses_used);
        self.depumped += u64::from(r.depump_time.is_some());
        bump(&mut self.count_histogram, r.collected_counts as usize);
        bump(&mut self.pulse_histogram, r.pulses_used as usize);
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.shots += other.shots;
        self.bright_labels += other.bright_labels;
        self.lost += other.lost;
        self.reached_max_time += other.reached_max_time;
        self.scattered += other.scattered;
        self.pulses += other.pulses;
        self.depumped += other.depumped;
        merge_hist(&mut self.count_histogram, &other.count_histogram);
        merge_hist(&mut self.pulse_histogram, &other.pulse_histogram);
        self
    }
}

fn bump(hist: &mut Vec<u64>, i: usize) {
    if hist.len() <= i {
        hist.resize(i + 1, 0);
    }
    hist[i] += 1;
}

fn merge_hist(into: &mut Vec<u64>, from: &[u64]) {
    if into.len() < from.len() {
        into.resize(from.len(), 0);
    }
    for (a, b) in into.iter_mut().zip(from) {
        *a += b;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub prepared: Prepared,
    pub n_shots: u64,
    pub bright_labels: u64,
    pub bright_fraction: f64,
    /// Wilson 1σ interval on the bright-label fraction.
    pub bright_fraction_interval: Interval,
    /// Fraction of shots labeled opposite to the preparation.
    pub error_rate: f64,
    pub error_interval: Interval,
    pub lost: u64,
    pub loss_fraction: f64,
    pub loss_interval: Interval,
    pub mean_scattered: f64,
    /// K
    pub mean_energy_temp: f64,
    /// s
    pub mean_wait_time: f64,
    pub max_time_fraction: f64,
    pub depumped_fraction: f64,
    /// `count_histogram[n]` = shots with `n` collected counts.
    pub count_histogram: Vec<u64>,
    /// `pulse_histogram[k]` = shots that used `k` pulses.
    pub pulse_histogram: Vec<u64>,
}

impl BatchSummary {
    fn from_tally(
        t: Tally,
        prepared: Prepared,
        protocol: &AdaptiveProtocol,
        heating: &HeatingModel,
    ) -> Result<Self> {
        let n = t.shots as f64;
        let errors = match prepared {
            Prepared::Bright => t.shots - t.bright_labels,
            Prepared::Dark => t.bright_labels,
        };
        let mean_scattered = t.scattered as f64 / n;
        let mut pulse_histogram = t.pulse_histogram;
        pulse_histogram.resize(protocol.max_pulses() as usize + 1, 0);
        Ok(Self {
            prepared,
            n_shots: t.shots,
            bright_labels: t.bright_labels,
            bright_fraction: t.bright_labels as f64 / n,
            bright_fraction_interval: wilson_interval(t.bright_labels, t.shots, ONE_SIGMA_Z)?,
            error_rate: errors as f64 / n,
            error_interval: wilson_interval(errors, t.shots, ONE_SIGMA_Z)?,
            lost: t.lost,
            loss_fraction: t.lost as f64 / n,
            loss_interval: wilson_interval(t.lost, t.shots, ONE_SIGMA_Z)?,
            mean_scattered,
            mean_energy_temp: mean_scattered * heating.energy_per_scatter,
            mean_wait_time: t.pulses as f64 / n * protocol.pulse_duration,
            max_time_fraction: t.reached_max_time as f64 / n,
            depumped_fraction: t.depumped as f64 / n,
            count_histogram: t.count_histogram,
            pulse_histogram,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub records: Vec<ShotRecord>,
    pub summary: BatchSummary,
}

/// Run `n_shots` shots of one preparation and keep every record.
pub fn run_batch(
    params: &DetectionParams,
    protocol: &AdaptiveProtocol,
    heating: &HeatingModel,
    prepared: Prepared,
    n_shots: u64,
    seed: u64,
) -> Result<Batch> {
    check_inputs(params, protocol, heating)?;
    check_shots(n_shots)?;
    let records: Vec<ShotRecord> = (0..n_shots)
        .into_par_iter()
        .map(|i| {
            shot_unchecked(
                params,
                protocol,
                heating,
                prepared,
                shot_seed(seed, prepared, i),
            )
        })
        .collect();
    let summary = summarize(&records, prepared, protocol, heating)?;
    Ok(Batch { records, summary })
}

/// Run `n_shots` shots keeping only the summary; same shots as [`run_batch`].
pub fn run_summary(
    params: &DetectionParams,
    protocol: &AdaptiveProtocol,
    heating: &HeatingModel,
    prepared: Prepared,
    n_shots: u64,
    seed: u64,
) -> Result<BatchSummary> {
    check_inputs(params, protocol, heating)?;
    check_shots(n_shots)?;
    let max_pulses = protocol.max_pulses();
    let tally = (0..n_shots)
        .into_par_iter()
        .fold(Tally::default, |mut t, i| {
            let r = shot_unchecked(
                params,
                protocol,
                heating,
                prepared,
                shot_seed(seed, prepared, i),
            );
            t.add(&r, max_pulses);
            t
        })
        .reduce(Tally::default, Tally::merge);
    BatchSummary::from_tally(tally, prepared, protocol, heating)
}

fn check_shots(n_shots: u64) -> Result<()> {
    if n_shots == 0 {
        return Err(Error::invalid("n_shots", "must be >= 1"));
    }
    Ok(())
}

pub fn summarize(
    records: &[ShotRecord],
    prepared: Prepared,
    protocol: &AdaptiveProtocol,
    heating: &HeatingModel,
) -> Result<BatchSummary> {
    if records.is_empty() {
        return Err(Error::domain("no records to summarize"));
    }
    let max_pulses = protocol.max_pulses();
    let mut t = Tally::default();
    for r in records {
        t.add(r, max_pulses);
    }
    BatchSummary::from_tally(t, prepared, protocol, heating)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaitBin {
    pub pulses: u32,
    /// End of the pulse, s.
    pub wait_time: f64,
    pub empirical: f64,
    /// Erlang probability of the threshold-th count arriving in this pulse;
    /// the last bin also holds every later arrival.
    pub erlang: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitTimeHistogram {
    pub bins: Vec<WaitBin>,
    pub max_time_fraction: f64,
    /// Largest CDF difference between empirical and reference.
    pub ks_distance: f64,
    /// Rate of the Erlang reference, counts/s.
    pub reference_rate: f64,
}

/// Wait-time distribution per pulse bin, with the Erlang(threshold, rate)
/// reference discretized on the same pulse grid.
pub fn wait_time_histogram(
    pulse_histogram: &[u64],
    protocol: &AdaptiveProtocol,
    reference_rate: f64,
) -> Result<WaitTimeHistogram> {
    let total: u64 = pulse_histogram.iter().sum();
    if total == 0 {
        return Err(Error::domain(
            "wait-time histogram needs at least one record",
        ));
    }
    if !(reference_rate >= 0.0) {
        return Err(Error::domain("reference rate must be >= 0"));
    }
    let k_max = protocol.max_pulses();
    let dt = protocol.pulse_duration;
    let shape = f64::from(protocol.threshold);
    let cdf = |k: u32| {
        if k == 0 || reference_rate == 0.0 {
            0.0
        } else {
            gamma_lr(shape, reference_rate * f64::from(k) * dt)
        }
    };
    let mut bins = Vec::with_capacity(k_max as usize);
    let mut ks: f64 = 0.0;
    let mut emp_cdf = 0.0;
    for k in 1..=k_max {
        let count = pulse_histogram.get(k as usize).copied().unwrap_or(0);
        let empirical = count as f64 / total as f64;
        let erlang = if k == k_max {
            1.0 - cdf(k - 1)
        } else {
            cdf(k) - cdf(k - 1)
        };
        emp_cdf += empirical;
        let ref_cdf = if k == k_max { 1.0 } else { cdf(k) };
        ks = ks.max((emp_cdf - ref_cdf).abs());
        bins.push(WaitBin {
            pulses: k,
            wait_time: f64::from(k) * dt,
            empirical,
            erlang,
        });
    }
    Ok(WaitTimeHistogram {
        max_time_fraction: bins.last().map_or(0.0, |b| b.empirical),
        bins,
        ks_distance: ks,
        reference_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub loss: f64,
    /// 1σ, propagated from both binomial survival fractions.
    pub std_error: f64,
    pub survival_bright: f64,
    pub survival_dark: f64,
}

/// `1 − S_bright / S_dark` from lost-flag counts.
pub fn detection_loss(
    lost_bright: u64,
    n_bright: u64,
    lost_dark: u64,
    n_dark: u64,
) -> Result<LossEstimate> {
    if n_bright == 0 || n_dark == 0 || lost_bright > n_bright || lost_dark > n_dark {
        return Err(Error::domain(
            "loss needs nonempty record sets with lost <= shots",
        ));
    }
    let sb = 1.0 - lost_bright as f64 / n_bright as f64;
    let sd = 1.0 - lost_dark as f64 / n_dark as f64;
    if sd == 0.0 {
        return Err(Error::domain("no dark shot survived"));
    }
    let ratio = sb / sd;
    let var_b = sb * (1.0 - sb) / n_bright as f64;
    let var_d = sd * (1.0 - sd) / n_dark as f64;
    let std_error = (var_b / (sd * sd) + ratio * ratio * var_d / (sd * sd)).sqrt();
    Ok(LossEstimate {
        loss: 1.0 - ratio,
        std_error,
        survival_bright: sb,
        survival_dark: sd,
    })
}

pub fn detection_loss_from_records(
    bright: &[ShotRecord],
    dark: &[ShotRecord],
) -> Result<LossEstimate> {
    let lost = |rs: &[ShotRecord]| rs.iter().filter(|r| r.lost).count() as u64;
    detection_loss(
        lost(bright),
        bright.len() as u64,
        lost(dark),
        dark.len() as u64,
    )
}

/// Direct sampler of the single-change count model: draw the change time,
/// then one Poisson count for the whole window. Returns a histogram indexed
/// by count.
pub fn sample_change_model(
    rates: &ChannelRates,
    t_d: f64,
    n_samples: u64,
    seed: u64,
) -> Result<Vec<u64>> {
    if !(t_d > 0.0) || rates.r_p < 0.0 || rates.r_np < 0.0 || rates.r_dep < 0.0 {
        return Err(Error::domain("invalid rates for the count model sampler"));
    }
    const CHUNK: u64 = 1 << 16;
    let chunks = n_samples.div_ceil(CHUNK);
    let hist = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed.wrapping_add(splitmix64(c))));
            let clock = (rates.r_dep > 0.0).then(|| Exp::new(rates.r_dep).expect("positive rate"));
            let mut h = Vec::new();
            let n = CHUNK.min(n_samples - c * CHUNK);
            for _ in 0..n {
                let t = clock.map_or(f64::INFINITY, |e| e.sample(&mut rng)).min(t_d);
                let mean = rates.r_p * t + rates.r_np * (t_d - t);
                bump(&mut h, sample_poisson(&mut rng, mean) as usize);
            }
            h
        })
        .reduce(Vec::new, |mut a, b| {
            merge_hist(&mut a, &b);
            a
        });
    Ok(hist)
}
