//! Photon-count statistics for thresholded state detection.
//!
//! An atom prepared in one state fluoresces at `R_p` until, at most once, it
//! changes state at rate `R_dep` and continues at `R_np`. Marginalizing the
//! change time gives
//!
//! ```text
//! P(n) = e^{-t_d R_dep} 𝒫(n, R_p t_d)
//!      + ∫₀^{t_d} 𝒫(n, R_p t + R_np (t_d − t)) R_dep e^{-t R_dep} dt
//! ```
//!
//! The integral is evaluated after substituting `u = 1 − e^{-R_dep t}`, which
//! absorbs the exponential weight and leaves a bounded, smooth integrand on
//! `[0, 1 − e^{-R_dep t_d}]`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_vec, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prepared {
    Bright,
    Dark,
}

impl Prepared {
    pub const BOTH: [Prepared; 2] = [Prepared::Bright, Prepared::Dark];

    pub fn as_str(&self) -> &'static str {
        match self {
            Prepared::Bright => "bright",
            Prepared::Dark => "dark",
        }
    }
}

impl std::fmt::Display for Prepared {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Prepared {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bright" => Ok(Prepared::Bright),
            "dark" => Ok(Prepared::Dark),
            other => Err(Error::invalid(
                "prepared",
                format!("expected bright or dark, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionParams {
    /// Detection time in s.
    pub t_d: f64,
    /// Collected counts/s from the atom in the bright state, excluding background.
    pub r_bright: f64,
    /// Collected background counts/s.
    pub r_background: f64,
    /// Bright → dark depump rate, s⁻¹.
    pub r_dep_bright: f64,
    /// Dark → bright repump rate, s⁻¹.
    pub r_dep_dark: f64,
    /// Counts needed to label the atom bright.
    pub threshold: u32,
    /// Collection efficiency.
    pub ce: f64,
}

/// The three rates of the single-change count model for one preparation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRates {
    /// Collection rate in the prepared state.
    pub r_p: f64,
    /// Collection rate after the state change.
    pub r_np: f64,
    pub r_dep: f64,
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("detection.r_bright", self.r_bright),
            ("detection.r_background", self.r_background),
            ("detection.r_dep_bright", self.r_dep_bright),
            ("detection.r_dep_dark", self.r_dep_dark),
        ];
        for (path, v) in rates {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(
                    path,
                    format!("must be a finite rate >= 0, got {v}"),
                ));
            }
        }
        if !(self.t_d > 0.0) || !self.t_d.is_finite() {
            return Err(Error::invalid(
                "detection.t_d",
                format!("must be positive, got {}", self.t_d),
            ));
        }
        if self.threshold < 1 {
            return Err(Error::invalid("detection.threshold", "must be >= 1"));
        }
        if !(self.ce > 0.0 && self.ce <= 1.0) {
            return Err(Error::invalid(
                "detection.ce",
                format!("must be in (0, 1], got {}", self.ce),
            ));
        }
        if !(self.r_bright > self.r_background) {
            return Err(Error::invalid(
                "detection.r_bright",
                format!(
                    "must exceed the background rate ({} <= {})",
                    self.r_bright, self.r_background
                ),
            ));
        }
        Ok(())
    }

    pub fn rates(&self, prepared: Prepared) -> ChannelRates {
        let lit = self.r_bright + self.r_background;
        match prepared {
            Prepared::Bright => ChannelRates {
                r_p: lit,
                r_np: self.r_background,
                r_dep: self.r_dep_bright,
            },
            Prepared::Dark => ChannelRates {
                r_p: self.r_background,
                r_np: lit,
                r_dep: self.r_dep_dark,
            },
        }
    }

    pub fn with_time(&self, t_d: f64) -> Self {
        Self { t_d, ..*self }
    }

    pub fn with_threshold(&self, threshold: u32) -> Self {
        Self { threshold, ..*self }
    }

    /// Same rates with both depump channels switched off.
    pub fn depump_free(&self) -> Self {
        Self {
            r_dep_bright: 0.0,
            r_dep_dark: 0.0,
            ..*self
        }
    }

    /// Count index past which both preparations carry negligible mass.
    pub fn count_cutoff(&self) -> usize {
        let mu = (self.r_bright + self.r_background) * self.t_d;
        (20.0 + mu + 10.0 * mu.sqrt()).ceil() as usize
    }
}

/// Poisson probability of `n` events at mean `mean`.
pub fn poisson_pmf(n: u64, mean: f64) -> Result<f64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::domain(format!(
            "Poisson mean must be finite and >= 0, got {mean}"
        )));
    }
    Ok(pmf(n, mean))
}

fn pmf(n: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    (nf * mean.ln() - mean - ln_gamma(nf + 1.0)).exp()
}

/// Fill `out[k] = 𝒫(k, mean)`.
fn pmf_series(mean: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    if mean == 0.0 {
        out.fill(0.0);
        out[0] = 1.0;
        return;
    }
    if mean < 600.0 {
        let mut p = (-mean).exp();
        out[0] = p;
        for (k, slot) in out.iter_mut().enumerate().skip(1) {
            p *= mean / k as f64;
            *slot = p;
        }
    } else {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = pmf(k as u64, mean);
        }
    }
}

/// `P(N < m)` for a Poisson variable.
fn lower_tail(m: u32, mean: f64) -> f64 {
    if mean == 0.0 {
        return 1.0;
    }
    (0..m as u64).map(|n| pmf(n, mean)).sum()
}

/// `P(N ≥ m)` for a Poisson variable, computed without cancellation.
fn upper_tail(m: u32, mean: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if mean == 0.0 {
        return 0.0;
    }
    gamma_lr(f64::from(m), mean)
}

struct Substitution {
    rates: ChannelRates,
    t_d: f64,
    /// Upper limit of `u`: the probability of a change within `t_d`.
    u_max: f64,
    /// `e^{-R_dep t_d}`, the no-change weight.
    survive: f64,
}

impl Substitution {
    fn new(rates: ChannelRates, t_d: f64) -> Self {
        let x = rates.r_dep * t_d;
        Self {
            rates,
            t_d,
            u_max: -(-x).exp_m1(),
            survive: (-x).exp(),
        }
    }

    /// Mean count when the change happens at `t(u)`.
    fn mean_at(&self, u: f64) -> f64 {
        let t = if u >= 1.0 {
            self.t_d
        } else {
            (-(-u).ln_1p() / self.rates.r_dep).min(self.t_d)
        };
        self.rates.r_p * t + self.rates.r_np * (self.t_d - t)
    }

    fn full_mean(&self) -> f64 {
        self.rates.r_p * self.t_d
    }
}

fn check_rates(rates: &ChannelRates, t_d: f64) -> Result<()> {
    for (name, v) in [
        ("R_p", rates.r_p),
        ("R_np", rates.r_np),
        ("R_dep", rates.r_dep),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::domain(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    if !(t_d > 0.0) || !t_d.is_finite() {
        return Err(Error::domain(format!("t_d must be positive, got {t_d}")));
    }
    Ok(())
}

/// Closed form of the change term when the post-change rate is zero:
/// `R_dep R_p^n / (R_p+R_dep)^{n+1} · P(n+1, (R_p+R_dep) t_d)`.
fn change_term_dark_after(n: u64, rates: &ChannelRates, t_d: f64) -> f64 {
    let total = rates.r_p + rates.r_dep;
    let nf = n as f64;
    let log_coeff = rates.r_dep.ln() + nf * rates.r_p.ln() - (nf + 1.0) * total.ln();
    log_coeff.exp() * gamma_lr(nf + 1.0, total * t_d)
}

/// `P(n)` for `n = 0..=n_max` under the single-change model.
///
/// The vector is integrated on a shared subdivision with an L1 error budget
/// of `1e-9` relative to the total mass.
pub fn marginal_distribution(rates: &ChannelRates, t_d: f64, n_max: usize) -> Result<Vec<f64>> {
    check_rates(rates, t_d)?;
    let sub = Substitution::new(*rates, t_d);
    let dim = n_max + 1;
    let mut out = vec![0.0; dim];
    pmf_series(sub.full_mean(), &mut out);
    for p in &mut out {
        *p *= sub.survive;
    }
    if rates.r_dep == 0.0 {
        return Ok(out);
    }
    if rates.r_np == 0.0 && rates.r_p > 0.0 {
        for (n, p) in out.iter_mut().enumerate() {
            *p += change_term_dark_after(n as u64, rates, t_d);
        }
        return Ok(out);
    }
    let q = integrate_vec(
        |u, buf| pmf_series(sub.mean_at(u), buf),
        0.0,
        sub.u_max,
        dim,
        Tolerance::default(),
    )
    .map_err(|e| diagnose(e, rates, t_d))?;
    for (p, v) in out.iter_mut().zip(q.values) {
        *p += v;
    }
    Ok(out)
}

fn diagnose(err: Error, rates: &ChannelRates, t_d: f64) -> Error {
    match err {
        Error::Numerical(msg) => Error::Numerical(format!(
            "{msg} (R_p={}, R_np={}, R_dep={}, t_d={t_d})",
            rates.r_p, rates.r_np, rates.r_dep
        )),
        other => other,
    }
}

/// `P(n)` for a single `n`, integrated to relative tolerance `1e-9`.
pub fn marginal_pmf(n: u64, rates: &ChannelRates, t_d: f64) -> Result<f64> {
    check_rates(rates, t_d)?;
    let sub = Substitution::new(*rates, t_d);
    let head = sub.survive * pmf(n, sub.full_mean());
    if rates.r_dep == 0.0 {
        return Ok(head);
    }
    if rates.r_np == 0.0 && rates.r_p > 0.0 {
        return Ok(head + change_term_dark_after(n, rates, t_d));
    }
    let tol = Tolerance {
        abs: 1e-300,
        ..Tolerance::default()
    };
    let (tail, _) = integrate(|u| pmf(n, sub.mean_at(u)), 0.0, sub.u_max, tol)
        .map_err(|e| diagnose(e, rates, t_d))?;
    Ok(head + tail)
}

/// Probabilities of fewer than `m` counts and of at least `m` counts, each
/// integrated separately so that small tails keep their relative accuracy.
pub fn marginal_tails(m: u32, rates: &ChannelRates, t_d: f64) -> Result<(f64, f64)> {
    check_rates(rates, t_d)?;
    let sub = Substitution::new(*rates, t_d);
    let mean = sub.full_mean();
    let mut below = sub.survive * lower_tail(m, mean);
    let mut above = sub.survive * upper_tail(m, mean);
    if rates.r_dep > 0.0 {
        let tol = Tolerance {
            abs: 1e-300,
            ..Tolerance::default()
        };
        let (lo, _) = integrate(|u| lower_tail(m, sub.mean_at(u)), 0.0, sub.u_max, tol)
            .map_err(|e| diagnose(e, rates, t_d))?;
        let (hi, _) = integrate(|u| upper_tail(m, sub.mean_at(u)), 0.0, sub.u_max, tol)
            .map_err(|e| diagnose(e, rates, t_d))?;
        below += lo;
        above += hi;
    }
    Ok((below, above))
}

/// `P(n | prepared)`.
pub fn count_distribution(n: u64, params: &DetectionParams, prepared: Prepared) -> Result<f64> {
    params.validate()?;
    marginal_pmf(n, &params.rates(prepared), params.t_d)
}

/// `P(0..=n_max | prepared)`.
pub fn count_distribution_vec(
    params: &DetectionParams,
    prepared: Prepared,
    n_max: usize,
) -> Result<Vec<f64>> {
    params.validate()?;
    marginal_distribution(&params.rates(prepared), params.t_d, n_max)
}

/// Probability of assigning the bright label, `Σ_{n ≥ m} P(n | prepared)`.
pub fn bright_label_prob(params: &DetectionParams, prepared: Prepared) -> Result<f64> {
    params.validate()?;
    Ok(marginal_tails(params.threshold, &params.rates(prepared), params.t_d)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub eps_bright: f64,
    pub eps_dark: f64,
    pub infidelity: f64,
    pub fidelity: f64,
}

impl ErrorReport {
    pub fn from_errors(eps_bright: f64, eps_dark: f64) -> Result<Self> {
        for (name, v) in [("eps_bright", eps_bright), ("eps_dark", eps_dark)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::domain(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        let infidelity = 0.5 * (eps_bright + eps_dark);
        Ok(Self {
            eps_bright,
            eps_dark,
            infidelity,
            fidelity: 1.0 - infidelity,
        })
    }
}

pub fn error_report(params: &DetectionParams) -> Result<ErrorReport> {
    params.validate()?;
    let m = params.threshold;
    let (eps_bright, _) = marginal_tails(m, &params.rates(Prepared::Bright), params.t_d)?;
    let (_, eps_dark) = marginal_tails(m, &params.rates(Prepared::Dark), params.t_d)?;
    ErrorReport::from_errors(eps_bright.clamp(0.0, 1.0), eps_dark.clamp(0.0, 1.0))
}

/// Threshold in `range` minimizing the infidelity; ties go to the smaller one.
pub fn optimal_threshold(
    params: &DetectionParams,
    range: std::ops::RangeInclusive<u32>,
) -> Result<(u32, ErrorReport)> {
    let mut best: Option<(u32, ErrorReport)> = None;
    for m in range.clone() {
        let report = error_report(&params.with_threshold(m))?;
        if best.is_none_or(|(_, b)| report.infidelity < b.infidelity) {
            best = Some((m, report));
        }
    }
    best.ok_or_else(|| Error::domain(format!("empty threshold range {range:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeOptimum {
    pub t_d: f64,
    pub report: ErrorReport,
    /// Set when the coarse scan was not unimodal and a dense grid was used.
    pub grid_fallback: bool,
}

const COARSE_POINTS: usize = 65;
const FALLBACK_POINTS: usize = 4001;

/// Detection time in `[t_lo, t_hi]` minimizing the infidelity at the
/// configured threshold.
///
/// A coarse scan brackets the minimum; if the scan is unimodal the bracket is
/// refined by golden-section search, otherwise a dense grid is used and the
/// result flagged.
pub fn optimal_time(params: &DetectionParams, t_lo: f64, t_hi: f64) -> Result<TimeOptimum> {
    if !(t_lo > 0.0 && t_hi > t_lo) || !t_hi.is_finite() {
        return Err(Error::domain(format!(
            "invalid time range [{t_lo}, {t_hi}]"
        )));
    }
    let eval = |t: f64| error_report(&params.with_time(t));
    let grid = |k: usize, n: usize| t_lo + (t_hi - t_lo) * k as f64 / (n - 1) as f64;

    let coarse = (0..COARSE_POINTS)
        .map(|k| eval(grid(k, COARSE_POINTS)).map(|r| r.infidelity))
        .collect::<Result<Vec<_>>>()?;
    let (imin, _) =
        coarse.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc },
        );

    let slack = 1e-15;
    let unimodal = coarse[..=imin].windows(2).all(|w| w[1] <= w[0] + slack)
        && coarse[imin..].windows(2).all(|w| w[1] + slack >= w[0]);

    if !unimodal {
        let mut best = (t_lo, eval(t_lo)?);
        for k in 1..FALLBACK_POINTS {
            let t = grid(k, FALLBACK_POINTS);
            let r = eval(t)?;
            if r.infidelity < best.1.infidelity {
                best = (t, r);
            }
        }
        return Ok(TimeOptimum {
            t_d: best.0,
            report: best.1,
            grid_fallback: true,
        });
    }

    if imin == 0 || imin == COARSE_POINTS - 1 {
        let t = grid(imin, COARSE_POINTS);
        // Only trust a boundary optimum if the neighbouring cell agrees.
        let (a, b) = if imin == 0 {
            (t_lo, grid(1, COARSE_POINTS))
        } else {
            (grid(COARSE_POINTS - 2, COARSE_POINTS), t_hi)
        };
        let inner = golden_section(|x| eval(x).map(|r| r.infidelity), a, b)?;
        let at_edge = eval(t)?;
        let at_inner = eval(inner)?;
        let (t, report) = if at_inner.infidelity < at_edge.infidelity {
            (inner, at_inner)
        } else {
            (t, at_edge)
        };
        return Ok(TimeOptimum {
            t_d: t,
            report,
            grid_fallback: false,
        });
    }

    let t = golden_section(
        |x| eval(x).map(|r| r.infidelity),
        grid(imin - 1, COARSE_POINTS),
        grid(imin + 1, COARSE_POINTS),
    )?;
    Ok(TimeOptimum {
        t_d: t,
        report: eval(t)?,
        grid_fallback: false,
    })
}

/// Golden-section minimum of a unimodal function on `[a, b]`.
pub(crate) fn golden_section<F>(mut f: F, mut a: f64, mut b: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        if (b - a).abs() <= 1e-9 * scale {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Depump probability per collected photon implied by a bright error with
/// threshold `m`: `1 − (1 − ε)^{1/m}`.
pub fn r_from_eps_bright(eps_bright: f64, threshold: u32) -> Result<f64> {
    if !(0.0..1.0).contains(&eps_bright) {
        return Err(Error::domain(format!(
            "eps_bright must be in [0, 1), got {eps_bright}"
        )));
    }
    if threshold == 0 {
        return Err(Error::domain("threshold must be >= 1"));
    }
    Ok(1.0 - (1.0 - eps_bright).powf(1.0 / f64::from(threshold)))
}
