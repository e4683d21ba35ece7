//! Binomial intervals, count histograms, and maximum-likelihood fits of the
//! single-change count model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::counts::{marginal_distribution, poisson_pmf, ChannelRates, DetectionParams, Prepared};
use crate::error::{Error, Result};

/// z for a central 68.27% interval.
pub const ONE_SIGMA_Z: f64 = 1.0;
/// z for a central 95% interval.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> Result<Interval> {
    if trials == 0 || successes > trials {
        return Err(Error::domain(format!(
            "Wilson interval needs 0 <= successes <= trials and trials >= 1, got {successes}/{trials}"
        )));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::domain(format!("z must be positive, got {z}")));
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if successes == 0 {
        0.0
    } else {
        (center - half).clamp(0.0, p)
    };
    let high = if successes == trials {
        1.0
    } else {
        (center + half).clamp(p, 1.0)
    };
    Ok(Interval { low, high })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountHistogram {
    /// `bins[n]` = shots with `n` counts.
    pub bins: Vec<u64>,
    pub n_shots: u64,
    pub prepared: Prepared,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// JSON sidecar stored next to a histogram CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSidecar {
    pub n_shots: u64,
    pub prepared: Prepared,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl CountHistogram {
    pub fn from_bins(bins: Vec<u64>, prepared: Prepared) -> Self {
        let n_shots = bins.iter().sum();
        Self {
            bins,
            n_shots,
            prepared,
            metadata: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.bins.iter().sum();
        if total != self.n_shots {
            return Err(Error::invalid(
                "histogram.n_shots",
                format!("tallies sum to {total}, sidecar says {}", self.n_shots),
            ));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        let s: f64 = self
            .bins
            .iter()
            .enumerate()
            .map(|(n, &c)| n as f64 * c as f64)
            .sum();
        s / self.n_shots as f64
    }

    /// Parse `n,count` CSV text.
    pub fn parse_csv(text: &str, prepared: Prepared) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header_err = |message: String| Error::Parse { line: 1, message };
        let headers = reader.headers().map_err(|e| header_err(e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["n", "count"] {
            return Err(header_err(format!(
                "expected header `n,count`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut bins: Vec<u64> = Vec::new();
        let mut seen: Vec<bool> = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            let parse_err = |message: String| Error::Parse { line, message };
            if row.len() != 2 {
                return Err(parse_err(format!(
                    "expected two fields, found {}",
                    row.len()
                )));
            }
            let n: usize = row[0]
                .parse()
                .map_err(|e| parse_err(format!("bad count index `{}`: {e}", &row[0])))?;
            let c: u64 = row[1]
                .parse()
                .map_err(|e| parse_err(format!("bad tally `{}`: {e}", &row[1])))?;
            if n > 1_000_000 {
                return Err(parse_err(format!("count index {n} is out of range")));
            }
            if bins.len() <= n {
                bins.resize(n + 1, 0);
                seen.resize(n + 1, false);
            }
            if seen[n] {
                return Err(parse_err(format!("duplicate row for n = {n}")));
            }
            seen[n] = true;
            bins[n] = c;
        }
        Ok(Self::from_bins(bins, prepared))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,count\n");
        for (n, c) in self.bins.iter().enumerate() {
            out.push_str(&format!("{n},{c}\n"));
        }
        out
    }

    pub fn sidecar(&self) -> HistogramSidecar {
        HistogramSidecar {
            n_shots: self.n_shots,
            prepared: self.prepared,
            label: self.metadata.get("label").cloned(),
            metadata: self
                .metadata
                .iter()
                .filter(|(k, _)| *k != "label")
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// Read a histogram CSV and, if present, its sidecar.
    pub fn read(csv: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(csv)?;
        let side_path = Self::sidecar_path(csv);
        let sidecar = if side_path.exists() && side_path != csv {
            Some(serde_json::from_str::<HistogramSidecar>(
                &std::fs::read_to_string(&side_path)?,
            )?)
        } else {
            None
        };
        let mut hist = Self::parse_csv(
            &text,
            sidecar.as_ref().map_or(Prepared::Bright, |s| s.prepared),
        )?;
        if let Some(s) = sidecar {
            hist.n_shots = s.n_shots;
            hist.metadata = s.metadata;
            if let Some(label) = s.label {
                hist.metadata.insert("label".into(), label);
            }
        }
        hist.validate()?;
        Ok(hist)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedRates {
    /// Collection rate before the change, counts/s.
    pub r_p: f64,
    /// Collection rate after the change, counts/s.
    pub r_np: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub depump_prob_per_scatter: f64,
    /// 1σ profile-likelihood interval.
    pub depump_prob_interval: Interval,
    /// s⁻¹
    pub r_dep: f64,
    pub fitted_rates: FittedRates,
    pub log_likelihood: f64,
    pub converged: bool,
    pub r_p_fixed: bool,
    pub n_shots: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Hold `R_p` at `r_bright + r_background` instead of floating it.
    pub fix_r_p: bool,
    /// Relative convergence tolerance of the outer search.
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fix_r_p: false,
            rel_tol: 1e-4,
        }
    }
}

struct Likelihood<'a> {
    hist: &'a CountHistogram,
    t_d: f64,
    r_np: f64,
    ce: f64,
    n_max: usize,
}

impl Likelihood<'_> {
    fn eval(&self, r_p: f64, p_scatter: f64) -> Result<f64> {
        let rates = ChannelRates {
            r_p,
            r_np: self.r_np,
            r_dep: p_scatter * r_p / self.ce,
        };
        let dist = marginal_distribution(&rates, self.t_d, self.n_max)?;
        Ok(self
            .hist
            .bins
            .iter()
            .zip(&dist)
            .filter(|(&c, _)| c > 0)
            .map(|(&c, &p)| c as f64 * p.max(1e-300).ln())
            .sum())
    }
}

/// Golden-section maximum on `[a, b]`; also reports the best point.
fn golden_max<F>(mut f: F, a: f64, b: f64, rel_tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let neg = |x: f64, f: &mut F| f(x).map(|v| -v);
    let mut f_neg = |x: f64| neg(x, &mut f);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f_neg(c)?;
    let mut fd = f_neg(d)?;
    while (b - a) > rel_tol * scale {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f_neg(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f_neg(d)?;
        }
    }
    let (x, v) = if fc <= fd { (c, -fc) } else { (d, -fd) };
    Ok((x, v))
}

/// Fit the per-scatter depump probability to a bright-prepared histogram.
///
/// `R_np` is held at the background rate of `params_init`. The detection
/// time comes from `params_init.t_d`. The interval is where the profile
/// log-likelihood falls 1/2 below its maximum.
pub fn fit_depump(
    hist: &CountHistogram,
    params_init: &DetectionParams,
    ce: f64,
    options: FitOptions,
) -> Result<FitResult> {
    if hist.n_shots == 0 || hist.bins.iter().all(|&c| c == 0) {
        return Err(Error::domain("cannot fit an empty histogram"));
    }
    hist.validate()?;
    if hist.prepared != Prepared::Bright {
        return Err(Error::domain(
            "depump fits need a bright-prepared histogram",
        ));
    }
    if !(ce > 0.0 && ce <= 1.0) {
        return Err(Error::invalid("ce", format!("must be in (0, 1], got {ce}")));
    }
    params_init.validate()?;
    if hist.bins.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Numerical(format!(
            "degenerate likelihood: all {} shots in a single bin",
            hist.n_shots
        )));
    }

    let lik = Likelihood {
        hist,
        t_d: params_init.t_d,
        r_np: params_init.r_background,
        ce,
        n_max: hist.bins.len() - 1,
    };
    let r_p_nominal = params_init.r_bright + params_init.r_background;
    let r_p_data = (hist.mean() / params_init.t_d).max(params_init.r_background * 1.01 + 1e-9);
    let (rp_lo, rp_hi) = (0.8 * r_p_data, 1.8 * r_p_data);

    // Profile over R_p; returns (ℓ, R_p, R_p hit the bracket edge).
    let profile = |p: f64| -> Result<(f64, f64, bool)> {
        if options.fix_r_p {
            return Ok((lik.eval(r_p_nominal, p)?, r_p_nominal, false));
        }
        let (rp, ll) = golden_max(|rp| lik.eval(rp, p), rp_lo, rp_hi, 1e-8)?;
        let edge = (rp - rp_lo) < 1e-6 * rp_hi || (rp_hi - rp) < 1e-6 * rp_hi;
        Ok((ll, rp, edge))
    };

    // Per-scatter probability range: up to five depump events per window.
    let rp_ref = if options.fix_r_p {
        r_p_nominal
    } else {
        r_p_data
    };
    let p_max = 5.0 * ce / (rp_ref * params_init.t_d);
    const GRID: usize = 33;
    let grid: Vec<f64> = (0..GRID)
        .map(|k| p_max * (k as f64 / (GRID - 1) as f64).powi(2))
        .collect();
    let mut values = Vec::with_capacity(GRID);
    for &p in &grid {
        values.push(profile(p)?.0);
    }
    let imax = values
        .iter()
        .enumerate()
        .fold(0, |best, (k, &v)| if v > values[best] { k } else { best });
    let lo = grid[imax.saturating_sub(1)];
    let hi = grid[(imax + 1).min(GRID - 1)];
    let (p_hat, _) = golden_max(|p| profile(p).map(|t| t.0), lo, hi, options.rel_tol * 1e-2)?;
    // The maximum may sit on the physical boundary p = 0.
    let (p_hat, (ll_max, rp_hat, rp_edge)) = {
        let inner = profile(p_hat)?;
        let at_zero = profile(0.0)?;
        if imax == 0 && at_zero.0 >= inner.0 {
            (0.0, at_zero)
        } else {
            (p_hat, inner)
        }
    };
    let converged = imax + 1 < GRID && !rp_edge;

    let target = ll_max - 0.5;
    let tol = options.rel_tol * p_max;
    let bisect = |mut inside: f64, mut outside: f64| -> Result<f64> {
        while (outside - inside).abs() > tol {
            let mid = 0.5 * (inside + outside);
            if profile(mid)?.0 >= target {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        Ok(0.5 * (inside + outside))
    };
    let low = if p_hat == 0.0 || profile(0.0)?.0 >= target {
        0.0
    } else {
        bisect(p_hat, 0.0)?
    };
    let mut step = (p_hat.max(p_max / 100.0)) * 0.5;
    let mut outer = p_hat + step;
    let mut expansions = 0;
    while profile(outer)?.0 >= target {
        step *= 2.0;
        outer = p_hat + step;
        expansions += 1;
        if expansions > 40 {
            return Err(Error::Numerical(
                "profile likelihood does not fall off above the estimate".into(),
            ));
        }
    }
    let high = bisect(p_hat, outer)?;

    Ok(FitResult {
        depump_prob_per_scatter: p_hat,
        depump_prob_interval: Interval {
            low: low.min(p_hat),
            high: high.max(p_hat),
        },
        r_dep: p_hat * rp_hat / ce,
        fitted_rates: FittedRates {
            r_p: rp_hat,
            r_np: lik.r_np,
        },
        log_likelihood: ll_max,
        converged,
        r_p_fixed: options.fix_r_p,
        n_shots: hist.n_shots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualBin {
    pub n: u64,
    pub observed: f64,
    /// Wilson 1σ interval on the observed fraction, shifted by the Poisson
    /// reference.
    pub residual_interval: Interval,
    /// Observed fraction minus the Poisson with the data's mean.
    pub residual: f64,
    pub model: f64,
    /// Model minus the Poisson with the model's mean.
    pub model_residual: f64,
}

/// Departure of the data and of the model from a same-mean Poisson.
pub fn histogram_residuals(
    hist: &CountHistogram,
    params: &DetectionParams,
) -> Result<Vec<ResidualBin>> {
    hist.validate()?;
    if hist.n_shots == 0 {
        return Err(Error::domain("empty histogram"));
    }
    let n_max = hist.bins.len().max(params.count_cutoff());
    let model = marginal_distribution(&params.rates(hist.prepared), params.t_d, n_max)?;
    let model_mean: f64 = model.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
    let data_mean = hist.mean();
    let mut out = Vec::with_capacity(hist.bins.len());
    for (n, &c) in hist.bins.iter().enumerate() {
        let observed = c as f64 / hist.n_shots as f64;
        let reference = poisson_pmf(n as u64, data_mean)?;
        let w = wilson_interval(c, hist.n_shots, ONE_SIGMA_Z)?;
        out.push(ResidualBin {
            n: n as u64,
            observed,
            residual_interval: Interval {
                low: w.low - reference,
                high: w.high - reference,
            },
            residual: observed - reference,
            model: model[n],
            model_residual: model[n] - poisson_pmf(n as u64, model_mean)?,
        });
    }
    Ok(out)
}
