use std::path::Path;

use serde::Serialize;
use tweezer_readout::counts::{
    count_distribution_vec, error_report, optimal_threshold, optimal_time, ErrorReport, Prepared,
    TimeOptimum,
};
use tweezer_readout::depump::DepumpBudget;
use tweezer_readout::inference::{fit_depump, histogram_residuals, CountHistogram, FitOptions};
use tweezer_readout::montecarlo::{ShotRecord, WaitTimeHistogram};
use tweezer_readout::scenario::ScenarioConfig;

use crate::output::{pick, write_file, Cell, Sink, Table};
use crate::Format;

pub fn rates(cfg: &ScenarioConfig, format: Option<Format>, out: &Sink) -> anyhow::Result<()> {
    let budget = cfg.budget()?;
    match pick(format, Format::Json, &[Format::Json, Format::Csv], "rates")? {
        Format::Json => out.json(&budget),
        Format::Csv => {
            let mut t = Table::new(&["channel", "rate_per_s", "prob_per_scatter", "r_normalized"])?;
            t.row(&[
                Cell::S("trap".into()),
                Cell::F(budget.trap_rate),
                Cell::Empty,
                Cell::F(budget.r_trap),
            ])?;
            t.row(&[
                Cell::S("probe".into()),
                Cell::F(budget.probe_rate),
                Cell::Empty,
                Cell::F(budget.r_probe),
            ])?;
            t.row(&[
                Cell::S("raman".into()),
                Cell::Empty,
                Cell::F(budget.raman_prob_per_scatter),
                Cell::F(budget.r_raman),
            ])?;
            t.row(&[
                Cell::S("total".into()),
                Cell::Empty,
                Cell::Empty,
                Cell::F(budget.total_r),
            ])?;
            out.write(&t.finish()?)
        }
    }
}

#[derive(Serialize)]
struct DistributionRow {
    n: u64,
    p_bright: f64,
    p_dark: f64,
    cdf_bright: f64,
    cdf_dark: f64,
}

pub fn distribution(
    cfg: &ScenarioConfig,
    n_max: Option<usize>,
    format: Option<Format>,
    out: &Sink,
) -> anyhow::Result<()> {
    let format = pick(
        format,
        Format::Csv,
        &[Format::Json, Format::Csv],
        "distribution",
    )?;
    let n_max = n_max.unwrap_or_else(|| cfg.detection.count_cutoff());
    if n_max > 1_000_000 {
        return Err(tweezer_readout::Error::Validation {
            path: "n_max".into(),
            message: "more than 1e6 rows".into(),
        }
        .into());
    }
    let bright = count_distribution_vec(&cfg.detection, Prepared::Bright, n_max)?;
    let dark = count_distribution_vec(&cfg.detection, Prepared::Dark, n_max)?;
    let (mut cb, mut cd) = (0.0, 0.0);
    let rows: Vec<DistributionRow> = bright
        .iter()
        .zip(&dark)
        .enumerate()
        .map(|(n, (&pb, &pd))| {
            cb += pb;
            cd += pd;
            DistributionRow {
                n: n as u64,
                p_bright: pb,
                p_dark: pd,
                cdf_bright: cb,
                cdf_dark: cd,
            }
        })
        .collect();
    match format {
        Format::Json => out.json(&rows),
        Format::Csv => {
            let mut t = Table::new(&["n", "p_bright", "p_dark", "cdf_bright", "cdf_dark"])?;
            for r in &rows {
                t.row(&[
                    Cell::U(r.n),
                    Cell::F(r.p_bright),
                    Cell::F(r.p_dark),
                    Cell::F(r.cdf_bright),
                    Cell::F(r.cdf_dark),
                ])?;
            }
            out.write(&t.finish()?)
        }
    }
}

pub fn simulate(
    cfg: &ScenarioConfig,
    shots: u64,
    seed: u64,
    records: Option<&Path>,
    histograms: Option<&Path>,
    format: Option<Format>,
    out: &Sink,
) -> anyhow::Result<()> {
    pick(format, Format::Json, &[Format::Json], "simulate")?;
    let run = cfg.simulate(shots, seed, records.is_some())?;
    if let Some(path) = records {
        write_file(path, &records_csv(&run.records_bright, &run.records_dark)?)?;
    }
    if let Some(dir) = histograms {
        std::fs::create_dir_all(dir)?;
        let empty = Vec::new();
        let counts_b = run.bright.as_ref().map_or(&empty, |s| &s.count_histogram);
        let counts_d = run.dark.as_ref().map_or(&empty, |s| &s.count_histogram);
        let mut t = Table::new(&["n", "bright", "dark"])?;
        for n in 0..counts_b.len().max(counts_d.len()) {
            let get = |h: &Vec<u64>| h.get(n).copied().unwrap_or(0);
            t.row(&[
                Cell::U(n as u64),
                Cell::U(get(counts_b)),
                Cell::U(get(counts_d)),
            ])?;
        }
        write_file(&dir.join("counts.csv"), &t.finish()?)?;
        write_file(
            &dir.join("wait_times.csv"),
            &wait_csv(run.wait_time_bright.as_ref(), run.wait_time_dark.as_ref())?,
        )?;
    }
    #[derive(Serialize)]
    struct SimulateOutput<'a> {
        config: &'a ScenarioConfig,
        run: &'a tweezer_readout::scenario::ReadoutRun,
    }
    out.json(&SimulateOutput {
        config: cfg,
        run: &run,
    })
}

fn records_csv(bright: &[ShotRecord], dark: &[ShotRecord]) -> anyhow::Result<String> {
    let mut t = Table::new(&[
        "prepared",
        "index",
        "collected_counts",
        "pulses_used",
        "wait_time",
        "scattered_photons",
        "depump_time",
        "final_energy_temp",
        "lost",
        "label",
    ])?;
    for (prepared, records) in [(Prepared::Bright, bright), (Prepared::Dark, dark)] {
        for (i, r) in records.iter().enumerate() {
            t.row(&[
                Cell::S(prepared.to_string()),
                Cell::U(i as u64),
                Cell::U(u64::from(r.collected_counts)),
                Cell::U(u64::from(r.pulses_used)),
                Cell::F(r.wait_time),
                Cell::U(r.scattered_photons),
                r.depump_time.map_or(Cell::Empty, Cell::F),
                Cell::F(r.final_energy_temp),
                Cell::S(r.lost.to_string()),
                Cell::S(r.label.to_string()),
            ])?;
        }
    }
    t.finish()
}

fn wait_csv(
    bright: Option<&WaitTimeHistogram>,
    dark: Option<&WaitTimeHistogram>,
) -> anyhow::Result<String> {
    let mut t = Table::new(&["pulses", "wait_time", "bright", "dark", "erlang"])?;
    let Some(reference) = bright.or(dark) else {
        return t.finish();
    };
    for (k, bin) in reference.bins.iter().enumerate() {
        let frac =
            |h: Option<&WaitTimeHistogram>| h.map_or(Cell::Empty, |h| Cell::F(h.bins[k].empirical));
        t.row(&[
            Cell::U(u64::from(bin.pulses)),
            Cell::F(bin.wait_time),
            frac(bright),
            frac(dark),
            Cell::F(bin.erlang),
        ])?;
    }
    t.finish()
}

pub fn fit(
    cfg: &ScenarioConfig,
    histogram: &Path,
    fix_rate: bool,
    residuals: Option<&Path>,
    format: Option<Format>,
    out: &Sink,
) -> anyhow::Result<()> {
    pick(format, Format::Json, &[Format::Json], "fit")?;
    let hist = CountHistogram::read(histogram)?;
    let options = FitOptions {
        fix_r_p: fix_rate,
        ..FitOptions::default()
    };
    let result = fit_depump(&hist, &cfg.detection, cfg.detection.ce, options)?;
    if let Some(path) = residuals {
        let mut params = cfg.detection;
        params.r_bright = result.fitted_rates.r_p - result.fitted_rates.r_np;
        params.r_dep_bright = result.r_dep;
        let bins = histogram_residuals(&hist, &params)?;
        let mut t = Table::new(&[
            "n",
            "observed",
            "residual",
            "residual_low",
            "residual_high",
            "model",
            "model_residual",
        ])?;
        for b in bins {
            t.row(&[
                Cell::U(b.n),
                Cell::F(b.observed),
                Cell::F(b.residual),
                Cell::F(b.residual_interval.low),
                Cell::F(b.residual_interval.high),
                Cell::F(b.model),
                Cell::F(b.model_residual),
            ])?;
        }
        write_file(path, &t.finish()?)?;
    }
    out.json(&result)
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a ScenarioConfig,
    budget: DepumpBudget,
    errors: ErrorReport,
    depump_free_errors: ErrorReport,
    optimal_threshold: u32,
    optimal_threshold_errors: ErrorReport,
    optimal_time: TimeOptimum,
    depump_free_optimal_time: TimeOptimum,
}

/// Detection-time range scanned by `report`.
const TIME_RANGE: (f64, f64) = (50e-6, 2e-3);

pub fn report(cfg: &ScenarioConfig, format: Option<Format>, out: &Sink) -> anyhow::Result<()> {
    pick(format, Format::Json, &[Format::Json], "report")?;
    let d = &cfg.detection;
    let (m, m_errors) = optimal_threshold(d, 1..=6)?;
    out.json(&Report {
        config: cfg,
        budget: cfg.budget()?,
        errors: error_report(d)?,
        depump_free_errors: error_report(&d.depump_free())?,
        optimal_threshold: m,
        optimal_threshold_errors: m_errors,
        optimal_time: optimal_time(d, TIME_RANGE.0, TIME_RANGE.1)?,
        depump_free_optimal_time: optimal_time(&d.depump_free(), TIME_RANGE.0, TIME_RANGE.1)?,
    })
}

pub fn config(cfg: &ScenarioConfig, format: Option<Format>, out: &Sink) -> anyhow::Result<()> {
    pick(format, Format::Json, &[Format::Json], "config")?;
    out.json(cfg)
}
