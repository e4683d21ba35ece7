//! Grid sweeps over detection parameters.

use rayon::prelude::*;
use tweezer_readout::counts::{error_report, Prepared};
use tweezer_readout::montecarlo::{detection_loss, run_summary};
use tweezer_readout::scenario::ScenarioConfig;
use tweezer_readout::Error;

use crate::output::{pick, Cell, Sink, Table};
use crate::Format;

/// Largest grid a single sweep may evaluate.
const MAX_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    TD,
    Threshold,
    DepthMhz,
    Background,
}

impl Param {
    const ALL: [Param; 4] = [
        Param::TD,
        Param::Threshold,
        Param::DepthMhz,
        Param::Background,
    ];

    fn name(self) -> &'static str {
        match self {
            Param::TD => "t_d",
            Param::Threshold => "threshold",
            Param::DepthMhz => "depth_mhz",
            Param::Background => "background",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub param: Param,
    pub values: Vec<f64>,
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        path: path.into(),
        message: message.into(),
    }
}

fn number(s: &str, spec: &str) -> Result<f64, Error> {
    let x: f64 = s
        .trim()
        .parse()
        .map_err(|_| invalid("param", format!("{spec:?}: {s:?} is not a number")))?;
    if !x.is_finite() {
        return Err(invalid("param", format!("{spec:?}: {s:?} is not finite")));
    }
    Ok(x)
}

/// Parse `name=start:stop:count` (inclusive, evenly spaced) or `name=v1,v2,...`.
pub fn parse_axis(spec: &str) -> Result<Axis, Error> {
    let (name, body) = spec
        .split_once('=')
        .ok_or_else(|| invalid("param", format!("{spec:?}: expected name=values")))?;
    let param = Param::parse(name.trim()).ok_or_else(|| {
        let known: Vec<_> = Param::ALL.iter().map(|p| p.name()).collect();
        invalid(
            "param",
            format!("unknown parameter {name:?}; known: {}", known.join(", ")),
        )
    })?;
    let values = if body.contains(':') {
        let parts: Vec<&str> = body.split(':').collect();
        let [a, b, n] = parts[..] else {
            return Err(invalid(
                "param",
                format!("{spec:?}: range must be start:stop:count"),
            ));
        };
        let (a, b) = (number(a, spec)?, number(b, spec)?);
        let n: usize = n.trim().parse().map_err(|_| {
            invalid(
                "param",
                format!("{spec:?}: count must be a positive integer"),
            )
        })?;
        if n == 0 || n > MAX_POINTS {
            return Err(invalid(
                "param",
                format!("{spec:?}: count must be in 1..={MAX_POINTS}"),
            ));
        }
        if n == 1 {
            if a != b {
                return Err(invalid(
                    "param",
                    format!("{spec:?}: a single point needs start == stop"),
                ));
            }
            vec![a]
        } else {
            (0..n)
                .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                .collect()
        }
    } else {
        body.split(',')
            .map(|s| number(s, spec))
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() {
        return Err(invalid("param", format!("{spec:?}: no values")));
    }
    if param == Param::Threshold {
        if let Some(v) = values
            .iter()
            .find(|v| v.fract() != 0.0 || **v < 1.0 || **v > u32::MAX as f64)
        {
            return Err(invalid(
                "param",
                format!("threshold {v} is not a positive integer"),
            ));
        }
    }
    Ok(Axis { param, values })
}

pub fn parse_axes(specs: &[String]) -> Result<Vec<Axis>, Error> {
    if specs.is_empty() || specs.len() > 2 {
        return Err(invalid("param", "give one or two --param axes"));
    }
    let axes = specs
        .iter()
        .map(|s| parse_axis(s))
        .collect::<Result<Vec<_>, _>>()?;
    if axes.len() == 2 && axes[0].param == axes[1].param {
        return Err(invalid(
            "param",
            format!("{} given twice", axes[0].param.name()),
        ));
    }
    let points = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.values.len()));
    if points.is_none_or(|n| n > MAX_POINTS) {
        return Err(invalid(
            "param",
            format!("grid exceeds {MAX_POINTS} points"),
        ));
    }
    Ok(axes)
}

/// Config at one grid point.
pub fn apply(cfg: &ScenarioConfig, param: Param, value: f64) -> Result<ScenarioConfig, Error> {
    let mut out = match param {
        Param::DepthMhz => cfg.with_trap(cfg.trap.with_depth_freq(value * 1e6))?,
        _ => cfg.clone(),
    };
    match param {
        Param::TD => out.detection.t_d = value,
        Param::Threshold => {
            out.detection.threshold = value as u32;
            out.protocol.threshold = value as u32;
        }
        Param::Background => out.detection.r_background = value,
        Param::DepthMhz => {}
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub t_d: f64,
    pub threshold: u32,
    pub depth_mhz: f64,
    pub background: f64,
    pub eps_bright: f64,
    pub eps_dark: f64,
    pub infidelity: f64,
    pub loss: Option<(f64, f64)>,
}

fn evaluate(cfg: &ScenarioConfig, loss_shots: Option<u64>, seed: u64) -> Result<Row, Error> {
    let report = error_report(&cfg.detection)?;
    let loss = match loss_shots {
        None => None,
        Some(n) => {
            let run = |p| run_summary(&cfg.detection, &cfg.protocol, &cfg.heating, p, n, seed);
            let (b, d) = (run(Prepared::Bright)?, run(Prepared::Dark)?);
            let est = detection_loss(b.lost, b.n_shots, d.lost, d.n_shots)?;
            Some((est.loss, est.std_error))
        }
    };
    Ok(Row {
        t_d: cfg.detection.t_d,
        threshold: cfg.detection.threshold,
        depth_mhz: cfg.trap.depth_freq / 1e6,
        background: cfg.detection.r_background,
        eps_bright: report.eps_bright,
        eps_dark: report.eps_dark,
        infidelity: report.infidelity,
        loss,
    })
}

/// Every grid point in row-major order; the first axis varies slowest.
pub fn grid(axes: &[Axis]) -> Vec<Vec<(Param, f64)>> {
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push((axis.param, v));
                    q
                })
            })
            .collect();
    }
    points
}

pub fn sweep_rows(
    cfg: &ScenarioConfig,
    axes: &[Axis],
    loss_shots: Option<u64>,
    serial: bool,
    seed: u64,
) -> Result<Vec<Row>, Error> {
    let point = |p: &Vec<(Param, f64)>| -> Result<Row, Error> {
        let mut c = cfg.clone();
        for &(param, v) in p {
            c = apply(&c, param, v)?;
        }
        evaluate(&c, loss_shots, seed)
    };
    let points = grid(axes);
    if serial {
        points.iter().map(point).collect()
    } else {
        points.par_iter().map(point).collect()
    }
}

pub fn run(
    cfg: &ScenarioConfig,
    params: &[String],
    loss_shots: Option<u64>,
    serial: bool,
    seed: u64,
    format: Option<Format>,
    out: &Sink,
) -> anyhow::Result<()> {
    pick(format, Format::Csv, &[Format::Csv], "sweep")?;
    if loss_shots == Some(0) {
        return Err(invalid("loss_shots", "must be >= 1").into());
    }
    let axes = parse_axes(params)?;
    let rows = sweep_rows(cfg, &axes, loss_shots, serial, seed)?;
    let mut header = vec![
        "t_d",
        "threshold",
        "depth_mhz",
        "background",
        "eps_bright",
        "eps_dark",
        "infidelity",
    ];
    if loss_shots.is_some() {
        header.extend(["loss", "loss_std_error"]);
    }
    let mut t = Table::new(&header)?;
    for r in rows {
        let mut cells = vec![
            Cell::F(r.t_d),
            Cell::U(u64::from(r.threshold)),
            Cell::F(r.depth_mhz),
            Cell::F(r.background),
            Cell::F(r.eps_bright),
            Cell::F(r.eps_dark),
            Cell::F(r.infidelity),
        ];
        if let Some((loss, se)) = r.loss {
            cells.extend([Cell::F(loss), Cell::F(se)]);
        }
        t.row(&cells)?;
    }
    out.write(&t.finish()?)
}
