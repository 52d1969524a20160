use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::monitor::threshold_horizon;
use super::svg::{BarChart, Line, LinePlot};
use super::{GenerationMode, MetricsRecord, Strategy, ThresholdConfig};
use crate::error::{Error, Result};
use crate::nets::ModelKind;

pub const METRICS_HEADER: &str =
    "model,strategy,mode,step,max_err_T,max_err_ux,max_err_uy,res_mass,res_mom,res_heat";
pub const SUMMARY_HEADER: &str = "model,strategy,mode,max_err_T,max_err_ux,max_err_uy,res_mass,res_mom,res_heat,horizon_T,horizon_ux,horizon_uy";

/// Per-step metrics of one model / strategy / mode cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSeries {
    pub model: ModelKind,
    pub strategy: Strategy,
    pub mode: GenerationMode,
    pub records: Vec<MetricsRecord>,
}

impl EvaluationSeries {
    /// Column-wise maximum over the rollout.
    pub fn max_over_rollout(&self) -> MetricsRecord {
        let mut m = MetricsRecord {
            step: self.records.last().map_or(0, |r| r.step),
            max_err_t: 0.0,
            max_err_ux: 0.0,
            max_err_uy: 0.0,
            res_mass: 0.0,
            res_mom: 0.0,
            res_heat: 0.0,
        };
        for r in &self.records {
            m.max_err_t = m.max_err_t.max(r.max_err_t);
            m.max_err_ux = m.max_err_ux.max(r.max_err_ux);
            m.max_err_uy = m.max_err_uy.max(r.max_err_uy);
            m.res_mass = m.res_mass.max(r.res_mass);
            m.res_mom = m.res_mom.max(r.res_mom);
            m.res_heat = m.res_heat.max(r.res_heat);
        }
        m
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_metrics_csv(path: &Path, series: &[EvaluationSeries]) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for s in series {
        for r in &s.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.model, s.strategy, s.mode, r.step, r.max_err_t, r.max_err_ux, r.max_err_uy, r.res_mass, r.res_mom, r.res_heat
            );
        }
    }
    write_file(path, &out)
}

fn horizon_cell(h: Option<usize>) -> String {
    h.map_or_else(|| "none".to_string(), |s| s.to_string())
}

/// One row per series: maxima over the rollout and threshold horizons.
pub fn write_summary_csv(path: &Path, series: &[EvaluationSeries], tau: &ThresholdConfig) -> Result<()> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in series {
        let m = s.max_over_rollout();
        let h = threshold_horizon(&s.records, tau);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.model,
            s.strategy,
            s.mode,
            m.max_err_t,
            m.max_err_ux,
            m.max_err_uy,
            m.res_mass,
            m.res_mom,
            m.res_heat,
            horizon_cell(h.t),
            horizon_cell(h.u_x),
            horizon_cell(h.u_y)
        );
    }
    write_file(path, &out)
}

/// Parses a metrics CSV, grouping consecutive rows of the same cell.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EvaluationSeries>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format(path, "missing or unexpected metrics header"));
    }
    let mut series: Vec<EvaluationSeries> = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", n + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(bad("expected 10 columns"));
        }
        let model: ModelKind = cols[0].parse().map_err(|_| bad("unknown model"))?;
        let strategy: Strategy = cols[1].parse().map_err(|_| bad("unknown strategy"))?;
        let mode: GenerationMode = cols[2].parse().map_err(|_| bad("unknown mode"))?;
        let step: usize = cols[3].parse().map_err(|_| bad("bad step"))?;
        let mut v = [0.0; 6];
        for (k, c) in cols[4..].iter().enumerate() {
            v[k] = c.parse().map_err(|_| bad("bad number"))?;
        }
        let record = MetricsRecord {
            step,
            max_err_t: v[0],
            max_err_ux: v[1],
            max_err_uy: v[2],
            res_mass: v[3],
            res_mom: v[4],
            res_heat: v[5],
        };
        match series.last_mut() {
            Some(s) if (s.model, s.strategy, s.mode) == (model, strategy, mode) => s.records.push(record),
            _ => series.push(EvaluationSeries {
                model,
                strategy,
                mode,
                records: vec![record],
            }),
        }
    }
    Ok(series)
}

fn points(s: &EvaluationSeries, f: fn(&MetricsRecord) -> f64) -> Vec<(f64, f64)> {
    s.records.iter().map(|r| (r.step as f64, f(r))).collect()
}

/// Writes the SVG figures into `out_dir` and returns their paths:
/// `bars_<strategy>.svg` with max errors over the rollout relative to the
/// thresholds, `errors_<strategy>_<var>.svg` with error curves and the
/// threshold line, and `residuals_<kind>.svg` with regressive residual
/// series.
pub fn render_plots(out_dir: &Path, series: &[EvaluationSeries], tau: &ThresholdConfig) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut emit = |name: String, svg: String| -> Result<()> {
        let path = out_dir.join(name);
        write_file(&path, &svg)?;
        written.push(path);
        Ok(())
    };
    let strategies: Vec<Strategy> = Strategy::ALL
        .into_iter()
        .filter(|st| series.iter().any(|s| s.strategy == *st))
        .collect();
    let variables: [(&str, &str, fn(&MetricsRecord) -> f64, f64); 3] = [
        ("T", "K", |r| r.max_err_t, tau.t),
        ("ux", "m/s", |r| r.max_err_ux, tau.u_x),
        ("uy", "m/s", |r| r.max_err_uy, tau.u_y),
    ];

    for &st in &strategies {
        let cells: Vec<&EvaluationSeries> = series.iter().filter(|s| s.strategy == st).collect();
        let mut models: Vec<ModelKind> = cells.iter().map(|s| s.model).collect();
        models.dedup();
        let mut bars = Vec::new();
        for (var, _, f, limit) in variables {
            for mode in GenerationMode::ALL {
                if !cells.iter().any(|s| s.mode == mode) {
                    continue;
                }
                let values = models
                    .iter()
                    .map(|m| {
                        cells
                            .iter()
                            .find(|s| s.model == *m && s.mode == mode)
                            .map_or(f64::NAN, |s| f(&s.max_over_rollout()) / limit)
                    })
                    .collect();
                bars.push((format!("{var} {mode}"), values));
            }
        }
        let chart = BarChart {
            title: format!("Max error over rollout, {st} strategy"),
            y_label: "max error / threshold".into(),
            groups: models.iter().map(|m| m.to_string()).collect(),
            bars,
        };
        emit(format!("bars_{st}.svg"), chart.render())?;

        for (var, unit, f, limit) in variables {
            let plot = LinePlot {
                title: format!("{var} max error, {st} strategy"),
                x_label: "step".into(),
                y_label: format!("max |error| ({unit})"),
                log_y: false,
                lines: cells
                    .iter()
                    .map(|s| Line {
                        label: format!("{} {}", s.model, s.mode),
                        points: points(s, f),
                        dashed: s.mode == GenerationMode::Sequential,
                    })
                    .collect(),
                thresholds: vec![(format!("threshold {limit}"), limit)],
            };
            emit(format!("errors_{st}_{var}.svg"), plot.render())?;
        }
    }

    let residuals: [(&str, fn(&MetricsRecord) -> f64); 3] =
        [("mass", |r| r.res_mass), ("momentum", |r| r.res_mom), ("heat", |r| r.res_heat)];
    for (name, f) in residuals {
        let lines: Vec<Line> = series
            .iter()
            .filter(|s| s.mode == GenerationMode::Regressive)
            .map(|s| Line {
                label: format!("{} {}", s.model, s.strategy),
                points: points(s, f),
                dashed: s.strategy == Strategy::Absolute,
            })
            .collect();
        if lines.is_empty() {
            continue;
        }
        let plot = LinePlot {
            title: format!("Residual {name}, regressive rollouts"),
            x_label: "step".into(),
            y_label: "max-norm".into(),
            log_y: true,
            lines,
            thresholds: Vec::new(),
        };
        emit(format!("residuals_{name}.svg"), plot.render())?;
    }
    Ok(written)
}

/// Writes `metrics.csv`, `summary.csv` and the SVG figures into `out_dir`.
pub fn emit_report(series: &[EvaluationSeries], tau: &ThresholdConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if series.is_empty() {
        return Err(Error::Usage("no evaluation series to report".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics = out_dir.join("metrics.csv");
    let summary = out_dir.join("summary.csv");
    write_metrics_csv(&metrics, series)?;
    write_summary_csv(&summary, series, tau)?;
    let mut files = vec![metrics, summary];
    files.extend(render_plots(out_dir, series, tau)?);
    Ok(files)
}
