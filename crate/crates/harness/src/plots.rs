//! Plot-ready series. Everything here reshapes `aggregate.csv` files that
//! `sweep` and `hinge-stats` already wrote; nothing is retrained or
//! re-estimated.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::{read_summary, SummaryRow};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Figure {
    /// Success curves per method.
    AggregateSuccess,
    /// Final success on the long chain against the swept `n` or `L`.
    HumanoidmazeGiant,
    HorizonScale,
    HorizonBatchScale,
    /// Hinge weights at 0 against 1, success curves.
    SampleCtrl,
    LambdaSweep,
    StochasticEnvs,
    /// Mean online Q over training.
    QBlowup,
    /// Activation frequency and magnitude by temporal distance.
    HingeVsT,
}

impl Figure {
    pub fn name(self) -> String {
        serde_json::to_value(self).expect("figure serializes").as_str().expect("unit").to_string()
    }

    fn shape(self) -> Shape {
        match self {
            Figure::AggregateSuccess | Figure::SampleCtrl => Shape::Curve("success_rate"),
            Figure::QBlowup => Shape::Curve("mean_online_q"),
            Figure::HingeVsT => Shape::Hinge,
            Figure::HumanoidmazeGiant
            | Figure::HorizonScale
            | Figure::HorizonBatchScale
            | Figure::LambdaSweep
            | Figure::StochasticEnvs => Shape::Final("success_rate"),
        }
    }
}

enum Shape {
    /// `x` = eval step.
    Curve(&'static str),
    /// `x` = swept value, last eval step only.
    Final(&'static str),
    /// `x` = distance; one series per side, metric and step.
    Hinge,
}

pub const PLOT_COLUMNS: [&str; 6] = ["figure", "series", "x", "y", "lo", "hi"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub figure: String,
    pub series: String,
    pub x: String,
    pub y: f64,
    pub lo: f64,
    pub hi: f64,
}

/// `(label, rows)` for each input directory.
pub fn load_inputs(dirs: &[impl AsRef<Path>]) -> Result<Vec<(String, Vec<SummaryRow>)>> {
    dirs.iter()
        .map(|d| {
            let d = d.as_ref();
            let p = d.join("aggregate.csv");
            let f = std::fs::File::open(&p)
                .map_err(Error::io(format!("{} (inputs must be sweep or hinge-stats output)", p.display())))?;
            let label = d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
            Ok((label, read_summary(f)?))
        })
        .collect()
}

pub fn figure_rows(figure: Figure, inputs: &[(String, Vec<SummaryRow>)]) -> Vec<PlotRow> {
    let multi = inputs.len() > 1;
    let name = figure.name();
    let mut out = Vec::new();
    for (label, rows) in inputs {
        let series = |s: &str| if multi { format!("{label}/{s}") } else { s.to_string() };
        let row = |series: String, x: String, r: &SummaryRow| PlotRow {
            figure: name.clone(),
            series,
            x,
            y: r.mean,
            lo: r.ci_lo,
            hi: r.ci_hi,
        };
        match figure.shape() {
            Shape::Curve(metric) => {
                out.extend(rows.iter().filter(|r| r.metric == metric).map(|r| row(series(&r.group), r.step.to_string(), r)));
            }
            Shape::Final(metric) => {
                let mut groups: Vec<&str> = Vec::new();
                for r in rows.iter().filter(|r| r.metric == metric) {
                    if !groups.contains(&r.group.as_str()) {
                        groups.push(&r.group);
                    }
                }
                for g in groups {
                    let last = rows.iter().filter(|r| r.metric == metric && r.group == g).max_by_key(|r| r.step);
                    if let Some(r) = last {
                        let (axis, x) = g.split_once('=').unwrap_or(("value", g));
                        out.push(row(series(axis), x.to_string(), r));
                    }
                }
            }
            Shape::Hinge => {
                for r in rows.iter().filter(|r| r.metric == "frequency" || r.metric == "magnitude") {
                    // Groups are `LB/d=3`.
                    let Some((side, d)) = r.group.split_once("/d=") else { continue };
                    out.push(row(series(&format!("{side} {}@{}", r.metric, r.step)), d.to_string(), r));
                }
            }
        }
    }
    out
}

pub fn write_plot_csv<W: Write>(rows: &[PlotRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(PLOT_COLUMNS)?;
    for r in rows {
        wr.write_record([&r.figure, &r.series, &r.x, &r.y.to_string(), &r.lo.to_string(), &r.hi.to_string()])?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}
