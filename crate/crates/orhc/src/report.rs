//! Run artifacts: the nodal norm-history CSV, the run-summary JSON and
//! figure-style SVG plots (semilog norm traces with concatenation-time
//! markers). All emitters are deterministic: fixed field order, fixed
//! float formatting, no timestamps outside the dedicated timings map.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::rhc::{NormSample, OrhcRunRecord, StopReason};
use crate::scenario::ScenarioConfig;
use crate::timestep::StateTrajectory;
use crate::Result;

/// Fixed norm-history CSV header.
pub const NORM_CSV_HEADER: &str = "t,norm_y,norm_err,norm_u,is_concat_time,squeeze_ok";

fn fmt(v: f64) -> String {
    // 17 significant digits: round-trip exact for f64
    format!("{v:.16e}")
}

/// Write the nodal history of a closed-loop run. Concatenation nodes
/// appear twice, carrying the one-sided control values.
pub fn write_norm_csv<W: Write>(record: &OrhcRunRecord, w: &mut W) -> Result<()> {
    writeln!(w, "{NORM_CSV_HEADER}")?;
    for s in &record.norm_history {
        write_sample(w, s)?;
    }
    Ok(())
}

fn write_sample<W: Write>(w: &mut W, s: &NormSample) -> Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{}",
        fmt(s.t),
        fmt(s.norm_y),
        fmt(s.norm_err),
        fmt(s.norm_u),
        u8::from(s.is_concat),
        u8::from(s.squeeze_ok),
    )?;
    Ok(())
}

/// Norm history of an open-loop trajectory (free dynamics or a single
/// optimal-control window): error and control columns are zero unless
/// supplied.
pub fn write_trajectory_csv<W: Write>(
    traj: &StateTrajectory,
    u_norms: Option<&[f64]>,
    w: &mut W,
) -> Result<()> {
    writeln!(w, "{NORM_CSV_HEADER}")?;
    for (k, &n) in traj.norms.iter().enumerate() {
        let s = NormSample {
            t: traj.grid.node(k),
            norm_y: n,
            norm_err: 0.0,
            norm_u: u_norms.map_or(0.0, |u| u[k]),
            is_concat: k == 0 || k == traj.grid.n_steps,
            squeeze_ok: true,
        };
        write_sample(w, &s)?;
    }
    Ok(())
}

/// Summary emitted as JSON next to the CSV artifacts.
#[derive(Debug, Serialize)]
pub struct RunSummary<'a> {
    /// Full configuration echo (every parameter affecting numerics).
    pub scenario: &'a ScenarioConfig,
    pub concat_times: Vec<f64>,
    pub theta: Vec<f64>,
    pub sqz_violations_total: usize,
    pub max_consecutive_violations: usize,
    pub stopped_reason: StopReason,
    pub control_energy: f64,
    pub state_norms_at_tn: Vec<f64>,
    pub error_norms_at_tn: Vec<f64>,
    /// Fitted log-slope of the state norms at concatenation times.
    pub state_decay_slope: f64,
    /// Fitted log-slope of the estimation-error norms (entries at the
    /// arithmetic floor are excluded from the fit).
    pub error_decay_slope: f64,
    pub total_ocp_iterations: usize,
    pub window_count: usize,
    /// Eigenvalue table of the penalty basis, when present.
    pub eigenvalues: Option<Vec<f64>>,
    /// Wall-clock seconds per phase; excluded from determinism
    /// comparisons.
    pub timings: BTreeMap<String, f64>,
}

impl<'a> RunSummary<'a> {
    pub fn from_record(
        scenario: &'a ScenarioConfig,
        record: &OrhcRunRecord,
        eigenvalues: Option<Vec<f64>>,
        timings: BTreeMap<String, f64>,
    ) -> Self {
        let floor = error_floor(record);
        Self {
            scenario,
            concat_times: record.concat_times.clone(),
            theta: record.theta.clone(),
            sqz_violations_total: record.sqz_violations_total,
            max_consecutive_violations: record.max_consecutive_violations,
            stopped_reason: record.stopped_reason,
            control_energy: record.control_energy,
            state_norms_at_tn: record.state_norms_at_tn.clone(),
            error_norms_at_tn: record.error_norms_at_tn.clone(),
            state_decay_slope: record.state_decay_slope(),
            error_decay_slope: record.error_decay_slope(floor),
            total_ocp_iterations: record.total_ocp_iterations,
            window_count: record.windows.len(),
            eigenvalues,
            timings,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Floor below which estimation-error norms are treated as arithmetic
/// noise in rate fits: relative to the run's own initial scale.
pub fn error_floor(record: &OrhcRunRecord) -> f64 {
    let scale = record
        .state_norms_at_tn
        .first()
        .copied()
        .unwrap_or(1.0)
        .max(record.error_norms_at_tn.first().copied().unwrap_or(0.0));
    1e-14 * scale.max(f64::MIN_POSITIVE)
}

/// Canonical form of a summary JSON for determinism comparisons: parses
/// and re-serializes with the wall-clock timings removed.
pub fn stable_form(json: &str) -> Result<String> {
    let mut v: serde_json::Value = serde_json::from_str(json)
        .map_err(|e| crate::error::OrhcError::ConfigParse(e.to_string()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timings");
    }
    Ok(serde_json::to_string_pretty(&v).expect("value serializes"))
}

// --- SVG plotting -----------------------------------------------------------

const PLOT_W: f64 = 960.0;
const PLOT_H: f64 = 600.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
/// Reference line drawn at double-precision machine epsilon.
const EPS_LINE: f64 = 2.220446049250313e-16;

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    dash: Option<&'a str>,
    points: Vec<(f64, f64)>,
}

/// Semilog plot of the closed-loop norms with vertical markers at the
/// concatenation times: dotted when the squeezing held on the interval
/// ending there, solid when it was violated. Returns the SVG text.
pub fn render_norm_plot(record: &OrhcRunRecord, title: &str) -> String {
    let series = [
        Series {
            label: "|y|",
            color: "#1f5fbf",
            dash: None,
            points: record
                .norm_history
                .iter()
                .map(|s| (s.t, s.norm_y))
                .collect(),
        },
        Series {
            label: "|est err|",
            color: "#c03030",
            dash: None,
            points: record
                .norm_history
                .iter()
                .map(|s| (s.t, s.norm_err))
                .collect(),
        },
        Series {
            label: "|u|",
            color: "#2e8b57",
            dash: Some("6 3"),
            points: record
                .norm_history
                .iter()
                .map(|s| (s.t, s.norm_u))
                .collect(),
        },
    ];
    let markers: Vec<(f64, bool)> = record
        .windows
        .iter()
        .map(|w| (w.t_end, w.squeeze_ok))
        .collect();
    render_semilog(&series, &markers, title)
}

/// Semilog plot of an open-loop trajectory.
pub fn render_trajectory_plot(traj: &StateTrajectory, label: &str, title: &str) -> String {
    let series = [Series {
        label,
        color: "#1f5fbf",
        dash: None,
        points: traj
            .norms
            .iter()
            .enumerate()
            .map(|(k, &n)| (traj.grid.node(k), n))
            .collect(),
    }];
    render_semilog(&series, &[], title)
}

fn render_semilog(series: &[Series], markers: &[(f64, bool)], title: &str) -> String {
    let mut t_max: f64 = 1e-300;
    let mut v_max: f64 = 1e-300;
    for s in series {
        for &(t, v) in &s.points {
            t_max = t_max.max(t);
            v_max = v_max.max(v);
        }
    }
    let log_floor = -17.0f64;
    let log_top = v_max.max(EPS_LINE).log10().ceil().max(log_floor + 1.0);
    let log_bot = {
        // lowest decade with data, clamped to the floor
        let mut lo = log_top - 1.0;
        for s in series {
            for &(_, v) in &s.points {
                if v > 0.0 {
                    lo = lo.min(v.log10());
                }
            }
        }
        lo.max(log_floor).floor()
    };
    let x_of = |t: f64| MARGIN_L + (t / t_max.max(1e-300)) * (PLOT_W - MARGIN_L - MARGIN_R);
    let y_of = |v: f64| {
        let lv = if v > 0.0 {
            v.log10().clamp(log_floor, log_top)
        } else {
            log_floor
        };
        MARGIN_T + (log_top - lv) / (log_top - log_bot.min(log_floor + 1.0)).max(1e-9)
            * (PLOT_H - MARGIN_T - MARGIN_B)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"monospace\" font-size=\"14\">{}</text>\n",
        MARGIN_L, title
    ));

    // axes
    let x0 = MARGIN_L;
    let x1 = PLOT_W - MARGIN_R;
    let y0 = PLOT_H - MARGIN_B;
    let y1 = MARGIN_T;
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));

    // y decade ticks
    let mut dec = log_bot as i64;
    while dec <= log_top as i64 {
        let y = y_of(10f64.powi(dec as i32));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#cccccc\" stroke-width=\"0.5\"/>\n",
            x0, x1
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">1e{}</text>\n",
            x0 - 6.0,
            y + 4.0,
            dec
        ));
        dec += if (log_top - log_bot) > 20.0 { 4 } else { 2 };
    }
    // x ticks: eighths of the span
    for i in 0..=8 {
        let t = t_max * i as f64 / 8.0;
        let x = x_of(t);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{:.3}</text>\n",
            y0 + 18.0,
            t
        ));
    }

    // machine-precision reference line
    let eps_y = y_of(EPS_LINE);
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{eps_y}\" x2=\"{x1}\" y2=\"{eps_y}\" stroke=\"#888888\" stroke-dasharray=\"2 4\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" fill=\"#666666\">eps</text>\n",
        x1 - 30.0,
        eps_y - 4.0
    ));

    // concatenation markers: short vertical segments at top and bottom;
    // dotted = squeezing held, solid = violated
    for &(t, ok) in markers {
        let x = x_of(t);
        let dash = if ok { " stroke-dasharray=\"2 3\"" } else { "" };
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"{dash}/>\n",
            y1,
            y1 + 24.0
        ));
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"{dash}/>\n",
            y0 - 24.0,
            y0
        ));
    }

    // data
    for s in series {
        let mut path = String::new();
        for (i, &(t, v)) in s.points.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            path.push_str(&format!("{cmd}{:.2} {:.2} ", x_of(t), y_of(v)));
        }
        let dash = s
            .dash
            .map(|d| format!(" stroke-dasharray=\"{d}\""))
            .unwrap_or_default();
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\"{dash}/>\n",
            path.trim_end(),
            s.color
        ));
    }

    // legend
    for (i, s) in series.iter().enumerate() {
        let y = MARGIN_T + 16.0 * i as f64 + 10.0;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            x1 - 150.0,
            x1 - 120.0,
            s.color
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\">{}</text>\n",
            x1 - 112.0,
            y + 4.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write text to a file, creating parent directories.
pub fn write_file(path: &std::path::Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rhc::{OrhcConfig, TnRule, WindowRecord};

    fn tiny_record() -> OrhcRunRecord {
        let config = OrhcConfig {
            t_rh: 0.4,
            tau: 0.1,
            t_infty: 0.8,
            tn_rule: TnRule::MaxArgmin,
            consecutive_limit: 10,
            total_limit: 50,
        };
        OrhcRunRecord {
            config,
            concat_times: vec![0.0, 0.4],
            theta: vec![0.5],
            sqz_violations_total: 0,
            max_consecutive_violations: 0,
            windows: vec![WindowRecord {
                t_start: 0.0,
                t_end: 0.4,
                theta: 0.5,
                squeeze_ok: true,
                ocp_iterations: 7,
                ocp_converged: true,
                tol: (1e-4, 1e-2),
                cost: 1.25,
            }],
            norm_history: vec![
                NormSample {
                    t: 0.0,
                    norm_y: 1.0,
                    norm_err: 0.5,
                    norm_u: 2.0,
                    is_concat: true,
                    squeeze_ok: true,
                },
                NormSample {
                    t: 0.4,
                    norm_y: 0.5,
                    norm_err: 0.25,
                    norm_u: 0.0,
                    is_concat: true,
                    squeeze_ok: true,
                },
            ],
            state_norms_at_tn: vec![1.0, 0.5],
            error_norms_at_tn: vec![0.5, 0.25],
            control_energy: 0.125,
            stopped_reason: StopReason::ReachedTInfty,
            total_ocp_iterations: 7,
        }
    }

    #[test]
    fn csv_layout_and_determinism() {
        let record = tiny_record();
        let mut a = Vec::new();
        write_norm_csv(&record, &mut a).unwrap();
        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), NORM_CSV_HEADER);
        let first = lines.next().unwrap();
        assert!(first.starts_with("0.0000000000000000e0,1.0000000000000000e0"));
        assert!(first.ends_with(",1,1"));
        let mut b = Vec::new();
        write_norm_csv(&record, &mut b).unwrap();
        assert_eq!(text.as_bytes(), b.as_slice());
    }

    #[test]
    fn empty_history_gives_header_only() {
        let mut record = tiny_record();
        record.norm_history.clear();
        let mut buf = Vec::new();
        write_norm_csv(&record, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.trim(), NORM_CSV_HEADER);
    }

    #[test]
    fn summary_json_round_trips_and_stable_form_drops_timings() {
        let scenario = ScenarioConfig::default();
        let record = tiny_record();
        let mut timings = BTreeMap::new();
        timings.insert("run".to_string(), 1.234);
        let summary = RunSummary::from_record(&scenario, &record, None, timings);
        let json = summary.to_json();
        // lossless round trip of the values
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["control_energy"].as_f64().unwrap(), 0.125);
        assert_eq!(v["theta"][0].as_f64().unwrap(), 0.5);
        assert_eq!(v["timings"]["run"].as_f64().unwrap(), 1.234);
        // stable form is timing-free and deterministic
        let s1 = stable_form(&json).unwrap();
        assert!(!s1.contains("timings"));
        let mut timings2 = BTreeMap::new();
        timings2.insert("run".to_string(), 9.876);
        let summary2 = RunSummary::from_record(&scenario, &record, None, timings2);
        let s2 = stable_form(&summary2.to_json()).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn svg_contains_markers_matching_violations() {
        let mut record = tiny_record();
        record.windows.push(WindowRecord {
            t_start: 0.4,
            t_end: 0.8,
            theta: 1.5,
            squeeze_ok: false,
            ocp_iterations: 3,
            ocp_converged: true,
            tol: (1e-4, 1e-2),
            cost: 0.5,
        });
        record.theta.push(1.5);
        record.sqz_violations_total = 1;
        let svg = render_norm_plot(&record, "test");
        // every window paints two segments; violated ones are solid
        // (no dash attribute), held ones dotted
        let dotted = svg.matches("stroke-dasharray=\"2 3\"").count();
        assert_eq!(dotted, 2); // one held window, two segments
        let marker_lines = svg
            .lines()
            .filter(|l| l.contains("stroke=\"black\"") && l.contains("<line"))
            .count();
        // 2 axes + 8 x-ticks ... just check the solid markers indirectly:
        let solid_markers = record.windows.iter().filter(|w| !w.squeeze_ok).count();
        assert_eq!(solid_markers, record.sqz_violations_total);
        assert!(marker_lines > 4);
        assert!(svg.contains("</svg>"));
        // plot is reproducible
        assert_eq!(svg, render_norm_plot(&record, "test"));
    }
}
