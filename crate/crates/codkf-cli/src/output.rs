//! Result emission: per-step CSV, aggregate CSV, JSON summary, and optional
//! SVG plots. Column order and headers are stable; numbers use Rust's
//! default formatting (decimal point, no separators), so files from equal
//! configs are byte-identical.

use anyhow::{Context, Result};
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use codkf::sim::{Aggregates, FamilyStep, FilterFamily, MonteCarloOutput, RunRecord};

use crate::config::RunConfig;

const FAMILY_ORDER: [FilterFamily; 3] = [
    FilterFamily::Codkf,
    FilterFamily::Cdkf,
    FilterFamily::Ckf,
];

fn family_step(rec: &RunRecord, k: usize, family: FilterFamily) -> Option<&FamilyStep> {
    let m = &rec.metrics[k];
    match family {
        FilterFamily::Codkf => m.codkf.as_ref(),
        FilterFamily::Cdkf => m.cdkf.as_ref(),
        FilterFamily::Ckf => m.ckf.as_ref(),
    }
}

/// Per-step CSV: one row per (run, step, family, node). The centralized
/// filter's single estimate is reported once per node id so every family
/// yields the same row count and the network MSE is the per-step column sum
/// for each family.
pub fn step_csv(output: &MonteCarloOutput, nodes: usize) -> String {
    let mut out = String::from("run_id,k,filter,node_id,sq_error,trace_M,rho,cert_rank,certified\n");
    for rec in &output.runs {
        for k in 0..rec.metrics.len() {
            for family in FAMILY_ORDER {
                let Some(f) = family_step(rec, k, family) else {
                    continue;
                };
                for node in 0..nodes {
                    let idx = if f.sq_error.len() == 1 { 0 } else { node };
                    let (rho, rank, certified) = match &f.certs {
                        Some(certs) => {
                            let c = &certs[idx];
                            (
                                format!("{}", c.rho),
                                format!("{}", c.rank),
                                if c.certified { "1" } else { "0" }.to_string(),
                            )
                        }
                        None => (String::new(), String::new(), String::new()),
                    };
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{}",
                        rec.run_id,
                        k,
                        family.label(),
                        node,
                        f.sq_error[idx],
                        f.trace_m[idx],
                        rho,
                        rank,
                        certified
                    );
                }
            }
        }
    }
    out
}

/// Aggregate CSV: one row per (step, family) with across-run means. The
/// rho and certification columns are filled for the certified filter only;
/// a consensus mean of zero marks steps with no surviving runs.
pub fn aggregate_csv(agg: &Aggregates, enabled: [bool; 3], steps: usize) -> String {
    let mut out = String::from("k,filter,mean_MSE,mean_rho,cert_rate\n");
    let series = [
        (&agg.mean_mse_codkf, true),
        (&agg.mean_mse_cdkf, false),
        (&agg.mean_mse_ckf, false),
    ];
    for k in 0..steps {
        for (i, family) in FAMILY_ORDER.iter().enumerate() {
            if !enabled[i] {
                continue;
            }
            let (mse, has_cert) = series[i];
            let (rho, rate) = if has_cert {
                (
                    format!("{}", agg.mean_rho[k]),
                    format!("{}", agg.cert_rate_per_step[k]),
                )
            } else {
                (String::new(), String::new())
            };
            let _ = writeln!(out, "{},{},{},{},{}", k, family.label(), mse[k], rho, rate);
        }
    }
    out
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a RunConfig,
    /// Fraction of (node, step, run) triples whose fusion was certified
    /// optimal (rank one and rho at 1 within tolerance).
    certified_rate: f64,
    /// Fraction whose relaxed solution had rank one, i.e. the relaxation
    /// itself attained the fusion optimum.
    rank_one_rate: f64,
    cdkf_success_fraction: f64,
    codkf_diverged_runs: usize,
    runs_completed: usize,
    wall_clock_seconds: f64,
}

pub fn summary_json(
    config: &RunConfig,
    output: &MonteCarloOutput,
    wall_clock_seconds: f64,
) -> Result<String> {
    let summary = Summary {
        config,
        certified_rate: output.aggregates.cert_rate,
        rank_one_rate: output.aggregates.rank_one_rate,
        cdkf_success_fraction: output.aggregates.cdkf_success_fraction,
        codkf_diverged_runs: output.runs.iter().filter(|r| r.codkf_diverged).count(),
        runs_completed: output.runs.len(),
        wall_clock_seconds,
    };
    let mut text = serde_json::to_string_pretty(&summary).context("serializing summary")?;
    text.push('\n');
    Ok(text)
}

/// Maps a sequence of (x, y) points into an SVG polyline `points` attribute.
fn polyline(points: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (x, y) in points {
        let _ = write!(s, "{x:.2},{y:.2} ");
    }
    s.pop();
    s
}

const PLOT_W: f64 = 800.0;
const PLOT_H: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 45.0;

struct Frame {
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, k: f64) -> f64 {
        MARGIN_L + (PLOT_W - MARGIN_L - MARGIN_R) * k / self.x_max
    }

    fn y(&self, v: f64) -> f64 {
        let t = (v - self.y_min) / (self.y_max - self.y_min);
        PLOT_H - MARGIN_B - (PLOT_H - MARGIN_T - MARGIN_B) * t
    }
}

fn svg_header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"14\" text-anchor=\"middle\">{title}</text>\n"
        ),
        w = PLOT_W,
        h = PLOT_H,
        cx = PLOT_W / 2.0,
        title = title
    )
}

fn axes(frame: &Frame, y_label: &str, y_ticks: &[(f64, String)]) -> String {
    let mut s = String::new();
    let x0 = MARGIN_L;
    let y0 = PLOT_H - MARGIN_B;
    let _ = write!(
        s,
        "<line x1=\"{x0}\" y1=\"{t}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>\n<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{r}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        t = MARGIN_T,
        r = PLOT_W - MARGIN_R,
    );
    for (v, label) in y_ticks {
        let y = frame.y(*v);
        let _ = writeln!(
            s,
            "<line x1=\"{a}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\"/><text x=\"{b}\" y=\"{ty:.2}\" text-anchor=\"end\">{label}</text>",
            a = x0 - 4.0,
            b = x0 - 7.0,
            ty = y + 4.0,
        );
    }
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let k = frame.x_max * frac;
        let x = frame.x(k);
        let _ = writeln!(
            s,
            "<line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{a}\" stroke=\"black\"/><text x=\"{x:.2}\" y=\"{b}\" text-anchor=\"middle\">{k:.0}</text>",
            a = y0 + 4.0,
            b = y0 + 18.0,
        );
    }
    let _ = write!(
        s,
        "<text x=\"{cx}\" y=\"{cy}\" text-anchor=\"middle\">k</text>\n<text x=\"16\" y=\"{my}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {my})\">{y_label}</text>\n",
        cx = (MARGIN_L + PLOT_W - MARGIN_R) / 2.0,
        cy = PLOT_H - 8.0,
        my = (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
    );
    s
}

const FAMILY_COLORS: [&str; 3] = ["#0060c0", "#c04000", "#008040"];

/// Mean network MSE per step, one line per enabled family, log-scale y.
pub fn mse_plot(agg: &Aggregates, enabled: [bool; 3], steps: usize) -> String {
    let series = [&agg.mean_mse_codkf, &agg.mean_mse_cdkf, &agg.mean_mse_ckf];
    let floor = 1e-12f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, s) in series.iter().enumerate() {
        if !enabled[i] {
            continue;
        }
        for &v in s.iter().take(steps) {
            if v.is_finite() && v > 0.0 {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() {
        lo = floor;
        hi = 1.0;
    }
    let frame = Frame {
        x_max: (steps.max(2) - 1) as f64,
        y_min: lo.log10().floor(),
        y_max: hi.log10().ceil().max(lo.log10().floor() + 1.0),
    };
    let mut svg = svg_header("mean network MSE");
    let ticks: Vec<(f64, String)> = (frame.y_min as i64..=frame.y_max as i64)
        .map(|e| (e as f64, format!("1e{e}")))
        .collect();
    svg.push_str(&axes(&frame, "MSE", &ticks));
    for (i, s) in series.iter().enumerate() {
        if !enabled[i] {
            continue;
        }
        let pts: Vec<(f64, f64)> = s
            .iter()
            .take(steps)
            .enumerate()
            .filter(|(_, &v)| v.is_finite() && v > 0.0)
            .map(|(k, &v)| (frame.x(k as f64), frame.y(v.max(floor).log10())))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n",
            FAMILY_COLORS[i],
            polyline(&pts),
            PLOT_W - MARGIN_R - 60.0,
            MARGIN_T + 16.0 * (i + 1) as f64,
            FAMILY_COLORS[i],
            FAMILY_ORDER[i].label(),
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Certificate quality over time for the first run: one line per node.
pub fn rho_plot(run: &RunRecord, nodes: usize) -> String {
    let steps = run.metrics.len().max(2);
    let frame = Frame {
        x_max: (steps - 1) as f64,
        y_min: 0.0,
        y_max: 1.05,
    };
    let mut svg = svg_header("certificate quality per node (run 0)");
    let ticks: Vec<(f64, String)> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&v| (v, format!("{v}")))
        .collect();
    svg.push_str(&axes(&frame, "rho", &ticks));
    for node in 0..nodes {
        let pts: Vec<(f64, f64)> = run
            .metrics
            .iter()
            .filter_map(|m| {
                let certs = m.codkf.as_ref()?.certs.as_ref()?;
                Some((frame.x(m.k as f64), frame.y(certs[node].rho.clamp(0.0, 1.05))))
            })
            .collect();
        if pts.is_empty() {
            continue;
        }
        let hue = 360.0 * node as f64 / nodes as f64;
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"hsl({hue:.0} 70% 40%)\" stroke-width=\"1\" points=\"{}\"/>",
            polyline(&pts),
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes every requested artifact into `out_dir`.
pub fn write_all(
    out_dir: &Path,
    config: &RunConfig,
    output: &MonteCarloOutput,
    wall_clock_seconds: f64,
) -> Result<()> {
    let enabled = {
        let e = config.enabled_filters();
        [e.codkf, e.cdkf, e.ckf]
    };
    let write = |name: &str, text: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write("steps.csv", step_csv(output, config.nodes))?;
    write(
        "aggregate.csv",
        aggregate_csv(&output.aggregates, enabled, config.steps),
    )?;
    write(
        "summary.json",
        summary_json(config, output, wall_clock_seconds)?,
    )?;
    if config.plots {
        write("mse.svg", mse_plot(&output.aggregates, enabled, config.steps))?;
        if enabled[0] {
            if let Some(run) = output.runs.first() {
                write("rho.svg", rho_plot(run, config.nodes))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use codkf::sim::monte_carlo;

    fn tiny_output() -> (RunConfig, MonteCarloOutput) {
        let config = RunConfig {
            nodes: 2,
            edge_density: 1.0,
            steps: 5,
            runs: 1,
            seed: 3,
            ..RunConfig::default()
        };
        let output = monte_carlo(&config.sim_params(), config.runs).unwrap();
        (config, output)
    }

    #[test]
    fn step_csv_row_count_is_runs_steps_families_nodes() {
        let (config, output) = tiny_output();
        let csv = step_csv(&output, config.nodes);
        let rows = csv.lines().count();
        // 1 run x 5 steps x 3 families x 2 nodes, plus the header.
        assert_eq!(rows, 1 + 5 * 3 * 2);
        assert!(csv.starts_with("run_id,k,filter,node_id,"));
    }

    #[test]
    fn centralized_rows_repeat_the_single_estimate() {
        let (config, output) = tiny_output();
        let csv = step_csv(&output, config.nodes);
        let ckf: Vec<&str> = csv.lines().filter(|l| l.contains(",ckf,")).collect();
        assert_eq!(ckf.len(), 5 * 2);
        let first: Vec<&str> = ckf[0].split(',').collect();
        let second: Vec<&str> = ckf[1].split(',').collect();
        assert_eq!(first[4], second[4], "same sq_error in both node rows");
        assert_eq!(first[6], "", "no rho column for the centralized filter");
    }

    #[test]
    fn aggregate_csv_covers_each_step_and_family() {
        let (config, output) = tiny_output();
        let csv = aggregate_csv(&output.aggregates, [true, true, true], config.steps);
        assert_eq!(csv.lines().count(), 1 + 5 * 3);
        let disabled = aggregate_csv(&output.aggregates, [true, false, false], config.steps);
        assert_eq!(disabled.lines().count(), 1 + 5);
    }

    #[test]
    fn summary_reports_rates_within_unit_interval() {
        let (config, output) = tiny_output();
        let text = summary_json(&config, &output, 0.25).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        let rate = parsed["certified_rate"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&rate));
        assert_eq!(parsed["config"]["nodes"].as_u64(), Some(2));
        assert_eq!(parsed["runs_completed"].as_u64(), Some(1));
        assert!(parsed["wall_clock_seconds"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn plots_are_valid_svg_documents() {
        let (config, output) = tiny_output();
        let mse = mse_plot(&output.aggregates, [true, true, true], config.steps);
        assert!(mse.starts_with("<svg"));
        assert!(mse.trim_end().ends_with("</svg>"));
        assert_eq!(mse.matches("<polyline").count(), 3);
        let rho = rho_plot(&output.runs[0], config.nodes);
        assert!(rho.starts_with("<svg"));
        assert_eq!(rho.matches("<polyline").count(), 2);
    }
}
