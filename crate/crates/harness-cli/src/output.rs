//! CSV tables, run metadata and optional SVG plots.
//!
//! Files are produced from the aggregated results only, so their bytes
//! depend on the seed and configuration but never on thread scheduling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use seqloc::simulator::RNG_ALGORITHM;

use crate::config::ConfigFile;
use crate::experiments::{ExperimentOutput, ResultTable};

pub const TABLE_HEADER: [&str; 7] = [
    "sweep_value",
    "estimator",
    "empirical_rmse",
    "theoretical_rmse",
    "crlb_rmse",
    "trials",
    "non_converged",
];

/// Nine significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.8e}")
    }
}

pub fn table_csv(table: &ResultTable) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TABLE_HEADER)?;
    for r in &table.rows {
        w.write_record([
            fmt_float(r.sweep_value),
            r.estimator.clone(),
            fmt_float(r.empirical_rmse),
            fmt_float(r.theoretical_rmse),
            fmt_float(r.crlb_rmse),
            r.trials.to_string(),
            r.non_converged.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

fn summary_csv(out: &ExperimentOutput) -> anyhow::Result<Option<(Vec<u8>, Vec<u8>)>> {
    let Some(c) = &out.circular else {
        return Ok(None);
    };
    let dim = out.scenario.bs.dim();
    let axes = ["x", "y", "z"];
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["estimator".to_string()];
    header.extend(axes[..dim].iter().map(|a| format!("rmse_{a}")));
    header.extend(["rmse_position", "fixes", "non_converged"].map(String::from));
    w.write_record(&header)?;
    for r in &c.rows {
        let mut rec = vec![r.estimator.clone()];
        rec.extend(r.per_axis.iter().map(|x| fmt_float(*x)));
        rec.extend([fmt_float(r.rmse), r.fixes.to_string(), r.non_converged.to_string()]);
        w.write_record(&rec)?;
    }
    let summary = w.into_inner()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["estimator", "position_error", "cumulative_fraction"])?;
    for (label, cdf) in &c.cdf {
        for (x, f) in cdf {
            w.write_record([label.clone(), fmt_float(*x), fmt_float(*f)])?;
        }
    }
    Ok(Some((summary, w.into_inner()?)))
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    experiment: &'a str,
    rng: &'a str,
    config: ConfigFile,
}

fn write(path: PathBuf, bytes: &[u8], written: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(())
}

/// Writes `<name>.csv`, `<name>.json` (effective config and RNG) and, for
/// the circular run, `<name>_summary.csv` and `<name>_cdf.csv`. With `svg`,
/// also `<name>.svg`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path, svg: bool) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = out.spec.name.as_str();
    let mut written = Vec::new();
    write(dir.join(format!("{name}.csv")), &table_csv(&out.table)?, &mut written)?;
    let meta = RunMetadata {
        experiment: name,
        rng: RNG_ALGORITHM,
        config: ConfigFile::describe(&out.scenario, Some(&out.spec)),
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    write(dir.join(format!("{name}.json")), &json, &mut written)?;
    if let Some((summary, cdf)) = summary_csv(out)? {
        write(dir.join(format!("{name}_summary.csv")), &summary, &mut written)?;
        write(dir.join(format!("{name}_cdf.csv")), &cdf, &mut written)?;
    }
    if svg {
        write(dir.join(format!("{name}.svg")), plot(out).as_bytes(), &mut written)?;
    }
    Ok(written)
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
    color: &'static str,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn plot(out: &ExperimentOutput) -> String {
    if let Some(c) = &out.circular {
        let series = c
            .cdf
            .iter()
            .enumerate()
            .map(|(i, (label, cdf))| Series {
                label: label.clone(),
                points: cdf.clone(),
                dashed: false,
                color: COLORS[i % COLORS.len()],
            })
            .collect();
        return line_chart(
            &format!("{}: position error CDF", out.spec.name),
            "position error (m)",
            "fraction",
            series,
            false,
        );
    }
    let mut series = Vec::new();
    for (i, choice) in out.spec.estimators.iter().enumerate() {
        let rows = out.table.series(choice.label());
        let color = COLORS[i % COLORS.len()];
        series.push(Series {
            label: format!("{} empirical", choice.label()),
            points: rows.iter().map(|r| (r.sweep_value, r.empirical_rmse)).collect(),
            dashed: false,
            color,
        });
        series.push(Series {
            label: format!("{} theory", choice.label()),
            points: rows.iter().map(|r| (r.sweep_value, r.theoretical_rmse)).collect(),
            dashed: true,
            color,
        });
    }
    let x_label = match out.spec.name.sweep() {
        crate::experiments::Sweep::Noise => "noise std (m)",
        crate::experiments::Sweep::Speed => "speed (m/s)",
        _ => "speed deviation (m/s)",
    };
    let log = out.spec.name.sweep() == crate::experiments::Sweep::Noise;
    line_chart(out.spec.name.as_str(), x_label, "position RMSE (m)", series, log)
}

/// Self-contained SVG line chart; `log` puts both axes on log10 scales.
fn line_chart(title: &str, x_label: &str, y_label: &str, series: Vec<Series>, log: bool) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 480.0, 80.0, 180.0, 40.0, 60.0);
    let tf = |v: f64| if log { v.log10() } else { v };
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log || (*x > 0.0 && *y > 0.0)))
        .map(|(x, y)| (tf(*x), tf(*y)))
        .collect();
    let bounds = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = bounds(&mut finite.iter().map(|p| p.0));
    let (mut y0, y1) = bounds(&mut finite.iter().map(|p| p.1));
    if !log {
        y0 = y0.min(0.0);
    }
    let px = |x: f64| left + (tf(x) - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (tf(y) - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#,
        w / 2.0
    );
    let (ax0, ay0, ax1, ay1) = (left, h - bottom, w - right, top);
    let _ = writeln!(
        s,
        r#"<path d="M{ax0} {ay1} L{ax0} {ay0} L{ax1} {ay0}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (xl, yl) = if log {
            (10f64.powf(xv), 10f64.powf(yv))
        } else {
            (xv, yv)
        };
        let gx = ax0 + f * (ax1 - ax0);
        let gy = ay0 - f * (ay0 - ay1);
        let _ = writeln!(
            s,
            r#"<text x="{gx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            ay0 + 18.0,
            tick(xl)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            ax0 - 6.0,
            gy + 4.0,
            tick(yl)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{ax0}" y1="{gy:.1}" x2="{ax1}" y2="{gy:.1}" stroke="#dddddd"/>"##
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#,
        (ax0 + ax1) / 2.0,
        h - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{y_label}</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = ser.color;
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log || (*x > 0.0 && *y > 0.0)))
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            pts.join(" ")
        );
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            ax1 + 12.0,
            ax1 + 36.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, ax1 + 42.0, ly + 4.0, ser.label);
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{:.3}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ResultRow;

    #[test]
    fn float_format_has_nine_significant_digits() {
        assert_eq!(fmt_float(0.1), "1.00000000e-1");
        assert_eq!(fmt_float(12345.678912345), "1.23456789e4");
        assert_eq!(fmt_float(f64::NAN), "nan");
    }

    #[test]
    fn table_has_fixed_header() {
        let table = ResultTable {
            rows: vec![ResultRow {
                sweep_value: 5.0,
                estimator: "kvd".into(),
                empirical_rmse: 0.075,
                theoretical_rmse: 0.0752,
                crlb_rmse: 0.0752,
                trials: 1000,
                non_converged: 0,
                empirical_se: 0.001,
            }],
        };
        let text = String::from_utf8(table_csv(&table).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sweep_value,estimator,empirical_rmse,theoretical_rmse,crlb_rmse,trials,non_converged"
        );
        assert_eq!(
            lines.next().unwrap(),
            "5.00000000e0,kvd,7.50000000e-2,7.52000000e-2,7.52000000e-2,1000,0"
        );
    }

    #[test]
    fn chart_is_well_formed() {
        let svg = line_chart(
            "t",
            "x",
            "y",
            vec![Series {
                label: "a".into(),
                points: vec![(0.01, 0.1), (1.0, 1.0)],
                dashed: false,
                color: COLORS[0],
            }],
            true,
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polyline"));
    }
}
