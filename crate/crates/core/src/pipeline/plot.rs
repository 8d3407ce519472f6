//! Static SVG fan charts with a companion CSV of the plotted values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{format_timestamp, ObservationSeries, QuantileForecastMatrix, QuantileLevels};
use crate::error::{Error, Result};
use crate::Real;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 48.0;

/// Column pairs `(lower, upper)` with `tau_lower + tau_upper = 1`, outermost
/// first.
pub fn band_pairs(taus: &QuantileLevels) -> Vec<(usize, usize)> {
    let t = taus.as_slice();
    let mut pairs = Vec::new();
    for (i, &lo) in t.iter().enumerate() {
        if lo >= 0.5 {
            break;
        }
        if let Some(j) = t.iter().rposition(|&hi| (lo + hi - 1.0).abs() < 1e-9) {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Writes `path` (SVG) and the same path with a `.csv` extension holding
/// `timestamp,y,q_...`; returns both paths.
pub fn emit_fan_chart<T: Real>(
    y: &ObservationSeries<T>,
    q_hat: &QuantileForecastMatrix<T>,
    path: impl AsRef<Path>,
    precision: usize,
) -> Result<(PathBuf, PathBuf)> {
    let path = path.as_ref();
    if y.timestamps() != q_hat.timestamps() {
        return Err(Error::Arity("observations and forecasts are not aligned".into()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let csv_path = path.with_extension("csv");
    write_companion(&csv_path, y, q_hat, precision)?;
    std::fs::write(path, render(y, q_hat)).map_err(|e| Error::io(path, e))?;
    Ok((path.to_path_buf(), csv_path))
}

fn write_companion<T: Real>(
    path: &Path,
    y: &ObservationSeries<T>,
    q_hat: &QuantileForecastMatrix<T>,
    precision: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string(), "y".to_string()];
    header.extend(
        q_hat
            .taus()
            .as_slice()
            .iter()
            .map(|&t| QuantileLevels::label(t, precision)),
    );
    w.write_record(&header)?;
    for i in 0..q_hat.nrows() {
        let mut rec = vec![format_timestamp(y.timestamps()[i]), fmt(y.values()[i].as_f64())];
        rec.extend(q_hat.row(i).iter().map(|v| fmt(v.as_f64())));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

fn render<T: Real>(y: &ObservationSeries<T>, q_hat: &QuantileForecastMatrix<T>) -> String {
    let n = q_hat.nrows();
    let finite = q_hat
        .values()
        .as_slice()
        .iter()
        .chain(y.values())
        .map(|v| v.as_f64())
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let px = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let py = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#999999"/>"##,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
        HEIGHT - MARGIN / 3.0,
        label_range(y, lo, hi)
    );

    let pairs = band_pairs(q_hat.taus());
    let taus = q_hat.taus().as_slice();
    for (depth, &(a, b)) in pairs.iter().enumerate() {
        let opacity = 0.15 + 0.5 * (depth + 1) as f64 / (pairs.len() + 1) as f64;
        for segment in finite_runs(q_hat, &[a, b]) {
            let mut d = String::new();
            for (k, &i) in segment.iter().enumerate() {
                let _ = write!(
                    d,
                    "{}{:.2},{:.2} ",
                    if k == 0 { "M" } else { "L" },
                    px(i),
                    py(q_hat.row(i)[b].as_f64())
                );
            }
            for &i in segment.iter().rev() {
                let _ = write!(d, "L{:.2},{:.2} ", px(i), py(q_hat.row(i)[a].as_f64()));
            }
            let _ = writeln!(
                s,
                r##"<path class="band" data-lower="{}" data-upper="{}" d="{}Z" fill="#1f5fa8" fill-opacity="{opacity:.3}" stroke="none"/>"##,
                taus[a],
                taus[b],
                d.trim_end()
            );
        }
    }
    if let Some(m) = q_hat.taus().position(0.5) {
        for segment in finite_runs(q_hat, &[m]) {
            let pts: Vec<String> = segment
                .iter()
                .map(|&i| format!("{:.2},{:.2}", px(i), py(q_hat.row(i)[m].as_f64())))
                .collect();
            let _ = writeln!(
                s,
                r##"<polyline class="median" points="{}" fill="none" stroke="#0b2d5c" stroke-width="1.5"/>"##,
                pts.join(" ")
            );
        }
    }
    for (i, v) in y.values().iter().enumerate() {
        let v = v.as_f64();
        if v.is_finite() {
            let _ = writeln!(
                s,
                r##"<circle class="obs" cx="{:.2}" cy="{:.2}" r="1.8" fill="#d62728"/>"##,
                px(i),
                py(v)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn label_range<T: Real>(y: &ObservationSeries<T>, lo: f64, hi: f64) -> String {
    match (y.timestamps().first(), y.timestamps().last()) {
        (Some(&a), Some(&b)) => format!(
            "{} to {}, range [{lo:.3}, {hi:.3}]",
            format_timestamp(a),
            format_timestamp(b)
        ),
        _ => "empty".into(),
    }
}

/// Maximal runs of rows where all listed columns are finite.
fn finite_runs<T: Real>(q_hat: &QuantileForecastMatrix<T>, cols: &[usize]) -> Vec<Vec<usize>> {
    let mut runs = Vec::new();
    let mut cur = Vec::new();
    for i in 0..q_hat.nrows() {
        if cols.iter().all(|&c| q_hat.row(i)[c].is_finite()) {
            cur.push(i);
        } else if !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_for_common_grids() {
        let q = |v: Vec<f64>| QuantileLevels::new(v).unwrap();
        assert_eq!(band_pairs(&q(vec![0.05, 0.5, 0.95])), vec![(0, 2)]);
        assert!(band_pairs(&q(vec![0.5])).is_empty());
        assert_eq!(band_pairs(&QuantileLevels::grid(0.05).unwrap()).len(), 9);
        assert_eq!(band_pairs(&q(vec![0.1, 0.2, 0.9])), vec![(0, 2)]);
    }
}
