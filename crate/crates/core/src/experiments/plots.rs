//! SVG line plots rendered from result CSVs alone.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};

const SIZE: (u32, u32) = (720, 480);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// A CSV file held as strings with a header index.
struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.iter().map(str::to_string).collect();
        let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
        if rows.is_empty() {
            return Err(Error::Plot(format!("{} has no data rows", path.display())));
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Plot(format!("{} has no `{name}` column", self.path.display()))
        })
    }

    /// Parses a cell; empty cells (failed runs) read as `None`.
    fn number(&self, row: &csv::StringRecord, col: usize) -> Result<Option<f64>> {
        let cell = row.get(col).unwrap_or("").trim();
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse().map(Some).map_err(|_| {
            Error::Plot(format!("{}: `{cell}` is not a number", self.path.display()))
        })
    }
}

fn padded(lo: f64, hi: f64) -> Range<f64> {
    let span = hi - lo;
    // A single point or a flat line still needs a drawable axis.
    let span = if span > 1e-9 * lo.abs().max(hi.abs()).max(1.0) {
        span
    } else {
        lo.abs().max(1.0)
    };
    (lo - 0.05 * span)..(hi + 0.05 * span)
}

fn bounds<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> (Range<f64>, Range<f64>) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    (padded(x0, x1), padded(y0, y1))
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// One chart of labelled series, with optional vertical markers.
fn render(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    markers: &[f64],
) -> Result<()> {
    let (x_range, y_range) = bounds(series.iter().flat_map(|(_, pts)| pts.iter()));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x_range, y_range.clone())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    for &m in markers {
        chart
            .draw_series(LineSeries::new(
                [(m, y_range.start), (m, y_range.end)],
                BLACK.mix(0.5).stroke_width(1),
            ))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// One `s_n^dec` versus `k` plot per rank `n` (one line per seed), marked at
/// the mean true L0. Returns the files written.
pub fn plot_sweep(summary_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let t = Table::read(summary_csv)?;
    let (ck, cs, cn, cv, cl) = (
        t.column("k")?,
        t.column("seed")?,
        t.column("n")?,
        t.column("s_n_dec")?,
        t.column("true_l0")?,
    );
    // n → seed → points
    let mut by_n: BTreeMap<u64, BTreeMap<u64, Vec<(f64, f64)>>> = BTreeMap::new();
    let mut l0s: BTreeMap<u64, f64> = BTreeMap::new();
    for row in &t.rows {
        let n = t.number(row, cn)?.unwrap_or(0.0) as u64;
        let seed = t.number(row, cs)?.unwrap_or(0.0) as u64;
        let pts = by_n.entry(n).or_default().entry(seed).or_default();
        if let (Some(k), Some(v)) = (t.number(row, ck)?, t.number(row, cv)?) {
            pts.push((k, v));
        }
        if let Some(l0) = t.number(row, cl)? {
            l0s.insert(seed, l0);
        }
    }
    let markers: Vec<f64> = mean(&l0s.values().copied().collect::<Vec<_>>()).into_iter().collect();
    let mut written = Vec::new();
    for (n, seeds) in by_n {
        let series: Vec<(String, Vec<(f64, f64)>)> = seeds
            .into_iter()
            .filter(|(_, pts)| !pts.is_empty())
            .map(|(seed, mut pts)| {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                (format!("seed {seed}"), pts)
            })
            .collect();
        if series.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("sweep_s{n}.svg"));
        render(&path, &format!("s_dec at n = {n}"), "k", "s_n_dec", &series, &markers)?;
        written.push(path);
    }
    if written.is_empty() {
        return Err(Error::Plot(format!("{} has no successful runs", summary_csv.display())));
    }
    Ok(written)
}

/// Variance explained versus `k` for learned and ground-truth SAEs, averaged
/// over seeds.
pub fn plot_recon(csv_path: &Path, out_dir: &Path) -> Result<PathBuf> {
    let t = Table::read(csv_path)?;
    let (ck, clv, cgv) = (t.column("k")?, t.column("learned_var")?, t.column("gt_var")?);
    let cl = t.column("true_l0").ok();
    let mut learned: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut gt: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut l0s = Vec::new();
    for row in &t.rows {
        let Some(k) = t.number(row, ck)? else { continue };
        // Keyed by bit pattern so equal k values group exactly.
        let key = k.to_bits();
        if let Some(v) = t.number(row, clv)? {
            learned.entry(key).or_default().push(v);
        }
        if let Some(v) = t.number(row, cgv)? {
            gt.entry(key).or_default().push(v);
        }
        if let Some(c) = cl {
            l0s.extend(t.number(row, c)?);
        }
    }
    let curve = |m: &BTreeMap<u64, Vec<f64>>| {
        let mut pts: Vec<(f64, f64)> = m
            .iter()
            .filter_map(|(&k, v)| mean(v).map(|y| (f64::from_bits(k), y)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    };
    let series = vec![
        ("learned SAE".to_string(), curve(&learned)),
        ("ground-truth SAE".to_string(), curve(&gt)),
    ];
    let markers: Vec<f64> = mean(&l0s).into_iter().collect();
    let path = out_dir.join("recon_compare.svg");
    render(&path, "Variance explained", "k", "variance explained", &series, &markers)?;
    Ok(path)
}

/// `k` versus training step from a controller CSV.
pub fn plot_controller(csv_path: &Path, out_path: &Path) -> Result<()> {
    let t = Table::read(csv_path)?;
    let (cs, ck) = (t.column("step")?, t.column("k")?);
    let mut pts = Vec::with_capacity(t.rows.len());
    for row in &t.rows {
        if let (Some(s), Some(k)) = (t.number(row, cs)?, t.number(row, ck)?) {
            pts.push((s, k));
        }
    }
    render(out_path, "Controller k", "step", "k", &[("k".to_string(), pts)], &[])
}

/// Re-renders every plot derivable from the CSVs in `dir`: the sweep
/// summary, the reconstruction comparison and each run's controller series.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let sweep = dir.join("sweep_summary.csv");
    if sweep.exists() {
        written.extend(plot_sweep(&sweep, dir)?);
    }
    let recon = dir.join("recon_compare.csv");
    if recon.exists() {
        written.push(plot_recon(&recon, dir)?);
    }
    let runs = dir.join("runs");
    if runs.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&runs)
            .map_err(|e| Error::io(&runs, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for run in entries {
            let csv = run.join("controller.csv");
            if csv.exists() {
                let name = run.file_name().and_then(|n| n.to_str()).unwrap_or("run");
                let out = dir.join(format!("{name}_k.svg"));
                plot_controller(&csv, &out)?;
                written.push(out);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    const SWEEP: &str = "k,seed,n,s_n_dec,mean_max_cosine,var_explained,mse,true_l0,status\n\
        2,0,12,0.5,0.8,0.3,5,9.9,ok\n2,0,20,0.2,0.8,0.3,5,9.9,ok\n\
        10,0,12,0.01,1,1,0,9.9,ok\n10,0,20,0.0,1,1,0,9.9,ok\n\
        20,0,12,0.05,0.98,1,0,9.9,ok\n20,0,20,,,,,9.9,failed\n";

    #[test]
    fn one_file_per_rank() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write(dir.path(), "sweep_summary.csv", SWEEP);
        let files = plot_sweep(&csv, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        assert!(files.iter().all(|f| f.exists()));
    }

    #[test]
    fn rendering_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write(dir.path(), "sweep_summary.csv", SWEEP);
        let first = plot_sweep(&csv, dir.path()).unwrap();
        let bytes: Vec<Vec<u8>> = first.iter().map(|f| std::fs::read(f).unwrap()).collect();
        for f in &first {
            std::fs::remove_file(f).unwrap();
        }
        let again = plot_sweep(&csv, dir.path()).unwrap();
        for (f, b) in again.iter().zip(bytes) {
            assert_eq!(std::fs::read(f).unwrap(), b);
        }
    }

    #[test]
    fn empty_csv_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write(dir.path(), "sweep_summary.csv", "k,seed,n,s_n_dec,true_l0\n");
        assert!(matches!(plot_sweep(&csv, dir.path()), Err(Error::Plot(_))));
        assert!(!dir.path().join("sweep_s12.svg").exists());
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write(dir.path(), "c.csv", "step,metric_m\n1,0.5\n");
        let err = plot_controller(&csv, &dir.path().join("k.svg")).unwrap_err();
        assert!(err.to_string().contains("`k`"));
    }
}
