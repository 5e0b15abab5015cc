use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{MarlError, Result};

/// Files written by [`emit_plot_data`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotOutput {
    /// Long-format CSV: `group, x, mean, std, count`.
    pub long_csv: PathBuf,
    /// One whitespace-separated `.dat` file per group.
    pub series: Vec<PathBuf>,
}

/// Numeric order when both sides parse as numbers, text order otherwise.
fn compare_keys(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

fn sanitize(label: &str) -> String {
    let cleaned: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "all".into()
    } else {
        cleaned
    }
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Groups `results_csv` rows by `group_by` (one series per distinct value, or
/// a single series when absent), averages `y` over rows sharing an `x` value,
/// and writes the long CSV plus one gnuplot-ready file per series into
/// `out_dir`. Series and points are sorted by value.
pub fn emit_plot_data(
    results_csv: &Path,
    x_axis: &str,
    y_axis: &str,
    group_by: Option<&str>,
    out_dir: &Path,
) -> Result<PlotOutput> {
    let mut reader = csv::Reader::from_path(results_csv)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            MarlError::Config(format!(
                "unknown column {name:?}; available: {}",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let xi = column(x_axis)?;
    let yi = column(y_axis)?;
    let gi = group_by.map(column).transpose()?;

    let mut groups: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let y: f64 = row[yi].parse().map_err(|_| {
            MarlError::Config(format!("row {}: {y_axis} value {:?} is not numeric", line + 2, &row[yi]))
        })?;
        let g = gi.map_or_else(String::new, |i| row[i].to_string());
        groups
            .entry(g)
            .or_default()
            .entry(row[xi].to_string())
            .or_default()
            .push(y);
    }

    fs::create_dir_all(out_dir)?;
    let stem = match group_by {
        Some(g) => format!("{y_axis}_vs_{x_axis}_by_{g}"),
        None => format!("{y_axis}_vs_{x_axis}"),
    };
    let long_csv = out_dir.join(format!("{stem}.csv"));
    let mut writer = csv::Writer::from_path(&long_csv)?;
    writer.write_record([group_by.unwrap_or("group"), x_axis, "mean", "std", "count"])?;

    let mut keys: Vec<&String> = groups.keys().collect();
    keys.sort_by(|a, b| compare_keys(a, b));
    let mut series = Vec::with_capacity(keys.len());
    for g in keys {
        let mut xs: Vec<(&String, &Vec<f64>)> = groups[g].iter().collect();
        xs.sort_by(|a, b| compare_keys(a.0, b.0));
        let mut dat = format!("# {x_axis} {y_axis}_mean {y_axis}_std count\n");
        for (x, ys) in xs {
            let (mean, std) = mean_std(ys);
            writer.write_record([
                g.clone(),
                x.clone(),
                format!("{mean:.10e}"),
                format!("{std:.10e}"),
                ys.len().to_string(),
            ])?;
            dat.push_str(&format!("{x} {mean:.10e} {std:.10e} {}\n", ys.len()));
        }
        let path = match group_by {
            Some(name) => out_dir.join(format!("{stem}_{name}-{}.dat", sanitize(g))),
            None => out_dir.join(format!("{stem}.dat")),
        };
        fs::write(&path, dat)?;
        series.push(path);
    }
    writer.flush()?;
    Ok(PlotOutput { long_csv, series })
}
