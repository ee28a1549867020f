//! CSV emission and aggregation: per-run metrics files, cross-seed
//! summaries, the tournament table, and tidy long-format plot data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::agents::AgentKind;
use crate::error::{Error, Result};
use crate::training::MetricsRow;

use super::TournamentCell;

/// Column layout of every per-run metrics file.
pub const CSV_HEADER: &str = "run,seed,episode,extrinsic_0,extrinsic_1,intrinsic_0,\
                              intrinsic_1,mean_vi_01,mean_vi_10,coop_rate,own_coin_frac,\
                              total_coins,mean_abs_balance";

/// Returns flagged cooperative must beat this floor...
pub const COOP_RETURN_FLOOR: f64 = -1.25;
/// ...and agree within this margin.
pub const COOP_DIFF_TOLERANCE: f64 = 0.10;

/// Mutual-cooperation test for a pair of head-to-head returns: both sides
/// do better than the floor and neither exploits the other by more than the
/// tolerance.
pub fn cooperative_cell(a_vs_b: f64, b_vs_a: f64) -> bool {
    a_vs_b > COOP_RETURN_FLOOR
        && b_vs_a > COOP_RETURN_FLOOR
        && (a_vs_b - b_vs_a).abs() <= COOP_DIFF_TOLERANCE
}

/// Fraction of the stream treated as "converged" when summarizing a run.
const TAIL_FRACTION: f64 = 0.1;

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes one run's metrics stream. Formatting is shortest-roundtrip, so
/// identical rows always produce identical bytes.
pub fn write_metrics_csv(path: &Path, run: &str, seed: u64, rows: &[MetricsRow]) -> Result<()> {
    let mut text = String::with_capacity(rows.len() * 64 + CSV_HEADER.len());
    text.push_str(CSV_HEADER);
    text.push('\n');
    for r in rows {
        writeln!(
            text,
            "{run},{seed},{},{},{},{},{},{},{},{},{},{},{}",
            r.episode,
            r.extrinsic[0],
            r.extrinsic[1],
            r.intrinsic[0],
            r.intrinsic[1],
            r.mean_vi[0],
            r.mean_vi[1],
            fmt_opt(r.coop_rate),
            fmt_opt(r.own_coin_frac),
            fmt_opt(r.total_coins),
            r.mean_abs_balance,
        )
        .expect("string writes are infallible");
    }
    fs::write(path, text).map_err(|e| Error::config(format!("writing {}: {e}", path.display())))
}

/// One parsed per-run metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedRun {
    pub run: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

fn parse_opt(field: &str, what: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::config(format!("bad {what} value '{field}'")))
}

/// Reads a file written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<ParsedRun> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != CSV_HEADER {
        return Err(Error::config(format!(
            "{} is not a metrics file (unexpected header)",
            path.display()
        )));
    }
    let mut run = String::new();
    let mut seed = 0;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(Error::config(format!(
                "{} line {}: expected 13 fields, got {}",
                path.display(),
                i + 2,
                fields.len()
            )));
        }
        run = fields[0].to_string();
        seed = fields[1]
            .parse()
            .map_err(|_| Error::config(format!("bad seed '{}'", fields[1])))?;
        let num = |k: usize, what: &str| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad {what} value '{}'", fields[k])))
        };
        rows.push(MetricsRow {
            episode: fields[2]
                .parse()
                .map_err(|_| Error::config(format!("bad episode '{}'", fields[2])))?,
            extrinsic: [num(3, "extrinsic_0")?, num(4, "extrinsic_1")?],
            intrinsic: [num(5, "intrinsic_0")?, num(6, "intrinsic_1")?],
            mean_vi: [num(7, "mean_vi_01")?, num(8, "mean_vi_10")?],
            coop_rate: parse_opt(fields[9], "coop_rate")?,
            own_coin_frac: parse_opt(fields[10], "own_coin_frac")?,
            total_coins: parse_opt(fields[11], "total_coins")?,
            mean_abs_balance: num(12, "mean_abs_balance")?,
        });
    }
    Ok(ParsedRun { run, seed, rows })
}

/// Mean of a metric over the final tail of a run (at least one episode).
/// `None` when the metric is absent from the stream.
pub fn tail_mean(rows: &[MetricsRow], metric: impl Fn(&MetricsRow) -> Option<f64>) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let tail = ((rows.len() as f64 * TAIL_FRACTION).ceil() as usize).clamp(1, rows.len());
    let values: Vec<f64> = rows[rows.len() - tail..].iter().filter_map(&metric).collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Sample mean and standard error (n−1 variance; zero error for n ≤ 1).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Cross-seed summary entry for one metric.
#[derive(Clone, Debug)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub mean: f64,
    pub stderr: f64,
}

type MetricAccessor = (&'static str, fn(&MetricsRow) -> Option<f64>);

/// Fixed emission order for every metric a row can carry.
const METRICS: [MetricAccessor; 10] = [
    ("extrinsic_0", |r| Some(r.extrinsic[0])),
    ("extrinsic_1", |r| Some(r.extrinsic[1])),
    ("intrinsic_0", |r| Some(r.intrinsic[0])),
    ("intrinsic_1", |r| Some(r.intrinsic[1])),
    ("mean_vi_01", |r| Some(r.mean_vi[0])),
    ("mean_vi_10", |r| Some(r.mean_vi[1])),
    ("coop_rate", |r| r.coop_rate),
    ("own_coin_frac", |r| r.own_coin_frac),
    ("total_coins", |r| r.total_coins),
    ("mean_abs_balance", |r| Some(r.mean_abs_balance)),
];

/// Tail-mean each run, then aggregate across runs: one summary entry per
/// metric present in the streams.
pub fn summarize_runs(runs: &[Vec<MetricsRow>]) -> Vec<MetricSummary> {
    let mut out = Vec::new();
    for (name, accessor) in METRICS {
        let tails: Vec<f64> = runs.iter().filter_map(|rows| tail_mean(rows, accessor)).collect();
        if tails.is_empty() {
            continue;
        }
        let (mean, stderr) = mean_stderr(&tails);
        out.push(MetricSummary {
            metric: name,
            mean,
            stderr,
        });
    }
    out
}

pub(super) fn write_summary_csv(
    path: &Path,
    run: &str,
    n_seeds: usize,
    summary: &[MetricSummary],
) -> Result<()> {
    let mut text = String::from("run,metric,mean,stderr,seeds\n");
    for m in summary {
        writeln!(text, "{run},{},{},{},{n_seeds}", m.metric, m.mean, m.stderr)
            .expect("string writes are infallible");
    }
    fs::write(path, text).map_err(|e| Error::config(format!("writing {}: {e}", path.display())))
}

pub(super) fn write_table_csv(
    path: &Path,
    roster: &[AgentKind],
    cells: &[TournamentCell],
) -> Result<()> {
    let mut text =
        String::from("row_agent,col_agent,row_return,row_stderr,col_return,col_stderr,cooperative\n");
    for c in cells {
        let coop = cooperative(cells, c.row, c.col, roster);
        writeln!(
            text,
            "{},{},{},{},{},{},{coop}",
            c.row.short_name(),
            c.col.short_name(),
            c.row_return,
            c.row_stderr,
            c.col_return,
            c.col_stderr,
        )
        .expect("string writes are infallible");
    }
    fs::write(path, text).map_err(|e| Error::config(format!("writing {}: {e}", path.display())))
}

/// A cell is cooperative when the pair of head-to-head returns — this cell
/// and its transpose — passes the mutual-cooperation rule.
fn cooperative(cells: &[TournamentCell], row: AgentKind, col: AgentKind, roster: &[AgentKind]) -> bool {
    debug_assert!(roster.contains(&row) && roster.contains(&col));
    let forward = super::cell_return(cells, row, col);
    let back = super::cell_return(cells, col, row);
    matches!((forward, back), (Some(f), Some(b)) if cooperative_cell(f, b))
}

/// Plain-text tournament matrix; `*` marks cooperative cells.
pub(super) fn render_table(roster: &[AgentKind], cells: &[TournamentCell]) -> String {
    let mut out = String::new();
    write!(out, "{:>8}", "").expect("string writes are infallible");
    for col in roster {
        write!(out, "{:>12}", col.short_name()).expect("string writes are infallible");
    }
    out.push('\n');
    for &row in roster {
        write!(out, "{:>8}", row.short_name()).expect("string writes are infallible");
        for &col in roster {
            let cell = cells
                .iter()
                .find(|c| c.row == row && c.col == col)
                .expect("every ordered pair was played");
            let mark = if cooperative(cells, row, col, roster) { "*" } else { "" };
            write!(out, "{:>12}", format!("{:.2}{mark}", cell.row_return))
                .expect("string writes are infallible");
        }
        out.push('\n');
    }
    out
}

/// Columns of the tidy long-format plot file.
const LONG_HEADER: &str = "run,seed,episode,metric,value";
/// Columns of the cross-seed aggregate plot file.
const AGG_HEADER: &str = "run,episode,metric,mean,stderr";

/// Collects every per-run metrics file under `dir` into two tidy CSVs:
/// `plot-long.csv` (one row per run, seed, episode, metric) and
/// `plot-agg.csv` (mean ± stderr across seeds). Returns the file count.
/// An empty directory yields header-only files and a warning.
pub fn emit_plot_data(dir: &Path) -> Result<usize> {
    let entries = fs::read_dir(dir)
        .map_err(|e| Error::config(format!("reading {}: {e}", dir.display())))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            name.ends_with(".csv")
                && name.contains("-seed")
                && !name.ends_with("-summary.csv")
                && !name.ends_with("-table.csv")
        })
        .collect();
    paths.sort();
    let mut runs = Vec::new();
    for path in &paths {
        match read_metrics_csv(path) {
            Ok(parsed) => runs.push(parsed),
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    if runs.is_empty() {
        eprintln!("warning: no metrics runs found in {}", dir.display());
    }
    runs.sort_by(|a, b| a.run.cmp(&b.run).then(a.seed.cmp(&b.seed)));

    let mut long = String::from(LONG_HEADER);
    long.push('\n');
    // (run, episode, metric) -> per-seed values, in deterministic order.
    let mut groups: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
    for parsed in &runs {
        for row in &parsed.rows {
            for (mi, (name, accessor)) in METRICS.iter().enumerate() {
                if let Some(v) = accessor(row) {
                    writeln!(long, "{},{},{},{name},{v}", parsed.run, parsed.seed, row.episode)
                        .expect("string writes are infallible");
                    groups
                        .entry((parsed.run.clone(), row.episode, mi))
                        .or_default()
                        .push(v);
                }
            }
        }
    }
    let mut agg = String::from(AGG_HEADER);
    agg.push('\n');
    for ((run, episode, mi), values) in &groups {
        let (mean, stderr) = mean_stderr(values);
        writeln!(agg, "{run},{episode},{},{mean},{stderr}", METRICS[*mi].0)
            .expect("string writes are infallible");
    }
    let long_path = dir.join("plot-long.csv");
    let agg_path = dir.join("plot-agg.csv");
    fs::write(&long_path, long)
        .map_err(|e| Error::config(format!("writing {}: {e}", long_path.display())))?;
    fs::write(&agg_path, agg)
        .map_err(|e| Error::config(format!("writing {}: {e}", agg_path.display())))?;
    Ok(runs.len())
}
