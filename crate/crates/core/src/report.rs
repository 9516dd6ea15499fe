//! Result files and best-method win tables.
//!
//! CSV results have exactly the columns
//! `dataset,protocol,epsilon,pp,metric,run,value`; JSON results carry the
//! same records plus one summary per cell. Floats are written with 17
//! significant digits so parsing them back restores every bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::engine::{mean_std, CellKey, CellResult, OutputFormat, ResultMap};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::postprocess::PPMethod;
use crate::protocols::ProtocolKind;

pub const CSV_HEADER: [&str; 7] = [
    "dataset", "protocol", "epsilon", "pp", "metric", "run", "value",
];

/// 17 significant digits in scientific notation.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn parse_float(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::input(format!("bad number '{s}': {e}")))
}

pub fn render_csv(results: &ResultMap) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_HEADER)?;
    for (key, cell) in results {
        for (run, value) in cell.per_run_values.iter().enumerate() {
            writer.write_record([
                key.dataset.as_str(),
                key.protocol.name(),
                &format_float(key.epsilon),
                key.pp.name(),
                key.metric.name(),
                &run.to_string(),
                &format_float(*value),
            ])?;
        }
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn json_number(x: f64) -> String {
    if x.is_finite() {
        format_float(x)
    } else {
        "null".into()
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

pub fn render_json(results: &ResultMap) -> String {
    let mut out = String::from("{\n  \"cells\": [");
    let key_fields = |key: &CellKey| {
        format!(
            "\"dataset\": {}, \"protocol\": {}, \"epsilon\": {}, \"pp\": {}, \"metric\": {}",
            json_string(&key.dataset),
            json_string(key.protocol.name()),
            json_number(key.epsilon),
            json_string(key.pp.name()),
            json_string(key.metric.name()),
        )
    };
    for (i, (key, cell)) in results.iter().enumerate() {
        let values: Vec<String> = cell
            .per_run_values
            .iter()
            .map(|&v| json_number(v))
            .collect();
        let error = cell
            .error
            .as_deref()
            .map(json_string)
            .unwrap_or_else(|| "null".into());
        let _ = write!(
            out,
            "{}\n    {{{}, \"mean\": {}, \"std\": {}, \"error\": {}, \"values\": [{}]}}",
            if i == 0 { "" } else { "," },
            key_fields(key),
            json_number(cell.mean),
            json_number(cell.std),
            error,
            values.join(", "),
        );
    }
    out.push_str("\n  ],\n  \"records\": [");
    let mut first = true;
    for (key, cell) in results {
        for (run, &value) in cell.per_run_values.iter().enumerate() {
            let _ = write!(
                out,
                "{}\n    {{{}, \"run\": {run}, \"value\": {}}}",
                if first { "" } else { "," },
                key_fields(key),
                json_number(value),
            );
            first = false;
        }
    }
    out.push_str("\n  ]\n}\n");
    out
}

pub fn emit_results(
    results: &ResultMap,
    format: OutputFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => render_csv(results)?,
        OutputFormat::Json => render_json(results),
    };
    fs::write(path, text)?;
    Ok(())
}

struct Record {
    key: CellKey,
    run: usize,
    value: f64,
}

fn assemble(records: Vec<Record>, errors: Vec<(CellKey, String)>) -> Result<ResultMap> {
    let mut grouped: BTreeMap<CellKey, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in records {
        if grouped
            .entry(r.key.clone())
            .or_default()
            .insert(r.run, r.value)
            .is_some()
        {
            return Err(Error::input(format!(
                "duplicate run {} for {:?}",
                r.run, r.key
            )));
        }
    }
    let mut out = ResultMap::new();
    for (key, runs) in grouped {
        if runs.keys().enumerate().any(|(i, &r)| i != r) {
            return Err(Error::input(format!(
                "runs of {key:?} are not numbered 0..{}",
                runs.len()
            )));
        }
        out.insert(key, CellResult::from_values(runs.into_values().collect()));
    }
    for (key, message) in errors {
        out.entry(key)
            .or_insert_with(|| CellResult::failed(message));
    }
    Ok(out)
}

fn parse_key(
    dataset: &str,
    protocol: &str,
    epsilon: &str,
    pp: &str,
    metric: &str,
) -> Result<CellKey> {
    Ok(CellKey {
        dataset: dataset.to_string(),
        protocol: protocol.parse::<ProtocolKind>()?,
        epsilon: parse_float(epsilon)?,
        pp: pp.parse::<PPMethod>()?,
        metric: metric.parse::<MetricKind>()?,
    })
}

pub fn parse_csv(text: &str) -> Result<ResultMap> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::input(format!(
            "unexpected results header {headers:?}"
        )));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        records.push(Record {
            key: parse_key(&row[0], &row[1], &row[2], &row[3], &row[4])?,
            run: row[5]
                .parse()
                .map_err(|e| Error::input(format!("bad run index '{}': {e}", &row[5])))?,
            value: parse_float(&row[6])?,
        });
    }
    assemble(records, Vec::new())
}

pub fn parse_json(text: &str) -> Result<ResultMap> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::input(e.to_string()))?;
    let field = |v: &serde_json::Value, name: &str| -> Result<String> {
        match &v[name] {
            serde_json::Value::String(s) => Ok(s.clone()),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            other => Err(Error::input(format!(
                "field '{name}' has unexpected value {other}"
            ))),
        }
    };
    let key_of = |v: &serde_json::Value| -> Result<CellKey> {
        parse_key(
            &field(v, "dataset")?,
            &field(v, "protocol")?,
            &field(v, "epsilon")?,
            &field(v, "pp")?,
            &field(v, "metric")?,
        )
    };
    let mut records = Vec::new();
    for r in doc["records"]
        .as_array()
        .ok_or_else(|| Error::input("JSON results lack 'records'"))?
    {
        records.push(Record {
            key: key_of(r)?,
            run: r["run"]
                .as_u64()
                .ok_or_else(|| Error::input("record lacks a run index"))? as usize,
            value: r["value"].as_f64().unwrap_or(f64::NAN),
        });
    }
    let mut errors = Vec::new();
    for c in doc["cells"].as_array().into_iter().flatten() {
        if let Some(message) = c["error"].as_str() {
            errors.push((key_of(c)?, message.to_string()));
        }
    }
    assemble(records, errors)
}

/// Reads a results file, choosing the parser by extension (`.json` or CSV otherwise).
pub fn read_results(path: impl AsRef<Path>) -> Result<ResultMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
    {
        parse_json(&text)
    } else {
        parse_csv(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WinTableEntry {
    pub dataset: String,
    pub protocol: ProtocolKind,
    pub epsilon: f64,
    pub metric: MetricKind,
    pub best_pp: PPMethod,
    /// Fraction of runs in which `best_pp` attained the smallest value.
    pub win_fraction: f64,
    pub runs: usize,
    /// Win count of every method in the group.
    pub wins: BTreeMap<PPMethod, usize>,
    /// Mean metric value of every method in the group.
    pub means: BTreeMap<PPMethod, f64>,
}

type GroupKey = (String, &'static str, u64, &'static str);

/// Counts, for every (dataset, protocol, epsilon, metric) group, how often
/// each PP method attains the smallest metric value. Every method tied at
/// the minimum gets a win. `best_pp` has the most wins (or, with `by_mean`,
/// the smallest mean); remaining ties go to the alphabetically first name.
pub fn win_table(results: &ResultMap, by_mean: bool) -> Result<Vec<WinTableEntry>> {
    let mut groups: BTreeMap<GroupKey, (CellKey, Vec<(PPMethod, &CellResult)>)> = BTreeMap::new();
    for (key, cell) in results {
        if cell.per_run_values.is_empty() {
            continue;
        }
        let gk = (
            key.dataset.clone(),
            key.protocol.name(),
            key.epsilon.to_bits(),
            key.metric.name(),
        );
        groups
            .entry(gk)
            .or_insert_with(|| (key.clone(), Vec::new()))
            .1
            .push((key.pp, cell));
    }

    let mut entries = Vec::new();
    for (key, members) in groups.into_values() {
        let runs = members[0].1.per_run_values.len();
        if let Some((pp, cell)) = members.iter().find(|(_, c)| c.per_run_values.len() != runs) {
            return Err(Error::input(format!(
                "ragged group {} {} eps={} {}: {pp} has {} runs, expected {runs}",
                key.dataset,
                key.protocol,
                key.epsilon,
                key.metric,
                cell.per_run_values.len()
            )));
        }
        let mut wins: BTreeMap<PPMethod, usize> = members.iter().map(|(pp, _)| (*pp, 0)).collect();
        for run in 0..runs {
            let best = members
                .iter()
                .map(|(_, c)| c.per_run_values[run])
                .filter(|v| !v.is_nan())
                .fold(f64::INFINITY, f64::min);
            for (pp, c) in &members {
                if c.per_run_values[run] == best {
                    *wins.get_mut(pp).unwrap() += 1;
                }
            }
        }
        let means: BTreeMap<PPMethod, f64> = members
            .iter()
            .map(|(pp, c)| (*pp, mean_std(&c.per_run_values).0))
            .collect();

        let mut ranked: Vec<PPMethod> = members.iter().map(|(pp, _)| *pp).collect();
        ranked.sort_by_key(|pp| pp.name());
        let best_pp = if by_mean {
            ranked
                .iter()
                .copied()
                .reduce(|a, b| if means[&b] < means[&a] { b } else { a })
                .unwrap()
        } else {
            ranked
                .iter()
                .copied()
                .reduce(|a, b| if wins[&b] > wins[&a] { b } else { a })
                .unwrap()
        };
        entries.push(WinTableEntry {
            dataset: key.dataset,
            protocol: key.protocol,
            epsilon: key.epsilon,
            metric: key.metric,
            best_pp,
            win_fraction: wins[&best_pp] as f64 / runs as f64,
            runs,
            wins,
            means,
        });
    }
    Ok(entries)
}

pub fn render_win_table_csv(entries: &[WinTableEntry]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "dataset",
        "protocol",
        "epsilon",
        "metric",
        "best_pp",
        "win_fraction",
        "runs",
    ])?;
    for e in entries {
        writer.write_record([
            e.dataset.as_str(),
            e.protocol.name(),
            &format_float(e.epsilon),
            e.metric.name(),
            e.best_pp.name(),
            &format_float(e.win_fraction),
            &e.runs.to_string(),
        ])?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Human-readable table: one row per (dataset, protocol, metric), one
/// column per epsilon, each cell `best (win fraction)`.
pub fn render_win_table_text(entries: &[WinTableEntry]) -> String {
    let mut epsilons: Vec<f64> = entries.iter().map(|e| e.epsilon).collect();
    epsilons.sort_by(f64::total_cmp);
    epsilons.dedup();
    let mut rows: BTreeMap<(String, &str, &str), BTreeMap<u64, String>> = BTreeMap::new();
    for e in entries {
        rows.entry((e.dataset.clone(), e.protocol.name(), e.metric.name()))
            .or_default()
            .insert(
                e.epsilon.to_bits(),
                format!("{} ({:.2})", e.best_pp, e.win_fraction),
            );
    }
    let mut out = format!("{:<24} {:<8} {:<6}", "dataset", "protocol", "metric");
    for eps in &epsilons {
        let _ = write!(out, " {:<20}", format!("eps={eps}"));
    }
    out.push('\n');
    for ((dataset, protocol, metric), cells) in rows {
        let _ = write!(out, "{dataset:<24} {protocol:<8} {metric:<6}");
        for eps in &epsilons {
            let cell = cells.get(&eps.to_bits()).map(String::as_str).unwrap_or("-");
            let _ = write!(out, " {cell:<20}");
        }
        out.push('\n');
    }
    out
}
