//! Dataset directories: one CSV per series plus an optional `constructs.csv`.
//!
//! A series file is named `<id>.csv` and starts with a header of channel
//! names. Values are written in Rust's shortest round-trip notation, so a
//! save followed by a load reproduces every `f64` bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use bpar_core::data::{ChannelSchema, ConstructTable, Dataset, MultiSeries};

use crate::error::{CliError, Result};

pub const CONSTRUCTS_FILE: &str = "constructs.csv";

/// Cells read as missing in `constructs.csv`.
const MISSING: [&str; 3] = ["", "NA", "NaN"];

fn series_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::input(dir, "data directory does not exist"));
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let is_csv = path.extension().is_some_and(|e| e == "csv");
        if is_csv && path.is_file() && path.file_name().is_some_and(|n| n != CONSTRUCTS_FILE) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::input(dir, "no series CSV files found"));
    }
    Ok(files)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| CliError::input(path, e.to_string()))
}

fn header(path: &Path, rdr: &mut csv::Reader<fs::File>) -> Result<Vec<String>> {
    Ok(rdr.headers().map_err(|e| CliError::input(path, e.to_string()))?.iter().map(str::to_owned).collect())
}

/// Reads one series file, reordering its columns to `schema`.
pub fn load_series(path: &Path, schema: &ChannelSchema) -> Result<MultiSeries> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::input(path, "file name is not valid UTF-8"))?
        .to_owned();
    let mut rdr = reader(path)?;
    let names = header(path, &mut rdr)?;
    let missing: Vec<&str> = schema.names().iter().filter(|n| !names.contains(n)).map(String::as_str).collect();
    let extra: Vec<&str> = names.iter().filter(|n| schema.position(n).is_none()).map(String::as_str).collect();
    if !missing.is_empty() || !extra.is_empty() || names.len() != schema.len() {
        return Err(CliError::input(
            path,
            format!("channels do not match the schema (missing: [{}], unexpected: [{}])", missing.join(", "), extra.join(", ")),
        ));
    }
    let order: Vec<usize> = schema.names().iter().map(|n| names.iter().position(|h| h == n).unwrap()).collect();
    let d = schema.len();
    let mut values = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::input(path, e.to_string()))?;
        let row = r + 2;
        if record.len() != d {
            return Err(CliError::input(path, format!("row {row} has {} cells, expected {d}", record.len())));
        }
        for &c in &order {
            let cell = &record[c];
            let v: f64 = cell.parse().map_err(|_| {
                CliError::input(path, format!("row {row}, column `{}`: `{cell}` is not a number", names[c]))
            })?;
            if !v.is_finite() {
                return Err(CliError::input(path, format!("row {row}, column `{}`: non-finite value", names[c])));
            }
            values.push(v);
        }
    }
    Ok(MultiSeries::new(id, values, d)?)
}

/// Loads every `*.csv` in `dir` (sorted by name) except `constructs.csv`.
/// Without a schema, the first file's header defines it.
pub fn load_dataset(dir: &Path, schema: Option<&ChannelSchema>) -> Result<Dataset> {
    let files = series_files(dir)?;
    let schema = match schema {
        Some(s) => s.clone(),
        None => {
            let names = header(&files[0], &mut reader(&files[0])?)?;
            ChannelSchema::from_names(&names).map_err(|e| CliError::input(&files[0], e.to_string()))?
        }
    };
    let series = files.iter().map(|f| load_series(f, &schema)).collect::<Result<Vec<_>>>()?;
    let constructs_path = dir.join(CONSTRUCTS_FILE);
    let constructs = if constructs_path.is_file() { Some(load_constructs(&constructs_path)?) } else { None };
    Dataset::new(schema, series, constructs).map_err(|e| match e {
        bpar_core::Error::UnknownSeries(_) => CliError::input(&constructs_path, e.to_string()),
        e => CliError::input(dir, e.to_string()),
    })
}

/// Columns whose present cells all parse as finite numbers are numeric;
/// the rest are categorical.
pub fn load_constructs(path: &Path) -> Result<ConstructTable> {
    let mut rdr = reader(path)?;
    let names = header(path, &mut rdr)?;
    if names.first().map(String::as_str) != Some("id") {
        return Err(CliError::input(path, "first column must be `id`"));
    }
    let mut ids = Vec::new();
    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); names.len() - 1];
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::input(path, e.to_string()))?;
        if record.len() != names.len() {
            return Err(CliError::input(path, format!("row {} has {} cells, expected {}", r + 2, record.len(), names.len())));
        }
        ids.push(record[0].to_owned());
        for (c, col) in cells.iter_mut().enumerate() {
            let v = &record[c + 1];
            col.push((!MISSING.contains(&v)).then(|| v.to_owned()));
        }
    }
    let mut table = ConstructTable { ids, ..Default::default() };
    for (name, col) in names[1..].iter().zip(cells) {
        let parsed: Option<Vec<Option<f64>>> = col
            .iter()
            .map(|c| match c {
                None => Some(None),
                Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
            })
            .collect();
        match parsed {
            Some(values) if values.iter().any(Option::is_some) => table.numeric.push((name.clone(), values)),
            _ => table.categorical.push((name.clone(), col)),
        }
    }
    Ok(table)
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    let io = |e: csv::Error| CliError::io(path, e.into());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Shortest decimal text that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `dataset` in the layout [`load_dataset`] reads; creates `dir`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let header = dataset.schema.names().to_vec();
    for s in &dataset.series {
        let path = dir.join(format!("{}.csv", s.id));
        write_csv(&path, &header, (0..s.len()).map(|t| s.row(t).iter().map(|v| fmt_f64(*v)).collect()))?;
    }
    if let Some(table) = &dataset.constructs {
        save_constructs(&dir.join(CONSTRUCTS_FILE), table)?;
    }
    Ok(())
}

/// Numeric columns first, then categorical ones; missing cells are empty.
pub fn save_constructs(path: &Path, table: &ConstructTable) -> Result<()> {
    let mut header = vec![String::from("id")];
    header.extend(table.numeric.iter().map(|(n, _)| n.clone()));
    header.extend(table.categorical.iter().map(|(n, _)| n.clone()));
    let rows = (0..table.ids.len()).map(|r| {
        let mut row = vec![table.ids[r].clone()];
        row.extend(table.numeric.iter().map(|(_, c)| c[r].map(fmt_f64).unwrap_or_default()));
        row.extend(table.categorical.iter().map(|(_, c)| c[r].clone().unwrap_or_default()));
        row
    });
    write_csv(path, &header, rows)
}
