use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Dataset, Sample, Source};

/// What to do with rows that have a missing value in a used column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NaPolicy {
    #[default]
    Drop,
    Error,
}

/// Raw CSV contents: header plus string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub origin: String,
}

/// Which columns feed a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    /// Extra columns whose raw labels are kept on the dataset (for example
    /// the column a selection rule keys on).
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub na_policy: NaPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub origin: String,
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub rows_kept: usize,
    /// Categorical covariates and their sorted levels; the first level is
    /// the dropped reference in the one-hot encoding.
    pub categorical: BTreeMap<String, Vec<String>>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "null")
}

pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Ingest(format!("{origin}: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest(format!("{origin}: header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Ingest(format!("{origin}: row {}: {e}", i + 2)))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table {
        headers,
        rows,
        origin,
    })
}

impl Table {
    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingest(format!("{}: missing column '{name}'", self.origin)))
    }
}

struct Resolved {
    treatment: usize,
    outcome: usize,
    covariates: Vec<usize>,
    labels: Vec<usize>,
}

/// Keeps rows complete in every used column; returns kept row indices.
fn complete_rows(table: &Table, cols: &Resolved, policy: NaPolicy) -> Result<Vec<usize>> {
    let used: BTreeSet<usize> = [cols.treatment, cols.outcome]
        .into_iter()
        .chain(cols.covariates.iter().copied())
        .chain(cols.labels.iter().copied())
        .collect();
    let mut kept = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        match used
            .iter()
            .find(|&&c| row.get(c).is_none_or(|v| is_missing(v)))
        {
            None => kept.push(i),
            Some(&c) if policy == NaPolicy::Error => {
                return Err(Error::Ingest(format!(
                    "{}: row {}: missing value in column '{}'",
                    table.origin,
                    i + 2,
                    table.headers[c]
                )))
            }
            Some(_) => {}
        }
    }
    if kept.is_empty() {
        return Err(Error::Ingest(format!("{}: no complete rows", table.origin)));
    }
    Ok(kept)
}

fn parse_num(table: &Table, row: usize, col: usize) -> Result<f64> {
    let cell = table.rows[row][col].trim();
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            Error::Ingest(format!(
                "{}: row {}: column '{}': cannot parse '{cell}' as a number",
                table.origin,
                row + 2,
                table.headers[col]
            ))
        })
}

/// Encodes several tables with one shared schema: a covariate that is
/// non-numeric in any table is categorical everywhere, with levels taken
/// from the union of all tables.
pub fn encode_tables(
    tables: &[(&Table, Source)],
    spec: &TableSpec,
) -> Result<Vec<(Dataset, IngestReport)>> {
    let resolved = tables
        .iter()
        .map(|(t, _)| {
            Ok(Resolved {
                treatment: t.column(&spec.treatment)?,
                outcome: t.column(&spec.outcome)?,
                covariates: spec
                    .covariates
                    .iter()
                    .map(|c| t.column(c))
                    .collect::<Result<_>>()?,
                labels: spec
                    .labels
                    .iter()
                    .map(|c| t.column(c))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let kept = tables
        .iter()
        .zip(&resolved)
        .map(|((t, _), r)| complete_rows(t, r, spec.na_policy))
        .collect::<Result<Vec<_>>>()?;

    // Column kinds and level sets over all tables.
    let mut levels: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (j, name) in spec.covariates.iter().enumerate() {
        let numeric = tables
            .iter()
            .zip(&resolved)
            .zip(&kept)
            .all(|(((t, _), r), k)| {
                k.iter()
                    .all(|&i| t.rows[i][r.covariates[j]].trim().parse::<f64>().is_ok())
            });
        if !numeric {
            let set = tables
                .iter()
                .zip(&resolved)
                .zip(&kept)
                .flat_map(|(((t, _), r), k)| {
                    k.iter()
                        .map(move |&i| t.rows[i][r.covariates[j]].trim().to_string())
                })
                .collect();
            levels.insert(j, set);
            log::debug!("covariate '{name}' is categorical");
        }
    }

    let mut names = Vec::new();
    let mut feature_columns = Vec::new();
    for (j, name) in spec.covariates.iter().enumerate() {
        match levels.get(&j) {
            None => {
                names.push(name.clone());
                feature_columns.push(name.clone());
            }
            Some(set) => {
                for level in set.iter().skip(1) {
                    names.push(format!("{name}={level}"));
                    feature_columns.push(name.clone());
                }
            }
        }
    }
    let categorical: BTreeMap<String, Vec<String>> = levels
        .iter()
        .map(|(&j, set)| (spec.covariates[j].clone(), set.iter().cloned().collect()))
        .collect();

    let mut out = Vec::new();
    for (((table, source), r), rows) in tables.iter().zip(&resolved).zip(&kept) {
        let mut samples = Vec::with_capacity(rows.len());
        for &i in rows {
            let a = parse_num(table, i, r.treatment)?;
            if a != 0.0 && a != 1.0 {
                return Err(Error::Ingest(format!(
                    "{}: row {}: treatment '{}' must be 0 or 1, got {a}",
                    table.origin,
                    i + 2,
                    spec.treatment
                )));
            }
            let y = parse_num(table, i, r.outcome)?;
            let mut x = Vec::with_capacity(names.len());
            for (j, &c) in r.covariates.iter().enumerate() {
                match levels.get(&j) {
                    None => x.push(parse_num(table, i, c)?),
                    Some(set) => {
                        let v = table.rows[i][c].trim();
                        x.extend(set.iter().skip(1).map(|l| if l == v { 1.0 } else { 0.0 }));
                    }
                }
            }
            samples.push(Sample::new(a as u8, x, y));
        }
        let mut label_map = BTreeMap::new();
        let label_cols = spec.labels.iter().zip(&r.labels).chain(
            levels
                .keys()
                .map(|&j| (&spec.covariates[j], &r.covariates[j])),
        );
        for (name, &c) in label_cols {
            label_map.insert(
                name.clone(),
                rows.iter()
                    .map(|&i| table.rows[i][c].trim().to_string())
                    .collect(),
            );
        }
        let report = IngestReport {
            origin: table.origin.clone(),
            rows_read: table.rows.len(),
            rows_dropped: table.rows.len() - rows.len(),
            rows_kept: rows.len(),
            categorical: categorical.clone(),
        };
        let ds = Dataset::with_schema(
            samples,
            *source,
            names.clone(),
            feature_columns.clone(),
            label_map,
        )?;
        out.push((ds, report));
    }
    Ok(out)
}

/// Reads one CSV file into a dataset.
pub fn load_csv(
    path: impl AsRef<Path>,
    spec: &TableSpec,
    source: Source,
) -> Result<(Dataset, IngestReport)> {
    let table = read_table(path)?;
    let mut v = encode_tables(&[(&table, source)], spec)?;
    Ok(v.remove(0))
}
