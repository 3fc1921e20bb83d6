use super::HarnessError;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

/// A CSV table preceded by a `#schema=<name>/<version>` line. Cells are
/// strings; floats are written with `Display`, which round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &str, columns: &[&str]) -> Table {
        Table { schema: schema.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows whose cells equal `want` in the named columns.
    pub fn select<'a>(&'a self, want: &'a [(&'a str, &'a str)]) -> impl Iterator<Item = &'a Vec<String>> + 'a {
        let idx: Vec<Option<usize>> = want.iter().map(|(c, _)| self.column(c)).collect();
        self.rows.iter().filter(move |row| want.iter().zip(&idx).all(|((_, v), i)| i.is_some_and(|i| row[i] == *v)))
    }

    /// The float in column `name` of the single row matching `want`.
    pub fn value(&self, want: &[(&str, &str)], name: &str) -> Option<f64> {
        let col = self.column(name)?;
        let mut rows = self.select(want);
        let row = rows.next()?;
        if rows.next().is_some() {
            return None;
        }
        row[col].parse().ok()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), HarnessError> {
        writeln!(out, "#schema={}", self.schema)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    pub fn write_file(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Table, HarnessError> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let schema = first
            .trim_end()
            .strip_prefix("#schema=")
            .ok_or_else(|| HarnessError::Schema(format!("missing #schema line, got `{}`", first.trim_end())))?
            .to_string();
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != columns.len() {
                return Err(HarnessError::Schema(format!("row has {} cells, header has {}", rec.len(), columns.len())));
            }
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { schema, columns, rows })
    }

    pub fn read_file(path: &Path) -> Result<Table, HarnessError> {
        Table::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// `Display` form of a float, with `-0` written as `0`.
pub fn fmt_num(v: f64) -> String {
    (v + 0.0).to_string()
}

pub fn mean_stdev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Collects per-seed metric values under string keys and lays them out as
/// `scope, seed, <keys>, value, stdev, n`: one `seed` row per observation,
/// then one `mean` row per key with the sample standard deviation and the
/// number of seeds that had a value. Undefined values are written empty and
/// left out of the aggregate.
#[derive(Debug, Clone)]
pub struct SeedTable {
    schema: String,
    keys: Vec<String>,
    seed_rows: Vec<(u64, Vec<String>, Option<f64>)>,
}

impl SeedTable {
    pub fn new(schema: &str, keys: &[&str]) -> SeedTable {
        SeedTable {
            schema: schema.to_string(),
            keys: keys.iter().map(|k| k.to_string()).collect(),
            seed_rows: Vec::new(),
        }
    }

    pub fn record(&mut self, seed: u64, keys: Vec<String>, value: Option<f64>) {
        debug_assert_eq!(keys.len(), self.keys.len());
        self.seed_rows.push((seed, keys, value));
    }

    pub fn finish(self) -> Table {
        let mut columns = vec!["scope".to_string(), "seed".to_string()];
        columns.extend(self.keys.iter().cloned());
        columns.extend(["value", "stdev", "n"].map(String::from));
        let mut table = Table { schema: self.schema, columns, rows: Vec::new() };
        let mut order: Vec<Vec<String>> = Vec::new();
        let mut groups: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
        for (seed, keys, value) in &self.seed_rows {
            let mut row = vec!["seed".to_string(), seed.to_string()];
            row.extend(keys.iter().cloned());
            row.extend([value.map_or(String::new(), fmt_num), String::new(), String::new()]);
            table.rows.push(row);
            if !groups.contains_key(keys) {
                order.push(keys.clone());
            }
            let g = groups.entry(keys.clone()).or_default();
            g.extend(value);
        }
        for keys in order {
            let values = &groups[&keys];
            let mut row = vec!["mean".to_string(), String::new()];
            row.extend(keys);
            if values.is_empty() {
                row.extend([String::new(), String::new(), "0".to_string()]);
            } else {
                let (mean, sd) = mean_stdev(values);
                row.extend([fmt_num(mean), fmt_num(sd), values.len().to_string()]);
            }
            table.rows.push(row);
        }
        table
    }
}
