//! Columnar text serialization of datasets.
//!
//! ```text
//! #schema=dataset/1
//! #domain=0 classes=3 shape=2 provenance=...
//! #domain=1 classes=3 shape=2 provenance=...
//! domain,class,role,x0,x1
//! 0,2,labeled,0.25,-1.5
//! ```
//!
//! One `#domain=` line per domain, in file order; rows carry the domain id,
//! class, role and the flattened sample. Floats are written in shortest
//! round-trip form, so reading back is exact.

use super::{DataError, DomainDataset, Role};
use std::io::{BufRead, Write};

const SCHEMA: &str = "#schema=dataset/1";

fn format_err(line: usize, reason: impl Into<String>) -> DataError {
    DataError::Format { what: format!("dataset text line {line}"), offset: 0, reason: reason.into() }
}

pub fn write_datasets<W: Write>(datasets: &[DomainDataset], mut out: W) -> Result<(), DataError> {
    let width = datasets.first().map_or(0, |d| d.sample_len());
    if datasets.iter().any(|d| d.sample_len() != width) {
        return Err(DataError::Invalid("datasets differ in sample size".into()));
    }
    writeln!(out, "{SCHEMA}")?;
    for d in datasets {
        let shape: Vec<String> = d.sample_shape.iter().map(|s| s.to_string()).collect();
        writeln!(
            out,
            "#domain={} classes={} shape={} provenance={}",
            d.domain,
            d.classes,
            shape.join("x"),
            d.provenance.replace('\n', " ")
        )?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["domain".to_string(), "class".into(), "role".into()];
    header.extend((0..width).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for d in datasets {
        for i in 0..d.len() {
            let mut row = vec![d.domain.to_string(), d.labels[i].to_string(), d.roles[i].as_str().to_string()];
            row.extend(d.sample(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_meta(line: &str, lineno: usize) -> Result<DomainDataset, DataError> {
    let rest = line.strip_prefix('#').unwrap_or(line);
    let (head, provenance) = rest.split_once(" provenance=").unwrap_or((rest, ""));
    let mut domain = None;
    let mut classes = None;
    let mut shape = None;
    for field in head.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| format_err(lineno, format!("bad field `{field}`")))?;
        let num = |v: &str| v.parse::<usize>().map_err(|_| format_err(lineno, format!("bad number `{v}`")));
        match k {
            "domain" => domain = Some(num(v)?),
            "classes" => classes = Some(num(v)?),
            "shape" => shape = Some(v.split('x').map(num).collect::<Result<Vec<_>, _>>()?),
            other => return Err(format_err(lineno, format!("unknown key `{other}`"))),
        }
    }
    Ok(DomainDataset {
        domain: domain.ok_or_else(|| format_err(lineno, "missing domain"))?,
        classes: classes.ok_or_else(|| format_err(lineno, "missing classes"))?,
        sample_shape: shape.ok_or_else(|| format_err(lineno, "missing shape"))?,
        inputs: Vec::new(),
        labels: Vec::new(),
        roles: Vec::new(),
        provenance: provenance.to_string(),
    })
}

pub fn read_datasets<R: BufRead>(mut input: R) -> Result<Vec<DomainDataset>, DataError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    if line.trim_end() != SCHEMA {
        return Err(format_err(1, format!("expected `{SCHEMA}`")));
    }
    let mut datasets = Vec::new();
    let mut lineno = 1;
    loop {
        line.clear();
        lineno += 1;
        if input.read_line(&mut line)? == 0 {
            return Err(format_err(lineno, "missing column header"));
        }
        if !line.starts_with("#domain=") {
            break;
        }
        datasets.push(parse_meta(line.trim_end(), lineno)?);
    }
    // `line` now holds the column header.
    let header_len = line.trim_end().split(',').count();
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let at = lineno + 1 + k;
        if record.len() != header_len {
            return Err(format_err(at, format!("{} fields, header has {header_len}", record.len())));
        }
        let domain: usize = record[0].parse().map_err(|_| format_err(at, "bad domain"))?;
        let ds = datasets
            .iter_mut()
            .find(|d| d.domain == domain)
            .ok_or_else(|| format_err(at, format!("undeclared domain {domain}")))?;
        ds.labels.push(record[1].parse().map_err(|_| format_err(at, "bad class"))?);
        ds.roles.push(Role::parse(&record[2]).ok_or_else(|| format_err(at, format!("bad role `{}`", &record[2])))?);
        for v in record.iter().skip(3) {
            ds.inputs.push(v.parse().map_err(|_| format_err(at, format!("bad value `{v}`")))?);
        }
    }
    for d in &datasets {
        d.validate()?;
    }
    Ok(datasets)
}
