//! CSV ingestion and export of participant records.
//!
//! Header: `entry,arm,u,delta,r,gamma,psi,x1,...,xk`. An empty `psi` field is
//! read as Ψ = 0 with `psi_observed = false`. Uninfected participants carry
//! any `u` beyond the analysis time (`inf` is accepted).

use std::io::{Read, Write};
use std::path::Path;

use super::{Arm, Gamma, ParticipantRecord};

const FIXED_COLUMNS: [&str; 7] = ["entry", "arm", "u", "delta", "r", "gamma", "psi"];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected leading columns {expected:?}, found {found:?}")]
    Header { expected: Vec<String>, found: Vec<String> },
    #[error("line {line}: column `{column}`: {message}")]
    Field {
        line: usize,
        column: String,
        message: String,
    },
    #[error("dataset is empty")]
    Empty,
}

/// Participant records plus the covariate column names they were read with.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub covariate_names: Vec<String>,
    pub records: Vec<ParticipantRecord>,
}

impl Dataset {
    pub fn new(records: Vec<ParticipantRecord>) -> Self {
        let k = records.first().map(|r| r.covariates.len()).unwrap_or(0);
        Self {
            covariate_names: (1..=k).map(|j| format!("x{j}")).collect(),
            records,
        }
    }
}

fn field_err(line: usize, column: &str, message: impl Into<String>) -> DataError {
    DataError::Field {
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

fn parse_f64(raw: &str, line: usize, column: &str) -> Result<f64, DataError> {
    raw.trim()
        .parse::<f64>()
        .map_err(|e| field_err(line, column, e.to_string()))
}

fn parse_code(raw: &str, line: usize, column: &str) -> Result<u8, DataError> {
    raw.trim()
        .parse::<u8>()
        .map_err(|e| field_err(line, column, e.to_string()))
}

pub fn read_records<R: Read>(reader: R) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.len() < FIXED_COLUMNS.len() || headers.iter().zip(FIXED_COLUMNS).any(|(h, e)| h != e) {
        return Err(DataError::Header {
            expected: FIXED_COLUMNS.iter().map(|s| s.to_string()).collect(),
            found: headers,
        });
    }
    let covariate_names = headers[FIXED_COLUMNS.len()..].to_vec();

    let mut records = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let row = row?;
        let line = idx + 2;
        let arm_code = parse_code(&row[1], line, "arm")?;
        let arm = Arm::from_code(arm_code).ok_or_else(|| field_err(line, "arm", "expected 0 or 1"))?;
        let delta = parse_code(&row[3], line, "delta")?;
        if delta > 1 {
            return Err(field_err(line, "delta", "expected 0 or 1"));
        }
        let gamma_code = parse_code(&row[5], line, "gamma")?;
        let gamma = Gamma::from_code(gamma_code).ok_or_else(|| field_err(line, "gamma", "expected 0, 1 or 2"))?;
        let (psi, psi_observed) = match row[6].trim() {
            "" => (false, false),
            raw => match parse_code(raw, line, "psi")? {
                0 => (false, true),
                1 => (true, true),
                _ => return Err(field_err(line, "psi", "expected 0, 1 or empty")),
            },
        };
        let covariates = covariate_names
            .iter()
            .enumerate()
            .map(|(j, name)| parse_f64(&row[FIXED_COLUMNS.len() + j], line, name))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(ParticipantRecord {
            entry: parse_f64(&row[0], line, "entry")?,
            covariates,
            arm,
            infect_time: parse_f64(&row[2], line, "u")?,
            infected: delta == 1,
            r_time: parse_f64(&row[4], line, "r")?,
            gamma,
            psi,
            psi_observed,
        });
    }
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(Dataset {
        covariate_names,
        records,
    })
}

pub fn read_records_path(path: &Path) -> Result<Dataset, DataError> {
    read_records(std::fs::File::open(path)?)
}

pub fn write_records<W: Write>(writer: W, data: &Dataset) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(data.covariate_names.iter().map(String::as_str));
    wtr.write_record(&header)?;
    for rec in &data.records {
        let mut row = vec![
            rec.entry.to_string(),
            rec.arm.code().to_string(),
            rec.infect_time.to_string(),
            u8::from(rec.infected).to_string(),
            rec.r_time.to_string(),
            rec.gamma.code().to_string(),
            if rec.psi_observed {
                u8::from(rec.psi).to_string()
            } else {
                String::new()
            },
        ];
        row.extend(rec.covariates.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_records_path(path: &Path, data: &Dataset) -> Result<(), DataError> {
    write_records(std::fs::File::create(path)?, data)
}
