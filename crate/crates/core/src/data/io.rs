//! CSV formats.
//!
//! Ratings: header `obs_id,participant_id,face_id,trait_id,rating`, one
//! observation per line. Features: no header, one entity per line. Both
//! readers stream records; floats are written in shortest round-trip form.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord};
use ndarray::Array2;

use crate::model::{Cell, Observation, RatingsTable};
use crate::{Error, Result};

pub const RATINGS_HEADER: [&str; 5] = ["obs_id", "participant_id", "face_id", "trait_id", "rating"];

#[derive(Debug, Clone)]
pub struct LoadedRatings {
    pub table: RatingsTable,
    /// Ratings of exactly 0 or 100 moved inside the open interval.
    pub clamped: usize,
}

fn line_of(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn column(headers: &StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: format!("missing column {name:?}"),
        })
}

/// Reads a ratings file. Ratings of exactly 0 and 100 become `100 * delta`
/// and `100 * (1 - delta)`.
pub fn load_ratings(path: impl AsRef<Path>, logit_clamp: f64) -> Result<LoadedRatings> {
    let path = path.as_ref();
    let mut reader = ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let cols: Vec<usize> = RATINGS_HEADER
        .iter()
        .map(|name| column(&headers, name, path))
        .collect::<Result<_>>()?;

    let mut observations = Vec::new();
    let mut seen = HashSet::new();
    let mut clamped = 0;
    let mut record = StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = line_of(&record);
        let field = |i: usize| record.get(cols[i]).unwrap_or("");
        let parse_id = |i: usize| -> Result<usize> {
            field(i).parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                field: RATINGS_HEADER[i].to_string(),
                value: field(i).to_string(),
            })
        };
        let obs_id = parse_id(0)?;
        let face_id = parse_id(2)?;
        let trait_id = parse_id(3)?;
        let rating: f64 = match field(4).parse::<f64>() {
            Ok(v) if !v.is_nan() => v,
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    field: "rating".into(),
                    value: field(4).to_string(),
                })
            }
        };
        if !(0.0..=100.0).contains(&rating) {
            return Err(Error::Range {
                path: path.to_path_buf(),
                line,
                rating,
            });
        }
        let rating = if rating == 0.0 {
            clamped += 1;
            100.0 * logit_clamp
        } else if rating == 100.0 {
            clamped += 1;
            100.0 * (1.0 - logit_clamp)
        } else {
            rating
        };
        if !seen.insert(obs_id) {
            return Err(Error::Integrity(format!(
                "{}:{line}: duplicate obs_id {obs_id}",
                path.display()
            )));
        }
        observations.push(Observation {
            obs_id,
            participant_id: field(1).to_string(),
            face_id,
            trait_id,
            rating,
        });
    }
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} ratings at 0 or 100", path.display());
    }
    Ok(LoadedRatings {
        table: RatingsTable::new(observations)?,
        clamped,
    })
}

pub fn write_ratings(path: impl AsRef<Path>, table: &RatingsTable) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", RATINGS_HEADER.join(","))?;
    for o in table.observations() {
        writeln!(
            out,
            "{},{},{},{},{}",
            o.obs_id, o.participant_id, o.face_id, o.trait_id, o.rating
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a headerless numeric matrix.
pub fn load_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    let mut record = StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = line_of(&record);
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    msg: format!("line {line} has {} values, expected {w}", record.len()),
                })
            }
            Some(_) => {}
        }
        for token in record.iter() {
            let v: f64 = token.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                field: "feature".into(),
                value: token.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::Value {
                    path: path.to_path_buf(),
                    line,
                    value: token.to_string(),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        msg: "no rows".into(),
    })?;
    Array2::from_shape_vec((rows, width), values).map_err(|e| Error::Shape(e.to_string()))
}

pub fn write_features(path: impl AsRef<Path>, matrix: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in matrix.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.write_all(b",")?;
            }
            write!(out, "{v}")?;
            first = false;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Cell predictions as `face_id,trait_id,mean_r_hat`.
pub fn write_predictions(path: impl AsRef<Path>, predictions: &BTreeMap<Cell, f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "face_id,trait_id,mean_r_hat")?;
    for (&(f, t), v) in predictions {
        writeln!(out, "{f},{t},{v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<HashMap<Cell, f64>> {
    let path = path.as_ref();
    let mut reader = ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let cols = [
        column(&headers, "face_id", path)?,
        column(&headers, "trait_id", path)?,
        column(&headers, "mean_r_hat", path)?,
    ];
    let mut out = HashMap::new();
    let mut record = StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = line_of(&record);
        let get = |i: usize| record.get(cols[i]).unwrap_or("");
        let bad = |i: usize, name: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            field: name.to_string(),
            value: get(i).to_string(),
        };
        let f: usize = get(0).parse().map_err(|_| bad(0, "face_id"))?;
        let t: usize = get(1).parse().map_err(|_| bad(1, "trait_id"))?;
        let v: f64 = get(2).parse().map_err(|_| bad(2, "mean_r_hat"))?;
        if out.insert((f, t), v).is_some() {
            return Err(Error::Integrity(format!(
                "duplicate prediction for cell ({f}, {t})"
            )));
        }
    }
    Ok(out)
}
