//! Assay records, input coding and CSV input/output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::censoring::CensorSpec;
use crate::error::{Error, Result};
use crate::points::Points;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Per-column affine coding of the inputs plus the response transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coding {
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
    pub log_response: bool,
    pub y_center: f64,
}

impl Coding {
    pub fn identity(d: usize) -> Self {
        Coding { offsets: vec![0.0; d], scales: vec![1.0; d], log_response: false, y_center: 0.0 }
    }

    /// Min-max coding of every column to `[0, 1]`; the response is
    /// optionally logged, then centered.
    pub fn fit(raw_x: &Points, raw_y: &[f64], log_response: bool) -> Result<Self> {
        let mut offsets = Vec::with_capacity(raw_x.dim());
        let mut scales = Vec::with_capacity(raw_x.dim());
        for (k, (lo, hi)) in raw_x.column_ranges().into_iter().enumerate() {
            if !(hi > lo) {
                return Err(Error::invalid("x", format!("coordinate column {k} is constant")));
            }
            offsets.push(lo);
            scales.push(hi - lo);
        }
        let mut c = Coding { offsets, scales, log_response, y_center: 0.0 };
        let t = c.transform_y(raw_y)?;
        c.y_center = if t.is_empty() { 0.0 } else { t.iter().sum::<f64>() / t.len() as f64 };
        Ok(c)
    }

    fn transform_y(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if !self.log_response {
            return Ok(raw.to_vec());
        }
        raw.iter()
            .map(
                |&v| {
                    if v > 0.0 {
                        Ok(v.ln())
                    } else {
                        Err(Error::invalid("y", format!("cannot take the log of {v}")))
                    }
                },
            )
            .collect()
    }

    pub fn code_x(&self, raw: &Points) -> Result<Points> {
        if raw.dim() != self.offsets.len() {
            return Err(Error::DimensionMismatch { expected: self.offsets.len(), found: raw.dim() });
        }
        let d = raw.dim();
        let data =
            raw.as_slice().iter().enumerate().map(|(i, v)| (v - self.offsets[i % d]) / self.scales[i % d]).collect();
        Points::new(data, d)
    }

    pub fn decode_x(&self, coded: &Points) -> Result<Points> {
        let d = coded.dim();
        if d != self.offsets.len() {
            return Err(Error::DimensionMismatch { expected: self.offsets.len(), found: d });
        }
        let data =
            coded.as_slice().iter().enumerate().map(|(i, v)| v * self.scales[i % d] + self.offsets[i % d]).collect();
        Points::new(data, d)
    }

    pub fn code_y(&self, raw: &[f64]) -> Result<Vec<f64>> {
        Ok(self.transform_y(raw)?.into_iter().map(|v| v - self.y_center).collect())
    }

    pub fn decode_y(&self, coded: &[f64]) -> Vec<f64> {
        coded
            .iter()
            .map(|v| {
                let t = v + self.y_center;
                if self.log_response {
                    t.exp()
                } else {
                    t
                }
            })
            .collect()
    }
}

/// Codes raw inputs and responses, returning the coded data and the coding.
pub fn code_inputs(raw_x: &Points, raw_y: &[f64], log_response: bool) -> Result<(Points, Vec<f64>, Coding)> {
    let coding = Coding::fit(raw_x, raw_y, log_response)?;
    Ok((coding.code_x(raw_x)?, coding.code_y(raw_y)?, coding))
}

/// Coded observations grouped by borehole, with censoring information.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Points,
    /// Responses; censored records hold their threshold.
    pub y: Vec<f64>,
    pub hole_id: Vec<String>,
    pub censor: CensorSpec,
    pub coding: Coding,
}

impl Dataset {
    pub fn new(x: Points, y: Vec<f64>, hole_id: Vec<String>, censor: CensorSpec, coding: Coding) -> Result<Self> {
        let n = x.len();
        for found in [y.len(), hole_id.len(), censor.len()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        Ok(Dataset { x, y, hole_id, censor, coding })
    }

    /// Each record its own hole and nothing censored.
    pub fn uncensored(x: Points, y: Vec<f64>, coding: Coding) -> Result<Self> {
        let n = x.len();
        Dataset::new(x, y, (0..n).map(|i| i.to_string()).collect(), CensorSpec::none(n), coding)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            hole_id: idx.iter().map(|&i| self.hole_id[i].clone()).collect(),
            censor: self.censor.select(idx),
            coding: self.coding.clone(),
        }
    }

    /// Record indices per hole, holes in first-appearance order.
    pub fn holes(&self) -> Vec<(String, Vec<usize>)> {
        let mut pos: BTreeMap<&str, usize> = BTreeMap::new();
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, h) in self.hole_id.iter().enumerate() {
            let k = *pos.entry(h.as_str()).or_insert_with(|| {
                out.push((h.clone(), Vec::new()));
                out.len() - 1
            });
            out[k].1.push(i);
        }
        out
    }
}

/// Column names of an assay CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssaySchema {
    /// When absent every row is its own hole.
    pub hole_id: Option<String>,
    pub coords: Vec<String>,
    pub value: String,
    pub censored: Option<String>,
    pub detection_limit: Option<String>,
}

impl Default for AssaySchema {
    fn default() -> Self {
        AssaySchema {
            hole_id: Some("hole_id".into()),
            coords: vec!["x".into(), "y".into(), "z".into()],
            value: "value".into(),
            censored: Some("censored".into()),
            detection_limit: Some("detection_limit".into()),
        }
    }
}

/// Uncoded assay records as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawAssay {
    pub x: Points,
    pub value: Vec<f64>,
    pub hole_id: Vec<String>,
    pub censor: CensorSpec,
}

impl RawAssay {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Codes the records; censoring thresholds go through the response
    /// transform.
    pub fn code(&self, log_response: bool) -> Result<Dataset> {
        let (x, y, coding) = code_inputs(&self.x, &self.value, log_response)?;
        self.code_with(x, y, coding)
    }

    /// Codes the records with an existing coding.
    pub fn code_using(&self, coding: &Coding) -> Result<Dataset> {
        let x = coding.code_x(&self.x)?;
        let y = coding.code_y(&self.value)?;
        self.code_with(x, y, coding.clone())
    }

    fn code_with(&self, x: Points, y: Vec<f64>, coding: Coding) -> Result<Dataset> {
        let thresholds: Vec<Option<f64>> = self
            .censor
            .threshold
            .iter()
            .map(|t| t.map(|v| coding.code_y(&[v]).map(|c| c[0])).transpose())
            .collect::<Result<_>>()?;
        let censor = CensorSpec::new(self.censor.censored.clone(), thresholds, self.censor.direction)?;
        Dataset::new(x, y, self.hole_id.clone(), censor, coding)
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, message: message.into() }
}

/// Reads an assay CSV. Censored rows take their detection limit as value.
pub fn load_assay_csv(path: &Path, schema: &AssaySchema) -> Result<RawAssay> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    read_assay(file, path, schema)
}

/// [`load_assay_csv`] over any reader; `path` labels diagnostics.
pub fn read_assay<R: std::io::Read>(reader: R, path: &Path, schema: &AssaySchema) -> Result<RawAssay> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_error(path, 1, e.to_string()))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| parse_error(path, 1, format!("missing column `{name}`")))
    };
    let coord_cols: Vec<usize> = schema.coords.iter().map(|c| col(c)).collect::<Result<_>>()?;
    if coord_cols.is_empty() {
        return Err(parse_error(path, 1, "no coordinate columns"));
    }
    let value_col = col(&schema.value)?;
    let hole_col = schema.hole_id.as_deref().map(col).transpose()?;
    let optional = |name: &Option<String>| name.as_deref().and_then(|n| headers.iter().position(|h| h == n));
    let cens_col = optional(&schema.censored);
    let limit_col = optional(&schema.detection_limit);

    let d = coord_cols.len();
    let mut data = Vec::new();
    let mut value = Vec::new();
    let mut hole_id = Vec::new();
    let mut censored = Vec::new();
    let mut threshold = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(row as u64 + 2);
            parse_error(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(row as u64 + 2);
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let number = |c: usize, what: &str| -> Result<f64> {
            let s = cell(c);
            if s.is_empty() {
                return Err(parse_error(path, line, format!("missing {what} in column `{}`", &headers[c])));
            }
            s.parse::<f64>()
                .map_err(|_| parse_error(path, line, format!("non-numeric {what} `{s}` in column `{}`", &headers[c])))
        };
        for &c in &coord_cols {
            data.push(number(c, "coordinate")?);
        }
        let is_cens = match cens_col {
            Some(c) => match cell(c) {
                "" | "0" | "false" | "FALSE" => false,
                "1" | "true" | "TRUE" => true,
                s => return Err(parse_error(path, line, format!("censored flag `{s}` is not 0/1"))),
            },
            None => false,
        };
        if is_cens {
            let lim = match limit_col {
                Some(c) if !cell(c).is_empty() => number(c, "detection limit")?,
                _ => return Err(parse_error(path, line, "censored row without a detection limit")),
            };
            value.push(lim);
            threshold.push(Some(lim));
        } else {
            value.push(number(value_col, "value")?);
            threshold.push(None);
        }
        censored.push(is_cens);
        hole_id.push(match hole_col {
            Some(c) => cell(c).to_string(),
            None => row.to_string(),
        });
    }
    Ok(RawAssay {
        x: Points::new(data, d)?,
        value,
        hole_id,
        censor: CensorSpec::new(censored, threshold, Default::default())?,
    })
}

/// Reads a headed CSV of numeric columns, returning the named columns as
/// points.
pub fn load_points_csv(path: &Path, columns: &[String]) -> Result<Points> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| parse_error(path, 1, e.to_string()))?.clone();
    let cols: Vec<usize> = columns
        .iter()
        .map(|n| {
            headers.iter().position(|h| h == n).ok_or_else(|| parse_error(path, 1, format!("missing column `{n}`")))
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_error(path, row as u64 + 2, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(row as u64 + 2);
        for &c in &cols {
            let s = rec.get(c).unwrap_or("");
            data.push(s.parse::<f64>().map_err(|_| {
                parse_error(path, line, format!("non-numeric value `{s}` in column `{}`", &headers[c]))
            })?);
        }
    }
    Points::new(data, cols.len())
}

/// Writes records in the assay format. `imputed` adds a provenance column.
pub fn write_assay_csv<W: Write>(
    mut w: W,
    coord_names: &[String],
    x: &Points,
    value: &[f64],
    hole_id: &[String],
    censor: &CensorSpec,
    imputed: Option<&[bool]>,
) -> std::io::Result<()> {
    write!(w, "hole_id")?;
    for c in coord_names {
        write!(w, ",{c}")?;
    }
    write!(w, ",value,censored,detection_limit")?;
    if imputed.is_some() {
        write!(w, ",imputed")?;
    }
    writeln!(w)?;
    for i in 0..x.len() {
        write!(w, "{}", hole_id[i])?;
        for v in x.row(i) {
            write!(w, ",{}", fmt_f64(*v))?;
        }
        write!(w, ",{},{}", fmt_f64(value[i]), u8::from(censor.censored[i]))?;
        match censor.threshold[i] {
            Some(t) => write!(w, ",{}", fmt_f64(t))?,
            None => write!(w, ",")?,
        }
        if let Some(imp) = imputed {
            write!(w, ",{}", u8::from(imp[i]))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Writes `coords..., mean, var[, error_code]`.
pub fn write_predictions_csv<W: Write>(
    mut w: W,
    coord_names: &[String],
    sites: &Points,
    mean: &[f64],
    var: &[f64],
    error_codes: Option<&[Option<u8>]>,
) -> std::io::Result<()> {
    writeln!(w, "{},mean,var{}", coord_names.join(","), if error_codes.is_some() { ",error_code" } else { "" })?;
    for i in 0..sites.len() {
        let coords: Vec<String> = sites.row(i).iter().map(|v| fmt_f64(*v)).collect();
        write!(w, "{},{},{}", coords.join(","), fmt_f64(mean[i]), fmt_f64(var[i]))?;
        if let Some(codes) = error_codes {
            match codes[i] {
                Some(c) => write!(w, ",{c}")?,
                None => write!(w, ",0")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}
