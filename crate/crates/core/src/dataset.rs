//! Area-level data for the Fay-Herriot model and its CSV representation.
//!
//! The CSV layout is a header `area,y,v,x1,...,xr` followed by one row per
//! area. Area ids are opaque strings; all other fields are finite reals.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{FhError, Result};

/// One small area: direct estimate, known sampling variance, covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Area {
    pub id: String,
    pub y: f64,
    pub v: f64,
    pub x: Vec<f64>,
}

/// Immutable collection of areas with a full-rank design.
///
/// Cloning is cheap: the design and variances are shared, only `y` is owned.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ids: Arc<Vec<String>>,
    x: Arc<DMatrix<f64>>,
    v: Arc<Vec<f64>>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(areas: Vec<Area>) -> Result<Self> {
        let k = areas.len();
        let r = areas.first().map(|a| a.x.len()).unwrap_or(0);
        if r == 0 {
            return Err(FhError::InvalidArgument(
                "at least one covariate column is required".into(),
            ));
        }
        if k < r + 2 {
            return Err(FhError::TooFewAreas { k, needed: r + 2 });
        }
        for a in &areas {
            if a.x.len() != r {
                return Err(FhError::InvalidArgument(format!(
                    "area `{}` has {} covariates, expected {r}",
                    a.id,
                    a.x.len()
                )));
            }
            if !(a.v > 0.0) || !a.v.is_finite() {
                return Err(FhError::NonPositiveVariance(a.id.clone()));
            }
            if !a.y.is_finite() || a.x.iter().any(|x| !x.is_finite()) {
                return Err(FhError::InvalidArgument(format!(
                    "area `{}` has a non-finite value",
                    a.id
                )));
            }
        }
        let x = DMatrix::from_fn(k, r, |i, j| areas[i].x[j]);
        if !full_column_rank(&x) {
            return Err(FhError::RankDeficientDesign);
        }
        let y = DVector::from_iterator(k, areas.iter().map(|a| a.y));
        let v = areas.iter().map(|a| a.v).collect();
        let ids = areas.into_iter().map(|a| a.id).collect();
        Ok(Self {
            ids: Arc::new(ids),
            x: Arc::new(x),
            v: Arc::new(v),
            y,
        })
    }

    /// Same areas and design with new direct estimates.
    pub fn with_y(&self, y: &[f64]) -> Result<Self> {
        if y.len() != self.k() {
            return Err(FhError::InvalidArgument(format!(
                "expected {} responses, got {}",
                self.k(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(FhError::InvalidArgument("non-finite response".into()));
        }
        Ok(Self {
            ids: Arc::clone(&self.ids),
            x: Arc::clone(&self.x),
            v: Arc::clone(&self.v),
            y: DVector::from_column_slice(y),
        })
    }

    pub fn k(&self) -> usize {
        self.y.len()
    }

    pub fn r(&self) -> usize {
        self.x.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn x_row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    pub fn area(&self, i: usize) -> Area {
        Area {
            id: self.ids[i].clone(),
            y: self.y[i],
            v: self.v[i],
            x: self.x.row(i).iter().copied().collect(),
        }
    }

    pub fn areas(&self) -> Vec<Area> {
        (0..self.k()).map(|i| self.area(i)).collect()
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.k() {
            Ok(())
        } else {
            Err(FhError::AreaIndex { index, k: self.k() })
        }
    }

    pub fn max_v(&self) -> f64 {
        self.v.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn median_v(&self) -> f64 {
        let mut v = self.v.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// True when every sampling variance is identical.
    pub fn is_balanced(&self) -> bool {
        self.v.iter().all(|&v| v == self.v[0])
    }
}

fn full_column_rank(x: &DMatrix<f64>) -> bool {
    let svd = x.clone().svd(false, false);
    let s = &svd.singular_values;
    let smax = s.max();
    if !(smax > 0.0) {
        return false;
    }
    let cutoff = smax * f64::EPSILON * x.nrows().max(x.ncols()) as f64;
    s.iter().all(|&sv| sv > cutoff)
}

/// Reads a dataset from CSV with header `area,y,v,x1,...,xr`.
pub fn load_dataset<R: Read>(source: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(1, e))?,
        None => {
            return Err(FhError::Parse {
                line: 1,
                message: "empty input".into(),
            })
        }
    };
    let r = check_header(&header)?;

    let mut areas = Vec::new();
    for (n, rec) in records.enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| csv_error(line, e))?;
        if rec.len() != r + 3 {
            return Err(FhError::Parse {
                line,
                message: format!("expected {} fields, found {}", r + 3, rec.len()),
            });
        }
        let num = |j: usize| -> Result<f64> {
            let field = &rec[j];
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(FhError::Parse {
                    line,
                    message: format!("field {} (`{field}`) is not a finite number", j + 1),
                }),
            }
        };
        areas.push(Area {
            id: rec[0].to_string(),
            y: num(1)?,
            v: num(2)?,
            x: (0..r).map(|j| num(3 + j)).collect::<Result<_>>()?,
        });
    }
    Dataset::new(areas)
}

fn check_header(header: &csv::StringRecord) -> Result<usize> {
    let bad = |message: String| FhError::Parse { line: 1, message };
    if header.len() < 4 {
        return Err(bad("header must be `area,y,v,x1,...,xr` with r >= 1".into()));
    }
    for (j, want) in ["area", "y", "v"].iter().enumerate() {
        if &header[j] != *want {
            return Err(bad(format!("column {} must be `{want}`, found `{}`", j + 1, &header[j])));
        }
    }
    let r = header.len() - 3;
    for j in 0..r {
        let want = format!("x{}", j + 1);
        if header[3 + j] != want {
            return Err(bad(format!("column {} must be `{want}`, found `{}`", j + 4, &header[3 + j])));
        }
    }
    Ok(r)
}

fn csv_error(line: usize, e: csv::Error) -> FhError {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(line);
    FhError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Writes a dataset in the same CSV layout `load_dataset` reads.
///
/// Floats use the shortest representation that round-trips exactly.
pub fn write_dataset<W: Write>(data: &Dataset, sink: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["area".to_string(), "y".into(), "v".into()];
    header.extend((1..=data.r()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..data.k() {
        let mut row = vec![data.ids()[i].clone(), data.y()[i].to_string(), data.v()[i].to_string()];
        row.extend(data.x().row(i).iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()
}
