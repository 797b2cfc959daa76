//! CSV ingestion, model files, and the band/study output tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::estimator::CausalDrfModel;
use crate::inference::WitnessBand;
use crate::simulation::StudyReport;

/// Schema tag written into every model file.
pub const MODEL_SCHEMA: &str = "causal-drf-model/v1";

/// Which CSV columns hold the covariates, treatment and outcomes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSchema {
    pub covariate_columns: Vec<String>,
    pub treatment_column: String,
    pub outcome_columns: Vec<String>,
    /// Center and scale each outcome column before fitting.
    #[serde(default)]
    pub standardize_outcomes: bool,
}

impl DataSchema {
    pub fn validate(&self) -> Result<()> {
        if self.covariate_columns.is_empty() || self.outcome_columns.is_empty() {
            return Err(Error::InvalidConfig(
                "schema needs at least one covariate and one outcome column".into(),
            ));
        }
        let mut all: Vec<&str> = self
            .covariate_columns
            .iter()
            .chain(&self.outcome_columns)
            .map(String::as_str)
            .chain([self.treatment_column.as_str()])
            .collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("schema columns must be distinct".into()));
        }
        Ok(())
    }
}

/// Per-column affine map `z = (y − mean) / sd`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    pub fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.sd
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub outcome_scaling: Option<Vec<Standardization>>,
}

fn parse_cell(value: &str, row: usize, column: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            value: value.to_string(),
        })
}

/// Reads a dataset from CSV. Rows are numbered from 1, excluding the header.
pub fn read_dataset<R: Read>(reader: R, schema: &DataSchema) -> Result<LoadedData> {
    schema.validate()?;
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let position = |name: &String| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))
    };
    let cov: Vec<usize> = schema.covariate_columns.iter().map(position).collect::<Result<_>>()?;
    let out: Vec<usize> = schema.outcome_columns.iter().map(position).collect::<Result<_>>()?;
    let treat = position(&schema.treatment_column)?;

    let (mut x, mut w, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (r, record) in csv.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |i: usize| record.get(i).unwrap_or("");
        for (&i, name) in cov.iter().zip(&schema.covariate_columns) {
            x.push(parse_cell(cell(i), row, name)?);
        }
        for (&i, name) in out.iter().zip(&schema.outcome_columns) {
            y.push(parse_cell(cell(i), row, name)?);
        }
        let t = cell(treat);
        let flag = match t.trim().parse::<f64>() {
            Ok(v) if v == 0.0 => false,
            Ok(v) if v == 1.0 => true,
            Ok(_) => {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: t.to_string(),
                })
            }
            Err(_) => {
                return Err(Error::Parse {
                    row,
                    column: schema.treatment_column.clone(),
                    value: t.to_string(),
                })
            }
        };
        w.push(flag);
    }
    let n = w.len();
    let mut y = Matrix::new(n, out.len(), y)?;
    let outcome_scaling = if schema.standardize_outcomes {
        Some(standardize(&mut y)?)
    } else {
        None
    };
    Ok(LoadedData {
        dataset: Dataset::new(Matrix::new(n, cov.len(), x)?, w, y)?,
        outcome_scaling,
    })
}

pub fn load_csv(path: impl AsRef<Path>, schema: &DataSchema) -> Result<LoadedData> {
    read_dataset(BufReader::new(File::open(path)?), schema)
}

/// Standardizes each column in place with its mean and sample sd.
pub fn standardize(y: &mut Matrix) -> Result<Vec<Standardization>> {
    let n = y.rows();
    if n < 2 {
        return Err(Error::InsufficientData("standardizing needs two rows".into()));
    }
    let scaling: Vec<Standardization> = (0..y.cols())
        .map(|j| {
            let mean = (0..n).map(|i| y.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (y.get(i, j) - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Standardization { mean, sd: var.sqrt() }
        })
        .collect();
    if let Some(j) = scaling.iter().position(|s| s.sd <= 0.0) {
        return Err(Error::InvalidConfig(format!("outcome column {j} is constant")));
    }
    for i in 0..n {
        for (v, s) in y.row_mut(i).iter_mut().zip(&scaling) {
            *v = s.forward(*v);
        }
    }
    Ok(scaling)
}

/// Reads a grid of outcome points: a CSV with a header and one column per
/// outcome dimension.
pub fn read_grid<R: Read>(reader: R) -> Result<Matrix> {
    let mut csv = csv::Reader::from_reader(reader);
    let cols = csv.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, record) in csv.records().enumerate() {
        let record = record?;
        for (j, v) in record.iter().enumerate() {
            data.push(parse_cell(v, r + 1, &format!("{}", j + 1))?);
        }
        rows += 1;
    }
    Matrix::new(rows, cols, data)
}

/// Everything persisted in a model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: CausalDrfModel,
    /// Present when outcomes were standardized before fitting.
    #[serde(default)]
    pub outcome_scaling: Option<Vec<Standardization>>,
}

#[derive(Serialize)]
struct Envelope<'a> {
    schema: &'a str,
    content_hash: String,
    dataset_fingerprint: String,
    payload: &'a ModelFile,
}

#[derive(Deserialize)]
struct Header {
    schema: String,
}

#[derive(Deserialize)]
struct OwnedEnvelope {
    content_hash: String,
    payload: ModelFile,
}

fn sha256_hex<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_model<W: Write>(file: &ModelFile, writer: W) -> Result<()> {
    use crate::estimator::WeightModel;
    let envelope = Envelope {
        schema: MODEL_SCHEMA,
        content_hash: sha256_hex(file)?,
        dataset_fingerprint: sha256_hex(file.model.dataset())?,
        payload: file,
    };
    serde_json::to_writer(writer, &envelope)?;
    Ok(())
}

/// Parses a model file, checking its schema tag and content hash.
pub fn read_model(bytes: &[u8]) -> Result<ModelFile> {
    let header: Header =
        serde_json::from_slice(bytes).map_err(|e| Error::CorruptModel(e.to_string()))?;
    if header.schema != MODEL_SCHEMA {
        return Err(Error::SchemaVersionMismatch {
            found: header.schema,
            expected: MODEL_SCHEMA.into(),
        });
    }
    let envelope: OwnedEnvelope =
        serde_json::from_slice(bytes).map_err(|e| Error::CorruptModel(e.to_string()))?;
    if sha256_hex(&envelope.payload)? != envelope.content_hash {
        return Err(Error::CorruptModel("content hash does not match".into()));
    }
    Ok(envelope.payload)
}

pub fn save_model(file: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model(file, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    read_model(&std::fs::read(path)?)
}

#[derive(Serialize)]
struct BandHeader {
    statistic: f64,
    q: f64,
    alpha: f64,
    reject: bool,
    half_width: f64,
}

/// Writes the band as CSV (`y_1..y_d, estimate, lower, upper`) preceded by a
/// `# {json}` line with the test summary. Grid points are mapped back to the
/// original outcome units when `scaling` is given.
pub fn write_band_csv<W: Write>(band: &WitnessBand, scaling: Option<&[Standardization]>, mut out: W) -> Result<()> {
    let header = BandHeader {
        statistic: band.test.statistic,
        q: band.test.quantile,
        alpha: band.test.alpha,
        reject: band.test.reject,
        half_width: band.half_width,
    };
    writeln!(out, "# {}", serde_json::to_string(&header)?)?;
    let d = band.grid.cols();
    let mut csv = csv::Writer::from_writer(out);
    let mut names: Vec<String> = (1..=d).map(|j| format!("y_{j}")).collect();
    names.extend(["estimate", "lower", "upper"].map(String::from));
    csv.write_record(&names)?;
    for (i, y) in band.grid.iter_rows().enumerate() {
        let mut record: Vec<String> = y
            .iter()
            .enumerate()
            .map(|(j, &v)| scaling.map_or(v, |s| s[j].inverse(v)).to_string())
            .collect();
        record.push(band.estimate[i].to_string());
        record.push(band.lower[i].to_string());
        record.push(band.upper[i].to_string());
        csv.write_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}

/// Table with one row per study: regime, n, method, MAE and coverage, plus
/// the coverage standard error, rejection rate and number of replications.
pub fn write_study_csv<W: Write>(reports: &[StudyReport], out: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record([
        "regime",
        "n",
        "method",
        "mae",
        "coverage",
        "coverage_se",
        "rejection_rate",
        "n_sims",
    ])?;
    for r in reports {
        csv.write_record([
            r.regime.to_string(),
            r.n.to_string(),
            r.method.to_string(),
            r.mae_mean.to_string(),
            r.coverage_rate.to_string(),
            r.coverage_se.to_string(),
            r.rejection_rate.to_string(),
            r.n_sims.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> DataSchema {
        DataSchema {
            covariate_columns: vec!["x1".into(), "x2".into()],
            treatment_column: "w".into(),
            outcome_columns: vec!["y".into()],
            standardize_outcomes: false,
        }
    }

    #[test]
    fn reads_toy_csv() {
        let csv = "x1,x2,w,y\n0.1,0.2,1,3.5\n0.3,0.4,0,1.5\n0.5,0.6,1,2\n";
        let data = read_dataset(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(data.dataset.n(), 3);
        assert_eq!(data.dataset.p(), 2);
        assert_eq!(data.dataset.w(), &[true, false, true]);
        assert_eq!(data.dataset.y().get(1, 0), 1.5);
        assert!(data.outcome_scaling.is_none());
    }

    #[test]
    fn non_binary_treatment() {
        let csv = "x1,x2,w,y\n0.1,0.2,1,3.5\n0.3,0.4,2,1.5\n";
        match read_dataset(csv.as_bytes(), &schema()) {
            Err(Error::NonBinaryTreatment { row, value }) => {
                assert_eq!(row, 2);
                assert_eq!(value, "2");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_name_row_and_column() {
        let csv = "x1,x2,w,y\n0.1,abc,1,3.5\n";
        match read_dataset(csv.as_bytes(), &schema()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "x2");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column() {
        let csv = "x1,w,y\n0.1,1,3.5\n";
        assert!(matches!(
            read_dataset(csv.as_bytes(), &schema()),
            Err(Error::MissingColumn(c)) if c == "x2"
        ));
    }

    #[test]
    fn overlapping_schema_is_rejected() {
        let mut s = schema();
        s.outcome_columns = vec!["x1".into()];
        assert!(s.validate().is_err());
    }

    #[test]
    fn standardized_moments() {
        let csv = "x1,x2,w,y,z\n0,0,1,3.5,1\n0,0,0,1.5,2\n0,0,1,2,4\n0,0,0,10,8\n";
        let mut s = schema();
        s.outcome_columns = vec!["y".into(), "z".into()];
        s.standardize_outcomes = true;
        let data = read_dataset(csv.as_bytes(), &s).unwrap();
        let y = data.dataset.y();
        for j in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| y.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
            assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        let scaling = data.outcome_scaling.unwrap();
        assert!((scaling[0].inverse(y.get(0, 0)) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn grid_csv() {
        let g = read_grid("a,b\n1,2\n3,4\n5,6\n".as_bytes()).unwrap();
        assert_eq!((g.rows(), g.cols()), (3, 2));
        assert_eq!(g.get(2, 1), 6.0);
    }
}
