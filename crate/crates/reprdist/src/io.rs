//! File formats.
//!
//! Model JSON: `{schema_version?, M, input_ids, label_ids, embeddings,
//! unembeddings, weights?}` with both matrices flattened row-major.
//!
//! CSV tables start with a `# reprdist-schema v1 <table>` line, then a header
//! row in a fixed column order. Missing values are empty fields.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bound_lab::SweepPoint;
use crate::constructions::RhoRecord;
use crate::model_core::{CondLogProb, ModelTable};
use crate::synth_train::mlp::Linear;
use crate::synth_train::{Classifier, Mlp, TrainConfig, TrainedModel, WidthRow};
use crate::{moments, Error, Result, VERSION};

pub const SCHEMA_VERSION: u32 = 1;

pub const TABLE1_COLUMNS: [&str; 6] = ["rho", "d_kl_pq", "d_kl_qp", "d_llv", "m_cca", "max_d_svd"];
pub const BOUND_SWEEP_COLUMNS: [&str; 7] = ["param", "epsilon", "lhs_emb", "lhs_unemb", "rhs", "holds", "vacuous"];
pub const WIDTH_SWEEP_COLUMNS: [&str; 7] =
    ["c", "width", "n_retained", "mean_d_llv", "std_d_llv", "mean_max_d_svd", "std_max_d_svd"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    #[serde(rename = "M")]
    pub m: usize,
    pub input_ids: Vec<String>,
    pub label_ids: Vec<String>,
    pub embeddings: Vec<f64>,
    pub unembeddings: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl ModelFile {
    pub fn from_table(model: &ModelTable, weights: Option<&DVector<f64>>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            m: model.dim(),
            input_ids: model.input_ids().to_vec(),
            label_ids: model.label_ids().to_vec(),
            embeddings: row_major(model.embeddings()),
            unembeddings: row_major(model.unembeddings()),
            weights: weights.map(|w| w.as_slice().to_vec()),
        }
    }

    pub fn to_table(&self) -> Result<(ModelTable, Option<DVector<f64>>)> {
        let (n, k, m) = (self.input_ids.len(), self.label_ids.len(), self.m);
        let mut errs = Vec::new();
        if m == 0 {
            errs.push("M: must be positive".to_string());
        }
        if self.embeddings.len() != n * m {
            errs.push(format!("embeddings: expected {n}×{m} = {} values, got {}", n * m, self.embeddings.len()));
        }
        if self.unembeddings.len() != k * m {
            errs.push(format!("unembeddings: expected {k}×{m} = {} values, got {}", k * m, self.unembeddings.len()));
        }
        if let Some(w) = &self.weights {
            if w.len() != n {
                errs.push(format!("weights: expected {n} values, got {}", w.len()));
            }
        }
        if !errs.is_empty() {
            return Err(Error::Schema(errs));
        }
        let f = DMatrix::from_row_slice(n, m, &self.embeddings);
        let g = DMatrix::from_row_slice(k, m, &self.unembeddings);
        let table = ModelTable::with_ids(f, g, self.input_ids.clone(), self.label_ids.clone())?;
        let weights = match &self.weights {
            Some(w) => {
                let w = DVector::from_vec(w.clone());
                moments::check_weights(&w, n)?;
                Some(w)
            }
            None => None,
        };
        Ok((table, weights))
    }
}

fn check_field(
    obj: &serde_json::Map<String, Value>,
    key: &str,
    kind: &str,
    ok: fn(&Value) -> bool,
    errs: &mut Vec<String>,
) {
    match obj.get(key) {
        None => errs.push(format!("{key}: missing")),
        Some(v) if !ok(v) => errs.push(format!("{key}: expected {kind}")),
        _ => {}
    }
}

fn is_numbers(v: &Value) -> bool {
    v.as_array().is_some_and(|a| a.iter().all(Value::is_number))
}

fn is_strings(v: &Value) -> bool {
    v.as_array().is_some_and(|a| a.iter().all(Value::is_string))
}

/// Parses model JSON, reporting every malformed field at once.
pub fn parse_model_json(text: &str) -> Result<(ModelTable, Option<DVector<f64>>)> {
    let value: Value = serde_json::from_str(text)?;
    let Some(obj) = value.as_object() else {
        return Err(Error::Schema(vec!["top level: expected an object".into()]));
    };
    let mut errs = Vec::new();
    check_field(obj, "M", "a positive integer", |v| v.as_u64().is_some_and(|m| m > 0), &mut errs);
    check_field(obj, "input_ids", "an array of strings", is_strings, &mut errs);
    check_field(obj, "label_ids", "an array of strings", is_strings, &mut errs);
    check_field(obj, "embeddings", "an array of numbers", is_numbers, &mut errs);
    check_field(obj, "unembeddings", "an array of numbers", is_numbers, &mut errs);
    if obj.get("weights").is_some_and(|w| !w.is_null() && !is_numbers(w)) {
        errs.push("weights: expected an array of numbers".into());
    }
    if let Some(v) = obj.get("schema_version") {
        if v.as_u64() != Some(u64::from(SCHEMA_VERSION)) {
            errs.push(format!("schema_version: expected {SCHEMA_VERSION}, got {v}"));
        }
    }
    if !errs.is_empty() {
        return Err(Error::Schema(errs));
    }
    let mut obj = obj.clone();
    obj.entry("schema_version").or_insert(Value::from(SCHEMA_VERSION));
    let file: ModelFile = serde_json::from_value(Value::Object(obj))?;
    file.to_table()
}

pub fn read_model(path: &Path) -> Result<(ModelTable, Option<DVector<f64>>)> {
    parse_model_json(&fs::read_to_string(path)?)
}

pub fn write_model(path: &Path, model: &ModelTable, weights: Option<&DVector<f64>>) -> Result<()> {
    write_json(path, &ModelFile::from_table(model, weights))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Envelope for every JSON report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<C, R> {
    pub version: String,
    pub command: String,
    pub config: C,
    pub result: R,
}

impl<C, R> Report<C, R> {
    pub fn new(command: &str, config: C, result: R) -> Self {
        Self { version: VERSION.to_string(), command: command.to_string(), config, result }
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_writer<W: Write>(mut out: W, table: &str, columns: &[&str]) -> Result<csv::Writer<W>> {
    writeln!(out, "# reprdist-schema v{SCHEMA_VERSION} {table}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns)?;
    Ok(w)
}

pub fn write_table1_csv<W: Write>(out: W, rows: &[RhoRecord]) -> Result<()> {
    let mut w = csv_writer(out, "table1", &TABLE1_COLUMNS)?;
    for r in rows {
        w.write_record([num(r.rho), num(r.d_kl_pq), num(r.d_kl_qp), num(r.d_llv), num(r.m_cca), num(r.max_d_svd)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bound_sweep_csv<W: Write>(out: W, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv_writer(out, "bound-sweep", &BOUND_SWEEP_COLUMNS)?;
    for p in points {
        let c = &p.certificate;
        w.write_record([
            num(p.sigma),
            num(c.epsilon),
            num(c.lhs_emb),
            num(c.lhs_unemb),
            num(c.rhs),
            c.holds.map(|h| h.to_string()).unwrap_or_default(),
            c.vacuous.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_width_sweep_csv<W: Write>(out: W, rows: &[WidthRow]) -> Result<()> {
    let mut w = csv_writer(out, "width-sweep", &WIDTH_SWEEP_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.c.to_string(),
            r.width.to_string(),
            r.n_retained.to_string(),
            opt(r.mean_d_llv),
            opt(r.std_d_llv),
            opt(r.mean_max_d_svd),
            opt(r.std_max_d_svd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per input: its id, `p_D` weight, then `log p(y|x)` per label.
pub fn write_cond_log_prob_csv<W: Write>(out: W, p: &CondLogProb, model: &ModelTable) -> Result<()> {
    let mut cols = vec!["input_id".to_string(), "weight".to_string()];
    cols.extend(model.label_ids().iter().cloned());
    let colrefs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut w = csv_writer(out, "cond-log-prob", &colrefs)?;
    for i in 0..p.n_inputs() {
        let mut rec = vec![model.input_ids()[i].clone(), num(p.weights()[i])];
        rec.extend((0..p.n_labels()).map(|y| num(p.get(i, y))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a schema-tagged CSV into its header and string records.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let first = text.lines().next().unwrap_or_default();
    if !first.starts_with(&format!("# reprdist-schema v{SCHEMA_VERSION} ")) {
        return Err(Error::Schema(vec![format!("first line: expected a v{SCHEMA_VERSION} schema tag")]));
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    /// `out` rows of `in` weights.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Trained-classifier checkpoint with row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub c: usize,
    pub leaky_slope: f64,
    pub layers: Vec<LayerFile>,
    pub unembeddings: Vec<Vec<f64>>,
    pub embedding_norm: Option<f64>,
    pub accuracy: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_curve: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Schema(vec![format!("{what}: expected a non-empty rectangular matrix")]));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl CheckpointFile {
    pub fn from_model(m: &TrainedModel) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config: m.config.clone(),
            c: m.c,
            leaky_slope: m.classifier.mlp.slope,
            layers: m
                .classifier
                .mlp
                .layers
                .iter()
                .map(|l| LayerFile { w: rows_of(&l.w), b: l.b.as_slice().to_vec() })
                .collect(),
            unembeddings: rows_of(&m.classifier.unembeddings),
            embedding_norm: m.classifier.embedding_norm,
            accuracy: m.accuracy,
            initial_loss: m.initial_loss,
            final_loss: m.final_loss,
            loss_curve: m.loss_curve.clone(),
        }
    }

    pub fn to_model(&self) -> Result<TrainedModel> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let w = from_rows(&l.w, &format!("layers[{i}].w"))?;
                if l.b.len() != w.nrows() {
                    return Err(Error::Schema(vec![format!("layers[{i}].b: expected {} values", w.nrows())]));
                }
                Ok(Linear { w, b: DVector::from_vec(l.b.clone()) })
            })
            .collect::<Result<Vec<_>>>()?;
        let classifier = Classifier {
            mlp: Mlp { layers, slope: self.leaky_slope },
            unembeddings: from_rows(&self.unembeddings, "unembeddings")?,
            embedding_norm: self.embedding_norm,
        };
        if !classifier.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(TrainedModel {
            config: self.config.clone(),
            c: self.c,
            classifier,
            loss_curve: self.loss_curve.clone(),
            initial_loss: self.initial_loss,
            final_loss: self.final_loss,
            accuracy: self.accuracy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ModelTable {
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.5]);
        let g = DMatrix::from_row_slice(3, 2, &[0.2, 0.1, -0.3, 0.4, 0.0, -1.0]);
        ModelTable::new(f, g).unwrap()
    }

    #[test]
    fn model_json_is_row_major() {
        let text = serde_json::to_string(&ModelFile::from_table(&table(), None)).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["embeddings"][1], 0.0);
        assert_eq!(v["embeddings"][4], -1.0);
        assert_eq!(v["M"], 2);
        assert_eq!(parse_model_json(&text).unwrap().0, table());
    }

    #[test]
    fn schema_errors_name_every_bad_field() {
        let text = r#"{"M": 2, "input_ids": ["a"], "label_ids": 3, "embeddings": [1, "x"]}"#;
        let Err(Error::Schema(errs)) = parse_model_json(text) else { panic!("expected a schema error") };
        let fields: Vec<&str> = errs.iter().map(|e| e.split(':').next().unwrap()).collect();
        assert_eq!(fields, vec!["label_ids", "embeddings", "unembeddings"]);
    }

    #[test]
    fn length_mismatch_is_a_schema_error() {
        let mut f = ModelFile::from_table(&table(), None);
        f.unembeddings.pop();
        f.weights = Some(vec![0.5, 0.5]);
        let Err(Error::Schema(errs)) = f.to_table() else { panic!("expected a schema error") };
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn csv_starts_with_schema_tag() {
        let mut buf = Vec::new();
        write_width_sweep_csv(
            &mut buf,
            &[WidthRow {
                c: 4,
                width: 16,
                n_retained: 2,
                mean_d_llv: Some(0.5),
                std_d_llv: None,
                mean_max_d_svd: Some(0.25),
                std_max_d_svd: None,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# reprdist-schema v1 width-sweep\n"));
        let (h, rows) = read_csv(&text).unwrap();
        assert_eq!(h, WIDTH_SWEEP_COLUMNS);
        assert_eq!(rows, vec![vec!["4", "16", "2", "0.5", "", "0.25", ""]]);
    }
}
