//! Audit datasets: rows of `(x, y, fhat)` and their CSV representation.
//!
//! A dataset is immutable once built. Features are stored row-major in a
//! single buffer so Gram construction can slice rows without copying.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// One audited prediction: audit features, binary outcome and model score.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub x: Vec<f64>,
    pub y: u8,
    pub fhat: f64,
}

impl AuditRecord {
    pub fn new(x: Vec<f64>, y: u8, fhat: f64) -> Self {
        Self { x, y, fhat }
    }

    pub fn residual(&self) -> f64 {
        f64::from(self.y) - self.fhat
    }
}

/// Borrowed view of a record inside an [`AuditDataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRef<'a> {
    pub x: &'a [f64],
    pub y: u8,
    pub fhat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditDataset {
    feature_names: Vec<String>,
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    scores: Vec<f64>,
}

/// Minimum number of records; the U-statistic divides by `n(n-1)`.
pub const MIN_RECORDS: usize = 2;

fn check_record(row: usize, x: &[f64], y: u8, fhat: f64, dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Validation {
            row,
            message: format!("expected {dim} features, got {}", x.len()),
        });
    }
    if y > 1 {
        return Err(Error::Validation {
            row,
            message: format!("label {y} is not 0 or 1"),
        });
    }
    if !(0.0..=1.0).contains(&fhat) {
        return Err(Error::Validation {
            row,
            message: format!("score {fhat} is outside [0, 1]"),
        });
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation {
            row,
            message: format!("non-finite feature value {v}"),
        });
    }
    Ok(())
}

impl AuditDataset {
    /// Builds a dataset from records, validating every row.
    ///
    /// Row numbers in validation errors are 1-based.
    pub fn new(feature_names: Vec<String>, records: Vec<AuditRecord>) -> Result<Self> {
        let dim = feature_names.len();
        let mut features = Vec::with_capacity(records.len() * dim);
        let mut labels = Vec::with_capacity(records.len());
        let mut scores = Vec::with_capacity(records.len());
        for (i, r) in records.into_iter().enumerate() {
            check_record(i + 1, &r.x, r.y, r.fhat, dim)?;
            features.extend_from_slice(&r.x);
            labels.push(r.y);
            scores.push(r.fhat);
        }
        Self::from_validated(feature_names, features, labels, scores)
    }

    /// Builds a dataset from column buffers. `features` is row-major with
    /// `feature_names.len()` values per row.
    pub fn from_columns(
        feature_names: Vec<String>,
        features: Vec<f64>,
        labels: Vec<u8>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        let dim = feature_names.len();
        let n = labels.len();
        if scores.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: scores.len(),
            });
        }
        if features.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                actual: features.len(),
            });
        }
        for i in 0..n {
            let x = &features[i * dim..(i + 1) * dim];
            check_record(i + 1, x, labels[i], scores[i], dim)?;
        }
        Self::from_validated(feature_names, features, labels, scores)
    }

    fn from_validated(
        feature_names: Vec<String>,
        features: Vec<f64>,
        labels: Vec<u8>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if labels.len() < MIN_RECORDS {
            return Err(Error::TooFewRecords {
                required: MIN_RECORDS,
                actual: labels.len(),
            });
        }
        Ok(Self {
            dim: feature_names.len(),
            feature_names,
            features,
            labels,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of audit features per record.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major feature buffer.
    pub fn feature_matrix(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_column(&self, j: usize) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.features[i * self.dim + j])
            .collect()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// `e_i = y_i - fhat_i`, always in `[-1, 1]`.
    pub fn residuals(&self) -> Vec<f64> {
        self.labels
            .iter()
            .zip(&self.scores)
            .map(|(&y, &p)| f64::from(y) - p)
            .collect()
    }

    pub fn record(&self, i: usize) -> RecordRef<'_> {
        RecordRef {
            x: self.features(i),
            y: self.labels[i],
            fhat: self.scores[i],
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = RecordRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.record(i))
    }

    pub fn to_records(&self) -> Vec<AuditRecord> {
        self.iter()
            .map(|r| AuditRecord::new(r.x.to_vec(), r.y, r.fhat))
            .collect()
    }

    /// Same labels and features with new scores.
    pub fn with_scores(&self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: scores.len(),
            });
        }
        for (i, &p) in scores.iter().enumerate() {
            check_record(i + 1, self.features(i), self.labels[i], p, self.dim)?;
        }
        Ok(Self {
            scores,
            ..self.clone()
        })
    }

    /// Same scores and features with new labels.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: labels.len(),
            });
        }
        for (i, &y) in labels.iter().enumerate() {
            check_record(i + 1, self.features(i), y, self.scores[i], self.dim)?;
        }
        Ok(Self {
            labels,
            ..self.clone()
        })
    }

    /// Centers every feature column and scales it to unit sample standard
    /// deviation (`n - 1` denominator). Zero-variance columns become zeros.
    pub fn standardize_features(&self) -> Self {
        FeatureScaling::fit(self).apply(self)
    }
}

/// Per-column mean and sample standard deviation of a dataset's features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaling {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl FeatureScaling {
    pub fn fit(d: &AuditDataset) -> Self {
        let n = d.len();
        let mut mean = Vec::with_capacity(d.dim);
        let mut sd = Vec::with_capacity(d.dim);
        for j in 0..d.dim {
            let m = (0..n).map(|i| d.features[i * d.dim + j]).sum::<f64>() / n as f64;
            let ss: f64 = (0..n)
                .map(|i| (d.features[i * d.dim + j] - m).powi(2))
                .sum();
            mean.push(m);
            sd.push((ss / (n - 1) as f64).sqrt());
        }
        Self { mean, sd }
    }

    /// Standardizes one feature vector in place.
    pub fn transform(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.sd) {
            *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
        }
    }

    pub fn apply(&self, d: &AuditDataset) -> AuditDataset {
        let mut features = d.features.clone();
        if d.dim > 0 {
            for row in features.chunks_exact_mut(d.dim) {
                self.transform(row);
            }
        }
        AuditDataset {
            features,
            ..d.clone()
        }
    }
}

/// Column names used when reading and writing CSV files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub label: String,
    pub score: String,
    /// Feature columns in order; `None` means every other column.
    pub features: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            label: "y".into(),
            score: "p".into(),
            features: None,
        }
    }
}

fn parse_field(row: usize, column: &str, raw: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Validation {
        row,
        message: format!("column `{column}`: cannot parse `{raw}` as a number"),
    })
}

fn parse_label(row: usize, column: &str, raw: &str) -> Result<u8> {
    let v = parse_field(row, column, raw)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::Validation {
            row,
            message: format!("label {raw} is not 0 or 1"),
        })
    }
}

/// Reads a headered CSV file into a validated dataset. Row order is kept.
pub fn load_dataset<R: Read>(source: R, schema: &Schema) -> Result<AuditDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let label_col = find(&schema.label)?;
    let score_col = find(&schema.score)?;
    if label_col == score_col {
        return Err(Error::Schema("label and score name the same column".into()));
    }
    let feature_cols: Vec<usize> = match &schema.features {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&c| c != label_col && c != score_col)
            .collect(),
    };
    if feature_cols.is_empty() {
        return Err(Error::Schema(
            "at least one feature column is required".into(),
        ));
    }
    if let Some(&c) = feature_cols
        .iter()
        .find(|&&c| c == label_col || c == score_col)
    {
        return Err(Error::Schema(format!(
            "column `{}` cannot be both a feature and the label or score",
            &headers[c]
        )));
    }
    let feature_names: Vec<String> = feature_cols
        .iter()
        .map(|&c| headers[c].to_string())
        .collect();
    let dim = feature_names.len();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let y = parse_label(row, &schema.label, &rec[label_col])?;
        let p = parse_field(row, &schema.score, &rec[score_col])?;
        let start = features.len();
        for &c in &feature_cols {
            features.push(parse_field(row, &headers[c], &rec[c])?);
        }
        check_record(row, &features[start..], y, p, dim)?;
        labels.push(y);
        scores.push(p);
    }
    AuditDataset::from_validated(feature_names, features, labels, scores)
}

/// Formats a float with 17 significant digits, enough to round-trip any f64.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `y,p,<features...>` with the default schema's column names.
pub fn write_dataset<W: Write>(d: &AuditDataset, sink: W) -> Result<()> {
    write_dataset_with(d, &Schema::default(), sink)
}

/// Writes `<label>,<score>,<features...>` using the schema's label and score
/// names.
pub fn write_dataset_with<W: Write>(d: &AuditDataset, schema: &Schema, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec![schema.label.clone(), schema.score.clone()];
    header.extend(d.feature_names().iter().cloned());
    w.write_record(&header)?;
    for r in d.iter() {
        let mut row = vec![r.y.to_string(), format_float(r.fhat)];
        row.extend(r.x.iter().map(|&v| format_float(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(s: &str) -> Result<AuditDataset> {
        load_dataset(s.as_bytes(), &Schema::default())
    }

    #[test]
    fn parses_minimal_file() {
        let d = load("y,p,age\n1,0.9,30\n0,0.2,40").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 1);
        assert_eq!(d.feature_names(), ["age"]);
        assert_eq!(d.labels(), [1, 0]);
        assert_eq!(d.scores(), [0.9, 0.2]);
        assert_eq!(d.features(1), [40.0]);
    }

    #[test]
    fn score_out_of_range_cites_row() {
        let err = load("y,p,age\n1,0.9,30\n0,0.2,40\n1,1.2,50").unwrap_err();
        match err {
            Error::Validation { row, .. } => assert_eq!(row, 3),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn bad_label_is_rejected() {
        let err = load("y,p,age\n2,0.9,30\n0,0.2,40").unwrap_err();
        assert!(matches!(err, Error::Validation { row: 1, .. }));
    }

    #[test]
    fn missing_column_is_named() {
        let err = load_dataset(
            "y,score,age\n1,0.9,30\n0,0.2,40".as_bytes(),
            &Schema::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "p"));
        assert!(err.to_string().contains("`p`"));
    }

    #[test]
    fn single_row_is_too_small() {
        assert!(matches!(
            load("y,p,age\n1,0.9,30"),
            Err(Error::TooFewRecords { actual: 1, .. })
        ));
    }

    #[test]
    fn non_finite_feature_rejected() {
        assert!(matches!(
            load("y,p,age\n1,0.9,30\n0,0.2,inf"),
            Err(Error::Validation { row: 2, .. })
        ));
    }

    #[test]
    fn explicit_schema_selects_features() {
        let schema = Schema {
            label: "outcome".into(),
            score: "score".into(),
            features: Some(vec!["b".into()]),
        };
        let d = load_dataset(
            "a,outcome,b,score\n9,1,3,0.5\n8,0,4,0.25".as_bytes(),
            &schema,
        )
        .unwrap();
        assert_eq!(d.feature_names(), ["b"]);
        assert_eq!(d.feature_column(0), [3.0, 4.0]);
        assert_eq!(d.scores(), [0.5, 0.25]);
    }

    #[test]
    fn residuals_are_label_minus_score() {
        let d = load("y,p,age\n1,0.9,30\n0,0.2,40").unwrap();
        let e = d.residuals();
        assert!((e[0] - 0.1).abs() < 1e-15);
        assert!((e[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn standardize_two_points() {
        let d = AuditDataset::new(
            vec!["a".into(), "c".into()],
            vec![
                AuditRecord::new(vec![1.0, 5.0], 1, 0.5),
                AuditRecord::new(vec![3.0, 5.0], 0, 0.5),
            ],
        )
        .unwrap();
        let s = d.standardize_features();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.features(0)[0] + h).abs() < 1e-15);
        assert!((s.features(1)[0] - h).abs() < 1e-15);
        assert_eq!(s.feature_column(1), [0.0, 0.0]);
        assert_eq!(s.labels(), d.labels());
        assert_eq!(s.scores(), d.scores());
    }

    #[test]
    fn standardize_is_idempotent() {
        let recs = (0..7)
            .map(|i| AuditRecord::new(vec![(i * i) as f64, (i as f64).sin()], (i % 2) as u8, 0.3))
            .collect();
        let d = AuditDataset::new(vec!["a".into(), "b".into()], recs).unwrap();
        let once = d.standardize_features();
        let twice = once.standardize_features();
        for (a, b) in once.feature_matrix().iter().zip(twice.feature_matrix()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn format_float_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 123456.789, 0.0, -2.5e17] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
    }
}
