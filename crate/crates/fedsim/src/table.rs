//! CSV ingestion and export of labeled datasets.

use std::collections::BTreeMap;
use std::path::Path;

use fedsim_core::data::LabeledDataset;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("missing column `{0}`")]
    Schema(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        /// 1-based data row, header excluded.
        row: usize,
        column: String,
        value: String,
    },
    #[error("no data rows in {0}")]
    EmptyData(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Dataset(#[from] fedsim_core::Error),
}

/// Reads `path` with a header row. Labels are mapped to class indices by
/// sorted distinct value. An empty `feature_columns` selects every column
/// except the label.
pub fn load_csv(
    path: &Path,
    label_column: &str,
    feature_columns: &[String],
) -> Result<LabeledDataset, CsvError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CsvError::Schema(name.to_string()))
    };
    let label_idx = find(label_column)?;
    let feature_idx: Vec<usize> = if feature_columns.is_empty() {
        (0..headers.len()).filter(|&i| i != label_idx).collect()
    } else {
        feature_columns.iter().map(|c| find(c)).collect::<Result<_, _>>()?
    };
    if feature_idx.is_empty() {
        return Err(CsvError::Schema("<feature columns>".into()));
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        for &j in &feature_idx {
            let cell = record.get(j).unwrap_or("");
            let v: f64 = cell.trim().parse().map_err(|_| CsvError::Parse {
                row: i + 1,
                column: headers[j].to_string(),
                value: cell.to_string(),
            })?;
            features.push(v);
        }
        raw_labels.push(record.get(label_idx).unwrap_or("").to_string());
    }
    if raw_labels.is_empty() {
        return Err(CsvError::EmptyData(path.display().to_string()));
    }

    let index: BTreeMap<&str, usize> = {
        let mut names: Vec<&str> = raw_labels.iter().map(String::as_str).collect();
        names.sort_unstable();
        names.dedup();
        names.into_iter().enumerate().map(|(i, n)| (n, i)).collect()
    };
    let class_names: Vec<String> = index.keys().map(|s| s.to_string()).collect();
    let labels = raw_labels.iter().map(|l| index[l.as_str()]).collect();
    let data = LabeledDataset::new(features, labels, feature_idx.len(), class_names.len().max(2))?;
    Ok(data.with_class_names(class_names))
}

/// Writes features as `x0..x{d-1}` plus a `label` column holding the class
/// name when known, otherwise the zero-padded index so that sorted order
/// matches index order. Floats use the shortest round-trip representation.
pub fn save_csv(path: &Path, data: &LabeledDataset) -> Result<(), CsvError> {
    let mut writer = csv::Writer::from_path(path)?;
    let d = data.input_dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    writer.write_record(&header)?;
    let width = (data.num_classes() - 1).max(1).to_string().len();
    for i in 0..data.len() {
        let mut row: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        let y = data.labels()[i];
        let name = data.class_names.as_ref().and_then(|n| n.get(y).cloned());
        row.push(name.unwrap_or_else(|| format!("{y:0width$}")));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}
