use super::{Dataset, DatasetError, DatasetSchema, FeatureKind};

/// Parses RFC-4180 CSV text with a header row into an encoded [`Dataset`].
///
/// Columns are matched to the schema by header name. Categorical cells may be
/// given either as a declared category name or as its integer code. Labels may
/// be `0`/`1` or the schema's negative/positive meaning strings.
pub fn load_dataset(csv_text: &str, schema: DatasetSchema) -> Result<Dataset, DatasetError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Csv(e.to_string()))?
        .clone();

    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut columns = Vec::with_capacity(schema.n_features());
    for f in &schema.features {
        columns.push(position(&f.name).ok_or_else(|| DatasetError::MissingColumn(f.name.clone()))?);
    }
    let label_col = position(&schema.label.name)
        .ok_or_else(|| DatasetError::MissingColumn(schema.label.name.clone()))?;
    for h in headers.iter() {
        if h != schema.label.name && schema.feature_index(h).is_none() {
            return Err(DatasetError::UnexpectedColumn(h.to_string()));
        }
    }

    let width = schema.n_features();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DatasetError::Csv(e.to_string()))?;
        for (f, &col) in schema.features.iter().zip(&columns) {
            let cell = record.get(col).unwrap_or("");
            if cell.is_empty() {
                return Err(DatasetError::MissingValue {
                    feature: f.name.clone(),
                    row,
                });
            }
            let v = match f.kind {
                FeatureKind::Categorical => match f.category_code(cell) {
                    Some(code) => code as f64,
                    None => match cell.parse::<usize>() {
                        Ok(code) if code < f.categories.len() => code as f64,
                        _ => {
                            return Err(DatasetError::UnknownCategory {
                                feature: f.name.clone(),
                                value: cell.to_string(),
                                row,
                            })
                        }
                    },
                },
                FeatureKind::Numerical => match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        return Err(DatasetError::NonNumericCell {
                            feature: f.name.clone(),
                            value: cell.to_string(),
                            row,
                        })
                    }
                },
            };
            values.push(v);
        }
        let raw = record.get(label_col).unwrap_or("");
        let y = if raw == "1" || raw == schema.label.positive_meaning {
            1
        } else if raw == "0" || raw == schema.label.negative_meaning {
            0
        } else if raw.is_empty() {
            return Err(DatasetError::MissingValue {
                feature: schema.label.name.clone(),
                row,
            });
        } else {
            return Err(DatasetError::InvalidLabel {
                value: raw.to_string(),
                row,
            });
        };
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    debug_assert_eq!(values.len(), labels.len() * width);
    Ok(Dataset::from_parts_unchecked(schema, values, labels))
}
