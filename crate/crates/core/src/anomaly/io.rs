use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{AnomalyError, GammaParams, Metric, ReferenceModel};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceFile {
    metric: Metric,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    epsilon: f64,
    gamma: GammaParams,
    embedding_dim: usize,
    provenance: BTreeMap<String, String>,
}

impl ReferenceModel {
    pub fn to_json(&self) -> Result<String, AnomalyError> {
        let d = self.dim();
        let file = ReferenceFile {
            metric: self.metric,
            mean: self.mean.clone(),
            covariance: (0..d)
                .map(|i| (0..d).map(|j| self.covariance[(i, j)]).collect())
                .collect(),
            epsilon: self.epsilon,
            gamma: self.gamma,
            embedding_dim: d,
            provenance: self.provenance.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses and re-validates a model; the inverse is recomputed.
    pub fn from_json(s: &str) -> Result<Self, AnomalyError> {
        let f: ReferenceFile = serde_json::from_str(s)?;
        let d = f.embedding_dim;
        if f.mean.len() != d || f.covariance.len() != d || f.covariance.iter().any(|r| r.len() != d)
        {
            return Err(AnomalyError::InvalidReference(format!(
                "mean and covariance do not match embedding_dim {d}"
            )));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| f.covariance[i][j]);
        let mut model = ReferenceModel::from_parts(f.metric, f.mean, cov, f.epsilon, f.gamma)?;
        model.provenance = f.provenance;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AnomalyError> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnomalyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One line of an embeddings file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub clip_path: String,
    pub segment_index: usize,
    pub values: Vec<f64>,
}

/// Columns `clip_path,segment_index,e0..e{d-1}`.
pub fn write_embeddings_csv(w: impl Write, rows: &[EmbeddingRow]) -> Result<(), AnomalyError> {
    let d = rows.first().map_or(0, |r| r.values.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["clip_path".to_string(), "segment_index".to_string()];
    header.extend((0..d).map(|i| format!("e{i}")));
    out.write_record(&header)?;
    for r in rows {
        if r.values.len() != d {
            return Err(AnomalyError::DimensionMismatch {
                expected: d,
                got: r.values.len(),
            });
        }
        let mut rec = vec![r.clip_path.clone(), r.segment_index.to_string()];
        rec.extend(r.values.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_embeddings_csv(r: impl Read) -> Result<Vec<EmbeddingRow>, AnomalyError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let d = header.len().saturating_sub(2);
    let expected = ["clip_path".to_string(), "segment_index".to_string()]
        .into_iter()
        .chain((0..d).map(|i| format!("e{i}")));
    if header.len() < 2 || !header.iter().zip(expected).all(|(a, b)| a == b) {
        return Err(AnomalyError::InvalidEmbeddings("unexpected header".into()));
    }
    let bad =
        |line: usize, what: &str| AnomalyError::InvalidEmbeddings(format!("record {line}: {what}"));
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let segment_index = rec[1]
            .parse()
            .map_err(|_| bad(i + 1, "bad segment_index"))?;
        let values = (2..rec.len())
            .map(|j| rec[j].parse::<f64>().map_err(|_| bad(i + 1, "bad value")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(EmbeddingRow {
            clip_path: rec[0].to_string(),
            segment_index,
            values,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::{fit_reference, Metric};

    #[test]
    fn reference_json_round_trip() {
        let data: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = f64::from(i);
                vec![(t * 0.37).sin(), (t * 0.91).cos(), t / 40.0]
            })
            .collect();
        let mut r = fit_reference(&data, Metric::Mahalanobis).unwrap();
        r.provenance.insert("section".into(), "0".into());
        let back = ReferenceModel::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn reference_rejects_unknown_keys() {
        let s = r#"{"metric":"euclidean","mean":[0],"covariance":[[1]],"epsilon":0,
            "gamma":{"shape":1,"scale":1},"embedding_dim":1,"provenance":{},"extra":1}"#;
        assert!(ReferenceModel::from_json(s).is_err());
    }

    #[test]
    fn embeddings_csv_round_trip() {
        let rows = vec![
            EmbeddingRow {
                clip_path: "a,b/clip.wav".into(),
                segment_index: 0,
                values: vec![0.1, 1.0 / 3.0, -2.5e-17],
            },
            EmbeddingRow {
                clip_path: "c.wav".into(),
                segment_index: 6,
                values: vec![1.0, 0.0, f64::MIN_POSITIVE],
            },
        ];
        let mut buf = Vec::new();
        write_embeddings_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("clip_path,segment_index,e0,e1,e2\n"));
        assert_eq!(read_embeddings_csv(buf.as_slice()).unwrap(), rows);
    }
}
