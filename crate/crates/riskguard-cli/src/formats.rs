//! File formats: newline-delimited data records and calibration reports.
//!
//! Numbers serialize through serde_json's shortest-round-trip formatter, so
//! a generate/parse/serialize cycle is byte-identical. Infinities — legal
//! values for conformal thresholds and divergence radii — serialize as the
//! strings `"inf"` / `"-inf"`.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use riskguard::core::{make_prob_vector, Example, MultiLabelExample};

/// One classification example: both model distributions plus optional
/// features and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFileRecord {
    pub id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    pub cloud: Vec<f64>,
    pub edge: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl ScoreFileRecord {
    pub fn from_example(ex: &Example) -> Self {
        ScoreFileRecord {
            id: ex.id,
            features: if ex.features.is_empty() {
                None
            } else {
                Some(ex.features.clone())
            },
            cloud: ex.cloud_dist.probs().to_vec(),
            edge: ex.edge_dist.probs().to_vec(),
            label: ex.label,
        }
    }

    /// Validates the record back into an [`Example`].
    pub fn into_example(self) -> Result<Example, String> {
        if self.cloud.len() != self.edge.len() {
            return Err(format!(
                "record {}: cloud and edge lengths differ ({} vs {})",
                self.id,
                self.cloud.len(),
                self.edge.len()
            ));
        }
        let cloud_dist = make_prob_vector(&self.cloud)
            .map_err(|e| format!("record {}: cloud: {e}", self.id))?;
        let edge_dist = make_prob_vector(&self.edge)
            .map_err(|e| format!("record {}: edge: {e}", self.id))?;
        if let Some(label) = self.label {
            if label >= cloud_dist.len() {
                return Err(format!(
                    "record {}: label {label} outside the {}-label space",
                    self.id,
                    cloud_dist.len()
                ));
            }
        }
        Ok(Example {
            id: self.id,
            features: self.features.unwrap_or_default(),
            cloud_dist,
            edge_dist,
            label: self.label,
        })
    }
}

/// One multi-label instance: per-item scores and the positive item set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelRecord {
    pub id: u64,
    pub item_scores: Vec<f64>,
    pub positives: Vec<usize>,
}

impl MultiLabelRecord {
    pub fn from_example(ex: &MultiLabelExample) -> Self {
        MultiLabelRecord {
            id: ex.id,
            item_scores: ex.item_scores.clone(),
            positives: ex.positives.iter().copied().collect(),
        }
    }
}

/// An extended real that survives JSON round-trips: numbers stay numbers,
/// infinities become `"inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtReal(pub f64);

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            serializer.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            serializer.serialize_str("-inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(v) => Ok(ExtReal(v)),
            Raw::Text(s) => match s.as_str() {
                "inf" => Ok(ExtReal(f64::INFINITY)),
                "-inf" => Ok(ExtReal(f64::NEG_INFINITY)),
                other => Err(D::Error::custom(format!(
                    "expected a number, \"inf\", or \"-inf\", got {other:?}"
                ))),
            },
        }
    }
}

/// Output document of `calibrate cp` / `calibrate lcp`.
#[derive(Debug, Serialize, Deserialize)]
pub struct QuantileReport {
    pub method: String,
    pub q: ExtReal,
}

/// Output document of `calibrate cdci`.
#[derive(Debug, Serialize, Deserialize)]
pub struct CdciReport {
    pub method: String,
    pub tau_div: ExtReal,
}

/// Output document of `calibrate oce-rcps` / `calibrate oce-crc`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RiskSelectionReport {
    pub method: String,
    pub lambda_hat: Option<f64>,
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ucb_trace: Option<Vec<(f64, f64)>>,
}
