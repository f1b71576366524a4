use std::time::Duration;

use indexmap::IndexMap;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::selection::EmbeddingTable;

fn bucket(token: &str, dim: usize) -> usize {
    let digest = Sha256::digest(token.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(bytes) % dim as u64) as usize
}

/// Offline embeddings: lower-cased word counts hashed into `dim` buckets,
/// over every item's joined text segments.
pub fn hashed_bag_of_words(dataset: &Dataset, dim: usize) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut vectors = IndexMap::new();
    for item in dataset.splits.values().flatten() {
        let mut v = vec![0.0; dim];
        let text = item.joined_text().to_lowercase();
        for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            v[bucket(token, dim)] += 1.0;
        }
        if v.iter().all(|x| *x == 0.0) {
            return Err(Error::Config(format!("item `{}` has no word tokens to embed", item.item_id)));
        }
        vectors.insert(item.item_id.clone(), v);
    }
    EmbeddingTable::new(dim, vectors)
}

/// Client for an `/embeddings` endpoint taking `{"model", "input": [..]}`
/// and answering `{"data": [{"embedding": [..]}, ..]}` in input order.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        HttpEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build()
                .into(),
            batch_size: 64,
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = json!({"model": self.model, "input": texts}).to_string();
        let mut response = req
            .send(body)
            .map_err(|e| Error::RetriesExhausted { attempts: 1, last: e.to_string() })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::MalformedResponse(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(Error::Auth(format!("HTTP {status}: {text}"))),
            _ => return Err(Error::Rejected { status, body: text }),
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::MalformedResponse(e.to_string()))?;
        let data = value
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::MalformedResponse("missing `data` array".into()))?;
        if data.len() != texts.len() {
            return Err(Error::MalformedResponse(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|row| {
                row.get("embedding")
                    .and_then(Value::as_array)
                    .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| Error::MalformedResponse("embedding is not a number array".into()))
            })
            .collect()
    }

    /// Embeds every item of the dataset once.
    pub fn embed_dataset(&self, dataset: &Dataset) -> Result<EmbeddingTable> {
        let items: Vec<_> = dataset.splits.values().flatten().collect();
        let mut vectors = IndexMap::new();
        for chunk in items.chunks(self.batch_size) {
            let texts: Vec<String> = chunk.iter().map(|i| i.joined_text()).collect();
            for (item, v) in chunk.iter().zip(self.embed_batch(&texts)?) {
                vectors.insert(item.item_id.clone(), v);
            }
        }
        let dim = vectors.values().next().map_or(0, Vec::len);
        EmbeddingTable::new(dim, vectors)
    }
}
