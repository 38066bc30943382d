//! Live embedding provider: `POST <url>` with `{"texts": [...]}` answering
//! `{"vectors": [[...], ...]}`.

use serde::{Deserialize, Serialize};
use uiloc_core::retrieval::{ObQuery, QueryEncoder, RetrievalError};

#[derive(Debug, Clone)]
pub struct HttpEncoder {
    pub url: String,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: [&'a str; 1],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl QueryEncoder for HttpEncoder {
    fn encode(&self, query: &ObQuery<'_>) -> Result<Vec<f64>, RetrievalError> {
        let unavailable = |e: &dyn std::fmt::Display| {
            RetrievalError::Unavailable(format!("embedding provider {}: {e}", self.url))
        };
        let mut resp = ureq::post(&self.url)
            .send_json(EmbedRequest {
                texts: [query.text],
            })
            .map_err(|e| unavailable(&e))?;
        let body: EmbedResponse = resp.body_mut().read_json().map_err(|e| unavailable(&e))?;
        body.vectors
            .into_iter()
            .next()
            .ok_or_else(|| unavailable(&"empty response"))
    }
}
