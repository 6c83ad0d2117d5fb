//! Choosing providers from configuration.

use std::fs;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    Embedder, Generator, HashEmbedder, HttpConfig, HttpEmbedder, HttpGenerator, HttpReranker,
    OverlapReranker, Reranker, TableGenerator, TokenHashEmbedder,
};
use crate::error::{Error, Result};

/// A provider named by a short spec string or an HTTP endpoint block.
///
/// Short specs: embedders `hash:<dim>[:seed]` and `bow:<dim>[:seed]`,
/// generator `table:<rules.json>`, reranker `overlap`. In JSON the HTTP form
/// is `{"http": {"base_url": ..., "model": ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProviderSpec {
    Short(String),
    Http { http: HttpConfig },
}

impl From<&str> for ProviderSpec {
    fn from(s: &str) -> Self {
        ProviderSpec::Short(s.to_string())
    }
}

impl ProviderSpec {
    pub fn embedder(&self) -> Result<Arc<dyn Embedder>> {
        let s = match self {
            ProviderSpec::Http { http } => return Ok(Arc::new(HttpEmbedder::new(http.clone())?)),
            ProviderSpec::Short(s) => s,
        };
        let unknown = || Error::Config(format!("unknown embedder `{s}`"));
        let num = |p: &str| {
            p.parse::<u64>()
                .map_err(|_| Error::Config(format!("bad number `{p}` in embedder `{s}`")))
        };
        let parts: Vec<&str> = s.split(':').collect();
        let (kind, dim, seed) = match parts.as_slice() {
            [kind, dim] => (*kind, num(dim)?, 0),
            [kind, dim, seed] => (*kind, num(dim)?, num(seed)?),
            _ => return Err(unknown()),
        };
        match kind {
            "hash" => Ok(Arc::new(HashEmbedder::new(dim as usize, seed)?)),
            "bow" => Ok(Arc::new(TokenHashEmbedder::new(dim as usize, seed)?)),
            _ => Err(unknown()),
        }
    }

    pub fn generator(&self) -> Result<Arc<dyn Generator>> {
        match self {
            ProviderSpec::Http { http } => Ok(Arc::new(HttpGenerator::new(http.clone())?)),
            ProviderSpec::Short(s) => match s.split_once(':') {
                Some(("table", path)) => {
                    let text = fs::read_to_string(path).map_err(|e| {
                        Error::Config(format!("cannot read generator table {path}: {e}"))
                    })?;
                    Ok(Arc::new(TableGenerator::from_json(&text)?))
                }
                _ => Err(Error::Config(format!("unknown generator `{s}`"))),
            },
        }
    }

    pub fn reranker(&self) -> Result<Arc<dyn Reranker>> {
        match self {
            ProviderSpec::Http { http } => Ok(Arc::new(HttpReranker::new(http.clone())?)),
            ProviderSpec::Short(s) if s == "overlap" => Ok(Arc::new(OverlapReranker)),
            ProviderSpec::Short(s) => Err(Error::Config(format!("unknown reranker `{s}`"))),
        }
    }
}
