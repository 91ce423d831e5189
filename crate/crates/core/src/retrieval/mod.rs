//! Evidence retrieval: score a group's bank items against a new question by
//! cosine similarity of text embeddings, keep the top `k`, then drop items
//! whose support is below `n_min`.
//!
//! The support filter runs after truncation, so an item ranked below `k`
//! is never promoted even when higher-ranked items are filtered out.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{EvidenceBank, GroupKey, ItemEvidence, SurveyItem};

mod encoder;

pub use encoder::{
    embed_all, CachedEncoder, Embedding, Encoder, HashEncoder, HttpEncoder, HttpEncoderConfig,
};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_N_MIN: u64 = 30;

/// Question text, then a newline and the instruction when there is one.
pub fn item_text(item: &SurveyItem) -> String {
    question_text(&item.question_text, item.instruction.as_deref())
}

pub fn question_text(question: &str, instruction: Option<&str>) -> String {
    match instruction {
        Some(i) if !i.is_empty() => format!("{question}\n{i}"),
        _ => question.to_string(),
    }
}

pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::Domain(format!(
            "embedding dimensions differ: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain(
            "cosine similarity is undefined for a zero vector".into(),
        ));
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub question_text: String,
    #[serde(default)]
    pub instruction: Option<String>,
    pub group: GroupKey,
    pub k: usize,
    pub n_min: u64,
    #[serde(default)]
    pub exclude_item_ids: BTreeSet<String>,
}

impl RetrievalQuery {
    pub fn new(question_text: impl Into<String>, group: GroupKey) -> Self {
        RetrievalQuery {
            question_text: question_text.into(),
            instruction: None,
            group,
            k: DEFAULT_K,
            n_min: DEFAULT_N_MIN,
            exclude_item_ids: BTreeSet::new(),
        }
    }

    pub fn text(&self) -> String {
        question_text(&self.question_text, self.instruction.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEntry {
    pub item_id: String,
    pub score: f64,
    pub evidence: ItemEvidence,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEvidence {
    pub entries: Vec<RetrievedEntry>,
}

/// Compact record of what was retrieved, for persisted results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub item_id: String,
    pub score: f64,
    pub support: u64,
}

impl RetrievedEvidence {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.item_id.as_str())
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.entries
            .iter()
            .map(|e| TraceEntry {
                item_id: e.item_id.clone(),
                score: e.score,
                support: e.evidence.support,
            })
            .collect()
    }
}

/// Item embeddings for every item in a bank, computed once.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    encoder_identity: String,
    embeddings: BTreeMap<String, Embedding>,
}

impl RetrievalIndex {
    pub fn build(bank: &EvidenceBank, encoder: &dyn Encoder, fan_out: usize) -> Result<Self> {
        let mut items: BTreeMap<&str, &SurveyItem> = BTreeMap::new();
        for g in bank.groups.values() {
            for (id, ev) in &g.items {
                items.entry(id.as_str()).or_insert(&ev.item);
            }
        }
        Self::from_items(items.into_values(), encoder, fan_out)
    }

    pub fn from_items<'a>(
        items: impl IntoIterator<Item = &'a SurveyItem>,
        encoder: &dyn Encoder,
        fan_out: usize,
    ) -> Result<Self> {
        let (ids, texts): (Vec<String>, Vec<String>) = items
            .into_iter()
            .map(|i| (i.item_id.clone(), item_text(i)))
            .unzip();
        let embedded = embed_all(encoder, &texts, 32, fan_out)?;
        Ok(RetrievalIndex {
            encoder_identity: encoder.identity(),
            embeddings: ids.into_iter().zip(embedded).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

fn by_score_then_id(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Holds a bank, its item index, and the encoder used for queries.
pub struct Retriever<'a> {
    bank: &'a EvidenceBank,
    index: RetrievalIndex,
    encoder: &'a dyn Encoder,
}

impl<'a> Retriever<'a> {
    pub fn new(bank: &'a EvidenceBank, encoder: &'a dyn Encoder, fan_out: usize) -> Result<Self> {
        let index = RetrievalIndex::build(bank, encoder, fan_out)?;
        Ok(Retriever {
            bank,
            index,
            encoder,
        })
    }

    pub fn with_index(
        bank: &'a EvidenceBank,
        encoder: &'a dyn Encoder,
        index: RetrievalIndex,
    ) -> Result<Self> {
        if index.encoder_identity != encoder.identity() {
            return Err(Error::Input(format!(
                "index was built with {}, query encoder is {}",
                index.encoder_identity,
                encoder.identity()
            )));
        }
        Ok(Retriever {
            bank,
            index,
            encoder,
        })
    }

    pub fn bank(&self) -> &'a EvidenceBank {
        self.bank
    }

    pub fn retrieve(&self, query: &RetrievalQuery) -> Result<RetrievedEvidence> {
        if query.k == 0 {
            return Err(Error::Domain("retrieval k must be at least 1".into()));
        }
        let group = self
            .bank
            .group(&query.group)
            .ok_or_else(|| Error::UnknownGroup(query.group.to_string()))?;
        if group.items.is_empty() {
            log::warn!("group {} has no evidence items", query.group);
            return Ok(RetrievedEvidence::default());
        }
        let q = self
            .encoder
            .embed(&[query.text()])?
            .pop()
            .ok_or_else(|| Error::Input("encoder returned no embedding".into()))?;

        let mut scored = Vec::with_capacity(group.items.len());
        for id in group.items.keys() {
            if query.exclude_item_ids.contains(id) {
                continue;
            }
            let e = self.index.embeddings.get(id).ok_or_else(|| {
                Error::Input(format!("item {id} missing from the retrieval index"))
            })?;
            scored.push((id.clone(), cosine(&q, e)?));
        }
        scored.sort_by(by_score_then_id);
        scored.truncate(query.k);

        let entries = scored
            .into_iter()
            .filter_map(|(id, score)| {
                let ev = &group.items[&id];
                (ev.support >= query.n_min).then(|| RetrievedEntry {
                    item_id: id,
                    score,
                    evidence: ev.clone(),
                })
            })
            .collect();
        Ok(RetrievedEvidence { entries })
    }
}

/// One-off retrieval that embeds the bank's items on the fly.
pub fn retrieve(
    query: &RetrievalQuery,
    bank: &EvidenceBank,
    encoder: &dyn Encoder,
) -> Result<RetrievedEvidence> {
    let group = bank
        .group(&query.group)
        .ok_or_else(|| Error::UnknownGroup(query.group.to_string()))?;
    let index = RetrievalIndex::from_items(group.items.values().map(|e| &e.item), encoder, 1)?;
    Retriever {
        bank,
        index,
        encoder,
    }
    .retrieve(query)
}
