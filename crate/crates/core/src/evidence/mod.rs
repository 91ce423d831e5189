//! Per-group survey evidence: empirical answer distributions, per-option
//! mean value profiles and their LMH signatures, and support counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::values::{discretize_profile, mean_profile, LmhSignature, Thresholds, WelzelProfile};

pub mod ingest;
pub mod store;

pub use ingest::{
    ingest_path, ingest_respondents, IngestOptions, IngestReport, MicrodataFormat, Rejection,
};
pub use store::{load_bank, save_bank, BankManifest, SCHEMA_VERSION};

/// Demographic group: a country plus optional extra categorical attributes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub country: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

impl GroupKey {
    pub fn country(country: impl Into<String>) -> Self {
        GroupKey {
            country: country.into(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attribute(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(name.into(), value.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.country.trim().is_empty() {
            return Err(Error::Input("group country must be nonempty".into()));
        }
        Ok(())
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.country)?;
        if !self.attributes.is_empty() {
            let attrs: Vec<String> = self
                .attributes
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            write!(f, "[{}]", attrs.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyOption {
    pub id: String,
    pub text: String,
}

impl SurveyOption {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        SurveyOption {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyItem {
    pub item_id: String,
    pub question_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub options: Vec<SurveyOption>,
}

impl SurveyItem {
    pub fn validate(&self) -> Result<()> {
        if self.item_id.is_empty() {
            return Err(Error::Input("item_id must be nonempty".into()));
        }
        if self.question_text.trim().is_empty() {
            return Err(Error::Input(format!(
                "item {} has empty question text",
                self.item_id
            )));
        }
        if self.options.len() < 2 {
            return Err(Error::Input(format!(
                "item {} needs at least two options",
                self.item_id
            )));
        }
        let mut seen = BTreeSet::new();
        for o in &self.options {
            if !seen.insert(o.id.as_str()) {
                return Err(Error::Input(format!(
                    "item {} repeats option id {}",
                    self.item_id, o.id
                )));
            }
        }
        Ok(())
    }

    pub fn option_ids(&self) -> impl Iterator<Item = &str> {
        self.options.iter().map(|o| o.id.as_str())
    }

    pub fn has_option(&self, id: &str) -> bool {
        self.options.iter().any(|o| o.id == id)
    }
}

/// Items keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ItemCatalog {
    items: BTreeMap<String, SurveyItem>,
}

impl ItemCatalog {
    pub fn new(items: impl IntoIterator<Item = SurveyItem>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for item in items {
            item.validate()?;
            if map.contains_key(&item.item_id) {
                return Err(Error::Input(format!("duplicate item id {}", item.item_id)));
            }
            map.insert(item.item_id.clone(), item);
        }
        Ok(ItemCatalog { items: map })
    }

    /// Reads one JSON-encoded [`SurveyItem`] per line; blank lines are skipped.
    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut items = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let item: SurveyItem = serde_json::from_str(&line)
                .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
            items.push(item);
        }
        ItemCatalog::new(items)
    }

    pub fn get(&self, id: &str) -> Option<&SurveyItem> {
        self.items.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SurveyItem> {
        self.items.values()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RespondentRecord {
    pub respondent_id: String,
    pub group: GroupKey,
    pub profile: WelzelProfile,
    /// Observed answers only: item id to option id.
    pub answers: BTreeMap<String, String>,
}

/// Probability mass per option id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerDistribution(BTreeMap<String, f64>);

impl AnswerDistribution {
    pub fn new(probs: BTreeMap<String, f64>) -> Self {
        AnswerDistribution(probs)
    }

    pub fn from_pairs<K: Into<String>>(pairs: impl IntoIterator<Item = (K, f64)>) -> Self {
        AnswerDistribution(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn uniform<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let ids: Vec<&str> = ids.into_iter().collect();
        let p = 1.0 / ids.len() as f64;
        AnswerDistribution(ids.into_iter().map(|id| (id.to_string(), p)).collect())
    }

    pub fn get(&self, id: &str) -> f64 {
        self.0.get(id).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &BTreeMap<String, f64> {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn sum(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionEvidence {
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_profile: Option<WelzelProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<LmhSignature>,
}

/// Evidence for one item within one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEvidence {
    pub item: SurveyItem,
    pub support: u64,
    pub distribution: AnswerDistribution,
    pub option_evidence: BTreeMap<String, OptionEvidence>,
}

impl ItemEvidence {
    pub fn empty(item: SurveyItem) -> Self {
        ItemEvidence {
            item,
            support: 0,
            distribution: AnswerDistribution::default(),
            option_evidence: BTreeMap::new(),
        }
    }

    /// Signatures of options chosen by at least one respondent.
    pub fn gold_signatures(&self) -> BTreeMap<String, LmhSignature> {
        self.option_evidence
            .iter()
            .filter_map(|(id, ev)| ev.signature.map(|s| (id.clone(), s)))
            .collect()
    }

    /// Checks the internal consistency rules; returns a description of the
    /// first violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.support == 0 {
            if !self.distribution.is_empty() || !self.option_evidence.is_empty() {
                return Err("zero-support evidence must be empty".into());
            }
            return Ok(());
        }
        let ids: BTreeSet<&str> = self.item.option_ids().collect();
        let dist_keys: BTreeSet<&str> = self.distribution.keys().collect();
        let ev_keys: BTreeSet<&str> = self.option_evidence.keys().map(String::as_str).collect();
        if dist_keys != ids || ev_keys != ids {
            return Err("option key sets differ from the item's options".into());
        }
        let total: u64 = self.option_evidence.values().map(|e| e.count).sum();
        if total != self.support {
            return Err(format!(
                "option counts sum to {total}, support is {}",
                self.support
            ));
        }
        for (id, ev) in &self.option_evidence {
            if (ev.count > 0) != ev.mean_profile.is_some()
                || (ev.count > 0) != ev.signature.is_some()
            {
                return Err(format!(
                    "option {id}: profile presence does not match count"
                ));
            }
            let expected = ev.count as f64 / self.support as f64;
            if self.distribution.get(id) != expected {
                return Err(format!("option {id}: probability is not count/support"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupEvidence {
    /// Discretized mean profile over every respondent in the group.
    pub profile: LmhSignature,
    pub respondents: u64,
    pub items: BTreeMap<String, ItemEvidence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceBank {
    pub thresholds: Thresholds,
    pub groups: BTreeMap<GroupKey, GroupEvidence>,
}

impl EvidenceBank {
    pub fn empty(thresholds: Thresholds) -> Self {
        EvidenceBank {
            thresholds,
            groups: BTreeMap::new(),
        }
    }

    pub fn group(&self, g: &GroupKey) -> Option<&GroupEvidence> {
        self.groups.get(g)
    }

    pub fn item_evidence(&self, g: &GroupKey, item_id: &str) -> Option<&ItemEvidence> {
        self.groups.get(g)?.items.get(item_id)
    }

    /// Number of respondents in `g` with an observed answer to the item; 0
    /// when either is unknown.
    pub fn support(&self, g: &GroupKey, item_id: &str) -> u64 {
        self.item_evidence(g, item_id).map_or(0, |e| e.support)
    }

    /// Looks a group up by country alone, requiring it to be unambiguous.
    pub fn find_country(&self, country: &str) -> Result<&GroupKey> {
        let mut hits = self.groups.keys().filter(|k| k.country == country);
        match (hits.next(), hits.next()) {
            (Some(k), None) => Ok(k),
            (None, _) => Err(Error::UnknownGroup(country.to_string())),
            (Some(_), Some(_)) => Err(Error::Input(format!(
                "country {country} matches several groups; pass the attributes too"
            ))),
        }
    }

    /// Distinct item ids across all groups.
    pub fn item_ids(&self) -> BTreeSet<&str> {
        self.groups
            .values()
            .flat_map(|g| g.items.keys().map(String::as_str))
            .collect()
    }

    pub fn entry_count(&self) -> usize {
        self.groups.values().map(|g| g.items.len()).sum()
    }
}

/// Evidence for `item` among the records belonging to `g`.
pub fn build_item_evidence(
    records: &[RespondentRecord],
    g: &GroupKey,
    item: &SurveyItem,
    t: &Thresholds,
) -> Result<ItemEvidence> {
    let members: Vec<&RespondentRecord> = records.iter().filter(|r| &r.group == g).collect();
    item_evidence_from(&members, item, t)
}

fn item_evidence_from(
    members: &[&RespondentRecord],
    item: &SurveyItem,
    t: &Thresholds,
) -> Result<ItemEvidence> {
    let mut chosen: BTreeMap<&str, Vec<&WelzelProfile>> =
        item.option_ids().map(|id| (id, Vec::new())).collect();
    let mut support = 0u64;
    for r in members {
        let Some(answer) = r.answers.get(&item.item_id) else {
            continue;
        };
        let bucket = chosen.get_mut(answer.as_str()).ok_or_else(|| {
            Error::Input(format!(
                "respondent {} answered {} with unknown option {answer}",
                r.respondent_id, item.item_id
            ))
        })?;
        bucket.push(&r.profile);
        support += 1;
    }
    if support == 0 {
        return Ok(ItemEvidence::empty(item.clone()));
    }

    let mut distribution = BTreeMap::new();
    let mut option_evidence = BTreeMap::new();
    for (id, profiles) in chosen {
        let count = profiles.len() as u64;
        distribution.insert(id.to_string(), count as f64 / support as f64);
        let (mean, signature) = if profiles.is_empty() {
            (None, None)
        } else {
            let m = mean_profile(profiles)?;
            (Some(m), Some(discretize_profile(&m, t)))
        };
        option_evidence.insert(
            id.to_string(),
            OptionEvidence {
                count,
                mean_profile: mean,
                signature,
            },
        );
    }
    Ok(ItemEvidence {
        item: item.clone(),
        support,
        distribution: AnswerDistribution(distribution),
        option_evidence,
    })
}

/// Builds the bank: one entry per (group, item) with nonzero support, and a
/// group profile from the mean over all of the group's respondents.
pub fn build_bank(
    records: &[RespondentRecord],
    items: &ItemCatalog,
    thresholds: Thresholds,
) -> Result<EvidenceBank> {
    if records.is_empty() {
        log::warn!("no respondents; building an empty evidence bank");
        return Ok(EvidenceBank::empty(thresholds));
    }
    let mut by_group: BTreeMap<&GroupKey, Vec<&RespondentRecord>> = BTreeMap::new();
    for r in records {
        by_group.entry(&r.group).or_default().push(r);
    }

    let built: Vec<(GroupKey, GroupEvidence)> = by_group
        .into_par_iter()
        .map(|(key, members)| {
            let profile = mean_profile(members.iter().map(|r| &r.profile))?;
            let mut evidence = BTreeMap::new();
            for item in items.iter() {
                let ev = item_evidence_from(&members, item, &thresholds)?;
                if ev.support > 0 {
                    evidence.insert(item.item_id.clone(), ev);
                }
            }
            Ok((
                key.clone(),
                GroupEvidence {
                    profile: discretize_profile(&profile, &thresholds),
                    respondents: members.len() as u64,
                    items: evidence,
                },
            ))
        })
        .collect::<Result<_>>()?;

    Ok(EvidenceBank {
        thresholds,
        groups: built.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::values::LmhLabel;

    fn item() -> SurveyItem {
        SurveyItem {
            item_id: "Q1".into(),
            question_text: "Is X good?".into(),
            instruction: None,
            options: vec![
                SurveyOption::new("A", "Yes"),
                SurveyOption::new("B", "No"),
                SurveyOption::new("C", "Unsure"),
            ],
        }
    }

    fn record(id: &str, country: &str, v: f64, answer: Option<&str>) -> RespondentRecord {
        RespondentRecord {
            respondent_id: id.into(),
            group: GroupKey::country(country),
            profile: WelzelProfile::uniform(v).unwrap(),
            answers: answer
                .map(|a| ("Q1".to_string(), a.to_string()))
                .into_iter()
                .collect(),
        }
    }

    #[test]
    fn counts_to_distribution() {
        let recs = vec![
            record("1", "DE", 0.1, Some("A")),
            record("2", "DE", 0.3, Some("A")),
            record("3", "DE", 0.5, Some("B")),
            record("4", "DE", 0.9, Some("C")),
            record("5", "DE", 0.9, None),
            record("6", "FR", 0.9, Some("C")),
        ];
        let ev = build_item_evidence(
            &recs,
            &GroupKey::country("DE"),
            &item(),
            &Thresholds::default(),
        )
        .unwrap();
        assert_eq!(ev.support, 4);
        assert_eq!(ev.distribution.get("A"), 0.5);
        assert_eq!(ev.distribution.get("B"), 0.25);
        assert_eq!(ev.distribution.get("C"), 0.25);
        let a = &ev.option_evidence["A"];
        assert_eq!(a.count, 2);
        assert!((a.mean_profile.unwrap().values()[0] - 0.2).abs() < 1e-15);
        assert_eq!(a.signature, Some(LmhSignature::uniform(LmhLabel::Low)));
        ev.check().unwrap();
    }

    #[test]
    fn singleton_mean_is_identity() {
        let recs = vec![record("1", "DE", 0.42, Some("A"))];
        let ev = build_item_evidence(
            &recs,
            &GroupKey::country("DE"),
            &item(),
            &Thresholds::default(),
        )
        .unwrap();
        let a = &ev.option_evidence["A"];
        assert_eq!(a.mean_profile, Some(WelzelProfile::uniform(0.42).unwrap()));
        assert_eq!(a.signature, Some(LmhSignature::uniform(LmhLabel::Medium)));
        assert_eq!(ev.option_evidence["B"].count, 0);
        assert!(ev.option_evidence["B"].signature.is_none());
        assert_eq!(ev.distribution.get("B"), 0.0);
        assert!(ev.distribution.probs().contains_key("B"));
    }

    #[test]
    fn zero_support_is_empty() {
        let recs = vec![record("1", "DE", 0.42, None)];
        let ev = build_item_evidence(
            &recs,
            &GroupKey::country("DE"),
            &item(),
            &Thresholds::default(),
        )
        .unwrap();
        assert_eq!(ev.support, 0);
        assert!(ev.distribution.is_empty());
        assert!(ev.option_evidence.is_empty());
        ev.check().unwrap();
    }

    #[test]
    fn unknown_option_rejected() {
        let recs = vec![record("1", "DE", 0.42, Some("Z"))];
        assert!(build_item_evidence(
            &recs,
            &GroupKey::country("DE"),
            &item(),
            &Thresholds::default()
        )
        .is_err());
    }

    #[test]
    fn bank_group_profile_and_support() {
        let recs = vec![
            record("1", "DE", 0.5, Some("A")),
            record("2", "DE", 0.5, None),
        ];
        let catalog = ItemCatalog::new([item()]).unwrap();
        let bank = build_bank(&recs, &catalog, Thresholds::default()).unwrap();
        let de = GroupKey::country("DE");
        assert_eq!(
            bank.group(&de).unwrap().profile,
            LmhSignature::uniform(LmhLabel::Medium)
        );
        assert_eq!(bank.group(&de).unwrap().respondents, 2);
        assert_eq!(bank.support(&de, "Q1"), 1);
        assert_eq!(bank.support(&de, "Q9"), 0);
        assert_eq!(bank.support(&GroupKey::country("XX"), "Q1"), 0);
    }

    #[test]
    fn empty_records_give_empty_bank() {
        let bank = build_bank(
            &[],
            &ItemCatalog::new([item()]).unwrap(),
            Thresholds::default(),
        )
        .unwrap();
        assert!(bank.groups.is_empty());
    }

    #[test]
    fn group_key_equality_ignores_insertion_order() {
        let a = GroupKey::country("DE")
            .with_attribute("sex", "f")
            .with_attribute("age", "18-29");
        let b = GroupKey::country("DE")
            .with_attribute("age", "18-29")
            .with_attribute("sex", "f");
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "DE[age=18-29,sex=f]");
        assert!(GroupKey::country(" ").validate().is_err());
    }

    #[test]
    fn item_validation() {
        let mut bad = item();
        bad.options.truncate(1);
        assert!(bad.validate().is_err());
        let mut dup = item();
        dup.options[1].id = "A".into();
        assert!(dup.validate().is_err());
        assert!(ItemCatalog::new([item(), item()]).is_err());
    }

    #[test]
    fn find_country_requires_unique_match() {
        let recs = vec![
            RespondentRecord {
                group: GroupKey::country("DE").with_attribute("sex", "f"),
                ..record("1", "DE", 0.5, Some("A"))
            },
            RespondentRecord {
                group: GroupKey::country("DE").with_attribute("sex", "m"),
                ..record("2", "DE", 0.5, Some("A"))
            },
            record("3", "FR", 0.5, Some("B")),
        ];
        let bank = build_bank(
            &recs,
            &ItemCatalog::new([item()]).unwrap(),
            Thresholds::default(),
        )
        .unwrap();
        assert!(bank.find_country("FR").is_ok());
        assert!(matches!(bank.find_country("DE"), Err(Error::Input(_))));
        assert!(matches!(
            bank.find_country("US"),
            Err(Error::UnknownGroup(_))
        ));
    }
}
