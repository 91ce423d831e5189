//! Deterministic synthetic survey microdata.
//!
//! Countries get distinct value centres; each item has a hidden loading on
//! the eight sub-indices so that option choice correlates with the
//! respondent's profile. Used by tests, benchmarks, and `evida synth`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::evidence::{GroupKey, RespondentRecord, SurveyItem, SurveyOption};
use crate::values::{SubIndex, WelzelProfile, DIMENSIONS};

const SUBJECTS: &[&str] = &[
    "religion",
    "family",
    "work",
    "politics",
    "gender equality",
    "free speech",
    "immigration",
    "technology",
    "the environment",
    "tradition",
    "obedience to authority",
    "homosexuality",
    "divorce",
    "independence in children",
    "the national government",
    "democracy",
    "science",
    "music",
    "traditional cuisine",
    "caring for the elderly",
];

const TEMPLATES: &[&str] = &[
    "How important is {} in your life?",
    "Do you agree that {} should matter more in society?",
    "How much confidence do you have in {}?",
    "Would you say attitudes towards {} are changing for the better?",
];

fn scale(n: usize) -> &'static [&'static str] {
    match n {
        2 => &["Yes", "No"],
        3 => &["Agree", "Neither agree nor disagree", "Disagree"],
        4 => &[
            "Very important",
            "Rather important",
            "Not very important",
            "Not at all important",
        ],
        _ => &[
            "Strongly agree",
            "Agree",
            "Neither",
            "Disagree",
            "Strongly disagree",
        ],
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub countries: Vec<String>,
    pub respondents_per_group: usize,
    pub items: usize,
    /// Probability that a respondent skips an item.
    pub missing_rate: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn small(seed: u64) -> Self {
        SynthConfig {
            countries: vec!["Germany".into(), "Vietnam".into()],
            respondents_per_group: 60,
            items: 6,
            missing_rate: 0.1,
            seed,
        }
    }

    pub fn generate(&self) -> SynthData {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let items = self.make_items(&mut rng);
        let loadings: Vec<[f64; DIMENSIONS]> = items
            .iter()
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect();

        let mut records = Vec::new();
        for country in &self.countries {
            let centre: [f64; DIMENSIONS] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
            for r in 0..self.respondents_per_group {
                let values = centre.map(|c| {
                    let v: f64 = (c + rng.gen_range(-0.3..0.3)).clamp(0.0, 1.0);
                    (v * 1000.0).round() / 1000.0
                });
                let profile = WelzelProfile::new(values).expect("clamped into range");
                let mut answers = BTreeMap::new();
                for (item, w) in items.iter().zip(&loadings) {
                    if rng.gen_bool(self.missing_rate) {
                        continue;
                    }
                    let lean: f64 = w.iter().zip(values).map(|(w, z)| w * (z - 0.5)).sum();
                    let n = item.options.len();
                    let weights: Vec<f64> = (0..n)
                        .map(|j| {
                            let pos = j as f64 / (n - 1) as f64 - 0.5;
                            (4.0 * pos * lean).exp()
                        })
                        .collect();
                    let total: f64 = weights.iter().sum();
                    let mut u = rng.gen_range(0.0..total);
                    let mut pick = n - 1;
                    for (j, w) in weights.iter().enumerate() {
                        if u < *w {
                            pick = j;
                            break;
                        }
                        u -= w;
                    }
                    answers.insert(item.item_id.clone(), item.options[pick].id.clone());
                }
                records.push(RespondentRecord {
                    respondent_id: format!("{}-{r:05}", country_code(country)),
                    group: GroupKey::country(country.clone()),
                    profile,
                    answers,
                });
            }
        }
        SynthData { items, records }
    }

    fn make_items(&self, rng: &mut ChaCha8Rng) -> Vec<SurveyItem> {
        (0..self.items)
            .map(|i| {
                let subject = SUBJECTS[i % SUBJECTS.len()];
                let round = i / SUBJECTS.len();
                let mut text = TEMPLATES[round % TEMPLATES.len()].replace("{}", subject);
                if round >= TEMPLATES.len() {
                    text.push_str(&format!(" (variant {})", round / TEMPLATES.len()));
                }
                let n = rng.gen_range(2..=5);
                let options = scale(n)
                    .iter()
                    .enumerate()
                    .map(|(j, t)| SurveyOption::new(((b'A' + j as u8) as char).to_string(), *t))
                    .collect();
                SurveyItem {
                    item_id: format!("Q{:03}", i + 1),
                    question_text: text,
                    instruction: (i % 3 == 0).then(|| "Choose one answer.".to_string()),
                    options,
                }
            })
            .collect()
    }
}

fn country_code(country: &str) -> String {
    country
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .take(3)
        .collect::<String>()
        .to_uppercase()
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub items: Vec<SurveyItem>,
    pub records: Vec<RespondentRecord>,
}

impl SynthData {
    /// Writes the respondents as delimited microdata with the standard
    /// header. Skipped answers are written as empty fields.
    pub fn write_microdata<W: Write>(&self, out: W, delimiter: u8) -> std::io::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(out);
        let mut header = vec!["respondent_id".to_string(), "country".to_string()];
        header.extend(SubIndex::ALL.iter().map(|s| s.name().to_string()));
        header.extend(self.items.iter().map(|i| i.item_id.clone()));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.respondent_id.clone(), r.group.country.clone()];
            row.extend(r.profile.values().iter().map(|v| v.to_string()));
            row.extend(
                self.items
                    .iter()
                    .map(|i| r.answers.get(&i.item_id).cloned().unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
        w.flush()
    }

    pub fn write_items<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for item in &self.items {
            writeln!(
                out,
                "{}",
                serde_json::to_string(item).expect("items serialize")
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = SynthConfig::small(3).generate();
        let b = SynthConfig::small(3).generate();
        assert_eq!(a.records, b.records);
        assert_eq!(a.items, b.items);
        assert_ne!(SynthConfig::small(4).generate().records, a.records);
    }

    #[test]
    fn items_are_valid() {
        let cfg = SynthConfig {
            items: 100,
            ..SynthConfig::small(1)
        };
        let data = cfg.generate();
        crate::evidence::ItemCatalog::new(data.items).unwrap();
    }
}
