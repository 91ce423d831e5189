//! Welzel value profiles and their low/medium/high discretization.
//!
//! A profile is a point in `[0,1]^8`, one coordinate per sub-index in the
//! fixed order DEFIANCE, DISBELIEF, RELATIVISM, SCEPTICISM (secular side)
//! followed by AUTONOMY, EQUALITY, CHOICE, VOICE (emancipative side).
//! Everything here is a pure function over immutable values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of Welzel sub-indices.
pub const DIMENSIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubIndex {
    Defiance,
    Disbelief,
    Relativism,
    Scepticism,
    Autonomy,
    Equality,
    Choice,
    Voice,
}

impl SubIndex {
    pub const ALL: [SubIndex; DIMENSIONS] = [
        SubIndex::Defiance,
        SubIndex::Disbelief,
        SubIndex::Relativism,
        SubIndex::Scepticism,
        SubIndex::Autonomy,
        SubIndex::Equality,
        SubIndex::Choice,
        SubIndex::Voice,
    ];

    /// 1-based position in the canonical order.
    pub fn ordinal(self) -> usize {
        self as usize + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            SubIndex::Defiance => "DEFIANCE",
            SubIndex::Disbelief => "DISBELIEF",
            SubIndex::Relativism => "RELATIVISM",
            SubIndex::Scepticism => "SCEPTICISM",
            SubIndex::Autonomy => "AUTONOMY",
            SubIndex::Equality => "EQUALITY",
            SubIndex::Choice => "CHOICE",
            SubIndex::Voice => "VOICE",
        }
    }

    pub fn is_secular(self) -> bool {
        self.ordinal() <= 4
    }

    pub fn is_emancipative(self) -> bool {
        !self.is_secular()
    }

    pub fn from_name(name: &str) -> Option<SubIndex> {
        SubIndex::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for SubIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Canonical sub-index names in order.
pub fn canonical_order() -> [&'static str; DIMENSIONS] {
    SubIndex::ALL.map(SubIndex::name)
}

/// A respondent or option value profile: eight components in `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WelzelProfile([f64; DIMENSIONS]);

impl WelzelProfile {
    pub fn new(values: [f64; DIMENSIONS]) -> Result<Self> {
        for (sub, v) in SubIndex::ALL.iter().zip(values) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{sub} component {v} outside [0,1]")));
            }
        }
        Ok(WelzelProfile(values))
    }

    pub fn uniform(value: f64) -> Result<Self> {
        Self::new([value; DIMENSIONS])
    }

    pub fn values(&self) -> &[f64; DIMENSIONS] {
        &self.0
    }

    pub fn get(&self, sub: SubIndex) -> f64 {
        self.0[sub as usize]
    }
}

impl TryFrom<Vec<f64>> for WelzelProfile {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        let arr: [f64; DIMENSIONS] = v.try_into().map_err(|v: Vec<f64>| {
            Error::Domain(format!("profile has {} components, expected 8", v.len()))
        })?;
        WelzelProfile::new(arr)
    }
}

impl From<WelzelProfile> for Vec<f64> {
    fn from(p: WelzelProfile) -> Self {
        p.0.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LmhLabel {
    Low,
    Medium,
    High,
}

impl LmhLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            LmhLabel::Low => "low",
            LmhLabel::Medium => "medium",
            LmhLabel::High => "high",
        }
    }
}

impl fmt::Display for LmhLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LmhLabel {
    type Err = Error;

    /// Strict: only the exact lowercase strings are accepted.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(LmhLabel::Low),
            "medium" => Ok(LmhLabel::Medium),
            "high" => Ok(LmhLabel::High),
            other => Err(Error::Domain(format!(
                "`{other}` is not one of low/medium/high"
            ))),
        }
    }
}

/// Eight LMH labels in sub-index order. Serializes as an ordered list of
/// eight lowercase strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<LmhLabel>", into = "Vec<LmhLabel>")]
pub struct LmhSignature([LmhLabel; DIMENSIONS]);

impl LmhSignature {
    pub fn new(labels: [LmhLabel; DIMENSIONS]) -> Self {
        LmhSignature(labels)
    }

    pub fn uniform(label: LmhLabel) -> Self {
        LmhSignature([label; DIMENSIONS])
    }

    pub fn labels(&self) -> &[LmhLabel; DIMENSIONS] {
        &self.0
    }

    pub fn get(&self, sub: SubIndex) -> LmhLabel {
        self.0[sub as usize]
    }

    /// Parses a list of label strings; requires exactly eight valid labels.
    pub fn from_strs<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        if labels.len() != DIMENSIONS {
            return Err(Error::Domain(format!(
                "signature has {} labels, expected {DIMENSIONS}",
                labels.len()
            )));
        }
        let mut out = [LmhLabel::Low; DIMENSIONS];
        for (slot, s) in out.iter_mut().zip(labels) {
            *slot = s.as_ref().parse()?;
        }
        Ok(LmhSignature(out))
    }
}

impl TryFrom<Vec<LmhLabel>> for LmhSignature {
    type Error = Error;

    fn try_from(v: Vec<LmhLabel>) -> Result<Self> {
        let n = v.len();
        let arr: [LmhLabel; DIMENSIONS] = v.try_into().map_err(|_| {
            Error::Domain(format!("signature has {n} labels, expected {DIMENSIONS}"))
        })?;
        Ok(LmhSignature(arr))
    }
}

impl From<LmhSignature> for Vec<LmhLabel> {
    fn from(s: LmhSignature) -> Self {
        s.0.to_vec()
    }
}

/// Cut points for the LMH map. `0 < tau1 < tau2 < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds")]
pub struct Thresholds {
    tau1: f64,
    tau2: f64,
}

#[derive(Deserialize)]
struct RawThresholds {
    tau1: f64,
    tau2: f64,
}

impl TryFrom<RawThresholds> for Thresholds {
    type Error = Error;

    fn try_from(r: RawThresholds) -> Result<Self> {
        Thresholds::new(r.tau1, r.tau2)
    }
}

impl Thresholds {
    pub const DEFAULT_TAU1: f64 = 0.33;
    pub const DEFAULT_TAU2: f64 = 0.67;

    pub fn new(tau1: f64, tau2: f64) -> Result<Self> {
        if !(0.0 < tau1 && tau1 < tau2 && tau2 < 1.0) {
            return Err(Error::Domain(format!(
                "thresholds must satisfy 0 < tau1 < tau2 < 1, got ({tau1}, {tau2})"
            )));
        }
        Ok(Thresholds { tau1, tau2 })
    }

    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau1: Self::DEFAULT_TAU1,
            tau2: Self::DEFAULT_TAU2,
        }
    }
}

/// Maps a value in `[0,1]` to low (`a < tau1`), medium (`tau1 <= a < tau2`)
/// or high (`a >= tau2`).
pub fn discretize_scalar(a: f64, t: &Thresholds) -> Result<LmhLabel> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::Domain(format!("value {a} outside [0,1]")));
    }
    Ok(if a < t.tau1 {
        LmhLabel::Low
    } else if a < t.tau2 {
        LmhLabel::Medium
    } else {
        LmhLabel::High
    })
}

pub fn discretize_profile(p: &WelzelProfile, t: &Thresholds) -> LmhSignature {
    // components of a constructed profile are already in range
    LmhSignature(p.0.map(|a| discretize_scalar(a, t).expect("profile components are in [0,1]")))
}

/// Component-wise arithmetic mean.
pub fn mean_profile<'a, I>(profiles: I) -> Result<WelzelProfile>
where
    I: IntoIterator<Item = &'a WelzelProfile>,
{
    let mut sums = [0.0f64; DIMENSIONS];
    let mut n = 0usize;
    for p in profiles {
        for (s, v) in sums.iter_mut().zip(p.0) {
            *s += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptySupport("mean of an empty profile list".into()));
    }
    let mean = sums.map(|s| (s / n as f64).clamp(0.0, 1.0));
    Ok(WelzelProfile(mean))
}

/// Fraction of the eight positions where the two signatures agree.
pub fn signature_match_fraction(pred: &LmhSignature, gold: &LmhSignature) -> f64 {
    matching_positions(pred, gold) as f64 / DIMENSIONS as f64
}

pub(crate) fn matching_positions(a: &LmhSignature, b: &LmhSignature) -> usize {
    a.0.iter().zip(&b.0).filter(|(x, y)| x == y).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t() -> Thresholds {
        Thresholds::default()
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(discretize_scalar(0.20, &t()).unwrap(), LmhLabel::Low);
        assert_eq!(discretize_scalar(0.33, &t()).unwrap(), LmhLabel::Medium);
        assert_eq!(discretize_scalar(0.67, &t()).unwrap(), LmhLabel::High);
        assert_eq!(discretize_scalar(0.0, &t()).unwrap(), LmhLabel::Low);
        assert_eq!(discretize_scalar(1.0, &t()).unwrap(), LmhLabel::High);
    }

    #[test]
    fn scalar_rejects_out_of_range() {
        assert!(discretize_scalar(-0.01, &t()).is_err());
        assert!(discretize_scalar(1.000001, &t()).is_err());
        assert!(discretize_scalar(f64::NAN, &t()).is_err());
    }

    #[test]
    fn thresholds_validated() {
        assert!(Thresholds::new(0.5, 0.5).is_err());
        assert!(Thresholds::new(0.0, 0.5).is_err());
        assert!(Thresholds::new(0.4, 1.0).is_err());
        assert!(serde_json::from_str::<Thresholds>(r#"{"tau1":0.7,"tau2":0.2}"#).is_err());
        let d = Thresholds::default();
        assert_eq!((d.tau1(), d.tau2()), (0.33, 0.67));
    }

    #[test]
    fn profile_examples() {
        let zeros = WelzelProfile::uniform(0.0).unwrap();
        let ones = WelzelProfile::uniform(1.0).unwrap();
        assert_eq!(
            discretize_profile(&zeros, &t()),
            LmhSignature::uniform(LmhLabel::Low)
        );
        assert_eq!(
            discretize_profile(&ones, &t()),
            LmhSignature::uniform(LmhLabel::High)
        );

        let p = WelzelProfile::new([0.1, 0.5, 0.9, 0.1, 0.5, 0.9, 0.1, 0.5]).unwrap();
        use LmhLabel::*;
        assert_eq!(
            discretize_profile(&p, &t()),
            LmhSignature::new([Low, Medium, High, Low, Medium, High, Low, Medium])
        );
    }

    #[test]
    fn profile_rejects_bad_components() {
        assert!(WelzelProfile::new([0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 1.2]).is_err());
        assert!(serde_json::from_str::<WelzelProfile>("[0.1,0.2]").is_err());
    }

    #[test]
    fn mean_examples() {
        let zeros = WelzelProfile::uniform(0.0).unwrap();
        let ones = WelzelProfile::uniform(1.0).unwrap();
        assert_eq!(
            mean_profile([&zeros, &ones]).unwrap(),
            WelzelProfile::uniform(0.5).unwrap()
        );
        let p = WelzelProfile::new([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap();
        assert_eq!(mean_profile([&p]).unwrap(), p);
        assert!(matches!(
            mean_profile(std::iter::empty()),
            Err(Error::EmptySupport(_))
        ));
    }

    #[test]
    fn match_fraction_examples() {
        use LmhLabel::*;
        let a = LmhSignature::new([Low, Low, Medium, Medium, High, High, Low, Medium]);
        assert_eq!(signature_match_fraction(&a, &a), 1.0);

        let b = LmhSignature::new([High, High, Low, Low, Low, Low, High, High]);
        assert_eq!(signature_match_fraction(&a, &b), 0.0);

        let c = LmhSignature::new([Low, Low, Medium, Medium, High, High, High, High]);
        assert_eq!(signature_match_fraction(&a, &c), 0.75);
    }

    #[test]
    fn signature_serializes_as_ordered_strings() {
        use LmhLabel::*;
        let s = LmhSignature::new([Low, Medium, High, Low, Medium, High, Low, Medium]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"["low","medium","high","low","medium","high","low","medium"]"#
        );
        assert_eq!(serde_json::from_str::<LmhSignature>(&json).unwrap(), s);
        assert!(serde_json::from_str::<LmhSignature>(
            r#"["High","low","low","low","low","low","low","low"]"#
        )
        .is_err());
        assert!(LmhSignature::from_strs(&["low"; 7]).is_err());
    }

    #[test]
    fn sub_index_order() {
        assert_eq!(
            canonical_order(),
            [
                "DEFIANCE",
                "DISBELIEF",
                "RELATIVISM",
                "SCEPTICISM",
                "AUTONOMY",
                "EQUALITY",
                "CHOICE",
                "VOICE"
            ]
        );
        for (i, s) in SubIndex::ALL.iter().enumerate() {
            assert_eq!(s.ordinal(), i + 1);
            assert_eq!(SubIndex::from_name(s.name()), Some(*s));
            assert_eq!(s.is_secular(), i < 4);
        }
        assert_eq!(
            serde_json::to_string(&SubIndex::Scepticism).unwrap(),
            "\"SCEPTICISM\""
        );
    }

    fn arb_profile() -> impl Strategy<Value = WelzelProfile> {
        proptest::array::uniform8(0.0f64..=1.0).prop_map(|a| WelzelProfile::new(a).unwrap())
    }

    fn arb_signature() -> impl Strategy<Value = LmhSignature> {
        proptest::array::uniform8(prop_oneof![
            Just(LmhLabel::Low),
            Just(LmhLabel::Medium),
            Just(LmhLabel::High)
        ])
        .prop_map(LmhSignature::new)
    }

    proptest! {
        #[test]
        fn discretize_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(discretize_scalar(lo, &t()).unwrap() <= discretize_scalar(hi, &t()).unwrap());
        }

        #[test]
        fn mean_is_permutation_invariant(mut ps in proptest::collection::vec(arb_profile(), 1..12)) {
            let forward = mean_profile(&ps).unwrap();
            ps.reverse();
            let backward = mean_profile(&ps).unwrap();
            for (x, y) in forward.values().iter().zip(backward.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn match_fraction_symmetric_and_on_grid(a in arb_signature(), b in arb_signature()) {
            let f = signature_match_fraction(&a, &b);
            prop_assert_eq!(f, signature_match_fraction(&b, &a));
            prop_assert!((f * 8.0 - (f * 8.0).round()).abs() == 0.0);
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
