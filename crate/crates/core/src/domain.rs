//! Shared vocabulary: labels, count bins, attributes, predictions and
//! capture-event records.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Species in the Snapshot Serengeti taxonomy.
pub const DEFAULT_SPECIES: usize = 48;
pub const COUNT_BINS: usize = 12;
pub const ATTRIBUTES: usize = 6;

/// Tolerance used for every "sums to one" check.
pub const NORMALIZATION_TOL: f64 = 1e-9;

pub const COUNT_BIN_LABELS: [&str; COUNT_BINS] = ["1", "2", "3", "4", "5", "6", "7", "8", "9", "10", "11-50", "51+"];

pub const ATTRIBUTE_NAMES: [&str; ATTRIBUTES] = [
    "standing",
    "resting",
    "moving",
    "eating",
    "interacting",
    "young_present",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeciesId(pub usize);

/// Ordered list of species names; position is the species id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Taxonomy {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::config("taxonomy", "needs at least two species"));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::config("taxonomy", "empty species name"));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::config("taxonomy", format!("duplicate species `{n}`")));
            }
        }
        Ok(Self { names, index })
    }

    /// `class_00`, `class_01`, ... for synthetic data.
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| format!("class_{i:02}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: SpeciesId) -> Option<&str> {
        self.names.get(id.0).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Result<SpeciesId> {
        self.index
            .get(name)
            .map(|&i| SpeciesId(i))
            .ok_or_else(|| Error::Taxonomy(name.to_string()))
    }
}

/// One of the twelve ordinal count buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountBin(pub usize);

impl CountBin {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn label(self) -> &'static str {
        COUNT_BIN_LABELS[self.0]
    }

    /// A representative animal count inside the bin (its lower edge).
    pub fn representative_count(self) -> u32 {
        match self.0 {
            i @ 0..=9 => i as u32 + 1,
            10 => 11,
            _ => 51,
        }
    }
}

impl fmt::Display for CountBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Maps an animal count to its bin: 1..=10 individually, 11-50, then 51+.
pub fn count_to_bin(n: i64) -> Result<CountBin> {
    match n {
        i64::MIN..=0 => Err(Error::InvalidCount(n)),
        1..=10 => Ok(CountBin(n as usize - 1)),
        11..=50 => Ok(CountBin(10)),
        _ => Ok(CountBin(11)),
    }
}

/// Behaviour flags plus presence of young; any subset is valid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeSet {
    pub standing: bool,
    pub resting: bool,
    pub moving: bool,
    pub eating: bool,
    pub interacting: bool,
    pub young_present: bool,
}

impl AttributeSet {
    pub fn to_array(self) -> [bool; ATTRIBUTES] {
        [
            self.standing,
            self.resting,
            self.moving,
            self.eating,
            self.interacting,
            self.young_present,
        ]
    }

    pub fn from_array(a: [bool; ATTRIBUTES]) -> Self {
        Self {
            standing: a[0],
            resting: a[1],
            moving: a[2],
            eating: a[3],
            interacting: a[4],
            young_present: a[5],
        }
    }
}

/// Ground truth for one image or capture event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelSet {
    pub empty: bool,
    pub species: Option<SpeciesId>,
    pub count: Option<CountBin>,
    pub attributes: Option<AttributeSet>,
}

impl LabelSet {
    pub fn empty() -> Self {
        Self {
            empty: true,
            species: None,
            count: None,
            attributes: None,
        }
    }

    pub fn animal(species: SpeciesId, count: CountBin, attributes: Option<AttributeSet>) -> Self {
        Self {
            empty: false,
            species: Some(species),
            count: Some(count),
            attributes,
        }
    }

    /// Checks the empty/non-empty field presence rules.
    pub fn check(&self) -> Result<()> {
        if self.empty {
            if self.species.is_some() || self.count.is_some() || self.attributes.is_some() {
                return Err(Error::Integrity(
                    "empty label must not carry species, count or attributes".into(),
                ));
            }
        } else {
            if self.species.is_none() {
                return Err(Error::MissingLabel("species"));
            }
            if self.count.is_none() {
                return Err(Error::MissingLabel("count"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitHint {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub event_id: String,
    pub features: Vec<f64>,
    pub label: Option<LabelSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureEvent {
    pub event_id: String,
    pub images: Vec<ImageRecord>,
    pub label: LabelSet,
    /// Species beyond `label.species`; non-empty only for multi-species events.
    pub other_species: Vec<SpeciesId>,
    pub split_hint: Option<SplitHint>,
}

impl CaptureEvent {
    pub fn new(event_id: impl Into<String>, label: LabelSet, images: Vec<ImageRecord>) -> Self {
        Self {
            event_id: event_id.into(),
            images,
            label,
            other_species: Vec::new(),
            split_hint: None,
        }
    }

    pub fn is_multi_species(&self) -> bool {
        !self.other_species.is_empty()
    }
}

/// Copies the event label onto every member image.
pub fn propagate_event_labels(mut event: CaptureEvent) -> CaptureEvent {
    for image in &mut event.images {
        image.label = Some(event.label);
        image.event_id.clone_from(&event.event_id);
    }
    event
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryPrediction {
    pub p_animal: f64,
    pub p_empty: f64,
}

impl BinaryPrediction {
    pub fn is_animal(&self) -> bool {
        self.p_animal >= self.p_empty
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskPrediction {
    pub species: Vec<f64>,
    pub count: Vec<f64>,
    /// Positive-class probability of each attribute head.
    pub attributes: Vec<f64>,
}

impl MultiTaskPrediction {
    pub fn uniform(species: usize, count: usize, attributes: usize) -> Self {
        Self {
            species: vec![1.0 / species as f64; species],
            count: vec![1.0 / count as f64; count],
            attributes: vec![0.5; attributes],
        }
    }

    pub fn top_species(&self) -> usize {
        argmax(&self.species)
    }

    pub fn top_count(&self) -> usize {
        argmax(&self.count)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    SpeciesRange,
    SpeciesNormalization,
    CountRange,
    CountNormalization,
    AttributeRange,
    NonFinite,
    EmptyHead,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::SpeciesRange => "species range",
            Violation::SpeciesNormalization => "species normalization",
            Violation::CountRange => "count range",
            Violation::CountNormalization => "count normalization",
            Violation::AttributeRange => "attribute range",
            Violation::NonFinite => "non-finite value",
            Violation::EmptyHead => "empty head",
        })
    }
}

/// Lists every violated prediction invariant; never fails.
pub fn validate_prediction(p: &MultiTaskPrediction) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let all = p.species.iter().chain(&p.count).chain(&p.attributes);
    if all.clone().any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite);
    }
    if p.species.is_empty() || p.count.is_empty() {
        out.push(Violation::EmptyHead);
    }
    let in_unit = |v: &f64| (0.0..=1.0).contains(v);
    let normalized = |xs: &[f64]| (xs.iter().sum::<f64>() - 1.0).abs() <= NORMALIZATION_TOL;
    if !p.species.iter().all(in_unit) {
        out.push(Violation::SpeciesRange);
    }
    if !normalized(&p.species) {
        out.push(Violation::SpeciesNormalization);
    }
    if !p.count.iter().all(in_unit) {
        out.push(Violation::CountRange);
    }
    if !normalized(&p.count) {
        out.push(Violation::CountNormalization);
    }
    if !p.attributes.iter().all(in_unit) {
        out.push(Violation::AttributeRange);
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn count_bins() {
        assert_eq!(count_to_bin(1).unwrap(), CountBin(0));
        assert_eq!(count_to_bin(10).unwrap(), CountBin(9));
        assert_eq!(count_to_bin(11).unwrap(), CountBin(10));
        assert_eq!(count_to_bin(30).unwrap().label(), "11-50");
        assert_eq!(count_to_bin(50).unwrap(), CountBin(10));
        assert_eq!(count_to_bin(51).unwrap().label(), "51+");
        assert!(matches!(count_to_bin(0), Err(Error::InvalidCount(0))));
        assert!(count_to_bin(-3).is_err());
    }

    #[test]
    fn representative_counts_round_trip() {
        for i in 0..COUNT_BINS {
            let b = CountBin(i);
            assert_eq!(count_to_bin(b.representative_count() as i64).unwrap(), b);
        }
    }

    proptest! {
        #[test]
        fn count_to_bin_monotone(a in 1i64..10_000, b in 1i64..10_000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(count_to_bin(lo).unwrap() <= count_to_bin(hi).unwrap());
        }
    }

    fn event(n: usize) -> CaptureEvent {
        let images = (0..n)
            .map(|i| ImageRecord {
                image_id: format!("img{i}"),
                event_id: "ev".into(),
                features: vec![i as f64],
                label: None,
            })
            .collect();
        let hartebeest = LabelSet::animal(SpeciesId(18), CountBin(0), None);
        CaptureEvent::new("ev", hartebeest, images)
    }

    #[test]
    fn propagation_labels_every_image() {
        let e = propagate_event_labels(event(3));
        assert!(e.images.iter().all(|im| im.label == Some(e.label)));
        assert_eq!(e.images.len(), 3);
        let single = propagate_event_labels(event(1));
        assert_eq!(single.images[0].label, Some(single.label));
    }

    #[test]
    fn propagation_is_idempotent_and_order_preserving() {
        let once = propagate_event_labels(event(4));
        let twice = propagate_event_labels(once.clone());
        assert_eq!(once, twice);
        let ids: Vec<_> = once.images.iter().map(|i| i.image_id.as_str()).collect();
        assert_eq!(ids, ["img0", "img1", "img2", "img3"]);
    }

    #[test]
    fn validate_uniform_is_ok() {
        let p = MultiTaskPrediction::uniform(48, 12, 6);
        assert_eq!(validate_prediction(&p), Ok(()));
    }

    #[test]
    fn validate_reports_violations() {
        let mut p = MultiTaskPrediction::uniform(48, 12, 6);
        p.species = vec![0.9 / 48.0; 48];
        let v = validate_prediction(&p).unwrap_err();
        assert_eq!(v, vec![Violation::SpeciesNormalization]);
        assert_eq!(v[0].to_string(), "species normalization");

        let mut p = MultiTaskPrediction::uniform(48, 12, 6);
        p.attributes[2] = 1.3;
        assert_eq!(validate_prediction(&p).unwrap_err(), vec![Violation::AttributeRange]);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 1.0]), 2);
    }

    #[test]
    fn label_set_rules() {
        assert!(LabelSet::empty().check().is_ok());
        assert!(LabelSet::animal(SpeciesId(0), CountBin(0), None).check().is_ok());
        let bad = LabelSet {
            empty: false,
            species: Some(SpeciesId(1)),
            count: None,
            attributes: None,
        };
        assert!(matches!(bad.check(), Err(Error::MissingLabel("count"))));
    }

    #[test]
    fn taxonomy_bijection() {
        let t = Taxonomy::numbered(48).unwrap();
        for i in 0..48 {
            let name = t.name(SpeciesId(i)).unwrap();
            assert_eq!(t.id_of(name).unwrap(), SpeciesId(i));
        }
        assert!(Taxonomy::new(["a", "a"]).is_err());
        assert!(matches!(t.id_of("unicorn"), Err(Error::Taxonomy(_))));
    }
}
