//! JSONL manifest ingestion, event-aware splitting and subset construction.
//!
//! A manifest starts with a taxonomy header line, `{"taxonomy": [..names..]}`,
//! followed by one JSON object per image. Lines of one capture event must be
//! contiguous. Event-level fields (`empty`, `species`, `count`, `attributes`,
//! `split`) are repeated on each image line and must agree. A multi-species
//! event lists `species` more than once, either as repeated keys or as an array.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, IgnoredAny, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::domain::{
    count_to_bin, propagate_event_labels, AttributeSet, CaptureEvent, ImageRecord, LabelSet, SpeciesId, SplitHint,
    Taxonomy,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_events: usize,
    pub total_images: usize,
    pub empty_events: usize,
    pub empty_images: usize,
    pub events_per_class: Vec<usize>,
    pub images_per_class: Vec<usize>,
    pub multi_species_events: usize,
}

impl DatasetStats {
    fn compute(taxonomy: &Taxonomy, events: &[CaptureEvent]) -> Self {
        let k = taxonomy.len();
        let mut s = DatasetStats {
            total_events: events.len(),
            total_images: 0,
            empty_events: 0,
            empty_images: 0,
            events_per_class: vec![0; k],
            images_per_class: vec![0; k],
            multi_species_events: 0,
        };
        for e in events {
            s.total_images += e.images.len();
            if e.is_multi_species() {
                s.multi_species_events += 1;
            }
            if e.label.empty {
                s.empty_events += 1;
                s.empty_images += e.images.len();
            } else if let Some(SpeciesId(c)) = e.label.species {
                s.events_per_class[c] += 1;
                s.images_per_class[c] += e.images.len();
            }
        }
        s
    }

    pub fn non_empty_images(&self) -> usize {
        self.total_images - self.empty_images
    }
}

/// Capture events plus their taxonomy. Immutable; transformations return a
/// new dataset.
pub struct Dataset {
    taxonomy: Taxonomy,
    events: Vec<CaptureEvent>,
    stats: OnceLock<DatasetStats>,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Self {
            taxonomy: self.taxonomy.clone(),
            events: self.events.clone(),
            stats: OnceLock::new(),
        }
    }
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.taxonomy == other.taxonomy && self.events == other.events
    }
}

impl fmt::Debug for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dataset")
            .field("classes", &self.taxonomy.len())
            .field("events", &self.events.len())
            .finish()
    }
}

impl Dataset {
    /// Validates ids and label rules, and propagates event labels to images.
    pub fn new(taxonomy: Taxonomy, events: Vec<CaptureEvent>) -> Result<Self> {
        let mut event_ids = HashSet::with_capacity(events.len());
        let mut image_ids = HashSet::new();
        let k = taxonomy.len();
        let mut out = Vec::with_capacity(events.len());
        for e in events {
            if !event_ids.insert(e.event_id.clone()) {
                return Err(Error::Integrity(format!("duplicate event_id `{}`", e.event_id)));
            }
            if e.images.is_empty() {
                return Err(Error::Integrity(format!("event `{}` has no images", e.event_id)));
            }
            e.label.check()?;
            for s in e.label.species.iter().chain(&e.other_species) {
                if s.0 >= k {
                    return Err(Error::Taxonomy(format!("species id {}", s.0)));
                }
            }
            for im in &e.images {
                if !image_ids.insert(im.image_id.clone()) {
                    return Err(Error::Integrity(format!("duplicate image_id `{}`", im.image_id)));
                }
            }
            out.push(propagate_event_labels(e));
        }
        Ok(Self {
            taxonomy,
            events: out,
            stats: OnceLock::new(),
        })
    }

    // Only for subsets of an already validated dataset.
    fn derived(&self, events: Vec<CaptureEvent>) -> Self {
        Self {
            taxonomy: self.taxonomy.clone(),
            events,
            stats: OnceLock::new(),
        }
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn events(&self) -> &[CaptureEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<CaptureEvent> {
        self.events
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRecord> + '_ {
        self.events.iter().flat_map(|e| e.images.iter())
    }

    pub fn stats(&self) -> &DatasetStats {
        self.stats
            .get_or_init(|| DatasetStats::compute(&self.taxonomy, &self.events))
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.images().next().map(|im| im.features.len())
    }

    /// Keeps events for which `keep` returns true.
    pub fn filter_events(&self, mut keep: impl FnMut(&CaptureEvent) -> bool) -> Self {
        self.derived(self.events.iter().filter(|e| keep(e)).cloned().collect())
    }

    /// Non-empty events only.
    pub fn non_empty(&self) -> Self {
        self.filter_events(|e| !e.label.empty)
    }
}

/// Reads and validates a manifest file; `feature_ref` paths resolve relative
/// to the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    read_manifest(BufReader::new(file), &base)
}

pub fn read_manifest(reader: impl BufRead, base_dir: &Path) -> Result<Dataset> {
    let mut taxonomy: Option<Taxonomy> = None;
    let mut events: Vec<CaptureEvent> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let parse_err = |message: String| Error::Parse { line: lineno, message };

        if let Some(names) = raw.taxonomy {
            if taxonomy.is_some() {
                return Err(parse_err("taxonomy header repeated".into()));
            }
            taxonomy = Some(Taxonomy::new(names).map_err(|e| parse_err(e.to_string()))?);
            continue;
        }
        let tax = taxonomy
            .as_ref()
            .ok_or_else(|| parse_err("missing taxonomy header before first record".into()))?;

        let event_id = raw.event_id.ok_or_else(|| parse_err("missing event_id".into()))?;
        let image_id = raw.image_id.ok_or_else(|| parse_err("missing image_id".into()))?;
        let empty = raw.empty.ok_or_else(|| parse_err("missing empty".into()))?;
        let features = match (raw.features, raw.feature_ref) {
            (Some(f), None) => f,
            (None, Some(r)) => read_feature_file(&base_dir.join(r))?,
            (Some(_), Some(_)) => return Err(parse_err("both features and feature_ref given".into())),
            (None, None) => return Err(parse_err("missing features".into())),
        };

        let mut species = Vec::with_capacity(raw.species.len());
        for name in &raw.species {
            species.push(tax.id_of(name)?);
        }
        let count = raw
            .count
            .map(|c| count_to_bin(c).map_err(|e| parse_err(e.to_string())))
            .transpose()?;
        let label = LabelSet {
            empty,
            species: species.first().copied(),
            count,
            attributes: raw.attributes,
        };
        label.check().map_err(|e| parse_err(e.to_string()))?;
        let other_species = species.get(1..).unwrap_or_default().to_vec();

        let image = ImageRecord {
            image_id,
            event_id: event_id.clone(),
            features,
            label: Some(label),
        };

        match events.last_mut() {
            Some(last) if last.event_id == event_id => {
                if last.label != label || last.other_species != other_species || last.split_hint != raw.split {
                    return Err(Error::Integrity(format!(
                        "line {lineno}: event `{event_id}` has conflicting labels"
                    )));
                }
                last.images.push(image);
            }
            _ => {
                if !seen.insert(event_id.clone()) {
                    return Err(Error::Integrity(format!(
                        "line {lineno}: duplicate event_id `{event_id}`"
                    )));
                }
                let mut e = CaptureEvent::new(event_id, label, vec![image]);
                e.other_species = other_species;
                e.split_hint = raw.split;
                events.push(e);
            }
        }
    }
    let taxonomy = taxonomy.ok_or_else(|| Error::Parse {
        line: 0,
        message: "missing taxonomy header".into(),
    })?;
    Dataset::new(taxonomy, events)
}

fn read_feature_file(path: &PathBuf) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Parse {
                line: 0,
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

#[derive(Default)]
struct RawLine {
    taxonomy: Option<Vec<String>>,
    event_id: Option<String>,
    image_id: Option<String>,
    features: Option<Vec<f64>>,
    feature_ref: Option<String>,
    empty: Option<bool>,
    species: Vec<String>,
    count: Option<i64>,
    attributes: Option<AttributeSet>,
    split: Option<SplitHint>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl<'de> Deserialize<'de> for RawLine {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct LineVisitor;

        fn set<T, E: de::Error>(slot: &mut Option<T>, v: T, key: &str) -> std::result::Result<(), E> {
            if slot.replace(v).is_some() {
                return Err(E::custom(format!("duplicate field `{key}`")));
            }
            Ok(())
        }

        impl<'de> Visitor<'de> for LineVisitor {
            type Value = RawLine;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a manifest record object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawLine, A::Error> {
                let mut r = RawLine::default();
                while let Some(key) = map.next_key::<String>()? {
                    match key.as_str() {
                        "taxonomy" => set(&mut r.taxonomy, map.next_value()?, &key)?,
                        "event_id" => set(&mut r.event_id, map.next_value()?, &key)?,
                        "image_id" => set(&mut r.image_id, map.next_value()?, &key)?,
                        "features" => set(&mut r.features, map.next_value()?, &key)?,
                        "feature_ref" => set(&mut r.feature_ref, map.next_value()?, &key)?,
                        "empty" => set(&mut r.empty, map.next_value()?, &key)?,
                        "count" => {
                            let c: Option<i64> = map.next_value()?;
                            if let Some(c) = c {
                                set(&mut r.count, c, &key)?;
                            }
                        }
                        "attributes" => {
                            let a: Option<AttributeSet> = map.next_value()?;
                            if let Some(a) = a {
                                set(&mut r.attributes, a, &key)?;
                            }
                        }
                        "split" => {
                            let s: Option<SplitHint> = map.next_value()?;
                            if let Some(s) = s {
                                set(&mut r.split, s, &key)?;
                            }
                        }
                        "species" => match map.next_value::<Option<OneOrMany>>()? {
                            Some(OneOrMany::One(s)) => r.species.push(s),
                            Some(OneOrMany::Many(v)) => r.species.extend(v),
                            None => {}
                        },
                        _ => {
                            map.next_value::<IgnoredAny>()?;
                        }
                    }
                }
                Ok(r)
            }
        }

        deserializer.deserialize_map(LineVisitor)
    }
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    taxonomy: &'a [String],
}

#[derive(Serialize)]
#[serde(untagged)]
enum SpeciesOut<'a> {
    One(&'a str),
    Many(Vec<&'a str>),
}

#[derive(Serialize)]
struct LineOut<'a> {
    event_id: &'a str,
    image_id: &'a str,
    features: &'a [f64],
    empty: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    species: Option<SpeciesOut<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attributes: Option<AttributeSet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<SplitHint>,
}

/// Writes `dataset` in manifest format. Counts are written as the lower edge
/// of their bin, which maps back to the same bin on load.
pub fn write_manifest_to(dataset: &Dataset, mut w: impl Write) -> Result<()> {
    let tax = dataset.taxonomy();
    let io = |e| Error::io("<manifest>", e);
    serde_json::to_writer(&mut w, &HeaderOut { taxonomy: tax.names() })?;
    w.write_all(b"\n").map_err(io)?;
    for e in dataset.events() {
        let names: Vec<&str> = e
            .label
            .species
            .iter()
            .chain(&e.other_species)
            .filter_map(|&s| tax.name(s))
            .collect();
        let species = match names.len() {
            0 => None,
            1 => Some(SpeciesOut::One(names[0])),
            _ => Some(SpeciesOut::Many(names)),
        };
        for im in &e.images {
            let line = LineOut {
                event_id: &e.event_id,
                image_id: &im.image_id,
                features: &im.features,
                empty: e.label.empty,
                species: species.as_ref().map(|s| match s {
                    SpeciesOut::One(n) => SpeciesOut::One(n),
                    SpeciesOut::Many(v) => SpeciesOut::Many(v.clone()),
                }),
                count: e.label.count.map(|c| c.representative_count()),
                attributes: e.label.attributes,
                split: e.split_hint,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_manifest(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_manifest_to(dataset, &mut buf)?;
    crate::io::write_atomic(path.as_ref(), &buf)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterReport {
    pub total_events: usize,
    pub removed_events: usize,
}

impl FilterReport {
    pub fn removed_fraction(&self) -> f64 {
        if self.total_events == 0 {
            0.0
        } else {
            self.removed_events as f64 / self.total_events as f64
        }
    }
}

/// Drops multi-species events.
pub fn filter_single_species(d: &Dataset) -> (Dataset, FilterReport) {
    let kept = d.filter_events(|e| !e.is_multi_species());
    let report = FilterReport {
        total_events: d.events().len(),
        removed_events: d.events().len() - kept.events().len(),
    };
    (kept, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Random event-level split: a uniform permutation of events under the seed,
/// the first `round(fraction * n)` (clamped to `1..n`) going to train. Each
/// side keeps the input order.
pub fn split_by_event(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let n = d.events().len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 events, have {n}")));
    }
    let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (e, t) in d.events().iter().zip(in_train) {
        if t {
            train.push(e.clone());
        } else {
            test.push(e.clone());
        }
    }
    Ok((d.derived(train), d.derived(test)))
}

/// Split following per-event `split` hints; `None` unless every event has one.
pub fn split_by_hint(d: &Dataset) -> Option<(Dataset, Dataset)> {
    if d.events().is_empty() || d.events().iter().any(|e| e.split_hint.is_none()) {
        return None;
    }
    let train = d.filter_events(|e| e.split_hint == Some(SplitHint::Train));
    let test = d.filter_events(|e| e.split_hint == Some(SplitHint::Test));
    Some((train, test))
}

#[derive(Debug)]
pub struct BalanceOutcome {
    pub dataset: Dataset,
    pub warning: Option<String>,
}

/// Keeps all non-empty images and an equal number of uniformly sampled
/// empty images.
pub fn balance_empty(d: &Dataset, seed: u64) -> BalanceOutcome {
    let target = d.stats().non_empty_images();
    subsample_empty(d, target, seed)
}

/// Keeps all non-empty images and `target` uniformly sampled empty images.
/// Empty events left without images are dropped.
pub fn subsample_empty(d: &Dataset, target: usize, seed: u64) -> BalanceOutcome {
    let available = d.stats().empty_images;
    if available <= target {
        let warning = (available < target)
            .then(|| format!("only {available} empty images available for a target of {target}; keeping all"));
        if let Some(w) = &warning {
            warn!("{w}");
        }
        return BalanceOutcome {
            dataset: d.clone(),
            warning,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; available];
    for i in index::sample(&mut rng, available, target) {
        chosen[i] = true;
    }
    let mut cursor = 0;
    let mut events = Vec::new();
    for e in d.events() {
        if !e.label.empty {
            events.push(e.clone());
            continue;
        }
        let images: Vec<ImageRecord> = e
            .images
            .iter()
            .filter(|_| {
                let keep = chosen[cursor];
                cursor += 1;
                keep
            })
            .cloned()
            .collect();
        if !images.is_empty() {
            events.push(CaptureEvent { images, ..e.clone() });
        }
    }
    BalanceOutcome {
        dataset: d.derived(events),
        warning: None,
    }
}
