//! From travel-note mentions to flow tables.
//!
//! The chain is: match place names to attraction ids, merge the notes a
//! tourist posted within a few days of each other into one trip, drop trips
//! with fewer than two distinct attractions, then count co-visits. The
//! synthetic generator at the bottom produces attractions whose ground-truth
//! flows follow a gravity law, which is what the end-to-end checks train on.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::data::{haversine_distance, Attraction, Level, ATTRACTION_TYPES};
use crate::error::{Error, Result};

pub const DEFAULT_MERGE_WINDOW_DAYS: i64 = 5;
pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.6, 0.2, 0.2);

/// One travel note as it arrives on disk (one line of `trips.jsonl`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub tourist_id: String,
    /// `YYYY-MM-DD`; parsed during merging.
    pub posted_date: String,
    pub mentions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trip {
    pub tourist_id: String,
    pub date: NaiveDate,
    pub attractions: Vec<String>,
}

impl Trip {
    pub fn distinct(&self) -> BTreeSet<&str> {
        self.attractions.iter().map(String::as_str).collect()
    }
}

fn normalize_name(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Exact, case-insensitive lookup of place names and aliases.
#[derive(Debug, Clone)]
pub struct AttractionMatcher {
    lookup: HashMap<String, String>,
}

impl AttractionMatcher {
    pub fn new(attractions: &[Attraction]) -> Result<Self> {
        let mut lookup: HashMap<String, String> = HashMap::new();
        for a in attractions {
            for name in std::iter::once(&a.name).chain(&a.aliases) {
                let key = normalize_name(name);
                if key.is_empty() {
                    continue;
                }
                if let Some(prev) = lookup.insert(key, a.id.clone()) {
                    if prev != a.id {
                        return Err(Error::Dataset(format!(
                            "name or alias {name:?} maps to both {prev:?} and {:?}",
                            a.id
                        )));
                    }
                }
            }
        }
        Ok(Self { lookup })
    }

    /// Maps mentions to ids, dropping unknown names and collapsing
    /// consecutive repeats.
    pub fn match_mentions<S: AsRef<str>>(&self, mentions: &[S]) -> Vec<String> {
        let mut ids: Vec<String> = mentions
            .iter()
            .filter_map(|m| self.lookup.get(&normalize_name(m.as_ref())).cloned())
            .collect();
        ids.dedup();
        ids
    }
}

pub fn match_attractions<S: AsRef<str>>(
    mentions: &[S],
    attractions: &[Attraction],
) -> Result<Vec<String>> {
    Ok(AttractionMatcher::new(attractions)?.match_mentions(mentions))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeOutcome {
    pub trips: Vec<Trip>,
    /// Notes dropped because their date did not parse.
    pub skipped: usize,
}

/// Groups each tourist's notes into trips. A note joins the current group
/// when it was posted at most `window_days` after the group's latest note.
/// The result does not depend on the input order.
pub fn merge_notes(notes: &[NoteRecord], window_days: i64) -> Result<MergeOutcome> {
    if window_days < 0 {
        return Err(Error::InvalidArgument("window_days must be >= 0".into()));
    }
    let mut skipped = 0;
    let mut by_tourist: BTreeMap<&str, Vec<(NaiveDate, &[String])>> = BTreeMap::new();
    for note in notes {
        match NaiveDate::parse_from_str(note.posted_date.trim(), "%Y-%m-%d") {
            Ok(date) => by_tourist
                .entry(note.tourist_id.as_str())
                .or_default()
                .push((date, &note.mentions)),
            Err(_) => {
                log::warn!(
                    "skipping note from {:?}: unparseable date {:?}",
                    note.tourist_id,
                    note.posted_date
                );
                skipped += 1;
            }
        }
    }

    let mut trips = Vec::new();
    for (tourist, mut group) in by_tourist {
        group.sort();
        let mut current: Option<(Trip, NaiveDate)> = None;
        for (date, mentions) in group {
            match current.as_mut() {
                Some((trip, latest)) if (date - *latest).num_days() <= window_days => {
                    trip.attractions.extend(mentions.iter().cloned());
                    *latest = date;
                }
                _ => {
                    if let Some((trip, _)) = current.take() {
                        trips.push(trip);
                    }
                    current = Some((
                        Trip {
                            tourist_id: tourist.to_owned(),
                            date,
                            attractions: mentions.to_vec(),
                        },
                        date,
                    ));
                }
            }
        }
        trips.extend(current.map(|(t, _)| t));
    }
    Ok(MergeOutcome { trips, skipped })
}

/// Keeps trips with at least two distinct attractions.
pub fn filter_trips(trips: Vec<Trip>) -> Vec<Trip> {
    trips.into_iter().filter(|t| t.distinct().len() >= 2).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unknown,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unknown" => Ok(Split::Unknown),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

pub type PairKey = (String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub count: u64,
    pub split: Split,
}

/// Pair-count table. Undirected tables store each unordered pair once with
/// the lexicographically smaller id first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlowTable {
    directed: bool,
    universe: BTreeSet<String>,
    entries: BTreeMap<PairKey, FlowEntry>,
}

impl FlowTable {
    pub fn new(directed: bool) -> Self {
        Self {
            directed,
            ..Self::default()
        }
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn key(&self, a: &str, b: &str) -> PairKey {
        if self.directed || a <= b {
            (a.to_owned(), b.to_owned())
        } else {
            (b.to_owned(), a.to_owned())
        }
    }

    pub fn add(&mut self, a: &str, b: &str, count: u64) {
        if count == 0 || a == b {
            return;
        }
        self.universe.insert(a.to_owned());
        self.universe.insert(b.to_owned());
        let key = self.key(a, b);
        self.entries
            .entry(key)
            .or_insert(FlowEntry {
                count: 0,
                split: Split::Unknown,
            })
            .count += count;
    }

    pub fn extend_universe<I: IntoIterator<Item = String>>(&mut self, ids: I) {
        self.universe.extend(ids);
    }

    pub fn universe(&self) -> &BTreeSet<String> {
        &self.universe
    }

    pub fn get(&self, a: &str, b: &str) -> Option<&FlowEntry> {
        self.entries.get(&self.key(a, b))
    }

    pub fn count(&self, a: &str, b: &str) -> u64 {
        self.get(a, b).map_or(0, |e| e.count)
    }

    pub fn set_split(&mut self, a: &str, b: &str, split: Split) -> Result<()> {
        let key = self.key(a, b);
        match self.entries.get_mut(&key) {
            Some(e) => {
                e.split = split;
                Ok(())
            }
            None => Err(Error::Dataset(format!("pair ({a}, {b}) not in flow table"))),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PairKey, &FlowEntry)> {
        self.entries.iter()
    }

    pub fn pairs_in(&self, split: Split) -> impl Iterator<Item = (&PairKey, u64)> {
        self.entries
            .iter()
            .filter(move |(_, e)| e.split == split)
            .map(|(k, e)| (k, e.count))
    }

    pub fn total(&self) -> u64 {
        self.entries.values().map(|e| e.count).sum()
    }

    /// Copy containing only the pairs with the given split label.
    pub fn restricted_to(&self, split: Split) -> FlowTable {
        FlowTable {
            directed: self.directed,
            universe: self.universe.clone(),
            entries: self
                .entries
                .iter()
                .filter(|(_, e)| e.split == split)
                .map(|(k, e)| (k.clone(), *e))
                .collect(),
        }
    }
}

/// Undirected co-visit counts: every unordered pair of distinct attractions
/// in a trip contributes one, however often either was visited.
pub fn extract_itf(trips: &[Trip]) -> FlowTable {
    let mut table = FlowTable::new(false);
    for trip in trips {
        let ids: Vec<&str> = trip.distinct().into_iter().collect();
        for (k, a) in ids.iter().enumerate() {
            for b in &ids[k + 1..] {
                table.add(a, b, 1);
            }
        }
    }
    table
}

/// Directed counts over consecutive steps `t[k] -> t[k+1]`, skipping self steps.
pub fn extract_directed_itf(trips: &[Trip]) -> FlowTable {
    let mut table = FlowTable::new(true);
    for trip in trips {
        for w in trip.attractions.windows(2) {
            table.add(&w[0], &w[1], 1);
        }
    }
    table
}

/// Seeded uniform partition of the stored pairs. Validation and test sizes
/// are floor-rounded; the remainder goes to training.
pub fn split_dataset(table: &mut FlowTable, ratios: (f64, f64, f64), seed: u64) -> Result<()> {
    let (train, val, test) = ratios;
    if [train, val, test].iter().any(|r| !(*r >= 0.0)) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let n = table.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 pairs to split, got {n}"
        )));
    }
    let mut keys: Vec<PairKey> = table.entries.keys().cloned().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * val + 1e-9).floor() as usize;
    let n_test = (n as f64 * test + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    for (i, key) in keys.iter().enumerate() {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        table.entries.get_mut(key).expect("key from table").split = split;
    }
    Ok(())
}

/// Summary statistics reported by the ingest command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub n_attractions: usize,
    pub n_notes: usize,
    pub n_skipped_notes: usize,
    pub n_trips: usize,
    pub mean_attractions_per_trip: f64,
    pub median_attractions_per_trip: f64,
    pub n_pairs: usize,
    pub itf_mean: f64,
    pub itf_std: f64,
}

pub fn trip_length_stats(trips: &[Trip]) -> (f64, f64) {
    let mut lens: Vec<f64> = trips.iter().map(|t| t.distinct().len() as f64).collect();
    if lens.is_empty() {
        return (0.0, 0.0);
    }
    lens.sort_by(f64::total_cmp);
    let mean = lens.iter().sum::<f64>() / lens.len() as f64;
    let mid = lens.len() / 2;
    let median = if lens.len().is_multiple_of(2) {
        (lens[mid - 1] + lens[mid]) / 2.0
    } else {
        lens[mid]
    };
    (mean, median)
}

/// Mean and population standard deviation of the stored counts.
pub fn flow_stats(table: &FlowTable) -> (f64, f64) {
    if table.is_empty() {
        return (0.0, 0.0);
    }
    let n = table.len() as f64;
    let mean = table.total() as f64 / n;
    let var = table
        .iter()
        .map(|(_, e)| (e.count as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Parses `trips.jsonl`. Malformed lines, including unparseable dates, are
/// returned as `(line, message)` rather than failing the whole read.
pub fn read_notes_jsonl(path: &Path) -> Result<(Vec<NoteRecord>, Vec<(usize, String)>)> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut notes = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<NoteRecord>(&line) {
            Ok(n) if NaiveDate::parse_from_str(n.posted_date.trim(), "%Y-%m-%d").is_err() => {
                bad.push((i + 1, format!("invalid posted_date {:?}", n.posted_date)))
            }
            Ok(n) => notes.push(n),
            Err(e) => bad.push((i + 1, e.to_string())),
        }
    }
    Ok((notes, bad))
}

pub fn write_notes_jsonl(path: &Path, notes: &[NoteRecord]) -> Result<()> {
    let mut out = String::new();
    for n in notes {
        out.push_str(&serde_json::to_string(n)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ItfRow {
    src_id: String,
    dst_id: String,
    count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitRow {
    src_id: String,
    dst_id: String,
    split: Split,
}

pub fn write_itf_csv(path: &Path, table: &FlowTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for ((src, dst), e) in table.iter() {
        w.serialize(ItfRow {
            src_id: src.clone(),
            dst_id: dst.clone(),
            count: e.count,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_splits_csv(path: &Path, table: &FlowTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for ((src, dst), e) in table.iter() {
        w.serialize(SplitRow {
            src_id: src.clone(),
            dst_id: dst.clone(),
            split: e.split,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_itf_csv(path: &Path, directed: bool) -> Result<FlowTable> {
    let mut table = FlowTable::new(directed);
    let mut r = csv::Reader::from_path(path)?;
    for (i, row) in r.deserialize::<ItfRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 2,
            message: e.to_string(),
        })?;
        table.add(&row.src_id, &row.dst_id, row.count);
    }
    Ok(table)
}

/// Applies split labels from `splits.csv` to an already loaded table.
pub fn apply_splits_csv(path: &Path, table: &mut FlowTable) -> Result<()> {
    let mut r = csv::Reader::from_path(path)?;
    for (i, row) in r.deserialize::<SplitRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 2,
            message: e.to_string(),
        })?;
        table.set_split(&row.src_id, &row.dst_id, row.split)?;
    }
    Ok(())
}

/// Parameters of the gravity-law generator. Masses are comment numbers and
/// distances are in kilometers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    /// Log-space standard deviation of the multiplicative noise; 0 disables it.
    pub noise_sigma: f64,
    pub lon_range: (f64, f64),
    pub lat_range: (f64, f64),
    pub mass_range: (f64, f64),
    /// Distances below this are raised to it before applying the law.
    pub min_distance_km: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            k: 0.05,
            noise_sigma: 0.2,
            lon_range: (116.20, 116.60),
            lat_range: (39.80, 40.10),
            mass_range: (500.0, 2000.0),
            min_distance_km: 2.0,
        }
    }
}

/// Noise-free, unrounded gravity flow.
pub fn gravity_flow(mass_i: f64, mass_j: f64, distance_km: f64, p: &SynthParams) -> f64 {
    let d = distance_km.max(p.min_distance_km);
    p.k * mass_i.powf(p.alpha) * mass_j.powf(p.alpha) / d.powf(p.beta)
}

const DISTRICTS: [&str; 6] = [
    "chaoyang",
    "dongcheng",
    "fengtai",
    "haidian",
    "shijingshan",
    "xicheng",
];

/// Random attractions in the configured bounding box with a gravity-law
/// ground-truth table. Zero-count pairs are omitted.
pub fn synth_generate(n: usize, seed: u64, params: &SynthParams) -> Result<(Vec<Attraction>, FlowTable)> {
    if n < 10 {
        return Err(Error::InvalidArgument(format!("synthetic data needs n >= 10, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mlo, mhi) = params.mass_range;
    let attractions: Vec<Attraction> = (0..n)
        .map(|i| {
            let id = format!("a{i:03}");
            // log-uniform popularity
            let mass = (mlo.ln() + rng.random::<f64>() * (mhi.ln() - mlo.ln())).exp().round();
            Attraction {
                name: format!("Attraction {i}"),
                aliases: vec![format!("attr-{i}")],
                lon: rng.random_range(params.lon_range.0..params.lon_range.1),
                lat: rng.random_range(params.lat_range.0..params.lat_range.1),
                area: rng.random_range(1e3..1e6_f64).round(),
                adname: DISTRICTS.choose(&mut rng).copied().unwrap_or("dongcheng").to_owned(),
                ticket_price: (rng.random_range(0.0..120.0_f64) / 5.0).round() * 5.0,
                kind: ATTRACTION_TYPES.choose(&mut rng).copied().unwrap_or("historical_site").to_owned(),
                ranking: (rng.random_range(3.0..5.0_f64) * 10.0).round() / 10.0,
                comment_number: mass,
                level: *Level::ALL.choose(&mut rng).unwrap_or(&Level::NoLevel),
                est_visit_time: (rng.random_range(0.5..6.0_f64) * 2.0).round() / 2.0,
                id,
            }
        })
        .collect();

    let noise = if params.noise_sigma > 0.0 {
        Some(LogNormal::new(0.0, params.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let mut table = FlowTable::new(false);
    table.extend_universe(attractions.iter().map(|a| a.id.clone()));
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&attractions[i], &attractions[j]);
            let d_km = haversine_distance(a.location(), b.location()) / 1000.0;
            let mut flow = gravity_flow(a.comment_number, b.comment_number, d_km, params);
            if let Some(noise) = &noise {
                flow *= noise.sample(&mut rng);
            }
            let count = flow.round();
            if count.is_finite() && count >= 1.0 {
                table.add(&a.id, &b.id, count as u64);
            }
        }
    }
    Ok((attractions, table))
}

/// Random trips drawn by a gravity-weighted walk: the first stop is chosen
/// by popularity, each next unvisited stop by popularity over squared
/// distance.
pub fn synth_trips(attractions: &[Attraction], n_trips: usize, max_len: usize, seed: u64) -> Vec<Trip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = attractions.len();
    let max_len = max_len.clamp(2, n.max(2));
    let base = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let mut trips = Vec::with_capacity(n_trips);
    if n < 2 {
        return trips;
    }
    for t in 0..n_trips {
        let len = rng.random_range(2..=max_len);
        let mut visited = vec![false; n];
        let mut cur = pick_weighted(&mut rng, attractions.iter().map(|a| a.comment_number + 1.0));
        let mut ids = vec![attractions[cur].id.clone()];
        visited[cur] = true;
        while ids.len() < len {
            let here = attractions[cur].location();
            let weights = attractions.iter().enumerate().map(|(j, a)| {
                if visited[j] {
                    0.0
                } else {
                    let d = haversine_distance(here, a.location()) / 1000.0 + 0.5;
                    (a.comment_number + 1.0) / (d * d)
                }
            });
            cur = pick_weighted(&mut rng, weights);
            visited[cur] = true;
            ids.push(attractions[cur].id.clone());
        }
        trips.push(Trip {
            tourist_id: format!("t{t:05}"),
            date: base + chrono::Days::new((t % 365) as u64),
            attractions: ids,
        });
    }
    trips
}

fn pick_weighted<R: Rng, I: IntoIterator<Item = f64>>(rng: &mut R, weights: I) -> usize {
    let w: Vec<f64> = weights.into_iter().collect();
    let total: f64 = w.iter().sum();
    let mut x = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &wi) in w.iter().enumerate() {
        if wi <= 0.0 {
            continue;
        }
        last = i;
        if x < wi {
            return i;
        }
        x -= wi;
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_attraction;
    use proptest::prelude::*;

    fn trip(ids: &[&str]) -> Trip {
        Trip {
            tourist_id: "t".into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            attractions: ids.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn note(tourist: &str, date: &str, mentions: &[&str]) -> NoteRecord {
        NoteRecord {
            tourist_id: tourist.into(),
            posted_date: date.into(),
            mentions: mentions.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn matching_collapses_consecutive_duplicates() {
        let mut fc = test_attraction("forbidden_city", 116.39, 39.91);
        fc.name = "Forbidden City".into();
        fc.aliases = vec!["Gugong".into()];
        let mut a = test_attraction("A", 116.0, 39.0);
        a.name = "A".into();
        let mut b = test_attraction("B", 116.1, 39.1);
        b.name = "B".into();
        let all = vec![fc, a, b];
        assert_eq!(
            match_attractions(&["Forbidden City", " gugong "], &all).unwrap(),
            vec!["forbidden_city"]
        );
        assert!(match_attractions(&["Unknown Place"], &all).unwrap().is_empty());
        assert_eq!(match_attractions(&["A", "B", "A"], &all).unwrap(), vec!["A", "B", "A"]);
    }

    #[test]
    fn ambiguous_alias_is_rejected() {
        let mut a = test_attraction("a", 0.0, 0.0);
        a.aliases = vec!["Park".into()];
        let mut b = test_attraction("b", 0.0, 0.0);
        b.aliases = vec!["park".into()];
        assert!(matches!(AttractionMatcher::new(&[a, b]), Err(Error::Dataset(_))));
    }

    #[test]
    fn merge_windows() {
        let one = merge_notes(&[note("u", "2020-01-01", &["A"]), note("u", "2020-01-04", &["B"])], 5).unwrap();
        assert_eq!(one.trips.len(), 1);
        assert_eq!(one.trips[0].attractions, vec!["A", "B"]);
        let two = merge_notes(&[note("u", "2020-01-01", &["A"]), note("u", "2020-01-09", &["B"])], 5).unwrap();
        assert_eq!(two.trips.len(), 2);
        let tourists = merge_notes(&[note("u", "2020-01-01", &["A"]), note("v", "2020-01-01", &["B"])], 5).unwrap();
        assert_eq!(tourists.trips.len(), 2);
        // chained: 1 -> 5 -> 9 stays one trip
        let chain = merge_notes(
            &[note("u", "2020-01-09", &["C"]), note("u", "2020-01-01", &["A"]), note("u", "2020-01-05", &["B"])],
            5,
        )
        .unwrap();
        assert_eq!(chain.trips.len(), 1);
        assert_eq!(chain.trips[0].attractions, vec!["A", "B", "C"]);
        assert_eq!(chain.trips[0].date, NaiveDate::from_ymd_opt(2020, 1, 1).unwrap());
    }

    #[test]
    fn merge_skips_bad_dates() {
        let out = merge_notes(&[note("u", "yesterday", &["A"]), note("u", "2020-01-01", &["B"])], 5).unwrap();
        assert_eq!(out.skipped, 1);
        assert_eq!(out.trips.len(), 1);
        assert!(merge_notes(&[], -1).is_err());
    }

    #[test]
    fn filtering() {
        let kept = filter_trips(vec![trip(&["A"]), trip(&["A", "A"]), trip(&["A", "B"])]);
        assert_eq!(kept, vec![trip(&["A", "B"])]);
    }

    #[test]
    fn undirected_counts() {
        let t = extract_itf(&[trip(&["A", "B", "C"]), trip(&["B", "A"])]);
        assert_eq!(t.count("A", "B"), 2);
        assert_eq!(t.count("B", "A"), 2);
        assert_eq!(t.count("A", "C"), 1);
        assert_eq!(t.count("B", "C"), 1);
        assert_eq!(t.len(), 3);
        assert_eq!(extract_itf(&[trip(&["A", "B", "A"])]).count("A", "B"), 1);
    }

    #[test]
    fn directed_counts() {
        let t = extract_directed_itf(&[trip(&["A", "B", "C"])]);
        assert_eq!((t.count("A", "B"), t.count("B", "C"), t.count("B", "A")), (1, 1, 0));
        let t = extract_directed_itf(&[trip(&["A", "B"]), trip(&["B", "A"])]);
        assert_eq!((t.count("A", "B"), t.count("B", "A")), (1, 1));
        let t = extract_directed_itf(&[trip(&["A", "A", "B"])]);
        assert_eq!(t.len(), 1);
        assert_eq!(t.count("A", "B"), 1);
    }

    fn table_with(n: usize) -> FlowTable {
        let mut t = FlowTable::new(false);
        for i in 0..n {
            t.add(&format!("p{i:03}"), &format!("q{i:03}"), 1);
        }
        t
    }

    #[test]
    fn split_sizes_and_determinism() {
        for (n, expect) in [(100, (60, 20, 20)), (10, (6, 2, 2)), (7, (5, 1, 1))] {
            let mut t = table_with(n);
            split_dataset(&mut t, DEFAULT_SPLIT_RATIOS, 3).unwrap();
            let c = |s| t.pairs_in(s).count();
            assert_eq!((c(Split::Train), c(Split::Val), c(Split::Test)), expect);
            assert_eq!(c(Split::Unknown), 0);
        }
        let mut a = table_with(50);
        let mut b = table_with(50);
        split_dataset(&mut a, DEFAULT_SPLIT_RATIOS, 9).unwrap();
        split_dataset(&mut b, DEFAULT_SPLIT_RATIOS, 9).unwrap();
        assert_eq!(a, b);
        assert!(split_dataset(&mut table_with(2), DEFAULT_SPLIT_RATIOS, 0).is_err());
        assert!(split_dataset(&mut table_with(10), (0.5, 0.2, 0.2), 0).is_err());
    }

    #[test]
    fn gravity_law() {
        let p = SynthParams {
            alpha: 1.0,
            beta: 0.0,
            k: 1.0,
            ..SynthParams::default()
        };
        assert_eq!(gravity_flow(10.0, 10.0, 3.7, &p), 100.0);
        let p = SynthParams {
            beta: 2.0,
            ..SynthParams::default()
        };
        let ratio = gravity_flow(50.0, 80.0, 2.0, &p) / gravity_flow(50.0, 80.0, 4.0, &p);
        assert!((ratio - 4.0).abs() < 1e-12);
    }

    #[test]
    fn synth_is_deterministic() {
        let p = SynthParams::default();
        let (a1, t1) = synth_generate(80, 42, &p).unwrap();
        let (a2, t2) = synth_generate(80, 42, &p).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(t1, t2);
        assert!(t1.len() > 1000);
        crate::data::validate_attractions(&a1).unwrap();
        assert!(synth_generate(9, 0, &p).is_err());
    }

    #[test]
    fn synth_without_noise_matches_formula() {
        let p = SynthParams {
            noise_sigma: 0.0,
            ..SynthParams::default()
        };
        let (atts, table) = synth_generate(12, 5, &p).unwrap();
        for i in 0..atts.len() {
            for j in i + 1..atts.len() {
                let d = haversine_distance(atts[i].location(), atts[j].location()) / 1000.0;
                let expect = gravity_flow(atts[i].comment_number, atts[j].comment_number, d, &p).round() as u64;
                assert_eq!(table.count(&atts[i].id, &atts[j].id), expect);
            }
        }
    }

    #[test]
    fn csv_round_trip_with_splits() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = extract_itf(&[trip(&["A", "B", "C"]), trip(&["B", "A"])]);
        split_dataset(&mut t, DEFAULT_SPLIT_RATIOS, 1).unwrap();
        write_itf_csv(&dir.path().join("itf.csv"), &t).unwrap();
        write_splits_csv(&dir.path().join("splits.csv"), &t).unwrap();
        let text = std::fs::read_to_string(dir.path().join("itf.csv")).unwrap();
        assert!(text.starts_with("src_id,dst_id,count\n"));
        let mut back = read_itf_csv(&dir.path().join("itf.csv"), false).unwrap();
        apply_splits_csv(&dir.path().join("splits.csv"), &mut back).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn pair_totals(trips in prop::collection::vec(prop::collection::vec(0u8..6, 0..8), 0..30)) {
            let trips: Vec<Trip> = trips
                .iter()
                .map(|t| trip(&t.iter().map(|c| ["A","B","C","D","E","F"][*c as usize]).collect::<Vec<_>>()))
                .collect();
            let undirected = extract_itf(&trips);
            let expect: u64 = trips.iter().map(|t| { let u = t.distinct().len() as u64; u * u.saturating_sub(1) / 2 }).sum();
            prop_assert_eq!(undirected.total(), expect);
            let directed = extract_directed_itf(&trips);
            let steps: u64 = trips.iter().map(|t| t.attractions.windows(2).filter(|w| w[0] != w[1]).count() as u64).sum();
            prop_assert_eq!(directed.total(), steps);
        }

        #[test]
        fn merge_is_order_independent(
            days in prop::collection::vec((0u8..3, 1u32..28, 0u8..4), 1..12),
            seed in any::<u64>(),
        ) {
            let notes: Vec<NoteRecord> = days
                .iter()
                .map(|(u, d, m)| note(&format!("u{u}"), &format!("2021-03-{d:02}"), &[["A","B","C","D"][*m as usize]]))
                .collect();
            let mut shuffled = notes.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(merge_notes(&notes, 5).unwrap(), merge_notes(&shuffled, 5).unwrap());
        }
    }
}
