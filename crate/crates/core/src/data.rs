//! Attraction records, categorical encoding, min-max scaling and
//! great-circle distance.
//!
//! Every attraction is turned into a fixed-order vector over ten columns
//! (see [`FEATURE_NAMES`]). `adname` and `type` go through a lexicographic
//! ordinal encoder, `level` through the official 1..5 grading, and all ten
//! columns are then min-max scaled to `[0, 1]`.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Column order of every feature vector.
pub const FEATURE_NAMES: [&str; 10] = [
    "lon",
    "lat",
    "area",
    "adname",
    "ticket_price",
    "type",
    "ranking",
    "comment_number",
    "level",
    "est_visit_time",
];

pub const NUM_FEATURES: usize = FEATURE_NAMES.len();

/// The six attraction categories, by their canonical CSV label.
pub const ATTRACTION_TYPES: [&str; 6] = [
    "historical_site",
    "natural_scenery",
    "zoo_arboretum",
    "amusement_park",
    "city_sightseeing",
    "exhibition_museum",
];

pub const ATTRACTIONS_HEADER: [&str; 13] = [
    "id",
    "name",
    "aliases",
    "lon",
    "lat",
    "area",
    "adname",
    "ticket_price",
    "type",
    "ranking",
    "comment_number",
    "level",
    "est_visit_time",
];

/// Official quality grade of an attraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "no-level")]
    NoLevel,
    #[serde(rename = "2A")]
    A2,
    #[serde(rename = "3A")]
    A3,
    #[serde(rename = "4A")]
    A4,
    #[serde(rename = "5A")]
    A5,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::NoLevel, Level::A2, Level::A3, Level::A4, Level::A5];

    /// No-level attractions encode as 1, 2A..5A as 2..5.
    pub fn code(self) -> u8 {
        match self {
            Level::NoLevel => 1,
            Level::A2 => 2,
            Level::A3 => 3,
            Level::A4 => 4,
            Level::A5 => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Level::NoLevel => "no-level",
            Level::A2 => "2A",
            Level::A3 => "3A",
            Level::A4 => "4A",
            Level::A5 => "5A",
        }
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "no-level" => Ok(Level::NoLevel),
            "2A" => Ok(Level::A2),
            "3A" => Ok(Level::A3),
            "4A" => Ok(Level::A4),
            "5A" => Ok(Level::A5),
            other => Err(Error::Schema(format!("unknown level label {other:?}"))),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Ordinal code of a level label.
pub fn encode_level(label: &str) -> Result<u8> {
    label.parse::<Level>().map(Level::code)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// A tourism site with an independent entrance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attraction {
    pub id: String,
    pub name: String,
    pub aliases: Vec<String>,
    pub lon: f64,
    pub lat: f64,
    /// Square meters.
    pub area: f64,
    pub adname: String,
    pub ticket_price: f64,
    #[serde(rename = "type")]
    pub kind: String,
    pub ranking: f64,
    pub comment_number: f64,
    pub level: Level,
    /// Hours.
    pub est_visit_time: f64,
}

impl Attraction {
    pub fn location(&self) -> GeoPoint {
        GeoPoint::new(self.lon, self.lat)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Schema(format!("attraction {:?}: {what}", self.id)));
        if self.id.trim().is_empty() {
            return Err(Error::Schema("attraction with empty id".into()));
        }
        if !(-180.0..=180.0).contains(&self.lon) || !(-90.0..=90.0).contains(&self.lat) {
            return bad("coordinates out of range");
        }
        if !(self.area >= 0.0) {
            return bad("area must be >= 0");
        }
        if !(self.ticket_price >= 0.0) {
            return bad("ticket_price must be >= 0");
        }
        if !(self.comment_number >= 0.0) {
            return bad("comment_number must be >= 0");
        }
        if !(self.est_visit_time > 0.0) {
            return bad("est_visit_time must be > 0");
        }
        if !self.ranking.is_finite() {
            return bad("ranking must be finite");
        }
        if !ATTRACTION_TYPES.contains(&self.kind.as_str()) {
            return bad(&format!("unknown type {:?}", self.kind));
        }
        Ok(())
    }
}

/// Checks every attraction and the uniqueness of ids.
pub fn validate_attractions(attractions: &[Attraction]) -> Result<()> {
    let mut seen = HashSet::new();
    for a in attractions {
        a.validate()?;
        if !seen.insert(a.id.as_str()) {
            return Err(Error::Dataset(format!("duplicate attraction id {:?}", a.id)));
        }
    }
    Ok(())
}

/// Lexicographic ordinal encoding of one categorical column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEncoder {
    labels: Vec<String>,
}

impl CategoryEncoder {
    pub fn fit<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(|s| s.as_ref().to_owned()).collect();
        Self {
            labels: set.into_iter().collect(),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn transform(&self, label: &str) -> Result<usize> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| Error::Schema(format!("unknown category label {label:?}")))
    }
}

/// Per-column min-max scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(matrix: &Array2<f64>) -> Result<Self> {
        if matrix.nrows() == 0 {
            return Err(Error::InvalidArgument("cannot fit a scaler on zero rows".into()));
        }
        let (min, max) = matrix
            .columns()
            .into_iter()
            .map(|col| {
                col.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
            })
            .unzip();
        Ok(Self { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// `(x - min) / (max - min)`; columns with `max == min` map to zero.
    pub fn scale_row(&self, row: ArrayView1<f64>) -> Result<Array1<f64>> {
        if row.len() != self.width() {
            return Err(Error::Shape(format!(
                "row has {} columns, scaler expects {}",
                row.len(),
                self.width()
            )));
        }
        Ok(row
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&x, (&lo, &hi))| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
            .collect())
    }

    pub fn scale(&self, matrix: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(matrix.raw_dim());
        for (i, row) in matrix.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.scale_row(row)?);
        }
        Ok(out)
    }
}

/// Fitted preprocessing state turning attractions into scaled feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub adname: CategoryEncoder,
    pub kind: CategoryEncoder,
    pub scaler: FeatureScaler,
}

impl FeaturePipeline {
    pub fn fit(attractions: &[Attraction]) -> Result<Self> {
        if attractions.is_empty() {
            return Err(Error::InvalidArgument("no attractions to fit features on".into()));
        }
        let adname = CategoryEncoder::fit(attractions.iter().map(|a| &a.adname));
        let kind = CategoryEncoder::fit(attractions.iter().map(|a| &a.kind));
        let raw = raw_matrix(attractions, &adname, &kind)?;
        let scaler = FeatureScaler::fit(&raw)?;
        Ok(Self { adname, kind, scaler })
    }

    pub fn transform(&self, attraction: &Attraction) -> Result<Array1<f64>> {
        let raw = raw_features(attraction, &self.adname, &self.kind)?;
        self.scaler.scale_row(raw.view())
    }

    pub fn transform_all(&self, attractions: &[Attraction]) -> Result<Array2<f64>> {
        let raw = raw_matrix(attractions, &self.adname, &self.kind)?;
        self.scaler.scale(&raw)
    }
}

/// Unscaled feature vector in [`FEATURE_NAMES`] order.
pub fn raw_features(
    a: &Attraction,
    adname: &CategoryEncoder,
    kind: &CategoryEncoder,
) -> Result<Array1<f64>> {
    Ok(Array1::from(vec![
        a.lon,
        a.lat,
        a.area,
        adname.transform(&a.adname)? as f64,
        a.ticket_price,
        kind.transform(&a.kind)? as f64,
        a.ranking,
        a.comment_number,
        f64::from(a.level.code()),
        a.est_visit_time,
    ]))
}

fn raw_matrix(
    attractions: &[Attraction],
    adname: &CategoryEncoder,
    kind: &CategoryEncoder,
) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((attractions.len(), NUM_FEATURES));
    for (i, a) in attractions.iter().enumerate() {
        m.row_mut(i).assign(&raw_features(a, adname, kind)?);
    }
    Ok(m)
}

#[derive(Debug, Serialize, Deserialize)]
struct AttractionRow {
    id: String,
    name: String,
    aliases: String,
    lon: f64,
    lat: f64,
    area: f64,
    adname: String,
    ticket_price: f64,
    #[serde(rename = "type")]
    kind: String,
    ranking: f64,
    comment_number: f64,
    level: String,
    est_visit_time: f64,
}

/// Reads `attractions.csv`. The header must match [`ATTRACTIONS_HEADER`] exactly.
pub fn read_attractions(path: &Path) -> Result<Vec<Attraction>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(ATTRACTIONS_HEADER.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: format!("expected header {}", ATTRACTIONS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<AttractionRow>().enumerate() {
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: i + 2,
            message,
        };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let level = row.level.parse::<Level>().map_err(|e| parse_err(e.to_string()))?;
        let a = Attraction {
            id: row.id,
            name: row.name,
            aliases: row
                .aliases
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect(),
            lon: row.lon,
            lat: row.lat,
            area: row.area,
            adname: row.adname,
            ticket_price: row.ticket_price,
            kind: row.kind,
            ranking: row.ranking,
            comment_number: row.comment_number,
            level,
            est_visit_time: row.est_visit_time,
        };
        a.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(a);
    }
    validate_attractions(&out)?;
    Ok(out)
}

pub fn write_attractions(path: &Path, attractions: &[Attraction]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for a in attractions {
        writer.serialize(AttractionRow {
            id: a.id.clone(),
            name: a.name.clone(),
            aliases: a.aliases.join(";"),
            lon: a.lon,
            lat: a.lat,
            area: a.area,
            adname: a.adname.clone(),
            ticket_price: a.ticket_price,
            kind: a.kind.clone(),
            ranking: a.ranking,
            comment_number: a.comment_number,
            level: a.level.label().to_owned(),
            est_visit_time: a.est_visit_time,
        })?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) fn test_attraction(id: &str, lon: f64, lat: f64) -> Attraction {
    Attraction {
        id: id.to_owned(),
        name: id.to_owned(),
        aliases: Vec::new(),
        lon,
        lat,
        area: 1000.0,
        adname: "dongcheng".into(),
        ticket_price: 10.0,
        kind: "historical_site".into(),
        ranking: 4.5,
        comment_number: 100.0,
        level: Level::A4,
        est_visit_time: 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn level_codes() {
        assert_eq!(encode_level("5A").unwrap(), 5);
        assert_eq!(encode_level("no-level").unwrap(), 1);
        assert_eq!(encode_level("3A").unwrap(), 3);
        assert!(matches!(encode_level("6A"), Err(Error::Schema(_))));
    }

    #[test]
    fn ordinal_is_lexicographic() {
        let enc = CategoryEncoder::fit(["b", "a", "b"]);
        assert_eq!(enc.labels(), ["a", "b"]);
        assert_eq!(enc.transform("a").unwrap(), 0);
        assert_eq!(enc.transform("b").unwrap(), 1);
        assert_eq!(CategoryEncoder::fit(["x"]).transform("x").unwrap(), 0);
        assert_eq!(CategoryEncoder::fit(["b", "a"]).transform("a").unwrap(), 0);
        assert!(enc.transform("c").is_err());
    }

    #[test]
    fn scaler_columns() {
        let m = array![[2.0, 7.0, 0.0], [4.0, 7.0, 1.0], [6.0, 7.0, 1.0]];
        let s = FeatureScaler::fit(&m).unwrap();
        let out = s.scale(&m).unwrap();
        assert_eq!(out.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(out.column(1).to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(out.column(2).to_vec(), vec![0.0, 1.0, 1.0]);
        assert!(FeatureScaler::fit(&Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn haversine_known_values() {
        let p = GeoPoint::new(116.39, 39.93);
        assert_eq!(haversine_distance(p, p), 0.0);
        let quarter = std::f64::consts::FRAC_PI_2 * EARTH_RADIUS_M;
        let d = haversine_distance(GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 90.0));
        assert!((d - quarter).abs() < 1.0);
        assert!((d - 10_007_543.0).abs() < 1.0);
    }

    #[test]
    fn feature_vector_bounds() {
        let mut lo = test_attraction("lo", 116.0, 39.0);
        lo.area = 10.0;
        lo.adname = "a".into();
        lo.ticket_price = 0.0;
        lo.kind = "amusement_park".into();
        lo.ranking = 1.0;
        lo.comment_number = 0.0;
        lo.level = Level::NoLevel;
        lo.est_visit_time = 0.5;
        let mut hi = test_attraction("hi", 117.0, 40.0);
        hi.area = 1e6;
        hi.adname = "z".into();
        hi.ticket_price = 100.0;
        hi.kind = "zoo_arboretum".into();
        hi.ranking = 5.0;
        hi.comment_number = 1e4;
        hi.level = Level::A5;
        hi.est_visit_time = 8.0;
        let mid = test_attraction("mid", 116.5, 39.5);
        let all = vec![lo.clone(), hi.clone(), mid];
        let pipe = FeaturePipeline::fit(&all).unwrap();
        assert!(pipe.transform(&lo).unwrap().iter().all(|&x| x == 0.0));
        assert!(pipe.transform(&hi).unwrap().iter().all(|&x| x == 1.0));

        let four_a = test_attraction("q", 116.5, 39.5);
        let raw = raw_features(&four_a, &pipe.adname, &pipe.kind).unwrap();
        assert_eq!(raw[8], 4.0);

        let mut unknown = test_attraction("u", 116.5, 39.5);
        unknown.adname = "elsewhere".into();
        assert!(matches!(pipe.transform(&unknown), Err(Error::Schema(_))));
    }

    #[test]
    fn attraction_validation() {
        let mut a = test_attraction("a", 200.0, 0.0);
        assert!(a.validate().is_err());
        a.lon = 10.0;
        a.validate().unwrap();
        a.kind = "beach".into();
        assert!(a.validate().is_err());
        let dup = vec![test_attraction("x", 0.0, 0.0), test_attraction("x", 1.0, 1.0)];
        assert!(matches!(validate_attractions(&dup), Err(Error::Dataset(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attractions.csv");
        let mut a = test_attraction("forbidden_city", 116.397, 39.918);
        a.aliases = vec!["Gugong".into(), "Palace Museum".into()];
        write_attractions(&path, &[a.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&ATTRACTIONS_HEADER.join(",")));
        assert_eq!(read_attractions(&path).unwrap(), vec![a]);
    }

    proptest! {
        #[test]
        fn haversine_symmetric_nonnegative(
            lon1 in -180.0f64..180.0, lat1 in -90.0f64..90.0,
            lon2 in -180.0f64..180.0, lat2 in -90.0f64..90.0,
        ) {
            let a = GeoPoint::new(lon1, lat1);
            let b = GeoPoint::new(lon2, lat2);
            let d = haversine_distance(a, b);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, haversine_distance(b, a));
        }

        #[test]
        fn rescaling_is_idempotent(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..20)) {
            let m = Array2::from_shape_vec((rows.len(), 3), rows.concat()).unwrap();
            let once = FeatureScaler::fit(&m).unwrap().scale(&m).unwrap();
            let twice = FeatureScaler::fit(&once).unwrap().scale(&once).unwrap();
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }
    }
}
