use serde_json::{json, Value};

use crate::data::GeoPoint;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowLine {
    pub src: String,
    pub dst: String,
    pub truth: Option<f64>,
    pub pred: f64,
}

/// Class `1..=k` of each value by rank; equal values share a class.
pub fn quantile_classes(values: &[f64], k: usize) -> Vec<u8> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut classes = vec![1u8; n];
    let mut first_rank = 0;
    for (r, &i) in order.iter().enumerate() {
        if r > 0 && values[i] != values[order[r - 1]] {
            first_rank = r;
        }
        classes[i] = (1 + first_rank * k / n.max(1)).min(k) as u8;
    }
    classes
}

/// GeoJSON `FeatureCollection` with one `LineString` per flow. Lines whose
/// endpoints cannot be located are skipped.
pub fn flowmap_geojson(lines: &[FlowLine], locate: impl Fn(&str) -> Option<GeoPoint>) -> Value {
    let kept: Vec<(&FlowLine, GeoPoint, GeoPoint)> = lines
        .iter()
        .filter_map(|l| {
            let ends = locate(&l.src).zip(locate(&l.dst));
            let ok = ends.filter(|(a, b)| [a.lon, a.lat, b.lon, b.lat].iter().all(|v| v.is_finite()));
            if ok.is_none() {
                log::warn!("no coordinates for flow {} -> {}; skipped", l.src, l.dst);
            }
            ok.map(|(a, b)| (l, a, b))
        })
        .collect();
    let preds: Vec<f64> = kept.iter().map(|(l, ..)| l.pred).collect();
    let classes = quantile_classes(&preds, 5);
    let features: Vec<Value> = kept
        .iter()
        .zip(classes)
        .map(|((l, a, b), class)| {
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[a.lon, a.lat], [b.lon, b.lat]],
                },
                "properties": {
                    "src": l.src,
                    "dst": l.dst,
                    "true": l.truth,
                    "pred": l.pred,
                    "quantile_class": class,
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(src: &str, dst: &str, pred: f64) -> FlowLine {
        FlowLine {
            src: src.into(),
            dst: dst.into(),
            truth: Some(pred + 1.0),
            pred,
        }
    }

    #[test]
    fn classes() {
        assert_eq!(quantile_classes(&[5.0, 1.0, 3.0, 2.0, 4.0], 5), vec![5, 1, 3, 2, 4]);
        let c = quantile_classes(&(0..100).map(f64::from).collect::<Vec<_>>(), 5);
        assert_eq!((c[0], c[19], c[20], c[99]), (1, 1, 2, 5));
        assert_eq!(quantile_classes(&[2.0, 2.0, 2.0], 5), vec![1, 1, 1]);
        assert!(quantile_classes(&[], 5).is_empty());
    }

    #[test]
    fn geometry() {
        let locate = |id: &str| match id {
            "a" => Some(GeoPoint::new(116.1, 39.9)),
            "b" => Some(GeoPoint::new(116.2, 40.0)),
            "c" => Some(GeoPoint::new(116.3, 39.8)),
            _ => None,
        };
        let fc = flowmap_geojson(&[line("a", "b", 1.0), line("b", "c", 2.0), line("a", "c", 3.0)], locate);
        let feats = fc["features"].as_array().unwrap();
        assert_eq!(fc["type"], "FeatureCollection");
        assert_eq!(feats.len(), 3);
        assert_eq!(feats[0]["geometry"]["type"], "LineString");
        assert_eq!(feats[0]["geometry"]["coordinates"], json!([[116.1, 39.9], [116.2, 40.0]]));
        assert_eq!(feats[1]["properties"]["src"], "b");
        assert_eq!(feats[1]["properties"]["true"], 3.0);
        for f in feats {
            let q = f["properties"]["quantile_class"].as_u64().unwrap();
            assert!((1..=5).contains(&q));
        }
        let fc = flowmap_geojson(&[line("a", "zzz", 1.0), line("a", "b", 2.0)], locate);
        assert_eq!(fc["features"].as_array().unwrap().len(), 1);
    }
}
