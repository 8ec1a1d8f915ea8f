//! Thresholded interaction graph over attractions.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FlowTable, Split};

/// The ITF threshold used when none is configured.
pub const DEFAULT_THRESHOLD: u64 = 200;

/// Unweighted graph with per-node sorted neighbor lists. For directed graphs
/// `neighbors[v]` holds the sources of edges pointing into `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    neighbors: Vec<Vec<usize>>,
    features: Array2<f64>,
    directed: bool,
}

impl InteractionGraph {
    fn empty(ids: Vec<String>, features: Array2<f64>, directed: bool) -> Result<Self> {
        if features.nrows() != ids.len() {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate node id {id:?}")));
            }
        }
        Ok(Self {
            neighbors: vec![Vec::new(); ids.len()],
            ids,
            index,
            features,
            directed,
        })
    }

    /// Builds a graph from explicit `(src, dst)` edges, e.g. recommended
    /// routes. Self loops and duplicates are dropped.
    pub fn from_edges<'a, I>(ids: Vec<String>, features: Array2<f64>, edges: I, directed: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut g = Self::empty(ids, features, directed)?;
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); g.ids.len()];
        for (a, b) in edges {
            let (i, j) = (g.node(a)?, g.node(b)?);
            if i == j {
                continue;
            }
            sets[j].insert(i);
            if !directed {
                sets[i].insert(j);
            }
        }
        g.neighbors = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        Ok(g)
    }

    pub fn node(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Dataset(format!("unknown attraction id {id:?}")))
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    /// Edge list with `src < dst` for undirected graphs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (v, ns) in self.neighbors.iter().enumerate() {
            for &u in ns {
                if self.directed || u < v {
                    out.push((u, v));
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// Same nodes and features, no edges.
    pub fn without_edges(&self) -> Self {
        Self {
            neighbors: vec![Vec::new(); self.ids.len()],
            ..self.clone()
        }
    }
}

/// Edge `(i, j)` exists iff the known ITF between them is strictly larger
/// than `threshold`. Pairs labelled validation or test never contribute.
pub fn build_graph(flows: &FlowTable, ids: Vec<String>, features: Array2<f64>, threshold: u64) -> Result<InteractionGraph> {
    let directed = flows.is_directed();
    let edges: Vec<(&str, &str)> = flows
        .iter()
        .filter(|(_, e)| matches!(e.split, Split::Train | Split::Unknown) && e.count > threshold)
        .map(|((a, b), _)| (a.as_str(), b.as_str()))
        .collect();
    InteractionGraph::from_edges(ids, features, edges, directed)
}

pub fn read_edges_csv(path: &Path) -> Result<Vec<(String, String)>> {
    #[derive(Deserialize)]
    struct Row {
        src_id: String,
        dst_id: String,
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<Row>()
        .enumerate()
        .map(|(i, row)| {
            row.map(|r| (r.src_id, r.dst_id)).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: u64,
    /// `None` when training failed for this threshold.
    pub val_mape: Option<f64>,
    pub val_cpc: Option<f64>,
    pub n_edges: usize,
}

/// Builds one graph per threshold and scores it with `evaluate`, which
/// returns validation `(mape, cpc)`. Rows come back sorted by threshold.
pub fn sweep_threshold<F>(
    flows: &FlowTable,
    ids: &[String],
    features: &Array2<f64>,
    thresholds: &[u64],
    evaluate: F,
) -> Result<Vec<SweepRow>>
where
    F: Fn(&InteractionGraph) -> Result<(f64, f64)> + Sync,
{
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("threshold list is empty".into()));
    }
    let mut thresholds = thresholds.to_vec();
    thresholds.sort_unstable();
    thresholds.dedup();
    let graphs = thresholds
        .iter()
        .map(|&t| build_graph(flows, ids.to_vec(), features.clone(), t))
        .collect::<Result<Vec<_>>>()?;
    for w in graphs.windows(2) {
        let (lo, hi): (BTreeSet<_>, BTreeSet<_>) = (w[0].edges().into_iter().collect(), w[1].edges().into_iter().collect());
        if !hi.is_subset(&lo) {
            return Err(Error::Dataset("edge sets are not monotone in the threshold".into()));
        }
    }
    Ok(thresholds
        .par_iter()
        .zip(graphs.par_iter())
        .map(|(&threshold, g)| {
            let scored = evaluate(g);
            if let Err(e) = &scored {
                log::warn!("threshold {threshold}: {e}");
            }
            let scored = scored.ok();
            SweepRow {
                threshold,
                val_mape: scored.map(|s| s.0),
                val_cpc: scored.map(|s| s.1),
                n_edges: g.edge_count(),
            }
        })
        .collect())
}

/// Threshold with the lowest validation MAPE, ignoring failed rows.
pub fn best_threshold(rows: &[SweepRow]) -> Option<u64> {
    rows.iter()
        .filter_map(|r| r.val_mape.filter(|m| m.is_finite()).map(|m| (m, r.threshold)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, t)| t)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "val_mape", "val_cpc", "n_edges"])?;
    let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([r.threshold.to_string(), fmt(r.val_mape), fmt(r.val_cpc), r.n_edges.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| ["A", "B", "C", "D", "E", "F"][i].to_string()).collect()
    }

    #[test]
    fn threshold_is_strict() {
        let mut t = FlowTable::new(false);
        t.add("A", "B", 250);
        t.add("A", "C", 150);
        let g = build_graph(&t, ids(3), Array2::zeros((3, 2)), 200).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
        let g = build_graph(&t, ids(3), Array2::zeros((3, 2)), 0).unwrap();
        assert_eq!(g.edge_count(), 2);
        let g = build_graph(&t, ids(3), Array2::zeros((3, 2)), 250).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn held_out_pairs_do_not_create_edges() {
        let mut t = FlowTable::new(false);
        t.add("A", "B", 500);
        t.add("B", "C", 500);
        t.add("A", "C", 500);
        t.set_split("A", "B", Split::Train).unwrap();
        t.set_split("B", "C", Split::Val).unwrap();
        t.set_split("A", "C", Split::Test).unwrap();
        let g = build_graph(&t, ids(3), Array2::zeros((3, 1)), 0).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn feature_rows_must_match_nodes() {
        let t = FlowTable::new(false);
        assert!(matches!(build_graph(&t, ids(3), Array2::zeros((2, 1)), 0), Err(Error::Shape(_))));
    }

    #[test]
    fn degrees() {
        let tri = InteractionGraph::from_edges(ids(3), Array2::zeros((3, 1)), [("A", "B"), ("B", "C"), ("C", "A")], false).unwrap();
        assert!((0..3).all(|v| tri.degree(v) == 2));
        let star = InteractionGraph::from_edges(ids(5), Array2::zeros((5, 1)), [("A", "B"), ("A", "C"), ("A", "D"), ("E", "A")], false).unwrap();
        assert_eq!(star.degree(0), 4);
        let lonely = InteractionGraph::from_edges(ids(2), Array2::zeros((2, 1)), [], false).unwrap();
        assert_eq!(lonely.degree(1), 0);
    }

    #[test]
    fn directed_graph_uses_in_neighbors() {
        let g = InteractionGraph::from_edges(ids(3), Array2::zeros((3, 1)), [("A", "B"), ("C", "B")], true).unwrap();
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert!(g.neighbors(0).is_empty());
        assert_eq!(g.edges(), vec![(0, 1), (2, 1)]);
    }

    #[test]
    fn sweep_shape_and_failures() {
        let mut t = FlowTable::new(false);
        t.add("A", "B", 60);
        t.add("A", "C", 120);
        t.add("B", "C", 450);
        let rows = sweep_threshold(&t, &ids(3), &Array2::zeros((3, 1)), &[400, 50, 200, 100], |g| {
            if g.edge_count() == 2 {
                Err(Error::InvalidArgument("boom".into()))
            } else {
                Ok((g.edge_count() as f64, 0.5))
            }
        })
        .unwrap();
        assert_eq!(rows.iter().map(|r| r.threshold).collect::<Vec<_>>(), vec![50, 100, 200, 400]);
        assert_eq!(rows.iter().map(|r| r.n_edges).collect::<Vec<_>>(), vec![3, 2, 1, 1]);
        assert_eq!(rows[1].val_mape, None);
        assert_eq!(best_threshold(&rows), Some(200));
        assert!(sweep_threshold(&t, &ids(3), &Array2::zeros((3, 1)), &[], |_| Ok((0.0, 0.0))).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone(counts in prop::collection::vec(0u64..500, 15), t1 in 0u64..500, t2 in 0u64..500) {
            let names = ids(6);
            let mut table = FlowTable::new(false);
            let mut k = 0;
            for i in 0..6 {
                for j in i + 1..6 {
                    table.add(&names[i], &names[j], counts[k]);
                    k += 1;
                }
            }
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let g_lo = build_graph(&table, names.clone(), Array2::zeros((6, 1)), lo).unwrap();
            let g_hi = build_graph(&table, names.clone(), Array2::zeros((6, 1)), hi).unwrap();
            for v in 0..6 {
                prop_assert!(!g_lo.neighbors(v).contains(&v));
                prop_assert!(g_lo.neighbors(v).windows(2).all(|w| w[0] < w[1]));
                for &u in g_lo.neighbors(v) {
                    prop_assert!(g_lo.neighbors(u).contains(&v));
                }
            }
            let lo_edges: BTreeSet<_> = g_lo.edges().into_iter().collect();
            prop_assert!(g_hi.edges().iter().all(|e| lo_edges.contains(e)));
        }
    }
}
