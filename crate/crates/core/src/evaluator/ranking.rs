//! Single-query retrieval ranking, CMC and mAP.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// One embedded sample.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexRow {
    pub sample_id: String,
    pub identity: i64,
    pub camera: i64,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingIndex {
    pub rows: Vec<IndexRow>,
}

impl EmbeddingIndex {
    pub fn new(rows: Vec<IndexRow>) -> Result<Self> {
        if let Some(first) = rows.first() {
            let dim = first.embedding.len();
            for r in &rows {
                if r.embedding.len() != dim {
                    return Err(Error::Data(format!(
                        "embedding of {} has dim {}, expected {dim}",
                        r.sample_id,
                        r.embedding.len()
                    )));
                }
                if r.embedding.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("embedding of {} is not finite", r.sample_id)));
                }
            }
        }
        Ok(EmbeddingIndex { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.rows.first().map(|r| r.embedding.len())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub sample_id: String,
    /// Valid gallery sample ids, nearest first.
    pub ranked: Vec<String>,
    /// 1-based rank of the first correct match.
    pub first_hit: Option<usize>,
    /// `None` when the query had no valid match and was skipped.
    pub ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingReport {
    pub queries: Vec<QueryResult>,
    /// `cmc[r - 1]`: share of scored queries whose first match is within rank `r`.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub scored: usize,
    pub skipped: usize,
}

impl RankingReport {
    /// CMC at 1-based rank `r`, saturating past the end of the curve.
    pub fn cmc_at(&self, r: usize) -> f64 {
        match self.cmc.len() {
            0 => 0.0,
            n => self.cmc[r.clamp(1, n) - 1],
        }
    }

    pub fn metrics(&self) -> [(&'static str, f64); 4] {
        [
            ("mAP", self.map),
            ("rank-1", self.cmc_at(1)),
            ("rank-5", self.cmc_at(5)),
            ("rank-10", self.cmc_at(10)),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.metrics() {
            writeln!(s, "{k},{v}").unwrap();
        }
        s
    }

    pub fn per_query_csv(&self) -> String {
        let mut s = String::from("sample_id,ap,first_hit\n");
        for q in &self.queries {
            let ap = q.ap.map(|v| v.to_string()).unwrap_or_default();
            let hit = q.first_hit.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{ap},{hit}", q.sample_id).unwrap();
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.metrics() {
            writeln!(s, "{k:<8} {:>7.2}%", 100.0 * v).unwrap();
        }
        writeln!(s, "queries  {} scored, {} skipped (no valid match)", self.scored, self.skipped).unwrap();
        s
    }
}

fn score_query(q: &IndexRow, gallery: &EmbeddingIndex) -> QueryResult {
    let mut cand: Vec<(f64, &IndexRow)> = gallery
        .rows
        .iter()
        .filter(|g| g.identity >= 0 && !(g.identity == q.identity && g.camera == q.camera))
        .map(|g| (euclidean(&q.embedding, &g.embedding), g))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.sample_id.cmp(&b.1.sample_id)));
    let (mut hits, mut ap_sum, mut first_hit) = (0usize, 0.0, None);
    if q.identity >= 0 {
        for (pos, (_, g)) in cand.iter().enumerate() {
            if g.identity == q.identity {
                hits += 1;
                ap_sum += hits as f64 / (pos + 1) as f64;
                first_hit.get_or_insert(pos + 1);
            }
        }
    }
    QueryResult {
        sample_id: q.sample_id.clone(),
        ranked: cand.iter().map(|(_, g)| g.sample_id.clone()).collect(),
        first_hit,
        ap: (hits > 0).then(|| ap_sum / hits as f64),
    }
}

/// Rank the gallery for every query by Euclidean distance, ties broken by
/// ascending sample id. Gallery entries sharing both identity and camera
/// with the query, and entries with negative identity, are excluded. Queries
/// without any valid match are skipped and counted.
pub fn rank_queries(queries: &EmbeddingIndex, gallery: &EmbeddingIndex) -> Result<RankingReport> {
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::Data("query and gallery sets must be non-empty".into()));
    }
    if queries.dim() != gallery.dim() {
        return Err(Error::Data(format!(
            "query dim {:?} differs from gallery dim {:?}",
            queries.dim(),
            gallery.dim()
        )));
    }
    let results: Vec<QueryResult> = queries.rows.par_iter().map(|q| score_query(q, gallery)).collect();

    let r_max = gallery.len();
    let mut counts = vec![0usize; r_max + 1];
    let (mut scored, mut ap_total) = (0usize, 0.0);
    for q in &results {
        if let (Some(hit), Some(ap)) = (q.first_hit, q.ap) {
            counts[hit] += 1;
            scored += 1;
            ap_total += ap;
        }
    }
    let mut cmc = Vec::with_capacity(r_max);
    let mut running = 0usize;
    for c in &counts[1..] {
        running += c;
        cmc.push(if scored == 0 { 0.0 } else { running as f64 / scored as f64 });
    }
    Ok(RankingReport {
        skipped: results.len() - scored,
        map: if scored == 0 { 0.0 } else { ap_total / scored as f64 },
        queries: results,
        cmc,
        scored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(id: &str, identity: i64, camera: i64, e: &[f64]) -> IndexRow {
        IndexRow {
            sample_id: id.into(),
            identity,
            camera,
            embedding: e.to_vec(),
        }
    }

    fn index(rows: Vec<IndexRow>) -> EmbeddingIndex {
        EmbeddingIndex::new(rows).unwrap()
    }

    #[test]
    fn ap_with_hits_at_one_and_three() {
        let q = index(vec![row("q", 1, 0, &[0.0])]);
        let g = index(vec![row("a", 1, 1, &[1.0]), row("b", 2, 1, &[2.0]), row("c", 1, 1, &[3.0])]);
        let r = rank_queries(&q, &g).unwrap();
        assert_eq!(r.queries[0].ap, Some(0.5 * (1.0 + 2.0 / 3.0)));
        assert_eq!(r.cmc, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn perfect_match() {
        let q = index(vec![row("q1", 1, 0, &[0.0, 0.0]), row("q2", 2, 0, &[5.0, 5.0])]);
        let g = index(vec![
            row("g1", 1, 1, &[0.0, 0.0]),
            row("g2", 2, 1, &[5.0, 5.0]),
            row("g3", 3, 1, &[20.0, 0.0]),
        ]);
        let r = rank_queries(&q, &g).unwrap();
        assert_eq!((r.map, r.cmc_at(1)), (1.0, 1.0));
    }

    #[test]
    fn same_camera_matches_are_excluded() {
        let q = index(vec![row("q", 1, 0, &[0.0])]);
        let g = index(vec![row("a", 1, 0, &[0.0]), row("b", 2, 1, &[1.0])]);
        let r = rank_queries(&q, &g).unwrap();
        assert_eq!((r.skipped, r.scored), (1, 0));
        assert_eq!(r.queries[0].ranked, vec!["b".to_string()]);
    }

    #[test]
    fn junk_is_excluded_and_ties_use_sample_id() {
        let q = index(vec![row("q", 1, 0, &[0.0])]);
        let g = index(vec![
            row("z", 2, 1, &[1.0]),
            row("j", -1, 1, &[0.0]),
            row("m", 1, 1, &[1.0]),
        ]);
        let r = rank_queries(&q, &g).unwrap();
        assert_eq!(r.queries[0].ranked, vec!["m".to_string(), "z".to_string()]);
        assert_eq!(r.queries[0].first_hit, Some(1));
    }

    #[test]
    fn metrics_csv() {
        let q = index(vec![row("q", 1, 0, &[0.0])]);
        let g = index(vec![row("b", 2, 1, &[1.0]), row("a", 1, 1, &[2.0])]);
        let r = rank_queries(&q, &g).unwrap();
        assert_eq!(r.to_csv(), "metric,value\nmAP,0.5\nrank-1,0\nrank-5,1\nrank-10,1\n");
        assert_eq!(r.per_query_csv(), "sample_id,ap,first_hit\nq,0.5,2\n");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(EmbeddingIndex::new(vec![row("a", 1, 0, &[0.0]), row("b", 1, 0, &[0.0, 1.0])]).is_err());
        assert!(EmbeddingIndex::new(vec![row("a", 1, 0, &[f64::NAN])]).is_err());
        assert!(rank_queries(&EmbeddingIndex::default(), &index(vec![row("a", 1, 0, &[0.0])])).is_err());
    }

    proptest! {
        #[test]
        fn invariants(
            gal in prop::collection::vec((0i64..4, 0i64..2, -3.0f64..3.0, -3.0f64..3.0), 1..12),
            qs in prop::collection::vec((0i64..4, 0i64..2, -3.0f64..3.0, -3.0f64..3.0), 1..5),
            rot in 0usize..12,
        ) {
            let g: Vec<IndexRow> = gal.iter().enumerate().map(|(i, &(id, c, x, y))| row(&format!("g{i:02}"), id, c, &[x, y])).collect();
            let q: Vec<IndexRow> = qs.iter().enumerate().map(|(i, &(id, c, x, y))| row(&format!("q{i}"), id, c, &[x, y])).collect();
            let r = rank_queries(&index(q.clone()), &index(g.clone())).unwrap();
            prop_assert!(r.cmc.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!((0.0..=1.0).contains(&r.map));
            prop_assert!(r.cmc.iter().all(|&c| c <= 1.0));
            prop_assert_eq!(r.scored + r.skipped, q.len());
            let mut rotated = g.clone();
            rotated.rotate_left(rot % g.len());
            prop_assert_eq!(&rank_queries(&index(q), &index(rotated)).unwrap(), &r);
            for a in &g {
                prop_assert_eq!(euclidean(&a.embedding, &a.embedding), 0.0);
                for b in &g {
                    prop_assert_eq!(euclidean(&a.embedding, &b.embedding), euclidean(&b.embedding, &a.embedding));
                }
            }
        }
    }
}
