use std::fmt::Write as _;

use crate::error::{Result, SalsaError};
use crate::geometry::{distance, Point3};

/// Default depth for reciprocal rank.
pub const MRR_DEPTH: usize = 25;

/// A percentage together with how many queries it was computed over.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub evaluated: usize,
    /// Queries without any database entry inside the radius.
    pub excluded: usize,
}

fn check(rankings: &[Vec<usize>], query_pos: &[Point3], db_pos: &[Point3]) -> Result<()> {
    if rankings.len() != query_pos.len() {
        return Err(SalsaError::InvalidArgument(format!(
            "{} rankings for {} queries",
            rankings.len(),
            query_pos.len()
        )));
    }
    if let Some(bad) = rankings.iter().flatten().find(|&&i| i >= db_pos.len()) {
        return Err(SalsaError::InvalidArgument(format!("ranked index {bad} outside database")));
    }
    Ok(())
}

/// Evaluates `score` on every query that has at least one database entry
/// within `radius`; the score receives the 1-based rank of the first
/// in-radius entry, if any.
fn over_queries(
    rankings: &[Vec<usize>],
    query_pos: &[Point3],
    db_pos: &[Point3],
    radius: f64,
    score: impl Fn(Option<usize>) -> f64,
) -> Result<MetricValue> {
    check(rankings, query_pos, db_pos)?;
    let mut total = 0.0;
    let mut evaluated = 0;
    let mut excluded = 0;
    for (ranked, q) in rankings.iter().zip(query_pos) {
        if !db_pos.iter().any(|p| distance(p, q) <= radius) {
            excluded += 1;
            continue;
        }
        evaluated += 1;
        let first = ranked.iter().position(|&i| distance(&db_pos[i], q) <= radius);
        total += score(first.map(|r| r + 1));
    }
    let value = if evaluated == 0 {
        0.0
    } else {
        100.0 * total / evaluated as f64
    };
    Ok(MetricValue {
        value,
        evaluated,
        excluded,
    })
}

/// Percent of queries whose first `k` retrievals contain an entry within
/// `radius` of the query.
pub fn recall_at_k(
    rankings: &[Vec<usize>],
    query_pos: &[Point3],
    db_pos: &[Point3],
    k: usize,
    radius: f64,
) -> Result<MetricValue> {
    over_queries(rankings, query_pos, db_pos, radius, |first| match first {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    })
}

/// `100 · mean(1 / rank)` of the first in-radius retrieval within `depth`.
pub fn mrr(
    rankings: &[Vec<usize>],
    query_pos: &[Point3],
    db_pos: &[Point3],
    radius: f64,
    depth: usize,
) -> Result<MetricValue> {
    over_queries(rankings, query_pos, db_pos, radius, |first| match first {
        Some(r) if r <= depth => 1.0 / r as f64,
        _ => 0.0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    /// `None` for MRR.
    pub k: Option<usize>,
    pub radius: f64,
    pub value: MetricValue,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RetrievalMetrics {
    pub rows: Vec<MetricRow>,
}

impl RetrievalMetrics {
    pub fn evaluate(
        rankings: &[Vec<usize>],
        query_pos: &[Point3],
        db_pos: &[Point3],
        ks: &[usize],
        radii: &[f64],
        depth: usize,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        for &radius in radii {
            for &k in ks {
                rows.push(MetricRow {
                    metric: "recall".into(),
                    k: Some(k),
                    radius,
                    value: recall_at_k(rankings, query_pos, db_pos, k, radius)?,
                });
            }
            rows.push(MetricRow {
                metric: "mrr".into(),
                k: None,
                radius,
                value: mrr(rankings, query_pos, db_pos, radius, depth)?,
            });
        }
        Ok(Self { rows })
    }

    pub fn recall(&self, k: usize, radius: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == "recall" && r.k == Some(k) && r.radius == radius)
            .map(|r| r.value.value)
    }

    pub fn mrr(&self, radius: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == "mrr" && r.radius == radius)
            .map(|r| r.value.value)
    }

    /// `metric,k,radius,value`; `k` is empty for MRR.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,k,radius,value\n");
        for r in &self.rows {
            let k = r.k.map(|k| k.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{}", r.metric, k, r.radius, r.value.value).expect("write to string");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Vec<Point3> {
        (0..n).map(|i| [100.0 * i as f64, 0.0, 0.0]).collect()
    }

    #[test]
    fn mrr_hand_case() {
        // true match of query i is entry i; it sits at ranks 1, 2 and 4
        let db = line(4);
        let queries = vec![db[0], db[1], db[2]];
        let rankings = vec![vec![0, 1, 2, 3], vec![0, 1, 2, 3], vec![0, 1, 3, 2]];
        let m = mrr(&rankings, &queries, &db, 5.0, MRR_DEPTH).unwrap();
        assert!((m.value - 100.0 * (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-9);
        assert!((m.value - 58.333_333_333).abs() < 1e-6);
        let r1 = recall_at_k(&rankings, &queries, &db, 1, 5.0).unwrap();
        assert!((r1.value - 100.0 / 3.0).abs() < 1e-12);
        assert!(m.value >= r1.value);
    }

    #[test]
    fn exclusion_and_depth() {
        let db = line(3);
        let queries = vec![db[0], [50.0, 0.0, 0.0]];
        let rankings = vec![vec![1, 2, 0], vec![0, 1]];
        let r = recall_at_k(&rankings, &queries, &db, 2, 5.0).unwrap();
        assert_eq!((r.value, r.evaluated, r.excluded), (0.0, 1, 1));
        assert_eq!(recall_at_k(&rankings, &queries, &db, 3, 5.0).unwrap().value, 100.0);
        assert_eq!(mrr(&rankings, &queries, &db, 5.0, 2).unwrap().value, 0.0);
        assert!(recall_at_k(&[vec![7]], &queries[..1], &db, 1, 5.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let db = line(2);
        let m = RetrievalMetrics::evaluate(&[vec![0, 1]], &db[..1], &db, &[1], &[5.0], 25).unwrap();
        assert_eq!(m.to_csv(), "metric,k,radius,value\nrecall,1,5,100\nmrr,,5,100\n");
        assert_eq!(m.recall(1, 5.0), Some(100.0));
    }
}
