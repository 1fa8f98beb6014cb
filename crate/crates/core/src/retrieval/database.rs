use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

use crate::backbone::LocalDescriptorSet;
use crate::error::{Result, SalsaError};
use crate::geometry::RigidTransform;
use crate::numeric::squared_distance;

#[derive(Clone, Debug, PartialEq)]
pub struct DatabaseEntry {
    pub id: String,
    pub descriptor: Vec<f64>,
    pub pose: RigidTransform,
    pub local: Option<LocalDescriptorSet>,
}

/// Append-only store of scene descriptors searched exhaustively.
#[derive(Clone, Debug, Default)]
pub struct DescriptorDatabase {
    dim: usize,
    entries: Vec<DatabaseEntry>,
    by_id: HashMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    /// Position of the entry in the database.
    pub index: usize,
    pub id: String,
    pub distance: f64,
}

/// Neighbours by ascending descriptor distance, ties by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryResult {
    pub neighbors: Vec<Neighbor>,
}

impl QueryResult {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.neighbors.iter().map(|n| n.index).collect()
    }
}

impl DescriptorDatabase {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DatabaseEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &DatabaseEntry {
        &self.entries[index]
    }

    pub fn get(&self, id: &str) -> Option<&DatabaseEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn add(
        &mut self,
        id: impl Into<String>,
        descriptor: Vec<f64>,
        pose: RigidTransform,
        local: Option<LocalDescriptorSet>,
    ) -> Result<()> {
        let id = id.into();
        if self.by_id.contains_key(&id) {
            return Err(SalsaError::DuplicateId(id));
        }
        if descriptor.len() != self.dim {
            return Err(SalsaError::InvalidArgument(format!(
                "descriptor of {id} has length {}, database expects {}",
                descriptor.len(),
                self.dim
            )));
        }
        if descriptor.iter().any(|v| !v.is_finite()) {
            return Err(SalsaError::NonFinite("database descriptor"));
        }
        self.by_id.insert(id.clone(), self.entries.len());
        self.entries.push(DatabaseEntry {
            id,
            descriptor,
            pose,
            local,
        });
        Ok(())
    }

    /// Exact `k` nearest entries by L2 distance (fewer if the database is
    /// smaller).
    pub fn knn(&self, query: &[f64], k: usize) -> Result<QueryResult> {
        if self.is_empty() {
            return Err(SalsaError::InvalidArgument("knn on an empty database".into()));
        }
        if k == 0 {
            return Err(SalsaError::InvalidArgument("knn needs k ≥ 1".into()));
        }
        if query.len() != self.dim {
            return Err(SalsaError::InvalidArgument(format!(
                "query has length {}, database expects {}",
                query.len(),
                self.dim
            )));
        }
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| (squared_distance(query, &e.descriptor), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            a.0.total_cmp(&b.0).then_with(|| self.entries[a.1].id.cmp(&self.entries[b.1].id))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(QueryResult {
            neighbors: scored
                .into_iter()
                .map(|(d2, i)| Neighbor {
                    index: i,
                    id: self.entries[i].id.clone(),
                    distance: d2.sqrt(),
                })
                .collect(),
        })
    }
}
