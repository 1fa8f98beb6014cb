//! Descriptor database, exact nearest-neighbour search and place
//! recognition metrics.

mod database;
mod io;
mod metrics;

pub use database::{DatabaseEntry, DescriptorDatabase, Neighbor, QueryResult};
pub use io::{load_database, read_database, save_database, write_database, DATABASE_MAGIC};
pub use metrics::{mrr, recall_at_k, MetricRow, MetricValue, RetrievalMetrics, MRR_DEPTH};
