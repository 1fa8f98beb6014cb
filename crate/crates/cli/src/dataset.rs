//! On-disk datasets: `scans.csv` (`id,role,file,timestamp`), `poses.txt` with
//! one KITTI pose line per manifest row, and the velodyne-layout scans the
//! manifest points at (relative to the dataset directory).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use salsa_core::dataset::{kitti, ScanRole, SyntheticDataset};
use salsa_core::geometry::{PointCloud, RigidTransform};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "scans.csv";
pub const POSES: &str = "poses.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Database,
    Query,
}

impl From<ScanRole> for Role {
    fn from(r: ScanRole) -> Self {
        match r {
            ScanRole::Database => Role::Database,
            ScanRole::Query => Role::Query,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanRecord {
    pub id: String,
    pub role: Role,
    pub path: PathBuf,
    /// Sensor-to-world.
    pub pose: RigidTransform,
    pub timestamp: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    role: Role,
    file: String,
    timestamp: Option<f64>,
}

pub fn load_manifest(dir: &Path) -> CliResult<Vec<ScanRecord>> {
    let manifest = dir.join(MANIFEST);
    if !manifest.is_file() {
        return Err(CliError::missing("dataset manifest", &manifest));
    }
    let poses_path = dir.join(POSES);
    if !poses_path.is_file() {
        return Err(CliError::missing("pose file", &poses_path));
    }
    let poses = kitti::load_poses(&poses_path)?;
    let mut reader = csv::Reader::from_path(&manifest).map_err(|e| CliError::Validation(format!("{}: {e}", manifest.display())))?;
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| CliError::Validation(format!("{}: {e}", manifest.display())))?;
        let Some(pose) = poses.get(i) else {
            return Err(CliError::Validation(format!(
                "{} has fewer lines than {} has rows",
                poses_path.display(),
                manifest.display()
            )));
        };
        let path = dir.join(&row.file);
        if !path.is_file() {
            return Err(CliError::missing("scan file", &path));
        }
        records.push(ScanRecord {
            id: row.id,
            role: row.role,
            path,
            pose: *pose,
            timestamp: row.timestamp,
        });
    }
    if records.len() != poses.len() {
        return Err(CliError::Validation(format!(
            "{} lists {} scans but {} has {} poses",
            manifest.display(),
            records.len(),
            poses_path.display(),
            poses.len()
        )));
    }
    let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Validation(format!("duplicate scan id {} in manifest", w[0])));
    }
    Ok(records)
}

pub fn load_clouds(records: &[ScanRecord]) -> CliResult<Vec<PointCloud>> {
    records
        .par_iter()
        .map(|r| {
            kitti::load_scan(&r.path).map_err(|e| CliError::Validation(format!("{}: {e}", r.path.display())))
        })
        .collect()
}

pub fn write_synthetic(dir: &Path, ds: &SyntheticDataset) -> CliResult<()> {
    fs::create_dir_all(dir.join("scans"))?;
    let mut w = csv::Writer::from_path(dir.join(MANIFEST)).map_err(|e| CliError::Runtime(e.to_string()))?;
    for s in &ds.scans {
        let file = format!("scans/{}.bin", s.id);
        kitti::write_scan(&dir.join(&file), &s.cloud)?;
        w.serialize(ManifestRow {
            id: s.id.clone(),
            role: s.role.into(),
            file,
            timestamp: None,
        })
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    let poses: Vec<RigidTransform> = ds.scans.iter().map(|s| s.pose).collect();
    kitti::write_poses(&dir.join(POSES), &poses)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use salsa_core::dataset::{generate_synthetic, SyntheticConfig};

    #[test]
    fn synthetic_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&SyntheticConfig {
            num_scenes: 2,
            points_per_scan: 64,
            ..Default::default()
        })
        .unwrap();
        write_synthetic(tmp.path(), &ds).unwrap();
        let recs = load_manifest(tmp.path()).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[1].id, "s000_q0");
        assert_eq!(recs[1].role, Role::Query);
        let clouds = load_clouds(&recs).unwrap();
        for (c, s) in clouds.iter().zip(&ds.scans) {
            for (a, b) in c.points().iter().zip(s.cloud.points()) {
                for k in 0..3 {
                    assert_eq!(a[k], b[k] as f32 as f64);
                }
            }
        }
        for (r, s) in recs.iter().zip(&ds.scans) {
            assert!(r.pose.distance_to(&s.pose) < 1e-9);
        }
    }

    #[test]
    fn missing_pieces_are_named() {
        let tmp = tempfile::tempdir().unwrap();
        let err = load_manifest(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("dataset manifest"));
        fs::write(tmp.path().join(MANIFEST), "id,role,file,timestamp\na,query,x.bin,\n").unwrap();
        fs::write(tmp.path().join(POSES), "1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        let err = load_manifest(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("scan file") && err.exit_code() == 2);
    }
}
