//! Database container.
//!
//! Little-endian layout: magic `SALSAdb`, `u32` descriptor length `e`, `u32`
//! entry count, then per entry a `u32`-length-prefixed UTF-8 id, the pose as
//! 12 `f64` (row-major 3×4), `e` `f32` descriptor values and a `u64` absolute
//! offset of its local-descriptor blob (`u64::MAX` when absent). Blobs follow
//! the entries: `u32` point count `n`, `u32` width `d`, `n×3` `f64`
//! positions and `n×d` `f32` descriptors.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::database::DescriptorDatabase;
use crate::backbone::LocalDescriptorSet;
use crate::binio::{put_f32s, put_f64s, put_str, put_u32, put_u64, ByteReader};
use crate::error::{Result, SalsaError};
use crate::geometry::RigidTransform;
use crate::numeric::Matrix;

pub const DATABASE_MAGIC: &[u8; 7] = b"SALSAdb";
const NO_BLOB: u64 = u64::MAX;

fn blob_len(l: &LocalDescriptorSet) -> u64 {
    8 + 24 * l.len() as u64 + 4 * (l.len() * l.dim()) as u64
}

pub fn write_database<W: Write>(w: &mut W, db: &DescriptorDatabase) -> Result<()> {
    let e = db.dim();
    w.write_all(DATABASE_MAGIC)?;
    put_u32(w, e)?;
    put_u32(w, db.len())?;
    let header = (DATABASE_MAGIC.len() + 8) as u64;
    let entries_len: u64 = db
        .entries()
        .iter()
        .map(|en| 4 + en.id.len() as u64 + 96 + 4 * e as u64 + 8)
        .sum();
    let mut next_blob = header + entries_len;
    for en in db.entries() {
        put_str(w, &en.id)?;
        put_f64s(w, &en.pose.to_row_major_3x4())?;
        put_f32s(w, &en.descriptor)?;
        match &en.local {
            Some(l) => {
                put_u64(w, next_blob)?;
                next_blob += blob_len(l);
            }
            None => put_u64(w, NO_BLOB)?,
        }
    }
    for l in db.entries().iter().filter_map(|en| en.local.as_ref()) {
        put_u32(w, l.len())?;
        put_u32(w, l.dim())?;
        for p in &l.positions {
            put_f64s(w, p)?;
        }
        put_f32s(w, l.descriptors.as_slice())?;
    }
    Ok(())
}

fn read_blob(bytes: &[u8], offset: u64) -> Result<LocalDescriptorSet> {
    if offset >= bytes.len() as u64 {
        return Err(SalsaError::Format {
            offset,
            detail: "local descriptor offset beyond end of file".into(),
        });
    }
    let mut r = ByteReader::new(&bytes[offset as usize..]);
    r.offset = offset;
    let n = r.u32("local point count")?;
    let d = r.u32("local descriptor width")?;
    let remaining = bytes.len() as u64 - offset;
    if 24 * n as u64 + 4 * (n as u64) * (d as u64) > remaining {
        return Err(SalsaError::Format {
            offset,
            detail: format!("local blob of {n}x{d} does not fit in the file"),
        });
    }
    let flat = r.f64s(3 * n, "local positions")?;
    let positions = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let desc = Matrix::from_vec(n, d, r.f32s(n * d, "local descriptors")?)?;
    LocalDescriptorSet::new(desc, positions)
}

pub fn read_database(bytes: &[u8]) -> Result<DescriptorDatabase> {
    let mut r = ByteReader::new(bytes);
    if r.bytes(DATABASE_MAGIC.len(), "magic")? != DATABASE_MAGIC {
        return Err(SalsaError::Format {
            offset: 0,
            detail: "not a descriptor database (bad magic)".into(),
        });
    }
    let e = r.u32("descriptor length")?;
    let count = r.u32("entry count")?;
    // each entry needs more than 100 bytes; reject absurd counts early
    if count as u64 * 100 > bytes.len() as u64 {
        return Err(SalsaError::Format {
            offset: 11,
            detail: format!("entry count {count} exceeds file size"),
        });
    }
    let mut db = DescriptorDatabase::new(e);
    for _ in 0..count {
        let at = r.offset;
        let id = r.string(1 << 16, "entry id")?;
        let pose_vals: [f64; 12] = r.f64s(12, "pose")?.try_into().expect("12 values");
        let pose = RigidTransform::from_row_major_3x4(&pose_vals).map_err(|err| SalsaError::Format {
            offset: at,
            detail: format!("pose of {id}: {err}"),
        })?;
        let descriptor = r.f32s(e, "descriptor")?;
        let blob = r.u64("local offset")?;
        let local = if blob == NO_BLOB {
            None
        } else {
            Some(read_blob(bytes, blob)?)
        };
        db.add(id, descriptor, pose, local).map_err(|err| SalsaError::Format {
            offset: at,
            detail: err.to_string(),
        })?;
    }
    Ok(db)
}

pub fn save_database(path: &Path, db: &DescriptorDatabase) -> Result<()> {
    let mut buf = Vec::new();
    write_database(&mut buf, db)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_database(path: &Path) -> Result<DescriptorDatabase> {
    read_database(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_db() -> DescriptorDatabase {
        let mut db = DescriptorDatabase::new(3);
        db.add("a", vec![0.5, -0.25, 1.0], RigidTransform::from_yaw(0.4, [1.0, 2.0, 3.0]), None)
            .unwrap();
        let local = LocalDescriptorSet::new(
            Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap(),
            vec![[0.1, 0.2, 0.3], [4.0, 5.0, 6.0]],
        )
        .unwrap();
        db.add("b", vec![0.0, 1.0, 0.0], RigidTransform::identity(), Some(local)).unwrap();
        db
    }

    #[test]
    fn round_trip() {
        let db = sample_db();
        let mut buf = Vec::new();
        write_database(&mut buf, &db).unwrap();
        let back = read_database(&buf).unwrap();
        assert_eq!(back.entries(), db.entries());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let db = sample_db();
        let mut buf = Vec::new();
        write_database(&mut buf, &db).unwrap();
        for cut in [0, 5, 20, buf.len() - 1] {
            assert!(matches!(read_database(&buf[..cut]), Err(SalsaError::Format { .. })), "cut {cut}");
        }
        let mut bad = buf.clone();
        bad[3] = b'?';
        assert!(read_database(&bad).is_err());
    }
}
