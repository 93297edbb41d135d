//! Binary checkpoint format.
//!
//! `PGCK1` magic, then records until end of file. Each record is
//! `name_len: u32 LE`, UTF-8 name, `rank: u32 LE`, `rank` dims as `u32 LE`,
//! then the data as `f64 LE`. Optimizer state follows the parameters as
//! records named `<param>.m`, `<param>.v` and `<param>.t` (the step count,
//! stored as a one-element tensor).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::store::ParameterStore;
use super::tensor::Tensor;
use super::NumericError;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"PGCK1";

fn write_record(w: &mut impl Write, name: &str, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(
    store: &ParameterStore,
    path: &Path,
    with_optimizer: bool,
) -> Result<(), NumericError> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        for (name, e) in store.iter() {
            write_record(&mut w, name, &e.value)?;
        }
        if with_optimizer {
            for (name, e) in store.iter() {
                write_record(&mut w, &format!("{name}.m"), &e.m)?;
                write_record(&mut w, &format!("{name}.v"), &e.v)?;
                write_record(&mut w, &format!("{name}.t"), &Tensor::new(vec![1], vec![e.step as f64])?)?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<Option<u32>, NumericError> {
    let mut buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut buf[got..])?;
        if n == 0 {
            return if got == 0 {
                Ok(None)
            } else {
                Err(NumericError::Checkpoint("truncated length field".into()))
            };
        }
        got += n;
    }
    Ok(Some(u32::from_le_bytes(buf)))
}

fn need_u32(r: &mut impl Read) -> Result<u32, NumericError> {
    read_u32(r)?.ok_or_else(|| NumericError::Checkpoint("unexpected end of file".into()))
}

pub fn read_checkpoint(path: &Path) -> Result<ParameterStore, NumericError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| NumericError::Checkpoint("file too short".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NumericError::Checkpoint("bad magic bytes".into()));
    }
    let mut records: Vec<(String, Tensor)> = Vec::new();
    while let Some(name_len) = read_u32(&mut r)? {
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)
            .map_err(|_| NumericError::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| NumericError::Checkpoint("name is not UTF-8".into()))?;
        let rank = need_u32(&mut r)?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(need_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| NumericError::Checkpoint(format!("truncated data for `{name}`")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        records.push((name, Tensor::new(shape, data)?));
    }

    let mut store = ParameterStore::new();
    let mut state = Vec::new();
    for (name, t) in records {
        let is_state = [".m", ".v", ".t"].iter().any(|suffix| {
            name.strip_suffix(suffix)
                .is_some_and(|base| store.contains(base))
        });
        if is_state {
            state.push((name, t));
        } else {
            store.insert(&name, t)?;
        }
    }
    for (name, t) in state {
        let (base, suffix) = name.split_at(name.len() - 2);
        let entry = store.entry_mut(base).expect("checked above");
        match suffix {
            ".t" => entry.step = t.data()[0] as u64,
            _ => {
                if t.shape() != entry.value.shape() {
                    return Err(NumericError::Checkpoint(format!(
                        "optimizer state `{name}` does not match parameter shape"
                    )));
                }
                if suffix == ".m" {
                    entry.m = t;
                } else {
                    entry.v = t;
                }
            }
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_optimizer_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pgck");
        let mut store = ParameterStore::new();
        store
            .insert("enc.w", Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 1e-300, -7.5, 2.0]).unwrap())
            .unwrap();
        store.insert("enc.b", Tensor::row(vec![4.0, 5.0, 6.0])).unwrap();
        store.entry_mut("enc.w").unwrap().m.data_mut()[0] = 0.25;
        store.entry_mut("enc.w").unwrap().step = 17;
        write_checkpoint(&store, &path, true).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..5], b"PGCK1");

        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.len(), 2);
        let e = back.entry("enc.w").unwrap();
        assert_eq!(e.value, store.get("enc.w").unwrap().clone());
        assert_eq!(e.m.data()[0], 0.25);
        assert_eq!(e.step, 17);
    }

    #[test]
    fn record_layout_is_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pgck");
        let mut store = ParameterStore::new();
        store.insert("ab", Tensor::row(vec![1.0])).unwrap();
        write_checkpoint(&store, &path, false).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut want = b"PGCK1".to_vec();
        want.extend(2u32.to_le_bytes());
        want.extend(b"ab");
        want.extend(2u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(1.0f64.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgck");
        std::fs::write(&path, b"NOPE!").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
