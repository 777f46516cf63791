//! On-disk archive of preprocessed stacks: one binary file per case plus a
//! JSON index. Output is a pure function of the inputs, so re-running a
//! preparation reproduces every byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::preprocess::Preprocess;
use super::stacks::{build_stacks, SliceStack};
use super::volume::VolumeCase;
use crate::arch::STACK_DEPTH;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DUNETSTK";
const VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub case_id: String,
    pub file: String,
    pub stacks: usize,
    /// Source volume dimensions.
    pub dims: [usize; 3],
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreIndex {
    pub version: u32,
    pub preprocess: Preprocess,
    pub cases: Vec<StoreEntry>,
}

fn encode(stacks: &[SliceStack], size: usize) -> Vec<u8> {
    let per = size * size;
    let mut out = Vec::with_capacity(20 + stacks.len() * (4 + per * STACK_DEPTH * 4 + per));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(size as u32).to_le_bytes());
    out.extend_from_slice(&(stacks.len() as u32).to_le_bytes());
    for s in stacks {
        out.extend_from_slice(&(s.target_index as u32).to_le_bytes());
        for v in &s.input {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&s.target);
    }
    out
}

fn decode(bytes: &[u8], case_id: &str) -> Result<Vec<SliceStack>> {
    let bad = |m: &str| Error::CorruptStore(format!("{case_id}: {m}"));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("bad header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    if word(8) != VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let (size, count) = (word(12), word(16));
    let per = size * size;
    let record = 4 + per * STACK_DEPTH * 4 + per;
    if bytes.len() != 20 + count * record {
        return Err(bad("truncated"));
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let at = 20 + k * record;
        let idx = word(at);
        let input = bytes[at + 4..at + 4 + per * STACK_DEPTH * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let target = bytes[at + 4 + per * STACK_DEPTH * 4..at + record].to_vec();
        out.push(SliceStack::new(case_id.to_string(), idx, size, input, target)?);
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Preprocesses `cases` into `dir`, which is created if needed.
pub fn write_store(dir: &Path, cases: &[VolumeCase], prep: &Preprocess) -> Result<StoreIndex> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no cases to prepare".into()));
    }
    prep.validate()?;
    let mut entries = Vec::with_capacity(cases.len());
    let mut encoded = Vec::with_capacity(cases.len());
    for case in cases {
        let stacks = build_stacks(case, prep)?;
        let bytes = encode(&stacks, prep.size);
        entries.push(StoreEntry {
            case_id: case.case_id.clone(),
            file: format!("stacks/{}.stk", case.case_id),
            stacks: stacks.len(),
            dims: case.dims(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        encoded.push(bytes);
    }
    let stack_dir = dir.join("stacks");
    fs::create_dir_all(&stack_dir).map_err(|e| Error::io(&stack_dir, e))?;
    for (entry, bytes) in entries.iter().zip(&encoded) {
        write_file(&dir.join(&entry.file), bytes)?;
    }
    let index = StoreIndex {
        version: VERSION,
        preprocess: *prep,
        cases: entries,
    };
    let mut json = serde_json::to_vec_pretty(&index)?;
    json.push(b'\n');
    write_file(&dir.join(INDEX_FILE), &json)?;
    Ok(index)
}

/// Read access to a prepared store.
#[derive(Clone, Debug)]
pub struct StackStore {
    root: PathBuf,
    index: StoreIndex,
}

impl StackStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let index: StoreIndex = serde_json::from_slice(&text)?;
        if index.version != VERSION {
            return Err(Error::CorruptStore(format!("index version {}", index.version)));
        }
        Ok(StackStore {
            root: dir.to_path_buf(),
            index,
        })
    }

    pub fn index(&self) -> &StoreIndex {
        &self.index
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.index.cases.iter().map(|c| c.case_id.clone()).collect()
    }

    pub fn entry(&self, case_id: &str) -> Result<&StoreEntry> {
        self.index
            .cases
            .iter()
            .find(|c| c.case_id == case_id)
            .ok_or_else(|| Error::CorruptStore(format!("no case {case_id} in store")))
    }

    pub fn load(&self, case_id: &str) -> Result<Vec<SliceStack>> {
        let entry = self.entry(case_id)?;
        let path = self.root.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(Error::CorruptStore(format!("{case_id}: checksum mismatch")));
        }
        let stacks = decode(&bytes, case_id)?;
        if stacks.len() != entry.stacks {
            return Err(Error::CorruptStore(format!("{case_id}: stack count")));
        }
        Ok(stacks)
    }

    pub fn load_many(&self, ids: &[String]) -> Result<Vec<SliceStack>> {
        let mut out = Vec::new();
        for id in ids {
            out.extend(self.load(id)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{phantom, PhantomParams};

    fn cases() -> Vec<VolumeCase> {
        let p = PhantomParams {
            dims: [197, 233, 3],
            ..PhantomParams::default()
        };
        vec![phantom("a", &p, 1).unwrap(), phantom("b", &p, 2).unwrap()]
    }

    #[test]
    fn round_trip_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let prep = Preprocess::desk(24);
        let cs = cases();
        write_store(dir.path(), &cs, &prep).unwrap();
        let first = fs::read(dir.path().join(INDEX_FILE)).unwrap();
        write_store(dir.path(), &cs, &prep).unwrap();
        assert_eq!(first, fs::read(dir.path().join(INDEX_FILE)).unwrap());

        let store = StackStore::open(dir.path()).unwrap();
        let loaded = store.load("b").unwrap();
        assert_eq!(loaded, build_stacks(&cs[1], &prep).unwrap());
        assert_eq!(store.case_ids(), vec!["a", "b"]);
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        write_store(dir.path(), &cases(), &Preprocess::desk(16)).unwrap();
        let f = dir.path().join("stacks/a.stk");
        let mut bytes = fs::read(&f).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&f, bytes).unwrap();
        let store = StackStore::open(dir.path()).unwrap();
        assert!(matches!(store.load("a"), Err(Error::CorruptStore(_))));
    }

    #[test]
    fn empty_input_creates_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("store");
        assert!(write_store(&out, &[], &Preprocess::default()).is_err());
        assert!(!out.exists());
    }
}
