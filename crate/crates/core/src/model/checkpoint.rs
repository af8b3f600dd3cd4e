//! `PTCK` magic, u32 format version, u64 header length, JSON header, then
//! every parameter as little-endian f64 in header order.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{ModelDims, ModelError, ModelParams, Result};
use crate::corpus::Vocab;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PTCK";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub languages: Vec<String>,
    pub vocab: Vocab,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dims: ModelDims,
    languages: Vec<String>,
    vocab: Vocab,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

fn io_err(e: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(e.to_string())
}

pub fn write_checkpoint(ck: &Checkpoint, mut w: impl Write) -> Result<()> {
    let p = &ck.params;
    let header = Header {
        dims: p.dims().clone(),
        languages: ck.languages.clone(),
        vocab: ck.vocab.clone(),
        arrays: (0..p.len())
            .map(|i| ArrayEntry { name: p.name(i).to_string(), shape: p.tensors()[i].shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(io_err)?;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(io_err)?;
    w.write_u64::<LittleEndian>(json.len() as u64).map_err(io_err)?;
    w.write_all(&json).map_err(io_err)?;
    for t in p.tensors() {
        for v in t.data() {
            w.write_f64::<LittleEndian>(*v).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("format_version {version}, expected {FORMAT_VERSION}")));
    }
    let len = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(io_err)?;
    let header: Header = serde_json::from_slice(&json).map_err(io_err)?;
    let mut tensors = Vec::with_capacity(header.arrays.len());
    for a in &header.arrays {
        let n: usize = a.shape.iter().product();
        let mut vals = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut vals).map_err(io_err)?;
        tensors.push(Tensor::new(a.shape.clone(), vals)?);
    }
    let params = ModelParams::from_tensors(&header.dims, tensors)?;
    for (i, a) in header.arrays.iter().enumerate() {
        if params.name(i) != a.name {
            return Err(ModelError::Checkpoint(format!("array {i} is {}, expected {}", a.name, params.name(i))));
        }
    }
    if header.languages.len() != header.dims.n_langs || header.vocab.len() != header.dims.vocab {
        return Err(ModelError::Checkpoint("language registry or vocabulary disagrees with dims".into()));
    }
    Ok(Checkpoint { params, languages: header.languages, vocab: header.vocab })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(ck, &mut w)?;
    w.flush().map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(io_err)?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let vocab = Vocab::new(2, 2, ["a", "b"]).unwrap();
        let params = ModelParams::init(&ModelDims::micro(vocab.len(), 2), 3).unwrap();
        Checkpoint { params, languages: vec!["toyA".into(), "toyB".into()], vocab }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        write_checkpoint(&ck, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.params.tensors(), ck.params.tensors());
        assert_eq!(back.vocab, ck.vocab);
        assert_eq!(back.languages, ck.languages);
    }

    #[test]
    fn rejects_other_format_versions() {
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        buf[4] = 9;
        let err = read_checkpoint(buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("format_version"), "{err}");
    }
}
