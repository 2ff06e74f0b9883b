//! Index files: `b"KGVX"`, `u32` version, then items, then the optional
//! HNSW adjacency. All integers little endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::hnsw::{Graph, HnswParams};
use super::{IndexError, VectorIndex};
use crate::embedding::ItemKind;

const MAGIC: &[u8; 4] = b"KGVX";
const VERSION: u32 = 1;
const NO_ENTRY: u64 = u64::MAX;

impl VectorIndex {
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let io = |source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u64::<LittleEndian>(self.ids.len() as u64)?;
        for (ix, id) in self.ids.iter().enumerate() {
            w.write_u8(self.kinds[ix].tag())?;
            w.write_u16::<LittleEndian>(id.len() as u16)?;
            w.write_all(id.as_bytes())?;
            for &v in self.vector(ix) {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        match &self.graph {
            None => w.write_u8(0)?,
            Some(g) => {
                w.write_u8(1)?;
                w.write_u32::<LittleEndian>(g.params.m as u32)?;
                w.write_u32::<LittleEndian>(g.params.ef_construction as u32)?;
                w.write_u32::<LittleEndian>(g.params.ef_search as u32)?;
                w.write_u64::<LittleEndian>(g.params.seed)?;
                w.write_u64::<LittleEndian>(g.entry.map_or(NO_ENTRY, u64::from))?;
                w.write_u32::<LittleEndian>(g.max_level as u32)?;
                for node in &g.links {
                    w.write_u8(node.len() as u8)?;
                    for layer in node {
                        w.write_u32::<LittleEndian>(layer.len() as u32)?;
                        for &n in layer {
                            w.write_u32::<LittleEndian>(n)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let file = File::open(path).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let format = |message: String| IndexError::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| format(format!("missing header: {e}")))?;
        if &magic != MAGIC {
            return Err(format("not an index file".into()));
        }
        read_body(&mut r).map_err(|e| format(e.to_string()))?
            .map_err(format)
    }
}

fn read_body(r: &mut impl Read) -> std::io::Result<Result<VectorIndex, String>> {
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Ok(Err(format!("unsupported index version {version}")));
    }
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut ids = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    let mut vectors = vec![0f32; n * dim];
    for ix in 0..n {
        let tag = r.read_u8()?;
        let Some(kind) = ItemKind::from_tag(tag) else {
            return Ok(Err(format!("item {ix}: unknown kind tag {tag}")));
        };
        let len = r.read_u16::<LittleEndian>()? as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let Ok(id) = String::from_utf8(id) else {
            return Ok(Err(format!("item {ix}: id is not UTF-8")));
        };
        r.read_f32_into::<LittleEndian>(&mut vectors[ix * dim..(ix + 1) * dim])?;
        ids.push(id);
        kinds.push(kind);
    }
    let graph = match r.read_u8()? {
        0 => None,
        1 => {
            let params = HnswParams {
                m: r.read_u32::<LittleEndian>()? as usize,
                ef_construction: r.read_u32::<LittleEndian>()? as usize,
                ef_search: r.read_u32::<LittleEndian>()? as usize,
                seed: r.read_u64::<LittleEndian>()?,
            };
            let entry = match r.read_u64::<LittleEndian>()? {
                NO_ENTRY => None,
                e if (e as usize) < n => Some(e as u32),
                e => return Ok(Err(format!("entry point {e} out of range"))),
            };
            let max_level = r.read_u32::<LittleEndian>()? as usize;
            let mut links = Vec::with_capacity(n);
            for _ in 0..n {
                let layers = r.read_u8()? as usize;
                let mut node = Vec::with_capacity(layers);
                for _ in 0..layers {
                    let len = r.read_u32::<LittleEndian>()? as usize;
                    let mut list = vec![0u32; len];
                    r.read_u32_into::<LittleEndian>(&mut list)?;
                    if list.iter().any(|&x| x as usize >= n) {
                        return Ok(Err("neighbor id out of range".into()));
                    }
                    node.push(list);
                }
                links.push(node);
            }
            Some(Graph {
                params,
                links,
                entry,
                max_level,
            })
        }
        other => return Ok(Err(format!("unknown graph flag {other}"))),
    };
    Ok(Ok(VectorIndex {
        dim,
        ids,
        kinds,
        vectors,
        graph,
    }))
}
