//! Binary embedding collections.
//!
//! Layout (little endian): a 6-byte header `b"KGEV"` + `u16` version, then
//! records of `kind: u8, id_len: u16, id: [u8; id_len], dim: u32, [f32; dim]`.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{check_dim, EmbeddedItem, Embedding, EmbeddingError, EmbeddingProvider, ItemKind};

const MAGIC: &[u8; 4] = b"KGEV";
const VERSION: u16 = 1;
const HEADER_LEN: u64 = 6;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmbeddingError + '_ {
    move |source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Appends records to a collection file.
pub struct CollectionWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CollectionWriter {
    /// Creates (or truncates) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self, EmbeddingError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        out.write_all(MAGIC).map_err(io_err(path))?;
        out.write_u16::<LittleEndian>(VERSION).map_err(io_err(path))?;
        Ok(CollectionWriter {
            path: path.to_path_buf(),
            out,
        })
    }

    fn append_to(path: &Path) -> Result<Self, EmbeddingError> {
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        Ok(CollectionWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, item: &EmbeddedItem) -> Result<(), EmbeddingError> {
        let id = item.item_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| EmbeddingError::Provider(format!(
            "item id longer than {} bytes: {}",
            u16::MAX,
            item.item_id
        )))?;
        let path = self.path.clone();
        let w = &mut self.out;
        let res: std::io::Result<()> = (|| {
            w.write_u8(item.kind.tag())?;
            w.write_u16::<LittleEndian>(id_len)?;
            w.write_all(id)?;
            w.write_u32::<LittleEndian>(item.vector.dim() as u32)?;
            for &v in item.vector.as_slice() {
                w.write_f32::<LittleEndian>(v)?;
            }
            Ok(())
        })();
        res.map_err(io_err(&path))
    }

    pub fn flush(&mut self) -> Result<(), EmbeddingError> {
        let path = self.path.clone();
        self.out.flush().map_err(io_err(&path))
    }
}

struct Scan {
    items: Vec<EmbeddedItem>,
    /// Byte length of the header plus every complete, valid record.
    valid_len: u64,
    /// First invalid record, if any: (index, reason).
    failure: Option<(usize, String)>,
}

fn scan(path: &Path) -> Result<Scan, EmbeddingError> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    if bytes.len() < HEADER_LEN as usize || &bytes[..4] != MAGIC {
        return Err(EmbeddingError::BadHeader {
            path: path.to_path_buf(),
            message: "missing KGEV magic".into(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(EmbeddingError::BadHeader {
            path: path.to_path_buf(),
            message: format!("unsupported version {version}"),
        });
    }
    let mut cursor = std::io::Cursor::new(&bytes[HEADER_LEN as usize..]);
    let mut items = Vec::new();
    let mut valid_len = HEADER_LEN;
    let total = bytes.len() as u64 - HEADER_LEN;
    let mut failure = None;
    while cursor.position() < total {
        match read_record(&mut cursor) {
            Ok(item) => {
                items.push(item);
                valid_len = HEADER_LEN + cursor.position();
            }
            Err(reason) => {
                failure = Some((items.len(), reason));
                break;
            }
        }
    }
    Ok(Scan {
        items,
        valid_len,
        failure,
    })
}

fn read_record(cursor: &mut std::io::Cursor<&[u8]>) -> Result<EmbeddedItem, String> {
    let truncated = |_| "truncated".to_string();
    let tag = cursor.read_u8().map_err(truncated)?;
    let kind = ItemKind::from_tag(tag).ok_or_else(|| format!("unknown kind tag {tag}"))?;
    let id_len = cursor.read_u16::<LittleEndian>().map_err(truncated)? as usize;
    let mut id = vec![0u8; id_len];
    cursor.read_exact(&mut id).map_err(truncated)?;
    let item_id = String::from_utf8(id).map_err(|_| "id is not UTF-8".to_string())?;
    let dim = cursor.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let remaining = cursor.get_ref().len() as u64 - cursor.position();
    if (dim as u64) * 4 > remaining {
        return Err("truncated".into());
    }
    let mut values = vec![0f32; dim];
    cursor
        .read_f32_into::<LittleEndian>(&mut values)
        .map_err(truncated)?;
    let vector = Embedding::new(values).map_err(|e| e.to_string())?;
    Ok(EmbeddedItem {
        item_id,
        kind,
        vector,
    })
}

/// Reads every record of a collection; any corrupt or truncated record is
/// an error naming its index.
pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddedItem>, EmbeddingError> {
    let scan = scan(path)?;
    match scan.failure {
        None => Ok(scan.items),
        Some((index, reason)) => Err(EmbeddingError::CorruptRecord {
            path: path.to_path_buf(),
            index,
            last_valid: index.checked_sub(1),
            reason,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusItem {
    pub item_id: String,
    pub kind: ItemKind,
    pub text: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusReport {
    /// Records written by this call.
    pub written: usize,
    /// Items skipped because the file already held them.
    pub already_present: usize,
    /// Items whose text embedded to a zero vector.
    pub rejected: usize,
    /// Records in the file after this call.
    pub total: usize,
}

/// Embeds `items` into the collection at `path`.
///
/// Resumable: ids already persisted (per kind) are skipped, and a partial
/// trailing record left by an interrupted run is truncated away. Up to
/// `parallelism` provider batches run concurrently; records are written in
/// input order. On a provider failure every batch completed before it is
/// saved and the error carries the number of new records.
pub fn embed_corpus(
    items: impl IntoIterator<Item = CorpusItem>,
    provider: &dyn EmbeddingProvider,
    batch_size: usize,
    parallelism: usize,
    path: &Path,
) -> Result<CorpusReport, EmbeddingError> {
    let batch_size = batch_size.max(1);
    let parallelism = parallelism.max(1);
    let mut seen: HashSet<(ItemKind, String)> = HashSet::new();
    let mut report = CorpusReport::default();

    let mut writer = if path.exists() {
        let scan = scan(path)?;
        if let Some((index, reason)) = &scan.failure {
            log::warn!(
                "{}: dropping record {index} onwards ({reason}) before resuming",
                path.display()
            );
            OpenOptions::new()
                .write(true)
                .open(path)
                .and_then(|f| f.set_len(scan.valid_len))
                .map_err(io_err(path))?;
        }
        report.total = scan.items.len();
        seen.extend(scan.items.into_iter().map(|i| (i.kind, i.item_id)));
        CollectionWriter::append_to(path)?
    } else {
        CollectionWriter::create(path)?
    };

    let mut pending = Vec::new();
    for item in items {
        if seen.insert((item.kind, item.item_id.clone())) {
            pending.push(item);
        } else {
            report.already_present += 1;
        }
    }

    let batches: Vec<&[CorpusItem]> = pending.chunks(batch_size).collect();
    for group in batches.chunks(parallelism) {
        let results: Vec<Result<Vec<Option<EmbeddedItem>>, EmbeddingError>> = std::thread::scope(|s| {
            let handles: Vec<_> = group
                .iter()
                .map(|batch| s.spawn(move || embed_batch(batch, provider)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(EmbeddingError::Provider("embedding worker panicked".into()))))
                .collect()
        });
        for result in results {
            match result {
                Ok(records) => {
                    for record in records {
                        match record {
                            Some(r) => {
                                writer.write(&r)?;
                                report.written += 1;
                                report.total += 1;
                            }
                            None => report.rejected += 1,
                        }
                    }
                }
                Err(e) => {
                    writer.flush()?;
                    return Err(EmbeddingError::Partial {
                        completed: report.written,
                        source: Box::new(e),
                    });
                }
            }
        }
        writer.flush()?;
    }
    writer.flush()?;
    Ok(report)
}

fn embed_batch(
    batch: &[CorpusItem],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Option<EmbeddedItem>>, EmbeddingError> {
    let texts: Vec<String> = batch.iter().map(|i| i.text.clone()).collect();
    let vectors = provider.embed_batch(&texts)?;
    if vectors.len() != batch.len() {
        return Err(EmbeddingError::CountMismatch {
            expected: batch.len(),
            actual: vectors.len(),
        });
    }
    batch
        .iter()
        .zip(vectors)
        .map(|(item, raw)| {
            check_dim(provider.dim(), raw.len())?;
            match Embedding::normalized(raw) {
                Ok(vector) => Ok(Some(EmbeddedItem {
                    item_id: item.item_id.clone(),
                    kind: item.kind,
                    vector,
                })),
                Err(EmbeddingError::ZeroVector) => {
                    log::warn!("{:?} {} has no embeddable text", item.kind, item.item_id);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}
