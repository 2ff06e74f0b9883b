//! On-disk artifacts shared between commands and the checks that keep
//! them consistent with the configuration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use kgmatch_core::embedding::HttpEmbedder;
use kgmatch_core::generation::{ChatClient, HttpChatClient, ReplayClient, ReplayMode, TemplateSet};
use kgmatch_core::store::{IngestReport, KgStore};
use kgmatch_core::{EmbeddingProvider, HashEmbedder, ItemKind, Strategy, VectorIndex};
use serde::{Deserialize, Serialize};

use crate::config::{IndexSection, Loaded, ProviderKind};

pub const MANIFEST: &str = "manifest.json";

/// Item kinds with an embedding collection and an index.
pub const KINDS: [ItemKind; 3] = [ItemKind::Entity, ItemKind::Relation, ItemKind::Triple];

pub fn kind_name(kind: ItemKind) -> &'static str {
    match kind {
        ItemKind::Entity => "entities",
        ItemKind::Relation => "relations",
        ItemKind::Triple => "triples",
        ItemKind::Question => "questions",
    }
}

pub fn collection_path(loaded: &Loaded, kind: ItemKind) -> PathBuf {
    loaded
        .resolve(&loaded.config.paths.embeddings)
        .join(format!("{}.kgev", kind_name(kind)))
}

pub fn index_path(loaded: &Loaded, kind: ItemKind) -> PathBuf {
    loaded
        .resolve(&loaded.config.paths.indexes)
        .join(format!("{}.kgvx", kind_name(kind)))
}

/// Which embedder produced a collection. Vectors from different embedders
/// must never be mixed in one file or compared with each other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderManifest {
    pub provider: ProviderKind,
    /// Model name for HTTP providers; empty for the hash embedder.
    pub model: String,
    pub dim: usize,
}

impl EmbedderManifest {
    pub fn current(loaded: &Loaded) -> Self {
        let e = &loaded.config.embedding;
        EmbedderManifest {
            provider: e.provider,
            model: match e.provider {
                ProviderKind::Hash => String::new(),
                ProviderKind::Http => e.http.model.clone(),
            },
            dim: e.dim,
        }
    }

    fn describe(&self) -> String {
        match self.provider {
            ProviderKind::Hash => format!("hash embedder, dim {}", self.dim),
            ProviderKind::Http => format!("{} over HTTP, dim {}", self.model, self.dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub embedder: EmbedderManifest,
    pub index: IndexSection,
    pub seed: u64,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value = serde_json::from_str(&text).with_context(|| format!("corrupt {}", path.display()))?;
    Ok(Some(value))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn embedder_manifest_path(loaded: &Loaded) -> PathBuf {
    loaded.resolve(&loaded.config.paths.embeddings).join(MANIFEST)
}

pub fn index_manifest_path(loaded: &Loaded) -> PathBuf {
    loaded.resolve(&loaded.config.paths.indexes).join(MANIFEST)
}

/// The embedder manifest of existing collections, or an error telling the
/// user to run `embed` when there are none.
pub fn existing_embeddings(loaded: &Loaded) -> Result<EmbedderManifest> {
    let path = embedder_manifest_path(loaded);
    let Some(found) = read_json::<EmbedderManifest>(&path)? else {
        bail!(
            "no embeddings in {}; run `embed` first",
            loaded.resolve(&loaded.config.paths.embeddings).display()
        );
    };
    let current = EmbedderManifest::current(loaded);
    if found != current {
        bail!(
            "embeddings in {} were made by the {}, but the configuration asks for the {}; rerun `embed` into an empty directory",
            path.parent().unwrap_or(Path::new(".")).display(),
            found.describe(),
            current.describe()
        );
    }
    Ok(found)
}

/// Loads the index for `kind`, checking it was built from the current
/// embedder with the current index settings.
pub fn load_index(loaded: &Loaded, kind: ItemKind) -> Result<VectorIndex> {
    let path = index_path(loaded, kind);
    let expected = IndexManifest {
        embedder: EmbedderManifest::current(loaded),
        index: loaded.config.index,
        seed: loaded.config.seed,
    };
    match read_json::<IndexManifest>(&index_manifest_path(loaded))? {
        Some(found) if found == expected && path.exists() => {}
        Some(found) if found != expected => bail!(
            "indexes in {} were built with different settings ({} vs {}); rerun `index`",
            path.parent().unwrap_or(Path::new(".")).display(),
            serde_json::to_string(&found)?,
            serde_json::to_string(&expected)?
        ),
        _ => bail!("no {} index at {}; run `index` first", kind_name(kind), path.display()),
    }
    let started = Instant::now();
    let index = VectorIndex::load(&path).with_context(|| format!("cannot load {}", path.display()))?;
    log::info!("loaded {} ({} items) in {:.2?}", path.display(), index.len(), started.elapsed());
    Ok(index)
}

pub fn embedder(loaded: &Loaded) -> Box<dyn EmbeddingProvider> {
    let e = &loaded.config.embedding;
    match e.provider {
        ProviderKind::Hash => Box::new(HashEmbedder::new(e.dim)),
        ProviderKind::Http => Box::new(HttpEmbedder::new(e.http.clone(), e.dim)),
    }
}

pub fn chat_client(loaded: &Loaded) -> Result<Box<dyn ChatClient>> {
    let c = &loaded.config;
    let store = loaded.resolve(&c.paths.replay_store);
    let live = || -> Box<dyn ChatClient> {
        if std::env::var_os(&c.llm.api_key_env).is_none() {
            log::warn!("{} is not set; requests go out without an API key", c.llm.api_key_env);
        }
        Box::new(HttpChatClient::new(c.llm.clone()))
    };
    match c.replay {
        ReplayMode::Live => Ok(live()),
        ReplayMode::Replay => {
            if !store.exists() {
                bail!(
                    "replay store {} does not exist; run once with `--replay record` (or use `--replay live`)",
                    store.display()
                );
            }
            Ok(Box::new(ReplayClient::open(&store, ReplayMode::Replay, &c.llm.model, None)?))
        }
        ReplayMode::Record => {
            if let Some(dir) = store.parent() {
                std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            }
            Ok(Box::new(ReplayClient::open(&store, ReplayMode::Record, &c.llm.model, Some(live()))?))
        }
    }
}

pub fn templates(loaded: &Loaded) -> Result<TemplateSet> {
    let dir = loaded.config.paths.templates.as_deref().map(|d| loaded.resolve(d));
    Ok(TemplateSet::load(dir.as_deref())?)
}

/// Line counts of each ingested file.
#[derive(Debug, Default)]
pub struct IngestSummary {
    pub labels: Option<IngestReport>,
    pub triples: IngestReport,
    pub descriptions: Option<IngestReport>,
}

pub fn load_store(loaded: &Loaded) -> Result<(KgStore, IngestSummary)> {
    let c = &loaded.config;
    let mode = c.ingest.mode;
    let triples = loaded.resolve(&c.paths.triples);
    if !triples.exists() {
        bail!("triples file {} not found (paths.triples)", triples.display());
    }
    let started = Instant::now();
    let mut store = KgStore::new();
    let mut summary = IngestSummary::default();
    // labels first so strict mode can check triple ids against them
    if let (Some(e), Some(r)) = (&c.paths.entity_labels, &c.paths.relation_labels) {
        summary.labels = Some(store.ingest_labels(&loaded.resolve(e), &loaded.resolve(r), mode)?);
    }
    summary.triples = store.ingest_triples(&triples, mode)?;
    if let Some(d) = &c.paths.descriptions {
        summary.descriptions = Some(store.ingest_descriptions(&loaded.resolve(d), mode)?);
    }
    log::info!("loaded knowledge graph in {:.2?}", started.elapsed());
    Ok((store, summary))
}

/// Everything a pipeline borrows, owned in one place.
pub struct Resources {
    pub store: KgStore,
    pub embedder: Box<dyn EmbeddingProvider>,
    pub entity_index: Option<VectorIndex>,
    pub relation_index: Option<VectorIndex>,
    pub triple_index: Option<VectorIndex>,
    pub llm: Option<Box<dyn ChatClient>>,
    pub templates: TemplateSet,
}

impl Resources {
    /// Loads what `strategy` needs; `generate` adds the chat client used
    /// for answering even when retrieval does not need one.
    pub fn load(loaded: &Loaded, strategy: Strategy, generate: bool) -> Result<Self> {
        let needs_llm = generate || matches!(strategy, Strategy::EntityLlmBfs | Strategy::SubgraphLlm);
        let templates = templates(loaded)?;
        // fail on a missing replay store before the slow loads
        let llm = if needs_llm { Some(chat_client(loaded)?) } else { None };
        let (store, _) = load_store(loaded)?;
        let (mut entity_index, mut relation_index, mut triple_index) = (None, None, None);
        match strategy {
            Strategy::TripleVec => triple_index = Some(load_index(loaded, ItemKind::Triple)?),
            Strategy::EntityVecBfs => {
                entity_index = Some(load_index(loaded, ItemKind::Entity)?);
                relation_index = Some(load_index(loaded, ItemKind::Relation)?);
            }
            // the relation index only refines ranking here
            Strategy::EntityLlmBfs | Strategy::SubgraphLlm => {
                if index_path(loaded, ItemKind::Relation).exists() {
                    relation_index = Some(load_index(loaded, ItemKind::Relation)?);
                } else {
                    log::warn!("no relation index; paths keep retrieval order when ranked");
                }
            }
        }
        Ok(Resources {
            store,
            embedder: embedder(loaded),
            entity_index,
            relation_index,
            triple_index,
            llm,
            templates,
        })
    }

    pub fn context(&self, loaded: &Loaded) -> kgmatch_core::retrieval::RetrievalContext<'_> {
        let mut ctx = kgmatch_core::retrieval::RetrievalContext::new(&self.store, loaded.config.retrieval);
        ctx.embedder = Some(self.embedder.as_ref());
        ctx.entity_index = self.entity_index.as_ref();
        ctx.relation_index = self.relation_index.as_ref();
        ctx.triple_index = self.triple_index.as_ref();
        ctx.llm = self.llm.as_deref();
        ctx.templates = Some(&self.templates);
        ctx.sampling = loaded.config.sampling;
        ctx
    }
}
