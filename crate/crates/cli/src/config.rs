//! Configuration file. Relative paths resolve against the directory that
//! holds the file (or the working directory when no file is given).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kgmatch_core::embedding::HttpEmbedderConfig;
use kgmatch_core::generation::{ChatConfig, ReplayMode, SamplingParams};
use kgmatch_core::index::HnswParams;
use kgmatch_core::store::IngestMode;
use kgmatch_core::{IndexMode, RankingScheme, RetrievalConfig, Strategy, TopN};
use serde::{Deserialize, Serialize};

/// The default configuration, every key shown with its default value.
/// Printed by `--help`; a test keeps it in step with [`AppConfig::default`].
pub const DEFAULT_CONFIG: &str = r#"# Pipeline run by `retrieve`, `match` and `eval`:
# triple_vec | entity_vec_bfs | entity_llm_bfs | subgraph_llm
strategy = "triple_vec"
# Questions answered (and embedding batches sent) concurrently.
parallelism = 4
# Seeds HNSW level assignment.
seed = 42
# record | replay | live
replay = "replay"

[paths]
triples = "kg/triples.tsv"
# Alias files (id<TAB>label<TAB>alias...); set both or neither.
entity_labels = "kg/entities.tsv"
relation_labels = "kg/relations.tsv"
# descriptions = "kg/descriptions.tsv"
dataset = "data/dataset.csv"
# Directory of <kind>.toml files overriding the built-in prompts.
# templates = "templates"
embeddings = "artifacts/embeddings"
indexes = "artifacts/index"
replay_store = "artifacts/replay.jsonl"
out = "runs/latest"

[ingest]
# strict | lenient
mode = "lenient"

[embedding]
# hash (offline, deterministic) | http
provider = "hash"
dim = 300
batch_size = 64

[embedding.http]
endpoint = "http://127.0.0.1:8080/embed"
model = "sentence-transformers/all-roberta-large-v1"
api_key_env = "KGMATCH_EMBED_API_KEY"
timeout_s = 30.0
retries = 3

[index]
# exact | hnsw
mode = "hnsw"
m = 16
ef_construction = 200
ef_search = 100

[retrieval]
d_max = 3
k_entities = 5
k_relations = 5
k_triples = 10
path_cap = 100

[ranking]
# auto picks similarity for triple_vec and frequency otherwise.
# auto | frequency | normalized | similarity
scheme = "auto"
# 1 | 2 | ... | "all"
top = 2

[llm]
endpoint = "https://api.openai.com/v1/chat/completions"
model = "gpt-4o-mini"
api_key_env = "KGMATCH_LLM_API_KEY"
timeout_s = 60.0
retries = 3
backoff_ms = 500
min_interval_ms = 0
send_top_k = false

[sampling]
temperature = 0.6
top_p = 0.9
top_k = 1
max_new_tokens = 4096
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub strategy: Strategy,
    pub parallelism: usize,
    pub seed: u64,
    pub replay: ReplayMode,
    pub paths: Paths,
    pub ingest: IngestSection,
    pub embedding: EmbeddingSection,
    pub index: IndexSection,
    pub retrieval: RetrievalConfig,
    pub ranking: RankingSection,
    pub llm: ChatConfig,
    pub sampling: SamplingParams,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            strategy: Strategy::TripleVec,
            parallelism: 4,
            seed: 42,
            replay: ReplayMode::Replay,
            paths: Paths::default(),
            ingest: IngestSection::default(),
            embedding: EmbeddingSection::default(),
            index: IndexSection::default(),
            retrieval: RetrievalConfig::default(),
            ranking: RankingSection::default(),
            llm: ChatConfig::default(),
            sampling: SamplingParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub triples: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entity_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relation_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub descriptions: Option<PathBuf>,
    pub dataset: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub embeddings: PathBuf,
    pub indexes: PathBuf,
    pub replay_store: PathBuf,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            triples: "kg/triples.tsv".into(),
            entity_labels: Some("kg/entities.tsv".into()),
            relation_labels: Some("kg/relations.tsv".into()),
            descriptions: None,
            dataset: "data/dataset.csv".into(),
            templates: None,
            embeddings: "artifacts/embeddings".into(),
            indexes: "artifacts/index".into(),
            replay_store: "artifacts/replay.jsonl".into(),
            out: "runs/latest".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub mode: IngestMode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub provider: ProviderKind,
    pub dim: usize,
    pub batch_size: usize,
    pub http: HttpEmbedderConfig,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            provider: ProviderKind::Hash,
            dim: kgmatch_core::embedding::DEFAULT_DIM,
            batch_size: 64,
            http: HttpEmbedderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSection {
    pub mode: IndexMode,
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
}

impl Default for IndexSection {
    fn default() -> Self {
        let p = HnswParams::default();
        IndexSection {
            mode: IndexMode::Hnsw,
            m: p.m,
            ef_construction: p.ef_construction,
            ef_search: p.ef_search,
        }
    }
}

/// Ranking scheme as configured; `Auto` defers to the strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeSetting {
    #[default]
    Auto,
    Frequency,
    Normalized,
    Similarity,
}

impl std::str::FromStr for SchemeSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            other => match other.parse::<RankingScheme>()? {
                RankingScheme::Frequency => Ok(Self::Frequency),
                RankingScheme::Normalized => Ok(Self::Normalized),
                RankingScheme::Similarity => Ok(Self::Similarity),
            },
        }
    }
}

impl SchemeSetting {
    pub fn resolve(self, strategy: Strategy) -> RankingScheme {
        match self {
            SchemeSetting::Auto if strategy == Strategy::TripleVec => RankingScheme::Similarity,
            SchemeSetting::Auto => RankingScheme::Frequency,
            SchemeSetting::Frequency => RankingScheme::Frequency,
            SchemeSetting::Normalized => RankingScheme::Normalized,
            SchemeSetting::Similarity => RankingScheme::Similarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankingSection {
    pub scheme: SchemeSetting,
    pub top: TopN,
}

impl Default for RankingSection {
    fn default() -> Self {
        RankingSection {
            scheme: SchemeSetting::Auto,
            top: TopN::Count(2),
        }
    }
}

/// A validated configuration plus the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: AppConfig,
    pub base: PathBuf,
}

impl Loaded {
    /// Reads `path`, or starts from the defaults when there is none.
    pub fn read(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Loaded {
                config: AppConfig::default(),
                base: PathBuf::from("."),
            });
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let config: AppConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Ok(Loaded { config, base })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    /// Lists every problem rather than stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        let mut problems = Vec::new();
        if c.parallelism == 0 {
            problems.push("parallelism must be at least 1".to_string());
        }
        if c.paths.entity_labels.is_some() != c.paths.relation_labels.is_some() {
            problems.push("paths.entity_labels and paths.relation_labels must be set together".into());
        }
        if c.embedding.dim == 0 {
            problems.push("embedding.dim must be at least 1".into());
        }
        if c.embedding.batch_size == 0 {
            problems.push("embedding.batch_size must be at least 1".into());
        }
        if let Err(e) = self.hnsw_params().validate() {
            problems.push(format!("index: {e}"));
        }
        if let Err(e) = c.retrieval.validate() {
            problems.push(e.to_string());
        }
        if c.ranking.top == TopN::Count(0) {
            problems.push("ranking.top must be at least 1 or \"all\"".into());
        }
        let scheme = self.scheme();
        if (c.strategy == Strategy::TripleVec) != (scheme == RankingScheme::Similarity) {
            problems.push(format!(
                "ranking.scheme {scheme} does not apply to strategy {}; use similarity with triple_vec and frequency or normalized otherwise",
                c.strategy
            ));
        }
        let s = &c.sampling;
        if !(s.temperature >= 0.0) || !(0.0..=1.0).contains(&s.top_p) || s.max_new_tokens == 0 {
            problems.push("sampling needs temperature >= 0, top_p in [0, 1] and max_new_tokens >= 1".into());
        }
        if !(c.llm.timeout_s > 0.0) || !(c.embedding.http.timeout_s > 0.0) {
            problems.push("timeouts must be positive".into());
        }
        if problems.is_empty() {
            return Ok(());
        }
        bail!("invalid configuration:\n  - {}", problems.join("\n  - "))
    }

    pub fn scheme(&self) -> RankingScheme {
        self.config.ranking.scheme.resolve(self.config.strategy)
    }

    pub fn hnsw_params(&self) -> HnswParams {
        let i = &self.config.index;
        HnswParams {
            m: i.m,
            ef_construction: i.ef_construction,
            ef_search: i.ef_search,
            seed: self.config.seed,
        }
    }

    /// The configuration as echoed into reports. The output directory is
    /// left out so identical runs written to different places hash alike.
    pub fn echo(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(&self.config).expect("config serializes");
        if let Some(paths) = value.get_mut("paths").and_then(|p| p.as_object_mut()) {
            paths.remove("out");
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loaded(config: AppConfig) -> Loaded {
        Loaded {
            config,
            base: PathBuf::from("."),
        }
    }

    #[test]
    fn documented_defaults_match() {
        let parsed: AppConfig = toml::from_str(DEFAULT_CONFIG).unwrap();
        assert_eq!(parsed, AppConfig::default());
    }

    #[test]
    fn documented_defaults_name_every_key() {
        // commented-out optional keys count as documented
        let uncommented: String = DEFAULT_CONFIG
            .lines()
            .map(|l| l.strip_prefix("# ").filter(|r| r.contains(" = ")).unwrap_or(l))
            .collect::<Vec<_>>()
            .join("\n");
        let documented: toml::Table = toml::from_str(&uncommented).unwrap();
        let full = AppConfig {
            paths: Paths {
                descriptions: Some("d".into()),
                templates: Some("t".into()),
                ..Paths::default()
            },
            ..AppConfig::default()
        };
        let actual: toml::Table = toml::from_str(&toml::to_string(&full).unwrap()).unwrap();
        fn keys(t: &toml::Table, prefix: &str, out: &mut Vec<String>) {
            for (k, v) in t {
                let name = format!("{prefix}{k}");
                match v {
                    toml::Value::Table(inner) => keys(inner, &format!("{name}."), out),
                    _ => out.push(name),
                }
            }
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        keys(&documented, "", &mut a);
        keys(&actual, "", &mut b);
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<AppConfig>("stratgy = \"triple_vec\"").is_err());
        assert!(toml::from_str::<AppConfig>("[retrieval]\nd_maxx = 2").is_err());
        assert!(toml::from_str::<AppConfig>("[llm]\nkey = \"x\"").is_err());
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut c = AppConfig::default();
        c.parallelism = 0;
        c.retrieval.d_max = 0;
        c.paths.relation_labels = None;
        let err = loaded(c).validate().unwrap_err().to_string();
        assert!(err.contains("parallelism"), "{err}");
        assert!(err.contains("d_max"), "{err}");
        assert!(err.contains("relation_labels"), "{err}");
    }

    #[test]
    fn auto_scheme_follows_the_strategy() {
        assert_eq!(SchemeSetting::Auto.resolve(Strategy::TripleVec), RankingScheme::Similarity);
        assert_eq!(SchemeSetting::Auto.resolve(Strategy::EntityVecBfs), RankingScheme::Frequency);
        let mut c = AppConfig::default();
        c.ranking.scheme = SchemeSetting::Frequency;
        assert!(loaded(c).validate().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let l = Loaded {
            config: AppConfig::default(),
            base: PathBuf::from("/etc/kg"),
        };
        assert_eq!(l.resolve(Path::new("a/b.tsv")), PathBuf::from("/etc/kg/a/b.tsv"));
        assert_eq!(l.resolve(Path::new("/abs")), PathBuf::from("/abs"));
    }

    #[test]
    fn echo_leaves_out_the_output_dir() {
        let mut a = AppConfig::default();
        a.paths.out = "one".into();
        let mut b = a.clone();
        b.paths.out = "two".into();
        assert_eq!(loaded(a).echo(), loaded(b).echo());
    }
}
