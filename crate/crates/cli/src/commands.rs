use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use kgmatch_core::embedding::{compose_text, embed_corpus, load_embeddings, CorpusItem, TextSource};
use kgmatch_core::evaluation::{load_dataset, report, run_eval, TimingSummary, RECORDS_FILE};
use kgmatch_core::retrieval::{run_strategy, triple_item_id};
use kgmatch_core::{compute_metrics, ItemKind, MatchQuestion, Pipeline, RunRecord, VectorIndex};

use crate::artifacts::{
    collection_path, embedder, embedder_manifest_path, existing_embeddings, index_manifest_path, index_path,
    kind_name, load_store, write_json, EmbedderManifest, IndexManifest, Resources, KINDS,
};
use crate::config::Loaded;

/// Whether a command finished with every item handled.
pub enum Outcome {
    Clean,
    SomeFailed,
}

pub fn ingest(loaded: &Loaded) -> Result<Outcome> {
    let started = Instant::now();
    let (store, summary) = load_store(loaded)?;
    let elapsed = started.elapsed();
    let line = |name: &str, r: &kgmatch_core::store::IngestReport| {
        println!(
            "{name:<13} {} loaded, {} skipped, {} duplicates",
            r.loaded, r.skipped, r.duplicates
        );
    };
    if let Some(r) = &summary.labels {
        line("labels", r);
    }
    line("triples", &summary.triples);
    if let Some(r) = &summary.descriptions {
        line("descriptions", r);
    }
    let stats = store.stats();
    println!(
        "store         {} entities, {} relations, {} triples, max degree {}",
        stats.entity_count, stats.relation_count, stats.triple_count, stats.max_degree
    );
    println!("took          {elapsed:.2?}");
    Ok(Outcome::Clean)
}

pub fn embed(loaded: &Loaded, only: &[ItemKind]) -> Result<Outcome> {
    let (store, _) = load_store(loaded)?;
    let manifest = embedder_manifest_path(loaded);
    if manifest.exists() {
        existing_embeddings(loaded)?;
    } else {
        write_json(&manifest, &EmbedderManifest::current(loaded))?;
    }
    let provider = embedder(loaded);
    let c = &loaded.config;
    for kind in KINDS.into_iter().filter(|k| only.is_empty() || only.contains(k)) {
        let path = collection_path(loaded, kind);
        let started = Instant::now();
        let items: Box<dyn Iterator<Item = CorpusItem>> = match kind {
            ItemKind::Entity => Box::new(store.entities().map(|e| CorpusItem {
                item_id: e.id.clone(),
                kind,
                text: compose_text(TextSource::Entity(e), &store),
            })),
            ItemKind::Relation => Box::new(store.relations().map(|r| CorpusItem {
                item_id: r.id.clone(),
                kind,
                text: compose_text(TextSource::Relation(r), &store),
            })),
            ItemKind::Triple => Box::new(store.triples().map(|t| CorpusItem {
                item_id: triple_item_id(&t.head, &t.relation, &t.tail),
                kind,
                text: compose_text(TextSource::Triple(&t), &store),
            })),
            ItemKind::Question => unreachable!("questions are embedded at query time"),
        };
        let r = embed_corpus(items, provider.as_ref(), c.embedding.batch_size, c.parallelism, &path)
            .with_context(|| format!("embedding {} into {}", kind_name(kind), path.display()))?;
        println!(
            "{:<10} {} written, {} already present, {} rejected, {} total ({:.2?})",
            kind_name(kind),
            r.written,
            r.already_present,
            r.rejected,
            r.total,
            started.elapsed()
        );
    }
    Ok(Outcome::Clean)
}

pub fn index(loaded: &Loaded) -> Result<Outcome> {
    let embedder = existing_embeddings(loaded)?;
    let params = loaded.hnsw_params();
    let mode = loaded.config.index.mode;
    let mut built = 0;
    for kind in KINDS {
        let source = collection_path(loaded, kind);
        let target = index_path(loaded, kind);
        if !source.exists() {
            if target.exists() {
                std::fs::remove_file(&target).with_context(|| format!("cannot remove stale {}", target.display()))?;
            }
            println!("{:<10} no embeddings, skipped", kind_name(kind));
            continue;
        }
        let started = Instant::now();
        let items = load_embeddings(&source)?;
        let index = VectorIndex::build(items, mode, params)?;
        if let Some(dir) = target.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        index.save(&target)?;
        println!(
            "{:<10} {} items, {:?} index ({:.2?})",
            kind_name(kind),
            index.len(),
            mode,
            started.elapsed()
        );
        built += 1;
    }
    if built == 0 {
        bail!("no embedding collections found; run `embed` first");
    }
    let manifest = IndexManifest {
        embedder,
        index: loaded.config.index,
        seed: loaded.config.seed,
    };
    write_json(&index_manifest_path(loaded), &manifest)?;
    Ok(Outcome::Clean)
}

fn dataset(loaded: &Loaded) -> Result<Vec<MatchQuestion>> {
    let path = loaded.resolve(&loaded.config.paths.dataset);
    if !path.exists() {
        bail!("dataset {} not found (paths.dataset)", path.display());
    }
    Ok(load_dataset(&path)?)
}

fn out_dir(loaded: &Loaded) -> Result<PathBuf> {
    let dir = loaded.resolve(&loaded.config.paths.out);
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

pub const RETRIEVAL_FILE: &str = "retrieval.jsonl";

pub fn retrieve(loaded: &Loaded) -> Result<Outcome> {
    let strategy = loaded.config.strategy;
    let questions = dataset(loaded)?;
    let res = Resources::load(loaded, strategy, false)?;
    let ctx = res.context(loaded);
    ctx.require(strategy)?;
    let path = out_dir(loaded)?.join(RETRIEVAL_FILE);
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?);
    let (mut paths, mut failed) = (0, 0);
    for q in &questions {
        let line = match run_strategy(q, strategy, &ctx) {
            Ok(outcome) => {
                paths += outcome.paths.len() + outcome.triples.len();
                serde_json::to_value(&outcome)?
            }
            Err(e) => {
                failed += 1;
                log::warn!("{}: {e}", q.question_id);
                serde_json::json!({"question_id": q.question_id, "strategy": strategy, "error": e.to_string()})
            }
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!(
        "{} questions, {} paths or triples, {} failed; outcomes in {}",
        questions.len(),
        paths,
        failed,
        path.display()
    );
    Ok(if failed == 0 { Outcome::Clean } else { Outcome::SomeFailed })
}

fn pipeline<'a>(loaded: &Loaded, res: &'a Resources) -> Pipeline<'a> {
    let c = &loaded.config;
    Pipeline {
        strategy: c.strategy,
        scheme: loaded.scheme(),
        top: c.ranking.top,
        retrieval: res.context(loaded),
        templates: &res.templates,
        llm: res.llm.as_deref().expect("answering loads a chat client"),
        sampling: c.sampling,
        parallelism: c.parallelism,
    }
}

pub fn match_one(loaded: &Loaded, question: MatchQuestion, json: bool) -> Result<Outcome> {
    let res = Resources::load(loaded, loaded.config.strategy, true)?;
    let p = pipeline(loaded, &res);
    p.validate()?;
    let record = p.answer(&question);
    if json {
        println!("{}", serde_json::to_string_pretty(&record)?);
    } else {
        print_match(&record);
    }
    Ok(if record.failed() { Outcome::SomeFailed } else { Outcome::Clean })
}

fn print_match(record: &RunRecord) {
    if record.context.is_empty() {
        println!("context: none (baseline prompt)");
    } else {
        println!("context ({} paths):\n{}", record.context_size, record.context);
    }
    let d = &record.decision;
    println!("verdict: {} ({:?})", d.verdict.label(), d.parse_status);
    if let Some(e) = &record.error {
        println!("error: {e}");
    } else {
        println!("response:\n{}", d.raw_text.trim_end());
    }
}

pub fn eval(loaded: &Loaded) -> Result<Outcome> {
    let questions = dataset(loaded)?;
    let res = Resources::load(loaded, loaded.config.strategy, true)?;
    let p = pipeline(loaded, &res);
    let out = out_dir(loaded)?;
    let records = run_eval(&questions, &p, Some(&out.join(RECORDS_FILE)))?;
    let metrics = compute_metrics(&records);
    let files = report(&records, &metrics, &loaded.echo(), &out)?;

    let failed = records.iter().filter(|r| r.failed()).count();
    let m = metrics.reported();
    let t = TimingSummary::from_records(&records);
    println!(
        "{} / {} / top {}: {} questions, {} failed",
        p.strategy,
        p.scheme,
        p.top,
        records.len(),
        failed
    );
    println!(
        "P {:.2}  R {:.2}  F1 {:.2}  (TP {}, FP {}, FN {}, TN {})",
        m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_, m.tn
    );
    println!(
        "mean seconds: embed {:.4}, retrieval {:.4}, generation {:.4}",
        t.mean_embed_s, t.mean_retrieval_s, t.mean_generation_s
    );
    println!("report: {}", files.summary.display());
    Ok(if failed == 0 { Outcome::Clean } else { Outcome::SomeFailed })
}
