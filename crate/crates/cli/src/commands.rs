//! Subcommand implementations. Every pipeline command writes its
//! artifacts and a manifest into a fresh run directory under
//! `<workdir>/runs/`.

use std::path::{Path, PathBuf};

use lrmt::corpus::{self, DedupKey, ParallelCorpus};
use lrmt::eval;
use lrmt::ngram_lm::{lm_train, lm_train_big, Discounting, NGramModel};
use lrmt::nmt::{
    self, beam_search, load_checkpoint, save_checkpoint, train, Arch, BatchType, BeamConfig,
    Checkpoint, DataSet, Dtype, FusionConfig, FusionMode, NmtConfig, Seq2SeqModel, Vocabulary,
};
use lrmt::rng::Rng;
use lrmt::semisup::{self, MultiDataset, MultiDirection, NmtTranslator, SmtTranslator, TokenPairs};
use lrmt::smt::{
    self, mert, DecoderConfig, FeatureWeights, MertConfig, PhraseTable, SmtSystem, SmtTrainConfig,
};
use lrmt::textproc::{
    bpe_apply, bpe_learn, bpe_undo, detokenize, detruecase, tokenize, truecase_apply,
    truecase_train, MergeTable, TokenizerMode, TruecaseModel,
};

use crate::config::ExperimentConfig;
use crate::io::{
    read_lines, read_token_lines, require_artifact, resolve, write_lines, write_token_lines,
};
use crate::rundir::RunDir;
use crate::{data_err, other_err, CliError};

pub struct Context {
    pub config: ExperimentConfig,
    pub workdir: PathBuf,
}

const SPLIT_PARTS: [&str; 5] = ["train", "dev", "test", "out_dev", "out_test"];

impl Context {
    fn runs_dir(&self) -> PathBuf {
        self.workdir.join("runs")
    }

    fn run(&self, name: &str) -> Result<RunDir, CliError> {
        RunDir::create(&self.runs_dir(), name, &self.config).map_err(CliError::from)
    }

    fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        Ok(resolve(&self.workdir, self.config.require(key)?))
    }

    fn split_dir(&self) -> PathBuf {
        resolve(
            &self.workdir,
            self.config.get_or("data.split_dir", "splits"),
        )
    }

    fn mode(&self, key: &str) -> Result<TokenizerMode, CliError> {
        let raw = self.config.get_or(key, "english");
        TokenizerMode::parse(raw)
            .ok_or_else(|| CliError::Config(format!("bad language mode for {key}: {raw:?}")))
    }
}

fn load_raw_corpus(ctx: &Context) -> Result<ParallelCorpus, CliError> {
    let src = ctx.path("data.src")?;
    let tgt = ctx.path("data.tgt")?;
    let meta = ctx
        .config
        .get("data.meta")
        .map(|path| resolve(&ctx.workdir, path));
    corpus::load_parallel(&src, &tgt, meta.as_deref()).map_err(data_err)
}

pub fn split(ctx: &Context) -> Result<(), CliError> {
    let mut run = ctx.run("split")?;
    run.record_data_hash("src", &ctx.path("data.src")?)?;
    run.record_data_hash("tgt", &ctx.path("data.tgt")?)?;
    let mut loaded = load_raw_corpus(ctx)?;
    let total = loaded.len();
    match ctx.config.get_or("split.dedup", "none") {
        "none" => {}
        "src" => loaded = corpus::deduplicate(&loaded, DedupKey::Src),
        "tgt" => loaded = corpus::deduplicate(&loaded, DedupKey::Tgt),
        other => return Err(CliError::Config(format!("bad split.dedup {other:?}"))),
    }
    let seed: u64 = ctx.config.parse_or("split.seed", 1)?;
    let dev_size: usize = ctx.config.parse_or("split.dev_size", 1000)?;
    let test_size: usize = ctx.config.parse_or("split.test_size", 1000)?;
    let result = corpus::split_sized(&loaded, seed, dev_size, test_size).map_err(data_err)?;
    let dir = ctx.split_dir();
    corpus::write_split(&result, seed, &dir).map_err(data_err)?;
    let counts = result.counts();
    println!(
        "loaded {total} pairs ({} after dedup); split train/dev/test/out_dev/out_test = {}/{}/{}/{}/{}",
        loaded.len(),
        counts[0],
        counts[1],
        counts[2],
        counts[3],
        counts[4]
    );
    run.record("metric.total_pairs", total.to_string());
    run.record("metric.after_dedup", loaded.len().to_string());
    for (name, count) in SPLIT_PARTS.iter().zip(counts) {
        run.record(&format!("metric.{name}"), count.to_string());
    }
    run.artifact("split_dir", &dir);
    run.finish()?;
    Ok(())
}

fn part_paths(dir: &Path, part: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{part}.src")),
        dir.join(format!("{part}.tgt")),
    )
}

pub fn prep(ctx: &Context) -> Result<(), CliError> {
    let mut run = ctx.run("prep")?;
    let dir = ctx.split_dir();
    require_artifact(
        &dir.join("train.src"),
        "split directory (run `split` first)",
    )?;
    let src_mode = ctx.mode("data.src_lang")?;
    let tgt_mode = ctx.mode("data.tgt_lang")?;
    let use_truecase = ctx.config.bool_or("prep.truecase", true)?;
    let bpe_merges: usize = ctx.config.parse_or("prep.bpe_merges", 0)?;

    // Tokenize every part.
    type TokenizedPart = (String, Vec<Vec<String>>, Vec<Vec<String>>);
    let mut tokenized: Vec<TokenizedPart> = Vec::new();
    for part in SPLIT_PARTS {
        let (src_path, tgt_path) = part_paths(&dir, part);
        let src: Vec<Vec<String>> = read_lines(&src_path)?
            .iter()
            .map(|line| tokenize(line, src_mode))
            .collect();
        let tgt: Vec<Vec<String>> = read_lines(&tgt_path)?
            .iter()
            .map(|line| tokenize(line, tgt_mode))
            .collect();
        tokenized.push((part.to_string(), src, tgt));
    }

    // Truecase models come from the training part only.
    if use_truecase {
        let train_entry = &tokenized[0];
        let src_model = truecase_train(train_entry.1.iter().map(Vec::as_slice));
        let tgt_model = truecase_train(train_entry.2.iter().map(Vec::as_slice));
        src_model
            .save(&dir.join("truecase.src.model"))
            .map_err(data_err)?;
        tgt_model
            .save(&dir.join("truecase.tgt.model"))
            .map_err(data_err)?;
        for (_, src, tgt) in tokenized.iter_mut() {
            for sentence in src.iter_mut() {
                *sentence = truecase_apply(&src_model, sentence);
            }
            for sentence in tgt.iter_mut() {
                *sentence = truecase_apply(&tgt_model, sentence);
            }
        }
        run.artifact("truecase_src", &dir.join("truecase.src.model"));
        run.artifact("truecase_tgt", &dir.join("truecase.tgt.model"));
    }

    for (part, src, tgt) in &tokenized {
        write_token_lines(&dir.join(format!("{part}.tok.src")), src)?;
        write_token_lines(&dir.join(format!("{part}.tok.tgt")), tgt)?;
    }

    // BPE codes are learned per side on the training part; applying them
    // is a model-side choice.
    if bpe_merges > 0 {
        let train_entry = &tokenized[0];
        let src_table = bpe_learn(train_entry.1.iter().map(Vec::as_slice), bpe_merges);
        let tgt_table = bpe_learn(train_entry.2.iter().map(Vec::as_slice), bpe_merges);
        src_table
            .save(&dir.join("bpe.src.codes"))
            .map_err(data_err)?;
        tgt_table
            .save(&dir.join("bpe.tgt.codes"))
            .map_err(data_err)?;
        run.artifact("bpe_src", &dir.join("bpe.src.codes"));
        run.artifact("bpe_tgt", &dir.join("bpe.tgt.codes"));
    }

    // Monolingual data, when present, is target-language text.
    if let Some(mono) = ctx.config.get("data.mono") {
        let mono_path = resolve(&ctx.workdir, mono);
        let mono_corpus = corpus::load_mono(&mono_path, None).map_err(data_err)?;
        let mut mono_tok: Vec<Vec<String>> = mono_corpus
            .sentences
            .iter()
            .map(|s| tokenize(&s.text, tgt_mode))
            .collect();
        if use_truecase {
            let model = TruecaseModel::load(&dir.join("truecase.tgt.model")).map_err(data_err)?;
            for sentence in mono_tok.iter_mut() {
                *sentence = truecase_apply(&model, sentence);
            }
        }
        write_token_lines(&dir.join("mono.tok"), &mono_tok)?;
        run.artifact("mono", &dir.join("mono.tok"));
    }

    println!(
        "prepared {} parts under {}",
        SPLIT_PARTS.len(),
        dir.display()
    );
    run.finish()?;
    Ok(())
}

fn print_stats_row(name: &str, stats: &corpus::CorpusStats) {
    let fmt_pct = |p: Option<f64>| match p {
        Some(v) => format!("{v:.1}"),
        None => "-".to_string(),
    };
    let tgt = stats.tgt.as_ref();
    println!(
        "{name:>9}  sents {:>7}  src tokens {:>8} unique {:>7} unseen% {:>5} avg {:>5.1}  tgt tokens {:>8} unique {:>7} unseen% {:>5} avg {:>5.1}",
        stats.n_sentences,
        stats.src.tokens,
        stats.src.unique,
        fmt_pct(stats.src.pct_unseen),
        stats.src.avg_len,
        tgt.map(|t| t.tokens).unwrap_or(0),
        tgt.map(|t| t.unique).unwrap_or(0),
        fmt_pct(tgt.and_then(|t| t.pct_unseen)),
        tgt.map(|t| t.avg_len).unwrap_or(0.0),
    );
}

pub fn stats(ctx: &Context) -> Result<(), CliError> {
    let mut run = ctx.run("stats")?;
    let src_mode = ctx.mode("data.src_lang")?;
    let tgt_mode = ctx.mode("data.tgt_lang")?;
    let dir = ctx.split_dir();
    if dir.join("train.src").exists() {
        // Per-part statistics with the training vocabulary as reference.
        let mut parts = Vec::new();
        for part in SPLIT_PARTS {
            let (src_path, tgt_path) = part_paths(&dir, part);
            let loaded = corpus::load_parallel(&src_path, &tgt_path, None).map_err(data_err)?;
            parts.push((part, loaded));
        }
        let train = &parts[0].1;
        let src_vocab = corpus::vocabulary(train.iter().map(|p| p.src.as_str()), src_mode);
        let tgt_vocab = corpus::vocabulary(train.iter().map(|p| p.tgt.as_str()), tgt_mode);
        let mut totals = (0usize, 0usize, 0usize);
        for (name, part) in &parts {
            let reference = if *name == "train" {
                (None, None)
            } else {
                (Some(&src_vocab), Some(&tgt_vocab))
            };
            let s = corpus::stats(part, src_mode, tgt_mode, reference.0, reference.1);
            print_stats_row(name, &s);
            totals.0 += s.n_sentences;
            totals.1 += s.src.tokens;
            totals.2 += s.tgt.as_ref().map(|t| t.tokens).unwrap_or(0);
            run.record(
                &format!("metric.{name}_sentences"),
                s.n_sentences.to_string(),
            );
            run.record(
                &format!("metric.{name}_src_tokens"),
                s.src.tokens.to_string(),
            );
            run.record(
                &format!("metric.{name}_tgt_tokens"),
                s.tgt.as_ref().map(|t| t.tokens).unwrap_or(0).to_string(),
            );
        }
        println!(
            "{:>9}  sents {:>7}  src tokens {:>8}  tgt tokens {:>8}",
            "total", totals.0, totals.1, totals.2
        );
        run.record("metric.total_sentences", totals.0.to_string());
        run.record("metric.total_src_tokens", totals.1.to_string());
        run.record("metric.total_tgt_tokens", totals.2.to_string());
    } else {
        let loaded = load_raw_corpus(ctx)?;
        let s = corpus::stats(&loaded, src_mode, tgt_mode, None, None);
        print_stats_row("corpus", &s);
        let deduped = corpus::deduplicate(&loaded, DedupKey::Src);
        println!("deduplicated on the source side: {} pairs", deduped.len());
        run.record("metric.total_sentences", s.n_sentences.to_string());
        run.record("metric.dedup_src", deduped.len().to_string());
    }
    // Monolingual profile against the full parallel target vocabulary.
    if let Some(mono) = ctx.config.get("data.mono") {
        let mono_path = resolve(&ctx.workdir, mono);
        let mono_corpus = corpus::load_mono(&mono_path, None).map_err(data_err)?;
        let reference = match (ctx.config.get("data.src"), ctx.config.get("data.tgt")) {
            (Some(_), Some(_)) => {
                let parallel = load_raw_corpus(ctx)?;
                Some(corpus::vocabulary(
                    parallel.iter().map(|p| p.tgt.as_str()),
                    tgt_mode,
                ))
            }
            _ => None,
        };
        let s = corpus::stats_mono(&mono_corpus, tgt_mode, reference.as_ref());
        print_stats_row("mono", &s);
    }
    run.finish()?;
    Ok(())
}

fn read_split_pairs(dir: &Path, part: &str) -> Result<TokenPairs, CliError> {
    let src = read_token_lines(&dir.join(format!("{part}.tok.src")))?;
    let tgt = read_token_lines(&dir.join(format!("{part}.tok.tgt")))?;
    if src.len() != tgt.len() {
        return Err(data_err(format!(
            "{part}: {} source lines vs {} target lines",
            src.len(),
            tgt.len()
        )));
    }
    Ok(src.into_iter().zip(tgt).collect())
}

fn smt_train_config(ctx: &Context) -> Result<SmtTrainConfig, CliError> {
    let sym_raw = ctx
        .config
        .get_or("align.symmetrization", "grow-diag-final-and");
    let symmetrization = lrmt::align::Symmetrization::parse(sym_raw)
        .ok_or_else(|| CliError::Config(format!("bad align.symmetrization {sym_raw:?}")))?;
    Ok(SmtTrainConfig {
        ibm1_iterations: ctx.config.parse_or("align.iterations", 5)?,
        lm_order: ctx.config.parse_or("lm.order", 3)?,
        symmetrization,
        max_phrase_len: ctx.config.parse_or("smt.max_phrase_len", 7)?,
    })
}

fn decoder_config(ctx: &Context, n_best: usize) -> Result<DecoderConfig, CliError> {
    Ok(DecoderConfig {
        distortion_limit: ctx.config.parse_or("smt.distortion_limit", 6)?,
        stack_size: ctx.config.parse_or("smt.stack_size", 100)?,
        beam_log: ctx.config.parse_or("smt.beam_log", 5.0)?,
        n_best,
        recombine: true,
    })
}

pub fn train_lm(ctx: &Context) -> Result<(), CliError> {
    let mut run = ctx.run("train-lm")?;
    let dir = ctx.split_dir();
    require_artifact(&dir.join("train.tok.tgt"), "tokenized split (run `prep`)")?;
    let target = read_token_lines(&dir.join("train.tok.tgt"))?;
    let order: usize = ctx.config.parse_or("lm.order", 3)?;
    let big = ctx.config.bool_or("lm.big", false)?;
    let model = if big {
        let mono = read_token_lines(&dir.join("mono.tok"))?;
        lm_train_big(&target, &mono, order).map_err(data_err)?
    } else {
        lm_train(&target, order, Discounting::ModifiedKn).map_err(data_err)?
    };
    for warning in model.warnings() {
        eprintln!("warning: {warning}");
    }
    let arpa = run.file("lm.arpa");
    model.arpa_export(&arpa).map_err(data_err)?;
    if dir.join("dev.tok.tgt").exists() {
        let dev = read_token_lines(&dir.join("dev.tok.tgt"))?;
        let ppl = model.perplexity(&dev);
        println!("dev perplexity: {ppl:.2}");
        run.record("metric.dev_perplexity", format!("{ppl:.4}"));
    }
    println!("wrote {}", arpa.display());
    run.artifact("lm", &arpa);
    run.finish()?;
    Ok(())
}

pub fn train_smt(ctx: &Context) -> Result<(), CliError> {
    let mut run = ctx.run("train-smt")?;
    let dir = ctx.split_dir();
    require_artifact(&dir.join("train.tok.src"), "tokenized split (run `prep`)")?;
    run.record_data_hash("train_src", &dir.join("train.tok.src"))?;
    run.record_data_hash("train_tgt", &dir.join("train.tok.tgt"))?;
    let pairs = read_split_pairs(&dir, "train")?;
    let mono = if ctx.config.bool_or("lm.big", false)? {
        read_token_lines(&dir.join("mono.tok"))?
    } else {
        Vec::new()
    };
    let config = smt_train_config(ctx)?;
    let system = smt::train_smt(&pairs, &mono, &config).map_err(data_err)?;
    for warning in system.lm.warnings() {
        eprintln!("warning: {warning}");
    }
    let table_path = run.file("phrase_table.txt");
    let lm_path = run.file("lm.arpa");
    let weights_path = run.file("weights.txt");
    system.table.save(&table_path).map_err(other_err)?;
    system.lm.arpa_export(&lm_path).map_err(other_err)?;
    system.weights.save(&weights_path).map_err(other_err)?;
    println!(
        "trained phrase table with {} entries over {} pairs",
        system.table.len(),
        pairs.len()
    );
    run.record("metric.phrase_entries", system.table.len().to_string());
    run.artifact("phrase_table", &table_path);
    run.artifact("lm", &lm_path);
    run.artifact("weights", &weights_path);
    run.finish()?;
    Ok(())
}

fn load_smt_system(ctx: &Context, model_dir: &Path) -> Result<SmtSystem, CliError> {
    let table_path = model_dir.join("phrase_table.txt");
    let lm_path = model_dir.join("lm.arpa");
    let weights_path = model_dir.join("weights.txt");
    require_artifact(&table_path, "phrase table")?;
    require_artifact(&lm_path, "language model")?;
    require_artifact(&weights_path, "weights file")?;
    let max_len: usize = ctx.config.parse_or("smt.max_phrase_len", 7)?;
    Ok(SmtSystem {
        table: PhraseTable::load(&table_path, max_len).map_err(data_err)?,
        lm: NGramModel::arpa_import(&lm_path).map_err(data_err)?,
        weights: FeatureWeights::load(&weights_path).map_err(data_err)?,
    })
}

pub fn tune_mert(ctx: &Context, model_dir: &Path) -> Result<(), CliError> {
    let mut run = ctx.run("tune-mert")?;
    let model_dir = resolve(&ctx.workdir, &model_dir.display().to_string());
    let system = load_smt_system(ctx, &model_dir)?;
    let dev = read_split_pairs(&ctx.split_dir(), "dev")?;
    let config = MertConfig {
        n_best_size: ctx.config.parse_or("mert.n_best", 100)?,
        max_outer_iters: ctx.config.parse_or("mert.max_iters", 10)?,
        seed: ctx.config.parse_or("mert.seed", 1)?,
        decoder: decoder_config(ctx, 0)?,
        ..MertConfig::default()
    };
    let (weights, pool_bleu) =
        mert(&dev, &system.table, &system.lm, &system.weights, &config).map_err(other_err)?;
    let weights_path = run.file("weights.txt");
    weights.save(&weights_path).map_err(other_err)?;
    println!("tuned weights ({weights}); pooled dev BLEU {pool_bleu:.2}");
    run.record("metric.pool_bleu", format!("{pool_bleu:.4}"));
    run.artifact("weights", &weights_path);
    run.finish()?;
    Ok(())
}

fn nmt_config(ctx: &Context) -> Result<NmtConfig, CliError> {
    let mut config = match ctx.config.get("nmt.preset") {
        Some(name) => NmtConfig::preset(name)
            .ok_or_else(|| CliError::Config(format!("unknown nmt.preset {name:?}")))?,
        None => NmtConfig::default(),
    };
    if let Some(raw) = ctx.config.get("nmt.arch") {
        config.arch =
            Arch::parse(raw).ok_or_else(|| CliError::Config(format!("bad nmt.arch {raw:?}")))?;
    }
    config.enc_layers = ctx.config.parse_or("nmt.enc_layers", config.enc_layers)?;
    config.dec_layers = ctx.config.parse_or("nmt.dec_layers", config.dec_layers)?;
    config.hidden = ctx.config.parse_or("nmt.hidden", config.hidden)?;
    config.embed = ctx.config.parse_or("nmt.embed", config.hidden)?;
    config.heads = ctx.config.parse_or("nmt.heads", config.heads)?;
    config.ffn = ctx.config.parse_or("nmt.ffn", config.ffn)?;
    config.dropout = ctx.config.parse_or("nmt.dropout", config.dropout)?;
    config.label_smoothing = ctx
        .config
        .parse_or("nmt.label_smoothing", config.label_smoothing)?;
    config.tied_decoder_embeddings = ctx
        .config
        .bool_or("nmt.tied", config.tied_decoder_embeddings)?;
    config.bpe = ctx.config.bool_or("nmt.bpe", config.bpe)?;
    config.min_word_freq = ctx
        .config
        .parse_or("nmt.min_word_freq", config.min_word_freq)?;
    if let Some(raw) = ctx.config.get("nmt.batch_type") {
        config.batch_type = BatchType::parse(raw)
            .ok_or_else(|| CliError::Config(format!("bad nmt.batch_type {raw:?}")))?;
    }
    config.batch_size = ctx.config.parse_or("nmt.batch_size", config.batch_size)?;
    config.lr = ctx.config.parse_or("nmt.lr", config.lr)?;
    config.warmup = ctx.config.parse_or("nmt.warmup", config.warmup)?;
    config.rsqrt_decay = ctx.config.bool_or("nmt.rsqrt_decay", config.rsqrt_decay)?;
    if let Some(raw) = ctx.config.get("nmt.average_decay") {
        config.average_decay = if raw == "none" {
            None
        } else {
            Some(
                raw.parse()
                    .map_err(|_| CliError::Config(format!("bad nmt.average_decay {raw:?}")))?,
            )
        };
    }
    config.early_stop_patience = ctx
        .config
        .parse_or("nmt.patience", config.early_stop_patience)?;
    config.max_epochs = ctx.config.parse_or("nmt.max_epochs", config.max_epochs)?;
    config.seed = ctx.config.parse_or("nmt.seed", config.seed)?;
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

fn fusion_config(ctx: &Context) -> Result<FusionConfig, CliError> {
    let mut fusion = FusionConfig::none();
    if let Some(raw) = ctx.config.get("nmt.fusion_modes") {
        for mode in raw.split('+').filter(|m| !m.trim().is_empty()) {
            let parsed = FusionMode::parse(mode.trim())
                .ok_or_else(|| CliError::Config(format!("bad fusion mode {mode:?}")))?;
            fusion.modes.insert(parsed);
        }
    }
    fusion.freeze_embeddings = ctx.config.bool_or("nmt.fusion_freeze", false)?;
    Ok(fusion)
}

/// BPE-segment tokenized pairs with per-side code tables when the model
/// asks for subword units.
fn apply_bpe_if_configured(
    ctx: &Context,
    config: &NmtConfig,
    pairs: TokenPairs,
) -> Result<TokenPairs, CliError> {
    if !config.bpe {
        return Ok(pairs);
    }
    let dir = ctx.split_dir();
    let src_codes_path = dir.join("bpe.src.codes");
    let tgt_codes_path = dir.join("bpe.tgt.codes");
    require_artifact(&src_codes_path, "BPE codes (run `prep` with bpe_merges)")?;
    let src_codes = MergeTable::load(&src_codes_path).map_err(data_err)?;
    let tgt_codes = MergeTable::load(&tgt_codes_path).map_err(data_err)?;
    Ok(pairs
        .into_iter()
        .map(|(src, tgt)| (bpe_apply(&src_codes, &src), bpe_apply(&tgt_codes, &tgt)))
        .collect())
}

fn encode_pairs(
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    pairs: &[(Vec<String>, Vec<String>)],
) -> DataSet {
    DataSet::new(
        pairs
            .iter()
            .map(|(s, t)| (src_vocab.encode(s), tgt_vocab.encode(t)))
            .collect(),
    )
}

pub fn train_nmt(ctx: &Context) -> Result<(), CliError> {
    let mut run = ctx.run("train-nmt")?;
    let dir = ctx.split_dir();
    require_artifact(&dir.join("train.tok.src"), "tokenized split (run `prep`)")?;
    run.record_data_hash("train_src", &dir.join("train.tok.src"))?;
    run.record_data_hash("train_tgt", &dir.join("train.tok.tgt"))?;
    let config = nmt_config(ctx)?;
    let mut fusion = fusion_config(ctx)?;
    let train_pairs = apply_bpe_if_configured(ctx, &config, read_split_pairs(&dir, "train")?)?;
    let dev_pairs = apply_bpe_if_configured(ctx, &config, read_split_pairs(&dir, "dev")?)?;

    let src_sides: Vec<Vec<String>> = train_pairs.iter().map(|(s, _)| s.clone()).collect();
    let tgt_sides: Vec<Vec<String>> = train_pairs.iter().map(|(_, t)| t.clone()).collect();
    let src_vocab = nmt::build_vocab(src_sides.iter().map(Vec::as_slice), config.min_word_freq);
    let tgt_vocab = nmt::build_vocab(tgt_sides.iter().map(Vec::as_slice), config.min_word_freq);

    let mut train_set = encode_pairs(&src_vocab, &tgt_vocab, &train_pairs);
    let mut dev_set = encode_pairs(&src_vocab, &tgt_vocab, &dev_pairs);

    if fusion.needs_provider() {
        let provider_dir = resolve(&ctx.workdir, ctx.config.require("nmt.fusion_provider")?);
        let train_provider =
            nmt::load_provider_file(&provider_dir.join("train.vec")).map_err(data_err)?;
        let dev_provider =
            nmt::load_provider_file(&provider_dir.join("dev.vec")).map_err(data_err)?;
        fusion.provider_dim = train_provider.dim;
        train_set.provider = Some(train_provider);
        dev_set.provider = Some(dev_provider);
    }
    fusion
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut model = Seq2SeqModel::new(config, fusion.clone(), src_vocab, tgt_vocab)
        .map_err(|e| CliError::Config(e.to_string()))?;
    if fusion.has(FusionMode::EmbedInit) {
        let path = resolve(&ctx.workdir, ctx.config.require("nmt.fusion_embeddings")?);
        let pretrained = nmt::load_embedding_matrix(&path).map_err(data_err)?;
        let copied = model
            .init_encoder_embeddings(&pretrained, fusion.freeze_embeddings)
            .map_err(data_err)?;
        println!(
            "initialized {copied} embedding rows from {}",
            path.display()
        );
    }

    let outcome = train(model, &train_set, &dev_set).map_err(other_err)?;
    let ckpt_path = run.file("checkpoint.bin");
    save_checkpoint(
        &Checkpoint {
            model: outcome.model,
            step: outcome.steps,
            best_dev_metric: outcome.best_dev_accuracy,
        },
        &ckpt_path,
        Dtype::F32,
    )
    .map_err(other_err)?;
    println!(
        "trained {} epochs; best dev token accuracy {:.4} (epoch {})",
        outcome.history.len(),
        outcome.best_dev_accuracy,
        outcome.best_epoch
    );
    run.record(
        "metric.best_dev_accuracy",
        format!("{:.6}", outcome.best_dev_accuracy),
    );
    run.record("metric.epochs", outcome.history.len().to_string());
    run.artifact("checkpoint", &ckpt_path);
    run.finish()?;
    Ok(())
}

enum AnySystem {
    Smt(Box<SmtSystem>),
    Nmt(Box<Seq2SeqModel>),
}

fn load_any_system(ctx: &Context, model_dir: &Path) -> Result<AnySystem, CliError> {
    let model_dir = resolve(&ctx.workdir, &model_dir.display().to_string());
    let ckpt = model_dir.join("checkpoint.bin");
    if ckpt.exists() {
        let loaded = load_checkpoint(&ckpt).map_err(data_err)?;
        return Ok(AnySystem::Nmt(Box::new(loaded.model)));
    }
    if model_dir.join("phrase_table.txt").exists() {
        return Ok(AnySystem::Smt(Box::new(load_smt_system(ctx, &model_dir)?)));
    }
    Err(CliError::MissingArtifact(format!(
        "no checkpoint.bin or phrase_table.txt in {}",
        model_dir.display()
    )))
}

type NBestLists = Vec<Vec<smt::NBestEntry>>;

fn translate_lines(
    ctx: &Context,
    system: &AnySystem,
    inputs: &[Vec<String>],
    nbest: usize,
) -> Result<(Vec<Vec<String>>, NBestLists), CliError> {
    use rayon::prelude::*;
    match system {
        AnySystem::Smt(system) => {
            let config = decoder_config(ctx, nbest)?;
            let decoded: Result<Vec<_>, _> = inputs
                .par_iter()
                .map(|tokens| system.translate(tokens, &config))
                .collect();
            let decoded = decoded.map_err(other_err)?;
            let translations = decoded.iter().map(|o| o.translation.clone()).collect();
            let lists = decoded.into_iter().map(|o| o.n_best).collect();
            Ok((translations, lists))
        }
        AnySystem::Nmt(model) => {
            let beam = BeamConfig {
                beam_size: ctx.config.parse_or("nmt.beam", 5)?,
                ..BeamConfig::default()
            };
            let outputs: Result<Vec<_>, _> = inputs
                .par_iter()
                .map(|tokens| beam_search(model, tokens, None, &beam).map(|t| t.tokens))
                .collect();
            Ok((outputs.map_err(other_err)?, Vec::new()))
        }
    }
}

pub fn translate(
    ctx: &Context,
    model_dir: &Path,
    input: &Path,
    output: &Path,
    detok: bool,
    nbest: usize,
) -> Result<(), CliError> {
    let system = load_any_system(ctx, model_dir)?;
    let input_path = resolve(&ctx.workdir, &input.display().to_string());
    let inputs = read_token_lines(&input_path)?;
    let (outputs, nbest_lists) = translate_lines(ctx, &system, &inputs, nbest)?;
    let output_path = resolve(&ctx.workdir, &output.display().to_string());
    write_token_lines(&output_path, &outputs)?;
    if nbest > 0 && !nbest_lists.is_empty() {
        let nbest_path = output_path.with_extension("nbest");
        smt::write_nbest(&nbest_path, &nbest_lists).map_err(other_err)?;
        println!("wrote {}", nbest_path.display());
    }
    if detok {
        let tgt_mode = ctx.mode("data.tgt_lang")?;
        let truecase_path = ctx.split_dir().join("truecase.tgt.model");
        let mut detok_lines = Vec::with_capacity(outputs.len());
        let uses_bpe = match &system {
            AnySystem::Nmt(model) => model.config.bpe,
            AnySystem::Smt(_) => false,
        };
        for tokens in &outputs {
            let mut tokens = if uses_bpe {
                bpe_undo(tokens)
            } else {
                tokens.clone()
            };
            if truecase_path.exists() {
                tokens = detruecase(&tokens);
            }
            detok_lines.push(detokenize(&tokens, tgt_mode));
        }
        let detok_path = output_path.with_extension("detok");
        write_lines(&detok_path, &detok_lines)?;
        println!(
            "wrote {} and {}",
            output_path.display(),
            detok_path.display()
        );
    } else {
        println!("wrote {}", output_path.display());
    }
    Ok(())
}

pub fn back_translate(ctx: &Context, model_dir: &Path) -> Result<(), CliError> {
    let mut run = ctx.run("bt")?;
    let system = load_any_system(ctx, model_dir)?;
    let mono_path = match ctx.config.get("bt.mono") {
        Some(path) => resolve(&ctx.workdir, path),
        None => ctx.split_dir().join("mono.tok"),
    };
    require_artifact(&mono_path, "monolingual token file")?;
    let mut mono = read_token_lines(&mono_path)?;
    let sample_size: usize = ctx.config.parse_or("bt.sample_size", mono.len())?;
    if sample_size < mono.len() {
        let seed: u64 = ctx.config.parse_or("bt.seed", 1)?;
        let chosen = Rng::new(seed).sample_indices(mono.len(), sample_size);
        mono = chosen.into_iter().map(|i| mono[i].clone()).collect();
    }
    let generator_id = format!("{}", model_dir.display());
    let synthetic = match &system {
        AnySystem::Smt(system) => {
            let translator = SmtTranslator {
                system,
                config: decoder_config(ctx, 0)?,
            };
            semisup::back_translate(&translator, &mono, &generator_id)
        }
        AnySystem::Nmt(model) => {
            let translator = NmtTranslator {
                model,
                beam: BeamConfig {
                    beam_size: ctx.config.parse_or("nmt.beam", 5)?,
                    ..BeamConfig::default()
                },
            };
            semisup::back_translate(&translator, &mono, &generator_id)
        }
    };
    semisup::write_synthetic(&run.path.clone(), &synthetic).map_err(other_err)?;
    println!(
        "back-translated {} sentences ({} empty dropped)",
        synthetic.pairs.len(),
        synthetic.dropped_empty
    );
    run.record("metric.synthetic_pairs", synthetic.pairs.len().to_string());
    run.record("metric.dropped_empty", synthetic.dropped_empty.to_string());
    run.finish()?;
    Ok(())
}

pub fn transfer(ctx: &Context) -> Result<(), CliError> {
    let mut run = ctx.run("transfer")?;
    let dir = ctx.split_dir();
    let parent_src = ctx.path("transfer.parent_src")?;
    let parent_tgt = ctx.path("transfer.parent_tgt")?;
    let parent_pairs: Vec<_> = read_token_lines(&parent_src)?
        .into_iter()
        .zip(read_token_lines(&parent_tgt)?)
        .collect();
    let config = nmt_config(ctx)?;
    let child_pairs = apply_bpe_if_configured(ctx, &config, read_split_pairs(&dir, "train")?)?;
    let child_dev = apply_bpe_if_configured(ctx, &config, read_split_pairs(&dir, "dev")?)?;
    let outcome = semisup::transfer_train(
        &parent_pairs,
        &child_pairs,
        &child_dev,
        config.clone(),
        config,
    )
    .map_err(other_err)?;
    let ckpt_path = run.file("checkpoint.bin");
    save_checkpoint(
        &Checkpoint {
            model: outcome.child.model,
            step: outcome.child.steps,
            best_dev_metric: outcome.child.best_dev_accuracy,
        },
        &ckpt_path,
        Dtype::F32,
    )
    .map_err(other_err)?;
    println!(
        "parent best dev accuracy {:.4}; child best dev accuracy {:.4}",
        outcome.parent.best_dev_accuracy, outcome.child.best_dev_accuracy
    );
    run.record(
        "metric.parent_dev_accuracy",
        format!("{:.6}", outcome.parent.best_dev_accuracy),
    );
    run.record(
        "metric.child_dev_accuracy",
        format!("{:.6}", outcome.child.best_dev_accuracy),
    );
    run.artifact("checkpoint", &ckpt_path);
    run.finish()?;
    Ok(())
}

pub fn multi(ctx: &Context) -> Result<(), CliError> {
    let mut run = ctx.run("multi")?;
    let dir = ctx.split_dir();
    let aux_src = ctx.path("multi.aux_src")?;
    let aux_tgt = ctx.path("multi.aux_tgt")?;
    let aux_lang = ctx.config.require("multi.aux_lang")?.to_string();
    let main_lang = ctx.config.get_or("data.tgt_lang", "main").to_string();
    let direction = match ctx.config.get_or("multi.direction", "many-to-one") {
        "many-to-one" => MultiDirection::ManyToOne,
        "one-to-many" => MultiDirection::OneToMany,
        other => return Err(CliError::Config(format!("bad multi.direction {other:?}"))),
    };
    let config = nmt_config(ctx)?;
    let main_pairs = apply_bpe_if_configured(ctx, &config, read_split_pairs(&dir, "train")?)?;
    let dev_pairs = apply_bpe_if_configured(ctx, &config, read_split_pairs(&dir, "dev")?)?;
    let aux_pairs: Vec<_> = read_token_lines(&aux_src)?
        .into_iter()
        .zip(read_token_lines(&aux_tgt)?)
        .collect();
    let dataset = MultiDataset {
        corpora: vec![(main_pairs, main_lang), (aux_pairs, aux_lang)],
        direction,
    };
    // One-to-many development sentences need the main-language tag too.
    let dev: Vec<_> = match direction {
        MultiDirection::ManyToOne => dev_pairs,
        MultiDirection::OneToMany => {
            let tag = semisup::tag_token(&dataset.corpora[0].1);
            dev_pairs
                .into_iter()
                .map(|(mut src, tgt)| {
                    src.insert(0, tag.clone());
                    (src, tgt)
                })
                .collect()
        }
    };
    let outcome = semisup::multilingual_train(&dataset, &dev, config).map_err(other_err)?;
    let ckpt_path = run.file("checkpoint.bin");
    save_checkpoint(
        &Checkpoint {
            model: outcome.outcome.model,
            step: outcome.outcome.steps,
            best_dev_metric: outcome.outcome.best_dev_accuracy,
        },
        &ckpt_path,
        Dtype::F32,
    )
    .map_err(other_err)?;
    println!(
        "joint training best dev accuracy {:.4} (tags: {})",
        outcome.outcome.best_dev_accuracy,
        outcome.tags.join(" ")
    );
    run.record(
        "metric.best_dev_accuracy",
        format!("{:.6}", outcome.outcome.best_dev_accuracy),
    );
    run.artifact("checkpoint", &ckpt_path);
    run.finish()?;
    Ok(())
}

pub fn bleu(ctx: &Context, hyp: &Path, reference: &Path) -> Result<(), CliError> {
    let hyp_lines = read_lines(&resolve(&ctx.workdir, &hyp.display().to_string()))?;
    let ref_lines = read_lines(&resolve(&ctx.workdir, &reference.display().to_string()))?;
    let report = eval::bleu(&hyp_lines, &ref_lines, eval::Smoothing::Exp).map_err(data_err)?;
    if report.zero_unigram_matches {
        eprintln!("warning: no unigram matches; BLEU is 0");
    }
    println!("{report}");
    Ok(())
}

pub fn ci(
    ctx: &Context,
    hyp: &Path,
    reference: &Path,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(), CliError> {
    let hyp_lines = read_lines(&resolve(&ctx.workdir, &hyp.display().to_string()))?;
    let ref_lines = read_lines(&resolve(&ctx.workdir, &reference.display().to_string()))?;
    let interval = eval::paired_bootstrap_ci(&hyp_lines, &ref_lines, resamples, level, seed)
        .map_err(data_err)?;
    println!(
        "BLEU = {:.2} (± {:.1}) [{:.2}, {:.2}] {}% CI over {} resamples",
        interval.bleu,
        interval.half_width(),
        interval.lower,
        interval.upper,
        level * 100.0,
        resamples
    );
    Ok(())
}

pub fn human_sheet(
    ctx: &Context,
    sys_a: &Path,
    sys_b: &Path,
    src: &Path,
    reference: &Path,
    n: usize,
    seed: u64,
) -> Result<(), CliError> {
    let mut run = ctx.run("human-sheet")?;
    let a = read_lines(&resolve(&ctx.workdir, &sys_a.display().to_string()))?;
    let b = read_lines(&resolve(&ctx.workdir, &sys_b.display().to_string()))?;
    let sources = read_lines(&resolve(&ctx.workdir, &src.display().to_string()))?;
    let refs = read_lines(&resolve(&ctx.workdir, &reference.display().to_string()))?;
    let sheet = eval::humaneval_sheet(&a, &b, &sources, &refs, n, seed).map_err(data_err)?;
    let sheet_path = run.file("sheet.txt");
    let key_path = run.file("key.tsv");
    std::fs::write(&sheet_path, sheet.render_judge_file())?;
    std::fs::write(&key_path, sheet.render_key_file())?;
    println!(
        "wrote {} items to {} (key: {})",
        sheet.items.len(),
        sheet_path.display(),
        key_path.display()
    );
    run.artifact("sheet", &sheet_path);
    run.artifact("key", &key_path);
    run.finish()?;
    Ok(())
}

pub fn human_tally(ctx: &Context, key: &Path, judgments: &Path) -> Result<(), CliError> {
    let key_lines = read_lines(&resolve(&ctx.workdir, &key.display().to_string()))?;
    let mut parsed_key = Vec::with_capacity(key_lines.len());
    for (i, line) in key_lines.iter().enumerate() {
        let (id, flag) = line
            .split_once('\t')
            .ok_or_else(|| data_err(format!("key line {}: expected id<TAB>flag", i + 1)))?;
        let id: usize = id
            .parse()
            .map_err(|_| data_err(format!("key line {}: bad id", i + 1)))?;
        let flag = match flag.trim() {
            "1" => true,
            "0" => false,
            other => return Err(data_err(format!("key line {}: bad flag {other:?}", i + 1))),
        };
        parsed_key.push((id, flag));
    }
    let judgment_lines = read_lines(&resolve(&ctx.workdir, &judgments.display().to_string()))?;
    let mut parsed = Vec::with_capacity(judgment_lines.len());
    for (i, line) in judgment_lines.iter().enumerate() {
        let j = eval::Judgment::parse(line)
            .ok_or_else(|| data_err(format!("judgment line {}: expected A or B", i + 1)))?;
        parsed.push(j);
    }
    let (wins1, wins2) = eval::humaneval_tally(&parsed_key, &parsed).map_err(data_err)?;
    println!("system1 wins {wins1} / system2 wins {wins2}");
    Ok(())
}

pub fn grid(ctx: &Context, target: &str, jobs: usize) -> Result<(), CliError> {
    let combos = ctx.config.expand_grid();
    if combos.len() == 1 {
        eprintln!("warning: no list-valued keys; grid has a single cell");
    }
    println!("grid: {} run(s), target {target}", combos.len());
    let runner = |(config, name): &(ExperimentConfig, String)| -> Result<(), CliError> {
        let child = Context {
            config: config.clone(),
            workdir: ctx.workdir.clone(),
        };
        let run_name = format!("grid-{name}");
        // Re-dispatch with a named run directory by temporarily steering
        // the child commands through a wrapper run dir name.
        match target {
            "train-nmt" => train_named(&child, &run_name, TrainKind::Nmt),
            "train-smt" => train_named(&child, &run_name, TrainKind::Smt),
            other => Err(CliError::Config(format!(
                "grid target {other:?} unsupported"
            ))),
        }
    };
    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(other_err)?;
        let results: Vec<Result<(), CliError>> = pool.install(|| {
            use rayon::prelude::*;
            combos.par_iter().map(runner).collect()
        });
        for result in results {
            result?;
        }
    } else {
        for combo in &combos {
            runner(combo)?;
        }
    }
    Ok(())
}

enum TrainKind {
    Nmt,
    Smt,
}

/// Grid cells reuse the training logic but land in named directories.
fn train_named(ctx: &Context, run_name: &str, kind: TrainKind) -> Result<(), CliError> {
    let mut run = ctx.run(run_name)?;
    let dir = ctx.split_dir();
    match kind {
        TrainKind::Nmt => {
            require_artifact(&dir.join("train.tok.src"), "tokenized split (run `prep`)")?;
            let config = nmt_config(ctx)?;
            let train_pairs =
                apply_bpe_if_configured(ctx, &config, read_split_pairs(&dir, "train")?)?;
            let dev_pairs = apply_bpe_if_configured(ctx, &config, read_split_pairs(&dir, "dev")?)?;
            let src_sides: Vec<Vec<String>> = train_pairs.iter().map(|(s, _)| s.clone()).collect();
            let tgt_sides: Vec<Vec<String>> = train_pairs.iter().map(|(_, t)| t.clone()).collect();
            let src_vocab =
                nmt::build_vocab(src_sides.iter().map(Vec::as_slice), config.min_word_freq);
            let tgt_vocab =
                nmt::build_vocab(tgt_sides.iter().map(Vec::as_slice), config.min_word_freq);
            let train_set = encode_pairs(&src_vocab, &tgt_vocab, &train_pairs);
            let dev_set = encode_pairs(&src_vocab, &tgt_vocab, &dev_pairs);
            let model = Seq2SeqModel::new(config, FusionConfig::none(), src_vocab, tgt_vocab)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let outcome = train(model, &train_set, &dev_set).map_err(other_err)?;
            let ckpt_path = run.file("checkpoint.bin");
            save_checkpoint(
                &Checkpoint {
                    model: outcome.model,
                    step: outcome.steps,
                    best_dev_metric: outcome.best_dev_accuracy,
                },
                &ckpt_path,
                Dtype::F32,
            )
            .map_err(other_err)?;
            println!(
                "[{run_name}] best dev accuracy {:.4}",
                outcome.best_dev_accuracy
            );
            run.record(
                "metric.best_dev_accuracy",
                format!("{:.6}", outcome.best_dev_accuracy),
            );
            run.artifact("checkpoint", &ckpt_path);
        }
        TrainKind::Smt => {
            require_artifact(&dir.join("train.tok.src"), "tokenized split (run `prep`)")?;
            let pairs = read_split_pairs(&dir, "train")?;
            let config = smt_train_config(ctx)?;
            let system = smt::train_smt(&pairs, &[], &config).map_err(data_err)?;
            let table_path = run.file("phrase_table.txt");
            system.table.save(&table_path).map_err(other_err)?;
            system
                .lm
                .arpa_export(&run.file("lm.arpa"))
                .map_err(other_err)?;
            system
                .weights
                .save(&run.file("weights.txt"))
                .map_err(other_err)?;
            println!("[{run_name}] phrase entries {}", system.table.len());
            run.record("metric.phrase_entries", system.table.len().to_string());
        }
    }
    run.finish()?;
    Ok(())
}
