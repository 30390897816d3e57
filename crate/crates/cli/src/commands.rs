use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use stmix_core::alignio::parse_embeddings_str;
use stmix_core::corpus::{
    load_manifest, manifest_string, parse_numeric_block, read_frames, read_manifest_records,
    validate_triple, write_frames,
};
use stmix_core::mixers::{
    augment_sentences, augment_words, build_word_inventory, frame_mixed_line,
    load_frame_mixed_manifest, make_frame_mixed_set, Augmented,
};
use stmix_core::neighbors::{build_neighbor_table, NeighborTable};
use stmix_core::numfmt::fmt_sig;
use stmix_core::objectives::{cross_entropy, jsd_sequence, mix_loss, stage1_loss, stage2_loss};
use stmix_core::toymodel::{
    continue_stage1, train_stage0, train_stage2, Checkpoint, History, Stage1Data,
};
use stmix_core::{Corpus, EmbeddingTable, FrameMixedExample, LogitSeq, Triple};

use crate::args::{Cli, Command, ConfigArgs, Level, StageArg};
use crate::config::RunConfig;
use crate::CliError;

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate { manifest } => validate(manifest, out),
        Command::Augment { level, opts } => augment(*level, &resolve(opts)?, out),
        Command::Neighbors { opts } => neighbors(&resolve(opts)?, out),
        Command::Train { stage, opts } => train(*stage, &resolve(opts)?, out),
        Command::LossesEval { fixture } => losses_eval(fixture, out),
    }
}

fn resolve(opts: &ConfigArgs) -> Result<RunConfig, CliError> {
    RunConfig::resolve(opts.config.as_deref(), &opts.overrides())
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| {
        CliError::Usage(format!(
            "missing {key} (set it in the config or pass --{})",
            key.replace('_', "-")
        ))
    })
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Reports every malformed record, invariant violation and repeated id.
pub fn validate(manifest: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let records = read_manifest_records(manifest)?;
    let mut report = String::new();
    let mut bad = 0;
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for rec in records {
        match rec.result {
            Err(e) => {
                bad += 1;
                report.push_str(&format!("{e}\n"));
            }
            Ok(t) => {
                let violations = validate_triple(&t);
                let dup = seen.insert(t.id.clone(), rec.line);
                if !violations.is_empty() || dup.is_some() {
                    bad += 1;
                }
                for v in violations {
                    report.push_str(&format!("line {}: {}: {v}\n", rec.line, t.id));
                }
                if let Some(first) = dup {
                    report.push_str(&format!(
                        "line {}: {}: duplicate id (first on line {first})\n",
                        rec.line, t.id
                    ));
                }
            }
        }
    }
    emit(out, &report)?;
    if bad > 0 {
        Err(CliError::Data(format!("{bad} invalid record(s)")))
    } else {
        Ok(())
    }
}

fn read_embeddings(path: &Path) -> Result<EmbeddingTable, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_embeddings_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Splits `words` into those with a usable (present, nonzero) vector and
/// warnings for the rest.
fn usable_words<'a>(
    emb: &EmbeddingTable,
    words: impl IntoIterator<Item = &'a str>,
) -> (Vec<&'a str>, Vec<String>) {
    let mut ok = Vec::new();
    let mut warnings = Vec::new();
    for w in words {
        match emb.get(w) {
            None => warnings.push(format!("{w}: not in embeddings")),
            Some(v) if v.iter().all(|&x| x == 0.0) => warnings.push(format!("{w}: zero vector")),
            Some(_) => ok.push(w),
        }
    }
    (ok, warnings)
}

fn frames_dir(output: &Path) -> (PathBuf, String) {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "augmented".into());
    let rel = format!("{stem}_frames");
    let dir = output.parent().unwrap_or(Path::new("")).join(&rel);
    (dir, rel)
}

/// Writes each item's frames to `<output stem>_frames/NNNNNN.txt` and
/// points `frames_path` at it.
fn externalize_frames(items: &mut [Triple], output: &Path) -> Result<(), CliError> {
    let (dir, rel) = frames_dir(output);
    create_dir(&dir)?;
    for (n, t) in items.iter_mut().enumerate() {
        let name = format!("{n:06}.txt");
        write_frames(dir.join(&name), &t.frames)?;
        t.frames_path = Some(format!("{rel}/{name}"));
    }
    Ok(())
}

fn print_counts(
    out: &mut dyn Write,
    requested: usize,
    produced: usize,
    skipped: usize,
) -> Result<(), CliError> {
    emit(
        out,
        &format!("requested {requested}\nproduced {produced}\nskipped {skipped}\n"),
    )
}

fn word_neighbors(cfg: &RunConfig, corpus: &Corpus) -> Result<NeighborTable, CliError> {
    if let Some(path) = &cfg.neighbors {
        return NeighborTable::read(path)
            .map_err(|e| CliError::io(path, e))?
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())));
    }
    let path = cfg.embeddings.as_deref().ok_or_else(|| {
        CliError::Usage("word-level augmentation needs embeddings or a neighbors cache".into())
    })?;
    let emb = read_embeddings(path)?;
    let inv = build_word_inventory(corpus);
    let (ok, warnings) = usable_words(&emb, inv.words());
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(build_neighbor_table(&emb, ok, cfg.mix.k_neighbors)?)
}

pub fn augment(level: Level, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    cfg.mix.validate()?;
    let corpus = load_manifest(required(&cfg.train_manifest, "train_manifest")?)?;
    let output = required(&cfg.output, "output")?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    match level {
        Level::Frame => {
            let mut set = make_frame_mixed_set(&corpus, &cfg.mix)?;
            let (dir, rel) = frames_dir(output);
            create_dir(&dir)?;
            let mut text = String::new();
            for (n, ex) in set.iter_mut().enumerate() {
                let name = format!("{n:06}.txt");
                write_frames(dir.join(&name), &ex.frames_mixed)?;
                ex.frames_path = Some(format!("{rel}/{name}"));
                text.push_str(&frame_mixed_line(ex));
                text.push('\n');
            }
            write_file(output, &text)?;
            print_counts(out, set.len(), set.len(), 0)
        }
        Level::Word | Level::Sentence => {
            let Augmented {
                mut items,
                requested,
                skipped,
            } = if level == Level::Word {
                let nb = word_neighbors(cfg, &corpus)?;
                augment_words(&corpus, &build_word_inventory(&corpus), &nb, &cfg.mix)?
            } else {
                augment_sentences(&corpus, &cfg.mix)?
            };
            externalize_frames(&mut items, output)?;
            write_file(output, &manifest_string(&items))?;
            print_counts(out, requested, items.len(), skipped)
        }
    }
}

fn read_word_list(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut seen = HashSet::new();
    Ok(text
        .split_whitespace()
        .filter(|w| seen.insert(w.to_string()))
        .map(str::to_string)
        .collect())
}

/// Neighbor cache for the words file, or for the corpus nouns when only a
/// manifest is given. Unusable query words go to a trailing `#` section.
pub fn neighbors(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let emb = read_embeddings(required(&cfg.embeddings, "embeddings")?)?;
    let words: Vec<String> = match (&cfg.words, &cfg.train_manifest) {
        (Some(w), _) => read_word_list(w)?,
        (None, Some(m)) => build_word_inventory(&load_manifest(m)?)
            .words()
            .map(str::to_string)
            .collect(),
        (None, None) => {
            return Err(CliError::Usage(
                "missing words (or train_manifest to take its nouns)".into(),
            ))
        }
    };
    let (ok, warnings) = usable_words(&emb, words.iter().map(String::as_str));
    let table = build_neighbor_table(&emb, ok, cfg.mix.k_neighbors)?;
    let mut text = table.to_text();
    if !warnings.is_empty() {
        text.push_str("# warnings\n");
        for w in &warnings {
            text.push_str(&format!("# {w}\n"));
            eprintln!("warning: {w}");
        }
    }
    match &cfg.output {
        Some(path) => {
            write_file(path, &text)?;
            emit(
                out,
                &format!(
                    "{} entries, {} warnings\n",
                    table.entries.len(),
                    warnings.len()
                ),
            )
        }
        None => emit(out, &text),
    }
}

fn load_optional(path: &Option<PathBuf>) -> Result<Option<Corpus>, CliError> {
    path.as_deref()
        .map(load_manifest)
        .transpose()
        .map_err(CliError::from)
}

fn summary(out: &mut dyn Write, name: &str, h: &History) -> Result<(), CliError> {
    match h.epochs.last() {
        Some(e) => emit(
            out,
            &format!(
                "{name}: {} epochs, final loss {}\n",
                h.epochs.len(),
                fmt_sig(e.total, 10)
            ),
        ),
        None => emit(out, &format!("{name}: 0 epochs\n")),
    }
}

fn save(dir: &Path, name: &str, ckpt: &Checkpoint, h: &History) -> Result<(), CliError> {
    write_file(&dir.join(format!("{name}.history")), &h.to_text())?;
    write_file(&dir.join(format!("{name}.ckpt")), &ckpt.to_text())
}

fn stage1(
    cfg: &RunConfig,
    corpus: &Corpus,
    dev: Option<&Corpus>,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<Checkpoint, CliError> {
    let frame_mixed: Vec<FrameMixedExample> = match &cfg.frame_mixed {
        Some(p) => load_frame_mixed_manifest(p)?,
        None => make_frame_mixed_set(corpus, &cfg.mix)?,
    };
    let mut triples = Vec::new();
    for p in &cfg.augmented {
        triples.extend(load_manifest(p)?.items().iter().cloned());
    }
    let data = Stage1Data {
        triples,
        frame_mixed,
    };
    let mut ckpt = Checkpoint::init(
        cfg.train.seed,
        cfg.train.hidden,
        corpus.iter().chain(&data.triples),
        data.frame_mixed
            .iter()
            .flat_map(|e| [e.tgt_i.as_slice(), e.tgt_j.as_slice()]),
    )?;
    if cfg.pretrain_epochs > 0 {
        let pre = stmix_core::TrainConfig {
            epochs: cfg.pretrain_epochs,
            ..cfg.train.clone()
        };
        let (c, h) = train_stage0(corpus, ckpt, &pre, dev)?;
        save(dir, "stage0", &c, &h)?;
        summary(out, "stage0", &h)?;
        ckpt = c;
    }
    let (ckpt, h) = continue_stage1(ckpt, corpus, &data, &cfg.train, dev)?;
    save(dir, "stage1", &ckpt, &h)?;
    summary(out, "stage1", &h)?;
    Ok(ckpt)
}

pub fn train(stage: StageArg, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    cfg.train.validate()?;
    let corpus = load_manifest(required(&cfg.train_manifest, "train_manifest")?)?;
    let dev = load_optional(&cfg.dev_manifest)?;
    let dir = required(&cfg.output_dir, "output_dir")?;
    create_dir(dir)?;
    let ckpt = match stage {
        StageArg::One | StageArg::Both => Some(stage1(cfg, &corpus, dev.as_ref(), dir, out)?),
        StageArg::Two => None,
    };
    if stage == StageArg::One {
        return Ok(());
    }
    let ckpt = match ckpt {
        Some(c) => c,
        None => {
            let path = cfg.checkpoint.as_deref().ok_or_else(|| {
                CliError::Usage(
                    "stage 2 needs a checkpoint (set checkpoint or run stage both)".into(),
                )
            })?;
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Checkpoint::from_text(&text)?
        }
    };
    let (ckpt, h) = train_stage2(&corpus, ckpt, &cfg.train, dev.as_ref())?;
    save(dir, "stage2", &ckpt, &h)?;
    summary(out, "stage2", &h)
}

fn read_block(path: &Path) -> Result<(Vec<f64>, usize), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_numeric_block(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_logits(path: &Path) -> Result<LogitSeq, CliError> {
    Ok(read_frames(path)?.into_array())
}

fn read_targets(path: &Path) -> Result<Vec<usize>, CliError> {
    let (values, _) = read_block(path)?;
    values
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(CliError::Data(format!(
                    "{}: target {v} is not a token id",
                    path.display()
                )))
            }
        })
        .collect()
}

/// Loss report for a fixture file of `key = value` lines naming numeric
/// blocks: `logits`, `targets` (required); `mix_logits_i`, `mix_targets_i`,
/// `mix_logits_j`, `mix_targets_j`, `lambda` for the mixed loss;
/// `text_logits` for the text-pathway CE and the JSD against `logits`.
pub fn losses_eval(fixture: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(fixture).map_err(|e| CliError::io(fixture, e))?;
    let base = fixture.parent().unwrap_or(Path::new(""));
    let mut keys: BTreeMap<String, String> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected key = value",
                fixture.display(),
                n + 1
            ))
        })?;
        let k = k.trim();
        const KNOWN: [&str; 8] = [
            "logits",
            "targets",
            "mix_logits_i",
            "mix_targets_i",
            "mix_logits_j",
            "mix_targets_j",
            "lambda",
            "text_logits",
        ];
        if !KNOWN.contains(&k) {
            return Err(CliError::Usage(format!(
                "{}:{}: unknown key {k:?}",
                fixture.display(),
                n + 1
            )));
        }
        keys.insert(k.to_string(), v.trim().to_string());
    }
    let path = |k: &str| keys.get(k).map(|v| base.join(v));
    let need = |k: &str| path(k).ok_or_else(|| CliError::Usage(format!("fixture lacks {k}")));

    let logits = read_logits(&need("logits")?)?;
    let targets = read_targets(&need("targets")?)?;
    let (ce, _) = cross_entropy(&logits, &targets)?;
    let mut report = format!("CE {}\n", fmt_sig(ce, 10));

    let mix_keys = [
        "mix_logits_i",
        "mix_targets_i",
        "mix_logits_j",
        "mix_targets_j",
    ];
    let l_mix = if mix_keys.iter().any(|k| keys.contains_key(*k)) {
        let lambda: f64 = match keys.get("lambda") {
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("bad lambda {v:?}")))?,
            None => stmix_core::mixers::DEFAULT_LAMBDA,
        };
        let li = read_logits(&need("mix_logits_i")?)?;
        let yi = read_targets(&need("mix_targets_i")?)?;
        let lj = read_logits(&need("mix_logits_j")?)?;
        let yj = read_targets(&need("mix_targets_j")?)?;
        let (l, _, _) = mix_loss(&li, &yi, &lj, &yj, lambda)?;
        report.push_str(&format!("L_MIX {}\n", fmt_sig(l, 10)));
        Some(l)
    } else {
        None
    };

    let text_terms = match path("text_logits") {
        Some(p) => {
            let lt = read_logits(&p)?;
            let (ce_x, _) = cross_entropy(&lt, &targets)?;
            let (j, _, _) = jsd_sequence(&logits, &lt)?;
            report.push_str(&format!(
                "CE_x {}\nJSD {}\n",
                fmt_sig(ce_x, 10),
                fmt_sig(j, 10)
            ));
            Some((ce_x, j))
        }
        None => None,
    };
    if let Some(l) = l_mix {
        report.push_str(&format!("L1 {}\n", fmt_sig(stage1_loss(ce, l), 10)));
    }
    if let Some((ce_x, j)) = text_terms {
        report.push_str(&format!("L2 {}\n", fmt_sig(stage2_loss(ce, ce_x, j), 10)));
    }
    emit(out, &report)
}
