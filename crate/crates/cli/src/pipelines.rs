use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use actvec::datakit::{
    generate_synthetic, load_dataset, load_remap, load_taxonomy, load_word_vectors, make_splits, one_per_verb_split,
    parse_split_label, Dataset, EmbeddingTable, RemapTable, SplitSpec, SyntheticSpec,
};
use actvec::encoder::{EncoderConfig, Hrnn, Level1Mode};
use actvec::evalkit::{
    build_similarity_matrix, check_split, class_means, embeddings_tsv, enumerate_arithmetic_cases,
    krr_fit_predict, matrix_rank_correlation, run_arithmetic_tests, write_report, zsl_evaluate, zsl_from_embeddings,
    ArithmeticSummary, EvalReport, Kernel, RankCorrelation, RunMeta, SimilaritySource, SplitResult, ZslOutcome,
};
use actvec::trainer::{
    dual_loss_gradient_check, gradcheck_params, load_checkpoint, save_checkpoint, train as train_model, IterLog,
    Trainer,
};

use crate::config::{encoder_config, synthetic_spec, train_config, RunConfig};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const LOG_HEADER: &str = "iter,epoch,lambda,l_pr,l_ce,l_dual";
const KRR_NOTE: &str = "KRR baseline without the Laplacian term: its graph over unlabeled test clips is unspecified";

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.path("out_dir").expect("validated");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn parse_errors(errors: Vec<String>) -> Result<()> {
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Usage(errors))
    }
}

/// Manifest clips, with label vectors when a word table is configured.
fn load_data(cfg: &RunConfig) -> Result<(Dataset, Option<EmbeddingTable>)> {
    let remap = match cfg.path("remap") {
        Some(p) => load_remap(&p)?,
        None => RemapTable::default(),
    };
    let mut data = load_dataset(&cfg.path("manifest").expect("validated"), &remap)?;
    let table = cfg.path("word_vectors").map(|p| load_word_vectors(&p)).transpose()?;
    if let Some(t) = &table {
        data.assign_labels(t)?;
    }
    Ok((data, table))
}

fn feature_dim(data: &Dataset) -> Result<usize> {
    data.clips
        .first()
        .map(|c| c.dim())
        .ok_or_else(|| CliError::Data("manifest lists no clips".into()))
}

/// Encoder settings for `num_classes`, checked against the data widths.
fn encoder_for(cfg: &RunConfig, data: &Dataset, table: &EmbeddingTable, num_classes: usize) -> Result<EncoderConfig> {
    let d = feature_dim(data)?;
    let mut r = cfg.reader();
    let enc = encoder_config(&mut r, d, table.dim(), num_classes);
    parse_errors(r.errors)?;
    if enc.feature_dim != d {
        return Err(CliError::Data(format!("feature_dim is {} but clips have width {d}", enc.feature_dim)));
    }
    if enc.embed_dim != table.dim() {
        return Err(CliError::Data(format!(
            "embed_dim is {} but word vectors have width {}",
            enc.embed_dim,
            table.dim()
        )));
    }
    enc.validate()?;
    Ok(enc)
}

fn require_table(table: Option<EmbeddingTable>) -> EmbeddingTable {
    table.expect("word_vectors validated")
}

fn load_split(cfg: &RunConfig) -> Result<Option<SplitSpec>> {
    Ok(cfg.path("splits").map(|p| SplitSpec::load(&p)).transpose()?)
}

fn embed_all(model: &Hrnn, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    use actvec::encoder::Embedder;
    Ok(data.clips.par_iter().map(|c| model.embed(c)).collect::<actvec::Result<Vec<_>>>()?)
}

fn load_model(cfg: &RunConfig, data: &mut Dataset) -> Result<Hrnn> {
    let ck = load_checkpoint(&cfg.path("checkpoint").expect("validated"))?;
    let d = feature_dim(data)?;
    if d != ck.encoder_config.feature_dim {
        return Err(CliError::Data(format!(
            "checkpoint expects feature width {} but clips have width {d}",
            ck.encoder_config.feature_dim
        )));
    }
    data.pad_or_clip(ck.encoder_config.seq_len);
    Ok(Hrnn::new(ck.encoder_config, ck.params)?)
}

fn emit(report: &EvalReport, cfg: &RunConfig, command: &str) -> Result<()> {
    let dir = out_dir(cfg)?;
    write_report(report, &RunMeta::now(command), &dir)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn gen_synth(cfg: &RunConfig) -> Result<()> {
    let mut spec = synthetic_spec(cfg.get("spec").unwrap_or("s0")).map_err(CliError::Usage)?;
    let mut r = cfg.reader();
    spec.seed = r.value("seed", spec.seed);
    parse_errors(r.errors)?;
    let synth = generate_synthetic(&spec)?;
    let dir = out_dir(cfg)?;
    synth.write(&dir)?;
    if spec.num_nouns_per_verb >= 2 {
        one_per_verb_split(&spec, spec.seed).save(&dir.join("split.json"))?;
    }
    write(&dir.join("run.cfg"), run_cfg_text(&spec))?;
    println!(
        "wrote {} clips of {} classes to {}",
        synth.dataset.clips.len(),
        synth.dataset.num_classes(),
        dir.display()
    );
    Ok(())
}

/// Configuration that trains and evaluates on a generated bundle.
fn run_cfg_text(spec: &SyntheticSpec) -> String {
    let mut s = String::from("# written by gen-synth; paths are relative to this file\n");
    for (k, v) in [
        ("manifest", "manifest.jsonl".to_string()),
        ("word_vectors", "words.txt".into()),
        ("remap", "remap.tsv".into()),
        ("taxonomy", "taxonomy.tsv".into()),
        ("splits", "split.json".into()),
        ("feature_dim", spec.feature_dim.to_string()),
        ("seq_len", spec.seq_len.to_string()),
        ("window_len", spec.seq_len.min(6).to_string()),
        ("hidden1", "64".into()),
        ("hidden2", "32".into()),
        ("embed_dim", spec.embed_dim.to_string()),
        ("learning_rate", "0.001".into()),
        ("batch_size", "32".into()),
        ("epochs", "10".into()),
        ("seed", spec.seed.to_string()),
    ] {
        if k == "splits" && spec.num_nouns_per_verb < 2 {
            continue;
        }
        writeln!(s, "{k} = {v}").unwrap();
    }
    s
}

fn log_line(e: &IterLog) -> String {
    format!("{},{},{},{},{},{}", e.iter, e.epoch, e.lambda, e.l_pr, e.l_ce, e.l_dual)
}

/// Log rows already on disk for iterations before `start`.
fn kept_log_rows(path: &Path, start: u64) -> Vec<String> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|i| i.parse::<u64>().ok())
                .is_some_and(|i| i < start)
        })
        .map(str::to_string)
        .collect()
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let (data, table) = load_data(cfg)?;
    let table = require_table(table);
    let split = load_split(cfg)?;
    let mut data = match &split {
        Some(s) => data.restrict(&s.train)?,
        None => data,
    };
    let mut r = cfg.reader();
    let every: u64 = r.value("checkpoint_every", 0);
    let epochs: Option<usize> = r.optional("epochs");
    parse_errors(r.errors)?;
    let dir = out_dir(cfg)?;
    let ckpt_path = dir.join("model.ckpt");
    let log_path = dir.join("train_log.csv");

    let resume = cfg.path("resume").map(|p| load_checkpoint(&p)).transpose()?;
    let (enc, resumed) = match resume {
        Some(mut ck) => {
            if let Some(e) = epochs {
                ck.train_config.epochs = e;
            }
            (ck.encoder_config.clone(), Some(ck))
        }
        None => (encoder_for(cfg, &data, &table, data.num_classes())?, None),
    };
    if enc.num_classes != data.num_classes() {
        return Err(CliError::Data(format!(
            "model has {} classes but the training data has {}",
            enc.num_classes,
            data.num_classes()
        )));
    }
    data.pad_or_clip(enc.seq_len);
    let mut trainer = match resumed {
        Some(ck) => Trainer::resume(&data, ck)?,
        None => {
            let mut r = cfg.reader();
            let tc = train_config(&mut r);
            parse_errors(r.errors)?;
            Trainer::new(&data, enc, tc)?
        }
    };

    let start = trainer.global_iter;
    let mut rows = kept_log_rows(&log_path, start);
    let total = trainer.total_iters();
    let ipe = trainer.iters_per_epoch();
    let mut last = None;
    loop {
        let stop = if every > 0 { (trainer.global_iter / every + 1) * every } else { total };
        let entries = trainer.run_until(stop, |e| {
            if (e.iter + 1) % ipe == 0 {
                eprintln!("epoch {} iter {} l_dual {:.6}", e.epoch, e.iter + 1, e.l_dual);
            }
        })?;
        rows.extend(entries.iter().map(log_line));
        last = entries.last().cloned().or(last);
        save_checkpoint(&trainer.checkpoint(), &ckpt_path)?;
        if trainer.global_iter >= total {
            break;
        }
    }
    let mut log = String::from(LOG_HEADER);
    log.push('\n');
    for row in rows {
        log.push_str(&row);
        log.push('\n');
    }
    write(&log_path, log)?;
    if let Some(s) = &split {
        s.save(&dir.join("split.json"))?;
    }
    match last {
        Some(e) => println!("trained to iteration {} (l_dual {:.6})", trainer.global_iter, e.l_dual),
        None => println!("nothing to train: already at iteration {}", trainer.global_iter),
    }
    Ok(())
}

fn class_means_by_name(data: &Dataset, embeddings: &[Vec<f64>]) -> Result<BTreeMap<String, Vec<f64>>> {
    let ids: Vec<usize> = data.clips.iter().map(|c| c.class_id).collect();
    Ok(class_means(embeddings, &ids)?
        .into_iter()
        .map(|(id, v)| (data.classes[id].raw_name.clone(), v))
        .collect())
}

pub fn embed(cfg: &RunConfig, export: bool) -> Result<()> {
    let (mut data, _) = load_data(cfg)?;
    let model = load_model(cfg, &mut data)?;
    let embeddings = embed_all(&model, &data)?;
    let rows: Vec<(String, String, Vec<f64>)> = data
        .clips
        .iter()
        .zip(&embeddings)
        .map(|(c, e)| (c.clip_id.clone(), data.classes[c.class_id].raw_name.clone(), e.clone()))
        .collect();
    let dir = out_dir(cfg)?;
    write(&dir.join("embeddings.tsv"), embeddings_tsv(&rows)?)?;
    if export {
        let means = class_means_by_name(&data, &embeddings)?;
        let mut text = String::from("class");
        for k in 0..model.config.embed_dim {
            write!(text, "\te{k}").unwrap();
        }
        text.push('\n');
        for (name, v) in &means {
            text.push_str(name);
            for x in v {
                write!(text, "\t{x}").unwrap();
            }
            text.push('\n');
        }
        write(&dir.join("class_means.tsv"), text)?;
        let names: Vec<String> = means.keys().cloned().collect();
        let m = build_similarity_matrix(&names, &SimilaritySource::Vectors(&means))?;
        write(&dir.join("similarity.csv"), m.to_csv())?;
    }
    println!("embedded {} clips into {}", rows.len(), dir.display());
    Ok(())
}

fn split_result(split: &SplitSpec, method: &str, z: &ZslOutcome) -> SplitResult {
    SplitResult {
        label: split.label(),
        fraction: split.fraction,
        seed: split.seed,
        method: method.to_string(),
        num_train_classes: split.train.len(),
        num_test_classes: split.test.len(),
        accuracy: z.accuracy,
        per_class: z.per_class.iter().map(|(n, a, _)| (n.clone(), *a)).collect(),
    }
}

fn kernel(cfg: &RunConfig) -> Result<(Kernel, String)> {
    let raw = cfg.get("kernel").unwrap_or("linear");
    let k = raw.parse::<Kernel>().map_err(|e| CliError::Usage(vec![format!("kernel: {e}")]))?;
    Ok((k, raw.to_string()))
}

/// Fits kernel ridge regression from pooled training clips to their label
/// vectors and predicts a vector for every clip of `target`.
fn krr_embeddings(cfg: &RunConfig, train: &Dataset, target: &Dataset) -> Result<Vec<Vec<f64>>> {
    let (k, _) = kernel(cfg)?;
    let mut r = cfg.reader();
    let mu: f64 = r.value("ridge_mu", 1.0);
    parse_errors(r.errors)?;
    let labels = train.label_vectors()?;
    let x: Vec<Vec<f64>> = train.clips.iter().map(|c| c.pooled()).collect();
    let y: Vec<Vec<f64>> = train.clips.iter().map(|c| labels[c.class_id].clone()).collect();
    let t: Vec<Vec<f64>> = target.clips.iter().map(|c| c.pooled()).collect();
    Ok(krr_fit_predict(&x, &y, mu, k, &t)?)
}

fn zsl_splits(cfg: &RunConfig, data: &Dataset) -> Result<Vec<SplitSpec>> {
    let mut r = cfg.reader();
    let seed: u64 = r.value("split_seed", 0);
    parse_errors(r.errors)?;
    let labels = match (cfg.get("split"), load_split(cfg)?) {
        (None, Some(s)) => return Ok(vec![s]),
        (Some(l), _) => l.to_string(),
        (None, None) => "90_10,80_20,50_50".to_string(),
    };
    labels
        .split(',')
        .map(|l| Ok(make_splits(&data.class_names(), parse_split_label(l.trim())?, seed)?))
        .collect()
}

pub fn eval_zsl(cfg: &RunConfig) -> Result<()> {
    let (mut data, table) = load_data(cfg)?;
    let table = require_table(table);
    let method = cfg.get("method").unwrap_or("hrnn");
    let mut report = EvalReport::default();
    if method == "hrnn" && cfg.get("checkpoint").is_some() {
        let split = load_split(cfg)?.expect("validated");
        let model = load_model(cfg, &mut data)?;
        let test = data.restrict(&split.test)?;
        let z = zsl_evaluate(&model, &test, &split)?;
        report.splits.push(split_result(&split, "hrnn", &z));
    } else {
        for split in zsl_splits(cfg, &data)? {
            let train = data.restrict(&split.train)?;
            let test = data.restrict(&split.test)?;
            check_split(&test, &split)?;
            let (name, z) = if method == "krr" {
                let (_, kernel_name) = kernel(cfg)?;
                let preds = krr_embeddings(cfg, &train, &test)?;
                (format!("krr-{kernel_name}"), zsl_from_embeddings(&preds, &test)?)
            } else {
                let (mut train, mut test) = (train, test);
                let enc = encoder_for(cfg, &train, &table, train.num_classes())?;
                let mut r = cfg.reader();
                let tc = train_config(&mut r);
                parse_errors(r.errors)?;
                train.pad_or_clip(enc.seq_len);
                test.pad_or_clip(enc.seq_len);
                eprintln!("training on split {} ({} classes)", split.label(), train.num_classes());
                let out = train_model(&train, &enc, &tc)?;
                let model = Hrnn::new(enc, out.params)?;
                ("hrnn".to_string(), zsl_evaluate(&model, &test, &split)?)
            };
            report.splits.push(split_result(&split, &name, &z));
        }
    }
    if method == "krr" {
        report.notes.push(KRR_NOTE.into());
    }
    emit(&report, cfg, "eval-zsl")
}

pub fn eval_rankcorr(cfg: &RunConfig) -> Result<()> {
    let (mut data, _) = load_data(cfg)?;
    let tax = load_taxonomy(&cfg.path("taxonomy").expect("validated"))?;
    let mut r = cfg.reader();
    let diag: bool = r.value("include_diagonal", false);
    parse_errors(r.errors)?;

    let tax_m = build_similarity_matrix(&data.class_names(), &SimilaritySource::Taxonomy(&tax))?;
    let kept = tax_m.names.clone();
    let dropped = data.num_classes() - kept.len();
    let mut report = EvalReport::default();
    if dropped > 0 {
        report.notes.push(format!("{dropped} classes are not taxonomy nodes and were left out"));
    }
    let mut vector_sources: Vec<(&str, BTreeMap<String, Vec<f64>>)> = Vec::new();
    let labels: BTreeMap<String, Vec<f64>> = data
        .classes
        .iter()
        .map(|c| Ok((c.raw_name.clone(), c.label()?.to_vec())))
        .collect::<actvec::Result<_>>()?;
    vector_sources.push(("word_vectors", labels));
    let pooled: Vec<Vec<f64>> = data.clips.iter().map(|c| c.pooled()).collect();
    vector_sources.push(("pooled_features", class_means_by_name(&data, &pooled)?));
    if cfg.get("checkpoint").is_some() {
        let model = load_model(cfg, &mut data)?;
        let embs = embed_all(&model, &data)?;
        vector_sources.push(("embeddings", class_means_by_name(&data, &embs)?));
    }

    let mut matrices = Vec::new();
    for (name, map) in &vector_sources {
        let m = build_similarity_matrix(&kept, &SimilaritySource::Vectors(map))?;
        report.rank_correlations.push(RankCorrelation {
            name: format!("taxonomy_vs_{name}"),
            rho: matrix_rank_correlation(&tax_m, &m, diag)?,
            num_classes: kept.len(),
        });
        matrices.push((name, m));
    }
    if let Some((_, emb)) = matrices.iter().find(|(n, _)| **n == "embeddings") {
        report.rank_correlations.push(RankCorrelation {
            name: "word_vectors_vs_embeddings".into(),
            rho: matrix_rank_correlation(&matrices[0].1, emb, diag)?,
            num_classes: kept.len(),
        });
    }
    emit(&report, cfg, "eval-rankcorr")
}

pub fn eval_arith(cfg: &RunConfig) -> Result<()> {
    let (data, table) = load_data(cfg)?;
    let table = require_table(table);
    let split = load_split(cfg)?;
    let train_only = cfg.get("arith_classes").unwrap_or("train") == "train";
    let names = match (&split, train_only) {
        (Some(s), true) => s.train.clone(),
        _ => data.class_names(),
    };
    let mut subset = data.restrict(&names)?;
    let embeddings = if cfg.get("method").unwrap_or("hrnn") == "krr" {
        let fit_on = match &split {
            Some(s) => data.restrict(&s.train)?,
            None => data.clone(),
        };
        krr_embeddings(cfg, &fit_on, &subset)?
    } else {
        let model = load_model(cfg, &mut subset)?;
        embed_all(&model, &subset)?
    };
    let ids: Vec<usize> = subset.clips.iter().map(|c| c.class_id).collect();
    let means = class_means(&embeddings, &ids)?;
    let cases = enumerate_arithmetic_cases(&subset.classes);
    let outcome = run_arithmetic_tests(&cases, &means, &table)?;
    let mut report = EvalReport {
        arithmetic: Some(ArithmeticSummary {
            precision: outcome.precision,
            passes: outcome.passes,
            comparisons: outcome.total,
        }),
        ..EvalReport::default()
    };
    report
        .notes
        .push(format!("nearest class mean searched over {} classes", subset.num_classes()));
    emit(&report, cfg, "eval-arith")
}

/// Toy dimensions of the end-to-end gradient check.
fn toy_encoder() -> EncoderConfig {
    EncoderConfig {
        feature_dim: 5,
        seq_len: 9,
        window_len: 3,
        level1_mode: Level1Mode::Windowed,
        stride: 3,
        hidden1: 7,
        hidden2: 6,
        embed_dim: 4,
        dropout1_keep: 0.5,
        num_classes: 3,
        attention: true,
    }
}

pub fn grad_check(cfg: &RunConfig) -> Result<()> {
    let mut r = cfg.reader();
    let toy = toy_encoder();
    let enc = if cfg.get("dims").unwrap_or("toy") == "config" {
        encoder_config(&mut r, toy.feature_dim, toy.embed_dim, toy.num_classes)
    } else {
        toy
    };
    let tc = train_config(&mut r);
    let seed: u64 = r.value("seed", 0);
    let eps: f64 = r.value("grad_eps", 1e-4);
    let tol: f64 = r.value("grad_tol", 1e-4);
    parse_errors(r.errors)?;
    enc.validate()?;
    let spec = SyntheticSpec {
        num_verbs: 1,
        num_nouns_per_verb: enc.num_classes,
        clips_per_class: 2,
        seq_len: enc.seq_len,
        feature_dim: enc.feature_dim,
        embed_dim: enc.embed_dim,
        seed,
        ..SyntheticSpec::s0()
    };
    let data = generate_synthetic(&spec)?.dataset;
    let clips: Vec<_> = data.clips.iter().collect();
    let labels = data.label_vectors()?;
    let params = gradcheck_params(&enc, seed);
    let err = dual_loss_gradient_check(
        &params,
        &enc,
        &clips,
        &labels,
        0.5,
        tc.negative_mode,
        tc.ce_mode,
        seed,
        eps,
    )?;
    println!("max relative error: {err:.3e} over {} parameters", params.param_count());
    if err > tol {
        return Err(CliError::Numeric(format!("gradient check failed: {err:.3e} > {tol:.1e}")));
    }
    Ok(())
}
