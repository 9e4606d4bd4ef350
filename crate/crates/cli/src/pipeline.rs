//! Experiment stages. Each stage reads its inputs from and writes its outputs
//! to a run directory, so stages can be run one at a time from the CLI or all
//! at once through [`run_experiment`].

use std::path::{Path, PathBuf};

use domcert::analysis::{default_k_grid, ecdf_and_histograms, frr_trr_sweep, write_sweep_csv, SeriesBundle, TargetFrr};
use domcert::certificates::{
    constriction_ratio, dataset_fingerprint, domain_certificate_from_scores,
    solve_k_for_log2_epsilon, CertItem, CertificateReport, GuideScore, SolvedK,
};
use domcert::chartask::{self, build_dataset, read_split, write_split, CharTaskItem, Dataset};
use domcert::model::{apply_temperature, train_ngram, NGramModel, Tempered};
use domcert::valid::{batch_evaluate, read_records_csv, write_records_csv, EvalItem, EvalRecord, Label};
use domcert::{LogProb, Sequence, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{bench_at_epsilon, compare_g_vs_l_accuracy, AccuracyTable, BenchAtEpsResult};
use crate::config::ExperimentConfig;
use crate::error::{StageError, StageExt};
use crate::manifest::Manifest;

pub type StageResult<T> = Result<T, StageError>;

pub const DATA_DIR: &str = "data";
pub const MODEL_DIR: &str = "models";
pub const RECORDS_FILE: &str = "records.csv";
pub const CERTIFICATES_FILE: &str = "certificates.json";
pub const SOLVED_K_FILE: &str = "solved_k.json";
pub const ECDF_FILE: &str = "ecdf.json";
pub const BENCH_FILE: &str = "bench.json";
pub const ACCURACY_FILE: &str = "accuracy.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Target domain, general corpus for `L`, the out-of-domain set, and the
/// short-input sets for the benchmark and the accuracy comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub target: Dataset,
    pub general: Dataset,
    pub ood: Dataset,
    pub bench: Dataset,
    pub accuracy: Dataset,
}

const DATASETS: [&str; 5] = ["target", "general", "ood", "bench", "accuracy"];
const SPLITS: [&str; 3] = ["train", "val", "test"];

fn split_path(dir: &Path, name: &str, split: &str) -> PathBuf {
    dir.join(DATA_DIR).join(format!("{name}_{split}.txt"))
}

fn relative(dir: &Path, path: &Path) -> PathBuf {
    path.strip_prefix(dir).unwrap_or(path).to_path_buf()
}

fn write_text(dir: &Path, name: impl AsRef<Path>, text: &str, stage: &'static str) -> StageResult<PathBuf> {
    let path = dir.join(name.as_ref());
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).stage(stage)?;
    }
    std::fs::write(&path, text).stage(stage)?;
    Ok(relative(dir, &path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn generate_data(cfg: &ExperimentConfig) -> StageResult<Datasets> {
    Ok(Datasets {
        target: build_dataset(&cfg.target_spec()).stage("generate-data")?,
        general: build_dataset(&cfg.general_spec()).stage("generate-data")?,
        ood: build_dataset(&cfg.ood_spec()).stage("generate-data")?,
        bench: build_dataset(&cfg.bench_spec()).stage("generate-data")?,
        accuracy: build_dataset(&cfg.accuracy_spec()).stage("generate-data")?,
    })
}

pub fn write_datasets(dir: &Path, cfg: &ExperimentConfig, ds: &Datasets) -> StageResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join(DATA_DIR)).stage("generate-data")?;
    let specs = [cfg.target_spec(), cfg.general_spec(), cfg.ood_spec(), cfg.bench_spec(), cfg.accuracy_spec()];
    let sets = [&ds.target, &ds.general, &ds.ood, &ds.bench, &ds.accuracy];
    let mut files = Vec::new();
    for ((name, spec), set) in DATASETS.iter().zip(&specs).zip(sets) {
        for (split, items) in SPLITS.iter().zip([&set.train, &set.val, &set.test]) {
            let path = split_path(dir, name, split);
            write_split(&path, spec, split, items).stage("generate-data")?;
            files.push(relative(dir, &path));
        }
    }
    Ok(files)
}

pub fn read_datasets(dir: &Path) -> StageResult<Datasets> {
    let read = |name: &str| -> StageResult<Dataset> {
        let mut parts = Vec::new();
        for split in SPLITS {
            parts.push(read_split(split_path(dir, name, split)).stage("read-data")?.items);
        }
        let test = parts.pop().unwrap_or_default();
        let val = parts.pop().unwrap_or_default();
        let train = parts.pop().unwrap_or_default();
        Ok(Dataset { train, val, test })
    };
    Ok(Datasets { target: read("target")?, general: read("general")?, ood: read("ood")?,
        bench: read("bench")?,
        accuracy: read("accuracy")?,
    })
}

/// Trained, untempered models.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    /// General model, trained on full sequences of the general and target sets.
    pub l: NGramModel,
    /// Guide, trained on random suffixes of target-domain sequences.
    pub g: NGramModel,
    /// Guide variant trained on full target-domain sequences.
    pub g_full: NGramModel,
}

const MODEL_FILES: [&str; 3] = ["l.json", "g.json", "g_full.json"];

fn full_sequences(vocab: &Vocabulary, items: &[CharTaskItem]) -> domcert::Result<Vec<Sequence>> {
    items.iter().map(|it| it.to_sequence(vocab)).collect()
}

/// Per item: the answer (`s_out EOS`) and `per_item` suffixes starting at
/// uniformly drawn positions, each ending in EOS. The guide scores responses
/// that begin mid-sequence, so it is trained on such fragments.
pub fn suffix_corpus(vocab: &Vocabulary, items: &[CharTaskItem], per_item: usize, seed: u64) -> domcert::Result<Vec<Sequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(items.len() * (per_item + 1));
    for it in items {
        let seq = it.to_sequence(vocab)?;
        out.push(it.question_answer(vocab)?.1);
        for _ in 0..per_item {
            let start = rng.random_range(0..seq.len() - 1);
            out.push(Sequence::from(&seq[start..]));
        }
    }
    Ok(out)
}

pub fn train_models(cfg: &ExperimentConfig, ds: &Datasets) -> StageResult<Models> {
    let vocab = chartask::vocabulary();
    let m = &cfg.models;
    let target = full_sequences(&vocab, &ds.target.train).stage("train")?;
    let mut general = full_sequences(&vocab, &ds.general.train).stage("train")?;
    general.extend(target.iter().cloned());
    let suffixes = suffix_corpus(&vocab, &ds.target.train, m.g_suffixes_per_item, cfg.derive_seed("train.g"))
        .stage("train")?;
    Ok(Models {
        l: train_ngram(&vocab, &general, m.l_order, m.alpha).stage("train")?,
        g: train_ngram(&vocab, &suffixes, m.g_order, m.alpha).stage("train")?,
        g_full: train_ngram(&vocab, &target, m.g_order, m.alpha).stage("train")?,
    })
}

pub fn write_models(dir: &Path, models: &Models) -> StageResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for (name, model) in MODEL_FILES.iter().zip([&models.l, &models.g, &models.g_full]) {
        let text = model.to_json().stage("train")?;
        files.push(write_text(dir, Path::new(MODEL_DIR).join(name), &text, "train")?);
    }
    Ok(files)
}

pub fn read_models(dir: &Path) -> StageResult<Models> {
    let load = |name: &str| NGramModel::load(dir.join(MODEL_DIR).join(name)).stage("read-models");
    Ok(Models { l: load(MODEL_FILES[0])?, g: load(MODEL_FILES[1])?, g_full: load(MODEL_FILES[2])? })
}

/// Models at their inference temperatures.
pub struct Inference<'a> {
    pub l: Tempered<&'a NGramModel>,
    pub g: Tempered<&'a NGramModel>,
    pub g_full: Tempered<&'a NGramModel>,
}

pub fn inference_models<'a>(cfg: &ExperimentConfig, models: &'a Models) -> StageResult<Inference<'a>> {
    let m = &cfg.models;
    Ok(Inference {
        l: apply_temperature(&models.l, m.l_temperature).stage("models")?,
        g: apply_temperature(&models.g, m.g_temperature).stage("models")?,
        g_full: apply_temperature(&models.g_full, m.g_temperature).stage("models")?,
    })
}

/// Prompt/response pairs: target-domain test items labelled in-domain,
/// out-of-domain test items labelled out-of-domain. Items whose prompt is
/// longer than the configured share of the sequence are left out.
pub fn eval_items(cfg: &ExperimentConfig, ds: &Datasets) -> StageResult<Vec<EvalItem>> {
    let vocab = chartask::vocabulary();
    let p = cfg.eval.prompt_len;
    let mut out = Vec::new();
    for (label, prefix, items) in
        [(Label::InDomain, "T", &ds.target.test), (Label::OutOfDomain, "F", &ds.ood.test)]
    {
        for (i, it) in items.iter().enumerate() {
            let n = it.flat().len();
            if p as f64 > cfg.eval.max_prompt_fraction * n as f64 || p >= n {
                continue;
            }
            let (x, y) = it.split_at(&vocab, p).stage("evaluate")?;
            out.push(EvalItem { id: format!("{prefix}{i:05}"), label, x, y });
        }
    }
    Ok(out)
}

/// Out-of-domain responses, the forbidden set for certification.
pub fn forbidden_set(items: &[EvalItem]) -> Vec<CertItem> {
    items.iter().filter(|it| it.label == Label::OutOfDomain).map(|it| CertItem::new(it.id.clone(), it.y.clone())).collect()
}

pub fn evaluate(cfg: &ExperimentConfig, inf: &Inference<'_>, items: &[EvalItem]) -> StageResult<Vec<EvalRecord>> {
    let eval = batch_evaluate(&inf.l, &inf.g, &cfg.valid.k, items, false).stage("evaluate")?;
    if !eval.skipped.is_empty() {
        log::warn!("{} items skipped during evaluation", eval.skipped.len());
    }
    Ok(eval.records)
}

pub fn write_records(dir: &Path, records: &[EvalRecord]) -> StageResult<PathBuf> {
    let mut buf = Vec::new();
    write_records_csv(&mut buf, records).stage("evaluate")?;
    write_text(dir, RECORDS_FILE, &String::from_utf8(buf).expect("csv is utf-8"), "evaluate")
}

pub fn read_records(path: &Path) -> StageResult<Vec<EvalRecord>> {
    let file = std::fs::File::open(path).stage("read-records")?;
    read_records_csv(file).stage("read-records")
}

/// Guide scores of the forbidden set, taken from the evaluation records.
pub fn forbidden_scores(records: &[EvalRecord]) -> Vec<GuideScore> {
    records
        .iter()
        .filter(|r| r.label == Label::OutOfDomain)
        .map(|r| GuideScore { id: r.id.clone(), n_y: r.n_y, log2_g: r.log_g })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolvedKReport {
    pub eps: f64,
    pub log2_eps: f64,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(flatten)]
    pub solved: SolvedK,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationOutput {
    pub certificates: Vec<CertificateReport>,
    pub solved_k: Vec<SolvedKReport>,
}

/// Domain certificates over the `(k, T)` grid and `k` solved for each target
/// epsilon.
pub fn certify(cfg: &ExperimentConfig, records: &[EvalRecord], d_f: &[CertItem]) -> StageResult<CertificationOutput> {
    let scores = forbidden_scores(records);
    let fingerprint = dataset_fingerprint(d_f);
    let mut certificates = Vec::new();
    for &t in &cfg.valid.t {
        for &k in &cfg.valid.k {
            let dc = domain_certificate_from_scores(&scores, k, t, cfg.eval.robust_quantile, fingerprint.clone())
                .stage("certify")?;
            certificates.push(dc.report());
        }
    }
    let mut solved_k = Vec::new();
    for &t in &cfg.valid.t {
        for &eps in &cfg.eval.eps {
            let solved =
                solve_k_for_log2_epsilon(&scores, t, eps.log2(), cfg.eval.robust_quantile, cfg.eval.k_floor)
                    .stage("certify")?;
            solved_k.push(SolvedKReport { eps, log2_eps: eps.log2(), t, solved });
        }
    }
    Ok(CertificationOutput { certificates, solved_k })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    #[serde(rename = "T")]
    pub t: usize,
    pub file: PathBuf,
    pub best_k: Option<f64>,
    pub best_j: Option<f64>,
    pub targets: Vec<TargetFrr>,
    pub warnings: Vec<String>,
}

pub fn sweep(dir: &Path, cfg: &ExperimentConfig, records: &[EvalRecord]) -> StageResult<(Vec<PathBuf>, Vec<SweepSummary>)> {
    let grid = default_k_grid(records, cfg.valid.sweep_points).stage("sweep")?;
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    for &t in &cfg.valid.t {
        let s = frr_trr_sweep(records, &grid, t).stage("sweep")?;
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &s).stage("sweep")?;
        let file = write_text(dir, format!("sweep_T{t}.csv"), &String::from_utf8(buf).expect("utf-8"), "sweep")?;
        let best = s.best_j();
        summaries.push(SweepSummary {
            t,
            file: file.clone(),
            best_k: best.map(|p| p.k),
            best_j: best.and_then(|p| p.j),
            targets: s.targets.clone(),
            warnings: s.warnings.clone(),
        });
        files.push(file);
    }
    files.push(write_text(dir, "sweep_summary.json", &to_json(&summaries), "sweep")?);
    Ok((files, summaries))
}

/// eCDF and histogram series for one label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSeries {
    pub norm_ratio_bits: SeriesBundle,
    /// `log10` atomic certificate at the reference `(k, T)`.
    pub log10_certificate: SeriesBundle,
    pub log10_constriction: SeriesBundle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcdfReport {
    pub k: f64,
    #[serde(rename = "T")]
    pub t: usize,
    /// The constriction baseline is the non-adversarial `L(y|x)`, so these
    /// values understate how much the meta-model constricts.
    pub note: String,
    pub in_domain: Option<LabelSeries>,
    pub out_of_domain: Option<LabelSeries>,
}

/// Distribution summaries at the first configured `(k, T)`.
pub fn ecdf_report(cfg: &ExperimentConfig, records: &[EvalRecord]) -> StageResult<EcdfReport> {
    let k = cfg.valid.k.first().copied().unwrap_or(0.0);
    let t = cfg.valid.t[0];
    let series = |label: Label| -> StageResult<Option<LabelSeries>> {
        let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.label == label).collect();
        if rs.is_empty() {
            return Ok(None);
        }
        let mut ratio = Vec::new();
        let mut cert = Vec::new();
        let mut cr = Vec::new();
        for r in rs {
            let ac = domcert::certificates::AtomicCertificate::from_parts(k, t, r.n_y, r.log_g).stage("ecdf")?;
            ratio.push(r.norm_ratio);
            cert.push(ac.log2_eps * std::f64::consts::LOG10_2);
            cr.push(constriction_ratio(LogProb(r.log_l), &ac).log10_cr);
        }
        let bins = cfg.eval.histogram_bins;
        Ok(Some(LabelSeries {
            norm_ratio_bits: ecdf_and_histograms(&ratio, bins).stage("ecdf")?,
            log10_certificate: ecdf_and_histograms(&cert, bins).stage("ecdf")?,
            log10_constriction: ecdf_and_histograms(&cr, bins).stage("ecdf")?,
        }))
    };
    Ok(EcdfReport {
        k,
        t,
        note: "constriction uses L(y|x) at the observed prompt as the baseline; it is a lower bound".into(),
        in_domain: series(Label::InDomain)?,
        out_of_domain: series(Label::OutOfDomain)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub config_hash: String,
    pub n_records: usize,
    pub certification: CertificationOutput,
    pub sweeps: Vec<SweepSummary>,
    pub bench: BenchAtEpsResult,
    pub accuracy: AccuracyTable,
}

/// Runs every stage and writes the bundle, including a manifest with the
/// config hash and per-file checksums, to `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> StageResult<RunSummary> {
    cfg.validate().stage("config")?;
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).stage("setup")?;
    let mut files = vec![write_text(dir, CONFIG_FILE, &cfg.to_toml(), "setup")?];

    let ds = generate_data(cfg)?;
    files.extend(write_datasets(dir, cfg, &ds)?);
    let models = train_models(cfg, &ds)?;
    files.extend(write_models(dir, &models)?);
    let inf = inference_models(cfg, &models)?;

    let items = eval_items(cfg, &ds)?;
    let records = evaluate(cfg, &inf, &items)?;
    files.push(write_records(dir, &records)?);

    let d_f = forbidden_set(&items);
    let certification = certify(cfg, &records, &d_f)?;
    files.push(write_text(dir, CERTIFICATES_FILE, &to_json(&certification.certificates), "certify")?);
    files.push(write_text(dir, SOLVED_K_FILE, &to_json(&certification.solved_k), "certify")?);

    let (sweep_files, sweeps) = sweep(dir, cfg, &records)?;
    files.extend(sweep_files);
    files.push(write_text(dir, ECDF_FILE, &to_json(&ecdf_report(cfg, &records)?), "ecdf")?);

    let bench = run_bench(cfg, &inf, &ds, &records)?;
    files.push(write_text(dir, BENCH_FILE, &to_json(&bench), "bench-at-eps")?);
    let accuracy = run_accuracy(cfg, &models, &ds)?;
    files.push(write_text(dir, ACCURACY_FILE, &to_json(&accuracy), "accuracy")?);

    let manifest = Manifest::build(dir, cfg, &files).stage("manifest")?;
    manifest.write(dir).stage("manifest")?;
    Ok(RunSummary {
        output_dir: dir.to_path_buf(),
        config_hash: cfg.hash(),
        n_records: records.len(),
        certification,
        sweeps,
        bench,
        accuracy,
    })
}

pub fn run_bench(
    cfg: &ExperimentConfig,
    inf: &Inference<'_>,
    ds: &Datasets,
    records: &[EvalRecord],
) -> StageResult<BenchAtEpsResult> {
    bench_at_epsilon(
        &inf.l,
        &inf.g,
        &forbidden_scores(records),
        cfg.bench.t,
        &cfg.bench.eps,
        &ds.bench.test,
        cfg.valid.max_response_len,
        cfg.eval.robust_quantile,
        cfg.eval.k_floor,
    )
    .stage("bench-at-eps")
}

/// Valid-sequence comparison at the generation temperatures.
pub fn run_accuracy(cfg: &ExperimentConfig, models: &Models, ds: &Datasets) -> StageResult<AccuracyTable> {
    let m = &cfg.models;
    let l = apply_temperature(&models.l, m.l_generation_temperature).stage("accuracy")?;
    let g_full = apply_temperature(&models.g_full, m.g_generation_temperature).stage("accuracy")?;
    compare_g_vs_l_accuracy(
        &l,
        &g_full,
        &cfg.bench.accuracy_prompt_lengths,
        &ds.accuracy.test,
        cfg.valid.max_response_len,
        cfg.derive_seed("accuracy"),
    )
    .stage("accuracy")
}
