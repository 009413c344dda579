//! Subcommand implementations behind the `cngan` binary.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cngan::data::{read_dataset, synthesize_dataset, write_dataset, Dataset};
use cngan::eval::{evaluate_baselines, Aggregate, EvalReport};
use cngan::train::{
    evaluate_bundle, load_checkpoint, save_checkpoint, test_intervals, EpochTrace, OnlineTrace, TrainConfig, Trainer,
    Variant,
};
use sha2::{Digest, Sha256};

pub use config::RunConfig;

pub const CONFIG_FILE: &str = "config.txt";
pub const SEED_FILE: &str = "seed.txt";
pub const FINGERPRINT_FILE: &str = "dataset.sha256";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const REPORT_FILE: &str = "report.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const OFFLINE_TRACE_FILE: &str = "loss_offline.csv";
pub const ONLINE_TRACE_FILE: &str = "loss_online.csv";
pub const ACCESS_LOG_FILE: &str = "access.jsonl";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.txt";

/// Process exit status for a failed command: 2 for numerical blow-up, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<cngan::Error>())
        .any(cngan::Error::is_numerical);
    if numerical {
        2
    } else {
        1
    }
}

pub fn fingerprint(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn check_target(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} already exists (pass --force to overwrite)", path.display());
    }
    Ok(())
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
fn prepare_run_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.is_file() {
        bail!("{} is a file, expected a run directory", dir.display());
    }
    if dir.exists() && !force && fs::read_dir(dir)?.next().is_some() {
        bail!("{} is not empty (pass --force to overwrite)", dir.display());
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_provenance(dir: &Path, cfg: &RunConfig, dataset_hash: &str, dataset_path: &Path) -> Result<()> {
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    fs::write(dir.join(SEED_FILE), format!("{}\n", cfg.seed))?;
    fs::write(dir.join(FINGERPRINT_FILE), format!("{dataset_hash}  {}\n", dataset_path.display()))?;
    Ok(())
}

fn load_dataset_bytes(path: &Path) -> Result<(Dataset, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading dataset {}", path.display()))?;
    let ds = read_dataset(bytes.as_slice()).with_context(|| format!("parsing dataset {}", path.display()))?;
    Ok((ds, fingerprint(&bytes)))
}

pub struct SynthSummary {
    pub users: usize,
    pub overlapped: usize,
    pub items: usize,
    pub intervals: usize,
    pub topics: usize,
    pub interactions: usize,
    pub fingerprint: String,
}

impl std::fmt::Display for SynthSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "U={} ({} overlapped) M={} T={} K_t={} interactions={} sha256={}",
            self.users, self.overlapped, self.items, self.intervals, self.topics, self.interactions, self.fingerprint
        )
    }
}

fn synthesize_bytes(cfg: &RunConfig) -> Result<(Dataset, Vec<u8>)> {
    cfg.synth.validate()?;
    let ds = synthesize_dataset(&cfg.synth, cfg.seed)?.dataset;
    let mut bytes = Vec::new();
    write_dataset(&ds, &mut bytes)?;
    Ok((ds, bytes))
}

fn summary(ds: &Dataset, hash: String) -> SynthSummary {
    SynthSummary {
        users: ds.num_users(),
        overlapped: ds.partition_overlap().0.len(),
        items: ds.num_items,
        intervals: ds.num_intervals,
        topics: ds.num_topics,
        interactions: ds.total_interactions(),
        fingerprint: hash,
    }
}

pub fn synth_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<SynthSummary> {
    check_target(out, force)?;
    let (ds, bytes) = synthesize_bytes(cfg)?;
    fs::write(out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    Ok(summary(&ds, fingerprint(&bytes)))
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

pub fn offline_trace_csv(variant: Variant, trace: &[EpochTrace]) -> String {
    let mut out = String::new();
    if variant.uses_generator() {
        out.push_str("epoch,d_loss,g_loss,content_loss,mapping_l1,r_loss\n");
        for e in trace {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                opt(e.d_loss),
                opt(e.g_loss),
                opt(e.content_loss),
                opt(e.mapping_l1),
                opt(e.r_loss)
            )
            .unwrap();
        }
    } else {
        out.push_str("epoch,r_loss\n");
        for e in trace {
            writeln!(out, "{},{}", e.epoch, opt(e.r_loss)).unwrap();
        }
    }
    out
}

pub fn online_trace_csv(variant: Variant, trace: &[OnlineTrace]) -> String {
    let mut out = String::new();
    if variant.uses_generator() {
        out.push_str("interval,iteration,d_loss,g_loss,content_loss,mapping_l1,r_loss\n");
        for o in trace {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                o.interval,
                o.iteration,
                opt(o.d_loss),
                opt(o.g_loss),
                opt(o.content_loss),
                opt(o.mapping_l1),
                opt(o.r_loss)
            )
            .unwrap();
        }
    } else {
        out.push_str("interval,iteration,r_loss\n");
        for o in trace {
            writeln!(out, "{},{},{}", o.interval, o.iteration, opt(o.r_loss)).unwrap();
        }
    }
    out
}

fn write_traces(dir: &Path, t: &Trainer<'_>) -> Result<()> {
    let v = t.config.variant;
    fs::write(dir.join(OFFLINE_TRACE_FILE), offline_trace_csv(v, &t.offline_trace))?;
    fs::write(dir.join(ONLINE_TRACE_FILE), online_trace_csv(v, &t.online_trace))?;
    Ok(())
}

fn write_reports(dir: &Path, report: &EvalReport) -> Result<()> {
    report.write_csv(fs::File::create(dir.join(REPORT_FILE))?)?;
    report.write_aggregates_csv(fs::File::create(dir.join(AGGREGATE_FILE))?)?;
    Ok(())
}

fn write_access_log(dir: &Path, t: &Trainer<'_>) -> Result<()> {
    let mut out = String::new();
    for a in t.access_log() {
        out.push_str(&serde_json_line(&a));
    }
    fs::write(dir.join(ACCESS_LOG_FILE), out)?;
    Ok(())
}

fn serde_json_line(a: &cngan::train::Access) -> String {
    use cngan::train::{Access, Field};
    let field = |f: Field| match f {
        Field::Target => "target",
        Field::Source => "source",
        Field::Interactions => "interactions",
    };
    match *a {
        Access::Read { field: f, interval } => {
            format!("{{\"kind\":\"read\",\"field\":\"{}\",\"interval\":{interval}}}\n", field(f))
        }
        Access::Predict { interval } => format!("{{\"kind\":\"predict\",\"interval\":{interval}}}\n"),
        Access::Truth { interval } => format!("{{\"kind\":\"truth\",\"interval\":{interval}}}\n"),
    }
}

pub struct TrainOutcome {
    pub dir: PathBuf,
    pub aggregates: Vec<Aggregate>,
}

/// Trains one variant end to end. Without `data`, a dataset is synthesized
/// from the configuration and stored in the run directory.
pub fn train(cfg: &RunConfig, data: Option<&Path>, out: &Path, force: bool) -> Result<TrainOutcome> {
    let (ds, hash, data_path) = match data {
        Some(p) => {
            let (ds, hash) = load_dataset_bytes(p)?;
            (ds, hash, p.to_path_buf())
        }
        None => {
            let (ds, bytes) = synthesize_bytes(cfg)?;
            prepare_run_dir(out, force)?;
            let p = out.join(DATASET_FILE);
            fs::write(&p, &bytes)?;
            (ds, fingerprint(&bytes), p)
        }
    };
    cfg.train.validate(ds.num_intervals)?;
    prepare_run_dir(out, force || data.is_none())?;
    write_provenance(out, cfg, &hash, &data_path)?;

    let mut trainer = Trainer::new(&ds, cfg.train.clone())?;
    trainer.record_access();
    let result = (|| -> cngan::Result<()> {
        while trainer.step()? {}
        Ok(())
    })();
    write_traces(out, &trainer)?;
    write_access_log(out, &trainer)?;
    if let Err(e) = result {
        if e.is_numerical() {
            write_diagnostic(out, &trainer, &e)?;
        }
        return Err(anyhow!(e)).context(format!("training stopped; partial traces are in {}", out.display()));
    }
    save_checkpoint(&trainer.checkpoint(), &out.join(CHECKPOINT_FILE))?;
    write_reports(out, &trainer.report)?;
    Ok(TrainOutcome {
        dir: out.to_path_buf(),
        aggregates: trainer.report.aggregates(),
    })
}

fn write_diagnostic(dir: &Path, t: &Trainer<'_>, err: &cngan::Error) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "error: {err}").unwrap();
    writeln!(out, "variant: {}", t.config.variant).unwrap();
    writeln!(out, "position: {:?}", t.cursor).unwrap();
    writeln!(out, "parameters finite: {}", t.bundle.all_finite()).unwrap();
    if let Some(e) = t.offline_trace.last() {
        writeln!(out, "last offline epoch: {e:?}").unwrap();
    }
    if let Some(o) = t.online_trace.last() {
        writeln!(out, "last online iteration: {o:?}").unwrap();
    }
    fs::write(dir.join(DIAGNOSTIC_FILE), out)?;
    Ok(())
}

/// Settings that may differ between training and evaluation.
fn model_part(t: &TrainConfig) -> TrainConfig {
    TrainConfig {
        top_n: Vec::new(),
        exclude_prev: true,
        seed: 0,
        ..t.clone()
    }
}

/// Evaluates a stored checkpoint on the test window, with TimePop and TBKNN
/// rows for the same users. `overrides` may only touch evaluation settings.
pub fn evaluate(
    overrides: &dyn Fn(&mut RunConfig) -> Result<()>,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    force: bool,
) -> Result<Vec<Aggregate>> {
    let ckpt = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut cfg = RunConfig {
        seed: ckpt.config.seed,
        train: ckpt.config.clone(),
        ..RunConfig::default()
    };
    overrides(&mut cfg)?;
    cfg.seed = ckpt.config.seed;
    cfg.train.seed = ckpt.config.seed;
    if model_part(&cfg.train) != model_part(&ckpt.config) {
        bail!("only top_n, exclude_prev and tbknn_k can change at evaluation time; other training keys come from the checkpoint");
    }
    let (ds, hash) = load_dataset_bytes(data)?;
    let mut report = evaluate_bundle(&ds, &ckpt.bundle, &cfg.train)?;
    let (overlapped, non_overlapped) = ds.partition_overlap();
    let population = if cfg.variant() == Variant::NubprO { overlapped } else { non_overlapped };
    report.extend(evaluate_baselines(
        &ds,
        test_intervals(ds.num_intervals, &cfg.train),
        &cfg.train.top_n,
        &population,
        &cfg.tbknn_k,
    )?);
    prepare_run_dir(out, force)?;
    write_provenance(out, &cfg, &hash, data)?;
    write_reports(out, &report)?;
    Ok(report.aggregates())
}

pub struct Comparison {
    pub rows: Vec<Aggregate>,
    /// Distinct dataset fingerprints found next to the inputs.
    pub fingerprints: Vec<String>,
    /// Inputs without a fingerprint file beside them.
    pub unfingerprinted: usize,
}

fn report_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(REPORT_FILE)
    } else {
        input.to_path_buf()
    }
}

/// Pools the rows of every input report and aggregates per (variant, N),
/// sorted by N and then by descending HR.
pub fn compare(inputs: &[PathBuf]) -> Result<Comparison> {
    if inputs.is_empty() {
        bail!("report needs at least one input");
    }
    let mut pooled = EvalReport::default();
    let mut fingerprints: Vec<String> = Vec::new();
    let mut unfingerprinted = 0;
    for input in inputs {
        let path = report_path(input);
        let f = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let r = EvalReport::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
        if r.rows.is_empty() {
            bail!("{} has no rows", path.display());
        }
        pooled.extend(r);
        let fp = path.parent().map(|d| d.join(FINGERPRINT_FILE));
        match fp.and_then(|p| fs::read_to_string(p).ok()) {
            Some(text) => {
                let hash = text.split_whitespace().next().unwrap_or("").to_string();
                if !fingerprints.contains(&hash) {
                    fingerprints.push(hash);
                }
            }
            None => unfingerprinted += 1,
        }
    }
    let mut rows = pooled.aggregates();
    rows.sort_by(|a, b| a.n.cmp(&b.n).then(b.hr.total_cmp(&a.hr)).then(a.variant.cmp(&b.variant)));
    Ok(Comparison {
        rows,
        fingerprints,
        unfingerprinted,
    })
}

pub fn comparison_csv(rows: &[Aggregate]) -> String {
    let mut out = String::from(cngan::eval::AGGREGATE_HEADER);
    out.push('\n');
    for a in rows {
        writeln!(out, "{},{},{},{},{},{},{}", a.variant, a.n, a.rows, a.hr, a.ndcg, a.novelty, a.diversity).unwrap();
    }
    out
}

pub fn comparison_table(rows: &[Aggregate]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<10} {:>4} {:>7} {:>8} {:>8} {:>8} {:>9}",
        "variant", "N", "rows", "HR", "NDCG", "novelty", "diversity"
    )
    .unwrap();
    for a in rows {
        writeln!(
            out,
            "{:<10} {:>4} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>9.4}",
            a.variant, a.n, a.rows, a.hr, a.ndcg, a.novelty, a.diversity
        )
        .unwrap();
    }
    out
}

/// Writes `summary.csv` and `summary.txt` into `out`.
pub fn write_comparison(c: &Comparison, out: &Path, force: bool) -> Result<()> {
    prepare_run_dir(out, force)?;
    fs::write(out.join("summary.csv"), comparison_csv(&c.rows))?;
    fs::write(out.join("summary.txt"), comparison_table(&c.rows))?;
    Ok(())
}
