use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use msclr::config::{Preset, RunConfig};
use msclr::conventions::ConventionRegistry;
use msclr::dataio::{check_dataset, generate_synthetic_dataset, read_dataset, write_dataset, SequenceRecord, Stream, SyntheticSpec};
use msclr::evalkit::{evaluate, per_class_diff, train_linear, EnsembleOrder, EvalReport, FrozenEncoder, LinearHead, LinearSchedule};
use msclr::pretrain::{checkpoint_id, format_pairs, iterations_per_epoch, pretrain_run, Checkpoint};

use crate::exit::Invalid;
use crate::svg::diff_chart;
use crate::ConfigArgs;

pub fn make_synthetic(out: &Path, classes: usize, per_class: usize, seed: u64, test_every: usize) -> Result<()> {
    if classes < 2 {
        bail!(Invalid(format!("--classes must be at least 2, got {classes}")));
    }
    if per_class == 0 {
        bail!(Invalid("--per-class must be positive".into()));
    }
    let registry = ConventionRegistry::builtin();
    let mut spec = SyntheticSpec::new(classes, per_class);
    spec.test_every = test_every;
    let records = generate_synthetic_dataset(&spec, &registry, seed);
    let manifest = write_dataset(&records, out)?;
    log::info!("wrote {} records in {} formats", records.len(), registry.len());
    println!("{}", manifest.display());
    Ok(())
}

/// Preset or file, then flag overrides, then `--set` overrides.
fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), None) => RunConfig::load(path)?,
        (Some(path), Some(p)) => {
            let mut c = RunConfig::load(path)?;
            if c.preset != p.parse::<Preset>()? {
                bail!(Invalid(format!("--preset {p} conflicts with preset `{}` in {}", c.preset, path.display())));
            }
            c.preset = p.parse()?;
            c
        }
        (None, Some(p)) => RunConfig::preset(p.parse()?),
        (None, None) => RunConfig::default(),
    };
    if let Some(d) = &args.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(f) = &args.formats {
        cfg.formats = f.clone();
        cfg.eval_formats.retain(|e| f.contains(e));
    }
    if let Some(s) = &args.streams {
        cfg.streams = s.clone();
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(seed) = args.seed {
        cfg.pretrain.seed = seed;
    }
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn registry_for(cfg: &RunConfig) -> Result<ConventionRegistry> {
    let registry = cfg.registry()?;
    cfg.validate(&registry)?;
    Ok(registry)
}

fn load_records(cfg: &RunConfig, registry: &ConventionRegistry) -> Result<Vec<SequenceRecord>> {
    let path = cfg.dataset_path().ok_or_else(|| Invalid("no dataset configured (use --dataset)".into()))?;
    Ok(read_dataset(&path, registry)?)
}

fn split(records: &[SequenceRecord], name: &str) -> Result<Vec<SequenceRecord>> {
    let out: Vec<SequenceRecord> = records.iter().filter(|r| r.split == name).cloned().collect();
    if out.is_empty() {
        bail!(Invalid(format!("split `{name}` has no records")));
    }
    Ok(out)
}

fn checkpoint_path(cfg: &RunConfig, stream: Stream) -> PathBuf {
    cfg.output_dir.join(format!("checkpoint-{stream}.msck"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn pretrain(args: &ConfigArgs, epochs: Option<usize>, dry_run: bool) -> Result<()> {
    let mut cfg = load_config(args)?;
    if let Some(e) = epochs {
        cfg.pretrain.epochs = e;
    }
    let registry = registry_for(&cfg)?;
    if dry_run {
        let records = match cfg.dataset_path() {
            Some(_) => Some(split(&load_records(&cfg, &registry)?, &cfg.train_split)?.len()),
            None => None,
        };
        println!("{}", serde_json::to_string_pretty(&cfg.schedule(records))?);
        return Ok(());
    }
    let records = split(&load_records(&cfg, &registry)?, &cfg.train_split)?;
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    write_text(&cfg.output_dir.join("config.toml"), &cfg.to_toml_string())?;

    let pairs = format_pairs(&cfg.formats);
    let iters = iterations_per_epoch(records.len(), pairs.len(), cfg.pretrain.batch_size.min(records.len()));
    println!("records: {}  format pairs: {}  iterations per epoch: {iters}", records.len(), pairs.len());
    for &stream in &cfg.streams {
        let mut pcfg = cfg.pretrain.clone();
        pcfg.stream = stream;
        let log_path = cfg.output_dir.join(format!("train-{stream}.jsonl"));
        let mut log_file = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
        let start = serde_json::json!({
            "event": "start",
            "stream": stream,
            "formats": cfg.formats,
            "records": records.len(),
            "format_pairs": pairs.len(),
            "iterations_per_epoch": iters,
            "epochs": pcfg.epochs,
            "seed": pcfg.seed,
            "augmentation_seed": pcfg.augmentation.seed,
        });
        writeln!(log_file, "{start}")?;
        let mut write_err = None;
        let checkpoint = pretrain_run(&records, &registry, &cfg.formats, &pcfg, &mut |entry| {
            if entry.step % iters.max(1) == 0 {
                log::info!("[{stream}] epoch {} step {} loss {:.4} lr {}", entry.epoch, entry.step, entry.loss, entry.lr);
            }
            if write_err.is_none() {
                if let Err(e) = writeln!(log_file, "{}", serde_json::to_string(entry).expect("log entry serializes")) {
                    write_err = Some(e);
                }
            }
        })?;
        if let Some(e) = write_err {
            return Err(e).with_context(|| format!("writing {}", log_path.display()));
        }
        let path = checkpoint_path(&cfg, stream);
        checkpoint.write(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

pub struct EvalArgs {
    pub cfg: ConfigArgs,
    pub checkpoints: Vec<PathBuf>,
    pub eval_formats: Option<Vec<String>>,
    pub ensemble: bool,
    pub order: Option<EnsembleOrder>,
    pub split: Option<String>,
    pub report: Option<PathBuf>,
    pub plot: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
}

/// Report file: the evaluation plus what is needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub preset: Preset,
    pub pretrain_seed: u64,
    pub augmentation_seed: u64,
    pub linear: LinearSchedule,
    pub report: EvalReport,
}

fn read_report(path: &Path) -> Result<ReportFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Invalid(format!("{} is not a report: {e}", path.display())).into())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut cfg = load_config(&args.cfg)?;
    if let Some(f) = &args.eval_formats {
        cfg.eval_formats = f.clone();
    }
    if args.ensemble {
        cfg.eval.ensemble = true;
    }
    if let Some(o) = args.order {
        cfg.eval.order = o;
    }
    if let Some(s) = &args.split {
        cfg.eval.split = s.clone();
    }
    if args.plot.is_some() && args.baseline.is_none() {
        bail!(Invalid("--plot needs --baseline".into()));
    }
    let baseline = args.baseline.as_deref().map(read_report).transpose()?;

    let checkpoint_paths: Vec<PathBuf> = if args.checkpoints.is_empty() {
        cfg.streams.iter().map(|&s| checkpoint_path(&cfg, s)).collect()
    } else {
        args.checkpoints.clone()
    };
    let mut frozen = Vec::new();
    let mut pretrain_seed = cfg.pretrain.seed;
    let mut augmentation_seed = cfg.pretrain.augmentation.seed;
    for path in &checkpoint_paths {
        let ck = Checkpoint::read(path)?;
        ck.verify_adjacency(&cfg.registry()?)?;
        pretrain_seed = ck.header.config.seed;
        augmentation_seed = ck.header.config.augmentation.seed;
        if frozen.iter().any(|f: &FrozenEncoder| f.stream == ck.header.config.stream) {
            bail!(Invalid(format!("two checkpoints for stream `{}`", ck.header.config.stream)));
        }
        frozen.push(FrozenEncoder::from_checkpoint(&ck, checkpoint_id(path)?));
    }
    // the checkpoints decide which formats were pretrained
    cfg.formats = frozen[0].formats.clone();
    cfg.streams = frozen.iter().map(|f| f.stream).collect();
    let registry = registry_for(&cfg)?;
    let records = load_records(&cfg, &registry)?;
    let train = split(&records, &cfg.train_split)?;
    let test = split(&records, &cfg.eval.split)?;

    let mut heads: Vec<(&FrozenEncoder, LinearHead)> = Vec::new();
    let mut requested = Vec::new();
    for f in &frozen {
        for format in cfg.eval_formats() {
            let head = train_linear(f, &train, format, &registry, &cfg.linear)?;
            log::info!("[{}] {format}: linear probe loss {:.4}", f.stream, head.final_loss);
            requested.push((f.stream, format.clone()));
            heads.push((f, head));
        }
    }
    let cells: Vec<_> = heads.iter().map(|(f, h)| (*f, h)).collect();
    let report = evaluate(&cells, &requested, &test, &registry, &cfg.eval)?;
    let file = ReportFile {
        preset: cfg.preset,
        pretrain_seed,
        augmentation_seed,
        linear: cfg.linear.clone(),
        report,
    };
    let out = args.report.clone().unwrap_or_else(|| cfg.output_dir.join("report.json"));
    write_text(&out, &(serde_json::to_string_pretty(&file)? + "\n"))?;
    print_report(&file.report);
    if let (Some(plot), Some(base)) = (&args.plot, &baseline) {
        let diffs = per_class_diff(file.report.headline(), base.report.headline())?;
        write_text(plot, &diff_chart(&diffs, "per-class top-1 difference"))?;
        println!("{}", plot.display());
    }
    println!("{}", out.display());
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("split {}: {} samples, {} classes", r.split, r.samples, r.classes);
    for c in &r.cells {
        println!("  {:<7} {:<14} top-1 {:.4}", c.stream.as_str(), c.format, c.result.accuracy);
    }
    for f in &r.fused {
        println!("  fused   {:<14} top-1 {:.4}", f.format, f.result.accuracy);
    }
    if let Some(e) = &r.ensemble {
        for (s, a) in &e.streams {
            println!("  {:<7} {:<14} top-1 {:.4}", s.as_str(), "ensemble", a.accuracy);
        }
        if let Some(a) = &e.fused {
            println!("  fused   {:<14} top-1 {:.4}", "ensemble", a.accuracy);
        }
    }
}

pub fn validate(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let registry = registry_for(&cfg)?;
    let Some(path) = cfg.dataset_path() else {
        println!("config ok (no dataset configured)");
        return Ok(());
    };
    let findings = check_dataset(&path, &registry, &cfg.formats)?;
    for f in &findings {
        println!("{f}");
    }
    if findings.is_empty() {
        println!("ok: 0 findings");
        Ok(())
    } else {
        bail!(Invalid(format!("{} finding(s) in {}", findings.len(), path.display())))
    }
}

pub fn report(path: &Path, baseline: Option<&Path>, svg: Option<&Path>) -> Result<()> {
    let file = read_report(path)?;
    print_report(&file.report);
    match (baseline, svg) {
        (None, Some(_)) => bail!(Invalid("--svg needs --baseline".into())),
        (None, None) => Ok(()),
        (Some(b), svg) => {
            let base = read_report(b)?;
            let diffs = per_class_diff(file.report.headline(), base.report.headline())?;
            println!("class  delta top-1");
            for d in &diffs {
                println!("{:>5}  {:+.4}", d.class, d.delta);
            }
            if let Some(svg) = svg {
                write_text(svg, &diff_chart(&diffs, "per-class top-1 difference"))?;
                println!("{}", svg.display());
            }
            Ok(())
        }
    }
}
