//! The six commands. Each writes its artifacts and a `manifest.json` under
//! the output directory.

use crate::config::{Config, Source};
use crate::error::{CliError, Context};
use serde::Serialize;
use serde_json::json;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use table2image::attribution::Explainer;
use table2image::data::fetch::sha256_hex;
use table2image::data::{load_csv, preprocess, split, Corpora, ImagePool, OpenMlFetcher, Source as ImageSource, TabularDataset, PIXELS, SIDE};
use table2image::eval::{benchmark_run, config_hash, default_arms, stability_study, AttributionSet, BenchCase, Prepared, RunReport};
use table2image::model::dump::{dump_images, DumpItem};
use table2image::model::{fit, fixed_noise, snapshot, train_reverse, Table2ImageModel};
use table2image::vif::compute_vif;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Explain,
    VifReport,
    Visualize,
    Benchmark,
    Stability,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Explain => "explain",
            Command::VifReport => "vif-report",
            Command::Visualize => "visualize",
            Command::Benchmark => "benchmark",
            Command::Stability => "stability",
        }
    }

    fn reads_snapshot(self) -> bool {
        matches!(self, Command::Explain | Command::Visualize)
    }
}

/// A parsed command line: the command, an optional config file and the
/// flag values in order.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config_file: Option<PathBuf>,
    pub flags: Vec<(String, String)>,
}

/// Keys that describe one invocation rather than the trained model; a
/// snapshot never supplies them.
const INVOCATION_KEYS: &[&str] = &["out", "snapshot", "samples", "visualize_count", "suite", "runs", "stability_instances"];

fn snapshot_path(cfg: &Config, command: Command) -> Result<PathBuf, CliError> {
    let path = PathBuf::from(cfg.get("snapshot"));
    if cfg.get("snapshot").is_empty() {
        return Err(CliError::Precondition(format!("`{}` needs a trained model: pass --snapshot <file>", command.name())));
    }
    if !path.is_file() {
        return Err(CliError::Precondition(format!("snapshot {} does not exist", path.display())));
    }
    Ok(path)
}

fn load_snapshot(path: &Path) -> Result<(Table2ImageModel<f32>, serde_json::Value), CliError> {
    snapshot::load(path).context(|| format!("loading snapshot {}", path.display()))
}

/// Layers defaults, the snapshot's stored config (for commands that read
/// one), the config file and the flags.
pub fn resolve(inv: &Invocation) -> Result<Config, CliError> {
    let layer = |cfg: &mut Config| -> Result<(), CliError> {
        if let Some(file) = &inv.config_file {
            cfg.apply_file(file)?;
        }
        cfg.apply(inv.flags.iter().map(|(k, v)| (k, v)), Source::Flag)
    };
    let mut probe = Config::default();
    layer(&mut probe)?;
    if !inv.command.reads_snapshot() || probe.get("snapshot").is_empty() {
        return Ok(probe);
    }
    let (_, meta) = load_snapshot(&snapshot_path(&probe, inv.command)?)?;
    let stored: Vec<(String, String)> = meta["config"]
        .as_object()
        .map(|m| {
            m.iter()
                .filter(|(k, _)| !INVOCATION_KEYS.contains(&k.as_str()))
                .filter_map(|(k, v)| Some((k.clone(), v.as_str()?.to_string())))
                .collect()
        })
        .unwrap_or_default();
    let mut cfg = Config::default();
    cfg.apply(stored, Source::Snapshot)?;
    layer(&mut cfg)?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct InputFile {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'static str,
    version: &'static str,
    /// SHA-256 of the canonical `key=value` config, output directory excluded.
    config_hash: String,
    config: &'a Config,
    seeds: serde_json::Value,
    inputs: Vec<InputFile>,
    artifacts: Vec<String>,
}

/// Collects what a command read and wrote.
struct Run<'a> {
    command: Command,
    cfg: &'a Config,
    out: PathBuf,
    inputs: Vec<InputFile>,
    artifacts: Vec<String>,
}

impl Run<'_> {
    fn note_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Precondition(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(InputFile { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| io(&path, e))
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("artifact serialises");
        self.write(name, text + "\n")
    }

    fn finish(mut self) -> Result<Vec<String>, CliError> {
        let seeds = json!({
            "split_seed": self.cfg.u64("split_seed"),
            "training": (0..self.cfg.uint("repeats")).map(|r| self.cfg.train_config().run_seed(r)).collect::<Vec<_>>(),
            "eval_noise_seed": self.cfg.u64("eval_noise_seed"),
            "explain_seed": self.cfg.u64("explain_seed"),
        });
        let manifest = Manifest {
            command: self.command.name(),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: sha256_hex(self.cfg.canonical().as_bytes()),
            config: self.cfg,
            seeds,
            inputs: std::mem::take(&mut self.inputs),
            artifacts: self.artifacts.clone(),
        };
        let artifacts = self.artifacts.clone();
        self.write_json("manifest.json", &manifest)?;
        Ok(artifacts)
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core { context: format!("writing {}", path.display()), source: table2image::Error::Io { path: path.to_path_buf(), source: e } }
}

/// Local CSV for a dataset source: a path, or `openml:<id>` fetched through
/// the cache named by `T2I_CACHE_DIR`.
fn resolve_source(source: &str) -> Result<PathBuf, CliError> {
    if let Some(id) = source.strip_prefix("openml:") {
        let id: u64 = id.parse().map_err(|_| CliError::Usage(format!("bad OpenML id in {source:?}")))?;
        return OpenMlFetcher::from_env().fetch(id).context(|| format!("fetching OpenML dataset {id}"));
    }
    let path = PathBuf::from(source);
    if !path.is_file() {
        return Err(CliError::Precondition(format!("dataset {} does not exist", path.display())));
    }
    Ok(path)
}

struct Loaded {
    path: PathBuf,
    full: TabularDataset,
    train: TabularDataset,
    test: TabularDataset,
}

fn load_dataset(cfg: &Config, source: &str, target: &str) -> Result<Loaded, CliError> {
    let path = resolve_source(source)?;
    let target = (!target.is_empty()).then_some(target);
    let raw = load_csv(&path, target).context(|| format!("reading {}", path.display()))?;
    let full = preprocess(&raw).context(|| format!("preprocessing {}", path.display()))?;
    let (train, test) = split(&full, cfg.float("split"), cfg.u64("split_seed")).context(|| "splitting".into())?;
    Ok(Loaded { path, full, train, test })
}

fn load_data(cfg: &Config, run: &mut Run<'_>) -> Result<Loaded, CliError> {
    let loaded = load_dataset(cfg, cfg.required("data", run.command.name())?, cfg.get("target"))?;
    run.note_input(&loaded.path)?;
    Ok(loaded)
}

fn load_pool(cfg: &Config, n_classes: usize) -> Result<ImagePool, CliError> {
    Corpora::in_dir(Path::new(cfg.get("images")))
        .build_pool(n_classes)
        .context(|| format!("building the image pool from {}", cfg.get("images")))
}

fn dataset_name(source: &str) -> String {
    Path::new(source).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| source.to_string())
}

/// Resolves the config, runs the command and writes the manifest.
/// Returns the names of the artifacts written under the output directory.
pub fn dispatch(inv: &Invocation) -> Result<Vec<String>, CliError> {
    let cfg = resolve(inv)?;
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
    let mut run = Run { command: inv.command, cfg: &cfg, out, inputs: Vec::new(), artifacts: Vec::new() };
    match inv.command {
        Command::Train => train(&cfg, &mut run)?,
        Command::Explain => explain(&cfg, &mut run)?,
        Command::VifReport => vif_report(&cfg, &mut run)?,
        Command::Visualize => visualize(&cfg, &mut run)?,
        Command::Benchmark => benchmark(&cfg, &mut run)?,
        Command::Stability => stability(&cfg, &mut run)?,
    }
    run.finish()
}

fn train(cfg: &Config, run: &mut Run<'_>) -> Result<(), CliError> {
    let data = load_data(cfg, run)?;
    let pool = load_pool(cfg, data.full.n_classes)?;
    let tc = cfg.train_config();
    let log_path = run.path("metrics.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io(&log_path, e))?);
    let report = fit(&data.train, &data.test, &pool, &tc, Some(&mut log)).context(|| "training".into())?;
    drop(log);

    let best = report.runs.iter().fold(&report.runs[0], |b, r| if r.best_acc > b.best_acc { r } else { b });
    let meta = json!({
        "config": cfg.values(),
        "run": best.run,
        "seed": best.seed,
        "best_epoch": best.best_epoch,
        "best_acc": best.best_acc,
        "feature_names": data.full.column_names,
        "class_names": data.full.class_names,
    });
    let snap = run.path("snapshot.t2i");
    snapshot::save(&best.model, &meta, &snap).context(|| format!("writing {}", snap.display()))?;

    let summary = RunReport {
        dataset: dataset_name(cfg.get("data")),
        arm: tc.variant.to_string() + if cfg.get("mapping") == "single" { "-single" } else { "" },
        accuracies: report.runs.iter().map(|r| r.best_acc).collect(),
        aucs: report.runs.iter().map(|r| r.best_auc).collect(),
        mean_acc: report.mean_acc,
        mean_auc: report.mean_auc,
        param_count: best.model.param_count(),
        wall_secs: report.runs.iter().map(|r| r.wall_secs).sum(),
        config_hash: config_hash(&tc),
        curves: report.runs.iter().map(|r| r.epochs.clone()).collect(),
    };
    run.write_json("report.json", &summary)?;
    println!(
        "mean accuracy {:.4}, mean AUC {}, best run {} (epoch {}, accuracy {:.4}); epochs are selected on test accuracy, there is no validation split",
        report.mean_acc,
        report.mean_auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into()),
        best.run,
        best.best_epoch,
        best.best_acc
    );
    Ok(())
}

/// The snapshot's model and the dataset it was trained on, checked to agree.
fn model_and_data(cfg: &Config, run: &mut Run<'_>) -> Result<(Table2ImageModel<f32>, Loaded), CliError> {
    let path = snapshot_path(cfg, run.command)?;
    run.note_input(&path)?;
    let (model, _) = load_snapshot(&path)?;
    let data = load_data(cfg, run)?;
    if model.n_features != data.full.n_features || model.n_classes != data.full.n_classes {
        return Err(CliError::Precondition(format!(
            "snapshot expects {} features and {} classes, {} has {} and {}",
            model.n_features,
            model.n_classes,
            data.path.display(),
            data.full.n_features,
            data.full.n_classes
        )));
    }
    Ok((model, data))
}

#[derive(Serialize)]
struct SampleExplanation<'a> {
    sample: usize,
    label: usize,
    #[serde(flatten)]
    explanation: &'a table2image::attribution::Explanation,
}

fn explain(cfg: &Config, run: &mut Run<'_>) -> Result<(), CliError> {
    let (model, data) = model_and_data(cfg, run)?;
    let samples = cfg.samples();
    if let Some(&bad) = samples.iter().find(|&&s| s >= data.test.n_rows()) {
        return Err(CliError::Usage(format!("sample {bad} out of range: the test split has {} rows", data.test.n_rows())));
    }
    let (reverse, _) = train_reverse(&model, &data.train, cfg.u64("eval_noise_seed"), &cfg.reverse_config())
        .context(|| "training the reverse reconstructor".into())?;
    let explainer = Explainer::new(&model, &reverse, &data.train, cfg.explain_config()).context(|| "preparing the explainer".into())?;

    let names = &data.full.column_names;
    let mut csv = String::from("sample,feature,shap,p,q\n");
    let mut all = Vec::with_capacity(samples.len());
    for &s in &samples {
        let e = explainer.explain(data.test.row(s)).context(|| format!("explaining test row {s}"))?;
        for (j, name) in names.iter().enumerate() {
            csv.push_str(&format!("{s},{name},{},{},{}\n", e.phi_tab[j], e.dual.p[j], e.dual.q[j]));
        }
        let last = e.dual.final_loss().expect("DualSHAP ran at least one step");
        println!("sample {s}: class {}, f(x) {:.4}, final MSE {:.4}", e.class, e.fx, last.mse);
        all.push((s, data.test.y[s], e));
    }
    let records: Vec<SampleExplanation<'_>> =
        all.iter().map(|(s, y, e)| SampleExplanation { sample: *s, label: *y, explanation: e }).collect();
    run.write_json("explanations.json", &records)?;
    run.write("importances.csv", csv)
}

fn vif_report(cfg: &Config, run: &mut Run<'_>) -> Result<(), CliError> {
    let data = load_data(cfg, run)?;
    let (m, n) = (data.train.n_rows(), data.train.n_features);
    let report = compute_vif(&data.train.x, m, n).context(|| "computing VIF".into())?;
    let csv = report.to_csv(&data.full.column_names);
    print!("{csv}");
    run.write("vif.csv", csv)
}

fn visualize(cfg: &Config, run: &mut Run<'_>) -> Result<(), CliError> {
    let (model, data) = model_and_data(cfg, run)?;
    let k = cfg.uint("visualize_count").min(data.test.n_rows());
    let noise = fixed_noise(cfg.u64("eval_noise_seed"), PIXELS);
    let images = model.generate(&data.test.x[..k * data.test.n_features], &noise).context(|| "generating images".into())?;
    let items = (0..k)
        .map(|i| {
            let class = data.test.y[i];
            let source = ImageSource::for_class(class).context(|| "naming image sources".into())?.name();
            Ok(DumpItem { id: i, class, source })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let dir = run.out.join("images");
    let files = dump_images(&images, SIDE, &items, &dir).context(|| format!("writing {}", dir.display()))?;
    run.artifacts.push("images/index.tsv".into());
    run.artifacts.extend(files.iter().filter_map(|f| f.file_name()).map(|f| format!("images/{}", f.to_string_lossy())));
    println!("wrote {k} images to {}", dir.display());
    Ok(())
}

/// Suite lines: `<source> [target]`, `#` comments and blank lines ignored.
fn read_suite(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Precondition(format!("cannot read suite {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut parts = l.split_whitespace();
            let source = parts.next().unwrap_or_default().to_string();
            (source, parts.next().unwrap_or_default().to_string())
        })
        .collect())
}

fn benchmark(cfg: &Config, run: &mut Run<'_>) -> Result<(), CliError> {
    let suite_path = PathBuf::from(cfg.required("suite", "benchmark")?);
    let suite = read_suite(&suite_path)?;
    run.note_input(&suite_path)?;
    let cases: Vec<BenchCase<'_>> = suite
        .iter()
        .map(|(source, target)| BenchCase {
            name: dataset_name(source),
            load: Box::new(move || {
                let to_core = |e: CliError| match e {
                    CliError::Core { source, .. } => source,
                    other => table2image::Error::Data(other.to_string()),
                };
                let d = load_dataset(cfg, source, target).map_err(to_core)?;
                let pool = load_pool(cfg, d.full.n_classes).map_err(to_core)?;
                Ok(Prepared { train: d.train, test: d.test, pool })
            }),
        })
        .collect();
    let report = benchmark_run(&cases, &default_arms(), &cfg.train_config());
    for (source, _) in &suite {
        if Path::new(source).is_file() {
            run.note_input(Path::new(source))?;
        }
    }
    let csv = report.to_csv();
    print!("{csv}");
    for f in &report.failures {
        eprintln!("failed: {} {}: {}", f.dataset, f.arm.as_deref().unwrap_or("(load)"), f.error);
    }
    run.write("bench.csv", csv)?;
    run.write_json("bench.json", &report)
}

fn stability(cfg: &Config, run: &mut Run<'_>) -> Result<(), CliError> {
    let data = load_data(cfg, run)?;
    let pool = load_pool(cfg, data.full.n_classes)?;
    let tc = table2image::model::TrainConfig { repeats: 1, ..cfg.train_config() };
    let report = fit(&data.train, &data.test, &pool, &tc, None).context(|| "training".into())?;
    let model = &report.runs[0].model;
    let (reverse, _) = train_reverse(model, &data.train, cfg.u64("eval_noise_seed"), &cfg.reverse_config())
        .context(|| "training the reverse reconstructor".into())?;
    let k = cfg.uint("stability_instances").min(data.test.n_rows());
    let rows = &data.test.x[..k * data.test.n_features];
    let base = cfg.u64("explain_seed");
    let seeds: Vec<u64> = (0..cfg.u64("runs")).map(|r| base + r).collect();
    let study = stability_study(&seeds, |seed| {
        let mut ec = cfg.explain_config();
        ec.seed = seed;
        ec.dualshap.seed = seed;
        let ex = Explainer::new(model, &reverse, &data.train, ec)?;
        AttributionSet::explain_rows(&ex, rows, data.test.n_features)
    })
    .context(|| "stability study".into())?;
    println!(
        "std over {} seeds, {k} instances: P {:.4}, Q {:.4}, SHAP {:.4} (model accuracy {:.4})",
        seeds.len(),
        study.std.p,
        study.std.q,
        study.std.shap,
        report.mean_acc
    );
    run.write_json("stability.json", &study)
}
