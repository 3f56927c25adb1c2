//! The four pipeline stages behind the subcommands, plus config loading and
//! the exit-code contract: 2 for config problems, 3 for missing or stale
//! pipeline inputs, 4 for internal invariant violations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use sba_core::audit::{
    read_curves_csv, run_audit, train_all, write_curves_csv, write_report_csv, AuditConfig,
    AuditModels,
};
use sba_core::metrics::{eer_operating_point, score_dataset, OperatingPoint};
use sba_core::nn::{load_model, save_model, TargetSign};
use sba_core::perturb::ModelTag;
use sba_core::saliency::explain;
use sba_core::svg::{panels_from_rows, saliency_overlay_svg};
use sba_core::synth::{
    generate, load_dataset_packed, save_dataset_packed, Dataset, GenConfig, Group, Label, Sample,
};

pub const SEED_OVERRIDE_VAR: &str = "SBA_SEED_OVERRIDE";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingInput { path: PathBuf, hint: String },
    StaleInput { path: PathBuf, expected: String, found: String },
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput { .. } | CliError::StaleInput { .. } => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::MissingInput { path, hint } => {
                write!(f, "missing input {}: {hint}", path.display())
            }
            CliError::StaleInput { path, expected, found } => write!(
                f,
                "{} was generated by a different config (data fingerprint {found}, expected \
                 {expected}); re-run `sba gen`",
                path.display()
            ),
            CliError::Internal(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<sba_core::Error> for CliError {
    fn from(err: sba_core::Error) -> Self {
        CliError::Internal(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Internal(err.to_string())
    }
}

pub fn load_config(
    config: &Option<PathBuf>,
    out: &Option<PathBuf>,
    threads: Option<usize>,
) -> Result<AuditConfig, CliError> {
    let path = config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <PATH> is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = AuditConfig::from_json(&text)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;

    if let Ok(raw) = std::env::var(SEED_OVERRIDE_VAR) {
        let seed: u64 = raw.trim().parse().map_err(|_| {
            CliError::Config(format!("{SEED_OVERRIDE_VAR} must be an unsigned integer, got `{raw}`"))
        })?;
        cfg.apply_seed_override(seed);
    }
    if let Some(dir) = out {
        cfg.output_dir = dir.clone();
    }
    if let Some(n) = threads {
        cfg.threads = n;
    }
    cfg.validate()
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
    Ok(cfg)
}

/// All artifact paths live under the config's output directory:
/// `data/` for datasets, `models/` for weights, `audit/` for CSVs and SVGs.
struct Layout {
    root: PathBuf,
}

impl Layout {
    fn new(cfg: &AuditConfig) -> Layout {
        Layout { root: cfg.output_dir.clone() }
    }

    fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    fn train_data(&self) -> PathBuf {
        self.data_dir().join("train.sbad")
    }
    fn test_data(&self) -> PathBuf {
        self.data_dir().join("test.sbad")
    }
    fn data_manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.json")
    }
    fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }
    fn model_file(&self, tag: ModelTag) -> PathBuf {
        let name = match tag {
            ModelTag::PadB => "pad_b.sbaw",
            ModelTag::PadM => "pad_m.sbaw",
            ModelTag::PadF => "pad_f.sbaw",
        };
        self.models_dir().join(name)
    }
    fn audit_dir(&self) -> PathBuf {
        self.root.join("audit")
    }
    fn curves_csv(&self) -> PathBuf {
        self.audit_dir().join("curves.csv")
    }
    fn report_csv(&self) -> PathBuf {
        self.audit_dir().join("report.csv")
    }
    fn plots_dir(&self) -> PathBuf {
        self.audit_dir().join("plots")
    }
    fn overlays_dir(&self) -> PathBuf {
        self.audit_dir().join("overlays")
    }
}

fn require(path: PathBuf, hint: &str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingInput { path, hint: hint.into() })
    }
}

/// Loads a packed dataset and rejects it when its embedded generator config
/// does not match what the current audit config would generate.
fn load_expected_dataset(path: &Path, expected: &GenConfig) -> Result<Dataset, CliError> {
    let (data, stored) = load_dataset_packed(path)?;
    if stored.fingerprint() != expected.fingerprint() {
        return Err(CliError::StaleInput {
            path: path.to_path_buf(),
            expected: expected.fingerprint(),
            found: stored.fingerprint(),
        });
    }
    Ok(data)
}

#[derive(Serialize)]
struct SplitManifest<'a> {
    gen: &'a GenConfig,
    data_fingerprint: &'a str,
    samples: usize,
    file: &'a str,
}

#[derive(Serialize)]
struct DataManifest<'a> {
    config_fingerprint: String,
    train: SplitManifest<'a>,
    test: SplitManifest<'a>,
}

pub fn cmd_gen(cfg: &AuditConfig) -> Result<(), CliError> {
    let layout = Layout::new(cfg);
    let test_gen = cfg.test_gen();
    let train_set = generate(&cfg.gen)?;
    let test_set = generate(&test_gen)?;

    fs::create_dir_all(layout.data_dir())?;
    save_dataset_packed(&train_set, &cfg.gen, &layout.train_data())?;
    save_dataset_packed(&test_set, &test_gen, &layout.test_data())?;

    let manifest = DataManifest {
        config_fingerprint: cfg.fingerprint(),
        train: SplitManifest {
            gen: &cfg.gen,
            data_fingerprint: &train_set.gen_fingerprint,
            samples: train_set.len(),
            file: "train.sbad",
        },
        test: SplitManifest {
            gen: &test_gen,
            data_fingerprint: &test_set.gen_fingerprint,
            samples: test_set.len(),
            file: "test.sbad",
        },
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(layout.data_manifest(), json + "\n")?;

    println!("config {}", cfg.fingerprint());
    println!(
        "train {} {} samples -> {}",
        train_set.gen_fingerprint,
        train_set.len(),
        layout.train_data().display()
    );
    println!(
        "test {} {} samples -> {}",
        test_set.gen_fingerprint,
        test_set.len(),
        layout.test_data().display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &AuditConfig) -> Result<(), CliError> {
    let layout = Layout::new(cfg);
    let train_path = require(layout.train_data(), "run `sba gen` first")?;
    let test_path = require(layout.test_data(), "run `sba gen` first")?;
    let train_set = load_expected_dataset(&train_path, &cfg.gen)?;
    let test_set = load_expected_dataset(&test_path, &cfg.test_gen())?;

    let models = train_all(&train_set, &cfg.train)?;
    fs::create_dir_all(layout.models_dir())?;
    for (tag, model) in models.tagged() {
        let path = layout.model_file(tag);
        save_model(model, &path)?;
        let pooled = score_dataset(model, &test_set)?;
        let op = eer_operating_point(&pooled)?;
        let op_a = eer_operating_point(&pooled.for_group(Group::A))?;
        let op_b = eer_operating_point(&pooled.for_group(Group::B))?;
        println!(
            "{tag} test EER {:.4} (A {:.4}, B {:.4}) threshold {:.6} -> {}",
            op.eer,
            op_a.eer,
            op_b.eer,
            op.threshold,
            path.display()
        );
    }
    Ok(())
}

pub fn cmd_audit(cfg: &AuditConfig, svg: bool) -> Result<(), CliError> {
    let layout = Layout::new(cfg);
    let test_path = require(layout.test_data(), "run `sba gen` first")?;
    for tag in [ModelTag::PadB, ModelTag::PadF, ModelTag::PadM] {
        require(layout.model_file(tag), "run `sba train` first")?;
    }
    let test_set = load_expected_dataset(&test_path, &cfg.test_gen())?;
    let models = AuditModels {
        pad_b: load_model(&layout.model_file(ModelTag::PadB))?,
        pad_m: load_model(&layout.model_file(ModelTag::PadM))?,
        pad_f: load_model(&layout.model_file(ModelTag::PadF))?,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let report = pool.install(|| run_audit(&models, &test_set, cfg))?;

    fs::create_dir_all(layout.audit_dir())?;
    let mut curves_buf = Vec::new();
    write_curves_csv(&report, &mut curves_buf)?;
    fs::write(layout.curves_csv(), &curves_buf)?;
    let mut report_buf = Vec::new();
    write_report_csv(&report, &mut report_buf)?;
    fs::write(layout.report_csv(), &report_buf)?;

    println!("config {} data {}", report.config_fingerprint, report.data_fingerprint);
    for (tag, op) in &report.operating_points {
        println!("{tag} pooled EER {:.4} threshold {:.6}", op.eer, op.threshold);
    }
    println!("mean |delta| {:.6}", report.mean_delta());
    println!(
        "report {} entries -> {}",
        report.entries.len(),
        layout.report_csv().display()
    );
    let curve_rows = curves_buf.iter().filter(|b| **b == b'\n').count() - 1;
    println!("curves {} rows -> {}", curve_rows, layout.curves_csv().display());

    if svg {
        let rows = read_curves_csv(&curves_buf[..])?;
        let panels = panels_from_rows(&rows);
        fs::create_dir_all(layout.plots_dir())?;
        for (name, svg_text) in &panels {
            fs::write(layout.plots_dir().join(format!("{name}.svg")), svg_text)?;
        }
        println!("plots {} panels -> {}", panels.len(), layout.plots_dir().display());
        let n = write_overlays(&layout, &models, &test_set, &report.operating_points, cfg)?;
        println!("overlays {} files -> {}", n, layout.overlays_dir().display());
    }
    Ok(())
}

/// One saliency overlay per (model, explainer, group): the first attack
/// sample of the group, explained against the model's own decision at its
/// pooled EER threshold.
fn write_overlays(
    layout: &Layout,
    models: &AuditModels,
    test_set: &Dataset,
    operating_points: &[(ModelTag, OperatingPoint)],
    cfg: &AuditConfig,
) -> Result<usize, CliError> {
    fs::create_dir_all(layout.overlays_dir())?;
    let first_attack = |group: Group| -> Option<&Sample> {
        test_set
            .samples
            .iter()
            .find(|s| s.group == group && s.label == Label::Attack)
    };
    let mut written = 0;
    for (tag, model) in models.tagged() {
        let threshold = operating_points
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, op)| op.threshold)
            .expect("every audited model has an operating point");
        for explainer in cfg.ordered_explainers() {
            for group in [Group::A, Group::B] {
                let Some(sample) = first_attack(group) else {
                    continue;
                };
                let cache = model.forward(&sample.image)?;
                let sign = TargetSign::from_score(cache.score(), threshold);
                let grads = model.backward_to_target(&cache, sign)?;
                let map = explain(explainer, cache.target_activations(), &grads, sample.id)?;
                let svg_text = saliency_overlay_svg(&sample.image, &map);
                let name = format!("overlay_{tag}_{explainer}_{group}.svg");
                fs::write(layout.overlays_dir().join(name), svg_text)?;
                written += 1;
            }
        }
    }
    Ok(written)
}

pub fn cmd_report(cfg: &AuditConfig) -> Result<(), CliError> {
    let layout = Layout::new(cfg);
    let curves_path = require(layout.curves_csv(), "run `sba audit` first")?;
    let bytes = fs::read(&curves_path)?;
    let rows = read_curves_csv(&bytes[..])?;
    let panels = panels_from_rows(&rows);
    fs::create_dir_all(layout.plots_dir())?;
    for (name, svg_text) in &panels {
        fs::write(layout.plots_dir().join(format!("{name}.svg")), svg_text)?;
    }
    println!("plots {} panels -> {}", panels.len(), layout.plots_dir().display());
    Ok(())
}
