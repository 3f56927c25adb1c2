//! End-to-end audit orchestration: one config describes the generator, the
//! training run, and the curve evaluation; `run_audit` turns three trained
//! models plus a test set into the 12-entry bias report and the full curve
//! series behind it. The CSV writers here are the artifact contract — byte
//! deterministic given the report.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{eer_operating_point, score_dataset, OperatingPoint};
use crate::nn::{init_model, train, MiniPadNet, TrainConfig};
use crate::perturb::{
    bias_delta, curve_auc, default_fractions, evaluation_curve, normalize_pair,
    validate_fractions, EvalCurve, ModelTag, NormalizationAnchor, PerturbationMode,
};
use crate::rng::SplitMix64;
use crate::saliency::Explainer;
use crate::synth::{fnv1a64, Dataset, GenConfig, Group, SampleFilter};

/// Mixed into the generator seed to derive the test-set seed, so one
/// configured seed yields disjoint train/test streams.
const TEST_SET_SALT: u64 = 0x7E57_5EED_7E57_5EED;

fn default_threads() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn both_explainers() -> Vec<Explainer> {
    vec![Explainer::GradCam, Explainer::GradCamPp]
}

/// Everything a full `gen -> train -> audit` run depends on. `output_dir`
/// and `threads` are plumbing: they never influence computed values, and
/// the fingerprint deliberately excludes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub normalization_anchor: NormalizationAnchor,
    #[serde(default = "both_explainers")]
    pub explainers: Vec<Explainer>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            gen: GenConfig {
                seed: 7,
                counts: crate::synth::CellCounts::balanced(500),
                // Noise is set so that a weak attack artifact (amplitude
                // near 0.15) sits close to the discrimination floor: models
                // that trained on such attacks still separate them, while a
                // model that only ever saw strong artifacts misses a
                // measurable share — the regime the audit is built to
                // probe. The cue stays small so the groups differ by
                // orientation, not difficulty; with equal amplitudes the
                // default configuration itself is unbiased.
                noise_sigma: 0.18,
                attack_amp_a: 0.3,
                attack_amp_b: 0.3,
                group_cue_amp: 0.1,
            },
            train: TrainConfig::default(),
            fractions: default_fractions(),
            normalization_anchor: NormalizationAnchor::FirstPoint,
            explainers: both_explainers(),
            output_dir: default_output_dir(),
            threads: default_threads(),
        }
    }
}

#[derive(Serialize)]
struct FingerprintView<'a> {
    gen: &'a GenConfig,
    train: &'a TrainConfig,
    fractions: &'a [f64],
    normalization_anchor: NormalizationAnchor,
    explainers: &'a [Explainer],
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        validate_fractions(&self.fractions)?;
        if self.explainers.is_empty() {
            return Err(Error::InvalidConfig {
                field: "explainers".into(),
                reason: "must list at least one explainer".into(),
            });
        }
        for e in [Explainer::GradCam, Explainer::GradCamPp] {
            if self.explainers.iter().filter(|x| **x == e).count() > 1 {
                return Err(Error::InvalidConfig {
                    field: "explainers".into(),
                    reason: format!("`{e}` listed more than once"),
                });
            }
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig {
                field: "threads".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<AuditConfig> {
        let cfg: AuditConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical explainer evaluation order regardless of how the config
    /// lists them, so report rows stay lexicographic.
    pub fn ordered_explainers(&self) -> Vec<Explainer> {
        [Explainer::GradCam, Explainer::GradCamPp]
            .into_iter()
            .filter(|e| self.explainers.contains(e))
            .collect()
    }

    /// Generator config for the held-out test set: same knobs, seed drawn
    /// from a salted stream of the configured seed.
    pub fn test_gen(&self) -> GenConfig {
        let mut stream = SplitMix64::new(self.gen.seed ^ TEST_SET_SALT);
        GenConfig {
            seed: stream.next_u64(),
            ..self.gen.clone()
        }
    }

    /// Replaces every configured seed (used by the seed-override env var).
    pub fn apply_seed_override(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.train.seed = seed;
    }

    /// Hash of the result-affecting fields, hex-encoded.
    pub fn fingerprint(&self) -> String {
        let view = FingerprintView {
            gen: &self.gen,
            train: &self.train,
            fractions: &self.fractions,
            normalization_anchor: self.normalization_anchor,
            explainers: &self.explainers,
        };
        let json = serde_json::to_string(&view).expect("config serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

/// The three training regimes under audit.
#[derive(Debug, Clone)]
pub struct AuditModels {
    /// Full training set, both groups.
    pub pad_b: MiniPadNet,
    /// Group A only.
    pub pad_m: MiniPadNet,
    /// Group B only.
    pub pad_f: MiniPadNet,
}

impl AuditModels {
    /// Tag/model pairs in report row order (tag-lexicographic).
    pub fn tagged(&self) -> [(ModelTag, &MiniPadNet); 3] {
        [
            (ModelTag::PadB, &self.pad_b),
            (ModelTag::PadF, &self.pad_f),
            (ModelTag::PadM, &self.pad_m),
        ]
    }

    pub fn by_tag(&self, tag: ModelTag) -> &MiniPadNet {
        match tag {
            ModelTag::PadB => &self.pad_b,
            ModelTag::PadM => &self.pad_m,
            ModelTag::PadF => &self.pad_f,
        }
    }
}

/// Trains the three regimes from one training set: the full set, the
/// group-A-only split, and the group-B-only split, all from the same
/// initialization and train config.
pub fn train_all(train_set: &Dataset, cfg: &TrainConfig) -> Result<AuditModels> {
    let init = init_model(cfg.seed);
    let pad_b = train(&init, train_set, cfg)?;
    let pad_m = train(&init, &train_set.split_by(SampleFilter::Group(Group::A)), cfg)?;
    let pad_f = train(&init, &train_set.split_by(SampleFilter::Group(Group::B)), cfg)?;
    Ok(AuditModels { pad_b, pad_m, pad_f })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasEntry {
    pub model_tag: ModelTag,
    pub explainer: Explainer,
    pub mode: PerturbationMode,
    pub auc_male: f64,
    pub auc_female_norm: f64,
    /// |auc_male - auc_female_norm|
    pub delta: f64,
}

/// The three curves behind one report entry: group A raw, group B raw, and
/// group B shifted onto A's anchor.
#[derive(Debug, Clone)]
pub struct CurveSet {
    pub male: EvalCurve,
    pub female: EvalCurve,
    pub female_norm: EvalCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportSeeds {
    pub gen: u64,
    pub train: u64,
}

#[derive(Debug, Clone)]
pub struct BiasReport {
    /// One entry per (model, explainer, mode), lexicographic by tag strings.
    pub entries: Vec<BiasEntry>,
    /// `curve_sets[i]` holds the curves behind `entries[i]`.
    pub curve_sets: Vec<CurveSet>,
    /// Pooled-EER operating point per model, report order.
    pub operating_points: Vec<(ModelTag, OperatingPoint)>,
    pub config_fingerprint: String,
    /// Fingerprint recorded on the test dataset itself.
    pub data_fingerprint: String,
    pub seeds: ReportSeeds,
}

impl BiasReport {
    pub fn mean_delta(&self) -> f64 {
        let sum: f64 = self.entries.iter().map(|e| e.delta).sum();
        sum / self.entries.len() as f64
    }

    pub fn entry(
        &self,
        tag: ModelTag,
        explainer: Explainer,
        mode: PerturbationMode,
    ) -> Option<&BiasEntry> {
        self.entries
            .iter()
            .find(|e| e.model_tag == tag && e.explainer == explainer && e.mode == mode)
    }
}

/// Full audit: per model, fix the pooled EER threshold on the unaltered
/// test set, then per explainer and mode build both group curves, normalize
/// the group-B curve onto group A, and compare AUCs.
pub fn run_audit(models: &AuditModels, test: &Dataset, cfg: &AuditConfig) -> Result<BiasReport> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let test_a = test.split_by(SampleFilter::Group(Group::A));
    let test_b = test.split_by(SampleFilter::Group(Group::B));
    let explainers = cfg.ordered_explainers();

    let mut entries = Vec::new();
    let mut curve_sets = Vec::new();
    let mut operating_points = Vec::new();

    for (tag, model) in models.tagged() {
        let pooled = score_dataset(model, test)?;
        let op = eer_operating_point(&pooled)?;
        operating_points.push((tag, op));
        for &explainer in &explainers {
            // deletion before insertion: mode strings sort that way
            for mode in [PerturbationMode::Deletion, PerturbationMode::Insertion] {
                let male = evaluation_curve(
                    model, &test_a, explainer, mode, &cfg.fractions, op.threshold, tag,
                )?;
                let female = evaluation_curve(
                    model, &test_b, explainer, mode, &cfg.fractions, op.threshold, tag,
                )?;
                let female_norm = normalize_pair(&male, &female, cfg.normalization_anchor)?;
                let auc_male = curve_auc(&male, true)?;
                let auc_female_norm = curve_auc(&female_norm, true)?;
                entries.push(BiasEntry {
                    model_tag: tag,
                    explainer,
                    mode,
                    auc_male,
                    auc_female_norm,
                    delta: bias_delta(auc_male, auc_female_norm),
                });
                curve_sets.push(CurveSet { male, female, female_norm });
            }
        }
    }

    Ok(BiasReport {
        entries,
        curve_sets,
        operating_points,
        config_fingerprint: cfg.fingerprint(),
        data_fingerprint: test.gen_fingerprint.clone(),
        seeds: ReportSeeds {
            gen: cfg.gen.seed,
            train: cfg.train.seed,
        },
    })
}

pub const CURVES_CSV_HEADER: &str = "model_tag,explainer,mode,group,normalized,fraction,hter";
pub const REPORT_CSV_HEADER: &str = "model_tag,explainer,mode,auc_male,auc_female_norm,delta";

/// One row per (curve, fraction); per entry the series come out as group A
/// raw, group B raw, group B normalized.
pub fn write_curves_csv(report: &BiasReport, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{CURVES_CSV_HEADER}")?;
    for set in &report.curve_sets {
        for curve in [&set.male, &set.female, &set.female_norm] {
            for (f, h) in curve.fractions.iter().zip(&curve.hter_values) {
                writeln!(
                    w,
                    "{},{},{},{},{},{:.6},{:.6}",
                    curve.model_tag,
                    curve.explainer_tag,
                    curve.mode,
                    curve.group,
                    curve.normalized,
                    f,
                    h
                )?;
            }
        }
    }
    Ok(())
}

pub fn write_report_csv(report: &BiasReport, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{REPORT_CSV_HEADER}")?;
    for e in &report.entries {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.6}",
            e.model_tag, e.explainer, e.mode, e.auc_male, e.auc_female_norm, e.delta
        )?;
    }
    Ok(())
}

/// A parsed curves-CSV row; strings are kept verbatim so plotting does not
/// depend on enum round-trips.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub model_tag: String,
    pub explainer: String,
    pub mode: String,
    pub group: String,
    pub normalized: bool,
    pub fraction: f64,
    pub hter: f64,
}

pub fn read_curves_csv(r: impl BufRead) -> Result<Vec<CurveRow>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim_end) != Some(CURVES_CSV_HEADER) {
        return Err(Error::Corrupt("curves csv header mismatch".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Corrupt(format!(
                "curves csv row {}: expected 7 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_f64 = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Corrupt(format!("curves csv row {}: bad {what} `{s}`", i + 2)))
        };
        let normalized = match fields[4] {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Corrupt(format!(
                    "curves csv row {}: bad normalized flag `{other}`",
                    i + 2
                )))
            }
        };
        rows.push(CurveRow {
            model_tag: fields[0].to_string(),
            explainer: fields[1].to_string(),
            mode: fields[2].to_string(),
            group: fields[3].to_string(),
            normalized,
            fraction: parse_f64(fields[5], "fraction")?,
            hter: parse_f64(fields[6], "hter")?,
        });
    }
    Ok(rows)
}
