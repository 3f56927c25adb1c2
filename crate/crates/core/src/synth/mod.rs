//! Seeded procedural generator for a grouped binary PAD dataset.
//!
//! Every image is 1x32x32 grayscale built as
//!
//! ```text
//! clamp(0.5 + group_cue + attack_artifact + N(0, noise_sigma), 0, 1)
//! ```
//!
//! The group cue is a sinusoidal grating (period 8 px) over the top half of
//! the image: bars run horizontally for group A (intensity varies with the
//! row) and vertically for group B (varies with the column). The attack
//! artifact is a 2x2-block checkerboard stamped on a randomly placed 12x12
//! patch, with a per-group amplitude — `attack_amp_a` vs `attack_amp_b` is
//! the bias knob the whole audit exists to detect.
//!
//! Each (group, label) cell draws from its own PRNG substream, seeded by
//! XOR-ing salts into the base seed. That makes group symmetry exactly
//! testable: re-seed with `seed ^ GROUP_A_SALT ^ GROUP_B_SALT` and swap the
//! two amplitudes, and every cell's random draws land in the mirrored cell
//! bit-for-bit.

mod io;

pub use io::{load_dataset_dir, load_dataset_packed, save_dataset_dir, save_dataset_packed};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Xoshiro256StarStar;
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 32;
/// Rows covered by the group-cue grating.
const CUE_ROWS: usize = 16;
const CUE_PERIOD: f64 = 8.0;
/// Side of the square checkerboard patch carrying the attack artifact.
const PATCH_SIDE: usize = 12;

/// Substream salts; XORed into the base seed to derive one independent
/// stream per (group, label) cell.
pub const GROUP_A_SALT: u64 = 0x61C8_8647_56E5_12B1;
pub const GROUP_B_SALT: u64 = 0x3243_F6A8_885A_308D;
pub const BONA_FIDE_SALT: u64 = 0x2B99_2DDF_A232_49D6;
pub const ATTACK_SALT: u64 = 0x0B4E_0AA2_41F6_C90F;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
}

impl Group {
    pub fn salt(self) -> u64 {
        match self {
            Group::A => GROUP_A_SALT,
            Group::B => GROUP_B_SALT,
        }
    }

    pub fn flipped(self) -> Group {
        match self {
            Group::A => Group::B,
            Group::B => Group::A,
        }
    }
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Group::A => "A",
            Group::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    BonaFide,
    Attack,
}

impl Label {
    pub fn salt(self) -> u64 {
        match self {
            Label::BonaFide => BONA_FIDE_SALT,
            Label::Attack => ATTACK_SALT,
        }
    }

    /// Regression target for the classifier: attack is the positive class.
    pub fn target(self) -> f64 {
        match self {
            Label::BonaFide => 0.0,
            Label::Attack => 1.0,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::BonaFide => "bona_fide",
            Label::Attack => "attack",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: u64,
    pub image: Tensor,
    pub label: Label,
    pub group: Group,
}

/// Number of samples per (group, label) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub a_bona_fide: u32,
    pub a_attack: u32,
    pub b_bona_fide: u32,
    pub b_attack: u32,
}

impl CellCounts {
    pub fn balanced(per_cell: u32) -> CellCounts {
        CellCounts {
            a_bona_fide: per_cell,
            a_attack: per_cell,
            b_bona_fide: per_cell,
            b_attack: per_cell,
        }
    }

    /// Desk-scale preset with a 2.8:1 group imbalance (700 vs 250 per cell),
    /// mimicking test sets where one group dominates.
    pub fn imbalanced() -> CellCounts {
        CellCounts {
            a_bona_fide: 700,
            a_attack: 700,
            b_bona_fide: 250,
            b_attack: 250,
        }
    }

    pub fn get(&self, group: Group, label: Label) -> u32 {
        match (group, label) {
            (Group::A, Label::BonaFide) => self.a_bona_fide,
            (Group::A, Label::Attack) => self.a_attack,
            (Group::B, Label::BonaFide) => self.b_bona_fide,
            (Group::B, Label::Attack) => self.b_attack,
        }
    }

    pub fn total(&self) -> u64 {
        self.a_bona_fide as u64 + self.a_attack as u64 + self.b_bona_fide as u64 + self.b_attack as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub counts: CellCounts,
    pub noise_sigma: f64,
    /// Attack-artifact amplitude for group A — one of the two bias knobs.
    pub attack_amp_a: f64,
    /// Attack-artifact amplitude for group B — the other bias knob.
    pub attack_amp_b: f64,
    pub group_cue_amp: f64,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &'static str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig {
                    field: name.into(),
                    reason: format!("{v} is outside [0, 1]"),
                });
            }
            Ok(())
        };
        for (name, count) in [
            ("counts.a_bona_fide", self.counts.a_bona_fide),
            ("counts.a_attack", self.counts.a_attack),
            ("counts.b_bona_fide", self.counts.b_bona_fide),
            ("counts.b_attack", self.counts.b_attack),
        ] {
            if count == 0 {
                return Err(Error::InvalidConfig {
                    field: name.into(),
                    reason: "cell count must be positive".into(),
                });
            }
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig {
                field: "noise_sigma".into(),
                reason: format!("{} is not a finite non-negative value", self.noise_sigma),
            });
        }
        unit("attack_amp_a", self.attack_amp_a)?;
        unit("attack_amp_b", self.attack_amp_b)?;
        unit("group_cue_amp", self.group_cue_amp)?;
        Ok(())
    }

    pub fn attack_amp(&self, group: Group) -> f64 {
        match group {
            Group::A => self.attack_amp_a,
            Group::B => self.attack_amp_b,
        }
    }

    /// FNV-1a hash of the canonical JSON encoding, as fixed-width hex.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("GenConfig serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Hash of the generating config; split operations append their tag.
    pub gen_fingerprint: String,
}

/// Sample predicate for `Dataset::split_by`. The variants cover the splits
/// the audit needs (per-group training sets, per-label score pools).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFilter {
    All,
    Group(Group),
    Label(Label),
    Cell(Group, Label),
}

impl SampleFilter {
    fn keeps(&self, s: &Sample) -> bool {
        match *self {
            SampleFilter::All => true,
            SampleFilter::Group(g) => s.group == g,
            SampleFilter::Label(l) => s.label == l,
            SampleFilter::Cell(g, l) => s.group == g && s.label == l,
        }
    }

    fn tag(&self) -> String {
        match *self {
            SampleFilter::All => String::new(),
            SampleFilter::Group(g) => format!("|group={g}"),
            SampleFilter::Label(l) => format!("|label={l}"),
            SampleFilter::Cell(g, l) => format!("|group={g},label={l}"),
        }
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn cell_count(&self, group: Group, label: Label) -> usize {
        self.samples
            .iter()
            .filter(|s| s.group == group && s.label == label)
            .count()
    }

    /// Keeps matching samples in order, ids untouched. `SampleFilter::All`
    /// returns the dataset unchanged, fingerprint included; other filters
    /// append their tag to the fingerprint.
    pub fn split_by(&self, filter: SampleFilter) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| filter.keeps(s))
                .cloned()
                .collect(),
            gen_fingerprint: format!("{}{}", self.gen_fingerprint, filter.tag()),
        }
    }

    /// Relabels every sample's group A<->B (images untouched). Used by the
    /// audit's symmetry checks.
    pub fn swap_groups(&self) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    group: s.group.flipped(),
                    ..s.clone()
                })
                .collect(),
            gen_fingerprint: format!("{}|swapped", self.gen_fingerprint),
        }
    }
}

fn cue_value(group: Group, amp: f64, y: usize, x: usize) -> f64 {
    if y >= CUE_ROWS {
        return 0.0;
    }
    let phase = match group {
        Group::A => y as f64, // horizontal bars: varies down the rows
        Group::B => x as f64, // vertical bars: varies across the columns
    };
    amp * (2.0 * std::f64::consts::PI * phase / CUE_PERIOD).sin()
}

/// +1/-1 checkerboard of 2x2 blocks at patch-local coordinates.
fn checker_sign(dy: usize, dx: usize) -> f64 {
    if (dy / 2 + dx / 2) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn generate_cell(cfg: &GenConfig, group: Group, label: Label, next_id: &mut u64, out: &mut Vec<Sample>) {
    let cell_seed = cfg.seed ^ group.salt() ^ label.salt();
    let mut rng = Xoshiro256StarStar::seed_from_u64(cell_seed);
    let amp = cfg.attack_amp(group);
    let count = cfg.counts.get(group, label);
    let max_corner = (IMAGE_SIDE - PATCH_SIDE + 1) as u64;

    for _ in 0..count {
        let patch = if label == Label::Attack {
            Some((
                rng.next_below(max_corner) as usize,
                rng.next_below(max_corner) as usize,
            ))
        } else {
            None
        };
        let mut image = Tensor::zeros(&[1, IMAGE_SIDE, IMAGE_SIDE]);
        let pixels = image.values_mut();
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                let mut v = 0.5 + cue_value(group, cfg.group_cue_amp, y, x);
                if let Some((py, px)) = patch {
                    if (py..py + PATCH_SIDE).contains(&y) && (px..px + PATCH_SIDE).contains(&x) {
                        v += amp * checker_sign(y - py, x - px);
                    }
                }
                v += rng.next_gaussian() * cfg.noise_sigma;
                pixels[y * IMAGE_SIDE + x] = v.clamp(0.0, 1.0);
            }
        }
        out.push(Sample {
            id: *next_id,
            image,
            label,
            group,
        });
        *next_id += 1;
    }
}

/// Builds the full dataset: cells in the fixed order (A,bona), (A,attack),
/// (B,bona), (B,attack), ids sequential from zero.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut samples = Vec::with_capacity(cfg.counts.total() as usize);
    let mut next_id = 0u64;
    for group in [Group::A, Group::B] {
        for label in [Label::BonaFide, Label::Attack] {
            generate_cell(cfg, group, label, &mut next_id, &mut samples);
        }
    }
    Ok(Dataset {
        samples,
        gen_fingerprint: cfg.fingerprint(),
    })
}
