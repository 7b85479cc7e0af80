//! Synthetic cohorts standing in for internal and distribution-shifted populations.
//!
//! Each sample is a 16x16 "radiograph": two dark lung fields over a banded,
//! group-specific background. Abnormal samples carry a soft bright opacity
//! inside one lung. Small sharp dots appear in either class as distractors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Result};

pub const IMAGE_SIDE: usize = 16;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;
const SPLIT_SALT: u64 = 0x5eed_0070_0010_0020;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortTag {
    Internal,
    ExtAdult,
    ExtPed2,
    ExtPed11,
    ExtPed18,
    Pretext,
}

impl CohortTag {
    pub const EXTERNAL: [CohortTag; 4] =
        [CohortTag::ExtAdult, CohortTag::ExtPed2, CohortTag::ExtPed11, CohortTag::ExtPed18];

    pub fn as_str(&self) -> &'static str {
        match self {
            CohortTag::Internal => "internal",
            CohortTag::ExtAdult => "ext_adult",
            CohortTag::ExtPed2 => "ext_ped2",
            CohortTag::ExtPed11 => "ext_ped11",
            CohortTag::ExtPed18 => "ext_ped18",
            CohortTag::Pretext => "pretext",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftParams {
    /// Global contrast around mid-grey; also scales the opacity.
    pub contrast_gain: f64,
    /// Multiplier on opacity size and lung-field extent.
    pub structure_scale: f64,
    /// Standard deviation of per-pixel noise.
    pub noise_level: f64,
}

impl ShiftParams {
    pub const INTERNAL: ShiftParams = ShiftParams { contrast_gain: 1.0, structure_scale: 1.0, noise_level: 0.05 };
    /// Acquisition-style shift: contrast only.
    pub const EXT_ADULT: ShiftParams = ShiftParams { contrast_gain: 0.8, structure_scale: 1.0, noise_level: 0.05 };
    pub const PED18: ShiftParams = ShiftParams { contrast_gain: 0.85, structure_scale: 0.85, noise_level: 0.06 };
    pub const PED11: ShiftParams = ShiftParams { contrast_gain: 0.75, structure_scale: 0.7, noise_level: 0.07 };
    pub const PED2: ShiftParams = ShiftParams { contrast_gain: 0.6, structure_scale: 0.55, noise_level: 0.08 };
}

/// Decision rule deciding what makes a sample positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// One soft opacity inside a lung field.
    Opacity,
    /// Transposed anatomy; positives carry two small foci.
    RotatedMultifocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub tag: CohortTag,
    pub n_samples: usize,
    pub abnormal_fraction: f64,
    pub shift: ShiftParams,
    pub groups: usize,
    pub seed: u64,
    pub rule: LabelRule,
}

impl CohortConfig {
    pub fn preset(tag: CohortTag, n_samples: usize, seed: u64) -> Self {
        let (abnormal_fraction, shift, rule) = match tag {
            CohortTag::Internal => (0.67, ShiftParams::INTERNAL, LabelRule::Opacity),
            CohortTag::ExtAdult => (0.58, ShiftParams::EXT_ADULT, LabelRule::Opacity),
            CohortTag::ExtPed2 => (0.37, ShiftParams::PED2, LabelRule::Opacity),
            CohortTag::ExtPed11 => (0.31, ShiftParams::PED11, LabelRule::Opacity),
            CohortTag::ExtPed18 => (0.42, ShiftParams::PED18, LabelRule::Opacity),
            CohortTag::Pretext => (0.5, ShiftParams::INTERNAL, LabelRule::RotatedMultifocal),
        };
        Self {
            tag,
            n_samples,
            abnormal_fraction,
            shift,
            groups: (n_samples / 4).max(10),
            seed,
            rule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abnormal_fraction > 0.0 && self.abnormal_fraction < 1.0) {
            return invalid(format!("abnormal_fraction {} outside (0, 1)", self.abnormal_fraction));
        }
        if self.groups < 10 {
            return invalid(format!("need at least 10 groups, got {}", self.groups));
        }
        if self.n_samples < self.groups {
            return invalid("fewer samples than groups");
        }
        let s = &self.shift;
        if !(s.contrast_gain > 0.0 && s.structure_scale > 0.0 && s.noise_level >= 0.0) {
            return invalid("shift parameters out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image: Vec<f64>,
    pub label: u8,
    pub group_id: u32,
    pub cohort: CohortTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub config: CohortConfig,
    pub samples: Vec<Sample>,
}

impl Cohort {
    pub fn dataset(&self, idx: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(idx.len() * IMAGE_LEN);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            inputs.extend_from_slice(&self.samples[i].image);
            labels.push(self.samples[i].label);
        }
        Dataset { sample_len: IMAGE_LEN, inputs, labels }
    }

    pub fn full_dataset(&self) -> Dataset {
        let idx: Vec<usize> = (0..self.samples.len()).collect();
        self.dataset(&idx)
    }
}

fn blob(img: &mut [f64], cx: f64, cy: f64, sx: f64, sy: f64, amp: f64) {
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let dx = (x as f64 - cx) / sx;
            let dy = (y as f64 - cy) / sy;
            img[y * IMAGE_SIDE + x] += amp * (-0.5 * (dx * dx + dy * dy)).exp();
        }
    }
}

fn transpose(img: &mut [f64]) {
    for y in 0..IMAGE_SIDE {
        for x in (y + 1)..IMAGE_SIDE {
            img.swap(y * IMAGE_SIDE + x, x * IMAGE_SIDE + y);
        }
    }
}

pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shift = config.shift;
    let offset_dist = Normal::new(0.0, 0.03).expect("valid normal");
    let groups: Vec<(f64, f64)> = (0..config.groups)
        .map(|_| (offset_dist.sample(&mut rng), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let noise = Normal::new(0.0, shift.noise_level.max(1e-12)).expect("valid normal");

    let mut samples = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let group_id = (i * config.groups / config.n_samples) as u32;
        let (g_offset, g_phase) = groups[group_id as usize];
        let label = u8::from(rng.random::<f64>() < config.abnormal_fraction);
        let mut img = vec![0.0; IMAGE_LEN];

        // background, ribs and lung fields
        let band_freq = 2.5 / shift.structure_scale.max(0.25);
        let phase = g_phase + rng.random_range(-0.5..0.5);
        let lung_rx = 2.6 * shift.structure_scale.sqrt();
        let lung_ry = 5.5 * shift.structure_scale.sqrt();
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                let yf = y as f64;
                let mut v = 0.36 + g_offset
                    + 0.05 * (std::f64::consts::TAU * band_freq * yf / IMAGE_SIDE as f64 + phase).sin();
                for cx in [4.5, 10.5] {
                    let dx = (x as f64 - cx) / lung_rx;
                    let dy = (yf - 7.5) / lung_ry;
                    if dx * dx + dy * dy < 1.0 {
                        v -= 0.15;
                    }
                }
                img[y * IMAGE_SIDE + x] = v;
            }
        }

        match config.rule {
            LabelRule::Opacity => {
                if label == 1 {
                    let cx = if rng.random::<bool>() { 4.5 } else { 10.5 } + rng.random_range(-1.5..1.5);
                    let cy = 7.5 + rng.random_range(-3.0..3.0);
                    let sx = shift.structure_scale * rng.random_range(1.5..2.5);
                    let sy = shift.structure_scale * rng.random_range(1.5..2.5);
                    blob(&mut img, cx, cy, sx, sy, rng.random_range(0.25..0.45));
                }
            }
            LabelRule::RotatedMultifocal => {
                if label == 1 {
                    for _ in 0..2 {
                        let cx = rng.random_range(3.0..13.0);
                        let cy = rng.random_range(3.0..13.0);
                        let s = rng.random_range(1.2..2.0);
                        blob(&mut img, cx, cy, s, s, rng.random_range(0.25..0.4));
                    }
                }
                transpose(&mut img);
            }
        }
        if rng.random::<f64>() < 0.3 {
            let cx = rng.random_range(2.0..14.0);
            let cy = rng.random_range(2.0..14.0);
            blob(&mut img, cx, cy, 0.5, 0.5, rng.random_range(0.2..0.35));
        }

        for v in img.iter_mut() {
            let noisy = *v + noise.sample(&mut rng);
            *v = (0.5 + shift.contrast_gain * (noisy - 0.5)).clamp(0.0, 1.0);
        }
        samples.push(Sample { image: img, label, group_id, cohort: config.tag });
    }
    Ok(Cohort { config: config.clone(), samples })
}

/// Sample indices of a group-level partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Training groups in assignment order (used for periodic halving).
    pub train_groups: Vec<u32>,
    pub val_groups: Vec<u32>,
}

fn group_sizes(cohort: &Cohort) -> std::collections::BTreeMap<u32, Vec<usize>> {
    let mut map = std::collections::BTreeMap::new();
    for (i, s) in cohort.samples.iter().enumerate() {
        map.entry(s.group_id).or_insert_with(Vec::new).push(i);
    }
    map
}

/// Assigns whole groups by where the midpoint of each group's cumulative share falls.
fn assign_by_midpoint(sizes: &[usize], cuts: &[f64]) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut cum = 0usize;
    sizes
        .iter()
        .map(|&s| {
            let mid = (cum as f64 + s as f64 / 2.0) / total as f64;
            cum += s;
            cuts.iter().position(|&c| mid < c).unwrap_or(cuts.len())
        })
        .collect()
}

/// 70 / 10 / 20 partition by whole groups, shuffled deterministically from the cohort seed.
pub fn split_group_level(cohort: &Cohort) -> Result<GroupSplit> {
    let groups = group_sizes(cohort);
    if groups.len() < 10 {
        return invalid(format!("need at least 10 groups to split, got {}", groups.len()));
    }
    let mut order: Vec<u32> = groups.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cohort.config.seed ^ SPLIT_SALT);
    order.shuffle(&mut rng);
    let sizes: Vec<usize> = order.iter().map(|g| groups[g].len()).collect();
    let part = assign_by_midpoint(&sizes, &[0.7, 0.8]);

    let mut split = GroupSplit {
        train: vec![],
        val: vec![],
        test: vec![],
        train_groups: vec![],
        val_groups: vec![],
    };
    for (g, p) in order.iter().zip(part) {
        let members = &groups[g];
        match p {
            0 => {
                split.train.extend(members);
                split.train_groups.push(*g);
            }
            1 => {
                split.val.extend(members);
                split.val_groups.push(*g);
            }
            _ => split.test.extend(members),
        }
    }
    if split.train_groups.len() < 2 || split.val_groups.len() < 2 || split.test.is_empty() {
        return invalid("group split left a partition too small");
    }
    Ok(split)
}


/// Partial (first half by groups) and full train/validation index sets; the test set is shared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicSplit {
    pub p_train: Vec<usize>,
    pub p_val: Vec<usize>,
    pub f_train: Vec<usize>,
    pub f_val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn halve_periodic(cohort: &Cohort, split: &GroupSplit) -> PeriodicSplit {
    let groups = group_sizes(cohort);
    let half = |gs: &[u32]| -> Vec<usize> {
        let sizes: Vec<usize> = gs.iter().map(|g| groups[g].len()).collect();
        let part = assign_by_midpoint(&sizes, &[0.5]);
        let mut first: Vec<usize> = gs
            .iter()
            .zip(part)
            .filter(|(_, p)| *p == 0)
            .flat_map(|(g, _)| groups[g].iter().copied())
            .collect();
        first.sort_unstable();
        first
    };
    let mut f_train = split.train.clone();
    let mut f_val = split.val.clone();
    let mut test = split.test.clone();
    f_train.sort_unstable();
    f_val.sort_unstable();
    test.sort_unstable();
    PeriodicSplit {
        p_train: half(&split.train_groups),
        p_val: half(&split.val_groups),
        f_train,
        f_val,
        test,
    }
}
