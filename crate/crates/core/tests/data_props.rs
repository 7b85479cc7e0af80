//! Synthetic cohorts and group-level partitions.

use std::collections::BTreeSet;

use proptest::prelude::*;
use weightmix_core::data::*;

fn mean_intensity(c: &Cohort) -> f64 {
    let total: f64 = c.samples.iter().flat_map(|s| s.image.iter()).sum();
    total / (c.samples.len() * IMAGE_LEN) as f64
}

#[test]
fn labels_follow_the_abnormal_fraction() {
    for tag in [CohortTag::Internal, CohortTag::ExtAdult, CohortTag::ExtPed2, CohortTag::ExtPed11, CohortTag::ExtPed18] {
        let cfg = CohortConfig::preset(tag, 2000, 17);
        let c = generate_cohort(&cfg).unwrap();
        let n = c.samples.len() as f64;
        let pos = c.samples.iter().filter(|s| s.label == 1).count() as f64;
        let p = cfg.abnormal_fraction;
        let sigma = (n * p * (1.0 - p)).sqrt();
        assert!((pos - n * p).abs() <= 3.0 * sigma, "{tag:?}: {pos} positives, expected {}", n * p);
        for s in &c.samples {
            assert_eq!(s.image.len(), IMAGE_LEN);
            assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((s.group_id as usize) < cfg.groups);
            assert_eq!(s.cohort, tag);
        }
    }
}

#[test]
fn generation_is_seeded() {
    let cfg = CohortConfig::preset(CohortTag::Internal, 300, 5);
    assert_eq!(generate_cohort(&cfg).unwrap(), generate_cohort(&cfg).unwrap());
    let other = CohortConfig { seed: 6, ..cfg.clone() };
    assert_ne!(generate_cohort(&cfg).unwrap().samples, generate_cohort(&other).unwrap().samples);
}

#[test]
fn pediatric_shift_is_detectable() {
    let internal = mean_intensity(&generate_cohort(&CohortConfig::preset(CohortTag::Internal, 1000, 3)).unwrap());
    let ped2 = mean_intensity(&generate_cohort(&CohortConfig::preset(CohortTag::ExtPed2, 1000, 3)).unwrap());
    assert!(ped2 - internal >= 0.05, "ped2 {ped2} vs internal {internal}");
    // milder bands shift the same way, by less
    let mut prev = ped2;
    for tag in [CohortTag::ExtPed11, CohortTag::ExtPed18] {
        let m = mean_intensity(&generate_cohort(&CohortConfig::preset(tag, 1000, 3)).unwrap());
        assert!(m > internal && m < prev, "{tag:?}: {m}");
        prev = m;
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base = CohortConfig::preset(CohortTag::Internal, 100, 1);
    assert!(generate_cohort(&CohortConfig { abnormal_fraction: 0.0, ..base.clone() }).is_err());
    assert!(generate_cohort(&CohortConfig { abnormal_fraction: 1.0, ..base.clone() }).is_err());
    assert!(generate_cohort(&CohortConfig { groups: 9, ..base.clone() }).is_err());
    assert!(generate_cohort(&CohortConfig { n_samples: 5, groups: 10, ..base }).is_err());
}

/// A cohort whose samples carry the given group sizes, images left empty.
fn with_groups(sizes: &[usize], seed: u64) -> Cohort {
    let mut samples = Vec::new();
    for (g, &s) in sizes.iter().enumerate() {
        for j in 0..s {
            samples.push(Sample { image: vec![], label: (j % 2) as u8, group_id: g as u32, cohort: CohortTag::Internal });
        }
    }
    let mut config = CohortConfig::preset(CohortTag::Internal, samples.len(), seed);
    config.groups = sizes.len();
    Cohort { config, samples }
}

fn groups_of(c: &Cohort, idx: &[usize]) -> BTreeSet<u32> {
    idx.iter().map(|&i| c.samples[i].group_id).collect()
}

#[test]
fn equal_groups_split_exactly() {
    let c = with_groups(&[4; 100], 9);
    let s = split_group_level(&c).unwrap();
    assert_eq!((s.train_groups.len(), s.val_groups.len()), (70, 10));
    assert_eq!(groups_of(&c, &s.test).len(), 20);
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (280, 40, 80));
    assert_eq!(s, split_group_level(&c).unwrap());
    assert!(split_group_level(&with_groups(&[5; 9], 1)).is_err());
}

proptest! {
    #[test]
    fn splits_respect_groups_and_targets(sizes in prop::collection::vec(1usize..30, 10..80), seed in any::<u64>()) {
        let c = with_groups(&sizes, seed);
        let Ok(s) = split_group_level(&c) else { return Ok(()) };
        let (tr, va, te) = (groups_of(&c, &s.train), groups_of(&c, &s.val), groups_of(&c, &s.test));
        prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), c.samples.len());
        let n = c.samples.len() as f64;
        let biggest = *sizes.iter().max().unwrap() as f64;
        for (part, target) in [(&s.train, 0.7), (&s.val, 0.1), (&s.test, 0.2)] {
            prop_assert!((part.len() as f64 - target * n).abs() <= biggest, "{} vs {}", part.len(), target * n);
        }

        let h = halve_periodic(&c, &s);
        let f_train: BTreeSet<usize> = h.f_train.iter().copied().collect();
        let f_val: BTreeSet<usize> = h.f_val.iter().copied().collect();
        prop_assert!(h.p_train.iter().all(|i| f_train.contains(i)));
        prop_assert!(h.p_val.iter().all(|i| f_val.contains(i)));
        let mut test = s.test.clone();
        test.sort_unstable();
        prop_assert_eq!(&h.test, &test);
        prop_assert!(groups_of(&c, &h.p_train).is_disjoint(&te));
        prop_assert!(groups_of(&c, &h.p_val).is_disjoint(&te));
        let group_max = |gs: &[u32]| gs.iter().map(|&g| sizes[g as usize]).max().unwrap() as f64;
        prop_assert!((h.p_train.len() as f64 - h.f_train.len() as f64 / 2.0).abs() <= group_max(&s.train_groups));
        prop_assert!((h.p_val.len() as f64 - h.f_val.len() as f64 / 2.0).abs() <= group_max(&s.val_groups));
    }
}

#[test]
fn generated_cohorts_split_cleanly() {
    let c = generate_cohort(&CohortConfig::preset(CohortTag::Internal, 2000, 11)).unwrap();
    let s = split_group_level(&c).unwrap();
    let h = halve_periodic(&c, &s);
    assert!(groups_of(&c, &s.train).is_disjoint(&groups_of(&c, &s.test)));
    assert!(h.p_train.len() < h.f_train.len() && !h.p_val.is_empty());
    let ds = c.dataset(&h.p_train);
    assert_eq!(ds.len(), h.p_train.len());
    assert_eq!(ds.sample(0), c.samples[h.p_train[0]].image.as_slice());
}
