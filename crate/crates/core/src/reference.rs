//! Published MCC values with 95% intervals, transcribed verbatim from the
//! reference study's result tables. These are inputs for re-running the
//! significance chain, not measurements made by this crate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::stats::{significance, SignificanceResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedMcc {
    pub model: String,
    pub mcc: f64,
    pub ci: (f64, f64),
}

/// Models evaluated on one test set, with the comparisons to run among them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedGroup {
    pub label: String,
    pub test_set: String,
    pub rows: Vec<PublishedMcc>,
    pub pairs: Vec<(usize, usize)>,
    /// Verdict the source reports for these comparisons.
    pub reported_significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub label: String,
    pub test_set: String,
    pub model1: String,
    pub model2: String,
    pub reported_significant: bool,
    pub result: SignificanceResult,
}

fn row(model: &str, mcc: f64, lo: f64, hi: f64) -> PublishedMcc {
    PublishedMcc { model: model.to_string(), mcc, ci: (lo, hi) }
}

fn all_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j))).collect()
}

/// The transcribed fixture: partial-data models, full-data model pairs and
/// the external-test triples of the fine-tuned pretrained models.
pub fn published_fixture() -> Vec<PublishedGroup> {
    let external = |test: &str, rows: Vec<PublishedMcc>| PublishedGroup {
        label: "external-if-triple".into(),
        test_set: test.into(),
        pairs: all_pairs(rows.len()),
        rows,
        reported_significant: false,
    };
    vec![
        PublishedGroup {
            label: "partial-data".into(),
            test_set: "internal".into(),
            rows: vec![row("Cold-RP", 0.6204, 0.6073, 0.6335), row("Cold-IP", 0.6964, 0.6840, 0.7088)],
            pairs: vec![(0, 1)],
            reported_significant: true,
        },
        PublishedGroup {
            label: "full-data-pairs".into(),
            test_set: "internal".into(),
            rows: vec![
                row("Cold-RF", 0.6650, 0.6523, 0.6777),
                row("Cold-IF", 0.7187, 0.7066, 0.7308),
                row("Warm-RF", 0.6267, 0.6137, 0.6397),
                row("Warm-IF", 0.7258, 0.7138, 0.7378),
                row("Shrink-RF", 0.6431, 0.6302, 0.6560),
                row("Shrink-IF", 0.7150, 0.7028, 0.7272),
            ],
            pairs: vec![(0, 1), (2, 3), (4, 5)],
            reported_significant: true,
        },
        external(
            "ext_adult",
            vec![
                row("Cold-IF", 0.4378, 0.4226, 0.4530),
                row("Warm-IF", 0.4180, 0.4029, 0.4331),
                row("Shrink-IF", 0.4263, 0.4111, 0.4415),
            ],
        ),
        external(
            "ext_ped2",
            vec![
                row("Cold-IF", 0.1206, 0.1118, 0.1294),
                row("Warm-IF", 0.0955, 0.0876, 0.1034),
                row("Shrink-IF", 0.0936, 0.0858, 0.1014),
            ],
        ),
        external(
            "ext_ped11",
            vec![
                row("Cold-IF", 0.2458, 0.2340, 0.2576),
                row("Warm-IF", 0.2595, 0.2475, 0.2715),
                row("Shrink-IF", 0.2465, 0.2347, 0.2583),
            ],
        ),
        // The Cold-IF upper bound equals its MCC in the source; kept as printed.
        external(
            "ext_ped18",
            vec![
                row("Cold-IF", 0.4281, 0.4117, 0.4281),
                row("Warm-IF", 0.4614, 0.4448, 0.4780),
                row("Shrink-IF", 0.4293, 0.4129, 0.4457),
            ],
        ),
    ]
}

/// Runs the significance chain over every listed comparison.
pub fn replicate_paper_significance(groups: &[PublishedGroup]) -> Result<Vec<ReplicationRow>> {
    let mut out = Vec::new();
    for g in groups {
        for r in &g.rows {
            if !(-1.0..=1.0).contains(&r.mcc) || !(r.ci.0 <= r.ci.1) || r.ci.0 < -1.0 || r.ci.1 > 1.0 {
                return invalid(format!("malformed published row {} in {}", r.model, g.label));
            }
        }
        for &(i, j) in &g.pairs {
            if i >= g.rows.len() || j >= g.rows.len() {
                return invalid(format!("comparison ({i}, {j}) out of range in {}", g.label));
            }
            let (a, b) = (&g.rows[i], &g.rows[j]);
            out.push(ReplicationRow {
                label: g.label.clone(),
                test_set: g.test_set.clone(),
                model1: a.model.clone(),
                model2: b.model.clone(),
                reported_significant: g.reported_significant,
                result: significance(a.mcc, a.ci, b.mcc, b.ci)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_well_formed() {
        let rows = replicate_paper_significance(&published_fixture()).unwrap();
        assert_eq!(rows.len(), 1 + 3 + 4 * 3);
    }

    #[test]
    fn self_comparison_has_zero_z() {
        let g = PublishedGroup {
            label: "self".into(),
            test_set: "internal".into(),
            rows: vec![row("A", 0.5, 0.45, 0.55)],
            pairs: vec![(0, 0)],
            reported_significant: false,
        };
        let r = replicate_paper_significance(&[g]).unwrap();
        assert_eq!(r[0].result.z, 0.0);
        assert_eq!(r[0].result.p_two_tailed, 1.0);
    }

    #[test]
    fn malformed_rows_rejected() {
        let mut g = published_fixture().remove(0);
        g.rows[0].ci = (0.7, 0.6);
        assert!(replicate_paper_significance(&[g]).is_err());
        let mut g = published_fixture().remove(0);
        g.pairs.push((0, 5));
        assert!(replicate_paper_significance(&[g]).is_err());
    }
}
