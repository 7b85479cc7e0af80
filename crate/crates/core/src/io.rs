//! On-disk formats: weight files, cohorts and CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agelfs::AgelfsModel;
use crate::data::{Cohort, CohortConfig, Sample};
use crate::error::{shape_err, Error, Result};
use crate::nn::NetworkSpec;
use crate::tensor::{LayerWeights, TensorF, WeightSet};

/// Seventeen significant digits: enough for an exact `f64` round trip.
pub fn fmt_exact(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_floats(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_exact(*v));
    }
    out.push(']');
}

fn json_usizes(out: &mut String, values: &[usize]) {
    let parts: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    write!(out, "[{}]", parts.join(",")).unwrap();
}

/// Serializes weights as
/// `{"spec_hash": .., "layers": [{"index", "kernel_shape", "kernel", "bias_shape", "bias"}]}`.
pub fn weights_to_json(spec_hash: &str, weights: &WeightSet) -> String {
    let mut out = String::new();
    write!(out, "{{\"spec_hash\":{},\"layers\":[", serde_json::to_string(spec_hash).unwrap()).unwrap();
    for (i, e) in weights.entries.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "\n{{\"index\":{},\"kernel_shape\":", e.layer_index).unwrap();
        json_usizes(&mut out, &e.kernel.shape);
        out.push_str(",\"kernel\":");
        json_floats(&mut out, &e.kernel.values);
        out.push_str(",\"bias_shape\":");
        json_usizes(&mut out, &e.bias.shape);
        out.push_str(",\"bias\":");
        json_floats(&mut out, &e.bias.values);
        out.push('}');
    }
    out.push_str("\n]}\n");
    out
}

#[derive(Deserialize)]
struct LayerDoc {
    index: usize,
    kernel_shape: Vec<usize>,
    kernel: Vec<f64>,
    bias_shape: Vec<usize>,
    bias: Vec<f64>,
}

#[derive(Deserialize)]
struct WeightsDoc {
    spec_hash: String,
    layers: Vec<LayerDoc>,
}

/// Parses a weight document, returning its spec hash and weights.
pub fn weights_from_json(text: &str) -> Result<(String, WeightSet)> {
    let doc: WeightsDoc = serde_json::from_str(text)?;
    let entries = doc
        .layers
        .into_iter()
        .map(|l| {
            Ok(LayerWeights {
                layer_index: l.index,
                kernel: TensorF::new(l.kernel_shape, l.kernel)?,
                bias: TensorF::new(l.bias_shape, l.bias)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((doc.spec_hash, WeightSet::new(entries)))
}

pub fn write_weights(path: &Path, spec: &NetworkSpec, weights: &WeightSet) -> Result<()> {
    spec.check_weights(weights)?;
    fs::write(path, weights_to_json(&spec.spec_hash(), weights))?;
    Ok(())
}

/// Reads weights written for `spec`, rejecting files built for another architecture.
pub fn read_weights(path: &Path, spec: &NetworkSpec) -> Result<WeightSet> {
    let (hash, weights) = weights_from_json(&fs::read_to_string(path)?)?;
    if hash != spec.spec_hash() {
        return shape_err(format!("{} was written for a different network", path.display()));
    }
    spec.check_weights(&weights)?;
    Ok(weights)
}

/// The AGELFS model document; constituents are referenced by path.
pub fn agelfs_to_json(model: &AgelfsModel, constituent_paths: &[String]) -> Result<String> {
    if constituent_paths.len() != model.spec.constituents.len() {
        return shape_err("one path per constituent required");
    }
    let (a, ab) = model.attention_weights();
    let (w, wb) = model.head_dense();
    let mut out = String::from("{\"constituents\":");
    out.push_str(&serde_json::to_string(constituent_paths)?);
    let mut block = |name: &str, k: &TensorF, b: &TensorF| {
        write!(out, ",\n\"{name}\":{{\"kernel_shape\":").unwrap();
        json_usizes(&mut out, &k.shape);
        out.push_str(",\"kernel\":");
        json_floats(&mut out, &k.values);
        out.push_str(",\"bias\":");
        json_floats(&mut out, &b.values);
        out.push('}');
    };
    block("attention", a, ab);
    block("dense", w, wb);
    write!(
        out,
        ",\n\"fuzziness\":{},\"fuzziness_raw\":{},\"head_seed\":{}}}\n",
        fmt_exact(model.fuzziness()),
        fmt_exact(model.head.entries[2].kernel.values[0]),
        model.spec.head_seed
    )
    .unwrap();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub config: CohortConfig,
    pub n_samples: usize,
    pub positives: usize,
    pub samples_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// JSON-lines text (one sample per line) and its manifest.
pub fn cohort_to_jsonl(cohort: &Cohort) -> Result<(String, CohortManifest)> {
    let mut text = String::new();
    for s in &cohort.samples {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    let manifest = CohortManifest {
        config: cohort.config.clone(),
        n_samples: cohort.samples.len(),
        positives: cohort.samples.iter().filter(|s| s.label == 1).count(),
        samples_sha256: sha256_hex(text.as_bytes()),
    };
    Ok((text, manifest))
}

/// Writes `<stem>.jsonl` and `<stem>.manifest.json` into `dir`.
pub fn write_cohort(dir: &Path, stem: &str, cohort: &Cohort) -> Result<()> {
    let (text, manifest) = cohort_to_jsonl(cohort)?;
    fs::write(dir.join(format!("{stem}.jsonl")), text)?;
    fs::write(dir.join(format!("{stem}.manifest.json")), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_cohort(dir: &Path, stem: &str) -> Result<Cohort> {
    let text = fs::read_to_string(dir.join(format!("{stem}.jsonl")))?;
    let manifest: CohortManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.manifest.json")))?)?;
    if sha256_hex(text.as_bytes()) != manifest.samples_sha256 {
        return Err(Error::Validation(format!("cohort {stem} does not match its manifest")));
    }
    let samples = text
        .lines()
        .map(|l| serde_json::from_str::<Sample>(l).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    Ok(Cohort { config: manifest.config, samples })
}

/// Minimal CSV builder; every row must match the header width.
#[derive(Debug, Clone)]
pub struct Csv {
    width: usize,
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { width: header.len(), text: header.join(",") + "\n" }
    }

    pub fn row<S: AsRef<str>>(&mut self, cells: &[S]) {
        assert_eq!(cells.len(), self.width, "CSV row width");
        let cells: Vec<&str> = cells.iter().map(|c| c.as_ref()).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text)?;
        Ok(())
    }
}

/// Shortest round-trip representation, used for CSV cells.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_cohort, CohortTag};
    use crate::init::cold_init;

    #[test]
    fn weights_round_trip_bitwise() {
        let spec = NetworkSpec::desk_default();
        let w = cold_init(&spec, 3).unwrap();
        let text = weights_to_json(&spec.spec_hash(), &w);
        let (hash, back) = weights_from_json(&text).unwrap();
        assert_eq!(hash, spec.spec_hash());
        assert_eq!(back, w);
        assert!(back.params().zip(w.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn exact_format_has_seventeen_digits() {
        assert_eq!(fmt_exact(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_exact(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn cohort_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_cohort(&CohortConfig::preset(CohortTag::ExtPed2, 60, 4)).unwrap();
        write_cohort(dir.path(), "ped2", &c).unwrap();
        assert_eq!(read_cohort(dir.path(), "ped2").unwrap(), c);
    }

    #[test]
    #[should_panic(expected = "CSV row width")]
    fn csv_rejects_ragged_rows() {
        let mut csv = Csv::new(&["a", "b"]);
        csv.row(&["1"]);
    }
}
