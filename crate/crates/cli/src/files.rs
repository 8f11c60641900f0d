//! File formats shared by the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use cinemap::attribution::{BaselineSet, Method, MethodParams};
use cinemap::autodiff::{Checkpoint, Tensor};
use cinemap::model::{Modality, Model};
use cinemap::signal::{load_dataset, DatasetEntry, Label, NUM_LEADS};

use crate::MethodArg;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

pub fn load_data(path: &Path) -> Result<Vec<DatasetEntry>> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(Model::from_checkpoint(&ck)?)
}

/// Input modality a model was trained on, judged by its channel count.
pub fn model_modality(model: &Model) -> Modality {
    if model.config().in_channels == NUM_LEADS {
        Modality::Ecg
    } else {
        Modality::Cine
    }
}

pub fn input_for(entry: &DatasetEntry, modality: Modality) -> Result<Tensor> {
    match modality {
        Modality::Ecg => Ok(entry.record.to_tensor()),
        Modality::Cine => entry
            .cine
            .as_ref()
            .map(|c| c.to_tensor())
            .ok_or_else(|| anyhow!("case {} has no trajectory", entry.record.case_id)),
    }
}

/// Normal cases of `entries` as a reference set, if there are any.
pub fn normal_baselines(entries: &[DatasetEntry], modality: Modality) -> Result<Option<BaselineSet>> {
    let inputs: Vec<Tensor> = entries
        .iter()
        .filter(|e| e.record.label == Label::Normal)
        .filter(|e| modality == Modality::Ecg || e.cine.is_some())
        .map(|e| input_for(e, modality))
        .collect::<Result<_>>()?;
    if inputs.is_empty() {
        return Ok(None);
    }
    Ok(Some(BaselineSet::new(inputs)?))
}

pub fn method_of(arg: MethodArg) -> Method {
    match arg {
        MethodArg::Ig => Method::IntegratedGradients,
        MethodArg::Gradshap => Method::GradientShap,
        MethodArg::Kernelshap => Method::KernelShap,
        MethodArg::Lime => Method::Lime,
    }
}

/// Parameters from an inline JSON object or a file. The `method` tag may be
/// omitted; if present it must agree with `method`.
pub fn method_params(method: Method, spec: Option<&str>) -> Result<MethodParams> {
    let Some(spec) = spec else {
        return Ok(MethodParams::defaults(method));
    };
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else {
        read_text(Path::new(spec))?
    };
    let mut value: Value = serde_json::from_str(&text).context("parsing method parameters")?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| anyhow!("method parameters must be a JSON object"))?;
    match obj.get("method").and_then(Value::as_str) {
        Some(tag) if Method::parse(tag) != Some(method) => {
            bail!("parameters are for {tag:?}, not {}", method.key())
        }
        Some(_) => {}
        None => {
            obj.insert("method".into(), Value::String(method.key().into()));
        }
    }
    serde_json::from_value(value).context("method parameters")
}

fn parse_label(v: &Value) -> Option<Label> {
    match v {
        Value::String(s) => Label::ALL.into_iter().find(|l| l.name().eq_ignore_ascii_case(s)),
        Value::Number(n) => n.as_u64().and_then(|i| Label::from_index(i as usize)),
        _ => None,
    }
}

/// `{"case_id": "Normal" | "Abnormal" | 0 | 1, ...}`
pub fn read_diagnoses(path: &Path) -> Result<BTreeMap<String, Label>> {
    let raw: BTreeMap<String, Value> = read_json(path)?;
    raw.into_iter()
        .map(|(case, v)| {
            let label = parse_label(&v).ok_or_else(|| anyhow!("case {case}: unknown diagnosis {v}"))?;
            Ok((case, label))
        })
        .collect()
}

/// `path` taken relative to the directory holding `base`.
pub fn relative_to(base: &Path, path: &Path) -> PathBuf {
    match base.parent() {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}
