//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use cinemap::agreement::{annotation_to_mask, mask_to_annotation, parse_annotations, ExpertAnnotation};
use cinemap::attribution::{attribute, ClassAttribution};
use cinemap::crossmodal::{
    bipolar_profile, map_to_cine, orient_by_diagnosis, post_process, BipolarProfile, Prep, Region,
};
use cinemap::harness::{
    cohort_report, emit_report, export_case_bundle, read_results, run_pool, synthetic_annotations, write_results,
    PoolBaselines, PoolConfig, PoolModels, ReportFormat,
};
use cinemap::model::{build_model, train_and_evaluate, Modality, ModelConfig, Sample, TrainConfig};
use cinemap::signal::{
    generate_synthetic_cohort, save_dataset, stratified_split, CaseKey, DatasetEntry, SplitRatios, SynthConfig,
    NUM_SPATIAL_DIMS,
};

use crate::files::{
    input_for, load_data, load_model, method_of, method_params, model_modality, normal_baselines, read_diagnoses,
    read_json, read_ndjson, read_text, relative_to, write_json, write_ndjson, write_text,
};
use crate::{FormatArg, MethodArg, ModalityArg, PrepArg, Status};

pub fn generate(
    n_normal: usize,
    n_abnormal: usize,
    seed: u64,
    config: Option<&Path>,
    out: &Path,
    annotations: Option<&Path>,
) -> Result<Status> {
    let config: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    let cases = generate_synthetic_cohort(n_normal, n_abnormal, seed, &config)?;
    if let Some(path) = annotations {
        let anns: Vec<ExpertAnnotation> = cases
            .iter()
            .flat_map(|c| synthetic_annotations(c, "synthetic"))
            .collect();
        write_json(path, &anns)?;
    }
    let entries: Vec<DatasetEntry> = cases.into_iter().map(DatasetEntry::from).collect();
    save_dataset(out, &entries)?;
    eprintln!("wrote {} cases to {}", entries.len(), out.display());
    Ok(Status::Done)
}

/// Contents of the `train --config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainJob {
    /// Defaults to the standard architecture for the chosen modality.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub split: Option<OuterSplit>,
}

/// Patient-level split proportions. The model trains on the train and
/// val parts together; early stopping holds out its own share of them.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct OuterSplit {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: Option<u64>,
}

impl Default for OuterSplit {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self {
            train: r.train,
            val: r.val,
            test: r.test,
            seed: None,
        }
    }
}

fn modality_of(arg: ModalityArg) -> Modality {
    match arg {
        ModalityArg::Ecg => Modality::Ecg,
        ModalityArg::Cine => Modality::Cine,
    }
}

fn sample_for(entry: &DatasetEntry, modality: Modality) -> Result<Sample> {
    match modality {
        Modality::Ecg => Ok(Sample::from_record(&entry.record)),
        Modality::Cine => {
            let cine = entry
                .cine
                .as_ref()
                .ok_or_else(|| anyhow!("case {} has no trajectory", entry.record.case_id))?;
            Ok(Sample::from_cine(cine, entry.record.label))
        }
    }
}

pub fn train(data: &Path, modality: ModalityArg, config: Option<&Path>, seed: u64, out: &Path) -> Result<Status> {
    let job: TrainJob = match config {
        Some(p) => read_json(p)?,
        None => TrainJob::default(),
    };
    let modality = modality_of(modality);
    let model_config = job.model.clone().unwrap_or_else(|| ModelConfig::for_modality(modality));
    if model_config.in_channels != modality.channels() {
        bail!(
            "model expects {} input channels but the {modality:?} modality has {}",
            model_config.in_channels,
            modality.channels()
        );
    }
    let entries = load_data(data)?;
    let keys: Vec<CaseKey> = entries
        .iter()
        .map(|e| CaseKey {
            case_id: e.record.case_id.clone(),
            patient_id: e.record.patient_id.clone(),
            label: e.record.label,
        })
        .collect();
    let outer = job.split.unwrap_or_default();
    let ratios = SplitRatios {
        train: outer.train,
        val: outer.val,
        test: outer.test,
    };
    let split = stratified_split(&keys, ratios, outer.seed.unwrap_or(seed))?;
    let pick = |ids: &[String]| -> Result<Vec<Sample>> {
        let ids: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        entries
            .iter()
            .filter(|e| ids.contains(e.record.case_id.as_str()))
            .map(|e| sample_for(e, modality))
            .collect()
    };
    let train_set = pick(&[split.train, split.val].concat())?;
    let test_set = pick(&split.test)?;

    let mut model = build_model(&model_config, seed)?;
    let report = train_and_evaluate(&mut model, &train_set, &test_set, &job.train, seed)?;
    model.to_checkpoint().save(out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(Status::Done)
}

fn attribute_all(
    model: &cinemap::model::Model,
    entries: &[DatasetEntry],
    params: &cinemap::attribution::MethodParams,
    baselines: Option<&cinemap::attribution::BaselineSet>,
    seed: u64,
) -> Result<Vec<ClassAttribution>> {
    let modality = model_modality(model);
    entries
        .iter()
        .map(|e| {
            let x = input_for(e, modality)?;
            attribute(model, &e.record.case_id, &x, params, baselines, seed)
                .with_context(|| format!("case {}", e.record.case_id))
        })
        .collect()
}

pub fn attribute_cmd(
    checkpoint: &Path,
    data: &Path,
    method: MethodArg,
    params: Option<&str>,
    baselines: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<Status> {
    let model = load_model(checkpoint)?;
    let entries = load_data(data)?;
    let params = method_params(method_of(method), params)?;
    let reference = match baselines {
        Some(p) => normal_baselines(&load_data(p)?, model_modality(&model))?,
        None => normal_baselines(&entries, model_modality(&model))?,
    };
    let attributions = attribute_all(&model, &entries, &params, reference.as_ref(), seed)?;
    write_ndjson(out, &attributions)?;
    eprintln!("wrote {} attributions to {}", attributions.len(), out.display());
    Ok(Status::Done)
}

fn prep_of(arg: PrepArg) -> Prep {
    match arg {
        PrepArg::Positive => Prep::Positive,
        PrepArg::Absolute => Prep::Absolute,
        PrepArg::Scaled => Prep::Scaled,
    }
}

pub fn map(attributions: &Path, diagnoses: &Path, prep: PrepArg, out: &Path) -> Result<Status> {
    let attributions: Vec<ClassAttribution> = read_ndjson(attributions)?;
    let diagnoses = read_diagnoses(diagnoses)?;
    let region = Region::all(NUM_SPATIAL_DIMS)?;
    let maps = attributions
        .iter()
        .map(|a| {
            let mapped = map_to_cine(&bipolar_profile(a)?)?;
            let on_cine = BipolarProfile::new(&a.case_id, a.method, mapped.replicated)?;
            let diagnosis = diagnoses.get(&a.case_id).copied();
            let oriented = orient_by_diagnosis(&on_cine, diagnosis)?;
            Ok(post_process(&oriented, prep_of(prep), &region)?)
        })
        .collect::<Result<Vec<_>>>()?;
    write_ndjson(out, &maps)?;
    Ok(Status::Done)
}

/// Contents of `pool --config`. Relative paths resolve against the file's
/// directory; the remaining keys are the pool settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolJob {
    pub data: PathBuf,
    pub annotations: PathBuf,
    #[serde(default)]
    pub ecg_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub cine_checkpoint: Option<PathBuf>,
    /// Reference cases for baseline-driven methods; defaults to `data`.
    #[serde(default)]
    pub baselines: Option<PathBuf>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub pool: PoolConfig,
}

pub fn pool(config: &Path, out: &Path) -> Result<Status> {
    let job: PoolJob = read_json(config)?;
    let at = |p: &Path| relative_to(config, p);
    let entries = load_data(&at(&job.data))?;
    let annotations = parse_annotations(&read_text(&at(&job.annotations))?)?;
    let ecg = job.ecg_checkpoint.as_deref().map(|p| load_model(&at(p))).transpose()?;
    let cine = job.cine_checkpoint.as_deref().map(|p| load_model(&at(p))).transpose()?;
    let reference = match &job.baselines {
        Some(p) => load_data(&at(p))?,
        None => entries.clone(),
    };
    let baselines = PoolBaselines {
        ecg: normal_baselines(&reference, Modality::Ecg)?,
        cine: if cine.is_some() {
            normal_baselines(&reference, Modality::Cine)?
        } else {
            None
        },
    };
    let cache = job.cache_dir.as_deref().map(at);
    let outcome = run_pool(
        &entries,
        &annotations,
        PoolModels {
            ecg: ecg.as_ref(),
            cine: cine.as_ref(),
        },
        &baselines,
        &job.pool,
        cache.as_deref(),
    )?;

    let mut buf = Vec::new();
    write_results(&mut buf, &outcome.results)?;
    std::fs::write(out, buf).with_context(|| format!("writing {}", out.display()))?;
    for e in &outcome.errors {
        eprintln!("cell error: {e}");
    }
    eprintln!(
        "{} results ({} computed, {} cached), {} failed cells",
        outcome.results.len(),
        outcome.computed,
        outcome.cache_hits,
        outcome.errors.len()
    );
    Ok(if outcome.errors.is_empty() {
        Status::Done
    } else {
        Status::Partial
    })
}

pub fn report(
    results: &Path,
    format: FormatArg,
    bootstrap_b: usize,
    alpha: f64,
    seed: u64,
    out: Option<&Path>,
) -> Result<Status> {
    let results = read_results(&read_text(results)?)?;
    if results.is_empty() {
        bail!("results table is empty");
    }
    let report = cohort_report(&results, bootstrap_b, alpha, seed)?;
    let format = match format {
        FormatArg::Md => ReportFormat::Markdown,
        FormatArg::Json => ReportFormat::Json,
    };
    let text = emit_report(&report, format);
    match out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(Status::Done)
}

pub struct ExportArgs<'a> {
    pub case: &'a str,
    pub data: &'a Path,
    pub blind: bool,
    pub checkpoint: Option<&'a Path>,
    pub cine_checkpoint: Option<&'a Path>,
    pub annotations: Option<&'a Path>,
    pub method: MethodArg,
    pub params: Option<&'a str>,
    pub seed: u64,
    pub out: &'a Path,
}

pub fn export_ui(args: ExportArgs) -> Result<Status> {
    let entries = load_data(args.data)?;
    let entry = entries
        .iter()
        .find(|e| e.record.case_id == args.case)
        .ok_or_else(|| anyhow!("case {} not in {}", args.case, args.data.display()))?;
    let annotations = match args.annotations {
        Some(p) => parse_annotations(&read_text(p)?)?,
        None => Vec::new(),
    };

    let mut attributions = Vec::new();
    let mut mapped = None;
    let mut prediction = None;
    if !args.blind {
        let params = method_params(method_of(args.method), args.params)?;
        for path in [args.checkpoint, args.cine_checkpoint].into_iter().flatten() {
            let model = load_model(path)?;
            let modality = model_modality(&model);
            let reference = normal_baselines(&entries, modality)?;
            let x = input_for(entry, modality)?;
            let a = attribute(&model, args.case, &x, &params, reference.as_ref(), args.seed)?;
            if modality == Modality::Ecg {
                mapped = Some(map_to_cine(&bipolar_profile(&a)?)?);
                prediction = Some(model.predict_label(&x)?);
            }
            attributions.push(a);
        }
    }
    let bundle = export_case_bundle(
        entry,
        &attributions,
        mapped.as_ref(),
        &annotations,
        prediction,
        args.blind,
    )?;
    write_json(args.out, &bundle)?;
    Ok(Status::Done)
}

pub fn import_annotations(
    input: &Path,
    data: Option<&Path>,
    sample_rate: u32,
    window_ms: f64,
    out: Option<&Path>,
) -> Result<Status> {
    let annotations = parse_annotations(&read_text(input)?)?;
    let rates: BTreeMap<String, u32> = match data {
        Some(p) => load_data(p)?
            .into_iter()
            .map(|e| (e.record.case_id, e.record.sample_rate_hz))
            .collect(),
        None => BTreeMap::new(),
    };
    let mut rasterized = Vec::with_capacity(annotations.len());
    for (i, ann) in annotations.iter().enumerate() {
        let rate = match (data, rates.get(&ann.case_id)) {
            (None, _) => sample_rate,
            (Some(_), Some(&r)) => r,
            (Some(p), None) => bail!("annotation {i}: case {} not in {}", ann.case_id, p.display()),
        };
        let mask = annotation_to_mask(ann, rate, window_ms)
            .with_context(|| format!("annotation {i} (case {}, {})", ann.case_id, ann.modality.key()))?;
        println!(
            "{}\t{}\t{}\trows={}\tcells={}",
            ann.case_id,
            ann.annotator_id,
            ann.modality.key(),
            mask.selected_leads.len(),
            mask.count()
        );
        let mut back = mask_to_annotation(
            &mask,
            ann.modality,
            rate,
            &ann.case_id,
            &ann.annotator_id,
            ann.diagnosis,
        )?;
        back.free_text = ann.free_text.clone();
        rasterized.push(back);
    }
    if let Some(p) = out {
        write_json(p, &rasterized)?;
    }
    Ok(Status::Done)
}
