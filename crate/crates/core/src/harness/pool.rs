//! The configuration pool: every (case, method, prep, representation, seed)
//! cell is attributed, mapped, oriented, post-processed and aligned with the
//! expert mask. Finished cells are cached on disk under a content hash.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{modality_key, HarnessError, PoolConfig, Result};
use crate::agreement::{
    align_case, annotation_to_mask, mask_region, AlignConfig, AlignmentResult, AnnotationModality, ExpertAnnotation,
    Representation,
};
use crate::attribution::{attribute, BaselineSet, Method, MethodParams};
use crate::autodiff::Tensor;
use crate::crossmodal::{
    bipolar_profile, map_to_cine, orient_by_diagnosis, post_process, BipolarProfile, MappedProfile,
};
use crate::model::{Model, ModelError};
use crate::signal::{DatasetEntry, Label};

/// Trained models by input modality.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoolModels<'a> {
    pub ecg: Option<&'a Model>,
    pub cine: Option<&'a Model>,
}

/// Reference inputs for baseline-driven methods, by input modality.
#[derive(Debug, Clone, Default)]
pub struct PoolBaselines {
    pub ecg: Option<BaselineSet>,
    pub cine: Option<BaselineSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellError {
    pub case_id: String,
    pub config: AlignConfig,
    pub seed: u64,
    pub error: HarnessError,
}

impl std::fmt::Display for CellError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}/{}/{} seed {}: {}",
            self.case_id,
            self.config.representation.key(),
            self.config.method.key(),
            self.config.prep.key(),
            self.seed,
            self.error
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolOutcome {
    /// Sorted by case, configuration and seed.
    pub results: Vec<AlignmentResult>,
    pub errors: Vec<CellError>,
    pub cache_hits: usize,
    pub computed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Ecg,
    Cine,
}

impl Source {
    fn of(rep: Representation) -> Self {
        match rep {
            Representation::Ecg12 | Representation::CineMapped => Source::Ecg,
            Representation::CineDirect => Source::Cine,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Source::Ecg => "12-lead",
            Source::Cine => "trajectory",
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of a dataset entry.
pub fn case_digest(entry: &DatasetEntry) -> String {
    sha256_hex(&serde_json::to_vec(entry).expect("dataset entries serialize"))
}

fn model_digest(model: Option<&Model>) -> Result<Option<String>> {
    model
        .map(|m| {
            m.to_checkpoint()
                .digest()
                .map_err(|e| HarnessError::Model(ModelError::from(e)))
        })
        .transpose()
}

fn baseline_digest(set: Option<&BaselineSet>) -> String {
    let mut h = Sha256::new();
    for t in set.map(BaselineSet::records).unwrap_or_default() {
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

struct Shared<'a> {
    config: &'a PoolConfig,
    models: PoolModels<'a>,
    baselines: &'a PoolBaselines,
    annotations: HashMap<(&'a str, AnnotationModality), &'a ExpertAnnotation>,
    digests: [Option<String>; 2],
    baseline_digests: [String; 2],
    cache: Option<&'a Path>,
}

impl Shared<'_> {
    fn model(&self, s: Source) -> Option<&Model> {
        match s {
            Source::Ecg => self.models.ecg,
            Source::Cine => self.models.cine,
        }
    }

    fn baselines(&self, s: Source) -> Option<&BaselineSet> {
        match s {
            Source::Ecg => self.baselines.ecg.as_ref(),
            Source::Cine => self.baselines.cine.as_ref(),
        }
    }

    fn cache_key(
        &self,
        s: Source,
        case: &str,
        ann: &ExpertAnnotation,
        params: &MethodParams,
        cfg: AlignConfig,
        seed: u64,
    ) -> String {
        let i = s as usize;
        let doc = serde_json::json!({
            "model": self.digests[i],
            "case": case,
            "annotation": ann,
            "params": params,
            "baselines": self.baseline_digests[i],
            "prep": cfg.prep,
            "representation": cfg.representation,
            "seed": seed,
            "window_ms": self.config.window_ms,
        });
        sha256_hex(doc.to_string().as_bytes())
    }
}

fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.json"))
}

fn cache_read(dir: &Path, key: &str) -> Option<AlignmentResult> {
    let text = fs::read_to_string(cache_path(dir, key)).ok()?;
    serde_json::from_str(&text).ok()
}

fn cache_write(dir: &Path, key: &str, result: &AlignmentResult) -> Result<()> {
    let path = cache_path(dir, key);
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string(result).expect("results serialize"))?;
    fs::rename(&tmp, &path)?;
    Ok(())
}

struct Task<'a> {
    case: &'a DatasetEntry,
    digest: String,
    method: Method,
    seed: u64,
    source: Source,
    cells: Vec<AlignConfig>,
}

#[derive(Default)]
struct TaskOutput {
    results: Vec<AlignmentResult>,
    errors: Vec<CellError>,
    hits: usize,
    computed: usize,
    io: Option<HarnessError>,
}

fn input_for(case: &DatasetEntry, s: Source) -> Result<Tensor> {
    match s {
        Source::Ecg => Ok(case.record.to_tensor()),
        Source::Cine => case
            .cine
            .as_ref()
            .map(|c| c.to_tensor())
            .ok_or_else(|| HarnessError::MissingTrajectory(case.record.case_id.clone())),
    }
}

fn attribution_seed(seed: u64, digest: &str) -> u64 {
    let prefix = u64::from_str_radix(&digest[..16], 16).unwrap_or(0);
    seed ^ prefix
}

struct Computed {
    phi: BipolarProfile,
    mapped: Option<MappedProfile>,
    prediction: Label,
}

fn compute_attribution(shared: &Shared, task: &Task, params: &MethodParams) -> Result<Computed> {
    let model = shared
        .model(task.source)
        .ok_or(HarnessError::MissingCheckpoint(task.source.name()))?;
    let x = input_for(task.case, task.source)?;
    let seed = attribution_seed(task.seed, &task.digest);
    let attr = attribute(
        model,
        &task.case.record.case_id,
        &x,
        params,
        shared.baselines(task.source),
        seed,
    )?;
    let phi = bipolar_profile(&attr)?;
    let mapped = if task
        .cells
        .iter()
        .any(|c| c.representation == Representation::CineMapped)
    {
        Some(map_to_cine(&phi)?)
    } else {
        None
    };
    Ok(Computed {
        phi,
        mapped,
        prediction: model.predict_label(&x)?,
    })
}

fn compute_cell(
    shared: &Shared,
    task: &Task,
    computed: &Computed,
    ann: &ExpertAnnotation,
    cfg: AlignConfig,
) -> Result<AlignmentResult> {
    let rate = task.case.record.sample_rate_hz;
    let mask = annotation_to_mask(ann, rate, shared.config.window_ms)?;
    let (profile, gt) = match cfg.representation {
        Representation::Ecg12 => (computed.phi.clone(), mask),
        Representation::CineMapped => (
            computed
                .mapped
                .as_ref()
                .expect("mapped profile computed")
                .temporal_profile(),
            mask,
        ),
        Representation::CineDirect => {
            let rows = computed.phi.channels();
            (computed.phi.clone(), mask.broadcast_rows(rows)?)
        }
    };
    let oriented = orient_by_diagnosis(&profile, ann.diagnosis)?;
    let map = post_process(&oriented, cfg.prep, &mask_region(&gt)?)?;
    let mut result = align_case(&map, &gt, cfg)?;
    result.seed = task.seed;
    result.diagnosis = ann.diagnosis;
    result.prediction = Some(computed.prediction);
    Ok(result)
}

fn run_task(shared: &Shared, task: &Task) -> TaskOutput {
    let mut out = TaskOutput::default();
    let case_id = task.case.record.case_id.as_str();
    let params = shared.config.params_for(task.method);
    let fail = |out: &mut TaskOutput, cfg: AlignConfig, error: HarnessError| {
        out.errors.push(CellError {
            case_id: case_id.to_string(),
            config: cfg,
            seed: task.seed,
            error,
        });
    };

    let mut pending = Vec::new();
    for &cfg in &task.cells {
        let modality = cfg.representation.modality();
        let Some(&ann) = shared.annotations.get(&(case_id, modality)) else {
            fail(
                &mut out,
                cfg,
                HarnessError::MissingAnnotation {
                    case_id: case_id.into(),
                    modality: modality_key(modality),
                },
            );
            continue;
        };
        if shared.model(task.source).is_none() {
            fail(&mut out, cfg, HarnessError::MissingCheckpoint(task.source.name()));
            continue;
        }
        let key = shared.cache_key(task.source, &task.digest, ann, &params, cfg, task.seed);
        match shared.cache.and_then(|dir| cache_read(dir, &key)) {
            Some(hit) => {
                out.hits += 1;
                out.results.push(hit);
            }
            None => pending.push((cfg, ann, key)),
        }
    }
    if pending.is_empty() {
        return out;
    }

    let computed = match compute_attribution(shared, task, &params) {
        Ok(c) => c,
        Err(e) => {
            for (cfg, _, _) in pending {
                fail(&mut out, cfg, e.clone());
            }
            return out;
        }
    };
    for (cfg, ann, key) in pending {
        match compute_cell(shared, task, &computed, ann, cfg) {
            Ok(result) => {
                if let Some(dir) = shared.cache {
                    if let Err(e) = cache_write(dir, &key, &result) {
                        out.io.get_or_insert(e);
                    }
                }
                out.computed += 1;
                out.results.push(result);
            }
            Err(e) => fail(&mut out, cfg, e),
        }
    }
    out
}

/// Runs every configured cell. Per-cell failures are collected in
/// [`PoolOutcome::errors`]; configuration, duplicate-annotation and cache
/// I/O problems abort the run.
pub fn run_pool(
    cases: &[DatasetEntry],
    annotations: &[ExpertAnnotation],
    models: PoolModels,
    baselines: &PoolBaselines,
    config: &PoolConfig,
    cache: Option<&Path>,
) -> Result<PoolOutcome> {
    config.validate()?;
    let mut ann_map = HashMap::new();
    for a in annotations {
        if ann_map.insert((a.case_id.as_str(), a.modality), a).is_some() {
            return Err(HarnessError::Duplicate(format!(
                "{} annotation for case {}",
                a.modality.key(),
                a.case_id
            )));
        }
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = cases.iter().find(|c| !seen.insert(c.record.case_id.as_str())) {
        return Err(HarnessError::Duplicate(format!("case {}", dup.record.case_id)));
    }
    if let Some(dir) = cache {
        fs::create_dir_all(dir)?;
    }
    let shared = Shared {
        config,
        models,
        baselines,
        annotations: ann_map,
        digests: [model_digest(models.ecg)?, model_digest(models.cine)?],
        baseline_digests: [
            baseline_digest(baselines.ecg.as_ref()),
            baseline_digest(baselines.cine.as_ref()),
        ],
        cache,
    };

    let mut tasks = Vec::new();
    for case in cases {
        let digest = case_digest(case);
        for &method in &config.methods {
            for &seed in &config.seeds {
                for source in [Source::Ecg, Source::Cine] {
                    let cells: Vec<AlignConfig> = config
                        .representations
                        .iter()
                        .filter(|&&r| Source::of(r) == source)
                        .flat_map(|&representation| {
                            config.preps.iter().map(move |&prep| AlignConfig {
                                representation,
                                method,
                                prep,
                            })
                        })
                        .collect();
                    if !cells.is_empty() {
                        tasks.push(Task {
                            case,
                            digest: digest.clone(),
                            method,
                            seed,
                            source,
                            cells,
                        });
                    }
                }
            }
        }
    }

    let outputs: Vec<TaskOutput> = tasks.par_iter().map(|t| run_task(&shared, t)).collect();
    let mut outcome = PoolOutcome::default();
    for o in outputs {
        if let Some(e) = o.io {
            return Err(e);
        }
        outcome.results.extend(o.results);
        outcome.errors.extend(o.errors);
        outcome.cache_hits += o.hits;
        outcome.computed += o.computed;
    }
    outcome
        .results
        .sort_by(|a, b| (&a.case_id, a.config, a.seed).cmp(&(&b.case_id, b.config, b.seed)));
    outcome
        .errors
        .sort_by(|a, b| (&a.case_id, a.config, a.seed).cmp(&(&b.case_id, b.config, b.seed)));
    Ok(outcome)
}

/// One JSON object per line.
pub fn write_results<W: Write>(mut out: W, results: &[AlignmentResult]) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut out, r).map_err(|e| HarnessError::Io(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_results(text: &str) -> Result<Vec<AlignmentResult>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
