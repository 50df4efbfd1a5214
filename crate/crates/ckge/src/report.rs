//! Report generation. Everything in a report is recomputed from the
//! per-session checkpoints on disk (plus the deterministic session split),
//! so regenerating a report is an integrity check, not a cache read:
//! identical checkpoints always produce identical report bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::checkpoint;
use crate::config::{parse_file, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{
    acc, build_matrices, bwt, fwt, lca, ms, plus_bwt, rem, sss, Measure, MetricMatrix, TraceEntry,
};
use crate::methods::{Method, TRIPLE_BYTES};
use crate::runner::{cell_dir, load_session, prepare, session_complete, session_dir, CONFIG_FILE};
use crate::sampler::SessionDataset;

/// Everything measured for one (method, seed) grid cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub seed: u64,
    pub complete: bool,
    /// Sessions whose checkpoints are missing or incomplete.
    pub missing_sessions: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrr_matrix: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hits10_matrix: Option<Vec<Vec<f64>>>,
    /// U(theta_i): model plus persistent method memory after each session.
    pub model_bytes: Vec<u64>,
    /// U(SS_i): training samples carried into each session (Batch only).
    pub stored_bytes: Vec<u64>,
    /// Per-session validation traces, one entry per epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub traces: Option<Vec<Vec<TraceEntry>>>,
    /// Scalar measures keyed by name (acc_hits10, fwt_mrr, ms, sss, ...).
    pub measures: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub measure: String,
    pub mean: f64,
    pub std: f64,
    /// How many seeds contributed (complete cells only).
    pub seeds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub cells: Vec<CellReport>,
    /// Human-readable notes for anything the summary had to leave out.
    pub gaps: Vec<String>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    /// The full effective configuration, echoed key by key.
    pub config: Vec<(String, String)>,
    pub complete: bool,
    pub methods: Vec<MethodReport>,
}

/// Mean and population standard deviation (a single sample has std 0).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn matrix_measures(out: &mut BTreeMap<String, f64>, m: &MetricMatrix, suffix: &str) {
    out.insert(format!("acc_{suffix}"), acc(m));
    if let Some(v) = fwt(m) {
        out.insert(format!("fwt_{suffix}"), v);
    }
    if let Some(v) = bwt(m) {
        out.insert(format!("bwt_{suffix}"), v);
    }
    if let Some(v) = plus_bwt(m) {
        out.insert(format!("pbwt_{suffix}"), v);
    }
    if let Some(v) = rem(m) {
        out.insert(format!("rem_{suffix}"), v);
    }
}

fn cell_report(
    cfg: &RunConfig,
    method: Method,
    seed: u64,
    sessions: &[SessionDataset],
    total_train_bytes: u64,
) -> Result<CellReport> {
    let cell = cell_dir(&cfg.out, method, seed);
    let missing: Vec<usize> = (0..cfg.sessions)
        .filter(|&n| !session_complete(&session_dir(&cell, n), method))
        .collect();
    if !missing.is_empty() {
        return Ok(CellReport {
            seed,
            complete: false,
            missing_sessions: missing,
            mrr_matrix: None,
            hits10_matrix: None,
            model_bytes: Vec::new(),
            stored_bytes: Vec::new(),
            traces: None,
            measures: BTreeMap::new(),
        });
    }

    let mut models = Vec::with_capacity(cfg.sessions);
    let mut model_bytes = Vec::with_capacity(cfg.sessions);
    let mut stored_bytes = Vec::with_capacity(cfg.sessions);
    let mut traces = Vec::with_capacity(cfg.sessions);
    let mut carried: u64 = 0;
    for n in 0..cfg.sessions {
        let (model, strategy) = load_session(&cell, n)?;
        stored_bytes.push(carried);
        carried = strategy.stored_bytes_next();
        model_bytes.push(strategy.state_bytes(&model));
        traces.push(checkpoint::read_trace(&session_dir(&cell, n).join("trace.tsv"))?);
        models.push(model);
    }

    let (mrr_m, hits_m) = build_matrices(&models, sessions, cfg.rank_mode)?;
    let flat: Vec<TraceEntry> = traces.iter().flatten().cloned().collect();

    let mut measures = BTreeMap::new();
    matrix_measures(&mut measures, &hits_m, "hits10");
    matrix_measures(&mut measures, &mrr_m, "mrr");
    measures.insert("ms".to_owned(), ms(&model_bytes)?);
    measures.insert("sss".to_owned(), sss(&stored_bytes, total_train_bytes)?);
    for (measure, suffix) in [(Measure::Hits10, "hits10"), (Measure::Mrr, "mrr")] {
        measures.insert(format!("lca_{suffix}"), lca(&flat, measure, true));
        measures.insert(format!("lca_prime_{suffix}"), lca(&flat, measure, false));
    }

    Ok(CellReport {
        seed,
        complete: true,
        missing_sessions: Vec::new(),
        mrr_matrix: Some(mrr_m.rows().to_vec()),
        hits10_matrix: Some(hits_m.rows().to_vec()),
        model_bytes,
        stored_bytes,
        traces: Some(traces),
        measures,
    })
}

fn summarize(cells: &[CellReport]) -> (Vec<SummaryRow>, Vec<String>) {
    let mut gaps: Vec<String> = cells
        .iter()
        .filter(|c| !c.complete)
        .map(|c| format!("seed {}: missing sessions {:?}", c.seed, c.missing_sessions))
        .collect();
    let done: Vec<&CellReport> = cells.iter().filter(|c| c.complete).collect();
    if done.is_empty() {
        gaps.push("no complete seeds; summary omitted".to_owned());
        return (Vec::new(), gaps);
    }

    let keys: BTreeSet<&String> = done.iter().flat_map(|c| c.measures.keys()).collect();
    let summary = keys
        .into_iter()
        .map(|key| {
            let values: Vec<f64> =
                done.iter().filter_map(|c| c.measures.get(key)).copied().collect();
            let (mean, std) = mean_std(&values);
            SummaryRow { measure: key.clone(), mean, std, seeds: values.len() }
        })
        .collect();
    (summary, gaps)
}

/// Build the report for a run directory by recomputing from checkpoints.
pub fn build_report(run: &Path) -> Result<Report> {
    let mut cfg = RunConfig::build(&parse_file(&run.join(CONFIG_FILE))?)?;
    // The run directory may have been moved since training; what is on disk
    // here is authoritative, not the path recorded at train time.
    cfg.out = run.to_path_buf();

    let data = prepare(&cfg)?;
    let total_triples: usize = data.sessions.iter().map(|s| s.train.len()).sum();
    let total_train_bytes = total_triples as u64 * TRIPLE_BYTES;

    let mut methods = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let cells = cfg
            .seeds
            .iter()
            .map(|&seed| cell_report(&cfg, method, seed, &data.sessions, total_train_bytes))
            .collect::<Result<Vec<CellReport>>>()?;
        let (summary, gaps) = summarize(&cells);
        methods.push(MethodReport { method: method.name().to_owned(), cells, gaps, summary });
    }

    Ok(Report {
        config: cfg.to_pairs(),
        complete: methods.iter().all(|m| m.cells.iter().all(|c| c.complete)),
        methods,
    })
}

impl Report {
    /// Flat `method measure mean std seeds` table, one row per summary entry.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\tmeasure\tmean\tstd\tseeds\n");
        for m in &self.methods {
            for row in &m.summary {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    m.method, row.measure, row.mean, row.std, row.seeds
                ));
            }
        }
        out
    }

    pub fn summary_of(&self, method: Method, measure: &str) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == method.name())?
            .summary
            .iter()
            .find(|r| r.measure == measure)
            .map(|r| r.mean)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("report serialization failed: {e}")))?;
        let json_path = dir.join("report.json");
        fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
        let tsv_path = dir.join("report.tsv");
        fs::write(&tsv_path, self.to_tsv()).map_err(|e| Error::io(&tsv_path, e))
    }
}

/// `report` subcommand: rebuild the report and write report.json and
/// report.tsv (into the run directory unless `out` overrides it).
pub fn cmd_report(run: &Path, out: Option<&Path>) -> Result<Report> {
    let report = build_report(run)?;
    report.write(out.unwrap_or(run))?;
    if !report.complete {
        log::warn!("run {} is incomplete; report has gaps", run.display());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_splits, GraphSplits, Triple, Vocab};
    use crate::model::ModelKind;
    use crate::runner::cmd_train;

    fn toy_dataset(dir: &Path) {
        let vocab = Vocab::new(
            (0..12).map(|i| format!("e{i}")).collect(),
            vec!["r0".into(), "r1".into()],
        )
        .unwrap();
        let mut train = Vec::new();
        for i in 0..12u32 {
            train.push(Triple::new(i, 0, (i + 1) % 12));
            train.push(Triple::new(i, 1, (i + 2) % 12));
        }
        let valid: Vec<Triple> = (0..6u32).map(|i| Triple::new(i, 0, (i + 3) % 12)).collect();
        let test: Vec<Triple> = (6..12u32).map(|i| Triple::new(i, 0, (i + 3) % 12)).collect();
        write_splits(&GraphSplits { vocab, train, valid, test }, dir).unwrap();
    }

    fn toy_run(tmp: &Path, methods: Vec<Method>, seeds: Vec<u64>) -> RunConfig {
        let data = tmp.join("data");
        if !data.exists() {
            toy_dataset(&data);
        }
        let mut cfg = RunConfig::defaults(ModelKind::TransE);
        cfg.dataset = data;
        cfg.out = tmp.join("run");
        cfg.sessions = 2;
        cfg.methods = methods;
        cfg.seeds = seeds;
        cfg.dim = 6;
        cfg.epochs = 4;
        cfg.batch_size = 8;
        cfg.gen_epochs = 5;
        cfg.gen_batch_size = 8;
        cfg.gen_dv = 8;
        cfg.gen_dz = 4;
        cfg.gen_dh = 8;
        cmd_train(&cfg).unwrap();
        cfg
    }

    #[test]
    fn report_covers_measures_matrices_and_traces() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = toy_run(tmp.path(), vec![Method::Finetune, Method::Batch], vec![1, 2]);
        let report = cmd_report(&cfg.out, None).unwrap();

        assert!(report.complete);
        assert!(cfg.out.join("report.json").exists());
        assert!(cfg.out.join("report.tsv").exists());
        assert_eq!(report.config, cfg.to_pairs());

        for m in &report.methods {
            assert_eq!(m.cells.len(), 2);
            for c in &m.cells {
                assert!(c.complete);
                let mat = c.hits10_matrix.as_ref().unwrap();
                assert_eq!(mat.len(), 2);
                assert_eq!(c.traces.as_ref().unwrap().len(), 2);
                assert_eq!(c.model_bytes.len(), 2);
                // Session 0 never carries stored samples.
                assert_eq!(c.stored_bytes[0], 0);
                for key in ["acc_hits10", "acc_mrr", "fwt_hits10", "ms", "sss", "lca_hits10"] {
                    assert!(c.measures.contains_key(key), "missing {key}");
                }
                for (k, v) in &c.measures {
                    if !k.starts_with("bwt") {
                        assert!((0.0..=1.0).contains(v), "{k} = {v} out of range");
                    }
                }
            }
            assert!(m.gaps.is_empty());
        }

        // Batch retains session-0 triples into session 1; Finetune stores
        // nothing, so its sample storage score is exactly 1.
        let batch = &report.methods[1];
        assert!(batch.cells[0].stored_bytes[1] > 0);
        assert_eq!(report.summary_of(Method::Finetune, "sss"), Some(1.0));
        assert!(report.summary_of(Method::Batch, "sss").unwrap() < 1.0);
    }

    #[test]
    fn recomputation_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = toy_run(tmp.path(), vec![Method::Si], vec![5]);
        cmd_report(&cfg.out, None).unwrap();
        let json = fs::read(cfg.out.join("report.json")).unwrap();
        let tsv = fs::read(cfg.out.join("report.tsv")).unwrap();
        cmd_report(&cfg.out, None).unwrap();
        assert_eq!(json, fs::read(cfg.out.join("report.json")).unwrap());
        assert_eq!(tsv, fs::read(cfg.out.join("report.tsv")).unwrap());
    }

    #[test]
    fn single_seed_reports_zero_std() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = toy_run(tmp.path(), vec![Method::Finetune], vec![1]);
        let report = cmd_report(&cfg.out, None).unwrap();
        let summary = &report.methods[0].summary;
        assert!(!summary.is_empty());
        for row in summary {
            assert_eq!(row.std, 0.0);
            assert_eq!(row.seeds, 1);
        }
    }

    #[test]
    fn missing_sessions_produce_explicit_gaps() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = toy_run(tmp.path(), vec![Method::Finetune, Method::Si], vec![1, 2]);
        let broken = session_dir(&cell_dir(&cfg.out, Method::Si, 2), 1);
        fs::remove_file(broken.join("trace.tsv")).unwrap();

        let report = cmd_report(&cfg.out, None).unwrap();
        assert!(!report.complete);
        let si = &report.methods[1];
        assert_eq!(si.gaps, vec!["seed 2: missing sessions [1]".to_owned()]);
        assert!(!si.cells[1].complete);
        assert_eq!(si.cells[1].missing_sessions, vec![1]);
        // The surviving seed still gets summarized.
        assert!(si.summary.iter().all(|r| r.seeds == 1));
        assert!(report.methods[0].summary.iter().all(|r| r.seeds == 2));
    }

    #[test]
    fn dgr_lca_variants_differ_when_generator_epochs_count() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = toy_run(tmp.path(), vec![Method::Dgr], vec![1]);
        let report = cmd_report(&cfg.out, None).unwrap();
        let cell = &report.methods[0].cells[0];
        // The generator trace entries sit at the solver's final measure, so
        // including them changes the curve unless the solver was flat.
        assert!(cell.measures.contains_key("lca_hits10"));
        assert!(cell.measures.contains_key("lca_prime_hits10"));
        let with = cell.measures["lca_mrr"];
        let without = cell.measures["lca_prime_mrr"];
        assert!(with > 0.0 && without > 0.0);
        assert_ne!(with, without);
    }
}
