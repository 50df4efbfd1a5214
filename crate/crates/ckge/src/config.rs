//! Run configuration: a flat `key = value` text file, optionally overridden
//! by command-line pairs, resolved into one fully-explicit [`RunConfig`].
//! The resolved config is persisted into the run directory so a report can
//! be recomputed later without the original invocation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::RankMode;
use crate::methods::{Method, MethodConfig};
use crate::model::ModelKind;
use crate::trainer::SolverConfig;
use crate::vae::GenConfig;

/// Which resources the deployment scenario grants during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// All prior training triples may be kept and revisited.
    Unconstrained,
    /// Only the current session's triples are available.
    DataConstrained,
    /// Current session only, and at most 100 training epochs.
    TimeDataConstrained,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Unconstrained => "unconstrained",
            Scenario::DataConstrained => "data_constrained",
            Scenario::TimeDataConstrained => "time_data_constrained",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scenario> {
        match s {
            "unconstrained" => Ok(Scenario::Unconstrained),
            "data_constrained" => Ok(Scenario::DataConstrained),
            "time_data_constrained" => Ok(Scenario::TimeDataConstrained),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

/// Hard epoch cap imposed by the time-and-data-constrained scenario.
pub const TIME_CONSTRAINED_EPOCH_CAP: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub sessions: usize,
    /// Seed of the session split itself, shared by every grid cell.
    pub split_seed: u64,
    pub model: ModelKind,
    pub scenario: Scenario,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub margin: f64,
    pub neg_ratio: usize,
    pub check_every: usize,
    pub patience: usize,
    pub rank_mode: RankMode,
    pub l2r_lambda: f64,
    pub si_lambda: f64,
    pub si_xi: f64,
    pub si_squared_inside: bool,
    pub gen_epochs: usize,
    pub gen_batch_size: usize,
    pub gen_lr: f64,
    pub gen_momentum: f64,
    pub lambda_am: f64,
    pub lambda_as: f64,
    /// Sigmoid midpoint of the KL anneal; `None` means gen_epochs / 4.
    pub lambda_ap: Option<f64>,
    pub gen_dv: usize,
    pub gen_dz: usize,
    pub gen_dh: usize,
}

fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::TransE => "transe",
        ModelKind::Analogy => "analogy",
    }
}

fn parse_model(s: &str) -> Result<ModelKind> {
    match s {
        "transe" => Ok(ModelKind::TransE),
        "analogy" => Ok(ModelKind::Analogy),
        other => Err(Error::Config(format!("unknown model '{other}'"))),
    }
}

fn rank_mode_name(mode: RankMode) -> &'static str {
    match mode {
        RankMode::Optimistic => "optimistic",
        RankMode::Pessimistic => "pessimistic",
        RankMode::Mean => "mean",
    }
}

fn parse_rank_mode(s: &str) -> Result<RankMode> {
    match s {
        "optimistic" => Ok(RankMode::Optimistic),
        "pessimistic" => Ok(RankMode::Pessimistic),
        "mean" => Ok(RankMode::Mean),
        other => Err(Error::Config(format!("unknown rank mode '{other}'"))),
    }
}

impl RunConfig {
    /// Defaults for a given embedding model. TransE trains with a smaller
    /// learning rate and batch than Analogy.
    pub fn defaults(model: ModelKind) -> Self {
        let (lr, batch_size) = match model {
            ModelKind::TransE => (0.01, 128),
            ModelKind::Analogy => (0.1, 512),
        };
        RunConfig {
            dataset: PathBuf::new(),
            out: PathBuf::new(),
            methods: Method::ALL.to_vec(),
            seeds: vec![1],
            sessions: 5,
            split_seed: 7,
            model,
            scenario: Scenario::Unconstrained,
            dim: 100,
            epochs: 500,
            batch_size,
            lr,
            margin: 1.0,
            neg_ratio: 1,
            check_every: 10,
            patience: 3,
            rank_mode: RankMode::Optimistic,
            l2r_lambda: 1e-2,
            si_lambda: 1.0,
            si_xi: 1e-3,
            si_squared_inside: false,
            gen_epochs: 500,
            gen_batch_size: 128,
            gen_lr: 0.05,
            gen_momentum: 0.9,
            lambda_am: 1.0,
            lambda_as: 0.05,
            lambda_ap: None,
            gen_dv: 64,
            gen_dz: 32,
            gen_dh: 64,
        }
    }

    /// Resolve key/value pairs into a config. Later pairs override earlier
    /// ones, so command-line flags appended after file content win.
    pub fn build(pairs: &[(String, String)]) -> Result<RunConfig> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for (k, v) in pairs {
            map.insert(k.as_str(), v.as_str());
        }
        let model = match map.get("model") {
            Some(v) => parse_model(v)?,
            None => ModelKind::TransE,
        };
        let mut cfg = RunConfig::defaults(model);
        for (key, value) in map {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
        }
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(|m| m.trim().parse())
                    .collect::<Result<Vec<Method>>>()?;
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| num("seeds", s.trim()))
                    .collect::<Result<Vec<u64>>>()?;
            }
            "sessions" => self.sessions = num(key, value)?,
            "split_seed" => self.split_seed = num(key, value)?,
            "model" => self.model = parse_model(value)?,
            "scenario" => self.scenario = value.parse()?,
            "dim" => self.dim = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "margin" => self.margin = num(key, value)?,
            "neg_ratio" => self.neg_ratio = num(key, value)?,
            "check_every" => self.check_every = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "rank_mode" => self.rank_mode = parse_rank_mode(value)?,
            "l2r_lambda" => self.l2r_lambda = num(key, value)?,
            "si_lambda" => self.si_lambda = num(key, value)?,
            "si_xi" => self.si_xi = num(key, value)?,
            "si_squared_inside" => self.si_squared_inside = num(key, value)?,
            "gen_epochs" => self.gen_epochs = num(key, value)?,
            "gen_batch_size" => self.gen_batch_size = num(key, value)?,
            "gen_lr" => self.gen_lr = num(key, value)?,
            "gen_momentum" => self.gen_momentum = num(key, value)?,
            "lambda_am" => self.lambda_am = num(key, value)?,
            "lambda_as" => self.lambda_as = num(key, value)?,
            "lambda_ap" => {
                self.lambda_ap = if value == "auto" { None } else { Some(num(key, value)?) };
            }
            "gen_dv" => self.gen_dv = num(key, value)?,
            "gen_dz" => self.gen_dz = num(key, value)?,
            "gen_dh" => self.gen_dh = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("dataset path is required".into()));
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::Config("output path is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        {
            let mut seen = self.seeds.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != self.seeds.len() {
                return Err(Error::Config("duplicate seeds".into()));
            }
        }
        {
            let mut seen = self.methods.clone();
            seen.sort_by_key(|m| m.name());
            seen.dedup();
            if seen.len() != self.methods.len() {
                return Err(Error::Config("duplicate methods".into()));
            }
        }
        if self.sessions == 0 {
            return Err(Error::Config("sessions must be at least 1".into()));
        }
        self.method_config().validate()
    }

    /// Per-session solver budget after scenario rules: the time-constrained
    /// scenario caps epochs at 100 and turns early stopping off (the cap is
    /// the stopping rule).
    pub fn effective_epochs(&self) -> usize {
        match self.scenario {
            Scenario::TimeDataConstrained => self.epochs.min(TIME_CONSTRAINED_EPOCH_CAP),
            _ => self.epochs,
        }
    }

    pub fn retention_allowed(&self) -> bool {
        self.scenario == Scenario::Unconstrained
    }

    pub fn effective_lambda_ap(&self) -> f64 {
        self.lambda_ap.unwrap_or(self.gen_epochs as f64 / 4.0)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            epochs: self.effective_epochs(),
            batch_size: self.batch_size,
            lr: self.lr,
            margin: self.margin,
            neg_ratio: self.neg_ratio,
            early_stopping: self.scenario != Scenario::TimeDataConstrained,
            check_every: self.check_every,
            patience: self.patience,
            rank_mode: self.rank_mode,
        }
    }

    pub fn method_config(&self) -> MethodConfig {
        MethodConfig {
            solver: self.solver_config(),
            gen: GenConfig {
                epochs: self.gen_epochs,
                batch_size: self.gen_batch_size,
                lr: self.gen_lr,
                momentum: self.gen_momentum,
                lambda_am: self.lambda_am,
                lambda_as: self.lambda_as,
                lambda_ap: self.effective_lambda_ap(),
            },
            l2r_lambda: self.l2r_lambda,
            si_lambda: self.si_lambda,
            si_xi: self.si_xi,
            si_squared_inside: self.si_squared_inside,
            gen_dv: self.gen_dv,
            gen_dz: self.gen_dz,
            gen_dh: self.gen_dh,
            retention_allowed: self.retention_allowed(),
        }
    }

    /// Every field as explicit key/value pairs, in a stable order. Feeding
    /// them back through [`RunConfig::build`] reproduces this config.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let p = |k: &str, v: String| (k.to_owned(), v);
        vec![
            p("dataset", self.dataset.display().to_string()),
            p("out", self.out.display().to_string()),
            p("methods", methods.join(",")),
            p("seeds", seeds.join(",")),
            p("sessions", self.sessions.to_string()),
            p("split_seed", self.split_seed.to_string()),
            p("model", model_name(self.model).to_owned()),
            p("scenario", self.scenario.to_string()),
            p("dim", self.dim.to_string()),
            p("epochs", self.epochs.to_string()),
            p("batch_size", self.batch_size.to_string()),
            p("lr", self.lr.to_string()),
            p("margin", self.margin.to_string()),
            p("neg_ratio", self.neg_ratio.to_string()),
            p("check_every", self.check_every.to_string()),
            p("patience", self.patience.to_string()),
            p("rank_mode", rank_mode_name(self.rank_mode).to_owned()),
            p("l2r_lambda", self.l2r_lambda.to_string()),
            p("si_lambda", self.si_lambda.to_string()),
            p("si_xi", self.si_xi.to_string()),
            p("si_squared_inside", self.si_squared_inside.to_string()),
            p("gen_epochs", self.gen_epochs.to_string()),
            p("gen_batch_size", self.gen_batch_size.to_string()),
            p("gen_lr", self.gen_lr.to_string()),
            p("gen_momentum", self.gen_momentum.to_string()),
            p("lambda_am", self.lambda_am.to_string()),
            p("lambda_as", self.lambda_as.to_string()),
            p(
                "lambda_ap",
                self.lambda_ap.map_or_else(|| "auto".to_owned(), |v| v.to_string()),
            ),
            p("gen_dv", self.gen_dv.to_string()),
            p("gen_dz", self.gen_dz.to_string()),
            p("gen_dh", self.gen_dh.to_string()),
        ]
    }

    /// Persist the fully-resolved config as a key=value file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Read a flat `key = value` file. Blank lines and `#` comments are skipped.
pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, "expected 'key = value'"))?;
        pairs.push((key.trim().to_owned(), value.trim().to_owned()));
    }
    Ok(pairs)
}
