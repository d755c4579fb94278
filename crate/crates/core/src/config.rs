//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Lists are comma separated.
//! Every key has a default, and [`RunConfig::to_text`] prints the complete
//! resolved configuration in the same syntax.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::SynthSpec;
use crate::encoder::TrainConfig;
use crate::error::{io_err, Error, Result};
use crate::loss::LossConfig;
use crate::pipeline::{LossTerms, RoundPlan, StrategyKind, StrategySpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed for generation, sampling, training and selection.
    pub seed: u64,
    /// Dataset directory; when absent the synthetic generator is used.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub threads: usize,
    pub synth: SynthSpec,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub plan: RoundPlan,
    pub strategies: Vec<StrategyKind>,
    pub ablate_terms: LossTerms,
    pub ablate_low_budget_max: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            out: PathBuf::from("out"),
            threads: 1,
            synth: SynthSpec::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            plan: RoundPlan::default(),
            strategies: vec![
                StrategyKind::Random,
                StrategyKind::CoresetRaw,
                StrategyKind::CoresetLearned,
            ],
            ablate_terms: "ntxent,patient,volume".parse().expect("static"),
            ablate_low_budget_max: 0.05,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data" => self.data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "threads" => self.threads = parse(key, v)?,
            "synth.patients" => self.synth.n_patients = parse(key, v)?,
            "synth.volumes_per_patient" => self.synth.volumes_per_patient = parse(key, v)?,
            "synth.slices_per_volume" => self.synth.slices_per_volume = parse(key, v)?,
            "synth.h" => self.synth.h = parse(key, v)?,
            "synth.w" => self.synth.w = parse(key, v)?,
            "synth.classes" => self.synth.classes = parse(key, v)?,
            "synth.patient_scale" => self.synth.patient_scale = parse(key, v)?,
            "synth.volume_scale" => self.synth.volume_scale = parse(key, v)?,
            "synth.adjacent_scale" => self.synth.adjacent_scale = parse(key, v)?,
            "synth.noise_scale" => self.synth.noise_scale = parse(key, v)?,
            "loss.tau" => self.loss.tau = parse(key, v)?,
            "loss.lambda0" => self.loss.lambda0 = parse(key, v)?,
            "loss.lambda_patient" => self.loss.lambda_patient = parse(key, v)?,
            "loss.lambda_volume" => self.loss.lambda_volume = parse(key, v)?,
            "loss.lambda_slice" => self.loss.lambda_slice = parse(key, v)?,
            "loss.eps_norm" => self.loss.eps_norm = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.adam_eps" => self.train.adam_eps = parse(key, v)?,
            "train.batch_size" => {
                self.train.batch_size = if v == "auto" { None } else { Some(parse(key, v)?) }
            }
            "train.hidden" => self.train.arch.hidden = parse_list(key, v)?,
            "train.rep_dim" => self.train.arch.rep_dim = parse(key, v)?,
            "train.proj_hidden" => self.train.arch.proj_hidden = parse_list(key, v)?,
            "train.proj_dim" => self.train.arch.proj_dim = parse(key, v)?,
            "aug.flip_prob" => self.train.augment.flip_prob = parse(key, v)?,
            "aug.noise_sigma" => self.train.augment.noise_sigma = parse(key, v)?,
            "aug.intensity_jitter" => self.train.augment.intensity_jitter = parse(key, v)?,
            "plan.fractions" => self.plan.fractions = parse_list(key, v)?,
            "plan.repeats" => self.plan.repeats = parse(key, v)?,
            "strategies" => self.strategies = parse_list(key, v)?,
            "ablate.terms" => self.ablate_terms = parse(key, v)?,
            "ablate.low_budget_max" => self.ablate_low_budget_max = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        vec![
            ("seed", self.seed.to_string()),
            (
                "data",
                self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("out", self.out.display().to_string()),
            ("threads", self.threads.to_string()),
            ("synth.patients", self.synth.n_patients.to_string()),
            ("synth.volumes_per_patient", self.synth.volumes_per_patient.to_string()),
            ("synth.slices_per_volume", self.synth.slices_per_volume.to_string()),
            ("synth.h", self.synth.h.to_string()),
            ("synth.w", self.synth.w.to_string()),
            ("synth.classes", self.synth.classes.to_string()),
            ("synth.patient_scale", self.synth.patient_scale.to_string()),
            ("synth.volume_scale", self.synth.volume_scale.to_string()),
            ("synth.adjacent_scale", self.synth.adjacent_scale.to_string()),
            ("synth.noise_scale", self.synth.noise_scale.to_string()),
            ("loss.tau", self.loss.tau.to_string()),
            ("loss.lambda0", self.loss.lambda0.to_string()),
            ("loss.lambda_patient", self.loss.lambda_patient.to_string()),
            ("loss.lambda_volume", self.loss.lambda_volume.to_string()),
            ("loss.lambda_slice", self.loss.lambda_slice.to_string()),
            ("loss.eps_norm", self.loss.eps_norm.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.adam_eps", t.adam_eps.to_string()),
            (
                "train.batch_size",
                t.batch_size.map_or_else(|| "auto".into(), |b| b.to_string()),
            ),
            ("train.hidden", join(&t.arch.hidden)),
            ("train.rep_dim", t.arch.rep_dim.to_string()),
            ("train.proj_hidden", join(&t.arch.proj_hidden)),
            ("train.proj_dim", t.arch.proj_dim.to_string()),
            ("aug.flip_prob", t.augment.flip_prob.to_string()),
            ("aug.noise_sigma", t.augment.noise_sigma.to_string()),
            ("aug.intensity_jitter", t.augment.intensity_jitter.to_string()),
            ("plan.fractions", join(&self.plan.fractions)),
            ("plan.repeats", self.plan.repeats.to_string()),
            (
                "strategies",
                self.strategies.iter().map(|s| s.name()).collect::<Vec<_>>().join(","),
            ),
            ("ablate.terms", self.ablate_terms.to_string().replace('+', ",")),
            ("ablate.low_budget_max", self.ablate_low_budget_max.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Synthetic spec with the master seed applied.
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn round_plan(&self) -> RoundPlan {
        RoundPlan {
            seed: self.seed,
            ..self.plan.clone()
        }
    }

    pub fn strategy_specs(&self) -> Vec<StrategySpec> {
        self.strategies
            .iter()
            .map(|k| match k {
                StrategyKind::Random => StrategySpec::random(),
                StrategyKind::CoresetRaw => StrategySpec::coreset_raw(),
                StrategyKind::CoresetLearned => StrategySpec::coreset_learned(self.loss),
            })
            .collect()
    }
}
