//! Experiment configuration as `key = value` files with `[section]` headers.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use metashape_core::meta::MetaConfig;
use metashape_core::volume::{Axis, SamplerConfig};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InitKind {
    Meta,
    Pretrain,
    Random,
}

impl InitKind {
    pub const ALL: [InitKind; 3] = [InitKind::Meta, InitKind::Pretrain, InitKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            InitKind::Meta => "meta",
            InitKind::Pretrain => "pretrain",
            InitKind::Random => "random",
        }
    }
}

impl FromStr for InitKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        InitKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown init `{s}`"))
    }
}

/// Test-time adaptation settings shared by all inits.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptSettings {
    pub max_steps: usize,
    pub patience: usize,
    pub threshold: f64,
    /// Sorted steps reported per reconstruction; the stopping step is
    /// reported in addition.
    pub record_steps: Vec<usize>,
    /// Adam learning rate of the pretrain and random baselines.
    pub baseline_step_size: f64,
    /// Cap of the steps-to-target search.
    pub search_max_steps: usize,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        AdaptSettings {
            max_steps: 500,
            patience: 10,
            threshold: 0.5,
            record_steps: vec![1, 50, 100],
            baseline_step_size: 1e-5,
            search_max_steps: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSettings {
    pub axes: Vec<Axis>,
    pub ws: Vec<usize>,
    pub inits: Vec<InitKind>,
    pub folds: usize,
    pub split_seed: u64,
    /// Seed of the random-init baseline network.
    pub random_seed: u64,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    /// Write each reconstructed mask at its stopping step.
    pub save_masks: bool,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            axes: vec![Axis::Sagittal],
            ws: vec![8, 16],
            inits: InitKind::ALL.to_vec(),
            folds: 5,
            split_seed: 0,
            random_seed: 12345,
            workers: 0,
            save_masks: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExperimentConfig {
    /// Network, loss and meta-training settings.
    pub meta: MetaConfig,
    pub sampler: SamplerConfig,
    pub adapt: AdaptSettings,
    pub bench: BenchSettings,
}

fn list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

struct AxisName(Axis);

impl FromStr for AxisName {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Axis::parse(s)
            .map(AxisName)
            .ok_or_else(|| format!("unknown axis `{s}`"))
    }
}

/// Reads known keys and rejects everything else.
struct Sections<'a> {
    ini: &'a Ini,
    used: Vec<(String, String)>,
}

impl<'a> Sections<'a> {
    fn set<T: FromStr>(&mut self, section: &str, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        self.used.push((section.to_string(), key.to_string()));
        if let Some(raw) = self.ini.section(Some(section)).and_then(|p| p.get(key)) {
            *slot = raw
                .trim()
                .parse()
                .map_err(|e| CliError::config(format!("[{section}] {key} = {raw}: {e}")))?;
        }
        Ok(())
    }

    fn set_with<T>(
        &mut self,
        section: &str,
        key: &str,
        slot: &mut T,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<()> {
        self.used.push((section.to_string(), key.to_string()));
        if let Some(raw) = self.ini.section(Some(section)).and_then(|p| p.get(key)) {
            *slot = parse(raw.trim())
                .map_err(|e| CliError::config(format!("[{section}] {key} = {raw}: {e}")))?;
        }
        Ok(())
    }

    fn reject_unknown(&self) -> Result<()> {
        for (section, props) in self.ini.iter() {
            let section = section.unwrap_or("");
            for (key, _) in props.iter() {
                if !self.used.iter().any(|(s, k)| s == section && k == key) {
                    return Err(CliError::config(format!("unknown key [{section}] {key}")));
                }
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        let mut c = ExperimentConfig::default();
        let mut s = Sections {
            ini: &ini,
            used: Vec::new(),
        };
        let net = &mut c.meta.net;
        s.set("net", "hidden_dim", &mut net.hidden_dim)?;
        s.set("net", "n_linear_layers", &mut net.n_linear_layers)?;
        s.set("net", "omega0", &mut net.omega0)?;
        let m = &mut c.meta;
        s.set("meta", "inner_steps", &mut m.inner_steps)?;
        s.set("meta", "alpha0", &mut m.alpha0)?;
        s.set("meta", "beta", &mut m.beta)?;
        s.set("meta", "alpha_lr", &mut m.alpha_lr)?;
        s.set("meta", "epochs", &mut m.epochs)?;
        s.set("meta", "meta_batch", &mut m.meta_batch)?;
        s.set("meta", "second_order", &mut m.second_order)?;
        s.set("meta", "learn_alpha", &mut m.learn_alpha)?;
        s.set("meta", "seed", &mut m.seed)?;
        s.set("loss", "lambda", &mut m.loss.lambda)?;
        s.set("loss", "dice_eps", &mut m.loss.dice_eps)?;
        s.set("loss", "bce_clamp", &mut m.loss.bce_clamp)?;
        let sp = &mut c.sampler;
        s.set_with("sampler", "axis", &mut sp.axis, |v| {
            v.parse::<AxisName>().map(|a| a.0)
        })?;
        s.set("sampler", "w", &mut sp.w)?;
        s.set("sampler", "n_target", &mut sp.n_target)?;
        s.set_with("sampler", "n_context", &mut sp.n_context, |v| match v {
            "all" => Ok(None),
            n => n.parse().map(Some).map_err(|e| format!("{e}")),
        })?;
        s.set("sampler", "random_phase", &mut sp.random_phase)?;
        let a = &mut c.adapt;
        s.set("adapt", "max_steps", &mut a.max_steps)?;
        s.set("adapt", "patience", &mut a.patience)?;
        s.set("adapt", "threshold", &mut a.threshold)?;
        s.set_with("adapt", "record_steps", &mut a.record_steps, list)?;
        s.set("adapt", "baseline_step_size", &mut a.baseline_step_size)?;
        s.set("adapt", "search_max_steps", &mut a.search_max_steps)?;
        let b = &mut c.bench;
        s.set_with("bench", "axes", &mut b.axes, |v| {
            list::<AxisName>(v).map(|l| l.into_iter().map(|a| a.0).collect())
        })?;
        s.set_with("bench", "ws", &mut b.ws, list)?;
        s.set_with("bench", "inits", &mut b.inits, list)?;
        s.set("bench", "folds", &mut b.folds)?;
        s.set("bench", "split_seed", &mut b.split_seed)?;
        s.set("bench", "random_seed", &mut b.random_seed)?;
        s.set("bench", "workers", &mut b.workers)?;
        s.set("bench", "save_masks", &mut b.save_masks)?;
        s.reject_unknown()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let a = &self.adapt;
        if a.record_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::config("record_steps must be strictly ascending"));
        }
        if a.max_steps == 0 {
            return Err(CliError::config("max_steps must be at least 1"));
        }
        if a.patience == 0 || !(a.threshold > 0.0 && a.threshold < 1.0) {
            return Err(CliError::config(
                "patience must be ≥ 1 and threshold in (0, 1)",
            ));
        }
        if !(a.baseline_step_size > 0.0 && a.baseline_step_size.is_finite()) {
            return Err(CliError::config("baseline_step_size must be positive"));
        }
        let b = &self.bench;
        if b.axes.is_empty() || b.ws.is_empty() || b.inits.is_empty() {
            return Err(CliError::config("axes, ws and inits must be nonempty"));
        }
        if b.folds < 2 {
            return Err(CliError::config("folds must be at least 2"));
        }
        if self.sampler.n_target == 0 || self.sampler.w == 0 {
            return Err(CliError::config("n_target and w must be positive"));
        }
        Ok(())
    }

    /// The configuration in the file format accepted by [`parse`](Self::parse).
    pub fn to_ini_string(&self) -> String {
        let m = &self.meta;
        let (sp, a, b) = (&self.sampler, &self.adapt, &self.bench);
        let mut ini = Ini::new();
        ini.with_section(Some("net"))
            .set("hidden_dim", m.net.hidden_dim.to_string())
            .set("n_linear_layers", m.net.n_linear_layers.to_string())
            .set("omega0", m.net.omega0.to_string());
        ini.with_section(Some("meta"))
            .set("inner_steps", m.inner_steps.to_string())
            .set("alpha0", m.alpha0.to_string())
            .set("beta", m.beta.to_string())
            .set("alpha_lr", m.alpha_lr.to_string())
            .set("epochs", m.epochs.to_string())
            .set("meta_batch", m.meta_batch.to_string())
            .set("second_order", m.second_order.to_string())
            .set("learn_alpha", m.learn_alpha.to_string())
            .set("seed", m.seed.to_string());
        ini.with_section(Some("loss"))
            .set("lambda", m.loss.lambda.to_string())
            .set("dice_eps", m.loss.dice_eps.to_string())
            .set("bce_clamp", m.loss.bce_clamp.to_string());
        ini.with_section(Some("sampler"))
            .set("axis", sp.axis.name())
            .set("w", sp.w.to_string())
            .set("n_target", sp.n_target.to_string())
            .set(
                "n_context",
                sp.n_context.map_or("all".to_string(), |n| n.to_string()),
            )
            .set("random_phase", sp.random_phase.to_string());
        ini.with_section(Some("adapt"))
            .set("max_steps", a.max_steps.to_string())
            .set("patience", a.patience.to_string())
            .set("threshold", a.threshold.to_string())
            .set("record_steps", join(&a.record_steps))
            .set("baseline_step_size", a.baseline_step_size.to_string())
            .set("search_max_steps", a.search_max_steps.to_string());
        ini.with_section(Some("bench"))
            .set(
                "axes",
                b.axes
                    .iter()
                    .map(|a| a.name())
                    .collect::<Vec<_>>()
                    .join(","),
            )
            .set("ws", join(&b.ws))
            .set(
                "inits",
                b.inits
                    .iter()
                    .map(|i| i.name())
                    .collect::<Vec<_>>()
                    .join(","),
            )
            .set("folds", b.folds.to_string())
            .set("split_seed", b.split_seed.to_string())
            .set("random_seed", b.random_seed.to_string())
            .set("workers", b.workers.to_string())
            .set("save_masks", b.save_masks.to_string());
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ini output is utf-8")
    }
}
