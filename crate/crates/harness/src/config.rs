//! Sweep configuration: which experiment, which parameter axis, which
//! values, and the shared base parameters. Config files are flat key=value
//! text; command-line flags override file values.

use std::path::PathBuf;

use attn_interp::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Hardmax,
    Single,
    Multi,
    GridScalar,
    Seq2Seq,
    Colwise,
    ThreeLayer,
    Icl,
    Icgd,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Hardmax => "hardmax",
            Experiment::Single => "single",
            Experiment::Multi => "multi",
            Experiment::GridScalar => "grid_scalar",
            Experiment::Seq2Seq => "seq2seq",
            Experiment::Colwise => "colwise",
            Experiment::ThreeLayer => "three_layer",
            Experiment::Icl => "icl",
            Experiment::Icgd => "icgd",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "hardmax" => Ok(Experiment::Hardmax),
            "single" => Ok(Experiment::Single),
            "multi" => Ok(Experiment::Multi),
            "grid_scalar" => Ok(Experiment::GridScalar),
            "seq2seq" => Ok(Experiment::Seq2Seq),
            "colwise" => Ok(Experiment::Colwise),
            "three_layer" => Ok(Experiment::ThreeLayer),
            "icl" => Ok(Experiment::Icl),
            "icgd" => Ok(Experiment::Icgd),
            _ => Err(Error::Parse(format!("unknown experiment '{name}'"))),
        }
    }

    /// Default epsilon knob when none was given: truncation experiments run
    /// tight softmax budgets, grid stacks take coarser per-stage budgets,
    /// the column-wise lemma budgets only its padding column.
    pub fn default_epsilon(&self) -> f64 {
        match self {
            Experiment::Hardmax => 0.01,
            Experiment::Single | Experiment::Multi | Experiment::Icl => 1e-3,
            Experiment::GridScalar | Experiment::Seq2Seq => 0.2,
            Experiment::Colwise => 1e-6,
            Experiment::ThreeLayer => 0.1,
            Experiment::Icgd => 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    P,
    H,
    BMinusA,
    G,
    T,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::P => "p",
            Axis::H => "H",
            Axis::BMinusA => "b_minus_a",
            Axis::G => "g",
            Axis::T => "T",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "p" => Ok(Axis::P),
            "H" | "h" | "heads" => Ok(Axis::H),
            "b_minus_a" => Ok(Axis::BMinusA),
            "g" => Ok(Axis::G),
            "T" | "t" | "steps" => Ok(Axis::T),
            _ => Err(Error::Parse(format!("unknown axis '{name}'"))),
        }
    }
}

/// Shared experiment parameters; every one maps to a CLI flag.
#[derive(Debug, Clone, Copy)]
pub struct BaseParams {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub heads: usize,
    pub a: f64,
    pub b: f64,
    /// Experiment-specific precision knob; `None` takes the experiment's
    /// default.
    pub epsilon: Option<f64>,
    /// Optional override of the construction's own temperature budget.
    pub beta: Option<f64>,
    pub g: usize,
    pub delta: f64,
    pub samples: usize,
}

impl Default for BaseParams {
    fn default() -> Self {
        BaseParams {
            n: 8,
            d: 1,
            p: 32,
            heads: 2,
            a: -1.0,
            b: 1.0,
            epsilon: None,
            beta: None,
            g: 4,
            delta: 0.25,
            samples: 400,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub experiment: Experiment,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub base: BaseParams,
    pub out_csv: Option<PathBuf>,
    pub out_svg: Option<PathBuf>,
}

impl SweepConfig {
    pub fn new(experiment: Experiment, axis: Axis, values: Vec<f64>) -> Self {
        SweepConfig {
            experiment,
            axis,
            values,
            trials: 1,
            seed: 0,
            base: BaseParams::default(),
            out_csv: None,
            out_svg: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidArgument("values list is empty".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "axis values must be strictly increasing".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be positive".into()));
        }
        if !(self.base.a < self.base.b) {
            return Err(Error::InvalidArgument("need a < b".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.base
            .epsilon
            .unwrap_or_else(|| self.experiment.default_epsilon())
    }

    /// Applies one key=value pair (the config-file vocabulary).
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Parse(format!("bad {what} value '{value}'"));
        match key {
            "experiment" => self.experiment = Experiment::parse(value)?,
            "axis" => self.axis = Axis::parse(value)?,
            "values" => {
                self.values = value
                    .split(',')
                    .map(|t| t.trim().parse().map_err(|_| bad("values")))
                    .collect::<Result<_>>()?
            }
            "trials" => self.trials = value.parse().map_err(|_| bad("trials"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "n" => self.base.n = value.parse().map_err(|_| bad("n"))?,
            "d" => self.base.d = value.parse().map_err(|_| bad("d"))?,
            "p" => self.base.p = value.parse().map_err(|_| bad("p"))?,
            "heads" => self.base.heads = value.parse().map_err(|_| bad("heads"))?,
            "a" => self.base.a = value.parse().map_err(|_| bad("a"))?,
            "b" => self.base.b = value.parse().map_err(|_| bad("b"))?,
            "epsilon" => self.base.epsilon = Some(value.parse().map_err(|_| bad("epsilon"))?),
            "beta" => self.base.beta = Some(value.parse().map_err(|_| bad("beta"))?),
            "g" => self.base.g = value.parse().map_err(|_| bad("g"))?,
            "delta" => self.base.delta = value.parse().map_err(|_| bad("delta"))?,
            "samples" => self.base.samples = value.parse().map_err(|_| bad("samples"))?,
            "out_csv" => self.out_csv = Some(PathBuf::from(value)),
            "out_svg" => self.out_svg = Some(PathBuf::from(value)),
            _ => return Err(Error::Parse(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Loads key=value lines; '#' starts a comment.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key=value", lineno + 1))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }
}
