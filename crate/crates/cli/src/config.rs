//! Job configuration. Precedence, lowest first: built-in defaults, the JSON
//! document given by `--config`, then individual flags.

use crate::expr::parse_phi;
use clap::{Parser, ValueEnum};
use cmc_core::melnikov::QBox;
use cmc_core::prescribed::{Affine, Constant, EuclideanNorm, HypBump, HypDistSq, Phi};
use cmc_core::{tolerances, Error, Result, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Verify,
    Spectrum,
    Kernel,
    Melnikov,
    Solve,
    EnergyCurve,
    Obstruction,
}

/// φ either as expression text or as a catalog entry with parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhiSource {
    Expr(String),
    Catalog { catalog: String, #[serde(default)] params: Vec<f64> },
}

impl PhiSource {
    /// `catalog:<name>:<p1>,<p2>,…` selects a catalog entry, anything else
    /// is an expression.
    pub fn from_flag(s: &str) -> Result<Self> {
        match s.strip_prefix("catalog:") {
            None => Ok(PhiSource::Expr(s.to_string())),
            Some(rest) => {
                let (name, params) = rest.split_once(':').unwrap_or((rest, ""));
                Ok(PhiSource::Catalog { catalog: name.to_string(), params: parse_reals(params)? })
            }
        }
    }

    pub fn build(&self) -> Result<Phi> {
        match self {
            PhiSource::Expr(text) => Ok(Arc::new(parse_phi(text)?)),
            PhiSource::Catalog { catalog, params } => {
                let need = |n: &[usize]| {
                    if n.contains(&params.len()) {
                        Ok(())
                    } else {
                        Err(Error::Invalid(format!("catalog φ '{catalog}' takes {n:?} parameters, got {}", params.len())))
                    }
                };
                let v3 = |i: usize| Vec3::new(params[i], params[i + 1], params[i + 2]);
                Ok(match catalog.as_str() {
                    "constant" => {
                        need(&[1])?;
                        Arc::new(Constant(params[0]))
                    }
                    "affine" => {
                        need(&[4])?;
                        Arc::new(Affine { a: v3(0), b: params[3] })
                    }
                    "norm" => {
                        need(&[0])?;
                        Arc::new(EuclideanNorm)
                    }
                    "hypdist2" => {
                        need(&[3])?;
                        Arc::new(HypDistSq { center: v3(0) })
                    }
                    "bump" => {
                        need(&[3, 5])?;
                        let (width, amp) = if params.len() == 5 { (params[3], params[4]) } else { (1.0, 1.0) };
                        Arc::new(HypBump { center: v3(0), width, amp })
                    }
                    other => return Err(Error::Invalid(format!("unknown catalog φ '{other}'"))),
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyCurveConfig {
    pub t_max: f64,
    pub t_min: f64,
    pub count: usize,
}

impl Default for EnergyCurveConfig {
    fn default() -> Self {
        EnergyCurveConfig { t_max: 1.5, t_min: 1.01, count: 24 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub command: Option<Command>,
    pub k: f64,
    pub grid_n: usize,
    pub phi: Option<PhiSource>,
    /// x0, x1, y0, y1, z0, z1.
    #[serde(rename = "box")]
    pub qbox: [f64; 6],
    pub eps_schedule: Vec<f64>,
    /// Overrides of the named tolerance table; resolved() fills in the rest.
    pub tolerances: BTreeMap<String, f64>,
    /// Refuse |ε| above this; None means the spectral-gap heuristic.
    pub eps_max: Option<f64>,
    pub seeds: usize,
    pub scan_n: usize,
    pub spectrum_count: usize,
    pub energy_curve: EnergyCurveConfig,
    pub out: PathBuf,
}

impl Default for JobConfig {
    fn default() -> Self {
        JobConfig {
            command: None,
            k: 2.0,
            grid_n: 24,
            phi: None,
            qbox: [-0.3, 0.3, -0.3, 0.3, 0.7, 1.3],
            eps_schedule: vec![0.02, 0.01, 0.005],
            tolerances: BTreeMap::new(),
            eps_max: None,
            seeds: 8,
            scan_n: 5,
            spectrum_count: 8,
            energy_curve: EnergyCurveConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cmc-hyp", about = "Constant and prescribed mean-curvature spheres in hyperbolic space")]
pub struct Cli {
    pub command: Command,
    /// JSON configuration document.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long = "grid-n")]
    pub grid_n: Option<usize>,
    /// Expression in p1, p2, p3, or catalog:<name>:<params>.
    #[arg(long, allow_hyphen_values = true)]
    pub phi: Option<String>,
    /// Comma-separated ε values.
    #[arg(long, allow_hyphen_values = true)]
    pub eps: Option<String>,
    /// x0,x1,y0,y1,z0,z1.
    #[arg(long = "box", allow_hyphen_values = true)]
    pub qbox: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Tolerance override, name=value (repeatable).
    #[arg(long = "tol")]
    pub tol: Vec<String>,
}

pub fn parse_reals(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Invalid(format!("'{t}' is not a number"))))
        .collect()
}

impl Cli {
    pub fn resolve(&self) -> Result<JobConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str::<JobConfig>(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?
            }
            None => JobConfig::default(),
        };
        cfg.command = Some(self.command);
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(n) = self.grid_n {
            cfg.grid_n = n;
        }
        if let Some(p) = &self.phi {
            cfg.phi = Some(PhiSource::from_flag(p)?);
        }
        if let Some(e) = &self.eps {
            cfg.eps_schedule = parse_reals(e)?;
        }
        if let Some(b) = &self.qbox {
            let v = parse_reals(b)?;
            cfg.qbox = v.try_into().map_err(|v: Vec<f64>| Error::Invalid(format!("--box takes 6 numbers, got {}", v.len())))?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        for t in &self.tol {
            let (name, value) = t.split_once('=').ok_or_else(|| Error::Invalid(format!("--tol expects name=value, got '{t}'")))?;
            let v: f64 = value.parse().map_err(|_| Error::Invalid(format!("tolerance '{name}': '{value}' is not a number")))?;
            cfg.tolerances.insert(name.to_string(), v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl JobConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 1.0) {
            return Err(Error::NoBubble);
        }
        if self.grid_n < 4 {
            return Err(Error::Invalid(format!("grid_n = {} is too small", self.grid_n)));
        }
        self.query_box()?;
        if self.eps_schedule.iter().any(|e| !e.is_finite()) {
            return Err(Error::Invalid("non-finite ε in schedule".into()));
        }
        let known: Vec<&str> = tolerances::table().iter().map(|(n, _)| *n).collect();
        for (name, v) in &self.tolerances {
            if !known.contains(&name.as_str()) {
                return Err(Error::Invalid(format!("unknown tolerance '{name}'")));
            }
            if !(*v > 0.0) {
                return Err(Error::Invalid(format!("tolerance '{name}' must be positive")));
            }
        }
        Ok(())
    }

    pub fn query_box(&self) -> Result<QBox> {
        let b = self.qbox;
        QBox::new([b[0], b[2], b[4]], [b[1], b[3], b[5]])
    }

    /// Full tolerance table with overrides applied.
    pub fn resolved_tolerances(&self) -> BTreeMap<String, f64> {
        tolerances::table().into_iter().map(|(n, v)| (n.to_string(), *self.tolerances.get(n).unwrap_or(&v))).collect()
    }

    pub fn tol(&self, name: &str) -> f64 {
        self.resolved_tolerances()[name]
    }

    pub fn phi(&self) -> Result<Phi> {
        self.phi.as_ref().ok_or_else(|| Error::Invalid("this command needs --phi".into()))?.build()
    }

    /// The config as echoed into summaries: tolerances fully resolved.
    pub fn echo(&self) -> JobConfig {
        let mut c = self.clone();
        c.tolerances = self.resolved_tolerances();
        c
    }
}
