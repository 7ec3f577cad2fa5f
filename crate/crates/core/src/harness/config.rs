//! Experiment configuration: flat `key = value` TOML with per-example
//! defaults.

use serde::{Deserialize, Serialize};

use crate::afem::{AfemConfig, Marking};
use crate::assembly::QuadratureConfig;
use crate::mesh::DomainSpec;
use crate::optimality::{FixedPointOptions, OcpParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ExampleId {
    One = 1,
    Two = 2,
    Three = 3,
}

impl TryFrom<u8> for ExampleId {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(ExampleId::One),
            2 => Ok(ExampleId::Two),
            3 => Ok(ExampleId::Three),
            _ => Err(format!("example must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<ExampleId> for u8 {
    fn from(e: ExampleId) -> u8 {
        e as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Disk,
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: ExampleId,
    pub domain: DomainKind,
    pub n_boundary: usize,
    pub n_per_side: usize,
    pub alpha: f64,
    pub theta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub a_lo: f64,
    pub b_hi: f64,
    /// Ratio of exact adjoint to exact state in the disk benchmark.
    pub c_adjoint: f64,
    pub marking: Marking,
    pub max_dofs: usize,
    pub max_iters: usize,
    pub output_dir: String,
    pub seed: u64,
    pub rate_window: usize,
    pub deterministic: bool,
    pub snapshots: bool,
    // fixed-point solver
    pub tol: f64,
    pub max_iter: usize,
    pub relax: f64,
    pub load_degree: usize,
    // quadrature
    pub far_order: usize,
    pub duffy_order: usize,
    pub grading_levels: usize,
    pub rho_grading: usize,
    pub far_ratio: f64,
    pub near_ratio: f64,
    pub eval_near_ratio: f64,
    pub eval_far_ratio: f64,
}

impl ExperimentConfig {
    pub fn for_example(example: ExampleId) -> Self {
        let q = QuadratureConfig::default();
        let s = FixedPointOptions::default();
        let (domain, a_lo, b_hi, gamma, max_dofs) = match example {
            ExampleId::One => (DomainKind::Disk, -0.5, 0.5, 1.0, 8_000),
            ExampleId::Two => (DomainKind::Square, -0.3, 0.3, 1.0, 10_000),
            ExampleId::Three => (DomainKind::Square, -0.3, 0.3, 0.1, 10_000),
        };
        Self {
            example,
            domain,
            n_boundary: 16,
            n_per_side: 4,
            alpha: 0.5,
            theta: 0.7,
            gamma,
            beta: 1.0,
            a_lo,
            b_hi,
            c_adjoint: 3.0,
            marking: Marking::Dorfler,
            max_dofs,
            max_iters: 100,
            output_dir: "out".into(),
            seed: 0,
            rate_window: 6,
            deterministic: false,
            snapshots: false,
            tol: s.tol,
            max_iter: s.max_iter,
            relax: s.relax,
            load_degree: s.load_degree,
            far_order: q.far_order,
            duffy_order: q.duffy_order,
            grading_levels: q.grading_levels,
            rho_grading: q.rho_grading,
            far_ratio: q.far_ratio,
            near_ratio: q.near_ratio,
            eval_near_ratio: q.eval_near_ratio,
            eval_far_ratio: q.eval_far_ratio,
        }
    }

    /// Parses a config file; keys not given take the defaults of the chosen
    /// example, and `overrides` (`key=value`) are applied last.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            table.insert(k, v);
        }
        let example = match table.get("example") {
            None => ExampleId::One,
            Some(toml::Value::Integer(i)) => {
                ExampleId::try_from(u8::try_from(*i).unwrap_or(0)).map_err(Error::Config)?
            }
            Some(other) => return Err(Error::Config(format!("example must be an integer, got {other}"))),
        };
        let mut base = toml::Table::try_from(Self::for_example(example)).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in table {
            if !base.contains_key(&k) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
            base.insert(k, v);
        }
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.domain().validate().map_err(cfg_err)?;
        self.ocp_params().validate().map_err(cfg_err)?;
        self.afem_config().validate().map_err(cfg_err)?;
        if self.example == ExampleId::One && self.domain != DomainKind::Disk {
            return Err(Error::Config("example 1 is posed on the disk".into()));
        }
        if self.example != ExampleId::One && self.domain != DomainKind::Square {
            return Err(Error::Config("examples 2 and 3 are posed on the square".into()));
        }
        if self.rate_window < 4 {
            return Err(Error::Config("rate_window must be at least 4".into()));
        }
        if !(self.tol > 0.0) || !(self.relax > 0.0 && self.relax <= 1.0) {
            return Err(Error::Config("need tol > 0 and relax in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> DomainSpec {
        match self.domain {
            DomainKind::Disk => DomainSpec::UnitDisk {
                n_boundary: self.n_boundary,
            },
            DomainKind::Square => DomainSpec::Square {
                n_per_side: self.n_per_side,
            },
        }
    }

    pub fn ocp_params(&self) -> OcpParams {
        OcpParams {
            alpha: self.alpha,
            gamma: self.gamma,
            beta: self.beta,
            a_lo: self.a_lo,
            b_hi: self.b_hi,
        }
    }

    pub fn quad(&self) -> QuadratureConfig {
        QuadratureConfig {
            far_order: self.far_order,
            duffy_order: self.duffy_order,
            grading_levels: self.grading_levels,
            rho_grading: self.rho_grading,
            far_ratio: self.far_ratio,
            near_ratio: self.near_ratio,
            eval_near_ratio: self.eval_near_ratio,
            eval_far_ratio: self.eval_far_ratio,
        }
    }

    pub fn afem_config(&self) -> AfemConfig {
        AfemConfig {
            theta: self.theta,
            max_dofs: self.max_dofs,
            max_iters: self.max_iters,
            marking: self.marking,
            solver: FixedPointOptions {
                tol: self.tol,
                max_iter: self.max_iter,
                relax: self.relax,
                load_degree: self.load_degree,
            },
            quad: self.quad(),
            deterministic: self.deterministic,
        }
    }
}

/// `key=value` where the value is read as a TOML value, falling back to a
/// bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    let k = k.trim().to_string();
    let v = v.trim();
    let parsed: std::result::Result<toml::Table, _> = format!("v = {v}").parse();
    let value = match parsed {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(v.to_string()),
    };
    Ok((k, value))
}
