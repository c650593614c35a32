//! Flat `key = value` run configuration.
//!
//! One file describes a whole run: geometry, absorbing layer, source,
//! network, training and solver settings, grid shape and file paths.
//! Lines starting with `#` are comments. Unknown keys are fatal so typos
//! never fall back to silent defaults. All physical quantities are in
//! SI units: meters, m/s, Hz.

use crate::error::{Error, Result};
use crate::ls::{ConstraintBlock, EpsilonSchedule};
use crate::medium::{Domain, PmlSpec, SourceSpec};
use crate::network::Architecture;
use crate::train::{TrainConfig, TrainMode};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

/// Parsed configuration for the command-line tools.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub domain: Domain,
    pub pml: PmlSpec,
    pub source: SourceSpec,
    pub arch: Architecture,
    pub train: TrainConfig,
    /// Output grid node counts over the outer domain.
    pub out_nx: usize,
    pub out_nz: usize,
    /// Fine-grid refinement of the reference solver.
    pub fd_refine: usize,
    pub velocity_file: Option<PathBuf>,
    pub reference_field: Option<PathBuf>,
    pub output_field: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
}

struct KeyValues {
    map: HashMap<String, String>,
    used: std::cell::RefCell<std::collections::HashSet<String>>,
}

impl KeyValues {
    fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(KeyValues {
            map,
            used: Default::default(),
        })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.map.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("key `{key}`: bad number `{raw}`")))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("key `{key}`: bad number `{raw}`"))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("key `{key}`: bad integer `{raw}`"))),
        }
    }

    fn usize(&self, key: &str) -> Result<usize> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("key `{key}`: bad integer `{raw}`")))
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(raw) => Err(Error::Config(format!("key `{key}`: bad flag `{raw}`"))),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    fn reject_unknown(&self) -> Result<()> {
        let used = self.used.borrow();
        let mut unknown: Vec<&String> = self.map.keys().filter(|k| !used.contains(*k)).collect();
        unknown.sort();
        if let Some(first) = unknown.first() {
            return Err(Error::Config(format!("unknown key `{first}`")));
        }
        Ok(())
    }
}

/// Parse a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Parse configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let kv = KeyValues::parse(text)?;

    let x_bl = kv.f64("x_left")?;
    let x_br = kv.f64("x_right")?;
    let z_bu = kv.f64("z_top")?;
    let z_bd = kv.f64("z_bottom")?;
    let pml_enabled = kv.bool_or("pml_enabled", false)?;
    let thickness = kv.f64_or("pml_thickness", 0.0)?;
    let a0 = kv.f64_or("pml_a0", 0.8)?;
    let omega0 = kv.f64_or("pml_omega0", 0.0)?;
    let pml = if pml_enabled {
        if thickness <= 0.0 {
            return Err(Error::Config(
                "pml_enabled requires a positive pml_thickness".into(),
            ));
        }
        PmlSpec {
            thickness,
            a0,
            omega0,
            enabled: true,
        }
    } else {
        PmlSpec::disabled()
    };
    let domain = Domain::new(x_bl, x_br, z_bu, z_bd, if pml_enabled { thickness } else { 0.0 })?;

    let source = SourceSpec::new(kv.f64("source_x")?, kv.f64("source_z")?, kv.f64("frequency")?);
    if source.omega <= 0.0 {
        return Err(Error::Config("frequency must be positive".into()));
    }

    let hidden_raw = kv.get("arch_hidden").unwrap_or("64,64,64,64").to_string();
    let hidden: Vec<usize> = hidden_raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("arch_hidden: bad width `{s}`")))
        })
        .collect::<Result<_>>()?;
    if hidden.is_empty() || hidden.iter().any(|&w| w == 0) {
        return Err(Error::Config("arch_hidden must list positive widths".into()));
    }
    let arch = Architecture {
        k_max: kv.usize_or("arch_k", 3)?,
        hidden,
        coord_scale: kv.f64_or("coord_scale", 1e-3)?,
    };

    let n_collocation = kv.usize_or("n_collocation", 500)?;
    if n_collocation == 0 {
        return Err(Error::Config("n_collocation must be at least 1".into()));
    }
    let train = TrainConfig {
        mode: TrainMode::Lsgd, // overridden by the CLI `--mode` flag
        pml_enabled,
        n_collocation,
        n_constraint: kv.usize_or(
            "n_constraint",
            TrainConfig::default_n_constraint(n_collocation),
        )?,
        beta: kv.f64_or("beta", 1.0)?,
        epochs: kv.usize_or("epochs", 1000)?,
        lr_start: kv.f64_or("lr_start", 0.002)?,
        lr_end: kv.f64_or("lr_end", 0.0007)?,
        adam_beta1: kv.f64_or("adam_beta1", 0.9)?,
        adam_beta2: kv.f64_or("adam_beta2", 0.999)?,
        adam_eps: kv.f64_or("adam_eps", 1e-8)?,
        eps_schedule: EpsilonSchedule {
            eps_start: kv.f64_or("eps_start", 0.1)?,
            eps_end: kv.f64_or("eps_end", 1e-4)?,
            decay_epochs: kv.usize_or("eps_decay_epochs", 1000)?,
        },
        seed: kv.usize_or("seed", 0)? as u64,
        val_cadence: kv.usize_or("val_cadence", 100)?,
        constraint_block: match kv.get("constraint_block").unwrap_or("block_diagonal") {
            "block_diagonal" => ConstraintBlock::BlockDiagonal,
            "literal" => ConstraintBlock::Literal,
            other => {
                return Err(Error::Config(format!(
                    "constraint_block: `{other}` is not `block_diagonal` or `literal`"
                )))
            }
        },
    };

    let cfg = RunConfig {
        out_nx: kv.usize("out_nx")?,
        out_nz: kv.usize("out_nz")?,
        fd_refine: kv.usize_or("fd_refine", 2)?,
        velocity_file: kv.path("velocity_file"),
        reference_field: kv.path("reference_field"),
        output_field: kv.path("output_field"),
        checkpoint_out: kv.path("checkpoint_out"),
        metrics_out: kv.path("metrics_out"),
        domain,
        pml,
        source,
        arch,
        train,
    };
    // validations that need several keys at once
    if !(cfg.train.lr_start >= cfg.train.lr_end && cfg.train.lr_end > 0.0) {
        return Err(Error::Config("need lr_start >= lr_end > 0".into()));
    }
    if !(cfg.train.adam_beta1 > 0.0
        && cfg.train.adam_beta1 < 1.0
        && cfg.train.adam_beta2 > 0.0
        && cfg.train.adam_beta2 < 1.0)
    {
        return Err(Error::Config("adam betas must lie in (0, 1)".into()));
    }
    if !(cfg.train.eps_schedule.eps_start >= cfg.train.eps_schedule.eps_end
        && cfg.train.eps_schedule.eps_end > 0.0)
    {
        return Err(Error::Config("need eps_start >= eps_end > 0".into()));
    }
    kv.reject_unknown()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        "\
# interior geometry (meters)
x_left = 0
x_right = 1000
z_top = 0
z_bottom = 1000
source_x = 500
source_z = 250
frequency = 4
out_nx = 81
out_nz = 81
"
        .to_string()
    }

    #[test]
    fn parses_minimal_with_defaults() {
        let cfg = parse_config(&minimal()).unwrap();
        assert_eq!(cfg.domain.x_max, 1000.0);
        assert!(!cfg.pml.enabled);
        assert_eq!(cfg.arch.hidden, vec![64, 64, 64, 64]);
        assert_eq!(cfg.train.n_collocation, 500);
        assert_eq!(cfg.train.n_constraint, 64);
        assert_eq!(cfg.train.lr_start, 0.002);
        assert_eq!(cfg.fd_refine, 2);
    }

    #[test]
    fn unknown_key_is_fatal() {
        let text = minimal() + "n_colocation = 100\n";
        match parse_config(&text) {
            Err(Error::Config(msg)) => assert!(msg.contains("n_colocation"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn pml_geometry_expands_outer_extents() {
        let text = minimal() + "pml_enabled = true\npml_thickness = 200\n";
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.domain.x_min, -200.0);
        assert_eq!(cfg.domain.z_max, 1200.0);
        assert!(cfg.pml.enabled);
        assert_eq!(cfg.pml.a0, 0.8);
        assert!(cfg.train.pml_enabled);
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(parse_config(&(minimal() + "epochs = many\n")).is_err());
        assert!(parse_config(&(minimal() + "lr_start = 0.0001\nlr_end = 0.01\n")).is_err());
        assert!(parse_config(&(minimal() + "constraint_block = diag\n")).is_err());
        assert!(parse_config(&(minimal() + "pml_enabled = true\n")).is_err());
        // duplicate key
        assert!(parse_config(&(minimal() + "out_nx = 5\n")).is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# a comment\n\n".to_string() + &minimal() + "\n# trailing\n";
        assert!(parse_config(&text).is_ok());
    }
}
