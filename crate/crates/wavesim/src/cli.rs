//! Command implementations behind the `wavesim` binary.
//!
//! Commands return `Ok(())` or an error whose `exit_code` maps to the
//! process exit status: 2 for configuration errors, 3 for numeric/solver
//! failures, 4 for I/O and format problems.

use crate::config::{load_config, RunConfig};
use crate::error::{Error, Result};
use crate::fd::{assemble_fd, restrict, solve_fd, FdGrid};
use crate::field::ComplexField;
use crate::io::{
    load_field, load_metrics, load_velocity, save_checkpoint, save_field, MetricsWriter,
};
use crate::medium::VelocityModel;
use crate::train::{predict_on_grid, run_train, Scenario, TrainMode};
use std::path::Path;

fn load_model(cfg: &RunConfig) -> Result<VelocityModel> {
    let path = cfg
        .velocity_file
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs `velocity_file`".into()))?;
    load_velocity(path)
}

fn scenario_from(cfg: &RunConfig) -> Result<Scenario> {
    Scenario::new(cfg.domain, cfg.pml, cfg.source, load_model(cfg)?)
}

/// Reference solve: writes the scattered field on the output grid and
/// prints the direct-solver residual.
pub fn cmd_fd(config_path: &Path) -> Result<()> {
    let cfg = load_config(config_path)?;
    let scenario = scenario_from(&cfg)?;
    let grid = FdGrid::from_output(&cfg.domain, cfg.out_nx, cfg.out_nz, cfg.fd_refine)?;
    let sys = assemble_fd(&scenario.model, &cfg.source, &cfg.domain, &cfg.pml, &grid)?;
    let (fine, residual) = solve_fd(&sys, &grid, &cfg.domain)?;
    let field = restrict(&fine, cfg.fd_refine)?;
    let out = cfg
        .output_field
        .as_ref()
        .ok_or_else(|| Error::Config("`output_field` is required for the fd command".into()))?;
    save_field(out, &field)?;
    println!(
        "fd: solved {} unknowns at {:.2} m spacing, residual {:.3e}",
        sys.n, grid.dx, residual
    );
    println!("fd: wrote {}", out.display());
    Ok(())
}

/// Training run: writes checkpoint, metrics CSV and the final predicted
/// field on the reference grid (or the output grid when no reference is
/// configured).
pub fn cmd_train(config_path: &Path, mode: TrainMode) -> Result<()> {
    let cfg = load_config(config_path)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.mode = mode;
    let scenario = scenario_from(&cfg)?;
    let reference = match &cfg.reference_field {
        Some(path) => Some(load_field(path)?),
        None => None,
    };
    if train_cfg.val_cadence > 0 && reference.is_none() {
        return Err(Error::Config(
            "validation is enabled (val_cadence > 0) but `reference_field` is not set".into(),
        ));
    }

    let outcome = run_train(&scenario, &cfg.arch, &train_cfg, reference.as_ref())?;

    if let Some(path) = &cfg.metrics_out {
        let mut w = MetricsWriter::create(path)?;
        for rec in &outcome.metrics {
            w.append(rec)?;
        }
        println!("train: wrote {}", path.display());
    }
    if let Some(path) = &cfg.checkpoint_out {
        save_checkpoint(path, &outcome.params)?;
        println!("train: wrote {}", path.display());
    }
    if let Some(path) = &cfg.output_field {
        let field: ComplexField = match &reference {
            Some(r) => predict_on_grid(&outcome.params, r.nx, r.nz, r.dx, r.dz, r.x_min, r.z_min),
            None => {
                let d = &cfg.domain;
                let dx = (d.x_max - d.x_min) / (cfg.out_nx - 1) as f64;
                let dz = (d.z_max - d.z_min) / (cfg.out_nz - 1) as f64;
                predict_on_grid(
                    &outcome.params,
                    cfg.out_nx,
                    cfg.out_nz,
                    dx,
                    dz,
                    d.x_min,
                    d.z_min,
                )
            }
        };
        save_field(path, &field)?;
        println!("train: wrote {}", path.display());
    }
    let last_val = outcome
        .metrics
        .iter()
        .rev()
        .find(|m| !m.val_rel_l2.is_nan())
        .map(|m| m.val_rel_l2);
    match last_val {
        Some(v) => println!(
            "train: {} epochs, final loss {:.6e}, final val rel-L2 {:.4}",
            train_cfg.epochs, outcome.final_loss, v
        ),
        None => println!(
            "train: {} epochs, final loss {:.6e}",
            train_cfg.epochs, outcome.final_loss
        ),
    }
    Ok(())
}

/// Interior relative L2 difference between two field files.
pub fn cmd_compare(field_a: &Path, field_b: &Path, config_path: &Path) -> Result<()> {
    let cfg = load_config(config_path)?;
    let a = load_field(field_a)?;
    let b = load_field(field_b)?;
    if !a.same_grid(&b) {
        return Err(Error::Config(format!(
            "grids differ: {} x {} vs {} x {}",
            a.nx, a.nz, b.nx, b.nz
        )));
    }
    let rel = a.relative_l2(&b, &cfg.domain)?;
    println!("{rel:.6e}");
    Ok(())
}

/// Re-emit a metrics CSV as whitespace-separated plot-ready columns.
pub fn cmd_export_metrics(csv_path: &Path) -> Result<()> {
    let rows = load_metrics(csv_path)?;
    println!("# epoch loss val_rel_l2 lr epsilon seconds");
    for r in rows {
        println!(
            "{} {:.9e} {} {:.6e} {:.6e} {:.3}",
            r.epoch,
            r.loss,
            if r.val_rel_l2.is_nan() {
                "-".to_string()
            } else {
                format!("{:.6e}", r.val_rel_l2)
            },
            r.lr,
            r.epsilon,
            r.seconds
        );
    }
    Ok(())
}
