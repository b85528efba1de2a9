//! Flat key-value configuration. Unknown keys are a hard error: a typo in
//! a physics parameter must never be silently ignored.

use serde::Deserialize;

use dps_abs::optimizer::SweepConfig;
use dps_abs::protocol::{ChannelParams, ProtocolParams};
use dps_abs::Probability;

use crate::{CmdError, CmdResult};

/// Raw config file contents; every field optional, defaults below.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n: Option<u32>,
    pub mu_a: Option<f64>,
    pub delta_db_per_km: Option<f64>,
    /// Explicit length list; overrides the start/stop/step triple.
    pub lengths: Option<Vec<f64>>,
    pub length_start_km: Option<f64>,
    pub length_stop_km: Option<f64>,
    pub length_step_km: Option<f64>,
    pub t_grid: Option<usize>,
    pub fp_grid: Option<usize>,
    pub p2_grid: Option<usize>,
    pub fp_min: Option<f64>,
    pub refine_tol: Option<f64>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub qber: Option<f64>,
    /// Single channel length for optimize-point and simulate.
    pub length_km: Option<f64>,
    /// Attack parameters for simulate.
    pub t: Option<f64>,
    pub fp: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub attack_enabled: Option<bool>,
    /// Inputs for critical-error and keyrate.
    pub i_ae: Option<f64>,
    pub p_conc: Option<f64>,
    /// Alice-intensity scan for optimal-mua.
    pub mua_min: Option<f64>,
    pub mua_max: Option<f64>,
    pub mua_grid: Option<usize>,
}

/// Fully resolved configuration with every default materialized.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub sweep: SweepConfig,
    pub trials: u64,
    pub seed: u64,
    pub length_km: Option<f64>,
    pub attack: Option<(f64, f64, f64, f64)>,
    pub attack_enabled: bool,
    pub i_ae: Option<f64>,
    pub p_conc: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &std::path::Path) -> CmdResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CmdError::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CmdError::config(format!("invalid config: {e}")))
    }

    /// Applies defaults and validates against the domain types. The CLI
    /// `--seed` flag, when given, overrides the config seed.
    pub fn resolve(&self, seed_override: Option<u64>) -> CmdResult<Resolved> {
        let n = self.n.unwrap_or(10);
        let mu_a = self.mu_a.unwrap_or(0.1);
        let protocol = ProtocolParams::new(n, mu_a)
            .map_err(|e| CmdError::config(format!("invalid protocol parameters: {e}")))?;

        let delta = self.delta_db_per_km.unwrap_or(0.2);
        let lengths_km = match &self.lengths {
            Some(list) => list.clone(),
            None => {
                let start = self.length_start_km.unwrap_or(0.0);
                let stop = self.length_stop_km.unwrap_or(250.0);
                let step = self.length_step_km.unwrap_or(2.0);
                if step <= 0.0 || step.is_nan() || stop < start {
                    return Err(CmdError::config(
                        "length range requires step > 0 and stop >= start",
                    ));
                }
                let count = ((stop - start) / step).round() as usize;
                (0..=count).map(|i| start + step * i as f64).collect()
            }
        };

        let qber = Probability::new(self.qber.unwrap_or(0.0))
            .map_err(|e| CmdError::config(format!("invalid qber: {e}")))?;

        let sweep = SweepConfig {
            protocol,
            delta_db_per_km: delta,
            lengths_km,
            t_points: self.t_grid.unwrap_or(33),
            fp_points: self.fp_grid.unwrap_or(33),
            p2_points: self.p2_grid.unwrap_or(33),
            fp_min: self.fp_min.unwrap_or(1e-6),
            refine_tol: self.refine_tol.unwrap_or(1e-8),
            qber,
            mua_min: self.mua_min.unwrap_or(1e-3),
            mua_max: self.mua_max.unwrap_or(1.0),
            mua_points: self.mua_grid.unwrap_or(25),
        };
        sweep
            .validate()
            .map_err(|e| CmdError::config(format!("invalid configuration: {e}")))?;

        if let Some(l) = self.length_km {
            ChannelParams::new(delta, l)
                .map_err(|e| CmdError::config(format!("invalid length_km: {e}")))?;
        }

        let attack = match (self.t, self.fp, self.p1, self.p2) {
            (Some(t), Some(fp), Some(p1), Some(p2)) => Some((t, fp, p1, p2)),
            (None, None, None, None) => None,
            _ => {
                return Err(CmdError::config(
                    "attack parameters t, fp, p1, p2 must be given together",
                ))
            }
        };

        Ok(Resolved {
            sweep,
            trials: self.trials.unwrap_or(1_000_000),
            seed: seed_override.or(self.seed).unwrap_or(0),
            length_km: self.length_km,
            attack,
            attack_enabled: self.attack_enabled.unwrap_or(true),
            i_ae: self.i_ae,
            p_conc: self.p_conc,
        })
    }
}

impl Resolved {
    /// Canonical `key = value` lines embedded in every CSV so a run can be
    /// reproduced from its own output.
    pub fn echo_lines(&self) -> Vec<String> {
        let s = &self.sweep;
        let mut lines = vec![
            format!("n = {}", s.protocol.n()),
            format!("mu_a = {}", s.protocol.mu_a()),
            format!("delta_db_per_km = {}", s.delta_db_per_km),
            format!(
                "lengths = [{}]",
                s.lengths_km
                    .iter()
                    .map(|l| l.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            format!("t_grid = {}", s.t_points),
            format!("fp_grid = {}", s.fp_points),
            format!("p2_grid = {}", s.p2_points),
            format!("fp_min = {}", s.fp_min),
            format!("refine_tol = {}", s.refine_tol),
            format!("qber = {}", s.qber.value()),
            format!("trials = {}", self.trials),
            format!("seed = {}", self.seed),
            format!("mua_min = {}", s.mua_min),
            format!("mua_max = {}", s.mua_max),
            format!("mua_grid = {}", s.mua_points),
        ];
        if let Some(l) = self.length_km {
            lines.push(format!("length_km = {l}"));
        }
        if let Some((t, fp, p1, p2)) = self.attack {
            lines.push(format!("t = {t}"));
            lines.push(format!("fp = {fp}"));
            lines.push(format!("p1 = {p1}"));
            lines.push(format!("p2 = {p2}"));
            lines.push(format!("attack_enabled = {}", self.attack_enabled));
        }
        if let Some(i) = self.i_ae {
            lines.push(format!("i_ae = {i}"));
        }
        if let Some(p) = self.p_conc {
            lines.push(format!("p_conc = {p}"));
        }
        lines
    }
}
