//! Run configuration: one TOML document, echoed into the output directory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::escape::ThreePiecePolicy;
use crate::map_model::{OneSided, PiecewiseMap, Side};
use crate::partition::r_delta;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Candidate {
    pub lambda: f64,
    pub kappa: f64,
    /// Growth rate along critical orbits.
    pub big_lambda: f64,
}

impl Default for Candidate {
    fn default() -> Self {
        Candidate { lambda: 0.1, kappa: 1.0, big_lambda: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunLimits {
    pub n_max: u32,
    pub max_intervals: usize,
    pub min_width: f64,
    /// Horizon of the escape-only run of Δ*.
    pub escape_n_max: u32,
    pub r_max: u32,
    pub binding_horizon: usize,
    pub h1_block_len: usize,
    pub h1_samples: usize,
    pub h2_horizon: usize,
    pub h3_depth: usize,
    pub h3_mesh: f64,
    pub h3_max_nodes: usize,
    pub return_budget: u32,
    pub record_events: bool,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            n_max: 200,
            max_intervals: 2_000_000,
            min_width: 1e-14,
            escape_n_max: 45,
            r_max: 700,
            binding_horizon: 1000,
            h1_block_len: 30,
            h1_samples: 2000,
            h2_horizon: 1000,
            h3_depth: 12,
            h3_mesh: 0.01,
            h3_max_nodes: 1 << 20,
            return_budget: 60,
            record_events: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsBudget {
    pub orbit_iterates: u64,
    pub burn_in: u64,
    pub acip_bins: usize,
    /// Ulam grid over Δ*.
    pub base_bins: usize,
    pub ulam_iterations: usize,
    pub corr_samples: u64,
    pub corr_lags: usize,
    pub observable: String,
    pub holder_exponent: f64,
    pub clt_n: u64,
    pub clt_trials: usize,
    pub audit_elements: usize,
    pub audit_pairs: usize,
    /// Symbolic-metric base; `(1 + 1/λ')/2` when absent.
    pub sigma: Option<f64>,
}

impl Default for StatsBudget {
    fn default() -> Self {
        StatsBudget {
            orbit_iterates: 10_000_000,
            burn_in: 1000,
            acip_bins: 200,
            base_bins: 1000,
            ulam_iterations: 2000,
            corr_samples: 10_000_000,
            corr_lags: 40,
            observable: "x".into(),
            holder_exponent: 1.0,
            clt_n: 10_000,
            clt_trials: 10_000,
            audit_elements: 64,
            audit_pairs: 16,
            sigma: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `builtin:<name>` or a map file path.
    pub map: String,
    /// Snapped to `e^{-r_δ}` on resolution; per-map default when absent.
    pub delta: Option<f64>,
    pub alpha: f64,
    pub c_star: Option<OneSided>,
    pub seed: u64,
    pub out: String,
    pub three_piece_policy: ThreePiecePolicy,
    pub candidate: Candidate,
    pub limits: RunLimits,
    pub stats: StatsBudget,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            map: "builtin:chebyshev".into(),
            delta: None,
            alpha: 0.05,
            c_star: None,
            seed: 1,
            out: "out".into(),
            three_piece_policy: ThreePiecePolicy::Chop,
            candidate: Candidate::default(),
            limits: RunLimits::default(),
            stats: StatsBudget::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(src: &str) -> Result<RunConfig> {
        toml::from_str(src).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills per-map defaults, snaps δ and validates every field.
    pub fn resolve(&mut self, map: &PiecewiseMap) -> Result<()> {
        let delta = self.delta.unwrap_or(match map.name.as_str() {
            "chebyshev" => (-5.0f64).exp(),
            _ => (-4.0f64).exp(),
        });
        self.delta = Some(r_delta(delta)?.1);
        if self.c_star.is_none() {
            self.c_star = Some(default_c_star(map)?);
        }
        positive("alpha", self.alpha)?;
        positive("candidate.lambda", self.candidate.lambda)?;
        positive("candidate.kappa", self.candidate.kappa)?;
        positive("candidate.big_lambda", self.candidate.big_lambda)?;
        let l = &self.limits;
        positive("limits.min_width", l.min_width)?;
        positive("limits.h3_mesh", l.h3_mesh)?;
        // max_intervals = 0 is accepted: the run stops on its first step
        for (name, v) in [
            ("limits.n_max", l.n_max as f64),
            ("limits.escape_n_max", l.escape_n_max as f64),
            ("limits.r_max", l.r_max as f64),
            ("limits.binding_horizon", l.binding_horizon as f64),
            ("limits.h1_block_len", l.h1_block_len as f64),
            ("limits.h1_samples", l.h1_samples as f64),
            ("limits.h2_horizon", l.h2_horizon as f64),
            ("limits.h3_max_nodes", l.h3_max_nodes as f64),
            ("limits.return_budget", l.return_budget as f64),
        ] {
            positive(name, v)?;
        }
        let s = &self.stats;
        for (name, v) in [
            ("stats.orbit_iterates", s.orbit_iterates as f64),
            ("stats.acip_bins", s.acip_bins as f64),
            ("stats.base_bins", s.base_bins as f64),
            ("stats.ulam_iterations", s.ulam_iterations as f64),
            ("stats.corr_samples", s.corr_samples as f64),
            ("stats.corr_lags", s.corr_lags as f64),
            ("stats.holder_exponent", s.holder_exponent),
            ("stats.clt_n", s.clt_n as f64),
            ("stats.clt_trials", s.clt_trials as f64),
            ("stats.audit_elements", s.audit_elements as f64),
            ("stats.audit_pairs", s.audit_pairs as f64),
        ] {
            positive(name, v)?;
        }
        if let Some(sigma) = s.sigma {
            if !(sigma > 0.0 && sigma < 1.0) {
                return Err(Error::Config(format!("stats.sigma must lie in (0, 1), got {sigma}")));
            }
        }
        if s.corr_lags as u64 * 10 >= s.corr_samples {
            return Err(Error::Config("stats.corr_lags must be below corr_samples / 10".into()));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.delta.expect("resolved config")
    }

    pub fn c_star(&self) -> OneSided {
        self.c_star.expect("resolved config")
    }
}

/// Right side of the first critical point, else of the first interior
/// branch boundary.
pub fn default_c_star(map: &PiecewiseMap) -> Result<OneSided> {
    if let Some(c) = map.critical.iter().find(|c| c.side == Side::Right).or(map.critical.first()) {
        return Ok(OneSided { location: c.location, side: c.side });
    }
    map.branches
        .iter()
        .skip(1)
        .map(|b| b.lo)
        .next()
        .map(|location| OneSided { location, side: Side::Right })
        .ok_or_else(|| Error::Config("map has a single branch; set c_star".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_per_map() {
        let map = PiecewiseMap::builtin("lorenz").unwrap();
        let mut c = RunConfig { map: "builtin:lorenz".into(), ..Default::default() };
        c.resolve(&map).unwrap();
        assert_eq!(c.delta(), (-4.0f64).exp());
        assert_eq!(c.c_star(), OneSided { location: 0.0, side: Side::Right });
    }

    #[test]
    fn delta_is_snapped() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let mut c = RunConfig { delta: Some(0.01), ..Default::default() };
        c.resolve(&map).unwrap();
        assert_eq!(c.delta(), (-5.0f64).exp());
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let mut c = RunConfig { three_piece_policy: ThreePiecePolicy::Inessential, ..Default::default() };
        c.stats.sigma = Some(0.75);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::from_toml("delta_typo = 0.1").is_err());
        let partial = RunConfig::from_toml("seed = 9\n[limits]\nn_max = 7\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.limits.n_max, 7);
        assert_eq!(partial.limits.max_intervals, RunLimits::default().max_intervals);
    }

    #[test]
    fn rejects_non_positive_fields() {
        let map = PiecewiseMap::chebyshev().unwrap();
        let mut c = RunConfig { alpha: 0.0, ..Default::default() };
        assert!(matches!(c.resolve(&map), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.limits.max_intervals = 0;
        assert!(c.resolve(&map).is_ok());
        c.stats.clt_trials = 0;
        assert!(c.resolve(&map).is_err());
    }

    #[test]
    fn baseline_c_star_is_the_branch_boundary() {
        let map = PiecewiseMap::uniform(2).unwrap();
        assert_eq!(default_c_star(&map).unwrap(), OneSided { location: 0.0, side: Side::Right });
    }
}
