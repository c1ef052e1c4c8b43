//! The check, tower and statistics stages, writing their artifacts into the
//! output directory.
//!
//! Every CSV starts with `# config_hash=<sha256>` and optional further `#`
//! lines, then a header row. Numbers use Rust's shortest round-trip form,
//! so reruns with the same config and seed are byte-identical.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::escape::{fit_log_linear, EscapeEngine, Limits, LogLinearFit, OrbitInterval, ReturnKind};
use crate::hypotheses::{check_h1, check_h2, check_h3, check_nondegeneracy, HypothesisReport};
use crate::map_model::PiecewiseMap;
use crate::partition::{binding_expansion_audit, BindingTable, CriticalPartition};
use crate::stats::{
    acip_orbit, acip_tower, arcsine_cdf, clt_test, correlation, holder_lift_check, lyapunov,
    symbolic_distortion_check, Observable, Orbit, SymbolicCheck,
};
use crate::tower::{audit_elements, build_tower, choose_delta_star, distortion_audit, Tower};

pub const HYPOTHESES_HEADER: &str = "check,target,candidate,measured,verdict,witness";
pub const BINDING_HEADER: &str = "c,r,p,theta_emp";
pub const ESCAPE_TAIL_HEADER: &str = "n,active_measure,escaped_measure,aborted_measure";
pub const EVENTS_HEADER: &str = "left right time kind crit r j p";
pub const TOWER_HEADER: &str = "id,left,right,return_time,generation,escape_time,image_error";
pub const RETURN_TAIL_HEADER: &str = "n,unresolved_measure,aborted_measure";
pub const DISTORTION_HEADER: &str = "id,return_time,width,distortion,min_expansion,contraction,pairs";
pub const ACIP_HEADER: &str = "bin,left,right,orbit_density,tower_density,oracle_density";
pub const LYAPUNOV_HEADER: &str = "value,std_err,samples,skipped";
pub const CORRELATION_HEADER: &str = "n,c,signed,std_err,floor";
pub const CLT_HEADER: &str = "trial,normalized_sum";
pub const SYMBOLIC_HEADER: &str = "check,budget,sigma,constant,pairs,flagged,cylinder_violations";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatKind {
    Acip,
    Lyapunov,
    Corr,
    Clt,
    Symbolic,
}

impl StatKind {
    pub const ALL: [StatKind; 5] = [StatKind::Acip, StatKind::Lyapunov, StatKind::Corr, StatKind::Clt, StatKind::Symbolic];
}

/// Human-readable lines plus the flags that decide the exit status.
#[derive(Clone, Debug, Default)]
pub struct StageOutcome {
    pub lines: Vec<String>,
    pub hypotheses_failed: bool,
    pub limit_hit: bool,
}

impl StageOutcome {
    fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    pub fn merge(&mut self, other: StageOutcome) {
        self.lines.extend(other.lines);
        self.hypotheses_failed |= other.hypotheses_failed;
        self.limit_hit |= other.limit_hit;
    }
}

pub struct Csv {
    w: BufWriter<File>,
}

impl Csv {
    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.w, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// A resolved configuration bound to its map and output directory.
pub struct Pipeline {
    pub config: RunConfig,
    pub map: PiecewiseMap,
    pub out: PathBuf,
    pub hash: String,
}

fn fmt_fit(f: &Option<LogLinearFit>) -> String {
    match f {
        Some(f) => format!(
            "slope={} intercept={} r2={} window={}..{} points={}",
            f.slope, f.intercept, f.r2, f.n0, f.n1, f.points
        ),
        None => "none".into(),
    }
}

impl Pipeline {
    /// Resolves the config, creates the output directory and echoes the
    /// resolved config into `config.toml`.
    pub fn new(mut config: RunConfig) -> Result<Pipeline> {
        let map = PiecewiseMap::load(&config.map).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("cannot read map '{}': {io}", config.map)),
            other => other,
        })?;
        config.resolve(&map)?;
        let out = PathBuf::from(&config.out);
        fs::create_dir_all(&out)?;
        let mut hashed = config.clone();
        hashed.out = String::new();
        let hash = hex::encode(Sha256::digest(hashed.to_toml().as_bytes()));
        fs::write(out.join("config.toml"), config.to_toml())?;
        Ok(Pipeline { config, map, out, hash })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn csv(&self, name: &str, comments: &[String], header: &str) -> Result<Csv> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        writeln!(w, "# config_hash={}", self.hash)?;
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{header}")?;
        Ok(Csv { w })
    }

    fn report(&self, name: &str, o: &StageOutcome) -> Result<()> {
        let mut s = format!("config_hash={}\n", self.hash);
        for l in &o.lines {
            s.push_str(l);
            s.push('\n');
        }
        fs::write(self.path(name), s)?;
        Ok(())
    }

    fn partition(&self) -> Result<(CriticalPartition, BindingTable)> {
        let part = CriticalPartition::new(&self.map, self.config.delta(), self.config.limits.r_max)?;
        let binding = BindingTable::build(&self.map, &part, self.config.alpha, self.config.limits.binding_horizon);
        Ok((part, binding))
    }

    /// Hypothesis audits and the binding table.
    pub fn check(&self) -> Result<StageOutcome> {
        let c = &self.config;
        let l = &c.limits;
        let delta = c.delta();
        let radii: Vec<f64> = [1.0, 0.1, 0.01].iter().map(|k| k * delta).collect();
        let rep = HypothesisReport {
            nondegeneracy: check_nondegeneracy(&self.map, &radii, 200),
            h1: check_h1(&self.map, delta, l.h1_block_len, l.h1_samples, (c.candidate.lambda, c.candidate.kappa))?,
            h2: check_h2(&self.map, delta, c.alpha, c.candidate.big_lambda, l.h2_horizon)?,
            h3: check_h3(&self.map, c.c_star(), l.h3_depth, l.h3_mesh, l.h3_max_nodes)?,
        };
        let verdict = |b: bool| if b { "pass" } else { "fail" }.to_string();
        let mut csv = self.csv("hypotheses.csv", &[format!("delta={delta}")], HYPOTHESES_HEADER)?;
        for r in &rep.nondegeneracy {
            csv.row(&[
                "nondegeneracy".into(),
                format!("c{}@{}", r.crit, r.radius),
                r.declared.to_string(),
                r.measured.to_string(),
                verdict(r.pass),
                String::new(),
            ])?;
        }
        let h1 = &rep.h1;
        csv.row(&[
            "h1".into(),
            "all".into(),
            format!("lambda={} kappa={}", h1.candidate.0, h1.candidate.1),
            format!("lambda={} kappa={} blocks={}", h1.lambda_hat, h1.kappa_hat, h1.blocks),
            verdict(h1.pass),
            format!("x={} n={} strong={}", h1.witness.x, h1.witness.n, h1.witness.strong),
        ])?;
        if rep.h2.is_empty() {
            csv.row(&["h2".into(), "none".into(), String::new(), String::new(), "pass".into(), "vacuous".into()])?;
        }
        for r in &rep.h2 {
            csv.row(&[
                "h2".into(),
                format!("c{}", r.crit),
                format!("alpha={} Lambda={}", r.candidate.0, r.candidate.1),
                format!("alpha_min={} Lambda={} horizon={}", r.alpha_min, r.lambda_hat, r.horizon),
                verdict(r.pass),
                format!("alpha_k={} Lambda_k={}", r.alpha_witness, r.lambda_witness),
            ])?;
        }
        let h3 = &rep.h3;
        csv.row(&[
            "h3".into(),
            format!("{}{:?}", h3.c_star.location, h3.c_star.side).to_lowercase(),
            format!("mesh={}", h3.mesh),
            format!("gap={} depth={}", h3.profile.last().copied().unwrap_or(f64::NAN), h3.profile.len().saturating_sub(1)),
            verdict(h3.pass),
            format!("near_critical={} truncated={}", h3.near_critical.len(), h3.truncated),
        ])?;
        csv.finish()?;

        let (part, binding) = self.partition()?;
        let mut csv = self.csv("binding.csv", &[format!("alpha={} horizon={}", c.alpha, l.binding_horizon)], BINDING_HEADER)?;
        for (crit, (_, entries)) in binding.rows.iter().enumerate() {
            if binding.orbits[crit].is_none() {
                continue;
            }
            for e in entries {
                let theta = binding_expansion_audit(&self.map, &part, crit, e.r, e.p, c.candidate.kappa, 9);
                csv.row(&[crit.to_string(), e.r.to_string(), e.p.to_string(), theta.to_string()])?;
            }
        }
        csv.finish()?;

        let mut o = StageOutcome { hypotheses_failed: !rep.pass(), ..Default::default() };
        o.line(format!("map {} delta {delta}", self.map.name));
        o.line(format!("H1 lambda_hat {} kappa_hat {} -> {}", h1.lambda_hat, h1.kappa_hat, verdict(h1.pass)));
        for r in &rep.h2 {
            o.line(format!("H2 c{} alpha_min {} Lambda_hat {} -> {}", r.crit, r.alpha_min, r.lambda_hat, verdict(r.pass)));
        }
        if rep.h2.is_empty() {
            o.line("H2 vacuous: no critical points of order >= 1");
        }
        o.line(format!("H3 final gap {} -> {}", h3.profile.last().copied().unwrap_or(f64::NAN), verdict(h3.pass)));
        for r in rep.nondegeneracy.iter().filter(|r| !r.pass) {
            o.line(format!("nondegeneracy fails at c{} radius {}: measured {} declared {}", r.crit, r.radius, r.measured, r.declared));
        }
        o.line(format!("overall {}", verdict(rep.pass())));
        self.report("check_report.txt", &o)?;
        Ok(o)
    }

    fn engine_limits(&self, n_max: u32) -> Limits {
        let l = &self.config.limits;
        Limits { n_max, max_intervals: l.max_intervals, min_width: l.min_width }
    }

    /// Return configuration, escape tail of Δ*, tower and distortion audit.
    pub fn tower(&self) -> Result<StageOutcome> {
        let c = &self.config;
        let mut o = StageOutcome::default();
        let (part, binding) = self.partition()?;
        let cfg = choose_delta_star(&self.map, c.delta(), c.c_star(), c.limits.return_budget)?;
        fs::write(self.path("tower.cfg"), toml::to_string(&cfg).expect("return config serializes"))?;
        o.line(format!("delta_star {} t_star {} xi {} windows {}", cfg.delta_star, cfg.t_star, cfg.xi, cfg.windows));

        // escape-only run of Δ*
        let mut engine = EscapeEngine::new(&self.map, &part, &binding, c.three_piece_policy, self.engine_limits(c.limits.escape_n_max))?;
        engine.record_events = c.limits.record_events;
        let base = cfg.base();
        let run = engine.run(vec![OrbitInterval::new(base.0, base.1)], None);
        let w = run.total;
        let mut csv = self.csv("escape_tail.csv", &["measures relative to |Delta*|".into()], ESCAPE_TAIL_HEADER)?;
        for t in &run.tail {
            csv.row(&[
                t.n.to_string(),
                (t.active / w).to_f64().to_string(),
                (t.escaped / w).to_f64().to_string(),
                (t.aborted / w).to_f64().to_string(),
            ])?;
        }
        csv.finish()?;
        let mut log = BufWriter::new(File::create(self.path("events.log"))?);
        writeln!(log, "# config_hash={}", self.hash)?;
        writeln!(log, "{EVENTS_HEADER}")?;
        for e in &run.events {
            let v = e.event;
            let kind = match v.kind {
                ReturnKind::Essential => "essential",
                ReturnKind::Inessential => "inessential",
            };
            writeln!(log, "{} {} {} {kind} {} {} {} {}", e.a, e.b, v.time, v.crit, v.r, v.j, v.p)?;
        }
        log.flush()?;
        let data: Vec<(f64, f64)> = run.tail.iter().map(|t| (t.n as f64, (t.active / w).to_f64())).collect();
        let fit = fit_log_linear(&data, 5, 40.min(c.limits.escape_n_max));
        o.line(format!("escape tail fit {}", fmt_fit(&fit)));
        o.line(format!(
            "escape aborted {} (excluding the horizon) ledger {} events {}",
            (run.lost_measure() / w).to_f64(),
            run.ledger_error() / w.to_f64(),
            run.events.len()
        ));
        if let Some(r) = run.limit_hit {
            o.line(format!("escape run stopped: {r}"));
            o.limit_hit = true;
        }

        let engine = EscapeEngine::new(&self.map, &part, &binding, c.three_piece_policy, self.engine_limits(c.limits.n_max))?;
        let tower = build_tower(&engine, &cfg, c.limits.return_budget);
        self.write_tower(&tower, &mut o)?;
        Ok(o)
    }

    fn write_tower(&self, tower: &Tower, o: &mut StageOutcome) -> Result<()> {
        let c = &self.config;
        fs::write(self.path("tower.json"), tower.to_json()?)?;
        let mut csv = self.csv("tower.csv", &[], TOWER_HEADER)?;
        for e in &tower.elements {
            csv.row(&[
                e.id.to_string(),
                e.a.to_f64().to_string(),
                e.b.to_f64().to_string(),
                e.return_time.to_string(),
                e.generation.to_string(),
                e.escape_time.to_string(),
                e.image_error.to_string(),
            ])?;
        }
        csv.finish()?;
        let mut csv = self.csv("return_tail.csv", &["measures relative to |Delta*|".into()], RETURN_TAIL_HEADER)?;
        for t in &tower.tail {
            csv.row(&[t.n.to_string(), t.unresolved.to_string(), t.aborted.to_string()])?;
        }
        csv.finish()?;
        let (fit, pending) = return_tail_fit(tower);
        let worst = tower.elements.iter().map(|e| e.image_error).fold(0.0, f64::max);
        o.line(format!(
            "tower elements {} gcd(T) {} unresolved {} (incl. aborted {}) ledger {} worst image error {}",
            tower.elements.len(),
            tower.gcd(),
            pending,
            tower.aborted_measure() / tower.base_width().to_f64(),
            tower.ledger_error,
            worst
        ));
        o.line(format!("return tail fit {}", fmt_fit(&fit)));
        if let Some(r) = tower.limit_hit {
            o.line(format!("tower is partial: {r}"));
            o.limit_hit = true;
        }
        let mut csv = self.csv("distortion.csv", &[], DISTORTION_HEADER)?;
        if !tower.elements.is_empty() {
            let chosen = audit_elements(tower, c.stats.audit_elements, c.seed);
            match distortion_audit(&self.map, tower, &chosen, c.stats.audit_pairs, c.seed) {
                Ok(d) => {
                    for r in &d.rows {
                        csv.row(&[
                            r.id.to_string(),
                            r.return_time.to_string(),
                            r.width.to_string(),
                            r.distortion.to_string(),
                            r.min_expansion.to_string(),
                            r.contraction.to_string(),
                            r.pairs.to_string(),
                        ])?;
                    }
                    o.line(format!("distortion {} lambda_prime {} K_hat {}", d.distortion, d.lambda_prime, d.k_hat));
                }
                Err(e) => o.line(format!("distortion audit: {e}")),
            }
        }
        csv.finish()?;
        self.report("tower_report.txt", o)?;
        Ok(())
    }

    fn load_tower(&self) -> Result<Option<Tower>> {
        let p = self.path("tower.json");
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(Tower::from_json(&fs::read_to_string(p)?)?))
    }

    pub fn stats(&self, which: &[StatKind]) -> Result<StageOutcome> {
        let mut o = StageOutcome::default();
        let tower = self.load_tower()?;
        for &k in which {
            match k {
                StatKind::Acip => self.stat_acip(tower.as_ref(), &mut o)?,
                StatKind::Lyapunov => self.stat_lyapunov(&mut o)?,
                StatKind::Corr => self.stat_corr(tower.as_ref(), &mut o)?,
                StatKind::Clt => self.stat_clt(&mut o)?,
                StatKind::Symbolic => self.stat_symbolic(tower.as_ref(), &mut o)?,
            }
        }
        self.report("stats_report.txt", &o)?;
        Ok(o)
    }

    fn observable(&self) -> Result<Observable> {
        Observable::new(&self.config.stats.observable, self.config.stats.holder_exponent, &self.map)
    }

    fn stat_acip(&self, tower: Option<&Tower>, o: &mut StageOutcome) -> Result<()> {
        let s = &self.config.stats;
        let orbit = acip_orbit(&self.map, s.orbit_iterates, s.burn_in, s.acip_bins, self.config.seed)?;
        let tm = match tower {
            Some(t) if !t.elements.is_empty() => Some(acip_tower(&self.map, t, s.base_bins, s.acip_bins, s.ulam_iterations)?),
            _ => {
                o.line("acip: no tower found, tower density left empty");
                None
            }
        };
        let oracle = (self.map.name == "chebyshev").then_some(arcsine_cdf);
        let nan = f64::NAN.to_string();
        let mut csv = self.csv("acip.csv", &[format!("samples={}", orbit.samples)], ACIP_HEADER)?;
        let bw = (orbit.hi - orbit.lo) / orbit.bins() as f64;
        for i in 0..orbit.bins() {
            let (a, b) = (orbit.edge(i), orbit.edge(i + 1));
            csv.row(&[
                i.to_string(),
                a.to_string(),
                b.to_string(),
                orbit.density(i).to_string(),
                tm.as_ref().map_or(nan.clone(), |t| t.measure.density(i).to_string()),
                oracle.map_or(nan.clone(), |f| ((f(b) - f(a)) / bw).to_string()),
            ])?;
        }
        csv.finish()?;
        if let Some(f) = oracle {
            o.line(format!("acip orbit L1 to oracle {}", orbit.l1_to_cdf(f)));
        }
        if let Some(t) = &tm {
            o.line(format!(
                "acip tower L1 to orbit {} covered {} normalization {} converged {} iterations {}",
                t.measure.l1(&orbit)?,
                t.covered,
                t.normalization,
                t.converged,
                t.iterations
            ));
        }
        Ok(())
    }

    fn stat_lyapunov(&self, o: &mut StageOutcome) -> Result<()> {
        let s = &self.config.stats;
        let l = lyapunov(&self.map, s.orbit_iterates, s.burn_in, self.config.seed)?;
        let mut csv = self.csv("lyapunov.csv", &[], LYAPUNOV_HEADER)?;
        csv.row(&[l.value.to_string(), l.std_err.to_string(), l.samples.to_string(), l.skipped.to_string()])?;
        csv.finish()?;
        o.line(format!("lyapunov {} +- {}", l.value, l.std_err));
        Ok(())
    }

    fn stat_corr(&self, tower: Option<&Tower>, o: &mut StageOutcome) -> Result<()> {
        let s = &self.config.stats;
        let phi = self.observable()?;
        let power = tower.map(|t| t.gcd()).filter(|&g| g > 1).unwrap_or(1);
        if power > 1 {
            o.line(format!("gcd of return times is {power}: correlations are for f^{power}"));
        }
        let c = correlation(&self.map, &phi, &phi, s.corr_lags, s.corr_samples, power, self.config.seed)?;
        let mut csv = self.csv(
            "correlation.csv",
            &[format!("observable={} power={power}", s.observable), format!("fit {}", fmt_fit(&c.fit))],
            CORRELATION_HEADER,
        )?;
        for n in 0..c.c.len() {
            csv.row(&[n.to_string(), c.c[n].to_string(), c.signed[n].to_string(), c.se[n].to_string(), c.floor.to_string()])?;
        }
        csv.finish()?;
        o.line(format!(
            "correlation floor {} below 10x floor at {:?} fit {}",
            c.floor,
            c.below_floor_at,
            fmt_fit(&c.fit)
        ));
        Ok(())
    }

    fn stat_clt(&self, o: &mut StageOutcome) -> Result<()> {
        let s = &self.config.stats;
        let phi = self.observable()?;
        let mut orbit = Orbit::new(&self.map, self.config.seed, u64::MAX);
        orbit.burn(s.burn_in);
        let mut sum = 0.0;
        for _ in 0..s.orbit_iterates {
            sum += phi.eval(orbit.x);
            orbit.step();
        }
        let mean = sum / s.orbit_iterates as f64;
        let r = clt_test(&self.map, &phi, mean, s.clt_n, s.clt_trials, s.burn_in, self.config.seed)?;
        let c = correlation(&self.map, &phi, &phi, s.corr_lags, s.corr_samples, 1, self.config.seed)?;
        let gk = c.green_kubo();
        let mut csv = self.csv(
            "clt.csv",
            &[format!(
                "observable={} mean={mean} sigma={} ks={} green_kubo={gk} degenerate={}",
                s.observable, r.sigma, r.ks, r.degenerate
            )],
            CLT_HEADER,
        )?;
        for (i, v) in r.sums.iter().enumerate() {
            csv.row(&[i.to_string(), v.to_string()])?;
        }
        csv.finish()?;
        if r.degenerate {
            o.line("clt: sigma is zero, the observable looks like a coboundary");
        }
        o.line(format!("clt sigma^2 {} green-kubo {} ks {}", r.sigma * r.sigma, gk, r.ks));
        Ok(())
    }

    fn stat_symbolic(&self, tower: Option<&Tower>, o: &mut StageOutcome) -> Result<()> {
        let s = &self.config.stats;
        let seed = self.config.seed;
        let tower = tower
            .filter(|t| !t.elements.is_empty())
            .ok_or_else(|| Error::Config("symbolic checks need tower.json; run the tower stage first".into()))?;
        let chosen = audit_elements(tower, s.audit_elements, seed);
        let d = distortion_audit(&self.map, tower, &chosen, s.audit_pairs, seed)?;
        let sigma = s.sigma.unwrap_or(0.5 * (1.0 + 1.0 / d.lambda_prime));
        let phi = self.observable()?;
        let mut csv = self.csv("symbolic_checks.csv", &[format!("lambda_prime={}", d.lambda_prime)], SYMBOLIC_HEADER)?;
        let mut row = |c: &SymbolicCheck, budget: usize, csv: &mut Csv| -> Result<()> {
            o.line(format!("{} pairs/element {budget}: constant {} flagged {} cylinder violations {}", c.name, c.constant, c.flagged, c.cylinder_violations));
            csv.row(&[
                c.name.clone(),
                budget.to_string(),
                c.sigma.to_string(),
                c.constant.to_string(),
                c.pairs.to_string(),
                c.flagged.to_string(),
                c.cylinder_violations.to_string(),
            ])
        };
        for budget in [s.audit_pairs, 2 * s.audit_pairs] {
            let a = symbolic_distortion_check(&self.map, tower, d.lambda_prime, sigma, s.audit_elements, budget, seed)?;
            row(&a, budget, &mut csv)?;
            let b = holder_lift_check(&self.map, tower, &phi, d.lambda_prime, sigma, s.audit_elements, budget, seed)?;
            row(&b, budget, &mut csv)?;
        }
        csv.finish()?;
        Ok(())
    }
}

/// Log-linear fit of the not-yet-returned mass (unresolved plus aborted)
/// from n = 5 up to the last iterate before a limit stopped the build, and
/// that mass at the end of the build.
pub fn return_tail_fit(tower: &Tower) -> (Option<LogLinearFit>, f64) {
    let data: Vec<(f64, f64)> = tower.tail.iter().map(|t| (t.n as f64, t.unresolved + t.aborted)).collect();
    let mut last = tower.tail.iter().filter(|t| t.unresolved + t.aborted > 0.0).map(|t| t.n).next_back().unwrap_or(0);
    if let Some(reason) = tower.limit_hit {
        let stop = tower.aborted.iter().filter(|a| a.reason == reason).map(|a| a.time).min().unwrap_or(last + 1);
        last = last.min(stop.saturating_sub(1));
    }
    let pending = tower.tail.last().map(|t| t.unresolved + t.aborted).unwrap_or(1.0);
    (fit_log_linear(&data, 5, last), pending)
}

/// Reads the header of a CSV written by the pipeline, skipping `#` lines.
pub fn read_header(path: &Path) -> Result<String> {
    let s = fs::read_to_string(path)?;
    s.lines()
        .find(|l| !l.starts_with('#'))
        .map(str::to_string)
        .ok_or_else(|| Error::Config(format!("{} has no header", path.display())))
}

