//! Scenario-driven command-line front end: TOML scenario in, CSV curves out.
//!
//! Every output starts with `#`-prefixed metadata lines (tool version,
//! scenario hash, grids, seed) so runs are self-describing. Worker threads
//! can be capped with the `RAYON_NUM_THREADS` environment variable.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::bound::{bound_curve, default_betas, Scenario};
use crate::error::{Error, Result};
use crate::fbl::ChannelParams;
use crate::optimize::{sweep, SearchSpace};
use crate::protocols::{ProtocolKind, ProtocolParams};
use crate::sim::mc_estimate;

/// Latency-power trade-off curves for downlink broadcast framing.
#[derive(Debug, Parser)]
#[command(name = "dlframe", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Genie,
    Fixed,
    Variable,
}

impl From<ProtocolArg> for ProtocolKind {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Genie => ProtocolKind::Genie,
            ProtocolArg::Fixed => ProtocolKind::Fixed,
            ProtocolArg::Variable => ProtocolKind::Variable,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the code-length approximation k -> n_code(k).
    FblTable {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Largest payload in bits.
        #[arg(long, default_value_t = 4000)]
        k_max: u64,
        /// Payload step in bits.
        #[arg(long, default_value_t = 50)]
        step: u64,
        /// Output CSV path (stdout when absent).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate the genie-aided lower bound over the beta grid.
    Bound {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sweep protocol parameters and report the trade-off curve with its hull.
    Tradeoff {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        /// Split the error budget equally instead of optimizing per layer.
        #[arg(long)]
        no_eps_opt: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo validation of the analytic evaluators.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        /// Grouping caps, one per size class, semicolon-separated (default: 1 each).
        #[arg(long)]
        v: Option<String>,
        /// Users per user group (default: K).
        #[arg(long)]
        w: Option<u32>,
        /// Per-layer error budgets (default: equal split of the scenario eps).
        #[arg(long)]
        eps1: Option<f64>,
        #[arg(long)]
        eps2: Option<f64>,
        #[arg(long)]
        eps3: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        frames: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// On-disk scenario document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub snr_db: f64,
    pub eps: f64,
    pub k: u32,
    pub q: f64,
    pub alphas: Vec<u64>,
    /// Size probabilities; defaults to [1.0] for a single size class.
    pub ps: Option<Vec<f64>>,
    /// Optional beta-grid override.
    pub betas: Option<Vec<f64>>,
    /// Optional grouping-cap grid override (one vector per candidate).
    pub v_grid: Option<Vec<Vec<u32>>>,
    /// Optional user-group width grid override.
    pub w_grid: Option<Vec<u32>>,
}

/// Loaded scenario plus its grid overrides and content hash.
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub betas: Vec<f64>,
    pub v_grid: Option<Vec<Vec<u32>>>,
    pub w_grid: Option<Vec<u32>>,
    pub hash: u64,
}

/// FNV-1a over the raw scenario bytes; stamped into every output header.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
    let file: ScenarioFile = toml::from_str(&raw)
        .map_err(|e| Error::Scenario(format!("cannot parse {}: {e}", path.display())))?;
    let ps = match file.ps {
        Some(ps) => ps,
        None if file.alphas.len() == 1 => vec![1.0],
        None => {
            return Err(Error::Scenario(
                "ps is required when more than one message size is given".into(),
            ))
        }
    };
    let channel = ChannelParams::from_db(file.snr_db)
        .map_err(|e| Error::Scenario(e.to_string()))?;
    let scenario = Scenario::new(channel, file.eps, file.k, file.q, file.alphas, ps)?;
    let betas = match file.betas {
        Some(b) if b.is_empty() => {
            return Err(Error::Scenario("betas override must be nonempty".into()))
        }
        Some(b) => {
            if b.iter().any(|&x| x <= 0.0) || b.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Scenario(
                    "betas must be positive and strictly increasing".into(),
                ));
            }
            b
        }
        None => default_betas(),
    };
    Ok(LoadedScenario {
        scenario,
        betas,
        v_grid: file.v_grid,
        w_grid: file.w_grid,
        hash: fnv1a64(raw.as_bytes()),
    })
}

fn search_space(loaded: &LoadedScenario) -> SearchSpace {
    let mut space = SearchSpace::default_for(&loaded.scenario);
    if let Some(v) = &loaded.v_grid {
        space.v_candidates = v.clone();
    }
    if let Some(w) = &loaded.w_grid {
        space.w_candidates = w.clone();
    }
    space
}

fn header(loaded: &LoadedScenario, extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# dlframe {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# scenario_hash={:016x}", loaded.hash);
    for (k, v) in extra {
        let _ = writeln!(s, "# {k}={v}");
    }
    s
}

fn join<T: std::fmt::Display>(xs: &[T], sep: &str) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

fn emit(output: Option<&Path>, content: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn parse_v(spec: Option<&str>, classes: usize) -> Result<Vec<u32>> {
    match spec {
        None => Ok(vec![1; classes]),
        Some(s) => s
            .split(';')
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|e| Error::Params(format!("bad grouping cap {t:?}: {e}")))
            })
            .collect(),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FblTable { scenario, k_max, step, output } => {
            let loaded = load_scenario(&scenario)?;
            if step == 0 || k_max == 0 {
                return Err(Error::Scenario("k_max and step must be positive".into()));
            }
            let ctx = loaded.scenario.fbl_context();
            let mut s = header(&loaded, &[("k_max", k_max.to_string()), ("step", step.to_string())]);
            s.push_str("k,n_code\n");
            let mut k = step.min(k_max);
            loop {
                let _ = writeln!(s, "{k},{}", ctx.n_code(k as f64));
                if k >= k_max {
                    break;
                }
                k = (k + step).min(k_max);
            }
            emit(output.as_deref(), &s)
        }
        Command::Bound { scenario, output } => {
            let loaded = load_scenario(&scenario)?;
            let curve = bound_curve(&loaded.betas, &loaded.scenario)?;
            let mut s = header(&loaded, &[("betas", join(&loaded.betas, ";"))]);
            s.push_str("row,beta,value,et,ep1\n");
            for p in &curve.points {
                let _ = writeln!(s, "bound,{},{},,", p.beta, p.value);
            }
            for &(t, p) in &curve.envelope {
                let _ = writeln!(s, "envelope,,,{t},{p}");
            }
            emit(output.as_deref(), &s)
        }
        Command::Tradeoff { scenario, protocol, no_eps_opt, output } => {
            let loaded = load_scenario(&scenario)?;
            let kind: ProtocolKind = protocol.into();
            let space = search_space(&loaded);
            let curve = sweep(&loaded.scenario, kind, &loaded.betas, &space, !no_eps_opt)?;
            let mut s = header(
                &loaded,
                &[
                    ("protocol", kind.name().to_string()),
                    ("eps_opt", (!no_eps_opt).to_string()),
                    ("betas", join(&loaded.betas, ";")),
                    (
                        "v_grid",
                        space
                            .v_candidates
                            .iter()
                            .map(|v| join(v, ";"))
                            .collect::<Vec<_>>()
                            .join("|"),
                    ),
                    ("w_grid", join(&space.w_candidates, ";")),
                ],
            );
            s.push_str("beta,ET,EP1,kind,V,W,eps1,eps2,eps3,on_hull\n");
            for (i, p) in curve.points.iter().enumerate() {
                let on_hull = curve.hull.contains(&i);
                let w = p.params.w.map(|w| w.to_string()).unwrap_or_default();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    p.beta,
                    p.et,
                    p.ep1,
                    p.params.kind.name(),
                    join(&p.params.v, ";"),
                    w,
                    p.params.eps_layers[0],
                    p.params.eps_layers[1],
                    p.params.eps_layers[2],
                    on_hull
                );
            }
            emit(output.as_deref(), &s)
        }
        Command::Validate {
            scenario,
            protocol,
            v,
            w,
            eps1,
            eps2,
            eps3,
            frames,
            seed,
            output,
        } => {
            let loaded = load_scenario(&scenario)?;
            let sc = &loaded.scenario;
            let kind: ProtocolKind = protocol.into();
            let v = parse_v(v.as_deref(), sc.num_classes())?;
            let eps_layers = match kind {
                ProtocolKind::Genie => [sc.eps; 3],
                _ => {
                    let eq = 1.0 - (1.0 - sc.eps).powf(1.0 / 3.0);
                    [eps1.unwrap_or(eq), eps2.unwrap_or(eq), eps3.unwrap_or(eq)]
                }
            };
            let params = ProtocolParams {
                kind,
                v,
                w: match kind {
                    ProtocolKind::Genie => None,
                    _ => Some(w.unwrap_or(sc.k)),
                },
                eps_layers,
            };
            let report = mc_estimate(sc, &params, frames, seed)?;
            let mut s = header(
                &loaded,
                &[
                    ("protocol", kind.name().to_string()),
                    ("v", join(&params.v, ";")),
                    ("w", params.w.map(|w| w.to_string()).unwrap_or_default()),
                    ("frames", frames.to_string()),
                    ("seed", seed.to_string()),
                ],
            );
            s.push_str(
                "n_frames,seed,ET_hat,ET_se,EP1_hat,EP1_se,err_rate_active,active_users,worst_case_charges,infinite_ci\n",
            );
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                report.n_frames,
                report.seed,
                report.et_hat,
                report.et_se,
                report.ep1_hat,
                report.ep1_se,
                report.err_rate_active,
                report.active_users,
                report.worst_case_charges,
                report.infinite_ci
            );
            eprintln!(
                "validated {} protocol over {} frames (seed {}): ET = {:.3} ± {:.3}, EP1 = {:.3} ± {:.3}, active error rate {:.3e}",
                kind.name(),
                report.n_frames,
                report.seed,
                report.et_hat,
                report.et_se,
                report.ep1_hat,
                report.ep1_se,
                report.err_rate_active
            );
            emit(output.as_deref(), &s)
        }
    }
}

/// Exit code mapping: 2 for invalid scenarios, 3 for infeasible parameter or
/// budget combinations, 1 for anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Scenario(_) => 2,
        Error::Params(_) => 3,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        // published FNV-1a test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn scenario_ps_defaults_for_single_class() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, "snr_db = 0.0\neps = 1e-4\nk = 4\nq = 0.5\nalphas = [100]\n")
            .unwrap();
        let loaded = load_scenario(&path).unwrap();
        assert_eq!(loaded.scenario.ps, vec![1.0]);
        assert_eq!(loaded.scenario.channel.snr, 1.0);
        assert_eq!(loaded.betas.len(), 61);
    }

    #[test]
    fn scenario_requires_ps_for_two_classes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(
            &path,
            "snr_db = 0.0\neps = 1e-4\nk = 4\nq = 0.5\nalphas = [50, 150]\n",
        )
        .unwrap();
        assert!(matches!(load_scenario(&path), Err(Error::Scenario(_))));
    }

    #[test]
    fn scenario_rejects_unknown_keys_and_bad_grids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(
            &path,
            "snr_db = 0.0\neps = 1e-4\nk = 4\nq = 0.5\nalphas = [100]\nbogus = 1\n",
        )
        .unwrap();
        assert!(matches!(load_scenario(&path), Err(Error::Scenario(_))));
        std::fs::write(
            &path,
            "snr_db = 0.0\neps = 1e-4\nk = 4\nq = 0.5\nalphas = [100]\nbetas = [2.0, 1.0]\n",
        )
        .unwrap();
        assert!(matches!(load_scenario(&path), Err(Error::Scenario(_))));
    }

    #[test]
    fn grouping_cap_parsing() {
        assert_eq!(parse_v(None, 2).unwrap(), vec![1, 1]);
        assert_eq!(parse_v(Some("2;4"), 2).unwrap(), vec![2, 4]);
        assert!(parse_v(Some("2;x"), 2).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Scenario("x".into())), 2);
        assert_eq!(exit_code(&Error::Params("x".into())), 3);
        assert_eq!(exit_code(&Error::Domain("x".into())), 1);
    }
}
