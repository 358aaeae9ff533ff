//! Factorial experiment runner.
//!
//! Every `(n, ε, σ, replication)` unit draws one dataset and fits every
//! method on it, so methods are compared on common data and common
//! evaluation rollouts. Units run on a bounded worker pool; results are
//! collected in unit order, so outputs do not depend on scheduling.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pbl_core::dtr::backward_induct;
use pbl_core::envs::{Env, EnvSpec};
use pbl_core::evaluation::{regret, RegretReport, RegretSummary};
use pbl_core::numerics::RandomSeed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Characters of the digest used for the output directory name.
pub const DIGEST_DIR_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub n: usize,
    pub epsilon: usize,
    pub sigma: usize,
}

/// Seed of one replication of one cell.
pub fn unit_seed(base: u64, cell: CellIndex, replication: usize) -> RandomSeed {
    RandomSeed(base).derive(&[cell.n as u64, cell.epsilon as u64, cell.sigma as u64, replication as u64])
}

pub fn cell_name(n: usize, epsilon: f64, sigma: f64) -> String {
    format!("n{n}_eps{epsilon}_sigma{sigma}")
}

fn cell_env(base: &EnvSpec, epsilon: f64, sigma: f64) -> EnvSpec {
    EnvSpec {
        epsilon,
        noise_std: sigma,
        ..base.clone()
    }
}

/// Regret of every method on one replication of one cell.
pub fn run_unit(config: &ExperimentConfig, cell: CellIndex, replication: usize) -> Result<Vec<f64>> {
    let n = config.n[cell.n];
    let spec = cell_env(&config.env, config.epsilon[cell.epsilon], config.sigma[cell.sigma]);
    let env = Env::new(spec)?;
    let seed = unit_seed(config.seed, cell, replication);
    let data = env.gen_dataset(n, seed.derive(&[0]))?;
    config
        .methods
        .iter()
        .map(|m| {
            let policy = backward_induct(&data, &m.learner, seed.derive(&[1]))
                .with_context(|| format!("fitting {} (n = {n}, replication {replication})", m.label()))?;
            Ok(regret(&policy, &env, config.mc_states, seed.derive(&[2]))?.mean)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub cells: Vec<RegretSummary>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub reports: Vec<RegretReport>,
    pub summary: ExperimentSummary,
}

/// Error raised when results for this digest already exist.
#[derive(Debug, thiserror::Error)]
#[error("results already exist at {0}; pass --overwrite to replace them")]
pub struct AlreadyExists(pub PathBuf);

fn prepare_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.join("summary.json").exists() && !overwrite {
        return Err(AlreadyExists(dir.to_path_buf()).into());
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").with_context(|| format!("{} is not writable", dir.display()))?;
    fs::remove_file(&probe)?;
    Ok(())
}

/// Runs the full grid and writes `<out>/<digest>/<method>/<cell>.csv` plus
/// `<out>/<digest>/summary.json`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path, workers: usize, overwrite: bool) -> Result<ExperimentOutput> {
    config.validate()?;
    let digest = config.digest();
    let dir = out.join(&digest[..DIGEST_DIR_LEN]);
    prepare_dir(&dir, overwrite)?;

    let mut units = Vec::new();
    for ni in 0..config.n.len() {
        for ei in 0..config.epsilon.len() {
            for si in 0..config.sigma.len() {
                for r in 0..config.replications {
                    units.push((
                        CellIndex {
                            n: ni,
                            epsilon: ei,
                            sigma: si,
                        },
                        r,
                    ));
                }
            }
        }
    }
    log::info!("running {} units on {} workers into {}", units.len(), workers, dir.display());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let results: Vec<Result<Vec<f64>>> =
        pool.install(|| units.par_iter().map(|&(cell, r)| run_unit(config, cell, r)).collect());

    let per_cell = config.replications;
    let mut reports = Vec::new();
    for (chunk, cell_units) in results.chunks(per_cell).zip(units.chunks(per_cell)) {
        let cell = cell_units[0].0;
        let regrets: Vec<Vec<f64>> = chunk
            .iter()
            .map(|r| r.as_ref().cloned().map_err(|e| anyhow::anyhow!("{e:#}")))
            .collect::<Result<_>>()?;
        for (j, m) in config.methods.iter().enumerate() {
            let (param, value) = m.param();
            reports.push(RegretReport {
                method: m.label(),
                config_digest: digest.clone(),
                env: config.env.kind.label().to_string(),
                n: config.n[cell.n],
                epsilon: config.epsilon[cell.epsilon],
                sigma: config.sigma[cell.sigma],
                param: param.to_string(),
                param_value: value,
                regrets: regrets.iter().map(|v| v[j]).collect(),
            });
        }
    }

    for rep in &reports {
        let mdir = dir.join(&rep.method);
        fs::create_dir_all(&mdir)?;
        let path = mdir.join(format!("{}.csv", cell_name(rep.n, rep.epsilon, rep.sigma)));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf)?;
        fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    let summary = ExperimentSummary {
        config_digest: digest,
        config: ExperimentConfig {
            out: None,
            ..config.clone()
        },
        cells: reports.iter().map(RegretReport::summary).collect(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(ExperimentOutput { dir, reports, summary })
}

pub const REPORT_HEADER: &str = "config_digest,method,env,n,epsilon,sigma,param,param_value,replications,mean,se";

/// Long-format table of every `summary.json` under `root`, sorted by path.
pub fn collect_report(root: &Path) -> Result<String> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("reading {}", d.display()))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|f| f == "summary.json") {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for f in files {
        let s: ExperimentSummary =
            serde_json::from_str(&fs::read_to_string(&f)?).with_context(|| format!("parsing {}", f.display()))?;
        for c in &s.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                c.config_digest,
                c.method,
                c.env,
                c.n,
                pbl_core::data::fmt_real(c.epsilon),
                pbl_core::data::fmt_real(c.sigma),
                c.param,
                pbl_core::evaluation::param_cell(&c.param, c.param_value),
                c.replications,
                pbl_core::data::fmt_real(c.mean),
                c.se.map(pbl_core::data::fmt_real).unwrap_or_default()
            ));
        }
    }
    Ok(out)
}
