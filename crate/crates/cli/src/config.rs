//! Flag/config-file merging and conversion into solver inputs.
//!
//! Config files are flat `key = value` lines whose keys are the long flag
//! names; `#` starts a comment. Flags given on the command line win.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hybrid_sl::benchmarks::{self, BenchmarkSpec};
use hybrid_sl::{Grid, Method, SchemeParams, SolverConfig, StoppingNorm};

pub const KEYS: [&str; 17] = [
    "benchmark",
    "solver",
    "methods",
    "eps",
    "norm",
    "nit",
    "warmup",
    "dt",
    "nodes",
    "bounds",
    "nu",
    "x0",
    "q0",
    "tf",
    "out",
    "threads",
    "max-iters",
];

/// Raw settings keyed by long flag name.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn set(&mut self, key: &str, value: Option<String>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|s| s.trim().parse::<T>().map_err(|e| anyhow!("--{key} {s}: {e}")))
            .transpose()
    }

    fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|s| {
                s.split(',')
                    .map(|p| p.trim().parse::<T>().map_err(|e| anyhow!("--{key} {s}: {e}")))
                    .collect()
            })
            .transpose()
    }

    /// Fills keys not given on the command line from the file named by
    /// `--benchmark` when it is a path rather than a benchmark name.
    pub fn resolve_file(mut self) -> Result<Settings> {
        let Some(target) = self.get("benchmark").map(str::to_string) else {
            bail!("--benchmark is required (one of {})", benchmarks::NAMES.join(", "));
        };
        if benchmarks::NAMES.contains(&target.as_str()) {
            return Ok(self);
        }
        let path = Path::new(&target);
        if !path.is_file() {
            bail!(
                "unknown benchmark `{target}` (expected one of {} or a config file)",
                benchmarks::NAMES.join(", ")
            );
        }
        let file = read_config(path)?;
        self.values.remove("benchmark");
        for (k, v) in file.values {
            self.values.entry(k).or_insert(v);
        }
        match self.get("benchmark") {
            Some(name) if benchmarks::NAMES.contains(&name) => Ok(self),
            Some(name) => bail!("{}: unknown benchmark `{name}`", path.display()),
            None => bail!("{}: missing `benchmark = <name>`", path.display()),
        }
    }
}

pub fn read_config(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

pub fn parse_config(text: &str) -> Result<Settings> {
    let mut s = Settings::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            bail!("line {}: unknown key `{k}`", n + 1);
        }
        if s.values.insert(k.to_string(), v.trim().to_string()).is_some() {
            bail!("line {}: duplicate key `{k}`", n + 1);
        }
    }
    Ok(s)
}

/// Everything a solve and its trajectory need.
pub struct RunConfig {
    pub spec: BenchmarkSpec,
    pub grid: Grid,
    pub params: SchemeParams,
    pub solver: SolverConfig,
    pub x0: Vec<f64>,
    /// 0-based.
    pub q0: usize,
    pub t_f: f64,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

fn parse_bounds(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|axis| {
            let (lo, hi) = axis
                .split_once(':')
                .ok_or_else(|| anyhow!("--bounds {s}: expected `low:high` per axis"))?;
            Ok((lo.trim().parse()?, hi.trim().parse()?))
        })
        .collect()
}

impl RunConfig {
    /// `method` and `eps` are passed separately so `compare` can reuse one
    /// discretization for several solves.
    pub fn build(s: &Settings, method: Method, eps: f64) -> Result<RunConfig> {
        let name = s.get("benchmark").ok_or_else(|| anyhow!("--benchmark is required"))?;
        let spec = benchmarks::by_name(name)?;
        let d = spec.problem.dim();

        let dt = s.parsed::<f64>("dt")?.unwrap_or(spec.grid.dt);
        let bounds = match s.get("bounds") {
            Some(b) => parse_bounds(b)?,
            None => spec.grid.bounds.clone(),
        };
        if bounds.len() != d {
            bail!("--bounds: expected {d} axes, got {}", bounds.len());
        }
        let nodes = match s.list::<usize>("nodes")? {
            Some(n) if n.len() == 1 => vec![n[0]; d],
            Some(n) if n.len() == d => n,
            Some(n) => bail!("--nodes: expected 1 or {d} values, got {}", n.len()),
            None => match spec.speed_bound {
                Some(fmax) => bounds
                    .iter()
                    .map(|&(lo, hi)| Grid::nodes_for_spacing(lo, hi, dt * fmax))
                    .collect(),
                None => spec.grid.nodes.clone(),
            },
        };
        let nu = s.parsed::<usize>("nu")?.unwrap_or(spec.grid.control_samples);
        let grid = Grid::uniform(&bounds, &nodes, spec.problem.modes())?;
        let params = SchemeParams::new(&spec.problem, dt, nu)?;

        let mut solver = SolverConfig::new(method, eps)
            .with_norm(s.parsed::<StoppingNorm>("norm")?.unwrap_or(spec.stopping_norm))
            .with_nit(s.parsed::<usize>("nit")?.unwrap_or(spec.n_it))
            .with_warmup(s.parsed::<usize>("warmup")?.unwrap_or(spec.warmup_vi));
        if let Some(n) = s.parsed::<usize>("max-iters")? {
            solver = solver.with_max_iterations(n);
        }
        solver.validate()?;

        let x0 = s.list::<f64>("x0")?.unwrap_or_else(|| spec.trajectory.x0.clone());
        if x0.len() != d {
            bail!("--x0: expected {d} components, got {}", x0.len());
        }
        let q0 = match s.parsed::<usize>("q0")? {
            Some(q) if (1..=spec.problem.modes()).contains(&q) => q - 1,
            Some(q) => bail!("--q0 {q}: modes are numbered 1..={}", spec.problem.modes()),
            None => spec.trajectory.q0,
        };
        let t_f = s.parsed::<f64>("tf")?.unwrap_or(spec.trajectory.t_f);
        let out = PathBuf::from(s.get("out").unwrap_or("out"));
        let threads = s.parsed::<usize>("threads")?;
        Ok(RunConfig {
            spec,
            grid,
            params,
            solver,
            x0,
            q0,
            t_f,
            out,
            threads,
        })
    }
}

pub fn parse_methods(s: &Settings) -> Result<Vec<Method>> {
    let methods = s
        .list::<Method>("methods")?
        .unwrap_or_else(|| vec![Method::Vi, Method::Pi]);
    if methods.len() < 2 {
        bail!("--methods needs at least two solvers");
    }
    Ok(methods)
}

pub fn parse_eps_list(s: &Settings) -> Result<Vec<f64>> {
    let eps = s.list::<f64>("eps")?.unwrap_or_else(|| vec![1e-3]);
    if eps.is_empty() {
        bail!("--eps needs at least one tolerance");
    }
    Ok(eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_is_parsed() {
        let s = parse_config("# demo\nbenchmark = weak_strong\neps=1e-6 # tight\n\nnodes = 50\n").unwrap();
        assert_eq!(s.get("benchmark"), Some("weak_strong"));
        assert_eq!(s.get("eps"), Some("1e-6"));
        assert_eq!(s.get("nodes"), Some("50"));
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        assert!(parse_config("colour = red\n").is_err());
        assert!(parse_config("eps = 1\neps = 2\n").is_err());
        assert!(parse_config("eps\n").is_err());
    }

    #[test]
    fn overrides_reach_the_grid() {
        let mut s = Settings::default();
        s.set("benchmark", Some("chemotherapy".into()));
        s.set("nodes", Some("20".into()));
        s.set("bounds", Some("0:1,0:3".into()));
        s.set("q0", Some("2".into()));
        let rc = RunConfig::build(&s, Method::Vi, 1e-3).unwrap();
        assert_eq!(rc.grid.nodes_per_axis(1), 20);
        assert_eq!(rc.grid.bounds(1), (0.0, 3.0));
        assert_eq!(rc.q0, 1);
    }

    #[test]
    fn dt_refines_the_spacing_rule() {
        let mut s = Settings::default();
        s.set("benchmark", Some("weak_strong".into()));
        let coarse = RunConfig::build(&s, Method::Vi, 1e-3).unwrap();
        s.set("dt", Some("0.00335".into()));
        let fine = RunConfig::build(&s, Method::Vi, 1e-3).unwrap();
        assert!(fine.grid.nodes_per_axis(0) > coarse.grid.nodes_per_axis(0));
    }

    #[test]
    fn bad_values_name_their_flag() {
        let mut s = Settings::default();
        s.set("benchmark", Some("weak_strong".into()));
        s.set("q0", Some("3".into()));
        let e = RunConfig::build(&s, Method::Vi, 1e-3).err().unwrap();
        assert!(e.to_string().contains("--q0"));
    }
}
