//! Scenario files, experiment presets and CSV output.
//!
//! Scenario files are TOML, `version = 1`:
//!
//! ```toml
//! version = 1
//!
//! [scenario]
//! n_terminals = 2
//! lambda = 0.5            # or: lambdas = [0.3, 0.5]
//! policy = "whittle-1buf"
//! horizon = 1000000
//! warmup = 10000          # optional
//! seed = 1
//! replications = 5
//!
//! [ipra]                  # optional
//! p = 0.3
//! index_threshold = 12.0
//! t_s = 100
//! t_c = 100
//! delta = 1
//!
//! [mdp]                   # optional; grid of the joint solver
//! a_max = 24
//! d_max = 32
//! tol = 1e-6
//! max_iters = 1000000
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, FieldError, HarnessError, SimError};
use crate::ipra::{self, IpraParams, SearchBudget};
use crate::mdp::TruncationSpec;
use crate::policy::PolicyKind;
use crate::sim::{self, joint_truncation, Scenario, SimReport};
use crate::whittle::{whittle, WhittleIndex};

pub const CONFIG_VERSION: u32 = 1;

/// Largest terminal count a preset runs without `allow_large_n = true`.
pub const LARGE_N_CAP: usize = 50;

pub const PRESET_NAMES: [&str; 4] = ["fig3-symmetric", "fig3-hetero", "fig4-largeN", "fig5-index-compare"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub version: u32,
    pub scenario: ScenarioSection,
    pub ipra: Option<IpraSection>,
    pub mdp: Option<MdpSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub n_terminals: Option<usize>,
    pub lambda: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub policy: String,
    pub horizon: Option<u64>,
    pub warmup: Option<u64>,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpraSection {
    pub p: Option<f64>,
    pub index_threshold: Option<f64>,
    pub t_s: Option<u64>,
    pub t_c: Option<u64>,
    pub delta: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSection {
    pub a_max: Option<u64>,
    pub d_max: Option<u64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
}

impl ConfigFile {
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let mut errors = Vec::new();
        if self.version != CONFIG_VERSION {
            errors.push(FieldError::new(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        let sc = &self.scenario;
        let policy = sc.policy.parse::<PolicyKind>().unwrap_or_else(|e| {
            errors.push(FieldError::new("scenario.policy", e));
            PolicyKind::WhittleOneBuffer
        });
        let lambdas = match (&sc.lambda, &sc.lambdas) {
            (Some(l), None) => match sc.n_terminals {
                Some(n) => vec![*l; n],
                None => {
                    errors.push(FieldError::new("scenario.n_terminals", "required with a uniform lambda"));
                    Vec::new()
                }
            },
            (None, Some(ls)) => {
                if let Some(n) = sc.n_terminals.filter(|&n| n != ls.len()) {
                    errors.push(FieldError::new(
                        "scenario.lambdas",
                        format!("{} rates given for {n} terminals", ls.len()),
                    ));
                }
                ls.clone()
            }
            (Some(_), Some(_)) => {
                errors.push(FieldError::new("scenario.lambda", "give either lambda or lambdas, not both"));
                Vec::new()
            }
            (None, None) => {
                errors.push(FieldError::new("scenario.lambda", "missing arrival rate"));
                Vec::new()
            }
        };

        let mut scenario = Scenario::heterogeneous(lambdas, policy);
        if let Some(h) = sc.horizon {
            scenario.horizon = h;
        }
        scenario.warmup = sc.warmup;
        if let Some(s) = sc.seed {
            scenario.seed = s;
        }
        if let Some(r) = sc.replications {
            scenario.replications = r;
        }
        if let Some(ip) = &self.ipra {
            let d = IpraParams::default();
            scenario.ipra = IpraParams {
                p: ip.p.unwrap_or(d.p),
                index_threshold: ip.index_threshold.unwrap_or(d.index_threshold),
                t_s: ip.t_s.unwrap_or(d.t_s),
                t_c: ip.t_c.unwrap_or(d.t_c),
                delta: ip.delta.unwrap_or(d.delta),
            };
        }
        if let Some(m) = &self.mdp {
            let d = joint_truncation(&scenario.lambdas);
            scenario.mdp = Some(TruncationSpec {
                a_max: m.a_max.unwrap_or(d.a_max),
                d_max: m.d_max.unwrap_or(d.d_max),
                tol: m.tol.unwrap_or(d.tol),
                max_iters: m.max_iters.unwrap_or(d.max_iters),
            });
        }

        if let Err(SimError::Invalid(more)) = scenario.validate() {
            errors.extend(more);
        }
        if errors.is_empty() {
            Ok(scenario)
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}

pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    file.to_scenario()
}

pub fn load_config(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// Reads and checks a scenario file. `Ok` carries the resolved scenario;
/// [`ConfigError::diagnostics`] lists the problems otherwise.
pub fn validate_config(path: &Path) -> Result<Scenario, ConfigError> {
    load_config(path)
}

/// The swept dimension of a preset.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sweep {
    /// Symmetric arrival rate.
    Lambda { n_terminals: usize, grid: Vec<f64> },
    /// Rate of terminal 1 with terminal 2 held fixed.
    FirstLambda { grid: Vec<f64>, lambda2: f64 },
    /// Terminal count; `lambda = None` uses `min(1, 2 / N)`.
    Terminals { grid: Vec<usize>, lambda: Option<f64> },
    /// Index values over a state grid, no simulation.
    Index { lambdas: Vec<f64>, a_max: u64, d_max: u64 },
}

impl Sweep {
    pub fn param_name(&self) -> &'static str {
        match self {
            Sweep::Lambda { .. } => "lambda",
            Sweep::FirstLambda { .. } => "lambda1",
            Sweep::Terminals { .. } => "n_terminals",
            Sweep::Index { .. } => "lambda",
        }
    }

    /// Swept values with the arrival rates they imply.
    pub fn points(&self) -> Vec<(f64, Vec<f64>)> {
        match self {
            Sweep::Lambda { n_terminals, grid } => grid.iter().map(|&l| (l, vec![l; *n_terminals])).collect(),
            Sweep::FirstLambda { grid, lambda2 } => grid.iter().map(|&l| (l, vec![l, *lambda2])).collect(),
            Sweep::Terminals { grid, lambda } => grid
                .iter()
                .map(|&n| {
                    let l = lambda.unwrap_or((2.0 / n as f64).min(1.0));
                    (n as f64, vec![l; n])
                })
                .collect(),
            Sweep::Index { lambdas, .. } => lambdas.iter().map(|&l| (l, vec![l])).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentPreset {
    pub name: String,
    /// Run settings shared by every sweep point; its rates are replaced.
    pub template: Scenario,
    pub sweep: Sweep,
    pub policies: Vec<PolicyKind>,
    /// Tune IPRA's `(threshold, p)` at every sweep point before running it.
    pub optimize_ipra: bool,
    pub allow_large_n: bool,
}

fn tenths() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

pub fn preset(name: &str) -> Result<ExperimentPreset, HarnessError> {
    let template = Scenario::heterogeneous(Vec::new(), PolicyKind::WhittleOneBuffer);
    let (sweep, policies) = match name {
        "fig3-symmetric" => (
            Sweep::Lambda {
                n_terminals: 2,
                grid: tenths(),
            },
            vec![PolicyKind::Mdp, PolicyKind::WhittleOneBuffer, PolicyKind::WhittleNoBuffer],
        ),
        "fig3-hetero" => (
            Sweep::FirstLambda {
                grid: tenths(),
                lambda2: 0.5,
            },
            vec![PolicyKind::Mdp, PolicyKind::WhittleOneBuffer, PolicyKind::WhittleNoBuffer],
        ),
        "fig4-largeN" => (
            Sweep::Terminals {
                grid: vec![2, 5, 10, 20, 50],
                lambda: None,
            },
            vec![
                PolicyKind::WhittleOneBuffer,
                PolicyKind::WhittleNoBuffer,
                PolicyKind::RrOne,
                PolicyKind::Ipra,
            ],
        ),
        "fig5-index-compare" => (
            Sweep::Index {
                lambdas: vec![0.3, 0.5, 0.8],
                a_max: 20,
                d_max: 40,
            },
            Vec::new(),
        ),
        other => return Err(HarnessError::UnknownPreset(other.to_string())),
    };
    Ok(ExperimentPreset {
        name: name.to_string(),
        template,
        sweep,
        policies,
        optimize_ipra: true,
        allow_large_n: false,
    })
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| HarnessError::Override(format!("{key}={value}"), e.to_string()))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse_value(key, v)).collect()
}

impl ExperimentPreset {
    /// Applies one `key=value` substitution.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), HarnessError> {
        let bad = |msg: &str| HarnessError::Override(assignment.to_string(), msg.to_string());
        let (key, value) = assignment.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        let key = key.trim();
        let t = &mut self.template;
        match (key, &mut self.sweep) {
            ("horizon", _) => t.horizon = parse_value(key, value)?,
            ("warmup", _) => t.warmup = Some(parse_value(key, value)?),
            ("seed", _) => t.seed = parse_value(key, value)?,
            ("replications", _) => t.replications = parse_value(key, value)?,
            ("policies", _) => self.policies = parse_list(key, value)?,
            ("allow_large_n", _) => self.allow_large_n = parse_value(key, value)?,
            ("ipra.optimize", _) => self.optimize_ipra = parse_value(key, value)?,
            ("ipra.p", _) => t.ipra.p = parse_value(key, value)?,
            ("ipra.index_threshold", _) => t.ipra.index_threshold = parse_value(key, value)?,
            ("ipra.t_s", _) => t.ipra.t_s = parse_value(key, value)?,
            ("ipra.t_c", _) => t.ipra.t_c = parse_value(key, value)?,
            ("ipra.delta", _) => t.ipra.delta = parse_value(key, value)?,
            ("mdp.a_max" | "mdp.d_max" | "mdp.tol" | "mdp.max_iters", _) => {
                let spec = t.mdp.get_or_insert(TruncationSpec {
                    a_max: 0,
                    d_max: 0,
                    tol: 1e-6,
                    max_iters: 1_000_000,
                });
                match key {
                    "mdp.a_max" => spec.a_max = parse_value(key, value)?,
                    "mdp.d_max" => spec.d_max = parse_value(key, value)?,
                    "mdp.tol" => spec.tol = parse_value(key, value)?,
                    _ => spec.max_iters = parse_value(key, value)?,
                }
            }
            ("lambdas" | "lambda_grid", Sweep::Lambda { grid, .. } | Sweep::FirstLambda { grid, .. }) => {
                *grid = parse_list(key, value)?
            }
            ("lambdas" | "lambda_grid", Sweep::Index { lambdas, .. }) => *lambdas = parse_list(key, value)?,
            ("lambda", Sweep::Lambda { grid, .. } | Sweep::FirstLambda { grid, .. }) => {
                *grid = vec![parse_value(key, value)?]
            }
            ("lambda", Sweep::Index { lambdas, .. }) => *lambdas = vec![parse_value(key, value)?],
            ("lambda", Sweep::Terminals { lambda, .. }) => *lambda = Some(parse_value(key, value)?),
            ("lambda2", Sweep::FirstLambda { lambda2, .. }) => *lambda2 = parse_value(key, value)?,
            ("n_terminals", Sweep::Lambda { n_terminals, .. }) => *n_terminals = parse_value(key, value)?,
            ("n_terminals" | "n_grid", Sweep::Terminals { grid, .. }) => *grid = parse_list(key, value)?,
            ("a_max", Sweep::Index { a_max, .. }) => *a_max = parse_value(key, value)?,
            ("d_max", Sweep::Index { d_max, .. }) => *d_max = parse_value(key, value)?,
            _ => return Err(bad("unknown key for this preset")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| HarnessError::Config(ConfigError::Invalid(vec![FieldError::new(self.name.clone(), msg)]));
        let points = self.sweep.points();
        if points.is_empty() {
            return Err(bad("sweep grid is empty".into()));
        }
        match &self.sweep {
            Sweep::Index { a_max, d_max, .. } => {
                if *a_max < 1 || *d_max < 1 {
                    return Err(bad("index bounds must be at least 1".into()));
                }
                for (l, _) in &points {
                    WhittleIndex::new(*l)?;
                }
                return Ok(());
            }
            Sweep::Terminals { grid, .. } => {
                if let Some(&n) = grid.iter().find(|&&n| n > LARGE_N_CAP) {
                    if !self.allow_large_n {
                        return Err(bad(format!("N = {n} exceeds {LARGE_N_CAP}; set allow_large_n=true")));
                    }
                }
            }
            _ => {}
        }
        if self.policies.is_empty() {
            return Err(bad("policy list is empty".into()));
        }
        for (_, lambdas) in points {
            for &policy in &self.policies {
                let s = self.scenario(policy, lambdas.clone());
                if s.policy == PolicyKind::Ipra && self.optimize_ipra {
                    // tuned values replace p and the threshold
                    let mut probe = s.clone();
                    probe.ipra = probe.ipra.with_search_point(1.0, 0.0);
                    probe.validate()?;
                } else {
                    s.validate()?;
                }
            }
        }
        Ok(())
    }

    fn scenario(&self, policy: PolicyKind, lambdas: Vec<f64>) -> Scenario {
        Scenario {
            lambdas,
            policy,
            ..self.template.clone()
        }
    }

    /// Full resolved configuration as TOML, for the CSV comment header.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("unserializable preset: {e}"))
    }
}

/// `name` plus `key=value` overrides.
pub fn resolve_preset(name: &str, overrides: &[String]) -> Result<ExperimentPreset, HarnessError> {
    let mut p = preset(name)?;
    for o in overrides {
        p.apply_override(o)?;
    }
    p.validate()?;
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub preset: String,
    pub swept_param: String,
    pub swept_value: f64,
    pub policy: String,
    pub mean_aoi: f64,
    pub std_error: Option<f64>,
    pub collisions: u64,
    pub idle: u64,
    pub successes: u64,
    pub overhead_fraction: Option<f64>,
}

impl ResultRow {
    pub fn from_report(preset: &str, swept_param: &str, swept_value: f64, report: &SimReport) -> Self {
        ResultRow {
            preset: preset.to_string(),
            swept_param: swept_param.to_string(),
            swept_value,
            policy: report.policy.to_string(),
            mean_aoi: report.mean_aoi,
            std_error: report.std_error,
            collisions: report.collision_count,
            idle: report.idle_count,
            successes: report.success_count,
            overhead_fraction: report.overhead_fraction,
        }
    }
}

/// One cell of an index table. `no_buffer_index` is the index of a fresh
/// packet (age 1) at the same AoI `a + d`, i.e. what a no-buffer terminal
/// would carry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub lambda: f64,
    pub a: u64,
    pub d: u64,
    pub index: f64,
    pub no_buffer_index: f64,
}

pub fn index_table(lambda: f64, a_max: u64, d_max: u64) -> Result<Vec<IndexRow>, HarnessError> {
    if a_max < 1 || d_max < 1 {
        return Err(HarnessError::Config(ConfigError::Invalid(vec![FieldError::new(
            "bounds",
            "a_max and d_max must be at least 1",
        )])));
    }
    let idx = WhittleIndex::new(lambda)?;
    let mut rows = Vec::with_capacity((a_max * (d_max + 1)) as usize);
    for a in 1..=a_max {
        for d in 0..=d_max {
            rows.push(IndexRow {
                lambda,
                a,
                d,
                index: idx.value(a as f64, d as f64),
                no_buffer_index: idx.value(1.0, (a + d - 1) as f64),
            });
        }
    }
    Ok(rows)
}

/// Ratio of the index at `(a, h)` to the index at `(a', h')`, with AoI `h`.
pub fn index_ratio(lambda: f64, num: (u64, u64), den: (u64, u64)) -> Result<f64, HarnessError> {
    let at = |(a, h): (u64, u64)| whittle(lambda, a, h.saturating_sub(a));
    Ok(at(num)? / at(den)?)
}

#[derive(Clone, Debug, PartialEq)]
pub enum PresetOutput {
    Results(Vec<ResultRow>),
    Index(Vec<IndexRow>),
}

impl PresetOutput {
    pub fn len(&self) -> usize {
        match self {
            PresetOutput::Results(r) => r.len(),
            PresetOutput::Index(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Search ranges for tuning IPRA at arrival rates `lambdas`: `p` over
/// `[0.01, 1]`, the threshold over `[0, m(1, 2N)]` at the slowest rate.
pub fn ipra_search_ranges(lambdas: &[f64]) -> Result<((f64, f64), (f64, f64)), HarnessError> {
    let lmin = lambdas.iter().copied().fold(1.0, f64::min);
    let top = whittle(lmin, 1, 2 * lambdas.len() as u64)?;
    Ok(((0.01, 1.0), (0.0, top)))
}

/// Budget used when a preset tunes IPRA.
pub fn preset_budget(template: &Scenario) -> SearchBudget {
    let horizon = template.horizon.clamp(2_000, 50_000);
    SearchBudget {
        horizon,
        warmup: sim::default_warmup(horizon),
        seed: template.seed,
        outer_iters: 8,
        inner_iters: 8,
        ..SearchBudget::default()
    }
}

/// Tunes IPRA for `scenario` and returns the scenario with the found
/// parameters.
pub fn tune_ipra(scenario: &Scenario, budget: &SearchBudget) -> Result<(Scenario, ipra::OptimizedIpra), HarnessError> {
    let (p_range, t_range) = ipra_search_ranges(&scenario.lambdas)?;
    let best = ipra::optimize_params(&scenario.lambdas, &scenario.ipra, p_range, t_range, budget)?;
    let tuned = Scenario {
        ipra: best.params,
        ..scenario.clone()
    };
    Ok((tuned, best))
}

/// Runs every `(sweep point, policy)` pair in order.
pub fn run_preset_rows(preset: &ExperimentPreset) -> Result<PresetOutput, HarnessError> {
    if let Sweep::Index { lambdas, a_max, d_max } = &preset.sweep {
        let mut rows = Vec::new();
        for &l in lambdas {
            rows.extend(index_table(l, *a_max, *d_max)?);
        }
        return Ok(PresetOutput::Index(rows));
    }
    let param = preset.sweep.param_name();
    let mut rows = Vec::new();
    for (value, lambdas) in preset.sweep.points() {
        for &policy in &preset.policies {
            let mut s = preset.scenario(policy, lambdas.clone());
            if policy == PolicyKind::Ipra && preset.optimize_ipra {
                s = tune_ipra(&s, &preset_budget(&s))?.0;
            }
            let report = sim::run_replications(&s)?;
            rows.push(ResultRow::from_report(&preset.name, param, value, &report));
        }
    }
    Ok(PresetOutput::Results(rows))
}

fn write_comment_header<W: Write>(out: &mut W, title: &str, body: &str) -> std::io::Result<()> {
    writeln!(out, "# {title}")?;
    for line in body.lines() {
        if line.is_empty() {
            writeln!(out, "#")?;
        } else {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

/// Long-format CSV with the resolved preset as a `#` comment header.
pub fn write_preset_csv<W: Write>(preset: &ExperimentPreset, output: &PresetOutput, mut out: W) -> Result<(), HarnessError> {
    write_comment_header(&mut out, &format!("preset {}", preset.name), &preset.to_toml())?;
    match output {
        PresetOutput::Results(rows) => write_rows(rows, out),
        PresetOutput::Index(rows) => write_index_rows(rows, out),
    }
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "preset",
            "swept_param",
            "swept_value",
            "policy",
            "mean_aoi",
            "std_error",
            "collisions",
            "idle",
            "successes",
            "overhead_fraction",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_index_rows<W: Write>(rows: &[IndexRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["lambda", "a", "d", "index", "no_buffer_index"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Resolves, runs and writes a preset.
pub fn run_preset<W: Write>(name: &str, overrides: &[String], out: W) -> Result<PresetOutput, HarnessError> {
    let preset = resolve_preset(name, overrides)?;
    let output = run_preset_rows(&preset)?;
    write_preset_csv(&preset, &output, out)?;
    Ok(output)
}

/// Writes a single run's report as a one-row CSV with the scenario as a
/// comment header.
pub fn write_run_csv<W: Write>(scenario: &Scenario, report: &SimReport, mut out: W) -> Result<(), HarnessError> {
    let body = toml::to_string(scenario).unwrap_or_default();
    write_comment_header(&mut out, "run", &body)?;
    let row = ResultRow::from_report("run", "", 0.0, report);
    write_rows(&[row], out)
}
