//! Result files: run directories, manifests, sweeps over the scenario grid and
//! the tidy plot-data tables derived from finished runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{
    collect_metrics, planned_qos_shortfalls, run_scheme_planned, verify_run, MetricsReport, Mission, RunError,
    SchemeId, SchemeRun,
};
use crate::scenario::{dbm_to_watts, watts_to_dbm, ScenarioConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Files every run directory must contain (besides `rounds/`).
pub const RUN_FILES: [&str; 6] = [
    "metrics.json",
    "trajectory.csv",
    "convergence.csv",
    "plan.json",
    "scenario.toml",
    "manifest.json",
];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("{dir}: missing {}", missing.join(", "))]
    Missing { dir: PathBuf, missing: Vec<String> },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Nine significant digits, `%.9g` style: fixed notation for exponents in
/// `[-4, 9)`, scientific otherwise, trailing zeros stripped.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-4..9).contains(&exp) {
        let mant = strip_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mant}e{sign}{:02}", exp.abs());
    }
    strip_zeros(&format!("{v:.*}", (8 - exp) as usize)).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Reproducibility header written at the sweep root and in every run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub schemes: Vec<SchemeId>,
    pub seeds: Vec<u64>,
    pub powers_dbm: Vec<f64>,
    /// `None` means the planned serving time.
    pub serve_slots: Vec<Option<u32>>,
    pub paired: bool,
    pub out_dir: String,
    pub tool_version: String,
    pub timestamp_unix: u64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scheme: SchemeId,
    pub seed: u64,
    pub power_dbm: f64,
    pub serve_slots: Option<u32>,
    /// Constraint violations found by the hard re-check; empty when clean.
    pub violations: Vec<String>,
    /// Users whose planned rate misses the QoS requirement.
    pub qos_shortfalls: Vec<usize>,
    pub metrics: MetricsReport,
}

pub fn slots_label(s: Option<u32>) -> String {
    s.map_or_else(|| "auto".to_string(), |n| n.to_string())
}

/// `<root>/runs/<scheme>/p<dBm>/slots_<n|auto>/seed_<s>`
pub fn run_dir(root: &Path, scheme: SchemeId, power_dbm: f64, slots: Option<u32>, seed: u64) -> PathBuf {
    root.join("runs")
        .join(scheme.name())
        .join(format!("p{}", fmt_num(power_dbm)))
        .join(format!("slots_{}", slots_label(slots)))
        .join(format!("seed_{seed}"))
}

fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let wrap = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    s.push('\n');
    fs::write(path, s).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let s = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&s).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Write one finished run. The directory is created if needed.
pub fn write_run_dir(
    dir: &Path,
    run: &SchemeRun,
    mission: &Mission,
    record: &RunRecord,
    manifest: &RunManifest,
) -> Result<(), IoError> {
    let rounds_dir = dir.join("rounds");
    fs::create_dir_all(&rounds_dir).map_err(io_err(&rounds_dir))?;
    write_json(&dir.join("metrics.json"), record)?;
    write_json(&dir.join("manifest.json"), manifest)?;
    write_json(&dir.join("plan.json"), &run.service_plan())?;
    let toml_path = dir.join("scenario.toml");
    fs::write(&toml_path, mission.cfg.to_toml_string()).map_err(io_err(&toml_path))?;

    let dt = mission.cfg.slot_duration;
    let mut poses = vec![run.start];
    poses.extend(run.flight());
    write_csv(
        &dir.join("trajectory.csv"),
        &["t", "x", "y", "h"],
        poses
            .iter()
            .enumerate()
            .map(|(t, p)| vec![fmt_num(t as f64 * dt), fmt_num(p.xy.x), fmt_num(p.xy.y), fmt_num(p.h)]),
    )?;

    let mut conv = Vec::new();
    for r in &run.rounds {
        for (i, &f) in r.bcd_history.iter().enumerate() {
            conv.push(vec![r.round.to_string(), (i + 1).to_string(), "bcd".into(), "0".into(), fmt_num(f)]);
        }
        for (stage, hists) in [("trajectory", &r.traj_histories), ("allocation", &r.alloc_histories)] {
            for (i, h) in hists.iter().enumerate() {
                for (k, &f) in h.iter().enumerate() {
                    conv.push(vec![
                        r.round.to_string(),
                        (i + 1).to_string(),
                        stage.into(),
                        k.to_string(),
                        fmt_num(f),
                    ]);
                }
            }
        }
    }
    write_csv(
        &dir.join("convergence.csv"),
        &["round", "bcd_iter", "stage", "iteration", "gamma"],
        conv,
    )?;

    for r in &run.rounds {
        let mut rows = Vec::new();
        for (k, &n) in r.members.iter().enumerate() {
            for t in 0..r.serve_slots {
                let g = r.start_slot + t;
                let pose = r.flight.poses[t];
                let plan = r.planned_positions[k][t];
                let truth = mission.truth[n][g];
                rows.push(vec![
                    n.to_string(),
                    t.to_string(),
                    g.to_string(),
                    u8::from(r.assoc.j[k][t]).to_string(),
                    fmt_num(r.alloc.b[k][t]),
                    fmt_num(r.alloc.p[k][t]),
                    fmt_num(pose.xy.x),
                    fmt_num(pose.xy.y),
                    fmt_num(pose.h),
                    fmt_num(plan.x),
                    fmt_num(plan.y),
                    fmt_num(truth.x),
                    fmt_num(truth.y),
                ]);
            }
        }
        write_csv(
            &rounds_dir.join(format!("round_{}.csv", r.round)),
            &[
                "user",
                "slot",
                "mission_slot",
                "j",
                "bandwidth_hz",
                "power_w",
                "uav_x",
                "uav_y",
                "uav_h",
                "planned_x",
                "planned_y",
                "true_x",
                "true_y",
            ],
            rows,
        )?;
    }
    Ok(())
}

/// Scheme × seed × power × serving-budget grid.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub cfg: ScenarioConfig,
    pub scenario_path: String,
    pub schemes: Vec<SchemeId>,
    pub seeds: Vec<u64>,
    /// Empty means the scenario's own power budget.
    pub powers_dbm: Vec<f64>,
    /// Empty means the planned serving time only.
    pub serve_slots: Vec<Option<u32>>,
    /// Replay the proposed scheme's service plan for every other scheme.
    pub paired: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobStatus {
    Completed { violations: usize },
    RunFailed { message: String, infeasible: bool },
    WriteFailed { message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutcome {
    pub scheme: SchemeId,
    pub seed: u64,
    pub power_dbm: f64,
    pub serve_slots: Option<u32>,
    pub dir: PathBuf,
    pub status: JobStatus,
}

/// The scenario with both the total and the per-user power set to `dbm`.
pub fn with_power(cfg: &ScenarioConfig, dbm: f64) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.p_total_max = dbm_to_watts(dbm);
    c.p_user_max = dbm_to_watts(dbm);
    c
}

impl SweepSpec {
    fn powers(&self) -> Vec<f64> {
        if self.powers_dbm.is_empty() {
            vec![watts_to_dbm(self.cfg.p_total_max)]
        } else {
            self.powers_dbm.clone()
        }
    }

    fn slots(&self) -> Vec<Option<u32>> {
        if self.serve_slots.is_empty() {
            vec![self.cfg.serve_slots]
        } else {
            self.serve_slots.clone()
        }
    }

    pub fn manifest(&self, out_dir: &Path, timestamp_unix: u64) -> RunManifest {
        RunManifest {
            scenario: self.scenario_path.clone(),
            schemes: self.schemes.clone(),
            seeds: self.seeds.clone(),
            powers_dbm: self.powers(),
            serve_slots: self.slots(),
            paired: self.paired,
            out_dir: out_dir.display().to_string(),
            tool_version: TOOL_VERSION.to_string(),
            timestamp_unix,
        }
    }

    /// Run the whole grid in parallel and write every run directory under
    /// `out`. Failures are reported per job; the sweep itself only fails when
    /// the root manifest cannot be written.
    pub fn execute(&self, out: &Path, timestamp_unix: u64) -> Result<Vec<JobOutcome>, IoError> {
        fs::create_dir_all(out).map_err(io_err(out))?;
        let manifest = self.manifest(out, timestamp_unix);
        write_json(&out.join("manifest.json"), &manifest)?;
        let explicit_power = !self.powers_dbm.is_empty();
        let mut cells = Vec::new();
        for &p in &manifest.powers_dbm {
            for &s in &manifest.serve_slots {
                for &seed in &self.seeds {
                    cells.push((p, s, seed));
                }
            }
        }
        let outcomes = cells
            .par_iter()
            .flat_map_iter(|&(p, s, seed)| {
                let mut cfg = if explicit_power { with_power(&self.cfg, p) } else { self.cfg.clone() };
                cfg.serve_slots = s;
                cfg.rng_seed = seed;
                self.run_cell(&cfg, p, out, &manifest)
            })
            .collect::<Vec<_>>();
        Ok(outcomes)
    }

    fn run_cell(&self, cfg: &ScenarioConfig, power_dbm: f64, out: &Path, manifest: &RunManifest) -> Vec<JobOutcome> {
        let outcome = |scheme, status| JobOutcome {
            scheme,
            seed: cfg.rng_seed,
            power_dbm,
            serve_slots: cfg.serve_slots,
            dir: run_dir(out, scheme, power_dbm, cfg.serve_slots, cfg.rng_seed),
            status,
        };
        let failed = |e: &RunError| JobStatus::RunFailed {
            message: e.to_string(),
            infeasible: e.is_infeasible(),
        };
        let mission = match Mission::generate(cfg) {
            Ok(m) => m,
            Err(e) => return self.schemes.iter().map(|&s| outcome(s, failed(&e))).collect(),
        };
        let reference = if self.paired && self.schemes.contains(&SchemeId::Proposed) {
            Some(run_scheme_planned(&mission, SchemeId::Proposed, None).map_err(|e| failed(&e)))
        } else {
            None
        };
        let plan = match &reference {
            Some(Ok(r)) => Some(r.service_plan()),
            _ => None,
        };
        self.schemes
            .par_iter()
            .map(|&scheme| {
                let res = match (&reference, scheme) {
                    (Some(r), SchemeId::Proposed) => r.clone(),
                    (Some(Err(e)), _) => Err(e.clone()),
                    _ => run_scheme_planned(&mission, scheme, plan.as_ref()).map_err(|e| failed(&e)),
                };
                let run = match res {
                    Ok(r) => r,
                    Err(status) => return outcome(scheme, status),
                };
                let record = RunRecord {
                    scheme,
                    seed: cfg.rng_seed,
                    power_dbm,
                    serve_slots: cfg.serve_slots,
                    violations: verify_run(&run, &mission).err().unwrap_or_default(),
                    qos_shortfalls: planned_qos_shortfalls(&run, cfg),
                    metrics: collect_metrics(&run, &mission),
                };
                let o = outcome(scheme, JobStatus::Completed { violations: 0 });
                let status = match write_run_dir(&o.dir, &run, &mission, &record, manifest) {
                    Ok(()) => JobStatus::Completed {
                        violations: record.violations.len(),
                    },
                    Err(e) => JobStatus::WriteFailed { message: e.to_string() },
                };
                JobOutcome { status, ..o }
            })
            .collect()
    }
}

/// Every directory under `root` (inclusive) holding a `metrics.json`,
/// sorted by path.
pub fn find_run_dirs(root: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        if d.join("metrics.json").is_file() {
            out.push(d.clone());
        }
        for e in fs::read_dir(&d).map_err(io_err(&d))? {
            let e = e.map_err(io_err(&d))?;
            if e.file_type().map_err(io_err(&d))?.is_dir() {
                stack.push(e.path());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// A finished run read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub cfg: ScenarioConfig,
    /// `(t, x, y, h)`
    pub trajectory: Vec<[f64; 4]>,
    /// `(round, bcd_iter, stage, iteration, gamma)`
    pub convergence: Vec<(usize, usize, String, usize, f64)>,
}

fn parse_f64(path: &Path, s: &str) -> Result<f64, IoError> {
    s.parse().map_err(|_| IoError::Parse {
        path: path.to_path_buf(),
        reason: format!("bad number {s:?}"),
    })
}

fn parse_usize(path: &Path, s: &str) -> Result<usize, IoError> {
    s.parse().map_err(|_| IoError::Parse {
        path: path.to_path_buf(),
        reason: format!("bad index {s:?}"),
    })
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, IoError> {
    let wrap = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let got: Vec<String> = r.headers().map_err(wrap)?.iter().map(str::to_string).collect();
    if got != header {
        return Err(IoError::Parse {
            path: path.to_path_buf(),
            reason: format!("expected columns {header:?}, found {got:?}"),
        });
    }
    r.records().map(|x| x.map_err(wrap)).collect()
}

pub fn load_run(dir: &Path) -> Result<LoadedRun, IoError> {
    let missing: Vec<String> = RUN_FILES
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(IoError::Missing {
            dir: dir.to_path_buf(),
            missing,
        });
    }
    let record: RunRecord = read_json(&dir.join("metrics.json"))?;
    let toml_path = dir.join("scenario.toml");
    let text = fs::read_to_string(&toml_path).map_err(io_err(&toml_path))?;
    let cfg = ScenarioConfig::from_toml_str(&text, &toml_path.display().to_string()).map_err(|e| IoError::Parse {
        path: toml_path.clone(),
        reason: e.to_string(),
    })?;
    let tp = dir.join("trajectory.csv");
    let mut trajectory = Vec::new();
    for r in read_rows(&tp, &["t", "x", "y", "h"])? {
        let mut row = [0.0; 4];
        for (k, v) in row.iter_mut().enumerate() {
            *v = parse_f64(&tp, &r[k])?;
        }
        trajectory.push(row);
    }
    let cp = dir.join("convergence.csv");
    let mut convergence = Vec::new();
    for r in read_rows(&cp, &["round", "bcd_iter", "stage", "iteration", "gamma"])? {
        convergence.push((
            parse_usize(&cp, &r[0])?,
            parse_usize(&cp, &r[1])?,
            r[2].to_string(),
            parse_usize(&cp, &r[3])?,
            parse_f64(&cp, &r[4])?,
        ));
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        record,
        cfg,
        trajectory,
        convergence,
    })
}

/// Concatenated SCA iterates of one round: the first point of the first
/// stage, then every accepted iterate after it, stage by stage.
pub fn round_series(conv: &[(usize, usize, String, usize, f64)], round: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut groups: BTreeMap<(usize, u8), Vec<(usize, f64)>> = BTreeMap::new();
    for (r, b, stage, k, f) in conv {
        let order = match stage.as_str() {
            "trajectory" => 0,
            "allocation" => 1,
            _ => continue,
        };
        if *r == round {
            groups.entry((*b, order)).or_default().push((*k, *f));
        }
    }
    for (_, mut pts) in groups {
        pts.sort_by_key(|p| p.0);
        let skip = usize::from(!out.is_empty());
        out.extend(pts.iter().skip(skip).map(|p| p.1));
    }
    out
}

pub const PLOT_FILES: [&str; 5] = [
    "convergence.csv",
    "trajectory.csv",
    "speed.csv",
    "outage_vs_slots.csv",
    "minrate_vs_power.csv",
];

fn key_cols(r: &RunRecord) -> Vec<String> {
    vec![
        r.scheme.name().to_string(),
        fmt_num(r.power_dbm),
        slots_label(r.serve_slots),
        r.seed.to_string(),
    ]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Emit the tidy figure tables for every run found under `input` into `out`.
pub fn write_plotdata(input: &Path, out: &Path) -> Result<Vec<PathBuf>, IoError> {
    if !input.is_dir() {
        return Err(IoError::Missing {
            dir: input.to_path_buf(),
            missing: vec!["run directory".into()],
        });
    }
    let dirs = find_run_dirs(input)?;
    if dirs.is_empty() {
        return Err(IoError::Missing {
            dir: input.to_path_buf(),
            missing: RUN_FILES.iter().map(|s| s.to_string()).collect(),
        });
    }
    let runs = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let key = ["scheme", "power_dbm", "serve_slots", "seed"];
    let with_key = |extra: &[&'static str]| -> Vec<&'static str> { key.iter().chain(extra).copied().collect() };

    let mut conv = Vec::new();
    let mut traj = Vec::new();
    let mut speed = Vec::new();
    for run in &runs {
        let k = key_cols(&run.record);
        for c in &run.record.metrics.clusters {
            for (i, f) in round_series(&run.convergence, c.round).iter().enumerate() {
                conv.push([k.clone(), vec![c.round.to_string(), i.to_string(), fmt_num(*f)]].concat());
            }
        }
        for p in &run.trajectory {
            traj.push([k.clone(), p.iter().map(|v| fmt_num(*v)).collect()].concat());
        }
        for w in run.trajectory.windows(2) {
            let d = ((w[1][1] - w[0][1]).powi(2) + (w[1][2] - w[0][2]).powi(2) + (w[1][3] - w[0][3]).powi(2)).sqrt();
            speed.push([k.clone(), vec![fmt_num(w[1][0]), fmt_num(d / run.cfg.slot_duration)]].concat());
        }
    }
    let mut files = Vec::new();
    let mut emit = |name: &str, header: Vec<&str>, rows: Vec<Vec<String>>| -> Result<(), IoError> {
        let p = out.join(name);
        write_csv(&p, &header, rows)?;
        files.push(p);
        Ok(())
    };
    emit("convergence.csv", with_key(&["cluster", "iteration", "gamma"]), conv)?;
    emit("trajectory.csv", with_key(&["t", "x", "y", "h"]), traj)?;
    emit("speed.csv", with_key(&["t", "v"]), speed)?;

    type Cell = (String, String, String);
    let mut outage: BTreeMap<Cell, Vec<f64>> = BTreeMap::new();
    let mut rate: BTreeMap<Cell, Vec<[f64; 3]>> = BTreeMap::new();
    for run in &runs {
        let r = &run.record;
        let m = &r.metrics;
        let cell = (r.scheme.name().to_string(), fmt_num(r.power_dbm), slots_label(r.serve_slots));
        outage.entry(cell.clone()).or_default().push(m.outage_probability);
        let first = m.clusters.first().map_or(0.0, |c| c.min_rate);
        let last = m.clusters.last().map_or(0.0, |c| c.min_rate);
        rate.entry(cell).or_default().push([m.min_rate, first, last]);
    }
    let rows = outage
        .iter()
        .map(|((s, p, n), v)| vec![s.clone(), p.clone(), n.clone(), v.len().to_string(), fmt_num(mean(v))])
        .collect();
    emit(
        "outage_vs_slots.csv",
        vec!["scheme", "power_dbm", "serve_slots", "runs", "outage_probability"],
        rows,
    )?;
    let rows = rate
        .iter()
        .map(|((s, p, n), v)| {
            let col = |i: usize| fmt_num(mean(&v.iter().map(|x| x[i]).collect::<Vec<_>>()));
            vec![s.clone(), n.clone(), p.clone(), v.len().to_string(), col(0), col(1), col(2)]
        })
        .collect();
    emit(
        "minrate_vs_power.csv",
        vec![
            "scheme",
            "serve_slots",
            "power_dbm",
            "runs",
            "min_rate",
            "first_cluster_min_rate",
            "last_cluster_min_rate",
        ],
        rows,
    )?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_num(123456789.0), "123456789");
        assert_eq!(fmt_num(1234567890.0), "1.23456789e+09");
        assert_eq!(fmt_num(20e6), "20000000");
        assert_eq!(fmt_num(0.0001), "0.0001");
        assert_eq!(fmt_num(0.00001), "1e-05");
        assert_eq!(fmt_num(1.5e-10), "1.5e-10");
        assert_eq!(fmt_num(9.9999999999), "10");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
    }

    #[test]
    fn formatted_values_round_trip_to_nine_digits() {
        for v in [std::f64::consts::PI, 1e-7 * std::f64::consts::E, 6.02214076e23, -47.123456789123] {
            let back: f64 = fmt_num(v).parse().unwrap();
            assert!((back - v).abs() <= 5e-9 * v.abs(), "{v} -> {back}");
        }
    }

    #[test]
    fn run_dir_layout() {
        let d = run_dir(Path::new("out"), SchemeId::Traj2dPrediction, 12.5, Some(6), 3);
        assert_eq!(d, Path::new("out/runs/traj_2d_prediction/p12.5/slots_6/seed_3"));
        let d = run_dir(Path::new("out"), SchemeId::Proposed, 10.0, None, 1);
        assert_eq!(d, Path::new("out/runs/proposed/p10/slots_auto/seed_1"));
    }

    #[test]
    fn round_series_chains_stages() {
        let c = |r, b, s: &str, k, f| (r, b, s.to_string(), k, f);
        let conv = vec![
            c(0, 1, "bcd", 0, 9.0),
            c(0, 1, "trajectory", 0, 1.0),
            c(0, 1, "trajectory", 1, 2.0),
            c(0, 1, "allocation", 0, 2.0),
            c(0, 1, "allocation", 1, 3.0),
            c(0, 2, "trajectory", 0, 3.0),
            c(0, 2, "trajectory", 1, 3.5),
            c(1, 1, "trajectory", 0, 7.0),
        ];
        assert_eq!(round_series(&conv, 0), vec![1.0, 2.0, 3.0, 3.5]);
        assert_eq!(round_series(&conv, 1), vec![7.0]);
        assert!(round_series(&conv, 2).is_empty());
    }
}
