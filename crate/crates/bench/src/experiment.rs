//! Estimation runs, timing and CSV output.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ctmap::parallel::{parallel_rts_map_with, parallel_tf_map_with, SolverOptions};
use ctmap::sequential::{kalman_bucy_filter, sequential_rts_map, two_filter_seq};
use ctmap::{
    build_time_grid, iterated_map_with, linearize_about, om_cost, reverse_problem, IterationOptions,
    LinearAffineModel, Matrix, MeasurementSeries, NonlinearModel, StateSpaceModel, TimeFn, TimeGrid, Trajectory,
    Vector,
};

use crate::config::{load_custom_model, ExperimentConfig, Method, ModelChoice};
use crate::error::{BenchError, Result};
use crate::models::{coordinated_turn_model, wiener_velocity_model, SPAN};
use crate::simulate::simulate;

pub const SCHEMA_LINE: &str = "#schema=1";
pub const RECORD_HEADER: [&str; 8] = [
    "model",
    "method",
    "T",
    "n",
    "run_index",
    "runtime_seconds",
    "max_abs_diff_vs_seq",
    "cost",
];

#[derive(Debug, Clone)]
pub enum ModelKind {
    Linear(LinearAffineModel),
    Nonlinear(NonlinearModel),
}

impl ModelKind {
    pub fn as_dyn(&self) -> &dyn StateSpaceModel {
        match self {
            ModelKind::Linear(m) => m,
            ModelKind::Nonlinear(m) => m,
        }
    }
}

/// A simulated data set ready for estimation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: ModelKind,
    pub grid: TimeGrid,
    pub truth: Trajectory,
    pub meas: MeasurementSeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub model: String,
    pub method: Method,
    pub blocks: usize,
    pub substeps: usize,
    pub run_index: usize,
    pub runtime_seconds: f64,
    /// Blank for sequential methods.
    pub max_abs_diff_vs_seq: Option<f64>,
    pub cost: Option<f64>,
    /// Reason the estimator failed, if it did.
    pub failure: Option<String>,
}

impl BenchRecord {
    fn fields(&self) -> [String; 8] {
        let cost = match (&self.failure, self.cost) {
            (Some(reason), _) => format!("failed: {reason}"),
            (None, Some(c)) => c.to_string(),
            (None, None) => String::new(),
        };
        [
            self.model.clone(),
            self.method.to_string(),
            self.blocks.to_string(),
            self.substeps.to_string(),
            self.run_index.to_string(),
            self.runtime_seconds.to_string(),
            self.max_abs_diff_vs_seq.map(|d| d.to_string()).unwrap_or_default(),
            cost,
        ]
    }
}

fn scale_matrix_fn(f: TimeFn<Matrix>, s: f64) -> TimeFn<Matrix> {
    if s == 1.0 {
        return f;
    }
    match f {
        TimeFn::Constant(m) => TimeFn::Constant(m * s),
        TimeFn::PerNode(v) => TimeFn::PerNode(Arc::new(v.iter().map(|m| m * s).collect())),
        TimeFn::Function(g) => TimeFn::Function(Arc::new(move |t| g(t) * s)),
    }
}

/// The configured model with its noise scales applied, and its time span.
pub fn build_model(cfg: &ExperimentConfig) -> Result<(ModelKind, (f64, f64))> {
    let (model, span) = match &cfg.model {
        ModelChoice::Wiener => (ModelKind::Linear(wiener_velocity_model()), SPAN),
        ModelChoice::CoordinatedTurn => (ModelKind::Nonlinear(coordinated_turn_model()), SPAN),
        ModelChoice::Custom(path) => {
            let custom = load_custom_model(path)?;
            (ModelKind::Linear(custom.model), custom.span)
        }
    };
    let model = match model {
        ModelKind::Linear(mut m) => {
            m.noise_density = scale_matrix_fn(m.noise_density, cfg.w_scale);
            m.obs_density = scale_matrix_fn(m.obs_density, cfg.r_scale);
            ModelKind::Linear(m)
        }
        ModelKind::Nonlinear(mut m) => {
            m.noise_density = scale_matrix_fn(m.noise_density, cfg.w_scale);
            m.obs_density = scale_matrix_fn(m.obs_density, cfg.r_scale);
            ModelKind::Nonlinear(m)
        }
    };
    Ok((model, span))
}

/// Builds the model and grid and simulates once with the configured seed.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Scenario> {
    cfg.validate()?;
    let (model, span) = build_model(cfg)?;
    let grid = build_time_grid(span.0, span.1, cfg.blocks, cfg.substeps)?;
    let (truth, meas) = simulate(model.as_dyn(), &grid, cfg.seed)?;
    Ok(Scenario {
        model,
        grid,
        truth,
        meas,
    })
}

fn solver_options(cfg: &ExperimentConfig) -> SolverOptions {
    SolverOptions {
        integrator: cfg.integrator,
        ..SolverOptions::default()
    }
}

/// Runs one estimator on the scenario. Nonlinear models go through the
/// iterated scheme with the method as the inner solver.
pub fn estimate(scenario: &Scenario, method: Method, cfg: &ExperimentConfig) -> ctmap::Result<Trajectory> {
    let (grid, meas) = (&scenario.grid, &scenario.meas);
    let opts = solver_options(cfg);
    match &scenario.model {
        ModelKind::Linear(model) => match method {
            Method::SeqRts => sequential_rts_map(model, meas, grid),
            Method::ParRts => Ok(parallel_rts_map_with(model, meas, grid, &opts)?.trajectory),
            Method::SeqTf => two_filter_seq(&reverse_problem(model, meas, grid)?),
            Method::ParTf => Ok(parallel_tf_map_with(model, meas, grid, &opts)?.trajectory),
        },
        ModelKind::Nonlinear(model) => {
            let iter_opts = IterationOptions {
                backend: method.backend(),
                iterations: cfg.iterations,
                solver: opts,
                ..IterationOptions::default()
            };
            Ok(iterated_map_with(model, meas, grid, &iter_opts, |_, _| {})?.0)
        }
    }
}

/// Filter means for the trajectory file: the Kalman–Bucy filter of the linear
/// model, or of the linearization about `map` for nonlinear models.
pub fn filter_means(scenario: &Scenario, map: &Trajectory) -> ctmap::Result<Vec<Vector>> {
    let (grid, meas) = (&scenario.grid, &scenario.meas);
    let filter = match &scenario.model {
        ModelKind::Linear(model) => kalman_bucy_filter(model, meas, grid)?,
        ModelKind::Nonlinear(model) => kalman_bucy_filter(&linearize_about(model, map, grid)?, meas, grid)?,
    };
    Ok(filter.means())
}

fn in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| BenchError::Invalid(format!("cannot build a pool of {n} workers: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| BenchError::Io {
        path: dir.to_owned(),
        source,
    })
}

/// Timed runs of the configured method on the configured model.
///
/// Writes `records.csv` and, when some run succeeded, `trajectory.csv` into
/// `cfg.out`. A failing run becomes a record carrying the reason.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<BenchRecord>> {
    let scenario = prepare(cfg)?;
    let (records, map) = in_pool(cfg.threads, || timed_runs(&scenario, cfg, cfg.method))?;
    create_dir(&cfg.out)?;
    write_records(&cfg.out.join("records.csv"), &records)?;
    if let Some(map) = map {
        let means = filter_means(&scenario, &map).ok();
        write_trajectory(&cfg.out.join("trajectory.csv"), &scenario, means.as_deref(), &map)?;
    }
    Ok(records)
}

fn timed_runs(scenario: &Scenario, cfg: &ExperimentConfig, method: Method) -> (Vec<BenchRecord>, Option<Trajectory>) {
    let reference = if method.is_sequential() {
        None
    } else {
        estimate(scenario, method.sequential(), cfg).ok()
    };
    let model = scenario.model.as_dyn();
    let mut records = Vec::with_capacity(cfg.repeats);
    let mut kept = None;
    for run_index in 0..cfg.repeats {
        let start = Instant::now();
        let result = estimate(scenario, method, cfg);
        let runtime_seconds = start.elapsed().as_secs_f64();
        let mut record = BenchRecord {
            model: cfg.model.to_string(),
            method,
            blocks: cfg.blocks,
            substeps: cfg.substeps,
            run_index,
            runtime_seconds,
            max_abs_diff_vs_seq: None,
            cost: None,
            failure: None,
        };
        match result {
            Ok(traj) => {
                record.max_abs_diff_vs_seq = reference.as_ref().map(|r| traj.max_abs_diff(r));
                match om_cost(model, &traj, &scenario.meas, &scenario.grid) {
                    Ok(c) => record.cost = Some(c),
                    Err(e) => record.failure = Some(format!("cost evaluation: {e}")),
                }
                kept.get_or_insert(traj);
            }
            Err(e) => record.failure = Some(e.to_string()),
        }
        records.push(record);
    }
    (records, kept)
}

/// Mean runtime per method for each block count.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub blocks: usize,
    /// `None` when every run of the method failed.
    pub mean_runtime: Vec<(Method, Option<f64>)>,
}

/// Runs every method for each `T` in `blocks` at fixed span and `n`, writing
/// `records.csv` with all runs and `sweep.csv` with mean runtimes.
pub fn run_sweep(cfg: &ExperimentConfig, blocks: &[usize], methods: &[Method]) -> Result<Vec<SweepRow>> {
    let mut all = Vec::new();
    let mut rows = Vec::with_capacity(blocks.len());
    for &t in blocks {
        let point = ExperimentConfig {
            blocks: t,
            ..cfg.clone()
        };
        let scenario = prepare(&point)?;
        let mut means = Vec::with_capacity(methods.len());
        for &method in methods {
            let (records, _) = in_pool(point.threads, || timed_runs(&scenario, &point, method))?;
            let ok: Vec<f64> = records
                .iter()
                .filter(|r| r.failure.is_none())
                .map(|r| r.runtime_seconds)
                .collect();
            means.push((method, (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)));
            all.extend(records);
        }
        rows.push(SweepRow {
            blocks: t,
            mean_runtime: means,
        });
    }
    create_dir(&cfg.out)?;
    write_records(&cfg.out.join("records.csv"), &all)?;
    write_sweep(&cfg.out.join("sweep.csv"), &rows, methods)?;
    Ok(rows)
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|source| BenchError::Io {
        path: path.to_owned(),
        source,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn write_records(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut file = open(path)?;
    writeln!(file, "{SCHEMA_LINE}").map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_sweep(path: &Path, rows: &[SweepRow], methods: &[Method]) -> Result<()> {
    let mut file = open(path)?;
    writeln!(file, "{SCHEMA_LINE}").map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["T".to_string()];
    header.extend(methods.iter().map(|m| m.to_string()));
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.blocks.to_string()];
        rec.extend(
            row.mean_runtime
                .iter()
                .map(|(_, t)| t.map(|t| t.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn push_all(rec: &mut Vec<String>, v: &Vector) {
    rec.extend(v.iter().map(|x| x.to_string()));
}

/// One row per grid node: `t`, true states, measurements, and when given the
/// filter means and MAP states.
pub fn write_trajectory(
    path: &Path,
    scenario: &Scenario,
    filter: Option<&[Vector]>,
    map: &Trajectory,
) -> Result<()> {
    write_columns(path, scenario, filter, Some(map))
}

/// Truth and measurements only.
pub fn write_simulation(path: &Path, scenario: &Scenario) -> Result<()> {
    write_columns(path, scenario, None, None)
}

fn write_columns(
    path: &Path,
    scenario: &Scenario,
    filter: Option<&[Vector]>,
    map: Option<&Trajectory>,
) -> Result<()> {
    let nx = scenario.truth.states[0].len();
    let ny = scenario.meas.values[0].len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=nx).map(|i| format!("x{i}")));
    header.extend((1..=ny).map(|i| format!("y{i}")));
    if filter.is_some() {
        header.extend((1..=nx).map(|i| format!("m_filter{i}")));
    }
    if map.is_some() {
        header.extend((1..=nx).map(|i| format!("x_map{i}")));
    }
    let mut w = csv::Writer::from_writer(open(path)?);
    w.write_record(&header)?;
    for k in 0..scenario.grid.len() {
        let mut rec = vec![scenario.grid.time(k).to_string()];
        push_all(&mut rec, &scenario.truth.states[k]);
        push_all(&mut rec, &scenario.meas.values[k]);
        if let Some(f) = filter {
            push_all(&mut rec, &f[k]);
        }
        if let Some(m) = map {
            push_all(&mut rec, &m.states[k]);
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_record_keeps_the_header_shape() {
        let r = BenchRecord {
            model: "wiener".into(),
            method: Method::ParTf,
            blocks: 4,
            substeps: 2,
            run_index: 0,
            runtime_seconds: 0.5,
            max_abs_diff_vs_seq: None,
            cost: None,
            failure: Some("uninformative".into()),
        };
        let f = r.fields();
        assert_eq!(f.len(), RECORD_HEADER.len());
        assert_eq!(f[6], "");
        assert_eq!(f[7], "failed: uninformative");
    }

    #[test]
    fn noise_scales_apply() {
        let cfg = ExperimentConfig {
            w_scale: 2.0,
            r_scale: 3.0,
            ..ExperimentConfig::default()
        };
        let (model, _) = build_model(&cfg).unwrap();
        let m = model.as_dyn();
        assert_eq!(m.noise_density(0, 0.0)[(0, 0)], 8.0);
        assert!((m.obs_density(0, 0.0)[(0, 0)] - 0.03).abs() < 1e-15);
    }
}
