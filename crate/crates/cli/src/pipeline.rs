//! Per-row execution of the requested operations. Rows run concurrently and
//! write only below `<out>/row_<name>/`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use luders::channels::{measurement_channel, process_fidelity, ChoiJson, ComplexJson, ProcessChoi};
use luders::dynamics::{
    g0_adiabatic, g0_exact, integrate_sampled, p_scatt, param_uncertainty, ExperimentParams, FourLevelState, Interval68,
};
use luders::numeric::{ComplexMatrix, C64, ONE, ZERO};
use luders::states::{density, QutritPureState};
use luders::tomography::{
    bootstrap_uncertainty, reconstruct, simulate_dataset_with, task_rng, tp_likelihood_ratio_test, BootstrapOptions,
    LoadError, LrTestOptions, Objective, Provenance, ReconstructionOptions, TomographyDataset,
};
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{G0Model, Operation, PipelineConfig, RowConfig};
use crate::error::{CliError, CliResult};

/// Operations plus everything they depend on.
pub fn with_prerequisites(ops: &[Operation]) -> BTreeSet<Operation> {
    let mut set: BTreeSet<Operation> = ops.iter().copied().collect();
    if set.contains(&Operation::Compare) {
        set.insert(Operation::Reconstruct);
    }
    set
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub seed: u64,
    pub shots: u64,
    pub operations: Vec<Operation>,
    pub rows: Vec<RowReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RowReport {
    pub name: String,
    pub rabi_mhz: f64,
    pub g0_source: Option<&'static str>,
    pub g0: Option<ComplexJson>,
    pub p_scatt: Option<f64>,
    pub dynamics: Option<DynamicsReport>,
    pub dataset: Option<DatasetReport>,
    pub reconstruction: Option<ReconstructionReport>,
    pub fit: Option<FitReport>,
    pub tptest: Option<TpTestReport>,
    pub bootstrap: Option<BootstrapReport>,
    pub files: Vec<String>,
    pub error: Option<String>,
    #[serde(skip)]
    pub exit_code: u8,
}

#[derive(Clone, Debug, Serialize)]
pub struct DynamicsReport {
    pub g0_exact: ComplexJson,
    pub g0_adiabatic: ComplexJson,
    pub p_scatt_exact: f64,
    pub p_scatt_adiabatic: f64,
    /// Monte Carlo interval of the adiabatic `P_scatt` over Ω and Δ.
    pub p_scatt_interval: Interval68,
    pub outside_adiabatic_regime: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetReport {
    pub shots: u64,
    pub provenance: Provenance,
}

/// Also written alone as `reconstruction.json`.
#[derive(Clone, Debug, Serialize)]
pub struct ReconstructionReport {
    pub chi: ChoiJson,
    pub residual: f64,
    pub tp_deviation: f64,
    pub fidelity_vs_model: Option<f64>,
    pub significance_sigma: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitReport {
    pub objective: Objective,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TpTestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub significance_sigma: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BootstrapReport {
    pub resamples: usize,
    pub max_width: f64,
}

impl RowReport {
    fn new(row: &RowConfig) -> Self {
        Self {
            name: row.name.clone(),
            rabi_mhz: row.rabi_mhz,
            g0_source: None,
            g0: None,
            p_scatt: None,
            dynamics: None,
            dataset: None,
            reconstruction: None,
            fit: None,
            tptest: None,
            bootstrap: None,
            files: Vec::new(),
            error: None,
            exit_code: 0,
        }
    }
}

/// Independent seed per row and purpose. Keyed on the row name so a row
/// gives the same numbers whether or not it runs alone.
fn derive_seed(seed: u64, row: &str, purpose: u64) -> u64 {
    // FNV-1a: stable across toolchains, unlike `DefaultHasher`.
    let name = row.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    task_rng(seed ^ name, purpose).next_u64()
}

const SEED_MC: u64 = 1;
const SEED_SIMULATE: u64 = 2;
const SEED_FIT: u64 = 3;
const SEED_BOOTSTRAP: u64 = 4;

pub fn run(config: &PipelineConfig, ops: &[Operation]) -> CliResult<Report> {
    let ops = with_prerequisites(ops);
    std::fs::create_dir_all(&config.output_dir).map_err(|e| CliError::io(&config.output_dir, e))?;
    let rows: Vec<RowReport> = config.rows.par_iter().map(|row| run_row(config, row, &ops)).collect();
    let report = Report {
        seed: config.params.seed,
        shots: config.params.shots,
        operations: ops.iter().copied().collect(),
        rows,
    };
    if ops.contains(&Operation::Dynamics) {
        write(&config.output_dir.join("g0_table.csv"), &g0_table_csv(&report.rows))?;
    }
    write(&config.output_dir.join("report.json"), &to_json(&report))?;
    Ok(report)
}

fn run_row(config: &PipelineConfig, row: &RowConfig, ops: &BTreeSet<Operation>) -> RowReport {
    let mut report = RowReport::new(row);
    let dir = config.output_dir.join(format!("row_{}", row.name));
    if let Err(e) = execute_row(config, row, ops, &dir, &mut report) {
        report.exit_code = e.exit_code();
        report.error = Some(e.to_string());
    }
    report
}

fn execute_row(
    config: &PipelineConfig,
    row: &RowConfig,
    ops: &BTreeSet<Operation>,
    dir: &Path,
    report: &mut RowReport,
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = RowWriter { dir, files: &mut report.files };
    let params = config.row_params(row);
    let seed = config.params.seed;

    let mut exact = None;
    if ops.contains(&Operation::Dynamics) {
        let dynamics = run_dynamics(config, &params, derive_seed(seed, &row.name, SEED_MC), &mut out)?;
        exact = Some(C64::new(dynamics.g0_exact.re, dynamics.g0_exact.im));
        report.dynamics = Some(dynamics);
    }

    let needs_data = ops.iter().any(|op| *op != Operation::Dynamics);
    if !needs_data {
        return Ok(());
    }

    let (g0, source) = match (row.g0, config.g0_model) {
        (Some(z), _) => (C64::new(z.re, z.im), "config"),
        (None, G0Model::Adiabatic) => (g0_adiabatic(&params), "adiabatic"),
        (None, G0Model::Exact) => (exact.map_or_else(|| g0_exact(&params), Ok)?, "exact"),
    };
    report.g0_source = Some(source);
    report.g0 = Some(complex_json(g0));
    report.p_scatt = Some(p_scatt(g0)?);
    let model = measurement_channel(g0)?;

    let dataset = match &row.dataset {
        Some(path) => TomographyDataset::load(path).map_err(|e| match e {
            LoadError::Io(path, source) => CliError::io(path, source),
            LoadError::Format(e) => CliError::Config(format!("{}: {e}", path.display())),
        })?,
        None => {
            let data = simulate_dataset_with(
                &model,
                config.params.shots,
                derive_seed(seed, &row.name, SEED_SIMULATE),
                config.preparation_error,
            )?;
            out.write("dataset.csv", &data.to_csv())?;
            data
        }
    };
    report.dataset = Some(DatasetReport { shots: dataset.shots(), provenance: dataset.provenance().clone() });

    let fit = ReconstructionOptions {
        objective: config.objective,
        starts: config.starts,
        seed: derive_seed(seed, &row.name, SEED_FIT),
        ..Default::default()
    };

    if ops.contains(&Operation::Tptest) {
        let lr = tp_likelihood_ratio_test(&dataset, &LrTestOptions { fit: fit.clone(), ..Default::default() })?;
        report.tptest = Some(TpTestReport {
            statistic: lr.statistic,
            p_value: lr.p_value,
            significance_sigma: lr.significance_sigma,
            converged: lr.converged,
        });
    }

    if ops.contains(&Operation::Bootstrap) {
        let options = BootstrapOptions {
            resamples: config.bootstrap_resamples,
            seed: derive_seed(seed, &row.name, SEED_BOOTSTRAP),
            fit: fit.clone(),
        };
        let boot = bootstrap_uncertainty(&dataset, &options)?;
        out.write("bootstrap.csv", &interval_csv(boot.point.chi.matrix(), &boot.lower, &boot.upper))?;
        report.bootstrap = Some(BootstrapReport { resamples: boot.resamples, max_width: boot.max_width() });
    }

    if ops.contains(&Operation::Reconstruct) {
        let result = reconstruct(&dataset, &fit)?;
        out.write("chi_reconstructed.csv", &result.chi.bar_chart_csv())?;
        let mut fidelity = None;
        if ops.contains(&Operation::Compare) {
            fidelity = Some(process_fidelity(&result.chi, &model)?);
            out.write("chi_model.csv", &model.bar_chart_csv())?;
            for (name, amplitudes) in density_inputs() {
                let psi = QutritPureState::normalized(amplitudes)?;
                out.write(&format!("density_{name}.csv"), &density_csv(&density(&psi), &model, &result.chi)?)?;
            }
        }
        let rec = ReconstructionReport {
            chi: result.chi.to_json(None),
            residual: result.residual,
            tp_deviation: result.tp_deviation,
            fidelity_vs_model: fidelity,
            significance_sigma: report.tptest.as_ref().map(|t| t.significance_sigma),
        };
        out.write("reconstruction.json", &to_json(&rec))?;
        report.fit = Some(FitReport {
            objective: config.objective,
            objective_value: result.objective,
            iterations: result.iterations,
            converged: result.converged,
        });
        report.reconstruction = Some(rec);
    }
    Ok(())
}

fn run_dynamics(
    config: &PipelineConfig,
    params: &ExperimentParams,
    mc_seed: u64,
    out: &mut RowWriter,
) -> CliResult<DynamicsReport> {
    let exact = g0_exact(params)?;
    let adiabatic = g0_adiabatic(params);
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let start = FourLevelState::from_qutrit_amplitudes(&[h, h, ZERO])?;
    let trajectory = integrate_sampled(&start, params, params.duration, config.trajectory_samples.max(1))?;
    out.write("trajectory.csv", &trajectory.to_csv())?;
    Ok(DynamicsReport {
        g0_exact: complex_json(exact),
        g0_adiabatic: complex_json(adiabatic),
        p_scatt_exact: p_scatt(exact)?,
        p_scatt_adiabatic: p_scatt(adiabatic)?,
        p_scatt_interval: param_uncertainty(params, config.mc_samples, mc_seed)?,
        outside_adiabatic_regime: params.outside_adiabatic_regime(),
    })
}

/// `(|1⟩ + i|2⟩)/√2` and `(|0⟩ + i|2⟩)/√2`.
fn density_inputs() -> [(&'static str, [C64; 3]); 2] {
    let i = C64::new(0.0, 1.0);
    [("1i2", [ZERO, ONE, i]), ("0i2", [ONE, ZERO, i])]
}

/// Input state next to its image under the model and the reconstruction,
/// one row per matrix element.
fn density_csv(rho: &ComplexMatrix, model: &ProcessChoi, reconstructed: &ProcessChoi) -> CliResult<String> {
    let m = model.apply(rho)?;
    let r = reconstructed.apply(rho)?;
    let mut out = String::from("row,col,input_re,input_im,model_re,model_im,reconstructed_re,reconstructed_im\n");
    for a in 0..rho.rows() {
        for b in 0..rho.cols() {
            let (x, y, z) = (rho[(a, b)], m[(a, b)], r[(a, b)]);
            writeln!(
                out,
                "{a},{b},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                x.re, x.im, y.re, y.im, z.re, z.im
            )
            .unwrap();
        }
    }
    Ok(out)
}

fn interval_csv(point: &ComplexMatrix, lower: &ComplexMatrix, upper: &ComplexMatrix) -> String {
    let mut out = String::from("row,col,re,re_lower,re_upper,im,im_lower,im_upper\n");
    for a in 0..point.rows() {
        for b in 0..point.cols() {
            let (p, l, u) = (point[(a, b)], lower[(a, b)], upper[(a, b)]);
            writeln!(
                out,
                "{a},{b},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                p.re, l.re, u.re, p.im, l.im, u.im
            )
            .unwrap();
        }
    }
    out
}

fn g0_table_csv(rows: &[RowReport]) -> String {
    let mut out = String::from(
        "row,rabi_mhz,g0_exact_re,g0_exact_im,g0_adiabatic_re,g0_adiabatic_im,\
         p_scatt_exact,p_scatt_adiabatic,p_scatt_lower,p_scatt_median,p_scatt_upper\n",
    );
    for row in rows {
        if let Some(d) = &row.dynamics {
            let i = &d.p_scatt_interval;
            writeln!(
                out,
                "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                row.name,
                row.rabi_mhz,
                d.g0_exact.re,
                d.g0_exact.im,
                d.g0_adiabatic.re,
                d.g0_adiabatic.im,
                d.p_scatt_exact,
                d.p_scatt_adiabatic,
                i.lower,
                i.median,
                i.upper
            )
            .unwrap();
        }
    }
    out
}

fn complex_json(z: C64) -> ComplexJson {
    ComplexJson { re: z.re, im: z.im }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    text
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

struct RowWriter<'a> {
    dir: &'a Path,
    files: &'a mut Vec<String>,
}

impl RowWriter<'_> {
    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path: PathBuf = self.dir.join(name);
        write(&path, contents)?;
        self.files.push(name.to_string());
        Ok(())
    }
}
