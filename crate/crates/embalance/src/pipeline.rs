//! End-to-end reduction pipelines: configuration, the benchmark experiment
//! (build model, lift, gramians, balance, project, simulate), RMS-error
//! reporting and CSV emission. This layer is concrete in `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::balance::{
    balance, project_bilinear, project_nonlinear, stability_check, ReducedModel, ReducedSystem,
    StabilityReport,
};
use crate::carleman::{carleman_lift, taylor_drift, TaylorOrder};
use crate::error::{Error, Result};
use crate::gramian::{
    bilinear_gramians, linear_part_gramians, ltv_gramians_traced, nonlinear_controllability_traced,
    nonlinear_observability_traced, MeanMode, QuadratureConfig, QuadratureRule,
};
use crate::io::{
    format_value, load_lti_model, write_basis_csv, write_gramian, write_node_trace_csv,
    write_trajectory_csv,
};
use crate::model::{
    build_rc_ladder, random_stable_lti, BilinearModel, NonlinearModel, PerturbationSets,
};
use crate::ode::{integrate, integrate_rhs, IntegrationMethod, IntegratorConfig, Trajectory};

/// Which reduction route an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    /// Simulate the full nonlinear model only (the reference curve).
    FullNonlinear,
    /// Full-order Carleman bilinear approximation, no reduction.
    BilinearFull,
    /// Reduce the bilinear lift with linear-part gramians.
    LinearPart,
    /// Reduce the bilinear lift with the Def 1-2 (Lyapunov-form) gramians.
    Lall,
    /// Reduce the original nonlinear model with the Def 3-4 gramians.
    NonlinearGramians,
    /// Reduce a linear time-varying/time-invariant model with the
    /// fundamental-solution gramians.
    Ltv,
}

impl std::fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self {
            PipelineKind::FullNonlinear => "full-nonlinear",
            PipelineKind::BilinearFull => "bilinear-full",
            PipelineKind::LinearPart => "linear-part",
            PipelineKind::Lall => "lall",
            PipelineKind::NonlinearGramians => "nonlinear-gramians",
            PipelineKind::Ltv => "ltv",
        };
        f.write_str(tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// "rc-ladder", "random-lti" or "file".
    pub preset: String,
    pub n: usize,
    pub seed: u64,
    pub path: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "rc-ladder".into(),
            n: 30,
            seed: 1,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    /// "exp-decay", "constant" or "zero".
    pub kind: String,
    pub amplitude: f64,
    pub rate: f64,
}

impl Default for InputSection {
    fn default() -> Self {
        InputSection {
            kind: "exp-decay".into(),
            amplitude: 1.0,
            rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetsSection {
    #[serde(rename = "M")]
    pub m: Vec<f64>,
}

impl Default for SetsSection {
    fn default() -> Self {
        SetsSection {
            m: vec![-5.0, -0.5, -1.0, -0.1, 0.1, 0.5, 1.0, 5.0],
        }
    }
}

/// Scales for the averaged-fundamental (Def 3-4) constructions. The two
/// ensembles face different feasibility constraints: backward solutions of
/// the stiff ladder escape in finite time unless the scales are tiny, while
/// the forward (observability) ensemble is stable and can probe the actual
/// operating amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearSetsSection {
    #[serde(rename = "M_ctrl")]
    pub m_ctrl: Vec<f64>,
    #[serde(rename = "M_obs")]
    pub m_obs: Vec<f64>,
}

impl Default for NonlinearSetsSection {
    fn default() -> Self {
        NonlinearSetsSection {
            m_ctrl: vec![-1e-13, 1e-13],
            m_obs: vec![-0.1, -0.05, 0.05, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSection {
    pub horizon: f64,
    pub nodes: usize,
    /// "simpson" or "trapezoid".
    pub rule: String,
    /// Horizon for the Def-3 backward quadrature; the backward span must stay
    /// clear of finite-time blow-up, which caps it well below the forward
    /// horizon on the benchmark.
    pub controllability_horizon: Option<f64>,
    pub controllability_nodes: Option<usize>,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        QuadratureSection {
            horizon: 1.0,
            nodes: 101,
            rule: "simpson".into(),
            controllability_horizon: Some(0.05),
            controllability_nodes: Some(101),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    /// "rk45" or "rk4".
    pub method: String,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection {
            method: "rk45".into(),
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            step: 1e-3,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GramianSection {
    pub cond_limit: f64,
    /// Apply the Def-1 `1/(s c^2)` weighting in the bilinear gramians.
    pub normalize: bool,
    /// "equilibrium" or "time-average".
    pub mean: String,
}

impl Default for GramianSection {
    fn default() -> Self {
        GramianSection {
            cond_limit: 1e12,
            normalize: true,
            mean: "equilibrium".into(),
        }
    }
}

/// Full experiment description; round-trips losslessly through TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: PipelineKind,
    /// Reduced order k.
    pub order: usize,
    /// Simulation/RMS horizon.
    pub horizon: f64,
    /// RMS sample grid point count.
    pub samples: usize,
    pub out_dir: Option<PathBuf>,
    /// Dense gramian CSVs get large at the benchmark size; off by default.
    pub emit_gramians: bool,
    pub model: ModelSection,
    pub input: InputSection,
    pub sets: SetsSection,
    pub nonlinear_sets: NonlinearSetsSection,
    pub quadrature: QuadratureSection,
    pub integrator: IntegratorSection,
    pub gramian: GramianSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            pipeline: PipelineKind::NonlinearGramians,
            order: 3,
            horizon: 1.0,
            samples: 1001,
            out_dir: None,
            emit_gramians: false,
            model: ModelSection::default(),
            input: InputSection::default(),
            sets: SetsSection::default(),
            nonlinear_sets: NonlinearSetsSection::default(),
            quadrature: QuadratureSection::default(),
            integrator: IntegratorSection::default(),
            gramian: GramianSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn integrator_config(&self) -> Result<IntegratorConfig<f64>> {
        let method = match self.integrator.method.as_str() {
            "rk45" => IntegrationMethod::Rk45Adaptive {
                rel_tol: self.integrator.rel_tol,
                abs_tol: self.integrator.abs_tol,
            },
            "rk4" => IntegrationMethod::Rk4Fixed {
                step: self.integrator.step,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown integrator method '{other}' (expected rk45 or rk4)"
                )))
            }
        };
        let cfg = IntegratorConfig {
            method,
            max_steps: self.integrator.max_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn quadrature_rule(&self) -> Result<QuadratureRule> {
        match self.quadrature.rule.as_str() {
            "simpson" => Ok(QuadratureRule::Simpson),
            "trapezoid" => Ok(QuadratureRule::Trapezoid),
            other => Err(Error::Config(format!(
                "unknown quadrature rule '{other}' (expected simpson or trapezoid)"
            ))),
        }
    }

    pub fn observability_quadrature(&self) -> Result<QuadratureConfig<f64>> {
        QuadratureConfig::new(
            self.quadrature.horizon,
            self.quadrature.nodes,
            self.quadrature_rule()?,
        )
    }

    pub fn controllability_quadrature(&self) -> Result<QuadratureConfig<f64>> {
        QuadratureConfig::new(
            self.quadrature
                .controllability_horizon
                .unwrap_or(self.quadrature.horizon),
            self.quadrature
                .controllability_nodes
                .unwrap_or(self.quadrature.nodes),
            self.quadrature_rule()?,
        )
    }

    pub fn mean_mode(&self) -> Result<MeanMode> {
        match self.gramian.mean.as_str() {
            "equilibrium" => Ok(MeanMode::Equilibrium),
            "time-average" => Ok(MeanMode::TimeAverage),
            other => Err(Error::Config(format!(
                "unknown mean mode '{other}' (expected equilibrium or time-average)"
            ))),
        }
    }

    pub fn input_signal(&self) -> Result<impl Fn(f64) -> DVector<f64> + Clone + Send + Sync> {
        let amplitude = self.input.amplitude;
        let rate = self.input.rate;
        let kind = match self.input.kind.as_str() {
            "exp-decay" => 0u8,
            "constant" => 1,
            "zero" => 2,
            other => {
                return Err(Error::Config(format!(
                    "unknown input kind '{other}' (expected exp-decay, constant or zero)"
                )))
            }
        };
        Ok(move |t: f64| {
            let v = match kind {
                0 => amplitude * (-rate * t).exp(),
                1 => amplitude,
                _ => 0.0,
            };
            DVector::from_element(1, v)
        })
    }

    pub fn build_nonlinear_model(&self) -> Result<NonlinearModel<f64>> {
        match self.model.preset.as_str() {
            "rc-ladder" => build_rc_ladder(self.model.n),
            "random-lti" => Ok(random_stable_lti(self.model.n, self.model.seed)?.to_nonlinear()),
            "file" => {
                let path = self.model.path.as_ref().ok_or_else(|| {
                    Error::Config("model.preset = \"file\" requires model.path".into())
                })?;
                Ok(load_lti_model(path)?.to_nonlinear())
            }
            other => Err(Error::Config(format!(
                "unknown model preset '{other}' (expected rc-ladder, random-lti or file)"
            ))),
        }
    }
}

/// RMS error between two scalar output trajectories on a shared grid; the
/// relative value is normalized by the RMS of the reference signal (the
/// benchmark comparisons are reported this way).
#[derive(Debug, Clone, Serialize)]
pub struct RmsReport {
    pub pipeline: String,
    pub reference: String,
    pub rms: f64,
    pub rms_relative: f64,
    pub sample_count: usize,
    pub horizon: f64,
}

/// `sqrt(mean((y_ref - y_test)^2))` over the shared grid. Grids must agree
/// point-for-point; outputs must be scalar.
pub fn rms_error(reference: &Trajectory<f64>, test: &Trajectory<f64>) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} grid points",
            reference.len(),
            test.len()
        )));
    }
    let span = (reference.t1() - reference.t0())
        .abs()
        .max(f64::MIN_POSITIVE);
    for (a, b) in reference.grid.iter().zip(test.grid.iter()) {
        if (a - b).abs() > 1e-12 * span {
            return Err(Error::GridMismatch(format!(
                "grid points differ: {a} vs {b}"
            )));
        }
    }
    let y_ref = reference
        .outputs
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("reference trajectory has no outputs".into()))?;
    let y_test = test
        .outputs
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("test trajectory has no outputs".into()))?;
    if y_ref[0].len() != 1 || y_test[0].len() != 1 {
        return Err(Error::InvalidArgument(
            "RMS comparison expects scalar outputs".into(),
        ));
    }
    let mut acc = 0.0;
    for (a, b) in y_ref.iter().zip(y_test.iter()) {
        let d = a[0] - b[0];
        acc += d * d;
    }
    Ok((acc / reference.len() as f64).sqrt())
}

/// RMS of a scalar output signal itself.
pub fn signal_rms(traj: &Trajectory<f64>) -> Result<f64> {
    let ys = traj
        .outputs
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("trajectory has no outputs".into()))?;
    if ys.is_empty() || ys[0].len() != 1 {
        return Err(Error::InvalidArgument(
            "signal RMS expects scalar outputs".into(),
        ));
    }
    let acc: f64 = ys.iter().map(|y| y[0] * y[0]).sum();
    Ok((acc / ys.len() as f64).sqrt())
}

/// RMS error normalized by the reference-signal RMS.
pub fn rms_error_relative(reference: &Trajectory<f64>, test: &Trajectory<f64>) -> Result<f64> {
    let absolute = rms_error(reference, test)?;
    let scale = signal_rms(reference)?;
    if scale == 0.0 {
        return Err(Error::InvalidArgument(
            "reference signal is identically zero".into(),
        ));
    }
    Ok(absolute / scale)
}

fn make_report(
    pipeline: &str,
    reference_tag: &str,
    reference: &Trajectory<f64>,
    test: &Trajectory<f64>,
    cfg: &ExperimentConfig,
) -> Result<RmsReport> {
    Ok(RmsReport {
        pipeline: pipeline.into(),
        reference: reference_tag.into(),
        rms: rms_error(reference, test)?,
        rms_relative: rms_error_relative(reference, test)?,
        sample_count: cfg.samples,
        horizon: cfg.horizon,
    })
}

/// Everything a single pipeline run produces.
pub struct PipelineOutput {
    pub reports: Vec<RmsReport>,
    pub stability: Option<StabilityReport>,
    pub hankel: Option<Vec<f64>>,
    pub artifacts: Vec<PathBuf>,
}

/// Extract the linear output row of a model whose output map is linear
/// (`h(0) = 0`, evaluated on the unit vectors).
fn linear_output_row(model: &NonlinearModel<f64>) -> Result<RowDVector<f64>> {
    if model.output_dim() != 1 {
        return Err(Error::InvalidArgument(
            "bilinear pipelines expect a scalar output".into(),
        ));
    }
    let n = model.state_dim();
    let zero = DVector::zeros(n);
    if model.output_at(0.0, &zero).amax() > 1e-12 {
        return Err(Error::InvalidArgument(
            "bilinear pipelines expect a linear output map (h(0) = 0)".into(),
        ));
    }
    let mut row = RowDVector::zeros(n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        row[j] = model.output_at(0.0, &e)[0];
    }
    Ok(row)
}

/// Order-2 Carleman lift of the configured model.
pub fn build_lifted_model(
    cfg: &ExperimentConfig,
    model: &NonlinearModel<f64>,
) -> Result<BilinearModel<f64>> {
    if model.input_dim() != 1 {
        return Err(Error::InvalidArgument(
            "bilinear pipelines expect a scalar input".into(),
        ));
    }
    let pd = taylor_drift(model, TaylorOrder::Quadratic)?;
    let b_col = model.input_at(0.0).column(0).clone_owned();
    let c_row = linear_output_row(model)?;
    let _ = cfg;
    carleman_lift(&pd, &b_col, &c_row)
}

/// Simulate a bilinear model under the scalar input signal, recording the
/// scalar output.
pub fn simulate_bilinear<U>(
    model: &BilinearModel<f64>,
    input: U,
    x0: &DVector<f64>,
    t1: f64,
    intervals: usize,
    cfg: &IntegratorConfig<f64>,
) -> Result<Trajectory<f64>>
where
    U: Fn(f64) -> DVector<f64>,
{
    let m = model.clone();
    let rhs = move |t: f64, x: &DVector<f64>| m.rhs(x, input(t)[0]);
    let mut traj = integrate_rhs(rhs, x0, 0.0, t1, intervals, cfg)?;
    let outputs = traj
        .states
        .iter()
        .map(|x| DVector::from_element(1, model.output(x)))
        .collect();
    traj.outputs = Some(outputs);
    Ok(traj)
}

/// Simulate a reduced model (either kind) from the zero state.
pub fn simulate_reduced<U>(
    reduced: &ReducedModel<f64>,
    input: U,
    t1: f64,
    intervals: usize,
    cfg: &IntegratorConfig<f64>,
) -> Result<Trajectory<f64>>
where
    U: Fn(f64) -> DVector<f64> + Clone,
{
    match &reduced.system {
        ReducedSystem::Nonlinear(nl) => {
            let z0 = DVector::zeros(nl.state_dim());
            integrate(nl, &z0, input, 0.0, t1, intervals, cfg)
        }
        ReducedSystem::Bilinear(bl) => {
            let z0 = DVector::zeros(bl.dim());
            simulate_bilinear(bl, input, &z0, t1, intervals, cfg)
        }
    }
}

fn ensure_out_dir(cfg: &ExperimentConfig) -> Result<Option<PathBuf>> {
    match &cfg.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Ok(Some(dir.clone()))
        }
        None => Ok(None),
    }
}

struct Artifacts {
    dir: Option<PathBuf>,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: Option<PathBuf>) -> Self {
        Artifacts {
            dir,
            written: Vec::new(),
        }
    }

    fn write<F>(&mut self, name: &str, writer: F) -> Result<()>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        if let Some(dir) = &self.dir {
            let path = dir.join(name);
            writer(&path)?;
            self.written.push(path);
        }
        Ok(())
    }
}

/// Simulate the full nonlinear reference under the configured input.
pub fn simulate_reference(
    cfg: &ExperimentConfig,
    model: &NonlinearModel<f64>,
) -> Result<Trajectory<f64>> {
    let input = cfg.input_signal()?;
    let icfg = cfg.integrator_config()?;
    let x0 = model.equilibrium().clone();
    integrate(model, &x0, input, 0.0, cfg.horizon, cfg.samples - 1, &icfg)
}

/// The nonlinear-gramians (Def 3-4) reduction of a nonlinear model.
fn reduce_nonlinear_gramians(
    cfg: &ExperimentConfig,
    model: &NonlinearModel<f64>,
    artifacts: &mut Artifacts,
) -> Result<ReducedModel<f64>> {
    let icfg = cfg.integrator_config()?;
    let n = model.state_dim();
    let ctrl_sets = PerturbationSets::identity(n, cfg.nonlinear_sets.m_ctrl.clone())
        .map_err(|e| e.in_stage("nonlinear-sets"))?;
    let obs_sets = PerturbationSets::identity(n, cfg.nonlinear_sets.m_obs.clone())
        .map_err(|e| e.in_stage("nonlinear-sets"))?;
    let ctrl_quad = cfg.controllability_quadrature()?;
    let obs_quad = cfg.observability_quadrature()?;

    let (p, p_trace) = nonlinear_controllability_traced(
        model,
        &ctrl_sets,
        &ctrl_quad,
        &icfg,
        cfg.gramian.cond_limit,
    )
    .map_err(|e| e.in_stage("nonlinear-controllability"))?;
    let (q, q_trace) = nonlinear_observability_traced(model, &obs_sets, &obs_quad, &icfg)
        .map_err(|e| e.in_stage("nonlinear-observability"))?;

    artifacts.write("trace_nonlinear_P.csv", |p_| {
        write_node_trace_csv(p_, &p_trace)
    })?;
    artifacts.write("trace_nonlinear_Q.csv", |p_| {
        write_node_trace_csv(p_, &q_trace)
    })?;
    if cfg.emit_gramians {
        artifacts.write("gramian_nonlinear_P.csv", |path| {
            write_gramian(&path.with_extension(""), &p)
        })?;
        artifacts.write("gramian_nonlinear_Q.csv", |path| {
            write_gramian(&path.with_extension(""), &q)
        })?;
    }

    let basis = balance(&p, &q, cfg.order).map_err(|e| e.in_stage("balance"))?;
    artifacts.write("basis_nonlinear_gramians.csv", |p_| {
        write_basis_csv(p_, &basis)
    })?;
    project_nonlinear(model, &basis).map_err(|e| e.in_stage("project"))
}

/// Linear-part or Lall reduction of the bilinear lift.
fn reduce_bilinear(
    cfg: &ExperimentConfig,
    lifted: &BilinearModel<f64>,
    kind: PipelineKind,
    artifacts: &mut Artifacts,
) -> Result<ReducedModel<f64>> {
    let (p, q) = match kind {
        PipelineKind::LinearPart => {
            linear_part_gramians(lifted).map_err(|e| e.in_stage("linear-part-gramians"))?
        }
        PipelineKind::Lall => bilinear_gramians(lifted, &cfg.sets.m, cfg.gramian.normalize)
            .map_err(|e| e.in_stage("bilinear-gramians"))?,
        other => {
            return Err(Error::Config(format!(
                "reduce_bilinear cannot run pipeline '{other}'"
            )))
        }
    };
    if cfg.emit_gramians {
        let tag = kind.to_string().replace('-', "_");
        artifacts.write(&format!("gramian_{tag}_P.csv"), |path| {
            write_gramian(&path.with_extension(""), &p)
        })?;
        artifacts.write(&format!("gramian_{tag}_Q.csv"), |path| {
            write_gramian(&path.with_extension(""), &q)
        })?;
    }
    let basis = balance(&p, &q, cfg.order).map_err(|e| e.in_stage("balance"))?;
    artifacts.write(&format!("basis_{kind}.csv"), |p_| {
        write_basis_csv(p_, &basis)
    })?;
    project_bilinear(lifted, &basis).map_err(|e| e.in_stage("project"))
}

/// LTV fundamental-solution reduction of a linear model.
fn reduce_ltv(
    cfg: &ExperimentConfig,
    artifacts: &mut Artifacts,
) -> Result<(ReducedModel<f64>, NonlinearModel<f64>)> {
    let ltv = match cfg.model.preset.as_str() {
        "random-lti" => random_stable_lti(cfg.model.n, cfg.model.seed)?,
        "file" => {
            let path = cfg.model.path.as_ref().ok_or_else(|| {
                Error::Config("model.preset = \"file\" requires model.path".into())
            })?;
            load_lti_model(path)?
        }
        other => {
            return Err(Error::Config(format!(
                "the ltv pipeline needs a linear model preset, got '{other}'"
            )))
        }
    };
    let icfg = cfg.integrator_config()?;
    let quad = cfg.observability_quadrature()?;
    let (p, q, p_trace, q_trace) = ltv_gramians_traced(&ltv, &quad, &icfg, cfg.gramian.cond_limit)
        .map_err(|e| e.in_stage("ltv-gramians"))?;
    artifacts.write("trace_ltv_P.csv", |p_| write_node_trace_csv(p_, &p_trace))?;
    artifacts.write("trace_ltv_Q.csv", |p_| write_node_trace_csv(p_, &q_trace))?;
    if cfg.emit_gramians {
        artifacts.write("gramian_ltv_P.csv", |path| {
            write_gramian(&path.with_extension(""), &p)
        })?;
        artifacts.write("gramian_ltv_Q.csv", |path| {
            write_gramian(&path.with_extension(""), &q)
        })?;
    }
    let basis = balance(&p, &q, cfg.order).map_err(|e| e.in_stage("balance"))?;
    artifacts.write("basis_ltv.csv", |p_| write_basis_csv(p_, &basis))?;
    // project the constant linear model as a bilinear system with N = 0
    let bl = BilinearModel::new(
        ltv.a_at(0.0),
        nalgebra::DMatrix::zeros(ltv.state_dim(), ltv.state_dim()),
        DVector::from_column_slice(ltv.b_at(0.0).as_slice()),
        RowDVector::from_row_slice(ltv.c_at(0.0).as_slice()),
    )?;
    let reduced = project_bilinear(&bl, &basis).map_err(|e| e.in_stage("project"))?;
    Ok((reduced, ltv.to_nonlinear()))
}

/// Run one pipeline end to end, writing artifacts into `cfg.out_dir` when
/// set.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    let dir = ensure_out_dir(cfg)?;
    let mut artifacts = Artifacts::new(dir);
    let icfg = cfg.integrator_config()?;
    let input = cfg.input_signal()?;
    let intervals = cfg.samples - 1;
    if cfg.samples < 2 {
        return Err(Error::Config("samples must be at least 2".into()));
    }

    // the LTV pipeline has its own reference (the full linear model)
    if cfg.pipeline == PipelineKind::Ltv {
        let (reduced, full) = reduce_ltv(cfg, &mut artifacts)?;
        let reference = {
            let x0 = full.equilibrium().clone();
            integrate(
                &full,
                &x0,
                input.clone(),
                0.0,
                cfg.horizon,
                intervals,
                &icfg,
            )
            .map_err(|e| e.in_stage("reference-simulation"))?
        };
        artifacts.write("reference.csv", |p| write_trajectory_csv(p, &reference))?;
        let test = simulate_reduced(&reduced, input, cfg.horizon, intervals, &icfg)
            .map_err(|e| e.in_stage("reduced-simulation"))?;
        artifacts.write("reduced_ltv.csv", |p| write_trajectory_csv(p, &test))?;
        let stability = stability_check(&reduced, cfg.horizon);
        let reports = vec![make_report("ltv", "full-linear", &reference, &test, cfg)?];
        write_report_csv(&mut artifacts, &reports)?;
        return Ok(PipelineOutput {
            reports,
            stability: Some(stability),
            hankel: Some(reduced.basis.hankel.clone()),
            artifacts: artifacts.written,
        });
    }

    let model = cfg
        .build_nonlinear_model()
        .map_err(|e| e.in_stage("model"))?;
    let reference =
        simulate_reference(cfg, &model).map_err(|e| e.in_stage("reference-simulation"))?;
    artifacts.write("reference.csv", |p| write_trajectory_csv(p, &reference))?;

    let mut reports = Vec::new();
    let mut stability = None;
    let mut hankel = None;

    match cfg.pipeline {
        PipelineKind::FullNonlinear => {
            reports.push(make_report(
                "full-nonlinear",
                "full-nonlinear",
                &reference,
                &reference,
                cfg,
            )?);
        }
        PipelineKind::BilinearFull => {
            let lifted =
                build_lifted_model(cfg, &model).map_err(|e| e.in_stage("carleman-lift"))?;
            let x0 = DVector::zeros(lifted.dim());
            let traj = simulate_bilinear(&lifted, input, &x0, cfg.horizon, intervals, &icfg)
                .map_err(|e| e.in_stage("bilinear-simulation"))?;
            artifacts.write("bilinear_full.csv", |p| write_trajectory_csv(p, &traj))?;
            reports.push(make_report(
                "bilinear-full",
                "full-nonlinear",
                &reference,
                &traj,
                cfg,
            )?);
        }
        PipelineKind::LinearPart | PipelineKind::Lall => {
            let lifted =
                build_lifted_model(cfg, &model).map_err(|e| e.in_stage("carleman-lift"))?;
            let x0 = DVector::zeros(lifted.dim());
            let bilinear_ref =
                simulate_bilinear(&lifted, input.clone(), &x0, cfg.horizon, intervals, &icfg)
                    .map_err(|e| e.in_stage("bilinear-simulation"))?;
            artifacts.write("bilinear_full.csv", |p| {
                write_trajectory_csv(p, &bilinear_ref)
            })?;

            let reduced = reduce_bilinear(cfg, &lifted, cfg.pipeline, &mut artifacts)?;
            let test = simulate_reduced(&reduced, input, cfg.horizon, intervals, &icfg)
                .map_err(|e| e.in_stage("reduced-simulation"))?;
            artifacts.write(&format!("reduced_{}.csv", cfg.pipeline), |p| {
                write_trajectory_csv(p, &test)
            })?;

            let tag = cfg.pipeline.to_string();
            reports.push(make_report(
                &tag,
                "bilinear-930",
                &bilinear_ref,
                &test,
                cfg,
            )?);
            reports.push(make_report(&tag, "full-nonlinear", &reference, &test, cfg)?);
            stability = Some(stability_check(&reduced, cfg.horizon));
            hankel = Some(reduced.basis.hankel.clone());
        }
        PipelineKind::NonlinearGramians => {
            let reduced = reduce_nonlinear_gramians(cfg, &model, &mut artifacts)?;
            let test = simulate_reduced(&reduced, input, cfg.horizon, intervals, &icfg)
                .map_err(|e| e.in_stage("reduced-simulation"))?;
            artifacts.write("reduced_nonlinear_gramians.csv", |p| {
                write_trajectory_csv(p, &test)
            })?;
            reports.push(make_report(
                "nonlinear-gramians",
                "full-nonlinear",
                &reference,
                &test,
                cfg,
            )?);
            stability = Some(stability_check(&reduced, cfg.horizon));
            hankel = Some(reduced.basis.hankel.clone());
        }
        PipelineKind::Ltv => unreachable!("handled above"),
    }

    write_report_csv(&mut artifacts, &reports)?;
    Ok(PipelineOutput {
        reports,
        stability,
        hankel,
        artifacts: artifacts.written,
    })
}

fn write_report_csv(artifacts: &mut Artifacts, reports: &[RmsReport]) -> Result<()> {
    artifacts.write("report.csv", |path| {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(
            out,
            "pipeline,reference,rms,rms_relative,sample_count,horizon"
        )?;
        for r in reports {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.pipeline,
                r.reference,
                format_value(r.rms),
                format_value(r.rms_relative),
                r.sample_count,
                format_value(r.horizon)
            )?;
        }
        Ok(())
    })
}

/// One row of the benchmark comparison table.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub pipeline: String,
    pub reference: String,
    pub rms: Option<f64>,
    pub rms_relative: Option<f64>,
    pub error: Option<String>,
    pub stability: Option<String>,
}

/// The five-curve comparison: nonlinear reference, full bilinear lift, and
/// the three order-k reductions.
pub struct ComparisonTable {
    /// One row per benchmark curve, each reduction measured against its
    /// method-specific reference.
    pub rows: Vec<ComparisonRow>,
    /// The same reductions all measured against the nonlinear reference.
    pub uniform: Vec<ComparisonRow>,
    pub artifacts: Vec<PathBuf>,
}

impl ComparisonTable {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    pub fn rms_of(&self, pipeline: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.pipeline == pipeline)
            .and_then(|r| r.rms)
    }

    pub fn relative_rms_of(&self, pipeline: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.pipeline == pipeline)
            .and_then(|r| r.rms_relative)
    }
}

/// Run every benchmark curve, tolerating per-pipeline failures, and emit the
/// wide plot CSV plus the RMS tables.
pub fn compare_all(cfg: &ExperimentConfig) -> Result<ComparisonTable> {
    let dir = ensure_out_dir(cfg)?;
    let mut artifacts = Artifacts::new(dir);
    let icfg = cfg.integrator_config()?;
    let input = cfg.input_signal()?;
    let intervals = cfg.samples - 1;

    let model = cfg
        .build_nonlinear_model()
        .map_err(|e| e.in_stage("model"))?;
    let reference =
        simulate_reference(cfg, &model).map_err(|e| e.in_stage("reference-simulation"))?;
    artifacts.write("reference.csv", |p| write_trajectory_csv(p, &reference))?;

    let lifted = build_lifted_model(cfg, &model).map_err(|e| e.in_stage("carleman-lift"))?;
    let bilinear_ref: Result<Trajectory<f64>> = {
        let x0 = DVector::zeros(lifted.dim());
        simulate_bilinear(&lifted, input.clone(), &x0, cfg.horizon, intervals, &icfg)
            .map_err(|e| e.in_stage("bilinear-simulation"))
    };
    if let Ok(traj) = &bilinear_ref {
        artifacts.write("bilinear_full.csv", |p| write_trajectory_csv(p, traj))?;
    }

    let mut rows = Vec::new();
    let mut uniform = Vec::new();
    let mut curves: Vec<(String, Option<Trajectory<f64>>)> = vec![
        ("nonlinear".into(), Some(reference.clone())),
        ("bilinear930".into(), None),
        ("linear_part_k".into(), None),
        ("lall_k".into(), None),
        ("defs34_k".into(), None),
    ];

    // curve b: the full bilinear lift against the nonlinear model
    match &bilinear_ref {
        Ok(traj) => {
            curves[1].1 = Some(traj.clone());
            rows.push(ComparisonRow {
                pipeline: "bilinear-full".into(),
                reference: "full-nonlinear".into(),
                rms: Some(rms_error(&reference, traj)?),
                rms_relative: Some(rms_error_relative(&reference, traj)?),
                error: None,
                stability: None,
            });
        }
        Err(e) => rows.push(ComparisonRow {
            pipeline: "bilinear-full".into(),
            reference: "full-nonlinear".into(),
            rms: None,
            rms_relative: None,
            error: Some(e.to_string()),
            stability: None,
        }),
    }

    // curves c and d: reductions of the lift, measured against the 930 model
    for kind in [PipelineKind::LinearPart, PipelineKind::Lall] {
        let curve_idx = if kind == PipelineKind::LinearPart {
            2
        } else {
            3
        };
        let outcome = reduce_bilinear(cfg, &lifted, kind, &mut artifacts).and_then(|reduced| {
            let traj = simulate_reduced(&reduced, input.clone(), cfg.horizon, intervals, &icfg)
                .map_err(|e| e.in_stage("reduced-simulation"))?;
            Ok((reduced, traj))
        });
        match outcome {
            Ok((reduced, traj)) => {
                artifacts.write(&format!("reduced_{kind}.csv"), |p| {
                    write_trajectory_csv(p, &traj)
                })?;
                let stability = stability_check(&reduced, cfg.horizon);
                let (rms, rms_relative) = match &bilinear_ref {
                    Ok(bref) => (
                        Some(rms_error(bref, &traj)?),
                        Some(rms_error_relative(bref, &traj)?),
                    ),
                    Err(_) => (None, None),
                };
                rows.push(ComparisonRow {
                    pipeline: kind.to_string(),
                    reference: "bilinear-930".into(),
                    rms,
                    rms_relative,
                    error: bilinear_ref
                        .as_ref()
                        .err()
                        .map(|_| "bilinear-930 reference unavailable".into()),
                    stability: Some(stability.verdict.to_string()),
                });
                uniform.push(ComparisonRow {
                    pipeline: kind.to_string(),
                    reference: "full-nonlinear".into(),
                    rms: Some(rms_error(&reference, &traj)?),
                    rms_relative: Some(rms_error_relative(&reference, &traj)?),
                    error: None,
                    stability: Some(stability.verdict.to_string()),
                });
                curves[curve_idx].1 = Some(traj);
            }
            Err(e) => {
                rows.push(ComparisonRow {
                    pipeline: kind.to_string(),
                    reference: "bilinear-930".into(),
                    rms: None,
                    rms_relative: None,
                    error: Some(e.to_string()),
                    stability: None,
                });
            }
        }
    }

    // curve e: Def 3-4 reduction of the original nonlinear model
    let outcome = reduce_nonlinear_gramians(cfg, &model, &mut artifacts).and_then(|reduced| {
        let traj = simulate_reduced(&reduced, input.clone(), cfg.horizon, intervals, &icfg)
            .map_err(|e| e.in_stage("reduced-simulation"))?;
        Ok((reduced, traj))
    });
    match outcome {
        Ok((reduced, traj)) => {
            artifacts.write("reduced_nonlinear_gramians.csv", |p| {
                write_trajectory_csv(p, &traj)
            })?;
            let stability = stability_check(&reduced, cfg.horizon);
            rows.push(ComparisonRow {
                pipeline: "nonlinear-gramians".into(),
                reference: "full-nonlinear".into(),
                rms: Some(rms_error(&reference, &traj)?),
                rms_relative: Some(rms_error_relative(&reference, &traj)?),
                error: None,
                stability: Some(stability.verdict.to_string()),
            });
            curves[4].1 = Some(traj);
        }
        Err(e) => rows.push(ComparisonRow {
            pipeline: "nonlinear-gramians".into(),
            reference: "full-nonlinear".into(),
            rms: None,
            rms_relative: None,
            error: Some(e.to_string()),
            stability: None,
        }),
    }

    // wide plot CSV: one column per curve, NaN where a pipeline failed
    artifacts.write("comparison.csv", |path| {
        let mut out = BufWriter::new(File::create(path)?);
        let names: Vec<String> = curves.iter().map(|(n, _)| format!("y_{n}")).collect();
        writeln!(out, "t,{}", names.join(","))?;
        for k in 0..reference.len() {
            let mut row = format_value(reference.grid[k]);
            for (_, maybe) in &curves {
                row.push(',');
                let v = maybe
                    .as_ref()
                    .map(|tr| tr.outputs.as_ref().unwrap()[k][0])
                    .unwrap_or(f64::NAN);
                row.push_str(&format_value(v));
            }
            writeln!(out, "{row}")?;
        }
        Ok(())
    })?;

    write_rows_csv(&mut artifacts, "rms_table.csv", &rows)?;
    write_rows_csv(&mut artifacts, "uniform_rms.csv", &uniform)?;

    Ok(ComparisonTable {
        rows,
        uniform,
        artifacts: artifacts.written,
    })
}

fn write_rows_csv(artifacts: &mut Artifacts, name: &str, rows: &[ComparisonRow]) -> Result<()> {
    artifacts.write(name, |path| {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "pipeline,reference,rms,rms_relative,status,stability")?;
        for r in rows {
            let rms = r.rms.map(format_value).unwrap_or_else(|| "".into());
            let rel = r
                .rms_relative
                .map(format_value)
                .unwrap_or_else(|| "".into());
            let status = r.error.clone().unwrap_or_else(|| "ok".into());
            let stability = r.stability.clone().unwrap_or_else(|| "".into());
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.pipeline,
                r.reference,
                rms,
                rel,
                status.replace(',', ";"),
                stability
            )?;
        }
        Ok(())
    })
}
