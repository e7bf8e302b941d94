//! JSON configuration: schema, defaults, validation and the effective echo.
//!
//! Validation messages start with the code of the violated assumption
//! (see the README for the list), e.g. `A1: alpha must be > 0`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use caginalp_core::control::{AdmissibleSet, ControlPair, CostSpec, OptimizeOptions};
use caginalp_core::nonlinearity::{CouplingSpec, PotentialSpec};
use caginalp_core::presets::CosineProduct;
use caginalp_core::sensitivity::MemorySign;
use caginalp_core::state::{solve_state, PhysParams, Problem, SolverOptions, TimeGrid};
use caginalp_core::{Field, GridSpec};

use crate::error::{CliError, Context, Result};
use crate::io;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub coupling: CouplingConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default = "CostConfig::default_block")]
    pub cost: CostConfig,
    #[serde(default)]
    pub admissible: AdmissibleConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "one")]
    pub lx: f64,
    #[serde(default = "one")]
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    pub nt: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub theta_c: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig { alpha: 1.0, beta: 1.0, theta_c: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    #[default]
    Regular,
    Logarithmic {
        #[serde(default = "one")]
        kappa: f64,
    },
    /// Experimental smooth penalization of the double obstacle.
    ObstaclePenalized { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingConfig {
    Affine {
        #[serde(default = "minus_one")]
        a: f64,
        #[serde(default)]
        b: f64,
    },
    BoundedSmooth { c: f64 },
}

fn minus_one() -> f64 {
    -1.0
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig::Affine { a: -1.0, b: 0.0 }
    }
}

/// `offset + amplitude cos(kx pi x / lx) cos(ky pi y / ly)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineParams {
    #[serde(default)]
    pub offset: f64,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub kx: f64,
    #[serde(default = "one")]
    pub ky: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineSource {
    pub cosine: CosineParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSource {
    pub snapshot: PathBuf,
}

/// A spatial field: a number, `{"cosine": {...}}` or `{"snapshot": "file.cgw"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSource {
    Constant(f64),
    Cosine(CosineSource),
    Snapshot(SnapshotSource),
}

impl Default for FieldSource {
    fn default() -> Self {
        FieldSource::Constant(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSource {
    /// Directory holding `node_<n>.cgw` for every node used.
    pub snapshots: PathBuf,
}

/// A space-time field: a time-constant [`FieldSource`] or a directory of
/// per-node snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceTimeSource {
    Steady(FieldSource),
    Series(SeriesSource),
}

impl Default for SpaceTimeSource {
    fn default() -> Self {
        SpaceTimeSource::Steady(FieldSource::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub phi0: FieldSource,
    #[serde(default)]
    pub w0: FieldSource,
}

/// Control used by `simulate`, `grad_check`, `adjoint_test` and
/// `cont_dependence`, and the initial guess of `optimize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub u: SpaceTimeSource,
    #[serde(default)]
    pub v0: FieldSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default)]
    pub k4: f64,
    #[serde(default)]
    pub k5: f64,
    #[serde(default)]
    pub k6: f64,
    #[serde(default)]
    pub nu1: f64,
    #[serde(default)]
    pub nu2: f64,
    #[serde(default)]
    pub targets: TargetsConfig,
}

impl CostConfig {
    /// Used when the `cost` block is absent: track `phi` over Q.
    pub fn default_block() -> Self {
        CostConfig {
            k1: 1.0,
            k2: 0.0,
            k3: 0.0,
            k4: 0.0,
            k5: 0.0,
            k6: 0.0,
            nu1: 0.0,
            nu2: 0.0,
            targets: TargetsConfig::default(),
        }
    }

    pub fn weights(&self) -> [f64; 6] {
        [self.k1, self.k2, self.k3, self.k4, self.k5, self.k6]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetsConfig {
    Fields {
        #[serde(default)]
        phi_q: SpaceTimeSource,
        #[serde(default)]
        w_q: SpaceTimeSource,
        #[serde(default)]
        wprime_q: SpaceTimeSource,
        #[serde(default)]
        phi_omega: FieldSource,
        #[serde(default)]
        w_omega: FieldSource,
        #[serde(default)]
        wprime_omega: FieldSource,
    },
    /// Targets read off the trajectory driven by a known control.
    FromControl {
        #[serde(default)]
        u: SpaceTimeSource,
        #[serde(default)]
        v0: FieldSource,
    },
    /// Targets read off a persisted trajectory stored with stride 1.
    Trajectory { dir: PathBuf },
}

impl Default for TargetsConfig {
    fn default() -> Self {
        TargetsConfig::Fields {
            phi_q: Default::default(),
            w_q: Default::default(),
            wprime_q: Default::default(),
            phi_omega: Default::default(),
            w_omega: Default::default(),
            wprime_omega: Default::default(),
        }
    }
}

fn ten() -> f64 {
    10.0
}

fn minus_ten() -> SpaceTimeSource {
    SpaceTimeSource::Steady(FieldSource::Constant(-10.0))
}

fn plus_ten() -> SpaceTimeSource {
    SpaceTimeSource::Steady(FieldSource::Constant(10.0))
}

fn minus_ten_field() -> FieldSource {
    FieldSource::Constant(-ten())
}

fn plus_ten_field() -> FieldSource {
    FieldSource::Constant(ten())
}

fn big_radius() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibleConfig {
    #[serde(default = "minus_ten")]
    pub u_lo: SpaceTimeSource,
    #[serde(default = "plus_ten")]
    pub u_hi: SpaceTimeSource,
    #[serde(default = "minus_ten_field")]
    pub v_lo: FieldSource,
    #[serde(default = "plus_ten_field")]
    pub v_hi: FieldSource,
    /// V-norm radius `M` of the ball on `v0`.
    #[serde(default = "big_radius")]
    pub radius: f64,
}

impl Default for AdmissibleConfig {
    fn default() -> Self {
        AdmissibleConfig {
            u_lo: minus_ten(),
            u_hi: plus_ten(),
            v_lo: minus_ten_field(),
            v_hi: plus_ten_field(),
            radius: big_radius(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub cg_tol: f64,
    pub cg_maxit: usize,
    pub newton_tol: f64,
    pub newton_maxit: usize,
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig {
            cg_tol: d.cg_tol,
            cg_maxit: d.cg_maxit,
            newton_tol: d.newton_tol,
            newton_maxit: d.newton_maxit,
            max_halvings: d.max_halvings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub stationarity_tol: f64,
    pub armijo_sigma: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub vi_samples: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = OptimizeOptions::default();
        OptimizerConfig {
            max_iters: d.max_iters,
            stationarity_tol: d.stationarity_tol,
            armijo_sigma: d.armijo_sigma,
            backtrack: d.backtrack,
            max_backtracks: d.max_backtracks,
            vi_samples: d.vi_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemorySignConfig {
    #[default]
    Transposed,
    AsPrinted,
}

impl From<MemorySignConfig> for MemorySign {
    fn from(s: MemorySignConfig) -> Self {
        match s {
            MemorySignConfig::Transposed => MemorySign::Transposed,
            MemorySignConfig::AsPrinted => MemorySign::AsPrinted,
        }
    }
}

/// Optional state self-convergence study of `convergence` (CSV only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfConvergenceConfig {
    /// Cells per axis of the reference solution; a multiple of every level.
    pub reference_n: usize,
    /// Reference time steps per coarse step.
    pub time_refinement: usize,
}

impl Default for SelfConvergenceConfig {
    fn default() -> Self {
        SelfConvergenceConfig { reference_n: 512, time_refinement: 16 }
    }
}

/// Parameters of the verification studies run by the subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub taylor_eps: Vec<f64>,
    pub fd_directions: usize,
    pub fd_steps: Vec<f64>,
    pub dot_trials: usize,
    pub cd_deltas: Vec<f64>,
    pub laplacian_levels: Vec<usize>,
    /// Evaluate the optimality certificates after `optimize`.
    pub certificates: bool,
    pub memory_sign: MemorySignConfig,
    pub self_convergence: Option<SelfConvergenceConfig>,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig {
            taylor_eps: vec![1e-1, 1e-2, 1e-3],
            fd_directions: 5,
            fd_steps: vec![1e-2, 1e-3, 1e-4],
            dot_trials: 10,
            cd_deltas: vec![1e-1, 1e-2, 1e-3, 1e-4],
            laplacian_levels: vec![32, 64, 128],
            certificates: false,
            memory_sign: MemorySignConfig::default(),
            self_convergence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Snapshot stride for persisted trajectories.
    pub stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), stride: 1 }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn resolve(path: &mut PathBuf, base: &Path) {
    if path.is_relative() {
        *path = normalize(&base.join(&*path));
    }
}

/// Drops `.` and folds `..` without touching the filesystem.
pub fn normalize(path: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

impl FieldSource {
    fn resolve(&mut self, base: &Path) {
        if let FieldSource::Snapshot(s) = self {
            resolve(&mut s.snapshot, base);
        }
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self, FieldSource::Snapshot(_))
    }

    fn check(&self, what: &str, code: &str) -> Result<()> {
        let finite = match self {
            FieldSource::Constant(c) => c.is_finite(),
            FieldSource::Cosine(c) => {
                let p = c.cosine;
                [p.offset, p.amplitude, p.kx, p.ky].iter().all(|x| x.is_finite())
            }
            FieldSource::Snapshot(_) => true,
        };
        if finite {
            Ok(())
        } else {
            Err(invalid(format!("{code}: {what} must be finite")))
        }
    }

    pub fn sample(&self, grid: &GridSpec) -> Result<Field> {
        match self {
            FieldSource::Constant(c) => Ok(grid.constant(*c)),
            FieldSource::Cosine(c) => {
                let p = c.cosine;
                Ok(CosineProduct::new(p.offset, p.amplitude, p.kx, p.ky).sample(grid))
            }
            FieldSource::Snapshot(s) => io::read_cgw_on(&s.snapshot, grid),
        }
    }
}

impl SpaceTimeSource {
    fn resolve(&mut self, base: &Path) {
        match self {
            SpaceTimeSource::Steady(f) => f.resolve(base),
            SpaceTimeSource::Series(s) => resolve(&mut s.snapshots, base),
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, SpaceTimeSource::Steady(f) if f.is_analytic())
    }

    fn check(&self, what: &str, code: &str) -> Result<()> {
        match self {
            SpaceTimeSource::Steady(f) => f.check(what, code),
            SpaceTimeSource::Series(_) => Ok(()),
        }
    }

    /// Fields at the given time nodes.
    pub fn sample(&self, grid: &GridSpec, nodes: impl Iterator<Item = usize>) -> Result<Vec<Field>> {
        match self {
            SpaceTimeSource::Steady(f) => {
                let field = f.sample(grid)?;
                Ok(nodes.map(|_| field.clone()).collect())
            }
            SpaceTimeSource::Series(s) => io::read_series(&s.snapshots, "node", grid, nodes),
        }
    }
}

impl ProblemConfig {
    /// Parses and validates a JSON document; relative paths are taken
    /// relative to `base`.
    pub fn from_json(text: &str, origin: &Path, base: &Path) -> Result<Self> {
        let mut cfg: ProblemConfig = serde_json::from_str(text)
            .map_err(|e| CliError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes") + "\n"
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.initial.phi0.resolve(base);
        self.initial.w0.resolve(base);
        self.control.u.resolve(base);
        self.control.v0.resolve(base);
        match &mut self.cost.targets {
            TargetsConfig::Fields { phi_q, w_q, wprime_q, phi_omega, w_omega, wprime_omega } => {
                phi_q.resolve(base);
                w_q.resolve(base);
                wprime_q.resolve(base);
                phi_omega.resolve(base);
                w_omega.resolve(base);
                wprime_omega.resolve(base);
            }
            TargetsConfig::FromControl { u, v0 } => {
                u.resolve(base);
                v0.resolve(base);
            }
            TargetsConfig::Trajectory { dir } => resolve(dir, base),
        }
        let a = &mut self.admissible;
        a.u_lo.resolve(base);
        a.u_hi.resolve(base);
        a.v_lo.resolve(base);
        a.v_hi.resolve(base);
        resolve(&mut self.output.dir, base);
    }

    /// True if no field is read from disk, so the problem can be rebuilt on
    /// any grid.
    pub fn is_analytic(&self) -> bool {
        let targets = match &self.cost.targets {
            TargetsConfig::Fields { phi_q, w_q, wprime_q, phi_omega, w_omega, wprime_omega } => {
                phi_q.is_analytic()
                    && w_q.is_analytic()
                    && wprime_q.is_analytic()
                    && phi_omega.is_analytic()
                    && w_omega.is_analytic()
                    && wprime_omega.is_analytic()
            }
            TargetsConfig::FromControl { u, v0 } => u.is_analytic() && v0.is_analytic(),
            TargetsConfig::Trajectory { .. } => false,
        };
        let a = &self.admissible;
        targets
            && self.initial.phi0.is_analytic()
            && self.initial.w0.is_analytic()
            && self.control.u.is_analytic()
            && self.control.v0.is_analytic()
            && a.u_lo.is_analytic()
            && a.u_hi.is_analytic()
            && a.v_lo.is_analytic()
            && a.v_hi.is_analytic()
    }

    /// Parameter checks that need no field data.
    pub fn validate(&self) -> Result<()> {
        let g = self.grid;
        GridSpec::new(g.lx, g.ly, g.nx, g.ny).map_err(|e| invalid(format!("grid: {e}")))?;
        if !(self.time.t_final > 0.0 && self.time.t_final.is_finite()) {
            return Err(invalid("time: t_final must be > 0"));
        }
        if self.time.nt == 0 {
            return Err(invalid("time: nt must be >= 1"));
        }

        let p = self.params;
        for (name, v) in [("alpha", p.alpha), ("beta", p.beta), ("theta_c", p.theta_c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("A1: {name} must be > 0")));
            }
        }
        match self.potential {
            PotentialConfig::Regular => {}
            PotentialConfig::Logarithmic { kappa } => {
                if !(kappa > 0.0 && kappa.is_finite()) {
                    return Err(invalid("A2: kappa must be > 0"));
                }
            }
            PotentialConfig::ObstaclePenalized { epsilon } => {
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(invalid("A2: epsilon must be > 0"));
                }
            }
        }
        let finite_coupling = match self.coupling {
            CouplingConfig::Affine { a, b } => a.is_finite() && b.is_finite(),
            CouplingConfig::BoundedSmooth { c } => c.is_finite(),
        };
        if !finite_coupling {
            return Err(invalid("A3: coupling parameters must be finite"));
        }
        self.initial.phi0.check("phi0", "B1")?;
        self.initial.w0.check("w0", "B1")?;
        self.control.u.check("u", "C4")?;
        self.control.v0.check("v0", "C4")?;

        let c = &self.cost;
        for (name, v) in [
            ("k1", c.k1),
            ("k2", c.k2),
            ("k3", c.k3),
            ("k4", c.k4),
            ("k5", c.k5),
            ("k6", c.k6),
            ("nu1", c.nu1),
            ("nu2", c.nu2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("C2: {name} must be >= 0")));
            }
        }
        if c.weights().iter().all(|&k| k == 0.0) && c.nu1 == 0.0 && c.nu2 == 0.0 {
            return Err(invalid("C2: cost weights k1..k6, nu1, nu2 must not all be zero"));
        }
        match &c.targets {
            TargetsConfig::Fields { phi_q, w_q, wprime_q, phi_omega, w_omega, wprime_omega } => {
                phi_q.check("phi_q", "C3")?;
                w_q.check("w_q", "C3")?;
                wprime_q.check("wprime_q", "C3")?;
                phi_omega.check("phi_omega", "C3")?;
                w_omega.check("w_omega", "C3")?;
                wprime_omega.check("wprime_omega", "C3")?;
            }
            TargetsConfig::FromControl { u, v0 } => {
                u.check("target control u", "C3")?;
                v0.check("target control v0", "C3")?;
            }
            TargetsConfig::Trajectory { .. } => {}
        }

        let a = &self.admissible;
        if !(a.radius > 0.0) {
            return Err(invalid("C4: radius M must be > 0"));
        }
        for (src, name) in [(&a.u_lo, "u_lo"), (&a.u_hi, "u_hi")] {
            src.check(name, "C4")?;
        }
        for (src, name) in [(&a.v_lo, "v_lo"), (&a.v_hi, "v_hi")] {
            src.check(name, "C4")?;
        }

        let s = self.solver;
        if !(s.cg_tol > 0.0 && s.newton_tol > 0.0) || s.cg_maxit == 0 || s.newton_maxit == 0 {
            return Err(invalid("solver: tolerances must be > 0 and iteration limits >= 1"));
        }
        let o = self.optimizer;
        if !(o.armijo_sigma > 0.0 && o.armijo_sigma < 1.0) {
            return Err(invalid("optimizer: armijo_sigma must lie in (0, 1)"));
        }
        if !(o.backtrack > 0.0 && o.backtrack < 1.0) {
            return Err(invalid("optimizer: backtrack must lie in (0, 1)"));
        }
        if !(o.stationarity_tol >= 0.0) || o.vi_samples == 0 {
            return Err(invalid("optimizer: stationarity_tol must be >= 0 and vi_samples >= 1"));
        }

        let k = &self.checks;
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        if k.taylor_eps.len() < 2 || !positive(&k.taylor_eps) {
            return Err(invalid("checks: taylor_eps needs at least two positive values"));
        }
        if k.fd_steps.len() != 3 || !positive(&k.fd_steps) {
            return Err(invalid("checks: fd_steps needs exactly three positive values"));
        }
        if k.cd_deltas.len() < 2 || !positive(&k.cd_deltas) {
            return Err(invalid("checks: cd_deltas needs at least two positive values"));
        }
        if k.fd_directions == 0 || k.dot_trials == 0 {
            return Err(invalid("checks: fd_directions and dot_trials must be >= 1"));
        }
        if k.laplacian_levels.len() < 2 || k.laplacian_levels.iter().any(|&n| n < 3) {
            return Err(invalid("checks: laplacian_levels needs at least two sizes >= 3"));
        }
        if let Some(sc) = k.self_convergence {
            if sc.time_refinement == 0 || sc.reference_n == 0 {
                return Err(invalid("checks: self_convergence factors must be >= 1"));
            }
        }
        if self.output.stride == 0 {
            return Err(invalid("output: stride must be >= 1"));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::new(self.grid.lx, self.grid.ly, self.grid.nx, self.grid.ny).expect("validated grid")
    }

    pub fn potential_spec(&self) -> PotentialSpec {
        match self.potential {
            PotentialConfig::Regular => PotentialSpec::regular(),
            PotentialConfig::Logarithmic { kappa } => PotentialSpec::logarithmic(kappa).expect("validated kappa"),
            PotentialConfig::ObstaclePenalized { epsilon } => {
                PotentialSpec::obstacle_penalized(epsilon).expect("validated epsilon")
            }
        }
    }

    pub fn coupling_spec(&self) -> CouplingSpec {
        match self.coupling {
            CouplingConfig::Affine { a, b } => CouplingSpec::affine(a, b),
            CouplingConfig::BoundedSmooth { c } => CouplingSpec::bounded_smooth(c),
        }
    }

    pub fn optimize_options(&self) -> OptimizeOptions {
        let o = self.optimizer;
        OptimizeOptions {
            max_iters: o.max_iters,
            stationarity_tol: o.stationarity_tol,
            armijo_sigma: o.armijo_sigma,
            backtrack: o.backtrack,
            max_backtracks: o.max_backtracks,
            vi_samples: o.vi_samples,
            seed: self.seed,
        }
    }

    /// Same configuration on another resolution (analytic sources only).
    pub fn at_resolution(&self, n: usize, nt: usize) -> Self {
        let mut c = self.clone();
        let ratio = self.grid.ny as f64 / self.grid.nx as f64;
        c.grid.nx = n;
        c.grid.ny = ((n as f64) * ratio).round() as usize;
        c.time.nt = nt;
        c
    }
}

pub fn parse_config(path: &Path) -> Result<ProblemConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path
        .canonicalize()
        .map_err(|e| CliError::io(path, e))?
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    ProblemConfig::from_json(&text, path, &base)
}

/// Writes `effective_config.json` (defaults materialized, paths absolute).
pub fn echo_config(cfg: &ProblemConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("effective_config.json");
    io::write_atomic(&path, cfg.to_json().as_bytes())?;
    Ok(path)
}

/// Everything a subcommand needs, built from a validated configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub problem: Problem,
    pub control: ControlPair,
    pub cost: CostSpec,
    pub set: AdmissibleSet,
}

impl Setup {
    pub fn build(cfg: &ProblemConfig) -> Result<Self> {
        let grid = cfg.grid_spec();
        let nt = cfg.time.nt;
        let time = TimeGrid::new(cfg.time.t_final, nt).map_err(|e| invalid(format!("time: {e}")))?;
        let params = PhysParams::new(cfg.params.alpha, cfg.params.beta, cfg.params.theta_c)
            .map_err(|e| invalid(format!("A1: {e}")))?;
        let s = cfg.solver;
        let opts = SolverOptions {
            cg_tol: s.cg_tol,
            cg_maxit: s.cg_maxit,
            newton_tol: s.newton_tol,
            newton_maxit: s.newton_maxit,
            max_halvings: s.max_halvings,
        };
        let phi0 = cfg.initial.phi0.sample(&grid)?;
        let w0 = cfg.initial.w0.sample(&grid)?;
        let potential = cfg.potential_spec();
        if let Some(bad) = phi0.iter().find(|&&r| !potential.admits(r)) {
            return Err(invalid(format!(
                "B1: phi0 = {bad} must lie strictly inside ({}, {})",
                potential.r_minus, potential.r_plus
            )));
        }
        let problem = Problem::new(grid, time, params, potential, cfg.coupling_spec(), phi0, w0, opts)
            .map_err(|e| invalid(format!("initial data: {e}")))?;

        let control = ControlPair {
            u: cfg.control.u.sample(&grid, 1..=nt)?,
            v0: cfg.control.v0.sample(&grid)?,
        };
        if !control.u.iter().chain([&control.v0]).all(|f| f.is_finite()) {
            return Err(invalid("C4: control must be finite"));
        }

        let c = &cfg.cost;
        let (k, nu1, nu2) = (c.weights(), c.nu1, c.nu2);
        let cost = match &c.targets {
            TargetsConfig::Fields { phi_q, w_q, wprime_q, phi_omega, w_omega, wprime_omega } => CostSpec {
                k,
                nu1,
                nu2,
                phi_q: phi_q.sample(&grid, 0..=nt)?,
                w_q: w_q.sample(&grid, 0..=nt)?,
                wprime_q: wprime_q.sample(&grid, 0..=nt)?,
                phi_omega: phi_omega.sample(&grid)?,
                w_omega: w_omega.sample(&grid)?,
                wprime_omega: wprime_omega.sample(&grid)?,
            },
            TargetsConfig::FromControl { u, v0 } => {
                let truth = ControlPair { u: u.sample(&grid, 1..=nt)?, v0: v0.sample(&grid)? };
                let traj = solve_state(&problem, &truth).context("target trajectory")?;
                CostSpec::tracking(&traj, k, nu1, nu2).map_err(|e| invalid(format!("C3: {e}")))?
            }
            TargetsConfig::Trajectory { dir } => {
                let stored = io::load_trajectory(dir)?;
                if stored.grid != grid || stored.node_count != nt + 1 {
                    return Err(invalid(format!(
                        "C3: target trajectory in {} does not match the grid or the time steps",
                        dir.display()
                    )));
                }
                let traj = stored
                    .into_full()
                    .ok_or_else(|| invalid("C3: target trajectory must be stored with stride 1"))?;
                CostSpec::tracking(&traj, k, nu1, nu2).map_err(|e| invalid(format!("C3: {e}")))?
            }
        };
        let finite = cost
            .phi_q
            .iter()
            .chain(&cost.w_q)
            .chain(&cost.wprime_q)
            .chain([&cost.phi_omega, &cost.w_omega, &cost.wprime_omega])
            .all(|f| f.is_finite());
        if !finite {
            return Err(invalid("C3: targets must be finite"));
        }
        cost.validate(&grid, nt).map_err(|e| invalid(format!("C2: {e}")))?;

        let a = &cfg.admissible;
        let set = AdmissibleSet {
            u_lo: a.u_lo.sample(&grid, 1..=nt)?,
            u_hi: a.u_hi.sample(&grid, 1..=nt)?,
            v_lo: a.v_lo.sample(&grid)?,
            v_hi: a.v_hi.sample(&grid)?,
            radius: a.radius,
        };
        set.validate(&grid, nt).map_err(|e| invalid(format!("C4: {e}")))?;
        Ok(Setup { problem, control, cost, set })
    }
}
