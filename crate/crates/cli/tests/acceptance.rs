//! Acceptance suite: runs the experiment drivers on the shipped configs and
//! prints one PASS/FAIL line per criterion. Built with `harness = false`, so
//! the lines show up in plain `cargo test` output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use caginalp::config::{CouplingConfig, FieldSource, PotentialConfig, SpaceTimeSource};
use caginalp::io::read_cgw;
use caginalp::{parse_config, run_config, Command, ProblemConfig, Setup, Summary};
use caginalp_core::state::solve_state;

// Tolerances checked here on top of the summary rows written by the drivers.
const HOMOGENEOUS_ORACLE_TOL: f64 = 1e-10;
const CUMULATIVE_BALANCE_PER_STEP: f64 = 1e-11;
const INACTIVE_BOX_FRACTION: f64 = 0.5;

struct Verdict {
    id: u8,
    pass: bool,
    detail: String,
}

struct Suite {
    scratch: tempfile::TempDir,
    verdicts: Vec<Verdict>,
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

impl Suite {
    fn config(&self, name: &str, run: &str) -> ProblemConfig {
        let mut cfg = parse_config(&configs_dir().join(format!("{name}.json"))).expect("shipped config parses");
        cfg.output.dir = self.scratch.path().join(run);
        cfg
    }

    fn run(&self, command: Command, cfg: &ProblemConfig) -> Summary {
        match run_config(command, cfg) {
            Ok(o) => o.summary,
            Err(e) => panic!("{} on {}: {e}", command.name(), cfg.output.dir.display()),
        }
    }

    fn record(&mut self, id: u8, pass: bool, detail: String) {
        println!("criterion {id:>2} {}  {detail}", if pass { "PASS" } else { "FAIL" });
        self.verdicts.push(Verdict { id, pass, detail });
    }

    fn verdict_from(&mut self, id: u8, label: &str, summary: &Summary) -> bool {
        let rows: Vec<_> = summary.rows.iter().filter(|r| r.criterion == id).collect();
        let pass = !rows.is_empty() && rows.iter().all(|r| r.pass);
        let detail = rows.iter().map(|r| format!("{}={:.3e}", r.name, r.value)).collect::<Vec<_>>().join(", ");
        self.record(id, pass, format!("[{label}] {}", if rows.is_empty() { "no rows" } else { &detail }));
        pass
    }
}

fn max_abs(fields: impl IntoIterator<Item = f64>) -> f64 {
    fields.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn constant(f: &FieldSource) -> f64 {
    match f {
        FieldSource::Constant(x) => *x,
        _ => panic!("expected a constant field"),
    }
}

fn steady(f: &SpaceTimeSource) -> f64 {
    match f {
        SpaceTimeSource::Steady(f) => constant(f),
        _ => panic!("expected a steady field"),
    }
}

/// Scalar version of the scheme for regular potential and `c tanh` coupling,
/// solving the implicit phase equation by bisection.
fn scalar_oracle(cfg: &ProblemConfig) -> Vec<[f64; 3]> {
    let c = match cfg.coupling {
        CouplingConfig::BoundedSmooth { c } => c,
        _ => panic!("oracle expects bounded_smooth coupling"),
    };
    assert!(matches!(cfg.potential, PotentialConfig::Regular));
    let u = steady(&cfg.control.u);
    let (tau, tc) = (cfg.time.t_final / cfg.time.nt as f64, cfg.params.theta_c);
    let (mut phi, mut w, mut v) = (constant(&cfg.initial.phi0), constant(&cfg.initial.w0), constant(&cfg.control.v0));
    let pi = |r: f64| c * r.tanh();
    let pi_hat = |r: f64| c * r.cosh().ln();
    let mut out = vec![[phi, w, v]];
    for _ in 0..cfg.time.nt {
        let rhs = phi / tau - 2.0 / tc * pi(phi) + v * pi(phi) / (tc * tc);
        let f = |x: f64| x / tau + x * x * x - rhs;
        let (mut lo, mut hi) = (-10.0, 10.0);
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        v = v + tau * u - (pi_hat(x) - pi_hat(phi));
        w += tau * v;
        phi = x;
        out.push([phi, w, v]);
    }
    out
}

/// `|int(v_N + pi_hat(phi_N)) - int(v_0 + pi_hat(phi_0)) - tau sum int(u_n)|`.
fn cumulative_balance(cfg: &ProblemConfig) -> (f64, usize) {
    let s = Setup::build(cfg).expect("setup");
    let p = &s.problem;
    let traj = solve_state(p, &s.control).expect("forward solve");
    let g = &p.grid;
    let total = |n: usize| {
        let e: Vec<f64> = traj.v[n].iter().zip(traj.phi[n].iter()).map(|(v, f)| v + p.coupling.pi_hat(*f)).collect();
        g.integral(&e)
    };
    let source: f64 = s.control.u.iter().map(|u| g.integral(u)).sum::<f64>() * p.tau();
    let nt = p.time.nt;
    ((total(nt) - total(0) - source).abs(), nt)
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).expect("output dir") {
        let path = e.expect("entry").path();
        if path.extension().is_some_and(|x| x == "csv") {
            out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap());
        }
    }
    out
}

fn main() -> ExitCode {
    let mut suite = Suite { scratch: tempfile::tempdir().expect("tempdir"), verdicts: Vec::new() };
    let started = Instant::now();

    // 1 and 8: Laplacian study on 32, 64, 128 and adjoint gap up to 64^2, tau = 2.5e-3.
    let fine = suite.config("adjoint_fine", "convergence");
    assert_eq!(fine.checks.laplacian_levels, [32, 64, 128]);
    assert_eq!((fine.grid.nx, fine.time.nt), (64, 100));
    let conv = suite.run(Command::Convergence, &fine);
    suite.verdict_from(1, "adjoint_fine", &conv);

    // 2: energy balance on 64^2, nt = 200, both potentials, cg_tol = 1e-12.
    let mut c2 = true;
    let mut c2_detail = Vec::new();
    for name in ["reference", "logarithmic"] {
        let mut cfg = suite.config(name, &format!("balance_{name}"));
        cfg.grid.nx = 64;
        cfg.grid.ny = 64;
        cfg.time.nt = 200;
        cfg.solver.cg_tol = 1e-12;
        cfg.output.stride = 200;
        let s = suite.run(Command::Simulate, &cfg);
        let row = s.rows.iter().find(|r| r.criterion == 2).expect("criterion 2 row");
        let (drift, nt) = cumulative_balance(&cfg);
        let ok = row.pass && drift <= CUMULATIVE_BALANCE_PER_STEP * nt as f64;
        c2 &= ok;
        c2_detail.push(format!("{name}: residual/scale={:.3e} cumulative={drift:.3e}", row.value));
    }
    suite.record(2, c2, c2_detail.join("; "));

    // 3: constant data against the driver's replay and an independent bisection oracle.
    let homo = suite.config("homogeneous", "homogeneous");
    let s = suite.run(Command::Simulate, &homo);
    let row = s.rows.iter().find(|r| r.criterion == 3).expect("criterion 3 row");
    let setup = Setup::build(&homo).expect("setup");
    let traj = solve_state(&setup.problem, &setup.control).expect("forward solve");
    let oracle = scalar_oracle(&homo);
    let mut diff: f64 = 0.0;
    for (n, [phi, w, v]) in oracle.iter().enumerate() {
        diff = diff.max(max_abs(traj.phi[n].iter().map(|x| x - phi)));
        diff = diff.max(max_abs(traj.w[n].iter().map(|x| x - w)));
        diff = diff.max(max_abs(traj.v[n].iter().map(|x| x - v)));
    }
    suite.record(
        3,
        row.pass && diff <= HOMOGENEOUS_ORACLE_TOL,
        format!("replay={:.3e} bisection_oracle={diff:.3e}", row.value),
    );

    // 4: separation for the logarithmic reference.
    let log = suite.config("logarithmic", "separation");
    let s = suite.run(Command::Simulate, &log);
    suite.verdict_from(4, "logarithmic", &s);

    // 5 and 7: Taylor remainder and finite differences on the reference config.
    let reference = suite.config("reference", "grad_check");
    assert_eq!((reference.grid.nx, reference.time.nt), (32, 50));
    let grad = suite.run(Command::GradCheck, &reference);
    suite.verdict_from(5, "reference", &grad);

    // 6: dot test over both potentials and both couplings.
    let mut c6 = true;
    let mut c6_detail = Vec::new();
    for name in ["reference", "logarithmic"] {
        for (tag, coupling) in
            [("affine", CouplingConfig::Affine { a: -1.0, b: 0.0 }), ("tanh", CouplingConfig::BoundedSmooth { c: 0.8 })]
        {
            let mut cfg = suite.config(name, &format!("dot_{name}_{tag}"));
            cfg.coupling = coupling;
            assert_eq!(cfg.checks.dot_trials, 10);
            let s = suite.run(Command::AdjointTest, &cfg);
            let row = s.rows.iter().find(|r| r.criterion == 6).expect("criterion 6 row");
            c6 &= row.pass;
            c6_detail.push(format!("{name}/{tag}={:.3e}", row.value));
        }
    }
    suite.record(6, c6, c6_detail.join(", "));

    suite.verdict_from(7, "reference", &grad);

    suite.verdict_from(8, "adjoint_fine", &conv);

    // 9: convex reference; the box must stay inactive at the optimum.
    let convex = suite.config("convex", "convex");
    let s = suite.run(Command::Optimize, &convex);
    let dir = convex.output.dir.join("control");
    let mut umax: f64 = 0.0;
    for e in fs::read_dir(dir.join("u")).expect("control snapshots") {
        umax = umax.max(max_abs(read_cgw(&e.unwrap().path()).expect("snapshot").1.iter().copied()));
    }
    let vmax = max_abs(read_cgw(&dir.join("v0.cgw")).expect("v0 snapshot").1.iter().copied());
    let a = &convex.admissible;
    let inactive = umax < INACTIVE_BOX_FRACTION * steady(&a.u_hi).min(-steady(&a.u_lo))
        && vmax < INACTIVE_BOX_FRACTION * constant(&a.v_hi).min(-constant(&a.v_lo));
    let rows_ok = s.rows.iter().filter(|r| r.criterion == 9).count() == 4 && s.criterion_passed(9) == Some(true);
    let detail = s.rows.iter().filter(|r| r.criterion == 9).map(|r| format!("{}={:.3e}", r.name, r.value));
    let detail = detail.chain([format!("max|u|={umax:.3}"), format!("max|v0|={vmax:.3}")]).collect::<Vec<_>>();
    suite.record(9, rows_ok && inactive, detail.join(", "));

    // 10: recovery of a known control.
    let recovery = suite.config("recovery", "recovery");
    assert_eq!(recovery.cost.nu1, 1e-4);
    let s = suite.run(Command::Optimize, &recovery);
    suite.verdict_from(10, "recovery", &s);

    // 11: continuous dependence on the reference config.
    let cd = suite.config("reference", "cont_dependence");
    let s = suite.run(Command::ContDependence, &cd);
    suite.verdict_from(11, "reference", &s);

    // 12: every subcommand twice with the same seed.
    let mut c12 = true;
    let mut compared = 0;
    for command in Command::ALL {
        let first = suite.config("determinism", &format!("det_a_{}", command.name()));
        let mut second = first.clone();
        second.output.dir = suite.scratch.path().join(format!("det_b_{}", command.name()));
        suite.run(command, &first);
        suite.run(command, &second);
        let (a, b) = (csv_files(&first.output.dir), csv_files(&second.output.dir));
        c12 &= !a.is_empty() && a == b;
        compared += a.len();
    }
    suite.record(12, c12, format!("{} subcommands, {compared} csv files byte-compared", Command::ALL.len()));

    suite.verdicts.sort_by_key(|v| v.id);
    let failed: Vec<_> = suite.verdicts.iter().filter(|v| !v.pass).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.1} s",
        suite.verdicts.len() - failed.len(),
        suite.verdicts.len(),
        started.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        for v in failed {
            eprintln!("failed criterion {}: {}", v.id, v.detail);
        }
        ExitCode::FAILURE
    }
}
