//! Dispatch from a validated config to the owning module, artifact writing and
//! the run manifest.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind};
use super::output::{num, row, ArtifactRecord, OutputDir};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::moduli::{find_max_delta, verify_dini, verify_f_concavity, verify_max_regularity, RatioSequence};
use crate::monte_carlo::{convergence_study, two_point_study};
use crate::pde::{calibrate_lambda, solve_system, strong_residual, PicardOptions};
use crate::sde_flow::simulate_flow;
use crate::transport::{nonuniqueness_demo, solve_transport, weak_residual_study, DemoSettings, StochasticSum};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub version: &'static str,
    pub threads: usize,
    pub wall_time_secs: f64,
    /// "ok" or the error that stopped the run.
    pub status: String,
    pub exit_code: i32,
    pub files: Vec<ArtifactRecord>,
    pub config: ExperimentConfig,
}

/// Runs the experiment into its resolved output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest> {
    run_in(cfg, &cfg.resolve_output_dir())
}

/// Runs with at most `threads` workers; results do not depend on the count.
pub fn run_with_threads(cfg: &ExperimentConfig, dir: &Path, threads: Option<usize>) -> Result<Manifest> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| run_in(cfg, dir))
        }
        None => run_in(cfg, dir),
    }
}

/// Runs the experiment and writes `manifest.json` into `dir`, also when the
/// experiment fails after producing partial artifacts. The experiment's
/// error, if any, is returned after the manifest is written.
pub fn run_in(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let hash = cfg.hash();
    let mut out = OutputDir::create(dir, &hash)?;
    let clock = Instant::now();
    let outcome = dispatch(cfg, &mut out);
    let manifest = Manifest {
        kind: cfg.kind,
        config_hash: hash,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        wall_time_secs: clock.elapsed().as_secs_f64(),
        status: outcome.as_ref().map_or_else(|e| e.to_string(), |_| "ok".into()),
        exit_code: outcome.as_ref().map_or_else(|e| e.exit_code(), |_| 0),
        files: out.records().to_vec(),
        config: cfg.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(dir.join(MANIFEST_FILE), bytes)?;
    outcome.map(|_| manifest)
}

fn dispatch(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    match cfg.kind {
        ExperimentKind::PdeSolve => pde_solve(cfg, out),
        ExperimentKind::LambdaSweep => lambda_sweep(cfg, out),
        ExperimentKind::FlowSim => flow_sim(cfg, out),
        ExperimentKind::FlowModulus => flow_modulus(cfg, out),
        ExperimentKind::MollifyConvergence => mollify_convergence(cfg, out),
        ExperimentKind::Transport => transport(cfg, out),
        ExperimentKind::WeakResidual => weak_residual(cfg, out),
        ExperimentKind::NonuniquenessDemo => demo(cfg, out),
        ExperimentKind::ModulusVerify => modulus_verify(cfg, out),
    }
}

fn coord_header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

fn header_with(prefix: &[&str], d: usize, suffix: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend(coord_header(d));
    h.extend(suffix.iter().map(|s| s.to_string()));
    h
}

fn refs(h: &[String]) -> Vec<&str> {
    h.iter().map(String::as_str).collect()
}

/// Up to `count` evenly spread step indices, always including 0 and the last.
fn snapshot_steps(steps: usize, count: usize) -> Vec<usize> {
    if count <= 1 {
        return vec![steps];
    }
    let stride = steps.div_ceil(count - 1).max(1);
    let mut ks: Vec<usize> = (0..steps).step_by(stride).collect();
    ks.push(steps);
    ks
}

fn pde_solve(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let space = cfg.space_grid()?;
    let time = cfg.time_grid()?;
    let b = cfg.drift_spec()?;
    let (source, amp) = (cfg.pde.source.as_str(), cfg.pde.amp);
    let f = GridFunction::from_fn(space.clone(), time, 1, |_, x, o| {
        o[0] = amp
            * match source {
                "sine" => x.iter().map(|v| v.sin()).product(),
                "constant" => 1.0,
                _ => (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp(),
            }
    });
    let g = GridFunction::from_fn(space.clone(), time, space.dim, |t, x, o| b.eval(t, x, o));
    let sol = solve_system(&f, &g, cfg.pde.lambda, &PicardOptions::default(), None)?;
    let last = time.steps;
    let rows: Vec<Vec<String>> = (0..space.len())
        .map(|idx| {
            let mut r = row(space.point(idx));
            r.push(num(sol.u.slice(last, 0)[idx]));
            r
        })
        .collect();
    out.csv("solution.csv", &refs(&header_with(&[], space.dim, &["u"])), &rows)?;
    let ratios: Vec<Vec<String>> = sol
        .contraction_ratios
        .iter()
        .enumerate()
        .map(|(i, &r)| vec![i.to_string(), num(r)])
        .collect();
    out.csv("contraction.csv", &["iteration", "ratio"], &ratios)?;
    #[derive(Serialize)]
    struct Summary {
        iterations: usize,
        subintervals: usize,
        picard_residual: f64,
        strong_residual: f64,
        sup_norm: f64,
    }
    out.json(
        "summary.json",
        &Summary {
            iterations: sol.iterations,
            subintervals: sol.subintervals,
            picard_residual: sol.residual,
            strong_residual: strong_residual(&sol.u, &f, &g, cfg.pde.lambda),
            sup_norm: sol.u.sup_norm(),
        },
    )
}

fn lambda_sweep(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let space = cfg.space_grid()?;
    let horizon = cfg.time.end - cfg.time.start;
    let b = cfg.drift_spec()?;
    match calibrate_lambda(&b, horizon, &space, cfg.dt(), cfg.mc.lambda_max_power) {
        Ok(cal) => {
            let rows: Vec<Vec<String>> = cal.table.iter().map(|r| row([r.lambda, r.grad_sup])).collect();
            out.csv("decay.csv", &["lambda", "grad_sup"], &rows)?;
            #[derive(Serialize)]
            struct Summary {
                lambda0: f64,
                slope: Option<f64>,
                strictly_decreasing: bool,
            }
            out.json(
                "summary.json",
                &Summary {
                    lambda0: cal.lambda0,
                    slope: cal.slope,
                    strictly_decreasing: cal.strictly_decreasing,
                },
            )
        }
        Err(Error::NotReached { table }) => {
            let rows: Vec<Vec<String>> = table.iter().map(|&(l, g)| row([l, g])).collect();
            out.csv("decay.csv", &["lambda", "grad_sup"], &rows)?;
            Err(Error::NotReached { table })
        }
        Err(e) => Err(e),
    }
}

fn flow_sim(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let b = cfg.drift_spec()?;
    let points = cfg.points();
    let ens = simulate_flow(&b, &points, &cfg.flow_config())?;
    let d = ens.dim;
    let mut rows = Vec::with_capacity(ens.paths * points.len() * ens.time.points());
    for path in 0..ens.paths {
        for q in 0..points.len() {
            for k in 0..ens.time.points() {
                let mut r = vec![path.to_string(), q.to_string(), num(ens.time.time(k))];
                r.extend(row(ens.state(path, q, k).iter().copied()));
                rows.push(r);
            }
        }
    }
    out.csv("trajectories.csv", &refs(&header_with(&["path", "point", "t"], d, &[])), &rows)?;
    let finals: Vec<Vec<String>> = (0..points.len())
        .flat_map(|q| {
            let ens = &ens;
            (0..d).map(move |i| {
                let v: Vec<f64> = (0..ens.paths).map(|p| ens.final_state(p, q)[i]).collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len().max(2) - 1) as f64;
                vec![q.to_string(), (i + 1).to_string(), num(mean), num(var)]
            })
        })
        .collect();
    out.csv("final_moments.csv", &["point", "component", "mean", "variance"], &finals)?;
    out.json("summary.json", &ens.increment_check())
}

fn flow_modulus(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let b = cfg.drift_spec()?;
    let base = cfg.points()[0].clone();
    let (ladder, fit) = two_point_study(
        &b,
        &base,
        &cfg.mc.separations,
        &cfg.flow_config(),
        cfg.mc.p,
        cfg.mc.gradient,
        cfg.mc.model,
    )?;
    let rows: Vec<Vec<String>> = ladder.iter().map(|r| row([r.r, r.estimate, r.ci])).collect();
    out.csv("ladder.csv", &["r", "moment", "ci95"], &rows)?;
    out.json("fit.json", &fit)
}

fn mollify_convergence(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let b = cfg.drift_spec()?;
    let table = convergence_study(&b, &cfg.mc.n_list, &cfg.points(), &cfg.flow_config(), cfg.mc.p)?;
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|r| row([r.n, r.x_error, r.x_ci, r.grad_error, r.grad_ci]))
        .collect();
    out.csv(
        "convergence.csv",
        &["n", "state_error", "state_ci95", "gradient_error", "gradient_ci95"],
        &rows,
    )?;
    #[derive(Serialize)]
    struct Summary {
        state_errors_decreasing: bool,
        gradient_errors_decreasing: bool,
    }
    out.json(
        "summary.json",
        &Summary {
            state_errors_decreasing: table.windows(2).all(|w| w[1].x_error < w[0].x_error),
            gradient_errors_decreasing: table.windows(2).all(|w| w[1].grad_error < w[0].grad_error),
        },
    )
}

fn transport(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let b = cfg.drift_spec()?;
    let grid = cfg.space_grid()?;
    let tc = &cfg.transport;
    let sol = solve_transport(&b, &tc.initial, &grid, &cfg.flow_config(), tc.method)?;
    let ks = snapshot_steps(sol.time.steps, tc.snapshots);
    let mut rows = Vec::new();
    for path in 0..tc.snapshot_paths.min(sol.paths) {
        for &k in &ks {
            for (idx, &u) in sol.slice(path, k).iter().enumerate() {
                let mut r = vec![path.to_string(), num(sol.time.time(k))];
                r.extend(row(grid.point(idx)));
                r.push(num(u));
                rows.push(r);
            }
        }
    }
    out.csv("snapshots.csv", &refs(&header_with(&["path", "t"], grid.dim, &["u"])), &rows)?;
    let u0 = sol.slice(0, 0);
    #[derive(Serialize)]
    struct Summary {
        initial_min: f64,
        initial_max: f64,
        min: f64,
        max: f64,
    }
    let fold = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (initial_min, initial_max) = fold(u0);
    let (min, max) = fold(&sol.u);
    out.json(
        "summary.json",
        &Summary {
            initial_min,
            initial_max,
            min,
            max,
        },
    )
}

fn weak_residual(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let b = cfg.drift_spec()?;
    let grid = cfg.space_grid()?;
    let tc = &cfg.transport;
    let study = |sum| weak_residual_study(&b, &tc.initial, &grid, &cfg.flow_config(), &tc.test_function, tc.method, sum);
    let res = study(StochasticSum::Ito)?;
    let strat = if tc.stratonovich_check {
        Some(study(StochasticSum::Stratonovich)?)
    } else {
        None
    };
    let points = res.times.len();
    let rows: Vec<Vec<String>> = res
        .per_path
        .iter()
        .enumerate()
        .map(|(i, &v)| vec![(i / points).to_string(), num(res.times[i % points]), num(v)])
        .collect();
    out.csv("residual.csv", &["path", "t", "residual"], &rows)?;
    let mut header = vec!["t", "mean", "ci95", "rms"];
    if strat.is_some() {
        header.extend(["strat_mean", "strat_ci95", "strat_rms"]);
    }
    let stats: Vec<Vec<String>> = (0..points)
        .map(|k| {
            let mut r = row([res.times[k], res.mean[k], res.ci[k], res.rms[k]]);
            if let Some(s) = &strat {
                r.extend(row([s.mean[k], s.ci[k], s.rms[k]]));
            }
            r
        })
        .collect();
    out.csv("residual_stats.csv", &header, &stats)?;
    #[derive(Serialize)]
    struct Summary {
        final_mean: f64,
        final_ci95: f64,
        final_rms: f64,
        mean_within_ci: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        stratonovich_final_mean: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        stratonovich_final_ci95: Option<f64>,
    }
    let (mean, ci) = res.final_mean();
    let strat_final = strat.as_ref().map(|s| s.final_mean());
    out.json(
        "summary.json",
        &Summary {
            final_mean: mean,
            final_ci95: ci,
            final_rms: res.final_rms(),
            mean_within_ci: mean.abs() <= ci,
            stratonovich_final_mean: strat_final.map(|v| v.0),
            stratonovich_final_ci95: strat_final.map(|v| v.1),
        },
    )
}

fn demo(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let settings = DemoSettings {
        n_list: cfg.mc.n_list.clone(),
        ode_steps: cfg.demo.ode_steps,
        flow: cfg.flow_config(),
    };
    let rep = nonuniqueness_demo(cfg.demo.alpha, &settings)?;
    let rows: Vec<Vec<String>> = rep
        .branches
        .iter()
        .map(|r| row([r.t, 0.0, r.escaping, r.stationary_residual, r.escaping_residual]))
        .collect();
    out.csv(
        "branches.csv",
        &["t", "stationary", "escaping", "stationary_residual", "escaping_residual"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = rep
        .deterministic
        .iter()
        .map(|r| row([r.n, r.plus_shift, r.minus_shift, r.centered]))
        .collect();
    out.csv(
        "deterministic_illustration.csv",
        &["n", "shift_plus", "shift_minus", "centered"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = rep.stochastic.iter().map(|r| row([r.n, r.gap, r.ci])).collect();
    out.csv("stochastic_gaps.csv", &["n", "gap", "ci95"], &rows)?;
    #[derive(Serialize)]
    struct Summary {
        alpha: f64,
        horizon: f64,
        max_branch_residual: f64,
        gaps_decreasing: bool,
        deterministic_note: &'static str,
    }
    out.json(
        "summary.json",
        &Summary {
            alpha: rep.alpha,
            horizon: rep.horizon,
            max_branch_residual: rep.max_branch_residual,
            gaps_decreasing: rep.gaps_decreasing,
            deterministic_note: "illustration: shifted mollifiers select different branches",
        },
    )
}

fn ratio_rows(name: &str, seq: &RatioSequence) -> Vec<Vec<String>> {
    seq.radii
        .iter()
        .zip(&seq.ratios)
        .map(|(&r, &v)| vec![name.to_string(), num(r), num(v)])
        .collect()
}

fn modulus_verify(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<()> {
    let sec = cfg.modulus.as_ref().expect("validated");
    let m = sec.build()?;
    let dini = verify_dini(&m);
    let rows: Vec<Vec<String>> = dini
        .partial_sums
        .iter()
        .enumerate()
        .map(|(i, &s)| vec![i.to_string(), num(s)])
        .collect();
    out.csv("dini_partial_sums.csv", &["level", "partial_integral"], &rows)?;
    #[derive(Serialize)]
    struct Report<'a> {
        family: &'a str,
        claimed_class: crate::moduli::RegularityClass,
        is_dini: bool,
        dini_integral: f64,
        max_regularity: Option<bool>,
        inner_limit: Option<f64>,
        outer_limit: Option<f64>,
        concavity: Option<crate::moduli::FDeltaReport>,
        max_delta: Option<f64>,
        note: Option<String>,
    }
    let mut report = Report {
        family: &sec.family,
        claimed_class: m.claimed_class,
        is_dini: dini.is_dini,
        dini_integral: dini.integral,
        max_regularity: None,
        inner_limit: None,
        outer_limit: None,
        concavity: None,
        max_delta: None,
        note: None,
    };
    if !dini.is_dini {
        report.note = Some("partial integrals do not settle; the remaining checks need a Dini modulus".into());
        out.json("report.json", &report)?;
        return Err(Error::NotDini {
            partial: dini.integral,
        });
    }
    match verify_max_regularity(&m) {
        Ok(reg) => {
            let mut rows = ratio_rows("inner", &reg.inner);
            rows.extend(ratio_rows("outer", &reg.outer));
            out.csv("ratios.csv", &["sequence", "r", "ratio"], &rows)?;
            report.max_regularity = Some(reg.max_regularity);
            report.inner_limit = reg.inner.limit_estimate;
            report.outer_limit = reg.outer.limit_estimate;
        }
        Err(Error::InconclusiveLimit(why)) => report.note = Some(why),
        Err(e) => return Err(e),
    }
    report.max_delta = find_max_delta(&m, sec.p)?;
    if let Some(delta) = sec.delta.or(report.max_delta) {
        report.concavity = Some(verify_f_concavity(&m, sec.p, delta)?);
    }
    out.json("report.json", &report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli_io::config::parse_config_with;

    fn cfg(kind: ExperimentKind, sets: &[&str]) -> ExperimentConfig {
        let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        parse_config_with("", Some(kind), &sets).unwrap()
    }

    #[test]
    fn snapshot_steps_cover_both_ends() {
        assert_eq!(snapshot_steps(16, 5), vec![0, 4, 8, 12, 16]);
        assert_eq!(snapshot_steps(10, 4), vec![0, 4, 8, 10]);
        assert_eq!(snapshot_steps(3, 17), vec![0, 1, 2, 3]);
    }

    #[test]
    fn flow_sim_writes_manifest_and_hashed_csv() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(ExperimentKind::FlowSim, &["mc.paths=3", "time.dt=0.25"]);
        let man = run_in(&c, dir.path()).unwrap();
        assert_eq!(man.exit_code, 0);
        let names: Vec<&str> = man.files.iter().map(|f| f.file.as_str()).collect();
        assert_eq!(names, ["trajectories.csv", "final_moments.csv", "summary.json"]);
        let text = std::fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
        assert!(text.starts_with(&format!("# config-hash: {}\npath,point,t,x1\n0,0,0,0\n", c.hash())));
        assert_eq!(text.lines().count(), 2 + 3 * 5);
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn lambda_sweep_grad_sup_is_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(
            ExperimentKind::LambdaSweep,
            &["drift.kind=tanh", "grid.n=65", "time.dt=0.0625", "mc.lambda_max_power=5"],
        );
        run_in(&c, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("decay.csv")).unwrap();
        let col: Vec<f64> = text.lines().skip(2).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(col.len(), 6);
        assert!(col.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn non_dini_modulus_fails_with_a_report() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(
            ExperimentKind::ModulusVerify,
            &["modulus.family=inverse-log", "modulus.alpha=1.0", "modulus.r0=0.5"],
        );
        let err = run_in(&c, dir.path()).unwrap_err();
        assert!(matches!(err, Error::NotDini { .. }));
        assert_eq!(err.exit_code(), 3);
        assert!(dir.path().join("report.json").exists());
        let man: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(man["exit_code"], 3);
    }
}
