//! Subcommand bodies. Each returns the files it produced plus manifest notes;
//! `main` writes them out.

use crate::config::RunConfig;
use rough_rbsde::pde::{feynman_kac_crosscheck, rough_pde_limit, solve_obstacle_pde};
use rough_rbsde::problem::ProblemSpec;
use rough_rbsde::rbsde::{
    check_prior_bound, estimate_checks, prior_bound, reflection_report, solve_classical_rbsde, solve_penalized,
    solve_rough_rbsde, solve_unreflected, stability_sweep, write_aggregates_csv, write_manifest, PenaltyLadder,
    SolutionEnsemble,
};
use rough_rbsde::roughpath::{
    approximation_sequence, p_variation, resample_onto, rough_distance, split_by_pvar, write_signal_csv,
    DrivingSignal, IntervalSplit,
};
use rough_rbsde::stopping::{snell_envelope, verify_stopping_identity, write_stopping_region_csv};
use rough_rbsde::{Error, Result};
use std::fmt::Write as _;
use std::io::Write as _;

/// Named output files and `key = value` notes for the manifest.
#[derive(Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub notes: Vec<(String, String)>,
}

impl Outputs {
    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }
}

fn require_signal(cfg: &RunConfig, horizon: f64) -> Result<DrivingSignal> {
    cfg.signal(horizon)?
        .ok_or_else(|| Error::Invalid("this command needs a [signal] section".into()))
}

pub fn lift(cfg: &RunConfig) -> Result<Outputs> {
    let horizon = cfg.problem.horizon.unwrap_or(1.0);
    let sig = require_signal(cfg, horizon)?;
    let s = cfg.signal.as_ref().expect("checked above");
    let p = sig.p();
    let mut out = Outputs::default();

    let mut csv = Vec::new();
    write_signal_csv(&sig, &mut csv, true)?;
    out.file("signal.csv", csv);

    let mut table = String::from("level,cells,pvar,distance,distance_level1,distance_level2\n");
    let total = p_variation(&sig, p, 0.0, horizon)?;
    writeln!(table, "full,{},{total},0,0,0", sig.grid().cells()).unwrap();
    for (n, a) in s.levels.iter().zip(approximation_sequence(&sig, &s.levels)?) {
        let fine = resample_onto(&a, sig.grid())?;
        let d = rough_distance(&fine, &sig, p)?;
        let pv = p_variation(&a, p, 0.0, horizon)?;
        writeln!(
            table,
            "{n},{},{pv},{},{},{}",
            a.grid().cells(),
            d.total,
            d.level1,
            d.level2
        )
        .unwrap();
    }
    out.file("pvariation.csv", table.into_bytes());

    out.note("p", p);
    out.note("pvar_total", total);
    if let Some(delta) = s.split_delta {
        let split = split_by_pvar(&sig, p, delta)?;
        out.note("split_cells", split.cell_count());
        out.note("split_bound", IntervalSplit::count_bound(total, delta, p));
    }
    Ok(out)
}

fn solve_reflected(spec: &ProblemSpec, sig: Option<&DrivingSignal>, cfg: &RunConfig) -> Result<SolutionEnsemble> {
    let fw = cfg.monte_carlo().simulate(spec)?;
    let solver = cfg.solver()?;
    match sig {
        Some(s) => solve_rough_rbsde(spec, s, &fw, &solver),
        None => solve_classical_rbsde(spec, &fw, &solver),
    }
}

fn manifest_notes(run: &SolutionEnsemble, out: &mut Outputs) -> Result<()> {
    let mut m = Vec::new();
    write_manifest(run, &[], &mut m)?;
    for line in String::from_utf8(m).expect("utf-8 manifest").lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            out.note(k, v);
        }
    }
    Ok(())
}

fn estimates_text(spec: &ProblemSpec, sig: Option<&DrivingSignal>, run: &SolutionEnsemble) -> Result<String> {
    let est = estimate_checks(run)?;
    let refl = reflection_report(run, 1e-8);
    let mut t = String::new();
    writeln!(t, "y0 = {}", run.y0()).unwrap();
    writeln!(t, "y0_stderr = {}", run.y0_stderr()).unwrap();
    writeln!(t, "bmo_proxy = {}", est.bmo_proxy).unwrap();
    writeln!(t, "k_t_l2 = {}", est.k_t_l2).unwrap();
    writeln!(t, "k_t_max = {}", est.k_t_max).unwrap();
    writeln!(t, "skorokhod_defect = {}", est.skorokhod_defect).unwrap();
    writeln!(t, "pushes = {}", refl.pushes).unwrap();
    writeln!(t, "complementarity_violations = {}", refl.complementarity_violations).unwrap();
    writeln!(t, "min_margin = {}", refl.min_margin).unwrap();
    if sig.is_none() {
        let bound = prior_bound(spec)?;
        let chk = check_prior_bound(run, &bound, 5.0);
        writeln!(t, "prior_bound = {}", chk.m_bar).unwrap();
        writeln!(t, "max_abs_y = {}", chk.max_abs_y).unwrap();
        writeln!(t, "prior_bound_respected = {}", chk.within).unwrap();
    }
    Ok(t)
}

pub fn solve(cfg: &RunConfig) -> Result<Outputs> {
    let spec = cfg.problem()?;
    let sig = cfg.signal(spec.horizon)?;
    let mut out = Outputs::default();
    let run = match cfg.solver.mode.as_str() {
        "reflected" => {
            let run = solve_reflected(&spec, sig.as_ref(), cfg)?;
            out.file("estimates.txt", estimates_text(&spec, sig.as_ref(), &run)?.into_bytes());
            run
        }
        "unreflected" => {
            let fw = cfg.monte_carlo().simulate(&spec)?;
            solve_unreflected(&spec, sig.as_ref(), &fw, &cfg.solver()?)?
        }
        "penalized" => {
            let pens = &cfg.solver.penalties;
            let &last = pens
                .last()
                .ok_or_else(|| Error::Invalid("solver.penalties is empty".into()))?;
            let fw = cfg.monte_carlo().simulate(&spec)?;
            let solver = cfg.solver()?;
            let ladder = PenaltyLadder::run(&spec, sig.as_ref(), pens, &fw, &solver)?;
            let mut t = String::from("m,y0,stderr,max_violation\n");
            for i in 0..pens.len() {
                writeln!(
                    t,
                    "{},{},{},{}",
                    pens[i], ladder.y0[i], ladder.stderr[i], ladder.max_violation[i]
                )
                .unwrap();
            }
            out.file("ladder.csv", t.into_bytes());
            out.note("worst_drop_in_stderr", ladder.worst_drop_in_stderr());
            solve_penalized(&spec, sig.as_ref(), last, &fw, &solver)?
        }
        other => {
            return Err(Error::Invalid(format!(
                "unknown solver.mode '{other}' (reflected, penalized, unreflected)"
            )))
        }
    };
    let mut agg = Vec::new();
    write_aggregates_csv(&run, &mut agg)?;
    out.file("aggregates.csv", agg);
    out.note("y0", run.y0());
    out.note("y0_stderr", run.y0_stderr());
    manifest_notes(&run, &mut out)?;
    Ok(out)
}

/// The smooth driver handed to the PDE solver.
fn smooth_driver(cfg: &RunConfig, sig: Option<DrivingSignal>) -> Result<Option<DrivingSignal>> {
    let Some(sig) = sig else {
        return Ok(None);
    };
    Ok(Some(match cfg.signal.as_ref().and_then(|s| s.approx_level) {
        Some(n) => approximation_sequence(&sig, &[n])?.remove(0),
        None => sig.to_smooth(),
    }))
}

pub fn pde(cfg: &RunConfig) -> Result<Outputs> {
    let spec = cfg.problem()?;
    let (pcfg, sec) = cfg.pde()?;
    let rough = cfg.signal(spec.horizon)?;
    let driver = smooth_driver(cfg, rough.clone())?;
    let grid = solve_obstacle_pde(&spec, driver.as_ref(), &pcfg)?;
    let mut out = Outputs::default();

    let mut csv = String::from("t,x,u\n");
    let n = grid.n_x();
    let last = grid.times.len() - 1;
    for (i, t) in grid.times.iter().enumerate() {
        if i % sec.csv_stride != 0 && i != last {
            continue;
        }
        for j in 0..n {
            writeln!(csv, "{t},{},{}", grid.xs[j], grid.u[i * n + j]).unwrap();
        }
    }
    out.file("pde.csv", csv.into_bytes());

    if !sec.probes.is_empty() {
        let fk = feynman_kac_crosscheck(
            &spec,
            driver.as_ref(),
            &sec.probes,
            &pcfg,
            &cfg.monte_carlo(),
            &cfg.solver()?,
            sec.rel_tol,
            sec.k_stderr,
        )?;
        let mut t = String::from("x,pde,mc,stderr,gap,tolerance,within\n");
        for g in &fk.probes {
            writeln!(
                t,
                "{},{},{},{},{},{},{}",
                g.x,
                g.pde,
                g.mc,
                g.stderr,
                g.gap,
                g.tolerance,
                g.within()
            )
            .unwrap();
        }
        out.file("fk.csv", t.into_bytes());
        out.note("fk_all_within", fk.all_within());
    }

    let levels = cfg.signal.as_ref().map(|s| s.levels.clone()).unwrap_or_default();
    if let (Some(sig), Some(w), false) = (rough.as_ref(), sec.window, levels.is_empty()) {
        let lim = rough_pde_limit(&spec, sig, &levels, &pcfg, (w[0], w[1]))?;
        let mut t = String::from("level,cauchy_to_next\n");
        for (k, lvl) in levels.iter().enumerate() {
            match lim.cauchy.get(k) {
                Some(c) => writeln!(t, "{lvl},{c}").unwrap(),
                None => writeln!(t, "{lvl},").unwrap(),
            }
        }
        out.file("limit.csv", t.into_bytes());
        out.note("limit_terminal_exact", lim.terminal_exact);
        out.note("limit_tail_not_decreasing", lim.tail_not_decreasing());
    }
    Ok(out)
}

pub fn stop(cfg: &RunConfig) -> Result<Outputs> {
    let spec = cfg.problem()?;
    let sig = cfg.signal(spec.horizon)?;
    let fw = cfg.monte_carlo().simulate(&spec)?;
    let solver = cfg.solver()?;
    let rep = verify_stopping_identity(&spec, sig.as_ref(), &fw, &solver, cfg.stop.rel_tol, cfg.stop.k_stderr)?;
    let mut t = String::new();
    writeln!(t, "reflected = {}", rep.reflected).unwrap();
    writeln!(t, "reflected_stderr = {}", rep.reflected_stderr).unwrap();
    writeln!(t, "snell = {}", rep.snell).unwrap();
    writeln!(t, "snell_stderr = {}", rep.snell_stderr).unwrap();
    writeln!(t, "stopped = {}", rep.stopped).unwrap();
    writeln!(t, "stopped_stderr = {}", rep.stopped_stderr).unwrap();
    writeln!(t, "\npair,gap,tolerance").unwrap();
    for (name, gap, tol) in rep.pairs() {
        writeln!(t, "{name},{gap},{tol}").unwrap();
    }
    writeln!(t, "\nholds = {}", rep.holds()).unwrap();
    let mut out = Outputs::default();
    out.file("stopping.txt", t.into_bytes());
    let snell = snell_envelope(&spec, sig.as_ref(), &fw, &solver)?;
    let mut region = Vec::new();
    write_stopping_region_csv(&snell, &mut region)?;
    out.file("stopping_region.csv", region);
    out.note("identity_holds", rep.holds());
    Ok(out)
}

pub fn converge(cfg: &RunConfig) -> Result<Outputs> {
    let spec = cfg.problem()?;
    let sec = cfg
        .converge
        .as_ref()
        .ok_or_else(|| Error::Invalid("the [converge] section is required".into()))?;
    let sig = cfg.signal(spec.horizon)?;
    let fw = cfg.monte_carlo().simulate(&spec)?;
    let solver = cfg.solver()?;
    let table = match sec.family.as_str() {
        "signal-levels" => {
            let sig = sig.ok_or_else(|| Error::Invalid("family signal-levels needs a [signal] section".into()))?;
            let mut all = sec.levels.clone();
            all.push(sec.reference);
            let approx = approximation_sequence(&sig, &all)?;
            stability_sweep(
                |n| {
                    let k = all.iter().position(|&l| l == n).expect("level in sweep");
                    Ok((spec.clone(), Some(approx[k].clone())))
                },
                &sec.levels,
                sec.reference,
                &fw,
                &solver,
            )?
        }
        "driver-shift" => stability_sweep(
            |n| Ok((spec.clone().shift_driver(0.5f64.powi(n as i32)), sig.clone())),
            &sec.levels,
            sec.reference,
            &fw,
            &solver,
        )?,
        "constant" => stability_sweep(|_| Ok((spec.clone(), sig.clone())), &sec.levels, sec.reference, &fw, &solver)?,
        other => {
            return Err(Error::Invalid(format!(
                "unknown converge.family '{other}' (signal-levels, driver-shift, constant)"
            )))
        }
    };
    let mut t = String::from("level,y_sup,z_h2,k_sup,y0\n");
    for r in &table.rows {
        writeln!(t, "{},{},{},{},{}", r.level, r.y_sup, r.z_h2, r.k_sup, r.y0).unwrap();
    }
    let mut out = Outputs::default();
    out.file("convergence.csv", t.into_bytes());
    out.note("reference_level", table.reference_level);
    out.note("reference_y0", table.reference_y0);
    out.note("decreasing", table.is_decreasing(1, 0.05));
    Ok(out)
}

/// Resolved config followed by the run notes as comments.
pub fn manifest(command: &str, cfg: &RunConfig, notes: &[(String, String)]) -> Vec<u8> {
    let mut m = Vec::new();
    writeln!(m, "# rrbsde {command}").unwrap();
    for (k, v) in notes {
        writeln!(m, "# {k} = {v}").unwrap();
    }
    m.extend_from_slice(cfg.to_toml().as_bytes());
    m
}
