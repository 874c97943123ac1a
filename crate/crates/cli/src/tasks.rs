//! Subcommand drivers. Each writes its artifacts into a run directory and
//! records flags and stage timings in the manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use jeq_core::cusp_model::{default_shifts, solve_cusp_bvp, translation_sequence_test};
use jeq_core::functionals::{energy_et, k_energy};
use jeq_core::geom_core::io::{csv_writer, save_potential, write_potential_csv};
use jeq_core::path_solver::{march_path, normalize_pair};
use jeq_core::subsolution::{asymptotic_deviation, subsolution_slack};
use jeq_core::surface_classes::{
    coefficient_b, donaldson_check, format_rational, restricted_constant_cd, Verdict,
};
use jeq_core::{Grid, HermitianField};

use crate::run::{create_run_dir, log, Manifest};
use crate::scenario::{ConfigError, MetricSpec, Scenario, Task};

/// A metric failing positivity on the grid is a scenario error, not a solver failure.
fn build_metric(spec: &MetricSpec, grid: &Grid, field: &str) -> Result<HermitianField> {
    let f = spec.build(grid);
    f.check_positive(0.0).map_err(|e| ConfigError {
        field: field.to_string(),
        msg: e.to_string(),
    })?;
    Ok(f)
}

fn torus_pair(s: &Scenario, m: &mut Manifest) -> Result<(HermitianField, HermitianField)> {
    let grid = s
        .grid
        .as_ref()
        .expect("validated scenario has a grid")
        .build();
    let metrics = s.metrics.as_ref().expect("validated scenario has metrics");
    let omega = build_metric(&metrics.omega, &grid, "metrics.omega")?;
    let chi = build_metric(&metrics.chi, &grid, "metrics.chi")?;
    if !metrics.normalize {
        return Ok((omega, chi));
    }
    let p = normalize_pair(&omega, &chi)?;
    m.flag(
        "normalization",
        json!({"C": p.c, "omega_scale": p.omega_scale, "chi_scale": p.chi_scale}),
    );
    Ok((p.omega, p.chi))
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T], m: &mut Manifest) -> Result<()> {
    let file = File::create(dir.join(name)).with_context(|| format!("creating {name}"))?;
    let mut w = csv_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    m.output(name);
    Ok(())
}

fn solve_torus(s: &Scenario, dir: &Path, m: &mut Manifest, label: &str) -> Result<()> {
    let (omega, chi) = m.stage("setup", |m| torus_pair(s, m))?;
    let cfg = s
        .path
        .as_ref()
        .expect("validated scenario has a path section");
    let run = m.stage("march_path", |_| Ok(march_path(&omega, &chi, cfg)?))?;
    log(
        label,
        &format!(
            "reached eps = {:e}, t = {} in {} steps, residual {:e}",
            run.final_state.eps,
            run.final_state.t,
            run.trace.len(),
            run.final_state.residual_sup
        ),
    );
    m.stage("write", |m| {
        write_rows(dir, "trace.csv", &run.trace, m)?;
        save_potential(&dir.join("phi_final.jeqf"), &run.final_state.phi)?;
        m.output("phi_final.jeqf");
        write_potential_csv(
            BufWriter::new(File::create(dir.join("phi_final.csv"))?),
            &run.final_state.phi,
        )?;
        m.output("phi_final.csv");
        save_potential(&dir.join("phi_extrapolated.jeqf"), &run.extrapolated)?;
        m.output("phi_extrapolated.jeqf");
        Ok(())
    })?;
    m.flag("converged", true);
    m.flag("final_eps", run.final_state.eps);
    m.flag("final_t", run.final_state.t);
    m.flag("final_residual_sup", run.final_state.residual_sup);
    m.flag("steps", run.trace.len());
    m.flag("delta0_ok_all", run.delta0_ok_all);
    m.flag("extrapolation_order", run.extrapolation_order);
    m.flag(
        "eps_levels",
        run.eps_levels.iter().map(|(e, _)| *e).collect::<Vec<_>>(),
    );
    m.flag("growth_fit", &run.growth_fit);
    m.flag("subsolution_delta", run.subsolution_delta);
    m.flag("warnings", &run.warnings);
    Ok(())
}

#[derive(Serialize)]
struct SlackRow {
    delta_max: f64,
    worst_index: usize,
    s_star_sup: f64,
    asymptotic_deviation: Option<f64>,
}

fn check_subsolution(s: &Scenario, dir: &Path, m: &mut Manifest, label: &str) -> Result<()> {
    let (omega, chi) = m.stage("setup", |m| torus_pair(s, m))?;
    let spec = s
        .subsolution
        .as_ref()
        .expect("validated scenario has a subsolution section");
    let row = m.stage("check", |_| {
        let r = subsolution_slack(&omega, &chi)?;
        let dev = spec
            .rho(&omega.grid)
            .map(|rho| asymptotic_deviation(&omega, &chi, &rho, spec.eta))
            .transpose()?;
        Ok(SlackRow {
            delta_max: r.delta_max,
            worst_index: r.worst_point,
            s_star_sup: r.s_star_sup,
            asymptotic_deviation: dev,
        })
    })?;
    log(
        label,
        &format!(
            "delta_max = {}, worst point {}",
            row.delta_max, row.worst_index
        ),
    );
    m.flag("strict", row.delta_max > 0.0);
    m.stage("write", |m| {
        write_rows(dir, "subsolution.csv", std::slice::from_ref(&row), m)
    })
}

#[derive(Serialize)]
struct EnergyRow {
    state: usize,
    potential: String,
    energy: f64,
    energy_chi: f64,
    energy_ric: f64,
    entropy: f64,
    k_energy: f64,
    mean_scalar_curvature: f64,
    ric_closed: bool,
}

fn energies(s: &Scenario, dir: &Path, m: &mut Manifest, label: &str) -> Result<()> {
    let (omega, chi) = m.stage("setup", |m| torus_pair(s, m))?;
    let spec = s
        .energies
        .as_ref()
        .expect("validated scenario has an energies section");
    let rows = m.stage("functionals", |_| {
        spec.states(&omega.grid)
            .iter()
            .zip(&spec.states)
            .enumerate()
            .map(|(i, (phi, text))| {
                let r = k_energy(phi, &omega)?;
                let ej = energy_et(phi, &omega, &chi)?;
                Ok(EnergyRow {
                    state: i,
                    potential: text.clone(),
                    energy: r.energy,
                    energy_chi: ej.value,
                    energy_ric: r.energy_ric,
                    entropy: r.entropy,
                    k_energy: r.k_energy,
                    mean_scalar_curvature: r.mean_scalar_curvature,
                    ric_closed: r.ric_closed,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    log(label, &format!("{} states evaluated", rows.len()));
    m.stage("write", |m| write_rows(dir, "energies.csv", &rows, m))
}

#[derive(Serialize)]
struct ProfileRow {
    t: f64,
    phi0: f64,
    c: f64,
    residual: f64,
}

#[derive(Serialize)]
struct TranslationRow {
    shift: f64,
    difference: f64,
}

fn solve_cusp(s: &Scenario, dir: &Path, m: &mut Manifest, label: &str) -> Result<()> {
    let spec = s
        .cusp
        .as_ref()
        .expect("validated scenario has a cusp section");
    let geom = spec.geometry().map_err(|msg| ConfigError {
        field: "cusp".into(),
        msg,
    })?;
    let p = m.stage("solve_cusp_bvp", |_| {
        Ok(solve_cusp_bvp(&geom, spec.boundary, &spec.solver)?)
    })?;
    log(
        label,
        &format!(
            "{} Newton iterations, residual {:e}, |s_inf - s_target| = {:e}",
            p.newton_iters, p.residual_sup, p.fit.gap
        ),
    );
    let shifts = default_shifts(&p.phi, spec.window);
    let tr = m.stage("translation", |_| {
        Ok(translation_sequence_test(&p.phi, &shifts, spec.window)?)
    })?;
    m.stage("write", |m| {
        let profile: Vec<ProfileRow> = (0..p.phi0.len())
            .map(|i| ProfileRow {
                t: p.phi.t[i],
                phi0: p.phi0[i],
                c: p.c[i],
                residual: p.residual[i],
            })
            .collect();
        write_rows(dir, "profile.csv", &profile, m)?;
        write_rows(dir, "fit.csv", std::slice::from_ref(&p.fit), m)?;
        let rows: Vec<TranslationRow> = tr
            .shifts
            .iter()
            .zip(&tr.differences)
            .map(|(s, d)| TranslationRow {
                shift: *s,
                difference: *d,
            })
            .collect();
        write_rows(dir, "translation.csv", &rows, m)
    })?;
    m.flag("a", spec.a);
    m.flag("s_target", geom.s_target());
    m.flag("newton_iters", p.newton_iters);
    m.flag("residual_sup", p.residual_sup);
    m.flag("non_product_limit", p.non_product_limit);
    m.flag("translation_monotone", tr.monotone);
    m.flag("translation_decaying", tr.decaying);
    Ok(())
}

fn classes(s: &Scenario, dir: &Path, m: &mut Manifest, label: &str) -> Result<()> {
    let spec = s
        .classes
        .as_ref()
        .expect("validated scenario has a classes section");
    let data = spec.data.as_ref().expect("validated class data");
    let report = m.stage("arithmetic", |_| {
        let fmt = |v: &[jeq_core::surface_classes::Rational]| {
            v.iter().map(format_rational).collect::<Vec<_>>()
        };
        let d = donaldson_check(data)?;
        let mut out = json!({
            "C": format_rational(&d.c),
            "alpha": fmt(&d.alpha),
            "alpha_sq": format_rational(&d.alpha_sq),
            "alpha_dot_omega": format_rational(&d.alpha_dot_omega),
            "verdict": d.verdict,
            "assumptions": d.assumptions,
        });
        if data.divisor.is_some() {
            let r = restricted_constant_cd(data, true)?;
            out["C_D"] = json!(format_rational(&r.c_d));
            out["strict_subsolution_ok"] = json!(r.strict_subsolution_ok);
            if let Some(a) = &spec.a_value {
                out["a"] = json!(format_rational(a));
                match coefficient_b(a, &d.c, &r.c_d) {
                    Ok(b) => out["b"] = json!(format_rational(&b)),
                    Err(e) => out["b_error"] = json!(e.to_string()),
                }
            }
        }
        Ok(out)
    })?;
    log(
        label,
        &format!("C = {}, verdict {}", report["C"], report["verdict"]),
    );
    m.flag(
        "kahler_by_lam",
        report["verdict"] == json!(Verdict::KahlerByLam),
    );
    m.stage("write", |m| {
        std::fs::write(
            dir.join("classes.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
        m.output("classes.json");
        Ok(())
    })
}

fn sweep(s: &Scenario, dir: &Path, m: &mut Manifest, label: &str) -> Result<()> {
    let spec = s
        .sweep
        .as_ref()
        .expect("validated scenario has a sweep section");
    let results: Vec<(String, Result<()>)> = m.stage("members", |_| {
        Ok(spec
            .members
            .par_iter()
            .enumerate()
            .map(|(i, member)| {
                let name = format!("member-{i:02}");
                let sub = dir.join(&name);
                let r = std::fs::create_dir(&sub)
                    .with_context(|| format!("creating {}", sub.display()))
                    .and_then(|_| run_in(member, &sub, &format!("{label}/{name}")));
                (name, r)
            })
            .collect())
    })?;
    let summary: Vec<Value> = results
        .iter()
        .zip(&spec.values)
        .map(|((name, r), v)| {
            json!({
                "dir": name,
                "value": v,
                "status": if r.is_ok() { "ok" } else { "failed" },
                "error": r.as_ref().err().map(|e| format!("{e:#}")),
            })
        })
        .collect();
    m.flag("members", summary);
    for (name, _) in &results {
        m.output(name);
    }
    let failed: Vec<&String> = results
        .iter()
        .filter(|(_, r)| r.is_err())
        .map(|(n, _)| n)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow::anyhow!("sweep members failed: {failed:?}"))
    }
}

/// Runs a validated scenario inside an existing directory, always leaving a manifest.
pub fn run_in(s: &Scenario, dir: &Path, label: &str) -> Result<()> {
    let config = serde_json::to_value(s)?;
    let mut m = Manifest::new(s.task.name(), config);
    log(label, &format!("{} -> {}", s.task.name(), dir.display()));
    let r = match s.task {
        Task::SolveTorus => solve_torus(s, dir, &mut m, label),
        Task::SolveCusp => solve_cusp(s, dir, &mut m, label),
        Task::CheckSubsolution => check_subsolution(s, dir, &mut m, label),
        Task::Classes => classes(s, dir, &mut m, label),
        Task::Energies => energies(s, dir, &mut m, label),
        Task::Sweep => sweep(s, dir, &mut m, label),
    };
    match &r {
        Ok(()) => m.status = "ok".into(),
        Err(e) => {
            m.status = if e.downcast_ref::<ConfigError>().is_some() {
                "config_invalid"
            } else {
                "solver_failed"
            }
            .into();
            m.error = Some(format!("{e:#}"));
            log(label, &format!("failed: {e:#}"));
        }
    }
    m.write(dir)?;
    r
}

/// Creates a fresh run directory under `out` and runs the scenario in it.
pub fn run(s: &Scenario, out: &Path) -> (PathBuf, Result<()>) {
    let config = match serde_json::to_value(s) {
        Ok(c) => c,
        Err(e) => return (out.to_path_buf(), Err(e.into())),
    };
    let dir = match create_run_dir(out, &crate::run::config_hash(&config)) {
        Ok(d) => d,
        Err(e) => return (out.to_path_buf(), Err(e)),
    };
    let r = run_in(s, &dir, s.task.name());
    (dir, r)
}
