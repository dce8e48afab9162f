use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use wavebranch_core::branch::{self, BranchOptions, BranchPoint, RawPoint, StepControl, StopReason, StripSystem, CSV_HEADER};
use wavebranch_core::error::WaveError;
use wavebranch_core::lyapunov::{self, local_branches, EmbeddedFamily, ModelCase, ModelFamily, SwitchOptions};
use wavebranch_core::physical::{self, PairMember, WavePair};
use wavebranch_core::spectrum1d::{nu0, rho0_of_stream};
use wavebranch_core::stream::{self, Regime, StreamFamily};
use wavebranch_core::strip::{self, StripField, StripGrid};
use wavebranch_core::vorticity::VorticitySpec;

use crate::config::{RunConfig, UsageError};

fn family(cfg: &RunConfig) -> Result<StreamFamily> {
    Ok(StreamFamily::new(VorticitySpec::new(cfg.omega.clone())?)?)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output.clone().expect("output resolved by effective_config");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Writes through a temporary file so a crash never leaves a partial file.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn stream(cfg: &RunConfig, theta_min: f64, theta_max: f64, n: usize) -> Result<ExitCode> {
    if n < 2 || !(theta_max > theta_min) {
        bail!(UsageError("need n >= 2 and theta-max > theta-min".into()));
    }
    let spec = VorticitySpec::new(cfg.omega.clone())?;
    let mut out = String::from("theta,d,R,F,S\n");
    for k in 0..n {
        let th = theta_min + (theta_max - theta_min) * k as f64 / (n - 1) as f64;
        let s = stream::stream_at(&spec, th)?;
        writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", s.theta, s.depth, s.r, s.froude, s.flow_force)?;
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

pub fn critical(cfg: &RunConfig) -> Result<ExitCode> {
    let fam = family(cfg)?;
    let s = fam.summary;
    println!("theta0={}", s.theta0);
    println!("theta_c={}", s.theta_c);
    println!("R_c={}", s.r_c);
    println!("F_c={}", stream::froude(&fam.spec, s.theta_c)?);
    match s.r0 {
        Some(r0) => println!("R0={r0}"),
        None => println!("R0=inf"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn spectrum1d(cfg: &RunConfig, r: f64, grid_n: usize) -> Result<ExitCode> {
    let fam = family(cfg)?;
    let theta = fam.solve_theta(r, Regime::Supercritical)?;
    let s = stream::stream_at(&fam.spec, theta)?;
    println!("R={r}");
    println!("theta={theta}");
    println!("d={}", s.depth);
    println!("rho0={}", rho0_of_stream(&s, &fam.spec)?);
    println!("nu0={}", nu0(&fam.spec, &s, grid_n)?);
    Ok(ExitCode::SUCCESS)
}

fn grid_for(cfg: &RunConfig, fam: &StreamFamily, r: f64) -> Result<StripGrid> {
    let theta = fam.solve_theta(r, Regime::Supercritical)?;
    let d = stream::depth(&fam.spec, theta)?;
    Ok(StripGrid::new(cfg.grid.l_over_d * d, cfg.grid.nq, cfg.grid.np)?)
}

fn solve_wave(cfg: &RunConfig, fam: &StreamFamily, r: f64, perturb: f64) -> Result<(StripField, strip::NewtonReport)> {
    let grid = grid_for(cfg, fam, r)?;
    let mut f = strip::initial_guess_in(fam, r, grid)?;
    if perturb != 0.0 {
        // A few seeded smooth modes, even in q, vanishing at the bottom and
        // at the far end.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let amps: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut u = f.unknowns();
        for (k, v) in u.iter_mut().enumerate() {
            let (i, j) = (k / (grid.np - 1), k % (grid.np - 1) + 1);
            let x = grid.q(i) / grid.l;
            let modes: f64 = amps.iter().enumerate().map(|(m, a)| a * ((m as f64 + 0.5) * std::f64::consts::PI * x).cos()).sum();
            *v += perturb * grid.p(j) * modes;
        }
        f.set_unknowns(&u);
    }
    Ok(strip::newton_solve_report(&f, &fam.spec, cfg.solver.tol, cfg.solver.max_iter)?)
}

pub fn solve(cfg: &RunConfig, r: f64, perturb: f64) -> Result<ExitCode> {
    let fam = family(cfg)?;
    let (f, report) = solve_wave(cfg, &fam, r, perturb)?;
    let dir = out_dir(cfg)?;
    write_atomic(&dir.join("solution.txt"), &strip::checkpoint_string(&f, &fam.spec))?;
    let profile = physical::reconstruct(&f, &fam.spec)?;
    profile.write_csv(&dir.join("profile.csv"))?;
    let s_minus = fam.flow_force_of_r(r, Regime::Supercritical)?;
    let summary = json!({
        "R": f.r,
        "theta": f.theta,
        "depth_far": profile.depth_far,
        "xi0": f.crest(),
        "newton_iterations": report.iterations,
        "residual": report.residual,
        "flow_force": profile.flow_force,
        "flow_force_variation": profile.flow_force_variation,
        "relative_selection_defect": physical::verify_flow_force_selection(&profile, &fam.spec)? / s_minus,
        "mass_flux_defect": profile.mass_flux_defect,
        "shape": profile.shape(),
    });
    print!("{}", to_json(&summary)?);
    Ok(ExitCode::SUCCESS)
}

pub fn continue_branch(cfg: &RunConfig, r_start: f64) -> Result<ExitCode> {
    let fam = family(cfg)?;
    let (start, _) = solve_wave(cfg, &fam, r_start, 0.0)?;
    let dir = out_dir(cfg)?;
    // The output location is not a run parameter; leaving it out keeps
    // re-runs into different directories byte-identical.
    let saved = RunConfig { output: None, ..cfg.clone() };
    write_atomic(&dir.join("config.toml"), &saved.to_toml())?;
    let c = &cfg.continuation;
    let mut ctrl = StepControl::new(c.ds);
    ctrl.tol = cfg.solver.tol;
    let opts = BranchOptions { breach_fraction: c.breach_fraction, spectra: c.spectra };
    let mut csv = format!("{CSV_HEADER}\n");
    let run = branch::continue_branch(&start, &fam, c.steps, &ctrl, opts, |p, k| {
        branch::write_point_checkpoint(&dir, k, p, &fam)?;
        csv.push_str(&branch::csv_row(k, p));
        csv.push('\n');
        Ok(())
    })?;
    write_atomic(&dir.join("branch.csv"), &csv)?;
    let samples: Vec<_> = run.points.iter().map(BranchPoint::sample).collect();
    let events = if c.spectra { branch::detect_events(&samples) } else { turning_only(&samples) };
    let stop = match &run.stop {
        StopReason::Budget => "budget".to_string(),
        StopReason::Requested(why) => why.clone(),
        StopReason::Stall { t } => format!("stall at t = {t}"),
    };
    write_atomic(&dir.join("events.json"), &to_json(&json!({ "stop": stop, "events": events }))?)?;
    eprintln!("{} points, stop: {stop}", run.points.len());
    run.into_result()?;
    Ok(ExitCode::SUCCESS)
}

/// Without spectra only R and the margins carry information.
fn turning_only(samples: &[branch::Sample]) -> Vec<branch::BranchEvent> {
    branch::detect_events(samples)
        .into_iter()
        .filter(|e| !matches!(e, branch::BranchEvent::EigenCrossing { .. }))
        .collect()
}

struct BranchRow {
    step: usize,
    t: f64,
    r: f64,
    xi0: f64,
}

fn read_branch_csv(dir: &Path) -> Result<Vec<BranchRow>> {
    let path = dir.join("branch.csv");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(WaveError::Format(format!("{}: unexpected header", path.display())).into());
    }
    let mut rows = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let num = |k: usize| -> Result<f64> {
            cols.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| WaveError::Format(format!("{}: bad row `{line}`", path.display())).into())
        };
        let step = cols[0].parse().map_err(|_| WaveError::Format(format!("bad step in `{line}`")))?;
        rows.push(BranchRow { step, t: num(1)?, r: num(2)?, xi0: num(3)? });
    }
    Ok(rows)
}

fn point_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("point_{step:04}.txt"))
}

fn read_points(dir: &Path, rows: &[BranchRow]) -> Result<(Vec<(f64, StripField)>, VorticitySpec)> {
    let mut points = Vec::with_capacity(rows.len());
    let mut spec = None;
    for row in rows {
        let path = point_path(dir, row.step);
        let (f, s) = strip::read_checkpoint(&path).with_context(|| format!("reading {}", path.display()))?;
        spec.get_or_insert(s);
        points.push((row.t, f));
    }
    let spec = spec.ok_or_else(|| WaveError::Precondition(format!("{}: empty branch", dir.display())))?;
    Ok((points, spec))
}

/// t of a checkpoint from the branch.csv beside it, if there is one.
fn lookup_t(path: &Path) -> Option<f64> {
    let step: usize = path.file_stem()?.to_str()?.strip_prefix("point_")?.parse().ok()?;
    let rows = read_branch_csv(path.parent()?).ok()?;
    rows.iter().find(|r| r.step == step).map(|r| r.t)
}

pub fn ls_reduce(cfg: &RunConfig, a: &Path, b: &Path) -> Result<ExitCode> {
    let (fa, spec) = strip::read_checkpoint(a).with_context(|| format!("reading {}", a.display()))?;
    let (fb, _) = strip::read_checkpoint(b).with_context(|| format!("reading {}", b.display()))?;
    let fam = StreamFamily::new(spec)?;
    let (ta, tb) = match (lookup_t(a), lookup_t(b)) {
        (Some(x), Some(y)) => (x, y),
        _ => (0.0, 1.0),
    };
    let pa = BranchPoint::new(fa, ta, &fam, 0)?;
    let pb = BranchPoint::new(fb, tb, &fam, 0)?;
    let opts = SwitchOptions { tol: cfg.solver.tol, ..Default::default() };
    let sys = StripSystem::new(fam.clone(), pa.field.grid);
    let raw = |p: &BranchPoint| RawPoint { u: p.field.unknowns(), r: p.field.r, t: p.t, newton_iters: 0 };
    let emb = EmbeddedFamily::at_crossing(&sys, &raw(&pa), &raw(&pb), opts.ctrl, opts.shift)?;
    let local = local_branches(&emb, opts.s_max, opts.lambda_max, &opts.lattice)?;
    let (seed_field, seed) = lyapunov::switch_branch(&pa, &pb, &fam, &opts)?;
    let dir = out_dir(cfg)?;
    write_atomic(&dir.join("secondary_seed.txt"), &strip::checkpoint_string(&seed_field, &fam.spec))?;
    print!("{}", to_json(&json!({ "t_star": emb.t_star, "local": local, "seed": seed }))?);
    Ok(ExitCode::SUCCESS)
}

pub fn model_bifurcate(case: &str, s_max: f64, lambda_max: f64) -> Result<ExitCode> {
    let Some(c) = ModelCase::parse(case) else {
        let names: Vec<&str> = ModelCase::ALL.iter().map(|c| c.name()).collect();
        bail!(UsageError(format!("unknown case `{case}`; expected one of {}", names.join(", "))));
    };
    let local = local_branches(&ModelFamily(c), s_max, lambda_max, &Default::default())?;
    print!("{}", to_json(&json!({ "case": c.name(), "local": local }))?);
    Ok(ExitCode::SUCCESS)
}

pub fn pairs(branch_dir: &Path, secondary: Option<&Path>, levels: usize, out: Option<&Path>, tol: f64) -> Result<ExitCode> {
    let rows = read_branch_csv(branch_dir)?;
    let (points, spec) = read_points(branch_dir, &rows)?;
    let fam = StreamFamily::new(spec)?;
    let tr: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.r)).collect();
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| branch_dir.join("pairs.json"));
    let out_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(out_dir)?;

    let (search, second_points) = match secondary {
        None => (physical::turning_pairs(&tr, None, levels)?, None),
        Some(sdir) => {
            let srows = read_branch_csv(sdir)?;
            let (spoints, _) = read_points(sdir, &srows)?;
            let st: Vec<(f64, f64)> = srows.iter().map(|r| (r.t, r.r)).collect();
            let t_star = crossing_t(branch_dir)?;
            let (lo, hi) = st.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
            let m = levels.max(1);
            let ls: Vec<f64> = (0..m).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / m as f64).collect();
            (physical::secondary_pairs(&tr, &st, t_star, &ls)?, Some(spoints))
        }
    };

    let mut verified: Vec<WavePair> = Vec::new();
    for pair in search.pairs.iter().cloned() {
        let second = second_points.as_deref().unwrap_or(&points);
        let a = physical::resolve_member(&points, pair.first.t, pair.r, &fam)?;
        let b = physical::resolve_member(second, pair.second.t, pair.r, &fam)?;
        let dist = a.h.iter().zip(&b.h).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if (a.r - b.r).abs() > physical::PAIR_R_TOL || !(dist > 10.0 * tol) {
            continue;
        }
        let k = verified.len();
        let names = [format!("pair_{k:02}_a.txt"), format!("pair_{k:02}_b.txt")];
        write_atomic(&out_dir.join(&names[0]), &strip::checkpoint_string(&a, &fam.spec))?;
        write_atomic(&out_dir.join(&names[1]), &strip::checkpoint_string(&b, &fam.spec))?;
        let [na, nb] = names;
        let mut p = WavePair::new(
            pair.r,
            PairMember { checkpoint: Some(na), ..pair.first },
            PairMember { checkpoint: Some(nb), ..pair.second },
            pair.provenance,
        );
        p.distance = Some(dist);
        verified.push(p);
    }
    let report = json!({
        "folds": search.folds,
        "note": search.note,
        "candidates": search.pairs.len(),
        "pairs": verified,
    });
    write_atomic(&out, &to_json(&report)?)?;
    eprintln!("{} verified pairs of {} candidates -> {}", verified.len(), search.pairs.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn crossing_t(dir: &Path) -> Result<f64> {
    let path = dir.join("events.json");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?)?;
    v["events"]
        .as_array()
        .into_iter()
        .flatten()
        .find_map(|e| e.get("EigenCrossing").and_then(|c| c["t"].as_f64()))
        .ok_or_else(|| WaveError::Precondition(format!("{}: no eigenvalue crossing recorded", path.display())).into())
}

pub fn verify(cfg: &RunConfig, dir: &Path) -> Result<ExitCode> {
    let rows = read_branch_csv(dir)?;
    let mut failures = 0usize;
    for row in &rows {
        let mut problems: Vec<String> = Vec::new();
        let path = point_path(dir, row.step);
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let (f, spec) = strip::parse_checkpoint(&text)?;
        if strip::checkpoint_string(&f, &spec) != text {
            problems.push(format!("{name}: checkpoint does not round-trip"));
        }
        if f.r != row.r || f.crest() != row.xi0 {
            problems.push(format!("{name}: R or xi0 disagrees with branch.csv"));
        }
        let res = match strip::residual(&f, &spec) {
            Ok(r) => r.sup,
            Err(e) => {
                println!("FAIL {name}: {e}");
                failures += 1;
                continue;
            }
        };
        let moved = strip::newton_step(&f, &spec)?.h.iter().zip(&f.h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved > cfg.solver.replay_tol {
            problems.push(format!("{name}: one Newton step moves h by {moved:e}"));
        }
        let fam = StreamFamily::new(spec.clone())?;
        let far = stream::profile(&spec, fam.solve_theta(f.r, Regime::Supercritical)?, f.grid.np)?;
        let last = f.grid.nq - 1;
        let far_err = (0..f.grid.np).map(|j| (f.at(last, j) - far[j]).abs()).fold(0.0, f64::max);
        if far_err > 1e-12 {
            problems.push(format!("{name}: far column differs from the uniform stream by {far_err:e}"));
        }
        let profile = physical::reconstruct(&f, &spec)?;
        let shape = profile.shape();
        if !(shape.elevated && shape.decreasing) {
            problems.push(format!("{name}: surface is not a monotone elevation ({shape:?})"));
        }
        failures += problems.len();
        for p in &problems {
            println!("FAIL {p}");
        }
        if problems.is_empty() {
            println!(
                "ok {name} R={} residual={res:.2e} replay={moved:.2e} flow_force_variation={:.2e}",
                f.r, profile.flow_force_variation
            );
        }
    }
    if failures > 0 {
        println!("{failures} violations in {}", dir.display());
        return Ok(ExitCode::from(1));
    }
    println!("{} checkpoints verified", rows.len());
    Ok(ExitCode::SUCCESS)
}
