//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use quenched_dft::cli::{self, CommandKind, ExperimentConfig};
use quenched_dft::counterexample::{
    bound_bk, build, deterministic_lambda, verify_stages, BuildStatus, Construction, ConstructionParams,
};
use quenched_dft::innovations::{draw_past, FrozenPast, InnovationLaw, SeedSpec};
use quenched_dft::linear_process::{dft_direct, dft_walk_forms, CoefficientSeq, InnovationWindow, ThetaGrid};
use quenched_dft::quenched::{conditional_dft_forms, limit_diagnosis, Verdict};
use quenched_dft::stats::{degenerate_shift_limit, match_affine_type, ShiftTolerance};
use quenched_dft::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const TOL: f64 = 1e-10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn close(a: Complex64, b: Complex64) -> bool {
    (a - b).norm() <= TOL * a.norm().max(b.norm()).max(1.0)
}

fn random_coeffs(rng: &mut ChaCha8Rng, max_support: usize, max_index: usize) -> CoefficientSeq {
    let size = rng.random_range(1..=max_support);
    let mut support: Vec<usize> = (0..=max_index).collect();
    for i in 0..size {
        let j = rng.random_range(i..support.len());
        support.swap(i, j);
    }
    support.truncate(size);
    support.sort_unstable();
    let values = support
        .iter()
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() < 1e-3 {
                0.5
            } else {
                v
            }
        })
        .collect();
    CoefficientSeq::new(support, values).unwrap()
}

fn random_past(rng: &mut ChaCha8Rng, depth: usize) -> FrozenPast {
    FrozenPast::from_values((0..=depth).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn expansion_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_101);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..500 {
        let coeffs = random_coeffs(&mut rng, 8, 24);
        let depth = coeffs.max_index().unwrap();
        let n = rng.random_range(1..=64usize);
        let past = random_past(&mut rng, depth);
        let future: Vec<f64> = (1..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let window = InnovationWindow::from_past_and_future(&past, &future);
        let quiet = InnovationWindow::from_past_and_future(&past, &vec![0.0; n - 1]);
        for _ in 0..16 {
            let theta = rng.random_range(0.0..2.0 * PI);
            let direct = dft_direct(&coeffs, &window, n, theta).unwrap();
            let (w1, w2) = dft_walk_forms(&coeffs, &window, n, theta).unwrap();
            // the projection equals the transform with the future switched off
            let projected = dft_direct(&coeffs, &quiet, n, theta).unwrap();
            let (c1, c2) = conditional_dft_forms(&coeffs, &past, n, theta).unwrap();
            for (a, b) in [(direct, w1), (direct, w2), (projected, c1), (projected, c2)] {
                worst = worst.max((a - b).norm() / a.norm().max(b.norm()).max(1.0));
                if !close(a, b) {
                    failures += 1;
                }
            }
        }
    }
    Outcome {
        pass: failures == 0,
        detail: format!("500 instances x 16 angles, worst relative gap {worst:.2e}, {failures} mismatches"),
    }
}

fn exhaustive_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..50 {
        let coeffs = random_coeffs(&mut rng, 3, 6);
        let depth = coeffs.max_index().unwrap();
        let past = FrozenPast::from_values(
            (0..=depth)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect(),
        )
        .unwrap();
        let n = rng.random_range(1..=4usize);
        let theta = rng.random_range(0.0..2.0 * PI);
        let patterns = 1usize << (n - 1);
        let mut mean = Complex64::new(0.0, 0.0);
        for bits in 0..patterns {
            let future: Vec<f64> = (0..n - 1)
                .map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect();
            let window = InnovationWindow::from_past_and_future(&past, &future);
            mean += dft_direct(&coeffs, &window, n, theta).unwrap();
        }
        mean /= patterns as f64;
        let (c1, c2) = conditional_dft_forms(&coeffs, &past, n, theta).unwrap();
        for c in [c1, c2] {
            worst = worst.max((mean - c).norm());
            if !close(mean, c) {
                failures += 1;
            }
        }
    }
    Outcome {
        pass: failures == 0,
        detail: format!("50 instances, worst gap {worst:.2e}, {failures} mismatches"),
    }
}

fn quenched_clt(out: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::defaults(CommandKind::VerifyClt);
    cfg.coeffs = Some("geometric:0.5:20".into());
    cfg.theta_grid = "interior:16".into();
    cfg.past_depth = Some(64);
    cfg.replicates = 10_000;
    cfg.n = vec![4096];
    cfg.seed = 2024;
    cfg.out = out.to_path_buf();
    match cli::cmd_verify_clt(&cfg) {
        Ok(s) => Outcome {
            pass: s.pass_fraction >= 0.9 && s.max_cesaro_gap <= 1e-2,
            detail: format!(
                "pass fraction {:.3} over {} angles (need >= 0.9), Cesaro gap {:.2e} (need <= 1e-2)",
                s.pass_fraction, s.tested_cells, s.max_cesaro_gap
            ),
        },
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn doob() -> Outcome {
    let thetas = [0.0, PI / 3.0, PI, 5.0 * PI / 3.0];
    match quenched_dft::counterexample::doob_check(&thetas, 10_000, InnovationLaw::Rademacher, 1000, 31) {
        Ok(reports) => Outcome {
            pass: reports.iter().all(|r| r.pass),
            detail: reports
                .iter()
                .map(|r| {
                    format!(
                        "theta {:.3}: {:.1} +- {:.1} vs {:.1}",
                        r.theta, r.expected_max.mean, r.expected_max.std_error, r.bound
                    )
                })
                .collect::<Vec<_>>()
                .join("; "),
        },
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

struct BuildResult {
    construction: Construction,
    error: Option<Error>,
    elapsed: Duration,
}

fn run_build(base: f64, k_max: usize, seed: u64) -> BuildResult {
    let params = ConstructionParams {
        base,
        k_max,
        ..ConstructionParams::default()
    };
    let started = Instant::now();
    let (construction, error) = match build(&params, seed) {
        Ok(c) => (c, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    BuildResult {
        construction,
        error,
        elapsed: started.elapsed(),
    }
}

fn stopped(b: &BuildResult) -> String {
    match &b.error {
        Some(e) => format!("construction stopped: {e}"),
        None => String::new(),
    }
}

fn bk_tail(built: &BuildResult) -> Outcome {
    if built.error.is_some() {
        return Outcome {
            pass: false,
            detail: format!("no stage-3 sequence to test; {}", stopped(built)),
        };
    }
    let grid = ThetaGrid::equispaced(64).unwrap();
    match bound_bk(
        &built.construction.coeffs,
        2.0,
        3,
        &grid,
        InnovationLaw::Rademacher,
        1000,
        5,
    ) {
        Ok(r) => Outcome {
            pass: r.meets_tail_target(),
            detail: format!(
                "max tail frequency {:.4} vs target {:.4} (+3 s.e.), {} tail stages",
                r.per_theta.iter().map(|s| s.tail_probability.mean).fold(0.0, f64::max),
                r.tail_target,
                r.tail_stages
            ),
        },
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn log_consistent(c: &Construction) -> Result<(), String> {
    let stages = &c.log.stages;
    for w in stages.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        if cur.n_k <= prev.n_k {
            return Err(format!(
                "n_{} = {} not above n_{} = {}",
                cur.k, cur.n_k, prev.k, prev.n_k
            ));
        }
        let a = c.log.base.powi(-(cur.k as i32)) / (prev.n_k as f64).sqrt();
        if cur.a != a {
            return Err(format!("a at stage {} is {}, expected {a}", cur.k, cur.a));
        }
        let lambda = deterministic_lambda(&c.coeffs, cur.k, 1.0);
        if cur.lambda != lambda {
            return Err(format!(
                "lambda at stage {} is {}, expected {lambda}",
                cur.k, cur.lambda
            ));
        }
    }
    Ok(())
}

fn construction(base2: &BuildResult, base13: &BuildResult) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, b, budget) in [
        ("base 2, k_max 3", base2, None),
        ("base 1.3, k_max 6", base13, Some(1800.0)),
    ] {
        let done = b.error.is_none() && b.construction.log.status == BuildStatus::Complete;
        let in_budget = budget.is_none_or(|s| b.elapsed.as_secs_f64() < s);
        let log = log_consistent(&b.construction);
        pass &= done && in_budget && log.is_ok();
        notes.push(format!(
            "{name}: {} stages in {:.0} s{}{}",
            b.construction.log.stages.len() - 1,
            b.elapsed.as_secs_f64(),
            if done {
                String::new()
            } else {
                format!(", {}", stopped(b))
            },
            match log {
                Ok(()) => String::new(),
                Err(e) => format!(", log: {e}"),
            }
        ));
    }
    Outcome {
        pass,
        detail: notes.join("; "),
    }
}

fn divergence(built: &BuildResult) -> Outcome {
    let coeffs = &built.construction.coeffs;
    let grid = ThetaGrid::equispaced(64).unwrap();
    let stages: Vec<usize> = built
        .construction
        .log
        .stages
        .iter()
        .map(|s| s.k)
        .filter(|&k| k > 0)
        .collect();
    let stage_ok = if stages.is_empty() {
        false
    } else {
        match verify_stages(coeffs, 2.0, &stages, &grid, InnovationLaw::Rademacher, 200, 17) {
            Ok(out) => out.reports.iter().all(|r| r.pass()),
            Err(_) => false,
        }
    };

    let diagnose = |seq: &CoefficientSeq| -> (usize, usize) {
        let schedule = cli::diverge_schedule(seq, &[1 << 16]);
        let grid = ThetaGrid::equispaced(16).unwrap();
        let depth = seq.max_index().unwrap_or(0);
        let mut diverges = 0;
        let mut cells = 0;
        for p in 0..20u64 {
            let past = draw_past(InnovationLaw::Rademacher, depth, &SeedSpec::new(23, "past", p, 0));
            for &theta in grid.points() {
                let d = limit_diagnosis(seq, &past, theta, &schedule).unwrap();
                cells += 1;
                if d.verdict == Verdict::Diverges {
                    diverges += 1;
                }
            }
        }
        (diverges, cells)
    };
    let (built_div, built_cells) = diagnose(coeffs);
    let contrast = CoefficientSeq::geometric(0.5, 20).unwrap();
    let (contrast_div, contrast_cells) = diagnose(&contrast);
    let built_frac = built_div as f64 / built_cells as f64;
    let pass = stage_ok && built_frac >= 0.9 && contrast_div == 0;
    Outcome {
        pass,
        detail: format!(
            "stage frequencies {} over {} completed stages; built sequence diverges on {:.1}% of {} cells (need >= 90%); contrast diverges on {}/{} cells (need 0){}",
            if stage_ok { "ok" } else { "not met" },
            stages.len(),
            100.0 * built_frac,
            built_cells,
            contrast_div,
            contrast_cells,
            if built.error.is_some() { format!("; {}", stopped(built)) } else { String::new() }
        ),
    }
}

fn convergence_of_types() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let law = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..10_000).map(|_| law.sample(&mut rng)).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
    let fresh: Vec<f64> = (0..10_000).map(|_| 2.0 * law.sample(&mut rng) + 3.0).collect();
    let rel = |t: &quenched_dft::stats::TypeMatch| ((t.a_hat - 2.0).abs() / 2.0).max((t.b_hat - 3.0).abs() / 3.0);
    let same = match_affine_type(&x, &y).unwrap();
    let indep = match_affine_type(&x, &fresh).unwrap();
    let constant = matches!(
        match_affine_type(&vec![1.0; 10_000], &y),
        Err(Error::DegenerateSample { .. })
    );

    let ys: Vec<Vec<f64>> = (1..=200)
        .map(|k| {
            let law = Normal::new(0.0, 1.0 / (k as f64).sqrt()).unwrap();
            (0..1000).map(|_| law.sample(&mut rng)).collect()
        })
        .collect();
    let c: Vec<f64> = (1..=200).map(|k| 2.0 - 1.0 / k as f64).collect();
    let shift = degenerate_shift_limit(&ys, &c, ShiftTolerance::default()).unwrap();
    let shift_ok = shift.limit.is_some_and(|l| (l - 2.0).abs() <= 1e-2);
    Outcome {
        pass: rel(&same) <= 0.02 && rel(&indep) <= 0.02 && constant && shift_ok,
        detail: format!(
            "relative error {:.1e} (transformed) / {:.1e} (independent draws); constant X rejected: {constant}; shift limit {:?}",
            rel(&same),
            rel(&indep),
            shift.limit
        ),
    }
}

fn files_identical(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for name in &names {
        let (x, y) = (fs::read(a.join(name)), fs::read(b.join(name)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            _ => return Err(format!("{} differs", name.to_string_lossy())),
        }
    }
    Ok(names.len())
}

fn reproducibility(scratch: &Path) -> Outcome {
    let commands: [&[&str]; 3] = [
        &[
            "verify-clt",
            "--coeffs",
            "geometric:0.5:20",
            "--theta-grid",
            "interior:16",
            "--n",
            "1024,4096",
            "--M",
            "2000",
            "--seed",
            "9",
        ],
        &[
            "build-counterexample",
            "--base",
            "2",
            "--k-max",
            "3",
            "--max-horizon",
            "4096",
            "--M",
            "50",
            "--seed",
            "9",
        ],
        &[
            "diverge-report",
            "--coeffs",
            "geometric:0.5:20",
            "--pasts",
            "4",
            "--n",
            "65536",
            "--seed",
            "9",
        ],
    ];
    let mut notes = Vec::new();
    let mut pass = true;
    for (i, args) in commands.iter().enumerate() {
        let dirs = [scratch.join(format!("run{i}a")), scratch.join(format!("run{i}b"))];
        let codes: Vec<i32> = dirs
            .iter()
            .map(|d| {
                let mut argv = vec!["quenched-dft".to_string()];
                argv.extend(args.iter().map(|s| s.to_string()));
                argv.extend(["--out".to_string(), d.to_string_lossy().into_owned()]);
                cli::run(argv)
            })
            .collect();
        let same = files_identical(&dirs[0], &dirs[1]);
        pass &= codes[0] == codes[1] && codes[0] != cli::EXIT_ERROR && same.is_ok();
        notes.push(format!(
            "{}: exit {}, {}",
            args[0],
            codes[0],
            match same {
                Ok(n) => format!("{n} files identical"),
                Err(e) => e,
            }
        ));
    }
    Outcome {
        pass,
        detail: notes.join("; "),
    }
}

fn report(id: &str, name: &str, limit_s: f64, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let o = f();
    let secs = started.elapsed().as_secs_f64();
    let pass = o.pass && secs < limit_s;
    let timing = if secs < limit_s {
        format!("{secs:.1} s")
    } else {
        format!("{secs:.1} s, over the {limit_s:.0} s limit")
    };
    println!(
        "[{}] {id} {name}: {} ({timing})",
        if pass { "PASS" } else { "FAIL" },
        o.detail
    );
    pass
}

fn main() {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut results = vec![
        report("C1", "expansion equivalence", 10.0, expansion_equivalence),
        report("C2", "exhaustive quenched oracle", 5.0, exhaustive_oracle),
        report("C3", "quenched CLT", 300.0, || {
            quenched_clt(&scratch.path().join("clt"))
        }),
        report("C4", "Doob maximal inequality", 60.0, doob),
    ];

    let base2 = run_build(2.0, 3, 1);
    results.push(report("C5", "B_k tail bound", 120.0, || bk_tail(&base2)));
    results.push(report("C6", "construction completes", f64::INFINITY, || {
        construction(&base2, &run_build(1.3, 6, 1))
    }));
    results.push(report("C7", "divergence demonstration", 600.0, || divergence(&base2)));
    results.push(report("C8", "convergence of types", 30.0, convergence_of_types));
    results.push(report("C9", "reproducibility", f64::INFINITY, || {
        reproducibility(scratch.path())
    }));

    let failed = results.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
