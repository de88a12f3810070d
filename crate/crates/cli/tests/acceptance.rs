//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use progvid_cli::commands::{cmd_edit, cmd_predict, EditArgs, PredictArgs};
use progvid_cli::store::{self, Report};
use progvid_core::dsl::{parse, parse_expr, parse_guard, step_map, BinOp, Expr, Guard, Pos};
use progvid_core::dynamics::{transition_detailed, CARTPOLE_EULER};
use progvid_core::envsim::{cartpole_reference_step, generate, sample_dataset};
use progvid_core::fit::{
    episodes_from_dataset, fd_gradient, fit_params, lbfgs_fd_minimize, powell_minimize, select_program, FitConfig,
    FitReport, OptimResult,
};
use progvid_core::metrics::MetricRow;
use progvid_core::perceive::{perceive_cartpole_frame, perceive_frame, perceive_frames, wrap_angle};
use progvid_core::pipeline::{evaluate, summarize};
use progvid_core::proposer::{registry_propose, ProposalRequest, DEFAULT_MAX_CANDIDATES};
use progvid_core::render::render_state;
use progvid_core::{
    builtin_templates, DynamicsProgram, EnvConfig, EnvKind, Param, ParamVector, State, Trajectory,
};

const TRAIN_SEED: u64 = 1000;
const TEST_SEED: u64 = 5000;

type Outcome = Result<String, String>;

fn check(pass: bool, detail: String) -> Outcome {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Perceive, propose, select and fit on `n` clips; returns the fitted program.
fn train(cfg: &EnvConfig, n: usize, candidates: Option<Vec<DynamicsProgram>>) -> (DynamicsProgram, FitReport) {
    let render = cfg.render_config();
    let data = sample_dataset(cfg, n, TRAIN_SEED).expect("training data");
    let episodes = episodes_from_dataset(&data, &render, false).expect("perception");
    let candidates = candidates.unwrap_or_else(|| {
        let examples: Vec<Trajectory> = episodes.iter().map(|e| e.trajectory.clone()).collect();
        let req = ProposalRequest::new(cfg.kind, &examples, DEFAULT_MAX_CANDIDATES).unwrap();
        registry_propose(&req).unwrap()
    });
    let report = select_program(&candidates, &episodes, None, &FitConfig::default()).expect("fit");
    let prog = candidates
        .iter()
        .find(|c| c.id() == report.program_id)
        .unwrap()
        .with_params(report.params.clone())
        .unwrap();
    (prog, report)
}

fn test_rows(prog: &DynamicsProgram, cfg: &EnvConfig, n: usize) -> Vec<MetricRow> {
    let render = cfg.render_config();
    let data = sample_dataset(cfg, n, TEST_SEED).expect("test data");
    let scores = evaluate(prog, data.videos(), &render).expect("evaluation");
    summarize(cfg.kind, "test", &scores)
}

fn metric(rows: &[MetricRow], name: &str) -> f64 {
    rows.iter().find(|r| r.metric == name).map(|r| r.value).unwrap_or(f64::NAN)
}

struct Uniform {
    iid: f64,
    ood: f64,
    seconds: f64,
}

fn uniform_runs() -> Uniform {
    let start = Instant::now();
    let cfg = EnvConfig::default_for(EnvKind::PhyworldUniform);
    let (prog, _) = train(&cfg, 10, None);
    let iid = metric(&test_rows(&prog, &cfg, 20), "velocity_error");
    let seconds = start.elapsed().as_secs_f64();
    let ood = metric(&test_rows(&prog, &cfg.ood(4.0), 20), "velocity_error");
    Uniform { iid, ood, seconds }
}

fn criterion_1(u: &Uniform) -> Outcome {
    check(
        u.iid <= 0.02 && u.seconds < 60.0,
        format!("velocity_error {:.5} (<= 0.02), {:.1} s (< 60 s)", u.iid, u.seconds),
    )
}

fn criterion_2(u: &Uniform) -> Outcome {
    check(
        u.ood <= 1.5 * u.iid,
        format!("ood {:.5} vs 1.5 x iid {:.5}", u.ood, 1.5 * u.iid),
    )
}

fn momentum(v: &[f64]) -> (f64, f64) {
    let (m1, m2) = (v[3] * v[3], v[7] * v[7]);
    (m1 * v[2] + m2 * v[6], m1 * v[2].abs() + m2 * v[6].abs())
}

fn energy(v: &[f64]) -> f64 {
    let (m1, m2) = (v[3] * v[3], v[7] * v[7]);
    0.5 * (m1 * v[2] * v[2] + m2 * v[6] * v[6])
}

/// Worst relative momentum and energy change over every step on which the
/// collision rule fires, with the number of such steps.
fn conservation(prog: &DynamicsProgram, starts: &[State], steps: usize) -> (f64, f64, usize) {
    let (mut dp, mut de, mut n) = (0.0f64, 0.0f64, 0);
    for s0 in starts {
        let mut s = s0.clone();
        for _ in 0..steps {
            let t = transition_detailed(prog, &s).expect("transition");
            if t.fired_rule == Some(0) && t.clamped.is_empty() {
                let (p0, scale) = momentum(s.values());
                let (p1, _) = momentum(t.state.values());
                dp = dp.max((p1 - p0).abs() / scale);
                let (e0, e1) = (energy(s.values()), energy(t.state.values()));
                de = de.max((e1 - e0).abs() / e0);
                n += 1;
            }
            s = t.state;
        }
    }
    (dp, de, n)
}

fn criterion_3() -> Outcome {
    let kind = EnvKind::PhyworldCollision;
    let cfg = EnvConfig::default_for(kind);
    let render = cfg.render_config();
    let (prog, _) = train(&cfg, 10, None);
    let iid = metric(&test_rows(&prog, &cfg, 20), "velocity_error");
    let ood = metric(&test_rows(&prog, &cfg.ood(4.0), 20), "velocity_error");

    let mut starts = Vec::new();
    for c in [&cfg, &cfg.ood(4.0)] {
        for v in sample_dataset(c, 20, TEST_SEED).unwrap().videos() {
            let seen = &v.frames()[..v.conditioning()];
            starts.push(perceive_frames(seen, &render, &kind.schema()).unwrap().states()[v.last_seen()].clone());
            starts.push(v.ground_truth().unwrap().states()[v.last_seen()].clone());
        }
    }
    let steps = cfg.total_frames - (cfg.conditioning_frames - 1);
    let (dp_fit, _, n_fit) = conservation(&prog, &starts, steps);
    let elastic = builtin_templates().true_template(kind).clone();
    let (dp_el, de_el, n_el) = conservation(&elastic, &starts, steps);
    let dp = dp_fit.max(dp_el);
    check(
        prog.id() == elastic.id() && iid <= 0.05 && ood <= 0.05 && dp <= 1e-9 && de_el <= 1e-9 && n_fit > 0 && n_el > 0,
        format!(
            "selected {} (e = {:.4}); velocity_error iid {:.5} ood {:.5} (<= 0.05); momentum {:.1e} over {} fitted and {} elastic collision steps, energy {:.1e} at e = 1 (<= 1e-9)",
            prog.id(),
            prog.params().get("e").unwrap_or(f64::NAN),
            iid,
            ood,
            dp,
            n_fit,
            n_el,
            de_el
        ),
    )
}

fn cartpole_fit() -> (DynamicsProgram, FitReport, f64) {
    let start = Instant::now();
    let cfg = EnvConfig::default_for(EnvKind::Cartpole);
    let template = builtin_templates().get(EnvKind::Cartpole, CARTPOLE_EULER).unwrap().clone();
    let data = sample_dataset(&cfg, 10, TRAIN_SEED).unwrap();
    let episodes = episodes_from_dataset(&data, &cfg.render_config(), false).unwrap();
    let report = fit_params(&template, &episodes, None, &FitConfig::default()).unwrap();
    let prog = template.with_params(report.params.clone()).unwrap();
    (prog, report, start.elapsed().as_secs_f64())
}

fn criterion_4(prog: &DynamicsProgram, fit_seconds: f64) -> Outcome {
    let start = Instant::now();
    let cfg = EnvConfig::default_for(EnvKind::Cartpole);
    let rows = test_rows(prog, &cfg, 10);
    let seconds = fit_seconds + start.elapsed().as_secs_f64();
    let (mae, psnr) = (metric(&rows, "mae"), metric(&rows, "psnr"));
    check(
        mae <= 0.01 && psnr >= 28.0 && seconds < 120.0,
        format!("MAE {mae:.5} (<= 0.01), PSNR {psnr:.2} dB (>= 28), {seconds:.1} s (< 120 s)"),
    )
}

fn uniform_in(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn criterion_5() -> Outcome {
    let kind = EnvKind::Cartpole;
    let c = EnvConfig::default_for(kind).cartpole;
    let prog = builtin_templates().true_template(kind).with_values(&c.as_array()).unwrap();
    let schema = kind.schema();
    let attrs = schema.attributes();
    let mut rng = SplitMix64::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let v: Vec<f64> = attrs.iter().map(|a| uniform_in(&mut rng, a.lower, a.upper)).collect();
        let s = State::new(schema.clone(), v.clone()).unwrap();
        let got = transition_detailed(&prog, &s).unwrap().state;
        let want = cartpole_reference_step([v[0], v[1], v[2], v[3]], &c);
        for i in 0..4 {
            worst = worst.max((got.values()[i] - attrs[i].clamp(want[i])).abs());
        }
        worst = worst.max((got.values()[4] - v[4]).abs());
    }
    check(worst <= 1e-12, format!("max abs difference {worst:.2e} over 1000 states (<= 1e-12)"))
}

fn criterion_6() -> Outcome {
    let reg = builtin_templates();
    let mut lines = Vec::new();
    let mut all = true;
    for kind in EnvKind::ALL {
        let cfg = EnvConfig::default_for(kind);
        let render = cfg.render_config();
        let candidates = vec![reg.true_template(kind).clone(), reg.distractor(kind).clone()];
        let mut wins = 0;
        for i in 0..20u64 {
            let data = sample_dataset(&cfg, 5, 20_000 + 100 * i).unwrap();
            let episodes = episodes_from_dataset(&data, &render, false).unwrap();
            let config = FitConfig {
                seed: i,
                ..FitConfig::default()
            };
            let r = select_program(&candidates, &episodes, None, &config).unwrap();
            wins += usize::from(r.program_id == candidates[0].id());
        }
        all &= wins == 20;
        lines.push(format!("{kind} {wins}/20"));
    }
    check(all, lines.join(", "))
}

fn box_params(x0: &[f64], lo: f64, hi: f64) -> ParamVector {
    ParamVector::new(
        x0.iter()
            .enumerate()
            .map(|(i, v)| Param {
                name: format!("p{i}"),
                value: *v,
                lower: lo,
                upper: hi,
            })
            .collect(),
    )
    .unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_7() -> Outcome {
    let stop = FitConfig::default().stop_rule();
    let centre = [1.0, -2.0, 0.5, 3.0, -1.0];
    let quad = |x: &[f64]| -> f64 {
        x.iter()
            .zip(centre)
            .enumerate()
            .map(|(i, (v, c))| (i + 1) as f64 * (v - c) * (v - c))
            .sum()
    };
    let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
    let q0 = box_params(&[0.0; 5], -5.0, 5.0);
    let r0 = box_params(&[-1.2, 1.0], -2.0, 2.0);
    type Minimizer = fn(&dyn Fn(&[f64]) -> f64, &ParamVector, &progvid_core::fit::StopRule) -> OptimResult;
    let powell: Minimizer = |f, x, s| powell_minimize(f, x, s);
    let lbfgs: Minimizer = |f, x, s| lbfgs_fd_minimize(f, x, s);
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, m) in [("powell", powell), ("lbfgs-fd", lbfgs)] {
        let q = m(&quad, &q0, &stop);
        let r = m(&rosen, &r0, &stop);
        let (dq, dr) = (dist(&q.x, &centre), dist(&r.x, &[1.0, 1.0]));
        ok &= dq <= 1e-6 && dr <= 1e-4;
        parts.push(format!("{name} quadratic {dq:.1e} rosenbrock {dr:.1e}"));
    }

    // f = x0^3 - 2 x0 x1 + 4 x1^2 - x2 + 0.5 x2^4 + x0 x1 x2
    let poly = |x: &[f64]| {
        x[0].powi(3) - 2.0 * x[0] * x[1] + 4.0 * x[1] * x[1] - x[2] + 0.5 * x[2].powi(4) + x[0] * x[1] * x[2]
    };
    let grad = |x: &[f64]| {
        vec![
            3.0 * x[0] * x[0] - 2.0 * x[1] + x[1] * x[2],
            -2.0 * x[0] + 8.0 * x[1] + x[0] * x[2],
            -1.0 + 2.0 * x[2].powi(3) + x[0] * x[1],
        ]
    };
    let mut rng = SplitMix64::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x: Vec<f64> = (0..3).map(|_| uniform_in(&mut rng, -2.0, 2.0)).collect();
        let g = fd_gradient(poly, &x, poly(&x), &[-10.0; 3], &[10.0; 3]);
        worst = worst.max(dist(&g, &grad(&x)));
    }
    ok &= worst <= 1e-5;
    parts.push(format!("fd gradient {worst:.1e}"));
    check(ok, parts.join(", "))
}

fn criterion_8() -> Outcome {
    let mut rng = SplitMix64::seed_from_u64(8);
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in EnvKind::ALL {
        let cfg = EnvConfig::default_for(kind);
        let render = cfg.render_config();
        let w = cfg.width as f64;
        let y_max = cfg.height as f64 / w;
        let (mut pos, mut ang) = (0.0f64, 0.0f64);
        for _ in 0..500 {
            let values = match kind {
                EnvKind::PhyworldUniform => {
                    let r = uniform_in(&mut rng, cfg.radius_range[0], cfg.radius_range[1]);
                    let m = r + 1.0 / w;
                    vec![uniform_in(&mut rng, m, 1.0 - m), uniform_in(&mut rng, m, y_max - m), 0.0, r]
                }
                EnvKind::PhyworldCollision => loop {
                    let r1 = uniform_in(&mut rng, cfg.radius_range[0], cfg.radius_range[1]);
                    let r2 = uniform_in(&mut rng, cfg.radius_range[0], cfg.radius_range[1]);
                    let (m1, m2) = (r1 + 1.0 / w, r2 + 1.0 / w);
                    let x1 = uniform_in(&mut rng, m1, 1.0 - m1);
                    let x2 = uniform_in(&mut rng, m2, 1.0 - m2);
                    let y = uniform_in(&mut rng, m1.max(m2), y_max - m1.max(m2));
                    if (x1 - x2).abs() >= r1 + r2 + 2.0 / w {
                        break vec![x1, y, 0.0, r1, x2, y, 0.0, r2];
                    }
                },
                EnvKind::Cartpole => vec![
                    uniform_in(&mut rng, 0.3, 0.7),
                    0.0,
                    uniform_in(&mut rng, -1.5, 1.5),
                    0.0,
                    uniform_in(&mut rng, 0.15, 0.3),
                ],
            };
            let s = State::new(kind.schema(), values.clone()).unwrap();
            let frame = render_state(&s, &render).unwrap();
            if kind == EnvKind::Cartpole {
                let o = perceive_cartpole_frame(&frame, &render).unwrap();
                pos = pos.max((o.cart_x - values[0]).abs());
                ang = ang.max(wrap_angle(o.pole_angle - values[2]).abs());
            } else {
                let obs = perceive_frame(&frame, &render).unwrap();
                for (k, o) in obs.iter().enumerate() {
                    pos = pos.max((o.centroid.0 - values[4 * k]).abs());
                    pos = pos.max((o.centroid.1 - values[4 * k + 1]).abs());
                }
            }
        }
        let pos_px = pos * w;
        ok &= pos_px <= 1.5 && ang <= 0.03;
        parts.push(if kind == EnvKind::Cartpole {
            format!("{kind} position {pos_px:.3} px angle {ang:.4} rad")
        } else {
            format!("{kind} position {pos_px:.3} px")
        });
    }
    check(ok, format!("{} (<= 1.5 px, <= 0.03 rad)", parts.join(", ")))
}

fn criterion_9() -> Outcome {
    let cfg = EnvConfig::default_for(EnvKind::PhyworldCollision);
    let errors: Vec<(usize, f64)> = [1, 10, 100]
        .into_iter()
        .map(|n| {
            let (prog, _) = train(&cfg, n, None);
            (n, metric(&test_rows(&prog, &cfg, 20), "velocity_error"))
        })
        .collect();
    let (e1, e10, e100) = (errors[0].1, errors[1].1, errors[2].1);
    check(
        e10 < e1 && e100 <= e10,
        format!("velocity_error n=1 {e1:.6}, n=10 {e10:.6}, n=100 {e100:.6} (want n=10 < n=1 and n=100 <= n=10)"),
    )
}

fn read_frames(dir: &Path, first: usize) -> Vec<progvid_core::Frame> {
    store::read_frames_from(dir, first).unwrap()
}

fn edit(states: &Path, report: &Path, spec: &str, out: &Path) {
    cmd_edit(&EditArgs {
        states: states.to_path_buf(),
        edits: vec![spec.to_string()],
        report: report.to_path_buf(),
        out: out.to_path_buf(),
        png: false,
    })
    .unwrap();
}

fn criterion_10(prog: &DynamicsProgram, fit: &FitReport) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = EnvConfig::default_for(EnvKind::Cartpole);
    let render = cfg.render_config();
    let w = cfg.width as f64;
    let report = Report {
        env: cfg.kind,
        env_config: cfg.clone(),
        program_id: prog.id().to_string(),
        program_source: prog.source(),
        params: prog.params().clone(),
        fit: fit.clone(),
        proposer: store::ProposerSummary {
            mode: "registry".into(),
            candidates: vec![prog.id().to_string()],
            used_fallback: false,
            diagnostics: Vec::new(),
        },
    };
    let report_path = root.join("report.json");
    store::write_json(&report_path, &report).unwrap();
    let f = cfg.conditioning_frames - 1;

    // The constant push changes the cart velocity by up to `push` per frame,
    // so a slower cart turns around (or drops below one pixel per frame)
    // within the horizon whichever way it starts.
    let horizon = (cfg.total_frames - f) as f64;
    let (mut clips, mut seed) = (0, 7000u64);
    let (mut worst_len, mut reversed, mut frames_checked) = (0.0f64, true, 0);
    while clips < 10 {
        let (video, _) = generate(&cfg, seed).unwrap();
        seed += 1;
        let v = video.ground_truth().unwrap().series("cart_velocity").unwrap();
        let push = v.windows(2).map(|p| (p[1] - p[0]).abs()).fold(0.0, f64::max);
        if v[f].abs() < horizon * push + 1.0 / w {
            continue;
        }
        clips += 1;
        let dir = root.join(format!("video_{clips}"));
        store::write_video(&dir, cfg.kind, &video, false).unwrap();
        let pred = root.join(format!("pred_{clips}"));
        cmd_predict(&PredictArgs {
            report: report_path.clone(),
            input: dir,
            out: pred.clone(),
            trace: false,
            png: false,
        })
        .unwrap();
        let states = pred.join(store::STATES);
        let (base, long, neg) = (root.join(format!("base_{clips}")), root.join(format!("long_{clips}")), root.join(format!("neg_{clips}")));
        edit(&states, &report_path, "pole_length:scale:1", &base);
        edit(&states, &report_path, "pole_length:scale:2", &long);
        edit(&states, &report_path, "cart_velocity:negate", &neg);

        let extent = |dir: &Path| perceive_cartpole_frame(&read_frames(dir, f)[0], &render).unwrap().pole_length * w;
        let (before, after) = (extent(&base), extent(&long));
        worst_len = worst_len.max((after - 2.0 * before).abs());

        let centroids = |dir: &Path| -> Vec<f64> {
            read_frames(dir, f)
                .iter()
                .map(|fr| perceive_cartpole_frame(fr, &render).unwrap().cart_x)
                .collect()
        };
        let (a, b) = (centroids(&base), centroids(&neg));
        assert_eq!(a.len(), cfg.total_frames - f + 1);
        for t in 1..a.len() {
            let (da, db) = (a[t] - a[t - 1], b[t] - b[t - 1]);
            reversed &= da != 0.0 && db != 0.0 && da.signum() == -db.signum();
            frames_checked += 1;
        }
    }
    check(
        worst_len <= 2.0 && reversed,
        format!(
            "pole extent off by at most {worst_len:.2} px from double (<= 2 px); direction reversed in every one of {frames_checked} predicted frames: {reversed} (10 clips fast enough to keep moving over the horizon)"
        ),
    )
}

fn golden_parser() -> Result<(), String> {
    let var = |n: &str| Box::new(Expr::Var(n.into()));
    let expect = |cond: bool, what: &str| if cond { Ok(()) } else { Err(what.to_string()) };
    expect(
        parse_expr("a + b * c").unwrap() == Expr::Binary(BinOp::Add, var("a"), Box::new(Expr::Binary(BinOp::Mul, var("b"), var("c")))),
        "multiplication binds tighter than addition",
    )?;
    expect(
        parse_expr("a - b - c").unwrap() == Expr::Binary(BinOp::Sub, Box::new(Expr::Binary(BinOp::Sub, var("a"), var("b"))), var("c")),
        "subtraction is left associative",
    )?;
    expect(
        matches!(parse_guard("a < 1 or b < 2 and c < 3").unwrap(), Guard::Or(_, ref r) if matches!(**r, Guard::And(..))),
        "and binds tighter than or",
    )?;
    let no_vars = HashMap::new();
    for (src, want) in [("2 + 3 * 4", 14.0), ("2 * 3 - 4 / 2", 4.0), ("-2 * 3", -6.0), ("(1 + 2) * 3", 9.0), ("10 - 4 - 3", 3.0)] {
        let got = progvid_core::dsl::eval(&parse_expr(src).unwrap(), &no_vars).unwrap();
        expect(got == want, &format!("`{src}` evaluates to {got}, expected {want}"))?;
    }
    let swap = parse("default: a <- b; b <- a;").unwrap();
    let out = step_map(&swap, &HashMap::from([("a".to_string(), 1.0), ("b".to_string(), 2.0)])).unwrap();
    expect(out["a"] == 2.0 && out["b"] == 1.0, "simultaneous assignment swaps")?;
    let guarded = parse("when a < b: a <- b; b <- a;\ndefault: a <- a; b <- b;").unwrap();
    let out = step_map(&guarded, &HashMap::from([("a".to_string(), 1.0), ("b".to_string(), 2.0)])).unwrap();
    expect(out["a"] == 2.0 && out["b"] == 1.0, "guarded simultaneous assignment swaps")?;
    for (src, line, col) in [
        ("default: x <- (1 +;", 1, 19),
        ("default: x <- x;\ndefault: x <- x;", 2, 1),
        ("default: x <- 1; x <- 2;", 1, 18),
        ("default: x <- x $ 1;", 1, 17),
        ("when x < 1\ndefault: x <- x;", 2, 1),
    ] {
        match parse(src) {
            Err(e) if e.pos == (Pos { line, col }) => {}
            other => return Err(format!("`{}` gave {other:?}, expected an error at {line}:{col}", src.escape_debug())),
        }
    }
    Ok(())
}

const VOCAB: [&str; 36] = [
    "when", "default", "and", "or", "not", ":", ";", "<-", "(", ")", ",", "+", "-", "*", "/", "<", "<=", ">", ">=",
    "==", "!=", "x", "vx", "a", "sin", "cos", "sqrt", "min", "abs", "1", "0", "2.5", "1e309", "\n", "$", "@",
];

fn random_program(rng: &mut SplitMix64) -> String {
    let valid: Vec<&str> = "when x < 1 and not vx >= 0 : x <- min ( x , 1 ) / a ; vx <- - vx ; default : x <- x + vx * sqrt ( a ) ; vx <- sin ( vx ) ;"
        .split(' ')
        .collect();
    let mut toks: Vec<&str> = if rng.random_bool(0.5) {
        (0..rng.random_range(0..40)).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect()
    } else {
        let mut t = valid.clone();
        for _ in 0..rng.random_range(0..4) {
            let i = rng.random_range(0..=t.len());
            match rng.random_range(0..3) {
                0 if i < t.len() => {
                    t.remove(i);
                }
                1 if i < t.len() => t[i] = VOCAB[rng.random_range(0..VOCAB.len())],
                _ => t.insert(i, VOCAB[rng.random_range(0..VOCAB.len())]),
            }
        }
        t
    };
    if toks.is_empty() {
        toks.push("");
    }
    toks.join(" ")
}

/// Every input either parses and evaluates (possibly to a located error), or
/// is rejected with a position inside the input; nothing panics.
fn fuzz_parser() -> Result<(usize, usize), String> {
    let mut rng = SplitMix64::seed_from_u64(11);
    let (mut parsed, mut evaluated) = (0, 0);
    for i in 0..10_000 {
        let src = random_program(&mut rng);
        let lines = src.lines().count().max(1);
        let bindings: HashMap<String, f64> = ["x", "vx", "a"]
            .iter()
            .map(|n| (n.to_string(), uniform_in(&mut rng, -2.0, 2.0)))
            .collect();
        let result = catch_unwind(AssertUnwindSafe(|| match parse(&src) {
            Err(e) => {
                if e.pos.line < 1 || e.pos.line > lines + 1 || e.pos.col < 1 || e.message.is_empty() {
                    Err(format!("unpositioned diagnostic {e:?}"))
                } else {
                    Ok((false, false))
                }
            }
            Ok(p) => match step_map(&p, &bindings) {
                Ok(_) => Ok((true, true)),
                Err(e) if e.pos.line >= 1 && e.pos.col >= 1 => Ok((true, false)),
                Err(e) => Err(format!("unpositioned evaluation error {e:?}")),
            },
        }));
        match result {
            Ok(Ok((p, e))) => {
                parsed += usize::from(p);
                evaluated += usize::from(e);
            }
            Ok(Err(msg)) => return Err(format!("input {i} `{}`: {msg}", src.escape_debug())),
            Err(_) => return Err(format!("input {i} `{}` panicked", src.escape_debug())),
        }
    }
    Ok((parsed, evaluated))
}

fn criterion_11() -> Outcome {
    golden_parser().map_err(|e| format!("golden: {e}"))?;
    let (parsed, evaluated) = fuzz_parser()?;
    Ok(format!(
        "golden tests pass; 10000 fuzz inputs, {parsed} parsed, {evaluated} evaluated cleanly, no panics or unpositioned diagnostics"
    ))
}

fn main() {
    let quiet = std::panic::take_hook();
    std::panic::set_hook(Box::new(move |info| {
        if std::thread::current().name() != Some("main") {
            quiet(info);
        }
    }));
    let guarded = |f: &mut dyn FnMut() -> Outcome| -> Outcome {
        catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        })
    };

    let uniform = uniform_runs();
    let mut cartpole = None;
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("uniform iid", guarded(&mut || criterion_1(&uniform))));
    results.push(("uniform ood", guarded(&mut || criterion_2(&uniform))));
    results.push(("collision", guarded(&mut criterion_3)));
    results.push((
        "cartpole",
        guarded(&mut || {
            let (prog, fit, secs) = cartpole_fit();
            let out = criterion_4(&prog, secs);
            cartpole = Some((prog, fit));
            out
        }),
    ));
    results.push(("oracle equivalence", guarded(&mut criterion_5)));
    results.push(("stage-1 selection", guarded(&mut criterion_6)));
    results.push(("optimizers", guarded(&mut criterion_7)));
    results.push(("perception round-trip", guarded(&mut criterion_8)));
    results.push(("training-size ablation", guarded(&mut criterion_9)));
    results.push((
        "counterfactual edits",
        guarded(&mut || match &cartpole {
            Some((prog, fit)) => criterion_10(prog, fit),
            None => Err("cart-pole fit unavailable".into()),
        }),
    ));
    results.push(("parser and DSL", guarded(&mut criterion_11)));

    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        let (tag, detail) = match r {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {name}: {tag}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
