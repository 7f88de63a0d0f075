//! Acceptance suite. Prints one PASS/FAIL line per criterion plus INFO lines, and exits
//! non-zero when any criterion fails.

use jetforge::geometry::DirectionSet;
use jetforge::io::RunConfig;
use jetforge::iteration::{self, IterationReport};
use jetforge::jets::{JetBundle, JetParams};
use jetforge::params::{desk_preset, integrality_witness, search_admissible, to_f64, ParamLedger, SearchBox};
use jetforge::profiles::Profiles;
use jetforge::verify::{self, CheckConfig, CheckReport, Verdict};
use jetforge::{ops, Grid3, Rank};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

struct Suite {
    failed: Vec<&'static str>,
}

impl Suite {
    fn verdict(&mut self, id: &'static str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id);
        }
    }

    fn info(&self, id: &str, detail: String) {
        println!("INFO {id}: {detail}");
    }

    fn error(&mut self, id: &'static str, e: jetforge::Error) {
        println!("FAIL {id}: error: {e}");
        self.failed.push(id);
    }
}

fn bundle_for(params: JetParams) -> jetforge::Result<JetBundle> {
    let profiles = Arc::new(Profiles::default_for(params.q)?);
    JetBundle::new(Arc::new(DirectionSet::default_set()), params, profiles, 1)
}

fn criterion_1(s: &mut Suite) -> jetforge::Result<()> {
    let start = Instant::now();
    let grid = Grid3::new(64)?;
    let (mut worst_rel, mut worst_tr) = (0.0f64, 0.0f64);
    let mut op_secs = 0.0;
    for k in 0..32u64 {
        let mut u = verify::random_field(grid, Rank::Vector, 12.0, 100 + k);
        u.scale(1.0 / u.linf_norm());
        let t0 = Instant::now();
        let r = ops::antidiv(&u)?;
        op_secs += t0.elapsed().as_secs_f64();
        let target = ops::proj_nonzero(&u);
        worst_rel = worst_rel.max(ops::div(&r)?.sub(&target)?.l2_norm() / target.l2_norm());
        worst_tr = worst_tr.max(r.trace()?.linf_norm());
    }
    let secs = start.elapsed().as_secs_f64();
    s.verdict(
        "1 antidivergence",
        worst_rel <= 1e-10 && worst_tr <= 1e-10 && op_secs <= 10.0,
        format!(
            "32 fields at 64^3: max rel L2 error {worst_rel:.2e}, max |tr R u| {worst_tr:.2e} (tol 1e-10), \
             operator time {op_secs:.2} s (limit 10 s), whole criterion {secs:.1} s"
        ),
    );
    Ok(())
}

fn criterion_2(s: &mut Suite) -> jetforge::Result<()> {
    let start = Instant::now();
    let set = DirectionSet::default_set();
    let radius = set.certified_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut inside, mut inside_neg, mut outside_neg) = (0.0f64, 0usize, 0usize, 0usize);
    let weights = [1.0, 2.0, 2.0, 1.0, 2.0, 1.0];
    for _ in 0..1000 {
        // random direction, radius uniform in [0, 0.45] so the certified ball is well sampled
        let mut e = [0.0; 6];
        for c in 0..6 {
            e[c] = rng.gen_range(-1.0..1.0) / f64::sqrt(weights[c]);
        }
        let norm = e.iter().zip(&weights).map(|(x, w)| w * x * x).sum::<f64>().sqrt();
        let rad = 0.45 * rng.gen::<f64>();
        let mut r = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        for c in 0..6 {
            r[c] += e[c] * rad / norm;
        }
        for fam in &set.families {
            let back = fam.reconstruct(&r, set.n_lambda);
            let err = back.iter().zip(&r).zip(&weights).map(|((a, b), w)| w * (a - b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(err);
            let positive = (0..fam.len()).all(|z| fam.gamma_sq(z, &r) > 0.0);
            if rad <= radius {
                inside += 1;
                inside_neg += usize::from(!positive);
            } else {
                outside_neg += usize::from(!positive);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    s.verdict(
        "2 geometric decomposition",
        worst <= 1e-11 && inside_neg == 0 && secs <= 5.0,
        format!(
            "1000 matrices, |R - Id| <= 0.45: max reconstruction error {worst:.2e} (tol 1e-11); \
             certified radius {radius:.4}: {inside_neg} non-positive weights in {inside} decompositions inside, \
             {outside_neg} outside; {secs:.2} s"
        ),
    );
    Ok(())
}

/// (max |‖W‖_q - 1|, max relative second-moment error) over all jets of a bundle.
fn normalisation_errors(bundle: &JetBundle, grid: Grid3) -> (f64, f64) {
    let moment = bundle.params.second_moment(bundle.profiles());
    bundle.jets.iter().fold((0.0f64, 0.0f64), |(a, b), jet| {
        let (lq, w2) = jet.grid_moments(grid, 0.0);
        (a.max((lq - 1.0).abs()), b.max((w2 / moment - 1.0).abs()))
    })
}

fn criterion_3(s: &mut Suite) -> jetforge::Result<()> {
    let start = Instant::now();
    let tiny = desk_preset("tiny")?;
    let bundle = bundle_for(tiny.jet.clone())?;
    let (lq, m2) = normalisation_errors(&bundle, tiny.grid);
    let secs = start.elapsed().as_secs_f64();
    s.verdict(
        "3 jet normalisation and second moment",
        lq <= 1e-3 && m2 <= 1e-3 && secs <= 60.0,
        format!(
            "tiny at {}^3 (resolution rule asks for {}): max |‖W‖_Lq - 1| {lq:.3e}, max second-moment rel error {m2:.3e} (tol 1e-3), {secs:.1} s",
            tiny.grid.n(),
            tiny.jet.required_n()
        ),
    );
    let micro = desk_preset("micro")?;
    let bundle = bundle_for(micro.jet.clone())?;
    let (lq, m2) = normalisation_errors(&bundle, micro.grid);
    s.info(
        "3",
        format!("micro (λσ = 1) at {}^3: max |‖W‖_Lq - 1| {lq:.3e}, max second-moment rel error {m2:.3e}", micro.grid.n()),
    );
    Ok(())
}

fn criterion_4(s: &mut Suite) -> jetforge::Result<()> {
    let ledger = ParamLedger::desk();
    let q = to_f64(&ledger.q);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (j, k) in [(0, 0), (0, 1), (1, 0)] {
        for p in [2.0, q, 4.0] {
            let pts = verify::jet_scaling_sweep(&ledger, j, k, p, &verify::JET_SCALING_LAMBDAS)?;
            let logs: Vec<(f64, f64)> = pts.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
            let slope = verify::fit_line(&logs).0;
            let expected = verify::jet_scaling_exponent(&ledger, j, k, p);
            worst = worst.max((slope - expected).abs());
            parts.push(format!("(j={j},k={k},p={p}) {slope:.3}/{expected:.3}"));
        }
    }
    s.verdict(
        "4 scaling exponents",
        worst <= 0.1,
        format!("fitted/predicted over λ ∈ {{8,16,32}}: {}; max deviation {worst:.3} (tol 0.1)", parts.join(", ")),
    );
    Ok(())
}

fn criterion_5(s: &mut Suite) -> jetforge::Result<()> {
    let tiny = desk_preset("tiny")?;
    let bundle = bundle_for(tiny.jet.clone())?;
    let mut worst = 0.0f64;
    for jet in &bundle.jets {
        worst = worst.max(jet.oscillation_identity_error(verify::OSCILLATION_N1, verify::OSCILLATION_M)?);
    }
    s.verdict(
        "5 oscillation identity",
        worst <= 1e-8,
        format!(
            "{} tiny jets on their lattice tori ({}x{}x{}): max rel L2 error {worst:.2e} (tol 1e-8)",
            bundle.jets.len(),
            verify::OSCILLATION_N1,
            verify::OSCILLATION_M,
            verify::OSCILLATION_M
        ),
    );
    Ok(())
}

fn criterion_6(s: &mut Suite) -> jetforge::Result<IterationReport> {
    let start = Instant::now();
    let cfg = RunConfig::preset("tiny")?;
    let (state, step_cfg) = iteration::setup_run(&cfg)?;
    let out = iteration::step(&state, &step_cfg)?;
    let secs = start.elapsed().as_secs_f64();
    let rows = &out.report.rows;
    let div = rows.iter().map(|r| r.div_u).fold(0.0, f64::max);
    let nsr = rows.iter().map(|r| r.nsr_relative()).fold(0.0, f64::max);
    let u0 = out.state.u.frame(0)?.linf_norm();
    let mut increasing = true;
    let mut pumped = 0;
    for w in rows.windows(2) {
        if w[0].rho0 > 0.0 && w[1].rho0 > 0.0 {
            pumped += 1;
            increasing &= w[1].energy > w[0].energy;
        }
    }
    s.verdict(
        "6 one iteration step",
        div <= 1e-10 && nsr <= 1e-5 && u0 <= 1e-8 && increasing && pumped > 0 && secs <= 900.0,
        format!(
            "tiny at {}^3 x {}: max |div u1| {div:.2e} (tol 1e-10), max NSR residual / ‖div(u1⊗u1)‖ {nsr:.2e} (tol 1e-5), \
             max |u1(0)| {u0:.2e} (tol 1e-8), energy strictly increasing over {pumped} pumped intervals: {increasing}, {secs:.0} s",
            cfg.grid.n_per_axis, cfg.grid.n_t
        ),
    );
    Ok(out.report)
}

fn criterion_7(s: &mut Suite, report: Option<&IterationReport>) -> jetforge::Result<()> {
    let tiny = desk_preset("tiny")?;
    let Some(report) = report else {
        s.verdict("7 energy bookkeeping", false, "no iteration report (criterion 6 errored)".into());
        return Ok(());
    };
    let rem = report
        .rows
        .iter()
        .filter(|r| r.rho0 > 0.0)
        .map(|r| r.remainder_rel.abs())
        .fold(0.0, f64::max);
    // with R̊ = 0 the remainder only depends on grid sums of the jets, so doubling λσ is cheap
    let p = &tiny.jet;
    let doubled = JetParams::from_lambda_sigma(2 * p.lambda_sigma().round() as u64, p.sigma, p.r, p.mu, p.q)?;
    let rem2 = verify::zero_stress_energy_remainder(&bundle_for(doubled)?, tiny.grid, 0.0).abs();
    s.verdict(
        "7 energy bookkeeping",
        rem <= 0.05 && rem2 < rem,
        format!(
            "tiny at {}^3: max |∫|w_p|² - 3Σρ_i∫χ_i²| / ∫|w_p|² {rem:.3e} (tol 5e-2); with λσ doubled {rem2:.3e} (must decrease)",
            tiny.grid.n()
        ),
    );
    let mut parts = Vec::new();
    for ls in [1u64, 2, 4] {
        let params = JetParams::from_lambda_sigma(ls, p.sigma, p.r, p.mu, p.q)?;
        let n = 128 * ls as usize;
        let r = verify::zero_stress_energy_remainder(&bundle_for(params)?, Grid3::new(n)?, 0.0);
        parts.push(format!("λσ={ls} at {n}^3: {r:.3e}"));
    }
    s.info("7", format!("remainder with the grid refined alongside λσ: {}", parts.join(", ")));
    Ok(())
}

fn criterion_8(s: &mut Suite) -> jetforge::Result<()> {
    let res = search_admissible(&SearchBox::named("default")?, 6)?;
    let max_q = res.admissible.first().map(|l| to_f64(&l.q));
    let monotone = res.path_decreases_toward_zero();
    let witness = res.admissible.first().map(integrality_witness);
    let exact = witness.as_ref().is_some_and(|w| w.a_power_integer && w.b_integer);
    s.verdict(
        "8 parameter feasibility",
        max_q.is_some_and(|q| q > 2.0) && monotone && exact,
        format!(
            "{}; max admissible q - 2 = {:.3e}; q decreases toward 2 as ε → 0: {monotone}; integrality witness a^θ = {} (exact: {exact})",
            res.summary(),
            max_q.map_or(f64::NAN, |q| q - 2.0),
            witness.map_or("none".into(), |w| w.value)
        ),
    );
    Ok(())
}

fn criterion_9(s: &mut Suite) -> jetforge::Result<()> {
    let cfg = CheckConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut holder: Option<CheckReport> = None;
    for name in ["commutator", "improved_holder", "inverse_gain"] {
        let start = Instant::now();
        let r = verify::make_check(name)?.run(&cfg)?;
        let secs = start.elapsed().as_secs_f64();
        pass &= r.verdict == Verdict::Pass && secs <= 60.0;
        parts.push(format!(
            "{name} slope {:.3} (expected {:.3} ± {}) {} in {secs:.1} s",
            r.fitted,
            r.expected,
            r.tolerance,
            r.verdict.name()
        ));
        if name == "improved_holder" {
            holder = Some(r);
        }
    }
    s.verdict("9 empirical estimate suite", pass, parts.join("; "));
    if let Some(r) = holder {
        // the inequality itself, with C fitted at the first point
        let p = to_f64(&cfg.ledger.q);
        let (x0, y0) = r.points[0];
        let holds = r.points.iter().all(|&(x, y)| y <= y0 * (x / x0).powf(-1.0 / p) * (1.0 + 1e-12));
        s.info(
            "9",
            format!("improved Hölder excess {:?}; bound C λ^(-1/p) with C from λ = {x0} holds at every λ: {holds}", r.points.iter().map(|p| format!("{:.3e}", p.1)).collect::<Vec<_>>()),
        );
    }
    Ok(())
}

fn small_run_csv() -> jetforge::Result<Vec<u8>> {
    let mut cfg = RunConfig::preset("tiny")?;
    cfg.grid.n_per_axis = 64;
    cfg.grid.n_t = 9;
    cfg.grid.store = "memory".into();
    let (state, step_cfg) = iteration::setup_run(&cfg)?;
    let out = iteration::step(&state, &step_cfg)?;
    let mut buf = Vec::new();
    out.report.write_csv(&mut buf)?;
    let checks = verify::run_checks(&["antidivergence", "commutator", "partition_of_unity"], &CheckConfig::default())?;
    verify::write_summary_csv(&checks, &mut buf)?;
    Ok(buf)
}

fn criterion_10(s: &mut Suite) -> jetforge::Result<()> {
    let a = small_run_csv()?;
    let b = small_run_csv()?;
    s.verdict(
        "10 determinism",
        a == b,
        format!("two runs (tiny at 64^3 x 9, seed 1, plus three checks): {} report bytes, identical: {}", a.len(), a == b),
    );
    Ok(())
}

fn main() {
    // `cargo test` passes harness flags; a filter other than this target's name skips the suite
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }
    let mut s = Suite { failed: Vec::new() };
    macro_rules! run {
        ($id:expr, $e:expr) => {
            if let Err(e) = $e {
                s.error($id, e);
            }
        };
    }
    run!("1 antidivergence", criterion_1(&mut s));
    run!("2 geometric decomposition", criterion_2(&mut s));
    run!("3 jet normalisation and second moment", criterion_3(&mut s));
    run!("4 scaling exponents", criterion_4(&mut s));
    run!("5 oscillation identity", criterion_5(&mut s));
    let report = match criterion_6(&mut s) {
        Ok(r) => Some(r),
        Err(e) => {
            s.error("6 one iteration step", e);
            None
        }
    };
    run!("7 energy bookkeeping", criterion_7(&mut s, report.as_ref()));
    run!("8 parameter feasibility", criterion_8(&mut s));
    run!("9 empirical estimate suite", criterion_9(&mut s));
    run!("10 determinism", criterion_10(&mut s));
    println!("acceptance: {} of 10 criteria failed: {:?}", s.failed.len(), s.failed);
    if !s.failed.is_empty() {
        std::process::exit(1);
    }
}
