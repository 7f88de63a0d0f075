use clap::{Args, Parser, Subcommand};
use jetforge::geometry::DirectionSet;
use jetforge::io::{export_field, make_exporter, CsvSliceExporter, Exporter, RunConfig};
use jetforge::iteration::{self, IterationState, StepConfig};
use jetforge::jets::{JetBundle, ResolutionPolicy};
use jetforge::params::{check_feasibility, integrality_witness, search_admissible, SearchBox};
use jetforge::profiles::{make_shape, Profiles};
use jetforge::time::{make_store, FrameStore, MemoryStore, TimeField, TimeGrid};
use jetforge::verify::{self, CheckConfig, Verdict};
use jetforge::{Error, Grid3, PeriodicField, Rank, Result};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

/// Intermittent-jet convex integration toolkit on the periodic box.
#[derive(Parser, Debug)]
#[command(name = "jetforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Source {
    /// INI run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: identity_scale, tiny or micro.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Source {
    fn load(&self) -> Result<RunConfig> {
        match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p),
            (None, Some(name)) => RunConfig::preset(name),
            (None, None) => RunConfig::preset("tiny"),
        }
    }

    fn out_dir(&self, cfg: &RunConfig) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the parameter ledger against every admissibility constraint.
    ParamsCheck(#[command(flatten)] Source),
    /// Grid search for admissible ledgers.
    ParamsSearch {
        #[arg(long, default_value = "default")]
        r#box: String,
        #[arg(long, default_value_t = 6)]
        resolution: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Build the jet bundle and export the sampled sum of all jets.
    JetsBuild {
        #[command(flatten)]
        src: Source,
        /// strict or report.
        #[arg(long, default_value = "strict")]
        policy: String,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
    },
    /// Normalisation, second moment and oscillation identity of every jet.
    JetsVerify {
        #[command(flatten)]
        src: Source,
    },
    /// Decompose a symmetric matrix over a direction family.
    Decompose {
        /// "id" or six comma-separated entries xx,xy,xz,yy,yz,zz.
        #[arg(long, default_value = "id")]
        matrix: String,
        #[arg(long, default_value_t = 0)]
        family: usize,
    },
    /// Run iteration steps from the zero state.
    Iterate {
        #[command(flatten)]
        src: Source,
        #[arg(long, default_value_t = 1)]
        steps: u32,
        /// Also write every time node of the final state.
        #[arg(long)]
        dump_state: bool,
    },
    /// Navier-Stokes-Reynolds residual of a dumped state, or of a random field series.
    Residual {
        #[command(flatten)]
        series: Series,
    },
    /// Littlewood-Paley shell energetics of a dumped state, or of a random field series.
    Shells {
        #[command(flatten)]
        series: Series,
    },
    /// Run empirical estimate checks.
    Checks {
        /// Comma-separated check names, or "all".
        #[arg(long, default_value = "all")]
        names: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Export a PF1 field, or a preset's jets, to another format.
    Export {
        /// PF1 file to convert; without it the jets of the source config are sampled.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        src: Source,
        /// pf1, vtk_legacy or csv_slice.
        #[arg(long, default_value = "vtk_legacy")]
        format: String,
        /// z-plane index for csv_slice.
        #[arg(long, default_value_t = 0)]
        slice: usize,
        /// Output file.
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
struct Series {
    /// Directory written by `iterate --dump-state`.
    #[arg(long, conflicts_with = "random")]
    state: Option<PathBuf>,
    /// Seed of a random divergence-free series on the source grid.
    #[arg(long)]
    random: Option<u64>,
    #[command(flatten)]
    src: Source,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn csv_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn bundle_for(cfg: &RunConfig) -> Result<JetBundle> {
    let shape = make_shape(&cfg.jets.shape, &cfg.jets.shape_options)?;
    let profiles = Arc::new(Profiles::new(shape, cfg.jet_params()?.q)?);
    JetBundle::new(Arc::new(DirectionSet::default_set()), cfg.jet_params()?, profiles, cfg.jets.seed)
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::ParamsCheck(src) => params_check(&src),
        Command::ParamsSearch { r#box, resolution, out } => {
            let res = search_admissible(&SearchBox::named(&r#box)?, resolution)?;
            fs::create_dir_all(&out)?;
            res.write_csv(csv_file(&out, "admissible.csv")?)?;
            let mut w = csv::Writer::from_writer(csv_file(&out, "binding_histogram.csv")?);
            w.write_record(["constraint", "count"])?;
            for (k, v) in &res.histogram {
                w.write_record([k.clone(), v.to_string()])?;
            }
            w.flush()?;
            println!("{}", res.summary());
            if let Some(best) = res.admissible.first() {
                let wit = integrality_witness(best);
                println!(
                    "largest q = {}, binding {}; a^theta = {} (integer: {}), b integer: {}",
                    jetforge::params::rational_text(&best.q),
                    res.binding_at_max.as_deref().unwrap_or("-"),
                    wit.value,
                    wit.a_power_integer,
                    wit.b_integer
                );
                Ok(0)
            } else {
                Err(Error::Infeasible("no admissible ledger in the search box".into()))
            }
        }
        Command::JetsBuild { src, policy, t } => {
            let cfg = src.load()?;
            let out = src.out_dir(&cfg)?;
            let grid = cfg.grid3()?;
            let bundle = bundle_for(&cfg)?;
            if let Some(msg) = ResolutionPolicy::parse(&policy)?.check(&bundle.params, grid)? {
                log::debug!("{msg}");
            }
            let mut w = csv::Writer::from_writer(csv_file(&out, "jets.csv")?);
            w.write_record(["jet", "family", "zeta_x", "zeta_y", "zeta_z", "shift_x", "shift_y", "shift_z"])?;
            for (i, j) in bundle.jets.iter().enumerate() {
                let z = j.zeta();
                let mut row = vec![i.to_string(), j.family.to_string()];
                row.extend(z.iter().chain(&j.alpha).map(|x| jetforge::io::fmt_f64(*x)));
                w.write_record(&row)?;
            }
            w.flush()?;
            let sample = bundle.sample(grid, t)?;
            let field = sum_of_jets(&bundle, &sample);
            for fmt in &cfg.output.formats {
                let e = make_exporter(fmt)?;
                export_field(&out.join(format!("jets.{}", e.extension())), &field, e.as_ref())?;
            }
            println!(
                "{} jets, K = {}, support margin {:.4}, written to {}",
                bundle.jets.len(),
                bundle.jets[0].lattice_k(),
                bundle.margin,
                out.display()
            );
            Ok(0)
        }
        Command::JetsVerify { src } => jets_verify(&src),
        Command::Decompose { matrix, family } => {
            let r: [f64; 6] = if matrix == "id" {
                [1.0, 0.0, 0.0, 1.0, 0.0, 1.0]
            } else {
                let v: Vec<f64> = matrix
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("matrix '{matrix}' is not six numbers")))?;
                v.try_into()
                    .map_err(|_| Error::Config(format!("matrix '{matrix}' needs six entries")))?
            };
            let set = DirectionSet::default_set();
            let fam = set.family(family);
            let back = fam.reconstruct(&r, set.n_lambda);
            let weights = [1.0, 2.0, 2.0, 1.0, 2.0, 1.0];
            let residual = back
                .iter()
                .zip(&r)
                .zip(&weights)
                .map(|((a, b), w)| w * (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            for (z, d) in fam.dirs.iter().enumerate() {
                println!("{:?} gamma^2 = {}", d.zeta, jetforge::io::fmt_f64(fam.gamma_sq(z, &r)));
            }
            println!("residual = {}", jetforge::io::fmt_f64(residual));
            fam.gammas(&r)?;
            Ok(0)
        }
        Command::Iterate { src, steps, dump_state } => iterate(&src, steps, dump_state),
        Command::Residual { series } => {
            let (s, out) = load_series(&series)?;
            let rows = verify::nsr_residual(&s.u, &s.r, &s.p, s.dudt.as_ref(), s.nu())?;
            verify::write_residual_csv(&rows, csv_file(&out, "residual.csv")?)?;
            let worst = rows.iter().map(|r| r.relative()).fold(0.0, f64::max);
            println!("max relative residual {worst:.3e} over {} nodes", rows.len());
            Ok(0)
        }
        Command::Shells { series } => {
            let (s, out) = load_series(&series)?;
            let table = verify::shell_flux_analysis(&s.u, s.nu())?;
            verify::write_shell_csv(&table, csv_file(&out, "shells.csv")?)?;
            match table.ratio_slope {
                Some(a) => println!("{} shells, log2 ratio slope {a:.3}", table.rows.len()),
                None => println!("{} shells, too few with energy for a slope", table.rows.len()),
            }
            Ok(0)
        }
        Command::Checks { names, seed, n, out } => {
            let list: Vec<&str> = if names == "all" {
                verify::CHECK_NAMES.to_vec()
            } else {
                names.split(',').map(str::trim).collect()
            };
            let cfg = CheckConfig {
                seed,
                n,
                ..CheckConfig::default()
            };
            let reports = verify::run_checks(&list, &cfg)?;
            fs::create_dir_all(&out)?;
            for r in &reports {
                r.write_csv(csv_file(&out, &format!("check_{}.csv", r.id))?)?;
                println!("{} {}: fitted {:.4}, expected {:.4}", r.verdict.name(), r.id, r.fitted, r.expected);
            }
            verify::write_summary_csv(&reports, csv_file(&out, "summary.csv")?)?;
            Ok(if reports.iter().all(|r| r.verdict == Verdict::Pass) { 0 } else { 1 })
        }
        Command::Export {
            input,
            src,
            format,
            slice,
            output,
        } => {
            let field = match input {
                Some(p) => PeriodicField::read_pf1(std::io::BufReader::new(File::open(p)?))?,
                None => {
                    let cfg = src.load()?;
                    let bundle = bundle_for(&cfg)?;
                    let sample = bundle.sample(cfg.grid3()?, 0.0)?;
                    sum_of_jets(&bundle, &sample)
                }
            };
            let e: Box<dyn Exporter> = if format == "csv_slice" {
                Box::new(CsvSliceExporter { k: slice })
            } else {
                make_exporter(&format)?
            };
            export_field(&output, &field, e.as_ref())?;
            Ok(0)
        }
    }
}

fn sum_of_jets(bundle: &JetBundle, sample: &jetforge::jets::BundleSample) -> PeriodicField {
    let mut data = vec![vec![0.0; sample.grid.len()]; 3];
    for (idx, &o) in sample.owner.iter().enumerate() {
        if o != jetforge::jets::NO_OWNER {
            let v = &sample.value[idx];
            let z = bundle.jets[o as usize].zeta();
            for c in 0..3 {
                data[c][idx] = v.psi * v.phi * z[c];
            }
        }
    }
    PeriodicField::from_components(sample.grid, Rank::Vector, data).expect("sizes match")
}

fn params_check(src: &Source) -> Result<u8> {
    let cfg = src.load()?;
    let out = src.out_dir(&cfg)?;
    let rep = check_feasibility(&cfg.ledger);
    rep.write_csv(csv_file(&out, "feasibility.csv")?)?;
    for c in &rep.constraints {
        println!("{:<40} {}", c.name, if c.satisfied { "ok" } else { "VIOLATED" });
    }
    let wit = integrality_witness(&cfg.ledger);
    println!("a^theta = {} (integer: {}), b integer: {}", wit.value, wit.a_power_integer, wit.b_integer);
    if rep.feasible() {
        Ok(0)
    } else {
        let names: Vec<&str> = rep.violated().iter().map(|c| c.name).collect();
        Err(Error::Infeasible(format!("violated: {}", names.join(", "))))
    }
}

fn jets_verify(src: &Source) -> Result<u8> {
    let cfg = src.load()?;
    let out = src.out_dir(&cfg)?;
    let grid = cfg.grid3()?;
    let bundle = bundle_for(&cfg)?;
    let moment = bundle.params.second_moment(bundle.profiles());
    let mut w = csv::Writer::from_writer(csv_file(&out, "jets_verify.csv")?);
    w.write_record(["jet", "lq_norm_error", "second_moment_error", "oscillation_identity_error"])?;
    let mut ok = true;
    for (i, jet) in bundle.jets.iter().enumerate() {
        let (lq, w2) = jet.grid_moments(grid, 0.0);
        let osc = jet.oscillation_identity_error(verify::OSCILLATION_N1, verify::OSCILLATION_M)?;
        let (e1, e2) = (lq - 1.0, w2 / moment - 1.0);
        ok &= e1.abs() <= 1e-3 && e2.abs() <= 1e-3 && osc <= 1e-8;
        w.write_record([i.to_string(), jetforge::io::fmt_f64(e1), jetforge::io::fmt_f64(e2), jetforge::io::fmt_f64(osc)])?;
        println!("jet {i}: |W|_Lq - 1 = {e1:.3e}, second moment {e2:.3e}, oscillation {osc:.3e}");
    }
    w.flush()?;
    if let Some(msg) = ResolutionPolicy::Report.check(&bundle.params, grid)? {
        println!("{msg}");
    }
    Ok(if ok { 0 } else { 1 })
}

fn iterate(src: &Source, steps: u32, dump: bool) -> Result<u8> {
    if steps == 0 {
        return Err(Error::Config("--steps must be at least 1".into()));
    }
    let mut cfg = src.load()?;
    let out = src.out_dir(&cfg)?;
    let (mut state, mut step_cfg) = iteration::setup_run(&cfg)?;
    for m in 0..steps {
        if m > 0 {
            // the next level needs higher frequency; λσ doubles per step
            cfg.jets.lambda_sigma *= 2;
            step_cfg = StepConfig {
                bundle: Arc::new(bundle_for(&cfg)?),
                ..step_cfg
            };
        }
        let res = iteration::step(&state, &step_cfg)?;
        res.report.write_csv(csv_file(&out, &format!("iteration_{m}.csv"))?)?;
        for n in &res.report.notes {
            println!("step {m}: {n}");
        }
        let last = res.report.rows.last().expect("at least one node");
        println!(
            "step {m}: λσ = {}, energy at T {:.4e}, ‖R̊‖_L1 at T {:.4e}, max NSR residual {:.2e} (max ‖div(u⊗u)‖ {:.2e})",
            cfg.jets.lambda_sigma,
            last.energy,
            last.r_new_l1,
            res.report.max_of(|r| r.nsr_residual_l2),
            res.report.max_of(|r| r.nonlinear_l2)
        );
        state = res.state;
        // written every step so a later failure still leaves the last good level on disk
        write_final(&state, &out, dump)?;
    }
    Ok(0)
}

fn write_final(state: &IterationState, out: &Path, dump: bool) -> Result<()> {
    let n_last = state.time().n_t - 1;
    let e = make_exporter("pf1")?;
    for (name, f) in [("u", &state.u), ("r", &state.r), ("p", &state.p)] {
        export_field(&out.join(format!("{name}_final.pf1")), &*f.frame(n_last)?, e.as_ref())?;
    }
    if dump {
        dump_state(state, &out.join("state"))?;
    }
    Ok(())
}

const STATE_FIELDS: [&str; 4] = ["u", "r", "p", "dudt"];

fn dump_state(s: &IterationState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let time = s.time();
    fs::write(
        dir.join("state.ini"),
        format!(
            "[state]\nm = {}\nn_t = {}\nt0 = {}\nt1 = {}\nnu = {}\n",
            s.m,
            time.n_t,
            jetforge::io::fmt_f64(time.t0),
            jetforge::io::fmt_f64(time.t1),
            jetforge::io::fmt_f64(s.nu())
        ),
    )?;
    for (name, f) in STATE_FIELDS.iter().zip([Some(&s.u), Some(&s.r), Some(&s.p), s.dudt.as_ref()]) {
        let Some(f) = f else { continue };
        for n in 0..time.n_t {
            let mut w = BufWriter::new(File::create(dir.join(format!("{name}_{n:03}.pf1")))?);
            f.frame(n)?.write_pf1(&mut w)?;
        }
    }
    Ok(())
}

struct LoadedSeries {
    u: TimeField,
    r: TimeField,
    p: TimeField,
    dudt: Option<TimeField>,
    nu: f64,
}

impl LoadedSeries {
    fn nu(&self) -> f64 {
        self.nu
    }
}

fn load_series(series: &Series) -> Result<(LoadedSeries, PathBuf)> {
    let cfg = series.src.load()?;
    let out = series.src.out_dir(&cfg)?;
    let nu = jetforge::params::to_f64(&cfg.ledger.nu);
    if let Some(dir) = &series.state {
        return Ok((read_state(dir)?, out));
    }
    let seed = series.random.unwrap_or(cfg.jets.seed);
    let grid = cfg.grid3()?;
    let time = TimeGrid::new(0.0, cfg.ledger.t_end.value(), cfg.grid.n_t)?;
    let store = MemoryStore;
    let a = verify::random_solenoidal(grid, 4.0, seed);
    let b = verify::random_solenoidal(grid, 4.0, seed + 1);
    let u = TimeField::from_fn(time, grid, Rank::Vector, &store, |_, t| {
        let mut f = a.scaled(t.cos());
        f.axpy(t.sin(), &b)?;
        Ok(f)
    })?;
    let s = LoadedSeries {
        u,
        r: TimeField::zeros(time, grid, Rank::SymTensor),
        p: TimeField::zeros(time, grid, Rank::Scalar),
        dudt: None,
        nu,
    };
    Ok((s, out))
}

fn read_state(dir: &Path) -> Result<LoadedSeries> {
    let text = fs::read_to_string(dir.join("state.ini"))?;
    let mut kv = std::collections::BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| -> Result<f64> {
        kv.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("state.ini: missing or invalid '{k}'")))
    };
    let time = TimeGrid::new(get("t0")?, get("t1")?, get("n_t")? as usize)?;
    let store: Arc<dyn FrameStore> = make_store("auto", 0)?;
    let load = |name: &str, rank: Rank| -> Result<Option<TimeField>> {
        if !dir.join(format!("{name}_000.pf1")).exists() {
            return Ok(None);
        }
        let mut frames = Vec::with_capacity(time.n_t);
        let mut grid: Option<Grid3> = None;
        for n in 0..time.n_t {
            let f = PeriodicField::read_pf1(std::io::BufReader::new(File::open(dir.join(format!("{name}_{n:03}.pf1")))?))?;
            if f.rank() != rank {
                return Err(Error::Format(format!("{name}_{n:03}.pf1 has rank {:?}, expected {rank:?}", f.rank())));
            }
            grid = Some(f.grid());
            frames.push(store.store(f)?);
        }
        Ok(Some(TimeField::from_frames(time, grid.expect("n_t > 0"), rank, frames)?))
    };
    let u = load("u", Rank::Vector)?.ok_or_else(|| Error::Config(format!("no velocity frames in {}", dir.display())))?;
    let zeros = |rank| TimeField::zeros(time, u.grid, rank);
    Ok(LoadedSeries {
        r: load("r", Rank::SymTensor)?.unwrap_or_else(|| zeros(Rank::SymTensor)),
        p: load("p", Rank::Scalar)?.unwrap_or_else(|| zeros(Rank::Scalar)),
        dudt: load("dudt", Rank::Vector)?,
        nu: get("nu")?,
        u,
    })
}
