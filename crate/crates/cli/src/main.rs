use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hrcount::counting::{self, expectation_met, Answer, CountingAbstraction, ReachMode, Verdict};
use hrcount::export;
use hrcount::grammar::{parse_spec, Expectation, Spec};
use hrcount::oracle::{self, OracleConfig};
use hrcount::pebble;

#[derive(Parser)]
#[command(
    name = "hrcount",
    version,
    about = "Verify networks whose topologies come from HR grammars"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decide every query of a spec file
    Check(CheckArgs),
    /// Write the combined nets of a spec file
    Export(ExportArgs),
    /// Compare the verdicts with exhaustive exploration of small instances
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Auto,
    Counting,
    Pebble,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Lola,
    Pnml,
}

#[derive(Args)]
struct CheckArgs {
    path: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    mode: ModeArg,
    /// Print the firing sequence behind UNKNOWN verdicts
    #[arg(long)]
    witness: bool,
    #[arg(long, value_name = "DIR")]
    emit_lola: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    emit_pnml: Option<PathBuf>,
    /// State cap for reach queries; 0 exports them instead of searching
    #[arg(long, value_name = "K")]
    bounded_reach: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    path: PathBuf,
    #[arg(long, value_enum)]
    format: Format,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    path: PathBuf,
    /// Write the report here instead of standard output
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    #[arg(long, value_name = "N", default_value_t = 8)]
    max_vertices: usize,
    #[arg(long, value_name = "N", default_value_t = 1_000_000)]
    state_cap: usize,
    #[arg(long, value_name = "K")]
    bounded_reach: Option<usize>,
    /// Drop the rule transitions of every init net before comparing
    #[arg(long, hide = true)]
    corrupt_init: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Check(a) => cmd_check(a),
        Cmd::Export(a) => cmd_export(a),
        Cmd::Oracle(a) => cmd_oracle(a),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            if e.downcast_ref::<ReportedError>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}

/// A failure already described on standard error.
#[derive(Debug)]
struct ReportedError;

impl std::fmt::Display for ReportedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("invalid specification")
    }
}

impl std::error::Error for ReportedError {}

fn load(path: &Path) -> anyhow::Result<Spec> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    match parse_spec(&text) {
        Ok(spec) => {
            for w in &spec.warnings {
                eprintln!("{}: warning: {w}", path.display());
            }
            Ok(spec)
        }
        Err(e) => {
            for d in &e.0 {
                eprintln!("{}:{d}", path.display());
            }
            Err(ReportedError.into())
        }
    }
}

fn reach_mode(k: Option<usize>) -> ReachMode {
    match k {
        Some(0) => ReachMode::Export,
        Some(k) => ReachMode::Bounded(k),
        None => ReachMode::Bounded(counting::DEFAULT_REACH_CAP),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "net".into())
}

fn emit(
    abs: &CountingAbstraction,
    spec: &Spec,
    stem: &str,
    dir: &Path,
    format: Format,
) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut written = Vec::new();
    let mut write = |name: String, body: String| -> anyhow::Result<()> {
        let p = dir.join(name);
        fs::write(&p, body).with_context(|| format!("cannot write {}", p.display()))?;
        written.push(p);
        Ok(())
    };
    for (i, c) in abs.nets.iter().enumerate() {
        let net = format!("{stem}_{i}");
        match format {
            Format::Lola => write(format!("{net}.lola"), export::write_lola(&c.pn)?)?,
            Format::Pnml => write(format!("{net}.pnml"), export::write_pnml(&c.pn, &net)?)?,
        }
        for q in &spec.queries {
            if let Some(f) = export::reach_formula(c, q) {
                write(format!("{net}.{}.formula", q.id), f)?;
            }
        }
    }
    Ok(written)
}

fn expectation_word(e: Expectation) -> &'static str {
    match e {
        Expectation::Safe => "safe",
        Expectation::Unknown => "unknown",
        Expectation::Coverable => "coverable",
        Expectation::Uncoverable => "uncoverable",
        Expectation::Exported => "exported",
    }
}

fn pebble_applies(spec: &Spec) -> Result<(), String> {
    let sig = pebble::check_pps(&spec.decls, &spec.grammar).map_err(|e| e.to_string())?;
    for q in &spec.queries {
        pebble::pps_target(&sig, q).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn print_verdict(v: &Verdict, witness: bool) {
    println!("QUERY {}: {}", v.query, v.answer);
    if !witness {
        return;
    }
    for n in &v.notes {
        println!("  note: {n}");
    }
    if let Some(w) = &v.witness {
        println!("  witness in net {}:", w.net);
        for (id, desc) in &w.steps {
            println!("    {id}  {desc}");
        }
    }
}

fn cmd_check(a: &CheckArgs) -> anyhow::Result<ExitCode> {
    let spec = load(&a.path)?;
    let pebble_mode = match a.mode {
        ModeArg::Counting => false,
        ModeArg::Pebble => {
            if let Err(e) = pebble_applies(&spec) {
                bail!("pebble mode unavailable: {e}");
            }
            true
        }
        ModeArg::Auto => pebble_applies(&spec).is_ok(),
    };
    let needs_nets = !pebble_mode || a.emit_lola.is_some() || a.emit_pnml.is_some();
    let abs = if needs_nets {
        let abs = CountingAbstraction::build(&spec.decls, &spec.grammar)?;
        for w in &abs.warnings {
            eprintln!("{}: warning: {w}", a.path.display());
        }
        Some(abs)
    } else {
        None
    };
    if let Some(abs) = &abs {
        let s = stem(&a.path);
        if let Some(dir) = &a.emit_lola {
            emit(abs, &spec, &s, dir, Format::Lola)?;
        }
        if let Some(dir) = &a.emit_pnml {
            emit(abs, &spec, &s, dir, Format::Pnml)?;
        }
    }
    let reach = reach_mode(a.bounded_reach);
    let mut violation = false;
    for q in &spec.queries {
        let v = match &abs {
            Some(abs) if !pebble_mode => abs.verify(q, reach)?,
            _ => pebble::decide_cover_pps(&spec.decls, &spec.grammar, q)?,
        };
        print_verdict(&v, a.witness);
        let ok = match q.expect {
            Some(e) => {
                let met = expectation_met(e, v.answer);
                if !met {
                    eprintln!("query {}: expected {}, got {}", q.id, expectation_word(e), v.answer);
                }
                met
            }
            None => matches!(v.answer, Answer::Safe | Answer::Uncoverable),
        };
        violation |= !ok;
    }
    Ok(if violation {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_export(a: &ExportArgs) -> anyhow::Result<ExitCode> {
    let spec = load(&a.path)?;
    let abs = CountingAbstraction::build(&spec.decls, &spec.grammar)?;
    for p in emit(&abs, &spec, &stem(&a.path), &a.out, a.format)? {
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(a: &OracleArgs) -> anyhow::Result<ExitCode> {
    if a.max_vertices == 0 {
        bail!("--max-vertices must be at least 1");
    }
    let spec = load(&a.path)?;
    let cfg = OracleConfig {
        max_vertices: a.max_vertices,
        state_cap: a.state_cap,
        reach: reach_mode(a.bounded_reach),
    };
    let abs = if a.corrupt_init {
        CountingAbstraction::build_with(&spec.decls, &spec.grammar, oracle::starve_init_net)?
    } else {
        CountingAbstraction::build(&spec.decls, &spec.grammar)?
    };
    let report = oracle::check_soundness_against(&spec.decls, &spec.grammar, &spec.queries, cfg, &abs)?;
    let kinds = spec.queries.iter().map(|q| (q.id.clone(), q.kind)).collect();
    let text = report.render(&kinds);
    match &a.report {
        Some(p) => fs::write(p, &text).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{text}"),
    }
    if !report.is_clean() {
        eprintln!("{} discrepancies", report.discrepancies.len());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}
