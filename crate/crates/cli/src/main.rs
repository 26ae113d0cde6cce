//! `prevsynth`: validate inputs, fit the evidence-synthesis model, sweep
//! bias structures, cross-validate and simulate synthetic data sets.

mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use prevsynth::diagnostics::{bias_sweep, fit_tables, lodo_cv, DevianceReport};
use prevsynth::inference::{fit, EvidenceModel, FitOutput, RunOutput, SamplerConfig};
use prevsynth::observation::{BiasFlag, BiasStructure, ObservationSet};
use prevsynth::synthgen::{generate_observations, Scenario};
use prevsynth::{AgeGroup, Error};

use manifest::{Loaded, RunManifest};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_IMPOSSIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "prevsynth", version, about = "Bayesian evidence synthesis for stratified prevalence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check inputs and list what each source informs.
    Validate(RunArgs),
    /// Fit one bias structure and write the posterior summary.
    Fit(RunArgs),
    /// Fit all seven bias structures and compare deviances.
    Sweep(RunArgs),
    /// Leave-one-source-out cross-validation.
    Cv(RunArgs),
    /// Generate a synthetic data set with known truth.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "b1..b7")]
    bias_structure: Option<BiasStructure>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    allow_prior_only: bool,
    /// Also write every retained draw to trace.csv.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML; the built-in ten-source facsimile when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Drop every true bias.
    #[arg(long)]
    zero_bias: bool,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let code = match e.downcast_ref::<Error>() {
            Some(Error::ImpossibleData(_)) => EXIT_IMPOSSIBLE,
            Some(Error::Identifiability(_) | Error::InvalidRecord { .. }) => EXIT_VALIDATION,
            _ => 1,
        };
        Failure { code, message: format!("{e:#}") }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Cv(a) => cmd_cv(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_manifest(a: &RunArgs) -> anyhow::Result<RunManifest> {
    let mut m = RunManifest::load(&a.manifest)?;
    if let Some(o) = &a.out {
        // Flag paths are relative to the working directory.
        m.out = std::path::absolute(o).with_context(|| format!("resolving {}", o.display()))?;
    }
    if let Some(s) = a.seed {
        m.seed = s;
    }
    if let Some(b) = a.bias_structure {
        m.bias_structure = b;
    }
    if let Some(c) = a.chains {
        m.sampler.chains = c;
    }
    if let Some(i) = a.iters {
        m.sampler.iterations = i;
    }
    if let Some(b) = a.burnin {
        m.sampler.burn_in = b;
    }
    m.allow_prior_only |= a.allow_prior_only;
    Ok(m)
}

/// Runs validation, printing every problem. `None` means validation failed.
fn validated(m: &RunManifest, quiet: bool) -> Option<Loaded> {
    let v = m.validate();
    for e in &v.errors {
        eprintln!("invalid: {e}");
    }
    if !quiet && v.errors.is_empty() {
        eprintln!("validation passed");
    }
    v.loaded
}

fn cmd_validate(a: &RunArgs) -> Result<u8, Failure> {
    let m = load_manifest(a)?;
    let v = m.validate();
    let mut out = String::new();
    if let Some(l) = &v.loaded {
        out.push_str(&source_listing(&l.observations));
    }
    if v.errors.is_empty() {
        writeln!(out, "identifiability under {}: ok", m.bias_structure).ok();
        writeln!(out, "0 errors").ok();
        print!("{out}");
        Ok(0)
    } else {
        print!("{out}");
        for e in &v.errors {
            println!("error: {e}");
        }
        println!("{} errors", v.errors.len());
        Ok(EXIT_VALIDATION)
    }
}

/// One line per source and target kind: level, bias flag and the age
/// bands covered.
fn source_listing(obs: &ObservationSet) -> String {
    let mut rows: BTreeMap<(String, String, bool), BTreeSet<String>> = BTreeMap::new();
    for o in &obs.binomial {
        let key = (o.source_id.clone(), o.target.kind_label(), o.bias_flag == BiasFlag::Biased);
        rows.entry(key).or_default().insert(AgeGroup::range_label(&o.target.ages()));
    }
    for o in &obs.multinomial {
        let age = o.target.age.map_or("pooled".to_string(), |a| a.to_string());
        rows.entry((o.source_id.clone(), o.target.kind_label(), false)).or_default().insert(age);
    }
    let mut out = String::new();
    for ((s, kind, biased), ages) in rows {
        let level = obs.sources.get(&s).map_or("city".to_string(), |m| format!("{:?}", m.level).to_lowercase());
        let flag = if biased { "biased" } else { "unbiased" };
        let ages: Vec<String> = ages.into_iter().collect();
        writeln!(out, "{s:<8} {level:<9} {kind:<13} {flag:<9} {}", ages.join(" ")).ok();
    }
    out
}

fn out_dir(m: &RunManifest) -> anyhow::Result<PathBuf> {
    let dir = m.resolve(&m.out);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_fit(a: &RunArgs) -> Result<u8, Failure> {
    let m = load_manifest(a)?;
    let Some(l) = validated(&m, true) else { return Ok(EXIT_VALIDATION) };
    let model = EvidenceModel::new(&l.observations, l.census.clone(), m.model_config())?;
    let FitOutput { summary, run } = fit(&model, &m.sampler_config())?;
    let dir = out_dir(&m)?;
    write(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).context("serialising summary")?)?;
    let mut tables = fit_tables(&summary, &l.census);
    if !summary.deviance.is_empty() {
        let d = DevianceReport::from_summary(&summary, &m.reference);
        writeln!(tables, "deviance: model {:.1} = unbiased {:.1} + referenced {:.1}", d.model, d.unbiased, d.biased_to_unbiased).ok();
    }
    write(&dir.join("tables.txt"), &tables)?;
    if a.trace {
        write_trace(&dir.join("trace.csv"), &run)?;
    }
    print!("{tables}");
    if summary.converged {
        Ok(0)
    } else {
        let bad: Vec<&str> = summary.quantities.iter().filter(|q| !q.converged).map(|q| q.name.as_str()).collect();
        eprintln!("not converged: {}", bad.join(", "));
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn write_trace(path: &Path, run: &RunOutput) -> anyhow::Result<()> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "chain,draw,{}", run.names.join(","))?;
    for (c, chain) in run.chains.iter().enumerate() {
        for (i, row) in chain.draws.chunks(chain.width.max(1)).enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{c},{i},{}", vals.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep(a: &RunArgs) -> Result<u8, Failure> {
    let m = load_manifest(a)?;
    let Some(l) = validated(&m, true) else { return Ok(EXIT_VALIDATION) };
    let report = bias_sweep(&l.observations, &l.census, &m.refit_config())?;
    let dir = out_dir(&m)?;
    write(&dir.join("sweep.json"), &serde_json::to_string_pretty(&report).context("serialising sweep")?)?;
    let mut text = report.table();
    if let Some(b) = report.best() {
        writeln!(text, "\nlowest model deviance: {b}").ok();
    }
    text.push_str("* family not converged\n");
    write(&dir.join("sweep.txt"), &text)?;
    print!("{text}");
    Ok(0)
}

fn cmd_cv(a: &RunArgs) -> Result<u8, Failure> {
    let m = load_manifest(a)?;
    let Some(l) = validated(&m, true) else { return Ok(EXIT_VALIDATION) };
    let report = lodo_cv(&l.observations, &l.census, &m.refit_config())?;
    let dir = out_dir(&m)?;
    write(&dir.join("cv.json"), &serde_json::to_string_pretty(&report).context("serialising cv")?)?;
    let mut text = String::from("Posterior mean deviance by removed source\n");
    text.push_str(&report.deviance_table());
    text.push_str("\nKey quantities by removed source (%)\n");
    text.push_str(&report.quantity_table());
    text.push_str("* not converged (R-hat >= 1.05)\n");
    if !report.conflicts.is_empty() {
        text.push_str("\nPossible conflicts (deviance of source drops when another is removed)\n");
        for c in &report.conflicts {
            writeln!(
                text,
                "{} without {}: {:.1} -> {:.1}{}",
                c.source,
                c.removed,
                c.full,
                c.reduced,
                if c.significant { " (beyond MC error)" } else { "" }
            )
            .ok();
        }
    }
    write(&dir.join("cv.txt"), &text)?;
    print!("{text}");
    Ok(0)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<u8, Failure> {
    let mut scenario = match &a.scenario {
        Some(p) => Scenario::from_path(p).with_context(|| format!("reading scenario {}", p.display()))?,
        None => Scenario::facsimile(),
    };
    if a.zero_bias {
        scenario = scenario.without_bias();
    }
    let obs = generate_observations(&scenario, a.seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut csv = Vec::new();
    obs.write_csv(&mut csv)?;
    write(&a.out.join("observations.csv"), &String::from_utf8(csv).context("observation CSV")?)?;
    write(&a.out.join("sources.toml"), &obs.sources_toml()?)?;
    let mut census = Vec::new();
    scenario.census_table()?.write_csv(&mut census)?;
    write(&a.out.join("census.csv"), &String::from_utf8(census).context("census CSV")?)?;
    write(&a.out.join("truth.json"), &serde_json::to_string_pretty(&scenario.truth()?).context("serialising truth")?)?;
    write(&a.out.join("scenario.toml"), &scenario.to_toml()?)?;
    let manifest = RunManifest {
        census: Some("census.csv".into()),
        observations: "observations.csv".into(),
        sources: Some("sources.toml".into()),
        seed: a.seed,
        sampler: SamplerConfig { seed: a.seed, ..SamplerConfig::default() },
        ..RunManifest::default()
    };
    write(&a.out.join("manifest.toml"), &toml::to_string(&manifest).context("serialising manifest")?)?;
    println!(
        "wrote {} binomial and {} multinomial observations from {} sources to {}",
        obs.binomial.len(),
        obs.multinomial.len(),
        obs.source_ids().len(),
        a.out.display()
    );
    Ok(0)
}
