use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use p2pxml::api;
use p2pxml::engine::{load_corpus, run_scenario, CorpusConfig, Engine, ScenarioConfig};
use p2pxml::pattern::{evaluate_pattern, evaluate_query, QuerySpec, TreePattern};
use p2pxml::synopsis::{build_synopsis, estimate_contribution};

#[derive(Parser)]
#[command(version, about = "Peer-to-peer XML store simulator with adaptive view materialization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario to completion and write JSONL metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep serving the HTTP API on this port during and after the run.
        #[arg(long)]
        serve: Option<u16>,
    },
    /// Evaluate a query over a directory of XML documents.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        query: String,
    },
    /// Compare the synopsis size estimate of a view with its actual size.
    Estimate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        view: String,
    },
    /// Load a scenario and step it interactively over HTTP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        port: u16,
    },
}

fn read_config(path: &PathBuf) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ScenarioConfig::from_json(&text)?;
    // corpus directories are relative to the config file
    if let CorpusConfig::Dir(dir) = &mut cfg.corpus {
        if dir.is_relative() {
            if let Some(base) = path.parent() {
                *dir = base.join(&*dir);
            }
        }
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match Cli::parse().cmd {
        Cmd::Run { config, out, serve: None } => {
            let jsonl = run_scenario(read_config(&config)?)?;
            std::fs::write(&out, jsonl).with_context(|| format!("writing {}", out.display()))?;
        }
        Cmd::Run {
            config,
            out,
            serve: Some(port),
        } => {
            let cfg = read_config(&config)?;
            let ticks = cfg.ticks;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let handle = api::spawn(Engine::new(cfg)?, Some(Box::new(BufWriter::new(file))));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let server = tokio::spawn(api::serve(handle.clone(), port));
                handle.step(ticks).await?;
                let summary = handle.summary().await?;
                let mut f = std::fs::OpenOptions::new().append(true).open(&out)?;
                writeln!(f, "{}", serde_json::to_string(&summary)?)?;
                tracing::info!("run finished; still serving on port {port}");
                server.await??;
                anyhow::Ok(())
            })?;
        }
        Cmd::Eval { corpus, query } => {
            let docs = load_corpus(&CorpusConfig::Dir(corpus), 0)?;
            let q = QuerySpec::parse(&query)?;
            let table = evaluate_query(&docs, &q);
            println!("{}", serde_json::to_string_pretty(&table.to_json())?);
        }
        Cmd::Estimate { corpus, view } => {
            let docs = load_corpus(&CorpusConfig::Dir(corpus), 0)?;
            let v = TreePattern::parse(&view)?;
            let (mut est, mut act) = (0, 0);
            for d in &docs {
                let e = estimate_contribution(&build_synopsis(d), &v);
                let a = evaluate_pattern(d, &v).payload_bytes();
                if e > 0 || a > 0 {
                    println!("{:<24} estimate {e:>8}  actual {a:>8}", d.uri());
                }
                est += e;
                act += a;
            }
            println!("{:<24} estimate {est:>8}  actual {act:>8}", "total");
        }
        Cmd::Serve { config, port } => {
            let handle = api::spawn(Engine::new(read_config(&config)?)?, None);
            tokio::runtime::Runtime::new()?.block_on(api::serve(handle, port))?;
        }
    }
    Ok(())
}
