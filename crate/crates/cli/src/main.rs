use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Result};
use casma_core::effects::CorrectionPolicy;
use casma_core::ingest::remote::{RemoteSource, SourceConfig};
use casma_core::ingest::write_corpus;
use casma_core::meta::Estimator;
use casma_core::report::ReportFormat;
use clap::{Parser, Subcommand, ValueEnum};

use casma_cli::config::{PipelineConfig, Stage, Tau2Ci};
use casma_cli::pipeline::run_pipeline;
use casma_cli::stages::{self, PoolOptions};

#[derive(Parser)]
#[command(name = "casma", version, about = "Record screening and random-effects meta-analysis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Crossref,
    Pubmed,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Reml,
    Dl,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrectionArg {
    ZeroCellOnly,
    Forbid,
}

#[derive(Subcommand)]
enum Command {
    /// Query Crossref or PubMed and write the records as JSONL.
    Harvest {
        #[arg(long, value_enum)]
        source: SourceArg,
        #[arg(long)]
        query: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_pages: Option<usize>,
        /// Contact address sent to the polite pool.
        #[arg(long, default_value = "")]
        contact: String,
        #[arg(long, default_value_t = 100)]
        delay_ms: u64,
        #[arg(long, default_value_t = 100)]
        page_size: usize,
    },
    /// Import CSV/JSONL exports into a corpus and open the PRISMA ledger.
    Import {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
    },
    /// Collapse identical DOIs, then titles closer than the threshold.
    Dedup {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = casma_core::dedup::DEFAULT_THRESHOLD)]
        threshold: usize,
        #[arg(long)]
        pairs_out: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Upstream ledger to extend.
        #[arg(long)]
        ledger_in: Option<PathBuf>,
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Apply the regular-expression rule set.
    Screen {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        decisions: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        ledger_in: Option<PathBuf>,
    },
    /// Weighted kappa between two reviewers with a BCa bootstrap interval.
    Irr {
        #[arg(long)]
        grades: PathBuf,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Log risk ratios from a trial table.
    Extract {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "zero-cell-only")]
        correction: CorrectionArg,
    },
    /// Random-effects pooling with optional resampling analyses.
    Pool {
        #[arg(long)]
        effects: PathBuf,
        #[arg(long, value_enum, default_value = "reml")]
        estimator: EstimatorArg,
        /// Bootstrap replications; 0 disables the bootstrap.
        #[arg(long, default_value_t = 0)]
        boot: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        loo: bool,
        /// Comma-separated: qprofile, profile.
        #[arg(long, value_delimiter = ',')]
        tau2_ci: Vec<String>,
        #[arg(long, default_value_t = casma_core::meta::DEFAULT_PROFILE_STEPS)]
        profile_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Doi plot and LFK index.
    Bias {
        #[arg(long)]
        effects: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Render JSON, SVG and Markdown reports.
    Report {
        #[arg(long)]
        pooled: PathBuf,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        bias: Option<PathBuf>,
        /// Comma-separated: json, svg, markdown.
        #[arg(long, value_delimiter = ',', default_value = "json,svg,markdown")]
        format: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the configured pipeline end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only these stages (comma-separated), reading earlier
        /// artifacts from the output directory.
        #[arg(long, value_delimiter = ',')]
        stage: Vec<String>,
    },
}

fn parse_tau2(items: &[String]) -> Result<Vec<Tau2Ci>> {
    items
        .iter()
        .map(|s| match s.trim().to_ascii_lowercase().as_str() {
            "qprofile" | "q-profile" => Ok(Tau2Ci::Qprofile),
            "profile" | "pl" => Ok(Tau2Ci::Profile),
            other => bail!("unknown tau2 interval '{other}' (expected qprofile or profile)"),
        })
        .collect()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Harvest {
            source,
            query,
            out,
            max_pages,
            contact,
            delay_ms,
            page_size,
        } => {
            let source = match source {
                SourceArg::Crossref => RemoteSource::Crossref,
                SourceArg::Pubmed => RemoteSource::Pubmed,
            };
            let mut settings = SourceConfig::for_source(source, &contact);
            settings.delay_ms = delay_ms;
            settings.page_size = page_size;
            let records = stages::harvest_remote(source, &query, settings, max_pages)?;
            write_corpus(&out, &records)?;
            println!("harvested {} records", records.len());
        }
        Command::Import { inputs, out, ledger } => {
            let n = stages::identify(&inputs, Vec::new(), &out, &ledger)?;
            println!("{n} records written to {}", out.display());
        }
        Command::Dedup {
            input,
            threshold,
            pairs_out,
            out,
            ledger_in,
            ledger,
        } => {
            let s = stages::dedup(&input, threshold, &pairs_out, &out, ledger_in.as_deref(), ledger.as_deref())?;
            println!(
                "removed {} by DOI and {} by title; {} records kept",
                s.doi_removed, s.title_removed, s.kept
            );
        }
        Command::Screen {
            rules,
            input,
            decisions,
            ledger,
            ledger_in,
        } => {
            let n = stages::screen(&rules, &input, &decisions, ledger_in.as_deref(), &ledger)?;
            println!("{n} decisions written to {}", decisions.display());
        }
        Command::Irr { grades, reps, seed, out } => {
            let a = stages::irr(&grades, reps, seed, &out)?;
            print!("kappa {:.4}", a.kappa.kappa);
            if let Some(b) = &a.bootstrap {
                print!(" (95% BCa {:.3} to {:.3})", b.ci_low, b.ci_high);
            }
            println!("; {}/{} concordant", a.kappa.n_concordant, a.kappa.n_items);
        }
        Command::Extract { trials, out, correction } => {
            let policy = match correction {
                CorrectionArg::ZeroCellOnly => CorrectionPolicy::ZeroCellOnly,
                CorrectionArg::Forbid => CorrectionPolicy::Forbid,
            };
            let a = stages::extract(&trials, policy, None, &out)?;
            println!("{} studies written to {}", a.studies.len(), out.display());
        }
        Command::Pool {
            effects,
            estimator,
            boot,
            seed,
            loo,
            tau2_ci,
            profile_steps,
            out,
        } => {
            let options = PoolOptions {
                estimator: match estimator {
                    EstimatorArg::Reml => Estimator::Reml,
                    EstimatorArg::Dl => Estimator::Dl,
                },
                bootstrap_replications: boot,
                seed,
                leave_one_out: loo,
                tau2_ci: parse_tau2(&tau2_ci)?,
                profile_steps,
            };
            let a = stages::pool(&effects, &options, &out)?;
            let p = &a.pooled;
            println!(
                "RR {:.3} (95% CI {:.3} to {:.3}), tau2 {:.4}, I2 {:.1}%",
                p.rr, p.rr_low, p.rr_high, p.tau2, p.i_squared
            );
        }
        Command::Bias { effects, out, svg } => {
            let a = stages::bias(&effects, None, &out, svg.as_deref())?;
            println!("LFK index {:.3}", a.lfk.index);
        }
        Command::Report {
            pooled,
            ledger,
            bias,
            format,
            out_dir,
        } => {
            let formats: BTreeSet<ReportFormat> =
                format.iter().map(|f| f.parse()).collect::<Result<_, _>>()?;
            for p in stages::report(&pooled, ledger.as_deref(), bias.as_deref(), &formats, &out_dir)? {
                println!("{}", p.display());
            }
        }
        Command::Run { config, stage } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if !stage.is_empty() {
                cfg.stages = Some(stage.iter().map(|s| s.parse::<Stage>()).collect::<Result<_, _>>()?);
            }
            let manifest = run_pipeline(&cfg, Some(&config))?;
            for s in &manifest.stages {
                println!("{:<8} {:>6} items  {:>8.3} s", s.stage.name(), s.items, s.seconds);
            }
        }
    }
    Ok(())
}
