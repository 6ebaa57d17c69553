//! charlab: one binary tying vocabulary construction, task dumps, training,
//! emergence analysis, percolation simulation, coordinate checks, and plot
//! rendering into reproducible pipelines.
//!
//! Exit codes: 0 success, 1 runtime/domain error, 2 usage error.

use anyhow::{bail, Context};
use charlab::evalx;
use charlab::model::Insertion;
use charlab::percolation::{self, PropertyMode};
use charlab::rng::Rng;
use charlab::run::{execute_run, RunConfig};
use charlab::scaling::{coord_check, coord_rows_to_csv, scale_config};
use charlab::taskgen;
use charlab::vocab::{build_vocab, Vocabulary};
use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "charlab", version, about = "Character-aware language modeling lab")]
struct Cli {
    /// Worker-thread cap for data-parallel sections.
    #[arg(long, global = true, env = "CHARLAB_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ForceArg {
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a synthetic vocabulary file.
    MakeVocab {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        vocab_size: u64,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        force: ForceArg,
    },
    /// Dump generated task instances as JSONL.
    GenTasks {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated task codes (e.g. W1,C6); default all 19.
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        force: ForceArg,
    },
    /// Train a model from a run-config JSON file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Enable the character module (overrides the config).
        #[arg(long, overrides_with = "no_char")]
        char: bool,
        /// Disable the character module (overrides the config).
        #[arg(long = "no-char")]
        no_char: bool,
        /// Cross-attention placement: every, first, middle, or last.
        #[arg(long)]
        insertion: Option<Insertion>,
        /// Base-model width multiplier.
        #[arg(long)]
        width_mult: Option<f64>,
        /// Fully sequential execution (bitwise-reproducible metrics; the
        /// parallel path produces the same bytes, just faster).
        #[arg(long)]
        strict_determinism: bool,
        /// Output root; defaults to $CHARLAB_OUT or ./runs.
        #[arg(long, env = "CHARLAB_OUT")]
        out: Option<PathBuf>,
        #[command(flatten)]
        force: ForceArg,
    },
    /// Emergence analysis over one or more run directories.
    Analyze {
        /// Run directories (each with manifest.json and metrics.jsonl).
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.005)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also render the plot set into this directory.
        #[arg(long)]
        plots: Option<PathBuf>,
        #[command(flatten)]
        force: ForceArg,
    },
    /// Bipartite percolation simulation over a (|V|, K) grid.
    Percolate {
        /// Grid spec: comma-separated vocab sizes, then 'x', then Ks.
        #[arg(long, default_value = "256,512,1024,2048,4096,8192,16384x4,6,8")]
        grid: String,
        #[arg(long, default_value_t = 50)]
        trials: u32,
        #[arg(long, default_value = "chars")]
        mode: PropertyMode,
        #[arg(long, default_value_t = 0.5)]
        criterion: f64,
        #[arg(long, default_value_t = 52)]
        alphabet: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        force: ForceArg,
    },
    /// muP coordinate check across width multipliers.
    Coordcheck {
        #[arg(long, default_value = "1,2,4")]
        widths: String,
        #[arg(long, default_value_t = 10)]
        steps: u64,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        force: ForceArg,
    },
    /// Render the plot set from an analysis report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        force: ForceArg,
    },
}

fn refuse_existing(path: &Path, force: bool) -> anyhow::Result<()> {
    if path.exists() && !force {
        bail!(
            "output {} already exists (pass --force to overwrite)",
            path.display()
        );
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    #[cfg(feature = "parallel")]
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cli.jobs;
    if let Err(err) = run(cli.cmd) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::MakeVocab { seed, vocab_size, k, out, force } => {
            refuse_existing(&out, force.force)?;
            let v = build_vocab(seed, vocab_size, k)?;
            v.save(&out)?;
            println!(
                "wrote {} ({} word tokens, K={}, {} entries)",
                out.display(),
                v.n_words(),
                v.k,
                v.len()
            );
        }
        Cmd::GenTasks { vocab, count, seed, tasks, out, force } => {
            refuse_existing(&out, force.force)?;
            let v = Vocabulary::load(&vocab)
                .with_context(|| format!("loading vocab {}", vocab.display()))?;
            let filter = parse_task_filter(tasks.as_deref())?;
            let mut file = std::io::BufWriter::new(std::fs::File::create(&out)?);
            for i in 0..count {
                let mut rng = Rng::from_path(seed, &[0x6E, i]);
                let inst = taskgen::make_example(&v, &mut rng, filter.as_deref())?;
                let record = taskgen::TaskRecord::from_instance(&v, &inst)?;
                serde_json::to_writer(&mut file, &record)?;
                file.write_all(b"\n")?;
            }
            file.flush()?;
            println!("wrote {count} instances to {}", out.display());
        }
        Cmd::Train {
            config,
            char,
            no_char,
            insertion,
            width_mult,
            strict_determinism,
            out,
            force,
        } => {
            let mut rc = RunConfig::load(&config)
                .with_context(|| format!("loading run config {}", config.display()))?;
            if char {
                rc.model.char_enabled = true;
            }
            if no_char {
                rc.model.char_enabled = false;
            }
            if let Some(ins) = insertion {
                rc.model.insertion = ins;
            }
            if let Some(m) = width_mult {
                let scaled = scale_config(&rc.model, m)?;
                rc.model = scaled;
            }
            let out_root = out
                .or_else(|| rc.out_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"));
            let outputs = execute_run(&rc, &out_root, strict_determinism, force.force)?;
            println!("run complete: {}", outputs.run_dir.display());
        }
        Cmd::Analyze { runs, threshold, out, plots, force } => {
            refuse_existing(&out, force.force)?;
            let mut data = Vec::new();
            for dir in &runs {
                data.push(
                    evalx::read_run_dir(dir)
                        .with_context(|| format!("reading run dir {}", dir.display()))?,
                );
            }
            let report = evalx::analyze(&data, threshold)?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
            let csv_path = out.with_extension("csv");
            std::fs::write(&csv_path, evalx::report_csv(&report))?;
            for (k, m) in &report.monotonicity_char {
                println!(
                    "mean_char K={k}: spearman(|V|, emergence) = {:.3}, non-decreasing = {}",
                    m.spearman, m.non_decreasing
                );
            }
            if let Some(c) = &report.collapse {
                println!(
                    "collapse: raw CV {:.4}, scaled CV {:.4} at exponent {:.2}, best exponent {:.2}",
                    c.raw_dispersion, c.scaled_dispersion, c.exponent, c.best_exponent
                );
            }
            if let Some(dir) = plots {
                let written = evalx::emit_plots(&report, &dir)?;
                println!("wrote {} plot files to {}", written.len(), dir.display());
            }
            println!("report: {} (+ {})", out.display(), csv_path.display());
        }
        Cmd::Percolate {
            grid,
            trials,
            mode,
            criterion,
            alphabet,
            seed,
            out,
            force,
        } => {
            refuse_existing(&out, force.force)?;
            let (vocab_sizes, ks) = parse_grid(&grid)?;
            let mut rows = String::from("vocab_size,k,mode,criterion,trial,t_c\n");
            let mut medians = Vec::new();
            for &vs in &vocab_sizes {
                for &k in &ks {
                    let mut per_trial = Vec::with_capacity(trials as usize);
                    let results = charlab::par::map_indexed(trials as usize, false, |i| {
                        let mut rng =
                            Rng::from_path(seed, &[0x9C, vs, k as u64, i as u64]);
                        percolation::simulate(vs, k, alphabet, mode, criterion, &mut rng)
                    });
                    for (i, r) in results.into_iter().enumerate() {
                        let t_c = r?;
                        rows.push_str(&format!(
                            "{vs},{k},{mode},{criterion},{i},{}\n",
                            t_c.map(|t| t.to_string()).unwrap_or_default()
                        ));
                        if let Some(t) = t_c {
                            per_trial.push(t as f64);
                        }
                    }
                    if per_trial.len() * 2 >= trials as usize {
                        per_trial.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        let n = per_trial.len();
                        let median = if n % 2 == 1 {
                            per_trial[n / 2]
                        } else {
                            0.5 * (per_trial[n / 2 - 1] + per_trial[n / 2])
                        };
                        medians.push((vs, k, median));
                        eprintln!("|V|={vs} K={k}: median t_c = {median}");
                    }
                }
            }
            let fit = percolation::scaling_fit(&medians)?;
            let within = percolation::within_band(&fit, 0.5, 0.15);
            let verdict = if within { "within" } else { "outside" };
            rows.push_str(&format!("fit,exponent,,,,{}\n", fit.exponent));
            rows.push_str(&format!("fit,intercept,,,,{}\n", fit.intercept));
            rows.push_str(&format!("fit,residual,,,,{}\n", fit.residual));
            rows.push_str(&format!("fit,band_0.5_pm_0.15,,,,{verdict}\n"));
            std::fs::write(&out, rows)?;
            println!(
                "fitted exponent {:.4} (residual {:.4}) over {} grid points — {verdict} the 0.5±0.15 band{}",
                fit.exponent,
                fit.residual,
                medians.len(),
                if within { "" } else { ": discrepancy flagged" }
            );
            println!("wrote {}", out.display());
        }
        Cmd::Coordcheck { widths, steps, lr, batch_size, seed, out, force } => {
            let widths: Vec<f64> = widths
                .split(',')
                .map(|w| w.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .context("parsing --widths")?;
            if widths.is_empty() {
                bail!("--widths must name at least one multiplier");
            }
            let v = build_vocab(1, 64, 4)?;
            let base = charlab::ModelConfig {
                n_layers: 2,
                d_tokens: 32,
                n_heads: 2,
                char_enabled: true,
                d_chars: 16,
                char_heads: 2,
                max_tokens: 192,
                max_chars: 768,
                max_intra: 8,
                parametrization: charlab::model::Parametrization::Mup,
                ..charlab::ModelConfig::default()
            };
            let rows = coord_check(&base, &v, &widths, steps, batch_size, lr, seed)?;
            let ratio = charlab::scaling::max_rms_ratio(&rows);
            let csv = coord_rows_to_csv(&rows);
            match out {
                Some(path) => {
                    refuse_existing(&path, force.force)?;
                    std::fs::write(&path, csv)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{csv}"),
            }
            println!("max cross-width RMS ratio: {ratio:.3}");
        }
        Cmd::Plot { report, out, force } => {
            if out.exists() && !force.force && out.read_dir()?.next().is_some() {
                bail!(
                    "output directory {} is not empty (pass --force to overwrite)",
                    out.display()
                );
            }
            let text = std::fs::read_to_string(&report)
                .with_context(|| format!("reading report {}", report.display()))?;
            let report: evalx::EmergenceReport = serde_json::from_str(&text)?;
            let written = evalx::emit_plots(&report, &out)?;
            if written.is_empty() {
                bail!("report contains no plottable curves");
            }
            for path in &written {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn parse_task_filter(tasks: Option<&str>) -> anyhow::Result<Option<Vec<u8>>> {
    match tasks {
        None => Ok(None),
        Some(spec) => {
            let mut ids = Vec::new();
            for code in spec.split(',') {
                ids.push(taskgen::descriptor_by_code(code.trim())?.task_id);
            }
            Ok(Some(ids))
        }
    }
}

fn parse_grid(grid: &str) -> anyhow::Result<(Vec<u64>, Vec<u32>)> {
    let (vs, ks) = grid
        .split_once('x')
        .context("grid spec must look like `256,512x4,6,8`")?;
    let vocab_sizes: Vec<u64> = vs
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .context("parsing vocab sizes")?;
    let ks: Vec<u32> = ks
        .split(',')
        .map(|s| s.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .context("parsing K values")?;
    if vocab_sizes.is_empty() || ks.is_empty() {
        bail!("grid spec needs at least one vocab size and one K");
    }
    Ok((vocab_sizes, ks))
}
