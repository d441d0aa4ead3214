use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tabprov::exec::{self, ExecMode};
use tabprov::metadata::compute_statistics;
use tabprov::packing::{pack_with_layout, AllocationRatio};
use tabprov::provider::{
    evaluate_recall, sweep_allocation, Provider, ProviderConfig, RecallFixture,
};
use tabprov::sampling::{sample, SamplingMethod, SubTable};
use tabprov::serialize::{serialize, SerializationFormat};
use tabprov::table::{parse_csv, parse_table_json, Query, Table};

#[derive(Parser)]
#[command(
    name = "tabprov",
    version,
    about = "Budgeted table prompts: sample, augment, pack"
)]
struct Cli {
    /// Run every data-parallel step on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Provider config (TOML, flat keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Registered table id, or a .json/.csv file.
    #[arg(long)]
    table: Option<String>,
    #[arg(long)]
    query: Option<String>,
    #[arg(long)]
    budget: Option<usize>,
    /// Table:augmentation share, e.g. 4:6.
    #[arg(long)]
    ratio: Option<String>,
    /// html, xml, json, csv, markdown or nlsep.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Register a table file with the manager.
    Ingest {
        file: PathBuf,
        /// The first CSV record is a title line.
        #[arg(long)]
        title_row: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Sample the table to the budget and print the sub-table.
    Sample {
        #[command(flatten)]
        common: Common,
    },
    /// Print the configured augmentation items.
    Augment {
        #[command(flatten)]
        common: Common,
    },
    /// Pack the whole table with its augmentation, without sampling.
    Pack {
        #[arg(long)]
        manifest: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full pipeline.
    Provide {
        /// Print the packing manifest as JSON to stderr.
        #[arg(long)]
        manifest: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep allocation ratios and formats over table files; CSV output.
    Sweep {
        fixtures: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "7:3,6:4,5:5,4:6,3:7")]
        ratios: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        formats: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Mean recall of sampling methods on planted-relevance fixtures.
    EvalRecall {
        /// Directory of fixture JSON files.
        dir: PathBuf,
        /// Grounded column count for the grounded query-based run.
        #[arg(long, default_value_t = 2)]
        grounding: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Per-column statistics as JSON lines.
    Stats {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(c: &Common) -> Result<ProviderConfig> {
    let mut cfg = match &c.config {
        Some(p) => ProviderConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ProviderConfig::default(),
    };
    if let Some(b) = c.budget {
        cfg.budget = b;
    }
    if let Some(r) = &c.ratio {
        cfg.ratio = r.parse()?;
    }
    if let Some(f) = &c.format {
        cfg.format = f.parse()?;
    }
    if let Some(s) = c.seed {
        match &mut cfg.sampling {
            SamplingMethod::Random { seed } | SamplingMethod::Clustering { seed, .. } => *seed = s,
            _ => {}
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_table_file(path: &Path, title_row: bool) -> Result<Table> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let import = parse_csv(&bytes, title_row)?;
        for w in &import.warnings {
            log::warn!("{}: {w}", path.display());
        }
        Ok(import.table)
    } else {
        Ok(parse_table_json(&bytes)?)
    }
}

fn resolve_table(c: &Common, provider: &Provider) -> Result<Table> {
    let Some(spec) = &c.table else {
        bail!("--table is required");
    };
    let path = Path::new(spec);
    if path.exists() {
        return read_table_file(path, false);
    }
    Ok(provider
        .manager()
        .get(spec)
        .with_context(|| format!("{spec:?} is neither a file nor a registered table"))?
        .table
        .as_ref()
        .clone())
}

fn query(c: &Common) -> Query {
    Query::new(c.query.clone().unwrap_or_default())
}

fn emit(c: &Common, text: &str) -> Result<()> {
    match &c.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.sequential {
        exec::set_mode(ExecMode::Sequential);
    }
    match cli.command {
        Command::Ingest {
            file,
            title_row,
            common,
        } => {
            let provider = Provider::new(load_config(&common)?)?;
            if provider.manager().journal_path().is_none() {
                log::warn!("no manager.journal configured; the registration is not persisted");
            }
            let table = read_table_file(&file, title_row)?;
            let id = provider.manager().register(table)?;
            let m = provider.manager().get(&id)?;
            emit(&common, &format!("{id}\tversion {}", m.version))
        }
        Command::Sample { common } => {
            let provider = Provider::new(load_config(&common)?)?;
            let table = resolve_table(&common, &provider)?;
            let cfg = provider.config();
            let sub = sample(
                &table,
                &query(&common),
                &cfg.sampling,
                cfg.budget,
                provider.tokenizer(),
                provider.embedder(),
            )?;
            for w in sub.warnings() {
                log::warn!("{w}");
            }
            emit(&common, &serialize(sub.table(), cfg.format))
        }
        Command::Augment { common } => {
            let provider = Provider::new(load_config(&common)?)?;
            let table = resolve_table(&common, &provider)?;
            let bundle = provider.augment(&query(&common), &table, &SubTable::full(&table))?;
            let lines: Vec<String> = bundle
                .ordered()
                .iter()
                .map(|i| tabprov::packing::item_line(i))
                .collect();
            emit(&common, &lines.join("\n"))
        }
        Command::Pack { manifest, common } => {
            let provider = Provider::new(load_config(&common)?)?;
            let table = resolve_table(&common, &provider)?;
            let sub = SubTable::full(&table);
            let bundle = provider.augment(&query(&common), &table, &sub)?;
            let cfg = provider.config();
            let packed = pack_with_layout(
                &sub,
                &bundle,
                cfg.format,
                cfg.budget,
                cfg.ratio,
                provider.tokenizer(),
                cfg.layout,
            )?;
            if manifest {
                eprintln!("{}", serde_json::to_string(&packed.manifest)?);
            }
            emit(&common, &packed.text)
        }
        Command::Provide { manifest, common } => {
            let provider = Provider::new(load_config(&common)?)?;
            let table = resolve_table(&common, &provider)?;
            let packed = provider.provide_table(&query(&common), &table)?;
            if manifest {
                eprintln!("{}", serde_json::to_string(&packed.manifest)?);
            }
            emit(&common, &packed.text)
        }
        Command::Sweep {
            fixtures,
            ratios,
            formats,
            common,
        } => {
            let provider = Provider::new(load_config(&common)?)?;
            let q = query(&common);
            let fx = fixtures
                .iter()
                .map(|p| {
                    let name = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    Ok((name, read_table_file(p, false)?, q.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            let ratios = ratios
                .iter()
                .map(|r| r.parse())
                .collect::<tabprov::Result<Vec<AllocationRatio>>>()?;
            let formats = if formats.is_empty() {
                SerializationFormat::ALL.to_vec()
            } else {
                formats
                    .iter()
                    .map(|f| f.parse())
                    .collect::<tabprov::Result<Vec<_>>>()?
            };
            let report =
                sweep_allocation(&fx, &ratios, &formats, provider.config().budget, &provider)?;
            emit(&common, &report.to_csv()?)
        }
        Command::EvalRecall {
            dir,
            grounding,
            common,
        } => {
            let provider = Provider::new(load_config(&common)?)?;
            let fixtures = RecallFixture::load_dir(&dir)?;
            if fixtures.is_empty() {
                bail!("no fixture files in {}", dir.display());
            }
            let seed = common.seed.unwrap_or(0);
            let methods = [
                SamplingMethod::Random { seed },
                SamplingMethod::Evenly,
                SamplingMethod::QueryBased { grounding: None },
                SamplingMethod::QueryBased {
                    grounding: Some(grounding),
                },
                SamplingMethod::Clustering {
                    n_clusters: 3,
                    per_cluster_k: 2,
                    seed,
                },
            ];
            let results = evaluate_recall(
                &fixtures,
                &methods,
                provider.config().budget,
                provider.tokenizer(),
                provider.embedder(),
            )?;
            let mut out = String::from("method,mean_recall\n");
            for r in results {
                out.push_str(&format!("{},{:.4}\n", r.label, r.mean_recall));
            }
            emit(&common, &out)
        }
        Command::Stats { common } => {
            let provider = Provider::new(load_config(&common)?)?;
            let table = resolve_table(&common, &provider)?;
            let labels = table.headers().column_labels();
            let mut out = String::new();
            for (c, label) in labels.iter().enumerate() {
                let s = compute_statistics(&table, c)?;
                let line = serde_json::json!({"column": label, "features": s});
                out.push_str(&line.to_string());
                out.push('\n');
            }
            emit(&common, &out)
        }
    }
}
