use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use facelock::attacks::{protect, AttackMethod};
use facelock::backends::{make_toy_bundle_with, BackendBundle, BackendKind, ComponentRegistry, FeatureFamily};
use facelock::harness::pipeline::{edit_stream, protection_key};
use facelock::harness::{
    backbone_comparison, budget_sweep, design_ablation, emit_report, load_source, read_records, render, run_plan,
    write_records, Config, EvaluationRecord, ExperimentPlan, Grouping, PromptCatalog, ProtectionSidecar, Report,
    ReportFormat,
};
use facelock::image::write_png;
use facelock::purification::{purify, PurifySpec};
use facelock::RngState;

#[derive(Parser, Debug)]
#[command(name = "facelock", version, about = "Protect portraits against instruction-guided editing and score the result")]
struct Cli {
    /// TOML file with [backend], [attack], [edit], [purify] and [plan] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["toy", "real"])]
    backend: Option<String>,
    /// Attack RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Protect an image, a directory or `synthetic:N`.
    Protect {
        input: String,
        /// Attack name; defaults to `attack.name` from the config.
        #[arg(long)]
        attack: Option<AttackMethod>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Edit images with catalog prompts.
    Edit {
        input: String,
        /// Prompt ids; all catalog prompts when omitted.
        #[arg(long = "prompt")]
        prompts: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Apply a purification (`blur`, `rotate`, `jpeg75`, `color_jitter`, ...).
    Purify {
        input: String,
        #[arg(long)]
        kind: String,
    },
    /// Run the configured plan and write records plus method reports.
    Evaluate(PlanArgs),
    /// Re-run the plan at each budget.
    Sweep {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
    },
    /// Compare protection designs.
    Ablate {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, value_delimiter = ',')]
        designs: Option<Vec<AttackMethod>>,
    },
    /// Protect with each feature backbone, score with the configured one.
    Backbones {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<FeatureFamily>>,
    },
    /// Format stored records as a grouped table.
    Report {
        records: PathBuf,
        #[arg(long, default_value = "method")]
        grouping: Grouping,
        /// Print one format to stdout instead of writing all three.
        #[arg(long)]
        format: Option<ReportFormat>,
    },
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Image directory or `synthetic:N`; overrides `plan.dataset`.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<AttackMethod>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long = "prompt")]
    prompts: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    purify: Option<Vec<String>>,
    #[arg(long)]
    steps: Option<usize>,
}

struct Session {
    cfg: Config,
    bundle: BackendBundle,
    out: PathBuf,
    jobs: usize,
}

impl Session {
    fn open(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        match cli.backend.as_deref() {
            Some("real") => cfg.backend.kind = BackendKind::Real,
            Some("toy") => cfg.backend.kind = BackendKind::Toy,
            _ => {}
        }
        if let Some(s) = cli.seed {
            cfg.attack.config.seed = s;
        }
        cfg.validate()?;
        let bundle = cfg.backend.build(&ComponentRegistry::with_builtin())?;
        Ok(Self {
            cfg,
            bundle,
            out: cli.out.clone(),
            jobs: cli.jobs.max(1),
        })
    }

    fn image_size(&self) -> usize {
        self.bundle.image_size.unwrap_or(self.cfg.edit.image_size)
    }

    /// A single file, a directory, or `synthetic:N`.
    fn inputs(&self, input: &str) -> Result<Vec<(String, facelock::ImageTensor)>> {
        let path = Path::new(input);
        if path.is_file() {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
            let size = self.image_size();
            let x = facelock::image::read_image(path)?.resized(size, size);
            return Ok(vec![(id, x)]);
        }
        let ds = load_source(input, self.image_size())?;
        for s in &ds.skipped {
            log::warn!("skipped {}: {}", s.item, s.reason);
        }
        Ok(ds.images)
    }

    fn plan(&mut self, args: &PlanArgs) -> Result<ExperimentPlan> {
        let p = &mut self.cfg.plan;
        if let Some(d) = &args.dataset {
            p.dataset = Some(d.clone());
        }
        if p.dataset.is_none() {
            p.dataset = Some("synthetic:2".into());
        }
        if let Some(m) = &args.methods {
            p.methods = m.clone();
        }
        if let Some(s) = &args.seeds {
            p.seeds = s.clone();
        }
        if !args.prompts.is_empty() {
            p.prompts = args.prompts.clone();
        }
        if let Some(k) = &args.purify {
            self.cfg.purify.kinds = k.clone();
        }
        if let Some(n) = args.steps {
            self.cfg.attack.config.steps = n;
        }
        let mut plan = ExperimentPlan::from_config(&self.cfg, self.image_size())?;
        for s in &plan.skipped {
            log::warn!("skipped {}: {}", s.item, s.reason);
        }
        plan.jobs = self.jobs;
        Ok(plan)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    fn finish(&self, records: &[EvaluationRecord], reports: &[(&str, Report)]) -> Result<()> {
        let dir = self.out_dir()?;
        write_records(dir.join("records.jsonl"), records)?;
        for (stem, report) in reports {
            emit_report(report, dir, stem, &ReportFormat::ALL)?;
            print!("{}", report.to_markdown());
        }
        println!("{} records written to {}", records.len(), dir.display());
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Report {
        records,
        grouping,
        format,
    } = &cli.command
    {
        let records = read_records(records)?;
        let report = Report::build(&records, *grouping);
        match format {
            Some(f) => print!("{}", render(&report, *f)),
            None => {
                let paths = emit_report(&report, &cli.out, grouping.name(), &ReportFormat::ALL)?;
                for p in paths {
                    println!("{}", p.display());
                }
            }
        }
        return Ok(());
    }

    let mut s = Session::open(&cli)?;
    match &cli.command {
        Command::Protect {
            input,
            attack,
            epsilon,
            steps,
        } => {
            let method = attack.unwrap_or(s.cfg.attack.name);
            let mut cfg = s.cfg.attack.config.clone();
            if let Some(e) = epsilon {
                cfg.epsilon = *e;
            }
            if let Some(n) = steps {
                cfg.steps = *n;
            }
            cfg.validate()?;
            let dir = s.out_dir()?.to_path_buf();
            for (id, x) in s.inputs(input)? {
                let r = protect(&s.bundle, method, &x, &cfg)?;
                let key = protection_key(&x, method, &cfg, &s.bundle);
                let side = ProtectionSidecar::of(&key, &id, &s.bundle, &cfg, &r);
                write_png(dir.join(format!("{id}.{method}.png")), &r.protected)?;
                std::fs::write(dir.join(format!("{id}.{method}.json")), serde_json::to_string_pretty(&side)? + "\n")?;
                println!(
                    "{id}: {method} linf={:.4} objective {:.4} -> {:.4}",
                    side.linf, side.initial_objective, side.final_objective
                );
            }
        }
        Command::Edit { input, prompts, seeds } => {
            let catalog = match &s.cfg.plan.catalog {
                Some(p) => PromptCatalog::load(p)?,
                None => PromptCatalog::default(),
            };
            let prompts = catalog.select(prompts)?;
            let seeds = seeds.clone().unwrap_or_else(|| s.cfg.plan.seeds.clone());
            let dir = s.out_dir()?.to_path_buf();
            for (id, x) in s.inputs(input)? {
                for p in &prompts {
                    for &seed in &seeds {
                        let edited = s.bundle.edit(&x, &p.text, &s.cfg.edit, &edit_stream(&id, &p.id, seed))?;
                        let path = dir.join(format!("{id}.{}.s{seed}.png", p.id));
                        write_png(&path, &edited)?;
                        println!("{}", path.display());
                    }
                }
            }
        }
        Command::Purify { input, kind } => {
            let spec: PurifySpec = kind.parse()?;
            let spec = match spec {
                PurifySpec::External { .. } => PurifySpec::External {
                    command: s.cfg.purify.external.command.clone(),
                },
                other => other,
            };
            let seed = s.cfg.attack.config.seed;
            let dir = s.out_dir()?.to_path_buf();
            for (id, x) in s.inputs(input)? {
                let y = purify(&x, &spec, &RngState::new(seed, format!("purify/{id}/{}", spec.name())))?;
                let path = dir.join(format!("{id}.{}.png", spec.name()));
                write_png(&path, &y)?;
                println!("{}", path.display());
            }
        }
        Command::Evaluate(args) => {
            let plan = s.plan(args)?;
            let records = run_plan(&s.bundle, &plan)?;
            if records.len() != plan.cardinality() {
                bail!("expected {} records, got {}", plan.cardinality(), records.len());
            }
            let reports: Vec<(&str, Report)> = [Grouping::Method, Grouping::MethodCategory, Grouping::MethodPurification]
                .into_iter()
                .map(|g| (g.name(), Report::build(&records, g)))
                .collect();
            s.finish(&records, &reports)?;
        }
        Command::Sweep { plan, budgets } => {
            let p = s.plan(plan)?;
            let budgets = budgets.clone().unwrap_or_else(|| s.cfg.plan.budgets.clone());
            let (report, records) = budget_sweep(&s.bundle, &p, &budgets)?;
            s.finish(&records, &[("budget", report)])?;
        }
        Command::Ablate { plan, designs } => {
            let p = s.plan(plan)?;
            let designs = designs.clone().unwrap_or_else(|| s.cfg.plan.designs.clone());
            let (report, records) = design_ablation(&s.bundle, &p, &designs)?;
            s.finish(&records, &[("design", report)])?;
        }
        Command::Backbones { plan, families } => {
            if s.cfg.backend.kind != BackendKind::Toy {
                bail!("backbone comparison on the real backend needs registered feature stacks; use the library API");
            }
            let p = s.plan(plan)?;
            let families = families.clone().unwrap_or_else(|| s.cfg.plan.backbones.clone());
            let (seed, size) = (s.cfg.backend.seed, s.cfg.backend.image_size);
            let (report, records) =
                backbone_comparison(&s.bundle, &p, &families, |f| make_toy_bundle_with(seed, size, f))?;
            s.finish(&records, &[("backbone", report)])?;
        }
        Command::Report { .. } => unreachable!(),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
