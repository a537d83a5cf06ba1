//! `cascade`: data generation, labelling, training, search and evaluation.
//!
//! Every command takes `--config <file> --seed <int> --out <dir>`. Inputs
//! produced by earlier commands are looked up in the `--data` directories
//! (repeatable, searched in order), falling back to `--out`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cascade_core::datagen::{read_jsonl, write_jsonl, DatasetError, EpisodeRecord, Splits, SCHEMA_NAME};
use cascade_core::dynamics::{self, events_of, simulate_events};
use cascade_core::event_tree::EventTree;
use cascade_core::harness::{
    build_report, generate_dataset, label_dataset, mode_name, run_experiment, run_search,
    train_models, Config, ConfigError, EpisodeResult, EpisodeTrace, LabeledInstruction,
};
use cascade_core::instruction::satisfies;
use cascade_core::model::{write_loss_csv, Checkpoint, Scorer};
use cascade_core::rng;
use cascade_core::search::SearchMode;
use cascade_core::SemanticEvent;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const LABELS_SCHEMA: &str = "cascade-labels";
const RESULTS_SCHEMA: &str = "cascade-results";
const TRACES_SCHEMA: &str = "cascade-traces";

#[derive(Parser)]
#[command(name = "cascade", version, about = "Intervention search over cascades of collision events")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat TOML config; the desk profile when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Directories holding inputs from earlier commands.
    #[arg(long)]
    data: Vec<PathBuf>,
}

#[derive(Args, Clone)]
struct SceneArgs {
    #[command(flatten)]
    common: Common,
    /// Scene id; defaults to the test scenes (simulate) or the first
    /// episode (inspect-tree).
    #[arg(long)]
    scene: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate episodes, splits and a manifest.
    GenData(Common),
    /// Label every episode's solution path with node scores.
    Label(Common),
    /// Train one scorer per model seed.
    Train(Common),
    /// Search the test scenes with the configured search mode.
    Search(Common),
    /// Run both searches and the random baseline; report tree and
    /// simulator success.
    Eval(Common),
    /// Roll out solution interventions with both dynamics models.
    Simulate(SceneArgs),
    /// Dump the top of an event tree.
    InspectTree(SceneArgs),
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Data(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Internal(_) => 1,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData(c) => gen_data(&c),
        Command::Label(c) => label(&c),
        Command::Train(c) => train(&c),
        Command::Search(c) => search(&c),
        Command::Eval(c) => eval(&c),
        Command::Simulate(s) => simulate(&s),
        Command::InspectTree(s) => inspect_tree(&s),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Config(m) => ("config error", m),
                Failure::Data(m) => ("data error", m),
                Failure::Internal(m) => ("error", m),
            };
            eprintln!("cascade: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}

struct Ctx {
    cfg: Config,
    seed: u64,
    out: PathBuf,
    inputs: Vec<PathBuf>,
}

impl Ctx {
    fn new(c: &Common) -> Res<Self> {
        let cfg = match &c.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        fs::create_dir_all(&c.out).map_err(|e| Failure::Data(format!("cannot create {}: {e}", c.out.display())))?;
        let mut inputs = c.data.clone();
        inputs.push(c.out.clone());
        Ok(Self {
            cfg,
            seed: c.seed,
            out: c.out.clone(),
            inputs,
        })
    }

    fn input(&self, name: &str, made_by: &str) -> Res<PathBuf> {
        self.inputs
            .iter()
            .map(|d| d.join(name))
            .find(|p| p.exists())
            .ok_or_else(|| {
                Failure::Data(format!(
                    "{name} not found in {}; run `cascade {made_by}` first or pass --data <dir>",
                    self.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
                ))
            })
    }

    fn episodes(&self) -> Res<Vec<EpisodeRecord>> {
        let p = self.input("episodes.jsonl", "gen-data")?;
        read_records(SCHEMA_NAME, &p)
    }

    fn splits(&self) -> Res<Splits> {
        let p = self.input("splits.json", "gen-data")?;
        read_json(&p)
    }

    fn labels(&self) -> Res<Vec<LabeledInstruction>> {
        let p = self.input("labels.jsonl", "label")?;
        read_records(LABELS_SCHEMA, &p)
    }

    fn models(&self) -> Res<Vec<Scorer>> {
        (0..self.cfg.model_seeds)
            .map(|k| {
                let p = self.input(&format!("model_{k}.json"), "train")?;
                Checkpoint::load(&p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
            })
            .collect()
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Res<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
        fs::write(self.out.join(name), text + "\n").map_err(|e| io_failure(&self.out.join(name), e))
    }

    fn write_records<T: Serialize>(&self, schema: &str, name: &str, records: &[T]) -> Res<()> {
        let path = self.out.join(name);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| io_failure(&path, e))?);
        write_jsonl(schema, records, &mut w).map_err(|e| data_failure(&path, e))?;
        w.flush().map_err(|e| io_failure(&path, e))
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn data_failure(path: &Path, e: DatasetError) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn read_records<T: for<'de> serde::Deserialize<'de>>(schema: &str, path: &Path) -> Res<Vec<T>> {
    let f = File::open(path).map_err(|e| io_failure(path, e))?;
    read_jsonl(schema, BufReader::new(f)).map_err(|e| data_failure(path, e))
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Res<T> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn test_episodes<'a>(episodes: &'a [EpisodeRecord], splits: &Splits) -> Vec<&'a EpisodeRecord> {
    let test: std::collections::BTreeSet<u64> = splits.test.iter().copied().collect();
    episodes.iter().filter(|e| test.contains(&e.scene_id)).collect()
}

fn gen_data(c: &Common) -> Res<()> {
    let ctx = Ctx::new(c)?;
    let (episodes, splits, manifest) = generate_dataset(&ctx.cfg, ctx.seed);
    if episodes.is_empty() {
        return Err(Failure::Data("no scene could be generated".into()));
    }
    ctx.write_records(SCHEMA_NAME, "episodes.jsonl", &episodes)?;
    ctx.write_json("splits.json", &splits)?;
    ctx.write_json("manifest.json", &manifest)?;
    eprintln!(
        "cascade: {} episodes, {} instructions ({} failed scenes)",
        manifest.episodes,
        manifest.instructions,
        manifest.failed_scenes.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct LabelSummary {
    scheme: String,
    instructions: usize,
    dropped: usize,
    labels: usize,
}

fn label(c: &Common) -> Res<()> {
    let ctx = Ctx::new(c)?;
    let episodes = ctx.episodes()?;
    let labels = label_dataset(&episodes, &ctx.cfg, ctx.cfg.label_scheme(), ctx.seed)
        .map_err(|e| Failure::Data(e.to_string()))?;
    ctx.write_records(LABELS_SCHEMA, "labels.jsonl", &labels)?;
    let summary = LabelSummary {
        scheme: ctx.cfg.label_scheme.clone(),
        instructions: labels.len(),
        dropped: labels.iter().filter(|l| l.dropped).count(),
        labels: labels.iter().map(|l| l.labels.len()).sum(),
    };
    ctx.write_json("label_summary.json", &summary)
}

#[derive(Serialize)]
struct TrainSummary {
    models: usize,
    final_train_loss: Vec<f64>,
    final_val_loss: Vec<Option<f64>>,
}

fn train(c: &Common) -> Res<()> {
    let ctx = Ctx::new(c)?;
    let episodes = ctx.episodes()?;
    let splits = ctx.splits()?;
    let labels = ctx.labels()?;
    let trained = train_models(&ctx.cfg, &episodes, &labels, &splits, ctx.seed, |k, e| {
        eprintln!("cascade: model {k} epoch {} train {:.5} val {:?}", e.epoch, e.train_loss, e.val_loss)
    })
    .map_err(|e| Failure::Data(e.to_string()))?;
    for (k, t) in trained.iter().enumerate() {
        let path = ctx.out.join(format!("model_{k}.json"));
        Checkpoint::save(&t.scorer, &path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let csv = ctx.out.join(format!("loss_{k}.csv"));
        let mut f = File::create(&csv).map_err(|e| io_failure(&csv, e))?;
        write_loss_csv(&t.curve, &mut f).map_err(|e| io_failure(&csv, e))?;
    }
    let last = |t: &cascade_core::model::Trained| *t.curve.last().expect("at least one epoch");
    ctx.write_json(
        "train_summary.json",
        &TrainSummary {
            models: trained.len(),
            final_train_loss: trained.iter().map(|t| last(t).train_loss).collect(),
            final_val_loss: trained.iter().map(|t| last(t).val_loss).collect(),
        },
    )
}

fn search(c: &Common) -> Res<()> {
    let ctx = Ctx::new(c)?;
    let mode = ctx.cfg.search_mode();
    if mode == SearchMode::RandomBaseline {
        return Err(Failure::Config("search_mode random_baseline has no tree search; use `cascade eval`".into()));
    }
    let episodes = ctx.episodes()?;
    let splits = ctx.splits()?;
    let models = ctx.models()?;
    let held_out = test_episodes(&episodes, &splits);
    let (results, traces): (Vec<EpisodeResult>, Vec<EpisodeTrace>) =
        run_search(&held_out, &models, &ctx.cfg, mode, ctx.seed).map_err(|e| Failure::Data(e.to_string()))?;
    ctx.write_records(RESULTS_SCHEMA, "search_results.jsonl", &results)?;
    ctx.write_records(TRACES_SCHEMA, "traces.jsonl", &traces)?;
    ctx.write_json("search_report.json", &build_report(mode_name(mode), &results, None))
}

fn eval(c: &Common) -> Res<()> {
    let ctx = Ctx::new(c)?;
    let episodes = ctx.episodes()?;
    let splits = ctx.splits()?;
    let models = ctx.models()?;
    let (report, runs) = run_experiment(&ctx.cfg, &episodes, &splits.train, &splits.test, &models, ctx.seed, true)
        .map_err(|e| Failure::Data(e.to_string()))?;
    for (name, results) in &runs.results {
        ctx.write_records(RESULTS_SCHEMA, &format!("results_{name}.jsonl"), results)?;
    }
    for (name, traces) in &runs.traces {
        ctx.write_records(TRACES_SCHEMA, &format!("traces_{name}.jsonl"), traces)?;
    }
    ctx.write_json("report.json", &report)
}

#[derive(Serialize)]
struct SimRecord {
    scene_id: u64,
    event_driven: Vec<SemanticEvent>,
    integrator: Option<Vec<SemanticEvent>>,
    integrator_error: Option<String>,
    agree: bool,
    /// Instructions whose target the integrator rollout satisfies.
    instructions_satisfied: usize,
    instructions: usize,
}

#[derive(Serialize)]
struct SimReport {
    episodes: usize,
    agree: usize,
    instructions: usize,
    instructions_satisfied: usize,
    records: Vec<SimRecord>,
}

fn simulate(s: &SceneArgs) -> Res<()> {
    let ctx = Ctx::new(&s.common)?;
    let episodes = ctx.episodes()?;
    let chosen: Vec<&EpisodeRecord> = match s.scene {
        Some(id) => vec![episodes
            .iter()
            .find(|e| e.scene_id == id)
            .ok_or_else(|| Failure::Data(format!("no episode for scene {id}")))?],
        None => test_episodes(&episodes, &ctx.splits()?),
    };
    let records: Vec<SimRecord> = chosen
        .iter()
        .map(|ep| {
            let w = ep.scene.with_intervention(&ep.y_star).expect("episode scenes carry a pivot");
            let event_driven = dynamics::rollout_events(&w, ctx.cfg.max_depth, ctx.cfg.horizon)
                .map(|c| events_of(&c))
                .unwrap_or_default();
            let (integrator, integrator_error) = match simulate_events(&w, ctx.cfg.sim_dt, ctx.cfg.max_depth, ctx.cfg.horizon) {
                Ok(c) => (Some(events_of(&c)), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let sat = integrator
                .as_ref()
                .map_or(0, |seq| ep.instructions.iter().filter(|g| satisfies(seq, g)).count());
            SimRecord {
                scene_id: ep.scene_id,
                agree: integrator.as_ref() == Some(&event_driven),
                event_driven,
                integrator,
                integrator_error,
                instructions_satisfied: sat,
                instructions: ep.instructions.len(),
            }
        })
        .collect();
    let report = SimReport {
        episodes: records.len(),
        agree: records.iter().filter(|r| r.agree).count(),
        instructions: records.iter().map(|r| r.instructions).sum(),
        instructions_satisfied: records.iter().map(|r| r.instructions_satisfied).sum(),
        records,
    };
    ctx.write_json("simulate.json", &report)
}

fn inspect_tree(s: &SceneArgs) -> Res<()> {
    let ctx = Ctx::new(&s.common)?;
    let episodes = ctx.episodes()?;
    let ep = match s.scene {
        Some(id) => episodes.iter().find(|e| e.scene_id == id),
        None => episodes.first(),
    }
    .ok_or_else(|| Failure::Data("no matching episode".into()))?;
    let mut tree = EventTree::init_root(&ep.scene, ctx.cfg.tree_config(), rng::derive_seed(ctx.seed, "inspect", ep.scene_id))
        .map_err(|e| Failure::Data(e.to_string()))?;
    let mut layer = vec![EventTree::ROOT];
    for _ in 0..ctx.cfg.inspect_depth {
        let mut next = Vec::new();
        for u in layer {
            if tree.is_expandable(u) {
                next.extend(tree.expand_node(u).map_err(|e| Failure::Internal(e.to_string()))?);
            }
        }
        layer = next;
    }
    ctx.write_json("tree.json", &tree.dump())
}
