//! Pipeline CLI: generate synthetic pose datasets, train lifters, build
//! lookup tables, lift external 2D detections, retarget poses, evaluate
//! model variants, and cluster the lookup table.
//!
//! Every command is a pure function of its configuration, input files and
//! seed: reruns produce byte-identical outputs. Values resolve as
//! flag > config file > built-in default. Errors print one machine-parsable
//! line (`error code=<code> msg="..."`) and exit nonzero.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use poselift::datagen::{action_catalog, generate, variance_report, GenConfig};
use poselift::io::{checksum_hex, read_dataset, read_jsonl, write_dataset, write_jsonl};
use poselift::lifter::{
    samples_from_records, split_indices, store, train, LifterConfig, LifterModel,
};
use poselift::lookup::{cluster_table, LookupTable};
use poselift::metrics::evaluate;
use poselift::retarget::{retarget_matched, RetargetExport};
use poselift::skeleton::{species_skeleton, Skeleton, Species};

#[derive(Parser)]
#[command(
    name = "poselift",
    about = "Synthetic 3D pose datasets, 2D-to-3D lifting, lookup and retargeting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flat key-value configuration file; command-line flags override it.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    species: Option<String>,
    seed: Option<u64>,
    count: Option<usize>,
    heads: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    k: Option<usize>,
    skeleton: Option<PathBuf>,
    dataset: Option<PathBuf>,
    model: Option<PathBuf>,
    table: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl FileConfig {
    fn load(path: Option<&PathBuf>) -> anyhow::Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

#[derive(Args, Debug)]
struct Common {
    /// JSON key-value configuration file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; required for generation and training determinism.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (JSONL + manifest + variance CSV).
    Gen {
        #[command(flatten)]
        common: Common,
        /// Subject species: macaque or horse.
        #[arg(long)]
        species: Option<String>,
        /// Record count override (defaults: 8000 macaque, 6000 horse).
        #[arg(long)]
        count: Option<usize>,
        /// Skeleton definition file (defaults to the built-in skeleton).
        #[arg(long)]
        skeleton: Option<PathBuf>,
        /// Output dataset path (.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a lifter on a dataset; writes the model and per-epoch CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Attention heads: 0 (none), 2 or 4.
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        skeleton: Option<PathBuf>,
        /// Output model path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the deep-pose lookup table from a dataset.
    LookupBuild {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        skeleton: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lift raw 2D keypoint detections to soft 3D poses.
    Lift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Input JSONL: {"id", "keypoints": [[x,y],...], "image_size"?}.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Match lifted poses to the table and export retargeted joint angles.
    Retarget {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Lifted poses JSONL (output of `lift`).
        #[arg(long)]
        lifted: Option<PathBuf>,
        #[arg(long)]
        species: Option<String>,
        #[arg(long)]
        skeleton: Option<PathBuf>,
        /// Use the exhaustive linear-scan query instead of the index.
        #[arg(long)]
        brute_force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate model variants on a dataset's validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model files; repeat the flag for multiple variants.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        skeleton: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster the lookup table and export scatter + purity CSVs.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Cluster count.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// One row of external 2D detections.
#[derive(Debug, Serialize, Deserialize)]
struct KeypointRecord {
    id: String,
    keypoints: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_size: Option<[u32; 2]>,
}

/// One lifted soft 3D pose.
#[derive(Debug, Serialize, Deserialize)]
struct LiftedRecord {
    id: String,
    pose: Vec<[f64; 3]>,
}

/// Retarget export with the originating record id.
#[derive(Debug, Serialize, Deserialize)]
struct RetargetRecord {
    id: String,
    #[serde(flatten)]
    export: RetargetExport,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("L3D_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli.command) {
        let code = err
            .downcast_ref::<poselift::Error>()
            .map(|e| e.code())
            .unwrap_or("cli");
        eprintln!("error code={code} msg={:?}", format!("{err:#}"));
        std::process::exit(1);
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Gen {
            common,
            species,
            count,
            skeleton,
            out,
        } => cmd_gen(common, species, count, skeleton, out),
        Command::Train {
            common,
            dataset,
            heads,
            epochs,
            batch_size,
            learning_rate,
            skeleton,
            out,
        } => cmd_train(common, dataset, heads, epochs, batch_size, learning_rate, skeleton, out),
        Command::LookupBuild {
            common,
            dataset,
            skeleton,
            out,
        } => cmd_lookup_build(common, dataset, skeleton, out),
        Command::Lift {
            common,
            model,
            input,
            out,
        } => cmd_lift(common, model, input, out),
        Command::Retarget {
            common,
            table,
            lifted,
            species,
            skeleton,
            brute_force,
            out,
        } => cmd_retarget(common, table, lifted, species, skeleton, brute_force, out),
        Command::Eval {
            common,
            models,
            dataset,
            skeleton,
            out,
        } => cmd_eval(common, models, dataset, skeleton, out),
        Command::Cluster {
            common,
            table,
            k,
            out,
        } => cmd_cluster(common, table, k, out),
    }
}

fn required<T>(value: Option<T>, what: &str) -> anyhow::Result<T> {
    value.ok_or_else(|| anyhow!(poselift::Error::Contract(format!("missing {what}"))))
}

fn load_skeleton(
    flag: Option<PathBuf>,
    file: Option<PathBuf>,
    species: Option<Species>,
) -> anyhow::Result<Skeleton> {
    match flag.or(file) {
        Some(path) => Ok(Skeleton::load(&path)?),
        None => {
            let species =
                species.ok_or_else(|| anyhow!(poselift::Error::Contract("missing species".into())))?;
            Ok(species_skeleton(species))
        }
    }
}

fn parse_species(flag: Option<String>, file: Option<String>) -> anyhow::Result<Option<Species>> {
    match flag.or(file) {
        None => Ok(None),
        Some(s) => Ok(Some(s.parse::<Species>()?)),
    }
}

fn cmd_gen(
    common: Common,
    species: Option<String>,
    count: Option<usize>,
    skeleton_flag: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_ref())?;
    let species = required(parse_species(species, file.species.clone())?, "--species")?;
    let out = required(out.or(file.out.clone()), "--out")?;
    let skeleton = load_skeleton(skeleton_flag, file.skeleton.clone(), Some(species))?;
    anyhow::ensure!(
        skeleton.species == species,
        poselift::Error::Contract(format!(
            "skeleton file is for {}, requested {species}",
            skeleton.species
        ))
    );

    let mut config = GenConfig::for_species(species);
    config.seed = required(common.seed.or(file.seed), "--seed")?;
    if let Some(c) = count.or(file.count) {
        config.target_count = c;
    }

    let actions = action_catalog(&skeleton);
    let records = generate(&config, &skeleton, &actions)?;
    let skeleton_hash = checksum_hex(skeleton.to_canonical_json().as_bytes());
    write_dataset(&out, &records, &config, &skeleton_hash)?;

    let spread = variance_report(&records)?;
    let mut csv = String::from("action,sigma_x,sigma_y,sigma_z,frames\n");
    for row in &spread {
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{}\n",
            row.action, row.sigma[0], row.sigma[1], row.sigma[2], row.frames
        ));
    }
    let variance_path = sibling(&out, "variance.csv");
    std::fs::write(&variance_path, csv)
        .map_err(|e| poselift::Error::Io { path: variance_path.clone(), source: e })?;

    println!(
        "generated {} {} records over {} actions -> {}",
        records.len(),
        species,
        actions.len(),
        out.display()
    );
    println!("variance report -> {}", variance_path.display());
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: Common,
    dataset: Option<PathBuf>,
    heads: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    skeleton_flag: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_ref())?;
    let dataset_path = required(dataset.or(file.dataset.clone()), "--dataset")?;
    let out = required(out.or(file.out.clone()), "--out")?;
    let records = read_dataset(&dataset_path)?;
    anyhow::ensure!(
        !records.is_empty(),
        poselift::Error::Contract("dataset is empty".into())
    );
    let species = records[0].species;
    let skeleton = load_skeleton(skeleton_flag, file.skeleton.clone(), Some(species))?;
    let samples = samples_from_records(&records, &skeleton.soft_subset)?;

    let mut config = LifterConfig::for_keypoints(skeleton.soft_count());
    config.seed = required(common.seed.or(file.seed), "--seed")?;
    if let Some(h) = heads.or(file.heads) {
        config.heads = h;
    }
    if let Some(e) = epochs.or(file.epochs) {
        config.epochs = e;
    }
    if let Some(b) = batch_size.or(file.batch_size) {
        config.batch_size = b;
    }
    if let Some(lr) = learning_rate.or(file.learning_rate) {
        config.learning_rate = lr;
    }

    let (model, report) = train(&samples, &config)?;
    store::save_model(&model, &out)?;

    let mut csv = String::from("epoch,train_mse,val_mse\n");
    for e in &report.epochs {
        csv.push_str(&format!("{},{:.8},{:.8}\n", e.epoch, e.train_mse, e.val_mse));
    }
    let epochs_path = sibling(&out, "epochs.csv");
    std::fs::write(&epochs_path, csv)
        .map_err(|e| poselift::Error::Io { path: epochs_path.clone(), source: e })?;

    println!(
        "trained heads={} epochs={} on {} samples: best epoch {} val MSE {:.6} PDJ@0.2 {:.4} PDJ@0.05 {:.4} ({:.1}s)",
        config.heads,
        config.epochs,
        samples.len(),
        report.best_epoch,
        report.final_val_mse,
        report.final_pdj_02,
        report.final_pdj_005,
        report.wall_clock_secs
    );
    println!("model -> {}", out.display());
    println!("epoch losses -> {}", epochs_path.display());
    Ok(())
}

fn cmd_lookup_build(
    common: Common,
    dataset: Option<PathBuf>,
    skeleton_flag: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_ref())?;
    let dataset_path = required(dataset.or(file.dataset.clone()), "--dataset")?;
    let out = required(out.or(file.out.clone()), "--out")?;
    let records = read_dataset(&dataset_path)?;
    anyhow::ensure!(
        !records.is_empty(),
        poselift::Error::Contract("dataset is empty".into())
    );
    let skeleton = load_skeleton(skeleton_flag, file.skeleton.clone(), Some(records[0].species))?;
    let table = LookupTable::build(&records, &skeleton.soft_subset)?;
    table.save(&out)?;
    println!("lookup table with {} entries -> {}", table.len(), out.display());
    Ok(())
}

fn cmd_lift(
    common: Common,
    model: Option<PathBuf>,
    input: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_ref())?;
    let model_path = required(model.or(file.model.clone()), "--model")?;
    let input_path = required(input, "--input")?;
    let out = required(out.or(file.out.clone()), "--out")?;

    let model = store::load_model(&model_path)?;
    let rows: Vec<KeypointRecord> = read_jsonl(&input_path)?;
    let mut lifted = Vec::with_capacity(rows.len());
    for row in &rows {
        if row.keypoints.len() != model.config.k_s {
            bail!(poselift::Error::Contract(format!(
                "record '{}' has {} keypoints, model expects {}",
                row.id,
                row.keypoints.len(),
                model.config.k_s
            )));
        }
        let normalized = match poselift::datagen::normalize2d(&row.keypoints) {
            Ok(n) => n,
            Err(e) => {
                log::warn!("skipping record '{}': {e}", row.id);
                continue;
            }
        };
        let pose = poselift::lifter::lift(&model, &normalized)?;
        lifted.push(LiftedRecord {
            id: row.id.clone(),
            pose,
        });
    }
    write_jsonl(&out, &lifted)?;
    println!(
        "lifted {} of {} records -> {}",
        lifted.len(),
        rows.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_retarget(
    common: Common,
    table: Option<PathBuf>,
    lifted: Option<PathBuf>,
    species: Option<String>,
    skeleton_flag: Option<PathBuf>,
    brute_force: bool,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_ref())?;
    let table_path = required(table.or(file.table.clone()), "--table")?;
    let lifted_path = required(lifted, "--lifted")?;
    let out = required(out.or(file.out.clone()), "--out")?;
    let species = parse_species(species, file.species.clone())?;
    let skeleton = load_skeleton(skeleton_flag, file.skeleton.clone(), species)?;
    let skeleton_hash = checksum_hex(skeleton.to_canonical_json().as_bytes());

    let table = LookupTable::load(&table_path)?;
    let rows: Vec<LiftedRecord> = read_jsonl(&lifted_path)?;
    let index = if brute_force { None } else { Some(table.index()) };

    let mut exports = Vec::with_capacity(rows.len());
    for row in &rows {
        let matched = match &index {
            Some(idx) => idx.query(&row.pose)?,
            None => table.query_linear(&row.pose)?,
        };
        let result = retarget_matched(&skeleton, &matched)?;
        exports.push(RetargetRecord {
            id: row.id.clone(),
            export: RetargetExport::new(&result, &skeleton_hash),
        });
    }
    write_jsonl(&out, &exports)?;
    println!(
        "retargeted {} poses ({} query) -> {}",
        exports.len(),
        if brute_force { "linear-scan" } else { "indexed" },
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    common: Common,
    models: Vec<PathBuf>,
    dataset: Option<PathBuf>,
    skeleton_flag: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_ref())?;
    let dataset_path = required(dataset.or(file.dataset.clone()), "--dataset")?;
    let out = required(out.or(file.out.clone()), "--out")?;
    let records = read_dataset(&dataset_path)?;
    anyhow::ensure!(
        !records.is_empty(),
        poselift::Error::Contract("dataset is empty".into())
    );
    let skeleton = load_skeleton(skeleton_flag, file.skeleton.clone(), Some(records[0].species))?;
    let samples = samples_from_records(&records, &skeleton.soft_subset)?;

    // Evaluate on the same held-out fifth the trainer reserves for this seed.
    let seed = required(common.seed.or(file.seed), "--seed")?;
    let (_, val_idx) = split_indices(samples.len(), seed);
    let val_samples: Vec<_> = val_idx.iter().map(|&i| samples[i].clone()).collect();

    let mut loaded = Vec::with_capacity(models.len());
    for path in &models {
        let model = store::load_model(path)?;
        let name = format!("heads={}", model.config.heads);
        loaded.push((name, model));
    }
    let variants: Vec<(String, &LifterModel)> =
        loaded.iter().map(|(n, m)| (n.clone(), m)).collect();
    let report = evaluate(
        &variants,
        &val_samples,
        &dataset_path.display().to_string(),
        &format!("validation (seed {seed}, 20%)"),
    )?;
    std::fs::write(&out, report.to_csv())
        .map_err(|e| poselift::Error::Io { path: out.clone(), source: e })?;
    print!("{}", report.to_text());
    println!("report -> {}", out.display());
    Ok(())
}

fn cmd_cluster(
    common: Common,
    table: Option<PathBuf>,
    k: Option<usize>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let file = FileConfig::load(common.config.as_ref())?;
    let table_path = required(table.or(file.table.clone()), "--table")?;
    let out = required(out.or(file.out.clone()), "--out")?;
    let k = k.or(file.k).unwrap_or(10);
    let seed = common.seed.or(file.seed).unwrap_or(0);

    let table = LookupTable::load(&table_path)?;
    let report = cluster_table(&table, k, seed)?;
    std::fs::write(&out, report.to_csv(&table))
        .map_err(|e| poselift::Error::Io { path: out.clone(), source: e })?;

    let mut summary = String::from("cluster,size,majority_action,purity\n");
    for c in &report.clusters {
        summary.push_str(&format!(
            "{},{},{},{:.4}\n",
            c.cluster, c.size, c.majority_action, c.purity
        ));
    }
    let summary_path = sibling(&out, "summary.csv");
    std::fs::write(&summary_path, &summary)
        .map_err(|e| poselift::Error::Io { path: summary_path.clone(), source: e })?;

    println!("k={k} clusters over {} entries (inertia {:.4})", table.len(), report.inertia);
    for c in &report.clusters {
        println!(
            "  cluster {:>2}: {:>5} entries, {:>5.1}% {}",
            c.cluster,
            c.size,
            100.0 * c.purity,
            c.majority_action
        );
    }
    println!("scatter -> {}", out.display());
    println!("summary -> {}", summary_path.display());
    Ok(())
}
