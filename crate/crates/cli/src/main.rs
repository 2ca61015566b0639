//! `echo`: command-line front end for the community-detection pipeline.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or input error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use echo_core::clustering::{lpa, modularity, DEFAULT_LPA_ITERS};
use echo_core::config::PipelineConfig;
use echo_core::metrics::{evaluate, PhaseTimings};
use echo_core::pipeline::{cluster_phase, detect, embeddings_of, extract_phase, load_inputs, route_phase, train_phase};
use echo_core::synth::{generate_lfr, mixing_fraction, synthesize_features, FeatureSynthConfig, LfrConfig};
use echo_core::{io, mean_degree, Error, Result, Rng};

#[derive(Parser)]
#[command(name = "echo", version, about = "Community detection on attributed graphs")]
struct Cli {
    /// Cap on worker threads for data-parallel kernels.
    #[arg(long, global = true, env = "ECHO_THREADS")]
    threads: Option<usize>,

    /// Log to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure graph statistics and choose the encoder.
    Route {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        base: Base,
        #[command(flatten)]
        router: RouterArgs,
        /// Write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Route, then train the encoder and diffusion.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        base: Base,
        #[command(flatten)]
        router: RouterArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Write the final embedding (ECHE container).
        #[arg(long)]
        dump_embeddings: Option<PathBuf>,
        /// Write `u v alpha` per directed edge.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
        /// Write the training report (loss history, timings) as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Build the sparse similarity graph from an embedding.
    Extract {
        /// Embedding container written by `train --dump-embeddings`.
        #[arg(long)]
        embeddings: PathBuf,
        /// Original graph; supplies the degrees behind each node's k.
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        base: Base,
        #[command(flatten)]
        extract: ExtractArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Louvain on a similarity graph.
    Cluster {
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        base: Base,
        #[command(flatten)]
        cluster: ClusterArgs,
    },
    /// Label propagation baseline on the input graph.
    Lpa {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_LPA_ITERS)]
        max_iters: usize,
    },
    /// Score a partition against ground truth.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Also report the modularity of the prediction on this graph.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate an LFR benchmark graph with noisy community features.
    GenLfr {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        mu: f64,
        #[arg(long, default_value_t = 15.0)]
        mean_degree: f64,
        #[arg(long, default_value_t = 50)]
        max_degree: usize,
        #[arg(long, default_value_t = 2.0)]
        degree_exponent: f64,
        #[arg(long, default_value_t = 1.0)]
        community_exponent: f64,
        #[arg(long, default_value_t = 20)]
        min_community: usize,
        #[arg(long, default_value_t = 100)]
        max_community: usize,
        /// Standard deviation of the feature noise.
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        /// Leave the degree column out of the features.
        #[arg(long)]
        no_degree: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes PREFIX.edges, PREFIX.truth and PREFIX.features.csv.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Full pipeline: route, train, extract, cluster.
    Detect {
        #[arg(long, required_unless_present = "dry_run")]
        graph: Option<PathBuf>,
        #[arg(long, required_unless_present = "dry_run")]
        features: Option<PathBuf>,
        /// Partition output, one community id per line.
        #[arg(long, required_unless_present = "dry_run")]
        out: Option<PathBuf>,
        /// Ground truth for the NMI in the report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Write the run report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Print per-phase seconds and nodes per second.
        #[arg(long)]
        timings: bool,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        dump_embeddings: Option<PathBuf>,
        #[arg(long)]
        dump_similarity: Option<PathBuf>,
        #[command(flatten)]
        base: Base,
        #[command(flatten)]
        router: RouterArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        extract: ExtractArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
    },
}

#[derive(Args)]
struct Inputs {
    /// Whitespace-separated zero-indexed edge list.
    #[arg(long)]
    graph: PathBuf,
    /// Headerless CSV or ECHF container.
    #[arg(long)]
    features: PathBuf,
}

#[derive(Args)]
struct Base {
    /// Flat key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any configuration key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct RouterArgs {
    /// auto, isolating or densifying.
    #[arg(long)]
    encoder: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Diffusion steps K.
    #[arg(long)]
    steps: Option<usize>,
    /// Contrastive temperature.
    #[arg(long)]
    temp: Option<f64>,
    /// Attention sparsity weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Negatives per node.
    #[arg(long)]
    neg: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Shard the negative term above this many elements.
    #[arg(long)]
    shard_threshold: Option<u64>,
    #[arg(long)]
    embed_dim: Option<usize>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    kmin: Option<usize>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// Rows per similarity block.
    #[arg(long)]
    chunk: Option<usize>,
    /// Keep edges selected by either endpoint.
    #[arg(long)]
    one_sided: bool,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    resolution: Option<f64>,
}

fn put(cfg: &mut PipelineConfig, key: &str, value: Option<impl ToString>) -> Result<()> {
    match value {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

impl Base {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        put(&mut cfg, "seed", self.seed)?;
        Ok(cfg)
    }
}

impl RouterArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        put(cfg, "encoder", self.encoder.as_ref())
    }
}

impl TrainArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        put(cfg, "steps", self.steps)?;
        put(cfg, "temperature", self.temp)?;
        put(cfg, "lambda", self.lambda)?;
        put(cfg, "negatives", self.neg)?;
        put(cfg, "epochs", self.epochs)?;
        put(cfg, "lr", self.lr)?;
        put(cfg, "shard_threshold", self.shard_threshold)?;
        put(cfg, "embed_dim", self.embed_dim)
    }
}

impl ExtractArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        put(cfg, "k_min", self.kmin)?;
        put(cfg, "k_max", self.kmax)?;
        put(cfg, "delta", self.delta)?;
        put(cfg, "chunk_rows", self.chunk)?;
        if self.one_sided {
            cfg.extract.one_sided = true;
        }
        Ok(())
    }
}

impl ClusterArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        put(cfg, "resolution", self.resolution)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Route {
            inputs,
            base,
            router,
            json,
        } => {
            let mut cfg = base.resolve()?;
            router.apply(&mut cfg)?;
            cfg.validate()?;
            let (g, x) = load_inputs(&inputs.graph, &inputs.features)?;
            let report = route_phase(&g, &x, &cfg)?;
            print!("{}", report.to_key_values());
            if let Some(path) = json {
                write_text(&path, &serde_json::to_string_pretty(&report).expect("serialisable"))?;
            }
        }
        Command::Train {
            inputs,
            base,
            router,
            train,
            dump_embeddings,
            dump_attention,
            json,
        } => {
            let mut cfg = base.resolve()?;
            router.apply(&mut cfg)?;
            train.apply(&mut cfg)?;
            cfg.validate()?;
            let (g, x) = load_inputs(&inputs.graph, &inputs.features)?;
            let report = route_phase(&g, &x, &cfg)?;
            let out = train_phase(&g, &x, &report, &cfg)?;
            let last = out.report.history.last().expect("epochs >= 1");
            println!("encoder={}", report.decision);
            println!("epochs={}", out.report.history.len());
            println!("final_loss={}", last.total);
            println!("sharded={}", last.sharded);
            println!("chunks_used={}", last.chunks_used);
            println!("snapshot_id={}", out.report.snapshot_id);
            if let Some(path) = dump_embeddings {
                io::save_embeddings(&path, &embeddings_of(&out)?)?;
            }
            if let Some(path) = dump_attention {
                let a = &out.attention;
                io::save_attention(&path, &a.src, &a.dst, &a.alpha)?;
            }
            if let Some(path) = json {
                write_text(&path, &serde_json::to_string_pretty(&out.report).expect("serialisable"))?;
            }
        }
        Command::Extract {
            embeddings,
            graph,
            base,
            extract,
            out,
        } => {
            let mut cfg = base.resolve()?;
            extract.apply(&mut cfg)?;
            cfg.validate()?;
            let emb = io::load_embeddings(&embeddings)?;
            let (g, _) = io::load_edge_list(&graph, true)?;
            let g = if emb.n_rows() > g.n_nodes() {
                echo_core::Graph::from_edges(emb.n_rows(), g.edges().iter().copied())
            } else {
                g
            };
            let sg = extract_phase(&emb, &g, &cfg)?;
            io::save_similarity_graph(&out, &sg)?;
            println!("nodes={}", sg.n_nodes());
            println!("edges={}", sg.n_edges());
        }
        Command::Cluster {
            sim,
            out,
            base,
            cluster,
        } => {
            let mut cfg = base.resolve()?;
            cluster.apply(&mut cfg)?;
            cfg.validate()?;
            let sg = io::load_similarity_graph(&sim)?;
            let result = cluster_phase(&sg, &cfg)?;
            io::save_partition(&out, &result.partition)?;
            println!("communities={}", result.partition.n_communities());
            println!("modularity={}", result.modularity);
        }
        Command::Lpa {
            graph,
            out,
            seed,
            max_iters,
        } => {
            let (g, _) = io::load_edge_list(&graph, true)?;
            let p = lpa(&g, max_iters, &mut Rng::new(seed));
            io::save_partition(&out, &p)?;
            println!("communities={}", p.n_communities());
        }
        Command::Eval {
            truth,
            pred,
            graph,
            json,
        } => {
            let truth = io::load_partition(&truth)?;
            let pred = io::load_partition(&pred)?;
            let q = match graph {
                Some(path) => {
                    let (g, _) = io::load_edge_list(&path, true)?;
                    Some(modularity(&g, &pred, 1.0)?)
                }
                None => None,
            };
            let report = evaluate(Some(&truth), &pred, q, PhaseTimings::default())?;
            print!("{}", report.to_key_values());
            if let Some(path) = json {
                write_text(&path, &report.to_json())?;
            }
        }
        Command::GenLfr {
            n,
            mu,
            mean_degree: k,
            max_degree,
            degree_exponent,
            community_exponent,
            min_community,
            max_community,
            sigma,
            no_degree,
            seed,
            out_prefix,
        } => {
            let cfg = LfrConfig {
                n,
                mean_degree: k,
                max_degree,
                mu,
                degree_exponent,
                community_exponent,
                min_community,
                max_community,
                seed,
            };
            let (g, truth) = generate_lfr(&cfg)?;
            let features = FeatureSynthConfig {
                noise_sigma: sigma,
                include_degree: !no_degree,
            };
            let x = synthesize_features(&g, &truth, &features, &mut Rng::new(seed).substream(0x4645_4154))?;
            let path = |ext: &str| {
                let mut p = out_prefix.clone().into_os_string();
                p.push(ext);
                PathBuf::from(p)
            };
            if let Some(dir) = out_prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.to_path_buf(),
                    source: e,
                })?;
            }
            io::save_edge_list(path(".edges"), &g)?;
            io::save_partition(path(".truth"), &truth)?;
            io::save_features_csv(path(".features.csv"), &x)?;
            println!("nodes={}", g.n_nodes());
            println!("edges={}", g.n_edges());
            println!("communities={}", truth.n_communities());
            println!("mean_degree={}", mean_degree(&g));
            println!("mixing={}", mixing_fraction(&g, &truth));
            println!("feature_dim={}", x.dim());
        }
        Command::Detect {
            graph,
            features,
            out,
            truth,
            json,
            timings,
            dry_run,
            dump_embeddings,
            dump_similarity,
            base,
            router,
            train,
            extract,
            cluster,
        } => {
            let mut cfg = base.resolve()?;
            router.apply(&mut cfg)?;
            train.apply(&mut cfg)?;
            extract.apply(&mut cfg)?;
            cluster.apply(&mut cfg)?;
            cfg.validate()?;
            if dry_run {
                print!("{}", cfg.to_text());
                return Ok(());
            }
            let (graph, features, out) = (graph.expect("required"), features.expect("required"), out.expect("required"));
            let (g, x) = load_inputs(&graph, &features)?;
            let truth = truth.map(|p| io::load_partition(&p)).transpose()?;
            let d = detect(&g, &x, &cfg)?;
            io::save_partition(&out, &d.clusters.partition)?;
            if let Some(path) = dump_embeddings {
                io::save_embeddings(&path, &d.embeddings)?;
            }
            if let Some(path) = dump_similarity {
                io::save_similarity_graph(&path, &d.similarity)?;
            }
            let report = evaluate(truth.as_ref(), &d.clusters.partition, Some(d.clusters.modularity), d.timings)?;
            println!("encoder={}", d.route.decision);
            print!("{}", report.to_key_values());
            if timings {
                print!("{}", report.timing_key_values());
            }
            if let Some(path) = json {
                write_text(&path, &report.to_json())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
