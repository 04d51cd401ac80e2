use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use replaynav::agent::{init_params, load_checkpoint, save_checkpoint, AgentParams};
use replaynav::config::{ConfigError, Precision, RunConfig};
use replaynav::curriculum::TaskSampler;
use replaynav::embedstore::{load_store, precompute, save_store, EmbeddingStore, FrameSource};
use replaynav::environment::World;
use replaynav::eval::{
    bench, entropy_curves, evaluate, fixed_goal_tasks, paired_decrease, parse_table, random_tasks, render_bands,
    render_plot_data, BenchMode, EntropyCurves, EpisodeRecord, EvalConfig, EvalPolicy, Head, PlotInput, PlotKind,
    Provenance, Summary,
};
use replaynav::navgraph::{
    all_pairs_stats, generate_campus, generate_grid_campus, load_graph, save_graph, BuildingSpec, CampusParams,
    DistanceMatrix, NavGraph, NodeId,
};
use replaynav::trainer::{agent_config_for, train, MetricsRecord};
use replaynav::Scalar;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn rt(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "replaynav", version, about = "Navigation by interactive replay")]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Run configuration (flat TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Graph file; overrides the `graph` key.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Embedding store; overrides the `store` key. Without one the store is
    /// generated from the graph.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a synthetic graph file.
    GenGraph(GenGraphArgs),
    /// Render the synthetic embedding store of a graph.
    Precompute {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an agent.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        /// Metrics stream output, one record per line.
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Run evaluation episodes.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PolicyArg::Agent)]
        policy: PolicyArg,
        #[arg(long, value_enum, default_value_t = TaskArg::Random)]
        tasks: TaskArg,
        /// Episode records (tab-separated).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Per-episode node sequences.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Policy and probe entropy over episode steps.
    Probe {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Paired-test results for step 1 against `--late`.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        late: usize,
    },
    /// Environment throughput.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
        /// Weights for the forward-pass mode; random weights otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shortest-path statistics of a graph.
    Stats { graph: PathBuf },
    /// Figure-ready tables.
    Plotdata {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        kind: String,
        /// Metrics stream, episode records, graph file or entropy curves,
        /// depending on the kind.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// With `path_scatter`: also write percentile bands here.
        #[arg(long)]
        bands: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Debug)]
struct GenGraphArgs {
    /// Grid size as WIDTHxHEIGHT.
    #[arg(long, conflicts_with = "campus")]
    grid: Option<String>,
    /// Building on the grid as X,Y,FLOORS[,FOOTPRINT]; repeatable.
    #[arg(long, requires = "grid")]
    building: Vec<String>,
    /// Random corridor campus instead of a grid.
    #[arg(long)]
    campus: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    corridors: u32,
    #[arg(long, default_value_t = 2)]
    buildings: u32,
    #[arg(long, default_value_t = 3)]
    floors: u32,
    #[arg(long, default_value_t = 25)]
    nodes_per_corridor: u32,
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Agent,
    Oracle,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    /// Uniform random pairs.
    Random,
    /// One central goal, far-apart starts.
    Fixed,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::GenGraph(a) => gen_graph(a),
        Cmd::Precompute { cfg, out } => {
            let (rc, _) = load_config(&cfg, None)?;
            let graph = load_graph_for(&cfg, &rc)?;
            let store = synth_store(&graph, &rc)?;
            save_store(&store, &out).map_err(rt)?;
            eprintln!(
                "{} frames, {} rotations, dim {}, mean pool {:.1}",
                store.frame_count(),
                store.rotations_per_frame(),
                store.dim(),
                store.mean_pool_size()
            );
            Ok(())
        }
        Cmd::Train {
            cfg,
            seed,
            metrics,
            checkpoint,
            init,
        } => {
            let (rc, _) = load_config(&cfg, Some(seed))?;
            let world = load_world(&cfg, &rc)?;
            match rc.precision {
                Precision::F32 => train_cmd::<f32>(&world, &rc, &metrics, &checkpoint, init.as_deref()),
                Precision::F64 => train_cmd::<f64>(&world, &rc, &metrics, &checkpoint, init.as_deref()),
            }
        }
        Cmd::Evaluate {
            cfg,
            seed,
            checkpoint,
            policy,
            tasks,
            out,
            summary,
            trajectories,
        } => {
            let (rc, text) = load_config(&cfg, Some(seed))?;
            let world = load_world(&cfg, &rc)?;
            let o = EvalOut {
                records: &out,
                summary: summary.as_deref(),
                trajectories: trajectories.as_deref(),
                prov: provenance(&rc, &text),
            };
            match rc.precision {
                Precision::F32 => evaluate_cmd::<f32>(&world, &rc, checkpoint.as_deref(), policy, tasks, &o),
                Precision::F64 => evaluate_cmd::<f64>(&world, &rc, checkpoint.as_deref(), policy, tasks, &o),
            }
        }
        Cmd::Probe {
            cfg,
            seed,
            checkpoint,
            out,
            test,
            late,
        } => {
            let (rc, text) = load_config(&cfg, Some(seed))?;
            let world = load_world(&cfg, &rc)?;
            let prov = provenance(&rc, &text);
            match rc.precision {
                Precision::F32 => probe_cmd::<f32>(&world, &rc, &checkpoint, &out, test.as_deref(), late, &prov),
                Precision::F64 => probe_cmd::<f64>(&world, &rc, &checkpoint, &out, test.as_deref(), late, &prov),
            }
        }
        Cmd::Bench {
            cfg,
            seed,
            workers,
            duration,
            checkpoint,
            out,
        } => {
            let (mut rc, _) = load_config(&cfg, Some(seed))?;
            if let Some(w) = workers {
                rc.bench_workers = w;
            }
            if let Some(d) = duration {
                rc.bench_duration_s = d;
            }
            rc.validate()?;
            let world = load_world(&cfg, &rc)?;
            match rc.precision {
                Precision::F32 => bench_cmd::<f32>(&world, &rc, checkpoint.as_deref(), out.as_deref()),
                Precision::F64 => bench_cmd::<f64>(&world, &rc, checkpoint.as_deref(), out.as_deref()),
            }
        }
        Cmd::Stats { graph } => {
            let g = load_graph(&graph).map_err(rt)?;
            let s = all_pairs_stats(&DistanceMatrix::new(&g), 10.0);
            println!("nodes {}", g.node_count());
            println!("edges {}", g.edge_count());
            println!("floors {}", g.floor_count());
            println!("pairs {}", s.pairs);
            println!("mean path {:.1} m", s.mean_m);
            println!("std path {:.1} m", s.std_m);
            println!("max path {:.1} m", s.max_m);
            Ok(())
        }
        Cmd::Plotdata {
            cfg,
            kind,
            input,
            out,
            bands,
            seed,
        } => {
            let kind: PlotKind = kind.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
            let (rc, text) = load_config(&cfg, seed)?;
            let mut prov = provenance(&rc, &text);
            prov.seed = seed;
            plotdata_cmd(kind, &input, &out, bands.as_deref(), &prov)
        }
    }
}

/// Effective config and its TOML text (for provenance hashes).
fn load_config(a: &ConfigArgs, seed: Option<u64>) -> Result<(RunConfig, String), CliError> {
    let text = match &a.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut rc = RunConfig::from_toml_with(&text, &a.set)?;
    if let Some(s) = seed {
        rc.seed = s;
    }
    let text = rc.to_toml();
    Ok((rc, text))
}

fn provenance(rc: &RunConfig, text: &str) -> Provenance {
    let mut p = Provenance::new(Some(text), Some(rc.seed));
    p.ratio_bin = Some(rc.ratio_bin);
    p.distance_bin_m = Some(rc.distance_bin_m);
    p
}

fn load_graph_for(a: &ConfigArgs, rc: &RunConfig) -> Result<NavGraph, CliError> {
    let path = match (&a.graph, &rc.graph) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => {
            return Err(CliError::Config(
                "config key `graph`: no graph file given (use --graph or set `graph`)".into(),
            ))
        }
    };
    let g = load_graph(&path).map_err(rt)?;
    if (g.node_spacing_m() - rc.node_spacing_m).abs() > 1e-9 {
        return Err(CliError::Config(format!(
            "config key `node_spacing_m`: {} but the graph uses {}",
            rc.node_spacing_m,
            g.node_spacing_m()
        )));
    }
    Ok(g)
}

fn synth_store(graph: &NavGraph, rc: &RunConfig) -> Result<EmbeddingStore, CliError> {
    precompute(
        graph,
        FrameSource::Synthetic {
            frames_per_edge: rc.frames_per_edge,
        },
        &rc.precompute_params(),
    )
    .map_err(rt)
}

fn load_world(a: &ConfigArgs, rc: &RunConfig) -> Result<World, CliError> {
    let graph = load_graph_for(a, rc)?;
    let store_path = a.store.clone().or_else(|| rc.store.as_ref().map(PathBuf::from));
    let store = match store_path {
        Some(p) => load_store(&p, &graph).map_err(rt)?,
        None => synth_store(&graph, rc)?,
    };
    let world = World::new(graph, store).map_err(rt)?;
    if let Some(n) = rc.n_actions {
        if n != world.action_count() {
            return Err(CliError::Config(format!(
                "config key `n_actions`: {n} but the graph gives {}",
                world.action_count()
            )));
        }
    }
    Ok(world)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| rt(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| rt(format!("{}: {e}", path.display())))
}

fn gen_graph(a: GenGraphArgs) -> Result<(), CliError> {
    let g = if a.campus {
        let p = CampusParams {
            corridors: a.corridors,
            buildings: a.buildings,
            floors_per_building: a.floors,
            nodes_per_corridor: a.nodes_per_corridor,
            spacing_m: a.spacing,
        };
        generate_campus(a.seed, &p).map_err(rt)?
    } else {
        let spec = a
            .grid
            .as_deref()
            .ok_or_else(|| CliError::Usage("give --grid WIDTHxHEIGHT or --campus".into()))?;
        let (w, h) = spec
            .split_once(['x', 'X'])
            .and_then(|(w, h)| Some((w.parse::<u32>().ok()?, h.parse::<u32>().ok()?)))
            .ok_or_else(|| CliError::Usage(format!("--grid {spec:?}: expected WIDTHxHEIGHT")))?;
        let buildings = a.building.iter().map(|s| parse_building(s)).collect::<Result<Vec<_>, _>>()?;
        generate_grid_campus(w, h, a.spacing, &buildings).map_err(rt)?
    };
    save_graph(&g, &a.out).map_err(rt)?;
    eprintln!("{} nodes, {} edges", g.node_count(), g.edge_count());
    Ok(())
}

fn parse_building(s: &str) -> Result<BuildingSpec, CliError> {
    let bad = || CliError::Usage(format!("--building {s:?}: expected X,Y,FLOORS[,FOOTPRINT]"));
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(bad());
    }
    Ok(BuildingSpec {
        x: parts[0].parse().map_err(|_| bad())?,
        y: parts[1].parse().map_err(|_| bad())?,
        floors: parts[2].parse().map_err(|_| bad())?,
        footprint_hops: match parts.get(3) {
            Some(f) => f.parse().map_err(|_| bad())?,
            None => 4,
        },
    })
}

fn train_cmd<T: Scalar>(
    world: &World,
    rc: &RunConfig,
    metrics: &Path,
    checkpoint: &Path,
    init: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = rc.trainer_config()?;
    let init = match init {
        Some(p) => Some(load_checkpoint::<T>(p).map_err(rt)?),
        None => None,
    };
    let mut w = create(metrics)?;
    let mut io_err = None;
    let out = train::<T>(world, rc.env_config(), &cfg, init, |r| {
        if io_err.is_none() {
            if let Err(e) = writeln!(w, "{r}").and_then(|_| w.flush()) {
                io_err = Some(e);
            }
        }
    })
    .map_err(rt)?;
    if let Some(e) = io_err {
        return Err(rt(format!("{}: {e}", metrics.display())));
    }
    save_checkpoint(&out.checkpoint, checkpoint).map_err(rt)?;
    eprintln!(
        "{} steps, {} episodes, level {}/{}{}",
        out.total_steps,
        out.episodes,
        out.final_level,
        cfg.n_c,
        out.final_level_step
            .map(|s| format!(", final level reached at step {s}"))
            .unwrap_or_default()
    );
    Ok(())
}

struct EvalOut<'a> {
    records: &'a Path,
    summary: Option<&'a Path>,
    trajectories: Option<&'a Path>,
    prov: Provenance,
}

fn final_horizon(world: &World, rc: &RunConfig) -> Result<u32, CliError> {
    let sampler = TaskSampler::new(&world.distances, rc.n_c).map_err(rt)?;
    sampler.horizon(rc.n_c, &rc.horizon_rule()).map_err(rt)
}

fn load_params<T: Scalar>(world: &World, path: &Path) -> Result<AgentParams<T>, CliError> {
    let ck = load_checkpoint::<T>(path).map_err(rt)?;
    let want = agent_config_for(world, ck.params.cfg.width);
    if ck.params.cfg != want {
        return Err(rt(format!(
            "checkpoint dims {:?} do not match the world {:?}",
            ck.params.cfg, want
        )));
    }
    Ok(ck.params)
}

fn summary_text(s: &Summary) -> String {
    let mut t = format!(
        "episodes={} successes={} success_rate={:.4}",
        s.episodes, s.successes, s.success_rate
    );
    if let (Some(m), Some(p)) = (s.mean_ratio, s.ratio_percentiles) {
        t.push_str(&format!(
            " mean_ratio={m:.4} p2_5={:.4} p25={:.4} p50={:.4} p75={:.4} p97_5={:.4}",
            p.p2_5, p.p25, p.p50, p.p75, p.p97_5
        ));
    }
    t
}

fn evaluate_cmd<T: Scalar>(
    world: &World,
    rc: &RunConfig,
    checkpoint: Option<&Path>,
    policy: PolicyArg,
    tasks: TaskArg,
    out: &EvalOut<'_>,
) -> Result<(), CliError> {
    let params;
    let policy = match policy {
        PolicyArg::Oracle => EvalPolicy::Oracle,
        PolicyArg::Random => EvalPolicy::Random,
        PolicyArg::Agent => {
            let p = checkpoint.ok_or_else(|| CliError::Usage("--policy agent needs --checkpoint".into()))?;
            params = load_params::<T>(world, p)?;
            EvalPolicy::Agent {
                params: &params,
                greedy: rc.eval_greedy,
            }
        }
    };
    let task_list = match tasks {
        TaskArg::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
            random_tasks(&world.distances, rc.eval_tasks, rc.eval_min_hops, &mut rng).map_err(rt)?
        }
        TaskArg::Fixed => {
            fixed_goal_tasks(&world.graph, &world.distances, rc.fixed_goal_starts, rc.density_radius_m).map_err(rt)?
        }
    };
    let cfg = EvalConfig {
        env: rc.env_config(),
        horizon: final_horizon(world, rc)?,
        episodes_per_task: rc.episodes_per_task,
        seed: rc.seed,
    };
    let (records, summary) = evaluate(world, policy, &task_list, &cfg).map_err(rt)?;
    write_file(
        out.records,
        &render_plot_data(PlotKind::PathScatter, PlotInput::Episodes(&records), &out.prov).map_err(rt)?,
    )?;
    if let Some(p) = out.summary {
        write_file(p, &format!("{}\n", summary_text(&summary)))?;
    }
    if let Some(p) = out.trajectories {
        let mut w = create(p)?;
        for r in &records {
            let nodes: Vec<String> = r.trajectory.iter().map(|n| n.0.to_string()).collect();
            writeln!(w, "{}\t{}\t{}\t{}", r.start, r.goal, r.success as u8, nodes.join(" ")).map_err(rt)?;
        }
        w.flush().map_err(rt)?;
    }
    println!("{}", summary_text(&summary));
    Ok(())
}

fn probe_cmd<T: Scalar>(
    world: &World,
    rc: &RunConfig,
    checkpoint: &Path,
    out: &Path,
    test: Option<&Path>,
    late: usize,
    prov: &Provenance,
) -> Result<(), CliError> {
    let params = load_params::<T>(world, checkpoint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
    let tasks = random_tasks(&world.distances, rc.probe_episodes, rc.probe_min_hops, &mut rng).map_err(rt)?;
    let cfg = EvalConfig {
        env: rc.env_config(),
        horizon: final_horizon(world, rc)?,
        episodes_per_task: 1,
        seed: rc.seed,
    };
    let (records, _) = evaluate(
        world,
        EvalPolicy::Agent {
            params: &params,
            greedy: false,
        },
        &tasks,
        &cfg,
    )
    .map_err(rt)?;
    let curves = entropy_curves(&records);
    write_file(out, &render_plot_data(PlotKind::EntropyCurves, PlotInput::Entropy(&curves), prov).map_err(rt)?)?;
    let mut lines = Vec::new();
    for (name, head) in [("policy", Head::Policy), ("probe", Head::Probe)] {
        let t = paired_decrease(&records, head, 1, late).map_err(rt)?;
        lines.push(format!(
            "head={name} n={} mean_t1={:.6} mean_t{late}={:.6} t={:.4} p={:.3e}",
            t.n, t.mean_early, t.mean_late, t.t, t.p_value
        ));
    }
    for l in &lines {
        println!("{l}");
    }
    if let Some(p) = test {
        write_file(p, &(lines.join("\n") + "\n"))?;
    }
    Ok(())
}

fn bench_cmd<T: Scalar>(world: &World, rc: &RunConfig, checkpoint: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let env = rc.env_config();
    let mut lines = Vec::new();
    let r = bench::<T>(
        world,
        env,
        BenchMode::EnvOnly,
        rc.bench_workers,
        rc.bench_warmup_s,
        rc.bench_duration_s,
        rc.seed,
        None,
    )
    .map_err(rt)?;
    lines.push(format!(
        "mode=env workers={} transitions={} secs={:.3} tps={:.1}",
        r.workers, r.transitions, r.secs, r.tps
    ));
    if rc.bench_forward {
        let params = match checkpoint {
            Some(p) => load_params::<T>(world, p)?,
            None => init_params::<T>(agent_config_for(world, rc.width), rc.seed).map_err(rt)?,
        };
        let r = bench::<T>(
            world,
            env,
            BenchMode::EnvForward(&params),
            rc.bench_workers,
            rc.bench_warmup_s,
            rc.bench_duration_s,
            rc.seed,
            None,
        )
        .map_err(rt)?;
        lines.push(format!(
            "mode=env+forward workers={} transitions={} secs={:.3} tps={:.1}",
            r.workers, r.transitions, r.secs, r.tps
        ));
    }
    for l in &lines {
        println!("{l}");
    }
    if let Some(p) = out {
        write_file(p, &(lines.join("\n") + "\n"))?;
    }
    Ok(())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| rt(format!("{}: {e}", path.display())))
}

fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, CliError> {
    read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| l.parse::<MetricsRecord>().map_err(|e| rt(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

/// Episode records as written by `evaluate`.
fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>, CliError> {
    let t = parse_table(&read(path)?).map_err(rt)?;
    let col = |name: &str| {
        t.column(name)
            .ok_or_else(|| rt(format!("{}: no column {name:?}", path.display())))
    };
    let (start, goal, opt, len, ok, steps, ratio) = (
        col("start")?,
        col("goal")?,
        col("optimal_m")?,
        col("path_m")?,
        col("success")?,
        col("steps")?,
        col("ratio")?,
    );
    Ok((0..t.rows.len())
        .map(|i| EpisodeRecord {
            start: NodeId(start[i] as u32),
            goal: NodeId(goal[i] as u32),
            success: ok[i] != 0.0,
            steps: steps[i] as u32,
            path_m: len[i],
            optimal_m: opt[i],
            ratio: if ratio[i].is_nan() { None } else { Some(ratio[i]) },
            policy_entropy: Vec::new(),
            probe_entropy: Vec::new(),
            trajectory: Vec::new(),
        })
        .collect())
}

fn read_curves(path: &Path) -> Result<EntropyCurves, CliError> {
    let t = parse_table(&read(path)?).map_err(rt)?;
    let col = |name: &str| {
        t.column(name)
            .ok_or_else(|| rt(format!("{}: no column {name:?}", path.display())))
    };
    Ok(EntropyCurves {
        policy: col("policy_entropy")?,
        probe: col("probe_entropy")?,
        counts: col("episodes")?.iter().map(|&c| c as usize).collect(),
    })
}

fn plotdata_cmd(kind: PlotKind, input: &Path, out: &Path, bands: Option<&Path>, prov: &Provenance) -> Result<(), CliError> {
    let text = match kind {
        PlotKind::LearningCurve => {
            let m = read_metrics(input)?;
            render_plot_data(kind, PlotInput::Metrics(&m), prov)
        }
        PlotKind::RatioHistogram | PlotKind::PathScatter => {
            let r = read_records(input)?;
            if let (PlotKind::PathScatter, Some(b)) = (kind, bands) {
                write_file(b, &render_bands(&r, prov).map_err(rt)?)?;
            }
            render_plot_data(kind, PlotInput::Episodes(&r), prov)
        }
        PlotKind::VisitationHeatmap | PlotKind::LengthHistogram => {
            let g = load_graph(input).map_err(rt)?;
            render_plot_data(kind, PlotInput::Graph(&g), prov)
        }
        PlotKind::EntropyCurves => {
            let c = read_curves(input)?;
            render_plot_data(kind, PlotInput::Entropy(&c), prov)
        }
    }
    .map_err(rt)?;
    write_file(out, &text)
}
