//! `nfbeam`: scene and dataset generation, beam sweeps, training, and evaluation.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nfbeam::channel::{channel_vector, LinkParams};
use nfbeam::codebook::{build_codebook, ArrayConfig, CodebookDims, CoverageRanges, FocalPoint};
use nfbeam::dataset::{generate_dataset, read_dataset, write_codebook, DatasetConfig, Split, SplitCounts};
use nfbeam::geometry::Vec3;
use nfbeam::metrics::write_metrics_csv;
use nfbeam::oracle::{sweep_on_the_fly, top_k_beams};
use nfbeam::predictor::{
    evaluate, evaluate_baseline, load_model, save_model, train, write_train_log, ModelConfig, Sample, TrainOptions,
    TRAIN_LOG_FILE,
};
use nfbeam::scene::{enumerate_paths, generate_scene, Scene, SceneConfig};
use nfbeam::verify::verification_suite;

#[derive(Parser)]
#[command(name = "nfbeam", version, about = "Near-field XL-MIMO beam management lab")]
struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run on a single thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Scene operations.
    Scene {
        #[command(subcommand)]
        op: SceneOp,
    },
    /// Dataset operations.
    Dataset {
        #[command(subcommand)]
        op: DatasetOp,
    },
    /// Exhaustive sweep for one UAV position; prints the best beam and its SE.
    Sweep(SweepArgs),
    /// Train the predictor on a generated dataset.
    Train(TrainArgs),
    /// Per-step metrics CSV of a trained model or the baseline.
    Eval(EvalArgs),
    /// Finite-difference check of every primitive and the full loss.
    Gradcheck,
    /// Time the on-the-fly exhaustive sweep.
    BenchSweep(BenchArgs),
}

#[derive(Subcommand)]
enum SceneOp {
    /// Generate a random box-building scene as JSON.
    Gen(SceneGenArgs),
}

#[derive(Subcommand)]
enum DatasetOp {
    /// Generate, label, and write train/val/test splits.
    Gen(DatasetGenArgs),
}

#[derive(Args)]
struct SceneGenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    buildings: usize,
    #[arg(long, default_value_t = 4)]
    scatterers_per_building: usize,
    /// BS array height (m).
    #[arg(long, default_value_t = 20.0)]
    bs_height: f64,
}

#[derive(Args)]
struct CodebookArgs {
    /// Azimuth and elevation samples.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Distance samples.
    #[arg(long, default_value_t = 10)]
    s: usize,
}

impl CodebookArgs {
    fn dims(&self) -> Result<CodebookDims> {
        Ok(CodebookDims::new(self.n, self.s)?)
    }
}

#[derive(Args)]
struct DatasetGenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Scene JSON; generated from the seed when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    val: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    /// Use 12000/1500/1500 sequences.
    #[arg(long, conflicts_with_all = ["train", "val", "test"])]
    full_scale: bool,
    #[arg(long, default_value_t = 10)]
    t_prev: usize,
    #[arg(long, default_value_t = 10)]
    t_pred: usize,
    /// Slot duration (s).
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    /// Per-axis GPS noise standard deviation (m).
    #[arg(long, default_value_t = 0.5)]
    sigma_gps: f64,
    /// Point-cloud size.
    #[arg(long, default_value_t = 256)]
    points: usize,
    /// Top-K beams stored per slot.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Soft-target decay.
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[command(flatten)]
    codebook: CodebookArgs,
    /// Also export the codebook to this file.
    #[arg(long)]
    codebook_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// World position `x,y,z` (m).
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true, conflicts_with = "focal", required_unless_present = "focal")]
    pos: Option<[f64; 3]>,
    /// Position relative to the BS as `theta_deg,phi_deg,r_m`.
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    focal: Option<[f64; 3]>,
    /// Scene JSON; an empty scene with the BS at (0, 0, 20) when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Print this many best beams.
    #[arg(long, default_value_t = 1)]
    top: usize,
    #[command(flatten)]
    codebook: CodebookArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint, config, and loss log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Validate every this many epochs.
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Keep the best-validation or the final weights.
    #[arg(long, value_enum, default_value_t = Keep::Best)]
    keep: Keep,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    point_feature_dim: usize,
    #[arg(long, default_value_t = 128)]
    ffn_hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Beam-loss weight.
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    /// Stop the beam loss from reaching the trajectory head.
    #[arg(long)]
    detach_trajectory: bool,
    /// Use only the first N training sequences.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Keep {
    Best,
    Last,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained model directory.
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    model: Option<PathBuf>,
    /// Evaluate the constant-velocity geometric baseline instead.
    #[arg(long)]
    baseline: bool,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// UAV position relative to the BS (m).
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true, default_value = "60,15,25")]
    offset: [f64; 3],
    #[command(flatten)]
    codebook: CodebookArgs,
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| e.to_string())?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected 3 comma-separated numbers, got {}", v.len()))
}

fn read_scene(path: &Path) -> Result<Scene> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scene::from_json(&s).with_context(|| format!("parsing {}", path.display()))
}

fn scene_gen(seed: u64, a: &SceneGenArgs) -> Result<()> {
    let cfg = SceneConfig {
        building_count: a.buildings,
        scatterers_per_building: a.scatterers_per_building,
        bs_position: Vec3::new(0.0, 0.0, a.bs_height),
        ..SceneConfig::default()
    };
    let scene = generate_scene(seed, &cfg)?;
    fs::write(&a.out, scene.to_json()?).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "scene: {} buildings, {} scatterers -> {}",
        scene.buildings.len(),
        scene.scatterers.len(),
        a.out.display()
    );
    Ok(())
}

fn dataset_gen(seed: u64, a: &DatasetGenArgs) -> Result<()> {
    let scene = match &a.scene {
        Some(p) => read_scene(p)?,
        None => generate_scene(seed, &SceneConfig::default())?,
    };
    let counts =
        if a.full_scale { SplitCounts::full_scale() } else { SplitCounts { train: a.train, val: a.val, test: a.test } };
    let cfg = DatasetConfig {
        dims: a.codebook.dims()?,
        counts,
        t_prev: a.t_prev,
        t_pred: a.t_pred,
        dt: a.dt,
        sigma_gps: a.sigma_gps,
        points: a.points,
        k: a.k,
        gamma: a.gamma,
        master_seed: seed,
        ..DatasetConfig::default()
    };
    let start = Instant::now();
    let manifest = generate_dataset(&scene, &cfg, &a.out)?;
    if let Some(path) = &a.codebook_out {
        let cb = build_codebook(&cfg.array, cfg.dims, cfg.ranges)?;
        write_codebook(&cb, File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
    }
    let counts: Vec<String> = manifest.splits.iter().map(|s| format!("{} {}", s.split.name(), s.records)).collect();
    println!("dataset: {} -> {} in {:.1} s", counts.join(", "), a.out.display(), start.elapsed().as_secs_f64());
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let scene = match &a.scene {
        Some(p) => read_scene(p)?,
        None => Scene::empty(SceneConfig::default().bs_position),
    };
    let uav = match (a.pos, a.focal) {
        (Some(p), _) => Vec3::new(p[0], p[1], p[2]),
        (None, Some([t, p, r])) => {
            scene.bs_position + FocalPoint::new(t.to_radians(), p.to_radians(), r).to_cartesian()
        }
        (None, None) => bail!("one of --pos or --focal is required"),
    };
    let array = ArrayConfig::xl_default();
    let codebook = build_codebook(&array, a.codebook.dims()?, CoverageRanges::default())?;
    let h = channel_vector(&array, &enumerate_paths(&array, &scene, uav)?, &scene, uav);
    let label = top_k_beams(&h, &codebook, &LinkParams::default(), a.top.max(1))?;
    for (rank, b) in label.topk.iter().enumerate() {
        let fp = codebook.focal_point(b.index);
        println!(
            "rank {} i_theta {} i_phi {} i_r {} flat {} theta_deg {:.3} phi_deg {:.3} r_m {:.3} se {:.6}",
            rank + 1,
            b.index.i_theta,
            b.index.i_phi,
            b.index.i_r,
            b.flat,
            fp.theta.to_degrees(),
            fp.phi.to_degrees(),
            fp.r,
            b.se
        );
    }
    Ok(())
}

fn samples_for(recs: &[nfbeam::dataset::SequenceRecord], cfg: &ModelConfig) -> Result<Vec<Sample>> {
    Ok(Sample::from_records(recs, cfg)?)
}

fn train_cmd(seed: u64, a: &TrainArgs) -> Result<()> {
    let ds = read_dataset(&a.data).with_context(|| format!("reading dataset {}", a.data.display()))?;
    let m = &ds.manifest.config;
    let cfg = ModelConfig {
        d_model: a.d_model,
        heads: a.heads,
        backbone_layers: a.layers,
        t_prev: m.t_prev,
        t_pred: m.t_pred,
        k: m.k,
        gamma: m.gamma,
        lambda_loss: a.lambda,
        dims: m.dims,
        point_feature_dim: a.point_feature_dim,
        ffn_hidden: a.ffn_hidden,
        lr: a.lr,
        batch_size: a.batch_size,
        seed,
        detach_trajectory: a.detach_trajectory,
        ..ModelConfig::default()
    };
    cfg.validate()?;
    let n = a.limit.unwrap_or(ds.train.len()).min(ds.train.len());
    let train_set = samples_for(&ds.train[..n], &cfg)?;
    let val_set = samples_for(&ds.val, &cfg)?;
    let opts = TrainOptions { epochs: a.epochs, eval_every: a.eval_every };
    let out = train(&cfg, &train_set, &val_set, opts, |r| {
        println!(
            "epoch {:>4} l_traj {:.5} l_beam {:.5} val_mae {:.4} val_top1_joint {:.4} val_top5_joint {:.4}",
            r.epoch, r.l_traj, r.l_beam, r.val_mae, r.val_top1_joint, r.val_top5_joint
        );
    })?;
    let model = match a.keep {
        Keep::Best => &out.best,
        Keep::Last => &out.last,
    };
    save_model(model, &a.out)?;
    write_train_log(&out.log, BufWriter::new(File::create(a.out.join(TRAIN_LOG_FILE))?))?;
    println!(
        "saved {} weights (best epoch {}) -> {}",
        if matches!(a.keep, Keep::Best) { "best" } else { "last" },
        out.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let ds = read_dataset(&a.data).with_context(|| format!("reading dataset {}", a.data.display()))?;
    let recs = ds.split(a.split.into());
    let acc = match &a.model {
        Some(dir) => {
            let model = load_model(dir).with_context(|| format!("loading model {}", dir.display()))?;
            let m = &ds.manifest.config;
            if (model.cfg.t_prev, model.cfg.t_pred, model.cfg.dims) != (m.t_prev, m.t_pred, m.dims) {
                bail!("model and dataset disagree on T_prev, T_pred, or codebook size");
            }
            evaluate(&model, &samples_for(recs, &model.cfg)?)?
        }
        None => {
            let m = &ds.manifest.config;
            let cfg = ModelConfig { t_prev: m.t_prev, t_pred: m.t_pred, dims: m.dims, ..ModelConfig::default() };
            let grid = nfbeam::codebook::CodebookGrid::new(m.dims, m.ranges)?;
            evaluate_baseline(&samples_for(recs, &cfg)?, &grid, ds.scene.bs_position, m.t_pred)?
        }
    };
    let rows = acc.rows();
    match &a.out {
        Some(p) => write_metrics_csv(&rows, File::create(p).with_context(|| format!("creating {}", p.display()))?)?,
        None => write_metrics_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn gradcheck(seed: u64) -> Result<bool> {
    let results = verification_suite(seed)?;
    let mut ok = true;
    for r in &results {
        println!(
            "{:<16} max_rel_error {:.3e} significant {:.3e} coords {:>5} tol {:.0e} {}",
            r.name,
            r.max_rel_error,
            r.max_rel_error_significant,
            r.coords_checked,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
        ok &= r.passed();
    }
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!("max relative error {worst:.3e}");
    Ok(ok)
}

fn bench_sweep(a: &BenchArgs) -> Result<()> {
    if a.repeats == 0 {
        bail!("--repeats must be positive");
    }
    let array = ArrayConfig::xl_default();
    let grid = nfbeam::codebook::CodebookGrid::new(a.codebook.dims()?, CoverageRanges::default())?;
    let scene = Scene::empty(SceneConfig::default().bs_position);
    let uav = scene.bs_position + Vec3::new(a.offset[0], a.offset[1], a.offset[2]);
    let h = channel_vector(&array, &enumerate_paths(&array, &scene, uav)?, &scene, uav);
    let link = LinkParams::default();
    let mut times = Vec::with_capacity(a.repeats);
    let mut best = None;
    for _ in 0..a.repeats {
        let t = Instant::now();
        best = Some(sweep_on_the_fly(&array, &grid, &h, &link)?);
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let b = best.expect("repeats > 0");
    println!(
        "sweep {} codewords x {} antennas, {} thread(s): median {:.3} s, min {:.3} s (best flat {}, se {:.4})",
        grid.dims.len(),
        array.num_antennas(),
        rayon::current_num_threads(),
        times[times.len() / 2],
        times[0],
        b.flat,
        b.se
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new().num_threads(1).build_global().context("configuring the thread pool")?;
    }
    match &cli.cmd {
        Cmd::Scene { op: SceneOp::Gen(a) } => scene_gen(cli.seed, a)?,
        Cmd::Dataset { op: DatasetOp::Gen(a) } => dataset_gen(cli.seed, a)?,
        Cmd::Sweep(a) => sweep(a)?,
        Cmd::Train(a) => train_cmd(cli.seed, a)?,
        Cmd::Eval(a) => eval_cmd(a)?,
        Cmd::Gradcheck => return gradcheck(cli.seed),
        Cmd::BenchSweep(a) => bench_sweep(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let res = run(cli);
    let _ = io::stdout().flush();
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
