use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use porovox::degrade::{degrade_volume, DegradeSpec, DEFAULT_BASE_ANGLES, DEFAULT_I0};
use porovox::evalkit::{evaluate_volume, EvalOptions, DEFAULT_MAX_EVAL_VOXELS};
use porovox::harness::{
    emit_report, load_roster, run_cross_validation, run_degradation_sweep, run_grid_search, run_two_phase_search,
    ExperimentConfig, GridSpec, PipelineMetric, SearchProtocol,
};
use porovox::labeler::{extract_pore_labels, LabelParams, PoreMask};
use porovox::patchflow::{plan_patches, DEFAULT_PATCH_SIZE};
use porovox::postproc::{optimize_params, suppress_surface, SigmaGrid};
use porovox::scorer::{
    fit_pca_scorer, import_scores, score_volume, scores_to_labels, IdentityScorer, PcaScorer, PcaSpec, ScoreVolume,
};
use porovox::volgrid::{generate_phantom, load_mask, load_volume, save_mask, save_volume, PhantomSpec};
use porovox::{Error, Mask, Result, Volume};

#[derive(Parser)]
#[command(name = "porovox", version, about = "Voxel-wise pore detection in X-CT volumes")]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic volume and its pore ground truth.
    Phantom(PhantomArgs),
    /// Label pores in a volume.
    Label(LabelArgs),
    /// Anomaly scores and reconstruction for a volume.
    Score(ScoreArgs),
    /// Validate and clamp externally produced scores.
    ImportScores(ImportArgs),
    /// Threshold a score volume into connected, size-filtered pore labels.
    Binarize(BinarizeArgs),
    /// Suppress surface responses in a score volume.
    Postproc(PostprocArgs),
    /// ROC and PR curves of a score volume against labels.
    Eval(EvalArgs),
    /// Resimulate a volume at lower exposure and fewer projections.
    Degrade(DegradeArgs),
    /// Cross-validated pipeline run.
    Xval(XvalArgs),
    /// Loss-parameter grid search.
    Grid(GridArgs),
    /// Image-quality degradation sweep.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Phantom description (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Additional random pores.
    #[arg(long, default_value_t = 0)]
    scatter: usize,
    #[arg(long, default_value_t = 2.0)]
    radius_min: f64,
    #[arg(long, default_value_t = 6.0)]
    radius_max: f64,
    #[arg(long, default_value_t = 2.0)]
    gap: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct LabelArgs {
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    min_dims: usize,
    /// Use the plain inner Otsu threshold without the object-threshold cap.
    #[arg(long)]
    uncapped: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ScorerChoice {
    Pca,
    Identity,
}

#[derive(Args)]
struct ScoreArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "pca")]
    scorer: ScorerChoice,
    /// Training volumes for the PCA scorer.
    #[arg(long, num_args = 1..)]
    fit: Vec<PathBuf>,
    /// Pore labels for the training volumes, in the same order; derived with
    /// the labeler when omitted.
    #[arg(long, num_args = 1..)]
    fit_labels: Vec<PathBuf>,
    /// Load a previously fitted PCA model instead of fitting.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long, default_value_t = PcaSpec::default().components)]
    components: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch: usize,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE / 2)]
    stride: usize,
    #[arg(long)]
    out_score: PathBuf,
    #[arg(long)]
    out_recon: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    score: PathBuf,
    #[arg(long)]
    recon: Option<PathBuf>,
    /// Where to write the validated scores; defaults to checking only.
    #[arg(long)]
    out_score: Option<PathBuf>,
    #[arg(long)]
    out_recon: Option<PathBuf>,
}

#[derive(Args)]
struct BinarizeArgs {
    #[arg(long)]
    score: PathBuf,
    /// Voxels with a score strictly above this become pore candidates.
    #[arg(long)]
    threshold: f64,
    #[arg(long, default_value_t = 2)]
    min_dims: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PostprocArgs {
    #[arg(long)]
    score: PathBuf,
    #[arg(long)]
    recon: PathBuf,
    #[arg(long, default_value = "0.5:8:8log")]
    sigma_grid: SigmaGrid,
    /// Fit the parameters inside this mask only.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    score: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Evaluate inside this mask only.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Curve points kept per curve in the CSV.
    #[arg(long, default_value_t = 10_000)]
    max_points: usize,
    /// Evaluate every voxel even for very large volumes.
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DegradeArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    exposure: f64,
    #[arg(long, default_value_t = 1.0)]
    projections: f64,
    #[arg(long, default_value_t = DEFAULT_BASE_ANGLES)]
    angles: usize,
    #[arg(long, default_value_t = DEFAULT_I0)]
    i0: f64,
    #[arg(long, default_value_t = DegradeSpec::default().attenuation)]
    attenuation: f64,
    /// Skip the Poisson resampling.
    #[arg(long)]
    no_noise: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct XvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    /// Grid description (JSON); the default grid when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,0.75,0.5,0.25")]
    exposures: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.333")]
    projections: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_pore_report(pores: &PoreMask, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    w.write_record(["id", "cx", "cy", "cz", "bbox_x", "bbox_y", "bbox_z", "voxels"])?;
    for (id, c) in pores.components.iter().enumerate() {
        let [cx, cy, cz] = c.centroid();
        let [ex, ey, ez] = c.extent();
        w.write_record([
            id.to_string(),
            format!("{cx:?}"),
            format!("{cy:?}"),
            format!("{cz:?}"),
            ex.to_string(),
            ey.to_string(),
            ez.to_string(),
            c.voxel_count().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let mut spec: PhantomSpec = read_json(&a.spec)?;
    if a.scatter > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        spec.scatter_pores(a.scatter, (a.radius_min, a.radius_max), a.gap, &mut rng)?;
    }
    let (v, truth) = generate_phantom::<f32>(&spec)?;
    save_volume(&v, &a.out)?;
    if let Some(t) = a.truth {
        save_mask(&truth, t)?;
    }
    Ok(())
}

fn label(a: LabelArgs) -> Result<()> {
    let v: Volume<f32> = load_volume(&a.input)?;
    let params = LabelParams {
        min_dims: a.min_dims,
        cap_at_object_threshold: !a.uncapped,
    };
    let pores = extract_pore_labels(&v, &params)?;
    save_mask(&pores.mask, &a.out)?;
    if let Some(r) = a.report {
        write_pore_report(&pores, &r)?;
    }
    log::info!("{} pores kept", pores.components.len());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let v: Volume<f32> = load_volume(&a.input)?;
    let grid = plan_patches(v.dims(), a.patch, a.stride)?;
    let sv = match a.scorer {
        ScorerChoice::Identity => score_volume(&IdentityScorer, &v, &grid)?,
        ScorerChoice::Pca => {
            let model: PcaScorer = match &a.model {
                Some(p) => read_json(p)?,
                None => fit_from_files(&a)?,
            };
            if let Some(p) = &a.model_out {
                write_json(&model, p)?;
            }
            score_volume(&model, &v, &grid)?
        }
    };
    sv.save(&a.out_score, a.out_recon.as_deref())
}

fn fit_from_files(a: &ScoreArgs) -> Result<PcaScorer> {
    if a.fit.is_empty() {
        return Err(Error::invalid("the PCA scorer needs --fit volumes or --model"));
    }
    if !a.fit_labels.is_empty() && a.fit_labels.len() != a.fit.len() {
        return Err(Error::invalid("--fit-labels must match --fit one to one"));
    }
    let vols: Vec<Volume<f32>> = a.fit.iter().map(load_volume).collect::<Result<_>>()?;
    let normal: Vec<Mask> = vols
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let pores = match a.fit_labels.get(i) {
                Some(p) => load_mask(p)?,
                None => extract_pore_labels(v, &LabelParams::default())?.mask,
            };
            pores.ensure_same_grid(v)?;
            Ok(pores.not())
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(&Volume<f32>, &Mask)> = vols.iter().zip(&normal).collect();
    let spec = PcaSpec {
        components: a.components,
        ..PcaSpec::default()
    };
    fit_pca_scorer(&pairs, &spec, a.seed)
}

fn import(a: ImportArgs) -> Result<()> {
    let (sv, clamped): (ScoreVolume<f32>, usize) = import_scores(&a.score, a.recon.as_deref())?;
    if let Some(p) = &a.out_score {
        sv.save(p, a.out_recon.as_deref())?;
    }
    println!("{} voxels, {clamped} negative scores clamped", sv.score.len());
    Ok(())
}

fn binarize(a: BinarizeArgs) -> Result<()> {
    let (sv, _): (ScoreVolume<f32>, usize) = import_scores(&a.score, None)?;
    let pores = scores_to_labels(&sv, a.threshold, a.min_dims)?;
    save_mask(&pores.mask, &a.out)?;
    if let Some(r) = a.report {
        write_pore_report(&pores, &r)?;
    }
    Ok(())
}

fn postproc(a: PostprocArgs) -> Result<()> {
    let (sv, _): (ScoreVolume<f32>, usize) = import_scores(&a.score, Some(&a.recon))?;
    let mask = a.mask.as_ref().map(load_mask).transpose()?;
    let fit = optimize_params(&sv, &a.sigma_grid, mask.as_ref())?;
    let out = suppress_surface(&sv, fit.params)?;
    save_volume(&out, &a.out)?;
    if let Some(p) = &a.params_out {
        write_json(&fit, p)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    auc: f64,
    ap: f64,
    positives: usize,
    negatives: usize,
}

fn eval(a: EvalArgs) -> Result<()> {
    let score: Volume<f32> = load_volume(&a.score)?;
    let labels = load_mask(&a.labels)?;
    let mask = a.mask.as_ref().map(load_mask).transpose()?;
    let opts = EvalOptions {
        max_voxels: (!a.exact).then_some(DEFAULT_MAX_EVAL_VOXELS),
        seed: a.seed,
    };
    let curves = evaluate_volume(&score, &labels, mask.as_ref(), opts)?;
    if let Some(p) = &a.out {
        let c = curves.decimated(a.max_points);
        let mut w = csv::Writer::from_path(p).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?;
        w.write_record(["kind", "x", "y", "threshold"])?;
        for (kind, pts) in [("roc", &c.roc), ("pr", &c.pr)] {
            for q in pts.iter() {
                w.write_record([kind.to_string(), format!("{:?}", q.x), format!("{:?}", q.y), format!("{:?}", q.threshold)])?;
            }
        }
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    let summary = EvalSummary {
        auc: curves.auc,
        ap: curves.ap,
        positives: curves.positives,
        negatives: curves.negatives,
    };
    match &a.summary {
        Some(p) => write_json(&summary, p)?,
        None => println!("auc {:?} ap {:?}", summary.auc, summary.ap),
    }
    Ok(())
}

fn degrade(a: DegradeArgs) -> Result<()> {
    let v: Volume<f32> = load_volume(&a.input)?;
    let spec = DegradeSpec {
        exposure_fraction: a.exposure,
        projection_fraction: a.projections,
        base_angles: a.angles,
        i0: a.i0,
        attenuation: a.attenuation,
        noise: !a.no_noise,
        seed: a.seed,
    };
    save_volume(&degrade_volume(&v, &spec)?, &a.out)
}

fn report_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output_dir.as_ref().map(|d| cfg.resolve(d)))
        .unwrap_or_else(|| PathBuf::from("porovox-out"))
}

fn xval(a: XvalArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let vols = load_roster(&cfg)?;
    let r = run_cross_validation(&cfg, &vols)?;
    emit_report(&r, report_dir(&cfg, a.out))
}

fn grid(a: GridArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let spec: GridSpec = match &a.grid {
        Some(p) => read_json(p)?,
        None => GridSpec::default(),
    };
    let vols = load_roster(&cfg)?;
    let m = PipelineMetric::prepare(&cfg, &vols, spec.metric)?;
    let dir = report_dir(&cfg, a.out);
    let hash = cfg.config_hash();
    let metric = |c: &_, f| m.evaluate(c, f);
    match spec.protocol {
        SearchProtocol::TwoPhase => emit_report(&run_two_phase_search(&spec, cfg.folds, &hash, cfg.seed, metric)?, dir),
        SearchProtocol::Full => emit_report(&run_grid_search(&spec, cfg.folds, &hash, cfg.seed, metric)?, dir),
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let vols = load_roster(&cfg)?;
    let r = run_degradation_sweep(&cfg, &vols, &a.exposures, &a.projections)?;
    emit_report(&r, report_dir(&cfg, a.out))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Label(a) => label(a),
        Command::Score(a) => score(a),
        Command::ImportScores(a) => import(a),
        Command::Binarize(a) => binarize(a),
        Command::Postproc(a) => postproc(a),
        Command::Eval(a) => eval(a),
        Command::Degrade(a) => degrade(a),
        Command::Xval(a) => xval(a),
        Command::Grid(a) => grid(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
