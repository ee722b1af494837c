use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use pifnet::data::synth::{format_sites, parse_sites};
use pifnet::data::{
    generate_dataset, load_dataset, normalize_max, read_volume, split_subjects, write_dataset, write_volume, Split,
    SplitFractions, SynthSpec,
};
use pifnet::lrp::{heatmap as relevance_heatmap, LrpConfig, LrpStart};
use pifnet::model::{count_parameters, parameter_imbalance, Model, ModelSpec};
use pifnet::training::train::BALANCE_TOLERANCE;
use pifnet::training::{evaluate, run_experiment, Arm, SplitData};
use pifnet::Error;

use crate::config::{parse_config, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::image::axial_slices;

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn parse_list<T: std::str::FromStr, const N: usize>(s: &str, what: &str) -> Result<[T; N], String> {
    let v: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("cannot parse {what} `{s}`"))?;
    v.try_into().map_err(|_| format!("{what} needs {N} comma-separated values"))
}

fn parse_extents(s: &str) -> Result<[usize; 3], String> {
    parse_list(s, "extents")
}

fn parse_fractions(s: &str) -> Result<[f64; 3], String> {
    parse_list(s, "split fractions")
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for volumes and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Volume extents `d,h,w`.
    #[arg(long, value_parser = parse_extents, default_value = "32,32,32")]
    pub extents: [usize; 3],
    #[arg(long, default_value_t = 100)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Signal sites `z,y,x,radius,amplitude`, separated by `;`.
    #[arg(long)]
    pub sites: Option<String>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub distractors: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub records_per_subject: usize,
    /// Subject fractions `test,val,train`.
    #[arg(long, value_parser = parse_fractions, default_value = "0.2,0.16,0.64")]
    pub split: [f64; 3],
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let mut spec = SynthSpec {
        extents: a.extents,
        records_per_subject: a.records_per_subject,
        ..SynthSpec::desk(a.n_per_class)
    };
    if let Some(s) = &a.sites {
        spec.sites = parse_sites(s)?;
    }
    spec.noise_sigma = a.noise.unwrap_or(spec.noise_sigma);
    spec.jitter = a.jitter.unwrap_or(spec.jitter);
    spec.distractors = a.distractors.unwrap_or(spec.distractors);
    let fractions = SplitFractions::new(a.split[0], a.split[1], a.split[2])?;
    let mut records = generate_dataset(&spec, a.seed)?;
    split_subjects(&mut records, fractions, a.seed)?;
    create_dir(&a.out)?;
    write_dataset(&records, &a.out)?;
    let [d, h, w] = spec.extents;
    let mut echo = String::from("# resolved synth settings\n");
    for (k, v) in [
        ("extents", format!("{d},{h},{w}")),
        ("n_per_class", spec.n_per_class.to_string()),
        ("seed", a.seed.to_string()),
        ("sites", format_sites(&spec.sites)),
        ("noise", format!("{:?}", spec.noise_sigma)),
        ("jitter", format!("{:?}", spec.jitter)),
        ("distractors", spec.distractors.to_string()),
        ("records_per_subject", spec.records_per_subject.to_string()),
        ("split", format!("{:?},{:?},{:?}", a.split[0], a.split[1], a.split[2])),
    ] {
        writeln!(echo, "{k} = {v}").unwrap();
    }
    write_file(&a.out.join("synth.conf"), echo)?;
    log::info!("wrote {} volumes to {}", records.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.repeats`.
    #[arg(long)]
    pub repeats: Option<usize>,
}

fn read_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(parse_config(&text)?)
}

fn check_input(spec: &ModelSpec, volume_shape: &[usize]) -> CliResult<()> {
    spec.shapes()?;
    if volume_shape != spec.input {
        return Err(Error::ShapeMismatch {
            op: "model input",
            expected: spec.input.to_vec(),
            actual: volume_shape.to_vec(),
        }
        .into());
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = read_config(&a.config)?;
    if let Some(r) = a.repeats {
        cfg.train.repeats = r;
        cfg.train.validate()?;
    }
    let records = load_dataset(&a.data)?;
    let data = SplitData::from_records(&records, cfg.train.normalize)?;
    for spec in [&cfg.baseline, &cfg.pif] {
        check_input(spec, data.train[0].volume.shape())?;
        cfg.train.augment.check_model(spec)?;
    }
    create_dir(&a.out)?;
    write_file(&a.out.join("config.resolved"), cfg.resolved())?;
    let baseline = Arm {
        spec: cfg.baseline.clone(),
        batch_size: cfg.baseline_batch,
    };
    let pif = Arm {
        spec: cfg.pif.clone(),
        batch_size: cfg.pif_batch,
    };
    let out = a.out.clone();
    let report = run_experiment(&baseline, &pif, &data, &cfg.train, |repeat, outcome| {
        let dir = out.join(format!("repeat-{repeat:02}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let name = &outcome.entry.model;
        outcome.model.save(&dir.join(format!("{name}.ckpt.json")))?;
        let run = serde_json::to_string_pretty(&outcome.entry)?;
        let path = dir.join(format!("{name}.run.json"));
        fs::write(&path, run).map_err(|e| Error::io(&path, e))?;
        log::info!(
            "repeat {repeat} {name}: stop epoch {}, test balanced accuracy {:.3}",
            outcome.entry.stop_epoch,
            outcome.entry.test_bacc
        );
        Ok(())
    })?;
    let table = report.table();
    print!("{table}");
    write_file(&a.out.join("report.txt"), &table)?;
    write_file(&a.out.join("runs.tsv"), report.tsv())?;
    write_file(
        &a.out.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(Error::from)?,
    )?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Skip max-intensity normalization.
    #[arg(long)]
    pub no_normalize: bool,
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let model = Model::load(&a.model)?;
    let records = load_dataset(&a.data)?;
    let data = SplitData::from_records(&records, !a.no_normalize)?;
    check_input(model.spec(), data.train[0].volume.shape())?;
    if a.batch_size == 0 {
        return Err(Error::Config("--batch-size must be at least 1".into()).into());
    }
    let test = data.sealed_test();
    let samples = match a.split {
        Split::Train => &data.train[..],
        Split::Val => &data.val[..],
        Split::Test => test.open()?,
    };
    let (loss, bacc) = evaluate(&model, samples, a.batch_size)?;
    println!(
        "{} on {} ({} volumes): loss {loss:.6}, balanced accuracy {:.2}%",
        model.spec().name,
        a.split,
        samples.len(),
        100.0 * bacc
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input volume (`.pifv`).
    #[arg(long)]
    pub input: PathBuf,
    /// `output`, `<layer>:<filter>`, `pif:<filter>` or `<layer>:patch<p>:filter<f>`.
    #[arg(long, default_value = "output")]
    pub start: LrpStart,
    #[arg(long, default_value_t = 5.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 4.0)]
    pub beta: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip max-intensity normalization of the input.
    #[arg(long)]
    pub no_normalize: bool,
}

pub fn heatmap(a: &HeatmapArgs) -> CliResult<()> {
    let cfg = LrpConfig::new(a.alpha, a.beta)?.with_start(a.start);
    let model = Model::load(&a.model)?;
    let mut volume = read_volume(&a.input)?;
    check_input(model.spec(), volume.shape())?;
    if !a.no_normalize {
        volume = normalize_max(&volume).0;
    }
    let map = relevance_heatmap(&model, &volume, &cfg)?;
    create_dir(&a.out)?;
    let [d, h, w] = map.extents();
    write_volume(&map.volume.clone().reshape(vec![1, d, h, w])?, &a.out.join("relevance.pifv"))?;
    let slices = a.out.join("slices");
    create_dir(&slices)?;
    for (z, img) in axial_slices(&map.volume).into_iter().enumerate() {
        write_file(&slices.join(format!("slice-{z:03}.ppm")), img)?;
    }
    let echo = format!(
        "# resolved heatmap settings\nmodel = {}\nmodel.checksum = {}\ninput = {}\nstart = {}\nalpha = {:?}\nbeta = {:?}\nnormalize = {}\n",
        a.model.display(),
        map.model_checksum,
        a.input.display(),
        map.start,
        map.alpha,
        map.beta,
        !a.no_normalize
    );
    write_file(&a.out.join("heatmap.conf"), echo)?;
    println!(
        "relevance total {:.6} over {d}x{h}x{w} voxels; {d} slices in {}",
        map.volume.sum(),
        slices.display()
    );
    Ok(())
}

fn layer_table(spec: &ModelSpec) -> CliResult<String> {
    let mut out = String::new();
    writeln!(out, "{} (input {:?})", spec.name, spec.input).unwrap();
    for c in spec.layer_parameter_counts()? {
        let breakdown = c
            .banks
            .map(|(n, per)| format!("  = {n} banks x {per}"))
            .unwrap_or_default();
        writeln!(out, "  {:>2} {:<28} -> {:<20} {:>10}{breakdown}", c.index, c.layer, c.output, c.count).unwrap();
    }
    writeln!(out, "  total {}", count_parameters(spec)?).unwrap();
    Ok(out)
}

pub fn params(config: Option<&Path>) -> CliResult<()> {
    let cfg = match config {
        Some(p) => read_config(p)?,
        None => parse_config("")?,
    };
    let nb = count_parameters(&cfg.baseline)?;
    let np = count_parameters(&cfg.pif)?;
    print!("{}", layer_table(&cfg.baseline)?);
    print!("{}", layer_table(&cfg.pif)?);
    let imbalance = parameter_imbalance(nb, np);
    println!(
        "delta {:+} ({:.1}%): {}",
        np as i64 - nb as i64,
        100.0 * imbalance,
        if imbalance <= BALANCE_TOLERANCE {
            "balanced"
        } else {
            "unbalanced"
        }
    );
    Ok(())
}
