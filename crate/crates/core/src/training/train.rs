//! Training loop and repeated experiments.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::split::check_no_leakage;
use crate::data::transform::{augment, normalize_max, AugmentMode};
use crate::data::{Split, VolumeRecord};
use crate::error::{Error, Result};
use crate::layers::optim::{adam_step, OptimState};
use crate::model::{count_parameters, parameter_imbalance, Mode, Model, ModelSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::metrics::{balanced_accuracy, mean_std, Decision, EarlyStopping};
use crate::training::report::{EpochLog, ExperimentReport, ModelReport, RunEntry};

/// Largest accepted relative parameter-count difference between paired models.
pub const BALANCE_TOLERANCE: f64 = 0.10;

const INIT_STREAM: u64 = 10;
const SHUFFLE_STREAM: u64 = 11;
const DROPOUT_STREAM: u64 = 12;
const AUGMENT_STREAM: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub repeats: usize,
    pub augment: AugmentMode,
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 8,
            max_epochs: 100,
            patience: 8,
            seed: 0,
            repeats: 10,
            augment: AugmentMode::None,
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("train.lr must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("train.weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("train.max_epochs must be at least 1");
        }
        if self.patience == 0 {
            return bad("train.patience must be at least 1");
        }
        if self.repeats == 0 {
            return bad("train.repeats must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(C, D, H, W)`.
    pub volume: Tensor,
    pub label: u8,
}

/// Split-assigned samples. The test split is only reachable through
/// [`SplitData::sealed_test`].
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    test: Vec<Sample>,
}

impl SplitData {
    /// Groups records by split, optionally max-normalizing each volume.
    pub fn from_records(records: &[VolumeRecord], normalize: bool) -> Result<Self> {
        check_no_leakage(records)?;
        let mut parts: [Vec<Sample>; 3] = Default::default();
        for r in records {
            let split = r
                .split
                .ok_or_else(|| Error::Data(format!("record of subject `{}` has no split", r.subject)))?;
            let volume = if normalize {
                normalize_max(&r.volume).0
            } else {
                r.volume.clone()
            };
            let idx = match split {
                Split::Train => 0,
                Split::Val => 1,
                Split::Test => 2,
            };
            parts[idx].push(Sample { volume, label: r.label });
        }
        let [train, val, test] = parts;
        for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
            if part.is_empty() {
                return Err(Error::Data(format!("{name} split is empty")));
            }
        }
        Ok(SplitData { train, val, test })
    }

    pub fn test_len(&self) -> usize {
        self.test.len()
    }

    pub fn sealed_test(&self) -> SealedSplit<'_> {
        SealedSplit {
            samples: &self.test,
            reads: Cell::new(0),
        }
    }
}

/// A split that may be opened exactly once.
#[derive(Debug)]
pub struct SealedSplit<'a> {
    samples: &'a [Sample],
    reads: Cell<usize>,
}

impl<'a> SealedSplit<'a> {
    pub fn open(&self) -> Result<&'a [Sample]> {
        if self.reads.get() > 0 {
            return Err(Error::Data("test split already read in this run".into()));
        }
        self.reads.set(self.reads.get() + 1);
        Ok(self.samples)
    }

    pub fn reads(&self) -> usize {
        self.reads.get()
    }
}

fn stack(volumes: &[Tensor]) -> Result<Tensor> {
    let shape = volumes[0].shape().to_vec();
    let mut data = Vec::with_capacity(volumes.len() * volumes[0].numel());
    for v in volumes {
        if v.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "batch",
                expected: shape,
                actual: v.shape().to_vec(),
            });
        }
        data.extend_from_slice(v.data());
    }
    let mut full = vec![volumes.len()];
    full.extend(shape);
    Tensor::new(full, data)
}

/// Mean loss and balanced accuracy of `model` on `samples`, without dropout.
pub fn evaluate(model: &Model, samples: &[Sample], batch_size: usize) -> Result<(f64, f64)> {
    let mut probs = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let x = stack(&chunk.iter().map(|s| s.volume.clone()).collect::<Vec<_>>())?;
        probs.extend(model.predict(x)?);
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let targets: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    let loss = crate::layers::loss::bce_loss(&probs, &targets)?;
    Ok((loss, balanced_accuracy(&probs, &labels)?))
}

/// Result of [`train_one`]: the log entry and the best-validation model.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub entry: RunEntry,
    pub model: Model,
}

/// Trains a freshly initialized `spec` and scores its best-validation
/// checkpoint on `test`, which is opened once training has ended.
pub fn train_one(
    spec: &ModelSpec,
    data: &SplitData,
    test: &SealedSplit<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.shapes()?;
    cfg.augment.check_model(spec)?;
    let mut model = Model::init(spec.clone(), &mut Rng::stream(seed, INIT_STREAM))?;
    let mut shuffle_rng = Rng::stream(seed, SHUFFLE_STREAM);
    let mut dropout_rng = Rng::stream(seed, DROPOUT_STREAM);
    let mut augment_rng = Rng::stream(seed, AUGMENT_STREAM);
    let mut optim = OptimState::new(cfg.lr, cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.patience)?;
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let volumes = batch
                .iter()
                .map(|&i| augment(&data.train[i].volume, cfg.augment, &mut augment_rng))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<f64> = batch.iter().map(|&i| f64::from(data.train[i].label)).collect();
            let mut g = Graph::new();
            let x = g.constant(stack(&volumes)?);
            let fwd = model.forward(&mut g, x, &mut Mode::Train(&mut dropout_rng))?;
            let loss = g.bce(fwd.prob, &labels)?;
            loss_sum += g.value(loss).data()[0] * batch.len() as f64;
            g.backward(loss)?;
            model.load_grads(&g, &fwd.params)?;
            adam_step(&mut model.parameters_mut(), &mut optim)?;
        }
        let (val_loss, val_bacc) = evaluate(&model, &data.val, cfg.batch_size)?;
        let decision = stopper.update(val_bacc);
        if stopper.improved() {
            best = model.clone();
        }
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            val_loss,
            val_bacc,
        };
        log::debug!("{} seed {seed} {log:?}", spec.name);
        epochs.push(log);
        if decision == Decision::Stop {
            break;
        }
    }

    let test_samples = test.open()?;
    let (test_loss, test_bacc) = evaluate(&best, test_samples, cfg.batch_size)?;
    let entry = RunEntry {
        model: spec.name.clone(),
        seed,
        best_epoch: stopper.best_epoch(),
        stop_epoch: stopper.epoch(),
        best_val_bacc: stopper.best().unwrap_or(f64::NAN),
        test_loss,
        test_bacc,
        test_reads: test.reads(),
        checksum: best.checksum(),
        epochs,
    };
    Ok(TrainOutcome { entry, model: best })
}

/// One side of a paired comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub spec: ModelSpec,
    pub batch_size: usize,
}

/// Trains both arms for `cfg.repeats` paired seeds (`cfg.seed + r`).
///
/// `on_run` sees every finished run with its best model, in order.
pub fn run_experiment(
    baseline: &Arm,
    pif: &Arm,
    data: &SplitData,
    cfg: &TrainConfig,
    mut on_run: impl FnMut(usize, &TrainOutcome) -> Result<()>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    for arm in [baseline, pif] {
        arm.spec.shapes()?;
        cfg.augment.check_model(&arm.spec)?;
    }
    let counts = [count_parameters(&baseline.spec)?, count_parameters(&pif.spec)?];
    let imbalance = parameter_imbalance(counts[0], counts[1]);
    let balanced = imbalance <= BALANCE_TOLERANCE;
    if !balanced {
        log::warn!(
            "parameter counts {} ({}) and {} ({}) differ by {:.1}%, above {:.0}%",
            baseline.spec.name,
            counts[0],
            pif.spec.name,
            counts[1],
            100.0 * imbalance,
            100.0 * BALANCE_TOLERANCE
        );
    }
    let mut runs: [Vec<RunEntry>; 2] = Default::default();
    for repeat in 0..cfg.repeats {
        let seed = cfg.seed + repeat as u64;
        for (side, arm) in [baseline, pif].into_iter().enumerate() {
            let arm_cfg = TrainConfig {
                batch_size: arm.batch_size,
                ..cfg.clone()
            };
            let test = data.sealed_test();
            let outcome = train_one(&arm.spec, data, &test, &arm_cfg, seed)?;
            if test.reads() != 1 {
                return Err(Error::Data(format!("test split read {} times", test.reads())));
            }
            on_run(repeat, &outcome)?;
            runs[side].push(outcome.entry);
        }
    }
    let [b_runs, p_runs] = runs;
    Ok(ExperimentReport {
        baseline: ModelReport::new(&baseline.spec.name, counts[0], baseline.batch_size, b_runs),
        pif: ModelReport::new(&pif.spec.name, counts[1], pif.batch_size, p_runs),
        imbalance,
        balanced,
    })
}

impl ModelReport {
    pub fn new(name: &str, parameters: usize, batch_size: usize, runs: Vec<RunEntry>) -> Self {
        let (mean_bacc, std_bacc) = mean_std(&runs.iter().map(|r| r.test_bacc).collect::<Vec<_>>());
        let (mean_stop, std_stop) = mean_std(&runs.iter().map(|r| r.stop_epoch as f64).collect::<Vec<_>>());
        ModelReport {
            name: name.to_string(),
            parameters,
            batch_size,
            mean_bacc,
            std_bacc,
            mean_stop,
            std_stop,
            runs,
        }
    }
}
