//! Training loop: standardize, run a fixed number of epochs of shuffled
//! mini-batch Adam on `MSE + sparsity penalty`, keep the parameters of the
//! epoch with the best validation accuracy, and report.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledExample, SensorRecord, SplitDataset, Standardizer, CLASS_COUNT, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::metrics::{confusion, metric_block, ConfusionMatrix, MetricBlock};
use crate::nn::{self, adam_step, argmax, backward, forward, AdamConfig, AdamState, NetworkParams};
use crate::sparsity::{sparsity_terms, SparsityConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub topology: Vec<usize>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub sparsity: SparsityConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            topology: nn::DEFAULT_TOPOLOGY.to_vec(),
            adam: AdamConfig::default(),
            batch_size: 64,
            max_epochs: 15,
            seed: 42,
            sparsity: SparsityConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topology.len() < 2
            || self.topology[0] != FEATURE_COUNT
            || self.topology[self.topology.len() - 1] != CLASS_COUNT
            || self.topology.contains(&0)
        {
            return Err(Error::Config(format!(
                "topology must start at {FEATURE_COUNT} and end at {CLASS_COUNT}, got {:?}",
                self.topology
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.adam.validate()?;
        self.sparsity.validate()?;
        self.sparsity.penalized_layers(self.topology.len() - 2)?;
        Ok(())
    }
}

/// Metrics of one evaluated partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricBlock,
    pub confusion: ConfusionMatrix,
    /// Mean squared error between raw outputs and one-hot targets.
    pub one_hot_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_size: usize,
    pub test_size: usize,
    pub split_seed: u64,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub j_total: Vec<f64>,
    pub mse: Vec<f64>,
    /// 1-based epoch with the highest validation accuracy (earliest on ties).
    pub best_epoch: usize,
    pub test: Evaluation,
    pub notes: Vec<String>,
    /// Reproducibility lines appended by whoever runs the pipeline.
    #[serde(default)]
    pub log: Vec<String>,
    /// Not serialized, so report files stay byte-reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.val_accuracy.len()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad report: {e}")))
    }

    /// `epoch,train_acc,val_acc,mse` per epoch.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,train_acc,val_acc,mse\n");
        for i in 0..self.epochs_run() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                self.train_accuracy[i],
                self.val_accuracy[i],
                self.mse[i]
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub standardizer: Standardizer,
    pub report: TrainReport,
}

fn one_hot(class: usize) -> [f64; CLASS_COUNT] {
    let mut t = [0.0; CLASS_COUNT];
    t[class] = 1.0;
    t
}

pub fn train(cfg: &TrainConfig, data: &SplitDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Empty("train and test partitions must be non-empty".into()));
    }
    let started = Instant::now();
    let exec = Execution::Parallel;
    let standardizer = Standardizer::fit(&data.train)?;
    let train_set: Vec<LabeledExample> = data.train.iter().map(|e| standardizer.apply(e)).collect();
    let test_set: Vec<LabeledExample> = data.test.iter().map(|e| standardizer.apply(e)).collect();
    for e in train_set.iter().chain(&test_set) {
        if e.features.len() != FEATURE_COUNT {
            return Err(Error::dim("example feature count", FEATURE_COUNT, e.features.len()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetworkParams::for_training(&cfg.topology, &mut rng)?;
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut train_accuracy = Vec::with_capacity(cfg.max_epochs);
    let mut val_accuracy = Vec::with_capacity(cfg.max_epochs);
    let mut j_total = Vec::with_capacity(cfg.max_epochs);
    let mut mse = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(usize, f64, NetworkParams)> = None;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut j_sum, mut mse_sum) = (0.0, 0.0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut x = Matrix::zeros(chunk.len(), FEATURE_COUNT);
            let mut y = Matrix::zeros(chunk.len(), CLASS_COUNT);
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).copy_from_slice(&train_set[i].features);
                y.row_mut(r).copy_from_slice(&one_hot(train_set[i].class_label));
            }
            let trace = forward(&params, &x)?;
            let terms = sparsity_terms(&trace, &cfg.sparsity)?;
            let batch_mse = nn::mse_loss(trace.output(), &y)?;
            let batch_j = batch_mse + terms.penalty;
            if !batch_j.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    message: format!("loss is {batch_j}"),
                });
            }
            let grads = backward(&trace, &params, &y, Some(&terms.grads))?;
            adam_step(&mut params, &grads, &mut adam).map_err(|e| Error::Diverged {
                epoch,
                batch: b,
                message: e.to_string(),
            })?;
            let w = chunk.len() as f64;
            j_sum += batch_j * w;
            mse_sum += batch_mse * w;
        }
        let n = train_set.len() as f64;
        j_total.push(j_sum / n);
        mse.push(mse_sum / n);

        let train_eval = evaluate_standardized(&params, &train_set, exec)?;
        let val_eval = evaluate_standardized(&params, &test_set, exec)?;
        train_accuracy.push(train_eval.metrics.accuracy);
        val_accuracy.push(val_eval.metrics.accuracy);
        if best.as_ref().is_none_or(|(_, acc, _)| val_eval.metrics.accuracy > *acc) {
            best = Some((epoch, val_eval.metrics.accuracy, params.clone()));
        }
    }

    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    let test = evaluate_standardized(&best_params, &test_set, exec)?;
    let report = TrainReport {
        config: cfg.clone(),
        train_size: data.train.len(),
        test_size: data.test.len(),
        split_seed: data.seed,
        train_accuracy,
        val_accuracy,
        j_total,
        mse,
        best_epoch,
        test,
        notes: vec![
            "validation accuracy is measured on the test partition".into(),
            "metrics.mse is the misclassification rate; one_hot_mse is the output MSE".into(),
        ],
        log: Vec::new(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        params: best_params,
        standardizer,
        report,
    })
}

/// Evaluates already-standardized examples.
pub fn evaluate_standardized(
    params: &NetworkParams,
    examples: &[LabeledExample],
    exec: Execution,
) -> Result<Evaluation> {
    let outputs = exec.try_map(examples, |e| params.predict_row(&e.features))?;
    summarize(examples, &outputs)
}

/// Evaluates raw examples through the standardizer.
pub fn evaluate(
    params: &NetworkParams,
    standardizer: &Standardizer,
    examples: &[LabeledExample],
    exec: Execution,
) -> Result<Evaluation> {
    let outputs = exec.try_map(examples, |e| params.predict_row(&standardizer.apply_row(&e.features)))?;
    summarize(examples, &outputs)
}

fn summarize(examples: &[LabeledExample], outputs: &[Vec<f64>]) -> Result<Evaluation> {
    let truth: Vec<usize> = examples.iter().map(|e| e.class_label).collect();
    let predicted: Vec<usize> = outputs.iter().map(|o| argmax(o)).collect();
    let cm = confusion(&truth, &predicted)?;
    let mut sq = 0.0;
    for (o, &t) in outputs.iter().zip(&truth) {
        for (v, target) in o.iter().zip(one_hot(t)) {
            sq += (v - target) * (v - target);
        }
    }
    Ok(Evaluation {
        metrics: metric_block(&cm)?,
        confusion: cm,
        one_hot_mse: sq / (outputs.len() * CLASS_COUNT) as f64,
    })
}

/// Argmax class of a raw record; ties go to the lowest class.
pub fn predict(params: &NetworkParams, standardizer: &Standardizer, record: &SensorRecord) -> Result<usize> {
    let out = params.predict_row(&standardizer.apply_row(&record.features()))?;
    Ok(argmax(&out))
}

/// Per hidden layer, the mean activation of every unit over `examples` (raw,
/// standardized on the fly).
pub fn hidden_activation_means(
    params: &NetworkParams,
    standardizer: &Standardizer,
    examples: &[LabeledExample],
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    if examples.is_empty() {
        return Err(Error::Empty("hidden activation over no examples".into()));
    }
    let traces = exec.try_map(examples, |e| {
        let x = Matrix::from_vec(1, e.features.len(), standardizer.apply_row(&e.features))?;
        forward(params, &x)
    })?;
    let hidden = params.hidden_layer_count();
    let mut sums: Vec<Vec<f64>> = params.layers()[..hidden]
        .iter()
        .map(|l| vec![0.0; l.fan_out()])
        .collect();
    for tr in &traces {
        for (h, s) in sums.iter_mut().enumerate() {
            for (acc, v) in s.iter_mut().zip(tr.post[h].row(0)) {
                *acc += v;
            }
        }
    }
    let n = examples.len() as f64;
    for s in &mut sums {
        for v in s.iter_mut() {
            *v /= n;
        }
    }
    Ok(sums)
}

/// Mean over all hidden units of their average activation.
pub fn mean_hidden_activation(
    params: &NetworkParams,
    standardizer: &Standardizer,
    examples: &[LabeledExample],
    exec: Execution,
) -> Result<f64> {
    let means = hidden_activation_means(params, standardizer, examples, exec)?;
    let units: usize = means.iter().map(Vec::len).sum();
    Ok(means.iter().flatten().sum::<f64>() / units as f64)
}
