//! Sensor records, HFR class labels, feature standardization, the 3:1 split
//! and a seeded synthetic stand-in for bench data.
//!
//! The ten network inputs are the ten non-target columns of the sensor log,
//! in file order: `t, Power, CurrD, StaVol, Var, WaterTempOut, H2PressIn,
//! HCPPower, AirPressIn, AirFlow`. `HFR` (mΩ) is the target.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_COUNT: usize = 10;
pub const CLASS_COUNT: usize = 3;

/// Canonical CSV header, target last.
pub const COLUMNS: [&str; FEATURE_COUNT + 1] = [
    "t",
    "Power",
    "CurrD",
    "StaVol",
    "Var",
    "WaterTempOut",
    "H2PressIn",
    "HCPPower",
    "AirPressIn",
    "AirFlow",
    "HFR",
];

/// Class 0 below this HFR (mΩ).
pub const HFR_LOW: f64 = 89.0;
/// Class 2 at or above this HFR (mΩ).
pub const HFR_HIGH: f64 = 91.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorRecord {
    /// s
    pub t: f64,
    /// kW
    pub power: f64,
    /// mA/cm²
    pub current_density: f64,
    /// V
    pub stack_voltage: f64,
    pub cell_voltage_variance: f64,
    /// °C
    pub water_temp_out: f64,
    /// kPaG
    pub h2_pressure_in: f64,
    pub hcp_power: f64,
    /// kPaG
    pub air_pressure_in: f64,
    /// g/s
    pub air_flow: f64,
    /// mΩ
    pub hfr: f64,
}

impl SensorRecord {
    pub fn from_values(v: [f64; FEATURE_COUNT + 1]) -> Self {
        Self {
            t: v[0],
            power: v[1],
            current_density: v[2],
            stack_voltage: v[3],
            cell_voltage_variance: v[4],
            water_temp_out: v[5],
            h2_pressure_in: v[6],
            hcp_power: v[7],
            air_pressure_in: v[8],
            air_flow: v[9],
            hfr: v[10],
        }
    }

    pub fn features(&self) -> [f64; FEATURE_COUNT] {
        [
            self.t,
            self.power,
            self.current_density,
            self.stack_voltage,
            self.cell_voltage_variance,
            self.water_temp_out,
            self.h2_pressure_in,
            self.hcp_power,
            self.air_pressure_in,
            self.air_flow,
        ]
    }

    pub fn values(&self) -> [f64; FEATURE_COUNT + 1] {
        let f = self.features();
        let mut out = [0.0; FEATURE_COUNT + 1];
        out[..FEATURE_COUNT].copy_from_slice(&f);
        out[FEATURE_COUNT] = self.hfr;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub class_label: usize,
}

pub fn classify_hfr(hfr: f64) -> usize {
    if hfr < HFR_LOW {
        0
    } else if hfr < HFR_HIGH {
        1
    } else {
        2
    }
}

pub fn label(record: &SensorRecord) -> LabeledExample {
    LabeledExample {
        features: record.features().to_vec(),
        class_label: classify_hfr(record.hfr),
    }
}

pub fn label_all(records: &[SensorRecord]) -> Vec<LabeledExample> {
    records.iter().map(label).collect()
}

/// Per-class counts of a labelled set.
pub fn class_counts(examples: &[LabeledExample]) -> [usize; CLASS_COUNT] {
    let mut counts = [0; CLASS_COUNT];
    for e in examples {
        counts[e.class_label] += 1;
    }
    counts
}

pub fn parse_csv(path: impl AsRef<Path>) -> Result<Vec<SensorRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv_reader(file)
}

fn data_err(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Data {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Parses sensor CSV. Rows are numbered from 1 (the first data row); the
/// header is row 0.
pub fn parse_csv_reader<R: Read>(reader: R) -> Result<Vec<SensorRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = rdr.records();

    let header = match rows.next() {
        None => return Err(data_err(0, "", "empty file, expected a header row")),
        Some(h) => h.map_err(|e| data_err(0, "", e.to_string()))?,
    };
    let mut order = [usize::MAX; FEATURE_COUNT + 1];
    for (pos, name) in header.iter().enumerate() {
        let idx = COLUMNS
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| data_err(0, name, "unknown column"))?;
        if order[idx] != usize::MAX {
            return Err(data_err(0, name, "duplicate column"));
        }
        order[idx] = pos;
    }
    if let Some(missing) = order.iter().position(|&p| p == usize::MAX) {
        return Err(data_err(0, COLUMNS[missing], "missing column"));
    }

    let mut out = Vec::new();
    for (i, rec) in rows.enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| data_err(row, "", e.to_string()))?;
        if rec.len() != COLUMNS.len() {
            return Err(data_err(
                row,
                "",
                format!("expected {} fields, found {}", COLUMNS.len(), rec.len()),
            ));
        }
        let mut vals = [0.0; FEATURE_COUNT + 1];
        for (c, name) in COLUMNS.iter().enumerate() {
            let cell = &rec[order[c]];
            let v: f64 = cell
                .parse()
                .map_err(|_| data_err(row, name, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(data_err(row, name, "non-finite value"));
            }
            vals[c] = v;
        }
        if vals[FEATURE_COUNT] <= 0.0 {
            return Err(data_err(row, "HFR", "HFR must be positive"));
        }
        out.push(SensorRecord::from_values(vals));
    }
    Ok(out)
}

/// Writes records with the canonical header. Values use the shortest decimal
/// form that parses back to the identical `f64`.
pub fn write_csv_writer<W: Write>(mut w: W, records: &[SensorRecord]) -> std::io::Result<()> {
    writeln!(w, "{}", COLUMNS.join(","))?;
    for r in records {
        let line: Vec<String> = r.values().iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()
}

pub fn write_csv(path: impl AsRef<Path>, records: &[SensorRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_writer(std::io::BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on raw feature rows. Zero-variance columns get `std = 1`.
    pub fn fit_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Empty("cannot fit a standardizer on no rows".into()))?;
        let width = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::dim("standardizer row width", width, r.len()));
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; width];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn fit(train: &[LabeledExample]) -> Result<Self> {
        let rows: Vec<&[f64]> = train.iter().map(|e| e.features.as_slice()).collect();
        Self::fit_rows(&rows)
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, example: &LabeledExample) -> LabeledExample {
        LabeledExample {
            features: self.apply_row(&example.features),
            class_label: example.class_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub seed: u64,
}

/// Size of the training partition for `n` examples: `floor(0.75·n)`.
pub fn train_size(n: usize) -> usize {
    n * 3 / 4
}

/// Seeded uniform permutation, then the first `floor(0.75·N)` go to training.
pub fn split(examples: Vec<LabeledExample>, seed: u64) -> Result<SplitDataset> {
    let n = examples.len();
    if n < 4 {
        return Err(Error::Config(format!("need at least 4 examples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<LabeledExample>> = examples.into_iter().map(Some).collect();
    let mut permuted = order.into_iter().map(|i| slots[i].take().expect("permutation"));
    let n_train = train_size(n);
    let train = permuted.by_ref().take(n_train).collect();
    let test = permuted.collect();
    Ok(SplitDataset { train, test, seed })
}

/// Baseline operating point the synthetic generator perturbs (first sample
/// row of the bench log, feature columns only).
pub const SYNTHETIC_BASELINE: [f64; FEATURE_COUNT] =
    [1.0, 24.2, 222.4, 363.8, 83.0, 68.5, 165.5, 0.44, 145.6, 28.6];

/// Relative half-width of the uniform feature draws.
pub const SYNTHETIC_SPREAD: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    /// Standard deviation of the additive Gaussian HFR noise (mΩ).
    pub noise_sigma: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { noise_sigma: 0.2 }
    }
}

/// Latent standardized value of a feature drawn uniformly on
/// `base·[1 − s, 1 + s]`.
pub fn synthetic_latent(value: f64, base: f64) -> f64 {
    let sd = 2.0 * SYNTHETIC_SPREAD * base / 12f64.sqrt();
    (value - base) / sd
}

/// Noise-free synthetic HFR surface.
pub fn synthetic_hfr_mean(features: &[f64; FEATURE_COUNT]) -> f64 {
    let z = |i: usize| synthetic_latent(features[i], SYNTHETIC_BASELINE[i]);
    let (power, water, h2, air_flow) = (z(1), z(5), z(6), z(9));
    90.0 + 1.3 * (1.2 * power - 0.8 * air_flow).tanh() + 0.7 * (water + 0.5 * h2).tanh()
}

pub fn generate_synthetic(n: usize, seed: u64) -> Result<Vec<SensorRecord>> {
    generate_synthetic_with(n, seed, &SyntheticConfig::default())
}

/// Deterministic per `(n, seed, cfg)`. Each record consumes ten uniform draws
/// (column order) and one normal draw, so the features do not depend on the
/// noise level.
pub fn generate_synthetic_with(n: usize, seed: u64, cfg: &SyntheticConfig) -> Result<Vec<SensorRecord>> {
    if n == 0 {
        return Err(Error::Config("synthetic record count must be >= 1".into()));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::Config(format!("invalid noise sigma {}", cfg.noise_sigma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let records = (0..n)
        .map(|_| {
            let mut f = [0.0; FEATURE_COUNT];
            for (v, base) in f.iter_mut().zip(SYNTHETIC_BASELINE) {
                let lo = base * (1.0 - SYNTHETIC_SPREAD);
                let hi = base * (1.0 + SYNTHETIC_SPREAD);
                *v = rng.random_range(lo..hi);
            }
            let eps: f64 = noise.sample(&mut rng);
            let hfr = (synthetic_hfr_mean(&f) + cfg.noise_sigma * eps).clamp(85.0, 95.0);
            let mut all = [0.0; FEATURE_COUNT + 1];
            all[..FEATURE_COUNT].copy_from_slice(&f);
            all[FEATURE_COUNT] = hfr;
            SensorRecord::from_values(all)
        })
        .collect();
    Ok(records)
}
