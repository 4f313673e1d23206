//! One-vs-rest linear SVM over flattened HATS features, trained with
//! Pegasos-style stochastic subgradient descent, plus the binary model file
//! shared by the float, fixed-point and PE-simulation paths.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::SensorGeometry;
use crate::fixedpoint::time_scale_exponent;
use crate::grid::{GridParams, Kernel};
use crate::hats::FeatureLayout;

const MODEL_MAGIC: &[u8; 4] = b"CWTS";
const MODEL_VERSION: u16 = 1;

/// Per-class scores for one window; `decision` is the arg-max, ties going to
/// the lowest class id.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores {
    pub window_start_us: u64,
    pub scores: Vec<f64>,
    pub decision: usize,
}

impl ClassScores {
    pub fn new(window_start_us: u64, scores: Vec<f64>) -> Self {
        let decision = argmax(&scores);
        ClassScores {
            window_start_us,
            scores,
            decision,
        }
    }
}

pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Grid parameters a model was trained under.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelFingerprint {
    pub geometry: SensorGeometry,
    pub cell_size: u16,
    pub rho: u16,
    pub kernel: Kernel,
    pub tau_us: f64,
    pub delta_t_us: u64,
}

impl ModelFingerprint {
    pub fn new(geometry: SensorGeometry, params: &GridParams) -> Self {
        ModelFingerprint {
            geometry,
            cell_size: params.cell_size,
            rho: params.rho,
            kernel: params.kernel,
            tau_us: params.tau_us,
            delta_t_us: params.delta_t_us,
        }
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            geometry: self.geometry,
            cell_size: self.cell_size,
            rho: self.rho,
        }
    }

    /// Grid parameters matching the fingerprint, reset mode, unbounded memory.
    pub fn grid_params(&self) -> GridParams {
        GridParams {
            cell_size: self.cell_size,
            rho: self.rho,
            delta_t_us: self.delta_t_us,
            tau_us: self.tau_us,
            kernel: self.kernel,
            ..GridParams::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    fingerprint: ModelFingerprint,
    time_scale_exp: i8,
}

impl SvmModel {
    pub fn new(
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
        fingerprint: ModelFingerprint,
    ) -> Result<Self> {
        let time_scale_exp = time_scale_exponent(fingerprint.tau_us);
        let model = SvmModel {
            weights,
            biases,
            fingerprint,
            time_scale_exp,
        };
        model.validate()?;
        Ok(model)
    }

    /// Two-class model from a single decision vector: class 0 when
    /// `<w, x> + b > 0`, expanded to the k = 2 form `[w, -w]`.
    pub fn from_binary(w: Vec<f64>, b: f64, fingerprint: ModelFingerprint) -> Result<Self> {
        let neg = w.iter().map(|v| -v).collect();
        SvmModel::new(vec![w, neg], vec![b, -b], fingerprint)
    }

    fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k < 2 || self.biases.len() != k {
            return Err(Error::Config(format!(
                "model needs >= 2 classes with one bias each ({} weight vectors, {} biases)",
                k,
                self.biases.len()
            )));
        }
        let dim = self.fingerprint.layout().len();
        for (j, w) in self.weights.iter().enumerate() {
            if w.len() != dim {
                return Err(Error::Config(format!(
                    "class {j} weight length {} != 2*L*(2rho+1)^2 = {dim}",
                    w.len()
                )));
            }
        }
        let finite = self
            .weights
            .iter()
            .flatten()
            .chain(&self.biases)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("model contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn fingerprint(&self) -> &ModelFingerprint {
        &self.fingerprint
    }

    /// Power-of-two pre-scale applied to time deltas in the fixed-point kernel.
    pub fn time_scale_exp(&self) -> i8 {
        self.time_scale_exp
    }

    pub fn with_time_scale_exp(mut self, exp: i8) -> Self {
        self.time_scale_exp = exp;
        self
    }

    /// Multiplies every weight and bias by `factor`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::Argument(format!("scale factor {factor} must be positive")));
        }
        let mut m = self.clone();
        m.weights.iter_mut().flatten().for_each(|w| *w *= factor);
        m.biases.iter_mut().for_each(|b| *b *= factor);
        Ok(m)
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.weights
            .iter()
            .flatten()
            .fold(0.0f64, |m, w| m.max(w.abs()))
    }

    /// Refuses use on a stream geometry or grid that differs from training.
    pub fn check_compatible(&self, geometry: SensorGeometry, params: &GridParams) -> Result<()> {
        let fp = &self.fingerprint;
        if fp.geometry != geometry || fp.cell_size != params.cell_size || fp.rho != params.rho {
            return Err(Error::Config(format!(
                "model trained for {}x{} K={} rho={}, used with {}x{} K={} rho={}",
                fp.geometry.width,
                fp.geometry.height,
                fp.cell_size,
                fp.rho,
                geometry.width,
                geometry.height,
                params.cell_size,
                params.rho
            )));
        }
        Ok(())
    }

    pub fn predict(&self, features: &[f64]) -> Result<ClassScores> {
        if features.len() != self.dim() {
            return Err(Error::Config(format!(
                "feature length {} != model dimension {}",
                features.len(),
                self.dim()
            )));
        }
        let scores = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, features) + b)
            .collect();
        Ok(ClassScores::new(0, scores))
    }

    /// Model file: `"CWTS"`, version u16, k u16, M, N, K, ρ as u16, kernel u8
    /// (0 = exponential, 1 = linear), τ f64, Δt u64, time-scale exponent i8,
    /// dimension u32, then k·dim weights and k biases as f64. Little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let fp = &self.fingerprint;
        let mut out = Vec::with_capacity(38 + 8 * (self.num_classes() * (self.dim() + 1)));
        out.extend_from_slice(MODEL_MAGIC);
        for v in [
            MODEL_VERSION,
            self.num_classes() as u16,
            fp.geometry.width,
            fp.geometry.height,
            fp.cell_size,
            fp.rho,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(match fp.kernel {
            Kernel::Exponential => 0,
            Kernel::LinearDecay => 1,
        });
        out.extend_from_slice(&fp.tau_us.to_le_bytes());
        out.extend_from_slice(&fp.delta_t_us.to_le_bytes());
        out.push(self.time_scale_exp as u8);
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.weights.iter().flatten().chain(&self.biases) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "missing CWTS model magic".into(),
            });
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported model version {version}"),
            });
        }
        let k = r.u16()? as usize;
        let (width, height, cell_size, rho) = (r.u16()?, r.u16()?, r.u16()?, r.u16()?);
        let kernel = match r.take(1)?[0] {
            0 => Kernel::Exponential,
            1 => Kernel::LinearDecay,
            other => {
                return Err(Error::Format {
                    offset: r.pos - 1,
                    message: format!("unknown kernel tag {other}"),
                })
            }
        };
        let tau_us = r.f64()?;
        let delta_t_us = r.u64()?;
        let time_scale_exp = r.take(1)?[0] as i8;
        let dim = r.u32()? as usize;
        let geometry = SensorGeometry::new(width, height).map_err(|_| Error::Format {
            offset: 8,
            message: "zero geometry".into(),
        })?;
        let mut weights = Vec::with_capacity(k);
        for _ in 0..k {
            weights.push((0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        let biases = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                message: "trailing bytes after model".into(),
            });
        }
        let fingerprint = ModelFingerprint {
            geometry,
            cell_size,
            rho,
            kernel,
            tau_us,
            delta_t_us,
        };
        let model = SvmModel {
            weights,
            biases,
            fingerprint,
            time_scale_exp,
        };
        model.validate()?;
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos,
                message: "truncated model file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// L2 regularization λ.
    pub lambda: f64,
    pub epochs: usize,
    /// Step size at update `t` is `1 / (λ (t + step_offset))`.
    pub step_offset: f64,
    pub seed: u64,
    /// When set, all weights and biases are scaled by one common factor so
    /// the largest weight magnitude equals this value. Decisions are unchanged;
    /// the fixed-point datapath gets predictable headroom.
    pub max_abs_weight: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-4,
            epochs: 20,
            step_offset: 0.0,
            seed: 0,
            max_abs_weight: Some(0.25),
        }
    }
}

/// Trained model plus the per-epoch regularized hinge objective, averaged
/// over the one-vs-rest problems.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SvmModel,
    pub epoch_objective: Vec<f64>,
}

pub fn train(
    samples: &[(Vec<f64>, u32)],
    config: &TrainConfig,
    fingerprint: ModelFingerprint,
) -> Result<SvmModel> {
    train_with_history(samples, config, fingerprint).map(|o| o.model)
}

pub fn train_with_history(
    samples: &[(Vec<f64>, u32)],
    config: &TrainConfig,
    fingerprint: ModelFingerprint,
) -> Result<TrainOutcome> {
    if !(config.lambda > 0.0) || config.epochs == 0 {
        return Err(Error::Training("need lambda > 0 and epochs >= 1".into()));
    }
    let dim = fingerprint.layout().len();
    for (i, (x, _)) in samples.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::Validation {
                index: i,
                message: format!("feature length {} != {dim}", x.len()),
            });
        }
    }
    let k = samples.iter().map(|(_, y)| *y as usize + 1).max().unwrap_or(0);
    let mut present = vec![false; k];
    samples.iter().for_each(|(_, y)| present[*y as usize] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::Training("training data must contain at least two classes".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let schedule: Vec<Vec<usize>> = (0..config.epochs)
        .map(|_| {
            order.shuffle(&mut rng);
            order.clone()
        })
        .collect();

    let k = k.max(2);
    let mut weights = Vec::with_capacity(k);
    let mut biases = Vec::with_capacity(k);
    let mut objective = vec![0.0; config.epochs];
    for class in 0..k {
        let labels: Vec<f64> = samples
            .iter()
            .map(|(_, y)| if *y as usize == class { 1.0 } else { -1.0 })
            .collect();
        let (w, b, hist) = pegasos(samples, &labels, &schedule, config);
        for (o, h) in objective.iter_mut().zip(hist) {
            *o += h / k as f64;
        }
        weights.push(w);
        biases.push(b);
    }
    let mut model = SvmModel::new(weights, biases, fingerprint)?;
    if let Some(target) = config.max_abs_weight {
        let max = model.max_abs_weight();
        if max > 0.0 {
            model = model.rescaled(target / max)?;
        }
    }
    Ok(TrainOutcome {
        model,
        epoch_objective: objective,
    })
}

/// Binary Pegasos with the bias as an extra constant feature. The weight
/// vector is kept as `scale * v` so the shrink step is O(1).
fn pegasos(
    samples: &[(Vec<f64>, u32)],
    labels: &[f64],
    schedule: &[Vec<usize>],
    config: &TrainConfig,
) -> (Vec<f64>, f64, Vec<f64>) {
    let dim = samples[0].0.len();
    let lambda = config.lambda;
    let mut v = vec![0.0; dim];
    let mut vb = 0.0;
    let mut scale = 1.0;
    let mut t = 0usize;
    let mut history = Vec::with_capacity(schedule.len());

    for epoch in schedule {
        for &i in epoch {
            t += 1;
            let eta = 1.0 / (lambda * (t as f64 + config.step_offset));
            let (x, y) = (&samples[i].0, labels[i]);
            let margin = y * scale * (dot(&v, x) + vb);
            let shrink = 1.0 - eta * lambda;
            if shrink <= 0.0 {
                v.iter_mut().for_each(|w| *w = 0.0);
                vb = 0.0;
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            if margin < 1.0 {
                let step = eta * y / scale;
                v.iter_mut().zip(x).for_each(|(w, xi)| *w += step * xi);
                vb += step;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                vb *= scale;
                scale = 1.0;
            }
        }
        let w: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let b = vb * scale;
        let hinge: f64 = samples
            .iter()
            .zip(labels)
            .map(|((x, _), y)| (1.0 - y * (dot(&w, x) + b)).max(0.0))
            .sum::<f64>()
            / samples.len() as f64;
        let norm2 = dot(&w, &w) + b * b;
        history.push(0.5 * lambda * norm2 + hinge);
    }
    let w = v.iter().map(|x| x * scale).collect();
    (w, vb * scale, history)
}

/// Fraction of samples whose predicted class equals the label.
pub fn accuracy(model: &SvmModel, samples: &[(Vec<f64>, u32)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Argument("accuracy of an empty set".into()));
    }
    let mut correct = 0;
    for (x, y) in samples {
        if model.predict(x)?.decision == *y as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
