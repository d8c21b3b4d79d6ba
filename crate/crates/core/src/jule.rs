//! Joint unsupervised learning: alternate agglomerative merging of CNN
//! features with CNN training on the merged labels, then train once more on
//! the final labels.

use std::fmt;
use std::time::Instant;

use thiserror::Error;

use crate::cluster::{
    agglomerate_graph, build_knn_graph, ClusterError, ClusterPartition, FeatureMatrix, DEFAULT_KS, DEFAULT_SCALE,
};
use crate::net3d::{forward_features, init_params, NetError, NetParams, TrainConfig, Trainer};
use crate::sampler::PatchSet;

#[derive(Debug, Error)]
pub enum JuleError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JuleConfig {
    /// Final cluster count `C`.
    pub final_clusters: usize,
    /// Each period shrinks the cluster count to `ceil(eta * m)`.
    pub eta: f64,
    /// Training epochs after each merge period and in the final pass.
    pub epochs: usize,
    /// Optimizer settings; `epochs` and `seed` here are overridden.
    pub train: TrainConfig,
    pub ks: usize,
    pub scale: f64,
    pub seed: u64,
}

impl Default for JuleConfig {
    fn default() -> Self {
        Self {
            final_clusters: 100,
            eta: 0.9,
            epochs: 2,
            train: TrainConfig::default(),
            ks: DEFAULT_KS,
            scale: DEFAULT_SCALE,
            seed: 0,
        }
    }
}

impl JuleConfig {
    pub fn validate(&self, samples: usize) -> Result<(), JuleError> {
        let bad = |m: String| Err(JuleError::ConfigInvalid(m));
        if self.final_clusters < 1 || self.final_clusters >= samples {
            return bad(format!("C = {} must satisfy 1 <= C < {samples} samples", self.final_clusters));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta = {} must lie in (0, 1)", self.eta));
        }
        if self.epochs == 0 {
            return bad("epochs per period must be >= 1".into());
        }
        if self.ks == 0 {
            return bad("Ks must be >= 1".into());
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad(format!("scale a = {} must be positive", self.scale));
        }
        self.trainer_config().validate()?;
        Ok(())
    }

    fn trainer_config(&self) -> TrainConfig {
        TrainConfig { epochs: self.epochs, seed: self.seed ^ 0x5EED_7A11, ..self.train }
    }
}

/// Cluster count after one period: `max(C, ceil(eta * m))`, always below `m`.
pub fn next_target(m: usize, final_clusters: usize, eta: f64) -> usize {
    // The epsilon keeps products such as 0.9 * 100 from rounding up past 90.
    let shrunk = (eta * m as f64 - 1e-9).ceil().max(0.0) as usize;
    shrunk.min(m.saturating_sub(1)).max(final_clusters)
}

/// Singleton partition, one cluster per sample.
pub fn init_clusters(x: &FeatureMatrix) -> ClusterPartition {
    ClusterPartition::singletons(x.rows())
}

/// Greedy merging on a KNN graph rebuilt from `x` until `target` clusters remain.
pub fn merge_period(
    x: &FeatureMatrix,
    partition: &ClusterPartition,
    target: usize,
    cfg: &JuleConfig,
) -> Result<ClusterPartition, JuleError> {
    let m = partition.clusters();
    if target >= m || target < cfg.final_clusters {
        return Err(ClusterError::BadTarget { target, current: m }.into());
    }
    let g = build_knn_graph(x, cfg.ks, cfg.scale)?;
    Ok(agglomerate_graph(&g, partition, target)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// Merge period followed by training on the merged labels.
    Merge,
    /// Extra training on the final labels.
    Final,
}

/// One training event.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub event: Event,
    /// Cluster count the network was trained on.
    pub m: usize,
    /// Mean of the per-epoch mean losses.
    pub loss: f64,
    pub epoch_losses: Vec<f32>,
    pub wall_s: f64,
}

impl TraceRecord {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.t == other.t && self.event == other.event && self.m == other.m && self.epoch_losses == other.epoch_losses
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let event = match self.event {
            Event::Merge => "merge",
            Event::Final => "final",
        };
        write!(f, "t={} event={} m={} loss={:.6} wall_s={:.3}", self.t, event, self.m, self.loss, self.wall_s)
    }
}

/// Recurrent state between periods.
pub struct JuleState<'p> {
    patches: &'p PatchSet,
    cfg: JuleConfig,
    trainer: Trainer,
    pub t: usize,
    pub params: NetParams,
    pub partition: ClusterPartition,
    /// Features the last merge ran on.
    pub features: Option<FeatureMatrix>,
    pub trace: Vec<TraceRecord>,
    finished: bool,
}

impl<'p> JuleState<'p> {
    pub fn new(patches: &'p PatchSet, cfg: JuleConfig) -> Result<Self, JuleError> {
        cfg.validate(patches.len())?;
        Ok(Self {
            patches,
            trainer: Trainer::new(cfg.trainer_config())?,
            t: 0,
            params: init_params(cfg.seed),
            partition: ClusterPartition::singletons(patches.len()),
            features: None,
            trace: Vec::new(),
            finished: false,
            cfg,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn train(&mut self, event: Event, start: Instant) -> Result<&TraceRecord, JuleError> {
        let epoch_losses = self.trainer.train_epochs(&mut self.params, self.patches, self.partition.labels())?;
        let loss = epoch_losses.iter().map(|&l| f64::from(l)).sum::<f64>() / epoch_losses.len() as f64;
        self.trace.push(TraceRecord {
            t: self.t,
            event,
            m: self.partition.clusters(),
            loss,
            epoch_losses,
            wall_s: start.elapsed().as_secs_f64(),
        });
        self.t += 1;
        Ok(self.trace.last().unwrap())
    }

    /// Runs one training event: a merge period while more than `C` clusters
    /// remain, otherwise the final-label pass. Returns `None` once done.
    pub fn step(&mut self) -> Result<Option<&TraceRecord>, JuleError> {
        if self.finished {
            return Ok(None);
        }
        let start = Instant::now();
        let m = self.partition.clusters();
        if m > self.cfg.final_clusters {
            let x = FeatureMatrix::from_matrix(&forward_features(&self.params, self.patches)?)?;
            let target = next_target(m, self.cfg.final_clusters, self.cfg.eta);
            self.partition = merge_period(&x, &self.partition, target, &self.cfg)?;
            self.features = Some(x);
            self.train(Event::Merge, start).map(Some)
        } else {
            self.finished = true;
            self.train(Event::Final, start).map(Some)
        }
    }
}

/// Output of a complete run.
pub struct JuleOutcome {
    pub params: NetParams,
    pub partition: ClusterPartition,
    pub trace: Vec<TraceRecord>,
}

/// Runs the whole loop, calling `on_event` after every training event.
pub fn run_jule_with(
    patches: &PatchSet,
    cfg: JuleConfig,
    mut on_event: impl FnMut(&TraceRecord),
) -> Result<JuleOutcome, JuleError> {
    let mut state = JuleState::new(patches, cfg)?;
    while let Some(rec) = state.step()? {
        on_event(rec);
    }
    Ok(JuleOutcome { params: state.params, partition: state.partition, trace: state.trace })
}

pub fn run_jule(patches: &PatchSet, cfg: JuleConfig) -> Result<JuleOutcome, JuleError> {
    run_jule_with(patches, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn patches(n: usize, seed: u64) -> PatchSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = 27 * 27 * 27;
        let data = (0..n * len).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        PatchSet::from_raw(27, data, vec![[13, 13, 13]; n])
    }

    #[test]
    fn schedule_arithmetic() {
        assert_eq!(next_target(100, 30, 0.9), 90);
        assert_eq!(next_target(31, 30, 0.9), 30);
        assert_eq!(next_target(5, 1, 0.9), 4);
        assert_eq!(next_target(1000, 30, 0.5), 500);
        let mut m = 1000;
        let mut seq = vec![m];
        while m > 30 {
            m = next_target(m, 30, 0.9);
            seq.push(m);
        }
        assert!(seq.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*seq.last().unwrap(), 30);
    }

    #[test]
    fn config_validation() {
        let ok = JuleConfig { final_clusters: 3, ..Default::default() };
        assert!(ok.validate(10).is_ok());
        assert!(JuleConfig { final_clusters: 10, ..ok }.validate(10).is_err());
        assert!(JuleConfig { final_clusters: 0, ..ok }.validate(10).is_err());
        assert!(JuleConfig { eta: 1.0, ..ok }.validate(10).is_err());
        assert!(JuleConfig { eta: 0.0, ..ok }.validate(10).is_err());
        assert!(JuleConfig { epochs: 0, ..ok }.validate(10).is_err());
    }

    #[test]
    fn init_is_singletons() {
        let x = FeatureMatrix::new(5, 2, vec![0.5; 10]).unwrap();
        let p = init_clusters(&x);
        assert_eq!(p.labels(), &[0, 1, 2, 3, 4]);
        assert_eq!(p, init_clusters(&x));
    }

    #[test]
    fn merge_period_matches_direct_agglomeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = FeatureMatrix::new(30, 3, (0..90).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let cfg = JuleConfig { final_clusters: 5, ks: 4, ..Default::default() };
        let g = build_knn_graph(&x, 4, 1.0).unwrap();
        let start = agglomerate_graph(&g, &ClusterPartition::singletons(30), 20).unwrap();
        let merged = merge_period(&x, &start, 12, &cfg).unwrap();
        assert_eq!(merged, agglomerate_graph(&g, &start, 12).unwrap());
        assert!(merge_period(&x, &start, 20, &cfg).is_err());
        assert!(merge_period(&x, &start, 4, &cfg).is_err());
    }

    #[test]
    fn one_merge_then_final_pass() {
        let p = patches(6, 1);
        let cfg = JuleConfig { final_clusters: 5, eta: 0.5, epochs: 1, ks: 3, seed: 2, ..Default::default() };
        let out = run_jule(&p, cfg).unwrap();
        assert_eq!(out.trace.len(), 2);
        assert_eq!(out.trace[0].event, Event::Merge);
        assert_eq!(out.trace[1].event, Event::Final);
        assert_eq!(out.trace[0].m, 5);
        assert_eq!(out.partition.clusters(), 5);
        assert!(out.trace[1].to_string().starts_with("t=1 event=final m=5 loss="));
    }
}
