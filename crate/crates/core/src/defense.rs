//! Robust aggregation baselines and the vaccine-based update filter.
//!
//! The baselines (coordinate-wise median, trimmed mean, trust-weighted
//! aggregation against a server update) operate on the raw parameter
//! vectors. The vaccine filter instead distills pseudo-malicious updates at
//! the fusion center each round, fixes them as cluster centroids, clusters
//! the incoming updates around them, and keeps only the cluster that
//! contains no vaccine. Updates can be clustered by their parameter delta
//! or by per-channel validation loss/accuracy on the trusted dataset.

use serde::{Deserialize, Serialize};

use crate::attacks::{poison_labels, AttackKind, AttackSpec};
use crate::error::{Error, Result};
use crate::fl::ClientUpdate;
use crate::model::{self, ArchSpec, ParamVector, TrainConfig, TrainExample};
use crate::rng::{self, Rng64};
use crate::signal::{features, FeatureMode, SpectrumExample};

// ── Configuration ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    None,
    Median,
    TrMean,
    FlTrust,
    SsVax,
}

impl std::str::FromStr for DefenseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DefenseKind::None),
            "median" => Ok(DefenseKind::Median),
            "trmean" => Ok(DefenseKind::TrMean),
            "fltrust" => Ok(DefenseKind::FlTrust),
            "ssvax" => Ok(DefenseKind::SsVax),
            other => Err(Error::Config(format!("unknown defense kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DefenseKind::None => "none",
            DefenseKind::Median => "median",
            DefenseKind::TrMean => "trmean",
            DefenseKind::FlTrust => "fltrust",
            DefenseKind::SsVax => "ssvax",
        };
        write!(f, "{s}")
    }
}

/// Feature space for the vaccine filter's clustering step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMetric {
    /// Parameter delta from the current global model.
    ParamsDelta,
    /// Per-channel cross-entropy loss on the trusted dataset.
    Lpc,
    /// Per-channel accuracy on the trusted dataset.
    Apc,
}

impl std::str::FromStr for ClusterMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "params_delta" => Ok(ClusterMetric::ParamsDelta),
            "lpc" => Ok(ClusterMetric::Lpc),
            "apc" => Ok(ClusterMetric::Apc),
            other => Err(Error::Config(format!("unknown cluster metric `{other}`"))),
        }
    }
}

impl std::fmt::Display for ClusterMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ClusterMetric::ParamsDelta => "params_delta",
            ClusterMetric::Lpc => "lpc",
            ClusterMetric::Apc => "apc",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    /// Assumed malicious count trimmed from each side by `trmean`.
    pub trmean_trim: usize,
    pub cluster_metric: ClusterMetric,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            kind: DefenseKind::None,
            trmean_trim: 1,
            cluster_metric: ClusterMetric::ParamsDelta,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self, num_selected: usize) -> Result<()> {
        if self.kind == DefenseKind::TrMean && 2 * self.trmean_trim >= num_selected {
            return Err(Error::Config(format!(
                "trmean_trim {} too large for {num_selected} updates",
                self.trmean_trim
            )));
        }
        Ok(())
    }
}

/// Pseudo-attack recipe for vaccine distillation. One vaccine is trained per
/// kind per `per_kind` copy, each for `epochs` supervised epochs on a
/// poisoned copy of the trusted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaccineSpec {
    pub kinds: Vec<AttackKind>,
    pub targeted_channels: Vec<usize>,
    pub per_kind: usize,
    pub epochs: usize,
}

impl VaccineSpec {
    pub fn untargeted(kinds: Vec<AttackKind>, channels: usize) -> Self {
        Self {
            kinds,
            targeted_channels: (0..channels).collect(),
            per_kind: 1,
            epochs: 1,
        }
    }

    pub fn count(&self) -> usize {
        self.kinds.len() * self.per_kind
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::Config("vaccine kinds must be non-empty".into()));
        }
        if self.per_kind == 0 {
            return Err(Error::Config("vaccine per_kind must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("vaccine epochs must be >= 1".into()));
        }
        if self.targeted_channels.is_empty() {
            return Err(Error::Config("vaccine channels must be non-empty".into()));
        }
        if let Some(&bad) = self.targeted_channels.iter().find(|&&c| c >= channels) {
            return Err(Error::Config(format!(
                "vaccine channel {bad} out of range (K = {channels})"
            )));
        }
        Ok(())
    }
}

// ── Robust aggregation baselines ────────────────────────────────────────────

fn check_updates(updates: &[ParamVector]) -> Result<usize> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Argument("aggregation over empty update set".into()))?;
    let len = first.len();
    if updates.iter().any(|u| u.len() != len) {
        return Err(Error::Argument("update length mismatch".into()));
    }
    Ok(len)
}

/// Coordinate-wise median; an even count averages the two central values.
pub fn median_agg(updates: &[ParamVector]) -> Result<ParamVector> {
    let len = check_updates(updates)?;
    let mut out = vec![0.0; len];
    let mut column = vec![0.0; updates.len()];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, u) in updates.iter().enumerate() {
            column[j] = u.values()[i];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = column.len() / 2;
        *o = if column.len() % 2 == 0 {
            (column[mid - 1] + column[mid]) / 2.0
        } else {
            column[mid]
        };
    }
    Ok(ParamVector::new(out))
}

/// Coordinate-wise trimmed mean: drops the `trim` largest and `trim`
/// smallest values per coordinate, then averages the rest.
pub fn trmean_agg(updates: &[ParamVector], trim: usize) -> Result<ParamVector> {
    let len = check_updates(updates)?;
    if 2 * trim >= updates.len() {
        return Err(Error::Argument(format!(
            "cannot trim {trim} from each side of {} updates",
            updates.len()
        )));
    }
    let mut out = vec![0.0; len];
    let mut column = vec![0.0; updates.len()];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, u) in updates.iter().enumerate() {
            column[j] = u.values()[i];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let kept = &column[trim..column.len() - trim];
        *o = kept.iter().sum::<f64>() / kept.len() as f64;
    }
    Ok(ParamVector::new(out))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Trust-weighted aggregation against a server update trained on the
/// trusted dataset. Each client delta gets a trust score of its clipped
/// cosine similarity to the server delta, is rescaled to the server delta's
/// norm, and the trust-weighted mean is applied to the global model. All
/// trust scores zero falls back to the server delta alone; a zero server
/// delta falls back to plain FedAvg.
pub fn fltrust_agg(
    updates: &[ParamVector],
    server_update: &ParamVector,
    global: &ParamVector,
) -> Result<ParamVector> {
    check_updates(updates)?;
    if server_update.len() != global.len() || updates[0].len() != global.len() {
        return Err(Error::Argument("parameter length mismatch".into()));
    }
    let server_delta = server_update.delta_from(global);
    let server_norm = norm(&server_delta);
    if server_norm == 0.0 {
        eprintln!("fltrust: zero server delta, falling back to fedavg");
        return crate::fl::fedavg(updates);
    }
    let mut acc = vec![0.0; global.len()];
    let mut total_trust = 0.0;
    for u in updates {
        let delta = u.delta_from(global);
        let n = norm(&delta);
        let trust = if n == 0.0 {
            0.0
        } else {
            (dot(&delta, &server_delta) / (n * server_norm)).max(0.0)
        };
        if trust > 0.0 {
            let rescale = server_norm / n;
            for (a, d) in acc.iter_mut().zip(&delta) {
                *a += trust * rescale * d;
            }
        }
        total_trust += trust;
    }
    let mut out = global.values().to_vec();
    if total_trust == 0.0 {
        for (o, d) in out.iter_mut().zip(&server_delta) {
            *o += d;
        }
    } else {
        for (o, a) in out.iter_mut().zip(&acc) {
            *o += a / total_trust;
        }
    }
    Ok(ParamVector::new(out))
}

// ── Vaccine distillation ────────────────────────────────────────────────────

/// Trains one pseudo-malicious update per vaccine from the current global
/// model: the trusted dataset's labels are poisoned with the pseudo-attack,
/// then `spec.epochs` supervised epochs run on the poisoned copy. The
/// per-vaccine streams are keyed by `(seed, vaccine index)`.
pub fn distill_vaccines(
    arch: &ArchSpec,
    global: &ParamVector,
    labeled: &[SpectrumExample],
    mode: FeatureMode,
    spec: &VaccineSpec,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<ParamVector>> {
    if labeled.is_empty() {
        return Err(Error::Argument("empty trusted dataset".into()));
    }
    let mut out = Vec::with_capacity(spec.count());
    let expanded: Vec<AttackKind> = spec
        .kinds
        .iter()
        .flat_map(|&k| std::iter::repeat_n(k, spec.per_kind))
        .collect();
    for (j, kind) in expanded.into_iter().enumerate() {
        let attack = AttackSpec {
            kind,
            targeted_channels: spec.targeted_channels.clone(),
            malicious_ratio: 1.0,
            seed: rng::derive_seed(seed, &[rng::keys::VACCINE, j as u64]),
        };
        let mut label_rng = Rng64::from_keys(attack.seed, &[rng::keys::ATTACK_STREAM]);
        let poisoned: Vec<TrainExample> = labeled
            .iter()
            .map(|ex| TrainExample {
                features: features(ex, mode),
                labels: poison_labels(&ex.labels, &attack, &mut label_rng)
                    .bits()
                    .to_vec(),
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate,
            batch_size,
            epochs: spec.epochs,
            seed: rng::derive_seed(seed, &[rng::keys::VACCINE, j as u64, 1]),
        };
        out.push(model::sgd_epochs(arch, global, &poisoned, &cfg)?);
    }
    Ok(out)
}

// ── Fixed-centroid k-means ──────────────────────────────────────────────────

/// Outcome of clustering updates around fixed vaccine centroids. Cluster ids
/// `0..fixed_count` belong to the fixed centroids; the free (benign) cluster
/// has id `fixed_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster id per input point.
    pub assignment: Vec<usize>,
    pub benign_cluster_id: usize,
    /// The fixed centroids, bit-identical to the inputs.
    pub fixed_centroids: Vec<Vec<f64>>,
    /// Final position of the free centroid; `None` when its cluster emptied.
    pub free_centroid: Option<Vec<f64>>,
    pub iterations: usize,
}

impl ClusterResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.fixed_centroids.len() + 1];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const KMEANS_MAX_ITERS: usize = 100;

/// Lloyd iteration with `fixed_centroids` pinned in place and one free
/// centroid initialized at the mean of the points. Assignment uses Euclidean
/// distance with ties to the lowest cluster id; iteration stops when the
/// assignment is stable or after 100 passes. An emptied free cluster stops
/// iteration and reports `free_centroid: None`.
pub fn kmeans_fixed(points: &[Vec<f64>], fixed_centroids: &[Vec<f64>]) -> Result<ClusterResult> {
    if points.is_empty() {
        return Err(Error::Argument("kmeans needs at least one point".into()));
    }
    if fixed_centroids.is_empty() {
        return Err(Error::Argument("kmeans needs at least one fixed centroid".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim)
        || fixed_centroids.iter().any(|c| c.len() != dim)
    {
        return Err(Error::Argument("kmeans dimension mismatch".into()));
    }
    let k = fixed_centroids.len();
    let free_id = k;

    let mut free: Vec<f64> = vec![0.0; dim];
    for p in points {
        for (f, v) in free.iter_mut().zip(p) {
            *f += v;
        }
    }
    for f in free.iter_mut() {
        *f /= points.len() as f64;
    }

    let mut assignment = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    let mut free_alive = true;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = squared_distance(p, &fixed_centroids[0]);
            for (c, centroid) in fixed_centroids.iter().enumerate().skip(1) {
                let d = squared_distance(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if free_alive {
                let d = squared_distance(p, &free);
                if d < best_d {
                    best = free_id;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let members: Vec<&Vec<f64>> = points
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == free_id)
            .map(|(p, _)| p)
            .collect();
        if members.is_empty() {
            free_alive = false;
            break;
        }
        free.iter_mut().for_each(|f| *f = 0.0);
        for p in &members {
            for (f, v) in free.iter_mut().zip(p.iter()) {
                *f += v;
            }
        }
        for f in free.iter_mut() {
            *f /= members.len() as f64;
        }
    }

    Ok(ClusterResult {
        assignment,
        benign_cluster_id: free_id,
        fixed_centroids: fixed_centroids.to_vec(),
        free_centroid: free_alive.then_some(free),
        iterations,
    })
}

// ── Vaccine filter ──────────────────────────────────────────────────────────

/// Confusion counts for one filtering round. A true positive is a malicious
/// update that was filtered out; a false negative is one that was kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub round: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fnr: f64,
    pub fpr: f64,
    pub kept_ids: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
}

/// Confusion counts from a clustering outcome and the evaluation-only
/// malicious flags. Rates with empty denominators are 0.
pub fn detection_metrics(
    cluster: &ClusterResult,
    malicious_flags: &[bool],
    round: usize,
    kept_ids: Vec<usize>,
) -> DetectionReport {
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&assigned, &malicious) in cluster.assignment.iter().zip(malicious_flags) {
        let kept = assigned == cluster.benign_cluster_id;
        match (malicious, kept) {
            (true, false) => tp += 1,
            (true, true) => fn_ += 1,
            (false, false) => fp += 1,
            (false, true) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    DetectionReport {
        round,
        tp,
        fp,
        fn_,
        tn,
        fnr: ratio(fn_, fn_ + tp),
        fpr: ratio(fp, fp + tn),
        kept_ids,
        cluster_sizes: cluster.cluster_sizes(),
    }
}

/// Everything the round loop needs from one filtering pass.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    /// Indices into the update slice that survived the filter.
    pub kept: Vec<usize>,
    pub cluster: ClusterResult,
    pub detection: DetectionReport,
}

/// Feature vector of one model under the chosen clustering metric. Deltas
/// are deliberately not length-normalized: near convergence benign deltas
/// shrink toward zero and stay tightly clustered at the origin, while
/// poisoned updates keep a large coherent displacement; dividing by the norm
/// would scatter the benign directions across the unit sphere and erase that
/// separation.
fn metric_features(
    arch: &ArchSpec,
    params: &ParamVector,
    global: &ParamVector,
    metric: ClusterMetric,
    labeled: &[TrainExample],
) -> Result<Vec<f64>> {
    match metric {
        ClusterMetric::ParamsDelta => Ok(params.delta_from(global)),
        ClusterMetric::Lpc => Ok(model::evaluate(arch, params, labeled)?.per_channel_loss),
        ClusterMetric::Apc => Ok(model::evaluate(arch, params, labeled)?.per_channel_accuracy),
    }
}

/// Clusters the incoming updates with the vaccines fixed as centroids and
/// keeps the cluster containing no vaccine. The malicious flags feed only
/// the detection report, never the filtering decision. An emptied benign
/// cluster keeps nothing; the caller skips aggregation for the round.
pub fn ssvax_filter(
    arch: &ArchSpec,
    updates: &[ClientUpdate],
    vaccines: &[ParamVector],
    global: &ParamVector,
    metric: ClusterMetric,
    labeled: &[TrainExample],
    round: usize,
) -> Result<FilterOutcome> {
    if updates.is_empty() {
        return Err(Error::Argument("no updates to filter".into()));
    }
    if vaccines.is_empty() {
        return Err(Error::Argument("no vaccines distilled".into()));
    }
    let points: Vec<Vec<f64>> = updates
        .iter()
        .map(|u| metric_features(arch, &u.params, global, metric, labeled))
        .collect::<Result<_>>()?;
    let centroids: Vec<Vec<f64>> = vaccines
        .iter()
        .map(|v| metric_features(arch, v, global, metric, labeled))
        .collect::<Result<_>>()?;
    let cluster = kmeans_fixed(&points, &centroids)?;
    let kept: Vec<usize> = cluster
        .assignment
        .iter()
        .enumerate()
        .filter(|(_, &a)| a == cluster.benign_cluster_id)
        .map(|(i, _)| i)
        .collect();
    let flags: Vec<bool> = updates.iter().map(|u| u.is_malicious).collect();
    let kept_ids: Vec<usize> = kept.iter().map(|&i| updates[i].client_id).collect();
    let detection = detection_metrics(&cluster, &flags, round, kept_ids);
    Ok(FilterOutcome {
        kept,
        cluster,
        detection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec())
    }

    fn random_updates(rng: &mut Rng64, count: usize, dim: usize) -> Vec<ParamVector> {
        (0..count)
            .map(|_| ParamVector::new((0..dim).map(|_| rng.next_range(-5.0, 5.0)).collect()))
            .collect()
    }

    #[test]
    fn median_basics() {
        let updates = vec![pv(&[1.0]), pv(&[2.0]), pv(&[100.0])];
        assert_eq!(median_agg(&updates).unwrap(), pv(&[2.0]));
        let same = vec![pv(&[3.0, -1.0]); 4];
        assert_eq!(median_agg(&same).unwrap(), pv(&[3.0, -1.0]));
        assert!(median_agg(&[]).is_err());
    }

    #[test]
    fn median_matches_sort_oracle() {
        let mut rng = Rng64::new(3);
        for _ in 0..50 {
            let updates = random_updates(&mut rng, 5, 8);
            let got = median_agg(&updates).unwrap();
            for i in 0..8 {
                let mut col: Vec<f64> = updates.iter().map(|u| u.values()[i]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(got.values()[i], col[2]);
            }
        }
    }

    #[test]
    fn median_breakdown_under_adversarial_majority() {
        // ceil((n+1)/2) identical adversarial vectors pin the median to the
        // adversarial value on every coordinate.
        let mut rng = Rng64::new(5);
        let honest = random_updates(&mut rng, 4, 6);
        let adversarial = pv(&[9.0, -9.0, 9.0, -9.0, 9.0, -9.0]);
        let mut updates = honest;
        for _ in 0..5 {
            updates.push(adversarial.clone());
        }
        let out = median_agg(&updates).unwrap();
        assert_eq!(out, adversarial);
    }

    #[test]
    fn trmean_basics() {
        let updates: Vec<ParamVector> =
            [1.0, 2.0, 3.0, 4.0, 5.0].iter().map(|&v| pv(&[v])).collect();
        assert_eq!(trmean_agg(&updates, 1).unwrap(), pv(&[3.0]));
        // trim 0 equals fedavg
        let mut rng = Rng64::new(8);
        let updates = random_updates(&mut rng, 6, 10);
        let a = trmean_agg(&updates, 0).unwrap();
        let b = crate::fl::fedavg(&updates).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(trmean_agg(&updates, 3).is_err());
    }

    #[test]
    fn trmean_matches_sort_trim_oracle() {
        let mut rng = Rng64::new(21);
        for _ in 0..50 {
            let updates = random_updates(&mut rng, 7, 5);
            let got = trmean_agg(&updates, 2).unwrap();
            for i in 0..5 {
                let mut col: Vec<f64> = updates.iter().map(|u| u.values()[i]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let expect = (col[2] + col[3] + col[4]) / 3.0;
                assert!((got.values()[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregators_are_permutation_invariant() {
        let mut rng = Rng64::new(13);
        let updates = random_updates(&mut rng, 6, 12);
        let mut reversed = updates.clone();
        reversed.reverse();
        assert_eq!(median_agg(&updates).unwrap(), median_agg(&reversed).unwrap());
        let a = trmean_agg(&updates, 1).unwrap();
        let b = trmean_agg(&reversed, 1).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fltrust_aligned_update_moves_along_server_delta() {
        let global = pv(&[0.0, 0.0, 0.0]);
        let server = pv(&[1.0, 2.0, 2.0]); // norm 3
        // Client delta in the same direction, double magnitude.
        let client = pv(&[2.0, 4.0, 4.0]);
        let out = fltrust_agg(&[client], &server, &global).unwrap();
        for (o, s) in out.values().iter().zip(server.values()) {
            assert!((o - s).abs() < 1e-12);
        }
    }

    #[test]
    fn fltrust_opposed_update_is_excluded() {
        let global = pv(&[0.0, 0.0]);
        let server = pv(&[1.0, 0.0]);
        let client = pv(&[-5.0, 0.0]);
        // Trust clips to zero, so the fallback applies the server delta.
        let out = fltrust_agg(&[client], &server, &global).unwrap();
        assert_eq!(out, server);
    }

    #[test]
    fn fltrust_zero_server_delta_falls_back_to_fedavg() {
        let global = pv(&[1.0, 1.0]);
        let server = global.clone();
        let updates = vec![pv(&[2.0, 0.0]), pv(&[0.0, 2.0])];
        let out = fltrust_agg(&updates, &server, &global).unwrap();
        assert_eq!(out, pv(&[1.0, 1.0]));
    }

    /// Direct reimplementation used as the aggregation oracle.
    fn fltrust_oracle(
        updates: &[ParamVector],
        server: &ParamVector,
        global: &ParamVector,
    ) -> ParamVector {
        let gs: Vec<f64> = server.delta_from(global);
        let ns = gs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let deltas: Vec<Vec<f64>> = updates.iter().map(|u| u.delta_from(global)).collect();
        let mut weights = Vec::new();
        for d in &deltas {
            let nd = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cos = if nd == 0.0 {
                0.0
            } else {
                d.iter().zip(&gs).map(|(a, b)| a * b).sum::<f64>() / (nd * ns)
            };
            weights.push((cos.max(0.0), nd));
        }
        let total: f64 = weights.iter().map(|(w, _)| w).sum();
        let mut out = global.values().to_vec();
        if total == 0.0 {
            for (o, d) in out.iter_mut().zip(&gs) {
                *o += d;
            }
            return ParamVector::new(out);
        }
        for ((w, nd), d) in weights.iter().zip(&deltas) {
            if *w == 0.0 || *nd == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(d) {
                *o += w * (ns / nd) * v / total;
            }
        }
        ParamVector::new(out)
    }

    #[test]
    fn fltrust_matches_reimplementation_oracle() {
        let mut rng = Rng64::new(30);
        for _ in 0..50 {
            let dim = 16;
            let global = ParamVector::new((0..dim).map(|_| rng.next_range(-1.0, 1.0)).collect());
            let server = ParamVector::new((0..dim).map(|_| rng.next_range(-1.0, 1.0)).collect());
            let updates = random_updates(&mut rng, 6, dim);
            let got = fltrust_agg(&updates, &server, &global).unwrap();
            let expect = fltrust_oracle(&updates, &server, &global);
            for (a, b) in got.values().iter().zip(expect.values()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn kmeans_hand_traced_example() {
        // Fixed centroid at 0; points {0.1, -0.1, 10, 10.2}. The initial free
        // centroid is the mean 5.05; one reassignment pass converges with the
        // free cluster at {10, 10.2}, centroid 10.1.
        let points = vec![vec![0.1], vec![-0.1], vec![10.0], vec![10.2]];
        let fixed = vec![vec![0.0]];
        let result = kmeans_fixed(&points, &fixed).unwrap();
        assert_eq!(result.assignment, vec![0, 0, 1, 1]);
        assert_eq!(result.benign_cluster_id, 1);
        let free = result.free_centroid.unwrap();
        assert!((free[0] - 10.1).abs() < 1e-12);
        assert_eq!(result.fixed_centroids, fixed);
    }

    #[test]
    fn kmeans_degenerate_free_cluster() {
        let points = vec![vec![1.0, 2.0]; 3];
        let fixed = vec![vec![1.0, 2.0]];
        let result = kmeans_fixed(&points, &fixed).unwrap();
        // Equidistant (distance zero) ties break to the lowest cluster id,
        // so everything lands on the fixed centroid and the free cluster dies.
        assert!(result.assignment.iter().all(|&a| a == 0));
        assert!(result.free_centroid.is_none());
    }

    #[test]
    fn kmeans_result_is_a_fixed_point() {
        let mut rng = Rng64::new(44);
        for _ in 0..30 {
            let points: Vec<Vec<f64>> = (0..12)
                .map(|_| (0..3).map(|_| rng.next_range(-4.0, 4.0)).collect())
                .collect();
            let fixed: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..3).map(|_| rng.next_range(-4.0, 4.0)).collect())
                .collect();
            let result = kmeans_fixed(&points, &fixed).unwrap();
            assert!(result.iterations <= KMEANS_MAX_ITERS);
            // Re-running assignment with the final centroids changes nothing.
            let mut centroids = result.fixed_centroids.clone();
            if let Some(free) = &result.free_centroid {
                centroids.push(free.clone());
            }
            for (p, &a) in points.iter().zip(&result.assignment) {
                let best = centroids
                    .iter()
                    .enumerate()
                    .min_by(|(i, c1), (j, c2)| {
                        squared_distance(p, c1)
                            .partial_cmp(&squared_distance(p, c2))
                            .unwrap()
                            .then(i.cmp(j))
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                assert_eq!(best, a);
            }
        }
    }

    #[test]
    fn kmeans_rejects_bad_input() {
        assert!(kmeans_fixed(&[], &[vec![0.0]]).is_err());
        assert!(kmeans_fixed(&[vec![0.0]], &[]).is_err());
        assert!(kmeans_fixed(&[vec![0.0], vec![1.0, 2.0]], &[vec![0.0]]).is_err());
    }

    #[test]
    fn detection_metrics_counts() {
        let cluster = ClusterResult {
            assignment: vec![1, 1, 0, 1, 0],
            benign_cluster_id: 1,
            fixed_centroids: vec![vec![0.0]],
            free_centroid: Some(vec![1.0]),
            iterations: 1,
        };
        // flags:       benign, malicious, malicious, benign, benign
        let flags = [false, true, true, false, false];
        let report = detection_metrics(&cluster, &flags, 3, vec![10, 20, 30]);
        assert_eq!((report.tp, report.fp, report.fn_, report.tn), (1, 1, 1, 2));
        assert_eq!(report.fnr, 0.5);
        assert_eq!(report.fpr, 1.0 / 3.0);
        assert_eq!(report.tp + report.fp + report.fn_ + report.tn, 5);
        assert_eq!(report.cluster_sizes, vec![2, 3]);

        // All benign, all kept.
        let cluster = ClusterResult {
            assignment: vec![1, 1],
            benign_cluster_id: 1,
            fixed_centroids: vec![vec![0.0]],
            free_centroid: Some(vec![1.0]),
            iterations: 1,
        };
        let report = detection_metrics(&cluster, &[false, false], 0, vec![]);
        assert_eq!((report.fnr, report.fpr), (0.0, 0.0));
        // All malicious, none kept.
        let cluster = ClusterResult {
            assignment: vec![0, 0],
            benign_cluster_id: 1,
            fixed_centroids: vec![vec![0.0]],
            free_centroid: None,
            iterations: 1,
        };
        let report = detection_metrics(&cluster, &[true, true], 0, vec![]);
        assert_eq!((report.fnr, report.fpr), (0.0, 0.0));
        assert_eq!(report.tp, 2);
    }

    #[test]
    fn detection_matches_hand_counted_confusion() {
        let mut rng = Rng64::new(9);
        for _ in 0..40 {
            let n = 10;
            let assignment: Vec<usize> = (0..n).map(|_| rng.next_below(3) as usize).collect();
            let flags: Vec<bool> = (0..n).map(|_| rng.next_bool()).collect();
            let cluster = ClusterResult {
                assignment: assignment.clone(),
                benign_cluster_id: 2,
                fixed_centroids: vec![vec![0.0], vec![1.0]],
                free_centroid: Some(vec![2.0]),
                iterations: 1,
            };
            let report = detection_metrics(&cluster, &flags, 0, vec![]);
            let mut expect = (0, 0, 0, 0);
            for i in 0..n {
                let kept = assignment[i] == 2;
                match (flags[i], kept) {
                    (true, false) => expect.0 += 1,
                    (false, false) => expect.1 += 1,
                    (true, true) => expect.2 += 1,
                    (false, true) => expect.3 += 1,
                }
            }
            assert_eq!((report.tp, report.fp, report.fn_, report.tn), expect);
        }
    }

    #[test]
    fn vaccine_spec_validation() {
        let mut spec = VaccineSpec::untargeted(vec![AttackKind::Flip], 4);
        assert!(spec.validate(4).is_ok());
        spec.epochs = 0;
        assert!(spec.validate(4).is_err());
        let empty = VaccineSpec {
            kinds: vec![],
            ..VaccineSpec::untargeted(vec![AttackKind::Flip], 4)
        };
        assert!(empty.validate(4).is_err());
    }

    #[test]
    fn identical_vaccine_specs_distill_identically() {
        let cfg = crate::signal::GeneratorConfig {
            channels: 4,
            window: 32,
            snr_db: 10.0,
            activity_prob: 0.5,
            seed: 2,
            num_examples: 40,
        };
        let labeled = crate::signal::generate_dataset(&cfg).unwrap();
        let arch = ArchSpec::new(32, 1, 4);
        let global = model::init_params(&arch, 7);
        let spec = VaccineSpec::untargeted(vec![AttackKind::Flip], 4);
        let a = distill_vaccines(&arch, &global, &labeled, FeatureMode::Freq, &spec, 1e-3, 32, 55)
            .unwrap();
        let b = distill_vaccines(&arch, &global, &labeled, FeatureMode::Freq, &spec, 1e-3, 32, 55)
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], global);
        // Copies of the same kind draw from per-vaccine streams, so they are
        // independent replicas; the pair itself reproduces exactly.
        let spec2 = VaccineSpec {
            per_kind: 2,
            ..spec
        };
        let pair =
            distill_vaccines(&arch, &global, &labeled, FeatureMode::Freq, &spec2, 1e-3, 32, 55)
                .unwrap();
        assert_eq!(pair.len(), 2);
        let again =
            distill_vaccines(&arch, &global, &labeled, FeatureMode::Freq, &spec2, 1e-3, 32, 55)
                .unwrap();
        assert_eq!(pair, again);
    }

    #[test]
    fn ssvax_filter_separates_an_obvious_split() {
        // Synthetic parameter-space setup: benign updates move +x from the
        // global, malicious updates and the vaccine move -x.
        let dim = 8;
        let global = ParamVector::zeros(dim);
        let mut updates = Vec::new();
        let mut rng = Rng64::new(71);
        for i in 0..6 {
            let mut v = vec![0.0; dim];
            v[0] = 1.0 + rng.next_range(-0.05, 0.05);
            v[1] = rng.next_range(-0.05, 0.05);
            updates.push(ClientUpdate {
                client_id: i,
                round: 1,
                params: ParamVector::new(v),
                is_malicious: false,
            });
        }
        for i in 6..10 {
            let mut v = vec![0.0; dim];
            v[0] = -1.0 + rng.next_range(-0.05, 0.05);
            v[1] = rng.next_range(-0.05, 0.05);
            updates.push(ClientUpdate {
                client_id: i,
                round: 1,
                params: ParamVector::new(v),
                is_malicious: true,
            });
        }
        let mut vax = vec![0.0; dim];
        vax[0] = -1.0;
        let vaccines = vec![ParamVector::new(vax)];
        let arch = ArchSpec::new(16, 1, 2); // unused by params_delta
        let outcome = ssvax_filter(
            &arch,
            &updates,
            &vaccines,
            &global,
            ClusterMetric::ParamsDelta,
            &[],
            1,
        )
        .unwrap();
        assert_eq!(outcome.kept, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(outcome.detection.tp, 4);
        assert_eq!(outcome.detection.fnr, 0.0);
        assert_eq!(outcome.detection.fpr, 0.0);
        assert_eq!(outcome.detection.kept_ids, vec![0, 1, 2, 3, 4, 5]);
        // The filter never keeps a vaccine: kept indices address updates only.
        assert!(outcome.kept.iter().all(|&i| i < updates.len()));

        // Flipping the evaluation flags must not change the kept set.
        let mut flipped = updates.clone();
        for u in flipped.iter_mut() {
            u.is_malicious = !u.is_malicious;
        }
        let outcome2 = ssvax_filter(
            &arch,
            &flipped,
            &vaccines,
            &global,
            ClusterMetric::ParamsDelta,
            &[],
            1,
        )
        .unwrap();
        assert_eq!(outcome2.kept, outcome.kept);
    }
}
