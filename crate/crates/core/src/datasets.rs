//! Safe, unsafe and buffered datasets built from expert demonstrations, plus
//! the covering-radius estimates used by the verifier.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist2, norm2};
use crate::model::{InputVec, Measurement, OutputVec, StateVec, TimePoint};

/// One expert sample `(u_i, y_i, t_i)`.
///
/// `exo` carries the exogenous model signal seen at `t` (the path turn rate
/// for the lane model, 0 otherwise), so the sample can be re-evaluated later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub t: f64,
    #[serde(default)]
    pub exo: f64,
    pub u: InputVec,
    pub y: OutputVec,
}

impl DemoRecord {
    pub fn new(t: f64, exo: f64, u: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            t,
            exo,
            u: u.into(),
            y: y.into(),
        }
    }

    pub fn time_point(&self) -> TimePoint {
        TimePoint::with_exo(self.t, self.exo)
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.exo.is_finite() && self.u.is_finite() && self.y.is_finite()
    }
}

/// `Z_safe = {X̂(y_i)}` in demonstration order.
pub fn project_safe(z_dyn: &[DemoRecord], meas: &dyn Measurement) -> Vec<StateVec> {
    z_dyn.iter().map(|d| StateVec(meas.xhat(&d.y))).collect()
}

/// Boundary point detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BpdConfig {
    pub k: usize,
    /// Fixed reverse-neighbour threshold; overrides `target_fraction` when set.
    pub eta: Option<f64>,
    /// Fraction of points to flag when `eta` is unset.
    pub target_fraction: f64,
}

impl Default for BpdConfig {
    fn default() -> Self {
        Self {
            k: 200,
            eta: None,
            target_fraction: 0.40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BpdResult {
    /// `true` marks a boundary point.
    pub mask: Vec<bool>,
    /// Reverse k-nearest-neighbour count of each point.
    pub rknn: Vec<usize>,
    /// Threshold actually applied (`mask_i = rknn_i ≤ eta`).
    pub eta: f64,
    /// Mean of the k nearest neighbours of each point.
    pub neighbor_mean: Vec<Vec<f64>>,
}

impl BpdResult {
    pub fn flagged(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Reverse-kNN boundary detection with exact pairwise distances.
///
/// A point is never its own neighbour; equal distances are broken by the
/// smaller index.
pub fn boundary_point_detection<P: AsRef<[f64]>>(points: &[P], cfg: &BpdConfig) -> Result<BpdResult> {
    let n_pts = points.len();
    if cfg.k == 0 || n_pts <= cfg.k {
        return Err(Error::InvalidArgument(format!(
            "boundary detection needs more than k = {} points, got {n_pts}",
            cfg.k
        )));
    }
    if cfg.eta.is_none() && !(cfg.target_fraction > 0.0 && cfg.target_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target boundary fraction must lie in (0, 1], got {}",
            cfg.target_fraction
        )));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::InvalidArgument("points of unequal dimension".into()));
    }

    let k = cfg.k;
    let mut rknn = vec![0usize; n_pts];
    let mut neighbor_mean = Vec::with_capacity(n_pts);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n_pts - 1);
    for (i, pi) in points.iter().enumerate() {
        let pi = pi.as_ref();
        cand.clear();
        cand.extend(
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, pj)| (sq_dist(pi, pj.as_ref()), j)),
        );
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_dist_then_index);
        }
        let mut mean = vec![0.0; dim];
        for &(_, j) in &cand[..k] {
            rknn[j] += 1;
            for (m, v) in mean.iter_mut().zip(points[j].as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= k as f64);
        neighbor_mean.push(mean);
    }

    let eta = match cfg.eta {
        Some(e) => e,
        None => {
            let mut sorted = rknn.clone();
            sorted.sort_unstable();
            // guard against 0.4 * 500 = 200.00000000000003
            let need = ((cfg.target_fraction * n_pts as f64) - 1e-9).ceil().max(1.0) as usize;
            sorted[need.min(n_pts) - 1] as f64
        }
    };
    let mask = rknn.iter().map(|c| (*c as f64) <= eta).collect();
    Ok(BpdResult {
        mask,
        rknn,
        eta,
        neighbor_mean,
    })
}

/// Adds `copies` jittered points per boundary point, pushed outward along
/// `x − mean(kNN(x))` by a length uniform in `(0, sigma_layer]`.
pub fn augment_unsafe(
    points: &[StateVec],
    bpd: &BpdResult,
    copies: usize,
    sigma_layer: f64,
    seed: u64,
) -> Result<Vec<StateVec>> {
    if copies > 0 && !(sigma_layer > 0.0) {
        return Err(Error::InvalidArgument("layer width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !bpd.mask[i] {
            continue;
        }
        let dir: Vec<f64> = p.iter().zip(&bpd.neighbor_mean[i]).map(|(a, m)| a - m).collect();
        let dn = norm2(&dir);
        if dn == 0.0 {
            continue;
        }
        for _ in 0..copies {
            // (0, σ]: 1 − U[0,1) never hits zero
            let r = sigma_layer * (1.0 - rng.random::<f64>());
            out.push(StateVec(
                p.iter().zip(&dir).map(|(a, d)| a + r * d / dn).collect(),
            ));
        }
    }
    Ok(out)
}

/// Keeps safe points at distance at least `(γ_safe + γ_unsafe) / L_h` from
/// every unsafe point.
pub fn build_buffered_safe(
    z_safe: &[StateVec],
    z_unsafe: &[StateVec],
    gamma_safe: f64,
    gamma_unsafe: f64,
    l_h: f64,
) -> Result<Vec<StateVec>> {
    if !(l_h > 0.0) {
        return Err(Error::InvalidArgument(format!("L_h must be positive, got {l_h}")));
    }
    let thr = (gamma_safe + gamma_unsafe) / l_h;
    let thr2 = thr * thr;
    Ok(z_safe
        .iter()
        .filter(|x| z_unsafe.iter().all(|z| sq_dist(x, z) >= thr2))
        .cloned()
        .collect())
}

fn nearest_other(points: &[StateVec]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(
            "covering radius needs at least two points".into(),
        ));
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| sq_dist(p, q))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}

/// Largest nearest-other-neighbour distance.
pub fn estimate_eps(points: &[StateVec]) -> Result<f64> {
    Ok(nearest_other(points)?.into_iter().fold(0.0, f64::max))
}

/// Mean nearest-other-neighbour distance.
pub fn estimate_eps_mean(points: &[StateVec]) -> Result<f64> {
    let d = nearest_other(points)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Largest `Δ_X(y)` over the given outputs.
pub fn sup_delta_x(meas: &dyn Measurement, outputs: &[OutputVec]) -> f64 {
    outputs.iter().map(|y| meas.delta_x(y)).fold(0.0, f64::max)
}

/// `ε̄ = Lip_Y · (ε + Δ̄_X)`.
pub fn compute_eps_bar(eps: f64, lip_y: f64, delta_x_bar: f64) -> Result<f64> {
    if !(eps >= 0.0) || !(lip_y >= 0.0) || !(delta_x_bar >= 0.0) {
        return Err(Error::InvalidArgument(
            "radius, Lipschitz bound and error bound must be non-negative".into(),
        ));
    }
    Ok(lip_y * (eps + delta_x_bar))
}

/// Everything needed to build the datasets from a demonstration list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Keep every `stride`-th demonstration.
    pub stride: usize,
    pub bpd: BpdConfig,
    /// Outward jittered copies per boundary point.
    pub augment_copies: usize,
    pub sigma_layer: f64,
    /// Lipschitz constant used for the safe-set buffer before training.
    pub buffer_lip_h: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            bpd: BpdConfig::default(),
            augment_copies: 2,
            sigma_layer: 0.1,
            buffer_lip_h: 1.0,
            seed: 7,
        }
    }
}

/// Provenance of a [`DatasetBundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub demos_in: usize,
    pub stride: usize,
    pub k: usize,
    pub eta: f64,
    pub boundary_points: usize,
    pub augmented_points: usize,
    pub gamma_safe: f64,
    pub gamma_unsafe: f64,
    pub buffer_lip_h: f64,
    pub delta_x_bar: f64,
    pub lip_y: f64,
    pub eps_mean: f64,
    pub eps_n_mean: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub z_dyn: Vec<DemoRecord>,
    pub z_safe: Vec<StateVec>,
    pub z_unsafe: Vec<StateVec>,
    pub z_safe_buffered: Vec<StateVec>,
    pub eps: f64,
    pub eps_n: f64,
    pub sigma_layer: f64,
    pub eps_bar: f64,
    pub meta: BundleMeta,
}

impl DatasetBundle {
    /// Bundle with caller-supplied sets; radii are estimated where possible.
    pub fn from_sets(
        z_dyn: Vec<DemoRecord>,
        z_safe: Vec<StateVec>,
        z_unsafe: Vec<StateVec>,
        z_safe_buffered: Vec<StateVec>,
        meas: &dyn Measurement,
    ) -> Self {
        let radius = |s: &[StateVec]| estimate_eps(s).unwrap_or(0.0);
        let eps = radius(&z_safe_buffered);
        let eps_n = radius(&z_unsafe);
        let outputs: Vec<OutputVec> = z_dyn.iter().map(|d| d.y.clone()).collect();
        let dxb = sup_delta_x(meas, &outputs);
        let lip_y = meas.lip_y_bound();
        Self {
            meta: BundleMeta {
                demos_in: z_dyn.len(),
                stride: 1,
                k: 0,
                eta: 0.0,
                boundary_points: z_unsafe.len(),
                augmented_points: 0,
                gamma_safe: 0.0,
                gamma_unsafe: 0.0,
                buffer_lip_h: 0.0,
                delta_x_bar: dxb,
                lip_y,
                eps_mean: estimate_eps_mean(&z_safe_buffered).unwrap_or(0.0),
                eps_n_mean: estimate_eps_mean(&z_unsafe).unwrap_or(0.0),
                seed: 0,
            },
            z_dyn,
            z_safe,
            z_unsafe,
            z_safe_buffered,
            eps,
            eps_n,
            sigma_layer: 0.0,
            eps_bar: lip_y * (eps + dxb),
        }
    }

    pub fn delta_x_bar(&self) -> f64 {
        self.meta.delta_x_bar
    }
}

/// Projection, boundary detection, augmentation, buffering and radii.
pub fn build_bundle(
    demos: &[DemoRecord],
    meas: &dyn Measurement,
    cfg: &DatasetConfig,
    gamma_safe: f64,
    gamma_unsafe: f64,
) -> Result<DatasetBundle> {
    if cfg.stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if let Some(bad) = demos.iter().position(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument(format!("demonstration {bad} is not finite")));
    }
    let z_dyn: Vec<DemoRecord> = demos.iter().step_by(cfg.stride).cloned().collect();
    let projected = project_safe(&z_dyn, meas);
    let bpd = boundary_point_detection(&projected, &cfg.bpd)?;

    let mut z_safe = Vec::new();
    let mut z_unsafe = Vec::new();
    for (p, m) in projected.iter().zip(&bpd.mask) {
        if *m {
            z_unsafe.push(p.clone());
        } else {
            z_safe.push(p.clone());
        }
    }
    let boundary_points = z_unsafe.len();
    let extra = augment_unsafe(&projected, &bpd, cfg.augment_copies, cfg.sigma_layer, cfg.seed)?;
    let augmented_points = extra.len();
    z_unsafe.extend(extra);

    let z_safe_buffered =
        build_buffered_safe(&z_safe, &z_unsafe, gamma_safe, gamma_unsafe, cfg.buffer_lip_h)?;
    if z_safe_buffered.len() < 2 {
        return Err(Error::InvalidArgument(
            "fewer than two safe points survive the buffer".into(),
        ));
    }
    let eps = estimate_eps(&z_safe_buffered)?;
    let eps_n = estimate_eps(&z_unsafe)?;
    let outputs: Vec<OutputVec> = z_dyn.iter().map(|d| d.y.clone()).collect();
    let delta_x_bar = sup_delta_x(meas, &outputs);
    let lip_y = meas.lip_y_bound();
    let eps_bar = compute_eps_bar(eps, lip_y, delta_x_bar)?;
    Ok(DatasetBundle {
        meta: BundleMeta {
            demos_in: demos.len(),
            stride: cfg.stride,
            k: cfg.bpd.k,
            eta: bpd.eta,
            boundary_points,
            augmented_points,
            gamma_safe,
            gamma_unsafe,
            buffer_lip_h: cfg.buffer_lip_h,
            delta_x_bar,
            lip_y,
            eps_mean: estimate_eps_mean(&z_safe_buffered)?,
            eps_n_mean: estimate_eps_mean(&z_unsafe)?,
            seed: cfg.seed,
        },
        z_dyn,
        z_safe,
        z_unsafe,
        z_safe_buffered,
        eps,
        eps_n,
        sigma_layer: cfg.sigma_layer,
        eps_bar,
    })
}

/// Distance from `x` to the closest point of `set` (infinite for an empty set).
pub fn distance_to_set(x: &[f64], set: &[StateVec]) -> f64 {
    set.iter().map(|s| dist2(x, s)).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IdentityMeasurement;

    fn pts<P: AsRef<[f64]>>(v: &[P]) -> Vec<StateVec> {
        v.iter().map(|p| StateVec(p.as_ref().to_vec())).collect()
    }

    #[test]
    fn collinear_five_points() {
        // kNN with k=2: 0→{1,2} 1→{0,2} 2→{1,3} 3→{2,4} 4→{3,2}
        // RkNN: [1, 2, 4, 2, 1]
        let p = pts(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        let cfg = BpdConfig {
            k: 2,
            eta: Some(1.0),
            target_fraction: 0.4,
        };
        let r = boundary_point_detection(&p, &cfg).unwrap();
        assert_eq!(r.rknn, vec![1, 2, 4, 2, 1]);
        assert_eq!(r.mask, vec![true, false, false, false, true]);
    }

    #[test]
    fn identical_points_tie_break_by_index() {
        // every point picks the two lowest other indices
        let p = pts(&[&[1.0, 1.0]; 5]);
        let cfg = BpdConfig {
            k: 2,
            eta: Some(1.0),
            target_fraction: 0.4,
        };
        let r = boundary_point_detection(&p, &cfg).unwrap();
        assert_eq!(r.rknn, vec![4, 4, 2, 0, 0]);
        assert_eq!(r.mask, vec![false, false, false, true, true]);
    }

    #[test]
    fn target_fraction_picks_smallest_eta() {
        let p = pts(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]);
        let cfg = BpdConfig {
            k: 2,
            eta: None,
            target_fraction: 0.4,
        };
        let r = boundary_point_detection(&p, &cfg).unwrap();
        assert_eq!(r.eta, 1.0);
        assert_eq!(r.flagged(), 2);
    }

    #[test]
    fn too_few_points() {
        let p = pts(&[&[0.0], &[1.0]]);
        assert!(boundary_point_detection(&p, &BpdConfig { k: 2, ..Default::default() }).is_err());
    }

    #[test]
    fn buffer_threshold() {
        let safe = pts(&[&[0.0, 0.0], &[0.09, 0.0], &[0.1, 0.0], &[0.5, 0.0]]);
        let unsafe_ = pts(&[&[0.0, 0.0]]);
        let kept = build_buffered_safe(&safe, &unsafe_, 0.05, 0.05, 1.0).unwrap();
        assert_eq!(kept, pts(&[&[0.1, 0.0], &[0.5, 0.0]]));
        let all = build_buffered_safe(&safe, &unsafe_, 0.05, 0.05, f64::INFINITY).unwrap();
        assert_eq!(all, safe);
        assert_eq!(build_buffered_safe(&safe, &[], 0.05, 0.05, 1.0).unwrap(), safe);
        assert!(build_buffered_safe(&safe, &unsafe_, 0.05, 0.05, 0.0).is_err());
    }

    #[test]
    fn eps_estimates() {
        assert_eq!(estimate_eps(&pts(&[&[0.0], &[1.0], &[2.0]])).unwrap(), 1.0);
        assert_eq!(estimate_eps(&pts(&[&[3.0, 1.0]; 4])).unwrap(), 0.0);
        let grid: Vec<StateVec> = (0..5)
            .flat_map(|i| (0..5).map(move |j| StateVec(vec![0.3 * i as f64, 0.3 * j as f64])))
            .collect();
        assert!((estimate_eps(&grid).unwrap() - 0.3).abs() < 1e-12);
        assert!(estimate_eps(&pts(&[&[0.0]])).is_err());
        let m = estimate_eps_mean(&pts(&[&[0.0], &[1.0], &[3.0]])).unwrap();
        assert!((m - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn eps_bar() {
        assert_eq!(compute_eps_bar(0.05, 1.0, 0.0).unwrap(), 0.05);
        assert!((compute_eps_bar(0.05, 1.0, 0.1).unwrap() - 0.15).abs() < 1e-15);
        assert_eq!(
            compute_eps_bar(0.05, 2.0, 0.1).unwrap(),
            2.0 * compute_eps_bar(0.05, 1.0, 0.1).unwrap()
        );
    }

    #[test]
    fn projection_keeps_order() {
        let meas = IdentityMeasurement { n: 2, delta_x: 0.0 };
        let demos = vec![
            DemoRecord::new(0.0, 0.0, vec![0.0], vec![1.0, 2.0]),
            DemoRecord::new(0.1, 0.0, vec![0.0], vec![3.0, 4.0]),
            DemoRecord::new(0.2, 0.0, vec![0.0], vec![5.0, 6.0]),
        ];
        let z = project_safe(&demos, &meas);
        assert_eq!(z, pts(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
    }

    #[test]
    fn augmentation_points_outward() {
        let p: Vec<StateVec> = (0..9).map(|i| StateVec(vec![i as f64])).collect();
        let cfg = BpdConfig {
            k: 2,
            eta: Some(1.0),
            target_fraction: 0.4,
        };
        let r = boundary_point_detection(&p, &cfg).unwrap();
        let extra = augment_unsafe(&p, &r, 3, 0.5, 1).unwrap();
        assert_eq!(extra.len(), 6);
        for e in &extra {
            assert!((-0.5..0.0).contains(&e[0]) || (e[0] > 8.0 && e[0] <= 8.5));
        }
    }
}
