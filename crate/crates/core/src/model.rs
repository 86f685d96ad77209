//! Ground-truth problem instance, reward normalization, best responses,
//! and assumption validation.
//!
//! An instance is the finite game `(Theta, X, A, O, f, U, V, F, gamma)`.
//! It is the environment's hidden state: learners never touch it directly,
//! only the interaction loop in [`crate::env`] does.

use crate::geometry::{arc, rho, wrap, AngleVector, Isometry, GeometryError, PI, TAU};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for exact-equality degeneracy checks (ties, parallelism).
pub const DEGENERACY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("reward angles degenerate under this rotation: {0}; resample the isometry")]
    RotationRetry(String),
    #[error("degenerate instance: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("random instance generation failed after {0} attempts")]
    GenerationFailed(usize),
}

/// The finite principal-agent game hidden from the learner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub n_types: usize,
    /// Number of principal actions; the mechanism row dimension `d`.
    pub n_actions: usize,
    pub n_agent_actions: usize,
    pub n_outcomes: usize,
    /// Type distribution `f`, strictly positive everywhere.
    pub type_dist: Vec<f64>,
    /// Principal reward tensor, indexed `(theta, x, a, o)` row-major.
    pub principal_reward: Vec<f64>,
    /// Agent reward tensor, same indexing.
    pub agent_reward: Vec<f64>,
    /// Outcome distributions, one probability vector over outcomes per
    /// `(theta, x, a)`.
    pub outcome_dist: Vec<f64>,
    /// Agent discount factor in (0, 1).
    pub gamma: f64,
    /// Uniform reward bound `B`.
    pub bound: f64,
    /// Seed used to generate the instance, when it was generated.
    pub seed: Option<u64>,
}

impl ProblemInstance {
    #[inline]
    fn idx(&self, theta: usize, x: usize, a: usize, o: usize) -> usize {
        ((theta * self.n_actions + x) * self.n_agent_actions + a) * self.n_outcomes + o
    }

    #[inline]
    fn idx3(&self, theta: usize, x: usize, a: usize) -> usize {
        (theta * self.n_actions + x) * self.n_agent_actions + a
    }

    pub fn f_min(&self) -> f64 {
        self.type_dist.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn check_indices(&self, theta: usize, x: usize, a: usize) -> Result<(), ModelError> {
        if theta >= self.n_types || x >= self.n_actions || a >= self.n_agent_actions {
            return Err(ModelError::Index(format!(
                "(theta={theta}, x={x}, a={a}) outside ({}, {}, {})",
                self.n_types, self.n_actions, self.n_agent_actions
            )));
        }
        Ok(())
    }

    /// Expected agent reward under the outcome distribution for `(theta, x, a)`.
    pub fn expected_agent_reward(&self, theta: usize, x: usize, a: usize) -> Result<f64, ModelError> {
        self.check_indices(theta, x, a)?;
        let base = self.idx(theta, x, a, 0);
        let fbase = self.idx3(theta, x, a) * self.n_outcomes;
        Ok((0..self.n_outcomes)
            .map(|o| self.agent_reward[base + o] * self.outcome_dist[fbase + o])
            .sum())
    }

    /// Expected principal reward for `(theta, x, a)`.
    pub fn expected_principal_reward(&self, theta: usize, x: usize, a: usize) -> Result<f64, ModelError> {
        self.check_indices(theta, x, a)?;
        let base = self.idx(theta, x, a, 0);
        let fbase = self.idx3(theta, x, a) * self.n_outcomes;
        Ok((0..self.n_outcomes)
            .map(|o| self.principal_reward[base + o] * self.outcome_dist[fbase + o])
            .sum())
    }

    /// The agent's strictly-unique best response action to `(theta, x)`.
    pub fn best_action(&self, theta: usize, x: usize) -> Result<usize, ModelError> {
        self.check_indices(theta, x, 0)?;
        let mut best = 0usize;
        let mut best_val = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for a in 0..self.n_agent_actions {
            let val = self.expected_agent_reward(theta, x, a)?;
            if val > best_val {
                second = best_val;
                best_val = val;
                best = a;
            } else if val > second {
                second = val;
            }
        }
        if self.n_agent_actions > 1 && best_val - second <= DEGENERACY_TOL {
            return Err(ModelError::Assumption(format!(
                "best action tie at (theta={theta}, x={x}): {best_val} vs {second}"
            )));
        }
        Ok(best)
    }

    pub fn reward(&self, theta: usize, x: usize, a: usize, o: usize) -> f64 {
        self.principal_reward[self.idx(theta, x, a, o)]
    }

    pub fn agent_reward_at(&self, theta: usize, x: usize, a: usize, o: usize) -> f64 {
        self.agent_reward[self.idx(theta, x, a, o)]
    }

    /// Draws a type from the prior.
    pub fn sample_type(&self, rng: &mut ChaCha12Rng) -> usize {
        categorical(&self.type_dist, rng)
    }

    /// Draws an outcome from `F_{theta,x,a}`.
    pub fn sample_outcome(&self, theta: usize, x: usize, a: usize, rng: &mut ChaCha12Rng) -> usize {
        let fbase = self.idx3(theta, x, a) * self.n_outcomes;
        categorical(&self.outcome_dist[fbase..fbase + self.n_outcomes], rng)
    }

    /// Structural validation: shapes, probabilities, bounds, and the
    /// strict-best-action assumption.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n_types * self.n_actions * self.n_agent_actions * self.n_outcomes;
        if self.n_types == 0 || self.n_actions < 2 || self.n_agent_actions == 0 || self.n_outcomes == 0 {
            return Err(ModelError::Invalid("all dimensions must be positive and d >= 2".into()));
        }
        if self.principal_reward.len() != n || self.agent_reward.len() != n {
            return Err(ModelError::Invalid("reward tensor size mismatch".into()));
        }
        if self.outcome_dist.len() != self.n_types * self.n_actions * self.n_agent_actions * self.n_outcomes {
            return Err(ModelError::Invalid("outcome tensor size mismatch".into()));
        }
        if self.type_dist.len() != self.n_types {
            return Err(ModelError::Invalid("type distribution size mismatch".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ModelError::Invalid(format!("gamma {} outside (0,1)", self.gamma)));
        }
        let fsum: f64 = self.type_dist.iter().sum();
        if (fsum - 1.0).abs() > 1e-9 || self.type_dist.iter().any(|&p| p <= 0.0) {
            return Err(ModelError::Assumption("type distribution must be strictly positive and sum to 1".into()));
        }
        for (i, chunk) in self.outcome_dist.chunks(self.n_outcomes).enumerate() {
            let s: f64 = chunk.iter().sum();
            if (s - 1.0).abs() > 1e-9 || chunk.iter().any(|&p| p < 0.0) {
                return Err(ModelError::Invalid(format!("outcome distribution {i} not a probability vector")));
            }
        }
        let max_abs = self
            .principal_reward
            .iter()
            .chain(self.agent_reward.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        if max_abs > self.bound + 1e-9 {
            return Err(ModelError::Assumption(format!(
                "reward magnitude {max_abs} exceeds declared bound {}",
                self.bound
            )));
        }
        for theta in 0..self.n_types {
            for x in 0..self.n_actions {
                self.best_action(theta, x)?;
            }
        }
        Ok(())
    }
}

fn categorical(probs: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Best-response reductions of an instance: per-type reward vectors over the
/// principal's actions, their normalizations, and the slack scale constant.
#[derive(Debug, Clone)]
pub struct RewardProfile {
    /// Agent's expected reward `V(theta, x)` under best response.
    pub v: Vec<Vec<f64>>,
    /// Principal's expected reward `U(theta, x)` under best response.
    pub u: Vec<Vec<f64>>,
    /// Unit-norm, zero-sum normalizations of the rows of `v`.
    pub v_bar: Vec<Vec<f64>>,
    /// Slack scale `C0 = 2B / min_theta ||v_theta - mean||`.
    pub c0: f64,
    pub type_dist: Vec<f64>,
}

impl RewardProfile {
    pub fn n_types(&self) -> usize {
        self.v.len()
    }

    pub fn d(&self) -> usize {
        self.v[0].len()
    }
}

/// Computes the reward profile, enforcing the non-degeneracy assumptions on
/// the normalized rows.
pub fn reward_profile(inst: &ProblemInstance) -> Result<RewardProfile, ModelError> {
    let d = inst.n_actions;
    let mut v = Vec::with_capacity(inst.n_types);
    let mut u = Vec::with_capacity(inst.n_types);
    for theta in 0..inst.n_types {
        let mut vrow = Vec::with_capacity(d);
        let mut urow = Vec::with_capacity(d);
        for x in 0..d {
            let a = inst.best_action(theta, x)?;
            vrow.push(inst.expected_agent_reward(theta, x, a)?);
            urow.push(inst.expected_principal_reward(theta, x, a)?);
        }
        v.push(vrow);
        u.push(urow);
    }
    let mut v_bar: Vec<Vec<f64>> = Vec::with_capacity(inst.n_types);
    let mut min_norm = f64::INFINITY;
    for (theta, row) in v.iter().enumerate() {
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let centered: Vec<f64> = row.iter().map(|&x| x - mean).collect();
        let norm: f64 = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= DEGENERACY_TOL {
            return Err(ModelError::Assumption(format!(
                "agent reward vector for type {theta} is parallel to the all-ones vector"
            )));
        }
        min_norm = min_norm.min(norm);
        v_bar.push(centered.iter().map(|x| x / norm).collect());
    }
    for i in 0..v_bar.len() {
        for j in i + 1..v_bar.len() {
            let dist: f64 = v_bar[i]
                .iter()
                .zip(&v_bar[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist <= DEGENERACY_TOL {
                return Err(ModelError::Assumption(format!(
                    "normalized reward vectors of types {i} and {j} coincide"
                )));
            }
        }
    }
    Ok(RewardProfile {
        v,
        u,
        v_bar,
        c0: 2.0 * inst.bound / min_norm,
        type_dist: inst.type_dist.clone(),
    })
}

/// Reward angles of every type under the given isometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardAngles {
    pub by_type: Vec<AngleVector>,
}

impl RewardAngles {
    pub fn n_types(&self) -> usize {
        self.by_type.len()
    }

    pub fn d(&self) -> usize {
        self.by_type[0].ambient_dim()
    }
}

/// Spherical coordinates of the normalized reward vectors. Checks the
/// identifiability conditions (no right-angle polar coordinates, pairwise
/// distinct coordinates, no azimuthal antipodes, distinct mid-distances);
/// a violation signals the caller to resample the rotation.
pub fn reward_angles(
    profile: &RewardProfile,
    iso: &Isometry,
    tol: f64,
) -> Result<RewardAngles, ModelError> {
    let d = profile.d();
    if d < 3 {
        return Err(ModelError::Invalid(format!("reward angles need d >= 3, got {d}")));
    }
    if iso.dim() != d {
        return Err(ModelError::Invalid("isometry dimension mismatch".into()));
    }
    let mut by_type = Vec::with_capacity(profile.n_types());
    for row in &profile.v_bar {
        let image = iso.apply(row);
        by_type.push(crate::geometry::inverse_embed(&image)?);
    }
    let angles = RewardAngles { by_type };
    check_angle_assumptions(&angles, tol)?;
    Ok(angles)
}

/// The four identifiability conditions on the reward angles.
pub fn check_angle_assumptions(angles: &RewardAngles, tol: f64) -> Result<(), ModelError> {
    let d = angles.d();
    let k = d - 2;
    for (theta, a) in angles.by_type.iter().enumerate() {
        for i in 0..k.saturating_sub(1) {
            let v = a.coords()[i];
            if v < tol || (v - PI / 2.0).abs() < tol || (PI - v) < tol {
                return Err(ModelError::RotationRetry(format!(
                    "polar coordinate {i} of type {theta} within {tol} of a degenerate value"
                )));
            }
        }
    }
    for t1 in 0..angles.n_types() {
        for t2 in t1 + 1..angles.n_types() {
            let a = angles.by_type[t1].coords();
            let b = angles.by_type[t2].coords();
            for i in 0..k {
                if (a[i] - b[i]).abs() < tol {
                    return Err(ModelError::RotationRetry(format!(
                        "coordinate {i} coincides for types {t1}, {t2}"
                    )));
                }
            }
            let az1 = a[k - 1];
            let az2 = b[k - 1];
            if arc(az1, wrap(az2 + PI, TAU)?) < tol {
                return Err(ModelError::RotationRetry(format!(
                    "azimuthal coordinates of types {t1}, {t2} are antipodal"
                )));
            }
            for i in 0..k.saturating_sub(1) {
                if ((a[i] - PI / 2.0).abs() - (b[i] - PI / 2.0).abs()).abs() < tol {
                    return Err(ModelError::RotationRetry(format!(
                        "mid-distance of coordinate {i} coincides for types {t1}, {t2}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Samples isometries until the angle assumptions hold; the retry cap guards
/// genuinely antipodal reward vectors, for which no rotation works.
pub fn sample_valid_isometry(
    profile: &RewardProfile,
    base_seed: u64,
    tol: f64,
    max_tries: usize,
) -> Result<(Isometry, RewardAngles, usize), ModelError> {
    let mut last = String::new();
    for k in 0..max_tries {
        let iso = Isometry::sample(profile.d(), base_seed.wrapping_add(k as u64))?;
        match reward_angles(profile, &iso, tol) {
            Ok(angles) => return Ok((iso, angles, k)),
            Err(ModelError::RotationRetry(msg)) => last = msg,
            Err(e) => return Err(e),
        }
    }
    Err(ModelError::Degenerate(format!(
        "no valid rotation in {max_tries} tries; last: {last}"
    )))
}

/// Angle gaps measuring the distance from the identifiability boundary, and
/// the minimal product of polar sines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapProfile {
    /// Minimal pairwise difference of distances to pi/2, per coordinate.
    /// The final (azimuthal) entry is infinite by convention.
    pub chi: Vec<f64>,
    /// Minimal distance to {0, pi/2, pi}, capped at 0.1, per coordinate.
    pub chi_tilde: Vec<f64>,
    /// Minimal pairwise arc distance including antipodes, per coordinate.
    pub chi_bar: Vec<f64>,
    /// Minimal product of polar sines over all types.
    pub delta_sin: f64,
}

impl GapProfile {
    pub fn min_gap(&self) -> f64 {
        let mut m = f64::INFINITY;
        for v in self.chi.iter().chain(&self.chi_tilde).chain(&self.chi_bar) {
            if v.is_finite() {
                m = m.min(*v);
            }
        }
        m
    }
}

/// Computes the angle gaps exactly; all must be strictly positive under the
/// identifiability conditions.
pub fn gap_profile(angles: &RewardAngles) -> Result<GapProfile, ModelError> {
    let k = angles.d() - 2;
    let n = angles.n_types();
    let mut chi = vec![f64::INFINITY; k];
    let mut chi_tilde = vec![f64::INFINITY; k];
    let mut chi_bar = vec![f64::INFINITY; k];
    for i in 0..k.saturating_sub(1) {
        let mut ct: f64 = f64::INFINITY;
        for a in &angles.by_type {
            let v = a.coords()[i];
            ct = ct.min(v.abs()).min((v - PI).abs()).min((v - PI / 2.0).abs()).min(0.1);
        }
        chi_tilde[i] = ct;
        if n > 1 {
            let mut c: f64 = f64::INFINITY;
            let mut cb: f64 = f64::INFINITY;
            for t1 in 0..n {
                for t2 in t1 + 1..n {
                    let a = angles.by_type[t1].coords()[i];
                    let b = angles.by_type[t2].coords()[i];
                    c = c.min(((a - PI / 2.0).abs() - (b - PI / 2.0).abs()).abs());
                    cb = cb.min(arc(a, b)).min(arc(a, wrap(b + PI, TAU)?));
                }
            }
            chi[i] = c;
            chi_bar[i] = cb;
        }
    }
    // Azimuthal coordinate: chi and chi_tilde are infinite by convention.
    if n > 1 {
        let mut cb: f64 = f64::INFINITY;
        for t1 in 0..n {
            for t2 in t1 + 1..n {
                let a = angles.by_type[t1].coords()[k - 1];
                let b = angles.by_type[t2].coords()[k - 1];
                cb = cb.min(arc(a, b)).min(arc(a, wrap(b + PI, TAU)?));
            }
        }
        chi_bar[k - 1] = cb;
    }
    let delta_sin = angles
        .by_type
        .iter()
        .map(|a| a.coords()[..k - 1].iter().map(|x| x.sin()).product::<f64>())
        .fold(f64::INFINITY, f64::min);
    let profile = GapProfile { chi, chi_tilde, chi_bar, delta_sin };
    let degenerate = profile
        .chi
        .iter()
        .chain(&profile.chi_tilde)
        .chain(&profile.chi_bar)
        .any(|&g| g <= 0.0)
        || profile.delta_sin <= 0.0;
    if degenerate {
        return Err(ModelError::Degenerate("zero angle gap".into()));
    }
    Ok(profile)
}

/// Parameters for the rejection-sampling instance generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceParams {
    pub n_types: usize,
    pub n_actions: usize,
    pub n_agent_actions: usize,
    pub n_outcomes: usize,
    pub bound: f64,
    pub gamma: f64,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self {
            n_types: 2,
            n_actions: 3,
            n_agent_actions: 2,
            n_outcomes: 2,
            bound: 1.0,
            gamma: 0.9,
        }
    }
}

/// Random instance: rewards i.i.d. uniform in `[-B, B]`, outcome rows
/// Dirichlet(1), type distribution Dirichlet(1); regenerated on assumption
/// failure up to 50 tries.
pub fn random_instance(params: &InstanceParams, seed: u64) -> Result<ProblemInstance, ModelError> {
    use rand::SeedableRng;
    const TRIES: usize = 50;
    for attempt in 0..TRIES {
        let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(attempt as u64 * 0x9e37_79b9));
        let n = params.n_types * params.n_actions * params.n_agent_actions * params.n_outcomes;
        let b = params.bound;
        let principal_reward: Vec<f64> = (0..n).map(|_| rng.random_range(-b..b)).collect();
        let agent_reward: Vec<f64> = (0..n).map(|_| rng.random_range(-b..b)).collect();
        let cells = params.n_types * params.n_actions * params.n_agent_actions;
        let mut outcome_dist = Vec::with_capacity(cells * params.n_outcomes);
        for _ in 0..cells {
            outcome_dist.extend(dirichlet_flat(params.n_outcomes, &mut rng));
        }
        let type_dist = dirichlet_flat(params.n_types, &mut rng);
        let inst = ProblemInstance {
            n_types: params.n_types,
            n_actions: params.n_actions,
            n_agent_actions: params.n_agent_actions,
            n_outcomes: params.n_outcomes,
            type_dist,
            principal_reward,
            agent_reward,
            outcome_dist,
            gamma: params.gamma,
            bound: params.bound,
            seed: Some(seed),
        };
        if inst.validate().is_ok() && reward_profile(&inst).is_ok() {
            return Ok(inst);
        }
    }
    Err(ModelError::GenerationFailed(TRIES))
}

fn dirichlet_flat(k: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Builds a deterministic single-action, single-outcome instance whose
/// best-response agent reward rows are exactly `v_rows` and principal rows
/// `u_rows`. Used to plant reward geometry directly.
pub fn instance_from_rewards(
    v_rows: &[Vec<f64>],
    u_rows: &[Vec<f64>],
    type_dist: &[f64],
    gamma: f64,
    bound: f64,
) -> Result<ProblemInstance, ModelError> {
    let n_types = v_rows.len();
    if n_types == 0 || u_rows.len() != n_types || type_dist.len() != n_types {
        return Err(ModelError::Invalid("row count mismatch".into()));
    }
    let d = v_rows[0].len();
    let mut principal_reward = Vec::with_capacity(n_types * d);
    let mut agent_reward = Vec::with_capacity(n_types * d);
    for t in 0..n_types {
        if v_rows[t].len() != d || u_rows[t].len() != d {
            return Err(ModelError::Invalid("ragged reward rows".into()));
        }
        principal_reward.extend_from_slice(&u_rows[t]);
        agent_reward.extend_from_slice(&v_rows[t]);
    }
    let inst = ProblemInstance {
        n_types,
        n_actions: d,
        n_agent_actions: 1,
        n_outcomes: 1,
        type_dist: type_dist.to_vec(),
        principal_reward,
        agent_reward,
        outcome_dist: vec![1.0; n_types * d],
        gamma,
        bound,
        seed: None,
    };
    inst.validate()?;
    Ok(inst)
}

/// Minimal gap requirements for instances generated angles-first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapRequirements {
    /// Lower bound for the pairwise gaps `chi`, `chi_bar` and for `chi_tilde`
    /// short of its 0.1 cap.
    pub min_gap: f64,
    /// Lower bound for every `|alpha_i - pi/2|` on polar coordinates.
    pub min_half_gap: f64,
}

impl Default for GapRequirements {
    fn default() -> Self {
        Self { min_gap: 0.3, min_half_gap: 0.12 }
    }
}

/// Output of the angles-first generator: the instance together with the
/// isometry under which the planted angles are exact.
pub struct PlantedInstance {
    pub inst: ProblemInstance,
    pub iso: Isometry,
    pub angles: RewardAngles,
    pub gaps: GapProfile,
}

/// Generates an instance by sampling reward angles that respect the gap
/// requirements, mapping them back through a fresh isometry, and scaling the
/// rows into generic position.
pub fn plant_gapped_instance(
    n_types: usize,
    d: usize,
    req: &GapRequirements,
    gamma: f64,
    bound: f64,
    seed: u64,
) -> Result<PlantedInstance, ModelError> {
    use rand::SeedableRng;
    if d < 3 {
        return Err(ModelError::Invalid("planted instances need d >= 3".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let k = d - 2;
    const TRIES: usize = 400;
    'outer: for attempt in 0..TRIES {
        let iso = Isometry::sample(d, seed.wrapping_add(0x5bd1_e995).wrapping_add(attempt as u64))?;
        let mut coords: Vec<Vec<f64>> = Vec::with_capacity(n_types);
        for _ in 0..n_types {
            let mut c = Vec::with_capacity(k);
            for _ in 0..k - 1 {
                // Polar angle away from {0, pi/2, pi}.
                let half = rng.random::<f64>() < 0.5;
                let lo = req.min_half_gap.max(0.05);
                let v = rng.random_range(lo..PI / 2.0 - req.min_half_gap);
                c.push(if half { v } else { PI - v });
            }
            c.push(rng.random_range(0.0..TAU));
            coords.push(c);
        }
        let angles = RewardAngles {
            by_type: coords
                .iter()
                .map(|c| AngleVector::new(c.clone()))
                .collect::<Result<_, _>>()?,
        };
        if check_angle_assumptions(&angles, 1e-9).is_err() {
            continue 'outer;
        }
        let gaps = match gap_profile(&angles) {
            Ok(g) => g,
            Err(_) => continue 'outer,
        };
        let enough = gaps
            .chi
            .iter()
            .chain(&gaps.chi_bar)
            .filter(|g| g.is_finite())
            .all(|&g| g >= req.min_gap)
            && gaps
                .chi_tilde
                .iter()
                .filter(|g| g.is_finite())
                .all(|&g| g >= req.min_gap.min(0.09).min(req.min_half_gap));
        if !enough {
            continue 'outer;
        }
        // Map back: v_theta = scale * phi^{-1}(rho(alpha)) + shift * ones.
        let mut v_rows = Vec::with_capacity(n_types);
        let mut u_rows = Vec::with_capacity(n_types);
        for c in &coords {
            let dir = iso.apply_inverse(&rho(c));
            let scale = rng.random_range(0.3..0.9) * bound;
            let shift = rng.random_range(-0.05..0.05) * bound;
            let row: Vec<f64> = dir.iter().map(|&x| scale * x + shift).collect();
            if row.iter().any(|&x| x.abs() > bound) {
                continue 'outer;
            }
            v_rows.push(row);
            u_rows.push((0..d).map(|_| rng.random_range(-bound..bound)).collect());
        }
        let type_dist = balanced_dirichlet(n_types, &mut rng);
        let inst = instance_from_rewards(&v_rows, &u_rows, &type_dist, gamma, bound)?;
        let profile = reward_profile(&inst)?;
        let recovered = reward_angles(&profile, &iso, 1e-9)?;
        let planted_ok = recovered
            .by_type
            .iter()
            .zip(&angles.by_type)
            .all(|(a, b)| a.l1_distance(b) < 1e-7);
        if !planted_ok {
            continue 'outer;
        }
        return Ok(PlantedInstance { inst, iso, angles: recovered, gaps });
    }
    Err(ModelError::GenerationFailed(TRIES))
}

/// Type distribution bounded away from zero (mass at least half uniform).
fn balanced_dirichlet(k: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let raw = dirichlet_flat(k, rng);
    let floor = 0.5 / k as f64;
    let rem = 1.0 - floor * k as f64;
    raw.into_iter().map(|p| floor + rem * p).collect()
}
