//! Small dense linear algebra used by the agent.
//!
//! Everything here works on row-major `Vec<f64>` storage. Dimensions are tiny
//! (a few dozen at most) so there is no blocking or SIMD; what matters is that
//! the Gram inverse is maintained with O(d²) rank-one updates and never
//! re-inverted while acting.

use thiserror::Error;

/// Slack allowed on the unit-norm requirement for features.
pub const FEATURE_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("feature dimension must be at least 1")]
    ZeroDimension,
    #[error("ridge regularizer must be positive, got {0}")]
    NonPositiveRegularizer(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature norm {0} exceeds 1")]
    FeatureNormTooLarge(f64),
    #[error("feature contains a non-finite entry")]
    NonFinite,
}

/// A feature vector φ(x, a) with Euclidean norm at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(entries: Vec<f64>) -> Result<Self, LinalgError> {
        if entries.is_empty() {
            return Err(LinalgError::ZeroDimension);
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let norm = l2_norm(&entries);
        if norm > 1.0 + FEATURE_NORM_TOLERANCE {
            return Err(LinalgError::FeatureNormTooLarge(norm));
        }
        Ok(Self(entries))
    }

    /// Canonical basis vector e_index of the given dimension.
    pub fn one_hot(dim: usize, index: usize) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::ZeroDimension);
        }
        if index >= dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim,
                found: index + 1,
            });
        }
        let mut entries = vec![0.0; dim];
        entries[index] = 1.0;
        Ok(Self(entries))
    }

    pub fn zeros(dim: usize) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::ZeroDimension);
        }
        Ok(Self(vec![0.0; dim]))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// ⟨w, φ⟩. Panics if the lengths differ.
    pub fn dot(&self, w: &[f64]) -> f64 {
        assert_eq!(w.len(), self.0.len(), "weight/feature length mismatch");
        dot(&self.0, w)
    }
}

/// Running inverse of Λ = λI + Σ φφᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct GramInverse {
    dim: usize,
    lambda_reg: f64,
    inv: Vec<f64>,
    scratch: Vec<f64>,
}

impl GramInverse {
    /// Inverse of λI, i.e. (1/λ)·I.
    pub fn new(dim: usize, lambda_reg: f64) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::ZeroDimension);
        }
        if !(lambda_reg > 0.0) || !lambda_reg.is_finite() {
            return Err(LinalgError::NonPositiveRegularizer(lambda_reg));
        }
        let mut inv = vec![0.0; dim * dim];
        for i in 0..dim {
            inv[i * dim + i] = 1.0 / lambda_reg;
        }
        Ok(Self {
            dim,
            lambda_reg,
            inv,
            scratch: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda_reg(&self) -> f64 {
        self.lambda_reg
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.inv[row * self.dim + col]
    }

    /// The inverse as a vector of rows.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.inv.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    fn check_dim(&self, found: usize) -> Result<(), LinalgError> {
        if found != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    /// Sherman-Morrison: replaces Λ⁻¹ with (Λ + φφᵀ)⁻¹ in place.
    pub fn rank_one_update(&mut self, phi: &FeatureVector) -> Result<(), LinalgError> {
        self.check_dim(phi.dim())?;
        let d = self.dim;
        let x = phi.as_slice();
        for i in 0..d {
            self.scratch[i] = dot(&self.inv[i * d..(i + 1) * d], x);
        }
        let denom = 1.0 + dot(x, &self.scratch);
        for i in 0..d {
            let ui = self.scratch[i] / denom;
            if ui == 0.0 {
                continue;
            }
            let row = &mut self.inv[i * d..(i + 1) * d];
            for (entry, uj) in row.iter_mut().zip(&self.scratch) {
                *entry -= ui * uj;
            }
        }
        // average with the transpose to keep round-off from accumulating asymmetrically
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = 0.5 * (self.inv[i * d + j] + self.inv[j * d + i]);
                self.inv[i * d + j] = avg;
                self.inv[j * d + i] = avg;
            }
        }
        Ok(())
    }

    /// Non-mutating form of [`GramInverse::rank_one_update`].
    pub fn updated(&self, phi: &FeatureVector) -> Result<Self, LinalgError> {
        let mut next = self.clone();
        next.rank_one_update(phi)?;
        Ok(next)
    }

    /// φᵀ Λ⁻¹ φ, clamped at zero against round-off.
    pub fn quadratic_form(&self, phi: &FeatureVector) -> f64 {
        assert_eq!(phi.dim(), self.dim, "feature/Gram dimension mismatch");
        let d = self.dim;
        let x = phi.as_slice();
        let mut acc = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            acc += xi * dot(&self.inv[i * d..(i + 1) * d], x);
        }
        acc.max(0.0)
    }

    /// Λ⁻¹ v.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "vector/Gram dimension mismatch");
        self.inv.chunks(self.dim).map(|row| dot(row, v)).collect()
    }
}

/// Unscaled exploration bonus √(φᵀ Λ⁻¹ φ).
pub fn bonus_quadratic_form(g: &GramInverse, phi: &FeatureVector) -> f64 {
    g.quadratic_form(phi).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Reward,
    Utility,
}

/// Right-hand sides Σ_τ φ_τ·y_τ of the two ridge regressions at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeAccumulator {
    reward: Vec<f64>,
    utility: Vec<f64>,
}

impl RidgeAccumulator {
    pub fn new(dim: usize) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::ZeroDimension);
        }
        Ok(Self {
            reward: vec![0.0; dim],
            utility: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.reward.len()
    }

    pub fn clear(&mut self) {
        self.reward.iter_mut().for_each(|v| *v = 0.0);
        self.utility.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds φ·reward_target and φ·utility_target.
    pub fn add(&mut self, phi: &FeatureVector, reward_target: f64, utility_target: f64) {
        assert_eq!(phi.dim(), self.dim(), "feature/accumulator dimension mismatch");
        axpy(reward_target, phi.as_slice(), &mut self.reward);
        axpy(utility_target, phi.as_slice(), &mut self.utility);
    }

    /// Adds `scale`·`v` to the sums of one objective. `v` need not be a unit feature.
    pub fn add_scaled(&mut self, objective: Objective, scale: f64, v: &[f64]) {
        assert_eq!(v.len(), self.dim(), "vector/accumulator dimension mismatch");
        axpy(scale, v, self.sums_mut(objective));
    }

    pub fn target_sums(&self, objective: Objective) -> &[f64] {
        match objective {
            Objective::Reward => &self.reward,
            Objective::Utility => &self.utility,
        }
    }

    fn sums_mut(&mut self, objective: Objective) -> &mut Vec<f64> {
        match objective {
            Objective::Reward => &mut self.reward,
            Objective::Utility => &mut self.utility,
        }
    }
}

/// Ridge weights w = Λ⁻¹ Σ φ_τ y_τ for one objective.
pub fn ridge_solve(
    g: &GramInverse,
    acc: &RidgeAccumulator,
    objective: Objective,
) -> Result<Vec<f64>, LinalgError> {
    g.check_dim(acc.dim())?;
    Ok(g.apply(acc.target_sums(objective)))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    if alpha == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
