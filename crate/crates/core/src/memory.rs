//! The two global memory banks.
//!
//! * [`FeatureMemory`] pairs a `K × d_u` profile memory with `K` slots of
//!   stored user-tower gradients. A user's profile attends over the profile
//!   rows; the same attention mixes the gradient slots into a personalised
//!   bias for the user-tower initialisation.
//! * [`TaskMemory`] holds `K` fast-weight matrices; the attention-weighted
//!   sum becomes the user's starting fast weights.
//!
//! Reads are pure. Writes are exponential moving averages gated by the
//! attention vector and need exclusive access to the bank.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FastWeights, LayerStack};
use crate::numerics::{cosine_sim, softmax, Matrix, Rng};

/// Softmax-normalised attention over the `K` memory slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionVector(Vec<f64>);

impl AttentionVector {
    /// Accepts any positive vector summing to one (within `1e-9`).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "attention weights must be non-negative and sum to 1, got {weights:?}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn one_hot(k: usize, slots: usize) -> Self {
        let mut w = vec![0.0; slots];
        w[k] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Rates for the three memory writes plus the bias scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryHyper {
    /// Profile-memory write rate.
    pub alpha: f64,
    /// Gradient-memory write rate.
    pub beta: f64,
    /// Task-memory write rate.
    pub gamma: f64,
    /// How much of the personalised bias is subtracted from the shared init.
    pub tau: f64,
}

impl Default for MemoryHyper {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.05,
            gamma: 0.1,
            tau: 0.1,
        }
    }
}

impl MemoryHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("tau", self.tau),
        ] {
            check_rate(name, v)?;
        }
        Ok(())
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMemory {
    profiles: Matrix,
    grads: Vec<LayerStack>,
}

impl FeatureMemory {
    pub fn new(profiles: Matrix, grads: Vec<LayerStack>) -> Result<Self> {
        if profiles.rows() == 0 {
            return Err(Error::Config("memory needs at least one slot".into()));
        }
        if grads.len() != profiles.rows() {
            return Err(Error::shape("FeatureMemory::new", profiles.rows(), grads.len()));
        }
        if grads.iter().any(|g| !g.same_shape(&grads[0])) {
            return Err(Error::Contract("gradient slots differ in shape".into()));
        }
        Ok(Self { profiles, grads })
    }

    /// Profile rows drawn from `N(0, 0.1²)`; gradient slots zero.
    pub fn init(slots: usize, user_tower: &LayerStack, rng: &mut Rng) -> Result<Self> {
        let profiles = rng.normal_matrix(slots, user_tower.input_dim(), 0.1);
        Self::new(profiles, vec![user_tower.zeros_like(); slots])
    }

    pub fn slots(&self) -> usize {
        self.profiles.rows()
    }

    pub fn profile_dim(&self) -> usize {
        self.profiles.cols()
    }

    pub fn profiles(&self) -> &Matrix {
        &self.profiles
    }

    pub fn grads(&self) -> &[LayerStack] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [LayerStack] {
        &mut self.grads
    }

    pub fn is_finite(&self) -> bool {
        self.profiles.is_finite() && self.grads.iter().all(LayerStack::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMemory {
    slots: Vec<Matrix>,
}

impl TaskMemory {
    pub fn new(slots: Vec<Matrix>) -> Result<Self> {
        let first = slots
            .first()
            .ok_or_else(|| Error::Config("memory needs at least one slot".into()))?;
        if first.cols() != 2 * first.rows() {
            return Err(Error::shape("TaskMemory::new", "d_e x 2d_e", first.shape_str()));
        }
        if let Some(bad) = slots.iter().find(|s| !s.same_shape(first)) {
            return Err(Error::shape("TaskMemory::new", first.shape_str(), bad.shape_str()));
        }
        Ok(Self { slots })
    }

    /// Every slot starts at `[½I | ½I]` plus `N(0, 0.01²)` noise.
    pub fn init(slots: usize, embed_dim: usize, rng: &mut Rng) -> Result<Self> {
        let base = FastWeights::averaging(embed_dim).into_matrix();
        let slots = (0..slots)
            .map(|_| {
                let mut m = base.clone();
                let noise = rng.normal_matrix(embed_dim, 2 * embed_dim, 0.01);
                m.axpy(1.0, &noise).map(|_| m)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(slots)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[Matrix] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [Matrix] {
        &mut self.slots
    }

    pub fn embed_dim(&self) -> usize {
        self.slots[0].rows()
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().all(Matrix::is_finite)
    }
}

/// Softmax over the cosine similarities between `profile` and each profile
/// row.
pub fn attend(profile: &[f64], mem: &FeatureMemory) -> Result<AttentionVector> {
    if profile.len() != mem.profile_dim() {
        return Err(Error::shape("attend", mem.profile_dim(), profile.len()));
    }
    let sims = (0..mem.slots())
        .map(|k| cosine_sim(profile, mem.profiles.row(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttentionVector(softmax(&sims)?))
}

/// `b_u = Σ_k a_k · grad_slot_k`, tensor by tensor.
pub fn bias_term(attention: &AttentionVector, mem: &FeatureMemory) -> Result<LayerStack> {
    check_slots("bias_term", attention, mem.slots())?;
    let mut bias = mem.grads[0].zeros_like();
    for (a, g) in attention.0.iter().zip(&mem.grads) {
        bias.axpy(*a, g)
            .map_err(|e| Error::Contract(format!("gradient slot shape drift: {e}")))?;
    }
    Ok(bias)
}

/// Attention-weighted sum of the task slots.
pub fn read_task(attention: &AttentionVector, cube: &TaskMemory) -> Result<FastWeights> {
    check_slots("read_task", attention, cube.len())?;
    let (r, c) = cube.slots[0].shape();
    let mut out = Matrix::zeros(r, c);
    for (a, m) in attention.0.iter().zip(&cube.slots) {
        out.axpy(*a, m)?;
    }
    FastWeights::new(out)
}

/// `M_P ← α · a pᵀ + (1 - α) · M_P`. The gradient slots are untouched.
pub fn write_profile(
    mem: &mut FeatureMemory,
    attention: &AttentionVector,
    profile: &[f64],
    alpha: f64,
) -> Result<()> {
    check_rate("alpha", alpha)?;
    check_slots("write_profile", attention, mem.slots())?;
    if profile.len() != mem.profile_dim() {
        return Err(Error::shape("write_profile", mem.profile_dim(), profile.len()));
    }
    for (k, &a) in attention.0.iter().enumerate() {
        for (m, &p) in mem.profiles.row_mut(k).iter_mut().zip(profile) {
            *m = alpha * (a * p) + (1.0 - alpha) * *m;
        }
    }
    Ok(())
}

/// `slot_k ← β · a_k · grad + (1 - β) · slot_k` for every slot.
pub fn write_grad(
    mem: &mut FeatureMemory,
    attention: &AttentionVector,
    grad: &LayerStack,
    beta: f64,
) -> Result<()> {
    check_rate("beta", beta)?;
    check_slots("write_grad", attention, mem.slots())?;
    if !grad.same_shape(&mem.grads[0]) {
        return Err(Error::Contract(format!(
            "gradient widths {:?} do not match memory slots {:?}",
            grad.widths(),
            mem.grads[0].widths()
        )));
    }
    for (slot, &a) in mem.grads.iter_mut().zip(&attention.0) {
        for (s, g) in slot.values_mut().zip(grad.values()) {
            *s = beta * (a * g) + (1.0 - beta) * *s;
        }
    }
    Ok(())
}

/// `slot_k ← γ · a_k · F + (1 - γ) · slot_k` for every slot.
pub fn write_task(
    cube: &mut TaskMemory,
    attention: &AttentionVector,
    fast: &FastWeights,
    gamma: f64,
) -> Result<()> {
    check_rate("gamma", gamma)?;
    check_slots("write_task", attention, cube.len())?;
    if !fast.matrix().same_shape(&cube.slots[0]) {
        return Err(Error::Contract(format!(
            "fast weights {} do not match task slots {}",
            fast.matrix().shape_str(),
            cube.slots[0].shape_str()
        )));
    }
    for (slot, &a) in cube.slots.iter_mut().zip(&attention.0) {
        for (s, &f) in slot.as_mut_slice().iter_mut().zip(fast.matrix().as_slice()) {
            *s = gamma * (a * f) + (1.0 - gamma) * *s;
        }
    }
    Ok(())
}

fn check_slots(op: &'static str, attention: &AttentionVector, slots: usize) -> Result<()> {
    if attention.len() != slots {
        return Err(Error::shape(op, format!("{slots} attention weights"), attention.len()));
    }
    Ok(())
}
