//! Parameter groups, Adam, learning-rate schedules and the finite-difference
//! gradient oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    GaussXyz,
    GaussRotation,
    GaussScaling,
    GaussColor,
    GaussOpacity,
    Texture,
    Pose,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            ParamKind::GaussXyz => "gauss_xyz",
            ParamKind::GaussRotation => "gauss_rotation",
            ParamKind::GaussScaling => "gauss_scaling",
            ParamKind::GaussColor => "gauss_color",
            ParamKind::GaussOpacity => "gauss_opacity",
            ParamKind::Texture => "texture",
            ParamKind::Pose => "pose",
        }
    }

    /// Central-difference step used by [`finite_diff_check`].
    pub fn fd_step(self) -> f64 {
        match self {
            ParamKind::GaussXyz | ParamKind::GaussRotation | ParamKind::GaussScaling | ParamKind::Pose => 1e-3,
            ParamKind::GaussColor | ParamKind::GaussOpacity | ParamKind::Texture => 1e-4,
        }
    }
}

/// Exponential decay from `start` to `end` over `total` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub total: u64,
}

impl Schedule {
    pub fn new(start: f64, end: f64, total: u64) -> Result<Self> {
        if !(end > 0.0 && start >= end) {
            return Err(Error::InvalidSpec(format!("schedule needs start >= end > 0, got {start} -> {end}")));
        }
        Ok(Self { start, end, total })
    }
}

/// `start·(end/start)^(step/total)`.
pub fn lr_at(s: &Schedule, step: u64) -> Result<f64> {
    if step > s.total {
        return Err(Error::StepOutOfRange { step, total: s.total });
    }
    if s.total == 0 {
        return Ok(s.start);
    }
    Ok(s.start * (s.end / s.start).powf(step as f64 / s.total as f64))
}

/// A flat block of optimizable values with gradients and a learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub kind: ParamKind,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub lr: f64,
    pub schedule: Option<Schedule>,
}

impl ParamGroup {
    pub fn new(kind: ParamKind, values: Vec<f64>, lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidSpec(format!("{}: learning rate must be positive", kind.name())));
        }
        let grads = vec![0.0; values.len()];
        Ok(Self { kind, values, grads, lr, schedule: None })
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Learning rate for the given (zero-based) step.
    pub fn lr_for(&self, step: u64) -> f64 {
        match &self.schedule {
            Some(s) => lr_at(s, step.min(s.total)).expect("clamped step"),
            None => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update, followed by the group's constraint
/// (opacity clamp or quaternion renormalization).
pub fn adam_step(group: &mut ParamGroup, state: &mut AdamState) -> Result<()> {
    if state.m.len() != group.values.len() || group.grads.len() != group.values.len() {
        return Err(Error::DimensionMismatch(format!("{}: optimizer state size", group.kind.name())));
    }
    if let Some(i) = group.grads.iter().position(|g| !g.is_finite()) {
        group.zero_grad();
        return Err(Error::NonFiniteGradient(format!("{}[{i}]", group.kind.name())));
    }
    let lr = group.lr_for(state.step);
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..group.values.len() {
        let g = group.grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        if g == 0.0 && state.m[i] == 0.0 {
            continue;
        }
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        group.values[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    match group.kind {
        ParamKind::GaussOpacity => group.values.iter_mut().for_each(|o| *o = o.clamp(0.0, 1.0)),
        ParamKind::GaussRotation => {
            for q in group.values.chunks_mut(4) {
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    q.iter_mut().for_each(|v| *v /= n);
                }
            }
        }
        _ => {}
    }
    Ok(())
}

/// Summary of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdReport {
    pub probes: usize,
    pub retained: usize,
    pub excluded: usize,
    pub max_rel: f64,
    pub median_rel: f64,
    pub pass_fraction: f64,
    pub passed: bool,
    /// `(group, index, analytic, numeric)` for probes at or above tolerance.
    pub failures: Vec<(String, usize, f64, f64)>,
}

pub const FD_REL_TOL: f64 = 1e-2;
pub const FD_PASS_FRACTION: f64 = 0.95;
/// Floor on the denominator of the relative error.
pub const FD_REL_FLOOR: f64 = 1e-6;

/// Compares the analytic gradients stored in `groups` against central
/// differences of `f`. `f` returns the loss and a signature of every
/// discrete decision; probes whose perturbation changes the signature are
/// excluded.
pub fn finite_diff_check<F>(mut f: F, groups: &[ParamGroup], probes: usize, seed: u64) -> FdReport
where
    F: FnMut(&[ParamGroup]) -> (f64, u64),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nonempty: Vec<usize> = (0..groups.len()).filter(|&g| !groups[g].is_empty()).collect();
    let (_, base_gate) = f(groups);
    let mut work = groups.to_vec();
    let mut rels = Vec::new();
    let mut failures = Vec::new();
    let mut excluded = 0;
    let mut done = 0;
    for p in 0..probes {
        if nonempty.is_empty() {
            break;
        }
        let gi = nonempty[p % nonempty.len()];
        let idx = rng.random_range(0..groups[gi].len());
        let h = groups[gi].kind.fd_step();
        let orig = groups[gi].values[idx];
        done += 1;
        work[gi].values[idx] = orig + h;
        let (lp, gp) = f(&work);
        work[gi].values[idx] = orig - h;
        let (lm, gm) = f(&work);
        work[gi].values[idx] = orig;
        if gp != base_gate || gm != base_gate {
            excluded += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let analytic = groups[gi].grads[idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_REL_FLOOR);
        if !(rel < FD_REL_TOL) {
            failures.push((groups[gi].kind.name().to_string(), idx, analytic, numeric));
        }
        rels.push(rel);
    }
    let retained = rels.len();
    let ok = rels.iter().filter(|r| **r < FD_REL_TOL).count();
    let mut sorted = rels.clone();
    sorted.sort_by(f64::total_cmp);
    let pass_fraction = if retained == 0 { 0.0 } else { ok as f64 / retained as f64 };
    FdReport {
        probes: done,
        retained,
        excluded,
        max_rel: sorted.last().copied().unwrap_or(0.0),
        median_rel: if retained == 0 { 0.0 } else { sorted[retained / 2] },
        pass_fraction,
        passed: retained > 0 && pass_fraction >= FD_PASS_FRACTION,
        failures,
    }
}
