use crate::error::{Error, Result};
use crate::model::{Group, MultitaskNet};
use crate::tensor::{Gradients, Tensor};

/// Momentum buffers for one optimizer. Only the parameters of `groups` are
/// ever stepped; the buffers of the others stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    groups: Vec<Group>,
    velocity: Vec<Vec<f64>>,
    steps: u64,
}

impl SgdState {
    pub fn new(net: &MultitaskNet, groups: &[Group]) -> Self {
        SgdState {
            groups: groups.to_vec(),
            velocity: net.parameters().iter().map(|p| vec![0.0; p.value.len()]).collect(),
            steps: 0,
        }
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.velocity
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_steps(&mut self, steps: u64) {
        self.steps = steps;
    }

    pub fn owns(&self, group: Group) -> bool {
        self.groups.contains(&group)
    }
}

/// Coefficients of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
}

/// `v ← μ·v + (g + λ·w)`, `w ← w − η·v` for one parameter buffer.
pub fn sgd_update(w: &mut [f64], v: &mut [f64], g: &[f64], cfg: SgdConfig) -> Result<()> {
    if w.len() != g.len() || v.len() != w.len() {
        return Err(Error::ShapeMismatch {
            op: "sgd_step",
            left: vec![w.len()],
            right: vec![g.len()],
        });
    }
    for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = cfg.momentum * *vi + (gi + cfg.l2 * *wi);
        *wi -= cfg.learning_rate * *vi;
    }
    Ok(())
}

/// Step every parameter of the optimizer's groups. `views` are the tensors
/// bound on the tape that produced `grads`.
pub fn sgd_step(
    net: &mut MultitaskNet,
    views: &[Tensor],
    grads: &Gradients,
    state: &mut SgdState,
    cfg: SgdConfig,
) -> Result<()> {
    let owned: Vec<usize> = state
        .groups
        .iter()
        .flat_map(|&g| net.group_indices(g))
        .collect();
    // Check everything first so a failure leaves the net untouched.
    for &i in &owned {
        let g = grads.get(&views[i]).ok_or_else(|| {
            Error::invalid(
                "sgd_step",
                format!("no gradient for {}", net.parameters()[i].name),
            )
        })?;
        if g.len() != net.parameters()[i].value.len() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: net.parameters()[i].value.shape().to_vec(),
                right: vec![g.len()],
            });
        }
    }
    for &i in &owned {
        let g = grads.get(&views[i]).expect("checked above");
        let w = net.value_mut(i).data_mut();
        sgd_update(w, &mut state.velocity[i], g, cfg)?;
    }
    state.steps += 1;
    Ok(())
}
