use super::TrainError;
use crate::autodiff::Tensor;
use crate::network::NetworkParams;

/// Velocity buffers, one per parameter tensor in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams) -> Self {
        let velocity = params.named_tensors().iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        OptimizerState { velocity, step: 0 }
    }

    pub fn for_shapes(sizes: &[usize]) -> Self {
        OptimizerState { velocity: sizes.iter().map(|&n| vec![0.0; n]).collect(), step: 0 }
    }
}

/// `v <- rho v + g; theta <- theta - lr v`, in place. Every parameter needs a
/// gradient.
pub fn sgd_momentum_step(
    params: &mut [&mut Tensor],
    grads: &[Option<Vec<f64>>],
    state: &mut OptimizerState,
    lr: f64,
    rho: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(TrainError::Config(format!(
            "{} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (index, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocity).enumerate() {
        let reason = match g {
            None => "missing gradient".to_string(),
            Some(g) if g.len() != p.numel() || v.len() != p.numel() => {
                format!("gradient of length {} for {} values", g.len(), p.numel())
            }
            Some(_) => continue,
        };
        return Err(TrainError::Gradient { index, reason });
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        let g = g.as_ref().expect("checked above");
        for ((theta, &gi), vi) in p.values_mut().iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = rho * *vi + gi;
            *theta -= lr * *vi;
        }
    }
    state.step += 1;
    Ok(())
}
