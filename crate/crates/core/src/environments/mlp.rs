//! Small fully connected tanh network used as a differentiable control policy.
//!
//! Hidden layers use `tanh`; the output is squashed to `[-scale, scale]` by `scale * tanh(.)`.
//! Parameters are stored flat, layer by layer: the row-major weight matrix
//! (`out x in`) followed by the bias vector.
//!
//! # Weight file
//!
//! ```text
//! layers: 2 32 32 1
//! <weight or bias, one per line>
//! ```

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    output_scale: f64,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpPolicy {
    pub fn new(layer_sizes: Vec<usize>, params: Vec<f64>, output_scale: f64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let expected = param_count(&layer_sizes);
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "{expected} parameters expected for {layer_sizes:?}, got {}",
                params.len()
            )));
        }
        Ok(Self {
            layer_sizes,
            params,
            output_scale,
        })
    }

    pub fn zeros(layer_sizes: Vec<usize>, output_scale: f64) -> Result<Self> {
        let n = param_count(&layer_sizes);
        Self::new(layer_sizes, vec![0.0; n], output_scale)
    }

    /// Glorot-uniform weights and zero biases.
    pub fn random(layer_sizes: Vec<usize>, output_scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(&layer_sizes));
        for w in layer_sizes.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-limit..limit)));
            params.resize(params.len() + w[1], 0.0);
        }
        Self::new(layer_sizes, params, output_scale)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Forward pass with the stored (constant) parameters.
    pub fn forward<R: Real>(&self, input: &[R]) -> Result<Vec<R>> {
        let sizes = &self.layer_sizes;
        check_input(sizes, input.len())?;
        let mut activ: Vec<R> = input.to_vec();
        let mut offset = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let last = l + 2 == sizes.len();
            activ = (0..n_out)
                .map(|o| {
                    let z = R::affine(bias[o], &weights[o * n_in..(o + 1) * n_in], &activ);
                    if last {
                        z.tanh() * self.output_scale
                    } else {
                        z.tanh()
                    }
                })
                .collect();
        }
        Ok(activ)
    }

    pub fn forward_f64(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("layers:");
        for s in &self.layer_sizes {
            let _ = write!(out, " {s}");
        }
        out.push('\n');
        for p in &self.params {
            // `{:?}` prints the shortest representation that round-trips exactly.
            let _ = writeln!(out, "{p:?}");
        }
        out
    }

    pub fn from_text(text: &str, output_scale: f64) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("weights", "empty file"))?;
        let sizes = header
            .strip_prefix("layers:")
            .ok_or_else(|| Error::parse("weights", format!("bad header {header:?}")))?
            .split_whitespace()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|e| Error::parse("weights header", e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let params = lines
            .enumerate()
            .map(|(i, l)| {
                l.parse::<f64>()
                    .map_err(|e| Error::parse(format!("weights line {}", i + 2), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes, params, output_scale)
    }
}

fn check_input(sizes: &[usize], got: usize) -> Result<()> {
    if got != sizes[0] {
        return Err(Error::Shape(format!(
            "policy expects {} inputs, got {}",
            sizes[0], got
        )));
    }
    Ok(())
}

/// Forward pass with an explicit parameter vector.
pub fn forward_with<R: Real>(
    sizes: &[usize],
    params: &[R],
    input: &[R],
    output_scale: f64,
) -> Result<Vec<R>> {
    check_input(sizes, input.len())?;
    let mut activ: Vec<R> = input.to_vec();
    let mut offset = 0;
    let n_layers = sizes.len() - 1;
    for (l, w) in sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &params[offset..offset + n_in * n_out];
        let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let last = l + 1 == n_layers;
        activ = (0..n_out)
            .map(|o| {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let z = R::dot(bias[o], row, &activ);
                if last {
                    z.tanh() * output_scale
                } else {
                    z.tanh()
                }
            })
            .collect();
    }
    Ok(activ)
}

/// Summary of one behavior-cloning run.
#[derive(Debug, Clone)]
pub struct CloneReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub epochs: usize,
}

/// Fits `policy` to `expert` on `states` by minimizing mean squared error with Adam.
///
/// Fails if the loss ever climbs above ten times its starting value.
pub fn behavior_clone(
    policy: &MlpPolicy,
    expert: impl Fn(&[f64]) -> Vec<f64>,
    states: &[Vec<f64>],
    epochs: usize,
    learning_rate: f64,
) -> Result<(MlpPolicy, CloneReport)> {
    fit(policy, expert, states, epochs, learning_rate, true)
}

/// Like [`behavior_clone`] but leaves every bias untouched.
///
/// Starting from zero biases, the result is an odd function of its input (tanh is odd), which
/// is what a sign-symmetric expert calls for.
pub fn behavior_clone_odd(
    policy: &MlpPolicy,
    expert: impl Fn(&[f64]) -> Vec<f64>,
    states: &[Vec<f64>],
    epochs: usize,
    learning_rate: f64,
) -> Result<(MlpPolicy, CloneReport)> {
    fit(policy, expert, states, epochs, learning_rate, false)
}

fn fit(
    policy: &MlpPolicy,
    expert: impl Fn(&[f64]) -> Vec<f64>,
    states: &[Vec<f64>],
    epochs: usize,
    learning_rate: f64,
    train_biases: bool,
) -> Result<(MlpPolicy, CloneReport)> {
    if states.is_empty() {
        return Err(Error::InvalidConfig(
            "behavior cloning needs at least one state".into(),
        ));
    }
    let targets: Vec<Vec<f64>> = states.iter().map(|s| expert(s)).collect();
    let sizes = policy.layer_sizes.clone();
    let scale = policy.output_scale;
    let mut params = policy.params.clone();
    let n = params.len();
    let mut trainable = vec![true; n];
    if !train_biases {
        let mut offset = 0;
        for w in sizes.windows(2) {
            offset += w[0] * w[1];
            trainable[offset..offset + w[1]].fill(false);
            offset += w[1];
        }
    }
    let (beta1, beta2, eps_adam): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let batch = 64.min(states.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut order: Vec<usize> = (0..states.len()).collect();
    let mut step = 0i32;

    let full_mse = |params: &[f64]| -> Result<f64> {
        let mut total = 0.0;
        for (s, y) in states.iter().zip(&targets) {
            let out = forward_with(&sizes, params, s, scale)?;
            total += out
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(total / states.len() as f64)
    };

    let initial = full_mse(&params)?;
    let mut last = initial;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let tape = Tape::new();
            let p: Vec<Var<'_>> = tape.inputs(&params);
            let mut loss = Var::constant(0.0);
            for &i in chunk {
                let input: Vec<Var<'_>> = states[i].iter().map(|&x| Var::constant(x)).collect();
                let out = forward_with(&sizes, &p, &input, scale)?;
                for (o, y) in out.iter().zip(&targets[i]) {
                    loss = loss + (*o - *y).square();
                }
            }
            loss = loss / chunk.len() as f64;
            let g = tape.gradient(loss, &p)?;
            step += 1;
            let (c1, c2) = (1.0 - beta1.powi(step), 1.0 - beta2.powi(step));
            for j in (0..n).filter(|&j| trainable[j]) {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                params[j] -= learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + eps_adam);
            }
        }
        last = full_mse(&params)?;
        if !last.is_finite() || last > 10.0 * initial.max(1e-12) {
            return Err(Error::Diverged { initial, last });
        }
    }
    let trained = MlpPolicy::new(sizes, params, scale)?;
    Ok((
        trained,
        CloneReport {
            initial_mse: initial,
            final_mse: last,
            epochs,
        },
    ))
}
