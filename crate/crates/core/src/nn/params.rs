//! Named parameter storage, initialisation and the Adam optimiser.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Mat, Tape, Var};

/// Sub-network a parameter belongs to; decides which optimiser phase updates it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    Encoder,
    Decoder,
    Discriminator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub group: Group,
    /// Weight matrices of encoder convolutions carry the L2 penalty.
    pub l2: bool,
    pub value: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub params: Vec<Param>,
}

/// Index of a parameter inside a [`ParamStore`].
pub type ParamId = usize;

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, group: Group, l2: bool, value: Mat) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            l2,
            value,
        });
        self.params.len() - 1
    }

    /// Glorot-uniform weight matrix of shape `fan_in × fan_out`.
    pub fn glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        group: Group,
        l2: bool,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit));
        self.add(name, group, l2, value)
    }

    pub fn zeros(&mut self, name: impl Into<String>, group: Group, cols: usize) -> ParamId {
        self.add(name, group, false, Mat::zeros((1, cols)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.params[id].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.params[id].value
    }

    pub fn ids_in(&self, groups: &[Group]) -> Vec<ParamId> {
        (0..self.params.len())
            .filter(|&i| groups.contains(&self.params[i].group))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Places every parameter on the tape as a leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Adam state for a fixed subset of parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    ids: Vec<ParamId>,
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore, ids: Vec<ParamId>) -> Self {
        let m: Vec<Mat> = ids.iter().map(|&i| Mat::zeros(store.get(i).dim())).collect();
        Adam {
            config,
            ids,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// Applies one update; `grads[k]` is the gradient of `ids()[k]`, with
    /// `None` meaning zero.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<&Mat>]) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (k, &id) in self.ids.iter().enumerate() {
            let Some(g) = grads[k] else { continue };
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
            });
        }
    }
}

/// Relative error between reverse-mode gradients and central finite
/// differences of a scalar function built on a tape.
///
/// The error is `‖g_a − g_n‖ / max(‖g_a‖, ‖g_n‖, 1e-10)` with both gradients
/// flattened over all inputs.
pub fn gradient_check<F>(inputs: &[Mat], step: f64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[Mat]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.scalar(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out);

    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    let mut values = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Mat::zeros(input.dim()));
        for ((r, c), &orig) in input.indexed_iter() {
            values[k][[r, c]] = orig + step;
            let plus = eval(&values);
            values[k][[r, c]] = orig - step;
            let minus = eval(&values);
            values[k][[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[[r, c]];
            diff += (a - numeric) * (a - numeric);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-10)
}
