use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// Shape of the recurrent policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub vocab: usize,
    pub hidden: usize,
}

impl Default for Dims {
    /// The default vocabulary size and hidden width.
    fn default() -> Self {
        Self {
            vocab: crate::vocab::Vocabulary::default().len(),
            hidden: Self::DEFAULT_HIDDEN,
        }
    }
}

impl Dims {
    pub const DEFAULT_HIDDEN: usize = 32;

    /// Number of scalar parameters.
    pub fn flat_len(&self) -> usize {
        let (v, d) = (self.vocab, self.hidden);
        v * d + d * d + d * d + d + v * d + v
    }

    pub fn emb(&self) -> Range<usize> {
        0..self.vocab * self.hidden
    }

    pub fn w_x(&self) -> Range<usize> {
        let s = self.emb().end;
        s..s + self.hidden * self.hidden
    }

    pub fn w_h(&self) -> Range<usize> {
        let s = self.w_x().end;
        s..s + self.hidden * self.hidden
    }

    pub fn b_h(&self) -> Range<usize> {
        let s = self.w_h().end;
        s..s + self.hidden
    }

    pub fn w_o(&self) -> Range<usize> {
        let s = self.b_h().end;
        s..s + self.vocab * self.hidden
    }

    pub fn b_o(&self) -> Range<usize> {
        let s = self.w_o().end;
        s..s + self.vocab
    }
}

/// All policy weights stored as one flat vector.
///
/// Layout (row-major): embedding `V×d`, input weights `W_x` `d×d`, recurrent weights
/// `W_h` `d×d`, hidden bias `d`, output projection `W_o` `V×d`, output bias `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    dims: Dims,
    flat: Vec<f64>,
}

impl PolicyParameters {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            flat: vec![0.0; dims.flat_len()],
            dims,
        }
    }

    pub fn from_flat(dims: Dims, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != dims.flat_len() {
            return Err(Error::Contract(format!(
                "flat vector has {} entries, dims {:?} need {}",
                flat.len(),
                dims,
                dims.flat_len()
            )));
        }
        if let Some(i) = flat.iter().position(|x| !x.is_finite()) {
            return Err(Error::numerical(
                format!("parameter {i}"),
                "non-finite value",
            ));
        }
        Ok(Self { dims, flat })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn emb(&self) -> &[f64] {
        &self.flat[self.dims.emb()]
    }

    pub fn w_x(&self) -> &[f64] {
        &self.flat[self.dims.w_x()]
    }

    pub fn w_h(&self) -> &[f64] {
        &self.flat[self.dims.w_h()]
    }

    pub fn b_h(&self) -> &[f64] {
        &self.flat[self.dims.b_h()]
    }

    pub fn w_o(&self) -> &[f64] {
        &self.flat[self.dims.w_o()]
    }

    pub fn b_o(&self) -> &[f64] {
        &self.flat[self.dims.b_o()]
    }

    pub fn w_o_mut(&mut self) -> &mut [f64] {
        let r = self.dims.w_o();
        &mut self.flat[r]
    }

    pub fn b_o_mut(&mut self) -> &mut [f64] {
        let r = self.dims.b_o();
        &mut self.flat[r]
    }

    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|x| x.is_finite())
    }

    /// Euclidean distance between two parameter vectors of equal shape.
    pub fn distance(&self, other: &Self) -> f64 {
        self.flat
            .iter()
            .zip(&other.flat)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Weights uniform in `[-1/sqrt(d), 1/sqrt(d)]`, biases zero.
pub fn init_params(seed: u64, dims: Dims) -> Result<PolicyParameters> {
    if dims.hidden < 1 {
        return Err(Error::Config("hidden size must be at least 1".into()));
    }
    if dims.vocab < crate::vocab::FIXED_SYMBOLS {
        return Err(Error::Config(format!(
            "vocabulary of {} symbols cannot hold the {} structural and label tokens",
            dims.vocab,
            crate::vocab::FIXED_SYMBOLS
        )));
    }
    let scale = init_scale(dims.hidden);
    let mut rng = substream(seed, &[0x1417]);
    let mut p = PolicyParameters::zeros(dims);
    for range in [dims.emb(), dims.w_x(), dims.w_h(), dims.w_o()] {
        for x in &mut p.flat[range] {
            *x = rng.gen_range(-scale..=scale);
        }
    }
    Ok(p)
}

pub fn init_scale(hidden: usize) -> f64 {
    1.0 / (hidden as f64).sqrt()
}

/// Element-wise `(1 - t) * a + t * b`.
pub fn interpolate_params(
    a: &PolicyParameters,
    b: &PolicyParameters,
    t: f64,
) -> Result<PolicyParameters> {
    if a.dims != b.dims {
        return Err(Error::Contract(format!(
            "cannot interpolate {:?} with {:?}",
            a.dims, b.dims
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!(
            "interpolation weight {t} outside [0, 1]"
        )));
    }
    let flat = if t == 0.0 {
        a.flat.clone()
    } else if t == 1.0 {
        b.flat.clone()
    } else {
        a.flat
            .iter()
            .zip(&b.flat)
            .map(|(x, y)| (1.0 - t) * x + t * y)
            .collect()
    };
    Ok(PolicyParameters { dims: a.dims, flat })
}

/// Role of a frozen parameter copy in the policy-gradient objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotRole {
    Reference,
    Old,
}

/// Immutable copy of the parameters.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    role: SnapshotRole,
    params: PolicyParameters,
}

impl PolicySnapshot {
    pub fn new(role: SnapshotRole, params: &PolicyParameters) -> Self {
        Self {
            role,
            params: params.clone(),
        }
    }

    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    pub fn params(&self) -> &PolicyParameters {
        &self.params
    }
}
