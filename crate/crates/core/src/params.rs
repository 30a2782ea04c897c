//! Model dimensions, activations, and the learnable tensors.
//!
//! No tensor is sized by the number of entities or relations, so one set of
//! parameters applies to any graph.

use rand::Rng;

use crate::tensor::{Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "idd",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "idd" | "identity" | "id" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn grad<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub dim: usize,
    pub heads: usize,
    pub relation_layers: usize,
    pub entity_layers: usize,
    pub relation_act: Activation,
    pub entity_act: Activation,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            dim: 32,
            heads: 8,
            relation_layers: 3,
            entity_layers: 5,
            relation_act: Activation::Relu,
            entity_act: Activation::Relu,
        }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "d={} H={} L_r={} L_e={} act={}/{}",
            self.dim,
            self.heads,
            self.relation_layers,
            self.entity_layers,
            self.relation_act.tag(),
            self.entity_act.tag()
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Belongs to the last entity layer or the scorer.
    pub final_layer: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Relation-encoder weights. Path and self transforms are indexed
/// `layer * heads + head`; the attention projection is per head and shared
/// by all layers; the attention vector is global.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationEncoderParams<T> {
    pub w_path: Vec<Matrix<T>>,
    pub w_self: Vec<Matrix<T>>,
    pub w_attn: Vec<Matrix<T>>,
    /// Length `2d`: first half scores the source, second half the target.
    pub attn: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntityEncoderParams<T> {
    pub w: Vec<Matrix<T>>,
    /// `d × 3d` gate projections over `[source ‖ relation ‖ query relation]`.
    pub w_gate: Vec<Matrix<T>>,
    pub v_gate: Vec<Vec<T>>,
    pub scorer: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub dims: Dims,
    pub relation: RelationEncoderParams<T>,
    pub entity: EntityEncoderParams<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(dims: Dims) -> Self {
        let d = dims.dim;
        let lh = dims.relation_layers * dims.heads;
        ModelParams {
            dims,
            relation: RelationEncoderParams {
                w_path: (0..lh).map(|_| Matrix::zeros(d, d)).collect(),
                w_self: (0..lh).map(|_| Matrix::zeros(d, d)).collect(),
                w_attn: (0..dims.heads).map(|_| Matrix::zeros(d, d)).collect(),
                attn: vec![T::zero(); 2 * d],
            },
            entity: EntityEncoderParams {
                w: (0..dims.entity_layers).map(|_| Matrix::zeros(d, d)).collect(),
                w_gate: (0..dims.entity_layers).map(|_| Matrix::zeros(d, 3 * d)).collect(),
                v_gate: (0..dims.entity_layers).map(|_| vec![T::zero(); d]).collect(),
                scorer: vec![T::zero(); d],
            },
        }
    }

    /// Glorot-uniform initialization of every tensor.
    pub fn init<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        let specs = tensor_specs(&dims);
        for (spec, t) in specs.iter().zip(p.tensors_mut()) {
            let (fan_in, fan_out) = if spec.rows == 1 {
                (spec.cols, 1)
            } else {
                (spec.cols, spec.rows)
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in t.iter_mut() {
                *x = T::lit(rng.gen_range(-bound..bound));
            }
        }
        p
    }

    /// Tensors in declaration order, matching [`tensor_specs`].
    pub fn tensors(&self) -> Vec<&[T]> {
        let r = &self.relation;
        let e = &self.entity;
        let mut out: Vec<&[T]> = Vec::new();
        out.extend(r.w_path.iter().map(Matrix::as_slice));
        out.extend(r.w_self.iter().map(Matrix::as_slice));
        out.extend(r.w_attn.iter().map(Matrix::as_slice));
        out.push(&r.attn);
        for l in 0..self.dims.entity_layers {
            out.push(e.w[l].as_slice());
            out.push(e.w_gate[l].as_slice());
            out.push(&e.v_gate[l]);
        }
        out.push(&e.scorer);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let r = &mut self.relation;
        let e = &mut self.entity;
        let mut out: Vec<&mut [T]> = Vec::new();
        out.extend(r.w_path.iter_mut().map(Matrix::as_mut_slice));
        out.extend(r.w_self.iter_mut().map(Matrix::as_mut_slice));
        out.extend(r.w_attn.iter_mut().map(Matrix::as_mut_slice));
        out.push(&mut r.attn);
        for ((w, g), v) in e.w.iter_mut().zip(e.w_gate.iter_mut()).zip(e.v_gate.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(g.as_mut_slice());
            out.push(v);
        }
        out.push(&mut e.scorer);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn squared_norm(&self) -> T {
        self.tensors().iter().flat_map(|t| t.iter()).map(|&x| x * x).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(self.dims);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = U::lit(s.as_f64());
            }
        }
        out
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, scale: T, other: &ModelParams<T>) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = T::zero());
        }
    }
}

/// Names and shapes of every tensor, in declaration order.
pub fn tensor_specs(dims: &Dims) -> Vec<TensorSpec> {
    let d = dims.dim;
    let mut out = Vec::new();
    let spec = |name: String, rows, cols, final_layer| TensorSpec {
        name,
        rows,
        cols,
        final_layer,
    };
    for kind in ["w_path", "w_self"] {
        for l in 0..dims.relation_layers {
            for h in 0..dims.heads {
                out.push(spec(format!("rel.{kind}.{l}.{h}"), d, d, false));
            }
        }
    }
    for h in 0..dims.heads {
        out.push(spec(format!("rel.w_attn.{h}"), d, d, false));
    }
    out.push(spec("rel.attn".into(), 1, 2 * d, false));
    for l in 0..dims.entity_layers {
        let last = l + 1 == dims.entity_layers;
        out.push(spec(format!("ent.w.{l}"), d, d, last));
        out.push(spec(format!("ent.w_gate.{l}"), d, 3 * d, last));
        out.push(spec(format!("ent.v_gate.{l}"), 1, d, last));
    }
    out.push(spec("ent.scorer".into(), 1, d, true));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn specs_match_tensors() {
        let dims = Dims {
            dim: 3,
            heads: 2,
            relation_layers: 2,
            entity_layers: 3,
            ..Dims::default()
        };
        let p = ModelParams::<f64>::init(dims, &mut ChaCha8Rng::seed_from_u64(1));
        let specs = tensor_specs(&dims);
        let tensors = p.tensors();
        assert_eq!(specs.len(), tensors.len());
        for (s, t) in specs.iter().zip(&tensors) {
            assert_eq!(s.len(), t.len(), "{}", s.name);
        }
        let finals: Vec<_> = specs
            .iter()
            .filter(|s| s.final_layer)
            .map(|s| s.name.as_str())
            .collect();
        assert_eq!(finals, ["ent.w.2", "ent.w_gate.2", "ent.v_gate.2", "ent.scorer"]);
        assert_eq!(p.cast::<f32>().cast::<f64>().dims, dims);
    }

    #[test]
    fn activation_tags_round_trip() {
        for a in [Activation::Identity, Activation::Relu, Activation::Tanh] {
            assert_eq!(Activation::parse(a.tag()), Some(a));
            assert_eq!(Activation::from_code(a.code()), Some(a));
        }
    }
}
