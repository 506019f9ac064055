use nncore::params::truncated_normal;
use nncore::{ParamId, ParamStore, Result, Tape, Tensor, Var};
use rand::Rng;

pub const INIT_STD: f64 = 0.02;

pub(crate) fn weight(store: &mut ParamStore, rng: &mut impl Rng, name: &str, shape: &[usize]) -> ParamId {
    store
        .insert(name, truncated_normal(rng, shape, INIT_STD))
        .expect("parameter names are unique")
}

fn filled(store: &mut ParamStore, name: &str, n: usize, v: f64) -> ParamId {
    store.insert(name, Tensor::filled(&[n], v)).expect("parameter names are unique")
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, din: usize, dout: usize) -> Self {
        Linear {
            w: weight(store, rng, &format!("{name}.w"), &[din, dout]),
            b: filled(store, &format!("{name}.b"), dout, 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNorm {
    g: ParamId,
    b: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            g: filled(store, &format!("{name}.g"), d, 1.0),
            b: filled(store, &format!("{name}.b"), d, 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.g);
        let b = tape.param(store, self.b);
        tape.layer_norm(x, g, b)
    }
}

/// Pre-norm transformer block: self-attention then a GELU MLP, each with a
/// residual connection.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl Block {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, hidden: usize) -> Self {
        Block {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            q: Linear::new(store, rng, &format!("{name}.q"), d, d),
            k: Linear::new(store, rng, &format!("{name}.k"), d, d),
            v: Linear::new(store, rng, &format!("{name}.v"), d, d),
            o: Linear::new(store, rng, &format!("{name}.o"), d, d),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), d, hidden),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, d),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        segments: &[usize],
        heads: usize,
        causal: bool,
    ) -> Result<Var> {
        let h = self.ln1.forward(tape, store, x)?;
        let q = self.q.forward(tape, store, h)?;
        let k = self.k.forward(tape, store, h)?;
        let v = self.v.forward(tape, store, h)?;
        let a = tape.attention(q, k, v, segments, heads, causal)?;
        let a = self.o.forward(tape, store, a)?;
        let x = tape.add(x, a)?;
        let h = self.ln2.forward(tape, store, x)?;
        let h = self.fc1.forward(tape, store, h)?;
        let h = tape.gelu(h)?;
        let h = self.fc2.forward(tape, store, h)?;
        tape.add(x, h)
    }
}
