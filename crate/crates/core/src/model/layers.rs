use rand::Rng;
use rand_chacha::ChaCha8Rng;
use textgsl_autodiff::{ParamId, ParamStore, Scalar, Tensor, TensorError, Var};

use super::pass::Pass;

/// Registers parameters under a dotted `branch.layer.name` prefix and
/// initializes them from one seeded stream, in registration order.
pub struct ParamBuilder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> ParamBuilder<'_, T> {
    /// Uniform Xavier/Glorot initialization.
    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId, TensorError> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::lit(self.rng.gen_range(-a..a)))
            .collect();
        self.store.add(name, Tensor::matrix(fan_in, fan_out, data)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId, TensorError> {
        self.store.add(name, Tensor::filled(shape, T::lit(value)))
    }
}

/// `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self, TensorError> {
        Ok(Self {
            weight: b.xavier(&format!("{name}.weight"), fan_in, fan_out)?,
            bias: Some(b.constant(&format!("{name}.bias"), &[fan_out], 0.0)?),
        })
    }

    pub fn no_bias<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self, TensorError> {
        Ok(Self {
            weight: b.xavier(name, fan_in, fan_out)?,
            bias: None,
        })
    }

    pub fn apply<T: Scalar>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var, TensorError> {
        let w = pass.p(self.weight);
        let y = pass.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = pass.p(b);
                pass.tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Two-layer perceptron with a relu hidden layer of the output width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self, TensorError> {
        Ok(Self {
            hidden: Linear::new(b, &format!("{name}.hidden"), fan_in, fan_out)?,
            out: Linear::new(b, &format!("{name}.out"), fan_out, fan_out)?,
        })
    }

    pub fn apply<T: Scalar>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var, TensorError> {
        let h = self.hidden.apply(pass, x)?;
        let h = pass.tape.relu(h);
        self.out.apply(pass, h)
    }
}

/// Gated recurrent unit weights: input maps `W_*` (in × M), recurrent maps
/// `U_*` (M × M) and biases `b_*` for the update, reset and candidate paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub wz: ParamId,
    pub wr: ParamId,
    pub wh: ParamId,
    pub uz: ParamId,
    pub ur: ParamId,
    pub uh: ParamId,
    pub bz: ParamId,
    pub br: ParamId,
    pub bh: ParamId,
}

/// Gate activations and the new state of one GRU update.
#[derive(Debug, Clone, Copy)]
pub struct GruStep {
    pub next: Var,
    pub update: Var,
    pub reset: Var,
    pub candidate: Var,
}

impl GruParams {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, input: usize, hidden: usize) -> Result<Self, TensorError> {
        Ok(Self {
            wz: b.xavier(&format!("{name}.wz"), input, hidden)?,
            wr: b.xavier(&format!("{name}.wr"), input, hidden)?,
            wh: b.xavier(&format!("{name}.wh"), input, hidden)?,
            uz: b.xavier(&format!("{name}.uz"), hidden, hidden)?,
            ur: b.xavier(&format!("{name}.ur"), hidden, hidden)?,
            uh: b.xavier(&format!("{name}.uh"), hidden, hidden)?,
            bz: b.constant(&format!("{name}.bz"), &[hidden], 0.0)?,
            br: b.constant(&format!("{name}.br"), &[hidden], 0.0)?,
            bh: b.constant(&format!("{name}.bh"), &[hidden], 0.0)?,
        })
    }

    /// `x W_* + b_*` for the three paths, computed for all rows of `x` at once.
    pub fn project_input<T: Scalar>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<[Var; 3], TensorError> {
        let mut out = [x; 3];
        for (k, (w, b)) in [(self.wz, self.bz), (self.wr, self.br), (self.wh, self.bh)]
            .into_iter()
            .enumerate()
        {
            let wv = pass.p(w);
            let bv = pass.p(b);
            let xw = pass.tape.matmul(x, wv)?;
            out[k] = pass.tape.add(xw, bv)?;
        }
        Ok(out)
    }

    /// One update given projected inputs:
    /// `z = σ(xz + h U_z)`, `r = σ(xr + h U_r)`,
    /// `h̃ = tanh(xh + (r ⊙ h) U_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
    pub fn update<T: Scalar>(&self, pass: &mut Pass<'_, T>, x: [Var; 3], h: Var) -> Result<GruStep, TensorError> {
        let (uz, ur, uh) = (pass.p(self.uz), pass.p(self.ur), pass.p(self.uh));
        let t = &mut *pass.tape;
        let hz = t.matmul(h, uz)?;
        let z = t.add(x[0], hz)?;
        let z = t.sigmoid(z);
        let hr = t.matmul(h, ur)?;
        let r = t.add(x[1], hr)?;
        let r = t.sigmoid(r);
        let rh = t.mul(r, h)?;
        let rhu = t.matmul(rh, uh)?;
        let c = t.add(x[2], rhu)?;
        let c = t.tanh(c);
        let keep = t.affine(z, -T::one(), T::one())?;
        let kept = t.mul(keep, h)?;
        let fresh = t.mul(z, c)?;
        let next = t.add(kept, fresh)?;
        Ok(GruStep {
            next,
            update: z,
            reset: r,
            candidate: c,
        })
    }
}
