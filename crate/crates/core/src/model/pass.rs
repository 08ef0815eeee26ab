use rand_chacha::ChaCha8Rng;
use textgsl_autodiff::{ParamId, ParamStore, Scalar, Tape, TensorError, Var};

/// One forward pass: the tape being recorded, the parameters read from,
/// and the dropout state.
pub struct Pass<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub store: &'a ParamStore<T>,
    pub train: bool,
    rng: &'a mut ChaCha8Rng,
    vars: Vec<Option<Var>>,
}

impl<'a, T: Scalar> Pass<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, train: bool, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            tape,
            store,
            train,
            rng,
            vars: vec![None; store.len()],
        }
    }

    /// Tape variable for a parameter, recorded once per pass.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = self.tape.param(self.store, id);
        self.vars[id.0] = Some(v);
        v
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var, TensorError> {
        self.tape.dropout(x, rate, self.train, self.rng)
    }
}
