use super::params::{ParamId, ParamStore};
use super::rng::Rng;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Parameters of one LSTM layer.
///
/// `w` maps `x ⊕ h_prev` to the four stacked gate pre-activations in the
/// order input, forget, candidate, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmWeights {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmWeights {
    /// Glorot-uniform gate matrix, zero biases with the forget gate at `+1`.
    pub fn init(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let w = store.add_glorot(&format!("{prefix}.w"), 4 * hidden, input + hidden, rng)?;
        let b = store.add_zeros(&format!("{prefix}.b"), &[4 * hidden])?;
        store.value_mut(b).data_mut()[hidden..2 * hidden].fill(1.0);
        Ok(LstmWeights { w, b, input, hidden })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w = store.require(&format!("{prefix}.w"))?;
        let b = store.require(&format!("{prefix}.b"))?;
        let (rows, cols) = store.value(w).dims2("lstm")?;
        if rows % 4 != 0 || cols < rows / 4 || store.value(b).shape() != [rows] {
            return Err(Error::Validation(format!("inconsistent LSTM shapes under {prefix:?}")));
        }
        let hidden = rows / 4;
        Ok(LstmWeights {
            w,
            b,
            input: cols - hidden,
            hidden,
        })
    }
}

/// One step of a standard LSTM; returns `(h, c)`.
pub fn lstm_cell(tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var, weights: &LstmWeights) -> Result<(Var, Var)> {
    let hdim = weights.hidden;
    for (op, v, want) in [
        ("lstm_cell(x)", x, weights.input),
        ("lstm_cell(h)", h_prev, hdim),
        ("lstm_cell(c)", c_prev, hdim),
    ] {
        let shape = tape.value(v).shape();
        if shape != [want] {
            return Err(Error::dim(op, shape, &[want]));
        }
    }
    let w = tape.param(weights.w);
    let b = tape.param(weights.b);
    let xh = tape.concat(&[x, h_prev])?;
    let pre = tape.matvec(w, xh)?;
    let gates = tape.add(pre, b)?;

    let i = tape.slice(gates, 0, hdim)?;
    let f = tape.slice(gates, hdim, hdim)?;
    let g = tape.slice(gates, 2 * hdim, hdim)?;
    let o = tape.slice(gates, 3 * hdim, hdim)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let squashed = tape.tanh(c);
    let h = tape.mul(o, squashed)?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Gradients, Tensor};

    fn setup(seed: u64) -> (ParamStore, LstmWeights) {
        let mut store = ParamStore::new(seed);
        let mut rng = Rng::new(seed);
        let weights = LstmWeights::init(&mut store, "cell", 3, 2, &mut rng).unwrap();
        (store, weights)
    }

    fn run(store: &ParamStore, weights: &LstmWeights) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new(store);
        let x = tape.constant(Tensor::vector(vec![0.3, -1.2, 0.8]));
        let h = tape.constant(Tensor::vector(vec![0.1, -0.4]));
        let c = tape.constant(Tensor::vector(vec![0.5, 0.2]));
        let (h, c) = lstm_cell(&mut tape, x, h, c, weights).unwrap();
        (tape.value(h).data().to_vec(), tape.value(c).data().to_vec())
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let (mut store, weights) = setup(1);
        store.value_mut(weights.w).data_mut().fill(0.0);
        store.value_mut(weights.b).data_mut().fill(0.0);
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::vector(vec![5.0, -3.0, 2.0]));
        let h0 = tape.zeros(2);
        let c0 = tape.zeros(2);
        let (h, c) = lstm_cell(&mut tape, x, h0, c0, &weights).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (a, wa) = setup(42);
        let (b, wb) = setup(42);
        let (ha, ca) = run(&a, &wa);
        let (hb, cb) = run(&b, &wb);
        assert_eq!(ha.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), hb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(ca, cb);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let (store, weights) = setup(0);
        assert_eq!(store.value(weights.b).data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn wrong_input_width_is_a_dimension_error() {
        let (store, weights) = setup(0);
        let mut tape = Tape::new(&store);
        let x = tape.zeros(4);
        let h = tape.zeros(2);
        let c = tape.zeros(2);
        assert!(matches!(
            lstm_cell(&mut tape, x, h, c, &weights),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn gradients_match_central_differences() {
        let (store, weights) = setup(7);
        // loss = sum(h * r) + sum(c * s) with fixed r, s
        let loss_of = |store: &ParamStore| -> f64 {
            let mut tape = Tape::new(store);
            let x = tape.constant(Tensor::vector(vec![0.3, -1.2, 0.8]));
            let h0 = tape.constant(Tensor::vector(vec![0.1, -0.4]));
            let c0 = tape.constant(Tensor::vector(vec![0.5, 0.2]));
            let (h, c) = lstm_cell(&mut tape, x, h0, c0, &weights).unwrap();
            let r = tape.constant(Tensor::vector(vec![0.7, -1.1]));
            let s = tape.constant(Tensor::vector(vec![0.4, 0.9]));
            let a = tape.dot(h, r).unwrap();
            let b = tape.dot(c, s).unwrap();
            let l = tape.add(a, b).unwrap();
            tape.scalar(l)
        };

        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::vector(vec![0.3, -1.2, 0.8]));
        let h0 = tape.constant(Tensor::vector(vec![0.1, -0.4]));
        let c0 = tape.constant(Tensor::vector(vec![0.5, 0.2]));
        let (h, c) = lstm_cell(&mut tape, x, h0, c0, &weights).unwrap();
        let r = tape.constant(Tensor::vector(vec![0.7, -1.1]));
        let s = tape.constant(Tensor::vector(vec![0.4, 0.9]));
        let a = tape.dot(h, r).unwrap();
        let b = tape.dot(c, s).unwrap();
        let l = tape.add(a, b).unwrap();
        let mut grads = Gradients::new(&store);
        tape.backward(l, &mut grads).unwrap();

        let step = 1e-5;
        for id in [weights.w, weights.b] {
            let analytic = grads.get(id).unwrap().data().to_vec();
            for (k, &an) in analytic.iter().enumerate() {
                let mut plus = store.clone();
                plus.value_mut(id).data_mut()[k] += step;
                let mut minus = store.clone();
                minus.value_mut(id).data_mut()[k] -= step;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
                let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(1e-8);
                assert!(rel <= 1e-6, "{} [{k}]: {an} vs {numeric}", store.name(id));
            }
        }
    }
}
