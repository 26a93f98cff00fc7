use proptest::prelude::*;
use srb_core::tensor::{gradient_check, Tape, Tensor, Var, GRADCHECK_STEP};
use srb_core::Result;

#[derive(Clone, Copy, Debug)]
enum Step {
    Tanh,
    Sigmoid,
    Softmax,
    LogSoftmax,
    AddY,
    MulY,
    SubY,
    MatMulW,
    Square,
    ConcatNarrow,
    AddRowB,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        Just(Step::Tanh),
        Just(Step::Sigmoid),
        Just(Step::Softmax),
        Just(Step::LogSoftmax),
        Just(Step::AddY),
        Just(Step::MulY),
        Just(Step::SubY),
        Just(Step::MatMulW),
        Just(Step::Square),
        Just(Step::ConcatNarrow),
        Just(Step::AddRowB),
    ]
}

fn apply(t: &mut Tape, s: Step, x: Var, v: &[Var]) -> Result<Var> {
    match s {
        Step::Tanh => t.tanh(x),
        Step::Sigmoid => t.sigmoid(x),
        Step::Softmax => t.softmax(x),
        Step::LogSoftmax => t.log_softmax(x),
        Step::AddY => t.add(x, v[1]),
        Step::MulY => t.mul(x, v[1]),
        Step::SubY => t.sub(x, v[1]),
        Step::MatMulW => t.matmul(x, v[2]),
        Step::Square => t.mul(x, x),
        Step::ConcatNarrow => {
            let c = t.concat(x, v[1], 1)?;
            t.narrow(c, 1, 1, 3)
        }
        Step::AddRowB => t.add_row(x, v[3]),
    }
}

fn values(n: usize) -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(-1.0f32..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn composite_graphs_match_finite_differences(
        steps in proptest::collection::vec(step(), 3),
        x in values(6),
        y in values(6),
        w in values(9),
        b in values(3),
        end_with_cosine in any::<bool>(),
    ) {
        let mut params = vec![
            Tensor::new(vec![2, 3], x).unwrap(),
            Tensor::new(vec![2, 3], y).unwrap(),
            Tensor::new(vec![3, 3], w).unwrap(),
            Tensor::new(vec![3], b).unwrap(),
        ];
        let report = gradient_check(&mut params, GRADCHECK_STEP, |t, v| {
            let mut h = v[0];
            for &s in &steps {
                h = apply(t, s, h, v)?;
            }
            if end_with_cosine {
                h = t.cosine(h, v[1])?;
            }
            t.sum(h)
        });
        match report {
            Ok(r) => prop_assert!(r.max_rel_error < 1e-4, "{:?}: {:?}", steps, r),
            // Degenerate cosine inputs are rejected rather than differentiated.
            Err(e) => prop_assert!(end_with_cosine, "{e}"),
        }
    }
}
