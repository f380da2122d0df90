mod common;

use common::{check_op, check_term, Op, Term, GRAD_TOL, OPS, TERMS};

fn assert_op(op: Op) {
    let r = check_op(op);
    assert!(r.passes(GRAD_TOL), "{}: {r:?}", op.name());
}

fn assert_term(term: Term) {
    let r = check_term(term);
    assert!(r.passes(GRAD_TOL), "{}: {r:?}", term.name());
}

#[test]
fn every_op_is_covered() {
    assert!(OPS.len() >= 30);
}

#[test]
fn elementwise_ops_match_finite_differences() {
    for &op in OPS {
        if matches!(
            op,
            Op::Add
                | Op::Sub
                | Op::Mul
                | Op::Scale
                | Op::Neg
                | Op::AddScalar
                | Op::Abs
                | Op::Square
                | Op::Rsqrt
                | Op::Tanh
                | Op::LeakyRelu
                | Op::Softplus
                | Op::Sigmoid
        ) {
            assert_op(op);
        }
    }
}

#[test]
fn reductions_and_reshapes_match_finite_differences() {
    for op in [
        Op::SumAll,
        Op::MeanAll,
        Op::Expand,
        Op::Reshape,
        Op::SumRows,
        Op::BroadcastRows,
        Op::L1,
        Op::Mse,
    ] {
        assert_op(op);
    }
}

#[test]
fn linear_ops_match_finite_differences() {
    for &op in OPS {
        if matches!(op, Op::MatmulT(..) | Op::Dense | Op::Conv2d { .. }) {
            assert_op(op);
        }
    }
}

#[test]
fn spatial_ops_match_finite_differences() {
    for op in [
        Op::Upsample2,
        Op::Sumpool2,
        Op::Avgpool2,
        Op::SpatialSum,
        Op::SpatialMean,
        Op::BroadcastSpatial,
        Op::ScaleChannels,
        Op::DemodConv,
        Op::InstanceNorm,
    ] {
        assert_op(op);
    }
}

#[test]
fn adversarial_terms_match_finite_differences() {
    assert_term(Term::AdvD);
    assert_term(Term::AdvG);
    assert_term(Term::R1);
}

#[test]
fn reconstruction_terms_match_finite_differences() {
    assert_term(Term::StyleRecon);
    assert_term(Term::Cycle);
    assert_term(Term::ChannelCycle);
}

#[test]
fn diversity_and_supervised_terms_match_finite_differences() {
    assert_term(Term::Diversity);
    assert_term(Term::Supervised);
}

#[test]
fn every_term_is_covered() {
    assert_eq!(TERMS.len(), 8);
}
