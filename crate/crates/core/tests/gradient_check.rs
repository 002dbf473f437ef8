//! Analytic gradients of the training objective against central finite
//! differences on a small randomized model.

mod common;

use common::max_relative_error;
use hanmlm::model::Mode;

#[test]
fn mlm_gradient_matches_finite_differences() {
    let (err, at) = max_relative_error(0.0, &[Mode::Eval; 3]);
    assert!(err < 1e-4, "{err:e} at {at}");
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let (err, at) = max_relative_error(0.5, &[Mode::Eval; 3]);
    assert!(err < 1e-4, "{err:e} at {at}");
}

#[test]
fn gradient_with_fixed_dropout_masks() {
    let modes = [
        Mode::Train { dropout_seed: 1 },
        Mode::Train { dropout_seed: 2 },
        Mode::Train { dropout_seed: 3 },
    ];
    for lambda in [0.0, 0.5] {
        let (err, at) = max_relative_error(lambda, &modes);
        assert!(err < 1e-4, "λ={lambda}: {err:e} at {at}");
    }
}
