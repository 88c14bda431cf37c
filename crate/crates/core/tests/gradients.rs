mod common;

use common::gradient_cases;
use synthmix::autodiff::grad_check;

#[test]
fn double_precision_gradients() {
    for case in gradient_cases() {
        let err = grad_check::<f64, _>(&case, case.point(), 1e-4).unwrap();
        assert!(err < 1e-6, "{}: {err:e}", case.name);
    }
}

#[test]
fn single_precision_gradients() {
    for case in gradient_cases() {
        let point = case.point().cast::<f32>();
        let err = grad_check::<f32, _>(&case, &point, 1e-4).unwrap();
        assert!(err < 1e-4, "{}: {err:e}", case.name);
    }
}
