mod common;

use common::{LayerCase, LayerKind};
use hydrodeep::engine::grad_check_detailed;

#[test]
fn every_layer_type_matches_finite_differences() {
    for kind in LayerKind::ALL {
        for seed in 0..5 {
            let mut case = LayerCase::new(kind, seed);
            for e in grad_check_detailed(&mut case, 1e-6).unwrap() {
                assert!(e.relative_error < 1e-5, "{kind:?} seed {seed} {}: {:e}", e.name, e.relative_error);
            }
        }
    }
}

#[test]
fn shallow_layers_pass_elementwise_as_well() {
    for kind in [LayerKind::ConvPool, LayerKind::TimeDense, LayerKind::Lstm { return_sequence: true }] {
        let mut case = LayerCase::new(kind, 3);
        for e in grad_check_detailed(&mut case, 1e-6).unwrap() {
            assert!(e.max_elementwise_error < 1e-4, "{kind:?} {}: {:e}", e.name, e.max_elementwise_error);
        }
    }
}
