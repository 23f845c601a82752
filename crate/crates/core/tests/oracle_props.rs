mod common;

use dcqp::bound::project_to_region;
use dcqp::localsearch::{finite_gmc, Tolerances};
use dcqp::oracle::{global_qp_oracle, grid_min};
use nalgebra::DVector;

#[test]
fn oracle_never_exceeds_grid() {
    for inst in common::soundness_suite() {
        let o = global_qp_oracle(&inst).unwrap();
        let g = grid_min(&inst, if inst.n == 2 { 201 } else { 41 }).unwrap();
        assert!(o.value <= g.value + 1e-9, "{}: {} > {}", inst.name, o.value, g.value);
        let x = o.x.unwrap();
        assert!(inst.is_feasible(&x, 1e-10));
        assert!((inst.objective(&x) - o.value).abs() <= 1e-12 * (1.0 + o.value.abs()));
    }
}

#[test]
fn local_search_stays_above_oracle() {
    for inst in common::soundness_suite() {
        let glob = global_qp_oracle(&inst).unwrap().value;
        let center = project_to_region(&inst, &DVector::from_element(inst.n, 0.5), 0.0);
        let k = finite_gmc(&inst, &center, &Tolerances::default()).unwrap();
        assert!(inst.is_feasible(&k.x, 1e-9));
        assert!(k.objective >= glob - 1e-9, "{}", inst.name);
    }
}
