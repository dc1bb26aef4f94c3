mod common;

use gasnet::coupling::{apply_coupling, assemble_coupling_matrix};
use gasnet::integrate::Model;
use gasnet::network::{BoundaryKind, End, PortRef, Variable};
use gasnet::scenarios;

#[test]
fn matrix_matches_junction_formulas_on_e1() {
    let net = scenarios::e1_network(200).unwrap();
    let (err, sparse) = common::coupling_equivalence(&net, 100, 1);
    assert!(err <= 1e-13, "{err:e}");
    assert!(sparse);
}

#[test]
fn matrix_matches_junction_formulas_on_e2() {
    let net = scenarios::e2_network(200).unwrap();
    let (err, sparse) = common::coupling_equivalence(&net, 100, 2);
    assert!(err <= 1e-13, "{err:e}");
    assert!(sparse);
}

#[test]
fn e1_touches_four_endpoint_dofs_per_variable_and_junction() {
    let net = scenarios::e1_network(30).unwrap();
    let model = Model::new(net.clone()).unwrap();
    let mut rows: Vec<usize> = model.coupling().entries().iter().map(|e| e.0).collect();
    rows.sort_unstable();
    rows.dedup();
    assert_eq!(rows.len(), 2 * 2 * 2);
}

#[test]
fn no_junctions_means_identity() {
    let net = common::single_pipe(1.0, 9, BoundaryKind::Closed);
    let model = Model::new(net.clone()).unwrap();
    let c = assemble_coupling_matrix(&net, model.operators()).unwrap();
    assert_eq!(c.nnz(), 0);
    let mut r = common::rng(3);
    let x = common::random_vec(&mut r, net.dof());
    assert_eq!(apply_coupling(&c, &x).unwrap(), x);
    assert_eq!(apply_coupling(&c, &vec![0.0; net.dof()]).unwrap(), vec![0.0; net.dof()]);
}

#[test]
fn diamond_links_pipe_five_start_to_pipe_two_end() {
    let net = scenarios::e2_network(20).unwrap();
    let model = Model::new(net.clone()).unwrap();
    for var in [Variable::RhoA, Variable::MA] {
        let v = net.port_index(PortRef::new(4, End::Start), var);
        let ii = net.port_index(PortRef::new(1, End::End), var);
        assert!(model
            .coupling()
            .entries()
            .iter()
            .any(|&(r, c, x)| r == v && c == ii && x != 0.0));
    }
}
