use orhc::fem::{assemble_static, BoundaryCondition, Mesh};
use orhc::spectral::{analytic_neumann_spectrum, compute_neumann_eigenbasis};

fn main() {
    for n_div in [32usize, 64] {
        let mesh = Mesh::build(n_div, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        let basis = compute_neumann_eigenbasis(&ops, 30).unwrap();
        let exact = analytic_neumann_spectrum(30);
        println!("n_div = {n_div}");
        for i in 0..30 {
            let rel = if exact[i] > 0.0 { (basis.values[i] - exact[i]) / exact[i] } else { basis.values[i] };
            println!("  {i:2} got {:12.6} want {:12.6} rel {:+.4e}", basis.values[i], exact[i], rel);
        }
    }
}
