//! Builds the Laplacian of a four-node corridor snapshot, estimates its
//! largest eigenvalue and applies a Chebyshev filter to a node signal.

use mgcnn::graph::{build_snapshot, CorridorTopology};
use mgcnn::spectral::{chebyshev_filter, largest_eigenvalue, normalized_laplacian, scale_laplacian};
use ndarray::{array, Array2};

fn main() -> mgcnn::Result<()> {
    let ids = ["A", "B", "C", "D"].map(String::from).to_vec();
    let topo = CorridorTopology::chain(ids, &[0.3, 0.5, 0.25])?;
    // Uniform 30 mph on every directed link.
    let speeds = vec![30.0; topo.edges().len()];
    let snap = build_snapshot(&topo, 0, &speeds, Array2::zeros((4, 1)), 1.0)?;
    println!("travel times (s):\n{:.1}", snap.weights);

    let l = normalized_laplacian(snap.weights.view())?;
    let lambda = largest_eigenvalue(&l, 1e-8, 5000);
    println!("lambda_max = {lambda:.6}");
    let lt = scale_laplacian(&l, lambda)?;

    let x = array![[1.0], [0.0], [0.0], [0.0]];
    for theta in [vec![1.0], vec![0.0, 1.0], vec![0.5, 0.3, 0.2]] {
        let y = chebyshev_filter(&lt, x.view(), &theta)?;
        println!("theta {theta:?} -> {:.4}", y.column(0));
    }
    Ok(())
}
