//! Scratch diagnostics; not part of the suite.

use ndarray::Array1;
use patch_meso::operator::PatchOperator;
use patch_meso::spectral::analytic_eigensystem;
use patch_meso::PatchGeometry;

#[test]
fn probe_mixing() {
    let g = PatchGeometry::new(19, 14, 78).unwrap();
    let analytic = analytic_eigensystem(&g, 0.65).unwrap();
    let op = PatchOperator::<f64>::new(&g, 0.65).unwrap();
    let numeric = op.numeric_eigensystem().unwrap();
    let m = g.points();

    for k in [2usize, 18] {
        let am = &analytic.modes()[k];
        let nm = &numeric.modes()[k];
        println!("k={k} parity {:?}/{:?} lambda {:.16e}", am.parity, nm.parity, am.eigenvalue);

        // Decompose the numeric right in the analytic basis via z_j^T B v.
        let mut coeffs: Vec<(usize, f64)> = analytic
            .modes()
            .iter()
            .enumerate()
            .map(|(j, zm)| {
                let mut acc = 0.0;
                for i in 1..m - 1 {
                    acc += zm.left[i] * nm.right[i];
                }
                (j, acc)
            })
            .collect();
        coeffs.sort_by(|x, y| y.1.abs().total_cmp(&x.1.abs()));
        println!("  right decomposition: {:?}", &coeffs[..3]);

        // Residual of the numeric right under the analytic eigenvalue.
        let lam = am.eigenvalue;
        let interior: Array1<f64> = nm.right.clone();
        let mut res = 0.0f64;
        for i in 1..m - 1 {
            let j = g.coord(i);
            let up = op.apply_row(j, &interior);
            res = res.max((up - lam * interior[i]).abs());
        }
        println!("  |(L - lambda B) v_num|_interior = {res:.3e}");

        // Same decomposition for the numeric left against analytic rights.
        let mut lcoeffs: Vec<(usize, f64)> = analytic
            .modes()
            .iter()
            .enumerate()
            .map(|(j, vm)| {
                let mut acc = 0.0;
                for i in 1..m - 1 {
                    acc += nm.left[i] * vm.right[i];
                }
                (j, acc)
            })
            .collect();
        lcoeffs.sort_by(|x, y| y.1.abs().total_cmp(&x.1.abs()));
        println!("  left decomposition:  {:?}", &lcoeffs[..3]);
    }
}
