//! Retrieval NLL, InfoNCE alignment and the joint objective on small
//! hand-checked inputs.

use bundlekit::objectives::{infonce, joint_loss, nll_loss};
use bundlekit::tensor::Csr;
use ndarray::{array, Array2};

fn main() -> bundlekit::Result<()> {
    // uniform scores over 4 items, 2 positives: (2/4)·ln 4
    let nll = nll_loss(&Array2::zeros((1, 4)), &Csr::indicator(4, &[vec![0, 1]]))?;
    println!("uniform NLL {nll:.6} (expected {:.6})", 0.5 * 4f64.ln());

    let eye = array![[1.0, 0.0], [0.0, 1.0]];
    let aligned = infonce(&eye, &eye, 0.2)?;
    println!("aligned InfoNCE {aligned:.6} (expected {:.6})", (1.0 + (-5f64).exp()).ln());
    let swapped = infonce(&eye, &array![[0.0, 1.0], [1.0, 0.0]], 0.2)?;
    println!("swapped InfoNCE {swapped:.6}");

    let report = joint_loss(nll, aligned, aligned, 3.0, 0.01, 1e-5)?;
    println!("{report:?}");
    Ok(())
}
