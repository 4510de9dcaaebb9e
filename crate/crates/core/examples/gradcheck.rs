//! Central-difference gradient checks for every layer in the network toolkit.

use textless::nn::gradcheck::{grad_check, LayerProbe};

fn main() {
    let probes = [
        ("linear", LayerProbe::linear(6, 4, 3, 1)),
        ("conv1d k4 s2 p1", LayerProbe::conv1d(3, 4, 11, 4, 2, 1, 2)),
        ("lstm", LayerProbe::lstm(3, 5, 2, 6, 3)),
        ("embedding", LayerProbe::embedding(7, 4, &[0, 3, 3, 6], 4)),
        ("layer norm", LayerProbe::layer_norm(5, 4, 5)),
        ("softmax xent", LayerProbe::softmax_xent(4, 6, 6)),
    ];
    for (name, mut probe) in probes {
        let err = grad_check(&mut probe, 1e-6, 400, 0);
        println!("{name:<16} max relative error {err:.2e}  {}", if err < 1e-5 { "ok" } else { "FAIL" });
    }
}
