#![allow(dead_code)]

pub mod ops;

use mgm_core::graph::{make_splits, synth_graph, Graph, SplitMasks, SplitRatios, SynthConfig};

/// The frozen 50-node graph used by the bound and drift checks: two
/// components, three classes, half the nodes labeled.
#[allow(dead_code)]
pub fn fixture50() -> (Graph, SplitMasks) {
    let cfg = SynthConfig {
        n_nodes: 50,
        n_components: 2,
        n_classes: 3,
        label_fraction: 0.5,
        seed: 50,
        ..SynthConfig::default()
    };
    let (g, _) = synth_graph(&cfg).expect("fixture graph");
    let masks = make_splits(&g, SplitRatios::default(), 1.0, 50).expect("fixture splits");
    (g, masks)
}
