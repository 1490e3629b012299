mod common;

use mgm_core::autodiff::{AdamState, ParamGroup, ParamId, Tape, Tensor};
use mgm_core::backbones::{argmax_rows, pretrain, EncoderConfig, EncoderKind, PretrainConfig, Pretrained};
use mgm_core::graph::{Graph, SplitMasks};
use mgm_core::memory::{build_memory, MemoryBank, MemoryMode};
use mgm_core::mgm::{
    classify_global, e_step, elbo_on_tape, evaluate_elbo, fit_mgm, fuse_predictions, kl_dirichlet, kl_gaussian,
    kl_multinomial, load_mgm_checkpoint, m_step, predict, save_mgm_checkpoint, similar_node_prior, standard_normal,
    ElboBatch, MgmConfig, MgmModel, Noise, Trainable,
};
use mgm_core::rng::SeedStreams;
use mgm_core::MgmError;
use proptest::prelude::*;

struct Setup {
    graph: Graph,
    masks: SplitMasks,
    model: MgmModel,
    memory: MemoryBank,
    batch: ElboBatch,
    pre: Pretrained,
}

fn setup(config: &MgmConfig) -> Setup {
    let (graph, masks) = common::fixture50();
    let streams = SeedStreams::new(3);
    let enc = EncoderConfig::preset(EncoderKind::Gcn);
    let pre = pretrain(&enc, &graph, &masks, &PretrainConfig::default(), &streams).unwrap();
    let memory = build_memory(&pre.model.encoder, &pre.model.params, &pre.inputs, &graph, &masks.train).unwrap();
    let model = MgmModel::new(pre.model.clone(), &memory, config, &mut streams.stream("mgm-init")).unwrap();
    let batch = ElboBatch::new(&memory);
    Setup {
        graph,
        masks,
        model,
        memory,
        batch,
        pre,
    }
}

fn probe_noise(s: &Setup, seed: u64) -> Vec<Tensor> {
    vec![standard_normal(&mut SeedStreams::new(seed).stream("probe"), s.batch.len(), s.memory.dim())]
}

#[test]
fn bound_is_non_positive_and_reproducible() {
    let s = setup(&MgmConfig::default());
    let noise = probe_noise(&s, 1);
    let a = evaluate_elbo(&s.model, &s.pre.inputs, &s.memory, &s.batch, &noise).unwrap();
    let b = evaluate_elbo(&s.model, &s.pre.inputs, &s.memory, &s.batch, &noise).unwrap();
    assert_eq!(a, b);
    assert!(a.elbo <= 0.0);
    assert!(a.kl_omega >= 0.0 && a.kl_z >= 0.0 && a.kl_t >= 0.0 && a.log_likelihood <= 0.0);
    let parts = a.log_likelihood - a.kl_omega - a.kl_z - a.kl_t;
    assert!((parts - a.elbo).abs() < 1e-10);

    let again = setup(&MgmConfig::default());
    let c = evaluate_elbo(&again.model, &again.pre.inputs, &again.memory, &again.batch, &noise).unwrap();
    assert!((a.elbo - c.elbo).abs() < 1e-10);
}

fn check_bound_gradients(s: &mut Setup, noise: &[Tensor], probes: &[(ParamId, usize)]) {
    let tape = Tape::new();
    let (elbo, _) = elbo_on_tape(&tape, &s.model, &s.pre.inputs, &s.memory, &s.batch, Trainable::Both, noise).unwrap();
    let grads = tape.backward(elbo).unwrap();
    let step = 1e-5;
    for &(id, j) in probes {
        let analytic = grads.param(id).unwrap()[j];
        let base = s.model.params().tensor(id).data()[j];
        let mut at = |v: f64| {
            s.model.params_mut().get_mut(id).tensor.data_mut()[j] = v;
            evaluate_elbo(&s.model, &s.pre.inputs, &s.memory, &s.batch, noise).unwrap().elbo
        };
        let numeric = (at(base + step) - at(base - step)) / (2.0 * step);
        at(base);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        let name = &s.model.params().get(id).name;
        assert!(err < 1e-4, "{name}[{j}]: tape {analytic} vs numeric {numeric}");
    }
}

#[test]
fn bound_gradients_match_finite_differences() {
    let mut s = setup(&MgmConfig { eta: 0.6, ..MgmConfig::default() });
    let noise = probe_noise(&s, 2);
    // with a zero query map the posterior over T does not see the encoder,
    // so the stop-gradient on the query embeddings is exact
    let layers = s.model.gnn.encoder.layers().to_vec();
    let probes = [(layers[0].weight, 6), (layers[0].bias, 3), (layers[1].weight, 17), (layers[1].bias, 2)];
    check_bound_gradients(&mut s, &noise, &probes);

    let id = s.model.query_map;
    for (k, v) in s.model.params_mut().get_mut(id).tensor.data_mut().iter_mut().enumerate() {
        *v = 0.01 * ((k % 7) as f64 - 3.0);
    }
    let m = &s.model;
    let probes = [
        (m.sigma, 0),
        (m.beta, 0),
        (m.lambda, 0),
        (m.lambda, 5),
        (m.query_map, 3),
        (m.correction.weight, 11),
        (m.correction.bias, 20),
        (m.gnn.head.weight, 4),
        (m.gnn.head.bias, 1),
    ];
    check_bound_gradients(&mut s, &noise, &probes);
}

#[test]
fn steps_freeze_the_other_block() {
    let mut s = setup(&MgmConfig::default());
    let mut noise = Noise::Stream(SeedStreams::new(4).stream("noise"));
    let mut opt = AdamState::new(1e-3);
    let before = s.model.params().clone();
    e_step(&mut s.model, &s.pre.inputs, &s.memory, &s.batch, &mut opt, &mut noise, 3).unwrap();
    for ((_, p), (_, b)) in s.model.params().iter().zip(before.iter()) {
        if p.group == ParamGroup::Model {
            assert!(p.tensor.grad().unwrap().iter().all(|&g| g == 0.0), "{}", p.name);
            assert_eq!(p.tensor.data(), b.tensor.data());
        }
    }
    let before = s.model.params().clone();
    let mut opt = AdamState::new(1e-3);
    m_step(&mut s.model, &s.pre.inputs, &s.memory, &s.batch, &mut opt, &mut noise, 3).unwrap();
    for ((_, p), (_, b)) in s.model.params().iter().zip(before.iter()) {
        if p.group == ParamGroup::Variational {
            assert!(p.tensor.grad().unwrap().iter().all(|&g| g == 0.0), "{}", p.name);
            assert_eq!(p.tensor.data(), b.tensor.data());
        }
    }
}

#[test]
fn e_step_ascends_under_fixed_noise() {
    let mut s = setup(&MgmConfig::default());
    let noise = probe_noise(&s, 5);
    let before = evaluate_elbo(&s.model, &s.pre.inputs, &s.memory, &s.batch, &noise).unwrap().elbo;
    let mut fixed = Noise::Fixed(noise.clone());
    let mut opt = AdamState::new(1e-3);
    e_step(&mut s.model, &s.pre.inputs, &s.memory, &s.batch, &mut opt, &mut fixed, 5).unwrap();
    let after = evaluate_elbo(&s.model, &s.pre.inputs, &s.memory, &s.batch, &noise).unwrap().elbo;
    assert!(after >= before, "{after} < {before}");
}

#[test]
fn lambda_stays_positive() {
    let mut s = setup(&MgmConfig { alpha: 1e-3, ..MgmConfig::default() });
    let mut noise = Noise::Stream(SeedStreams::new(6).stream("noise"));
    let mut opt = AdamState::new(0.05);
    e_step(&mut s.model, &s.pre.inputs, &s.memory, &s.batch, &mut opt, &mut noise, 100).unwrap();
    assert!(s.model.lambda_values().iter().all(|&l| l > 0.0));
}

#[test]
fn m_step_moves_the_memory() {
    let mut s = setup(&MgmConfig::default());
    let mut noise = Noise::Stream(SeedStreams::new(7).stream("noise"));
    let mut opt = AdamState::new(1e-3);
    let stale = s.memory.clone();
    s.memory.refresh(&s.model.gnn.encoder, s.model.params(), &s.pre.inputs).unwrap();
    assert_eq!(s.memory, stale);
    m_step(&mut s.model, &s.pre.inputs, &s.memory, &s.batch, &mut opt, &mut noise, 1).unwrap();
    s.memory.refresh(&s.model.gnn.encoder, s.model.params(), &s.pre.inputs).unwrap();
    assert!(s.memory.embeddings.max_abs_diff(&stale.embeddings) > 0.0);
    assert_eq!(s.memory.nodes, stale.nodes);
    assert_eq!(s.memory.labels, stale.labels);
}

#[test]
fn eta_one_reproduces_the_pretrained_model() {
    let s = setup(&MgmConfig::default());
    let streams = SeedStreams::new(3);
    let cfg = MgmConfig { eta: 1.0, ..MgmConfig::default() };
    let t = fit_mgm(s.pre.clone(), &s.graph, &s.masks, &cfg, &streams).unwrap();
    let vanilla = s.pre.model.predict_proba(&s.pre.inputs).unwrap();
    let nodes: Vec<usize> = (0..s.graph.n_nodes()).collect();
    for memory in [&t.memory, &t.sampled] {
        let p = predict(&t.model, memory, &t.inputs, &nodes).unwrap();
        assert!(p.fused.max_abs_diff(&vanilla) <= 1e-9);
        assert_eq!(p.labels, argmax_rows(&vanilla));
    }
}

#[test]
fn trained_model_survives_a_checkpoint() {
    let s = setup(&MgmConfig::default());
    let cfg = MgmConfig { max_iterations: 3, ..MgmConfig::default() };
    let t = fit_mgm(s.pre.clone(), &s.graph, &s.masks, &cfg, &SeedStreams::new(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_mgm_checkpoint(&t.model, &t.memory, &t.sampled, &path).unwrap();
    let (model, memory, sampled) = load_mgm_checkpoint(&path).unwrap();
    assert!(model.params() == t.model.params(), "parameters differ after reload");
    assert!(memory == t.memory && sampled == t.sampled);
    let nodes: Vec<usize> = (0..s.graph.n_nodes()).collect();
    let a = predict(&t.model, &t.sampled, &t.inputs, &nodes).unwrap();
    let b = predict(&model, &sampled, &t.inputs, &nodes).unwrap();
    assert!(a == b);
}

#[test]
fn fit_is_deterministic() {
    let s = setup(&MgmConfig::default());
    let cfg = MgmConfig { max_iterations: 4, ..MgmConfig::default() };
    let a = fit_mgm(s.pre.clone(), &s.graph, &s.masks, &cfg, &SeedStreams::new(9)).unwrap();
    let b = fit_mgm(s.pre.clone(), &s.graph, &s.masks, &cfg, &SeedStreams::new(9)).unwrap();
    assert!(a.model.params() == b.model.params());
    assert!(a.history == b.history);
    assert_eq!(a.history.len(), 4);
}

fn toy_memory(rows: Vec<Vec<f64>>, labels: Vec<usize>, nodes: Vec<usize>) -> MemoryBank {
    let n = rows.len();
    MemoryBank {
        mode: MemoryMode::Full,
        threshold: 1.0,
        node_ids: nodes.iter().map(|i| format!("n{i}")).collect(),
        nodes,
        labels,
        positions: (0..n).collect(),
        n_classes: 3,
        embeddings: Tensor::from_rows(&rows).unwrap(),
        retained_mass: 1.0,
    }
}

#[test]
fn prior_over_two_candidates() {
    let memory = toy_memory(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1], vec![10, 11]);
    let q = Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap();
    let p = similar_node_prior(&q, &[0], &memory, &[0.5, 0.5], 1.0).unwrap();
    let e = 1f64.exp();
    assert!((p.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
    assert!((p.get(0, 0) - 0.731).abs() < 1e-3 && (p.get(0, 1) - 0.269).abs() < 1e-3);

    let own = similar_node_prior(&q, &[10], &memory, &[0.5, 0.5], 1.0).unwrap();
    assert_eq!(own.row(0), &[0.0, 1.0]);

    let single = toy_memory(vec![vec![1.0, 0.0]], vec![2], vec![4]);
    let lonely = similar_node_prior(&q, &[4], &single, &[1.0], 1.0).unwrap();
    assert_eq!(lonely.row(0), &[1.0]);
}

#[test]
fn identical_embedding_decides_at_eta_zero() {
    let s = setup(&MgmConfig { eta: 0.0, k: 1, ..MgmConfig::default() });
    let z = s.model.gnn.encoder.encode(s.model.params(), &s.pre.inputs).unwrap();
    let query = (0..s.graph.n_nodes()).find(|&i| s.memory.row_of(i).is_none()).unwrap();
    // a one-row memory holding the query's own embedding under some label
    let c = 2;
    let memory = MemoryBank {
        nodes: vec![s.memory.nodes[0]],
        node_ids: vec![s.memory.node_ids[0].clone()],
        labels: vec![c],
        positions: vec![0],
        embeddings: z.select_rows(&[query]),
        ..s.memory.clone()
    };
    let p = predict(&s.model, &memory, &s.pre.inputs, &[query]).unwrap();
    assert_eq!(p.labels, vec![c]);
    assert_eq!(p.global.row(0)[c], 1.0);
}

#[test]
fn empty_memory_cannot_predict() {
    let s = setup(&MgmConfig::default());
    let empty = MemoryBank {
        nodes: vec![],
        node_ids: vec![],
        labels: vec![],
        positions: vec![],
        embeddings: Tensor::matrix(0, s.memory.dim(), vec![]),
        ..s.memory.clone()
    };
    assert!(matches!(predict(&s.model, &empty, &s.pre.inputs, &[0]), Err(MgmError::Prediction(_))));
}

#[test]
fn config_rejects_bad_values() {
    for bad in [
        MgmConfig { k: 0, ..MgmConfig::default() },
        MgmConfig { eta: 1.5, ..MgmConfig::default() },
        MgmConfig { alpha: 0.0, ..MgmConfig::default() },
        MgmConfig { mass: 0.0, ..MgmConfig::default() },
        MgmConfig { tau: -1.0, ..MgmConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(MgmError::Config(_))));
    }
}

fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn divergences_are_non_negative(
        (q, p) in (2usize..6).prop_flat_map(|n| (simplex(n), simplex(n))),
        k in 1usize..8,
        lam in prop::collection::vec(0.05f64..5.0, 4),
        alpha in prop::collection::vec(0.05f64..5.0, 4),
        m in prop::collection::vec(-2.0f64..2.0, 3),
        v in prop::collection::vec(0.1f64..3.0, 3),
    ) {
        prop_assert!(kl_multinomial(&q, &p, k).unwrap() >= 0.0);
        prop_assert_eq!(kl_multinomial(&q, &q, k).unwrap(), 0.0);
        prop_assert!(kl_dirichlet(&lam, &alpha).unwrap() >= 0.0);
        prop_assert!(kl_dirichlet(&lam, &lam).unwrap().abs() < 1e-12);
        let zero = [0.0; 3];
        let one = [1.0; 3];
        prop_assert!(kl_gaussian(&m, &v, &zero, &one).unwrap() >= 0.0);
        prop_assert_eq!(kl_gaussian(&m, &v, &m, &v).unwrap(), 0.0);
    }

    #[test]
    fn fusion_stays_on_the_simplex(
        (l, g) in (2usize..6).prop_flat_map(|n| (simplex(n), simplex(n))),
        eta in 0.0f64..=1.0,
    ) {
        let f = fuse_predictions(&l, &g, eta).unwrap();
        prop_assert!(f.iter().all(|&v| v >= 0.0));
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let one = fuse_predictions(&l, &g, 1.0).unwrap();
        prop_assert_eq!(one, l);
    }

    #[test]
    fn global_vote_is_a_label_histogram(
        picks in prop::collection::vec((0usize..3, 0usize..4), 1..12),
    ) {
        let labels: Vec<usize> = picks.iter().map(|p| p.0).collect();
        let counts: Vec<usize> = picks.iter().map(|p| p.1).collect();
        let k: usize = counts.iter().sum();
        prop_assume!(k > 0);
        let p = classify_global(&counts, &labels, 3).unwrap();
        for c in 0..3 {
            let hits: usize = (0..labels.len()).filter(|&r| labels[r] == c).map(|r| counts[r]).sum();
            prop_assert_eq!(p[c], hits as f64 / k as f64);
        }
    }
}
