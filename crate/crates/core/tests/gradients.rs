mod support;

use rand::Rng;
use support::{four_node_graph, random_tensor, seeded, tiny_spec, toy_graph};
use textgsl::graph::{Relation, TextGraph};
use textgsl::model::{encoder, fusion, mpnn, readout, DocInput, Mode, ModelError, Pass, TextGsl, Topology};
use textgsl::train::gradcheck::{reference_check, BatchLoss};
use textgsl_autodiff::{
    finite_diff_check, finite_diff_check_with_reference, DoubleDouble, GradCheckReport, LossProgram, ParamId, ParamStore,
    Scalar, Tape, Tensor, TensorError, Var,
};

const D: usize = 5;
const M: usize = 4;
const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn model(mode: Mode, seed: u64) -> TextGsl<f64> {
    let mut m = TextGsl::<f64>::new(tiny_spec(mode, D, 3), seed).unwrap();
    let mut rng = seeded(seed + 1000);
    let ids: Vec<ParamId> = m.store().ids().collect();
    for id in ids {
        for v in m.store_mut().value_mut(id).data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    m
}

fn doc(graph: &TextGraph, seed: u64) -> DocInput<f64> {
    DocInput::new(random_tensor(&mut seeded(seed), &[graph.n_nodes(), D], 0.5), graph).unwrap()
}

fn tensor_err(e: ModelError) -> TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

/// Contracts an output with fixed random weights into a scalar loss.
fn contract<S: Scalar>(tape: &mut Tape<S>, out: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(random_tensor(&mut seeded(99), &shape, 1.0).cast());
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn ids_with_prefix(store: &ParamStore<f64>, prefix: &str) -> Vec<ParamId> {
    store
        .iter()
        .filter(|(_, p)| p.name.starts_with(prefix))
        .map(|(id, _)| id)
        .collect()
}

fn report(label: &str, r: &GradCheckReport) {
    for p in &r.params {
        assert!(
            p.max_rel_error < TOL,
            "{label}: {} relative error {:e}",
            p.name,
            p.max_rel_error
        );
    }
}

enum Layer {
    Encoder(Tensor<f64>),
    Branch(DocInput<f64>),
    Step(Topology, Tensor<f64>),
    Fusion(Tensor<f64>),
    Readout(Tensor<f64>),
}

struct Probe<'a> {
    model: &'a TextGsl<f64>,
    layer: Layer,
    train: bool,
}

impl LossProgram for Probe<'_> {
    fn loss<S: Scalar>(&self, store: &ParamStore<S>, tape: &mut Tape<S>) -> Result<Var, TensorError> {
        let layout = self.model.layout();
        let mut rng = seeded(3);
        let out = {
            let mut p = Pass::new(tape, store, self.train, &mut rng);
            match &self.layer {
                Layer::Encoder(x) => {
                    let xv = p.tape.constant(x.cast());
                    encoder::transformer_encode(&mut p, layout.encoder.as_ref().unwrap(), xv).map_err(tensor_err)?
                }
                Layer::Branch(d) => {
                    let f = p.tape.constant(d.features.cast());
                    mpnn::structural_branch(&mut p, f, &d.topology, layout.mpnn.as_ref().unwrap())?.0
                }
                Layer::Step(topo, x) => {
                    let xv = p.tape.constant(x.cast());
                    mpnn::mpnn_step(&mut p, xv, topo, layout.mpnn.as_ref().unwrap())?.gru.next
                }
                Layer::Fusion(x) => {
                    let xv = p.tape.constant(x.cast());
                    fusion::fuse(&mut p, &layout.fusion, &[xv])?
                }
                Layer::Readout(x) => {
                    let xv = p.tape.constant(x.cast());
                    let ro = readout::readout(&mut p, &layout.readout, xv)?;
                    let (_, probs) = readout::classify(&mut p, &layout.readout, ro.x_g)?;
                    readout::cross_entropy(&mut p, probs, 1)?
                }
            }
        };
        contract(tape, out)
    }
}

fn check_layer(m: &TextGsl<f64>, prefix: &str, train: bool, layer: Layer) -> GradCheckReport {
    let mut store = m.store().clone();
    let ids = ids_with_prefix(&store, prefix);
    assert!(!ids.is_empty(), "no parameters under {prefix}");
    let probe = Probe { model: m, layer, train };
    let r = finite_diff_check_with_reference::<f64, DoubleDouble, _>(&mut store, &ids, EPS, 25, 7, &probe).unwrap();
    report(prefix, &r);
    r
}

#[test]
fn transformer_layer_gradients() {
    let m = model(Mode::Full, 1);
    let x = random_tensor(&mut seeded(2), &[5, D], 1.0);
    for train in [false, true] {
        check_layer(&m, "seq.", train, Layer::Encoder(x.clone()));
    }
}

#[test]
fn two_head_transformer_gradients() {
    let mut spec = tiny_spec(Mode::NoDsl, D, 3);
    spec.config.heads = 2;
    let m = TextGsl::<f64>::new(spec, 4).unwrap();
    let x = random_tensor(&mut seeded(2), &[5, D], 1.0);
    check_layer(&m, "seq.", false, Layer::Encoder(x));
}

#[test]
fn message_passing_gradients() {
    let m = model(Mode::Full, 2);
    let d = doc(&four_node_graph(), 3);
    for train in [false, true] {
        check_layer(&m, "str.", train, Layer::Branch(d.clone()));
    }
}

#[test]
fn single_step_gradients_with_isolated_node() {
    let m = model(Mode::Full, 5);
    let g = toy_graph(&["a", "b", "c", "d"], &[(0, 1, Relation::Co), (1, 2, Relation::Sem), (0, 1, Relation::Syn)]);
    let x = random_tensor(&mut seeded(6), &[4, M], 1.0);
    check_layer(&m, "str.", false, Layer::Step(Topology::from_graph(&g), x));
}

#[test]
fn fusion_gradients() {
    let m = model(Mode::Full, 3);
    let x = random_tensor(&mut seeded(4), &[4, 2 * M], 1.0);
    check_layer(&m, "fuse.", false, Layer::Fusion(x));
}

#[test]
fn readout_and_classifier_gradients() {
    let m = model(Mode::Full, 4);
    let x = random_tensor(&mut seeded(5), &[3, M], 1.0);
    for prefix in ["readout.", "cls."] {
        check_layer(&m, prefix, false, Layer::Readout(x.clone()));
    }
}

#[test]
fn whole_model_gradients_on_two_documents() {
    let g1 = four_node_graph();
    let g2 = toy_graph(&["x", "y", "x", "z"], &[(0, 1, Relation::Co), (1, 2, Relation::Sem)]);
    for mode in Mode::ALL {
        let m = model(mode, 20);
        let program = BatchLoss {
            model: &m,
            batch: vec![(doc(&g1, 10), 0), (doc(&g2, 11), 2)],
            train: true,
            mask_seed: 1,
        };
        let ids: Vec<ParamId> = m.store().ids().collect();
        let r = reference_check(&program, &ids, 25, 9).unwrap();
        report(mode.name(), &r);
        assert!(r.max_rel_error < TOL);
    }
}

#[test]
fn double_double_reference_agrees_with_plain_differences_on_large_entries() {
    let m = model(Mode::Full, 8);
    let program = BatchLoss {
        model: &m,
        batch: vec![(doc(&four_node_graph(), 13), 1)],
        train: false,
        mask_seed: 0,
    };
    let ids = vec![m.param("cls.weight").unwrap(), m.param("cls.bias").unwrap()];
    let mut store = m.store().clone();
    let plain = finite_diff_check(&mut store, &ids, EPS, 25, 9, |s, tape| program.loss(s, tape)).unwrap();
    let precise = reference_check(&program, &ids, 25, 9).unwrap();
    assert!(plain.max_rel_error < 1e-4, "{:e}", plain.max_rel_error);
    assert!(precise.max_rel_error <= plain.max_rel_error);
}

#[test]
fn corrupted_parameter_gradient_is_detected() {
    let m = model(Mode::Full, 6);
    let g = four_node_graph();
    let d = doc(&g, 12);
    let mut store = m.store().clone();
    let ids = vec![store.id("cls.weight").unwrap()];
    let r = finite_diff_check(&mut store, &ids, EPS, 25, 9, |s, tape| {
        let mut rng = seeded(1);
        let mut pass = Pass::new(tape, s, false, &mut rng);
        let l = m.batch_loss(&mut pass, &[(&d, 0)]).map_err(tensor_err)?;
        Ok(tape.custom_unary(l, |v| v, |_, _, g| g.map(|v| 1.5 * v)))
    })
    .unwrap();
    assert!(r.max_rel_error > 1e-2);
}

#[test]
fn canonical_toy_batch_passes_every_layer() {
    let r = textgsl::train::gradcheck::tiny_gradcheck(0).unwrap();
    for l in &r.layers {
        println!("{:<13} {:>3} coords  max rel {:.3e}  ({})", l.layer, l.coordinates, l.max_rel_error, l.worst_tensor);
    }
    assert_eq!(r.layers.len(), 6);
    assert!(r.passed, "max relative error {:e}", r.max_rel_error);
}
