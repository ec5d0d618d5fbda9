//! Finite-difference checks of every op and of the assembled network.

use rand::Rng as _;

use super::model::{batch_tensor, build_model, ArchConfig, Network};
use super::params::{Gradients, ParamId, ParamKind, Params};
use super::tape::{Mode, NodeId, Tape};
use super::tensor::Tensor;
use crate::iq::IqVector;
use crate::rng::{seeded, Rng};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_tensor(shape: &[usize], rng: &mut Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Scalar objective `sum(r * output)` for a fixed random `r`.
struct Probe<F: Fn(&mut Tape, &Params, NodeId) -> NodeId> {
    build: F,
    weights: Tensor,
}

impl<F: Fn(&mut Tape, &Params, NodeId) -> NodeId> Probe<F> {
    fn new(build: F, params: &Params, x: &Tensor, rng: &mut Rng) -> Self {
        let mut tape = Tape::new();
        let input = tape.input(x.clone());
        let out = build(&mut tape, params, input);
        let weights = random_tensor(tape.value(out).shape(), rng, 1.0);
        Probe { build, weights }
    }

    fn value(&self, params: &Params, x: &Tensor) -> f64 {
        let mut tape = Tape::new();
        let input = tape.input(x.clone());
        let out = (self.build)(&mut tape, params, input);
        tape.value(out)
            .data()
            .iter()
            .zip(self.weights.data())
            .map(|(a, b)| a * b)
            .sum()
    }

    fn gradients(&self, params: &Params, x: &Tensor) -> (Gradients, Tensor) {
        let mut tape = Tape::new();
        let input = tape.input(x.clone());
        let out = (self.build)(&mut tape, params, input);
        let mut grads = Gradients::zeros_like(params);
        let inputs = tape.backward_with_inputs(params, out, &self.weights, &mut grads);
        (grads, inputs.into_iter().next().unwrap().1)
    }

    fn check(&self, params: &Params, x: &Tensor) {
        let (grads, dx) = self.gradients(params, x);
        for i in 0..x.len() {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi.data_mut()[i] += STEP;
            lo.data_mut()[i] -= STEP;
            let fd = (self.value(params, &hi) - self.value(params, &lo)) / (2.0 * STEP);
            assert!(
                rel_err(fd, dx.data()[i]) < TOL,
                "input {i}: fd {fd} vs {}",
                dx.data()[i]
            );
        }
        for (p, e) in params.entries().iter().enumerate() {
            if e.kind == ParamKind::RunningStat {
                continue;
            }
            for i in 0..e.value.len() {
                let mut hi = params.clone();
                let mut lo = params.clone();
                hi.get_mut(ParamId(p)).data_mut()[i] += STEP;
                lo.get_mut(ParamId(p)).data_mut()[i] -= STEP;
                let fd = (self.value(&hi, x) - self.value(&lo, x)) / (2.0 * STEP);
                let an = grads.get(ParamId(p)).data()[i];
                assert!(rel_err(fd, an) < TOL, "{}[{i}]: fd {fd} vs {an}", e.name);
            }
        }
    }
}

#[test]
fn conv_gradients() {
    let mut rng = seeded(1);
    for &(cin, cout, k, stride, pad, groups) in &[
        (2, 3, 7, 2, 3, 1),
        (4, 4, 3, 2, 1, 4),
        (4, 4, 3, 1, 1, 4),
        (3, 5, 1, 1, 0, 1),
        (3, 2, 1, 2, 0, 1),
    ] {
        let mut params = Params::new();
        let w = params.push(
            "w",
            ParamKind::Trainable,
            random_tensor(&[cout, cin / groups, k], &mut rng, 1.0),
        );
        let x = random_tensor(&[2, cin, 9], &mut rng, 1.0);
        let probe = Probe::new(
            move |t: &mut Tape, p: &Params, x| t.conv(p, x, w, stride, pad, groups),
            &params,
            &x,
            &mut rng,
        );
        probe.check(&params, &x);
    }
}

fn bn_params(channels: usize, rng: &mut Rng) -> (Params, [ParamId; 4]) {
    let mut params = Params::new();
    let g = params.push("bn.gamma", ParamKind::Trainable, random_tensor(&[channels], rng, 1.5));
    let b = params.push("bn.beta", ParamKind::Trainable, random_tensor(&[channels], rng, 1.0));
    let m = params.push(
        "bn.running_mean",
        ParamKind::RunningStat,
        random_tensor(&[channels], rng, 0.5),
    );
    let v = params.push(
        "bn.running_var",
        ParamKind::RunningStat,
        Tensor::filled(&[channels], 0.7),
    );
    (params, [g, b, m, v])
}

#[test]
fn batch_norm_gradients_both_modes() {
    let mut rng = seeded(2);
    for mode in [Mode::Train, Mode::Eval] {
        let (params, [g, b, m, v]) = bn_params(3, &mut rng);
        let x = random_tensor(&[4, 3, 5], &mut rng, 2.0);
        let probe = Probe::new(
            move |t: &mut Tape, p: &Params, x| t.batch_norm(p, x, g, b, m, v, mode),
            &params,
            &x,
            &mut rng,
        );
        probe.check(&params, &x);
    }
}

#[test]
fn pointwise_ops_gradients() {
    let mut rng = seeded(3);
    let mut params = Params::new();
    let w = params.push("w", ParamKind::Trainable, random_tensor(&[4, 3], &mut rng, 1.0));
    let b = params.push("b", ParamKind::Trainable, random_tensor(&[4], &mut rng, 1.0));
    // Inputs bounded away from zero so no ReLU kink lies within the step.
    let x = Tensor::new(
        vec![2, 3, 6],
        (0..36)
            .map(|_| {
                let v: f64 = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
    .unwrap();
    let probe = Probe::new(
        move |t: &mut Tape, p: &Params, x| {
            let r = t.relu(x);
            let s = t.add(r, x);
            let g = t.global_avg_pool(s);
            let d = t.dense(p, g, w, b);
            t.softmax(d)
        },
        &params,
        &x,
        &mut rng,
    );
    probe.check(&params, &x);
}

fn toy_batch(arch: &ArchConfig, batch: usize, rng: &mut Rng) -> Tensor {
    let samples: Vec<IqVector> = (0..batch)
        .map(|_| {
            IqVector::from_interleaved(
                &(0..2 * arch.input_len)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect::<Vec<_>>(),
            )
            .unwrap()
        })
        .collect();
    batch_tensor(&samples).unwrap()
}

fn ce_loss(net: &Network, params: &Params, x: &Tensor, labels: &[usize]) -> f64 {
    let (tape, out) = net.forward_tape(params, x.clone(), Mode::Train).unwrap();
    let probs = tape.value(out);
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.row(i)[y].ln())
        .sum::<f64>()
        / labels.len() as f64
}

#[test]
fn end_to_end_network_gradients() {
    let mut rng = seeded(4);
    let arch = ArchConfig::toy(24, 3);
    let (net, set) = build_model(&arch, &mut rng).unwrap();
    let params = set.live;
    let x = toy_batch(&arch, 4, &mut rng);
    let labels = [0, 2, 1, 2];

    let (tape, out) = net.forward_tape(&params, x.clone(), Mode::Train).unwrap();
    let probs = tape.value(out);
    let mut d = Tensor::zeros(probs.shape());
    for (i, &y) in labels.iter().enumerate() {
        d.data_mut()[i * 3 + y] = -1.0 / (probs.row(i)[y] * labels.len() as f64);
    }
    let mut grads = Gradients::zeros_like(&params);
    tape.backward(&params, out, &d, &mut grads);

    let mut checked = 0;
    for (p, e) in params.entries().iter().enumerate() {
        if e.kind == ParamKind::RunningStat {
            assert!(grads.get(ParamId(p)).data().iter().all(|&g| g == 0.0));
            continue;
        }
        let n = e.value.len();
        for i in (0..n).step_by((n / 6).max(1)) {
            let mut hi = params.clone();
            let mut lo = params.clone();
            hi.get_mut(ParamId(p)).data_mut()[i] += STEP;
            lo.get_mut(ParamId(p)).data_mut()[i] -= STEP;
            let fd = (ce_loss(&net, &hi, &x, &labels) - ce_loss(&net, &lo, &x, &labels)) / (2.0 * STEP);
            let an = grads.get(ParamId(p)).data()[i];
            assert!(rel_err(fd, an) < TOL, "{}[{i}]: fd {fd} vs {an}", e.name);
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn gradient_scales_linearly_and_cut_paths_are_zero() {
    let mut rng = seeded(5);
    let arch = ArchConfig::toy(16, 2);
    let (net, set) = build_model(&arch, &mut rng).unwrap();
    let mut params = set.live;
    // Zero gamma on stem channel 0: its conv filter no longer influences the loss.
    params.by_name_mut("stem.bn.gamma").unwrap().data_mut()[0] = 0.0;
    let x = toy_batch(&arch, 3, &mut rng);
    let (tape, out) = net.forward_tape(&params, x, Mode::Train).unwrap();
    let d = random_tensor(tape.value(out).shape(), &mut rng, 1.0);
    let mut g1 = Gradients::zeros_like(&params);
    tape.backward(&params, out, &d, &mut g1);
    let mut d2 = d.clone();
    d2.scale(2.0);
    let mut g2 = Gradients::zeros_like(&params);
    tape.backward(&params, out, &d2, &mut g2);
    for (a, b) in g1.0.iter().zip(&g2.0) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }
    let stem = params.id_of("stem.conv.w").unwrap();
    let per_channel = 2 * arch.stem.size;
    assert!(g1.get(stem).data()[..per_channel].iter().all(|&g| g == 0.0));
    assert!(g1.get(stem).data()[per_channel..].iter().any(|&g| g != 0.0));
}
