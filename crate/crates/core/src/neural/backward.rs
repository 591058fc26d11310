//! Backpropagation through time for [`forward`](super::forward).

use super::layers::{Activation, Dense};
use super::loss::{class_data_loss, class_data_loss_grad, LossKind, Target};
use super::network::{HeadKind, NetworkParams, Tape, Weights};
use super::NeuralError;

/// Exact gradient of the full per-example loss (data term plus
/// `lambda * L2`) with respect to every trainable tensor.
pub fn backward(
    params: &NetworkParams,
    tape: &Tape,
    target: &Target,
    kind: LossKind,
    lambda: f64,
) -> Result<Weights, NeuralError> {
    let mut grads = params.weights.zeros_like();
    accumulate_data_gradient(params, tape, target, kind, &mut grads)?;
    grads.add_l2_gradient(&params.weights, lambda);
    Ok(grads)
}

fn check_tape(params: &NetworkParams, tape: &Tape) -> Result<(), NeuralError> {
    let w = &params.weights;
    let steps = tape.steps();
    let err = |m: &str| Err(NeuralError::State(m.to_string()));
    if steps == 0 {
        return err("empty tape");
    }
    if tape.head != params.head {
        return err("tape was recorded with a different head");
    }
    if tape.input_fc.len() != steps || tape.input_fc.iter().any(|a| a.len() != w.input_fc.len()) {
        return err("input FC activations do not match the network");
    }
    for (t, acts) in tape.input_fc.iter().enumerate() {
        for (a, d) in acts.iter().zip(&w.input_fc) {
            if a.len() != d.output_size() || tape.inputs[t].len() != super::FeatureVector::LEN {
                return err("input FC widths do not match the network");
            }
        }
    }
    if tape.lstm.len() != w.lstm.len() {
        return err("LSTM depth does not match the network");
    }
    for (states, layer) in tape.lstm.iter().zip(&w.lstm) {
        if states.len() != steps || states.iter().any(|s| s.h.len() != layer.hidden_size) {
            return err("LSTM states do not match the network");
        }
    }
    if tape.output_fc.len() != w.output_fc.len()
        || tape.output_fc.iter().zip(&w.output_fc).any(|(a, d)| a.len() != d.output_size())
    {
        return err("output FC activations do not match the network");
    }
    if tape.head_out.len() != w.head.output_size() {
        return err("head output does not match the network");
    }
    Ok(())
}

/// Backward pass through a dense layer given its output `y` and `dL/dy`;
/// returns `dL/dx`.
fn dense_backward(d: &Dense, x: &[f64], y: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
    let dz: Vec<f64> = match d.activation {
        Activation::Identity => dy.to_vec(),
        act => dy
            .iter()
            .zip(y)
            .map(|(&g, &out)| g * act.derivative_from_output(out))
            .collect(),
    };
    grad.weights.outer_add(&dz, x);
    for (b, g) in grad.bias.iter_mut().zip(&dz) {
        *b += g;
    }
    let mut dx = vec![0.0; d.input_size()];
    d.weights.matvec_t_add(&dz, &mut dx);
    dx
}

/// Adds the gradient of the data term to `grads`; returns the data loss.
pub(crate) fn accumulate_data_gradient(
    params: &NetworkParams,
    tape: &Tape,
    target: &Target,
    kind: LossKind,
    grads: &mut Weights,
) -> Result<f64, NeuralError> {
    check_tape(params, tape)?;
    let w = &params.weights;
    let steps = tape.steps();

    // dL/d(head pre-activation)
    let (loss, d_head) = match (params.head, target) {
        (HeadKind::Grid, Target::Cell(label)) => {
            let z = &tape.head_out;
            let class = label.linear_class(&params.geometry);
            let g = class_data_loss_grad(z, class, kind);
            let gz: f64 = g.iter().zip(z).map(|(a, b)| a * b).sum();
            let da: Vec<f64> = z.iter().zip(&g).map(|(&zk, &gk)| zk * (gk - gz)).collect();
            (class_data_loss(z, class, kind), da)
        }
        (HeadKind::Regression, Target::Point { x, y }) => {
            let n = &params.output_norm;
            let px = tape.anchor.0 + n.mean[0] + n.scale[0] * tape.head_out[0];
            let py = tape.anchor.1 + n.mean[1] + n.scale[1] * tape.head_out[1];
            let (ex, ey) = (px - x, py - y);
            (0.5 * (ex * ex + ey * ey), vec![ex * n.scale[0], ey * n.scale[1]])
        }
        _ => {
            return Err(NeuralError::HeadMismatch(
                "target kind does not match the network head".into(),
            ))
        }
    };

    // Head and output FC stack (final step only).
    let head_in = tape.head_input();
    let mut dx = dense_backward(&w.head, head_in, &[], &d_head, &mut grads.head);
    for i in (0..w.output_fc.len()).rev() {
        let x: &[f64] = if i > 0 {
            &tape.output_fc[i - 1]
        } else {
            &tape.lstm.last().expect("checked")[steps - 1].h
        };
        dx = dense_backward(&w.output_fc[i], x, &tape.output_fc[i], &dx, &mut grads.output_fc[i]);
    }

    // BPTT, top layer first. `dh_above[t]` is dL/dh_t arriving from the layer
    // above (or from the output stack for the top layer's final step).
    let mut dh_above: Vec<Vec<f64>> = vec![Vec::new(); steps];
    dh_above[steps - 1] = dx;
    for li in (0..w.lstm.len()).rev() {
        let layer = &w.lstm[li];
        let h = layer.hidden_size;
        let states = &tape.lstm[li];
        let gl = &mut grads.lstm[li];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        let mut dx_below: Vec<Vec<f64>> = vec![Vec::new(); steps];
        let zeros = vec![0.0; h];
        for t in (0..steps).rev() {
            let s = &states[t];
            let (c_prev, h_prev) = if t > 0 {
                (&states[t - 1].c, &states[t - 1].h)
            } else {
                (&zeros, &zeros)
            };
            let gates = &s.gates;
            for k in 0..h {
                let mut dh = dh_next[k];
                if let Some(v) = dh_above[t].get(k) {
                    dh += v;
                }
                let tc = s.c[k].tanh();
                let dc = dc_next[k] + dh * gates.o[k] * (1.0 - tc * tc);
                let (i, f, o, g) = (gates.i[k], gates.f[k], gates.o[k], gates.g[k]);
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dh * tc * o * (1.0 - o);
                dz[3 * h + k] = dc * i * (1.0 - g * g);
                dc_next[k] = dc * f;
            }
            let x = tape.lstm_input(li, t);
            gl.w_x.outer_add(&dz, x);
            gl.w_h.outer_add(&dz, h_prev);
            for (b, g) in gl.b.iter_mut().zip(&dz) {
                *b += g;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            layer.w_h.matvec_t_add(&dz, &mut dh_next);
            let mut dx = vec![0.0; layer.input_size()];
            layer.w_x.matvec_t_add(&dz, &mut dx);
            dx_below[t] = dx;
        }
        dh_above = dx_below;
    }

    // Input FC stack, every step.
    if !w.input_fc.is_empty() {
        for (t, mut d) in dh_above.into_iter().enumerate() {
            for i in (0..w.input_fc.len()).rev() {
                let x: &[f64] = if i > 0 {
                    &tape.input_fc[t][i - 1]
                } else {
                    &tape.inputs[t]
                };
                d = dense_backward(&w.input_fc[i], x, &tape.input_fc[t][i], &d, &mut grads.input_fc[i]);
            }
        }
    }
    Ok(loss)
}
