//! One-hidden-layer ReLU network with softmax cross-entropy.
//!
//! Parameter layout: `[W1 (h x p, row-major), b1 (h), W2 (k x h, row-major),
//! b2 (k)]`, so the parameter count is `p*h + h + h*k + k`. The ReLU
//! subgradient at zero is taken as zero.

struct Views<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

fn split(x: &[f64], p: usize, h: usize, k: usize) -> Views<'_> {
    let (w1, rest) = x.split_at(p * h);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(h * k);
    debug_assert_eq!(b2.len(), k);
    Views { w1, b1, w2, b2 }
}

fn forward(x: &[f64], input: &[f64], p: usize, h: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let v = split(x, p, h, k);
    let mut act = vec![0.0; h];
    for j in 0..h {
        let row = &v.w1[j * p..(j + 1) * p];
        let mut z = v.b1[j];
        for (wq, iq) in row.iter().zip(input) {
            z += wq * iq;
        }
        act[j] = if z > 0.0 { z } else { 0.0 };
    }
    let mut logits = vec![0.0; k];
    for c in 0..k {
        let row = &v.w2[c * h..(c + 1) * h];
        let mut z = v.b2[c];
        for (wj, aj) in row.iter().zip(&act) {
            z += wj * aj;
        }
        logits[c] = z;
    }
    (act, logits)
}

/// Softmax cross-entropy of one sample (data term only).
pub fn loss(x: &[f64], input: &[f64], label: usize, p: usize, h: usize, k: usize) -> f64 {
    let (_, logits) = forward(x, input, p, h, k);
    let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &z in &logits {
        sum += (z - zmax).exp();
    }
    zmax + sum.ln() - logits[label]
}

/// Backpropagated gradient of one sample's data term, written into `out`.
pub fn grad_into(
    x: &[f64],
    input: &[f64],
    label: usize,
    p: usize,
    h: usize,
    k: usize,
    out: &mut [f64],
) {
    let (act, logits) = forward(x, input, p, h, k);
    let v = split(x, p, h, k);

    let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut soft = vec![0.0; k];
    let mut sum = 0.0;
    for (s, &z) in soft.iter_mut().zip(&logits) {
        *s = (z - zmax).exp();
        sum += *s;
    }
    for s in &mut soft {
        *s /= sum;
    }
    // d loss / d logit
    soft[label] -= 1.0;

    let (dw1, rest) = out.split_at_mut(p * h);
    let (db1, rest) = rest.split_at_mut(h);
    let (dw2, db2) = rest.split_at_mut(h * k);

    for c in 0..k {
        let dz = soft[c];
        let row = &mut dw2[c * h..(c + 1) * h];
        for (g, &aj) in row.iter_mut().zip(&act) {
            *g = dz * aj;
        }
        db2[c] = dz;
    }

    for j in 0..h {
        // ReLU gate: activation zero means no gradient flows.
        let gate = act[j] > 0.0;
        let mut da = 0.0;
        if gate {
            for c in 0..k {
                da += soft[c] * v.w2[c * h + j];
            }
        }
        let row = &mut dw1[j * p..(j + 1) * p];
        for (g, &iq) in row.iter_mut().zip(input) {
            *g = da * iq;
        }
        db1[j] = da;
    }
}
