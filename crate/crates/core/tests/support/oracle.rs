//! Plain-loop reference implementations over nested vectors.

use textgsl::graph::TypedEdge;
use textgsl_autodiff::{ParamStore, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn param(store: &ParamStore<f64>, name: &str) -> Tensor<f64> {
    store.value(store.id(name).unwrap()).clone()
}

/// Row vector times matrix.
pub fn vecmat(x: &[f64], w: &Tensor<f64>) -> Vec<f64> {
    let (r, c) = (w.rows(), w.cols());
    assert_eq!(x.len(), r);
    let mut out = vec![0.0; c];
    for i in 0..r {
        for j in 0..c {
            out[j] += x[i] * w.at(i, j);
        }
    }
    out
}

pub fn linear(store: &ParamStore<f64>, name: &str, x: &[f64]) -> Vec<f64> {
    let mut y = vecmat(x, &param(store, &format!("{name}.weight")));
    let b = param(store, &format!("{name}.bias"));
    for (v, bb) in y.iter_mut().zip(b.data()) {
        *v += bb;
    }
    y
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn edge_weight(xi: &[f64], xj: &[f64], alpha: &[f64], beta: f64) -> f64 {
    let m = xi.len();
    let mut s = 0.0;
    for k in 0..m {
        s += alpha[k] * xi[k] + alpha[m + k] * xj[k];
    }
    let mut d = 0.0;
    for k in 0..m {
        d += (xi[k] - xj[k]).powi(2);
    }
    (s - beta * d).exp()
}

pub fn gru(store: &ParamStore<f64>, name: &str, a: &[f64], h: &[f64]) -> Vec<f64> {
    let p = |s: &str| param(store, &format!("{name}.{s}"));
    let m = h.len();
    let (az, ar, ah) = (vecmat(a, &p("wz")), vecmat(a, &p("wr")), vecmat(a, &p("wh")));
    let (hz, hr) = (vecmat(h, &p("uz")), vecmat(h, &p("ur")));
    let (bz, br, bh) = (p("bz"), p("br"), p("bh"));
    let z: Vec<f64> = (0..m).map(|k| sigmoid(az[k] + hz[k] + bz.data()[k])).collect();
    let r: Vec<f64> = (0..m).map(|k| sigmoid(ar[k] + hr[k] + br.data()[k])).collect();
    let rh: Vec<f64> = (0..m).map(|k| r[k] * h[k]).collect();
    let uh = vecmat(&rh, &p("uh"));
    (0..m)
        .map(|k| {
            let c = (ah[k] + uh[k] + bh.data()[k]).tanh();
            (1.0 - z[k]) * h[k] + z[k] * c
        })
        .collect()
}

/// One message passing step with relu messages and no dropout.
pub fn mpnn_step(store: &ParamStore<f64>, x: &Mat, edges: &[TypedEdge]) -> Mat {
    let alpha = param(store, "str.edge.alpha");
    let beta = param(store, "str.edge.beta").item();
    let gamma = |name: &str| param(store, &format!("str.gamma.{name}")).item();
    let m = x[0].len();
    let mut msg = vec![vec![0.0; m]; x.len()];
    for e in edges {
        let w = edge_weight(&x[e.src], &x[e.dst], alpha.data(), beta) * gamma(e.relation.name());
        for k in 0..m {
            msg[e.src][k] += w * x[e.dst][k];
        }
    }
    for row in &mut msg {
        for v in row.iter_mut() {
            *v = v.max(0.0);
        }
    }
    (0..x.len()).map(|i| gru(store, "str.gru", &msg[i], &x[i])).collect()
}

pub fn mlp(store: &ParamStore<f64>, name: &str, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = linear(store, &format!("{name}.hidden"), x)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    linear(store, &format!("{name}.out"), &h)
}

/// Gated max-plus-mean pooling.
pub fn readout(store: &ParamStore<f64>, x: &Mat) -> Vec<f64> {
    let m = x[0].len();
    let xv: Mat = x
        .iter()
        .map(|row| {
            let g = mlp(store, "readout.f1", row);
            let v = mlp(store, "readout.f2", row);
            (0..m).map(|k| sigmoid(g[k]) * v[k].tanh()).collect()
        })
        .collect();
    (0..m)
        .map(|k| {
            let mx = xv.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            let mean = xv.iter().map(|r| r[k]).sum::<f64>() / xv.len() as f64;
            mx + mean
        })
        .collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    -softmax(logits)[label].max(1e-12).ln()
}

/// Forward then backward GRU states over rows, concatenated per row.
pub fn bigru(store: &ParamStore<f64>, x: &Mat) -> Mat {
    let m = param(store, "fuse.fwd.uz").cols();
    let n = x.len();
    let mut fwd = Vec::with_capacity(n);
    let mut h = vec![0.0; m];
    for row in x {
        h = gru(store, "fuse.fwd", row, &h);
        fwd.push(h.clone());
    }
    let mut bwd = vec![Vec::new(); n];
    let mut h = vec![0.0; m];
    for t in (0..n).rev() {
        h = gru(store, "fuse.bwd", &x[t], &h);
        bwd[t] = h.clone();
    }
    (0..n).map(|t| [fwd[t].clone(), bwd[t].clone()].concat()).collect()
}
