//! Gated recurrent unit with an explicit backward pass.
//!
//! Gate rows are laid out `[reset; update; candidate]`:
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```

use rand::Rng;

use crate::tensor::{axpy, matvec, matvec_t_acc, outer_acc, sigmoid, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b_ih: Tensor,
    pub b_hh: Tensor,
}

/// Everything one step needs to run backwards.
#[derive(Debug, Clone)]
pub struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruParams {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruParams {
            w_ih: Tensor::uniform(&[3 * hidden, input], bound, rng),
            w_hh: Tensor::uniform(&[3 * hidden, hidden], bound, rng),
            b_ih: Tensor::zeros(&[3 * hidden]),
            b_hh: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        GruParams {
            w_ih: self.w_ih.zeros_like(),
            w_hh: self.w_hh.zeros_like(),
            b_ih: self.b_ih.zeros_like(),
            b_hh: self.b_hh.zeros_like(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("w_ih", &self.w_ih),
            ("w_hh", &self.w_hh),
            ("b_ih", &self.b_ih),
            ("b_hh", &self.b_hh),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 4] {
        [
            ("w_ih", &mut self.w_ih),
            ("w_hh", &mut self.w_hh),
            ("b_ih", &mut self.b_ih),
            ("b_hh", &mut self.b_hh),
        ]
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> GruStep {
        let hd = self.hidden();
        let mut gi = matvec(&self.w_ih, x);
        axpy(1.0, &self.b_ih.data, &mut gi);
        let mut gh = matvec(&self.w_hh, h_prev);
        axpy(1.0, &self.b_hh.data, &mut gh);

        let r: Vec<f64> = (0..hd).map(|k| sigmoid(gi[k] + gh[k])).collect();
        let z: Vec<f64> = (0..hd).map(|k| sigmoid(gi[hd + k] + gh[hd + k])).collect();
        let hn: Vec<f64> = gh[2 * hd..].to_vec();
        let n: Vec<f64> = (0..hd)
            .map(|k| (gi[2 * hd + k] + r[k] * hn[k]).tanh())
            .collect();
        let h = (0..hd)
            .map(|k| (1.0 - z[k]) * n[k] + z[k] * h_prev[k])
            .collect();
        GruStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            r,
            z,
            n,
            hn,
            h,
        }
    }

    /// Back-propagates `dh` through one step. Parameter gradients accumulate
    /// into `grads`, the input gradient into `dx`; returns the gradient for
    /// the previous hidden state.
    pub fn step_backward(
        &self,
        st: &GruStep,
        dh: &[f64],
        grads: &mut GruParams,
        dx: &mut [f64],
    ) -> Vec<f64> {
        let hd = self.hidden();
        let mut g_in = vec![0.0; 3 * hd];
        let mut g_hid = vec![0.0; 3 * hd];
        let mut dh_prev = vec![0.0; hd];
        for k in 0..hd {
            let (r, z, n) = (st.r[k], st.z[k], st.n[k]);
            let dn = dh[k] * (1.0 - z);
            let dz = dh[k] * (st.h_prev[k] - n);
            dh_prev[k] = dh[k] * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * st.hn[k];
            let dr_pre = dr * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            g_in[k] = dr_pre;
            g_in[hd + k] = dz_pre;
            g_in[2 * hd + k] = dn_pre;
            g_hid[k] = dr_pre;
            g_hid[hd + k] = dz_pre;
            g_hid[2 * hd + k] = dn_pre * r;
        }
        outer_acc(&mut grads.w_ih, &g_in, &st.x);
        axpy(1.0, &g_in, &mut grads.b_ih.data);
        matvec_t_acc(&self.w_ih, &g_in, dx);
        outer_acc(&mut grads.w_hh, &g_hid, &st.h_prev);
        axpy(1.0, &g_hid, &mut grads.b_hh.data);
        matvec_t_acc(&self.w_hh, &g_hid, &mut dh_prev);
        dh_prev
    }
}
