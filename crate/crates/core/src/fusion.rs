//! Aspect gate flow over the encoded streams, hierarchical fusion with the
//! behaviour sequence and the three-layer classification head.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

pub const CONV_KERNEL: usize = 3;

/// One gate: a dense producing class probabilities from a flattened stream
/// and a dense mapping the augmented opposite stream to `D` logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    pub prob_w: ParamId,
    pub prob_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl GateWeights {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        seq_len: usize,
        d_model: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let flat = seq_len * d_model;
        let augmented = seq_len * (classes + d_model);
        GateWeights {
            prob_w: store.add_glorot(format!("{prefix}.prob_w"), flat, classes, rng),
            prob_b: store.add_zeros(format!("{prefix}.prob_b"), 1, classes),
            out_w: store.add_glorot(format!("{prefix}.out_w"), augmented, classes, rng),
            out_b: store.add_zeros(format!("{prefix}.out_b"), 1, classes),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GateOutput {
    /// Class distribution `[1, D]` read from the source stream.
    pub probs: Var,
    /// `[N, D + d_model]`: broadcast probabilities beside the other stream.
    pub augmented: Var,
    /// `[1, D]` logits.
    pub logits: Var,
}

/// `P = softmax(dense(flatten(source)))`, `O = [broadcast(P) ; other]`,
/// output `dense(flatten(O))`.
fn gate(g: &mut Graph, store: &ParamStore, w: &GateWeights, source: Var, other: Var) -> Result<GateOutput> {
    let (ns, ds) = g.value(source).dims2();
    let (no, do_) = g.value(other).dims2();
    if ns != no || ds != do_ {
        return Err(Error::shape("gate", g.value(source).shape(), g.value(other).shape()));
    }
    let flat = g.flatten(source)?;
    let pw = g.param(store, w.prob_w)?;
    let pb = g.param(store, w.prob_b)?;
    let logits = g.linear(flat, pw, pb)?;
    let probs = g.softmax_rows(logits)?;
    let wide = g.broadcast_rows(probs, ns)?;
    let augmented = g.concat_cols(&[wide, other])?;
    let flat_o = g.flatten(augmented)?;
    let ow = g.param(store, w.out_w)?;
    let ob = g.param(store, w.out_b)?;
    let out = g.linear(flat_o, ow, ob)?;
    Ok(GateOutput {
        probs,
        augmented,
        logits: out,
    })
}

/// Content gate: `P_Th` from `T_h`, `O_C = [P̂_Th ; C_h]`, `P_C`.
pub fn content_gate(g: &mut Graph, store: &ParamStore, w: &GateWeights, t_h: Var, c_h: Var) -> Result<GateOutput> {
    gate(g, store, w, t_h, c_h)
}

/// Target gate: `P_Ch` from `C_h`, `O_T = [P̂_Ch ; T_h]`, `P_T`.
pub fn target_gate(g: &mut Graph, store: &ParamStore, w: &GateWeights, c_h: Var, t_h: Var) -> Result<GateOutput> {
    gate(g, store, w, c_h, t_h)
}

/// Stacked `conv1d + relu` blocks followed by a max-pool over tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvStack {
    pub blocks: Vec<(ParamId, ParamId)>,
    pub channels: usize,
}

impl ConvStack {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        channels: usize,
        blocks: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let blocks = (0..blocks)
            .map(|b| {
                let c_in = if b == 0 { in_channels } else { channels };
                (
                    store.add_glorot(format!("{prefix}.b{b}.w"), CONV_KERNEL * c_in, channels, rng),
                    store.add_zeros(format!("{prefix}.b{b}.bias"), 1, channels),
                )
            })
            .collect();
        ConvStack { blocks, channels }
    }

    /// Applies the first `repeats` blocks, then pools to `[1, channels]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, repeats: usize) -> Result<Var> {
        if repeats == 0 || repeats > self.blocks.len() {
            return Err(Error::Config(format!(
                "fusion repeats {repeats} outside 1..={}",
                self.blocks.len()
            )));
        }
        let mut h = x;
        for &(w, b) in &self.blocks[..repeats] {
            let wv = g.param(store, w)?;
            let bv = g.param(store, b)?;
            let conv = g.conv1d(h, wv, CONV_KERNEL)?;
            let rows = g.value(conv).rows();
            let bias = g.broadcast_rows(bv, rows)?;
            let sum = g.add(conv, bias)?;
            h = g.relu(sum)?;
        }
        g.max_pool_rows(h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub content: ConvStack,
    pub target: ConvStack,
}

impl FusionWeights {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        classes: usize,
        d_model: usize,
        repeats: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        FusionWeights {
            content: ConvStack::init(store, &format!("{prefix}.content"), classes + d_model, d_model, repeats, rng),
            target: ConvStack::init(store, &format!("{prefix}.target"), classes + d_model, d_model, repeats, rng),
        }
    }
}

/// Fused feature row `F_F`.
///
/// With `P_G` each gate output is broadcast over the tokens, set beside
/// `P_G` and integrated by its own conv stack; `F_F = [C_C ; C_T]`.
/// Without it `F_F = [P_C ; P_T]`.
pub fn hierarchical_fusion(
    g: &mut Graph,
    store: &ParamStore,
    p_c: Var,
    p_t: Var,
    p_g: Option<Var>,
    weights: Option<&FusionWeights>,
    repeats: usize,
) -> Result<Var> {
    if repeats == 0 {
        return Err(Error::Config("fusion repeats must be at least 1".into()));
    }
    let Some(p_g) = p_g else {
        return g.concat_cols(&[p_c, p_t]);
    };
    let w = weights.ok_or_else(|| Error::Config("graph fusion needs convolution weights".into()))?;
    let n = g.value(p_g).rows();
    let bc = g.broadcast_rows(p_c, n)?;
    let content_in = g.concat_cols(&[bc, p_g])?;
    let c_c = w.content.forward(g, store, content_in, repeats)?;
    let bt = g.broadcast_rows(p_t, n)?;
    let target_in = g.concat_cols(&[bt, p_g])?;
    let c_t = w.target.forward(g, store, target_in, repeats)?;
    g.concat_cols(&[c_c, c_t])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpHead {
    pub layers: [(ParamId, ParamId); 3],
}

impl MlpHead {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: (usize, usize),
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let dims = [(input, hidden.0), (hidden.0, hidden.1), (hidden.1, classes)];
        let layers = [0, 1, 2].map(|i| {
            let (fi, fo) = dims[i];
            (
                store.add_glorot(format!("{prefix}.w{}", i + 1), fi, fo, rng),
                store.add_zeros(format!("{prefix}.b{}", i + 1), 1, fo),
            )
        });
        MlpHead { layers }
    }

    /// Pre-softmax logits of `Z`.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, f_f: Var) -> Result<Var> {
        let mut h = f_f;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(store, w)?;
            let bv = g.param(store, b)?;
            h = g.linear(h, wv, bv)?;
            if i < 2 {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// `Z = softmax(W3 relu(W2 relu(W1 F_F + b1) + b2) + b3)`.
pub fn mlp_head(g: &mut Graph, store: &ParamStore, head: &MlpHead, f_f: Var) -> Result<Var> {
    let logits = head.logits(g, store, f_f)?;
    g.softmax_rows(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn zero_gate_weights_give_uniform_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let w = GateWeights::init(&mut store, "gate", 3, 4, 5, &mut rng);
        zero_all(&mut store);
        let mut g = Graph::new();
        let t = g.constant(random(3, 4, &mut rng)).unwrap();
        let c = g.constant(random(3, 4, &mut rng)).unwrap();
        let out = content_gate(&mut g, &store, &w, t, c).unwrap();
        for &p in g.value(out.probs).data() {
            assert!((p - 0.2).abs() < 1e-12);
        }
        assert_eq!(g.value(out.augmented).shape(), &[3, 9]);
        assert_eq!(g.value(out.logits).shape(), &[1, 5]);
    }

    #[test]
    fn tied_gates_on_equal_streams_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let w = GateWeights::init(&mut store, "gate", 3, 4, 2, &mut rng);
        let x = random(3, 4, &mut rng);
        let mut g = Graph::new();
        let t = g.constant(x.clone()).unwrap();
        let c = g.constant(x).unwrap();
        let pc = content_gate(&mut g, &store, &w, t, c).unwrap();
        let pt = target_gate(&mut g, &store, &w, c, t).unwrap();
        assert_eq!(g.value(pc.logits).data(), g.value(pt.logits).data());
    }

    #[test]
    fn gate_rejects_length_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let w = GateWeights::init(&mut store, "gate", 3, 4, 2, &mut rng);
        let mut g = Graph::new();
        let t = g.constant(random(3, 4, &mut rng)).unwrap();
        let c = g.constant(random(2, 4, &mut rng)).unwrap();
        assert!(content_gate(&mut g, &store, &w, t, c).is_err());
    }

    #[test]
    fn fusion_without_graph_concatenates() {
        let store = ParamStore::new();
        let mut g = Graph::new();
        let pc = g.constant(Tensor::row_vector(vec![1.0, 2.0])).unwrap();
        let pt = g.constant(Tensor::row_vector(vec![3.0, 4.0])).unwrap();
        let f = hierarchical_fusion(&mut g, &store, pc, pt, None, None, 1).unwrap();
        assert_eq!(g.value(f).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(hierarchical_fusion(&mut g, &store, pc, pt, None, None, 0).is_err());
    }

    #[test]
    fn fusion_depth_changes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let w = FusionWeights::init(&mut store, "fuse", 2, 6, 3, &mut rng);
        let mut g = Graph::new();
        let pc = g.constant(random(1, 2, &mut rng)).unwrap();
        let pt = g.constant(random(1, 2, &mut rng)).unwrap();
        let pg = g.constant(random(5, 6, &mut rng)).unwrap();
        let one = hierarchical_fusion(&mut g, &store, pc, pt, Some(pg), Some(&w), 1).unwrap();
        let three = hierarchical_fusion(&mut g, &store, pc, pt, Some(pg), Some(&w), 3).unwrap();
        assert_eq!(g.value(one).shape(), &[1, 12]);
        assert!(g.value(one).max_abs_diff(g.value(three)) > 1e-6);
        assert!(hierarchical_fusion(&mut g, &store, pc, pt, Some(pg), Some(&w), 4).is_err());
    }

    #[test]
    fn zero_head_is_uniform_and_tiny_case_matches_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let head = MlpHead::init(&mut store, "mlp", 2, (2, 2), 2, &mut rng);
        zero_all(&mut store);
        let mut g = Graph::new();
        let f = g.constant(Tensor::row_vector(vec![0.7, -0.1])).unwrap();
        let z = mlp_head(&mut g, &store, &head, f).unwrap();
        assert_eq!(g.value(z).data(), &[0.5, 0.5]);

        // identity first two layers, then W3 = [[1, 0], [0, 0]], b3 = [0, ln 3]
        let eye = Tensor::identity(2);
        store.set(head.layers[0].0, eye.clone()).unwrap();
        store.set(head.layers[1].0, eye).unwrap();
        store.set(head.layers[2].0, Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0])).unwrap();
        store.set(head.layers[2].1, Tensor::row_vector(vec![0.0, 3f64.ln()])).unwrap();
        let mut g = Graph::new();
        let f = g.constant(Tensor::row_vector(vec![2f64.ln(), -4.0])).unwrap();
        let z = mlp_head(&mut g, &store, &head, f).unwrap();
        // logits [ln 2, ln 3] -> [2/5, 3/5]
        let z = g.value(z).data();
        assert!((z[0] - 0.4).abs() < 1e-12 && (z[1] - 0.6).abs() < 1e-12, "{z:?}");
    }
}
