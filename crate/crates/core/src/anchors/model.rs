use crate::anchors::layers::{
    attention_backward, attention_forward, gelu, gelu_grad, LayerNorm, LayerNormCache, Linear,
    INIT_STD,
};
use crate::anchors::AnchorSpec;
use crate::error::{Error, Result};
use crate::linalg::{gaussian, Matrix, Rng};

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `h + mlp(ln2(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Names of the twelve tensors of a block, in serialization order.
pub const BLOCK_TENSORS: [&str; 12] = [
    "ln1.scale",
    "ln1.shift",
    "attn.qkv.weight",
    "attn.qkv.bias",
    "attn.proj.weight",
    "attn.proj.bias",
    "ln2.scale",
    "ln2.shift",
    "mlp.fc1.weight",
    "mlp.fc1.bias",
    "mlp.fc2.weight",
    "mlp.fc2.bias",
];

/// Activations kept by a block's forward pass.
#[derive(Clone, Debug)]
pub struct BlockCache {
    input: Matrix,
    ln1: LayerNormCache,
    normed1: Matrix,
    qkv: Matrix,
    probs: Vec<f64>,
    attn_out: Matrix,
    ln2: LayerNormCache,
    normed2: Matrix,
    pre_act: Matrix,
    act: Matrix,
}

impl BlockCache {
    /// The block's input activations, `(batch·N) × D`.
    pub fn input(&self) -> &Matrix {
        &self.input
    }
}

impl TransformerBlock {
    fn init(rng: &mut Rng, spec: &AnchorSpec) -> Result<Self> {
        let d = spec.width;
        Ok(TransformerBlock {
            ln1: LayerNorm::new(d),
            qkv: Linear::init(rng, d, 3 * d)?,
            proj: Linear::init(rng, d, d)?,
            ln2: LayerNorm::new(d),
            fc1: Linear::init(rng, d, spec.mlp_hidden())?,
            fc2: Linear::init(rng, spec.mlp_hidden(), d)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        TransformerBlock {
            ln1: self.ln1.zeros_like(),
            qkv: self.qkv.zeros_like(),
            proj: self.proj.zeros_like(),
            ln2: self.ln2.zeros_like(),
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    /// Tensors paired with their names from [`BLOCK_TENSORS`].
    pub fn tensors(&self) -> [&Matrix; 12] {
        [
            &self.ln1.scale,
            &self.ln1.shift,
            &self.qkv.weight,
            &self.qkv.bias,
            &self.proj.weight,
            &self.proj.bias,
            &self.ln2.scale,
            &self.ln2.shift,
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.ln1.scale,
            &mut self.ln1.shift,
            &mut self.qkv.weight,
            &mut self.qkv.bias,
            &mut self.proj.weight,
            &mut self.proj.bias,
            &mut self.ln2.scale,
            &mut self.ln2.shift,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }

    fn forward(&self, x: &Matrix, seq_len: usize, heads: usize) -> Result<(Matrix, BlockCache)> {
        let (normed1, ln1) = self.ln1.forward(x);
        let qkv = self.qkv.forward(&normed1)?;
        let (attn_out, probs) = attention_forward(&qkv, seq_len, heads);
        let mut h = self.proj.forward(&attn_out)?;
        h.add_assign(x)?;

        let (normed2, ln2) = self.ln2.forward(&h);
        let pre_act = self.fc1.forward(&normed2)?;
        let act = pre_act.map(gelu);
        let mut y = self.fc2.forward(&act)?;
        y.add_assign(&h)?;

        let cache = BlockCache {
            input: x.clone(),
            ln1,
            normed1,
            qkv,
            probs,
            attn_out,
            ln2,
            normed2,
            pre_act,
            act,
        };
        Ok((y, cache))
    }

    fn forward_only(&self, x: &Matrix, seq_len: usize, heads: usize) -> Result<Matrix> {
        let (normed1, _) = self.ln1.forward(x);
        let qkv = self.qkv.forward(&normed1)?;
        let (attn_out, _) = attention_forward(&qkv, seq_len, heads);
        let mut h = self.proj.forward(&attn_out)?;
        h.add_assign(x)?;
        let (normed2, _) = self.ln2.forward(&h);
        let act = self.fc1.forward(&normed2)?.map(gelu);
        let mut y = self.fc2.forward(&act)?;
        y.add_assign(&h)?;
        Ok(y)
    }

    fn backward(
        &self,
        cache: &BlockCache,
        dy: &Matrix,
        seq_len: usize,
        heads: usize,
        grad: &mut TransformerBlock,
    ) -> Result<Matrix> {
        // MLP branch; the residual passes dy straight through to h.
        let mut d_act = self.fc2.backward(&cache.act, dy, &mut grad.fc2)?;
        for (g, &u) in d_act.data_mut().iter_mut().zip(cache.pre_act.data()) {
            *g *= gelu_grad(u);
        }
        let d_normed2 = self.fc1.backward(&cache.normed2, &d_act, &mut grad.fc1)?;
        let mut dh = self.ln2.backward(&cache.ln2, &d_normed2, &mut grad.ln2)?;
        dh.add_assign(dy)?;

        // Attention branch; residual passes dh through to x.
        let d_attn = self.proj.backward(&cache.attn_out, &dh, &mut grad.proj)?;
        let d_qkv = attention_backward(&cache.qkv, &cache.probs, &d_attn, seq_len, heads);
        let d_normed1 = self.qkv.backward(&cache.normed1, &d_qkv, &mut grad.qkv)?;
        let mut dx = self.ln1.backward(&cache.ln1, &d_normed1, &mut grad.ln1)?;
        dx.add_assign(&dh)?;
        Ok(dx)
    }
}

/// A plain transformer classifier: patch embedding with a per-token bias
/// (which doubles as a learned position embedding), `depth` pre-norm
/// blocks, a final norm, mean pooling over tokens and a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorModel {
    pub spec: AnchorSpec,
    /// Weight `patch_dim × D`, bias `N × D`.
    pub patch_embed: Linear,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
    /// Weight `D × num_classes`, bias `1 × num_classes`.
    pub head: Linear,
}

/// Cache of the embedding and head stages, used by stitched routes that
/// enter or leave an anchor in the middle.
#[derive(Clone, Debug)]
pub struct HeadCache {
    input: Matrix,
    norm: LayerNormCache,
    pooled: Matrix,
    batch: usize,
}

/// Everything [`AnchorModel::backward`] needs from a forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    input: Option<Matrix>,
    blocks: Vec<BlockCache>,
    head: Option<HeadCache>,
}

impl ForwardCache {
    /// Activation at block boundary `k`: the embedding output for `k = 0`,
    /// otherwise the output of block `k - 1`. Shape `(batch·N) × D`.
    pub fn boundary(&self, k: usize) -> Option<&Matrix> {
        if k < self.blocks.len() {
            Some(&self.blocks[k].input)
        } else if k == self.blocks.len() {
            self.head.as_ref().map(|h| &h.input)
        } else {
            None
        }
    }
}

/// Route-sparse gradients of an [`AnchorModel`]. A `None` entry means the
/// tensor group took no part in the forward pass and receives no update.
#[derive(Clone, Debug, Default)]
pub struct AnchorGrads {
    pub patch_embed: Option<Linear>,
    pub blocks: Vec<Option<TransformerBlock>>,
    pub final_norm: Option<LayerNorm>,
    pub head: Option<Linear>,
}

impl AnchorGrads {
    pub fn empty(model: &AnchorModel) -> Self {
        AnchorGrads {
            patch_embed: None,
            blocks: vec![None; model.blocks.len()],
            final_norm: None,
            head: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.patch_embed.is_none()
            && self.final_norm.is_none()
            && self.head.is_none()
            && self.blocks.iter().all(Option::is_none)
    }

    /// Named `(name, gradient)` pairs for every tensor that received one.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        if let Some(g) = &self.patch_embed {
            out.push(("patch_embed.weight".to_string(), &g.weight));
            out.push(("patch_embed.bias".to_string(), &g.bias));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(b) = b {
                for (name, t) in BLOCK_TENSORS.iter().zip(b.tensors()) {
                    out.push((format!("blocks.{i}.{name}"), t));
                }
            }
        }
        if let Some(g) = &self.final_norm {
            out.push(("norm.scale".to_string(), &g.scale));
            out.push(("norm.shift".to_string(), &g.shift));
        }
        if let Some(g) = &self.head {
            out.push(("head.weight".to_string(), &g.weight));
            out.push(("head.bias".to_string(), &g.bias));
        }
        out
    }
}

impl AnchorModel {
    /// Randomly initialized model: weights `N(0, 0.02²)`, biases zero,
    /// norms at identity.
    pub fn new(spec: AnchorSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let d = spec.width;
        let patch_embed = Linear {
            weight: gaussian(rng, spec.patch_dim, d, INIT_STD)?,
            bias: gaussian(rng, spec.seq_len, d, INIT_STD)?,
        };
        let blocks = (0..spec.depth)
            .map(|_| TransformerBlock::init(rng, &spec))
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::init(rng, d, spec.num_classes)?;
        Ok(AnchorModel {
            final_norm: LayerNorm::new(d),
            spec,
            patch_embed,
            blocks,
            head,
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    /// Every tensor with its checkpoint name, in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("patch_embed.weight".to_string(), &self.patch_embed.weight),
            ("patch_embed.bias".to_string(), &self.patch_embed.bias),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in BLOCK_TENSORS.iter().zip(b.tensors()) {
                out.push((format!("blocks.{i}.{name}"), t));
            }
        }
        out.push(("norm.scale".to_string(), &self.final_norm.scale));
        out.push(("norm.shift".to_string(), &self.final_norm.shift));
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![
            ("patch_embed.weight".to_string(), &mut self.patch_embed.weight),
            ("patch_embed.bias".to_string(), &mut self.patch_embed.bias),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (name, t) in BLOCK_TENSORS.iter().zip(b.tensors_mut()) {
                out.push((format!("blocks.{i}.{name}"), t));
            }
        }
        out.push(("norm.scale".to_string(), &mut self.final_norm.scale));
        out.push(("norm.shift".to_string(), &mut self.final_norm.shift));
        out.push(("head.weight".to_string(), &mut self.head.weight));
        out.push(("head.bias".to_string(), &mut self.head.bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Parameters of one block.
    pub fn block_parameter_count(&self) -> usize {
        self.blocks[0].tensors().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<usize> {
        let n = self.spec.seq_len;
        if x.cols() != self.spec.patch_dim || x.rows() == 0 || !x.rows().is_multiple_of(n) {
            return Err(Error::shape(
                "anchor input",
                format!(
                    "expected (batch*{n}) x {}, got {:?}",
                    self.spec.patch_dim,
                    x.shape()
                ),
            ));
        }
        Ok(x.rows() / n)
    }

    fn check_hidden(&self, h: &Matrix) -> Result<()> {
        let n = self.spec.seq_len;
        if h.cols() != self.spec.width || h.rows() == 0 || !h.rows().is_multiple_of(n) {
            return Err(Error::shape(
                "anchor activations",
                format!("expected (batch*{n}) x {}, got {:?}", self.spec.width, h.shape()),
            ));
        }
        Ok(())
    }

    /// Patch embedding: `(batch·N) × patch_dim` tokens to `(batch·N) × D`.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.matmul(&self.patch_embed.weight)?;
        let n = self.spec.seq_len;
        for r in 0..h.rows() {
            let pos = self.patch_embed.bias.row(r % n);
            for (a, b) in h.row_mut(r).iter_mut().zip(pos) {
                *a += b;
            }
        }
        Ok(h)
    }

    pub fn embed_backward(&self, x: &Matrix, dh: &Matrix, grads: &mut AnchorGrads) -> Result<()> {
        let g = grads
            .patch_embed
            .get_or_insert_with(|| self.patch_embed.zeros_like());
        g.weight.add_assign(&x.t_matmul(dh)?)?;
        let n = self.spec.seq_len;
        for r in 0..dh.rows() {
            let src = dh.row(r);
            for (a, b) in g.bias.row_mut(r % n).iter_mut().zip(src) {
                *a += b;
            }
        }
        Ok(())
    }

    fn check_range(&self, from: usize, to: usize) -> Result<()> {
        if from > to || to > self.depth() {
            return Err(Error::Index(format!(
                "block range [{from}, {to}) outside [0, {}]",
                self.depth()
            )));
        }
        Ok(())
    }

    /// Applies blocks `[from, to)` to `h`.
    pub fn forward_range(&self, h: &Matrix, from: usize, to: usize) -> Result<Matrix> {
        self.check_range(from, to)?;
        self.check_hidden(h)?;
        let mut cur = h.clone();
        for b in &self.blocks[from..to] {
            cur = b.forward_only(&cur, self.spec.seq_len, self.spec.heads)?;
        }
        Ok(cur)
    }

    /// As [`forward_range`](Self::forward_range), keeping per-block caches.
    pub fn forward_range_cached(
        &self,
        h: &Matrix,
        from: usize,
        to: usize,
    ) -> Result<(Matrix, Vec<BlockCache>)> {
        self.check_range(from, to)?;
        self.check_hidden(h)?;
        let mut cur = h.clone();
        let mut caches = Vec::with_capacity(to - from);
        for b in &self.blocks[from..to] {
            let (next, cache) = b.forward(&cur, self.spec.seq_len, self.spec.heads)?;
            caches.push(cache);
            cur = next;
        }
        Ok((cur, caches))
    }

    /// Backward through blocks `[from, from + caches.len())`; returns the
    /// gradient at the range's input.
    pub fn backward_range(
        &self,
        from: usize,
        caches: &[BlockCache],
        dy: &Matrix,
        grads: &mut AnchorGrads,
    ) -> Result<Matrix> {
        self.check_range(from, from + caches.len())?;
        let mut d = dy.clone();
        for (k, cache) in caches.iter().enumerate().rev() {
            let idx = from + k;
            let block = &self.blocks[idx];
            let g = grads.blocks[idx].get_or_insert_with(|| block.zeros_like());
            d = block.backward(cache, &d, self.spec.seq_len, self.spec.heads, g)?;
        }
        Ok(d)
    }

    /// Final norm, mean pool over tokens, classifier head.
    pub fn head_forward(&self, h: &Matrix) -> Result<(Matrix, HeadCache)> {
        self.check_hidden(h)?;
        let n = self.spec.seq_len;
        let batch = h.rows() / n;
        let (normed, norm) = self.final_norm.forward(h);
        let mut pooled = Matrix::zeros(batch, self.spec.width);
        for s in 0..batch {
            let dst = pooled.row_mut(s);
            for t in 0..n {
                for (a, b) in dst.iter_mut().zip(normed.row(s * n + t)) {
                    *a += b;
                }
            }
            dst.iter_mut().for_each(|v| *v /= n as f64);
        }
        let logits = self.head.forward(&pooled)?;
        Ok((
            logits,
            HeadCache {
                input: h.clone(),
                norm,
                pooled,
                batch,
            },
        ))
    }

    pub fn head_backward(
        &self,
        cache: &HeadCache,
        dlogits: &Matrix,
        grads: &mut AnchorGrads,
    ) -> Result<Matrix> {
        if dlogits.shape() != (cache.batch, self.spec.num_classes) {
            return Err(Error::shape(
                "head backward",
                format!("logit gradient {:?}", dlogits.shape()),
            ));
        }
        let g_head = grads.head.get_or_insert_with(|| self.head.zeros_like());
        let d_pooled = self.head.backward(&cache.pooled, dlogits, g_head)?;
        let n = self.spec.seq_len;
        let mut d_normed = Matrix::zeros(cache.batch * n, self.spec.width);
        for s in 0..cache.batch {
            let src: Vec<f64> = d_pooled.row(s).iter().map(|v| v / n as f64).collect();
            for t in 0..n {
                d_normed.row_mut(s * n + t).copy_from_slice(&src);
            }
        }
        let g_norm = grads
            .final_norm
            .get_or_insert_with(|| self.final_norm.zeros_like());
        self.final_norm.backward(&cache.norm, &d_normed, g_norm)
    }

    /// Full forward pass, caching everything needed by [`backward`](Self::backward).
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let h = self.embed(x)?;
        let (h, blocks) = self.forward_range_cached(&h, 0, self.depth())?;
        let (logits, head) = self.head_forward(&h)?;
        Ok((
            logits,
            ForwardCache {
                input: Some(x.clone()),
                blocks,
                head: Some(head),
            },
        ))
    }

    /// Logits without keeping a cache.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let h = self.embed(x)?;
        let h = self.forward_range(&h, 0, self.depth())?;
        Ok(self.head_forward(&h)?.0)
    }

    /// Reverse pass from `∂L/∂logits` to every parameter.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<AnchorGrads> {
        let (Some(input), Some(head)) = (&cache.input, &cache.head) else {
            return Err(Error::State("backward called without a forward cache".into()));
        };
        if cache.blocks.len() != self.depth() {
            return Err(Error::State(format!(
                "forward cache holds {} blocks, model has {}",
                cache.blocks.len(),
                self.depth()
            )));
        }
        let mut grads = AnchorGrads::empty(self);
        let dh = self.head_backward(head, dlogits, &mut grads)?;
        let dh = self.backward_range(0, &cache.blocks, &dh, &mut grads)?;
        self.embed_backward(input, &dh, &mut grads)?;
        Ok(grads)
    }
}
