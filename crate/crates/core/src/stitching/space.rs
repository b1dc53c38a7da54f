use std::collections::BTreeMap;

use crate::anchors::{AnchorGrads, AnchorModel, AnchorSpec, BlockCache, HeadCache};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::stitching::layer::{ls_init, StitchLayer, StitchLayerGrads};
use crate::stitching::route::{
    depth_ratio, enumerate_configs, AnchorId, CrossingId, Direction, Segment, SpaceMode,
    StitchConfig,
};

/// All routes between two anchors plus one stitching layer per crossing.
///
/// Layers start as zero matrices; [`StitchSpace::ls_initialize`] fills them
/// with least-squares solutions from calibration activations.
#[derive(Clone, Debug)]
pub struct StitchSpace {
    pub small: AnchorSpec,
    pub large: AnchorSpec,
    pub mode: SpaceMode,
    configs: Vec<StitchConfig>,
    layers: BTreeMap<CrossingId, StitchLayer>,
}

/// Enumerates the stitching space between two anchor architectures.
pub fn enumerate_space(small: &AnchorSpec, large: &AnchorSpec, mode: SpaceMode) -> Result<StitchSpace> {
    StitchSpace::enumerate(small, large, mode)
}

/// Gradients of one stitched forward pass. Anchors only hold entries for
/// the blocks on the route; layers only for the crossings used.
#[derive(Clone, Debug)]
pub struct StitchGrads {
    pub small: AnchorGrads,
    pub large: AnchorGrads,
    pub layers: BTreeMap<CrossingId, StitchLayerGrads>,
}

/// Activations kept by [`StitchSpace::forward_stitched`].
#[derive(Clone, Debug)]
pub struct StitchedCache {
    config_id: usize,
    input: Matrix,
    segments: Vec<Vec<BlockCache>>,
    crossing_inputs: Vec<Matrix>,
    head: HeadCache,
}

impl StitchSpace {
    pub fn enumerate(small: &AnchorSpec, large: &AnchorSpec, mode: SpaceMode) -> Result<Self> {
        small.validate()?;
        large.validate()?;
        depth_ratio(small.depth, large.depth)?;
        if small.width > large.width {
            return Err(Error::Unsupported(format!(
                "small anchor is wider ({}) than large anchor ({})",
                small.width, large.width
            )));
        }
        if small.seq_len != large.seq_len
            || small.patch_dim != large.patch_dim
            || small.num_classes != large.num_classes
        {
            return Err(Error::Unsupported(
                "anchors must share seq_len, patch_dim and num_classes".into(),
            ));
        }
        let configs = enumerate_configs(small.depth, large.depth, mode)?;
        let mut layers = BTreeMap::new();
        for c in &configs {
            for x in &c.crossings {
                layers.entry(*x).or_insert_with(|| {
                    let (d_in, d_out) = match x.direction {
                        Direction::SmallToLarge => (small.width, large.width),
                        Direction::LargeToSmall => (large.width, small.width),
                    };
                    StitchLayer::new(Matrix::zeros(d_in, d_out))
                });
            }
        }
        Ok(StitchSpace {
            small: small.clone(),
            large: large.clone(),
            mode,
            configs,
            layers,
        })
    }

    /// Number of stitches `E`.
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn configs(&self) -> &[StitchConfig] {
        &self.configs
    }

    pub fn config(&self, id: usize) -> Result<&StitchConfig> {
        self.configs
            .get(id)
            .ok_or_else(|| Error::Lookup(format!("config {id} not in a space of {}", self.len())))
    }

    pub fn config_id(&self, config: &StitchConfig) -> Result<usize> {
        self.configs
            .iter()
            .position(|c| c == config)
            .ok_or_else(|| Error::Lookup(format!("route {} is not in this space", config.label())))
    }

    /// Indices of the pure small and large anchor routes.
    pub fn anchor_ids(&self) -> [usize; 2] {
        [0, 1]
    }

    pub fn depth_ratio(&self) -> usize {
        self.large.depth / self.small.depth
    }

    pub fn layers(&self) -> &BTreeMap<CrossingId, StitchLayer> {
        &self.layers
    }

    pub fn layer(&self, id: &CrossingId) -> Result<&StitchLayer> {
        self.layers
            .get(id)
            .ok_or_else(|| Error::Lookup(format!("no stitching layer for crossing {id}")))
    }

    pub fn layer_mut(&mut self, id: &CrossingId) -> Result<&mut StitchLayer> {
        self.layers
            .get_mut(id)
            .ok_or_else(|| Error::Lookup(format!("no stitching layer for crossing {id}")))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = (&CrossingId, &mut StitchLayer)> {
        self.layers.iter_mut()
    }

    /// Solves every stitching layer by least squares on the anchors'
    /// activations for the calibration batch `x` (`(samples·N) × patch_dim`).
    /// Drops any LoRA factors.
    pub fn ls_initialize(&mut self, small: &AnchorModel, large: &AnchorModel, x: &Matrix) -> Result<()> {
        self.check_models(small, large)?;
        let (_, small_cache) = small.forward(x)?;
        let (_, large_cache) = large.forward(x)?;
        let r = self.depth_ratio();
        for (id, layer) in self.layers.iter_mut() {
            let xs = small_cache
                .boundary(id.small_boundary)
                .ok_or_else(|| Error::State(format!("no small activation at boundary {}", id.small_boundary)))?;
            let xl = large_cache
                .boundary(id.large_boundary(r))
                .ok_or_else(|| Error::State(format!("no large activation at boundary {}", id.large_boundary(r))))?;
            let m = match id.direction {
                Direction::SmallToLarge => ls_init(xs, xl)?,
                Direction::LargeToSmall => ls_init(xl, xs)?,
            };
            *layer = StitchLayer::new(m);
        }
        Ok(())
    }

    /// Attaches fresh LoRA factors of the given rank to every layer.
    pub fn attach_lora(&mut self, rank: usize, std: f64, rng: &mut Rng) -> Result<()> {
        for layer in self.layers.values_mut() {
            layer.attach_lora(rank, std, rng)?;
        }
        Ok(())
    }

    fn check_models(&self, small: &AnchorModel, large: &AnchorModel) -> Result<()> {
        if small.spec != self.small || large.spec != self.large {
            return Err(Error::Config(
                "anchor models do not match the specs the space was enumerated for".into(),
            ));
        }
        Ok(())
    }

    fn model<'a>(&self, id: AnchorId, small: &'a AnchorModel, large: &'a AnchorModel) -> &'a AnchorModel {
        match id {
            AnchorId::Small => small,
            AnchorId::Large => large,
        }
    }

    /// Runs route `config_id` on `x`, keeping what backward needs.
    pub fn forward_stitched(
        &self,
        config_id: usize,
        small: &AnchorModel,
        large: &AnchorModel,
        x: &Matrix,
    ) -> Result<(Matrix, StitchedCache)> {
        self.check_models(small, large)?;
        let config = self.config(config_id)?;
        let entry = self.model(config.entry_anchor(), small, large);
        let mut h = entry.embed(x)?;
        let mut segments = Vec::with_capacity(config.segments.len());
        let mut crossing_inputs = Vec::with_capacity(config.crossings.len());
        for (i, seg) in config.segments.iter().enumerate() {
            if i > 0 {
                let layer = self.layer(&config.crossings[i - 1])?;
                let out = layer.forward(&h)?;
                crossing_inputs.push(std::mem::replace(&mut h, out));
            }
            let model = self.model(seg.anchor, small, large);
            let (out, caches) = model.forward_range_cached(&h, seg.from, seg.to)?;
            segments.push(caches);
            h = out;
        }
        let (logits, head) = self.model(config.head_anchor(), small, large).head_forward(&h)?;
        Ok((
            logits,
            StitchedCache {
                config_id,
                input: x.clone(),
                segments,
                crossing_inputs,
                head,
            },
        ))
    }

    /// Logits of route `config_id` without caching.
    pub fn infer_stitched(
        &self,
        config_id: usize,
        small: &AnchorModel,
        large: &AnchorModel,
        x: &Matrix,
    ) -> Result<Matrix> {
        self.check_models(small, large)?;
        let config = self.config(config_id)?;
        let mut h = self.model(config.entry_anchor(), small, large).embed(x)?;
        for (i, seg) in config.segments.iter().enumerate() {
            if i > 0 {
                h = self.layer(&config.crossings[i - 1])?.forward(&h)?;
            }
            h = self.model(seg.anchor, small, large).forward_range(&h, seg.from, seg.to)?;
        }
        Ok(self
            .model(config.head_anchor(), small, large)
            .head_forward(&h)?
            .0)
    }

    /// Reverse pass of a stitched route.
    pub fn backward_stitched(
        &self,
        small: &AnchorModel,
        large: &AnchorModel,
        cache: &StitchedCache,
        dlogits: &Matrix,
    ) -> Result<StitchGrads> {
        self.check_models(small, large)?;
        let config = self.config(cache.config_id)?;
        if cache.segments.len() != config.segments.len() {
            return Err(Error::State("stitched cache does not match its route".into()));
        }
        let mut grads = StitchGrads {
            small: AnchorGrads::empty(small),
            large: AnchorGrads::empty(large),
            layers: BTreeMap::new(),
        };
        let head_anchor = config.head_anchor();
        let head_model = self.model(head_anchor, small, large);
        let mut d = head_model.head_backward(&cache.head, dlogits, anchor_grads(&mut grads, head_anchor))?;
        for (i, seg) in config.segments.iter().enumerate().rev() {
            let model = self.model(seg.anchor, small, large);
            d = model.backward_range(seg.from, &cache.segments[i], &d, anchor_grads(&mut grads, seg.anchor))?;
            if i > 0 {
                let id = config.crossings[i - 1];
                let layer = self.layer(&id)?;
                let g = grads.layers.entry(id).or_insert_with(|| layer.zero_grads());
                d = layer.backward(&cache.crossing_inputs[i - 1], &d, g)?;
            }
        }
        let entry = config.entry_anchor();
        self.model(entry, small, large)
            .embed_backward(&cache.input, &d, anchor_grads(&mut grads, entry))?;
        Ok(grads)
    }

    /// Parameters a deployed route uses: its blocks, the entry embedding, the
    /// exit norm and head, and the merged `D_in × D_out` matrix per crossing.
    pub fn parameter_count(&self, config_id: usize, small: &AnchorModel, large: &AnchorModel) -> Result<usize> {
        let config = self.config(config_id)?;
        let model = |a| self.model(a, small, large);
        let entry = model(config.entry_anchor());
        let exit = model(config.head_anchor());
        let mut total = entry.patch_embed.weight.len() + entry.patch_embed.bias.len();
        total += exit.final_norm.scale.len() + exit.final_norm.shift.len();
        total += exit.head.weight.len() + exit.head.bias.len();
        for seg in &config.segments {
            total += seg.len() * model(seg.anchor).block_parameter_count();
        }
        for c in &config.crossings {
            total += self.layer(c)?.m.len();
        }
        Ok(total)
    }

    /// Every segment of every route, for cost accounting.
    pub fn segments(&self, config_id: usize) -> Result<&[Segment]> {
        Ok(&self.config(config_id)?.segments)
    }

    pub(crate) fn from_parts(
        small: AnchorSpec,
        large: AnchorSpec,
        mode: SpaceMode,
        layers: BTreeMap<CrossingId, StitchLayer>,
    ) -> Result<Self> {
        let mut space = StitchSpace::enumerate(&small, &large, mode)?;
        for (id, layer) in layers {
            let slot = space
                .layers
                .get_mut(&id)
                .ok_or_else(|| Error::Lookup(format!("crossing {id} is not part of this space")))?;
            if slot.m.shape() != layer.m.shape() {
                return Err(Error::shape(
                    "stitch layer",
                    format!("{id}: M is {:?}, expected {:?}", layer.m.shape(), slot.m.shape()),
                ));
            }
            *slot = layer;
        }
        Ok(space)
    }
}

fn anchor_grads(g: &mut StitchGrads, id: AnchorId) -> &mut AnchorGrads {
    match id {
        AnchorId::Small => &mut g.small,
        AnchorId::Large => &mut g.large,
    }
}
