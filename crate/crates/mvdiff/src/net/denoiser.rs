//! The multi-view denoiser ε_θ: a UNet-style encoder–decoder over view
//! batches with three conditioning pathways.
//!
//! * Global: timestep sinusoid, a tiny source-image encoder, and a relative
//!   orbit-pose MLP all feed one conditioning vector per view.
//! * Channel-wise: the source latent is concatenated to the noisy input.
//! * Geometric: per-pixel Plücker ray embeddings enter according to the
//!   conditioning mode — concatenated at the input, concatenated at every
//!   block, or modulating every block's normalization (RCN). Rays and poses
//!   are expressed relative to the source camera, and ray maps are
//!   re-derived from the scaled camera at each resolution.
//!
//! Cross-view attention mixes the views of one instance at equal spatial
//! sites when enabled. Forward returns an explicit cache which `backward`
//! consumes to produce parameter gradients; no autodiff is involved.

use ndarray::{concatenate, s, Array2, Array4, Axis, Ix5};

use super::attention::{AttnCache, ViewAttention};
use super::embed::{sinusoidal_embedding, EmbedMlp, EmbedMlpCache, SourceEncoder, SourceEncoderCache};
use super::layers::{
    silu2, silu2_backward, silu4, silu4_backward, upsample2, upsample2_backward, Conv2d, Linear, SiteNorm,
    SiteNormCache,
};
use super::modulation::{ModCache, RayModulation};
use super::params::{init_params_from_specs, GradStore, ParamSpec, ParamStore};
use crate::error::{Error, Result};
use crate::geometry::{pose_of_camera, ray_map, Camera, FourierConfig};
use crate::kv::{parse_bool, KvReader};

/// How camera geometry conditions the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondMode {
    /// Relative pose through a global embedding only.
    PoseToken,
    /// Ray embedding concatenated to the network input.
    ConcatInput,
    /// Ray embedding concatenated to every block input.
    ConcatMultiscale,
    /// Ray-conditioned normalization in every block.
    Rcn,
}

impl CondMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CondMode::PoseToken => "pose_token",
            CondMode::ConcatInput => "concat_input",
            CondMode::ConcatMultiscale => "concat_multiscale",
            CondMode::Rcn => "rcn",
        }
    }

    pub const ALL: [CondMode; 4] = [CondMode::PoseToken, CondMode::ConcatInput, CondMode::ConcatMultiscale, CondMode::Rcn];
}

impl std::str::FromStr for CondMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pose_token" => Ok(CondMode::PoseToken),
            "concat_input" => Ok(CondMode::ConcatInput),
            "concat_multiscale" => Ok(CondMode::ConcatMultiscale),
            "rcn" => Ok(CondMode::Rcn),
            _ => Err(Error::Config(format!(
                "conditioning mode must be pose_token|concat_input|concat_multiscale|rcn, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    /// Base (finest) resolution; square images.
    pub image_size: usize,
    pub latent_channels: usize,
    /// Channels per level; level l runs at image_size / 2^l.
    pub channels: Vec<usize>,
    pub time_dim: usize,
    pub mode: CondMode,
    pub attention: bool,
    pub fourier_bands: usize,
    pub mod_hidden: usize,
    /// Strided-conv widths of the source-image encoder.
    pub src_channels: Vec<usize>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            image_size: 32,
            latent_channels: 3,
            channels: vec![32, 64, 128],
            time_dim: 128,
            mode: CondMode::Rcn,
            attention: false,
            fourier_bands: 6,
            mod_hidden: 64,
            src_channels: vec![16, 32, 64, 64],
        }
    }
}

impl DenoiserConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    /// Dimension of the per-pixel ray embedding (six Plücker components,
    /// each with raw value plus sin/cos per band).
    pub fn feat_dim(&self) -> usize {
        6 * (2 * self.fourier_bands + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::Config("need at least 2 levels".into()));
        }
        let down_factor = 1usize << (self.channels.len() - 1);
        if self.image_size == 0 || self.image_size % down_factor != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of {down_factor}",
                self.image_size
            )));
        }
        if self.channels.iter().any(|&c| c < 2) {
            return Err(Error::Config("every level needs at least 2 channels".into()));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::Config("time_dim must be even and at least 2".into()));
        }
        if self.latent_channels == 0 || self.fourier_bands == 0 || self.mod_hidden == 0 || self.src_channels.is_empty() {
            return Err(Error::Config("channel and band counts must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv_pairs(&self) -> Vec<(String, String)> {
        let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("net.image_size".into(), self.image_size.to_string()),
            ("net.latent_channels".into(), self.latent_channels.to_string()),
            ("net.channels".into(), join(&self.channels)),
            ("net.time_dim".into(), self.time_dim.to_string()),
            ("net.mode".into(), self.mode.as_str().into()),
            ("net.attention".into(), self.attention.to_string()),
            ("net.fourier_bands".into(), self.fourier_bands.to_string()),
            ("net.mod_hidden".into(), self.mod_hidden.to_string()),
            ("net.src_channels".into(), join(&self.src_channels)),
        ]
    }

    /// Reads the `net.*` keys, falling back to defaults for absent ones.
    pub fn from_kv(reader: &mut KvReader) -> Result<Self> {
        let d = DenoiserConfig::default();
        let list = |s: String| -> Result<Vec<usize>> {
            s.split(',')
                .map(|p| p.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad channel list entry {p:?}"))))
                .collect()
        };
        let cfg = DenoiserConfig {
            image_size: reader.take_parsed("net.image_size")?.unwrap_or(d.image_size),
            latent_channels: reader.take_parsed("net.latent_channels")?.unwrap_or(d.latent_channels),
            channels: match reader.take("net.channels") {
                Some(s) => list(s)?,
                None => d.channels,
            },
            time_dim: reader.take_parsed("net.time_dim")?.unwrap_or(d.time_dim),
            mode: match reader.take("net.mode") {
                Some(s) => s.parse()?,
                None => d.mode,
            },
            attention: match reader.take("net.attention") {
                Some(s) => parse_bool(&s)?,
                None => d.attention,
            },
            fourier_bands: reader.take_parsed("net.fourier_bands")?.unwrap_or(d.fourier_bands),
            mod_hidden: reader.take_parsed("net.mod_hidden")?.unwrap_or(d.mod_hidden),
            src_channels: match reader.take("net.src_channels") {
                Some(s) => list(s)?,
                None => d.src_channels,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One training/sampling unit: B instances of v views each. Views of an
/// instance share the timestep and the source view.
#[derive(Debug, Clone)]
pub struct MultiViewBatch {
    /// (B, v, c, h, w) noisy latents.
    pub latents: ndarray::Array<f64, Ix5>,
    /// Target-view cameras, world frame, B×v.
    pub cameras: Vec<Vec<Camera>>,
    /// Source-view camera per instance, world frame.
    pub source_cameras: Vec<Camera>,
    /// (B, c, h, w) source latents.
    pub source_latents: Array4<f64>,
    /// Diffusion timestep per instance (1-indexed).
    pub timesteps: Vec<usize>,
}

impl MultiViewBatch {
    pub fn instances(&self) -> usize {
        self.latents.shape()[0]
    }

    pub fn views(&self) -> usize {
        self.latents.shape()[1]
    }

    pub fn validate(&self, cfg: &DenoiserConfig) -> Result<()> {
        let shape = self.latents.shape();
        let (b, v, c, h, w) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
        if b == 0 || v == 0 {
            return Err(Error::Config("batch needs at least one instance and one view".into()));
        }
        if c != cfg.latent_channels || h != cfg.image_size || w != cfg.image_size {
            return Err(Error::shape(
                format!("latents (*, *, {}, {}, {})", cfg.latent_channels, cfg.image_size, cfg.image_size),
                format!("{shape:?}"),
            ));
        }
        if self.cameras.len() != b || self.cameras.iter().any(|vs| vs.len() != v) {
            return Err(Error::Config("camera grid must be B×v".into()));
        }
        if self.source_cameras.len() != b || self.timesteps.len() != b {
            return Err(Error::Config("need one source camera and timestep per instance".into()));
        }
        if self.source_latents.dim() != (b, c, h, w) {
            return Err(Error::shape(
                format!("source latents ({b}, {c}, {h}, {w})"),
                format!("{:?}", self.source_latents.dim()),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Residual block

#[derive(Debug, Clone)]
enum Norm1 {
    Static(SiteNorm),
    Ray(RayModulation),
}

#[derive(Debug)]
enum Norm1Cache {
    Static(SiteNormCache),
    Ray(ModCache),
}

#[derive(Debug, Clone)]
struct ResBlock {
    in_ch: usize,
    /// Ray channels concatenated to the first conv's input (multiscale mode).
    extra_in: usize,
    norm1: Norm1,
    conv1: Conv2d,
    temb: Linear,
    norm2: SiteNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

#[derive(Debug)]
struct ResBlockCache {
    x: Array4<f64>,
    norm1: Norm1Cache,
    n1: Array4<f64>,
    c1_in: Array4<f64>,
    n2_cache: SiteNormCache,
    n2: Array4<f64>,
    a2: Array4<f64>,
}

impl ResBlock {
    fn new(name: &str, cfg: &DenoiserConfig, in_ch: usize, out_ch: usize) -> Self {
        let norm1 = match cfg.mode {
            CondMode::Rcn => Norm1::Ray(RayModulation::new(format!("{name}.mod"), cfg.feat_dim(), cfg.mod_hidden, in_ch)),
            _ => Norm1::Static(SiteNorm::new(format!("{name}.norm1"), in_ch)),
        };
        let extra_in = if cfg.mode == CondMode::ConcatMultiscale { cfg.feat_dim() } else { 0 };
        ResBlock {
            in_ch,
            extra_in,
            norm1,
            conv1: Conv2d::new(format!("{name}.conv1"), in_ch + extra_in, out_ch, 3, 1, 1),
            temb: Linear::new(format!("{name}.temb"), cfg.time_dim, out_ch),
            norm2: SiteNorm::new(format!("{name}.norm2"), out_ch),
            conv2: Conv2d::new(format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1),
            skip: (in_ch != out_ch).then(|| Conv2d::new(format!("{name}.skip"), in_ch, out_ch, 1, 1, 0)),
        }
    }

    fn specs(&self) -> Vec<ParamSpec> {
        let mut v = match &self.norm1 {
            Norm1::Static(n) => n.specs(),
            Norm1::Ray(m) => m.specs(),
        };
        v.extend(self.conv1.specs());
        v.extend(self.temb.specs());
        v.extend(self.norm2.specs());
        v.extend(self.conv2.specs());
        if let Some(skip) = &self.skip {
            v.extend(skip.specs());
        }
        v
    }

    /// `feats` must be present when the mode uses rays in blocks.
    fn forward(&self, ps: &ParamStore, x: &Array4<f64>, silu_temb: &Array2<f64>, feats: Option<&Array4<f64>>) -> (Array4<f64>, ResBlockCache) {
        let (n1, norm1_cache) = match &self.norm1 {
            Norm1::Static(norm) => {
                let (y, c) = norm.forward(ps, x);
                (y, Norm1Cache::Static(c))
            }
            Norm1::Ray(m) => {
                let (y, c) = m.forward(ps, x, feats.expect("ray features required in rcn mode"));
                (y, Norm1Cache::Ray(c))
            }
        };
        let a1 = silu4(&n1);
        let c1_in = if self.extra_in > 0 {
            concatenate(Axis(1), &[a1.view(), feats.expect("ray features required in multiscale mode").view()]).unwrap()
        } else {
            a1
        };
        let mut h = self.conv1.forward(ps, &c1_in);
        let tp = self.temb.forward(ps, silu_temb);
        add_per_channel(&mut h, &tp);
        let (n2, n2_cache) = self.norm2.forward(ps, &h);
        let a2 = silu4(&n2);
        let h2 = self.conv2.forward(ps, &a2);
        let y = match &self.skip {
            Some(skip) => h2 + skip.forward(ps, x),
            None => h2 + x,
        };
        (y, ResBlockCache { x: x.clone(), norm1: norm1_cache, n1, c1_in, n2_cache, n2, a2 })
    }

    /// Returns the input gradient; the conditioning-vector gradient is
    /// accumulated into `d_silu_temb`.
    fn backward(
        &self,
        ps: &ParamStore,
        cache: &ResBlockCache,
        gy: &Array4<f64>,
        silu_temb: &Array2<f64>,
        d_silu_temb: &mut Array2<f64>,
        gs: &mut GradStore,
    ) -> Array4<f64> {
        let d_a2 = self.conv2.backward(ps, &cache.a2, gy, gs);
        let d_n2 = silu4_backward(&cache.n2, &d_a2);
        let d_h = self.norm2.backward(ps, &cache.n2_cache, &d_n2, gs);
        let d_tp = d_h.sum_axis(Axis(3)).sum_axis(Axis(2));
        *d_silu_temb += &self.temb.backward(ps, silu_temb, &d_tp, gs);
        let d_c1in = self.conv1.backward(ps, &cache.c1_in, &d_h, gs);
        let d_a1 = d_c1in.slice(s![.., ..self.in_ch, .., ..]).to_owned();
        let d_n1 = silu4_backward(&cache.n1, &d_a1);
        let d_x = match (&self.norm1, &cache.norm1) {
            (Norm1::Static(norm), Norm1Cache::Static(c)) => norm.backward(ps, c, &d_n1, gs),
            (Norm1::Ray(m), Norm1Cache::Ray(c)) => m.backward(ps, c, &d_n1, gs),
            _ => unreachable!("norm cache kind matches construction"),
        };
        match &self.skip {
            Some(skip) => d_x + skip.backward(ps, &cache.x, gy, gs),
            None => d_x + gy,
        }
    }
}

fn add_per_channel(h: &mut Array4<f64>, rows: &Array2<f64>) {
    let (n, c, _, _) = h.dim();
    for ni in 0..n {
        for ci in 0..c {
            let v = rows[[ni, ci]];
            h.slice_mut(s![ni, ci, .., ..]).mapv_inplace(|x| x + v);
        }
    }
}

// ---------------------------------------------------------------------------
// Denoiser

#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    fourier: FourierConfig,
    stem: Conv2d,
    enc: Vec<ResBlock>,
    enc_attn: Vec<ViewAttention>,
    down: Vec<Conv2d>,
    mid: ResBlock,
    mid_attn: Option<ViewAttention>,
    up: Vec<Conv2d>,
    dec: Vec<ResBlock>,
    dec_attn: Vec<ViewAttention>,
    head_norm: SiteNorm,
    head_conv: Conv2d,
    time_mlp: EmbedMlp,
    pose_mlp: EmbedMlp,
    src_enc: SourceEncoder,
}

pub struct ForwardCache {
    stem_in: Array4<f64>,
    enc: Vec<ResBlockCache>,
    enc_attn: Vec<Option<AttnCache>>,
    down_in: Vec<Array4<f64>>,
    mid: ResBlockCache,
    mid_attn: Option<AttnCache>,
    /// Input to each up conv (already upsampled).
    up_in: Vec<Array4<f64>>,
    dec: Vec<ResBlockCache>,
    dec_attn: Vec<Option<AttnCache>>,
    head_norm: SiteNormCache,
    head_n: Array4<f64>,
    head_in: Array4<f64>,
    temb_total: Array2<f64>,
    silu_temb: Array2<f64>,
    time_cache: EmbedMlpCache,
    pose_cache: EmbedMlpCache,
    src_cache: SourceEncoderCache,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig) -> Result<Self> {
        cfg.validate()?;
        let levels = cfg.levels();
        let ch = cfg.channels.clone();
        let feat = cfg.feat_dim();
        let stem_in = 2 * cfg.latent_channels + if cfg.mode == CondMode::ConcatInput { feat } else { 0 };
        let stem = Conv2d::new("stem.conv", stem_in, ch[0], 3, 1, 1);
        let mut enc = Vec::new();
        let mut enc_attn = Vec::new();
        let mut down = Vec::new();
        for l in 0..levels - 1 {
            enc.push(ResBlock::new(&format!("enc{l}.res"), &cfg, ch[l], ch[l]));
            enc_attn.push(ViewAttention::new(format!("enc{l}.attn"), ch[l]));
            down.push(Conv2d::new(format!("down{l}.conv"), ch[l], ch[l + 1], 3, 2, 1));
        }
        let mid = ResBlock::new("mid.res", &cfg, ch[levels - 1], ch[levels - 1]);
        let mid_attn = Some(ViewAttention::new("mid.attn", ch[levels - 1]));
        let mut up = Vec::new();
        let mut dec = Vec::new();
        let mut dec_attn = Vec::new();
        for l in 0..levels - 1 {
            up.push(Conv2d::new(format!("up{l}.conv"), ch[l + 1], ch[l], 3, 1, 1));
            dec.push(ResBlock::new(&format!("dec{l}.res"), &cfg, 2 * ch[l], ch[l]));
            dec_attn.push(ViewAttention::new(format!("dec{l}.attn"), ch[l]));
        }
        let head_norm = SiteNorm::new("head.norm", ch[0]);
        let head_conv = Conv2d::new("head.conv", ch[0], cfg.latent_channels, 3, 1, 1);
        let time_mlp = EmbedMlp::new("temb", cfg.time_dim, cfg.time_dim, cfg.time_dim);
        let pose_mlp = EmbedMlp::new("pose", 4, cfg.time_dim, cfg.time_dim);
        let src_enc = SourceEncoder::new("src", cfg.latent_channels, &cfg.src_channels, cfg.time_dim);
        let fourier = FourierConfig::for_grid(cfg.image_size, cfg.image_size, cfg.fourier_bands)?;
        Ok(Denoiser {
            cfg,
            fourier,
            stem,
            enc,
            enc_attn,
            down,
            mid,
            mid_attn,
            up,
            dec,
            dec_attn,
            head_norm,
            head_conv,
            time_mlp,
            pose_mlp,
            src_enc,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// Multi-scale feature maps of the source-view encoder for one latent
    /// image (channels, h, w), one map per encoder stage.
    pub fn source_feature_maps(&self, ps: &ParamStore, latent: &ndarray::Array3<f64>) -> Vec<ndarray::Array3<f64>> {
        let batched = latent.clone().insert_axis(Axis(0));
        self.src_enc
            .stage_maps(ps, &batched)
            .into_iter()
            .map(|m| m.remove_axis(Axis(0)))
            .collect()
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.stem.specs();
        for (block, attn) in self.enc.iter().zip(&self.enc_attn) {
            specs.extend(block.specs());
            if self.cfg.attention {
                specs.extend(attn.specs());
            }
        }
        for d in &self.down {
            specs.extend(d.specs());
        }
        specs.extend(self.mid.specs());
        if self.cfg.attention {
            specs.extend(self.mid_attn.as_ref().unwrap().specs());
        }
        for ((u, block), attn) in self.up.iter().zip(&self.dec).zip(&self.dec_attn) {
            specs.extend(u.specs());
            specs.extend(block.specs());
            if self.cfg.attention {
                specs.extend(attn.specs());
            }
        }
        specs.extend(self.head_norm.specs());
        specs.extend(self.head_conv.specs());
        specs.extend(self.time_mlp.specs());
        specs.extend(self.pose_mlp.specs());
        specs.extend(self.src_enc.specs());
        specs
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        init_params_from_specs(seed, &self.param_specs())
    }

    /// Whether blocks consume ray features in this mode.
    fn blocks_use_rays(&self) -> bool {
        matches!(self.cfg.mode, CondMode::Rcn | CondMode::ConcatMultiscale)
    }

    /// Ray-feature tensors per level for every (instance, view), relative to
    /// the source camera; zeroed for dropped instances.
    fn ray_features(&self, batch: &MultiViewBatch, drop_cond: &[bool]) -> Result<Vec<Array4<f64>>> {
        let levels_needed: Vec<usize> = if self.blocks_use_rays() {
            (0..self.cfg.levels()).collect()
        } else if self.cfg.mode == CondMode::ConcatInput {
            vec![0]
        } else {
            vec![]
        };
        let (b, v) = (batch.instances(), batch.views());
        let feat = self.cfg.feat_dim();
        let mut out = vec![Array4::zeros((0, 0, 0, 0)); self.cfg.levels()];
        for &l in &levels_needed {
            let r = self.cfg.image_size >> l;
            let mut tensor = Array4::zeros((b * v, feat, r, r));
            for bi in 0..b {
                if drop_cond[bi] {
                    continue;
                }
                for vi in 0..v {
                    let rel = batch.cameras[bi][vi].relative_to(&batch.source_cameras[bi])?;
                    let scaled = rel.scaled(r, r)?;
                    let map = ray_map(&scaled, &self.fourier)?;
                    tensor.slice_mut(s![bi * v + vi, .., .., ..]).assign(&map.features_chw());
                }
            }
            out[l] = tensor;
        }
        Ok(out)
    }

    /// Relative orbit-pose features per view: [Δθ, sin Δφ, cos Δφ, Δz],
    /// all-zero (the null token) for dropped instances.
    fn pose_features(&self, batch: &MultiViewBatch, drop_cond: &[bool]) -> Result<Array2<f64>> {
        let (b, v) = (batch.instances(), batch.views());
        let mut feats = Array2::zeros((b * v, 4));
        for bi in 0..b {
            if drop_cond[bi] {
                continue;
            }
            let src = pose_of_camera(&batch.source_cameras[bi]);
            for vi in 0..v {
                let tgt = pose_of_camera(&batch.cameras[bi][vi]);
                let dphi = tgt.phi - src.phi;
                feats[[bi * v + vi, 0]] = tgt.theta - src.theta;
                feats[[bi * v + vi, 1]] = dphi.sin();
                feats[[bi * v + vi, 2]] = dphi.cos();
                feats[[bi * v + vi, 3]] = tgt.z - src.z;
            }
        }
        Ok(feats)
    }

    /// Runs the denoiser, returning ε̂ of shape (B, v, c, h, w) plus the
    /// cache consumed by [`Denoiser::backward`]. `drop_cond[b]` zeroes that
    /// instance's source latent, pose, and ray conditioning (the CFG
    /// unconditional branch).
    pub fn forward_cached(
        &self,
        ps: &ParamStore,
        batch: &MultiViewBatch,
        drop_cond: &[bool],
    ) -> Result<(ndarray::Array<f64, Ix5>, ForwardCache)> {
        batch.validate(&self.cfg)?;
        let (b, v) = (batch.instances(), batch.views());
        if drop_cond.len() != b {
            return Err(Error::Config(format!("drop mask has {} entries for {b} instances", drop_cond.len())));
        }
        let n = b * v;
        let (c, hw) = (self.cfg.latent_channels, self.cfg.image_size);
        let levels = self.cfg.levels();

        // Conditioning inputs with per-instance dropping.
        let mut src_masked = batch.source_latents.clone();
        for (bi, &d) in drop_cond.iter().enumerate() {
            if d {
                src_masked.slice_mut(s![bi, .., .., ..]).fill(0.0);
            }
        }
        let pose_feats = self.pose_features(batch, drop_cond)?;
        let rays = self.ray_features(batch, drop_cond)?;

        // Global conditioning vector per view.
        let t_sin = sinusoidal_embedding(&batch.timesteps, self.cfg.time_dim);
        let (t_emb, time_cache) = self.time_mlp.forward(ps, &t_sin);
        let (src_emb, src_cache) = self.src_enc.forward(ps, &src_masked);
        let (pose_emb, pose_cache) = self.pose_mlp.forward(ps, &pose_feats);
        let mut temb_total = pose_emb;
        for bi in 0..b {
            for vi in 0..v {
                let mut row = temb_total.row_mut(bi * v + vi);
                row += &t_emb.row(bi);
                row += &src_emb.row(bi);
            }
        }
        let silu_temb = silu2(&temb_total);

        // Network input: noisy latent ‖ source latent (‖ rays at input).
        let z_flat = batch.latents.view().into_shape_with_order((n, c, hw, hw)).unwrap();
        let mut src_rep = Array4::zeros((n, c, hw, hw));
        for bi in 0..b {
            for vi in 0..v {
                src_rep.slice_mut(s![bi * v + vi, .., .., ..]).assign(&src_masked.slice(s![bi, .., .., ..]));
            }
        }
        let mut stem_in = concatenate(Axis(1), &[z_flat.view(), src_rep.view()]).unwrap();
        if self.cfg.mode == CondMode::ConcatInput {
            stem_in = concatenate(Axis(1), &[stem_in.view(), rays[0].view()]).unwrap();
        }

        let mut h = self.stem.forward(ps, &stem_in);
        let block_feats = |l: usize| -> Option<&Array4<f64>> { self.blocks_use_rays().then(|| &rays[l]) };

        let mut enc_caches = Vec::with_capacity(levels - 1);
        let mut enc_attn_caches = Vec::with_capacity(levels - 1);
        let mut down_in = Vec::with_capacity(levels - 1);
        let mut skips = Vec::with_capacity(levels - 1);
        for l in 0..levels - 1 {
            let (y, cache) = self.enc[l].forward(ps, &h, &silu_temb, block_feats(l));
            enc_caches.push(cache);
            h = y;
            if self.cfg.attention {
                let (y, cache) = self.enc_attn[l].forward(ps, &h, v);
                enc_attn_caches.push(Some(cache));
                h = y;
            } else {
                enc_attn_caches.push(None);
            }
            skips.push(h.clone());
            down_in.push(h.clone());
            h = self.down[l].forward(ps, &h);
        }

        let (y, mid_cache) = self.mid.forward(ps, &h, &silu_temb, block_feats(levels - 1));
        h = y;
        let mid_attn_cache = if self.cfg.attention {
            let (y, cache) = self.mid_attn.as_ref().unwrap().forward(ps, &h, v);
            h = y;
            Some(cache)
        } else {
            None
        };

        let mut up_in = vec![Array4::zeros((0, 0, 0, 0)); levels - 1];
        let mut dec_caches: Vec<Option<ResBlockCache>> = (0..levels - 1).map(|_| None).collect();
        let mut dec_attn_caches: Vec<Option<AttnCache>> = (0..levels - 1).map(|_| None).collect();
        for l in (0..levels - 1).rev() {
            let upsampled = upsample2(&h);
            let u = self.up[l].forward(ps, &upsampled);
            up_in[l] = upsampled;
            let cat = concatenate(Axis(1), &[u.view(), skips[l].view()]).unwrap();
            let (y, cache) = self.dec[l].forward(ps, &cat, &silu_temb, block_feats(l));
            dec_caches[l] = Some(cache);
            h = y;
            if self.cfg.attention {
                let (y, cache) = self.dec_attn[l].forward(ps, &h, v);
                dec_attn_caches[l] = Some(cache);
                h = y;
            }
        }

        let (head_n, head_norm_cache) = self.head_norm.forward(ps, &h);
        let head_in = silu4(&head_n);
        let out = self.head_conv.forward(ps, &head_in);
        let eps_hat = out.into_shape_with_order((b, v, c, hw, hw)).unwrap();

        let cache = ForwardCache {
            stem_in,
            enc: enc_caches,
            enc_attn: enc_attn_caches,
            down_in,
            mid: mid_cache,
            mid_attn: mid_attn_cache,
            up_in,
            dec: dec_caches.into_iter().map(Option::unwrap).collect(),
            dec_attn: dec_attn_caches,
            head_norm: head_norm_cache,
            head_n,
            head_in,
            temb_total,
            silu_temb,
            time_cache,
            pose_cache,
            src_cache,
        };
        Ok((eps_hat, cache))
    }

    /// Convenience forward without gradient bookkeeping.
    pub fn forward(
        &self,
        ps: &ParamStore,
        batch: &MultiViewBatch,
        drop_cond: &[bool],
    ) -> Result<ndarray::Array<f64, Ix5>> {
        Ok(self.forward_cached(ps, batch, drop_cond)?.0)
    }

    /// Backpropagates `d_eps` (gradient of the loss w.r.t. ε̂) through the
    /// cached forward pass, returning gradients for every parameter that
    /// participated.
    pub fn backward(&self, ps: &ParamStore, cache: &ForwardCache, d_eps: &ndarray::Array<f64, Ix5>) -> GradStore {
        let mut gs = GradStore::new();
        let shape = d_eps.shape();
        let (b, v, c, hw) = (shape[0], shape[1], shape[2], shape[3]);
        let n = b * v;
        let levels = self.cfg.levels();
        let g = d_eps.view().into_shape_with_order((n, c, hw, hw)).unwrap().to_owned();

        let mut d_silu_temb = Array2::zeros(cache.silu_temb.dim());
        let d_head_in = self.head_conv.backward(ps, &cache.head_in, &g, &mut gs);
        let d_head_n = silu4_backward(&cache.head_n, &d_head_in);
        let mut h_grad = self.head_norm.backward(ps, &cache.head_norm, &d_head_n, &mut gs);

        let mut skip_grads: Vec<Option<Array4<f64>>> = (0..levels - 1).map(|_| None).collect();
        for l in 0..levels - 1 {
            if let Some(attn_cache) = &cache.dec_attn[l] {
                h_grad = self.dec_attn[l].backward(ps, attn_cache, &h_grad, &mut gs);
            }
            let d_cat = self.dec[l].backward(ps, &cache.dec[l], &h_grad, &cache.silu_temb, &mut d_silu_temb, &mut gs);
            let ch_l = self.cfg.channels[l];
            let d_u = d_cat.slice(s![.., ..ch_l, .., ..]).to_owned();
            skip_grads[l] = Some(d_cat.slice(s![.., ch_l.., .., ..]).to_owned());
            let d_upsampled = self.up[l].backward(ps, &cache.up_in[l], &d_u, &mut gs);
            h_grad = upsample2_backward(&d_upsampled);
        }

        if let Some(attn_cache) = &cache.mid_attn {
            h_grad = self.mid_attn.as_ref().unwrap().backward(ps, attn_cache, &h_grad, &mut gs);
        }
        h_grad = self.mid.backward(ps, &cache.mid, &h_grad, &cache.silu_temb, &mut d_silu_temb, &mut gs);

        for l in (0..levels - 1).rev() {
            let mut d = self.down[l].backward(ps, &cache.down_in[l], &h_grad, &mut gs);
            d += skip_grads[l].as_ref().unwrap();
            if let Some(attn_cache) = &cache.enc_attn[l] {
                d = self.enc_attn[l].backward(ps, attn_cache, &d, &mut gs);
            }
            h_grad = self.enc[l].backward(ps, &cache.enc[l], &d, &cache.silu_temb, &mut d_silu_temb, &mut gs);
        }
        let _ = self.stem.backward(ps, &cache.stem_in, &h_grad, &mut gs);

        // Conditioning pathways.
        let d_temb_total = silu2_backward(&cache.temb_total, &d_silu_temb);
        let _ = self.pose_mlp.backward(ps, &cache.pose_cache, &d_temb_total, &mut gs);
        let mut d_per_instance = Array2::zeros((b, self.cfg.time_dim));
        for bi in 0..b {
            for vi in 0..v {
                let row = d_temb_total.row(bi * v + vi).to_owned();
                let mut acc = d_per_instance.row_mut(bi);
                acc += &row;
            }
        }
        let _ = self.time_mlp.backward(ps, &cache.time_cache, &d_per_instance, &mut gs);
        self.src_enc.backward(ps, &cache.src_cache, &d_per_instance, &mut gs);
        gs
    }
}
