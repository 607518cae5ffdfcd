//! The saliency network: encoder pyramid, boundary-aware module, dense
//! aggregation and a guided decoder.

mod boundary;
mod canny;
mod config;
mod das;
mod decoder;
mod encoder;

#[cfg(test)]
mod tests;

pub use boundary::{Bam, BamParts, Eau, Jau, JauParts};
pub use canny::{canny_edges, CannyConfig};
pub use config::{Ablation, JauMode, NetworkConfig};
pub use das::{Das, DasParts};
pub use decoder::Decoder;
pub use encoder::{Encoder, FeaturePyramid};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::{Normalization, RasterImage, SaliencyMap};

/// A batch of network inputs: normalised images and their fixed edge maps.
#[derive(Clone, Debug)]
pub struct NetInput {
    pub image: Tensor,
    pub edges: Tensor,
}

impl NetInput {
    pub fn from_images(images: &[RasterImage], norm: &Normalization, canny: &CannyConfig) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::validation("empty image batch"))?;
        let (w, h) = (first.width(), first.height());
        if let Some(bad) = images.iter().find(|i| (i.width(), i.height()) != (w, h)) {
            return Err(Error::shape(format!(
                "batch mixes {w}x{h} and {}x{} images",
                bad.width(),
                bad.height()
            )));
        }
        canny.validate()?;
        let image = Tensor::stack(&images.iter().map(|i| i.to_tensor(norm)).collect::<Vec<_>>());
        let edges = Tensor::stack(
            &images
                .iter()
                .map(|i| Tensor::from_vec([1, 1, h, w], canny::canny_plane(&i.intensity(), w, h, canny)))
                .collect::<Vec<_>>(),
        );
        Ok(NetInput { image, edges })
    }

    pub fn batch(&self) -> usize {
        self.image.shape()[0]
    }
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct NetOutput {
    pub pyramid: FeaturePyramid,
    /// `[N, 1, H, W]` saliency probabilities.
    pub saliency: Var,
    /// `[N, 1, H, W]` boundary probabilities, when the boundary branch is on.
    pub boundary: Option<Var>,
    /// `[N, 1, H/4, W/4]` initial saliency, when aggregation is on.
    pub initial: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct SbaNet {
    config: NetworkConfig,
    encoder: Encoder,
    bam: Option<Bam>,
    das: Option<Das>,
    decoder: Decoder,
}

impl SbaNet {
    pub fn new(config: &NetworkConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let ew = config.encoder_widths;
        let ab = config.ablation;
        let encoder = Encoder::new(store, ew, config.encoder_depths, rng);
        let bam = ab.has_boundary().then(|| {
            Bam::new(
                store,
                ew[0],
                ew[1],
                config.width,
                config.cab_reduction,
                ab.jau_mode,
                ab.eau.then_some(config.edge_filters),
                rng,
            )
        });
        let das = ab.das.then(|| Das::new(store, [ew[2], ew[3], ew[4]], config.width, rng));
        let guidance = usize::from(bam.is_some()) + usize::from(das.is_some());
        let decoder = Decoder::new(store, ew, config.decoder_widths, guidance, rng);
        Ok(SbaNet {
            config: config.clone(),
            encoder,
            bam,
            das,
            decoder,
        })
    }

    /// Builds a network and a freshly initialised parameter store.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Self::new(config, &mut store, &mut rng)?;
        Ok((net, store))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn bam(&self) -> Option<&Bam> {
        self.bam.as_ref()
    }

    pub fn das(&self) -> Option<&Das> {
        self.das.as_ref()
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn forward(&self, g: &mut Graph, input: &NetInput) -> Result<NetOutput> {
        let image = g.constant(input.image.clone());
        self.forward_var(g, image, input)
    }

    /// Like [`forward`](Self::forward) but with the image already on the graph.
    pub fn forward_var(&self, g: &mut Graph, image: Var, input: &NetInput) -> Result<NetOutput> {
        let [n, _, h, w] = g.shape(image);
        if input.edges.shape() != [n, 1, h, w] {
            return Err(Error::shape(format!(
                "edge map {:?} does not match image {:?}",
                input.edges.shape(),
                g.shape(image)
            )));
        }
        let pyramid = self.encoder.forward(g, image)?;
        let boundary = match &self.bam {
            Some(bam) => {
                let edges = g.constant(input.edges.clone());
                Some(bam.forward_parts(g, pyramid.f[0], pyramid.f[1], image, edges)?.boundary)
            }
            None => None,
        };
        let initial = match &self.das {
            Some(das) => Some(das.forward_parts(g, pyramid.f[2], pyramid.f[3], pyramid.f[4])?.initial),
            None => None,
        };
        let guidance: Vec<Var> = initial.into_iter().chain(boundary).collect();
        let saliency = self.decoder.forward(g, &pyramid, &guidance);
        Ok(NetOutput {
            pyramid,
            saliency,
            boundary,
            initial,
        })
    }

    /// Inference-mode saliency and boundary maps per sample.
    pub fn predict(&self, store: &ParamStore, input: &NetInput) -> Result<Vec<(SaliencyMap, Option<SaliencyMap>)>> {
        let mut g = Graph::new(store, false);
        let out = self.forward(&mut g, input)?;
        let to_maps = |t: &Tensor| -> Vec<SaliencyMap> {
            let [n, _, h, w] = t.shape();
            (0..n)
                .map(|s| SaliencyMap {
                    width: w,
                    height: h,
                    data: t.plane(s, 0).to_vec(),
                })
                .collect()
        };
        let sal = to_maps(g.value(out.saliency));
        let bnd = out.boundary.map(|b| to_maps(g.value(b)));
        Ok(sal
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s, bnd.as_ref().map(|b| b[i].clone())))
            .collect())
    }
}
