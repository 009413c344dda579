//! All learnable parts of the model together with their optimizer state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{Discriminator, EncoderPair, Generator};
use crate::nn::{AdamState, OptimizerConfig, Params};
use crate::recommender::{ItemEmbeddings, TransferNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// `K^t`, topics per distribution.
    pub topics: usize,
    /// `M`.
    pub items: usize,
    /// `En`.
    pub encoding_dim: usize,
    /// `K`, latent factors.
    pub latent_dim: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("topics", self.topics),
            ("items", self.items),
            ("encoding_dim", self.encoding_dim),
            ("latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub dims: ModelDims,
    pub enc: EncoderPair,
    pub g: Generator,
    pub d: Discriminator,
    pub phi: TransferNet,
    pub items: ItemEmbeddings,
}

/// One Adam state per parameter group, shared by every task that updates it.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleOptim {
    pub e_tn: AdamState,
    pub e_sn: AdamState,
    pub g: AdamState,
    pub d: AdamState,
    pub phi: AdamState,
    pub items: AdamState,
}

impl ModelBundle {
    /// Initialization order is fixed (E_tn, E_sn, G, D, Φ, H) so a seed pins every weight.
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, opt: &OptimizerConfig, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        opt.validate()?;
        let enc = EncoderPair::new(dims.topics, dims.encoding_dim, opt, rng)?;
        let g = Generator::new(dims.encoding_dim, opt, rng)?;
        let d = Discriminator::new(dims.encoding_dim, opt, rng)?;
        let phi = TransferNet::new(dims.encoding_dim, dims.items, dims.latent_dim, opt, rng)?;
        let items = ItemEmbeddings::new(dims.items, dims.latent_dim, rng);
        Ok(ModelBundle {
            dims,
            enc,
            g,
            d,
            phi,
            items,
        })
    }

    pub fn groups(&self) -> [&dyn Params; 6] {
        [&self.enc.e_tn, &self.enc.e_sn, &self.g.g, &self.d.d, &self.phi.phi, &self.items]
    }

    pub fn groups_mut(&mut self) -> [&mut dyn Params; 6] {
        [
            &mut self.enc.e_tn,
            &mut self.enc.e_sn,
            &mut self.g.g,
            &mut self.d.d,
            &mut self.phi.phi,
            &mut self.items,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.groups().iter().map(|p| p.num_params()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.groups()
            .iter()
            .all(|p| p.blocks().iter().all(|b| b.iter().all(|x| x.is_finite())))
    }
}

impl BundleOptim {
    pub fn new(bundle: &ModelBundle, opt: &OptimizerConfig) -> Self {
        let cfg = opt.adam();
        BundleOptim {
            e_tn: AdamState::new(cfg, &bundle.enc.e_tn),
            e_sn: AdamState::new(cfg, &bundle.enc.e_sn),
            g: AdamState::new(cfg, &bundle.g.g),
            d: AdamState::new(cfg, &bundle.d.d),
            phi: AdamState::new(cfg, &bundle.phi.phi),
            items: AdamState::new(cfg, &bundle.items),
        }
    }

    pub fn states(&self) -> [&AdamState; 6] {
        [&self.e_tn, &self.e_sn, &self.g, &self.d, &self.phi, &self.items]
    }

    pub fn states_mut(&mut self) -> [&mut AdamState; 6] {
        [
            &mut self.e_tn,
            &mut self.e_sn,
            &mut self.g,
            &mut self.d,
            &mut self.phi,
            &mut self.items,
        ]
    }
}
