//! Multi-task training loop: offline sliding window over the first part of
//! the timeline, then interval-by-interval testing with online retraining.
//!
//! Offline, every epoch slides over `t = 0..cut-1`. At each step the
//! discriminator and encoders take one ascent step on `V_D` and the generator
//! one descent step on `V_G`, both on overlapped users active on both networks
//! at `t`. The recommender then predicts interval `t + 1` for overlapped users
//! from generated source encodings and the pairwise loss is propagated through
//! Φ into G and E_tn.
//!
//! Online, for each test interval `t` the model first ranks items for `t + 1`
//! (scored immediately), then retrains `online_iters` times on the revealed
//! interval: recommender on all users, generator task on overlapped users,
//! and the recommender again on overlapped users with generated encodings.

mod access;
pub mod checkpoint;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use access::{Access, Field, Observed};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use crate::data::{Dataset, ItemId};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::generator::{
    discriminator_step, generator_step, sample_mismatch_pairs, AdversarialLoss, Coord, DiscriminatorValue,
    GeneratorValue, MismatchPool, RealObservation,
};
use crate::model::{BundleOptim, ModelBundle, ModelDims};
use crate::nn::{adam_step, Grads, Mode, OptimizerConfig, Trace};
use crate::recommender::{sample_user_triplets, top_n, ubpr_gradients, UserTriplet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full model: mismatch-aware discriminator, content loss, end-to-end recommender gradient.
    Proposed,
    /// Vanilla GAN losses: no mismatch term, no content term.
    Crgan,
    /// No generator; Φ sees real source encodings of overlapped users.
    NubprO,
    /// No generator; the source block of Φ's input is zero.
    NubprNo,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Proposed, Variant::Crgan, Variant::NubprO, Variant::NubprNo];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::Crgan => "crgan",
            Variant::NubprO => "nubpr_o",
            Variant::NubprNo => "nubpr_no",
        }
    }

    pub fn uses_generator(self) -> bool {
        matches!(self, Variant::Proposed | Variant::Crgan)
    }

    fn uses_mismatch(self) -> bool {
        self == Variant::Proposed
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (proposed, crgan, nubpr_o, nubpr_no)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub offline_epochs: usize,
    pub online_iters: usize,
    /// First test interval; `None` means `⌊2T/3⌋`.
    pub offline_cut: Option<usize>,
    /// λ_c, weight of the ℓ1 content term.
    pub content_weight: f64,
    pub adversarial: AdversarialLoss,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub encoding_dim: usize,
    pub latent_dim: usize,
    /// Pairwise triplets drawn per consumed item and interval.
    pub triplets_per_item: usize,
    /// Triplets per recommender update; `None` uses each interval's full
    /// sample as one batch.
    pub batch_size: Option<usize>,
    pub top_n: Vec<usize>,
    pub exclude_prev: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Proposed,
            offline_epochs: 60,
            online_iters: 15,
            offline_cut: None,
            content_weight: 1.0,
            adversarial: AdversarialLoss::NonSaturating,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            encoding_dim: 32,
            latent_dim: 32,
            triplets_per_item: 4,
            batch_size: None,
            top_n: vec![5, 10, 20],
            exclude_prev: true,
        }
    }
}

impl TrainConfig {
    pub fn cut(&self, num_intervals: usize) -> usize {
        self.offline_cut.unwrap_or(2 * num_intervals / 3)
    }

    pub fn validate(&self, num_intervals: usize) -> Result<()> {
        self.optimizer.validate()?;
        let cut = self.cut(num_intervals);
        if cut == 0 || cut >= num_intervals {
            return Err(Error::Config(format!(
                "offline_cut must lie in 1..{num_intervals}, got {cut}"
            )));
        }
        if self.online_iters == 0 {
            return Err(Error::Config("online_iters must be >= 1".into()));
        }
        if self.content_weight < 0.0 || !self.content_weight.is_finite() {
            return Err(Error::Config(format!(
                "content_weight must be >= 0, got {}",
                self.content_weight
            )));
        }
        if self.encoding_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config("encoding_dim and latent_dim must be >= 1".into()));
        }
        if self.triplets_per_item == 0 {
            return Err(Error::Config("triplets_per_item must be >= 1".into()));
        }
        if self.top_n.is_empty() || self.top_n.contains(&0) {
            return Err(Error::Config("top_n needs at least one cutoff, all >= 1".into()));
        }
        Ok(())
    }

    pub fn dims(&self, dataset: &Dataset) -> ModelDims {
        ModelDims {
            topics: dataset.num_topics,
            items: dataset.num_items,
            encoding_dim: self.encoding_dim,
            latent_dim: self.latent_dim,
        }
    }
}

/// Per-epoch means over the sliding-window steps. Generator-task columns are
/// `None` for variants without a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// `-V_D`.
    pub d_loss: Option<f64>,
    /// `V_G`.
    pub g_loss: Option<f64>,
    pub content_loss: Option<f64>,
    /// Mean ℓ1 distance between generated and real source encodings after
    /// the generator update, without dropout.
    pub mapping_l1: Option<f64>,
    pub r_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineTrace {
    /// The interval whose interactions are being fitted.
    pub interval: usize,
    /// 1-based.
    pub iteration: usize,
    /// Mean pairwise loss of the all-user recommender step.
    pub r_loss: Option<f64>,
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    pub content_loss: Option<f64>,
    pub mapping_l1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Cursor {
    Offline { epoch: usize },
    /// Next test interval `t` (predicting `t + 1`).
    Online { t: usize },
    Done,
}

/// What fills the source block of Φ's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceInput {
    /// `G(E_tn(tn))`.
    Generated,
    /// `E_sn(sn)`; the user must have source-network data.
    Real,
    Zero,
}

/// Parameter groups that receive gradients (and dropout) in a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Updates {
    pub e_tn: bool,
    pub e_sn: bool,
    pub g: bool,
    pub phi: bool,
    pub items: bool,
}

enum SourceTrace {
    Generated(Trace),
    Real(Trace),
    Zero,
}

struct UserPass {
    x: Trace,
    source: SourceTrace,
    phi: Trace,
}

fn mode(train: bool) -> Mode {
    if train {
        Mode::Train
    } else {
        Mode::Infer
    }
}

/// Latent user vector from inputs at interval `t`, no dropout.
fn infer_latent(bundle: &ModelBundle, data: &Observed<'_>, p: usize, t: usize, source: SourceInput) -> Result<Vec<f64>> {
    let x = bundle.enc.e_tn.infer(data.target(p, t).values())?;
    let y = match source {
        SourceInput::Generated => bundle.g.g.infer(&x)?,
        SourceInput::Real => bundle.enc.e_sn.infer(real_source(data, p, t)?)?,
        SourceInput::Zero => vec![0.0; bundle.dims.encoding_dim],
    };
    bundle.phi.infer(&x, &y, &data.prev(p, t))
}

fn real_source<'d>(data: &Observed<'d>, p: usize, t: usize) -> Result<&'d [f64]> {
    data.source(p, t).map(|d| d.values()).ok_or_else(|| {
        Error::Validation(format!(
            "user {} has no source-network data",
            data.dataset().users[p].user_id
        ))
    })
}

fn user_forward(
    bundle: &ModelBundle,
    data: &Observed<'_>,
    rng: &mut ChaCha8Rng,
    p: usize,
    t: usize,
    source: SourceInput,
    up: Updates,
) -> Result<(Vec<f64>, UserPass)> {
    let (x, tx) = bundle.enc.e_tn.forward(data.target(p, t).values(), mode(up.e_tn), rng)?;
    let (y, ts) = match source {
        SourceInput::Generated => {
            let (y, tg) = bundle.g.g.forward(&x, mode(up.g), rng)?;
            (y, SourceTrace::Generated(tg))
        }
        SourceInput::Real => {
            let (y, ty) = bundle.enc.e_sn.forward(real_source(data, p, t)?, mode(up.e_sn), rng)?;
            (y, SourceTrace::Real(ty))
        }
        SourceInput::Zero => (vec![0.0; bundle.dims.encoding_dim], SourceTrace::Zero),
    };
    let (w, tw) = bundle.phi.user_latent(&x, &y, &data.prev(p, t), mode(up.phi), rng)?;
    Ok((
        w,
        UserPass {
            x: tx,
            source: ts,
            phi: tw,
        },
    ))
}

/// Gradients of the mean pairwise loss w.r.t. every parameter group.
#[derive(Debug, Clone)]
pub struct RecommenderGrads {
    pub mean_loss: f64,
    pub phi: Grads,
    pub items: Grads,
    pub g: Grads,
    pub e_tn: Grads,
    pub e_sn: Grads,
}

/// Forward and backward pass of the pairwise loss over `triplets` (users are
/// dataset positions, inputs read at `t_in`). Networks flagged in `up` run in
/// training mode and receive gradients; the others are evaluated without dropout.
#[allow(clippy::too_many_arguments)]
pub fn recommender_gradients(
    bundle: &ModelBundle,
    data: &Observed<'_>,
    rng: &mut ChaCha8Rng,
    triplets: &[UserTriplet],
    t_in: usize,
    source_of: &dyn Fn(usize) -> SourceInput,
    up: Updates,
) -> Result<RecommenderGrads> {
    let users: BTreeSet<usize> = triplets.iter().flat_map(|tr| [tr.u, tr.v]).collect();
    let local: BTreeMap<usize, usize> = users.iter().enumerate().map(|(k, &p)| (p, k)).collect();
    let mut latents = Vec::with_capacity(users.len());
    let mut passes = Vec::with_capacity(users.len());
    for &p in &users {
        let (w, pass) = user_forward(bundle, data, rng, p, t_in, source_of(p), up)?;
        latents.push(w);
        passes.push(pass);
    }
    let local_triplets: Vec<UserTriplet> = triplets
        .iter()
        .map(|tr| UserTriplet {
            u: local[&tr.u],
            v: local[&tr.v],
            ..*tr
        })
        .collect();
    let pg = ubpr_gradients(&local_triplets, &latents, &bundle.items)?;
    if !pg.mean_loss.is_finite() {
        return Err(Error::NonFinite(format!("recommender loss at interval {}", t_in + 1)));
    }

    let en = bundle.dims.encoding_dim;
    let mut out = RecommenderGrads {
        mean_loss: pg.mean_loss,
        phi: Grads::zeros_like(&bundle.phi.phi),
        items: pg.items,
        g: Grads::zeros_like(&bundle.g.g),
        e_tn: Grads::zeros_like(&bundle.enc.e_tn),
        e_sn: Grads::zeros_like(&bundle.enc.e_sn),
    };
    let need_input = up.e_tn || up.e_sn || up.g;
    for (pass, dw) in passes.iter().zip(&pg.latent) {
        if dw.iter().all(|&v| v == 0.0) {
            continue;
        }
        let din = bundle
            .phi
            .phi
            .backward_limited(&pass.phi, dw, &mut out.phi, if need_input { 2 * en } else { 0 })?;
        if !need_input {
            continue;
        }
        let mut dx = din[..en].to_vec();
        match &pass.source {
            SourceTrace::Generated(tg) if up.g || up.e_tn => {
                let dxg = bundle.g.g.backward(tg, &din[en..], &mut out.g)?;
                dx.iter_mut().zip(dxg).for_each(|(a, b)| *a += b);
            }
            SourceTrace::Real(ty) if up.e_sn => {
                bundle.enc.e_sn.backward(ty, &din[en..], &mut out.e_sn)?;
            }
            _ => {}
        }
        if up.e_tn {
            bundle.enc.e_tn.backward(&pass.x, &dx, &mut out.e_tn)?;
        }
    }
    Ok(out)
}

/// One pairwise-loss step; returns the mean per-triplet loss before the update.
#[allow(clippy::too_many_arguments)]
fn recommender_step(
    bundle: &mut ModelBundle,
    optim: &mut BundleOptim,
    data: &Observed<'_>,
    rng: &mut ChaCha8Rng,
    triplets: &[UserTriplet],
    t_in: usize,
    source_of: &dyn Fn(usize) -> SourceInput,
    up: Updates,
    l2_lambda: f64,
    batch_size: Option<usize>,
) -> Result<f64> {
    let Some(size) = batch_size.filter(|&b| b < triplets.len()) else {
        return recommender_update(bundle, optim, data, rng, triplets, t_in, source_of, up, l2_lambda);
    };
    let mut order = triplets.to_vec();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(size) {
        total += chunk.len() as f64
            * recommender_update(bundle, optim, data, rng, chunk, t_in, source_of, up, l2_lambda)?;
    }
    Ok(total / triplets.len() as f64)
}

#[allow(clippy::too_many_arguments)]
fn recommender_update(
    bundle: &mut ModelBundle,
    optim: &mut BundleOptim,
    data: &Observed<'_>,
    rng: &mut ChaCha8Rng,
    triplets: &[UserTriplet],
    t_in: usize,
    source_of: &dyn Fn(usize) -> SourceInput,
    up: Updates,
    l2_lambda: f64,
) -> Result<f64> {
    let gr = recommender_gradients(bundle, data, rng, triplets, t_in, source_of, up)?;
    let l2 = 2.0 * l2_lambda;
    if up.phi {
        adam_step(&mut bundle.phi.phi, &gr.phi, &mut optim.phi, l2)?;
    }
    if up.items {
        adam_step(&mut bundle.items, &gr.items, &mut optim.items, l2)?;
    }
    if up.g {
        adam_step(&mut bundle.g.g, &gr.g, &mut optim.g, 0.0)?;
    }
    if up.e_tn {
        adam_step(&mut bundle.enc.e_tn, &gr.e_tn, &mut optim.e_tn, 0.0)?;
    }
    if up.e_sn {
        adam_step(&mut bundle.enc.e_sn, &gr.e_sn, &mut optim.e_sn, 0.0)?;
    }
    Ok(gr.mean_loss)
}

/// One discriminator ascent step and one generator descent step on the
/// overlapped users active on both networks at `t`. `None` if nobody is.
#[allow(clippy::too_many_arguments)]
fn generator_task_step(
    bundle: &mut ModelBundle,
    optim: &mut BundleOptim,
    data: &Observed<'_>,
    rng: &mut ChaCha8Rng,
    overlapped: &[usize],
    t: usize,
    variant: Variant,
    content_weight: f64,
    adversarial: AdversarialLoss,
) -> Result<Option<(DiscriminatorValue, GeneratorValue, f64)>> {
    let mut anchor_users = Vec::new();
    let mut anchors = Vec::new();
    for &p in overlapped {
        let tn = data.target(p, t);
        let Some(sn) = data.source(p, t) else { continue };
        if tn.is_active() && sn.is_active() {
            anchor_users.push(p);
            anchors.push(RealObservation {
                tn: tn.values(),
                sn: sn.values(),
            });
        }
    }
    if anchors.is_empty() {
        log::debug!("interval {t}: no overlapped user active on both networks, generator task skipped");
        return Ok(None);
    }

    let mut mismatch: Vec<(usize, &[f64])> = Vec::new();
    if variant.uses_mismatch() {
        let mut coords: Vec<Coord> = Vec::new();
        for &p in overlapped {
            for s in 0..=t {
                if data.source(p, s).is_some_and(|d| d.is_active()) {
                    coords.push((p, s));
                }
            }
        }
        let pool = MismatchPool::new(coords);
        let anchor_coords: Vec<Coord> = anchor_users.iter().map(|&p| (p, t)).collect();
        let index: BTreeMap<usize, usize> = anchor_users.iter().enumerate().map(|(k, &p)| (p, k)).collect();
        for draw in sample_mismatch_pairs(&anchor_coords, &pool, rng).draws {
            let (v, s) = draw.partner;
            mismatch.push((index[&draw.anchor.0], real_source(data, v, s)?));
        }
    }

    let ds = discriminator_step(&bundle.enc, &bundle.d, &bundle.g, &anchors, &mismatch, rng)?;
    adam_step(&mut bundle.d.d, &ds.d, &mut optim.d, 0.0)?;
    adam_step(&mut bundle.enc.e_tn, &ds.e_tn, &mut optim.e_tn, 0.0)?;
    adam_step(&mut bundle.enc.e_sn, &ds.e_sn, &mut optim.e_sn, 0.0)?;

    let lc = if variant.uses_mismatch() { content_weight } else { 0.0 };
    let gs = generator_step(&bundle.enc, &bundle.d, &bundle.g, &anchors, lc, adversarial, rng)?;
    adam_step(&mut bundle.g.g, &gs.g, &mut optim.g, 0.0)?;

    let mut mapping = 0.0;
    for obs in &anchors {
        let generated = bundle.g.g.infer(&bundle.enc.e_tn.infer(obs.tn)?)?;
        mapping += crate::generator::l1_distance(&bundle.enc.e_sn.infer(obs.sn)?, &generated);
    }
    Ok(Some((ds.value, gs.value, mapping / anchors.len() as f64)))
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Ranks items for interval `t + 1` for every user in `population` (inputs
/// at `t`), then scores the lists against the revealed interactions.
#[allow(clippy::too_many_arguments)]
fn predict_and_score(
    bundle: &ModelBundle,
    data: &Observed<'_>,
    variant: Variant,
    population: &[usize],
    source_of: &dyn Fn(usize) -> SourceInput,
    t: usize,
    ns: &[usize],
    exclude_prev: bool,
    report: &mut EvalReport,
) -> Result<()> {
    let s = t + 1;
    let max_n = ns.iter().copied().max().unwrap_or(0);
    let mut lists: Vec<(usize, Vec<ItemId>)> = Vec::with_capacity(population.len());
    for &p in population {
        let w = infer_latent(bundle, data, p, t, source_of(p))?;
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("latent vector of user position {p} at interval {t}")));
        }
        let exclude = exclude_prev.then(|| data.prev(p, s));
        lists.push((p, top_n(&w, &bundle.items, max_n, exclude.as_ref())));
    }
    data.note(Access::Predict { interval: s });

    let ds = data.dataset();
    let counts = ds.item_counts_before(s);
    for (p, list) in lists {
        let truth: BTreeSet<ItemId> = data.truth(p, s).iter().copied().collect();
        if truth.is_empty() {
            report.skipped_empty_truth += 1;
            continue;
        }
        report.score_lists(variant.name(), s, ds.users[p].user_id, ns, &list, &truth, &counts, &ds.item_topics)?;
    }
    Ok(())
}

/// Training state that can be checkpointed between epochs or test intervals.
pub struct Trainer<'a> {
    data: Observed<'a>,
    pub config: TrainConfig,
    pub bundle: ModelBundle,
    pub optim: BundleOptim,
    pub rng: ChaCha8Rng,
    pub cursor: Cursor,
    pub offline_trace: Vec<EpochTrace>,
    pub online_trace: Vec<OnlineTrace>,
    pub report: EvalReport,
    overlapped: Vec<usize>,
    non_overlapped: Vec<usize>,
    everyone: Vec<usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate(dataset.num_intervals)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bundle = ModelBundle::new(config.dims(dataset), &config.optimizer, &mut rng)?;
        let optim = BundleOptim::new(&bundle, &config.optimizer);
        Self::assemble(
            dataset,
            Checkpoint {
                config,
                bundle,
                optim,
                rng,
                cursor: Cursor::Offline { epoch: 0 },
                offline_trace: Vec::new(),
                online_trace: Vec::new(),
                report: EvalReport::default(),
            },
        )
    }

    /// Continues from a checkpoint taken on the same dataset.
    pub fn resume(dataset: &'a Dataset, checkpoint: Checkpoint) -> Result<Self> {
        checkpoint.config.validate(dataset.num_intervals)?;
        let want = checkpoint.config.dims(dataset);
        if checkpoint.bundle.dims != want {
            return Err(Error::Checkpoint(format!(
                "model dimensions {:?} do not match the dataset ({want:?})",
                checkpoint.bundle.dims
            )));
        }
        Self::assemble(dataset, checkpoint)
    }

    fn assemble(dataset: &'a Dataset, c: Checkpoint) -> Result<Self> {
        let (overlapped, non_overlapped) = dataset.partition_overlap();
        if overlapped.is_empty() {
            return Err(Error::Validation("training needs at least one overlapped user".into()));
        }
        Ok(Trainer {
            data: Observed::new(dataset),
            config: c.config,
            bundle: c.bundle,
            optim: c.optim,
            rng: c.rng,
            cursor: c.cursor,
            offline_trace: c.offline_trace,
            online_trace: c.online_trace,
            report: c.report,
            overlapped,
            non_overlapped,
            everyone: (0..dataset.num_users()).collect(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            bundle: self.bundle.clone(),
            optim: self.optim.clone(),
            rng: self.rng.clone(),
            cursor: self.cursor,
            offline_trace: self.offline_trace.clone(),
            online_trace: self.online_trace.clone(),
            report: self.report.clone(),
        }
    }

    /// Starts recording data accesses (see [`Access`]).
    pub fn record_access(&mut self) {
        self.data.enable_log();
    }

    pub fn access_log(&self) -> Vec<Access> {
        self.data.log()
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.data.dataset()
    }

    fn cut(&self) -> usize {
        self.config.cut(self.data.dataset().num_intervals)
    }

    fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Users whose recommendations are scored.
    pub fn eval_population(&self) -> &[usize] {
        match self.variant() {
            Variant::NubprO => &self.overlapped,
            _ => &self.non_overlapped,
        }
    }

    /// Runs one unit of work (an offline epoch or an online test interval).
    /// Returns `false` once everything is done.
    pub fn step(&mut self) -> Result<bool> {
        match self.cursor {
            Cursor::Offline { epoch } if epoch < self.config.offline_epochs => {
                self.offline_epoch(epoch)?;
                self.cursor = Cursor::Offline { epoch: epoch + 1 };
            }
            Cursor::Offline { .. } => {
                self.cursor = Cursor::Online { t: self.cut() - 1 };
            }
            Cursor::Online { t } if t + 1 < self.data.dataset().num_intervals => {
                self.online_interval(t)?;
                self.cursor = Cursor::Online { t: t + 1 };
            }
            Cursor::Online { .. } => self.cursor = Cursor::Done,
            Cursor::Done => return Ok(false),
        }
        Ok(true)
    }

    /// Runs the offline phase to completion.
    pub fn offline_train(&mut self) -> Result<()> {
        while matches!(self.cursor, Cursor::Offline { .. }) {
            self.step()?;
        }
        Ok(())
    }

    /// Runs the online test-and-retrain phase to completion.
    pub fn online_run(&mut self) -> Result<()> {
        while self.step()? {}
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.offline_train()?;
        self.online_run()
    }

    fn offline_source(&self) -> SourceInput {
        match self.variant() {
            Variant::Proposed | Variant::Crgan => SourceInput::Generated,
            Variant::NubprO => SourceInput::Real,
            Variant::NubprNo => SourceInput::Zero,
        }
    }

    /// Parameters moved by the recommender loss when the generator is not
    /// part of the step (NUBPR variants own their encoders).
    fn recommender_updates(&self) -> Updates {
        let base = Updates {
            phi: true,
            items: true,
            ..Updates::default()
        };
        match self.variant() {
            Variant::Proposed | Variant::Crgan => base,
            Variant::NubprO => Updates {
                e_tn: true,
                e_sn: true,
                ..base
            },
            Variant::NubprNo => Updates { e_tn: true, ..base },
        }
    }

    fn offline_epoch(&mut self, epoch: usize) -> Result<()> {
        let cut = self.cut();
        let variant = self.variant();
        let source = self.offline_source();
        let updates = if variant.uses_generator() {
            Updates {
                e_tn: true,
                g: true,
                phi: true,
                items: true,
                e_sn: false,
            }
        } else {
            self.recommender_updates()
        };
        let (mut d_vals, mut g_vals, mut c_vals, mut m_vals, mut r_vals) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for t in 0..cut.saturating_sub(1) {
            if variant.uses_generator() {
                if let Some((dv, gv, mapping)) = generator_task_step(
                    &mut self.bundle,
                    &mut self.optim,
                    &self.data,
                    &mut self.rng,
                    &self.overlapped,
                    t,
                    variant,
                    self.config.content_weight,
                    self.config.adversarial,
                )? {
                    d_vals.push(-dv.value);
                    g_vals.push(gv.value);
                    c_vals.push(gv.content);
                    m_vals.push(mapping);
                }
            }
            self.data.note_read(Field::Interactions, t + 1);
            let sample = sample_user_triplets(
                self.data.dataset(),
                t + 1,
                &self.overlapped,
                self.config.triplets_per_item,
                &mut self.rng,
            );
            if sample.triplets.is_empty() {
                continue;
            }
            let loss = recommender_step(
                &mut self.bundle,
                &mut self.optim,
                &self.data,
                &mut self.rng,
                &sample.triplets,
                t,
                &|_| source,
                updates,
                self.config.optimizer.l2_lambda,
                self.config.batch_size,
            )?;
            r_vals.push(loss);
        }
        if !self.bundle.all_finite() {
            return Err(Error::NonFinite(format!("model parameters after offline epoch {}", epoch + 1)));
        }
        let trace = EpochTrace {
            epoch: epoch + 1,
            d_loss: mean(&d_vals),
            g_loss: mean(&g_vals),
            content_loss: mean(&c_vals),
            mapping_l1: mean(&m_vals),
            r_loss: mean(&r_vals),
        };
        log::info!(
            "epoch {:>3}  d {:>9.5}  g {:>9.5}  content {:>9.5}  r {:>9.5}",
            trace.epoch,
            trace.d_loss.unwrap_or(f64::NAN),
            trace.g_loss.unwrap_or(f64::NAN),
            trace.content_loss.unwrap_or(f64::NAN),
            trace.r_loss.unwrap_or(f64::NAN)
        );
        self.offline_trace.push(trace);
        Ok(())
    }

    fn eval_source(&self) -> SourceInput {
        self.offline_source()
    }

    fn online_interval(&mut self, t: usize) -> Result<()> {
        let s = t + 1;
        let variant = self.variant();
        let eval_source = self.eval_source();
        let eval_population = match variant {
            Variant::NubprO => &self.overlapped,
            _ => &self.non_overlapped,
        };
        predict_and_score(
            &self.bundle,
            &self.data,
            variant,
            eval_population,
            &|_| eval_source,
            t,
            &self.config.top_n,
            self.config.exclude_prev,
            &mut self.report,
        )?;

        // Step (1) population and source choice per variant.
        let population: &[usize] = if variant == Variant::NubprO {
            &self.overlapped
        } else {
            &self.everyone
        };
        self.data.note_read(Field::Interactions, s);
        let all = sample_user_triplets(
            self.data.dataset(),
            s,
            population,
            self.config.triplets_per_item,
            &mut self.rng,
        );
        let ov = if variant.uses_generator() {
            sample_user_triplets(
                self.data.dataset(),
                s,
                &self.overlapped,
                self.config.triplets_per_item,
                &mut self.rng,
            )
        } else {
            Default::default()
        };
        let data = &self.data;
        let step1_source = move |p: usize| -> SourceInput {
            match variant {
                Variant::Proposed | Variant::Crgan => {
                    let ds = data.dataset();
                    if ds.users[p].overlapped && data.source(p, t).is_some_and(|d| d.is_active()) {
                        SourceInput::Real
                    } else {
                        SourceInput::Generated
                    }
                }
                Variant::NubprO => SourceInput::Real,
                Variant::NubprNo => SourceInput::Zero,
            }
        };
        let step1_updates = self.recommender_updates();
        let joint_updates = Updates {
            g: true,
            phi: true,
            items: true,
            ..Updates::default()
        };

        for iteration in 1..=self.config.online_iters {
            let r_loss = if all.triplets.is_empty() {
                None
            } else {
                Some(recommender_step(
                    &mut self.bundle,
                    &mut self.optim,
                    data,
                    &mut self.rng,
                    &all.triplets,
                    t,
                    &step1_source,
                    step1_updates,
                    self.config.optimizer.l2_lambda,
                    self.config.batch_size,
                )?)
            };
            let mut gen = None;
            if variant.uses_generator() {
                gen = generator_task_step(
                    &mut self.bundle,
                    &mut self.optim,
                    data,
                    &mut self.rng,
                    &self.overlapped,
                    s,
                    variant,
                    self.config.content_weight,
                    self.config.adversarial,
                )?;
                if !ov.triplets.is_empty() {
                    recommender_step(
                        &mut self.bundle,
                        &mut self.optim,
                        data,
                        &mut self.rng,
                        &ov.triplets,
                        t,
                        &|_| SourceInput::Generated,
                        joint_updates,
                        self.config.optimizer.l2_lambda,
                        self.config.batch_size,
                    )?;
                }
            }
            self.online_trace.push(OnlineTrace {
                interval: s,
                iteration,
                r_loss,
                d_loss: gen.map(|(d, _, _)| -d.value),
                g_loss: gen.map(|(_, g, _)| g.value),
                content_loss: gen.map(|(_, g, _)| g.content),
                mapping_l1: gen.map(|(_, _, m)| m),
            });
        }
        if !self.bundle.all_finite() {
            return Err(Error::NonFinite(format!("model parameters after online interval {s}")));
        }
        Ok(())
    }
}

/// Scores a frozen model over the test window without any retraining.
pub fn evaluate_bundle(dataset: &Dataset, bundle: &ModelBundle, config: &TrainConfig) -> Result<EvalReport> {
    config.validate(dataset.num_intervals)?;
    if bundle.dims != config.dims(dataset) {
        return Err(Error::Validation(format!(
            "model dimensions {:?} do not match the dataset ({:?})",
            bundle.dims,
            config.dims(dataset)
        )));
    }
    let data = Observed::new(dataset);
    let (overlapped, non_overlapped) = dataset.partition_overlap();
    let (population, source) = match config.variant {
        Variant::Proposed | Variant::Crgan => (non_overlapped, SourceInput::Generated),
        Variant::NubprO => (overlapped, SourceInput::Real),
        Variant::NubprNo => (non_overlapped, SourceInput::Zero),
    };
    let mut report = EvalReport::default();
    for t in config.cut(dataset.num_intervals) - 1..dataset.num_intervals - 1 {
        predict_and_score(
            bundle,
            &data,
            config.variant,
            &population,
            &|_| source,
            t,
            &config.top_n,
            config.exclude_prev,
            &mut report,
        )?;
    }
    Ok(report)
}

/// Predicted intervals of the test window.
pub fn test_intervals(num_intervals: usize, config: &TrainConfig) -> std::ops::Range<usize> {
    config.cut(num_intervals)..num_intervals
}
