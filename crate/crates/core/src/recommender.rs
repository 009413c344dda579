//! Siamese pairwise recommender.
//!
//! A transfer network Φ maps `(target encoding, source encoding, previous
//! interactions)` to a latent user vector `w`; ratings are inner products with
//! item embeddings, `r̂_ui = ⟨w_u, h_i⟩`. Training uses the user-based pairwise
//! loss over triplets `(u, v, i)` where `u` interacted with `i` in the interval
//! and `v` did not, so each triplet updates two user representations and one
//! item row. The classic item-based loss over `(u, i, j)` is kept for ablations.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, ItemId, PrevInteractionVector};
use crate::error::{Error, Result};
use crate::nn::{neg_log_sigmoid, sigmoid, Activation, DenseNet, Grads, Mode, OptimizerConfig, Params, Trace};

#[derive(Debug, Clone, PartialEq)]
pub struct TransferNet {
    pub phi: DenseNet,
    encoding_dim: usize,
}

impl TransferNet {
    pub fn new<R: Rng + ?Sized>(
        encoding_dim: usize,
        num_items: usize,
        latent_dim: usize,
        opt: &OptimizerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let phi = DenseNet::one_hidden(
            "phi",
            2 * encoding_dim + num_items,
            latent_dim,
            opt.hidden_multiplier,
            Activation::Tanh,
            Activation::Identity,
            opt.dropout,
            rng,
        )?;
        Ok(TransferNet { phi, encoding_dim })
    }

    pub fn from_net(phi: DenseNet, encoding_dim: usize) -> Result<Self> {
        if phi.input_dim() < 2 * encoding_dim {
            return Err(Error::dim("phi input", 2 * encoding_dim, phi.input_dim()));
        }
        Ok(TransferNet { phi, encoding_dim })
    }

    pub fn encoding_dim(&self) -> usize {
        self.encoding_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.phi.output_dim()
    }

    pub fn num_items(&self) -> usize {
        self.phi.input_dim() - 2 * self.encoding_dim
    }

    /// `[target_enc | source_enc | prev]`.
    pub fn input(&self, target_enc: &[f64], source_enc: &[f64], prev: &PrevInteractionVector) -> Result<Vec<f64>> {
        let en = self.encoding_dim;
        if target_enc.len() != en {
            return Err(Error::dim("phi target encoding", en, target_enc.len()));
        }
        if source_enc.len() != en {
            return Err(Error::dim("phi source encoding", en, source_enc.len()));
        }
        if prev.bits().len() != self.num_items() {
            return Err(Error::dim("phi previous-interaction vector", self.num_items(), prev.bits().len()));
        }
        let mut v = Vec::with_capacity(self.phi.input_dim());
        v.extend_from_slice(target_enc);
        v.extend_from_slice(source_enc);
        v.extend(prev.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }));
        Ok(v)
    }

    /// Latent user vector; dropout only in `Mode::Train`.
    pub fn user_latent<R: Rng + ?Sized>(
        &self,
        target_enc: &[f64],
        source_enc: &[f64],
        prev: &PrevInteractionVector,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Trace)> {
        let x = self.input(target_enc, source_enc, prev)?;
        self.phi.forward(&x, mode, rng)
    }

    pub fn infer(&self, target_enc: &[f64], source_enc: &[f64], prev: &PrevInteractionVector) -> Result<Vec<f64>> {
        self.phi.infer(&self.input(target_enc, source_enc, prev)?)
    }
}

/// Row-major `M × K` item latent factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbeddings {
    h: Vec<f64>,
    dim: usize,
}

impl ItemEmbeddings {
    pub fn new<R: Rng + ?Sized>(num_items: usize, dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1).unwrap();
        ItemEmbeddings {
            h: (0..num_items * dim).map(|_| normal.sample(rng)).collect(),
            dim,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::dim("item embedding row", dim, bad.len()));
        }
        Ok(ItemEmbeddings {
            h: rows.iter().flatten().copied().collect(),
            dim,
        })
    }

    pub fn from_flat(h: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !h.len().is_multiple_of(dim) {
            return Err(Error::dim("item embedding buffer", dim, h.len()));
        }
        Ok(ItemEmbeddings { h, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_items(&self) -> usize {
        self.h.len() / self.dim
    }

    pub fn row(&self, item: ItemId) -> &[f64] {
        let i = item as usize;
        &self.h[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.h
    }
}

impl Params for ItemEmbeddings {
    fn label(&self) -> &str {
        "items"
    }

    fn block_names(&self) -> Vec<String> {
        vec!["items.h".into()]
    }

    fn blocks(&self) -> Vec<&[f64]> {
        vec![&self.h]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.h]
    }
}

/// `r̂_ui = Σ_f w_uf · h_if`.
pub fn predict_rating(w: &[f64], items: &ItemEmbeddings, item: ItemId) -> f64 {
    w.iter().zip(items.row(item)).map(|(a, b)| a * b).sum()
}

/// All item scores for one latent user vector.
pub fn score_all(w: &[f64], items: &ItemEmbeddings) -> Vec<f64> {
    items
        .h
        .chunks_exact(items.dim)
        .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
        .collect()
}

/// `u` interacted with `i` at interval `t`, `v` did not. Users are dataset positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserTriplet {
    pub u: usize,
    pub v: usize,
    pub i: ItemId,
    pub t: usize,
}

/// `u` interacted with `i` but not with `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemTriplet {
    pub u: usize,
    pub i: ItemId,
    pub j: ItemId,
}

/// Data-term gradients of a pairwise objective. `latent` is indexed like the
/// `latents` argument; rows of users outside every triplet stay zero.
#[derive(Debug, Clone)]
pub struct PairwiseGrads {
    /// Mean per-triplet loss (no regulariser).
    pub mean_loss: f64,
    pub triplets: usize,
    pub latent: Vec<Vec<f64>>,
    pub items: Grads,
}

fn check_latents(latents: &[Vec<f64>], items: &ItemEmbeddings, who: &[usize]) -> Result<()> {
    for &u in who {
        let w = latents
            .get(u)
            .ok_or_else(|| Error::Validation(format!("no latent vector for user position {u}")))?;
        if w.len() != items.dim() {
            return Err(Error::dim("user latent", items.dim(), w.len()));
        }
    }
    Ok(())
}

/// User-based pairwise loss `Σ -ln σ(r̂_ui - r̂_vi) + λ·reg_sq_norm`, where
/// `reg_sq_norm` is `‖Θ‖²` of the regularised blocks.
pub fn ubpr_loss(
    triplets: &[UserTriplet],
    latents: &[Vec<f64>],
    items: &ItemEmbeddings,
    lambda: f64,
    reg_sq_norm: f64,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyBatch("user-based pairwise loss over zero triplets".into()));
    }
    let mut loss = 0.0;
    for tr in triplets {
        check_latents(latents, items, &[tr.u, tr.v])?;
        let margin = predict_rating(&latents[tr.u], items, tr.i) - predict_rating(&latents[tr.v], items, tr.i);
        loss += neg_log_sigmoid(margin);
    }
    Ok(loss + lambda * reg_sq_norm)
}

/// Gradient of the mean per-triplet user-based loss w.r.t. the user latents
/// and the item embeddings. Per triplet with margin `δ` and `c = -(1-σ(δ))/n`:
/// `∂/∂w_u = c·h_i`, `∂/∂w_v = -c·h_i`, `∂/∂h_i = c·(w_u - w_v)`.
pub fn ubpr_gradients(
    triplets: &[UserTriplet],
    latents: &[Vec<f64>],
    items: &ItemEmbeddings,
) -> Result<PairwiseGrads> {
    if triplets.is_empty() {
        return Err(Error::EmptyBatch("user-based pairwise loss over zero triplets".into()));
    }
    let k = items.dim();
    let n = triplets.len() as f64;
    let mut latent_g: Vec<Vec<f64>> = latents.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut item_g = Grads::zeros_like(items);
    let mut loss = 0.0;
    for tr in triplets {
        check_latents(latents, items, &[tr.u, tr.v])?;
        let (wu, wv) = (&latents[tr.u], &latents[tr.v]);
        let h = items.row(tr.i);
        let margin: f64 = (0..k).map(|f| (wu[f] - wv[f]) * h[f]).sum();
        loss += neg_log_sigmoid(margin);
        let c = -(1.0 - sigmoid(margin)) / n;
        let gi = &mut item_g.blocks[0][tr.i as usize * k..(tr.i as usize + 1) * k];
        for f in 0..k {
            gi[f] += c * (wu[f] - wv[f]);
        }
        for f in 0..k {
            latent_g[tr.u][f] += c * h[f];
        }
        for f in 0..k {
            latent_g[tr.v][f] -= c * h[f];
        }
    }
    Ok(PairwiseGrads {
        mean_loss: loss / n,
        triplets: triplets.len(),
        latent: latent_g,
        items: item_g,
    })
}

/// Item-based pairwise loss `Σ -ln σ(r̂_ui - r̂_uj) + λ·reg_sq_norm`.
pub fn bpr_loss(
    triplets: &[ItemTriplet],
    latents: &[Vec<f64>],
    items: &ItemEmbeddings,
    lambda: f64,
    reg_sq_norm: f64,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyBatch("item-based pairwise loss over zero triplets".into()));
    }
    let mut loss = 0.0;
    for tr in triplets {
        check_latents(latents, items, &[tr.u])?;
        let w = &latents[tr.u];
        loss += neg_log_sigmoid(predict_rating(w, items, tr.i) - predict_rating(w, items, tr.j));
    }
    Ok(loss + lambda * reg_sq_norm)
}

/// Gradient of the mean per-triplet item-based loss.
pub fn bpr_gradients(
    triplets: &[ItemTriplet],
    latents: &[Vec<f64>],
    items: &ItemEmbeddings,
) -> Result<PairwiseGrads> {
    if triplets.is_empty() {
        return Err(Error::EmptyBatch("item-based pairwise loss over zero triplets".into()));
    }
    let k = items.dim();
    let n = triplets.len() as f64;
    let mut latent_g: Vec<Vec<f64>> = latents.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut item_g = Grads::zeros_like(items);
    let mut loss = 0.0;
    for tr in triplets {
        check_latents(latents, items, &[tr.u])?;
        let w = &latents[tr.u];
        let (hi, hj) = (items.row(tr.i), items.row(tr.j));
        let margin: f64 = (0..k).map(|f| w[f] * (hi[f] - hj[f])).sum();
        loss += neg_log_sigmoid(margin);
        let c = -(1.0 - sigmoid(margin)) / n;
        for f in 0..k {
            latent_g[tr.u][f] += c * (hi[f] - hj[f]);
        }
        let gblock = &mut item_g.blocks[0];
        for f in 0..k {
            gblock[tr.i as usize * k + f] += c * w[f];
            gblock[tr.j as usize * k + f] -= c * w[f];
        }
    }
    Ok(PairwiseGrads {
        mean_loss: loss / n,
        triplets: triplets.len(),
        latent: latent_g,
        items: item_g,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSample<T> {
    pub triplets: Vec<T>,
    /// Items (or users) without any valid negative.
    pub skipped: usize,
}

impl<T> Default for TripletSample<T> {
    fn default() -> Self {
        TripletSample {
            triplets: Vec::new(),
            skipped: 0,
        }
    }
}

/// For every item interacted with at interval `t` by someone in `population`,
/// draws `per_item` triplets with `u` uniform over the item's interacting users
/// and `v` uniform over the rest of `population`.
pub fn sample_user_triplets<R: Rng + ?Sized>(
    dataset: &Dataset,
    t: usize,
    population: &[usize],
    per_item: usize,
    rng: &mut R,
) -> TripletSample<UserTriplet> {
    let mut positives: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_items];
    for &p in population {
        for &i in &dataset.users[p].interactions[t] {
            positives[i as usize].push(p);
        }
    }
    let mut out = TripletSample::default();
    let mut negatives = Vec::with_capacity(population.len());
    for (item, pos) in positives.iter().enumerate() {
        if pos.is_empty() {
            continue;
        }
        negatives.clear();
        negatives.extend(population.iter().copied().filter(|p| !pos.contains(p)));
        if negatives.is_empty() {
            out.skipped += 1;
            continue;
        }
        for _ in 0..per_item {
            let u = pos[rng.random_range(0..pos.len())];
            let v = negatives[rng.random_range(0..negatives.len())];
            out.triplets.push(UserTriplet {
                u,
                v,
                i: item as ItemId,
                t,
            });
        }
    }
    if out.skipped > 0 {
        log::debug!("interval {t}: {} item(s) consumed by every user, skipped", out.skipped);
    }
    out
}

/// For every user in `population` with interactions at `t`, draws `per_user`
/// triplets `(u, i, j)` with `i` from the user's items at `t` and `j` from the rest.
pub fn sample_item_triplets<R: Rng + ?Sized>(
    dataset: &Dataset,
    t: usize,
    population: &[usize],
    per_user: usize,
    rng: &mut R,
) -> TripletSample<ItemTriplet> {
    let mut out = TripletSample::default();
    let m = dataset.num_items;
    for &p in population {
        let pos = &dataset.users[p].interactions[t];
        if pos.is_empty() {
            continue;
        }
        if pos.len() == m {
            out.skipped += 1;
            continue;
        }
        for _ in 0..per_user {
            let i = pos[rng.random_range(0..pos.len())];
            let j = loop {
                let j = rng.random_range(0..m) as ItemId;
                if pos.binary_search(&j).is_err() {
                    break j;
                }
            };
            out.triplets.push(ItemTriplet { u: p, i, j });
        }
    }
    out
}

/// Top-`n` item ids by descending score, ties broken by ascending id.
/// Excluded items are removed before ranking.
pub fn top_n_from_scores(scores: &[f64], n: usize, exclude: Option<&PrevInteractionVector>) -> Vec<ItemId> {
    let mut ids: Vec<ItemId> = (0..scores.len() as ItemId)
        .filter(|&i| exclude.is_none_or(|e| !e.contains(i)))
        .collect();
    ids.sort_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
    ids.truncate(n);
    ids
}

/// Top-`n` recommendation for one user latent vector.
pub fn top_n(w: &[f64], items: &ItemEmbeddings, n: usize, exclude: Option<&PrevInteractionVector>) -> Vec<ItemId> {
    top_n_from_scores(&score_all(w, items), n, exclude)
}
