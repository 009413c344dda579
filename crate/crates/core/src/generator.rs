//! Generator task: target/source encoders, the pair discriminator and the
//! target→source encoding generator.
//!
//! The discriminator scores `(target encoding, source encoding)` pairs and is
//! trained, together with both encoders, to maximise
//!
//! ```text
//! V_D = mean_real log D(x,y) + mean_fake log(1 - D(x,G(x))) + mean_mismatch log(1 - D(x,ȳ))
//! ```
//!
//! where mismatching pairs combine a real target encoding with a real source
//! encoding of another user (same interval) or of the same user (another
//! interval). The generator descends an adversarial term plus an ℓ1 content
//! loss against the real source encoding.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TopicalDistribution;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, Grads, Mode, OptimizerConfig};

pub type Encoding = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub e_tn: DenseNet,
    pub e_sn: DenseNet,
}

impl EncoderPair {
    /// Both encoders are `K^t -> 2En (tanh) -> En (tanh)`. The bounded output
    /// keeps the discriminator ascent from inflating the encoding scale.
    pub fn new<R: Rng + ?Sized>(
        topics: usize,
        encoding_dim: usize,
        opt: &OptimizerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let make = |label: &str, rng: &mut R| {
            DenseNet::one_hidden(
                label,
                topics,
                encoding_dim,
                opt.hidden_multiplier,
                Activation::Tanh,
                Activation::Tanh,
                opt.dropout,
                rng,
            )
        };
        Ok(EncoderPair {
            e_tn: make("e_tn", rng)?,
            e_sn: make("e_sn", rng)?,
        })
    }

    pub fn encoding_dim(&self) -> usize {
        self.e_tn.output_dim()
    }

    pub fn encode_target(&self, tn: &TopicalDistribution) -> Result<Encoding> {
        self.e_tn.infer(tn.values())
    }

    pub fn encode_source(&self, sn: &TopicalDistribution) -> Result<Encoding> {
        self.e_sn.infer(sn.values())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub g: DenseNet,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(encoding_dim: usize, opt: &OptimizerConfig, rng: &mut R) -> Result<Self> {
        Ok(Generator {
            g: DenseNet::one_hidden(
                "g",
                encoding_dim,
                encoding_dim,
                opt.hidden_multiplier,
                Activation::Tanh,
                Activation::Identity,
                opt.dropout,
                rng,
            )?,
        })
    }

    pub fn generate(&self, target_enc: &[f64]) -> Result<Encoding> {
        self.g.infer(target_enc)
    }
}

/// `G(E_tn(tn))` in inference mode.
pub fn generate_source_encoding(
    g: &Generator,
    enc: &EncoderPair,
    tn: &TopicalDistribution,
) -> Result<Encoding> {
    g.generate(&enc.encode_target(tn)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub d: DenseNet,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(encoding_dim: usize, opt: &OptimizerConfig, rng: &mut R) -> Result<Self> {
        Ok(Discriminator {
            d: DenseNet::one_hidden(
                "d",
                2 * encoding_dim,
                1,
                opt.hidden_multiplier,
                Activation::Tanh,
                Activation::Sigmoid,
                opt.dropout,
                rng,
            )?,
        })
    }

    /// Probability that `(target_enc, source_enc)` is a matching pair.
    pub fn score(&self, target_enc: &[f64], source_enc: &[f64]) -> Result<f64> {
        Ok(self.d.infer(&concat(target_enc, source_enc))?[0])
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Real,
    Fake,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingPair {
    pub target_enc: Encoding,
    pub source_enc: Encoding,
    pub kind: PairKind,
}

/// Coordinates of a real `(user, interval)` observation; users are dataset positions.
pub type Coord = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MismatchRule {
    CrossUser,
    CrossTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MismatchDraw {
    pub anchor: Coord,
    pub partner: Coord,
    pub rule: MismatchRule,
}

/// Index over the real source observations a mismatch may be drawn from.
#[derive(Debug, Clone, Default)]
pub struct MismatchPool {
    by_interval: HashMap<usize, Vec<usize>>,
    by_user: HashMap<usize, Vec<usize>>,
}

impl MismatchPool {
    pub fn new(coords: impl IntoIterator<Item = Coord>) -> Self {
        let mut pool = MismatchPool::default();
        for (u, t) in coords {
            pool.by_interval.entry(t).or_default().push(u);
            pool.by_user.entry(u).or_default().push(t);
        }
        for v in pool.by_interval.values_mut().chain(pool.by_user.values_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        pool
    }

    fn pick_other<R: Rng + ?Sized>(candidates: Option<&Vec<usize>>, exclude: usize, rng: &mut R) -> Option<usize> {
        let c = candidates?;
        let n_valid = c.len() - usize::from(c.binary_search(&exclude).is_ok());
        if n_valid == 0 {
            return None;
        }
        let mut k = rng.random_range(0..n_valid);
        for &x in c {
            if x == exclude {
                continue;
            }
            if k == 0 {
                return Some(x);
            }
            k -= 1;
        }
        unreachable!()
    }

    fn draw<R: Rng + ?Sized>(&self, anchor: Coord, rng: &mut R) -> Option<MismatchDraw> {
        let (u, t) = anchor;
        let cross_user_first = rng.random::<bool>();
        let cross_user = |rng: &mut R| {
            Self::pick_other(self.by_interval.get(&t), u, rng).map(|v| MismatchDraw {
                anchor,
                partner: (v, t),
                rule: MismatchRule::CrossUser,
            })
        };
        let cross_time = |rng: &mut R| {
            Self::pick_other(self.by_user.get(&u), t, rng).map(|s| MismatchDraw {
                anchor,
                partner: (u, s),
                rule: MismatchRule::CrossTime,
            })
        };
        if cross_user_first {
            cross_user(rng).or_else(|| cross_time(rng))
        } else {
            cross_time(rng).or_else(|| cross_user(rng))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MismatchSample {
    pub draws: Vec<MismatchDraw>,
    /// Anchors for which no mismatching partner exists.
    pub skipped: usize,
}

/// One mismatching partner per anchor: with probability ½ another user at the
/// same interval, otherwise the same user at another interval; falls back to
/// the other rule when the chosen one has no candidates.
pub fn sample_mismatch_pairs<R: Rng + ?Sized>(
    anchors: &[Coord],
    pool: &MismatchPool,
    rng: &mut R,
) -> MismatchSample {
    let mut out = MismatchSample::default();
    for &a in anchors {
        match pool.draw(a, rng) {
            Some(d) => out.draws.push(d),
            None => out.skipped += 1,
        }
    }
    if out.skipped > 0 {
        log::warn!("mismatch sampler skipped {} anchor(s) with no valid partner", out.skipped);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiscriminatorValue {
    pub value: f64,
    pub real: f64,
    pub fake: f64,
    pub mismatch: f64,
    /// Number of pair kinds that had no samples (their term is 0).
    pub empty_kinds: usize,
}

fn mean_or_zero(xs: impl Iterator<Item = f64>, empty: &mut usize) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        *empty += 1;
        0.0
    } else {
        sum / n as f64
    }
}

/// `V_D` from discriminator probabilities grouped by pair kind.
pub fn discriminator_value_from_scores(real: &[f64], fake: &[f64], mismatch: &[f64]) -> DiscriminatorValue {
    let mut empty = 0;
    let r = mean_or_zero(real.iter().map(|p| p.ln()), &mut empty);
    let f = mean_or_zero(fake.iter().map(|p| (-p).ln_1p()), &mut empty);
    let m = mean_or_zero(mismatch.iter().map(|p| (-p).ln_1p()), &mut empty);
    if empty > 0 {
        log::warn!("discriminator value: {empty} pair kind(s) without samples contribute 0");
    }
    DiscriminatorValue {
        value: r + f + m,
        real: r,
        fake: f,
        mismatch: m,
        empty_kinds: empty,
    }
}

/// `V_D` over tagged pairs, discriminator in inference mode.
pub fn discriminator_value(d: &Discriminator, pairs: &[MappingPair]) -> Result<DiscriminatorValue> {
    let mut by_kind: [Vec<f64>; 3] = Default::default();
    for p in pairs {
        let s = d.score(&p.target_enc, &p.source_enc)?;
        let slot = match p.kind {
            PairKind::Real => 0,
            PairKind::Fake => 1,
            PairKind::Mismatch => 2,
        };
        by_kind[slot].push(s);
    }
    Ok(discriminator_value_from_scores(&by_kind[0], &by_kind[1], &by_kind[2]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialLoss {
    /// `log(1 - D(x, G(x)))`, minimised.
    Saturating,
    /// `-log D(x, G(x))`, minimised.
    #[default]
    NonSaturating,
}

impl AdversarialLoss {
    fn value(self, p: f64) -> f64 {
        match self {
            AdversarialLoss::Saturating => (-p).ln_1p(),
            AdversarialLoss::NonSaturating => -p.ln(),
        }
    }

    fn grad(self, p: f64) -> f64 {
        match self {
            AdversarialLoss::Saturating => -1.0 / (1.0 - p),
            AdversarialLoss::NonSaturating => -1.0 / p,
        }
    }
}

/// ℓ1 distance.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneratorValue {
    pub value: f64,
    pub adversarial: f64,
    /// Mean ℓ1 between real and generated source encodings (unweighted).
    pub content: f64,
}

/// A real mapping observation: target and source distributions of one overlapped user-interval.
#[derive(Debug, Clone, Copy)]
pub struct RealObservation<'a> {
    pub tn: &'a [f64],
    pub sn: &'a [f64],
}

/// `V_G` over real observations with all networks in inference mode.
pub fn generator_value(
    enc: &EncoderPair,
    g: &Generator,
    d: &Discriminator,
    batch: &[RealObservation<'_>],
    content_weight: f64,
    adversarial: AdversarialLoss,
) -> Result<GeneratorValue> {
    if content_weight < 0.0 {
        return Err(Error::Config(format!("content weight {content_weight} must be >= 0")));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch("generator value needs real mapping data".into()));
    }
    let mut adv = 0.0;
    let mut content = 0.0;
    for obs in batch {
        let x = enc.e_tn.infer(obs.tn)?;
        let y = enc.e_sn.infer(obs.sn)?;
        let gx = g.g.infer(&x)?;
        adv += adversarial.value(d.score(&x, &gx)?);
        content += l1_distance(&y, &gx);
    }
    let n = batch.len() as f64;
    let (adv, content) = (adv / n, content / n);
    Ok(GeneratorValue {
        value: adv + content_weight * content,
        adversarial: adv,
        content,
    })
}

/// Gradients of `-V_D` for the discriminator and both encoders.
#[derive(Debug, Clone)]
pub struct DiscriminatorStep {
    pub value: DiscriminatorValue,
    pub d: Grads,
    pub e_tn: Grads,
    pub e_sn: Grads,
}

/// Computes `V_D` and the gradients of `-V_D` w.r.t. D, E_tn and E_sn on one
/// batch. `mismatch` pairs an anchor index into `anchors` with a partner's
/// source distribution. All networks run in training mode; G is held fixed
/// but E_tn receives gradient through G's input on fake pairs.
pub fn discriminator_step<R: Rng + ?Sized>(
    enc: &EncoderPair,
    d: &Discriminator,
    g: &Generator,
    anchors: &[RealObservation<'_>],
    mismatch: &[(usize, &[f64])],
    rng: &mut R,
) -> Result<DiscriminatorStep> {
    let en = enc.encoding_dim();
    let mut gd = Grads::zeros_like(&d.d);
    let mut ge_tn = Grads::zeros_like(&enc.e_tn);
    let mut ge_sn = Grads::zeros_like(&enc.e_sn);
    let mut scratch_g = Grads::zeros_like(&g.g);

    let n_anchor = anchors.len();
    let n_mis = mismatch.len();
    let mut real_scores = Vec::with_capacity(n_anchor);
    let mut fake_scores = Vec::with_capacity(n_anchor);
    let mut mis_scores = Vec::with_capacity(n_mis);

    let mut x_cache = Vec::with_capacity(n_anchor);
    for obs in anchors {
        let (x, tx) = enc.e_tn.forward(obs.tn, Mode::Train, rng)?;
        let (y, ty) = enc.e_sn.forward(obs.sn, Mode::Train, rng)?;
        let mut dx = vec![0.0; en];

        // real: ∂(-log p)/∂p = -1/p
        let (p, tp) = d.d.forward(&concat(&x, &y), Mode::Train, rng)?;
        real_scores.push(p[0]);
        let din = d.d.backward(&tp, &[-1.0 / p[0] / n_anchor as f64], &mut gd)?;
        add_into(&mut dx, &din[..en]);
        enc.e_sn.backward(&ty, &din[en..], &mut ge_sn)?;

        // fake: ∂(-log(1-q))/∂q = 1/(1-q)
        let (gx, tg) = g.g.forward(&x, Mode::Train, rng)?;
        let (q, tq) = d.d.forward(&concat(&x, &gx), Mode::Train, rng)?;
        fake_scores.push(q[0]);
        let din = d.d.backward(&tq, &[1.0 / (1.0 - q[0]) / n_anchor as f64], &mut gd)?;
        add_into(&mut dx, &din[..en]);
        let dxg = g.g.backward(&tg, &din[en..], &mut scratch_g)?;
        add_into(&mut dx, &dxg);

        x_cache.push((x, tx, dx));
    }

    for &(idx, sn_partner) in mismatch {
        let (y, ty) = enc.e_sn.forward(sn_partner, Mode::Train, rng)?;
        let (x, _, dx) = &mut x_cache[idx];
        let (r, tr) = d.d.forward(&concat(x, &y), Mode::Train, rng)?;
        mis_scores.push(r[0]);
        let din = d.d.backward(&tr, &[1.0 / (1.0 - r[0]) / n_mis as f64], &mut gd)?;
        add_into(dx, &din[..en]);
        enc.e_sn.backward(&ty, &din[en..], &mut ge_sn)?;
    }

    for (_, tx, dx) in &x_cache {
        enc.e_tn.backward(tx, dx, &mut ge_tn)?;
    }

    let value = discriminator_value_from_scores(&real_scores, &fake_scores, &mis_scores);
    if !value.value.is_finite() {
        return Err(Error::NonFinite("discriminator value".into()));
    }
    Ok(DiscriminatorStep {
        value,
        d: gd,
        e_tn: ge_tn,
        e_sn: ge_sn,
    })
}

#[derive(Debug, Clone)]
pub struct GeneratorStep {
    pub value: GeneratorValue,
    pub g: Grads,
}

/// `V_G` and its gradient w.r.t. G only. Encoders and D are evaluated in
/// inference mode and treated as constants.
pub fn generator_step<R: Rng + ?Sized>(
    enc: &EncoderPair,
    d: &Discriminator,
    g: &Generator,
    anchors: &[RealObservation<'_>],
    content_weight: f64,
    adversarial: AdversarialLoss,
    rng: &mut R,
) -> Result<GeneratorStep> {
    if content_weight < 0.0 {
        return Err(Error::Config(format!("content weight {content_weight} must be >= 0")));
    }
    if anchors.is_empty() {
        return Err(Error::EmptyBatch("generator step needs real mapping data".into()));
    }
    let en = enc.encoding_dim();
    let n = anchors.len() as f64;
    let mut gg = Grads::zeros_like(&g.g);
    let mut scratch_d = Grads::zeros_like(&d.d);
    let (mut adv, mut content) = (0.0, 0.0);
    for obs in anchors {
        let x = enc.e_tn.infer(obs.tn)?;
        let y = enc.e_sn.infer(obs.sn)?;
        let (gx, tg) = g.g.forward(&x, Mode::Train, rng)?;
        let (q, tq) = d.d.forward(&concat(&x, &gx), Mode::Infer, rng)?;
        adv += adversarial.value(q[0]);
        content += l1_distance(&y, &gx);

        let din = d.d.backward(&tq, &[adversarial.grad(q[0]) / n], &mut scratch_d)?;
        let mut dg: Vec<f64> = din[en..].to_vec();
        if content_weight > 0.0 {
            for (dgi, (gi, yi)) in dg.iter_mut().zip(gx.iter().zip(&y)) {
                *dgi += content_weight * sign(gi - yi) / n;
            }
        }
        g.g.backward(&tg, &dg, &mut gg)?;
    }
    let (adv, content) = (adv / n, content / n);
    let value = GeneratorValue {
        value: adv + content_weight * content,
        adversarial: adv,
        content,
    };
    if !value.value.is_finite() {
        return Err(Error::NonFinite("generator value".into()));
    }
    Ok(GeneratorStep { value, g: gg })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}
