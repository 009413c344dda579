//! Flat `key = value` run configuration.
//!
//! Sources are applied in order (defaults, config file, `--set` pairs, then
//! dedicated flags), and a later assignment to the same key wins.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use cngan::data::SynthSpec;
use cngan::generator::AdversarialLoss;
use cngan::train::{TrainConfig, Variant};
use cngan::eval::DEFAULT_TBKNN_K;

/// Every key with a one-line description, in the order they are written out.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed for data synthesis and training"),
    ("users", "synthetic users U"),
    ("items", "synthetic items M"),
    ("topics", "topics per distribution K^t"),
    ("intervals", "time intervals T"),
    ("archetypes", "latent preference archetypes"),
    ("interactions_min", "fewest interactions per user and interval"),
    ("interactions_max", "most interactions per user and interval"),
    ("overlap", "fraction of users active on both networks"),
    ("popularity_skew", "Zipf exponent of item popularity"),
    ("preference_sharpness", "exponent on user-item affinity in item choice"),
    ("mapping_noise", "observation noise scale (0 gives an exact linear mapping)"),
    ("target_noise_ratio", "target-side noise as a multiple of mapping_noise"),
    ("drift", "per-interval share of a user's preferences that is redrawn"),
    ("archetype_concentration", "Dirichlet concentration of archetype topic vectors"),
    ("user_concentration", "Dirichlet concentration of user archetype mixtures"),
    ("item_concentration", "Dirichlet concentration of item topic vectors around their archetype"),
    ("source_mixing", "weight of neighbour averaging in the source mapping"),
    ("source_activity", "probability an overlapped user is active on the source network"),
    ("variant", "proposed | crgan | nubpr_o | nubpr_no"),
    ("offline_epochs", "offline training epochs"),
    ("online_iters", "retraining iterations per online interval (>= 1)"),
    ("offline_cut", "first test interval, or `auto` for floor(2T/3)"),
    ("content_weight", "weight of the content term in the generator objective"),
    ("adversarial", "non_saturating | saturating generator loss"),
    ("lr", "Adam initial learning rate"),
    ("l2_lambda", "L2 weight on the transfer net and item embeddings"),
    ("dropout", "dropout rate on hidden layers"),
    ("hidden_multiplier", "hidden width as a multiple of each net's output width"),
    ("encoding_dim", "encoding size En"),
    ("latent_dim", "latent factor size K"),
    ("triplets_per_item", "user triplets sampled per positive item"),
    ("batch_size", "triplets per recommender update, or `none` for one batch per interval"),
    ("top_n", "comma-separated Top-N cutoffs"),
    ("exclude_prev", "drop previously consumed items from recommendations (true | false)"),
    ("tbknn_k", "comma-separated neighbourhood sizes averaged by the TBKNN baseline"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub tbknn_k: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SynthSpec::default(),
            train: TrainConfig::default(),
            tbknn_k: DEFAULT_TBKNN_K.to_vec(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("`{key}`: cannot parse `{value}`: {e}"))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| num::<usize>(key, s.trim()))
        .collect()
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.synth;
        let t = &mut self.train;
        match key.trim() {
            "seed" => {
                self.seed = num(key, v)?;
                t.seed = self.seed;
            }
            "users" => s.users = num(key, v)?,
            "items" => s.items = num(key, v)?,
            "topics" => s.topics = num(key, v)?,
            "intervals" => s.intervals = num(key, v)?,
            "archetypes" => s.archetypes = num(key, v)?,
            "interactions_min" => s.interactions_min = num(key, v)?,
            "interactions_max" => s.interactions_max = num(key, v)?,
            "overlap" => s.overlap = num(key, v)?,
            "popularity_skew" => s.popularity_skew = num(key, v)?,
            "preference_sharpness" => s.preference_sharpness = num(key, v)?,
            "mapping_noise" => s.mapping_noise = num(key, v)?,
            "target_noise_ratio" => s.target_noise_ratio = num(key, v)?,
            "drift" => s.drift = num(key, v)?,
            "archetype_concentration" => s.archetype_concentration = num(key, v)?,
            "user_concentration" => s.user_concentration = num(key, v)?,
            "item_concentration" => s.item_concentration = num(key, v)?,
            "source_mixing" => s.source_mixing = num(key, v)?,
            "source_activity" => s.source_activity = num(key, v)?,
            "variant" => t.variant = v.parse().map_err(|e| anyhow!("{e}"))?,
            "offline_epochs" => t.offline_epochs = num(key, v)?,
            "online_iters" => t.online_iters = num(key, v)?,
            "offline_cut" => t.offline_cut = if v == "auto" { None } else { Some(num(key, v)?) },
            "content_weight" => t.content_weight = num(key, v)?,
            "adversarial" => {
                t.adversarial = match v {
                    "non_saturating" => AdversarialLoss::NonSaturating,
                    "saturating" => AdversarialLoss::Saturating,
                    _ => bail!("`adversarial`: expected non_saturating or saturating, got `{v}`"),
                }
            }
            "lr" => t.optimizer.initial_lr = num(key, v)?,
            "l2_lambda" => t.optimizer.l2_lambda = num(key, v)?,
            "dropout" => t.optimizer.dropout = num(key, v)?,
            "hidden_multiplier" => t.optimizer.hidden_multiplier = num(key, v)?,
            "encoding_dim" => t.encoding_dim = num(key, v)?,
            "latent_dim" => t.latent_dim = num(key, v)?,
            "triplets_per_item" => t.triplets_per_item = num(key, v)?,
            "batch_size" => t.batch_size = if v == "none" { None } else { Some(num(key, v)?) },
            "top_n" => t.top_n = list(key, v)?,
            "exclude_prev" => t.exclude_prev = num(key, v)?,
            "tbknn_k" => self.tbknn_k = list(key, v)?,
            other => bail!("unknown configuration key `{other}`"),
        }
        Ok(())
    }

    /// Applies `key=value` (or `key = value`) lines. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected `key = value`", n + 1))?;
            self.set(k, v).with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn apply_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects key=value, got `{pair}`"))?;
        self.set(k, v)
    }

    /// The resolved configuration in the same format `apply_text` reads.
    pub fn to_text(&self) -> String {
        let s = &self.synth;
        let t = &self.train;
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        put("seed", self.seed.to_string());
        put("users", s.users.to_string());
        put("items", s.items.to_string());
        put("topics", s.topics.to_string());
        put("intervals", s.intervals.to_string());
        put("archetypes", s.archetypes.to_string());
        put("interactions_min", s.interactions_min.to_string());
        put("interactions_max", s.interactions_max.to_string());
        put("overlap", s.overlap.to_string());
        put("popularity_skew", s.popularity_skew.to_string());
        put("preference_sharpness", s.preference_sharpness.to_string());
        put("mapping_noise", s.mapping_noise.to_string());
        put("target_noise_ratio", s.target_noise_ratio.to_string());
        put("drift", s.drift.to_string());
        put("archetype_concentration", s.archetype_concentration.to_string());
        put("user_concentration", s.user_concentration.to_string());
        put("item_concentration", s.item_concentration.to_string());
        put("source_mixing", s.source_mixing.to_string());
        put("source_activity", s.source_activity.to_string());
        put("variant", t.variant.to_string());
        put("offline_epochs", t.offline_epochs.to_string());
        put("online_iters", t.online_iters.to_string());
        put("offline_cut", t.offline_cut.map_or("auto".into(), |c| c.to_string()));
        put("content_weight", t.content_weight.to_string());
        put(
            "adversarial",
            match t.adversarial {
                AdversarialLoss::NonSaturating => "non_saturating".into(),
                AdversarialLoss::Saturating => "saturating".into(),
            },
        );
        put("lr", t.optimizer.initial_lr.to_string());
        put("l2_lambda", t.optimizer.l2_lambda.to_string());
        put("dropout", t.optimizer.dropout.to_string());
        put("hidden_multiplier", t.optimizer.hidden_multiplier.to_string());
        put("encoding_dim", t.encoding_dim.to_string());
        put("latent_dim", t.latent_dim.to_string());
        put("triplets_per_item", t.triplets_per_item.to_string());
        put("batch_size", t.batch_size.map_or("none".into(), |b| b.to_string()));
        put("top_n", join(&t.top_n));
        put("exclude_prev", t.exclude_prev.to_string());
        put("tbknn_k", join(&self.tbknn_k));
        out
    }

    pub fn variant(&self) -> Variant {
        self.train.variant
    }
}

/// `--help` text listing every configuration key.
pub fn keys_help() -> String {
    let mut out = String::from("Configuration keys (config file lines `key = value`, or --set key=value):\n");
    for (k, d) in KEYS {
        writeln!(out, "  {k:<24} {d}").unwrap();
    }
    out
}
