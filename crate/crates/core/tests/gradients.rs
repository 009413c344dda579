//! Central finite differences against the analytic gradients of every
//! learnable block, on small models with dropout disabled.

use cngan::data::{synthesize_dataset, Dataset, SynthSpec};
use cngan::generator::{discriminator_step, generator_step, AdversarialLoss, RealObservation};
use cngan::model::{ModelBundle, ModelDims};
use cngan::nn::{Grads, OptimizerConfig};
use cngan::recommender::sample_user_triplets;
use cngan::train::{recommender_gradients, Observed, SourceInput, Updates};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-7;

fn small_dataset(seed: u64) -> Dataset {
    let spec = SynthSpec {
        users: 12,
        items: 30,
        topics: 4,
        intervals: 4,
        archetypes: 3,
        interactions_min: 1,
        interactions_max: 3,
        source_activity: 1.0,
        ..SynthSpec::default()
    };
    synthesize_dataset(&spec, seed).unwrap().dataset
}

fn bundle(ds: &Dataset, seed: u64) -> ModelBundle {
    let opt = OptimizerConfig {
        dropout: 0.0,
        ..OptimizerConfig::default()
    };
    let dims = ModelDims {
        topics: ds.num_topics,
        items: ds.num_items,
        encoding_dim: 3,
        latent_dim: 4,
    };
    ModelBundle::new(dims, &opt, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Compares `analytic` for group `group` with central differences of `loss`.
fn check_group(
    label: &str,
    bundle: &mut ModelBundle,
    group: usize,
    analytic: &Grads,
    loss: &dyn Fn(&ModelBundle) -> f64,
) -> usize {
    let mut checked = 0;
    let n_blocks = bundle.groups()[group].blocks().len();
    for b in 0..n_blocks {
        let len = bundle.groups()[group].blocks()[b].len();
        for k in 0..len {
            let orig = bundle.groups()[group].blocks()[b][k];
            bundle.groups_mut()[group].blocks_mut()[b][k] = orig + STEP;
            let up = loss(bundle);
            bundle.groups_mut()[group].blocks_mut()[b][k] = orig - STEP;
            let down = loss(bundle);
            bundle.groups_mut()[group].blocks_mut()[b][k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.blocks[b][k];
            let err = (a - numeric).abs();
            assert!(
                err <= ABS_FLOOR || err <= REL_TOL * a.abs().max(numeric.abs()),
                "{label}: group {group} block {b}[{k}] analytic {a:e} numeric {numeric:e}"
            );
            checked += 1;
        }
    }
    checked
}

const E_TN: usize = 0;
const E_SN: usize = 1;
const G: usize = 2;
const D: usize = 3;
const PHI: usize = 4;
const H: usize = 5;

fn recommender_case(seed: u64, source: SourceInput, up: Updates, groups: &[(usize, &str)]) {
    let ds = small_dataset(seed);
    let data = Observed::new(&ds);
    let mut b = bundle(&ds, seed + 100);
    let (overlapped, _) = ds.partition_overlap();
    let t = 1;
    let triplets = sample_user_triplets(&ds, t + 1, &overlapped, 2, &mut ChaCha8Rng::seed_from_u64(seed)).triplets;
    assert!(!triplets.is_empty());
    let src = move |_: usize| source;
    let grads = |b: &ModelBundle| {
        recommender_gradients(b, &data, &mut ChaCha8Rng::seed_from_u64(0), &triplets, t, &src, up).unwrap()
    };
    let analytic = grads(&b);
    let loss = |b: &ModelBundle| grads(b).mean_loss;
    for &(group, name) in groups {
        let a = match group {
            E_TN => &analytic.e_tn,
            E_SN => &analytic.e_sn,
            G => &analytic.g,
            PHI => &analytic.phi,
            H => &analytic.items,
            _ => unreachable!(),
        };
        assert!(check_group(name, &mut b, group, a, &loss) > 0);
    }
}

#[test]
pub fn recommender_path_through_generator() {
    let up = Updates {
        e_tn: true,
        g: true,
        phi: true,
        items: true,
        e_sn: false,
    };
    for seed in [1, 2, 3] {
        recommender_case(
            seed,
            SourceInput::Generated,
            up,
            &[(PHI, "phi"), (H, "items"), (G, "generator"), (E_TN, "target encoder")],
        );
    }
}

#[test]
pub fn recommender_path_through_source_encoder() {
    let up = Updates {
        e_tn: true,
        e_sn: true,
        phi: true,
        items: true,
        g: false,
    };
    for seed in [4, 5, 6] {
        recommender_case(
            seed,
            SourceInput::Real,
            up,
            &[(PHI, "phi"), (H, "items"), (E_SN, "source encoder"), (E_TN, "target encoder")],
        );
    }
}

fn anchors(ds: &Dataset, t: usize) -> (Vec<RealObservation<'_>>, Vec<(usize, &[f64])>) {
    let mut a = Vec::new();
    for u in &ds.users {
        if let Some(sn) = u.source_at(t) {
            if sn.is_active() && u.target[t].is_active() {
                a.push(RealObservation {
                    tn: u.target[t].values(),
                    sn: sn.values(),
                });
            }
        }
    }
    // pair each anchor with the next anchor's source
    let mismatch = (0..a.len()).map(|k| (k, a[(k + 1) % a.len()].sn)).collect();
    (a, mismatch)
}

#[test]
pub fn discriminator_and_encoders() {
    for seed in [7, 8, 9] {
        let ds = small_dataset(seed);
        let mut b = bundle(&ds, seed);
        let (anchor_obs, mismatch) = anchors(&ds, 2);
        assert!(anchor_obs.len() >= 2);
        let step = |b: &ModelBundle| {
            discriminator_step(
                &b.enc,
                &b.d,
                &b.g,
                &anchor_obs,
                &mismatch,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap()
        };
        let analytic = step(&b);
        let loss = |b: &ModelBundle| -step(b).value.value;
        check_group("discriminator", &mut b, D, &analytic.d, &loss);
        check_group("target encoder", &mut b, E_TN, &analytic.e_tn, &loss);
        check_group("source encoder", &mut b, E_SN, &analytic.e_sn, &loss);
    }
}

#[test]
pub fn generator_objective() {
    for seed in [10, 11, 12] {
        let ds = small_dataset(seed);
        let mut b = bundle(&ds, seed);
        let (anchor_obs, _) = anchors(&ds, 1);
        for adversarial in [AdversarialLoss::NonSaturating, AdversarialLoss::Saturating] {
            let step = |b: &ModelBundle| {
                generator_step(
                    &b.enc,
                    &b.d,
                    &b.g,
                    &anchor_obs,
                    0.7,
                    adversarial,
                    &mut ChaCha8Rng::seed_from_u64(0),
                )
                .unwrap()
            };
            let analytic = step(&b);
            let loss = |b: &ModelBundle| step(b).value.value;
            check_group("generator", &mut b, G, &analytic.g, &loss);
        }
    }
}

pub mod substrate {
    use super::*;
    use cngan::nn::{Activation, Dense, DenseNet, Mode, Params};
    use cngan::recommender::{ubpr_gradients, ItemEmbeddings, UserTriplet};
    use rand::Rng;

    fn random_net(acts: [Activation; 2], seed: u64) -> DenseNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l0 = Dense::glorot(5, 7, acts[0], &mut rng);
        let mut l1 = Dense::glorot(7, 3, acts[1], &mut rng);
        for b in l0.bias.iter_mut().chain(l1.bias.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        DenseNet::from_layers("net", vec![l0, l1], 0.0).unwrap()
    }

    // loss = Σ c_k·out_k, so ∂loss/∂out = c
    fn weighted(net: &DenseNet, x: &[f64], c: &[f64]) -> f64 {
        net.infer(x).unwrap().iter().zip(c).map(|(a, b)| a * b).sum()
    }

    #[test]
    pub fn dense_net_matches_finite_differences() {
        use Activation::*;
        for (seed, acts) in [[Tanh, Identity], [Sigmoid, Tanh], [Relu, Sigmoid], [Identity, Relu]]
            .into_iter()
            .enumerate()
        {
            let mut net = random_net(acts, seed as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed as u64);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, trace) = net.forward(&x, Mode::Infer, &mut rng).unwrap();
            let mut g = Grads::zeros_like(&net);
            let dx = net.backward(&trace, &c, &mut g).unwrap();
            for b in 0..g.blocks.len() {
                for k in 0..g.blocks[b].len() {
                    let orig = net.blocks()[b][k];
                    net.blocks_mut()[b][k] = orig + STEP;
                    let up = weighted(&net, &x, &c);
                    net.blocks_mut()[b][k] = orig - STEP;
                    let down = weighted(&net, &x, &c);
                    net.blocks_mut()[b][k] = orig;
                    let num = (up - down) / (2.0 * STEP);
                    let err = (num - g.blocks[b][k]).abs();
                    assert!(err <= ABS_FLOOR || err <= REL_TOL * num.abs().max(g.blocks[b][k].abs()));
                }
            }
            for j in 0..5 {
                let mut xp = x.clone();
                xp[j] += STEP;
                let mut xm = x.clone();
                xm[j] -= STEP;
                let num = (weighted(&net, &xp, &c) - weighted(&net, &xm, &c)) / (2.0 * STEP);
                assert!((num - dx[j]).abs() <= ABS_FLOOR.max(REL_TOL * num.abs()));
            }
        }
    }

    #[test]
    pub fn infer_matches_hand_matmul() {
        let net = random_net([Activation::Tanh, Activation::Identity], 42);
        let x = [0.3, -0.1, 0.8, 0.0, 0.25];
        let (l0, l1) = (&net.layers()[0], &net.layers()[1]);
        let mut hidden = [0.0; 7];
        for (o, h) in hidden.iter_mut().enumerate() {
            let mut z = l0.bias[o];
            for i in 0..5 {
                z += l0.weights[o * 5 + i] * x[i];
            }
            *h = z.tanh();
        }
        let got = net.infer(&x).unwrap();
        for o in 0..3 {
            let mut z = l1.bias[o];
            for i in 0..7 {
                z += l1.weights[o * 7 + i] * hidden[i];
            }
            assert!((got[o] - z).abs() < 1e-12);
        }
    }

    #[test]
    pub fn dropout_preserves_expected_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hidden = Dense::glorot(4, 6, Activation::Sigmoid, &mut rng);
        // identity readout exposes the (masked) hidden layer
        let mut readout = Dense::zeros(6, 6, Activation::Identity);
        for k in 0..6 {
            readout.weights[k * 6 + k] = 1.0;
        }
        let net = DenseNet::from_layers("mc", vec![hidden, readout], 0.4).unwrap();
        let x = [0.5, -0.2, 0.9, 0.1];
        let clean = net.infer(&x).unwrap();
        let draws = 10_000;
        let mut mean = [0.0; 6];
        for _ in 0..draws {
            let (out, _) = net.forward(&x, Mode::Train, &mut rng).unwrap();
            for (m, o) in mean.iter_mut().zip(out) {
                *m += o / draws as f64;
            }
        }
        for (m, c) in mean.iter().zip(&clean) {
            assert!((m - c).abs() <= 0.01 * c.abs().max(1e-3) * 3.0, "{m} vs {c}");
        }
    }

    /// Lookup-table user factors: the pairwise gradients reduce to the
    /// closed forms ∂r̂_uvi/∂w_u = h_i, ∂/∂w_v = -h_i, ∂/∂h_i = w_u - w_v,
    /// scaled by -(1 - σ(δ)).
    #[test]
    pub fn mf_special_case_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let k = 4;
        let latents: Vec<Vec<f64>> = (0..3).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let items = ItemEmbeddings::from_rows(&rows).unwrap();
        let (u, v, i) = (0, 2, 3u32);
        let g = ubpr_gradients(&[UserTriplet { u, v, i, t: 0 }], &latents, &items).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let delta = dot(&latents[u], &rows[3]) - dot(&latents[v], &rows[3]);
        let scale = -(1.0 - 1.0 / (1.0 + (-delta).exp()));
        for f in 0..k {
            assert!((g.latent[u][f] - scale * rows[3][f]).abs() < 1e-10);
            assert!((g.latent[v][f] + scale * rows[3][f]).abs() < 1e-10);
            assert_eq!(g.latent[1][f], 0.0);
            assert!((g.items.blocks[0][3 * k + f] - scale * (latents[u][f] - latents[v][f])).abs() < 1e-10);
        }
        for item in [0, 1, 2, 4] {
            assert!(g.items.blocks[0][item * k..(item + 1) * k].iter().all(|&x| x == 0.0));
        }
    }
}
