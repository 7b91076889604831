use super::*;
use crate::data::{class_stats, generate_gmm_dataset, ToyMixtureSpec};
use crate::net::{Activation, NetworkConfig};
use crate::rng;
use crate::schedule::SigmaMode;
use proptest::prelude::*;
use rand::Rng;

/// Deterministic stand-in model: an affine map of `x_t` with a class- and time-dependent offset.
struct AffineStub;

impl NoiseModel for AffineStub {
    fn dim(&self) -> usize {
        2
    }
    fn num_classes(&self) -> usize {
        2
    }
    fn predict(&self, x: &[f64], t: usize, c: usize) -> Vec<f64> {
        let s = (t as f64 * 0.01).sin();
        vec![0.3 * x[0] - 0.2 * x[1] + s + c as f64 * 0.5, 0.1 * x[0] + 0.4 * x[1] - c as f64]
    }
}

struct ZeroStub;

impl NoiseModel for ZeroStub {
    fn dim(&self) -> usize {
        2
    }
    fn num_classes(&self) -> usize {
        2
    }
    fn predict(&self, _x: &[f64], _t: usize, _c: usize) -> Vec<f64> {
        vec![0.0, 0.0]
    }
}

/// Exact denoiser for data in which every sample of class `c` equals `points[c]`.
struct PointMassDenoiser<'s> {
    points: Vec<Vec<f64>>,
    sched: &'s DiffusionSchedule,
}

impl NoiseModel for PointMassDenoiser<'_> {
    fn dim(&self) -> usize {
        self.points[0].len()
    }
    fn num_classes(&self) -> usize {
        self.points.len()
    }
    fn predict(&self, x: &[f64], t: usize, c: usize) -> Vec<f64> {
        let ab = self.sched.alpha_bar(t);
        x.iter().zip(&self.points[c]).map(|(x, m)| (x - ab.sqrt() * m) / (1.0 - ab).sqrt()).collect()
    }
}

fn sched() -> DiffusionSchedule {
    DiffusionSchedule::standard()
}

fn toy_dataset(counts: &[usize], seed: u64) -> LabeledDataset {
    let spec = ToyMixtureSpec::with_counts(counts, vec![vec![0.0, 0.0], vec![2.0, 1.0]], vec![1.0, 0.5]).unwrap();
    generate_gmm_dataset(&spec, counts, seed).unwrap()
}

fn batch(size: usize, seed: u64, p_uncond: f64) -> Batch {
    let ds = toy_dataset(&[20, 20], 3);
    Batch::draw(&ds, size, &sched(), p_uncond, &mut rng::stream(seed, &[])).unwrap()
}

fn small_net() -> NoisePredictor {
    NoisePredictor::new(NetworkConfig {
        input_dim: 2,
        hidden: vec![16, 16],
        time_features: 4,
        num_classes: 2,
        embed_dim: 4,
        activation: Activation::Silu,
    })
    .unwrap()
}

#[test]
fn mu_theta_edge_cases() {
    let s = sched();
    let x = [1.0, -2.0];
    let mu = mu_theta(&x, 10, &[0.0, 0.0], &s).unwrap();
    let a = 1.0 / s.alpha(10).sqrt();
    assert_eq!(mu, vec![a * 1.0, a * -2.0]);
    assert!(mu_theta(&x, 0, &[0.0, 0.0], &s).is_err());
    assert!(mu_theta(&x, 1, &[0.0], &s).is_err());

    let tiny = DiffusionSchedule::linear(1e-14, 1e-14, 3, SigmaMode::Beta).unwrap();
    let mu = mu_theta(&x, 2, &[0.7, 0.3], &tiny).unwrap();
    for (m, xi) in mu.iter().zip(x) {
        assert!((m - xi).abs() < 1e-6);
    }
}

#[test]
fn mu_theta_matches_formula() {
    let s = sched();
    let mut r = rng::stream(4, &[]);
    for _ in 0..100 {
        let t = r.random_range(1..=1000);
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-3.0..3.0)).collect();
        let e: Vec<f64> = (0..3).map(|_| r.random_range(-3.0..3.0)).collect();
        let mu = mu_theta(&x, t, &e, &s).unwrap();
        let alpha = 1.0 - s.beta(t);
        let abar: f64 = s.betas()[..t].iter().map(|b| 1.0 - b).product();
        for k in 0..3 {
            let expected = (x[k] - (1.0 - alpha) / (1.0 - abar).sqrt() * e[k]) / alpha.sqrt();
            assert!((mu[k] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }
}

#[test]
fn pcl_distance_cases() {
    assert_eq!(pcl_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(pcl_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
    assert!(pcl_distance(&[0.0], &[0.0, 1.0]).is_err());
    let mut r = rng::stream(8, &[]);
    let a: Vec<f64> = (0..7).map(|_| r.random_range(-5.0..5.0)).collect();
    let b: Vec<f64> = (0..7).map(|_| r.random_range(-5.0..5.0)).collect();
    let mut naive = 0.0;
    for k in 0..7 {
        naive += (a[k] - b[k]) * (a[k] - b[k]);
    }
    assert!((pcl_distance(&a, &b).unwrap() - naive).abs() <= 1e-12 * naive);
}

#[test]
fn variant_values() {
    let neg = PclVariant::new(PclKind::NegativeL2);
    let rec = PclVariant::new(PclKind::Reciprocal);
    let exp = PclVariant::new(PclKind::Exponential);
    let hinge = PclVariant::hinge(2.0);
    assert_eq!(neg.value(0.0).unwrap(), 0.0);
    assert_eq!(rec.value(0.0).unwrap(), 1.0);
    assert_eq!(exp.value(0.0).unwrap(), 1.0);
    assert_eq!(hinge.value(0.0).unwrap(), 2.0);
    assert!((exp.value(1.0).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
    assert_eq!(hinge.value(2.0).unwrap(), 0.0);
    assert_eq!(hinge.value(7.5).unwrap(), 0.0);
    assert!(rec.value(-0.1).is_err());
    assert!(PclVariant::hinge(-1.0).validate().is_err());
    for k in PclKind::ALL {
        assert_eq!(PclKind::parse(k.name()).unwrap(), k);
    }
    assert!(PclKind::parse("cosine").is_err());
}

proptest! {
    #[test]
    fn variants_are_nonincreasing(d in 0.0f64..50.0, dd in 0.0f64..10.0, margin in 0.0f64..10.0) {
        for v in [PclVariant::new(PclKind::NegativeL2), PclVariant::hinge(margin), PclVariant::new(PclKind::Reciprocal), PclVariant::new(PclKind::Exponential)] {
            prop_assert!(v.value(d + dd).unwrap() <= v.value(d).unwrap());
        }
        for v in [PclVariant::new(PclKind::Reciprocal), PclVariant::new(PclKind::Exponential)] {
            let h = v.value(d).unwrap();
            prop_assert!(h > 0.0 && h <= 1.0);
        }
        if d >= margin {
            prop_assert_eq!(PclVariant::hinge(margin).value(d).unwrap(), 0.0);
        }
    }

    #[test]
    fn distance_symmetric_nonnegative(a in proptest::collection::vec(-10.0f64..10.0, 4), b in proptest::collection::vec(-10.0f64..10.0, 4)) {
        let d1 = pcl_distance(&a, &b).unwrap();
        let d2 = pcl_distance(&b, &a).unwrap();
        prop_assert_eq!(d1, d2);
        prop_assert!(d1 >= 0.0);
        prop_assert_eq!(d1 == 0.0, a == b);
    }
}

/// KL(N(m1, s^2) || N(m2, s^2)) by composite Simpson quadrature of p log(p / q).
pub(crate) fn kl_quadrature_1d(m1: f64, m2: f64, s: f64) -> f64 {
    let lo = m1.min(m2) - 14.0 * s;
    let hi = m1.max(m2) + 14.0 * s;
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let lp = -0.5 * ((x - m1) / s).powi(2);
        let lq = -0.5 * ((x - m2) / s).powi(2);
        let p = lp.exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        p * (lp - lq)
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn kl_closed_form_cases() {
    assert_eq!(pcl_kl_closed_form(&[1.0, 1.0], &[1.0, 1.0], 0.3).unwrap(), 0.0);
    assert_eq!(pcl_kl_closed_form(&[0.0], &[2.0], 1.0).unwrap(), 2.0);
    assert!((kl_quadrature_1d(0.0, 2.0, 1.0) - 2.0).abs() < 1e-6);
    assert!(pcl_kl_closed_form(&[0.0], &[1.0], 0.0).is_err());
}

#[test]
fn noise_form_matches_mean_form() {
    let s = sched();
    let mut r = rng::stream(12, &[]);
    for _ in 0..100 {
        let t = r.random_range(1..=1000);
        let v = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> { (0..3).map(|_| r.random_range(-2.0..2.0)).collect() };
        let (xi, xj, ei, ej) = (v(&mut r), v(&mut r), v(&mut r), v(&mut r));
        let d_mu = pcl_distance(&mu_theta(&xi, t, &ei, &s).unwrap(), &mu_theta(&xj, t, &ej, &s).unwrap()).unwrap();
        let d_noise = pcl_distance_noise_form(&xi, &xj, &ei, &ej, t, &s).unwrap();
        assert!((d_mu - d_noise).abs() <= 1e-10 * d_mu.max(1e-300), "{d_mu} vs {d_noise}");
    }
}

#[test]
fn empty_batch_rejected() {
    let b = Batch::new(2, vec![], vec![], vec![], vec![], vec![]).unwrap();
    assert!(matches!(ddpm_simple_loss(&ZeroStub, &sched(), &b), Err(Error::Empty(_))));
}

#[test]
fn perfect_denoiser_has_zero_loss() {
    let s = sched();
    let points = vec![vec![0.5, -1.0], vec![2.0, 3.0]];
    let labels = vec![0, 1, 1, 0, 1];
    let x0: Vec<f64> = labels.iter().flat_map(|&c: &usize| points[c].clone()).collect();
    let mut r = rng::stream(2, &[]);
    let ts: Vec<usize> = (0..5).map(|_| r.random_range(1..=1000)).collect();
    let eps: Vec<f64> = (0..10).map(|_| r.sample(StandardNormal)).collect();
    let b = Batch::new(2, x0, labels, ts, eps, vec![false; 5]).unwrap();
    let loss = ddpm_simple_loss(&PointMassDenoiser { points, sched: &s }, &s, &b).unwrap();
    assert!(loss < 1e-20, "{loss}");
}

#[test]
fn zero_predictor_loss_is_mean_noise_energy() {
    let b = batch(8, 1, 0.0);
    let expected = (0..8).map(|i| b.eps(i).iter().map(|e| e * e).sum::<f64>()).sum::<f64>() / 8.0;
    let loss = ddpm_simple_loss(&ZeroStub, &sched(), &b).unwrap();
    assert!((loss - expected).abs() <= 1e-14 * expected);
}

// Literal transliteration of the conditional denoising loss, with null-class
// substitution where the dropout flag is set.
fn simple_loss_oracle<M: NoiseModel>(m: &M, s: &DiffusionSchedule, b: &Batch) -> f64 {
    let mut acc = 0.0;
    for i in 0..b.len() {
        let t = b.t(i);
        let ab = s.betas()[..t].iter().fold(1.0, |p, beta| p * (1.0 - beta));
        let x_t: Vec<f64> = b.x0(i).iter().zip(b.eps(i)).map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e).collect();
        let c = if b.is_uncond(i) { m.num_classes() } else { b.label(i) };
        let out = m.predict(&x_t, t, c);
        acc += b.eps(i).iter().zip(&out).map(|(e, o)| (e - o).powi(2)).sum::<f64>();
    }
    acc / b.len() as f64
}

#[test]
fn simple_loss_matches_transliteration() {
    let s = sched();
    let net = small_net();
    let p = net.init(6);
    let bound = BoundNet::new(&net, &p).unwrap();
    let b = batch(8, 7, 0.3);
    assert!((0..8).any(|i| b.is_uncond(i)));
    let got = ddpm_simple_loss(&bound, &s, &b).unwrap();
    let want = simple_loss_oracle(&bound, &s, &b);
    assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
}

// Double loop over anchors and cross-class partners, sharing the anchor's
// timestep and noise, averaged over the number of contributing pairs.
fn overall_loss_oracle<M: NoiseModel>(m: &M, s: &DiffusionSchedule, b: &Batch, tau: &TauSchedule, v: &PclVariant) -> f64 {
    let dm = simple_loss_oracle(m, s, b);
    let mut pcl = 0.0;
    let mut count = 0;
    for i in 0..b.len() {
        let t = b.t(i);
        let ab = s.alpha_bar(t);
        let corrupt = |x0: &[f64]| -> Vec<f64> { x0.iter().zip(b.eps(i)).map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e).collect() };
        let xi = corrupt(b.x0(i));
        let mu_i = mu_theta(&xi, t, &m.predict(&xi, t, b.label(i)), s).unwrap();
        for j in 0..b.len() {
            if b.label(j) == b.label(i) {
                continue;
            }
            let xj = corrupt(b.x0(j));
            let mu_j = mu_theta(&xj, t, &m.predict(&xj, t, b.label(j)), s).unwrap();
            let d: f64 = mu_i.iter().zip(&mu_j).map(|(a, c)| (a - c) * (a - c)).sum();
            pcl += tau.at(t as f64).unwrap() * v.value(d).unwrap();
            count += 1;
        }
    }
    dm + if count > 0 { pcl / count as f64 } else { 0.0 }
}

#[test]
fn overall_loss_matches_transliteration() {
    let s = sched();
    let net = small_net();
    let p = net.init(21);
    let bound = BoundNet::new(&net, &p).unwrap();
    let x0 = vec![0.1, 0.2, 2.1, 0.9, -0.3, 0.4, 1.8, 1.2];
    let labels = vec![0, 1, 0, 1];
    let mut r = rng::stream(5, &[]);
    let ts: Vec<usize> = (0..4).map(|_| r.random_range(1..=1000)).collect();
    let eps: Vec<f64> = (0..8).map(|_| r.sample(StandardNormal)).collect();
    let b = Batch::new(2, x0, labels, ts, eps, vec![false, true, false, false]).unwrap();
    let tau = TauSchedule::exponential(0.7, 250.0);
    for kind in PclKind::ALL {
        let v = PclVariant { kind, margin: 1.5 };
        let got = overall_batch_loss(&bound, &s, &b, &tau, &v).unwrap();
        let want = overall_loss_oracle(&bound, &s, &b, &tau, &v);
        assert!((got - want).abs() <= 1e-12 * want.abs(), "{kind:?}: {got} vs {want}");
    }
    let parts = evaluate(&bound, &s, &Objective::Contrastive { tau, variant: PclVariant::new(PclKind::Exponential) }, &b).unwrap();
    assert_eq!(parts.pairs, 8);
    assert_eq!(parts.total, parts.ddpm + parts.pcl);
}

#[test]
fn zero_tau_or_single_class_reduces_to_simple_loss() {
    let s = sched();
    let b = batch(10, 9, 0.1);
    let v = PclVariant::new(PclKind::Exponential);
    let plain = ddpm_simple_loss(&AffineStub, &s, &b).unwrap();
    let off = overall_batch_loss(&AffineStub, &s, &b, &TauSchedule::constant(0.0), &v).unwrap();
    assert_eq!(plain.to_bits(), off.to_bits());

    let ds = toy_dataset(&[30, 0], 4);
    let single = Batch::draw(&ds, 6, &s, 0.0, &mut rng::stream(1, &[])).unwrap();
    let plain = ddpm_simple_loss(&AffineStub, &s, &single).unwrap();
    let pcl = overall_batch_loss(&AffineStub, &s, &single, &TauSchedule::constant(1.0), &v).unwrap();
    assert_eq!(plain, pcl);
}

#[test]
fn reweighting_with_balanced_stats_is_plain() {
    let s = sched();
    let b = batch(10, 2, 0.0);
    let stats = DatasetStats { total: 40, counts: vec![20, 20], weights: vec![0.5, 0.5] };
    let plain = ddpm_simple_loss(&AffineStub, &s, &b).unwrap();
    let rw = reweighted_loss(&AffineStub, &s, &b, &stats).unwrap();
    assert!((plain - rw).abs() <= 1e-15 * plain);
}

// Weights 1/0.99 and 1/0.01, normalizer (1/0.99 + 100) / 2 = 50.50505..., so
// the head element gets 0.02 and the tail element 1.98.
#[test]
fn reweighting_two_element_hand_computation() {
    let s = sched();
    let stats = DatasetStats { total: 100, counts: vec![99, 1], weights: vec![0.99, 0.01] };
    let w = inverse_frequency_weights(&stats).unwrap();
    assert!((w[0] - 0.02).abs() < 1e-15);
    assert!((w[1] - 1.98).abs() < 1e-13);
    assert!((w[1] / w[0] - 99.0).abs() < 1e-11);

    let b = Batch::new(2, vec![0.0, 0.0, 2.0, 1.0], vec![0, 1], vec![10, 400], vec![0.3, -0.2, 1.1, 0.5], vec![false; 2]).unwrap();
    let per = |i: usize| {
        let one = Batch::new(2, b.x0(i).to_vec(), vec![b.label(i)], vec![b.t(i)], b.eps(i).to_vec(), vec![false]).unwrap();
        ddpm_simple_loss(&AffineStub, &s, &one).unwrap()
    };
    let expected = (0.02 * per(0) + 1.98 * per(1)) / 2.0;
    let got = reweighted_loss(&AffineStub, &s, &b, &stats).unwrap();
    assert!((got - expected).abs() <= 1e-12 * expected);
}

#[test]
fn reweighting_rejects_classes_missing_from_stats() {
    let s = sched();
    let b = batch(6, 2, 0.0);
    let stats = DatasetStats { total: 10, counts: vec![10, 0], weights: vec![1.0, 0.0] };
    assert_eq!(reweighted_loss(&AffineStub, &s, &b, &stats), Err(Error::EmptyClass(1)));
}

#[test]
fn decomposition_identity() {
    let s = sched();
    let net = small_net();
    let p = net.init(1);
    let bound = BoundNet::new(&net, &p).unwrap();
    for counts in [vec![40, 0], vec![25, 25], vec![200, 2]] {
        let ds = if counts[1] == 0 {
            let full = toy_dataset(&[40, 1], 6);
            LabeledDataset::new(2, 1, full.flat_samples()[..80].to_vec(), vec![0; 40], full.provenance.clone()).unwrap()
        } else {
            toy_dataset(&counts, 6)
        };
        let fixed = NoiseAssignment::draw(&ds, &s, 3);
        let model_ok = ds.num_classes() == 2;
        let dec = if model_ok {
            decompose_loss_by_class(&bound, &s, &ds, &fixed).unwrap()
        } else {
            let one_class = PointMassDenoiser { points: vec![vec![0.3, 0.3]], sched: &s };
            decompose_loss_by_class(&one_class, &s, &ds, &fixed).unwrap()
        };
        assert!(dec.relative_error() <= 1e-12, "{counts:?}: {dec:?}");
        match counts.as_slice() {
            [_, 0] => assert_eq!(dec.global, dec.per_class[0]),
            [a, b] if a == b => {
                let avg = 0.5 * (dec.per_class[0] + dec.per_class[1]);
                assert!((dec.global - avg).abs() <= 1e-12 * avg);
            }
            _ => assert_eq!(class_stats(&ds).unwrap().weights, dec.weights),
        }
    }
}

#[test]
fn decomposition_rejects_empty_class() {
    let s = sched();
    let ds = LabeledDataset::new(2, 2, vec![0.0, 0.0], vec![0], crate::data::Provenance::Loaded).unwrap();
    let fixed = NoiseAssignment::draw(&ds, &s, 0);
    assert_eq!(decompose_loss_by_class(&AffineStub, &s, &ds, &fixed), Err(Error::EmptyClass(1)));
}

/// Central finite differences of an objective with respect to every parameter.
fn fd_gradient(net: &NoisePredictor, p: &ParameterVector, s: &DiffusionSchedule, obj: &Objective, b: &Batch) -> Vec<f64> {
    let h = 1e-6;
    (0..p.len())
        .map(|k| {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.0[k] += h;
            minus.0[k] -= h;
            let fp = objective_value(net, &plus, s, obj, b).unwrap().total;
            let fm = objective_value(net, &minus, s, obj, b).unwrap().total;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

#[test]
fn param_penalty_gradient_is_params() {
    let net = small_net();
    let p = net.init(2);
    let (_, g) = loss_and_grad(&net, &p, &sched(), &Objective::ParamL2, &batch(2, 0, 0.0)).unwrap();
    assert_eq!(g.0, p.0);
}

#[test]
fn gradients_match_finite_differences() {
    let s = sched();
    let net = small_net();
    assert!(net.num_params() <= 1000);
    let p = net.init(13);
    let b = batch(4, 17, 0.25);
    let stats = DatasetStats { total: 202, counts: vec![200, 2], weights: vec![200.0 / 202.0, 2.0 / 202.0] };
    let tau = TauSchedule::exponential(2.0, 300.0);
    let mut objectives = vec![Objective::Plain, Objective::Reweighted { stats }];
    for kind in PclKind::ALL {
        objectives.push(Objective::Contrastive { tau, variant: PclVariant { kind, margin: 50.0 } });
    }
    for obj in &objectives {
        let (value, g) = loss_and_grad(&net, &p, &s, obj, &b).unwrap();
        assert_eq!(value, objective_value(&net, &p, &s, obj, &b).unwrap());
        let fd = fd_gradient(&net, &p, &s, obj, &b);
        let err = relative_error(&g.0, &fd);
        assert!(err <= 1e-4, "{obj:?}: relative error {err}");
    }
}

#[test]
fn contrastive_gradient_reaches_both_branches() {
    let s = sched();
    let net = small_net();
    let p = net.init(4);
    // anchor of class 0 alone, so only the partner evaluations use class 1's embedding
    let b = Batch::new(2, vec![0.0, 0.0, 2.0, 1.0], vec![0, 1], vec![600, 600], vec![0.1, 0.2, -0.3, 0.4], vec![false; 2]).unwrap();
    let obj = Objective::Contrastive { tau: TauSchedule::constant(1.0), variant: PclVariant::new(PclKind::Exponential) };
    let (_, g_all) = loss_and_grad(&net, &p, &s, &obj, &b).unwrap();
    let (_, g_dm) = loss_and_grad(&net, &p, &s, &Objective::Plain, &b).unwrap();
    let e = net.config().embed_dim;
    let start = net.num_params() - 3 * e;
    for class in 0..2 {
        let rows = start + class * e..start + (class + 1) * e;
        assert!(rows.clone().any(|k| g_all.0[k] != g_dm.0[k]), "class {class} embedding untouched");
    }
}
