use std::f64::consts::PI;

use gmopt_core::codesign::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 16_000.0;

fn units() -> UnitConstants {
    UnitConstants::default()
}

fn default_bank() -> FilterBank {
    init_bank(units(), 100.0, 5000.0, 3.0, FS).unwrap()
}

fn tone(f: f64, amp: f64, n: usize) -> Vec<f32> {
    (0..n)
        .map(|k| (amp * (2.0 * PI * f * k as f64 / FS).sin()) as f32)
        .collect()
}

fn random_channel(rng: &mut ChaCha8Rng) -> BpfChannel {
    BpfChannel {
        log_phi_g: rng.random_range(-3.0..5.0),
        log_phi_c: rng.random_range(-3.0..3.0),
    }
}

#[test]
fn peak_gain_equals_phi_c_at_f0() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = units();
    for _ in 0..1000 {
        let ch = random_channel(&mut rng);
        let d = ch.derived(&u);
        // Log grid of 4001 points spanning f0/10..10·f0.
        let n = 4001;
        let step = (100f64).ln() / (n - 1) as f64;
        let grid: Vec<f64> = (0..n).map(|k| d.f0 / 10.0 * (step * k as f64).exp()).collect();
        let (best, peak) = grid
            .iter()
            .enumerate()
            .map(|(k, f)| (k, ch.freq_response(&u, *f).norm()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert!((peak - ch.phi_c()).abs() <= 1e-3 * ch.phi_c());
        let nearest = grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - d.f0).abs().total_cmp(&(b.1 - d.f0).abs()))
            .unwrap()
            .0;
        assert!(best.abs_diff(nearest) <= 1);
    }
}

/// Half-power edge between `lo` and `hi` by bisection on |H|² - peak²/2.
fn edge(ch: &BpfChannel, lo: f64, hi: f64, target: f64) -> f64 {
    let u = units();
    let g = |f: f64| ch.freq_response(&u, f).norm_sqr() - target;
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (g(m) > 0.0) == (g(a) > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[test]
fn half_power_bandwidth_gives_q() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let u = units();
    for _ in 0..100 {
        let ch = random_channel(&mut rng);
        let d = ch.derived(&u);
        let target = ch.phi_c().powi(2) / 2.0;
        let lo = edge(&ch, d.f0 * 1e-4, d.f0, target);
        let hi = edge(&ch, d.f0, d.f0 * 1e4, target);
        let measured = d.f0 / (hi - lo);
        let expected = (ch.phi_g() * ch.phi_c()).sqrt();
        assert!((measured - expected).abs() <= 5e-3 * expected, "{measured} vs {expected}");
    }
}

#[test]
fn unit_channel_peaks_near_95_hz() {
    let ch = BpfChannel::from_phi(1.0, 1.0);
    let grid: Vec<f64> = (0..100).map(|k| 10.0 + 10.0 * k as f64).collect();
    let best = grid
        .iter()
        .max_by(|a, b| {
            let ha = ch.freq_response(&units(), **a).norm();
            let hb = ch.freq_response(&units(), **b).norm();
            ha.total_cmp(&hb)
        })
        .unwrap();
    assert_eq!(*best, 100.0);
    assert!((units().f_unit() - 95.49).abs() < 5e-3);
}

#[test]
fn discretized_bank_matches_analog_at_center() {
    let bank = default_bank();
    for (ch, bq) in bank.channels.iter().zip(bank.discretize().unwrap()) {
        let f0 = ch.derived(&bank.units).f0;
        let h = bq.response(f0, FS);
        assert!((h.norm() - ch.phi_c()).abs() < 1e-6 * ch.phi_c());
        assert!(bq.response(0.0, FS).norm() == 0.0);
        assert!(bq.response(FS / 2.0, FS).norm() < 1e-12);
    }
}

#[test]
fn feature_examples() {
    let bank = default_bank();
    let zero = feature_values(&bank, &vec![0.0; 8000]).unwrap();
    assert!(zero.iter().flatten().all(|v| *v == LOG_FLOOR.ln()));

    for k in [3, 8, 13] {
        let f0 = bank.channels[k].derived(&bank.units).f0;
        let m = mean_features(&bank, &tone(f0, 1.0, 16_000)).unwrap();
        let arg = (0..N_CHANNELS).max_by(|a, b| m[*a].total_cmp(&m[*b])).unwrap();
        assert_eq!(arg, k);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let audio: Vec<f32> = (0..4000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let loud: Vec<f32> = audio.iter().map(|x| 2.0 * x).collect();
    let (a, b) = (feature_values(&bank, &audio).unwrap(), feature_values(&bank, &loud).unwrap());
    for (fa, fb) in a.iter().zip(&b) {
        for c in 0..N_CHANNELS {
            assert!(fb[c] > fa[c]);
        }
    }
    assert!(matches!(feature_values(&bank, &[]), Err(CodesignError::Input(_))));
}

fn loss_of(logits: &[f64], label: usize, bank: &FilterBank, cfg: &LossConfig) -> Result<f64, CodesignError> {
    let mut t = Tape::new();
    let vars = bank_on_tape(&mut t, bank)?;
    let l: Vec<Var> = logits.iter().map(|v| t.leaf(*v)).collect();
    let root = loss_bpf(&mut t, &l, label, &vars, cfg)?;
    Ok(t.value(root))
}

fn unit_bank() -> FilterBank {
    FilterBank::new(units(), FS, vec![BpfChannel::from_phi(1.0, 1.0); N_CHANNELS]).unwrap()
}

#[test]
fn loss_examples() {
    let bank = unit_bank();
    let ce_only = LossConfig { lambda_ce: 1.0, lambda_p: 0.0, lambda_a: 0.0 };
    let l = loss_of(&[0.3; 4], 1, &bank, &ce_only).unwrap();
    assert!((l - 4f64.ln()).abs() < 1e-12);

    let logits = [0.5, -1.0, 2.0];
    let scaled = LossConfig { lambda_ce: 2.5, ..ce_only };
    let ce = loss_of(&logits, 0, &bank, &ce_only).unwrap();
    assert_eq!(loss_of(&logits, 0, &bank, &scaled).unwrap(), 2.5 * ce);
    let lse = logits.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
    assert!((ce - (lse - 0.5)).abs() < 1e-12);

    let pen = LossConfig { lambda_ce: 0.0, lambda_p: 0.01, lambda_a: 0.01 };
    assert!((loss_of(&logits, 0, &bank, &pen).unwrap() - 0.32).abs() < 1e-12);

    assert!(matches!(loss_of(&logits, 3, &bank, &ce_only), Err(CodesignError::Input(_))));
}

#[test]
fn penalty_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let channels: Vec<BpfChannel> = (0..N_CHANNELS)
        .map(|_| channel_for(&units(), rng.random_range(100.0..6000.0), rng.random_range(0.5..5.0)))
        .collect();
    let bank = FilterBank::new(units(), FS, channels).unwrap();
    let lp = 0.003;
    let cfg = LossConfig { lambda_ce: 0.0, lambda_p: lp, lambda_a: 0.0 };
    let mut t = Tape::new();
    let vars = bank_on_tape(&mut t, &bank).unwrap();
    let logits = [t.leaf(0.0), t.leaf(1.0)];
    let root = loss_bpf(&mut t, &logits, 0, &vars, &cfg).unwrap();
    let g = t.backward(root).unwrap();
    for (i, ch) in bank.channels.iter().enumerate() {
        assert!((g[vars.log_phi_g[i].index()] - lp * ch.phi_g()).abs() < 1e-15 * ch.phi_g().max(1.0));
        assert_eq!(g[vars.log_phi_c[i].index()], 0.0);
    }
    assert_eq!(g[logits[0].index()], 0.0);

    // Directly in φ: the penalty is linear with slope λp.
    let mut t = Tape::new();
    let phis: Vec<Var> = bank.channels.iter().map(|c| t.leaf(c.phi_g())).collect();
    let s = t.sum(&phis);
    let root = t.scale(s, lp);
    let g = t.backward(root).unwrap();
    assert!(phis.iter().all(|p| g[p.index()] == lp));
}

/// Random bank, classifier and input for a gradient check.
fn mini_pipeline(seed: u64) -> (FilterBank, Classifier, Vec<f32>, usize, LossConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels: Vec<BpfChannel> = (0..N_CHANNELS)
        .map(|_| channel_for(&units(), 100.0 * 60f64.powf(rng.random()), rng.random_range(1.0..5.0)))
        .collect();
    let bank = FilterBank::new(units(), FS, channels).unwrap();
    let n_classes = rng.random_range(2..5);
    let mut clf = Classifier::new(n_classes, 32, seed).unwrap();
    let audio: Vec<f32> = (0..1600).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = mean_features(&bank, &audio).unwrap();
    // Random offsets keep hidden units away from the ReLU kink at z = 0.
    for c in 0..N_CHANNELS {
        clf.input_mean[c] = f[c] + rng.random_range(-1.0..1.0);
    }
    let cfg = LossConfig {
        lambda_ce: 1.0,
        lambda_p: rng.random_range(0.0..1e-2),
        lambda_a: rng.random_range(0.0..1e-1),
    };
    (bank, clf, audio, rng.random_range(0..n_classes), cfg)
}

fn close(ad: f64, fd: f64) -> bool {
    (ad - fd).abs() <= 1e-8 || (ad - fd).abs() <= 1e-4 * ad.abs().max(fd.abs())
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-4;
    for seed in 0..2 {
        let (bank, clf, audio, label, cfg) = mini_pipeline(seed);
        let g = example_gradient(&bank, &clf, &audio, label, &cfg).unwrap();
        let loss = |b: &FilterBank, c: &Classifier| example_loss(b, c, &audio, label, &cfg).unwrap();
        assert!((g.loss - loss(&bank, &clf)).abs() < 1e-12);
        for i in 0..2 * N_CHANNELS {
            let shifted = |d: f64| {
                let mut b = bank.clone();
                if i < N_CHANNELS {
                    b.channels[i].log_phi_g += d;
                } else {
                    b.channels[i - N_CHANNELS].log_phi_c += d;
                }
                loss(&b, &clf)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let ad = if i < N_CHANNELS { g.log_phi_g[i] } else { g.log_phi_c[i - N_CHANNELS] };
            assert!(close(ad, fd), "seed {seed} phi {i}: {ad} vs {fd}");
        }
        for k in (0..clf.n_params()).step_by(7) {
            let shifted = |d: f64| {
                let mut c = clf.clone();
                *c.params_mut().nth(k).unwrap() += d;
                loss(&bank, &c)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            assert!(close(g.classifier[k], fd), "seed {seed} weight {k}: {} vs {fd}", g.classifier[k]);
        }
    }
}

fn small_data(seed: u64) -> Dataset {
    let cfg = SyntheticConfig {
        train_per_class: 16,
        test_per_class: 8,
        duration_s: 0.25,
        ..Default::default()
    };
    synthetic(&cfg, seed).unwrap()
}

fn setup(data: &Dataset) -> (FilterBank, Classifier) {
    let bank = default_bank();
    let mut clf = Classifier::new(data.classes.len(), 32, 7).unwrap();
    fit_normalization(&bank, &mut clf, &data.train).unwrap();
    (bank, clf)
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let data = small_data(1);
    let (bank, clf) = setup(&data);
    let cfg = TrainConfig { epochs: 30, ..Default::default() };
    let a = train_codesign(&data, &bank, &clf, &LossConfig::default(), &cfg, 5, &mut |_| {}).unwrap();
    assert_eq!(a.history.len(), 31);
    assert!(a.history[30].loss < a.history[0].loss);
    for r in &a.history {
        assert!(r.sum_phi_g > 0.0 && r.sum_phi_c > 0.0);
    }
    let b = train_codesign(&data, &bank, &clf, &LossConfig::default(), &cfg, 5, &mut |_| {}).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.bank, b.bank);
    let c = train_codesign(&data, &bank, &clf, &LossConfig::default(), &cfg, 6, &mut |_| {}).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn penalties_shrink_the_bank() {
    let data = small_data(2);
    let (bank, clf) = setup(&data);
    let cfg = TrainConfig {
        epochs: 20,
        ..Default::default()
    };
    let loss = LossConfig { lambda_ce: 1.0, lambda_p: 1e-3, lambda_a: 1e-3 };
    let out = train_codesign(&data, &bank, &clf, &loss, &cfg, 1, &mut |_| {}).unwrap();
    let first = out.history[0].sum_phi_g + out.history[0].sum_phi_c;
    let last = out.history.last().unwrap();
    assert!(last.sum_phi_g + last.sum_phi_c < first);
}

#[test]
fn snr_aware_training_is_seeded() {
    let data = small_data(3);
    let (bank, clf) = setup(&data);
    let cfg = TrainConfig { epochs: 2, snr_aware: true, ..Default::default() };
    let a = train_codesign(&data, &bank, &clf, &LossConfig::default(), &cfg, 9, &mut |_| {}).unwrap();
    let b = train_codesign(&data, &bank, &clf, &LossConfig::default(), &cfg, 9, &mut |_| {}).unwrap();
    assert_eq!(a.history, b.history);
    let clean = TrainConfig { snr_aware: false, ..cfg };
    let c = train_codesign(&data, &bank, &clf, &LossConfig::default(), &clean, 9, &mut |_| {}).unwrap();
    assert_ne!(a.history[1], c.history[1]);
}

#[test]
fn divergence_reports_last_good_state() {
    let data = small_data(4);
    let (bank, clf) = setup(&data);
    let cfg = TrainConfig {
        epochs: 5,
        lr_phi: 50.0,
        lr_classifier: 50.0,
        ..Default::default()
    };
    match train_codesign(&data, &bank, &clf, &LossConfig::default(), &cfg, 1, &mut |_| {}) {
        Err(CodesignError::Divergence(d)) => {
            assert!(!d.history.is_empty());
            assert!(d.bank.channels.iter().all(|c| c.phi_g() > 0.0 && c.phi_c() > 0.0));
            assert!(d.classifier.validate().is_ok());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn training_rejects_mismatched_inputs() {
    let data = small_data(5);
    let (bank, _) = setup(&data);
    let wrong = Classifier::new(3, 32, 1).unwrap();
    let cfg = TrainConfig { epochs: 1, ..Default::default() };
    assert!(matches!(
        train_codesign(&data, &bank, &wrong, &LossConfig::default(), &cfg, 1, &mut |_| {}),
        Err(CodesignError::Config(_))
    ));
    let mut one_class = data.clone();
    one_class.classes.truncate(1);
    let clf = Classifier::new(2, 32, 1).unwrap();
    assert!(train_codesign(&one_class, &bank, &clf, &LossConfig::default(), &cfg, 1, &mut |_| {}).is_err());
}

#[test]
fn exports() {
    let data = small_data(6);
    let (bank, clf) = setup(&data);

    let mut buf = Vec::new();
    write_response_csv(&mut buf, &bank, 20.0, 8000.0, 256).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "channel,f_hz,mag_db");
    assert_eq!(lines.len(), 1 + 16 * 256);
    assert!(lines[1].starts_with("0,2.00000000e1,"));
    assert!(lines[256].starts_with("0,8.00000000e3,"));

    let model = ModelFile::new(&bank, &clf, &data.classes);
    let json = serde_json::to_string(&model).unwrap();
    let back: ModelFile = serde_json::from_str(&json).unwrap();
    back.validate().unwrap();
    let rebuilt = back.bank().unwrap();
    for (a, b) in rebuilt.channels.iter().zip(&bank.channels) {
        assert!((a.phi_g() - b.phi_g()).abs() <= 1e-15 * b.phi_g());
    }
    assert_eq!(back.classifier, clf);

    let hist = [EpochRecord { epoch: 0, loss: 1.5, acc: 0.25, sum_phi_g: 10.0, sum_phi_c: 2.0 }];
    let mut buf = Vec::new();
    write_history_csv(&mut buf, &hist).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "epoch,loss,acc,sum_phi_g,sum_phi_c\n0,1.50000000e0,2.50000000e-1,1.00000000e1,2.00000000e0\n"
    );

    let tpl = gmopt_core::spice::NetlistTemplate::parse("G1 a b c d {gm2_0}\nC2 a 0 {c2_0}\n").unwrap();
    let net = render_bank_netlist(&tpl, &bank).unwrap();
    let vals = netlist_values(&bank);
    assert_eq!(vals.len(), 32);
    assert!(net.starts_with("G1 a b c d "));
    assert!((vals["c2_0"] - bank.channels[0].phi_c() * 3.2e-12).abs() < 1e-24);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derived_quantities_are_consistent(lg in -4.0f64..6.0, lc in -4.0f64..4.0) {
        let ch = BpfChannel { log_phi_g: lg, log_phi_c: lc };
        let d = ch.derived(&units());
        prop_assert!(ch.phi_g() > 0.0 && ch.phi_c() > 0.0);
        prop_assert!((d.q * d.q - ch.phi_g() * ch.phi_c()).abs() <= 1e-12 * d.q * d.q);
        let h = ch.freq_response(&units(), d.f0);
        prop_assert!((h.norm() - d.gain).abs() <= 1e-9 * d.gain);
        prop_assert!(h.re < 0.0);
        let back = channel_for(&units(), d.f0, d.q);
        prop_assert!((back.log_phi_g - lg).abs() < 1e-9 && (back.log_phi_c - lc).abs() < 1e-9);
    }

    #[test]
    fn single_term_losses_decompose(
        logits in prop::collection::vec(-5.0f64..5.0, 2..6),
        lam in 1e-4f64..10.0,
        which in 0usize..3,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = (0..N_CHANNELS).map(|_| random_channel(&mut rng)).collect();
        let bank = FilterBank::new(units(), 1e9, channels).unwrap();
        let mut w = [0.0; 3];
        w[which] = lam;
        let cfg = LossConfig { lambda_ce: w[0], lambda_p: w[1], lambda_a: w[2] };
        let l = loss_of(&logits, 0, &bank, &cfg).unwrap();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ce = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - logits[0];
        let term = match which {
            0 => lam * ce,
            1 => lam * bank.sum_phi_g(),
            _ => lam * bank.sum_phi_c(),
        };
        prop_assert!((l - term).abs() <= 1e-12 * term.abs().max(1.0));
    }

    #[test]
    fn snr_mix_hits_target(snr in -5.0f64..30.0, seed in any::<u64>()) {
        let clean = tone(440.0, 0.3, 2000);
        let noisy = snr_mix(&clean, snr, seed).unwrap();
        let ps: f64 = clean.iter().map(|x| f64::from(*x).powi(2)).sum();
        let pn: f64 = clean.iter().zip(&noisy).map(|(c, n)| (f64::from(*n) - f64::from(*c)).powi(2)).sum();
        prop_assert!((10.0 * (ps / pn).log10() - snr).abs() < 0.1);
    }
}
