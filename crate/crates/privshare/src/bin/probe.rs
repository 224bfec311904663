// Temporary dynamics probe; not part of the deliverable.
use privshare::neuralkit::{Head, MlpNet, OptimizerKind, N_PARAMS};
use privshare::sources::{sample_gaussian, GaussianJointSource};
use privshare::trainer::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("pin");
    match which {
        "pin" => pin_probe(),
        "adv" => adv_probe(),
        "curve" => curve_probe(),
        "tiny" => tiny_probe(),
        "preset" => emit_preset(),
        "crit4" => crit4_probe(),
        "crit5" => crit5_probe(),
        "bintraj" => bintraj_probe(),
        _ => eprintln!("unknown probe"),
    }
}

// rho=1e6, d=2.88, T=500: final L_recon across seeds
fn pin_probe() {
    let ds = sample_gaussian(&GaussianJointSource::paper_preset(), 12_000, 5.0 / 6.0, 91).unwrap();
    for (m, ag) in [(500usize, 0.002), (500, 0.003), (1000, 0.003), (500, 0.005)] {
    println!("-- batch {m} alpha_g {ag}");
    for seed in [91, 7, 17, 23, 42, 101] {
        let cfg = TrainerConfig {
            mode: Mode::Gaussian,
            d_target: 2.88,
            rho: 1e6,
            epochs: 500,
            batch_size: m,
            alpha_k: 0.001,
            alpha_g: ag,
            alpha_h1: 0.001,
            alpha_h2: 0.001,
            lr_schedule_gamma: 0.0,
            d_max_for_schedule: 1.0,
            seed,
        };
        let state = train(&ds, &cfg).unwrap();
        let tail: Vec<f64> = state.epoch_log[450..].iter().map(|r| r.l_recon).collect();
        let last = state.epoch_log.last().unwrap();
        println!(
            "seed {seed}: final l_recon={:.4} adv=({:.3},{:.3}) tail recon range [{:.4},{:.4}]",
            last.l_recon,
            last.l_adv1,
            last.l_adv2,
            tail.iter().cloned().fold(f64::INFINITY, f64::min),
            tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
    }
    }
}

// adversary-only training vs sigma^2=16 floor: epochs to cross, at two lrs
fn adv_probe() {
    let ds = sample_gaussian(&GaussianJointSource::paper_preset(), 6_000, 5.0 / 6.0, 77).unwrap();
    let mut kparams = vec![0.0; N_PARAMS];
    kparams[1] = 1.0;
    kparams[3] = -1.0;
    kparams[150] = 1.0;
    kparams[151] = -1.0;
    let k = MlpNet::from_params(kparams, Head::Identity, 0).unwrap();
    let xs: Vec<f64> = ds.test().iter().map(|r| r.x).collect();
    for (lr, m) in [(0.01, 500usize), (0.01, 1000), (0.005, 1000), (0.02, 1000)] {
        let mut h = TrainedComponent::new(5, Head::Identity, OptimizerKind::Adam, lr);
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let mut crossed = None;
        let mut worst_after_50 = 0.0f64;
        for epoch in 1..=200 {
            let batch: Vec<_> = rand::seq::index::sample(&mut rng, ds.train().len(), m)
                .iter()
                .map(|i| ds.train()[i])
                .collect();
            adversary_phase(&k, &mut h, &batch, Mode::Gaussian, AdversarySide::First).unwrap();
            let ests: Vec<f64> = ds.test().iter().map(|r| h.net.value([r.r, r.z1])).collect();
            let l = recon_loss_mse(&ests, &xs).unwrap();
            if crossed.is_none() && l <= 16.0 {
                crossed = Some(epoch);
            }
            if epoch >= 50 {
                worst_after_50 = worst_after_50.max(l);
            }
        }
        println!("lr {lr} m {m}: crossed 16.0 at epoch {crossed:?}, worst loss epochs 50..200 = {worst_after_50:.3}");
    }
}

// single trials across D values: where does the qualifying window land?
fn curve_probe() {
    let ds = sample_gaussian(&GaussianJointSource::paper_preset(), 12_000, 5.0 / 6.0, 91).unwrap();
    let d0 = 1.0;
    let dmax = 5.76;
    let tau = (dmax - d0) / 20.0;
    for i in 0..10 {
        let d = d0 + (dmax - d0) * i as f64 / 9.0;
        let cfg = TrainerConfig {
            mode: Mode::Gaussian,
            d_target: d,
            rho: 1000.0,
            epochs: 300,
            batch_size: 200,
            alpha_k: 0.001,
            alpha_g: 0.001,
            alpha_h1: 0.001,
            alpha_h2: 0.001,
            lr_schedule_gamma: 0.0,
            d_max_for_schedule: 1.0,
            seed: 1000 + i,
        };
        let state = train(&ds, &cfg).unwrap();
        let qual: Vec<&EpochRecord> = state
            .epoch_log
            .iter()
            .filter(|r| r.l_recon >= d - tau && r.l_recon <= d)
            .collect();
        let last = state.epoch_log.last().unwrap();
        let sol = privshare::gaussian::solve_gaussian(&GaussianJointSource::paper_preset(), d)
            .unwrap();
        println!(
            "d={d:.3}: qualifying epochs={} last=(recon {:.3}, adv {:.3}/{:.3}) theory ({:.3}/{:.3})",
            qual.len(),
            last.l_recon,
            last.l_adv1,
            last.l_adv2,
            sol.adv_loss_1,
            sol.adv_loss_2
        );
    }
}

// appended: tiny-sweep fixture tuning
#[allow(dead_code)]
fn tiny_probe() {
    use privshare::sources::BinarySource;
    use privshare::sweep::*;
    for (epochs, d0, np, k) in [(150usize, 0.1, 3usize, 2usize), (200, 0.1, 3, 2), (150, 0.12, 3, 3)] {
        let protocol = SweepProtocol {
            d0, d_max: 0.2, n_points: np, k_window: k, trials_required: 2,
            mode: Mode::Binary, base_seed: 900, max_trials_per_d: 12,
            strict_acceptance: true, resolution: 200,
        };
        let source = SourceSpec::Binary(BinarySource::paper_preset());
        let data = DataSpec { n: 1200, train_fraction: 5.0/6.0, seed: 77 };
        let trainer = TrainerConfig {
            mode: Mode::Binary, d_target: 0.1, rho: 1.0, epochs, batch_size: 100,
            alpha_k: 0.05, alpha_g: 0.02, alpha_h1: 0.01, alpha_h2: 0.01,
            lr_schedule_gamma: 0.0, d_max_for_schedule: 0.2, seed: 0,
        };
        let t0 = std::time::Instant::now();
        let outcome = run_sweep(&protocol, &source, &data, &trainer, 1).unwrap();
        println!("epochs={epochs} d0={d0} np={np} k={k}: shortfalls={:?} trials={:?} ({:?})",
            outcome.points.iter().map(|p| p.shortfall).collect::<Vec<_>>(),
            outcome.points.iter().map(|p| p.trials_run).collect::<Vec<_>>(),
            t0.elapsed());
    }
}

#[allow(dead_code)]
fn emit_preset() {
    let src = GaussianJointSource::paper_preset();
    println!("{}", serde_json::to_string_pretty(&src).unwrap());
}

#[allow(dead_code)]
fn crit4_probe() {
    use privshare::sweep::*;
    let args: Vec<String> = std::env::args().collect();
    let d0: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let dmax: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2.6);
    let bseed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(5000);
    let dseed: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(91);
    let protocol = SweepProtocol {
        d0, d_max: dmax, n_points: 10, k_window: 5, trials_required: 5,
        mode: Mode::Gaussian, base_seed: bseed, max_trials_per_d: 200,
        strict_acceptance: true, resolution: 1000,
    };
    let source = SourceSpec::Gaussian(GaussianJointSource::paper_preset());
    let data = DataSpec { n: 12_000, train_fraction: 5.0/6.0, seed: dseed };
    let trainer = TrainerConfig {
        mode: Mode::Gaussian, d_target: 1.0, rho: 1000.0, epochs: 300, batch_size: 200,
        alpha_k: 0.001, alpha_g: 0.001, alpha_h1: 0.001, alpha_h2: 0.001,
        lr_schedule_gamma: 0.0, d_max_for_schedule: 1.0, seed: 0,
    };
    let t0 = std::time::Instant::now();
    let outcome = run_sweep(&protocol, &source, &data, &trainer, 4).unwrap();
    for p in &outcome.points {
        let tol1 = (0.1*p.theory_adv1).max(0.3);
        let tol2 = (0.1*p.theory_adv2).max(0.3);
        let ok1 = (p.adv1 - p.theory_adv1).abs() <= tol1;
        let ok2 = (p.adv2 - p.theory_adv2).abs() <= tol2;
        let m1 = tol1 - (p.adv1 - p.theory_adv1).abs();
        let m2 = tol2 - (p.adv2 - p.theory_adv2).abs();
        println!("d={:.3} recon={:.3} adv=({:.3},{:.3}) theory=({:.3},{:.3}) trials={} short={} ok=({},{}) margin=({:.3},{:.3})",
            p.d, p.recon, p.adv1, p.adv2, p.theory_adv1, p.theory_adv2, p.trials_run, p.shortfall, ok1, ok2, m1, m2);
    }
    println!("elapsed {:?}", t0.elapsed());
}

#[allow(dead_code)]
fn crit5_probe() {
    use privshare::sweep::*;
    use privshare::sources::BinarySource;
    let args: Vec<String> = std::env::args().collect();
    let treq: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(15);
    let bseed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(6000);
    let d0: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.0025);
    let protocol = SweepProtocol {
        d0, d_max: 0.2, n_points: 10, k_window: 5, trials_required: treq,
        mode: Mode::Binary, base_seed: bseed, max_trials_per_d: 300,
        strict_acceptance: true, resolution: 1000,
    };
    let source = SourceSpec::Binary(BinarySource::paper_preset());
    let data = DataSpec { n: 12_000, train_fraction: 5.0/6.0, seed: 7 };
    let trainer = TrainerConfig {
        mode: Mode::Binary, d_target: 0.1, rho: 1.0, epochs: 1000, batch_size: 200,
        alpha_k: 0.05, alpha_g: 0.02, alpha_h1: 0.01, alpha_h2: 0.01,
        lr_schedule_gamma: -0.98, d_max_for_schedule: 0.2, seed: 0,
    };
    let t0 = std::time::Instant::now();
    let jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4);
    let outcome = run_sweep(&protocol, &source, &data, &trainer, jobs).unwrap();
    for p in &outcome.points {
        let adv = p.adv1.min(p.adv2);
        let ok = (adv - p.theory_adv1).abs() <= 0.03;
        println!("d={:.4} recon={:.4} adv={:.4} theory={:.4} trials={} short={} ok={} diff={:+.4}",
            p.d, p.recon, adv, p.theory_adv1, p.trials_run, p.shortfall, ok, adv - p.theory_adv1);
    }
    println!("elapsed {:?}", t0.elapsed());
}

#[allow(dead_code)]
fn bintraj_probe() {
    use privshare::sources::{sample_binary, BinarySource};
    use privshare::binary::{map_error_bruteforce, FlipChannel};
    let src = BinarySource::paper_preset();
    let ds = sample_binary(&src, 12_000, 5.0/6.0, 7).unwrap();
    for d in [0.1122, 0.1781, 0.2] {
        for seed in [1u64, 2, 3] {
            let cfg = TrainerConfig {
                mode: Mode::Binary, d_target: d, rho: 1.0, epochs: 1000, batch_size: 200,
                alpha_k: 0.05, alpha_g: 0.02, alpha_h1: 0.01, alpha_h2: 0.01,
                lr_schedule_gamma: -0.98, d_max_for_schedule: 0.2, seed,
            };
            let st = train(&ds, &cfg).unwrap();
            let tau = (0.2 - 0.0025) / 20.0;
            let qual: Vec<&EpochRecord> = st.epoch_log.iter()
                .filter(|r| r.l_recon >= d - tau && r.l_recon <= d).collect();
            let lastq: Vec<String> = qual.iter().rev().take(5).rev()
                .map(|r| format!("e{} r{:.3} a{:.3}", r.epoch, r.l_recon, r.adv_objective())).collect();
            // effective flip channel of the final privatizer on the test split
            let (mut s0n, mut s0d, mut s1n, mut s1d) = (0.0, 0.0, 0.0, 0.0);
            for rec in ds.test() {
                let f = privatize(&st.privatizer.net, rec.x, rec.r, Mode::Binary).unwrap().f;
                if rec.x == 0.0 { s0d += 1.0; if f == 0.0 { s0n += 1.0; } }
                else { s1d += 1.0; if f == 1.0 { s1n += 1.0; } }
            }
            let ch = FlipChannel { s0: s0n/s0d, s1: s1n/s1d };
            let bayes_adv = map_error_bruteforce(&ch, src.p, src.q_z1);
            let bayes_rec = map_error_bruteforce(&ch, src.p, src.q_y);
            let last = st.epoch_log.last().unwrap();
            println!("d={d:.4} seed={seed}: final r={:.3} a={:.3} | eff (s0,s1)=({:.3},{:.3}) bayes(rec,adv)=({:.3},{:.3}) | lastq {:?}",
                last.l_recon, last.adv_objective(), ch.s0, ch.s1, bayes_rec, bayes_adv, lastq);
        }
    }
}
