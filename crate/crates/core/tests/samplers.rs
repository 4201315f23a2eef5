use lvg_core::adam::{AdamConfig, AdamState};
use lvg_core::conditioning::ConditioningBundle;
use lvg_core::diffusion::{
    dpm_loss_and_grads, dpm_train_loss, reverse_sample, DpmBatchSample, ReverseOptions,
};
use lvg_core::error::Result;
use lvg_core::field::{ConditionedNet, FieldDims, FrameField};
use lvg_core::flowmatch::{cfm_train_loss, euler_integrate, sample_path_point, CfmBatchSample};
use lvg_core::rng::{normal_tensor, stream};
use lvg_core::schedule::NoiseSchedule;
use lvg_core::tensor::Tensor2;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

struct Zero(usize);

impl FrameField for Zero {
    fn data_dim(&self) -> usize {
        self.0
    }
    fn eval(&self, x: &Tensor2, _t: f64, _c: &ConditioningBundle) -> Result<Tensor2> {
        Ok(Tensor2::zeros(x.rows(), self.0))
    }
}

/// `v(x) = a·x + b`, elementwise.
struct Affine(f64, f64);

impl FrameField for Affine {
    fn data_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &Tensor2, _t: f64, _c: &ConditioningBundle) -> Result<Tensor2> {
        Ok(x.map(|v| self.0 * v + self.1))
    }
}

fn bare(frames: usize) -> ConditioningBundle {
    ConditioningBundle::zeros(0, 0, frames)
}

fn half_normal_mean() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

#[test]
fn zero_predictors_pay_the_half_normal_mean() {
    let sched = NoiseSchedule::new(&Default::default()).unwrap();
    let mut rng = stream(1, &[]);
    let dpm: Vec<DpmBatchSample> = (0..20)
        .map(|i| DpmBatchSample {
            x0: normal_tensor(&mut rng, 500, 8),
            l: 1 + i % 20,
            eps: normal_tensor(&mut rng, 500, 8),
            cond: bare(500),
        })
        .collect();
    let loss = dpm_train_loss(&Zero(8), &dpm, &sched).unwrap();
    assert!((loss - half_normal_mean()).abs() < 0.01, "{loss}");

    let cfm: Vec<CfmBatchSample> = (0..20)
        .map(|_| CfmBatchSample {
            x1: Tensor2::zeros(500, 8),
            x0: normal_tensor(&mut rng, 500, 8),
            t: rng.gen_range(0.0..1.0),
            eps: normal_tensor(&mut rng, 500, 8),
            sigma: 0.0,
            cond: bare(500),
        })
        .collect();
    let loss = cfm_train_loss(&Zero(8), &cfm).unwrap();
    assert!((loss - half_normal_mean()).abs() < 0.01, "{loss}");
}

#[test]
fn dpm_loss_ignores_batch_order() {
    let sched = NoiseSchedule::new(&Default::default()).unwrap();
    let mut rng = stream(2, &[]);
    let mut batch: Vec<DpmBatchSample> = (0..9)
        .map(|i| DpmBatchSample {
            x0: normal_tensor(&mut rng, 3 + i, 5),
            l: 2 * i + 1,
            eps: normal_tensor(&mut rng, 3 + i, 5),
            cond: bare(3 + i),
        })
        .collect();
    let field = Affine(0.3, -0.1);
    struct Wide<'a>(&'a Affine);
    impl FrameField for Wide<'_> {
        fn data_dim(&self) -> usize {
            5
        }
        fn eval(&self, x: &Tensor2, t: f64, c: &ConditioningBundle) -> Result<Tensor2> {
            Ok(self.0.eval(x, t, c)?.map(|v| v + t))
        }
    }
    let a = dpm_train_loss(&Wide(&field), &batch, &sched).unwrap();
    batch.reverse();
    batch.swap(1, 4);
    let b = dpm_train_loss(&Wide(&field), &batch, &sched).unwrap();
    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
}

#[test]
fn path_jitter_has_variance_sigma_squared() {
    let mut rng = stream(3, &[]);
    let x0 = Tensor2::from_rows(&[[0.2, -1.0]]).unwrap();
    let x1 = Tensor2::from_rows(&[[1.0, 3.0]]).unwrap();
    let t = 0.3;
    let line = sample_path_point(&x0, &x1, t, 0.0, &Tensor2::zeros(1, 2)).unwrap();
    let n = 100_000;
    let mut sq = 0.0;
    for _ in 0..n {
        let p = sample_path_point(&x0, &x1, t, 0.1, &normal_tensor(&mut rng, 1, 2)).unwrap();
        sq += p.sub(&line).unwrap().data().iter().map(|d| d * d).sum::<f64>();
    }
    let var = sq / (2 * n) as f64;
    assert!((var - 0.01).abs() < 0.0003, "{var}");
}

#[test]
fn samplers_count_network_evaluations() {
    let sched = NoiseSchedule::new(&Default::default()).unwrap();
    let x = Tensor2::zeros(4, 3);
    for start in [1, 7, 18, 20] {
        let s = reverse_sample(
            &Zero(3),
            &x,
            start,
            &bare(4),
            &sched,
            &mut stream(0, &[]),
            ReverseOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(s.nfe, start);
    }
    assert!(reverse_sample(
        &Zero(3),
        &x,
        0,
        &bare(4),
        &sched,
        &mut stream(0, &[]),
        ReverseOptions::default(),
        None
    )
    .is_err());
    for steps in [1, 3, 10] {
        assert_eq!(euler_integrate(&Zero(3), &x, steps, &bare(4), None).unwrap().nfe, steps);
    }
}

/// L1 flow matching on a 1-D Gaussian target at fixed `t`, over the affine
/// class: the minimiser must be the marginal velocity field, which for a
/// Gaussian target is affine with closed-form coefficients.
#[test]
fn conditional_loss_has_the_marginal_field_as_minimiser() {
    let (m, s, t) = (1.0, 0.5, 0.6);
    // stratified standard-normal quantiles for both endpoints
    let q = 1000;
    let std = Normal::new(0.0, 1.0).unwrap();
    let quant: Vec<f64> = (0..q)
        .map(|i| std.inverse_cdf((i as f64 + 0.5) / q as f64))
        .collect();
    let mut x0 = Vec::with_capacity(q * q);
    let mut x1 = Vec::with_capacity(q * q);
    for &a in &quant {
        for &b in &quant {
            x0.push(a);
            x1.push(m + s * b);
        }
    }
    let n = x0.len();
    let sample = CfmBatchSample {
        x1: Tensor2::from_vec(n, 1, x1).unwrap(),
        x0: Tensor2::from_vec(n, 1, x0).unwrap(),
        t,
        eps: Tensor2::zeros(n, 1),
        sigma: 0.0,
        cond: bare(n),
    };
    // for a fixed slope the best offset is the median residual
    let xt: Vec<f64> = (0..n)
        .map(|i| t * sample.x1[(i, 0)] + (1.0 - t) * sample.x0[(i, 0)])
        .collect();
    let u: Vec<f64> = (0..n).map(|i| sample.x1[(i, 0)] - sample.x0[(i, 0)]).collect();
    let offset = |a: f64| {
        let mut r: Vec<f64> = u.iter().zip(&xt).map(|(u, x)| u - a * x).collect();
        let mid = r.len() / 2;
        *r.select_nth_unstable_by(mid, f64::total_cmp).1
    };
    let batch = [sample];
    let profile = |a: f64| cfm_train_loss(&Affine(a, offset(a)), &batch).unwrap();

    // closed form: E[x1 − x0 | x_t] for jointly Gaussian (x1, x0)
    let var_t = t * t * s * s + (1.0 - t) * (1.0 - t);
    let a_star = (t * s * s - (1.0 - t)) / var_t;
    let b_star = m - a_star * t * m;

    let a = golden_section(&profile, -3.0, 3.0);
    let b = offset(a);
    assert!((a - a_star).abs() < 1e-3, "slope {a} vs {a_star}");
    assert!((b - b_star).abs() < 1e-3, "offset {b} vs {b_star}");
}

fn golden_section(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-6 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[test]
fn single_point_diffusion_model_lands_on_the_point() {
    let sched = NoiseSchedule::new(&Default::default()).unwrap();
    let dims = FieldDims {
        data: 2,
        speaker: 0,
        content: 0,
        sinusoid: 32,
        time_hidden: 64,
        time_out: 16,
        width: 64,
        hidden_layers: 3,
    };
    let mut rng = stream(4, &[]);
    let mut net = ConditionedNet::init(dims, &mut rng).unwrap();
    let target = Tensor2::from_rows(&[[0.5, -1.0]]).unwrap();
    let sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        &sizes,
    );
    for _ in 0..3000 {
        let batch: Vec<DpmBatchSample> = (0..32)
            .map(|_| DpmBatchSample {
                x0: target.clone(),
                l: rng.gen_range(1..=sched.steps()),
                eps: normal_tensor(&mut rng, 1, 2),
                cond: bare(1),
            })
            .collect();
        let (_, g) = dpm_loss_and_grads(&net, &batch, &sched).unwrap();
        adam.step(&mut net.param_slices_mut(), &g.param_slices()).unwrap();
    }
    let runs = 200;
    let hits = (0..runs)
        .filter(|&i| {
            let mut r = stream(5, &[i]);
            let x = normal_tensor(&mut r, 1, 2);
            let out = reverse_sample(
                &net,
                &x,
                sched.steps(),
                &bare(1),
                &sched,
                &mut r,
                ReverseOptions::default(),
                None,
            )
            .unwrap()
            .output;
            out.sub(&target).unwrap().max_abs() <= 0.15
        })
        .count();
    println!("{hits}/{runs} within 0.15");
    assert!(hits as f64 >= 0.95 * runs as f64);
}
