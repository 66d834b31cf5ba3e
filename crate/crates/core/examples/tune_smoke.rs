// scratch harness for picking smoke-test hyperparameters; not part of the
// deliverable test surface
use dilated_sgan::data::*;
use dilated_sgan::metrics::*;
use dilated_sgan::model::*;
use dilated_sgan::train::*;

fn run(lr: f64, d_filters: Vec<usize>, d_kernel: usize, seed: u64, iters: usize) {
    run_ratio(lr, d_filters, d_kernel, seed, iters, 1)
}

fn run_ratio(
    lr: f64,
    d_filters: Vec<usize>,
    d_kernel: usize,
    seed: u64,
    iters: usize,
    d_steps: usize,
) {
    let g_spec = GeneratorLayout {
        deconv_filters: vec![16, 16],
        dilated_hidden_filters: vec![16],
        dilation_rates: vec![1, 2],
        ..GeneratorLayout::default()
    }
    .build()
    .unwrap();
    let d_spec = DiscriminatorLayout {
        hidden_filters: d_filters.clone(),
        kernel: d_kernel,
        ..DiscriminatorLayout::default()
    }
    .build()
    .unwrap();
    let config = TrainConfig {
        learning_rate: lr,
        batch_size: 8,
        epochs: 1,
        minibatches_per_epoch: iters,
        d_steps_per_g_step: d_steps,
        seed,
        checkpoint_every: 1,
        sample_every: 1,
        ..TrainConfig::default()
    };
    let source = make_toy_texture(
        ToyTextureKind::Stripes,
        256,
        256,
        &ToyParams {
            band_width: 8,
            orientation: StripeOrientation::Vertical,
            band_count: 0,
        },
        0,
    )
    .unwrap();
    let mut sampler = PatchSampler::new(source.clone(), 64, config.seed).unwrap();
    let mut trainer = Trainer::new(config, &g_spec, &d_spec).unwrap();
    let t0 = std::time::Instant::now();
    let outcome = trainer.run(&mut sampler, &TrainOptions::in_memory()).unwrap();
    let dt = t0.elapsed();

    if std::env::var("TRACE").is_ok() {
        for (i, r) in outcome.log.iter().enumerate() {
            if i < 30 || i % 10 == 9 {
                println!(
                    "  iter {:3}: lg={:.3} ld={:.3} D(real)={:.2} D(fake)={:.2}",
                    i + 1,
                    r.loss_g,
                    r.loss_d,
                    r.mean_d_real,
                    r.mean_d_fake
                );
            }
        }
    }

    let lg10 = outcome.log[9].loss_g;
    let lg_final = outcome.log[iters - 1].loss_g;
    let tail = &outcome.log[iters - 50..];
    let lg_tail: f64 = tail.iter().map(|r| r.loss_g).sum::<f64>() / 50.0;
    let dreal_tail: f64 = tail.iter().map(|r| r.mean_d_real).sum::<f64>() / 50.0;
    let dfake_tail: f64 = tail.iter().map(|r| r.mean_d_fake).sum::<f64>() / 50.0;

    let images = generate(&outcome.checkpoint, 16, 16, 32, 606).unwrap();
    let synth_tv: f64 = images
        .iter()
        .map(|i| total_variation(i, TvVariant::Anisotropic).unwrap())
        .sum::<f64>()
        / 32.0;
    let mut rs = PatchSampler::new(source, 64, 9090).unwrap();
    let real_tv: f64 = (0..32)
        .map(|_| total_variation(&rs.sample_patch(), TvVariant::Anisotropic).unwrap())
        .sum::<f64>()
        / 32.0;

    let lag = 8;
    let (mut along, mut across) = (vec![], vec![]);
    for img in &images {
        let fac = binarize(img);
        for f in [0u8, 1] {
            if let Ok(c) = connectivity_function(&fac, f, Axis2::Y, lag, Connectivity::Four) {
                if let Some(p) = c.probabilities[lag - 1] {
                    along.push(p)
                }
            }
            if let Ok(c) = connectivity_function(&fac, f, Axis2::X, lag, Connectivity::Four) {
                if let Some(p) = c.probabilities[lag - 1] {
                    across.push(p)
                }
            }
        }
    }
    let am = along.iter().sum::<f64>() / along.len().max(1) as f64;
    let xm = across.iter().sum::<f64>() / across.len().max(1) as f64;

    println!(
        "lr={lr:.0e} D={d_filters:?} k={d_kernel} seed={seed}: lg@10={lg10:.3} lg@end={lg_final:.3} lg_tail={lg_tail:.3} D(real)={dreal_tail:.2} D(fake)={dfake_tail:.2} | TV real={real_tv:.4} synth={synth_tv:.4} rel={:.2} | conn along={am:.3} across={xm:.3} | {dt:?}",
        (synth_tv - real_tv).abs() / real_tv
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    match which {
        1 => run(1e-3, vec![16, 16], 5, 2601, 500),
        2 => run(2e-3, vec![16, 16], 5, 2601, 500),
        3 => run(2e-3, vec![8, 16], 5, 2601, 500),
        4 => run(1e-3, vec![8, 16], 5, 2601, 500),
        5 => run(1e-3, vec![16], 5, 2601, 500),
        6 => run(1e-3, vec![16], 3, 2601, 500),
        7 => run(5e-4, vec![16], 3, 2601, 500),
        8 => run(5e-4, vec![16], 5, 2601, 500),
        9 => run(2e-3, vec![16], 5, 2601, 500),
        10 => run(3e-3, vec![16], 5, 2601, 500),
        11 => run(2e-3, vec![16], 5, 1, 500),
        12 => run(2e-3, vec![16], 5, 7, 500),
        15 => run(2e-3, vec![16], 3, 2601, 500),
        16 => run(3e-3, vec![16], 3, 2601, 500),
        17 => run(5e-3, vec![16], 5, 2601, 500),
        18 => run(1e-2, vec![16], 5, 2601, 500),
        20 => run_ratio(1e-3, vec![16], 5, 2601, 500, 3),
        21 => run_ratio(1e-3, vec![16], 5, 2601, 500, 2),
        22 => run_ratio(1e-3, vec![8], 5, 2601, 500, 3),
        _ => run(5e-4, vec![16, 16], 5, 2601, 200),
    }
}
