//! Saliency oracles. Each check returns a short summary or a failure reason.

use lumen_core::methods::{ExplainRequest, MethodRegistry};
use lumen_core::model::VisionModel;
use lumen_core::saliency::gradient::{
    grad_cam, grad_cam_pp, grad_cam_pp_raw, grad_cam_raw, hires_cam, hires_cam_raw,
    normalize_map, upsample_map,
};
use lumen_core::saliency::perturbation::{
    d_rise, detection_similarity, enumerate_masks, generate_masks, rise, PerturbationParams,
};
use lumen_core::toy::{self, toy_registry, IdentityConv, RegionScorer, ThresholdSegmenter};
use lumen_core::{
    BoundingBox, Detection, FeatureBundle, Grid, ImageTensor, TargetSpec, TaskKind,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{distinct_4x4, spearman};

fn grid(rows: &[&[f64]]) -> Grid {
    Grid::from_rows(rows).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn expect(label: &str, got: &[f64], want: &[f64], tol: f64) -> Result<(), String> {
    if close(got, want, tol) {
        Ok(())
    } else {
        Err(format!("{label}: got {got:?}, expected {want:?}"))
    }
}

type CamFn = fn(
    &FeatureBundle,
    (usize, usize),
    &TargetSpec,
) -> Result<lumen_core::SaliencyMap, lumen_core::saliency::SaliencyError>;

fn bundle(a: Vec<Grid>, g: Vec<Grid>) -> FeatureBundle {
    FeatureBundle::new(a, g, "layer").unwrap()
}

/// Hand-derived CAM maps, including the bundles produced by `toy_identity_conv`.
pub fn cam_fixtures() -> Result<String, String> {
    const TOL: f64 = 1e-9;
    let t0 = TargetSpec::class(0);
    let models = toy_registry();
    let img = ImageTensor::from_gray_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
    let b = models
        .activations_and_gradients(toy::IDENTITY_CONV, &img, &t0)
        .map_err(|e| e.to_string())?;
    expect("identity features", &b.feature_maps[0].values, &[1., 0., 0., 0.], 0.0)?;
    expect("identity gradients", &b.gradients[0].values, &[1., 1., 1., 1.], 0.0)?;
    let one_hot = [1., 0., 0., 0.];
    let run = |f: CamFn, b: &FeatureBundle| f(b, (2, 2), &t0).map(|m| m.values().to_vec());
    expect("grad_cam", &run(grad_cam, &b).map_err(|e| e.to_string())?, &one_hot, TOL)?;
    expect("grad_cam_pp", &run(grad_cam_pp, &b).map_err(|e| e.to_string())?, &one_hot, TOL)?;
    expect("hires_cam", &run(hires_cam, &b).map_err(|e| e.to_string())?, &one_hot, TOL)?;
    let raw_pp = grad_cam_pp_raw(&b).map_err(|e| e.to_string())?;
    expect("grad_cam_pp raw (w = 4/3)", &raw_pp.values, &[4.0 / 3.0, 0., 0., 0.], TOL)?;

    // Dead pathway: class 1 has zero gradients everywhere.
    let dead = models
        .activations_and_gradients(toy::IDENTITY_CONV, &img, &TargetSpec::class(1))
        .map_err(|e| e.to_string())?;
    for f in [grad_cam, grad_cam_pp, hires_cam] {
        expect("dead pathway", &run(f, &dead).map_err(|e| e.to_string())?, &[0.; 4], 0.0)?;
    }

    // Two cancelling channels.
    let a = grid(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let cancel = bundle(
        vec![a.clone(), a.clone()],
        vec![Grid::filled(2, 2, 1.0), Grid::filled(2, 2, -1.0)],
    );
    expect("cancellation", &grad_cam_raw(&cancel).unwrap().values, &[0.; 4], TOL)?;

    // HiResCAM keeps spatial detail that GradCAM averages away.
    let spatial = bundle(
        vec![Grid::filled(2, 2, 1.0)],
        vec![grid(&[&[1.0, 0.0], &[0.0, 0.0]])],
    );
    expect("hires raw", &hires_cam_raw(&spatial).unwrap().values, &one_hot, TOL)?;
    expect("grad_cam raw", &grad_cam_raw(&spatial).unwrap().values, &[0.25; 4], TOL)?;

    // Single nonzero pixel in A and g is maximal under GradCAM++.
    let single = bundle(
        vec![grid(&[&[0.0, 0.0], &[0.0, 2.0]])],
        vec![grid(&[&[0.0, 0.0], &[0.0, 3.0]])],
    );
    expect("grad_cam_pp single", &run(grad_cam_pp, &single).unwrap(), &[0., 0., 0., 1.], TOL)?;

    let norm = normalize_map(&grid(&[&[2.0, 4.0], &[6.0, 8.0]])).unwrap();
    expect("normalize", &norm.values, &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0], TOL)?;
    let up = upsample_map(&grid(&[&[0.0, 1.0], &[0.0, 1.0]]), (2, 4)).unwrap();
    expect("upsample", &up.values, &[0., 0.25, 0.75, 1., 0., 0.25, 0.75, 1.], TOL)?;
    let flat = upsample_map(&grid(&[&[0.3]]), (3, 5)).unwrap();
    expect("upsample 1x1", &flat.values, &[0.3; 15], 0.0)?;
    Ok("identity-conv, cancellation, spatial-fidelity, normalize and upsample fixtures".into())
}

/// GradCAM and HiResCAM agree on bundles whose gradients are constant per channel.
pub fn uniform_gradient_equivalence(cases: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let k = rng.random_range(1..=4);
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let out = (h + rng.random_range(0..=4), w + rng.random_range(0..=4));
        let mut a = Vec::new();
        let mut g = Vec::new();
        for _ in 0..k {
            let vals = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            a.push(Grid::from_vec(h, w, vals).unwrap());
            g.push(Grid::filled(h, w, rng.random_range(-1.0..1.0)));
        }
        let b = bundle(a, g);
        let t = TargetSpec::class(0);
        let gc = grad_cam(&b, out, &t).map_err(|e| e.to_string())?;
        let hc = hires_cam(&b, out, &t).map_err(|e| e.to_string())?;
        for (x, y) in gc.values().iter().zip(hc.values()) {
            worst = worst.max((x - y).abs());
        }
        if worst > 1e-9 {
            return Err(format!("case {case}: deviation {worst:e}"));
        }
    }
    Ok(format!("{cases} bundles, max deviation {worst:.1e}"))
}

/// Central differences of each toy's scalar target against its reported gradients.
pub fn finite_difference_check(step: f64, tol: f64, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models: [(&str, Box<dyn VisionModel>); 3] = [
        (toy::REGION_SCORER, Box::new(RegionScorer::new())),
        (toy::IDENTITY_CONV, Box::new(IdentityConv::new())),
        (toy::THRESHOLD_SEGMENTER, Box::new(ThresholdSegmenter::new())),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (name, model) in &models {
        for _ in 0..5 {
            let (h, w) = (rng.random_range(1..=5), rng.random_range(1..=5));
            // Stay clear of the segmenter's 0.5 threshold so the region is locally fixed.
            let data: Vec<f64> = (0..h * w)
                .map(|_| {
                    let v: f64 = rng.random_range(0.05..0.45);
                    if rng.random_bool(0.5) { v } else { v + 0.5 }
                })
                .collect();
            let img = ImageTensor::new(h, w, 1, data.clone()).unwrap();
            for class in 0..2 {
                let target = TargetSpec::class(class);
                let b = model
                    .activations_and_gradients(&img, &target)
                    .map_err(|e| format!("{name}: {e}"))?;
                // Every toy's explanation layer is the (gray) input itself.
                let grad = &b.gradients[0];
                for i in 0..h * w {
                    let mut plus = data.clone();
                    let mut minus = data.clone();
                    plus[i] += step;
                    minus[i] -= step;
                    let yp = model
                        .target_output(&ImageTensor::new(h, w, 1, plus).unwrap(), &target)
                        .map_err(|e| e.to_string())?;
                    let ym = model
                        .target_output(&ImageTensor::new(h, w, 1, minus).unwrap(), &target)
                        .map_err(|e| e.to_string())?;
                    let fd = (yp - ym) / (2.0 * step);
                    let dev = (fd - grad.values[i]).abs();
                    worst = worst.max(dev);
                    checked += 1;
                    if dev > tol {
                        return Err(format!(
                            "{name} class {class} pixel {i}: fd {fd}, analytic {}",
                            grad.values[i]
                        ));
                    }
                }
            }
        }
    }
    Ok(format!("{checked} partial derivatives, max deviation {worst:.1e}"))
}

/// Exhaustive RISE on the region scorer ranks every in-region pixel above
/// every out-of-region pixel.
pub fn rise_enumeration_oracle() -> Result<String, String> {
    let models = toy_registry();
    let img = ImageTensor::from_gray_rows(&distinct_4x4()).unwrap();
    let target = TargetSpec::class(0);
    let v = exhaustive_rise_4x4()?;
    let left: Vec<f64> = (0..16).filter(|i| i % 4 < 2).map(|i| v[i]).collect();
    let right: Vec<f64> = (0..16).filter(|i| i % 4 >= 2).map(|i| v[i]).collect();
    let min_left = left.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_right = right.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min_left <= max_right {
        return Err(format!("in-region min {min_left} not above out-of-region max {max_right}"));
    }
    // Within the region, relevance grows with intensity.
    let lum = img.luminance();
    for i in 0..16 {
        for j in 0..16 {
            let same_side = (i % 4 < 2) == (j % 4 < 2);
            let brighter = lum.values[i] > lum.values[j];
            let ordered = if i % 4 < 2 { v[i] > v[j] } else { v[i] < v[j] };
            if same_side && brighter && !ordered {
                return Err(format!("pixels {i} and {j} out of intensity order"));
            }
        }
    }

    // The 2×2 example: left-column pixels never rank below right-column ones,
    // strictly so where the pixel is lit.
    let small = ImageTensor::from_gray_rows(&[[1.0, 1.0], [0.0, 0.0]]).unwrap();
    let m = rise(
        &models,
        toy::REGION_SCORER,
        &small,
        &target,
        &enumerate_masks((2, 2)).unwrap(),
        16,
    )
    .map_err(|e| e.to_string())?;
    let s = m.values();
    if !(s[0] > s[1] && s[0] > s[3] && s[2] > s[1] && (s[2] - s[3]).abs() < 1e-12) {
        return Err(format!("2x2 example ordering violated: {s:?}"));
    }
    Ok(format!(
        "65536 masks: in-region min {min_left:.4} > out-of-region max {max_right:.4}"
    ))
}

/// RISE over all 2^16 binary masks of the 4×4 test image, class 0.
pub fn exhaustive_rise_4x4() -> Result<Vec<f64>, String> {
    let img = ImageTensor::from_gray_rows(&distinct_4x4()).unwrap();
    let all = enumerate_masks((4, 4)).map_err(|e| e.to_string())?;
    let map = rise(&toy_registry(), toy::REGION_SCORER, &img, &TargetSpec::class(0), &all, 256)
        .map_err(|e| e.to_string())?;
    Ok(map.values().to_vec())
}

/// Spearman correlation of sampled RISE (grid 4×4, p = 0.5) against the exhaustive map.
pub fn rise_sampled_spearman(exhaustive: &[f64], n: usize, seed: u64) -> Result<f64, String> {
    let img = ImageTensor::from_gray_rows(&distinct_4x4()).unwrap();
    let masks = generate_masks(n, (4, 4), 0.5, (4, 4), seed).map_err(|e| e.to_string())?;
    let sampled = rise(&toy_registry(), toy::REGION_SCORER, &img, &TargetSpec::class(0), &masks, 256)
        .map_err(|e| e.to_string())?;
    Ok(spearman(sampled.values(), exhaustive))
}

/// Exhaustive D-RISE on the box detector and the 1/7 pairing value.
pub fn d_rise_oracle() -> Result<String, String> {
    let models = toy_registry();
    let img = ImageTensor::from_gray_rows(&[[0.1, 0.2], [0.9, 0.3]]).unwrap();
    let pred = models.predict(toy::BOX_DETECTOR, &img).map_err(|e| e.to_string())?;
    let target = TargetSpec::detection_of(&pred, 0).ok_or("no detection")?;
    let m = d_rise(
        &models,
        toy::BOX_DETECTOR,
        &img,
        &target,
        &enumerate_masks((2, 2)).unwrap(),
        16,
    )
    .map_err(|e| e.to_string())?;
    let v = m.values();
    let argmax = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    if argmax != 2 || v.iter().enumerate().any(|(i, &x)| i != 2 && x >= v[2]) {
        return Err(format!("maximum not uniquely at the bright cell: {v:?}"));
    }
    let probs = vec![0.3, 0.7];
    let a = Detection::new(BoundingBox::new(0., 0., 2., 2.).unwrap(), probs.clone(), 1.0).unwrap();
    let b = Detection::new(BoundingBox::new(1., 1., 3., 3.).unwrap(), probs, 1.0).unwrap();
    let s = detection_similarity(&a, &b).map_err(|e| e.to_string())?;
    if (s - 1.0 / 7.0).abs() > 1e-12 {
        return Err(format!("similarity {s}, expected 1/7"));
    }
    Ok(format!("maximum at bright cell ({:.4}); similarity 1/7", v[2]))
}

#[derive(Debug, Clone)]
struct Case {
    method: &'static str,
    h: usize,
    w: usize,
    rgb: bool,
    pixels: Vec<f64>,
    grid: (usize, usize),
    seed: u64,
}

fn case() -> impl Strategy<Value = Case> {
    let methods = prop::sample::select(vec!["grad_cam", "grad_cam_pp", "hires_cam", "rise", "d_rise"]);
    (methods, 1usize..=8, 1usize..=8, any::<bool>(), any::<u64>())
        .prop_flat_map(|(method, h, w, rgb, seed)| {
            let n = h * w * if rgb { 3 } else { 1 };
            (
                Just(method),
                Just(h),
                Just(w),
                Just(rgb),
                prop::collection::vec(0.0f64..=1.0, n),
                (1..=h, 1..=w),
                Just(seed),
            )
        })
        .prop_map(|(method, h, w, rgb, pixels, grid, seed)| Case {
            method,
            h,
            w,
            rgb,
            pixels,
            grid,
            seed,
        })
}

/// Randomized images, methods and targets: every map matches the input size
/// and stays within `[0, 1]`.
pub fn saliency_bounds_cases(cases: u32) -> Result<String, String> {
    let models = toy_registry();
    let methods = MethodRegistry::with_builtins();
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let outcome = runner.run(&case(), |c| {
        let channels = if c.rgb { 3 } else { 1 };
        let mut pixels = c.pixels.clone();
        // The detector needs a lit pixel to produce a target.
        pixels[0] = pixels[0].max(0.05);
        let img = ImageTensor::new(c.h, c.w, channels, pixels).unwrap();
        let method = methods.get(c.method).unwrap();
        let (model_id, task) = match c.method {
            "d_rise" => (toy::BOX_DETECTOR, TaskKind::Detection),
            "rise" if c.seed % 2 == 0 => (toy::THRESHOLD_SEGMENTER, TaskKind::Segmentation),
            "rise" => (toy::REGION_SCORER, TaskKind::Classification),
            _ => match c.seed % 3 {
                0 => (toy::REGION_SCORER, TaskKind::Classification),
                1 => (toy::IDENTITY_CONV, TaskKind::Classification),
                _ => (toy::THRESHOLD_SEGMENTER, TaskKind::Segmentation),
            },
        };
        let pred = models.predict(model_id, &img).unwrap();
        let target = match task {
            TaskKind::Detection => TargetSpec::detection_of(&pred, 0).unwrap(),
            TaskKind::Segmentation => {
                TargetSpec::class(pred.label_map().unwrap().labels()[0] as usize)
            }
            TaskKind::Classification => TargetSpec::class((c.seed % 2) as usize),
        };
        let params = PerturbationParams {
            n_masks: 16,
            grid: c.grid,
            seed: c.seed,
            batch_size: 5,
            ..Default::default()
        };
        let req = ExplainRequest {
            models: &models,
            model_id,
            image: &img,
            target: &target,
            params: &params,
            masks: None,
        };
        let map = method
            .explain(&req)
            .map_err(|e| TestCaseError::fail(format!("{}: {e}", c.method)))?;
        prop_assert_eq!((map.height(), map.width()), (c.h, c.w));
        prop_assert_eq!(map.values().len(), c.h * c.w);
        prop_assert!(map.values().iter().all(|v| (0.0..=1.0).contains(v)));
        Ok(())
    });
    match outcome {
        Ok(()) => Ok(format!("{cases} randomized cases")),
        Err(e) => Err(e.to_string()),
    }
}
