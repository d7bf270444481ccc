//! Hand-written backward passes paired with central finite differences on
//! small random instances. Each case returns `(analytic, numeric)` vectors.

use mipvog::dataset::{generate_oracle_dataset, OracleScene, OracleViews};
use mipvog::geometry::{Aabb, Vec3};
use mipvog::mlp::{DeferredMLP, FEATURE_DIM, OUTPUT_DIM};
use mipvog::render::{composite, composite_backward, RenderSample};
use mipvog::train::{TrainConfig, Trainer};
use mipvog::voxel::{quadrilinear_backward, quadrilinear_sample, FilterSpec, MipPyramid, PyramidGrad, VoxelGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
/// Single operations.
pub const REL_TOL: f64 = 1e-5;
/// Whole batches, where the loss sums many rays and rounding grows.
pub const REL_TOL_END_TO_END: f64 = 1e-4;
/// Denominator floor: entries this small are limited by the rounding error
/// of the difference quotient (about 1e-11 here), so they are held to an
/// absolute bound of `tol * ABS_FLOOR` instead.
pub const ABS_FLOOR: f64 = 1e-6;

pub type Pair = (Vec<f64>, Vec<f64>);

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Largest entrywise relative error, or infinity for an all-zero gradient
/// (which would make the comparison vacuous).
pub fn worst(pair: &Pair) -> f64 {
    let (analytic, numeric) = pair;
    assert_eq!(analytic.len(), numeric.len());
    if !analytic.iter().any(|v| v.abs() > ABS_FLOOR) {
        return f64::INFINITY;
    }
    analytic.iter().zip(numeric).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

/// Central difference of `f` with respect to `x[i]`.
pub fn central(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let v = x[i];
    x[i] = v + H;
    let up = f(x);
    x[i] = v - H;
    let down = f(x);
    x[i] = v;
    (up - down) / (2.0 * H)
}

fn random_dims(rng: &mut ChaCha8Rng) -> [usize; 3] {
    [rng.random_range(4..=8), rng.random_range(4..=8), rng.random_range(4..=8)]
}

/// `Σ_c u_c · quadrilinear(pyramid over a random level 0, uvw, lod)_c` with
/// respect to the level-0 values. `levels = 1` with no filter is plain
/// trilinear sampling.
pub fn pyramid_case(seed: u64, filter: FilterSpec, levels: usize, lod: f64) -> Pair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = 2;
    let dims = random_dims(&mut rng);
    let g = VoxelGrid::from_fn(channels, dims, Aabb::unit(), |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap();
    let uvw: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let u: Vec<f64> = (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect();

    let p = MipPyramid::build(g.clone(), filter, levels).unwrap();
    let mut grad = PyramidGrad::new(&p);
    quadrilinear_backward(&p, uvw, lod, &u, &mut grad).unwrap();
    let analytic = grad.reduce().unwrap().to_vec();

    let mut x = g.values().to_vec();
    let numeric = (0..x.len())
        .map(|i| {
            central(&mut x, i, |v| {
                let grid = VoxelGrid::from_values(channels, dims, Aabb::unit(), v.to_vec()).unwrap();
                let p = MipPyramid::build(grid, filter, levels).unwrap();
                let s = quadrilinear_sample(&p, uvw, lod).unwrap();
                s.value.iter().zip(&u).map(|(a, b)| a * b).sum()
            })
        })
        .collect();
    (analytic, numeric)
}

/// The fractional-LOD pyramid cases: several filters, random LODs, plus an
/// integer and a clamped LOD.
pub fn pyramid_cases() -> Vec<(String, Pair)> {
    let filters = [FilterSpec::none(), FilterSpec::mean(3), FilterSpec::gaussian(5), FilterSpec::mean(7)];
    let mut out = Vec::new();
    for seed in 0..12u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let lod = rng.random_range(0.0..2.0);
        let f = filters[seed as usize % filters.len()];
        out.push((format!("seed {seed} {f} lod {lod:.3}"), pyramid_case(seed, f, 3, lod)));
    }
    out.push(("integer lod".into(), pyramid_case(20, FilterSpec::gaussian(3), 3, 2.0)));
    out.push(("clamped lod".into(), pyramid_case(21, FilterSpec::mean(5), 3, 7.5)));
    out
}

pub fn trilinear_cases() -> Vec<(String, Pair)> {
    (0..8).map(|seed| (format!("seed {seed}"), pyramid_case(seed, FilterSpec::none(), 1, 0.0))).collect()
}

pub fn render_sample(t: f64, sigma: f64, delta: f64, c_d: [f64; 3], f_s: [f64; FEATURE_DIM]) -> RenderSample {
    RenderSample {
        t,
        delta,
        sigma,
        alpha: 1.0 - (-sigma * delta).exp(),
        transmittance: 0.0,
        c_d,
        f_s,
        lod: 0.0,
        uvw: [0.5; 3],
        level_pair: (0, 0),
        upper_weight: 0.0,
        density_preact: 0.0,
    }
}

/// Compositing with a background, with respect to every sample's density,
/// diffuse color and features.
pub fn compositing_case(seed: u64) -> Pair {
    let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
    let n = rng.random_range(1..=24);
    let mut t = 0.0;
    let samples: Vec<RenderSample> = (0..n)
        .map(|_| {
            let delta = rng.random_range(0.01..0.2);
            let s = render_sample(
                t,
                rng.random_range(0.0..8.0),
                delta,
                std::array::from_fn(|_| rng.random()),
                std::array::from_fn(|_| rng.random()),
            );
            t += delta;
            s
        })
        .collect();
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random());
    let d_diffuse: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let d_feat: [f64; FEATURE_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let objective = |s: &[RenderSample]| {
        let p = composite(s, Some(bg));
        (0..3).map(|c| d_diffuse[c] * p.diffuse[c]).sum::<f64>()
            + (0..FEATURE_DIM).map(|c| d_feat[c] * p.features[c]).sum::<f64>()
    };
    let analytic: Vec<f64> = composite_backward(&samples, bg, &d_diffuse, &d_feat)
        .iter()
        .flat_map(|g| std::iter::once(g.sigma).chain(g.c_d).chain(g.f_s))
        .collect();

    // Flattened (sigma, c_d, f_s) per sample.
    let per = 1 + 3 + FEATURE_DIM;
    let unpack = |x: &[f64]| -> Vec<RenderSample> {
        samples
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let v = &x[k * per..(k + 1) * per];
                RenderSample {
                    sigma: v[0],
                    c_d: [v[1], v[2], v[3]],
                    f_s: [v[4], v[5], v[6], v[7]],
                    ..s.clone()
                }
            })
            .collect()
    };
    let mut x: Vec<f64> = samples
        .iter()
        .flat_map(|s| std::iter::once(s.sigma).chain(s.c_d).chain(s.f_s))
        .collect();
    let numeric = (0..x.len()).map(|i| central(&mut x, i, |v| objective(&unpack(v)))).collect();
    (analytic, numeric)
}

/// The deferred MLP with respect to its parameters and its input features.
pub fn mlp_case(seed: u64) -> [Pair; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
    let mut mlp = DeferredMLP::init(seed, -1.0);
    for p in mlp.params_mut() {
        *p += rng.random_range(-0.2..0.2);
    }
    let feat: [f64; FEATURE_DIM] = std::array::from_fn(|_| rng.random());
    let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5).normalize();
    let d_out: [f64; OUTPUT_DIM] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let objective =
        |m: &DeferredMLP, f: &[f64; FEATURE_DIM]| m.forward(f, &dir).iter().zip(&d_out).map(|(a, b)| a * b).sum::<f64>();

    let cache = mlp.forward_cached(&feat, &dir);
    let mut g_params = vec![0.0; mlp.params().len()];
    let g_feat = mlp.backward(&cache, &d_out, &mut g_params);

    let mut x = mlp.params().to_vec();
    let numeric_params = (0..x.len())
        .map(|i| {
            central(&mut x, i, |v| {
                let m = DeferredMLP::from_params(v.to_vec()).unwrap();
                objective(&m, &feat)
            })
        })
        .collect();
    let mut f = feat.to_vec();
    let numeric_feat = (0..FEATURE_DIM)
        .map(|i| central(&mut f, i, |v| objective(&mlp, &v.try_into().unwrap())))
        .collect();
    [(g_params, numeric_params), (g_feat.to_vec(), numeric_feat)]
}

/// Batch loss of a tiny fine-stage trainer with random parameters, with
/// respect to sampled entries of the density grid, the color grid and the
/// MLP. Returns one pair per group.
pub fn end_to_end_case() -> Vec<(&'static str, Pair)> {
    let views = OracleViews {
        width: 8,
        height: 8,
        fov_x: 0.7,
        radius: 3.5,
        n_train: 2,
        n_test: 0,
        spp: 1,
        seed: 0,
    };
    let ds = generate_oracle_dataset(&OracleScene::default_scene(), &views)
        .unwrap()
        .multiscale()
        .unwrap();
    let config = TrainConfig {
        fine_dims: [8; 3],
        levels: 3,
        batch_rays: 12,
        filter: FilterSpec::gaussian(3),
        area_loss: true,
        ..TrainConfig::desk()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    let mut trainer = Trainer::fine(&ds, &config, None).unwrap();
    for v in trainer.scene.density.level0_mut().values_mut() {
        *v = rng.random_range(-2.0..3.0);
    }
    for v in trainer.scene.color.level0_mut().values_mut() {
        *v = rng.random_range(-2.0..2.0);
    }
    for v in trainer.scene.mlp.as_mut().unwrap().params_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    trainer.scene.rebuild().unwrap();
    let batch = trainer.sample_batch();
    trainer.gradient(&batch).unwrap();
    let grad = trainer.grad().clone();

    let groups: [(&'static str, Vec<f64>); 3] = [
        ("density", grad.density.level0().to_vec()),
        ("color", grad.color.level0().to_vec()),
        ("mlp", grad.mlp.clone()),
    ];
    let mut out = Vec::new();
    for (group, analytic_all) in groups {
        // Entries that receive gradient plus a few arbitrary ones keep the
        // number of batch evaluations small.
        let mut nz: Vec<usize> = (0..analytic_all.len()).filter(|&i| analytic_all[i] != 0.0).collect();
        let mut picks = Vec::new();
        for _ in 0..24.min(nz.len()) {
            picks.push(nz.swap_remove(rng.random_range(0..nz.len())));
        }
        for _ in 0..8 {
            picks.push(rng.random_range(0..analytic_all.len()));
        }
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for i in picks {
            let loss_at = |t: &mut Trainer, v: f64| {
                *param_mut(t, group, i) = v;
                t.scene.rebuild().unwrap();
                t.batch_loss(&batch)
            };
            let v = *param_mut(&mut trainer, group, i);
            let up = loss_at(&mut trainer, v + H);
            let down = loss_at(&mut trainer, v - H);
            loss_at(&mut trainer, v);
            analytic.push(analytic_all[i]);
            numeric.push((up - down) / (2.0 * H));
        }
        out.push((group, (analytic, numeric)));
    }
    out
}

fn param_mut<'t>(t: &'t mut Trainer<'_>, group: &str, i: usize) -> &'t mut f64 {
    match group {
        "density" => &mut t.scene.density.level0_mut().values_mut()[i],
        "color" => &mut t.scene.color.level0_mut().values_mut()[i],
        _ => &mut t.scene.mlp.as_mut().unwrap().params_mut()[i],
    }
}
