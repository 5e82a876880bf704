//! Finite-difference checks of every hand-written backward pass, run over
//! random draws. Shared by the `gradcheck` command and the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{BBox, ImageSize};
use crate::numerics::{
    bilinear_sample, bilinear_sample_backward, flatten, giou_loss, giou_loss_backward, grad_check,
    l1_loss, l1_loss_backward, patch_embed, patch_embed_backward, sigmoid_focal_loss, softmax,
    softmax_backward, softmax_focal_loss, unflatten, DenseArray, FocalParams, Linear, Mlp,
};
use crate::refsearch::{rs_loss, FeatureMemory, Reference, RsConfig, RsLossWeights, RsModule, RsTarget};

/// Finite-difference step used throughout the suite.
pub const EPS: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub draws: usize,
    /// Worst relative error over all draws and coordinates.
    pub max_rel_error: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Dimensions of the composed reference-search check.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub draws: usize,
    pub seed: u64,
    pub rs: RsConfig,
    /// `(height, width)` of each memory level.
    pub levels: Vec<(usize, usize)>,
    pub references: usize,
    /// Scale every analytic gradient by 1.05 so each check must fail.
    pub corrupt: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            draws: 100,
            seed: 0,
            rs: RsConfig {
                d_model: 8,
                emb_dim: 4,
                layers: 2,
                heads: 2,
                points: 6,
                levels: 3,
                reach: 4.0,
                head_hidden: 8,
                use_appearance: true,
                num_identities: 3,
            },
            levels: vec![(4, 4), (2, 2), (1, 1)],
            references: 2,
            corrupt: false,
        }
    }
}

impl SuiteConfig {
    /// Rough count of objective evaluations, for runtime warnings.
    pub fn cost_estimate(&self) -> usize {
        let d = self.rs.d_model;
        let per_layer = d * d * 3 + d * 3 * self.rs.heads * self.rs.points;
        let mem: usize = self.levels.iter().map(|(h, w)| h * w * d).sum();
        self.draws * (self.rs.layers * per_layer + mem) * self.references.max(1)
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, b: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-b..=b)).collect()
}

fn weighted_sum(y: &[f64], c: &[f64]) -> f64 {
    y.iter().zip(c).map(|(a, b)| a * b).sum()
}

struct Runner {
    corrupt: bool,
    rng: ChaCha8Rng,
}

impl Runner {
    /// Runs `draws` checks of the objective produced by `make` for each draw.
    fn run<M, F>(&mut self, name: &'static str, draws: usize, mut make: M) -> Result<OpCheck>
    where
        M: FnMut(&mut ChaCha8Rng) -> (Vec<f64>, F),
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let mut worst: f64 = 0.0;
        let k = if self.corrupt { 1.05 } else { 1.0 };
        for _ in 0..draws {
            let (x, mut f) = make(&mut self.rng);
            let c = grad_check(
                |p| {
                    let (v, mut g) = f(p)?;
                    g.iter_mut().for_each(|gi| *gi *= k);
                    Ok((v, g))
                },
                &x,
                EPS,
            )?;
            worst = worst.max(c.max_rel_error);
        }
        Ok(OpCheck {
            name,
            draws,
            max_rel_error: worst,
        })
    }
}

fn random_module(rng: &mut ChaCha8Rng, cfg: &RsConfig) -> Result<RsModule> {
    let mut m = RsModule::init(cfg.clone(), rng)?;
    for t in m.tensors_mut() {
        for v in t.values_mut() {
            *v = rng.random_range(-0.5..=0.5);
        }
    }
    Ok(m)
}

/// Loss and flattened parameter and memory gradients of the composed
/// forward pass plus training loss.
fn composed(
    module: &RsModule,
    refs: &[Reference],
    mem: &FeatureMemory,
    targets: &[RsTarget],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (preds, tape) = module.forward_tape(refs, mem)?;
    let loss = rs_loss(module, &preds, targets, RsLossWeights::default())?;
    let mut grad = module.zeroed();
    let dmem = module
        .backward(refs, mem, &tape, &loss.pred_grads, &mut grad, true)?
        .expect("memory gradient requested");
    grad.id_classifier.weight.add_assign(&loss.classifier_grad.weight)?;
    grad.id_classifier.bias.add_assign(&loss.classifier_grad.bias)?;
    Ok((
        loss.value,
        flatten(&grad.tensors()),
        flatten(&dmem.levels.iter().collect::<Vec<_>>()),
    ))
}

struct ComposedDraw {
    module: RsModule,
    mem: FeatureMemory,
    refs: Vec<Reference>,
    targets: Vec<RsTarget>,
}

fn composed_draw(rng: &mut ChaCha8Rng, cfg: &SuiteConfig) -> Result<ComposedDraw> {
    let module = random_module(rng, &cfg.rs)?;
    let d = cfg.rs.d_model;
    let mem = FeatureMemory::new(
        cfg.levels
            .iter()
            .map(|&(h, w)| DenseArray::uniform(&[h, w, d], 1.0, rng))
            .collect(),
        ImageSize::new(64, 48)?,
    )?;
    let refs = (0..cfg.references)
        .map(|i| Reference {
            track_id: i as u64,
            point: [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
            appearance: uniform(rng, cfg.rs.emb_dim, 1.0),
        })
        .collect();
    let targets = (0..cfg.references)
        .map(|i| RsTarget {
            center: [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
            identity: i % cfg.rs.num_identities,
        })
        .collect();
    Ok(ComposedDraw {
        module,
        mem,
        refs,
        targets,
    })
}

/// Runs every check; each op gets `cfg.draws` random draws.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<OpCheck>> {
    cfg.rs.validate()?;
    let n = cfg.draws;
    let mut r = Runner {
        corrupt: cfg.corrupt,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut out = Vec::new();

    out.push(r.run("linear", n, |rng| {
        let (i, o) = (rng.random_range(1..6), rng.random_range(1..6));
        let layer = Linear::init(i, o, 1.0, rng);
        let x = uniform(rng, i, 1.0);
        let c = uniform(rng, o, 1.0);
        let mut p = flatten(&layer.tensors());
        p.extend(&x);
        (p, move |p: &[f64]| {
            let mut l = Linear::zeros(i, o);
            let used = unflatten(&mut l.tensors_mut(), p)?;
            let x = &p[used..];
            let y = l.forward(x)?;
            let mut g = l.zeroed();
            let dx = l.backward(x, &c, &mut g);
            let mut grad = flatten(&g.tensors());
            grad.extend(dx);
            Ok((weighted_sum(&y, &c), grad))
        })
    })?);

    out.push(r.run("mlp", n, |rng| {
        let dims = [rng.random_range(1..5), rng.random_range(2..6), rng.random_range(1..4)];
        let mlp = Mlp::init(&dims, 1.0, rng).expect("valid dims");
        let x = uniform(rng, dims[0], 1.0);
        let c = uniform(rng, dims[2], 1.0);
        let mut p = flatten(&mlp.tensors());
        p.extend(&x);
        (p, move |p: &[f64]| {
            let mut m = mlp.zeroed();
            let used = unflatten(&mut m.tensors_mut(), p)?;
            let x = &p[used..];
            let (y, cache) = m.forward_cached(x)?;
            let mut g = m.zeroed();
            let dx = m.backward(&cache, &c, &mut g);
            let mut grad = flatten(&g.tensors());
            grad.extend(dx);
            Ok((weighted_sum(&y, &c), grad))
        })
    })?);

    out.push(r.run("softmax", n, |rng| {
        let k = rng.random_range(1..8);
        let x = uniform(rng, k, 3.0);
        let c = uniform(rng, k, 1.0);
        (x, move |x: &[f64]| {
            let y = softmax(x);
            Ok((weighted_sum(&y, &c), softmax_backward(&y, &c)))
        })
    })?);

    out.push(r.run("bilinear_sample", n, |rng| {
        let (h, w, d) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..4));
        let grid = DenseArray::uniform(&[h, w, d], 1.0, rng);
        let c = uniform(rng, d, 1.0);
        let mut p = grid.values().to_vec();
        p.extend([rng.random_range(0.02..0.98), rng.random_range(0.02..0.98)]);
        (p, move |p: &[f64]| {
            let n = h * w * d;
            let grid = DenseArray::from_vec(&[h, w, d], p[..n].to_vec())?;
            let pt = [p[n], p[n + 1]];
            let y = bilinear_sample(&grid, pt)?;
            let mut dgrid = DenseArray::zeros(&[h, w, d]);
            let dp = bilinear_sample_backward(&grid, pt, &c, &mut dgrid)?;
            let mut grad = dgrid.into_values();
            grad.extend(dp);
            Ok((weighted_sum(&y, &c), grad))
        })
    })?);

    out.push(r.run("l1_loss", n, |rng| {
        let k = rng.random_range(1..6);
        let a = uniform(rng, k, 1.0);
        let b = uniform(rng, k, 1.0);
        (a, move |a: &[f64]| Ok((l1_loss(a, &b)?, l1_loss_backward(a, &b))))
    })?);

    out.push(r.run("softmax_focal_loss", n, |rng| {
        let k = rng.random_range(2..6);
        let t = rng.random_range(0..k);
        let x = uniform(rng, k, 3.0);
        (x, move |x: &[f64]| softmax_focal_loss(x, t, FocalParams::default()))
    })?);

    out.push(r.run("sigmoid_focal_loss", n, |rng| {
        let k = rng.random_range(1..6);
        let t: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
        let x = uniform(rng, k, 3.0);
        (x, move |x: &[f64]| sigmoid_focal_loss(x, &t, FocalParams::default()))
    })?);

    out.push(r.run("giou_loss", n, |rng| {
        let mut corners = || {
            let (x, y) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
            [x, y, x + rng.random_range(0.5..5.0), y + rng.random_range(0.5..5.0)]
        };
        let a = corners();
        let b = corners();
        let b = BBox::new(b[0], b[1], b[2], b[3]).expect("ordered corners");
        (a.to_vec(), move |a: &[f64]| {
            let a = BBox::new(a[0], a[1], a[2], a[3])?;
            Ok((giou_loss(&a, &b), giou_loss_backward(&a, &b).to_vec()))
        })
    })?);

    out.push(r.run("patch_embed", n, |rng| {
        let patch = rng.random_range(1..3);
        let (gh, gw, c, d) = (rng.random_range(1..3), rng.random_range(1..3), 2, 3);
        let frame = DenseArray::uniform(&[gh * patch, gw * patch, c], 1.0, rng);
        let layer = Linear::init(patch * patch * c, d, 1.0, rng);
        let dout = DenseArray::uniform(&[gh, gw, d], 1.0, rng);
        (flatten(&layer.tensors()), move |p: &[f64]| {
            let mut l = layer.zeroed();
            unflatten(&mut l.tensors_mut(), p)?;
            let y = patch_embed(&frame, patch, &l)?;
            let mut g = l.zeroed();
            patch_embed_backward(&frame, patch, &l, &dout, &mut g)?;
            Ok((weighted_sum(y.values(), dout.values()), flatten(&g.tensors())))
        })
    })?);

    // one composed draw is shared by the parameter and memory checks
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        draws.push(composed_draw(&mut r.rng, cfg)?);
    }
    let mut it = draws.iter();
    out.push(r.run("reference_search_params", n, |_| {
        let c = it.next().expect("one draw per run");
        (flatten(&c.module.tensors()), move |p: &[f64]| {
            let mut m = c.module.clone();
            unflatten(&mut m.tensors_mut(), p)?;
            let (l, g, _) = composed(&m, &c.refs, &c.mem, &c.targets)?;
            Ok((l, g))
        })
    })?);
    let mut it = draws.iter();
    out.push(r.run("reference_search_memory", n, |_| {
        let c = it.next().expect("one draw per run");
        (flatten(&c.mem.levels.iter().collect::<Vec<_>>()), move |p: &[f64]| {
            let mut mem = c.mem.clone();
            unflatten(&mut mem.levels.iter_mut().collect::<Vec<_>>(), p)?;
            let (l, _, g) = composed(&c.module, &c.refs, &mem, &c.targets)?;
            Ok((l, g))
        })
    })?);
    Ok(out)
}
