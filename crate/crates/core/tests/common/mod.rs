#![allow(dead_code)]

use affect::dataio::{make_partitions, synthesize_dataset, Dataset, Modality, SynthSpec};
use affect::neural::Parameter;
use affect::Tensor2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Double-double number: `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn norm(hi: f64, lo: f64) -> Self {
        let (s, e) = two_sum(hi, lo);
        Dd { hi: s, lo: e }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        Dd::norm(s, e + self.lo + o.lo)
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        Dd::norm(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::new(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::new(q2)));
        let q3 = r.hi / o.hi;
        Dd::new(q1).add(Dd::new(q2)).add(Dd::new(q3))
    }

    pub fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::new(0.0);
        }
        let x = self.hi.sqrt();
        // one Newton step in double-double
        let xd = Dd::new(x);
        let r = self.sub(xd.mul(xd));
        xd.add(Dd::new(r.hi / (2.0 * x)))
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

pub fn dd_sum(v: impl Iterator<Item = Dd>) -> Dd {
    v.fold(Dd::new(0.0), Dd::add)
}

/// (ccc, pcc, rmse) by two-pass population moments in double-double.
pub fn dd_metrics(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let n = Dd::new(a.len() as f64);
    let ma = dd_sum(a.iter().map(|x| Dd::new(*x))).div(n);
    let mb = dd_sum(b.iter().map(|x| Dd::new(*x))).div(n);
    let da: Vec<Dd> = a.iter().map(|x| Dd::new(*x).sub(ma)).collect();
    let db: Vec<Dd> = b.iter().map(|x| Dd::new(*x).sub(mb)).collect();
    let saa = dd_sum(da.iter().map(|x| x.mul(*x))).div(n);
    let sbb = dd_sum(db.iter().map(|x| x.mul(*x))).div(n);
    let sab = dd_sum(da.iter().zip(&db).map(|(x, y)| x.mul(*y))).div(n);
    let dm = ma.sub(mb);
    let ccc = Dd::new(2.0).mul(sab).div(saa.add(sbb).add(dm.mul(dm)));
    let pcc = sab.div(saa.mul(sbb).sqrt());
    let mse = dd_sum(a.iter().zip(b).map(|(x, y)| {
        let d = Dd::new(*x).sub(Dd::new(*y));
        d.mul(d)
    }))
    .div(n);
    (ccc.to_f64(), pcc.to_f64(), mse.sqrt().to_f64())
}

/// Largest `|analytic − numeric| / max(1, |numeric|)` over all coordinates,
/// using central differences of `f` with step `h`.
pub fn fd_max_rel_err(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut xp = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let down = f(&xp);
        xp[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1.0));
    }
    worst
}

/// A small speaker-disjoint synthetic dataset.
pub fn tiny_dataset(recordings: usize, len: (usize, usize), modalities: Vec<Modality>, noise: f64, seed: u64) -> Dataset {
    let spec = SynthSpec::new(recordings, recordings.clamp(3, 6), len, modalities, noise);
    let recs = synthesize_dataset(&spec, seed).unwrap();
    let partitions = make_partitions(&recs, (0.6, 0.2, 0.2), seed).unwrap();
    Dataset {
        recordings: recs,
        partitions,
    }
}

pub fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor2 {
    Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn dot(a: &Tensor2, b: &Tensor2) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Finite-difference step of the layer checks.
pub const H: f64 = 1e-5;

/// Analytic vs numeric gradients of `Σ c ⊙ layer(x)` for every parameter
/// and for the input.
pub fn check_layer<L: Clone>(
    layer: &L,
    x: &Tensor2,
    coef: &Tensor2,
    params: fn(&mut L) -> Vec<&mut Parameter>,
    forward: fn(&L, &Tensor2) -> Tensor2,
    backward: fn(&mut L, &Tensor2, &Tensor2) -> Tensor2,
) -> f64 {
    let mut l = layer.clone();
    for p in params(&mut l) {
        p.zero_grad();
    }
    let dx = backward(&mut l, x, coef);
    let mut worst = 0.0f64;
    let n = params(&mut l.clone()).len();
    for pi in 0..n {
        let analytic = params(&mut l)[pi].grad.data().to_vec();
        let base = params(&mut l)[pi].value.data().to_vec();
        let mut probe = layer.clone();
        let mut f = |v: &[f64]| {
            params(&mut probe)[pi].value.data_mut().copy_from_slice(v);
            dot(&forward(&probe, x), coef)
        };
        worst = worst.max(fd_max_rel_err(&mut f, &base, &analytic, H));
    }
    let mut f = |v: &[f64]| {
        let xi = Tensor2::from_vec(x.rows(), x.cols(), v.to_vec()).unwrap();
        dot(&forward(layer, &xi), coef)
    };
    worst.max(fd_max_rel_err(&mut f, x.data(), dx.data(), H))
}
