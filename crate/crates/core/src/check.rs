//! Self-check suite: gradient checks, aggregator oracles, the trigger
//! projection bound and robustness sanity, each against an independent
//! brute-force reference.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::aggregation::{coordinate_median, krum_select, multi_krum, rfa_geometric_median, trimmed_mean, weiszfeld_objective};
use crate::error::Result;
use crate::nn::{cnn_specs, mlp_specs, LayerSpec, Network, ParamVector, Shape};
use crate::rng::{self, tag, SimRng};
use crate::trigger::TriggerGenerator;

/// Trimmed-mean implementation under test.
pub type TrimmedMeanFn = fn(&[ParamVector<f64>], usize) -> Result<ParamVector<f64>>;

/// Configuration of one self-check run.
#[derive(Debug, Clone, Copy)]
pub struct CheckSuite {
    pub seed: u64,
    /// Swappable so that a deliberately wrong implementation can be shown
    /// to fail its oracle.
    pub trimmed_mean: TrimmedMeanFn,
}

impl Default for CheckSuite {
    fn default() -> Self {
        CheckSuite { seed: 0, trimmed_mean: trimmed_mean::<f64> }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

type Outcome = std::result::Result<String, String>;
type CheckFn = fn(&CheckSuite) -> Outcome;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pv(v: &[f64]) -> ParamVector<f64> {
    ParamVector::from_vec(v.to_vec())
}

/// `n in [3, 8]` updates of dimension `d in [1, 6]` in `[-10, 10]`.
fn instance(r: &mut SimRng) -> Vec<Vec<f64>> {
    let n = r.random_range(3..=8);
    let d = r.random_range(1..=6);
    (0..n).map(|_| (0..d).map(|_| r.random_range(-10.0..10.0)).collect()).collect()
}

fn column(ups: &[Vec<f64>], j: usize) -> Vec<f64> {
    let mut c: Vec<f64> = ups.iter().map(|u| u[j]).collect();
    c.sort_by(f64::total_cmp);
    c
}

fn naive_trimmed(ups: &[Vec<f64>], m: usize) -> Vec<f64> {
    (0..ups[0].len())
        .map(|j| {
            let c = column(ups, j);
            let kept = &c[m..c.len() - m];
            kept.iter().sum::<f64>() / kept.len() as f64
        })
        .collect()
}

fn naive_median(ups: &[Vec<f64>]) -> Vec<f64> {
    (0..ups[0].len())
        .map(|j| {
            let c = column(ups, j);
            let n = c.len();
            if n % 2 == 1 {
                c[n / 2]
            } else {
                (c[n / 2 - 1] + c[n / 2]) / 2.0
            }
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Krum over `cands`: the candidate with the smallest sum of squared
/// distances to its `|cands| - f - 1` nearest fellow candidates; the first
/// such candidate on ties.
fn naive_krum(ups: &[Vec<f64>], cands: &[usize], f: usize) -> usize {
    let score = |i: usize| {
        let mut d: Vec<f64> = cands.iter().filter(|&&j| j != i).map(|&j| sq_dist(&ups[i], &ups[j])).collect();
        d.sort_by(f64::total_cmp);
        d[..cands.len() - f - 1].iter().sum::<f64>()
    };
    let mut best = (cands[0], score(cands[0]));
    for &i in &cands[1..] {
        let s = score(i);
        if s < best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// Lowest objective over the `(steps + 1)^2` grid `origin + (i, j) * h`.
fn grid_search(pts: &[ParamVector<f64>], origin: [f64; 2], h: [f64; 2], steps: usize) -> (f64, [f64; 2]) {
    let mut best = (f64::MAX, origin);
    for i in 0..=steps {
        for j in 0..=steps {
            let v = [origin[0] + i as f64 * h[0], origin[1] + j as f64 * h[1]];
            let obj = weiszfeld_objective(pts, &v);
            if obj < best.0 {
                best = (obj, v);
            }
        }
    }
    best
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

impl CheckSuite {
    fn rng(&self, which: u64) -> SimRng {
        rng::stream(self.seed, &[tag::CHECK, which])
    }

    /// Analytic vs central finite-difference gradients on 20 random small
    /// networks, every parameter.
    pub fn gradients(&self) -> Outcome {
        let mut r = self.rng(1);
        let mut worst: f64 = 0.0;
        for k in 0..20 {
            let classes = r.random_range(2..=4);
            let hidden = r.random_range(2..=6);
            let (shape, specs) = match k % 3 {
                0 => (Shape::flat(r.random_range(2..=8)), mlp_specs(hidden, classes)),
                1 => (
                    Shape::flat(r.random_range(2..=8)),
                    vec![LayerSpec::Dense { units: hidden }, LayerSpec::Tanh, LayerSpec::Dense { units: classes }],
                ),
                _ => (Shape::image(r.random_range(3..=5), r.random_range(3..=5)), cnn_specs(hidden, classes)),
            };
            let net = Network::<f64>::new(shape, &specs, &mut r).map_err(|e| e.to_string())?;
            let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..shape.len()).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let labels: Vec<usize> = (0..3).map(|_| r.random_range(0..classes)).collect();
            let (_, grad) = net.loss_and_grad(&refs, &labels).map_err(|e| e.to_string())?;
            let h = 1e-5;
            for i in 0..net.num_params() {
                let mut plus = net.clone();
                plus.params_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[i] -= h;
                let lp = plus.loss(&refs, &labels).map_err(|e| e.to_string())?;
                let lm = minus.loss(&refs, &labels).map_err(|e| e.to_string())?;
                let fd = (lp - lm) / (2.0 * h);
                let err = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        ensure(worst < 1e-4, || format!("max relative error {worst:.3e} >= 1e-4"))?;
        Ok(format!("20 networks, max relative error {worst:.2e}"))
    }

    /// Trimmed mean vs sorted-column reference on 200 instances.
    pub fn trimmed_mean_oracle(&self) -> Outcome {
        let mut r = self.rng(2);
        let mut worst: f64 = 0.0;
        for t in 0..200 {
            let ups = instance(&mut r);
            let m = r.random_range(0..=(ups.len() - 1) / 2);
            let lib = (self.trimmed_mean)(&ups.iter().map(|u| pv(u)).collect::<Vec<_>>(), m).map_err(|e| format!("instance {t}: {e}"))?;
            let diff = max_abs_diff(&lib, &naive_trimmed(&ups, m));
            ensure(lib.dim() == ups[0].len() && diff <= 1e-12, || format!("instance {t} (n={}, m={m}): deviation {diff:.3e}", ups.len()))?;
            worst = worst.max(diff);
        }
        Ok(format!("200 instances, max deviation {worst:.1e}"))
    }

    pub fn median_oracle(&self) -> Outcome {
        let mut r = self.rng(3);
        let mut worst: f64 = 0.0;
        for t in 0..200 {
            let ups = instance(&mut r);
            let lib = coordinate_median(&ups.iter().map(|u| pv(u)).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
            let diff = max_abs_diff(&lib, &naive_median(&ups));
            ensure(diff <= 1e-12, || format!("instance {t}: deviation {diff:.3e}"))?;
            worst = worst.max(diff);
        }
        Ok(format!("200 instances, max deviation {worst:.1e}"))
    }

    pub fn krum_oracle(&self) -> Outcome {
        let mut r = self.rng(4);
        for t in 0..200 {
            let ups = instance(&mut r);
            let n = ups.len();
            let f = r.random_range(0..=n - 3);
            let all: Vec<usize> = (0..n).collect();
            let lib = krum_select(&ups.iter().map(|u| pv(u)).collect::<Vec<_>>(), f).map_err(|e| e.to_string())?;
            let want = naive_krum(&ups, &all, f);
            ensure(lib == want, || format!("instance {t} (n={n}, f={f}): selected {lib}, reference {want}"))?;
        }
        Ok("200 instances, identical selections".into())
    }

    /// Multi-Krum vs repeated reference Krum on a shrinking candidate set.
    pub fn multi_krum_oracle(&self) -> Outcome {
        let mut r = self.rng(5);
        let mut worst: f64 = 0.0;
        for t in 0..200 {
            let ups = instance(&mut r);
            let n = ups.len();
            let f = r.random_range(0..=n - 3);
            let c = r.random_range(1..=n - f - 1);
            let mut remaining: Vec<usize> = (0..n).collect();
            let mut chosen = Vec::new();
            while chosen.len() < c {
                let pick = naive_krum(&ups, &remaining, f);
                remaining.retain(|&i| i != pick);
                chosen.push(pick);
            }
            chosen.sort_unstable();
            let lib = multi_krum(&ups.iter().map(|u| pv(u)).collect::<Vec<_>>(), f, c, 1.0).map_err(|e| e.to_string())?;
            ensure(lib.accepted == chosen, || format!("instance {t}: accepted {:?}, reference {chosen:?}", lib.accepted))?;
            let want: Vec<f64> = (0..ups[0].len()).map(|j| chosen.iter().map(|&i| ups[i][j]).sum::<f64>() / c as f64).collect();
            let diff = max_abs_diff(&lib.global_delta, &want);
            ensure(diff <= 1e-12, || format!("instance {t}: mean deviation {diff:.3e}"))?;
            worst = worst.max(diff);
        }
        Ok(format!("200 instances, max deviation {worst:.1e}"))
    }

    /// RFA vs a grid search of the geometric-median objective on 20 random
    /// 2-D point sets. The 401x401 grid minimum is refined by repeated
    /// zooming; RFA must lie within one coarse cell diagonal of it.
    pub fn rfa_grid(&self) -> Outcome {
        let mut r = self.rng(6);
        let steps = 400;
        let mut worst: f64 = 0.0;
        for t in 0..20 {
            let n = r.random_range(3..=7);
            let pts: Vec<ParamVector<f64>> = (0..n).map(|_| pv(&[r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)])).collect();
            let (lo_x, hi_x) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p[0]), b.max(p[0])));
            let (lo_y, hi_y) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p[1]), b.max(p[1])));
            let (hx, hy) = ((hi_x - lo_x) / steps as f64, (hi_y - lo_y) / steps as f64);
            let coarse = grid_search(&pts, [lo_x, lo_y], [hx, hy], steps);
            let mut best = coarse;
            let mut h = [hx, hy];
            for _ in 0..6 {
                h = [h[0] / 5.0, h[1] / 5.0];
                best = grid_search(&pts, [best.1[0] - 20.0 * h[0], best.1[1] - 20.0 * h[1]], h, 40);
            }
            let gm = rfa_geometric_median(&pts, 1000, 1e-12, 1e-12).map_err(|e| e.to_string())?;
            let obj = weiszfeld_objective(&pts, &gm.point);
            let dist = sq_dist(&gm.point, &best.1).sqrt();
            let resolution = hx.hypot(hy);
            ensure(obj <= coarse.0 + 1e-9 && dist <= resolution, || {
                format!("instance {t}: objective {obj:.9} vs grid {:.9}, distance {dist:.3e} vs cell {resolution:.3e}", coarse.0)
            })?;
            worst = worst.max(dist / resolution);
        }
        Ok(format!("20 instances, max distance {worst:.1e} grid cells"))
    }

    /// `|generate(x)| <= eps + 1e-9` over 10,000 random inputs, generators
    /// and bounds.
    pub fn projection_bound(&self) -> Outcome {
        let mut r = self.rng(7);
        let mut violations = 0;
        let mut gen = None;
        for t in 0..10_000 {
            if t % 100 == 0 {
                let eps = 10f64.powf(r.random_range(-3.0..1.0));
                let scale = 10f64.powf(r.random_range(-2.0..2.0));
                gen = Some(TriggerGenerator::<f64>::new(Shape::flat(12), 6, eps, scale, &mut r).map_err(|e| e.to_string())?);
            }
            let g = gen.as_ref().expect("generator built on the first trial");
            let x: Vec<f64> = (0..12).map(|_| r.random_range(-5.0..5.0)).collect();
            let noise = g.generate(&x).map_err(|e| e.to_string())?;
            if crate::nn::norm(&noise) > g.epsilon() + 1e-9 {
                violations += 1;
            }
        }
        ensure(violations == 0, || format!("{violations} of 10000 outputs exceed the bound"))?;
        Ok("10000 triples, 0 violations".into())
    }

    /// One arbitrary update among identical honest ones: Krum picks an
    /// honest agent, trimmed mean and median return the honest vector.
    pub fn robustness(&self) -> Outcome {
        let mut r = self.rng(8);
        for t in 0..100 {
            let n = r.random_range(5..=9);
            let d = r.random_range(1..=6);
            let honest: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
            let bad: Vec<f64> = (0..d).map(|_| r.random_range(-1e3..1e3)).collect();
            let pos = r.random_range(0..n);
            let ups: Vec<ParamVector<f64>> = (0..n).map(|i| if i == pos { pv(&bad) } else { pv(&honest) }).collect();
            let k = krum_select(&ups, 1).map_err(|e| e.to_string())?;
            ensure(k != pos, || format!("trial {t}: Krum selected the arbitrary update"))?;
            let tm = (self.trimmed_mean)(&ups, 1).map_err(|e| e.to_string())?;
            ensure(tm == pv(&honest), || format!("trial {t}: trimmed mean {:?} != honest {honest:?}", &tm[..]))?;
            let med = coordinate_median(&ups).map_err(|e| e.to_string())?;
            ensure(med == pv(&honest), || format!("trial {t}: median differs from the honest vector"))?;
        }
        Ok("100 trials".into())
    }

    /// Runs every check in order.
    pub fn run(&self) -> Vec<CheckResult> {
        let checks: [(&'static str, CheckFn); 8] = [
            ("gradient", Self::gradients),
            ("trimmed-mean oracle", Self::trimmed_mean_oracle),
            ("median oracle", Self::median_oracle),
            ("krum oracle", Self::krum_oracle),
            ("multi-krum oracle", Self::multi_krum_oracle),
            ("rfa grid search", Self::rfa_grid),
            ("projection bound", Self::projection_bound),
            ("robustness sanity", Self::robustness),
        ];
        checks
            .iter()
            .map(|&(name, f)| {
                let start = Instant::now();
                let outcome = f(self);
                let elapsed = start.elapsed();
                match outcome {
                    Ok(detail) => CheckResult { name, passed: true, detail, elapsed },
                    Err(detail) => CheckResult { name, passed: false, detail, elapsed },
                }
            })
            .collect()
    }
}

/// Fixed-width pass/fail table.
pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:<6}  {:>9}  detail", "check", "status", "time");
    for r in results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{:<width$}  {:<6}  {:>7.2}s  {}", r.name, status, r.elapsed.as_secs_f64(), r.detail);
    }
    s
}
