use gapfill::baselines::{impute_series, impute_spline, Strategy as Fill};
use gapfill::masking::{self, GapClasses};
use gapfill::metrics::{mae, pearson, rmse, spearman};
use gapfill::signal::{slice_windows, ChannelInfo, TimeSeriesFrame};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn series_with_mask() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(any::<bool>(), n),
            0..n,
        )
            .prop_map(|(v, mut m, keep)| {
                m[keep] = true;
                let v = v.iter().zip(&m).map(|(&x, &o)| if o { x } else { f64::NAN }).collect();
                (v, m)
            })
    })
}

fn frame(series: Vec<Vec<f64>>) -> TimeSeriesFrame {
    let infos = (0..series.len()).map(|c| ChannelInfo::new(format!("c{c}"))).collect();
    TimeSeriesFrame::from_channels(infos, 1.0, series).unwrap()
}

fn brute_nearest(v: &[f64], m: &[bool], t: usize) -> f64 {
    let mut best = (usize::MAX, f64::NAN);
    for s in 0..v.len() {
        if m[s] {
            let d = t.abs_diff(s);
            if d < best.0 {
                best = (d, v[s]);
            }
        }
    }
    best.1
}

fn brute_median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn brute_mode(xs: &[f64]) -> f64 {
    let key = |x: f64| (x * 1e6).round() as i64;
    let mut best = (0usize, i64::MAX);
    for &x in xs {
        let count = xs.iter().filter(|&&y| key(y) == key(x)).count();
        if count > best.0 || (count == best.0 && key(x) < best.1) {
            best = (count, key(x));
        }
    }
    xs.iter().copied().filter(|&x| key(x) == best.1).fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn statistic_fills_match_brute_force((v, m) in series_with_mask()) {
        let obs: Vec<f64> = v.iter().zip(&m).filter(|(_, &o)| o).map(|(&x, _)| x).collect();
        let near = impute_series(Fill::Nearest, &v, &m).unwrap();
        let med = impute_series(Fill::Median, &v, &m).unwrap();
        let mode = impute_series(Fill::Mode, &v, &m).unwrap();
        let want_median = brute_median(&mut obs.clone());
        let want_mode = brute_mode(&obs);
        for t in 0..v.len() {
            if m[t] {
                prop_assert_eq!(near[t].to_bits(), v[t].to_bits());
                prop_assert_eq!(med[t].to_bits(), v[t].to_bits());
            } else {
                prop_assert_eq!(near[t], brute_nearest(&v, &m, t));
                prop_assert_eq!(med[t], want_median);
                prop_assert_eq!(mode[t], want_mode);
            }
        }
    }
}

proptest! {
    #[test]
    fn fills_stay_in_range((v, m) in series_with_mask()) {
        let obs: Vec<f64> = v.iter().zip(&m).filter(|(_, &o)| o).map(|(&x, _)| x).collect();
        let lo = obs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = obs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for s in [Fill::Mean, Fill::Median, Fill::Mode, Fill::Nearest] {
            let out = impute_series(s, &v, &m).unwrap();
            prop_assert!(out.iter().all(|&x| x >= lo - 1e-6 && x <= hi + 1e-6));
        }
        let lin = impute_series(Fill::Linear, &v, &m).unwrap();
        for t in 0..v.len() {
            if m[t] {
                continue;
            }
            let prev = (0..t).rev().find(|&s| m[s]);
            let next = (t + 1..v.len()).find(|&s| m[s]);
            let (a, b) = match (prev, next) {
                (Some(p), Some(q)) => (v[p].min(v[q]), v[p].max(v[q])),
                (Some(p), None) | (None, Some(p)) => (v[p], v[p]),
                (None, None) => unreachable!(),
            };
            prop_assert!(lin[t] >= a - 1e-9 && lin[t] <= b + 1e-9);
        }
    }

    #[test]
    fn linear_is_exact_on_lines(a in -5.0f64..5.0, b in -5.0f64..5.0, mask in prop::collection::vec(any::<bool>(), 30)) {
        let mut m = mask;
        m[0] = true;
        m[29] = true;
        let v: Vec<f64> = (0..30).map(|t| if m[t] { a * t as f64 + b } else { f64::NAN }).collect();
        let out = impute_series(Fill::Linear, &v, &m).unwrap();
        for (t, y) in out.iter().enumerate() {
            prop_assert!((y - (a * t as f64 + b)).abs() < 1e-9);
        }
    }

    #[test]
    fn cubic_spline_reproduces_cubics(c in prop::array::uniform4(-1.0f64..1.0), mask in prop::collection::vec(any::<bool>(), 25)) {
        let f = |t: f64| c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t / 10.0;
        let mut m = mask;
        for k in [0, 7, 16, 24] {
            m[k] = true;
        }
        let v: Vec<f64> = (0..25).map(|t| if m[t] { f(t as f64) } else { f64::NAN }).collect();
        let out = impute_spline(&v, &m, 3).unwrap();
        let q = impute_spline(&v, &m, 2).unwrap();
        for t in 0..25 {
            prop_assert!((out[t] - f(t as f64)).abs() < 1e-9 * f(t as f64).abs().max(1.0));
            prop_assert!(q[t].is_finite());
        }
    }

    #[test]
    fn ratio_masks_hit_the_target_exactly(
        len in 40usize..300,
        ratio in 0.01f64..0.4,
        lo in 1usize..6,
        extra in 0usize..20,
        seed in any::<u64>(),
    ) {
        let series = vec![(0..len).map(|t| t as f64).collect(), (0..len).map(|t| -(t as f64)).collect()];
        let f = frame(series);
        let classes = GapClasses::default();
        let plan = match masking::mask_by_ratio(&f, ratio, (lo, lo + extra), &classes, seed) {
            Ok(p) => p,
            Err(gapfill::Error::InfeasibleMask(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let target = (ratio * len as f64).round() as usize;
        prop_assert_eq!(plan.cells_per_channel(), vec![target, target]);
        for c in 0..2 {
            let mut gaps: Vec<_> = plan.gaps.iter().filter(|g| g.channel == c).collect();
            gaps.sort_by_key(|g| g.start);
            for w in gaps.windows(2) {
                prop_assert!(w[0].start + w[0].length < w[1].start, "gaps touch");
            }
            prop_assert!(gaps.iter().all(|g| g.length <= lo + extra && g.length >= 1));
        }
        let (masked, truth) = masking::apply(&f, &plan).unwrap();
        prop_assert_eq!(masked.observed_count(), 2 * len - 2 * target);
        prop_assert!(masking::restore(&masked, &truth).bit_eq(&f));
        let again = masking::mask_by_ratio(&f, ratio, (lo, lo + extra), &classes, seed).unwrap();
        prop_assert_eq!(again, plan);
    }

    #[test]
    fn sampled_gaps_avoid_unavailable_cells(avail in prop::collection::vec(any::<bool>(), 20..200), seed in any::<u64>()) {
        let n_avail = avail.iter().filter(|&&a| a).count();
        let target = n_avail / 5;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(gaps) = masking::sample_gaps(&avail, target, (1, 4), &mut rng) {
            prop_assert_eq!(gaps.iter().map(|g| g.1).sum::<usize>(), target);
            for &(s, l) in &gaps {
                prop_assert!(avail[s..s + l].iter().all(|&a| a));
            }
        }
    }

    #[test]
    fn metric_invariants(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..60)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = mae(&p, &t).unwrap();
        let r = rmse(&p, &t).unwrap();
        prop_assert!(a >= 0.0 && r + 1e-12 >= a);
        prop_assert_eq!(mae(&t, &t).unwrap(), 0.0);
        let c = pearson(&p, &t).unwrap().value;
        prop_assert!((-1.0..=1.0).contains(&c));
        // Spearman only sees ranks.
        let cubed: Vec<f64> = p.iter().map(|x| x.exp()).collect();
        prop_assert_eq!(spearman(&p, &t).unwrap().value, spearman(&cubed, &t).unwrap().value);
    }

    #[test]
    fn window_count_formula(n in 0usize..2000, w in 1usize..300, s in 1usize..200) {
        let starts = slice_windows(n, w, s);
        let want = if n < w { 0 } else { (n - w) / s + 1 };
        prop_assert_eq!(starts.len(), want);
        prop_assert!(starts.iter().all(|&o| o + w <= n && o % s == 0));
    }
}
