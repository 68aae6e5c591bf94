//! Release gate. Each test is one acceptance check, so `cargo test` prints a
//! single pass/fail line per check.
//!
//! Structural claims (totals, deltas, shapes) run end to end through the
//! `detbench` binary and its JSON output. Numeric claims (convolution,
//! matching, NMS, the focusing law) are verified against oracles written from
//! scratch in this file, independent of the library implementations.

use std::process::Command;
use std::time::{Duration, Instant};

use detbench_core::cost::{count_model, CostReport};
use detbench_core::graph::{
    build_graph, parse_model_config, serialize_model_config, BASELINE_TEXT, FOSTC3NET_TEXT,
};
use detbench_core::loss::{focusing_gain, wiou_v3_loss, BBox, WiouState};
use detbench_core::metrics::{evaluate, nms, Detection, GroundTruth, STANDARD_IOU_THRESHOLDS};
use detbench_core::tensor::{conv2d, ConvWeights, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Run {
    status: i32,
    stdout: String,
    stderr: String,
    elapsed: Duration,
}

fn detbench(args: &[&str]) -> Run {
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_detbench"))
        .args(args)
        .output()
        .expect("failed to spawn detbench");
    Run {
        status: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        elapsed: started.elapsed(),
    }
}

fn json_stdout(run: &Run) -> Value {
    serde_json::from_str(&run.stdout)
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}):\n{}", run.stdout))
}

fn analyze_params(model: &str) -> (Run, f64, usize) {
    let run = detbench(&["analyze", "--model", model, "--nc", "4", "--imgsz", "640", "--json"]);
    assert_eq!(run.status, 0, "analyze {model} failed:\n{}", run.stderr);
    let v = json_stdout(&run);
    let params = v["totals"]["params"].as_f64().expect("totals.params");
    let rows = v["rows"].as_array().expect("rows").len();
    (run, params, rows)
}

#[test]
fn gate_01_baseline_params_within_3pct_of_7_102m_in_under_1s() {
    let (run, params, rows) = analyze_params("builtin:baseline");
    assert!(
        run.elapsed < Duration::from_secs(1),
        "analyze took {:?}, budget is 1s",
        run.elapsed
    );
    assert_eq!(rows, 25, "per-layer report must cover all 25 nodes");
    let target = 7.102e6;
    let rel = (params - target).abs() / target;
    if rel > 0.03 {
        let table = detbench(&["analyze", "--model", "builtin:baseline", "--nc", "4"]);
        panic!(
            "baseline params {params} deviate {:.2}% from {target} (budget 3%); \
             per-layer report for localizing the divergence:\n{}",
            rel * 100.0,
            table.stdout
        );
    }
}

fn builtin_diff() -> (Run, Value) {
    let run = detbench(&[
        "diff",
        "--a",
        "builtin:baseline",
        "--b",
        "builtin:fostc3net",
        "--nc",
        "4",
        "--imgsz",
        "640",
        "--json",
    ]);
    assert_eq!(run.status, 0, "diff failed:\n{}", run.stderr);
    let v = json_stdout(&run);
    (run, v)
}

#[test]
fn gate_02a_variant_cuts_params_by_26_61pct_within_4pp_in_under_1s() {
    let (run, v) = builtin_diff();
    assert!(
        run.elapsed < Duration::from_secs(1),
        "diff took {:?}, budget is 1s",
        run.elapsed
    );
    let actual = v["report"]["totals"]["params_delta_pct"]
        .as_f64()
        .expect("params_delta_pct");
    let (expected, band) = (-26.61, 4.0);
    assert!(
        (actual - expected).abs() <= band,
        "params delta {actual:+.2}% outside {expected:+.2}% ± {band}pp"
    );
}

#[test]
fn gate_02b_variant_cuts_gflops_by_13_09pct_within_4pp_in_under_1s() {
    let (run, v) = builtin_diff();
    assert!(
        run.elapsed < Duration::from_secs(1),
        "diff took {:?}, budget is 1s",
        run.elapsed
    );
    let actual = v["report"]["totals"]["gflops_delta_pct"]
        .as_f64()
        .expect("gflops_delta_pct");
    let (expected, band) = (-13.09, 4.0);
    if (actual - expected).abs() > band {
        let mut lines = String::new();
        for row in v["report"]["rows"].as_array().expect("rows") {
            let ma = row["macs_a"].as_f64().unwrap_or(0.0);
            let mb = row["macs_b"].as_f64().unwrap_or(0.0);
            if ma != mb {
                let pct = if ma > 0.0 { (mb - ma) / ma * 100.0 } else { f64::INFINITY };
                lines.push_str(&format!(
                    "  node {:>2} {:<10} -> {:<10} macs {:>13.0} -> {:>13.0} ({pct:+.1}%)\n",
                    row["i"],
                    row["kind_a"].as_str().unwrap_or("-"),
                    row["kind_b"].as_str().unwrap_or("-"),
                    ma,
                    mb,
                ));
            }
        }
        panic!(
            "gflops delta {actual:+.2}% outside {expected:+.2}% ± {band}pp; \
             layers that changed MACs:\n{lines}"
        );
    }
}

#[test]
fn gate_03_variant_params_within_6pct_of_5_212m() {
    let (_, params, _) = analyze_params("builtin:fostc3net");
    let target = 5.212e6;
    let rel = (params - target).abs() / target;
    assert!(
        rel <= 0.06,
        "variant params {params} deviate {:.2}% from {target} (budget 6%)",
        rel * 100.0
    );
}

#[test]
fn gate_04a_analytic_gradients_match_finite_differences_to_1e4() {
    let started = Instant::now();
    for loss in ["ciou", "wiou_v1", "wiou_v3"] {
        let run = detbench(&[
            "gradcheck",
            "--loss",
            loss,
            "--trials",
            "1000",
            "--seed",
            "0",
            "--tolerance",
            "1e-4",
            "--json",
        ]);
        assert_eq!(
            run.status, 0,
            "gradcheck {loss} failed:\n{}\n{}",
            run.stdout, run.stderr
        );
        let v = json_stdout(&run);
        assert_eq!(v["trials"].as_u64(), Some(1000), "{loss}");
        assert_eq!(v["pass"].as_bool(), Some(true), "{loss}:\n{}", run.stdout);
        let max_rel = v["max_rel_err"].as_f64().expect("max_rel_err");
        assert!(max_rel <= 1e-4, "{loss}: max rel err {max_rel:.3e}");
    }
    assert!(
        started.elapsed() < Duration::from_secs(5),
        "three gradchecks took {:?}, budget is 5s",
        started.elapsed()
    );
}

/// Direct seven-loop convolution with the same f64 accumulation order the
/// production kernel documents, written without looking at its code path.
fn conv2d_naive(input: &Tensor<f32>, w: &ConvWeights<f32>) -> Tensor<f32> {
    let [n, _c_in, h, wd] = input.shape();
    let [c_out, c_in_g, kh, kw] = w.kernel.shape();
    let c_out_g = c_out / w.groups;
    let (sh, sw) = w.stride;
    let (ph, pw) = w.padding;
    let out_h = (h + 2 * ph - kh) / sh + 1;
    let out_w = (wd + 2 * pw - kw) / sw + 1;
    let mut out = Tensor::zeros([n, c_out, out_h, out_w]);
    for ni in 0..n {
        for oc in 0..c_out {
            let g = oc / c_out_g;
            let bias = w.bias.as_ref().map_or(0.0, |b| f64::from(b[oc]));
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = 0.0f64;
                    for icl in 0..c_in_g {
                        let ic = g * c_in_g + icl;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (oh * sh + ki) as isize - ph as isize;
                                let iw = (ow * sw + kj) as isize - pw as isize;
                                if ih >= 0 && (ih as usize) < h && iw >= 0 && (iw as usize) < wd {
                                    acc += f64::from(input.at(ni, ic, ih as usize, iw as usize))
                                        * f64::from(w.kernel.at(oc, icl, ki, kj));
                                }
                            }
                        }
                    }
                    out.set(ni, oc, oh, ow, (acc + bias) as f32);
                }
            }
        }
    }
    out
}

#[test]
fn gate_04b_conv_kernel_matches_naive_reference_on_200_random_cases() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0117);
    let mut depthwise_cases = 0usize;
    for case in 0..200 {
        let n = rng.gen_range(1..=2);
        let h = rng.gen_range(1..=8);
        let wd = rng.gen_range(1..=8);
        let (c_in, c_out, groups) = match case % 3 {
            0 => (rng.gen_range(1..=8), rng.gen_range(1..=8), 1),
            1 => {
                let c = rng.gen_range(1..=8);
                (c, c, c)
            }
            _ => {
                let g = [1usize, 2, 4][rng.gen_range(0..3)];
                (g * rng.gen_range(1..=8 / g), g * rng.gen_range(1..=8 / g), g)
            }
        };
        if groups == c_in && groups > 1 {
            depthwise_cases += 1;
        }
        let p = rng.gen_range(0..=1usize);
        let mut k = rng.gen_range(1..=3usize);
        if p == 0 {
            k = k.min(h).min(wd);
        }
        let s = rng.gen_range(1..=2usize);
        let input = Tensor::<f32>::from_rng_uniform([n, c_in, h, wd], &mut rng, -1.0, 1.0);
        let kernel =
            Tensor::<f32>::from_rng_uniform([c_out, c_in / groups, k, k], &mut rng, -1.0, 1.0);
        let bias = if rng.gen_bool(0.5) {
            Some((0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect())
        } else {
            None
        };
        let weights = ConvWeights::new(kernel, bias, (s, s), (p, p), groups)
            .unwrap_or_else(|e| panic!("case {case}: bad weights: {e}"));
        let got = conv2d(&input, &weights).unwrap_or_else(|e| panic!("case {case}: {e}"));
        let want = conv2d_naive(&input, &weights);
        assert_eq!(got.shape(), want.shape(), "case {case}");
        for (i, (&a, &b)) in got.data().iter().zip(want.data()).enumerate() {
            let denom = f64::from(a.abs().max(b.abs()));
            let rel = if denom == 0.0 {
                0.0
            } else {
                f64::from((a - b).abs()) / denom
            };
            assert!(
                rel <= 1e-6,
                "case {case} element {i}: {a} vs {b} (rel {rel:.3e})"
            );
        }
    }
    assert!(depthwise_cases >= 20, "only {depthwise_cases} depthwise cases");
    assert!(
        started.elapsed() < Duration::from_secs(10),
        "200 cases took {:?}, budget is 10s",
        started.elapsed()
    );
}

#[test]
fn gate_04c_focusing_gain_unit_at_delta_peak_at_inv_ln_alpha_ema_rate_exact() {
    for alpha in [1.2f64, 1.9, 3.0] {
        for delta in [1.0f64, 2.0, 3.0, 5.0] {
            assert_eq!(
                focusing_gain(delta, alpha, delta),
                1.0,
                "gain at beta == delta must be exactly 1 (alpha {alpha}, delta {delta})"
            );
        }
    }

    for alpha in [1.5f64, 1.9, 3.0] {
        let delta = 3.0;
        let mut best_beta = 0.0;
        let mut best_r = f64::NEG_INFINITY;
        let mut k = 0usize;
        loop {
            let beta = 0.1 + k as f64 * 1e-3;
            if beta > 10.0 {
                break;
            }
            let r = focusing_gain(beta, alpha, delta);
            if r > best_r {
                best_r = r;
                best_beta = beta;
            }
            k += 1;
        }
        let theory = 1.0 / alpha.ln();
        assert!(
            (best_beta - theory).abs() <= 1e-3,
            "alpha {alpha}: sampled argmax {best_beta} vs 1/ln(alpha) = {theory}"
        );
    }

    let mut state = WiouState::<f64>::new(1.9, 3.0, 0.01).expect("default state");
    let p = BBox::new(0.0, 0.0, 2.0, 2.0);
    let g = BBox::new(0.0, 0.0, 2.0, 1.0);
    for _ in 0..5000 {
        let _ = wiou_v3_loss(&p, &g, &mut state);
    }
    let expected = 0.5 + 0.5 * 0.99f64.powi(5000);
    assert!(
        (state.mean() - expected).abs() <= 1e-9,
        "running mean {} after 5000 updates at 1-IoU = 0.5; geometric decay predicts {expected}",
        state.mean()
    );
}

fn oracle_iou(a: &BBox<f64>, b: &BBox<f64>) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Global confidence order as (image, index) pairs; ties prefer the earlier
/// image, then the earlier detection.
fn oracle_order(preds: &[Vec<Detection>]) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = preds
        .iter()
        .enumerate()
        .flat_map(|(i, v)| (0..v.len()).map(move |d| (i, d)))
        .collect();
    order.sort_by(|&(ia, da), &(ib, db)| {
        preds[ib][db]
            .confidence
            .total_cmp(&preds[ia][da].confidence)
            .then(ia.cmp(&ib))
            .then(da.cmp(&db))
    });
    order
}

/// Greedy matching in global confidence order: each detection takes the
/// unmatched same-class ground-truth box with the highest IoU at or above the
/// threshold, scanning boxes in index order so ties keep the lower index.
fn oracle_match(
    order: &[(usize, usize)],
    preds: &[Vec<Detection>],
    gts: &[Vec<GroundTruth>],
    thresh: f64,
) -> Vec<bool> {
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut flags = vec![false; order.len()];
    for (k, &(img, di)) in order.iter().enumerate() {
        let d = &preds[img][di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts[img].iter().enumerate() {
            if used[img][gi] || g.class_id != d.class_id {
                continue;
            }
            let v = oracle_iou(&d.bbox, &g.bbox);
            if v >= thresh && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            used[img][gi] = true;
            flags[k] = true;
        }
    }
    flags
}

/// All-point interpolated AP computed the slow way: for every recall level
/// i/gt reached by the i-th true positive, take the best precision at any
/// position with recall >= that level.
fn oracle_ap(flags: &[bool], gt_count: usize) -> f64 {
    let mut prec = Vec::with_capacity(flags.len());
    let mut reca = Vec::with_capacity(flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &f in flags {
        if f {
            tp += 1;
        } else {
            fp += 1;
        }
        prec.push(tp as f64 / (tp + fp) as f64);
        reca.push(tp as f64 / gt_count as f64);
    }
    let mut ap = 0.0;
    for i in 1..=tp {
        let level = i as f64 / gt_count as f64;
        let best = prec
            .iter()
            .zip(&reca)
            .filter(|&(_, &r)| r >= level)
            .map(|(&p, _)| p)
            .fold(0.0f64, f64::max);
        ap += best / gt_count as f64;
    }
    ap
}

fn oracle_map(
    preds: &[Vec<Detection>],
    gts: &[Vec<GroundTruth>],
    thresholds: &[f64],
    nc: usize,
) -> Vec<f64> {
    let order = oracle_order(preds);
    let gt_counts: Vec<usize> = (0..nc)
        .map(|c| gts.iter().flatten().filter(|g| g.class_id == c).count())
        .collect();
    thresholds
        .iter()
        .map(|&t| {
            let flags = oracle_match(&order, preds, gts, t);
            let mut aps = Vec::new();
            for (c, &count) in gt_counts.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let class_flags: Vec<bool> = order
                    .iter()
                    .zip(&flags)
                    .filter(|&(&(i, d), _)| preds[i][d].class_id == c)
                    .map(|(_, &f)| f)
                    .collect();
                aps.push(oracle_ap(&class_flags, count));
            }
            if aps.is_empty() {
                0.0
            } else {
                aps.iter().sum::<f64>() / aps.len() as f64
            }
        })
        .collect()
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox<f64> {
    let x1 = rng.gen_range(0.0..50.0);
    let y1 = rng.gen_range(0.0..50.0);
    let w = rng.gen_range(2.0..14.0);
    let h = rng.gen_range(2.0..14.0);
    BBox::new(x1, y1, x1 + w, y1 + h)
}

#[test]
fn gate_04d_evaluator_matches_exhaustive_oracle_on_50_micro_datasets() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD47A);
    for ds in 0..50 {
        let nc = rng.gen_range(1..=4usize);
        let n_imgs = rng.gen_range(1..=20usize);
        let mut gts_by_image = Vec::with_capacity(n_imgs);
        let mut preds_by_image = Vec::with_capacity(n_imgs);
        for _ in 0..n_imgs {
            let gts: Vec<GroundTruth> = (0..rng.gen_range(0..=5))
                .map(|_| GroundTruth {
                    bbox: random_box(&mut rng),
                    class_id: rng.gen_range(0..nc),
                })
                .collect();
            let preds: Vec<Detection> = (0..rng.gen_range(0..=5))
                .map(|_| {
                    let (bbox, class_id) = if !gts.is_empty() && rng.gen_bool(0.6) {
                        let g = gts[rng.gen_range(0..gts.len())];
                        let dx = rng.gen_range(-3.0..3.0);
                        let dy = rng.gen_range(-3.0..3.0);
                        (
                            BBox::new(g.bbox.x1 + dx, g.bbox.y1 + dy, g.bbox.x2 + dx, g.bbox.y2 + dy),
                            g.class_id,
                        )
                    } else {
                        (random_box(&mut rng), rng.gen_range(0..nc))
                    };
                    Detection {
                        bbox,
                        class_id,
                        confidence: f64::from(rng.gen_range(0..=20u32)) / 20.0,
                    }
                })
                .collect();
            gts_by_image.push(gts);
            preds_by_image.push(preds);
        }

        let report = evaluate(&preds_by_image, &gts_by_image, &STANDARD_IOU_THRESHOLDS, nc)
            .unwrap_or_else(|e| panic!("dataset {ds}: {e}"));
        let want = oracle_map(&preds_by_image, &gts_by_image, &STANDARD_IOU_THRESHOLDS, nc);
        for (k, (&got, &exp)) in report.map_by_threshold.iter().zip(&want).enumerate() {
            assert!(
                (got - exp).abs() <= 1e-12,
                "dataset {ds} threshold {}: mAP {got} vs oracle {exp}",
                STANDARD_IOU_THRESHOLDS[k]
            );
        }
        assert_eq!(report.map50, report.map_by_threshold[0], "dataset {ds}");
        assert!(
            report.map_mean <= report.map50 + 1e-12,
            "dataset {ds}: mAP@.5-.95 {} exceeds mAP@.5 {}",
            report.map_mean,
            report.map50
        );

        if gts_by_image.iter().any(|g| !g.is_empty()) {
            let perfect: Vec<Vec<Detection>> = gts_by_image
                .iter()
                .map(|gts| {
                    gts.iter()
                        .map(|g| Detection {
                            bbox: g.bbox,
                            class_id: g.class_id,
                            confidence: 0.9,
                        })
                        .collect()
                })
                .collect();
            let ideal = evaluate(&perfect, &gts_by_image, &STANDARD_IOU_THRESHOLDS, nc).unwrap();
            assert_eq!(ideal.map50, 1.0, "dataset {ds}: perfect predictions");
            assert_eq!(ideal.map_mean, 1.0, "dataset {ds}: perfect predictions");
            assert_eq!(ideal.precision, 1.0, "dataset {ds}: perfect predictions");
            assert_eq!(ideal.recall, 1.0, "dataset {ds}: perfect predictions");
        }
    }
    assert!(
        started.elapsed() < Duration::from_secs(10),
        "50 datasets took {:?}, budget is 10s",
        started.elapsed()
    );
}

/// Quadratic NMS by repeated max extraction: take the highest-confidence
/// surviving detection (earlier index on ties), then drop every same-class
/// survivor overlapping it strictly above the threshold.
fn nms_reference(dets: &[Detection], thresh: f64) -> Vec<Detection> {
    let mut alive = vec![true; dets.len()];
    let mut taken = vec![false; dets.len()];
    let mut kept = Vec::new();
    loop {
        let mut pick: Option<usize> = None;
        for i in 0..dets.len() {
            if alive[i]
                && !taken[i]
                && pick.is_none_or(|p| dets[i].confidence > dets[p].confidence)
            {
                pick = Some(i);
            }
        }
        let Some(p) = pick else { break };
        taken[p] = true;
        kept.push(dets[p]);
        for i in 0..dets.len() {
            if alive[i]
                && !taken[i]
                && dets[i].class_id == dets[p].class_id
                && oracle_iou(&dets[i].bbox, &dets[p].bbox) > thresh
            {
                alive[i] = false;
            }
        }
    }
    kept
}

#[test]
fn gate_04e_nms_matches_quadratic_reference_on_500_boxes_x_20_seeds() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let dets: Vec<Detection> = (0..500)
            .map(|_| {
                let x1 = rng.gen_range(0.0..100.0);
                let y1 = rng.gen_range(0.0..100.0);
                let w = rng.gen_range(1.0..30.0);
                let h = rng.gen_range(1.0..30.0);
                Detection {
                    bbox: BBox::new(x1, y1, x1 + w, y1 + h),
                    class_id: rng.gen_range(0..5),
                    confidence: f64::from(rng.gen_range(0..=64u32)) / 64.0,
                }
            })
            .collect();
        let thresh = [0.3, 0.45, 0.5, 0.7][(seed % 4) as usize];
        let got = nms(&dets, thresh).expect("nms");
        let want = nms_reference(&dets, thresh);
        assert_eq!(got, want, "seed {seed} thresh {thresh}");
    }
}

fn check_maps(model: &str, v: &Value, imgsz: u64) {
    let maps = v["maps"].as_array().expect("maps");
    assert_eq!(maps.len(), 3, "{model} at {imgsz}");
    for (m, stride) in maps.iter().zip([8u64, 16, 32]) {
        assert_eq!(m["stride"].as_u64(), Some(stride), "{model} at {imgsz}");
        let shape: Vec<u64> = m["shape"]
            .as_array()
            .expect("shape")
            .iter()
            .map(|x| x.as_u64().expect("dim"))
            .collect();
        assert_eq!(
            shape,
            vec![1, 27, imgsz / stride, imgsz / stride],
            "{model} at {imgsz}, stride {stride}"
        );
    }
    assert_eq!(v["all_finite"].as_bool(), Some(true), "{model} at {imgsz}");
}

#[test]
fn gate_05_detect_maps_have_contract_shapes_at_64_and_640_for_both_models() {
    for model in ["builtin:baseline", "builtin:fostc3net"] {
        let smoke = detbench(&[
            "forward", "--model", model, "--nc", "4", "--imgsz", "64", "--seed", "0", "--json",
        ]);
        assert_eq!(smoke.status, 0, "{model} at 64:\n{}", smoke.stderr);
        assert!(
            smoke.elapsed < Duration::from_secs(10),
            "{model} smoke at 64 took {:?}, budget is 10s",
            smoke.elapsed
        );
        check_maps(model, &json_stdout(&smoke), 64);

        let full = detbench(&[
            "forward", "--model", model, "--nc", "4", "--imgsz", "640", "--seed", "0", "--json",
        ]);
        assert_eq!(full.status, 0, "{model} at 640:\n{}", full.stderr);
        check_maps(model, &json_stdout(&full), 640);
    }
}

fn cost_of(text: &str, imgsz: usize) -> CostReport {
    let cfg = parse_model_config(text).expect("parse");
    let graph = build_graph(&cfg).expect("build");
    count_model(&graph, (imgsz, imgsz)).expect("count")
}

const PCONV_PROBE: &str = "\
nc: 1
depth_multiple: 1.0
width_multiple: 1.0
anchors:
  - [10, 13, 16, 30, 33, 23]
  - [30, 61, 62, 45, 59, 119]
  - [116, 90, 156, 198, 373, 326]
backbone:
  - [-1, 1, Conv, [32, 3, 2]]
  - [-1, 1, Conv, [64, 3, 2]]
  - [-1, 1, Conv, [64, 3, 2]]
  - [-1, 1, PConv, [64, 3]]
  - [-1, 1, Conv, [64, 3, 2]]
  - [-1, 1, Conv, [64, 3, 2]]
head:
  - [[3, 4, 5], 1, Detect, [nc, anchors]]
";

const CONV_PROBE: &str = "\
nc: 1
depth_multiple: 1.0
width_multiple: 1.0
anchors:
  - [10, 13, 16, 30, 33, 23]
  - [30, 61, 62, 45, 59, 119]
  - [116, 90, 156, 198, 373, 326]
backbone:
  - [-1, 1, Conv, [32, 3, 2]]
  - [-1, 1, Conv, [64, 3, 2]]
  - [-1, 1, Conv, [64, 3, 2]]
  - [-1, 1, Conv, [64, 3, 1]]
  - [-1, 1, Conv, [64, 3, 2]]
  - [-1, 1, Conv, [64, 3, 2]]
head:
  - [[3, 4, 5], 1, Detect, [nc, anchors]]
";

#[test]
fn gate_06_ghost_swap_never_adds_params_and_pconv_macs_are_exactly_one_16th() {
    let base = cost_of(BASELINE_TEXT, 640);
    let var = cost_of(FOSTC3NET_TEXT, 640);
    for i in [13usize, 17, 20, 23] {
        let (a, b) = (&base.rows[i], &var.rows[i]);
        assert_eq!(a.kind, "C3", "node {i} in the dense model");
        assert_eq!(b.kind, "C3Ghost", "node {i} in the variant");
        assert!(
            b.params <= a.params,
            "node {i}: ghost block has {} params, dense has {}",
            b.params,
            a.params
        );
    }

    for imgsz in [64usize, 128, 320] {
        let pconv = cost_of(PCONV_PROBE, imgsz).rows[3].macs;
        let dense = cost_of(CONV_PROBE, imgsz).rows[3].macs;
        assert_eq!(
            dense,
            16 * pconv,
            "at {imgsz}: partial conv over a quarter of the channels must cost \
             exactly (1/4)^2 of the dense conv"
        );
    }
}

fn random_junk_char(rng: &mut ChaCha8Rng) -> char {
    const POOL: &[char] = &[
        '[', ']', '-', ',', ':', '.', '#', ' ', '\n', '\t', '0', '1', '2', '5', '9', 'a', 'c',
        'n', 's', 'v', 'C', 'D', 'S', 'U', 'x', '_', '±', 'é',
    ];
    POOL[rng.gen_range(0..POOL.len())]
}

fn mutate_text(base: &str, rng: &mut ChaCha8Rng) -> String {
    let mut text = base.to_string();
    for _ in 0..rng.gen_range(1..=4usize) {
        let chars: Vec<char> = text.chars().collect();
        match rng.gen_range(0..7u8) {
            0 if !chars.is_empty() => {
                let mut c2 = chars;
                let i = rng.gen_range(0..c2.len());
                c2[i] = random_junk_char(rng);
                text = c2.into_iter().collect();
            }
            1 => {
                let mut c2 = chars;
                let i = rng.gen_range(0..=c2.len());
                c2.insert(i, random_junk_char(rng));
                text = c2.into_iter().collect();
            }
            2 if !chars.is_empty() => {
                let mut c2 = chars;
                let i = rng.gen_range(0..c2.len());
                let len = rng.gen_range(1..=8usize).min(c2.len() - i);
                c2.drain(i..i + len);
                text = c2.into_iter().collect();
            }
            3 => {
                let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
                if !lines.is_empty() {
                    let i = rng.gen_range(0..lines.len());
                    let line = lines[i].clone();
                    lines.insert(i, line);
                    text = lines.join("\n");
                }
            }
            4 => {
                let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
                if lines.len() > 1 {
                    lines.remove(rng.gen_range(0..lines.len()));
                    text = lines.join("\n");
                }
            }
            5 => {
                let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
                if lines.len() > 1 {
                    let i = rng.gen_range(0..lines.len());
                    let j = rng.gen_range(0..lines.len());
                    lines.swap(i, j);
                    text = lines.join("\n");
                }
            }
            _ if !chars.is_empty() => {
                let i = rng.gen_range(0..chars.len());
                text = chars[..i].iter().collect();
            }
            _ => {}
        }
    }
    text
}

#[test]
fn gate_07_parser_survives_10k_fuzzed_configs_and_locates_every_rejection() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let bases = [BASELINE_TEXT, FOSTC3NET_TEXT];
    for i in 0..10_000 {
        let text = mutate_text(bases[i % 2], &mut rng);
        match parse_model_config(&text) {
            Ok(cfg) => {
                let round = serialize_model_config(&cfg);
                let again = parse_model_config(&round).unwrap_or_else(|e| {
                    panic!("iteration {i}: accepted config failed to reparse: {e}\n{round}")
                });
                assert_eq!(again, cfg, "iteration {i}: round trip changed the config");
                let _ = build_graph(&cfg);
            }
            Err(e) => {
                assert!(e.line >= 1, "iteration {i}: rejection without a line: {e}");
                assert!(e.col >= 1, "iteration {i}: rejection without a column: {e}");
            }
        }
    }
}

#[test]
fn gate_08_v3_training_downweights_outliers_below_moderate_samples() {
    let run = detbench(&[
        "toytrain", "--loss", "wiou_v3", "--steps", "1000", "--lr", "0.1", "--seed", "0",
        "--easy", "90", "--outliers", "10", "--json",
    ]);
    assert_eq!(run.status, 0, "toytrain failed:\n{}", run.stderr);
    assert!(
        run.elapsed < Duration::from_secs(30),
        "toytrain took {:?}, budget is 30s",
        run.elapsed
    );
    let v = json_stdout(&run);
    let r_easy = v["mean_r_easy"].as_f64().expect("mean_r_easy");
    let r_outlier = v["mean_r_outlier"].as_f64().expect("mean_r_outlier");
    assert!(
        r_outlier < r_easy,
        "outlier focusing gain {r_outlier} should sit strictly below the \
         moderate-sample gain {r_easy} at step 1000"
    );
}
