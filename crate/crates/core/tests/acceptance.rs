//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

use std::time::Instant;

use multiclp::arch::bundled;
use multiclp::cost::{self, ClpConfig, Tiling};
use multiclp::oracle::{self, Bounds};
use multiclp::sa::{self, SaParams};
use multiclp::ts::{self, TsParams};
use multiclp::{Architecture, CostReport, Evaluator, LayerConfig, Platform, Precision, Solution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FP32: Precision = Precision::Fp32;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn design(name: &str) -> Solution {
    Solution::from_json(bundled::design_json(name).unwrap()).unwrap()
}

fn report(arch: &Architecture, platform: &Platform, sol: &Solution) -> CostReport {
    Evaluator::new(arch, platform, FP32).report(sol).unwrap().1
}

fn alexnet() -> Architecture {
    bundled::architecture("alexnet").unwrap()
}

fn vc707() -> Platform {
    bundled::platform("vc707").unwrap()
}

fn vc709() -> Platform {
    bundled::platform("vc709").unwrap()
}

fn cycle_model() -> Outcome {
    let arch = alexnet();
    let r = report(&arch, &vc707(), &design("alexnet_single_vc707"));
    let expected = [732_000u64, 510_000, 338_000, 256_000, 170_000];
    let pairs: Vec<u64> = r.layers.chunks(2).map(|p| p.iter().map(|l| l.cycles).sum()).collect();
    let pairs_ok = pairs.iter().zip(expected).all(|(&got, want)| got.abs_diff(want) <= 500);
    let total_ok = r.cycles.abs_diff(2_006_000) <= 500 && (r.execution_time_ms - 20.06).abs() < 0.005;
    check(
        pairs_ok && total_ok && pairs.len() == 5,
        format!("layer pairs {pairs:?}, total {} ({:.2} ms)", r.cycles, r.execution_time_ms),
    )
}

fn multi_clp_evaluation() -> Outcome {
    let arch = alexnet();
    let plat = vc707();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, want) in [("baseline", 1_558_000u64), ("sa", 1_531_000), ("ts", 1_532_000)] {
        let start = Instant::now();
        let r = report(&arch, &plat, &design(&format!("alexnet_{name}_vc707")));
        ok &= r.cycles.abs_diff(want) <= 1_000 && start.elapsed().as_secs_f64() < 1.0;
        parts.push(format!("{name} {}", r.cycles));
    }
    check(ok, parts.join(", "))
}

fn dsp_model() -> Outcome {
    let arch = alexnet();
    let plat = vc707();
    let mut parts = Vec::new();
    let mut ok = true;
    let mut brams = Vec::new();
    for (name, published_bram) in [("single", 618u64), ("baseline", 731), ("sa", 644), ("ts", 648)] {
        let r = report(&arch, &plat, &design(&format!("alexnet_{name}_vc707")));
        ok &= r.dsp == 2240 && r.bram <= plat.bram_max();
        parts.push(format!("{name} {}", r.dsp));
        let off = (r.bram as f64 - published_bram as f64) / published_bram as f64 * 100.0;
        brams.push(format!("{name} {} vs {published_bram} ({off:+.0}%)", r.bram));
    }
    let example = Solution::new(
        vec![
            ClpConfig::new(3, 5),
            ClpConfig::new(4, 1),
            ClpConfig::new(1, 1),
            ClpConfig::new(7, 2),
            ClpConfig::new(3, 6),
        ],
        vec![2, 1, 2, 0, 0],
    );
    let small = cost::dsp_usage(&example, FP32);
    ok &= small == 100;
    check(
        ok,
        format!("{}, assignment example {small}; BRAM (informational) {}", parts.join(", "), brams.join(", ")),
    )
}

fn utilization() -> Outcome {
    let arch = alexnet();
    let single = report(&arch, &vc707(), &design("alexnet_single_vc707")).utilization;
    let sa = report(&arch, &vc709(), &design("alexnet_sa_vc709")).utilization;
    check(
        (single - 0.741).abs() <= 0.003 && (sa - 0.981).abs() <= 0.003,
        format!("single-CLP 485T {:.2}%, SA 690T {:.2}%", single * 100.0, sa * 100.0),
    )
}

fn performance() -> Outcome {
    let arch = alexnet();
    let baseline = report(&arch, &vc707(), &design("alexnet_baseline_vc707")).performance_gops;
    let sa = report(&arch, &vc709(), &design("alexnet_sa_vc709")).performance_gops;
    check(
        (baseline / 85.2 - 1.0).abs() <= 0.02 && (sa / 113.9 - 1.0).abs() <= 0.02,
        format!("baseline 485T {baseline:.2} GFLOP/s, SA 690T {sa:.2} GFLOP/s"),
    )
}

fn search_quality() -> Outcome {
    const BAR: u64 = 1_558_000;
    let arch = alexnet();
    let plat = vc707();
    let mut ok = true;
    let mut parts = Vec::new();
    for algo in ["SA", "TS"] {
        let mut cleared = 0;
        let mut best = u64::MAX;
        let mut slowest: f64 = 0.0;
        for batch in 0..10u64 {
            let mut batch_best = u64::MAX;
            for seed in batch * 10..batch * 10 + 10 {
                let start = Instant::now();
                let out = if algo == "SA" {
                    sa::run(&arch, &plat, FP32, &SaParams::default().with_seed(seed))
                } else {
                    ts::run(&arch, &plat, FP32, &TsParams::default().with_seed(seed))
                }
                .unwrap();
                slowest = slowest.max(start.elapsed().as_secs_f64());
                batch_best = batch_best.min(out.cost.cycles);
            }
            cleared += usize::from(batch_best <= BAR);
            best = best.min(batch_best);
        }
        ok &= cleared >= 8 && slowest < 60.0;
        parts.push(format!(
            "{algo} {cleared}/10 batches <= {BAR}, best {best}, slowest run {slowest:.1} s"
        ));
    }
    check(ok, parts.join("; "))
}

fn toy_platform(dsp: u32) -> Platform {
    Platform::from_json(&format!(
        r#"{{"name":"toy{dsp}","dsp":{dsp},"bram18k":400,"bw_gbs":12.8,"freq_mhz":100.0,"util_cap":1.0}}"#
    ))
    .unwrap()
}

fn oracle_equivalence() -> Outcome {
    let cases: [([u32; 6], [u32; 6], u32); 4] = [
        ([4, 4, 4, 4, 2, 1], [4, 8, 4, 4, 2, 1], 15),
        ([3, 5, 6, 6, 3, 1], [6, 2, 5, 5, 1, 1], 20),
        ([2, 7, 8, 8, 2, 2], [8, 3, 4, 4, 3, 1], 20),
        ([5, 5, 7, 3, 3, 2], [1, 8, 6, 6, 2, 1], 10),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (a, b, dsp)) in cases.into_iter().enumerate() {
        let arch = Architecture::new(
            format!("toy{i}"),
            vec![LayerConfig::new(0, "t1", a), LayerConfig::new(1, "t2", b)],
        )
        .unwrap();
        let plat = toy_platform(dsp);
        let truth = oracle::exhaustive_search(&arch, &plat, FP32, &Bounds::for_arch(&arch)).unwrap();
        let s = sa::run(&arch, &plat, FP32, &SaParams::default()).unwrap();
        let t = ts::run(&arch, &plat, FP32, &TsParams::default()).unwrap();
        let same = s.cost == truth.cost && t.cost == truth.cost;
        ok &= same;
        parts.push(format!(
            "#{i} oracle {} sa {} ts {}{}",
            truth.cost.cycles,
            s.cost.cycles,
            t.cost.cycles,
            if same { "" } else { " MISMATCH" }
        ));
    }
    check(ok, parts.join(", "))
}

fn simulator_equivalence() -> Outcome {
    let sweep = oracle::simulator_sweep(8, 6, 3, 3);
    let worked = oracle::simulate_clp(
        &LayerConfig::new(0, "worked", [3, 4, 5, 5, 2, 1]),
        ClpConfig::new(2, 3),
        Tiling::new(2, 2),
    )
    .unwrap();
    check(
        sweep.mismatches() == 0 && worked.cycles == 400,
        format!(
            "{} points, {} mismatches, worked example {} cycles",
            sweep.points,
            sweep.mismatches(),
            worked.cycles
        ),
    )
}

fn random_layer(rng: &mut ChaCha8Rng) -> [u32; 6] {
    let k = rng.gen_range(1..=5);
    [
        rng.gen_range(1..=64),
        rng.gen_range(1..=64),
        rng.gen_range(1..=32),
        rng.gen_range(1..=32),
        k,
        rng.gen_range(1..=k.max(2)),
    ]
}

fn properties() -> Outcome {
    const CASES: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let plat = vc707();
    let mut failures = Vec::new();

    for _ in 0..CASES {
        let layer = LayerConfig::new(0, "x", random_layer(&mut rng));
        let clp = ClpConfig::new(rng.gen_range(1..=64), rng.gen_range(1..=64));
        let wider = ClpConfig::new(clp.tn + rng.gen_range(0..8), clp.tm + rng.gen_range(0..8));
        if cost::comp_cycles(&layer, wider) > cost::comp_cycles(&layer, clp) {
            failures.push("comp_cycles monotonicity");
        }
        let t = Tiling::new(rng.gen_range(1..=layer.rows), rng.gen_range(1..=layer.cols));
        if cost::attainable_perf(&layer, clp, t, &plat, FP32) > cost::comp_perf(&layer, clp) * (1.0 + 1e-12) {
            failures.push("roofline bound");
        }
        let u = cost::layer_utilization(&layer, clp);
        if !(u > 0.0 && u <= 1.0) {
            failures.push("utilization range");
        }
    }

    let budget_plat = toy_platform(200);
    let mut evaluated = 0;
    while evaluated < CASES {
        let layers = rng.gen_range(1..=4);
        let arch = Architecture::new(
            "rand",
            (0..layers)
                .map(|i| {
                    let mut s = random_layer(&mut rng);
                    s[0] = s[0].min(16);
                    s[1] = s[1].min(16);
                    s[2] = s[2].min(12);
                    s[3] = s[3].min(12);
                    LayerConfig::new(i, format!("l{i}"), s)
                })
                .collect(),
        )
        .unwrap();
        let mut ev = Evaluator::new(&arch, &budget_plat, FP32);
        let slots = rng.gen_range(1..=layers + 1);
        let clps: Vec<ClpConfig> = (0..slots)
            .map(|_| ClpConfig::new(rng.gen_range(1..=4), rng.gen_range(1..=4)))
            .collect();
        let assignment: Vec<usize> = (0..layers).map(|_| rng.gen_range(0..slots)).collect();
        let sol = Solution::new(clps, assignment);
        let Some(base) = ev.try_evaluate(&sol) else { continue };
        let mut perm: Vec<usize> = (0..slots).collect();
        for i in (1..slots).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut clps = sol.clps.clone();
        for (g, &to) in perm.iter().enumerate() {
            clps[to] = sol.clps[g];
        }
        let permuted = Solution::new(clps, sol.assignment.iter().map(|&g| perm[g]).collect()).padded(slots + 2);
        match ev.try_evaluate(&permuted) {
            Some(e) if e.cost == base.cost => {}
            _ => failures.push("permutation invariance"),
        }
        evaluated += 1;
    }

    let tiny = bundled::architecture("tiny").unwrap();
    let toy = bundled::platform("toy").unwrap();
    let runs = 500;
    let mut records = 0;
    for i in 0..runs {
        let seed = rng.gen::<u64>();
        let (a, b) = if i % 2 == 0 {
            let p = SaParams {
                max_time: 30,
                seed,
                ..SaParams::default()
            };
            (sa::run(&tiny, &toy, FP32, &p).unwrap(), sa::run(&tiny, &toy, FP32, &p).unwrap())
        } else {
            let p = TsParams {
                max_time: 30,
                seed,
                ..TsParams::default()
            };
            (ts::run(&tiny, &toy, FP32, &p).unwrap(), ts::run(&tiny, &toy, FP32, &p).unwrap())
        };
        records += a.trace.len();
        if a.trace != b.trace || a.best != b.best {
            failures.push("seed determinism");
        }
        if !a.trace.windows(2).all(|w| w[1].best_cost <= w[0].best_cost) {
            failures.push("best-cost monotonicity");
        }
    }

    failures.sort_unstable();
    failures.dedup();
    check(
        failures.is_empty() && records >= CASES,
        format!(
            "{CASES} formula cases, {CASES} permuted designs, {runs} paired runs ({records} trace records){}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failures.join(", "))
            }
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("cycle model (single CLP)", cycle_model),
        ("multi-CLP evaluation", multi_clp_evaluation),
        ("DSP model", dsp_model),
        ("arithmetic utilization", utilization),
        ("performance", performance),
        ("search quality", search_quality),
        ("oracle equivalence", oracle_equivalence),
        ("simulator equivalence", simulator_equivalence),
        ("property suite", properties),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {} {verdict}: {name}: {} [{:.1} s]",
            i + 1,
            out.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
