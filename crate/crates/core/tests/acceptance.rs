//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gatedrag::eval::{evaluate_run, exact_match, f1_score, normalize_answer, RunReport};
use gatedrag::gate::{Mode, PipelineConfig};
use gatedrag::geometry::{ais_score, fit_alpha_model, AngleSample};
use gatedrag::index::{Retriever, VectorIndex};
use gatedrag::selection::{dual_path_retrieve, select};
use gatedrag::{Candidate, Chunk, EmbeddingVector, SelectionConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit(rng: &mut impl Rng, dim: usize) -> EmbeddingVector {
    let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    EmbeddingVector::normalize(&raw).unwrap()
}

fn angle_sum_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = Uniform::new_inclusive(-1.0f64, 1.0).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let (s1, s2) = (u.sample(&mut rng), u.sample(&mut rng));
        let oracle = (s1.acos() + s2.acos()).cos();
        let got = ais_score(s1, s2).map_err(|e| e.to_string())?;
        worst = worst.max((got - oracle).abs());
    }
    check(worst < 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("100000 samples, max deviation {worst:.1e}"))
}

/// Scores drawn from a small grid so exact ties are common.
fn random_similarity(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.5) {
        [-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0][rng.random_range(0..7)]
    } else {
        rng.random_range(-1.0..=1.0)
    }
}

fn selection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let probe = EmbeddingVector::normalize(&[1.0, 0.0]).unwrap();
    let mut ties = 0usize;
    for case in 0..1000 {
        let size = rng.random_range(1..=50);
        let k = rng.random_range(1..=10);
        let mut ids: Vec<usize> = (0..size).collect();
        ids.shuffle(&mut rng);
        let cands: Vec<Candidate> = ids
            .iter()
            .map(|i| {
                let (s1, s2) = (random_similarity(&mut rng), random_similarity(&mut rng));
                Candidate::new(format!("d{i}"), "", s1, s2)
            })
            .collect();

        let mut oracle: Vec<(f64, String)> = cands
            .iter()
            .map(|c| {
                let score = c.s1 * c.s2 - (1.0 - c.s1 * c.s1).sqrt() * (1.0 - c.s2 * c.s2).sqrt();
                (score, c.chunk_id.clone())
            })
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        ties += oracle.windows(2).filter(|w| w[0].0 == w[1].0).count();
        let want: Vec<String> = oracle.into_iter().take(k).map(|(_, id)| id).collect();

        let config = SelectionConfig {
            n: 50,
            k,
            ..SelectionConfig::default()
        };
        let got: Vec<String> = select(cands, &config, &probe, &probe)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|c| c.chunk_id)
            .collect();
        check(got == want, || format!("case {case}: got {got:?}, want {want:?}"))?;
    }
    check(ties > 0, || "no ties were generated".into())?;
    Ok(format!("1000 candidate sets, {ties} tied neighbours"))
}

fn oracle_top_n(index: &VectorIndex, probe: &EmbeddingVector, n: usize) -> Vec<(String, f64)> {
    let chunks = index.chunks();
    let mut all: Vec<(f64, usize)> = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let row = index.raw_embedding(&c.id).unwrap();
            let dot: f64 = probe
                .as_slice()
                .iter()
                .zip(row)
                .map(|(&p, &r)| p * f64::from(r))
                .sum();
            (dot.clamp(-1.0, 1.0), i)
        })
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| chunks[a.1].id.cmp(&chunks[b.1].id)));
    all.into_iter()
        .take(n)
        .map(|(s, i)| (chunks[i].id.clone(), s))
        .collect()
}

fn retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 16;
    let mut entries = 0usize;
    for case in 0..100 {
        let size = if case < 10 { 10_000 } else { rng.random_range(1..=10_000) };
        entries += size;
        let mut vectors: Vec<EmbeddingVector> = Vec::with_capacity(size);
        for i in 0..size {
            // Some duplicated rows to exercise id tie-breaking.
            if i > 0 && rng.random_bool(0.05) {
                let j = rng.random_range(0..i);
                vectors.push(vectors[j].clone());
            } else {
                vectors.push(unit(&mut rng, dim));
            }
        }
        let chunks = (0..size).map(|i| Chunk::new(format!("e{i:05}"), "")).collect();
        let index = VectorIndex::from_parts("synthetic", chunks, vectors).map_err(|e| e.to_string())?;

        for _ in 0..2 {
            let q = unit(&mut rng, dim);
            let p = unit(&mut rng, dim);
            let n = rng.random_range(1..=20);
            let mut want_union: Vec<String> = Vec::new();
            for probe in [&q, &p] {
                let got: Vec<(String, f64)> = index
                    .top_n(probe, n)
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|h| (h.chunk_id, h.similarity))
                    .collect();
                let want = oracle_top_n(&index, probe, n);
                check(got == want, || format!("case {case}: top_n differs from linear scan"))?;
                for (id, _) in want {
                    if !want_union.contains(&id) {
                        want_union.push(id);
                    }
                }
            }

            let union = dual_path_retrieve(&index, &q, &p, n).map_err(|e| e.to_string())?;
            let got: Vec<String> = union.iter().map(|c| c.chunk_id.clone()).collect();
            check(got == want_union, || {
                format!("case {case}: dual-path union {got:?} != {want_union:?}")
            })?;
            for c in &union {
                let d = index.raw_embedding(&c.chunk_id).unwrap();
                let dot = |v: &EmbeddingVector| -> f64 {
                    v.as_slice().iter().zip(d).map(|(&a, &b)| a * f64::from(b)).sum()
                };
                check((c.s1 - dot(&q)).abs() < 1e-6 && (c.s2 - dot(&p)).abs() < 1e-6, || {
                    format!("case {case}: s1/s2 off for {}", c.chunk_id)
                })?;
            }
        }
    }
    Ok(format!("100 indexes, {entries} entries"))
}

fn ra_report(records: &[gatedrag::eval::QARecord], config: PipelineConfig, w: &common::GateWorkload) -> Result<(RunReport, usize), String> {
    let (pipeline, counting) = w.pipeline(config);
    let results = pipeline.run_batch(records).map_err(|e| e.to_string())?;
    let report = evaluate_run(records, &results).map_err(|e| e.to_string())?;
    Ok((report, counting.activations()))
}

fn gate_efficiency() -> Outcome {
    let w = common::gate_workload(100, 25, 0, 0);
    let (report, activations) = ra_report(&w.records, PipelineConfig::default(), &w)?;
    let ra = report.aggregate.ra_ratio;
    check(ra == 0.75, || format!("ra_ratio {ra}"))?;
    check(activations == 75, || format!("{activations} retriever activations"))?;
    Ok(format!("ra_ratio {ra:.3}, {activations} activations"))
}

fn exclude_num() -> Outcome {
    let w = common::gate_workload(100, 25, 10, 5);
    let (base, base_act) = ra_report(&w.records, PipelineConfig::default(), &w)?;
    let config = PipelineConfig {
        exclude_num: true,
        ..PipelineConfig::default()
    };
    let (guarded, act) = ra_report(&w.records, config, &w)?;
    let (b, g) = (&base.aggregate, &guarded.aggregate);
    check(b.ra_ratio == 0.75 && base_act == 75, || format!("baseline ra_ratio {}", b.ra_ratio))?;
    check(g.ra_ratio == 0.85 && act == 85, || format!("ra_ratio {} with {act} activations", g.ra_ratio))?;
    check(g.em_mean >= b.em_mean && g.f1_mean >= b.f1_mean, || {
        format!("EM {} -> {}, F1 {} -> {}", b.em_mean, g.em_mean, b.f1_mean, g.f1_mean)
    })?;
    Ok(format!(
        "ra_ratio {:.3} -> {:.3}, EM {:.3} -> {:.3}",
        b.ra_ratio, g.ra_ratio, b.em_mean, g.em_mean
    ))
}

fn mini_benchmark() -> Outcome {
    let bench = common::mini_bench();
    check(bench.index.len() == 200 && bench.records.len() == 50, || "unexpected benchmark size".into())?;

    // The construction itself: hidden ground truth is outside the question's
    // top-n and inside the pseudo-context's.
    let standard = bench.pipeline(Mode::Standard);
    let n = standard.config().selection.n;
    let dual = bench.pipeline(Mode::DprAis);
    let mut hidden = 0;
    for rec in &bench.records {
        let r = dual.run_record(rec).map_err(|e| e.to_string())?;
        let gt = &rec.gt_chunk_ids.as_ref().unwrap()[0];
        let q = common::embed(&rec.question);
        let p = common::embed(r.pseudo_context.as_deref().unwrap_or_default());
        let in_q = bench.index.top_n(&q, n).unwrap().iter().any(|h| &h.chunk_id == gt);
        let in_p = bench.index.top_n(&p, n).unwrap().iter().any(|h| &h.chunk_id == gt);
        if !in_q && in_p {
            hidden += 1;
        }
    }
    check(hidden == 20, || format!("{hidden} queries reachable only via the pseudo-context"))?;

    let score = |pipeline: &gatedrag::gate::Pipeline| -> Result<f64, String> {
        let results = pipeline.run_batch(&bench.records).map_err(|e| e.to_string())?;
        Ok(evaluate_run(&bench.records, &results).map_err(|e| e.to_string())?.aggregate.em_mean)
    };
    let (em_standard, em_dual) = (score(&standard)?, score(&dual)?);
    check(em_dual > em_standard, || format!("dpr-ais EM {em_dual} vs standard {em_standard}"))?;
    Ok(format!("EM standard {em_standard:.3}, dpr-ais {em_dual:.3}, {hidden} hidden"))
}

fn regression_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let samples: Vec<AngleSample> = (0..5000)
        .map(|_| {
            let theta0 = rng.random_range(0.0..std::f64::consts::PI);
            AngleSample {
                theta0,
                theta1: 0.0,
                theta2: 0.0,
                alpha: 0.058 * theta0 + 0.455,
            }
        })
        .collect();
    let fit = fit_alpha_model(&samples).map_err(|e| e.to_string())?;
    let (ds, di) = ((fit.slope - 0.058).abs(), (fit.intercept - 0.455).abs());
    check(ds < 1e-6 && di < 1e-6, || format!("slope {} intercept {}", fit.slope, fit.intercept))?;
    Ok(format!("slope {:.9}, intercept {:.9}", fit.slope, fit.intercept))
}

fn random_answer(rng: &mut impl Rng) -> String {
    const WORDS: [&str; 12] = ["the", "a", "an", "Paris", "paris", "1848", "Blue", "blue,", "river", "Ohio!", "  ", "of"];
    let len = rng.random_range(0..6);
    (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn metric_suite() -> Outcome {
    let golds = |g: &[&str]| g.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let fail = |e: gatedrag::Error| e.to_string();
    check(normalize_answer("The  Eiffel Tower!") == "eiffel tower", || "normalize example".into())?;
    check(exact_match("the Eiffel tower", &golds(&["Eiffel Tower"])).map_err(fail)? == 1, || "em example".into())?;
    let f1 = f1_score("Eiffel", &golds(&["Eiffel Tower"])).map_err(fail)?;
    check((f1 - 2.0 / 3.0).abs() < 1e-12, || format!("f1 example {f1}"))?;
    check(exact_match("Paris", &golds(&["London", "paris"])).map_err(fail)? == 1, || "any-gold em".into())?;
    check(f1_score("", &golds(&["x"])).map_err(fail)? == 0.0, || "empty prediction f1".into())?;
    check(exact_match("x", &[]).is_err(), || "empty golds must be rejected".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let pred = random_answer(&mut rng);
        let gold = vec![random_answer(&mut rng)];
        let em = exact_match(&pred, &gold).map_err(fail)?;
        let f1 = f1_score(&pred, &gold).map_err(fail)?;
        check(f1 >= f64::from(em), || format!("f1 {f1} < em {em} for {pred:?} / {gold:?}"))?;
    }
    Ok("examples ok, f1 >= em on 10000 pairs".into())
}

fn persistence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let chunks: Vec<Chunk> = (0..1000)
        .map(|i| {
            let mut c = Chunk::new(format!("doc-{i:04}"), format!("text \"{i}\" with\nnewline é"));
            if i % 3 == 0 {
                c.title = Some(format!("title {i}"));
            }
            c
        })
        .collect();
    let vectors = (0..1000).map(|_| unit(&mut rng, 64)).collect();
    let index = VectorIndex::from_parts("hash:64:0", chunks, vectors).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    index.save(&a).map_err(|e| e.to_string())?;
    let loaded = VectorIndex::load(&a).map_err(|e| e.to_string())?;
    check(loaded == index, || "loaded index differs".into())?;
    loaded.save(&b).map_err(|e| e.to_string())?;
    for name in ["manifest.json", "embeddings.bin", "chunks.jsonl"] {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        check(x == y, || format!("{name} differs after round trip"))?;
    }
    Ok("1000 entries, files byte-identical".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 angle-sum identity", angle_sum_identity, Duration::from_secs(1)),
        ("2 selection oracle", selection_oracle, Duration::from_secs(5)),
        ("3 retrieval oracle", retrieval_oracle, Duration::from_secs(30)),
        ("4 gate efficiency", gate_efficiency, Duration::from_secs(5)),
        ("5 exclude_num", exclude_num, Duration::from_secs(5)),
        ("6 mini benchmark", mini_benchmark, Duration::from_secs(10)),
        ("7 alpha regression", regression_recovery, Duration::from_secs(1)),
        ("8 metric suite", metric_suite, Duration::from_secs(5)),
        ("9 persistence", persistence, Duration::from_secs(2)),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > budget => Err(format!("{detail}; took {took:?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({:.2}s)", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} ({:.2}s)", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
