//! Acceptance suite: one pass/fail line per criterion. Exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use emoq_core::data::pool_utterance;
use emoq_core::io;
use emoq_core::metrics::{js_divergence, macro_f1, normalized_entropy, top2_set_accuracy};
use emoq_core::pipeline::{default_budget, run_rq2, run_rq3, split_utterances, PipelineConfig};
use emoq_core::probe::{probe_predict, probe_train, LinearProbe, Objective, ProbeConfig};
use emoq_core::report::ALL;
use emoq_core::router::{route, route_batch, Aggregation, RouterBank};
use emoq_core::rvq::{continuous_bitrate, encode, nominal_bitrate_for, CodeSequence, Codebook, RvqStack, StackMeta};
use emoq_core::synth::{generate, SynthSpec};
use emoq_core::trainer::{assemble_training_set, train_rvq, KMeansConfig, TrainingRegime};
use emoq_core::{EmbeddingSet, EmotionLabel, Level, SoftLabel, Taxonomy, Utterance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("RVQ oracle equivalence", c1_oracle),
        ("monotone residuals", c2_monotone),
        ("metric identities", c3_metrics),
        ("probe correctness", c4_probe),
        ("matched vs balanced trend", c5_rq2),
        ("soft-label fidelity trend", c6_rq3),
        ("similarity routing", c7_routing),
        ("bitrate accounting", c8_bitrate),
        ("format roundtrips", c9_roundtrips),
        ("end-to-end determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into())),
        };
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({secs:.2}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({secs:.2}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn oracle_encode(stack: &RvqStack<f32>, z: &[f32]) -> Vec<u32> {
    let mut r: Vec<f64> = z.iter().map(|&v| v as f64).collect();
    let mut out = Vec::new();
    for stage in stack.stages() {
        let mut best = (0usize, f64::INFINITY);
        for k in 0..stage.entries() {
            let d: f64 = r.iter().zip(stage.codeword(k)).map(|(a, &b)| (a - b as f64).powi(2)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        for (a, &b) in r.iter_mut().zip(stage.codeword(best.0)) {
            *a -= b as f64;
        }
        out.push(best.0 as u32);
    }
    out
}

fn c1_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut vectors, mut mismatches) = (0, 0);
    while vectors < 1000 {
        let (d, k, l) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=4));
        let stages = (0..l)
            .map(|_| {
                let mut cw: Vec<f32> = (0..k * d).map(|_| rng.random_range(-2.0..2.0)).collect();
                // duplicated codewords force exact distance ties
                if k > 2 && rng.random_bool(0.3) {
                    let (src, dst) = (rng.random_range(0..k), rng.random_range(0..k));
                    let row: Vec<f32> = cw[src * d..(src + 1) * d].to_vec();
                    cw[dst * d..(dst + 1) * d].copy_from_slice(&row);
                }
                Codebook::new(k, d, cw).unwrap()
            })
            .collect();
        let stack = RvqStack::new(stages, StackMeta::default()).unwrap();
        let rows = 20;
        let v: Vec<f32> = (0..rows * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let set = EmbeddingSet::from_rows(d, v.clone(), &vec![EmotionLabel(0); rows], Taxonomy::canonical()).unwrap();
        let codes = encode(&set, &stack).unwrap();
        for (i, z) in v.chunks_exact(d).enumerate() {
            if codes.row(i) != oracle_encode(&stack, z).as_slice() {
                mismatches += 1;
            }
        }
        vectors += rows;
    }
    let elapsed = t.elapsed();
    check(mismatches == 0, format!("{mismatches} mismatches"))?;
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("{vectors} vectors, 0 mismatches in {elapsed:.2?}"))
}

fn residual_mse(stack: &RvqStack<f32>, data: &EmbeddingSet<f32>) -> Vec<f64> {
    let codes = encode(data, stack).unwrap();
    let d = data.dim();
    let mut mse = vec![0.0; stack.n_stages() + 1];
    for (i, z) in data.rows().enumerate() {
        let mut r: Vec<f64> = z.iter().map(|&v| v as f64).collect();
        mse[0] += r.iter().map(|v| v * v).sum::<f64>();
        for (l, &k) in codes.row(i).iter().enumerate() {
            for (a, &b) in r.iter_mut().zip(stack.stage(l).codeword(k as usize)) {
                *a -= b as f64;
            }
            mse[l + 1] += r.iter().map(|v| v * v).sum::<f64>();
        }
    }
    mse.iter().map(|v| v / (data.n_rows() * d) as f64).collect()
}

fn c2_monotone() -> Outcome {
    let set = generate(&SynthSpec { per_class: 200, frames: (2, 2), ..SynthSpec::default() }).unwrap();
    let budget = 400;
    let mut notes = Vec::new();
    for (l, k) in [(24, 2), (8, 32)] {
        for regime in [TrainingRegime::balanced(budget, 3), TrainingRegime::specific(EmotionLabel(1), budget / 2, 4)] {
            let stack = train_rvq(&set, &regime, l, k, &KMeansConfig::new(k, 9)).unwrap();
            let training = assemble_training_set(&set, &regime).unwrap();
            let mse = residual_mse(&stack, &training);
            for (s, w) in mse.windows(2).enumerate() {
                check(w[1] <= w[0], format!("{l}x{k} {:?}: stage {} mse {} > {}", regime.kind, s + 1, w[1], w[0]))?;
            }
            notes.push(format!("{l}x{k} {}: {:.3}->{:.3}", regime.kind.name(), mse[0], mse[l]));
        }
    }
    Ok(notes.join(", "))
}

fn c3_metrics() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    check(close(normalized_entropy(&[5, 5, 5, 5]), 1.0), "uniform entropy")?;
    check(close(normalized_entropy(&[9, 0, 0, 0]), 0.0), "collapsed entropy")?;
    check(close(normalized_entropy(&[3, 3, 0, 0]), 0.5), "half-uniform entropy")?;
    let p = [0.1, 0.2, 0.3, 0.4];
    let q = [0.4, 0.3, 0.2, 0.1];
    check(close(js_divergence(&p, &p).unwrap(), 0.0), "JSD(p,p)")?;
    check(close(js_divergence(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).unwrap(), 1.0), "JSD disjoint")?;
    check(js_divergence(&p, &q).unwrap() == js_divergence(&q, &p).unwrap(), "JSD symmetry")?;
    let a = vec![vec![0.6, 0.3, 0.1, 0.0]];
    let b = vec![vec![0.3, 0.6, 0.0, 0.1]];
    check(close(top2_set_accuracy(&a, &b).unwrap(), 1.0), "top-2 on swapped ranks")?;
    check(top2_set_accuracy(&a, &b).unwrap() == top2_set_accuracy(&b, &a).unwrap(), "top-2 symmetry")?;
    let y: Vec<EmotionLabel> = [0, 1, 2, 3, 1, 2].iter().map(|&c| EmotionLabel(c)).collect();
    check(close(macro_f1(&y, &y, 4).unwrap().macro_f1, 1.0), "perfect macro-F1")?;
    Ok("entropy, JSD, top-2 and macro-F1 identities hold".into())
}

fn c4_probe() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let obj = Objective {
        classes: 3,
        dim: 4,
        x: (0..20).map(|_| rng.random_range(-1.0..1.0)).collect(),
        y: vec![0, 1, 2, 1, 0],
        l2: 1e-2,
    };
    let params: Vec<f64> = (0..obj.n_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut worst = 0.0f64;
    for theta in [vec![0.0; obj.n_params()], params] {
        let (_, g) = obj.loss_and_grad(&theta);
        for i in 0..theta.len() {
            let h = 1e-5;
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (obj.loss(&up) - obj.loss(&dn)) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6));
        }
    }
    check(worst <= 1e-5, format!("finite-difference relative error {worst:e}"))?;

    // two blobs on either side of a random hyperplane with margin
    let d = 8;
    let normal: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (mut x, mut labels) = (Vec::new(), Vec::new());
    while labels.len() < 400 {
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = p.iter().zip(&normal).map(|(a, b)| a * b).sum::<f64>() / norm;
        if s.abs() < 0.3 {
            continue;
        }
        x.extend(p.iter().map(|&v| v as f32));
        labels.push(EmotionLabel(u8::from(s > 0.0)));
    }
    let xs: Vec<Vec<f32>> = x.chunks(d).map(<[f32]>::to_vec).collect();
    check(perceptron_separates(&xs, &labels), "perceptron oracle found the blobs inseparable")?;
    let set = EmbeddingSet::from_rows(d, x, &labels, Taxonomy::with_classes(2).unwrap()).unwrap();
    let probe = probe_train(&set, &ProbeConfig { max_epochs: 2000, l2: 1e-6, ..ProbeConfig::default() }).unwrap();
    let pred = probe_predict(&probe, &set).unwrap();
    let acc = pred.hard.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64;
    check(acc >= 0.99, format!("training accuracy {acc}"))?;
    let hist = &probe.meta().unwrap().loss_history;
    check(hist.windows(2).all(|w| w[1] <= w[0]), "training loss increased")?;
    Ok(format!("max FD error {worst:.1e}, separable accuracy {acc:.3}, loss {:.4}->{:.4}", hist[0], hist[hist.len() - 1]))
}

fn perceptron_separates(x: &[Vec<f32>], y: &[EmotionLabel]) -> bool {
    let d = x[0].len();
    let mut w = vec![0.0f64; d + 1];
    for _ in 0..10_000 {
        let mut errors = 0;
        for (p, l) in x.iter().zip(y) {
            let t = if l.0 == 1 { 1.0 } else { -1.0 };
            let s = w[d] + p.iter().zip(&w).map(|(&a, b)| a as f64 * b).sum::<f64>();
            if t * s <= 0.0 {
                errors += 1;
                for (wi, &a) in w.iter_mut().zip(p) {
                    *wi += t * a as f64;
                }
                w[d] += t;
            }
        }
        if errors == 0 {
            return true;
        }
    }
    false
}

fn c5_rq2() -> Outcome {
    let t = Instant::now();
    let set = generate(&SynthSpec::default()).unwrap();
    let r = run_rq2(&set, &PipelineConfig { stages: 24, entries: 2, ..PipelineConfig::default() }).unwrap();
    let at = |m: &str| r.get(1, ALL, m).unwrap();
    let (mc, bc) = (at("matched.cosine"), at("balanced.cosine"));
    let (mr, br, ur) = (at("matched.recall"), at("balanced.recall"), at("unmatched.recall"));
    check(mc > bc, format!("matched cosine {mc} <= balanced {bc}"))?;
    check(mr > br, format!("matched recall {mr} <= balanced {br}"))?;
    check(ur < mr, format!("unmatched recall {ur} >= matched {mr}"))?;
    check(t.elapsed() < Duration::from_secs(120), format!("took {:?}", t.elapsed()))?;
    Ok(format!("depth 1: cosine matched {mc:.3} > balanced {bc:.3}; recall matched {mr:.3} > balanced {br:.3}, unmatched {ur:.3}"))
}

fn c6_rq3() -> Outcome {
    let set = generate(&SynthSpec { separation: 12.0, ambiguity_fraction: 0.3, ..SynthSpec::default() }).unwrap();
    let r = run_rq3(&set, &PipelineConfig { stages: 8, entries: 8, ..PipelineConfig::default() }, &[100]).unwrap();
    let mut notes = Vec::new();
    for stratum in ["low", "high"] {
        let g = |regime: &str, m: &str| r.get(1, ALL, &format!("{regime}.{stratum}.{m}")).unwrap();
        let (sj, bj) = (g("100+0", "jsd"), g("balanced", "jsd"));
        let (st, bt) = (g("100+0", "top2"), g("balanced", "top2"));
        check(sj < bj, format!("{stratum}: specialized JSD {sj} >= balanced {bj}"))?;
        check(st > bt, format!("{stratum}: specialized top-2 {st} <= balanced {bt}"))?;
        notes.push(format!("{stratum}: JSD {sj:.4} < {bj:.4}, top-2 {st:.3} > {bt:.3}"));
    }
    Ok(notes.join("; "))
}

fn oracle_route(bank: &RouterBank<f32>, z: &[f32]) -> (usize, Vec<f64>) {
    let n = z.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    let x: Vec<f32> = z.iter().map(|&v| (v as f64 / n) as f32).collect();
    let scores: Vec<f64> = bank
        .stacks()
        .iter()
        .map(|s| {
            let idx = oracle_encode(s, &x);
            let mut e = vec![0.0f64; x.len()];
            for (l, &k) in idx.iter().enumerate().take(bank.depth()) {
                for (a, &c) in e.iter_mut().zip(s.stage(l).codeword(k as usize)) {
                    *a += c as f64;
                }
            }
            let dot: f64 = x.iter().zip(&e).map(|(&a, b)| a as f64 * b).sum();
            let nx = x.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
            let ne = e.iter().map(|a| a * a).sum::<f64>().sqrt();
            dot / (nx * ne)
        })
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    (best, scores)
}

fn c7_routing() -> Outcome {
    let set = generate(&SynthSpec { frames: (4, 4), ambiguity_fraction: 0.0, ..SynthSpec::default() }).unwrap();
    let pooled = pool_utterance(&set).unwrap();
    let split = split_utterances(&pooled, 11);
    let train = pooled.subset(&split.train).l2_normalized().unwrap();
    let test = set.subset(&split.test);
    let budget = default_budget(&train);
    let stacks: Vec<RvqStack<f32>> = (0..4)
        .map(|e| {
            let regime = TrainingRegime::specific(EmotionLabel(e), budget, 20 + e as u64);
            train_rvq(&train, &regime, 8, 32, &KMeansConfig::new(32, 30 + e as u64)).unwrap()
        })
        .collect();
    let bank = RouterBank::new(stacks, 1, true).unwrap();
    let routed = route_batch(&test, &bank, None, Aggregation::Pooled).unwrap();
    let f1 = routed.report.get(1, ALL, "macro_f1").unwrap();
    check(f1 >= 0.95, format!("macro-F1 {f1}"))?;

    let test_pooled = pool_utterance(&test).unwrap();
    let mut disagreements = 0;
    for (i, z) in test_pooled.rows().enumerate() {
        let (label, scores) = oracle_route(&bank, z);
        let r = route(z, &bank).unwrap();
        let close = r.scores.iter().zip(&scores).all(|(a, b)| (a - b).abs() < 1e-9);
        if r.label.index() != label || routed.labels[i].index() != label || !close {
            disagreements += 1;
        }
        for alpha in [0.1f32, 1.0, 10.0] {
            let scaled: Vec<f32> = z.iter().map(|&v| v * alpha).collect();
            let s = route(&scaled, &bank).unwrap();
            check(s.label == r.label && s.codes == r.codes, format!("item {i} changed under scale {alpha}"))?;
        }
    }
    check(disagreements == 0, format!("{disagreements} items differ from the brute-force router"))?;
    Ok(format!("8x32 depth 1 macro-F1 {f1:.4} on {} items, oracle agreement and scale invariance hold", test_pooled.n_rows()))
}

fn c8_bitrate() -> Outcome {
    let nominal = nominal_bitrate_for(32, 8, 50.0).unwrap();
    let continuous = continuous_bitrate(768, 32, 50.0);
    check(nominal == 2000.0, format!("nominal {nominal}"))?;
    check(continuous == 1_228_800.0, format!("continuous {continuous}"))?;
    let ratio = continuous / nominal;
    check(ratio > 500.0, format!("ratio {ratio}"))?;
    Ok(format!("{nominal} bps vs {continuous} bps, {ratio:.1}x"))
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn any_f32(rng: &mut ChaCha8Rng) -> f32 {
    loop {
        let v = f32::from_bits(rng.random());
        if v.is_finite() {
            return v;
        }
    }
}

fn c9_roundtrips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..100 {
        let d = rng.random_range(1..=12);
        let mut utts = Vec::new();
        let mut start = 0;
        for u in 0..rng.random_range(1..=6) {
            let len = rng.random_range(1..=3);
            let label = EmotionLabel(rng.random_range(0..4));
            let mut votes = [0.0f64; 4];
            votes[label.index()] = 3.0;
            votes[rng.random_range(0..4)] += 1.0;
            utts.push(Utterance {
                uid: format!("c{case}u{u}"),
                label,
                soft: Some(SoftLabel::from_votes(&votes).unwrap()),
                frames: start..start + len,
                corpus: "acc".into(),
            });
            start += len;
        }
        let v: Vec<f32> = (0..start * d).map(|_| any_f32(&mut rng)).collect();
        let set = EmbeddingSet::new(d, v, utts, Level::Frame, Taxonomy::canonical()).unwrap();
        let (vp, mp) = (dir.path().join("e.embv"), dir.path().join("e.jsonl"));
        io::write_embeddings(&set, &vp, &mp).unwrap();
        let back = io::read_embeddings(&vp, &mp, &Taxonomy::canonical()).unwrap();
        check(bits(back.vectors()) == bits(set.vectors()) && back.utterances() == set.utterances(), format!("embeddings case {case}"))?;

        let (l, k) = (rng.random_range(1..=3), rng.random_range(1..=300));
        let stages = (0..l).map(|_| Codebook::new(k, d, (0..k * d).map(|_| any_f32(&mut rng)).collect()).unwrap()).collect();
        let meta = StackMeta { seed: rng.random(), ..StackMeta::default() };
        let stack = RvqStack::new(stages, meta).unwrap();
        let cp = dir.path().join("s.rvqc");
        io::write_codebook(&stack, &cp).unwrap();
        let sb = io::read_codebook(&cp).unwrap();
        let same = sb.meta() == stack.meta() && sb.stages().iter().zip(stack.stages()).all(|(a, b)| bits(a.codewords()) == bits(b.codewords()));
        check(same, format!("codebook case {case}"))?;

        let rows = rng.random_range(0..30);
        let codes = CodeSequence::new(l, k, (0..rows * l).map(|_| rng.random_range(0..k as u32)).collect()).unwrap();
        let ip = dir.path().join("c.rvqi");
        io::write_codes(&codes, &ip).unwrap();
        let cb = io::read_codes(&ip).unwrap();
        check(cb.indices() == codes.indices() && cb.entries() == k && cb.n_stages() == l, format!("codes case {case}"))?;

        let c = rng.random_range(1..=5);
        let probe = LinearProbe::<f32>::new(c, d, (0..c * d).map(|_| any_f32(&mut rng)).collect(), (0..c).map(|_| any_f32(&mut rng)).collect()).unwrap();
        let pp = dir.path().join("p.prbe");
        io::write_probe(&probe, &pp).unwrap();
        let pb = io::read_probe(&pp).unwrap();
        check(bits(pb.weights()) == bits(probe.weights()) && bits(pb.bias()) == bits(probe.bias()), format!("probe case {case}"))?;
    }
    Ok("100 randomized instances per format are bit-identical".into())
}

fn emoq(args: &[&str], cwd: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_emoq")).args(args).current_dir(cwd).output().unwrap();
    assert!(out.status.success(), "emoq {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn csv_files(dir: &Path, prefix: &Path, out: &mut Vec<std::path::PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            csv_files(&p, prefix, out);
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p.strip_prefix(prefix).unwrap().to_path_buf());
        }
    }
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    emoq(&["synth", "--per-class", "500", "--frames", "2", "--seed", "3", "--out", "d.embv", "--manifest", "d.jsonl"], cwd);
    for out in ["run-a", "run-b"] {
        emoq(&["sweep", "--embeddings", "d.embv", "--manifest", "d.jsonl", "--seeds", "1,2", "--out", out], cwd);
    }
    let mut files = Vec::new();
    csv_files(&cwd.join("run-a"), &cwd.join("run-a"), &mut files);
    files.sort();
    check(files.len() >= 5, format!("only {} CSV files", files.len()))?;
    for f in &files {
        let a = std::fs::read(cwd.join("run-a").join(f)).unwrap();
        let b = std::fs::read(cwd.join("run-b").join(f)).map_err(|e| format!("{}: {e}", f.display()))?;
        check(a == b, format!("{} differs", f.display()))?;
    }
    Ok(format!("{} CSV files byte-identical across two sweeps", files.len()))
}
