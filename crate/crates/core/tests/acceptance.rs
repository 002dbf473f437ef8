//! Acceptance suite. Prints one PASS/FAIL line per criterion to stderr
//! (uncaptured, so the lines show in ordinary `cargo test` output) and
//! fails if any criterion fails.
//!
//! `cargo test -p hanmlm --test acceptance`

mod common;

use hanmlm::eval::{evaluate_models, log_perplexity, parse_grid, sweep_lambda, Curve, EvalConfig, ModelReport};
use hanmlm::hangul::{apply_map, compose_jamo, decompose, Syllable, SyllableMap, SYLLABLE_BASE, SYLLABLE_COUNT};
use hanmlm::model::{encode_checkpoint, init_params, Mode, ModelParams};
use hanmlm::synthetic::{ToyData, ToyExperiment};
use hanmlm::tokenizer::{Vocabulary, CONTINUATION, SPECIAL_TOKENS, UNK};
use hanmlm::training::{cross_lingual_penalty, total_loss, train, MaskedSequence, TrainConfig, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::io::Write as _;
use std::time::{Duration, Instant};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn report(n: usize, name: &str, verdict: &Verdict) {
    let (tag, detail) = match verdict {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let _ = writeln!(std::io::stderr(), "criterion {n} [{tag}] {name}: {detail}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn accuracy(r: &ModelReport, dataset: &str) -> f64 {
    r.dataset(dataset).expect("dataset in report").accuracy
}

// 1 ─ gradient correctness

fn gradients() -> Verdict {
    let t = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for lambda in [0.0, 0.5] {
        let (err, at) = common::max_relative_error(lambda, &[Mode::Eval; 3]);
        ok &= err < 1e-4;
        details.push(format!("λ={lambda} max rel err {err:.2e} ({at})"));
    }
    let elapsed = t.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    details.push(format!("{:.1}s", secs(elapsed)));
    check(ok, details.join("; "))
}

// 2 ─ loss identities

fn loss_identities(data: &ToyData, exp: &ToyExperiment) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let mlm: f64 = rng.random_range(0.0..50.0);
        let pen: f64 = rng.random_range(0.0..1e6);
        if total_loss(mlm, pen, 0.0) != mlm {
            return Err(format!("total_loss({mlm}, {pen}, 0) ≠ {mlm}"));
        }
    }

    let model = init_params::<f64>(&exp.model_config(data), 3);
    for enc in data.a_test.iter().take(20) {
        let masked = MaskedSequence::unmasked(enc);
        let h = model.encode(&masked.input, Mode::Eval).map_err(|e| e.to_string())?;
        let r = cross_lingual_penalty(&h, &h, &masked).map_err(|e| e.to_string())?;
        if r != 0.0 {
            return Err(format!("penalty(f, f) = {r}"));
        }
    }

    // Zero embeddings and zero output bias make every logit 0.
    let uniform = ModelParams::<f64>::zeros(&exp.model_config(data));
    let m = data.vocab.len() as f64;
    let lp = log_perplexity(&uniform, &data.a_test, &EvalConfig::default()).map_err(|e| e.to_string())?;
    let worst = lp.iter().map(|v| (v - m.ln()).abs()).fold(0.0, f64::max);
    check(
        worst < 1e-9,
        format!("total_loss exact at λ=0; R(f,f)=0; uniform log-ppl vs ln {m} off by {worst:.1e}"),
    )
}

// 3, 4 ─ forgetting and retention

struct Forgetting {
    base: ModelParams<f64>,
    base_report: ModelReport,
    pretrain_time: Duration,
}

fn finetune_and_score(
    exp: &ToyExperiment,
    data: &ToyData,
    f: &Forgetting,
    lambda: f64,
) -> Result<(ModelReport, TrainOutcome<f64>, Duration), String> {
    let t = Instant::now();
    let out = exp.finetune(data, &f.base, lambda).map_err(|e| e.to_string())?;
    let r = evaluate_models(&[(format!("λ={lambda}"), &out.params)], &data.test_sets(), &EvalConfig::default())
        .map_err(|e| e.to_string())?;
    Ok((r.models[0].clone(), out, t.elapsed() + f.pretrain_time))
}

fn forgetting(exp: &ToyExperiment, data: &ToyData, f: &Forgetting) -> Result<(Verdict, f64), String> {
    let (r, _, elapsed) = finetune_and_score(exp, data, f, 0.0)?;
    let drop = accuracy(&f.base_report, "a") - accuracy(&r, "a");
    let verdict = check(
        drop >= 15.0 && elapsed < Duration::from_secs(600),
        format!(
            "A accuracy {:.2} → {:.2} (drop {drop:.2}, need ≥ 15); {:.0}s",
            accuracy(&f.base_report, "a"),
            accuracy(&r, "a"),
            secs(elapsed)
        ),
    );
    Ok((verdict, drop))
}

fn retention(exp: &ToyExperiment, data: &ToyData, f: &Forgetting, plain_drop: f64) -> Verdict {
    let (r, _, elapsed) = finetune_and_score(exp, data, f, 0.3)?;
    let drop = accuracy(&f.base_report, "a") - accuracy(&r, "a");
    let gain = accuracy(&r, "b") - accuracy(&f.base_report, "b");
    check(
        drop < plain_drop / 2.0 && gain >= 10.0 && elapsed < Duration::from_secs(600),
        format!(
            "λ=0.3 A drop {drop:.2} (need < {:.2}); B {:.2} → {:.2} (gain {gain:.2}, need ≥ 10); {:.0}s",
            plain_drop / 2.0,
            accuracy(&f.base_report, "b"),
            accuracy(&r, "b"),
            secs(elapsed)
        ),
    )
}

// 5 ─ stray curves; 9 ─ sweep grid

fn stray_curves(plain: &Curve, regularized: &[(f64, Curve)]) -> Verdict {
    let plain_final = plain.last().ok_or("empty λ=0 curve")?;
    let mut ok = true;
    let mut worst_slope: (f64, f64) = (0.0, 0.0);
    let mut highest_final: (f64, f64) = (0.0, f64::NEG_INFINITY);
    for (lambda, c) in regularized {
        let last = c.last().ok_or(format!("empty curve for λ={lambda}"))?;
        let slope = c.last_quartile_change();
        ok &= last < plain_final && slope < 0.05;
        if slope > worst_slope.1 {
            worst_slope = (*lambda, slope);
        }
        if last > highest_final.1 {
            highest_final = (*lambda, last);
        }
    }
    check(
        ok,
        format!(
            "final L2 λ=0 {plain_final:.3} vs highest λ>0 {:.3} (λ={}); worst last-quartile |Δ| {:.2}% of max (λ={}, need < 5%)",
            highest_final.1,
            highest_final.0,
            worst_slope.1 * 100.0,
            worst_slope.0
        ),
    )
}

fn sweep_shape(table: &hanmlm::eval::SweepTable, elapsed: Duration) -> Verdict {
    let mut ok = table.rows.len() == 10 && table.datasets == ["a", "b"];
    for row in &table.rows {
        match &row.report {
            Some(r) => {
                ok &= r.datasets.len() == 2;
                ok &= r.datasets.iter().all(|d| d.perplexity.is_finite() && d.accuracy.is_finite());
                let mean_ppl = r.datasets.iter().map(|d| d.perplexity).sum::<f64>() / 2.0;
                let mean_acc = r.datasets.iter().map(|d| d.accuracy).sum::<f64>() / 2.0;
                ok &= (r.average_perplexity - mean_ppl).abs() < 1e-12 && (r.average_accuracy - mean_acc).abs() < 1e-12;
            }
            None => ok = false,
        }
    }
    let text = table.to_table_text();
    let body_rows = text.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count();
    ok &= body_rows == 10 && text.contains("avg ppl") && text.contains("avg acc");
    ok &= table.best_perplexity.is_some() && table.best_accuracy.is_some();
    ok &= elapsed < Duration::from_secs(3600);
    check(
        ok,
        format!(
            "{} λ rows × {} datasets × 2 metrics + averages; {:.0}s",
            table.rows.len(),
            table.datasets.len(),
            secs(elapsed)
        ),
    )
}

// 6 ─ tokenizer oracle

/// Whether `chars[start..]` can be split into vocabulary pieces, by dynamic
/// programming from the end of the word.
fn segmentable(vocab: &Vocabulary, chars: &[char]) -> bool {
    let n = chars.len();
    let piece = |i: usize, j: usize| {
        let body: String = chars[i..j].iter().collect();
        let token = if i == 0 { body } else { format!("{CONTINUATION}{body}") };
        vocab.id(&token).is_some()
    };
    let mut ok = vec![false; n + 1];
    ok[n] = true;
    for i in (0..n).rev() {
        ok[i] = (i + 1..=n).any(|j| ok[j] && piece(i, j));
    }
    ok[0]
}

/// Whether `pieces` spell `word` and each is the longest vocabulary match
/// at its offset.
fn is_longest_match_segmentation(vocab: &Vocabulary, word: &[char], pieces: &[&str]) -> bool {
    let mut at = 0;
    for (k, p) in pieces.iter().enumerate() {
        let body = if k == 0 { *p } else { p.strip_prefix(CONTINUATION).unwrap_or("\u{0}") };
        let len = body.chars().count();
        if len == 0 || word.get(at..at + len).map(|w| w.iter().collect::<String>()) != Some(body.to_string()) {
            return false;
        }
        let longer = (at + len + 1..=word.len()).any(|j| {
            let s: String = word[at..j].iter().collect();
            vocab.id(&if at == 0 { s } else { format!("{CONTINUATION}{s}") }).is_some()
        });
        if longer {
            return false;
        }
        at += len;
    }
    at == word.len()
}

fn tokenizer_oracle(data: &ToyData) -> Verdict {
    let vocab = &data.vocab;
    let known: Vec<char> = vocab.characters().into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let foreign = ['돎', '췰', 'x', '깃'];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut unk, mut agree) = (0, 0);
    for _ in 0..1000 {
        let len = rng.random_range(1..=8);
        let word: Vec<char> = (0..len)
            .map(|_| {
                if rng.random_bool(0.03) {
                    foreign[rng.random_range(0..foreign.len())]
                } else {
                    known[rng.random_range(0..known.len())]
                }
            })
            .collect();
        let text: String = word.iter().collect();
        let greedy = vocab.tokenize_word(&text);
        let valid = segmentable(vocab, &word);
        let consistent = match &greedy {
            Some(ids) => valid && is_longest_match_segmentation(vocab, &word, &vocab.pieces(ids)),
            None => !valid,
        };
        if !consistent {
            return Err(format!("greedy {greedy:?} disagrees with the oracle on {text:?}"));
        }
        agree += 1;
        unk += usize::from(greedy.is_none());
    }

    // Vocabulary of every piece in the published tokenizations; it lacks 돎 and 췰.
    let cases = [
        (
            "우리 천만군민으로 하여금 한걸음의 주저도 한치의 에돎도 없이 경애하는 원수님을 따라",
            "우리 천 ##만 ##군 ##민 ##으로 하여 ##금 한 ##걸 ##음 ##의 주 ##저 ##도 한 ##치 ##의 [UNK] 없이 경 ##애 ##하는 원 ##수 ##님 ##을 따라",
        ),
        (
            "일본 단마르크 도이췰란드 로므니아 로씨야 벌가리아 벨라루씨 스위스 스웨리예 슬로베니아 체스꼬",
            "일본 단 ##마 ##르크 [UNK] 로 ##므 ##니아 로 ##씨 ##야 벌 ##가 ##리아 벨 ##라 ##루 ##씨 스위스 스 ##웨 ##리 ##예 슬 ##로 ##베 ##니아 체 ##스 ##꼬",
        ),
    ];
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let pieces: BTreeSet<&str> = cases.iter().flat_map(|(_, t)| t.split(' ')).filter(|p| *p != UNK).collect();
    tokens.extend(pieces.into_iter().map(String::from));
    let small = Vocabulary::from_tokens(tokens).map_err(|e| e.to_string())?;
    if small.characters().contains(&'돎') || small.characters().contains(&'췰') {
        return Err("published vocabulary unexpectedly contains 돎 or 췰".into());
    }
    for (input, expected) in cases {
        let got = small.pieces(&small.tokenize(input).token_ids).join(" ");
        if got != expected {
            return Err(format!("{input:?} tokenized as {got:?}"));
        }
    }
    Ok(format!(
        "{agree}/1000 random words agree ({unk} whole-word UNK); 에돎도 and 도이췰란드 → [UNK] as published"
    ))
}

// 7 ─ determinism

fn determinism(exp: &ToyExperiment, data: &ToyData) -> Verdict {
    let config = TrainConfig {
        lambda: 0.3,
        epochs: 2,
        dropout: true,
        workers: 1,
        seed: 5,
        ..exp.finetune.clone()
    };
    let base = init_params::<f64>(&exp.model_config(data), 9);
    let run = || -> hanmlm::Result<(String, Vec<u8>, String, String, String)> {
        let out = train(&data.b_train[..400], &base, &config, &mut ())?;
        let r = evaluate_models(&[("m".into(), &out.params)], &data.test_sets(), &EvalConfig::default())?;
        Ok((out.log.to_jsonl(), encode_checkpoint(&out.params), r.to_json(), r.to_table_text(), r.to_csv()?))
    };
    let first = run().map_err(|e| e.to_string())?;
    let second = run().map_err(|e| e.to_string())?;
    check(
        first == second,
        format!(
            "TrainLog ({} bytes), checkpoint ({} bytes) and JSON/text/CSV reports byte-identical: {}",
            first.0.len(),
            first.1.len(),
            first == second
        ),
    )
}

// 8 ─ syllable algebra

fn syllable_algebra() -> Verdict {
    let mut count = 0u32;
    for cp in SYLLABLE_BASE..SYLLABLE_BASE + SYLLABLE_COUNT {
        let ch = char::from_u32(cp).expect("precomposed syllable");
        let s = decompose(ch).ok_or(format!("{ch} did not decompose"))?;
        let offset = cp - SYLLABLE_BASE;
        let expected = (offset / (21 * 28), (offset / 28) % 21, offset % 28);
        if (s.initial() as u32, s.medial() as u32, s.final_() as u32) != expected || s.to_char() != ch {
            return Err(format!("{ch}: indices {s:?}, expected {expected:?}"));
        }
        if Syllable::new(s.initial(), s.medial(), s.final_()) != Some(s) {
            return Err(format!("{ch}: Syllable::new disagrees"));
        }
        let mut jamo = String::new();
        jamo.push(char::from_u32(0x1100 + expected.0).unwrap());
        jamo.push(char::from_u32(0x1161 + expected.1).unwrap());
        if expected.2 > 0 {
            jamo.push(char::from_u32(0x11A7 + expected.2).unwrap());
        }
        if compose_jamo(&jamo) != ch.to_string() {
            return Err(format!("{ch}: jamo recomposition gave {:?}", compose_jamo(&jamo)));
        }
        count += 1;
    }
    let map = SyllableMap::builtin();
    let table = [("돐", "주년"), ("췰", "칠"), ("꾜", "쿄"), ("뙈", "떼"), ("곬", "골"), ("윁", "베트")];
    for (src, dst) in table {
        let got = apply_map(src, &map);
        if got != dst {
            return Err(format!("{src} mapped to {got}, expected {dst}"));
        }
    }
    let sentence = apply_map("윁남 도이췰란드 창립 60돐", &map);
    check(
        sentence == "베트남 도이칠란드 창립 60주년",
        format!("{count} syllables round-trip; 6 built-in mappings correct; sample → {sentence}"),
    )
}

#[test]
fn acceptance() {
    let mut verdicts: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut emit = |n: usize, name: &'static str, v: Verdict| {
        report(n, name, &v);
        verdicts.push((n, name, v));
    };

    emit(1, "gradient correctness", gradients());

    let exp = ToyExperiment::default();
    let data = exp.data().expect("synthetic data");
    emit(2, "loss identities", loss_identities(&data, &exp));

    let t = Instant::now();
    let base = exp.pretrain(&data).expect("pretraining");
    let base_report = evaluate_models(&[("base".into(), &base)], &data.test_sets(), &EvalConfig::default())
        .expect("base evaluation")
        .models
        .remove(0);
    let f = Forgetting {
        base,
        base_report,
        pretrain_time: t.elapsed(),
    };
    let plain_drop = match forgetting(&exp, &data, &f) {
        Ok((v, drop)) => {
            emit(3, "catastrophic forgetting", v);
            drop
        }
        Err(e) => {
            emit(3, "catastrophic forgetting", Err(e));
            f64::NAN
        }
    };
    emit(4, "retention with λ=0.3", retention(&exp, &data, &f, plain_drop));

    let t = Instant::now();
    let grid = parse_grid("0.1:1.0:0.1").expect("grid");
    let sweep = sweep_lambda(&grid, &data.b_train, &f.base, &exp.finetune, &data.test_sets(), &EvalConfig::default(), 1);
    let sweep_time = t.elapsed() + f.pretrain_time;
    match sweep {
        Ok(sweep) => {
            let l2 = |log: &hanmlm::training::TrainLog| Curve::from_epochs("l2", log, |r| r.cross_lingual_l2);
            let plain = exp.finetune(&data, &f.base, 0.0).map(|o| l2(&o.log));
            let regularized: Vec<(f64, Curve)> = grid
                .iter()
                .zip(&sweep.logs)
                .filter_map(|(&lambda, log)| log.as_ref().map(|log| (lambda, l2(log))))
                .collect();
            let v = match plain {
                Ok(plain) if regularized.len() == grid.len() => stray_curves(&plain, &regularized),
                Ok(_) => Err("some sweep runs failed".into()),
                Err(e) => Err(e.to_string()),
            };
            emit(5, "stray curves", v);
            let _ = writeln!(std::io::stderr(), "{}", sweep.table.to_table_text());
            emit(9, "λ-sweep grid", sweep_shape(&sweep.table, sweep_time));
        }
        Err(e) => {
            emit(5, "stray curves", Err(e.to_string()));
            emit(9, "λ-sweep grid", Err(e.to_string()));
        }
    }

    emit(6, "tokenizer oracle equivalence", tokenizer_oracle(&data));
    emit(7, "determinism", determinism(&exp, &data));
    emit(8, "syllable algebra", syllable_algebra());

    verdicts.sort_by_key(|v| v.0);
    let _ = writeln!(std::io::stderr(), "summary:");
    for (n, name, v) in &verdicts {
        let _ = writeln!(std::io::stderr(), "  {n} {name}: {}", if v.is_ok() { "PASS" } else { "FAIL" });
    }
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| v.2.is_err())
        .map(|v| format!("{} ({})", v.0, v.1))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
