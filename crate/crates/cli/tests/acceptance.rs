//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use claimdecomp::conllu::{parse_conllu, parse_conllu_unchecked, serialize, validate_parse, ConlluError, ViolationKind};
use claimdecomp::corpus::{BankEntry, ExampleBank, KnowledgeDoc};
use claimdecomp::decompose::{
    assemble_prompt, retrieve_examples, Decomposer, Method, MethodConfig, Subclaim, TokenEstimator,
};
use claimdecomp::llm::{CachedClient, GenerationParams, MockClient, MockSpec};
use claimdecomp::metrics::{fact_score, macro_average, method_report, passage_results, pearson, PassageResult};
use claimdecomp::predarg::{extract_predications, render_predication, ExtractionOptions, PredicationKind};
use claimdecomp::retrieval::{build_index, tokenize};
use claimdecomp::validate::{nli_entails, ContextKind, MockNliClient, NliVerdict, SupportJudgment, Validator};
use claimdecomp_cli::config::RunConfig;
use claimdecomp_cli::pipeline;
use claimdecomp_cli::report::{Table, MACRO_ROW};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const PEARSON_TOL: f64 = 2e-3;
const PEARSON_FACTSCORE: f64 = 0.9786;
const PEARSON_SUBCLAIMS: f64 = 0.9821;
const MACRO_TOL: f64 = 0.05;
const BM25_TOL: f64 = 1e-9;
const FAST: Duration = Duration::from_secs(1);
const RANDOM_FIXTURES: usize = 1000;

/// Criteria expected to print FAIL; the run still exits non-zero if any
/// other criterion fails or one of these starts passing.
const KNOWN_FAILURES: &[u8] = &[1];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let ours = Table::load(&fixture("table5_ours.csv")).unwrap();
    let reported = Table::load(&fixture("table5_reported.csv")).unwrap();
    let r = |c: &str| {
        let xs: Vec<f64> = ours.column(c).unwrap().into_values().collect();
        let ys: Vec<f64> = reported.column(c).unwrap().into_values().collect();
        assert_eq!(xs.len(), 12);
        pearson(&xs, &ys).unwrap()
    };
    let (f, s) = (r("factscore"), r("subclaims"));
    let elapsed = t.elapsed();
    let ok_f = (f - PEARSON_FACTSCORE).abs() <= PEARSON_TOL;
    let ok_s = (s - PEARSON_SUBCLAIMS).abs() <= PEARSON_TOL;
    outcome(
        ok_f && ok_s && elapsed < FAST,
        format!(
            "factscore r={f:.6} (want {PEARSON_FACTSCORE}±{PEARSON_TOL}, {}), subclaims r={s:.6} (want {PEARSON_SUBCLAIMS}±{PEARSON_TOL}, {}), {elapsed:?}",
            if ok_f { "ok" } else { "off" },
            if ok_s { "ok" } else { "off" },
        ),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let table = Table::load(&fixture("table2_decompscore.csv")).unwrap();
    let mut worst: (f64, String) = (0.0, String::new());
    for c in &table.columns {
        let per_lm = table.column(c).unwrap();
        assert_eq!(per_lm.len(), 12);
        let got = macro_average(&per_lm).unwrap();
        let printed = table.rows[MACRO_ROW][c];
        let d = (got - printed).abs();
        if d >= worst.0 {
            worst = (d, format!("{c}: {got:.4} vs {printed}"));
        }
    }
    let elapsed = t.elapsed();
    outcome(
        worst.0 <= MACRO_TOL && elapsed < FAST,
        format!("{} columns, largest gap {:.4} ({}), {elapsed:?}", table.columns.len(), worst.0, worst.1),
    )
}

fn with_field(line: &str, field: usize, value: &str) -> String {
    let mut f: Vec<&str> = line.split('\t').collect();
    f[field] = value;
    f.join("\t")
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/ud_sample.conllu");
    let sample = fs::read_to_string(path).unwrap();
    let parses = parse_conllu(&sample).unwrap();
    let round_trip = serialize(&parses).unwrap() == sample;

    let (mut injected, mut detected) = (0, 0);
    for block in sample.split("\n\n").filter(|b| !b.trim().is_empty()) {
        let lines: Vec<&str> = block.lines().collect();
        let words: Vec<usize> = (0..lines.len())
            .filter(|&i| lines[i].split('\t').next().is_some_and(|id| id.chars().all(|c| c.is_ascii_digit())))
            .collect();
        let root = *words.iter().find(|&&i| lines[i].split('\t').nth(6) == Some("0")).unwrap();
        let other = *words.iter().find(|&&i| i != root).unwrap();
        let edit = |line: String| {
            let mut v: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
            v[other] = line;
            v.join("\n")
        };
        let flags = |text: &str, kind: ViolationKind| {
            parse_conllu_unchecked(text)
                .ok()
                .and_then(|mut v| v.pop())
                .is_some_and(|(p, _)| validate_parse(&p).iter().any(|v| v.kind == kind))
        };

        injected += 3;
        detected += flags(&edit(with_field(lines[other], 6, "99")), ViolationKind::DanglingHead) as usize;
        detected += flags(
            &edit(with_field(&with_field(lines[other], 6, "0"), 7, "root")),
            ViolationKind::MultipleRoots,
        ) as usize;
        detected += matches!(
            parse_conllu(&edit(lines[other].rsplit_once('\t').unwrap().0.to_string())),
            Err(ConlluError::FieldCount { found: 9, .. })
        ) as usize;
    }
    let elapsed = t.elapsed();
    outcome(
        parses.len() >= 50 && round_trip && injected == detected && elapsed < FAST,
        format!(
            "{} sentences, byte-identical={round_trip}, violations detected {detected}/{injected}, {elapsed:?}",
            parses.len()
        ),
    )
}

const ONE_WORD_PARSE: &str = "1\tExample\texample\tNOUN\t_\t_\t0\troot\t_\t_\n";

fn synthetic_bank(n: usize) -> ExampleBank {
    ExampleBank {
        entries: (0..n)
            .map(|i| BankEntry {
                sentence: format!("Example number {i} mentions topic {i}."),
                subclaims: vec![format!("Example {i} exists."), format!("Example {i} mentions topic {i}.")],
                conllu: Some(ONE_WORD_PARSE.to_string()),
            })
            .collect(),
    }
}

fn criterion_4() -> Outcome {
    let bank = synthetic_bank(12);
    let est = TokenEstimator::default();
    let target = "Target sentence mentions topic 3.";
    let parse = parse_conllu(ONE_WORD_PARSE).unwrap().remove(0);
    let mut notes = Vec::new();
    let mut ok = true;

    let expected = [
        (Method::FActScore, 7, 1),
        (Method::Wice, 6, 0),
        (Method::Chen, 7, 1),
        (Method::Conllu, 1, 1),
        (Method::Rnd, 7, 1),
        (Method::Fs2, 1, 1),
    ];
    for (m, s, r) in expected {
        let config = MethodConfig::builtin(m, &bank).unwrap();
        let retrieved = retrieve_examples(&config.example_bank, target, config.retrieved_count).unwrap();
        let p = assemble_prompt(&config, target, config.include_parse.then_some(&parse), &retrieved, 1_000_000, &est);
        let blocks = p.text.matches(config.instruction.as_str()).count();
        let good = p.static_used == s
            && p.retrieved_used == r
            && blocks == s + r + 1
            && p.text.starts_with(&config.instruction)
            && m.prompt_spec().unwrap().instruction == config.instruction;
        ok &= good;
        notes.push(format!("{m}=({},{})", p.static_used, p.retrieved_used));
    }

    // Backoff: retrieved examples go first, then statics from the end.
    let config = MethodConfig::builtin(Method::Rnd, &bank).unwrap();
    let retrieved = retrieve_examples(&config.example_bank, target, 1).unwrap();
    let full = assemble_prompt(&config, target, None, &retrieved, 1_000_000, &est).estimated_tokens;
    let mut seen = Vec::new();
    for budget in (0..=full).rev() {
        let p = assemble_prompt(&config, target, None, &retrieved, budget, &est);
        let state = (p.static_used, p.retrieved_used, p.over_budget);
        if seen.last() != Some(&state) {
            let statics_prefix = (0..7).all(|i| {
                p.text.contains(&config.static_examples[i].sentence) == (i < p.static_used)
            });
            ok &= statics_prefix && (p.retrieved_used == 0 || p.static_used == 7);
            seen.push(state);
        }
    }
    let want: Vec<(usize, usize, bool)> = [(7, 1, false)]
        .into_iter()
        .chain((0..=7).rev().map(|s| (s, 0, false)))
        .chain([(0, 0, true)])
        .collect();
    ok &= seen == want;
    notes.push(format!("backoff states {}", seen.len()));

    // Zero-example overflow at the endpoint.
    let d = Decomposer::new(Method::Rnd, Some(&bank), GenerationParams::decomposition("m")).unwrap();
    let client = MockClient::constant("- never").with_max_prompt_chars(10);
    let out = d.decompose_sentence(&client, target, None).unwrap();
    let fallback = out.backed_off && out.claims == vec![target.to_string()] && client.calls() == 9;
    ok &= fallback;
    notes.push(format!("overflow fallback={fallback} after {} calls", client.calls()));
    outcome(ok, notes.join(", "))
}

type Oracle = (usize, PredicationKind, &'static [usize], &'static [&'static [usize]], &'static str);

fn criterion_5() -> Outcome {
    use PredicationKind::*;
    let oracle: [(&str, &[Oracle]); 10] = [
        ("s1", &[]),
        ("s2", &[(6, Copular, &[5, 6], &[&[1, 2, 3]], "Bel - Air is/are in California")]),
        ("s3", &[(5, Copular, &[4, 5], &[&[1, 2, 3]], "Aptitude for mathematics is natural")]),
        (
            "s4",
            &[
                (1, Possessive, &[], &[&[1], &[3]], "Mary poss dog"),
                (4, Verbal, &[4], &[&[3]], "dog barked"),
            ],
        ),
        (
            "s5",
            &[
                (2, Verbal, &[2], &[&[1], &[3, 4, 5]], "He worked with Willie Nelson"),
                (2, Verbal, &[2], &[&[1], &[3, 7, 8]], "He worked with Tim McGraw"),
                (2, Verbal, &[2], &[&[1], &[3, 11, 12]], "He worked with Taylor Swift"),
            ],
        ),
        (
            "s6",
            &[
                (3, Verbal, &[3, 4], &[&[1, 2], &[5, 6, 7]], "Alfred Hitchcock left behind a rich legacy"),
                (6, Adjectival, &[6], &[&[5, 7]], "a legacy is/are rich"),
            ],
        ),
        (
            "s7",
            &[
                (4, Adjectival, &[4], &[&[3, 5]], "an composer is/are American"),
                (5, Copular, &[3, 4, 5], &[&[1]], "He is/are an American composer"),
                (7, Copular, &[7], &[&[1]], "He is/are conductor"),
                (10, Adjectival, &[10], &[&[11]], "director is/are musical"),
                (11, Copular, &[10, 11], &[&[1]], "He is/are musical director"),
            ],
        ),
        (
            "s8",
            &[
                (5, Copular, &[4, 5, 6, 7, 8, 9, 10], &[&[1, 2]], "Michael Collins is/are an astronaut who flew to the Moon"),
                (7, Verbal, &[7], &[&[4, 5], &[8, 9, 10]], "an astronaut flew to the Moon"),
            ],
        ),
        (
            "s9",
            &[
                (1, Possessive, &[], &[&[1], &[2]], "His poss brother"),
                (5, Adjectival, &[5], &[&[4, 6]], "a painter is/are famous"),
                (6, Appositive, &[4, 5, 6], &[&[2]], "brother is/are a famous painter"),
                (8, Verbal, &[8], &[&[2], &[9, 10]], "brother lived in Paris"),
            ],
        ),
        (
            "s10",
            &[
                (2, Verbal, &[2], &[&[1], &[3]], "Nash earned degrees"),
                (5, Verbal, &[5], &[&[1], &[6]], "Nash taught mathematics"),
            ],
        ),
    ];
    let set = |ids: &[usize]| ids.iter().copied().collect::<BTreeSet<usize>>();
    let parses = parse_conllu(&fs::read_to_string(fixture("predarg_sentences.conllu")).unwrap()).unwrap();
    let (mut matched, mut total) = (0, 0);
    let mut misses = Vec::new();
    for (id, want) in oracle {
        total += 1;
        let parse = parses.iter().find(|p| p.meta("sent_id") == Some(id)).unwrap();
        let got: Vec<_> = extract_predications(parse, &ExtractionOptions::all())
            .unwrap()
            .iter()
            .map(|p| {
                (
                    p.head,
                    p.kind,
                    p.predicate_tokens.clone(),
                    p.argument_slots.clone(),
                    render_predication(parse, p),
                )
            })
            .collect();
        let want: Vec<_> = want
            .iter()
            .map(|(h, k, pred, args, text)| (*h, *k, set(pred), args.iter().map(|a| set(a)).collect::<Vec<_>>(), text.to_string()))
            .collect();
        if got == want {
            matched += 1;
        } else {
            misses.push(id);
        }
    }
    outcome(
        matched == total,
        format!("{matched}/{total} sentences match the oracle{}", if misses.is_empty() { String::new() } else { format!(", misses {misses:?}") }),
    )
}

fn criterion_6() -> Outcome {
    let docs: Vec<KnowledgeDoc> = [
        ("Ada", "Ada Lovelace wrote the first published algorithm for a machine."),
        ("Babbage", "Charles Babbage designed the analytical engine, a mechanical machine."),
        ("Turing", "Alan Turing described a universal machine and worked on code breaking."),
        ("Hopper", "Grace Hopper wrote an early compiler and popularised machine independent languages."),
        ("Lovelace", "The Lovelace medal honours work in computing; Ada is its namesake."),
    ]
    .iter()
    .map(|(t, x)| KnowledgeDoc {
        title: t.to_string(),
        text: x.to_string(),
    })
    .collect();
    let index = build_index(&docs, 256).unwrap();
    let (k1, b) = (0.9, 0.4);
    let lower = |s: &str| -> Vec<String> { tokenize(s) };
    let bodies: Vec<Vec<String>> = docs.iter().map(|d| lower(&d.text)).collect();
    let avg = bodies.iter().map(|d| d.len() as f64).sum::<f64>() / bodies.len() as f64;
    let n = bodies.len() as f64;
    let direct = |query: &str, d: &[String]| -> f64 {
        let mut terms = lower(query);
        terms.sort();
        terms.dedup();
        terms
            .iter()
            .map(|t| {
                let tf = d.iter().filter(|w| *w == t).count() as f64;
                if tf == 0.0 {
                    return 0.0;
                }
                let df = bodies.iter().filter(|x| x.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg))
            })
            .sum()
    };

    let mut worst: f64 = 0.0;
    let mut ordered = true;
    let queries = ["machine algorithm", "Ada Lovelace", "compiler languages", "universal machine code", "engine"];
    for q in queries {
        let hits = index.search(q, 5, None);
        let again = index.search(q, 5, None);
        ordered &= hits == again;
        ordered &= hits.windows(2).all(|w| w[0].score >= w[1].score);
        for h in &hits {
            let i = docs.iter().position(|d| d.title == h.chunk.doc_title).unwrap();
            worst = worst.max((h.score - direct(q, &bodies[i])).abs());
        }
        let expected_hits = bodies.iter().filter(|d| direct(q, d) > 0.0).count();
        ordered &= hits.len() == expected_hits.min(5);
    }
    outcome(
        worst <= BM25_TOL && ordered,
        format!("{} queries, max |Δscore| {worst:.2e}, deterministic ranking={ordered}", queries.len()),
    )
}

fn subclaim(passage: usize, sentence: usize, ordinal: usize, topic: &str, lm: &str, text: &str) -> Subclaim {
    Subclaim {
        passage_id: passage,
        sentence_index: sentence,
        ordinal,
        method: "m".into(),
        topic: topic.into(),
        generator: lm.into(),
        text: text.into(),
    }
}

fn judgment(s: Subclaim, supported: bool, kind: ContextKind) -> SupportJudgment {
    SupportJudgment {
        subclaim: s,
        context_kind: kind,
        supported,
        validator_id: "scripted".into(),
        context_snapshot: String::new(),
        warning: None,
    }
}

/// Per-LM scores by scanning judgment records.
fn brute_force(
    passages: &[claimdecomp::corpus::Passage],
    sentence: &[SupportJudgment],
    knowledge: &[SupportJudgment],
) -> BTreeMap<String, [f64; 5]> {
    let mut per_lm: BTreeMap<String, Vec<(usize, usize, usize, usize)>> = BTreeMap::new();
    for p in passages {
        let (mut n, mut s, mut k, mut both) = (0, 0, 0, 0);
        for j in sentence.iter().filter(|j| j.subclaim.passage_id == p.id) {
            let kj = knowledge
                .iter()
                .find(|x| x.subclaim == j.subclaim)
                .is_some_and(|x| x.supported);
            n += 1;
            s += j.supported as usize;
            k += kj as usize;
            both += (j.supported && kj) as usize;
        }
        per_lm.entry(p.generator.clone()).or_default().push((n, s, k, both));
    }
    per_lm
        .into_iter()
        .map(|(lm, rows)| {
            let len = rows.len() as f64;
            let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let decomp = rows.iter().map(|r| r.1 as f64).sum::<f64>() / len;
            let avg = rows.iter().map(|r| r.0 as f64).sum::<f64>() / len;
            let fs = rows.iter().map(|r| frac(r.2, r.0)).sum::<f64>() / len;
            let ffs = rows.iter().map(|r| frac(r.3, r.1)).sum::<f64>() / len;
            let total: usize = rows.iter().map(|r| r.0).sum();
            let coh = 100.0 * rows.iter().map(|r| r.1).sum::<usize>() as f64 / total as f64;
            (lm, [decomp, avg, fs, ffs, coh])
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let validator = Validator::new("scripted");
    let lms = ["lm-a", "lm-b", "lm-c", "lm-d"];
    let mut passages = Vec::new();
    let mut docs = Vec::new();
    for i in 0..20 {
        let topic = format!("Person{i}");
        let n_sentences = 1 + i % 3;
        let text = (0..n_sentences)
            .map(|j| format!("{topic} did thing {j} in year {}.", 1900 + i * 3 + j))
            .collect::<Vec<_>>()
            .join(" ");
        docs.push(KnowledgeDoc {
            title: topic.clone(),
            text: format!("{topic} is documented here. {topic} did many things in many years."),
        });
        passages.push(claimdecomp::corpus::Passage::new(i, &topic, lms[i % 4], &text));
    }
    let index = build_index(&docs, 256).unwrap();

    // Scripted verdicts keyed by the exact validator prompt.
    let mut mock = MockClient::constant("unparseable");
    let mut subclaims = Vec::new();
    let mut script_sentence = BTreeMap::new();
    for p in &passages {
        for s in &p.sentences {
            let n = (p.id * 5 + s.index * 3) % 4;
            for o in 0..n {
                let sub = subclaim(p.id, s.index, o, &p.topic, &p.generator, &format!("{} did thing {} part {o}.", p.topic, s.index));
                let supported = (p.id + 2 * s.index + o) % 3 != 0;
                let known = (p.id + s.index + 3 * o) % 4 != 1;
                mock = mock.with_exact(&validator.prompt(&s.text, &sub.text), if supported { "True" } else { "False" });
                let context = validator.knowledge_context(&index, &sub);
                mock = mock.with_exact(&validator.prompt(&context, &sub.text), if known { "True." } else { "false" });
                script_sentence.insert((p.id, s.index, o), (supported, known));
                subclaims.push(sub);
            }
        }
    }
    let mut sentence = Vec::new();
    for p in &passages {
        for s in &p.sentences {
            let subs: Vec<Subclaim> = subclaims
                .iter()
                .filter(|x| x.passage_id == p.id && x.sentence_index == s.index)
                .cloned()
                .collect();
            sentence.extend(validator.judge_decomposition(&mock, &s.text, &subs).unwrap());
        }
    }
    let knowledge = validator.judge_facts(&mock, &index, &subclaims).unwrap();
    let scripted = sentence.iter().zip(&knowledge).all(|(a, b)| {
        let key = (a.subclaim.passage_id, a.subclaim.sentence_index, a.subclaim.ordinal);
        script_sentence[&key] == (a.supported, b.supported)
    });

    let results = passage_results("m", &passages, &sentence, Some(&knowledge)).unwrap();
    let report = method_report(&results, None).unwrap();
    let oracle = brute_force(&passages, &sentence, &knowledge);
    let exact = report.per_lm.len() == oracle.len()
        && report.per_lm.iter().all(|(lm, s)| {
            let o = oracle[lm];
            [s.decomp_score, s.avg_subclaims, s.fact_score.unwrap(), s.filtered_fact_score.unwrap(), s.coherence_pct.unwrap()] == o
        });

    // Filter denominator property on random fixtures.
    let mut rng = StdRng::seed_from_u64(20240611);
    let mut property = true;
    let mut equal_cases = 0;
    for _ in 0..RANDOM_FIXTURES {
        let all_supported = rng.gen_bool(0.3);
        let n_passages = rng.gen_range(1..6);
        let passages: Vec<_> = (0..n_passages)
            .map(|i| claimdecomp::corpus::Passage::new(i, "T", "lm", "One. Two."))
            .collect();
        let (mut sj, mut kj) = (Vec::new(), Vec::new());
        for p in &passages {
            for o in 0..rng.gen_range(0..7) {
                let sub = subclaim(p.id, o % 2, o, "T", "lm", "c");
                sj.push(judgment(sub.clone(), all_supported || rng.gen_bool(0.6), ContextKind::OriginalSentence));
                kj.push(judgment(sub, rng.gen_bool(0.5), ContextKind::KnowledgeSource));
            }
        }
        let rs: Vec<PassageResult> = passage_results("m", &passages, &sj, Some(&kj)).unwrap();
        property &= rs.iter().all(|r| r.n_supported_by_sentence <= r.n_subclaims);
        if all_supported {
            equal_cases += 1;
            property &= fact_score(&rs, true, None).unwrap() == fact_score(&rs, false, None).unwrap();
        }
    }
    outcome(
        scripted && exact && property,
        format!(
            "20 passages/{} subclaims: scripted verdicts={scripted}, oracle exact={exact}; {RANDOM_FIXTURES} random fixtures ({equal_cases} all-supported): property={property}",
            subclaims.len()
        ),
    )
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let spec = || -> MockSpec { serde_json::from_str(&fs::read_to_string(fixture("pipeline/mock.json")).unwrap()).unwrap() };
    let run = |out: &Path| -> usize {
        let cfg = RunConfig {
            generations: Some(fixture("pipeline/generations.jsonl")),
            knowledge: Some(fixture("pipeline/knowledge.jsonl")),
            methods: vec!["rnd".into()],
            out_dir: out.to_path_buf(),
            ..Default::default()
        };
        let client = CachedClient::new(MockClient::from_spec(spec()), &cache).unwrap();
        let passages = pipeline::load_passages(&cfg).unwrap();
        pipeline::run_decompose(&cfg, &client, &passages, Method::Rnd).unwrap();
        pipeline::run_decompscore(&cfg, &client, &passages, &[Method::Rnd]).unwrap();
        pipeline::run_factscore(&cfg, &client, &passages, &[Method::Rnd]).unwrap();
        client.inner().calls()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cold = run(&a);
    let warm = run(&b);
    let (ta, tb) = (tree(&a), tree(&b));
    let identical = ta == tb;
    outcome(
        identical && cold > 0 && warm == 0,
        format!("{} files byte-identical={identical}; endpoint calls cold={cold}, warm={warm}", ta.len()),
    )
}

fn criterion_9() -> Outcome {
    let nli = |v: NliVerdict| MockNliClient {
        by_hypothesis: Default::default(),
        default: v,
    };
    let fixtures = [
        (NliVerdict::new(0.90, 0.07, 0.03), true),
        (NliVerdict::new(0.15, 0.80, 0.05), false),
        (NliVerdict::new(0.05, 0.15, 0.80), false),
    ];
    let decisions_ok = fixtures
        .iter()
        .all(|(v, want)| nli_entails(&nli(*v), "premise", "hypothesis").ok() == Some(*want));
    let invalid = [NliVerdict::new(0.6, 0.6, 0.1), NliVerdict::new(0.2, 0.2, 0.2)];
    let rejected = invalid
        .iter()
        .all(|v| v.validate().is_err() && nli_entails(&nli(*v), "p", "h").is_err());
    outcome(
        decisions_ok && rejected,
        format!("3 verdict fixtures decided correctly={decisions_ok}, invalid sums rejected={rejected}"),
    )
}

type Criterion = (u8, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "Pearson reproduction", criterion_1),
        (2, "macro-average reproduction", criterion_2),
        (3, "CoNLL-U round trip and validation", criterion_3),
        (4, "prompt conformance and backoff", criterion_4),
        (5, "predicate-argument extraction", criterion_5),
        (6, "BM25 oracle", criterion_6),
        (7, "metrics oracle", criterion_7),
        (8, "determinism and warm cache", criterion_8),
        (9, "NLI decision rule", criterion_9),
    ];
    let mut unexpected = Vec::new();
    for (n, name, f) in criteria {
        let o = f();
        let known = KNOWN_FAILURES.contains(&n);
        let tag = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {n}: {tag} {name}: {}", o.detail);
        if o.pass == known {
            unexpected.push(n);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
