//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs the `convdepth` binary against the mock backend.

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;
#[path = "../../core/tests/support/properties.rs"]
mod properties;
#[path = "../../core/tests/support/topic_fixture.rs"]
mod topic_fixture;
#[path = "../../core/tests/support/trend_fixture.rs"]
mod trend_fixture;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use convdepth_core::experiment::count_records;
use convdepth_core::stats::{
    friedman, qtukey_sf, rm_anova, shapiro_wilk, wilcoxon_signed_rank, RepeatedMeasures, Trend,
    DEFAULT_EXACT_THRESHOLD,
};
use convdepth_core::store::{load_run, FAULT_ENV};
use convdepth_core::topics::{cluster, ctf_idf_keywords, tfidf_vectors, top_topics_per_model};
use convdepth_core::Exec;

type Outcome = Result<String, String>;

fn convdepth(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_convdepth"));
    cmd.args(args).stdout(Stdio::null()).stderr(Stdio::piped());
    cmd.env_remove(FAULT_ENV);
    cmd
}

fn run_ok(args: &[&str]) -> Result<(), String> {
    let out = convdepth(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "convdepth {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn criterion_1() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path().join("run");
    let start = Instant::now();
    run_ok(&["run", "--run", s(&dir), "--models", "mock-a", "--sessions", "20", "--repetitions", "10", "--seed", "1"])?;
    let elapsed = start.elapsed();
    let run = load_run(&dir).map_err(|e| e.to_string())?;
    let counts = count_records(&run);
    if counts.utterances != 1440 {
        return Err(format!("{} utterances, expected 1440", counts.utterances));
    }
    let ids = &run.manifest.config.questionnaire_ids;
    for q in ids {
        for stage in 1..=3u8 {
            let n = counts.responses.get(&(q.clone(), stage)).copied().unwrap_or(0);
            if n != 400 {
                return Err(format!("{q} stage {stage}: {n} responses, expected 400"));
            }
        }
    }
    if counts.missing != 0 {
        return Err(format!("{} responses missing", counts.missing));
    }
    if elapsed > Duration::from_secs(120) {
        return Err(format!("took {elapsed:.1?}, limit 2 min"));
    }
    Ok(format!(
        "1440 utterances; 400 responses for each of {} questionnaires x 3 stages; {:.1?}",
        ids.len(),
        elapsed
    ))
}

fn criterion_2() -> Outcome {
    let mut notes = Vec::new();
    let d = RepeatedMeasures::from_rows(vec![vec![1.0, 2.0, 3.0]; 3]).map_err(|e| e.to_string())?;
    let fr = friedman(&d).map_err(|e| e.to_string())?;
    if (fr.statistic - oracles::FRIEDMAN_CHI2).abs() > 1e-9 || (fr.p_value - oracles::FRIEDMAN_P).abs() > 5e-4 {
        return Err(format!("Friedman chi2 {} p {}", fr.statistic, fr.p_value));
    }
    notes.push(format!("Friedman chi2={} p={:.4}", fr.statistic, fr.p_value));

    let d = RepeatedMeasures::from_rows(oracles::anova_rows()).map_err(|e| e.to_string())?;
    let an = rm_anova(&d).map_err(|e| e.to_string())?;
    if (an.statistic - oracles::ANOVA_F).abs() > 1e-9 || (an.p_value - oracles::ANOVA_P).abs() > 1e-9 {
        return Err(format!("RM-ANOVA F {} p {}", an.statistic, an.p_value));
    }
    notes.push(format!("F={} p={}", an.statistic, an.p_value));

    let w = wilcoxon_signed_rank(&[0.0; 3], &[1.0, 2.0, 3.0], DEFAULT_EXACT_THRESHOLD)
        .map_err(|e| e.to_string())?;
    if (w.p_raw - 0.25).abs() > 1e-12 {
        return Err(format!("Wilcoxon p {}", w.p_raw));
    }
    notes.push(format!("Wilcoxon p={}", w.p_raw));

    let (mut lo, mut hi) = (2.0, 6.0);
    for _ in 0..60 {
        let mid = (lo + hi) / 2.0;
        if qtukey_sf(mid, 3, 10.0) > 0.05 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (lo - 3.88).abs() > 0.01 {
        return Err(format!("q(3, 10, 0.05) = {lo}"));
    }
    notes.push(format!("q crit={lo:.4}"));

    for case in oracles::shapiro_wilk_cases() {
        let r = shapiro_wilk(&case.data).map_err(|e| e.to_string())?;
        if !oracles::sw_matches(&case, r.w, r.p_value) {
            return Err(format!("Shapiro-Wilk {}: W {} p {} vs W {} p {}", case.name, r.w, r.p_value, case.w, case.p));
        }
    }
    notes.push(format!("{} Shapiro-Wilk cases to 4 dp", oracles::shapiro_wilk_cases().len()));
    Ok(notes.join("; "))
}

fn criterion_3() -> Outcome {
    let score = trend_fixture::score();
    let summary = format!(
        "{}/{} non-exempt rows match ({:.1}%); exempt: {}; mismatches: {}",
        score.matched,
        score.total,
        100.0 * score.rate(),
        score.exempt.join(", "),
        if score.mismatches.is_empty() { "none".into() } else { score.mismatches.join(", ") }
    );
    if score.total >= 20 && score.rate() >= 0.9 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

const SEEDS: std::ops::RangeInclusive<u64> = 1..=20;

/// Trend of LMS "Rich" for one mock run whose Rich items follow `means`.
fn injected_trend(tmp: &Path, seed: u64, means: &str) -> Result<Trend, String> {
    let script = tmp.join(format!("mock-{seed}-{}.txt", means.replace(' ', "_")));
    std::fs::write(
        &script,
        format!("seed {seed}\nitems \"(Rich)\" stage_means {means} noise 0.2\n"),
    )
    .map_err(|e| e.to_string())?;
    let dir = tmp.join(format!("run-{seed}-{}", means.replace(' ', "_")));
    let seed_arg = seed.to_string();
    run_ok(&[
        "run", "--run", s(&dir), "--models", "mock-a", "--sessions", "20", "--repetitions", "10",
        "--seed", &seed_arg, "--questionnaires", "LMS", "--mock-script", s(&script),
    ])?;
    run_ok(&["analyze", "--run", s(&dir)])?;
    let run = load_run(&dir).map_err(|e| e.to_string())?;
    run.analyses
        .iter()
        .find(|a| a.questionnaire_id == "LMS" && a.factor_id == "R")
        .map(|a| a.trend)
        .ok_or_else(|| "no analysis for LMS/R".to_string())
}

fn criterion_4() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut up = 0;
    let mut stay = 0;
    let mut drifted = BTreeMap::new();
    let mut flat = BTreeMap::new();
    for seed in SEEDS {
        let t = injected_trend(tmp.path(), seed, "3.0 3.5 4.0")?;
        up += usize::from(t == Trend::Up);
        *drifted.entry(t.as_str()).or_insert(0) += 1;
        let t = injected_trend(tmp.path(), seed, "3.0 3.0 3.0")?;
        stay += usize::from(t == Trend::Stay);
        *flat.entry(t.as_str()).or_insert(0) += 1;
    }
    let elapsed = start.elapsed();
    let summary = format!(
        "drift +0.5/stage: up in {up}/20 {drifted:?}; zero drift: stay in {stay}/20 {flat:?}; {elapsed:.1?}"
    );
    if up >= 19 && stay >= 19 && elapsed < Duration::from_secs(300) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_5() -> Outcome {
    let mut failed = Vec::new();
    for (name, check) in properties::ALL {
        if let Err(e) = check() {
            failed.push(format!("{name}: {e}"));
        }
    }
    if failed.is_empty() {
        Ok(format!("{} properties x {} cases", properties::ALL.len(), properties::CASES))
    } else {
        Err(failed.join("; "))
    }
}

fn criterion_6() -> Outcome {
    let corpus = topic_fixture::corpus(&topic_fixture::TWO_VOCABULARIES, &["m"]);
    let vectors = tfidf_vectors(&corpus, Exec::Sequential);
    let truth = [Some(0), Some(0), Some(0), Some(1), Some(1), Some(1)];
    let c = cluster(&vectors, 2, 0, Exec::Sequential).map_err(|e| e.to_string())?;
    if !topic_fixture::same_partition(&c.assignments, &truth) {
        return Err(format!("partition {:?}", c.assignments));
    }
    let kw = ctf_idf_keywords(&corpus, &c.assignments, 2, 10);
    let expected = topic_fixture::expected_keyword_score();
    let alpha_cluster = c.assignments[0].expect("assigned");
    let alpha = kw[alpha_cluster]
        .iter()
        .find(|(t, _)| t == "alpha")
        .map(|(_, s)| *s)
        .ok_or("alpha is not a keyword")?;
    if (alpha - expected).abs() > 1e-12 {
        return Err(format!("alpha score {alpha}, expected {expected}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let k = rng.gen_range(1..40);
        let mut counts = BTreeMap::new();
        for model in ["a", "b", "c"] {
            for c in 0..k {
                if rng.gen_bool(0.7) {
                    counts.insert((model.to_string(), c), rng.gen_range(1..6));
                }
            }
        }
        let model = topic_fixture::model_with_counts(k, counts);
        let got = topic_fixture::as_pairs(&top_topics_per_model(&model, 10));
        if got != topic_fixture::brute_force_top(&model, 10) {
            return Err("top-10 selection differs from the count-sort oracle".into());
        }
    }
    Ok(format!("k=2 partition exact; alpha score {alpha:.6} = 2 ln 4; top-10 matches oracle on 200 random grids"))
}

fn check_complete(dir: &Path, sessions: usize, reps: usize, questionnaires: usize) -> Result<String, String> {
    let run = load_run(dir).map_err(|e| e.to_string())?;
    let dups = run.duplicate_keys();
    if !dups.is_empty() {
        return Err(format!("{} duplicate records, e.g. {}", dups.len(), dups[0]));
    }
    if !run.corrupt.is_empty() {
        return Err(format!("{} corrupt records remain", run.corrupt.len()));
    }
    let counts = count_records(&run);
    if counts.utterances != sessions * 72 {
        return Err(format!("{} utterances after resume", counts.utterances));
    }
    let answered: usize = counts.responses.values().sum::<usize>() + counts.missing;
    let expected = sessions * 2 * 3 * reps * questionnaires;
    if answered != expected {
        return Err(format!("{answered} responses after resume, expected {expected}"));
    }
    Ok(format!(
        "{} log + {} response + {} sample records unique",
        run.logs.len(),
        run.responses.len(),
        run.samples.len()
    ))
}

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut notes = Vec::new();

    // abort part-way through a randomly chosen append, leaving a torn record
    let dir = tmp.path().join("fault");
    let args = ["run", "--run", s(&dir), "--models", "mock-a", "--sessions", "4", "--repetitions", "2", "--questionnaires", "GSE,LMS", "--seed", "3"];
    let point: u64 = rng.gen_range(1..500);
    let status = convdepth(&args)
        .env(FAULT_ENV, point.to_string())
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        return Err(format!("fault injection at append {point} did not stop the run"));
    }
    run_ok(&args)?;
    notes.push(format!("aborted at append {point}: {}", check_complete(&dir, 4, 2, 2)?));

    // kill a live process at a random moment
    let dir = tmp.path().join("kill");
    let args = ["run", "--run", s(&dir), "--models", "mock-a,mock-b", "--sessions", "5", "--repetitions", "3", "--seed", "5"];
    let delay = rng.gen_range(20..400);
    let mut child = convdepth(&args).spawn().map_err(|e| e.to_string())?;
    std::thread::sleep(Duration::from_millis(delay));
    let killed = child.try_wait().map_err(|e| e.to_string())?.is_none();
    let _ = child.kill();
    let _ = child.wait();
    run_ok(&args)?;
    let questionnaires = convdepth_core::questionnaire::builtin_questionnaires().len();
    notes.push(format!(
        "{} after {delay} ms: {}",
        if killed { "killed" } else { "finished before kill" },
        check_complete(&dir, 10, 3, questionnaires)?
    ));
    Ok(notes.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("count arithmetic", criterion_1),
        ("statistical oracles", criterion_2),
        ("trend classifier fixtures", criterion_3),
        ("injected-trend recovery", criterion_4),
        ("property suites", criterion_5),
        ("topic pipeline recovery", criterion_6),
        ("resumability", criterion_7),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{took:.1?}]", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {} ({name}): {detail} [{took:.1?}]", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
