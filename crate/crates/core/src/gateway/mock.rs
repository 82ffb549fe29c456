//! Deterministic scripted chat model.
//!
//! Script format, one directive per line, `#` starts a comment:
//!
//! ```text
//! seed 42
//! theme 1 canned answer A | another answer for {theme}
//! theme * I would say something about question {n}.
//! stage_means 3.0 3.5 4.0
//! noise 0.2
//! items "LMS-" stage_means 3.0 3.5 4.0 noise 0.2
//! garble 0.05
//! ```
//!
//! Conversation turns are answered from the `theme` table (alternatives are
//! chosen by the seeded RNG; `{n}`, `{theme}` and `{agent}` are substituted).
//! Questionnaire probes are recognised by their system header; each presented
//! item gets `round(mean[stage] + noise·N(0,1))` clamped to the scale, where
//! the stage is inferred from the highest question number in the embedded
//! history. Without explicit means the scale midpoint is used, and without
//! explicit noise a quarter of the scale span (zero when means are given).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{ChatMessage, GatewayError, Role};
use crate::protocol::THEMES_PER_STAGE;
use crate::questionnaire::{HISTORY_SEPARATOR, PROBE_HEADER};

const DEFAULT_ANSWER: &str =
    "My brief thought on question {n}: {theme} It makes me reflect on what matters to me.";
const GARBLED_ANSWER: &str = "I would prefer to describe myself in my own words.";
const EMBEDDING_DIM: usize = 64;

#[derive(Debug, Clone, Default, PartialEq)]
struct Distribution {
    stage_means: Option<[f64; 3]>,
    noise: Option<f64>,
}

impl Distribution {
    fn resolve(&self, stage: usize, min: i64, max: i64) -> (f64, f64) {
        let span = (max - min) as f64;
        let mean = match self.stage_means {
            Some(m) => m[stage.clamp(1, 3) - 1],
            None => (min + max) as f64 / 2.0,
        };
        let noise = match (self.noise, self.stage_means) {
            (Some(s), _) => s,
            (None, Some(_)) => 0.0,
            (None, None) => span / 4.0,
        };
        (mean, noise)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ItemRule {
    pattern: String,
    dist: Distribution,
}

/// Parsed mock script.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockScript {
    salt: u64,
    themes: BTreeMap<usize, Vec<String>>,
    fallback: Vec<String>,
    global: Distribution,
    items: Vec<ItemRule>,
    garble: f64,
}

impl MockScript {
    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let mut script = MockScript::default();
        for (no, raw) in text.lines().enumerate() {
            let line_no = no + 1;
            let err = |message: String| GatewayError::ScriptParse {
                line: line_no,
                message,
            };
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (keyword, rest) = split_word(line);
            match keyword {
                "seed" => {
                    script.salt = rest
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("invalid seed {rest:?}")))?;
                }
                "noise" => {
                    script.global.noise = Some(parse_noise(rest.trim()).map_err(err)?);
                }
                "stage_means" => {
                    let words: Vec<&str> = rest.split_whitespace().collect();
                    script.global.stage_means = Some(parse_means(&words).map_err(err)?);
                }
                "garble" => {
                    let p: f64 = rest
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("invalid probability {rest:?}")))?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(err(format!("probability {p} outside [0, 1]")));
                    }
                    script.garble = p;
                }
                "theme" => {
                    let (target, answer) = split_word(rest.trim_start());
                    let alternatives: Vec<String> = answer
                        .split('|')
                        .map(|a| a.trim().to_string())
                        .filter(|a| !a.is_empty())
                        .collect();
                    if alternatives.is_empty() {
                        return Err(err("theme directive without answer text".into()));
                    }
                    if target == "*" {
                        script.fallback.extend(alternatives);
                    } else {
                        let n: usize = target
                            .parse()
                            .ok()
                            .filter(|n| *n >= 1)
                            .ok_or_else(|| err(format!("invalid theme index {target:?}")))?;
                        script.themes.entry(n).or_default().extend(alternatives);
                    }
                }
                "items" => script.items.push(parse_item_rule(rest).map_err(err)?),
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }
        Ok(script)
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn split_word(s: &str) -> (&str, &str) {
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim_start()),
        None => (s, ""),
    }
}

fn parse_noise(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("invalid noise {s:?}"))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(format!("noise must be a finite non-negative number, got {s}"));
    }
    Ok(v)
}

fn parse_means(words: &[&str]) -> Result<[f64; 3], String> {
    if words.len() != 3 {
        return Err(format!("stage_means needs 3 values, got {}", words.len()));
    }
    let mut out = [0.0; 3];
    for (slot, w) in out.iter_mut().zip(words) {
        *slot = w
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("invalid mean {w:?}"))?;
    }
    Ok(out)
}

fn parse_item_rule(rest: &str) -> Result<ItemRule, String> {
    let rest = rest.trim_start();
    let body = rest
        .strip_prefix('"')
        .ok_or("items directive needs a quoted pattern")?;
    let end = body.find('"').ok_or("unterminated pattern")?;
    let pattern = body[..end].to_string();
    if pattern.is_empty() {
        return Err("empty item pattern".into());
    }
    let words: Vec<&str> = body[end + 1..].split_whitespace().collect();
    let mut dist = Distribution::default();
    let mut i = 0;
    while i < words.len() {
        match words[i] {
            "stage_means" if words.len() >= i + 4 => {
                dist.stage_means = Some(parse_means(&words[i + 1..i + 4])?);
                i += 4;
            }
            "noise" if i + 1 < words.len() => {
                dist.noise = Some(parse_noise(words[i + 1])?);
                i += 2;
            }
            other => return Err(format!("unexpected {other:?} in items directive")),
        }
    }
    if dist.stage_means.is_none() && dist.noise.is_none() {
        return Err("items directive needs stage_means or noise".into());
    }
    Ok(ItemRule { pattern, dist })
}

/// A pure function from (script, messages, seed) to a reply.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockBehavior {
    script: MockScript,
}

/// Loads and parses a mock script file.
pub fn script_mock(path: &Path) -> Result<MockBehavior, GatewayError> {
    let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    MockBehavior::parse(&text)
}

fn question_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^(?:\w+: )?Question (\d+) : (.*)$").unwrap())
}

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^(\d+)\. (.*)$").unwrap())
}

fn scale_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"from (-?\d+) to (-?\d+)").unwrap())
}

impl MockBehavior {
    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        Ok(Self {
            script: MockScript::parse(text)?,
        })
    }

    pub fn from_script(script: MockScript) -> Self {
        Self { script }
    }

    pub fn respond(&self, messages: &[ChatMessage], seed: Option<u64>) -> String {
        let mut rng = self.rng(messages, seed);
        match messages.first() {
            Some(m) if m.role == Role::System && m.content.starts_with(PROBE_HEADER) => {
                self.answer_probe(&m.content, &mut rng)
            }
            _ => self.answer_turn(messages, &mut rng),
        }
    }

    fn rng(&self, messages: &[ChatMessage], seed: Option<u64>) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(b"convdepth-mock\0");
        h.update(self.script.salt.to_le_bytes());
        match seed {
            Some(s) => {
                h.update([1u8]);
                h.update(s.to_le_bytes());
            }
            None => h.update([0u8]),
        }
        for m in messages {
            h.update(m.role.as_str().as_bytes());
            h.update((m.content.len() as u64).to_le_bytes());
            h.update(m.content.as_bytes());
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn answer_turn(&self, messages: &[ChatMessage], rng: &mut ChaCha8Rng) -> String {
        let mut found = None;
        for (pos, m) in messages.iter().enumerate().rev() {
            if m.role != Role::User {
                continue;
            }
            if let Some(c) = question_re().captures(&m.content) {
                found = Some((pos, c[1].parse::<usize>().unwrap_or(0), c[2].to_string()));
                break;
            }
        }
        let Some((pos, n, theme)) = found else {
            return "I have nothing to add.".to_string();
        };
        // the second speaker sees the first speaker's answer after the question
        let agent = if pos + 1 == messages.len() { "A" } else { "B" };
        let table = self
            .script
            .themes
            .get(&n)
            .or_else(|| (!self.script.fallback.is_empty()).then_some(&self.script.fallback));
        let template = match table {
            Some(alts) => alts.choose(rng).map(String::as_str).unwrap_or(DEFAULT_ANSWER),
            None => DEFAULT_ANSWER,
        };
        template
            .replace("{n}", &n.to_string())
            .replace("{theme}", theme.trim())
            .replace("{agent}", agent)
    }

    fn answer_probe(&self, system: &str, rng: &mut ChaCha8Rng) -> String {
        let (history, setup) = match (system.find(HISTORY_SEPARATOR), system.rfind(HISTORY_SEPARATOR)) {
            (Some(a), Some(b)) if a < b => (
                &system[a + HISTORY_SEPARATOR.len()..b],
                &system[b + HISTORY_SEPARATOR.len()..],
            ),
            _ => ("", system),
        };
        let last_question = question_re()
            .captures_iter(history)
            .filter_map(|c| c[1].parse::<usize>().ok())
            .max()
            .unwrap_or(1);
        let stage = last_question.div_ceil(THEMES_PER_STAGE).clamp(1, 3);
        let (min, max) = scale_re()
            .captures(setup)
            .and_then(|c| Some((c[1].parse::<i64>().ok()?, c[2].parse::<i64>().ok()?)))
            .filter(|(a, b)| a < b)
            .unwrap_or((1, 5));

        if self.script.garble > 0.0 && rng.gen::<f64>() < self.script.garble {
            return GARBLED_ANSWER.to_string();
        }
        let mut out = String::new();
        for c in item_re().captures_iter(setup) {
            let text = &c[2];
            let dist = self
                .script
                .items
                .iter()
                .find(|r| text.contains(&r.pattern))
                .map(|r| &r.dist)
                .unwrap_or(&self.script.global);
            let (mean, noise) = dist.resolve(stage, min, max);
            let z: f64 = rng.sample(StandardNormal);
            let score = (mean + noise * z).round().clamp(min as f64, max as f64) as i64;
            out.push_str(&format!("{}: {}\n", &c[1], score));
        }
        out
    }

    /// Hashed bag-of-words vector, L2-normalised (zero for blank text).
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; EMBEDDING_DIM];
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            let digest = Sha256::digest(word.to_lowercase().as_bytes());
            let slot = u64::from_le_bytes(digest[..8].try_into().unwrap()) as usize % EMBEDDING_DIM;
            v[slot] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(n: usize, text: &str) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system("You are now sharing your thoughts.").unwrap(),
            ChatMessage::user(format!("Question {n} : {text}")).unwrap(),
        ]
    }

    fn probe(last_question: usize, items: usize) -> Vec<ChatMessage> {
        let mut history = String::new();
        for q in 1..=last_question {
            history.push_str(&format!("user: Question {q} : theme\nassistant: answer\n"));
        }
        let mut setup = String::from("You can only reply with numbers from 1 to 5.\n");
        for i in 1..=items {
            setup.push_str(&format!("{i}. Placeholder statement LMS-00{i} (Rich)\n"));
        }
        vec![ChatMessage::system(format!(
            "{PROBE_HEADER}{HISTORY_SEPARATOR}{history}{HISTORY_SEPARATOR}{setup}"
        ))
        .unwrap()]
    }

    #[test]
    fn theme_lookup() {
        let m = MockBehavior::parse("theme 1 canned answer A\n").unwrap();
        assert_eq!(m.respond(&turn(1, "x"), None), "canned answer A");
        assert!(m.respond(&turn(2, "y"), None).contains("question 2"));
    }

    #[test]
    fn seeded_determinism() {
        let m = MockBehavior::parse("theme * a | b | c | d | e | f\nnoise 0.5\n").unwrap();
        for q in 1..10 {
            let msgs = turn(q, "t");
            assert_eq!(m.respond(&msgs, Some(7)), m.respond(&msgs, Some(7)));
        }
        assert_eq!(m.respond(&probe(24, 9), Some(7)), m.respond(&probe(24, 9), Some(7)));
    }

    #[test]
    fn drift_by_stage() {
        let m = MockBehavior::parse("stage_means 1.0 3.0 5.0\n").unwrap();
        assert_eq!(m.respond(&probe(12, 2), None), "1: 1\n2: 1\n");
        assert_eq!(m.respond(&probe(24, 2), None), "1: 3\n2: 3\n");
        assert_eq!(m.respond(&probe(36, 2), None), "1: 5\n2: 5\n");
    }

    #[test]
    fn item_rule_overrides_global() {
        let m = MockBehavior::parse("stage_means 2 2 2\nitems \"LMS-002\" stage_means 4 4 4\n")
            .unwrap();
        assert_eq!(m.respond(&probe(12, 3), None), "1: 2\n2: 4\n3: 2\n");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = MockBehavior::parse("# ok\nseed 1\nstage_means 1 2\n").unwrap_err();
        assert!(matches!(e, GatewayError::ScriptParse { line: 3, .. }));
        let e = MockBehavior::parse("bogus\n").unwrap_err();
        assert!(matches!(e, GatewayError::ScriptParse { line: 1, .. }));
        let e = MockBehavior::parse("\n\nitems \"x stage_means 1 2 3\n").unwrap_err();
        assert!(matches!(e, GatewayError::ScriptParse { line: 3, .. }));
    }

    #[test]
    fn embedding_is_unit_or_zero() {
        let m = MockBehavior::default();
        let v = m.embed("Hello hello world");
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(m.embed("  ").iter().all(|x| *x == 0.0));
    }
}
