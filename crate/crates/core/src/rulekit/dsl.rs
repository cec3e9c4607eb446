//! The rewrite-rule language: parsing rules files, matching a question
//! against a pattern, and interpolating the emit template.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{CommonsenseType, Token};
use crate::error::{Error, Result};

/// Auxiliary verbs accepted by the `<AUX>` slot.
pub const AUXILIARIES: [&str; 10] = [
    "is", "are", "was", "were", "will", "would", "does", "did", "can", "could",
];

const ANSWER: &str = "answer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    What,
    Whose,
    How,
    Where,
    Who,
    Which,
    Why,
    Other,
}

impl QuestionType {
    pub fn from_word(word: &str) -> QuestionType {
        match word.to_ascii_lowercase().as_str() {
            "what" => QuestionType::What,
            "whose" => QuestionType::Whose,
            "how" => QuestionType::How,
            "where" => QuestionType::Where,
            "who" => QuestionType::Who,
            "which" => QuestionType::Which,
            "why" => QuestionType::Why,
            _ => QuestionType::Other,
        }
    }

    /// Classifies a question by its first word.
    pub fn of_question(question: &[Token]) -> QuestionType {
        question
            .first()
            .and_then(Token::as_word)
            .map_or(QuestionType::Other, QuestionType::from_word)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternAtom {
    Literal(String),
    Person(String),
    Aux(String),
    Rest(String),
}

impl PatternAtom {
    fn name(&self) -> Option<&str> {
        match self {
            PatternAtom::Literal(_) => None,
            PatternAtom::Person(n) | PatternAtom::Aux(n) | PatternAtom::Rest(n) => Some(n),
        }
    }
}

impl fmt::Display for PatternAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternAtom::Literal(w) => f.write_str(w),
            PatternAtom::Person(n) => write!(f, "<PERSON:{n}>"),
            PatternAtom::Aux(n) => write!(f, "<AUX:{n}>"),
            PatternAtom::Rest(n) => write!(f, "<REST:{n}...>"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplatePart {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub rule_id: String,
    pub question_type: QuestionType,
    pub commonsense_type: CommonsenseType,
    pub pattern: Vec<PatternAtom>,
    pub template: Vec<TemplatePart>,
    pub priority: i64,
}

pub type Captures = BTreeMap<String, Vec<Token>>;

impl Rule {
    /// Builds a rule from pattern and template text, checking that every
    /// placeholder names a captured atom.
    pub fn new(
        rule_id: impl Into<String>,
        priority: i64,
        commonsense_type: CommonsenseType,
        pattern: &str,
        template: &str,
    ) -> Result<Rule> {
        let rule_id = rule_id.into();
        let pattern = parse_pattern(pattern).map_err(|e| Error::Rules(format!("rule {rule_id}: {e}")))?;
        let template = parse_template(template).map_err(|e| Error::Rules(format!("rule {rule_id}: {e}")))?;
        let question_type = match pattern.first() {
            Some(PatternAtom::Literal(w)) => QuestionType::from_word(w),
            _ => QuestionType::Other,
        };
        let rule = Rule {
            rule_id,
            question_type,
            commonsense_type,
            pattern,
            template,
            priority,
        };
        rule.check()?;
        Ok(rule)
    }

    fn check(&self) -> Result<()> {
        if self.pattern.is_empty() {
            return Err(Error::Rules(format!("rule {}: empty pattern", self.rule_id)));
        }
        let mut names = HashSet::new();
        for atom in &self.pattern {
            if let Some(n) = atom.name() {
                if n == ANSWER || !names.insert(n) {
                    return Err(Error::Rules(format!(
                        "rule {}: atom name <{n}> reused or reserved",
                        self.rule_id
                    )));
                }
            }
        }
        for part in &self.template {
            if let TemplatePart::Placeholder(p) = part {
                if p != ANSWER && !names.contains(p.as_str()) {
                    return Err(Error::Rules(format!(
                        "rule {}: template placeholder <{p}> names no pattern atom",
                        self.rule_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Matches the whole question against the pattern, returning named captures.
    pub fn captures(&self, question: &[Token]) -> Option<Captures> {
        let mut caps = Captures::new();
        match_atoms(&self.pattern, question, &mut caps).then_some(caps)
    }

    pub fn matches(&self, question: &[Token]) -> bool {
        self.captures(question).is_some()
    }

    /// Interpolates the template from `captures` plus the answer span.
    pub fn render(&self, captures: &Captures, answer: &[Token]) -> Result<Vec<Token>> {
        let mut out = Vec::new();
        for part in &self.template {
            match part {
                TemplatePart::Literal(w) => out.push(Token::Word(w.clone())),
                TemplatePart::Placeholder(p) if p == ANSWER => out.extend_from_slice(answer),
                TemplatePart::Placeholder(p) => match captures.get(p) {
                    Some(span) => out.extend_from_slice(span),
                    None => return Err(Error::UnboundPlaceholder(p.clone())),
                },
            }
        }
        Ok(out)
    }
}

fn is_aux(word: &str) -> bool {
    AUXILIARIES.iter().any(|a| a.eq_ignore_ascii_case(word))
}

fn match_atoms(atoms: &[PatternAtom], tokens: &[Token], caps: &mut Captures) -> bool {
    let Some((atom, rest_atoms)) = atoms.split_first() else {
        return tokens.is_empty();
    };
    match atom {
        PatternAtom::Rest(name) => {
            // Greedy: try the longest non-empty span first.
            for len in (1..=tokens.len()).rev() {
                if match_atoms(rest_atoms, &tokens[len..], caps) {
                    caps.insert(name.clone(), tokens[..len].to_vec());
                    return true;
                }
            }
            false
        }
        _ => {
            let Some((tok, rest_tokens)) = tokens.split_first() else {
                return false;
            };
            let ok = match (atom, tok) {
                (PatternAtom::Literal(lit), Token::Word(w)) => lit.eq_ignore_ascii_case(w),
                (PatternAtom::Aux(_), Token::Word(w)) => is_aux(w),
                (PatternAtom::Person(_), Token::PersonLink(_)) => true,
                _ => false,
            };
            if ok && match_atoms(rest_atoms, rest_tokens, caps) {
                if let Some(name) = atom.name() {
                    caps.insert(name.to_string(), vec![tok.clone()]);
                }
                true
            } else {
                false
            }
        }
    }
}

fn parse_slot(inner: &str) -> std::result::Result<PatternAtom, String> {
    let inner = inner.strip_suffix("...").unwrap_or(inner);
    let (kind, name) = match inner.split_once(':') {
        Some((k, n)) => (k, n.to_ascii_lowercase()),
        None => (inner, inner.to_ascii_lowercase()),
    };
    if name.is_empty() {
        return Err(format!("empty atom name in <{inner}>"));
    }
    match kind.to_ascii_uppercase().as_str() {
        "PERSON" => Ok(PatternAtom::Person(name)),
        "AUX" => Ok(PatternAtom::Aux(name)),
        "REST" => Ok(PatternAtom::Rest(name)),
        _ => Err(format!("unknown atom <{inner}>")),
    }
}

pub fn parse_pattern(text: &str) -> std::result::Result<Vec<PatternAtom>, String> {
    text.split_whitespace()
        .map(|w| match w.strip_prefix('<').and_then(|s| s.strip_suffix('>')) {
            Some(inner) => parse_slot(inner),
            None => Ok(PatternAtom::Literal(w.to_ascii_lowercase())),
        })
        .collect()
}

pub fn parse_template(text: &str) -> std::result::Result<Vec<TemplatePart>, String> {
    text.split_whitespace()
        .map(|w| match w.strip_prefix('<').and_then(|s| s.strip_suffix('>')) {
            Some("") => Err("empty placeholder <>".to_string()),
            Some(inner) => Ok(TemplatePart::Placeholder(inner.to_ascii_lowercase())),
            None => Ok(TemplatePart::Literal(w.to_string())),
        })
        .collect()
}

/// Rules ordered by descending priority; ties keep file order.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(mut rules: Vec<Rule>) -> Result<RuleSet> {
        let mut ids = HashSet::new();
        for r in &rules {
            if !ids.insert(r.rule_id.as_str()) {
                return Err(Error::Rules(format!("duplicate rule id {}", r.rule_id)));
            }
        }
        rules.sort_by_key(|r| std::cmp::Reverse(r.priority));
        Ok(RuleSet { rules })
    }

    /// The shipped rule set.
    pub fn default_rules() -> RuleSet {
        parse_rules(DEFAULT_RULES).expect("shipped rules parse")
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, rule_id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }

    /// Rule id -> commonsense type, as declared in the rules file.
    pub fn type_table(&self) -> BTreeMap<String, CommonsenseType> {
        self.rules
            .iter()
            .map(|r| (r.rule_id.clone(), r.commonsense_type))
            .collect()
    }

    /// First matching rule in priority order.
    pub fn first_match(&self, question: &[Token]) -> Option<&Rule> {
        self.rules.iter().find(|r| r.matches(question))
    }
}

pub const DEFAULT_RULES: &str = include_str!("default_rules.txt");

/// Parses a rules file. Blank lines and `#` comments are ignored.
pub fn parse_rules(text: &str) -> Result<RuleSet> {
    let err = |line: usize, msg: String| Error::Parse {
        line,
        message: format!("rules: {msg}"),
    };
    let mut rules = Vec::new();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    while let Some((line_no, header)) = lines.next() {
        let words: Vec<&str> = header.split_whitespace().collect();
        let (id, priority, ctype) = match words.as_slice() {
            ["rule", id, "priority", p, "type", t] => {
                let p: i64 = p
                    .parse()
                    .map_err(|_| err(line_no, format!("bad priority {p:?}")))?;
                let t: CommonsenseType = t.parse().map_err(|e: Error| err(line_no, e.to_string()))?;
                (id.to_string(), p, t)
            }
            _ => {
                return Err(err(
                    line_no,
                    format!("expected `rule <id> priority <n> type <type>`, got {header:?}"),
                ))
            }
        };
        let mut field = |key: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, l)) => l
                    .strip_prefix(key)
                    .map(|v| (n, v.trim().to_string()))
                    .ok_or_else(|| err(n, format!("expected `{key}` line"))),
                None => Err(err(line_no, format!("rule {id}: missing `{key}` line"))),
            }
        };
        let (_, pattern) = field("match:")?;
        let (emit_line, template) = field("emit:")?;
        let rule = Rule::new(id, priority, ctype, &pattern, &template).map_err(|e| match e {
            Error::Rules(m) => err(emit_line, m),
            other => other,
        })?;
        rules.push(rule);
    }
    RuleSet::new(rules).map_err(|e| match e {
        Error::Rules(m) => err(0, m),
        other => other,
    })
}
