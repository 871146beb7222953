//! Tagging schemes, label vocabularies and the transition-constraint matrix.
//!
//! Labels are laid out per entity type in `B, M, E, S` order, followed by a
//! single trailing `O`. With `T` entity types the vocabulary has `k = 4T + 1`
//! labels and label `4t + p` is position tag `p` of type `t`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Bmes,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Bmes => f.write_str("BMES"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BMES" | "bmes" => Ok(Scheme::Bmes),
            other => Err(Error::invalid(format!("unsupported tagging scheme `{other}`"))),
        }
    }
}

/// Position of a token relative to the entity it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PositionTag {
    B,
    M,
    E,
    S,
    O,
}

impl PositionTag {
    pub const ENTITY_TAGS: [PositionTag; 4] = [PositionTag::B, PositionTag::M, PositionTag::E, PositionTag::S];

    pub fn as_char(self) -> char {
        match self {
            PositionTag::B => 'B',
            PositionTag::M => 'M',
            PositionTag::E => 'E',
            PositionTag::S => 'S',
            PositionTag::O => 'O',
        }
    }

    fn from_char(c: char) -> Option<Self> {
        Some(match c {
            'B' => PositionTag::B,
            'M' => PositionTag::M,
            'E' => PositionTag::E,
            'S' => PositionTag::S,
            'O' => PositionTag::O,
            _ => return None,
        })
    }

    /// Tags that may open a sentence (`B`, `S`, `O`).
    pub fn can_start(self) -> bool {
        matches!(self, PositionTag::B | PositionTag::S | PositionTag::O)
    }

    /// Tags that may close a sentence (`E`, `S`, `O`).
    pub fn can_end(self) -> bool {
        matches!(self, PositionTag::E | PositionTag::S | PositionTag::O)
    }
}

/// One entry of a [`LabelSet`]. `entity_type` indexes into
/// [`LabelSet::entity_types`] and is `None` only for `O`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Label {
    pub tag: PositionTag,
    pub entity_type: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    scheme: Scheme,
    entity_types: Vec<String>,
    labels: Vec<Label>,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    /// Builds the vocabulary for `entity_types`: `B, M, E, S` for each type
    /// in input order, then `O`.
    pub fn new<S: AsRef<str>>(entity_types: &[S], scheme: Scheme) -> Result<Self> {
        if entity_types.is_empty() {
            return Err(Error::invalid("at least one entity type is required"));
        }
        let mut seen = HashSet::new();
        for ty in entity_types {
            let ty = ty.as_ref();
            if ty.is_empty() {
                return Err(Error::invalid("entity type names must be non-empty"));
            }
            if ty.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("entity type `{ty}` contains whitespace")));
            }
            if !seen.insert(ty) {
                return Err(Error::invalid(format!("duplicate entity type `{ty}`")));
            }
        }

        let entity_types: Vec<String> = entity_types.iter().map(|t| t.as_ref().to_owned()).collect();
        let mut labels = Vec::with_capacity(4 * entity_types.len() + 1);
        for t in 0..entity_types.len() {
            for tag in PositionTag::ENTITY_TAGS {
                labels.push(Label { tag, entity_type: Some(t) });
            }
        }
        labels.push(Label { tag: PositionTag::O, entity_type: None });

        let names: Vec<String> = labels
            .iter()
            .map(|l| match l.entity_type {
                Some(t) => format!("{}-{}", l.tag.as_char(), entity_types[t]),
                None => "O".to_owned(),
            })
            .collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();

        Ok(LabelSet { scheme, entity_types, labels, names, index })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Number of labels, `k`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Label {
        self.labels[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn type_index(&self, entity_type: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == entity_type)
    }

    /// Index of the label with position `tag` for type number `entity_type`.
    pub fn encode(&self, tag: PositionTag, entity_type: usize) -> usize {
        match tag {
            PositionTag::O => self.outside(),
            tag => {
                debug_assert!(entity_type < self.entity_types.len());
                4 * entity_type + tag as usize
            }
        }
    }

    pub fn outside(&self) -> usize {
        self.labels.len() - 1
    }

    /// Hex SHA-256 over the label names in index order.
    pub fn vocab_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.scheme.to_string().as_bytes());
        for name in &self.names {
            hasher.update(b"\n");
            hasher.update(name.as_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes the vocabulary file: a `scheme=BMES k=<k>` header followed by
    /// one label name per line in index order.
    pub fn write_vocab<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "scheme={} k={}", self.scheme, self.len())?;
        for name in &self.names {
            writeln!(out, "{name}")?;
        }
        Ok(())
    }

    pub fn read_vocab<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, message: "empty vocabulary file".into() })?;
        let header = header?;
        let (scheme, k) = parse_vocab_header(header.trim())
            .ok_or_else(|| Error::Parse { line: 1, message: format!("bad header `{header}`") })?;

        let mut names = Vec::with_capacity(k);
        for (i, line) in lines {
            let line = line?;
            let name = line.trim();
            if name.is_empty() {
                continue;
            }
            names.push((i + 1, name.to_owned()));
        }
        if names.len() != k {
            return Err(Error::Parse {
                line: 1,
                message: format!("header declares k={k} but {} labels follow", names.len()),
            });
        }

        let mut types = Vec::new();
        for (line, name) in &names {
            let (tag, ty) = split_label_name(name)
                .ok_or_else(|| Error::Parse { line: *line, message: format!("bad label `{name}`") })?;
            if tag == PositionTag::B {
                types.push(ty.expect("B labels carry a type").to_owned());
            }
        }
        let set = LabelSet::new(&types, scheme).map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        for ((line, name), expected) in names.iter().zip(set.names()) {
            if name != expected {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("expected label `{expected}`, found `{name}`"),
                });
            }
        }
        Ok(set)
    }
}

fn parse_vocab_header(header: &str) -> Option<(Scheme, usize)> {
    let mut scheme = None;
    let mut k = None;
    for field in header.split_whitespace() {
        let (key, value) = field.split_once('=')?;
        match key {
            "scheme" => scheme = value.parse().ok(),
            "k" => k = value.parse().ok(),
            _ => return None,
        }
    }
    Some((scheme?, k?))
}

/// Splits `B-PER` into `(B, Some("PER"))` and `O` into `(O, None)`.
pub fn split_label_name(name: &str) -> Option<(PositionTag, Option<&str>)> {
    if name == "O" {
        return Some((PositionTag::O, None));
    }
    let (tag, ty) = name.split_once('-')?;
    let mut chars = tag.chars();
    let tag = PositionTag::from_char(chars.next()?)?;
    if chars.next().is_some() || tag == PositionTag::O || ty.is_empty() {
        return None;
    }
    Some((tag, Some(ty)))
}

/// Valid-transition matrix `M` with start/end masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintMatrix {
    k: usize,
    allow: Vec<bool>,
    start_allow: Vec<bool>,
    end_allow: Vec<bool>,
}

impl ConstraintMatrix {
    /// Encodes the BMES grammar over `labels`:
    ///
    /// | from  | allowed successors        |
    /// |-------|---------------------------|
    /// | B-X   | M-X, E-X                  |
    /// | M-X   | M-X, E-X                  |
    /// | E-X   | B-\*, S-\*, O             |
    /// | S-X   | B-\*, S-\*, O             |
    /// | O     | B-\*, S-\*, O             |
    pub fn bmes(labels: &LabelSet) -> Self {
        let k = labels.len();
        let mut allow = vec![false; k * k];
        for (p, from) in labels.labels().iter().enumerate() {
            for (q, to) in labels.labels().iter().enumerate() {
                allow[p * k + q] = bmes_transition(*from, *to);
            }
        }
        let start_allow = labels.labels().iter().map(|l| l.tag.can_start()).collect();
        let end_allow = labels.labels().iter().map(|l| l.tag.can_end()).collect();
        ConstraintMatrix { k, allow, start_allow, end_allow }
    }

    /// Every transition, start and end allowed.
    pub fn unconstrained(k: usize) -> Self {
        ConstraintMatrix {
            k,
            allow: vec![true; k * k],
            start_allow: vec![true; k],
            end_allow: vec![true; k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn allows(&self, from: usize, to: usize) -> bool {
        self.allow[from * self.k + to]
    }

    /// Row `M[from]`: the allowed successors of `from`.
    pub fn row(&self, from: usize) -> &[bool] {
        &self.allow[from * self.k..(from + 1) * self.k]
    }

    pub fn start_allow(&self) -> &[bool] {
        &self.start_allow
    }

    pub fn end_allow(&self) -> &[bool] {
        &self.end_allow
    }

    /// Number of `true` entries of the transition matrix.
    pub fn count_allowed(&self) -> usize {
        self.allow.iter().filter(|&&a| a).count()
    }

    /// True iff the sequence starts on a start-allowed label, ends on an
    /// end-allowed label, and every adjacent pair is allowed.
    pub fn is_valid_sequence(&self, seq: &[usize]) -> Result<bool> {
        if let Some(&bad) = seq.iter().find(|&&i| i >= self.k) {
            return Err(Error::invalid(format!("label index {bad} out of range for k={}", self.k)));
        }
        let (Some(&first), Some(&last)) = (seq.first(), seq.last()) else {
            return Ok(true);
        };
        Ok(self.start_allow[first]
            && self.end_allow[last]
            && seq.windows(2).all(|w| self.allows(w[0], w[1])))
    }

    /// Like [`is_valid_sequence`](Self::is_valid_sequence) but ignores the end mask.
    pub fn is_valid_prefix(&self, seq: &[usize]) -> Result<bool> {
        if let Some(&bad) = seq.iter().find(|&&i| i >= self.k) {
            return Err(Error::invalid(format!("label index {bad} out of range for k={}", self.k)));
        }
        Ok(seq.first().is_none_or(|&f| self.start_allow[f]) && seq.windows(2).all(|w| self.allows(w[0], w[1])))
    }
}

fn bmes_transition(from: Label, to: Label) -> bool {
    use PositionTag::*;
    match from.tag {
        B | M => matches!(to.tag, M | E) && to.entity_type == from.entity_type,
        E | S | O => matches!(to.tag, B | S | O),
    }
}
