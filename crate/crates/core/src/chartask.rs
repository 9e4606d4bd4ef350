//! CharTask: a synthetic sequence-transformation domain.
//!
//! Each item reads `Q s_in t1 t2 t3 t4 s_out`: a random element string, four
//! distinct task tokens whose first names the task, and the task applied to
//! `s_in`. Tasks are sort (`S`), add one (`A`), reverse sort (`R`) and
//! even-odd (`E`). Elements are compared by the code points of their
//! characters; parity and increment act on the last character.
//!
//! The target domain is `CharTask(Sorting, Int)`; every other task/pool
//! combination is out of domain.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Sequence, TokenId, Vocabulary};

pub const QUERY: &str = "Q";
pub const MAX_INPUT_LEN: usize = 49;
pub const INT_POOL_SIZE: usize = 49;
pub const CHAR_POOL_SIZE: usize = 249;

const FILE_MAGIC: &str = "# domcert chartask v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "S")]
    Sort,
    #[serde(rename = "A")]
    AddOne,
    #[serde(rename = "R")]
    ReverseSort,
    #[serde(rename = "E")]
    EvenOdd,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Sort, Task::AddOne, Task::ReverseSort, Task::EvenOdd];

    pub fn token(self) -> &'static str {
        match self {
            Task::Sort => "S",
            Task::AddOne => "A",
            Task::ReverseSort => "R",
            Task::EvenOdd => "E",
        }
    }

    pub fn from_token(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.token() == s)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Int,
    IntChar,
}

impl fmt::Display for Pool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pool::Int => "int",
            Pool::IntChar => "intchar",
        })
    }
}

impl FromStr for Pool {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int" => Ok(Pool::Int),
            "intchar" => Ok(Pool::IntChar),
            _ => Err(Error::input(format!("unknown pool {s:?} (expected int or intchar)"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Element pools and task semantics
// ---------------------------------------------------------------------------

/// The 49 smallest non-negative integers whose last digit is not 9, so that
/// adding one never leaves the digits.
pub fn int_pool() -> Vec<String> {
    (0u32..)
        .filter(|n| n % 10 != 9)
        .take(INT_POOL_SIZE)
        .map(|n| n.to_string())
        .collect()
}

/// 249 lowercase elements not ending in `z`: the 25 single letters `a..y`
/// followed by two-letter elements in lexicographic order.
pub fn char_pool() -> Vec<String> {
    let singles = ('a'..='y').map(String::from);
    let pairs = ('a'..='z').flat_map(|a| ('a'..='y').map(move |b| format!("{a}{b}")));
    singles.chain(pairs).take(CHAR_POOL_SIZE).collect()
}

pub fn pool_elements(pool: Pool) -> Vec<String> {
    match pool {
        Pool::Int => int_pool(),
        Pool::IntChar => {
            let mut v = int_pool();
            v.extend(char_pool());
            v
        }
    }
}

/// Fixed CharTask vocabulary: BOS, EOS, `Q`, task tokens, then every pool
/// element and its increment, each once, in first-seen order.
pub fn vocabulary() -> Vocabulary {
    let mut seen = HashSet::new();
    let mut symbols: Vec<String> = Vec::new();
    let mut push = |s: String| {
        if seen.insert(s.clone()) {
            symbols.push(s);
        }
    };
    push(QUERY.to_string());
    for t in Task::ALL {
        push(t.token().to_string());
    }
    for e in pool_elements(Pool::IntChar) {
        let inc = increment(&e);
        push(e);
        push(inc);
    }
    Vocabulary::with_specials(symbols).expect("CharTask vocabulary is well formed")
}

fn key_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    a.chars().map(u32::from).cmp(b.chars().map(u32::from))
}

fn is_even(e: &str) -> bool {
    e.chars().last().is_some_and(|c| u32::from(c) % 2 == 0)
}

fn increment(e: &str) -> String {
    let mut chars: Vec<char> = e.chars().collect();
    if let Some(last) = chars.last_mut() {
        *last = char::from_u32(u32::from(*last) + 1).unwrap_or(*last);
    }
    chars.into_iter().collect()
}

pub fn apply_task<S: AsRef<str>>(task: Task, elements: &[S]) -> Vec<String> {
    let mut v: Vec<String> = elements.iter().map(|s| s.as_ref().to_string()).collect();
    match task {
        Task::Sort => v.sort_by(|a, b| key_cmp(a, b)),
        Task::ReverseSort => v.sort_by(|a, b| key_cmp(b, a)),
        Task::AddOne => v.iter_mut().for_each(|e| *e = increment(e)),
        Task::EvenOdd => {
            v.sort_by(|a, b| key_cmp(a, b));
            let (mut evens, odds): (Vec<String>, Vec<String>) = v.into_iter().partition(|e| is_even(e));
            evens.extend(odds);
            v = evens;
        }
    }
    v
}

// ---------------------------------------------------------------------------
// Items
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CharTaskItem {
    pub s_in: Vec<String>,
    pub task: Task,
    pub task_tokens: [Task; 4],
    pub s_out: Vec<String>,
}

impl CharTaskItem {
    pub fn new(s_in: Vec<String>, task_tokens: [Task; 4]) -> Result<Self> {
        if s_in.is_empty() || s_in.len() > MAX_INPUT_LEN {
            return Err(Error::input(format!("s_in length {} outside 1..={MAX_INPUT_LEN}", s_in.len())));
        }
        let distinct: HashSet<Task> = task_tokens.iter().copied().collect();
        if distinct.len() != 4 {
            return Err(Error::input("task tokens must be a permutation of S, A, R, E"));
        }
        let task = task_tokens[0];
        let s_out = apply_task(task, &s_in);
        Ok(CharTaskItem { s_in, task, task_tokens, s_out })
    }

    /// `Q s_in task_tokens s_out` as element strings.
    pub fn flat(&self) -> Vec<&str> {
        let mut v = Vec::with_capacity(2 * self.s_in.len() + 5);
        v.push(QUERY);
        v.extend(self.s_in.iter().map(String::as_str));
        v.extend(self.task_tokens.iter().map(|t| t.token()));
        v.extend(self.s_out.iter().map(String::as_str));
        v
    }

    pub fn to_line(&self) -> String {
        self.flat().join(" ")
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let elements: Vec<&str> = line.split_whitespace().collect();
        let parsed = parse_elements(&elements)
            .ok_or_else(|| Error::Format(format!("not a valid CharTask sequence: {line:?}")))?;
        Ok(parsed)
    }

    /// Flat token sequence terminated by EOS.
    pub fn to_sequence(&self, vocab: &Vocabulary) -> Result<Sequence> {
        let mut seq = vocab.encode(&self.flat())?;
        seq.0.push(vocab.eos());
        Ok(seq)
    }

    /// Prompt = the first `prompt_len` tokens, response = the rest (EOS included).
    pub fn split_at(&self, vocab: &Vocabulary, prompt_len: usize) -> Result<(Sequence, Sequence)> {
        let seq = self.to_sequence(vocab)?;
        if prompt_len >= seq.len() {
            return Err(Error::input(format!(
                "prompt length {prompt_len} leaves no response in a {}-token sequence",
                seq.len()
            )));
        }
        let (x, y) = seq.split_at(prompt_len);
        Ok((Sequence::from(x), Sequence::from(y)))
    }

    /// Question/answer split: prompt `Q s_in task_tokens`, response `s_out EOS`.
    pub fn question_answer(&self, vocab: &Vocabulary) -> Result<(Sequence, Sequence)> {
        self.split_at(vocab, 1 + self.s_in.len() + 4)
    }

    /// Member of `CharTask(Sorting, Int)`.
    pub fn in_target_domain(&self) -> bool {
        let ints: HashSet<String> = int_pool().into_iter().collect();
        self.task == Task::Sort && self.s_in.iter().all(|e| ints.contains(e))
    }
}

fn is_payload(e: &str) -> bool {
    e != QUERY && Task::from_token(e).is_none() && e != Vocabulary::BOS && e != Vocabulary::EOS && !e.is_empty()
}

fn parse_elements(elements: &[&str]) -> Option<CharTaskItem> {
    let (&first, rest) = elements.split_first()?;
    if first != QUERY {
        return None;
    }
    let n_in = rest.iter().take_while(|e| is_payload(e)).count();
    if n_in == 0 {
        return None;
    }
    let (s_in, rest) = rest.split_at(n_in);
    if rest.len() < 4 {
        return None;
    }
    let (tasks, s_out) = rest.split_at(4);
    let mut task_tokens = [Task::Sort; 4];
    for (slot, e) in task_tokens.iter_mut().zip(tasks) {
        *slot = Task::from_token(e)?;
    }
    let item = CharTaskItem::new(s_in.iter().map(|s| s.to_string()).collect(), task_tokens).ok()?;
    (item.s_out.len() == s_out.len() && item.s_out.iter().zip(s_out).all(|(a, b)| a == b)).then_some(item)
}

/// Valid iff the elements read `Q s_in` + four distinct task tokens +
/// the task applied to `s_in`, with nothing after.
pub fn check_valid_elements<S: AsRef<str>>(elements: &[S]) -> bool {
    let refs: Vec<&str> = elements.iter().map(AsRef::as_ref).collect();
    parse_elements(&refs).is_some()
}

/// Token-level check: the sequence must additionally end in exactly one EOS.
pub fn check_valid_sequence(tokens: &[TokenId], vocab: &Vocabulary) -> bool {
    let Some((&last, body)) = tokens.split_last() else {
        return false;
    };
    if last != vocab.eos() || body.iter().any(|&t| t == vocab.eos() || t == vocab.bos()) {
        return false;
    }
    match vocab.decode(body) {
        Ok(elements) => check_valid_elements(&elements),
        Err(_) => false,
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharTaskSpec {
    pub tasks: Vec<Task>,
    pub pool: Pool,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Redraw items that fall in `CharTask(Sorting, Int)`; used for out-of-domain sets.
    #[serde(default)]
    pub exclude_target: bool,
}

impl CharTaskSpec {
    pub fn target(train: usize, val: usize, test: usize, seed: u64) -> Self {
        CharTaskSpec { tasks: vec![Task::Sort], pool: Pool::Int, train, val, test, max_len: MAX_INPUT_LEN, seed, exclude_target: false }
    }

    pub fn general(train: usize, val: usize, test: usize, seed: u64) -> Self {
        CharTaskSpec { tasks: Task::ALL.to_vec(), pool: Pool::IntChar, train, val, test, max_len: MAX_INPUT_LEN, seed, exclude_target: false }
    }

    pub fn out_of_domain(train: usize, val: usize, test: usize, seed: u64) -> Self {
        CharTaskSpec { exclude_target: true, ..Self::general(train, val, test, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::input("CharTask spec needs at least one task"));
        }
        if self.tasks.iter().collect::<HashSet<_>>().len() != self.tasks.len() {
            return Err(Error::input("duplicate tasks in CharTask spec"));
        }
        if self.max_len == 0 || self.max_len > MAX_INPUT_LEN {
            return Err(Error::input(format!("max_len must be in 1..={MAX_INPUT_LEN}")));
        }
        if self.exclude_target && self.pool == Pool::Int && self.tasks == [Task::Sort] {
            return Err(Error::input("excluding the target domain leaves nothing to generate"));
        }
        Ok(())
    }

    /// `key = value` lines, one per field, in a fixed order.
    pub fn to_config_block(&self) -> String {
        let tasks: Vec<&str> = self.tasks.iter().map(|t| t.token()).collect();
        format!(
            "tasks = {}\npool = {}\ntrain = {}\nval = {}\ntest = {}\nmax_len = {}\nseed = {}\nexclude_target = {}\n",
            tasks.join(","),
            self.pool,
            self.train,
            self.val,
            self.test,
            self.max_len,
            self.seed,
            self.exclude_target
        )
    }

    pub fn from_config_block(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key = value, got {line:?}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| Error::Format(format!("missing spec field {k:?}")));
        let num = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Format(format!("spec field {k:?} is not an integer")))
        };
        let tasks = get("tasks")?
            .split(',')
            .map(|t| Task::from_token(t.trim()).ok_or_else(|| Error::Format(format!("unknown task {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let spec = CharTaskSpec {
            tasks,
            pool: get("pool")?.parse()?,
            train: num("train")? as usize,
            val: num("val")? as usize,
            test: num("test")? as usize,
            max_len: num("max_len")? as usize,
            seed: num("seed")?,
            exclude_target: match fields.get("exclude_target").map(String::as_str) {
                None | Some("false") => false,
                Some("true") => true,
                Some(other) => return Err(Error::Format(format!("exclude_target must be a bool, got {other:?}"))),
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_config_block().as_bytes()))
    }
}

/// Draws one item. Lengths are uniform in `1..=max_len`, elements uniform
/// with replacement from the pool, the task uniform over `spec.tasks`.
pub fn generate_item(spec: &CharTaskSpec, rng: &mut dyn RngCore) -> CharTaskItem {
    let pool = pool_elements(spec.pool);
    loop {
        let item = draw_item(spec, &pool, rng);
        if !(spec.exclude_target && item.in_target_domain()) {
            return item;
        }
    }
}

fn draw_item(spec: &CharTaskSpec, pool: &[String], rng: &mut dyn RngCore) -> CharTaskItem {
    let len = rng.random_range(1..=spec.max_len);
    let s_in: Vec<String> = (0..len).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect();
    let task = spec.tasks[rng.random_range(0..spec.tasks.len())];
    let mut others: Vec<Task> = Task::ALL.into_iter().filter(|&t| t != task).collect();
    others.shuffle(rng);
    let task_tokens = [task, others[0], others[1], others[2]];
    CharTaskItem::new(s_in, task_tokens).expect("generated items are well formed")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<CharTaskItem>,
    pub val: Vec<CharTaskItem>,
    pub test: Vec<CharTaskItem>,
}

/// Generates all three splits from `spec.seed`; no flat sequence appears twice.
pub fn build_dataset(spec: &CharTaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool = pool_elements(spec.pool);
    let needed = spec.train + spec.val + spec.test;
    let budget = needed.saturating_mul(100).saturating_add(10_000);
    let mut seen = HashSet::with_capacity(needed);
    let mut items = Vec::with_capacity(needed);
    let mut attempts = 0usize;
    while items.len() < needed {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Resource(format!(
                "only {} distinct items after {budget} draws; the spec's item space is too small",
                items.len()
            )));
        }
        let item = draw_item(spec, &pool, &mut rng);
        if spec.exclude_target && item.in_target_domain() {
            continue;
        }
        if seen.insert(item.to_line()) {
            items.push(item);
        }
    }
    let test = items.split_off(spec.train + spec.val);
    let val = items.split_off(spec.train);
    Ok(Dataset { train: items, val, test })
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitFile {
    pub spec: CharTaskSpec,
    pub split: String,
    pub items: Vec<CharTaskItem>,
}

/// One flat sequence per line after a `#` header holding the spec block,
/// its hash, the seed and the split name.
pub fn write_split(path: impl AsRef<Path>, spec: &CharTaskSpec, split: &str, items: &[CharTaskItem]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{FILE_MAGIC}")?;
    writeln!(out, "# spec_hash = {}", spec.hash())?;
    writeln!(out, "# split = {split}")?;
    writeln!(out, "# count = {}", items.len())?;
    for line in spec.to_config_block().lines() {
        writeln!(out, "# spec.{line}")?;
    }
    for item in items {
        writeln!(out, "{}", item.to_line())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_split(path: impl AsRef<Path>) -> Result<SplitFile> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(l)) if l.trim_end() == FILE_MAGIC => {}
        _ => return Err(Error::Format(format!("{} is not a CharTask split file", path.display()))),
    }
    let mut block = String::new();
    let (mut hash, mut split, mut count) = (None, None, None);
    let mut items = Vec::new();
    for line in lines {
        let line = line?;
        if let Some(h) = line.strip_prefix('#') {
            let h = h.trim();
            if let Some(rest) = h.strip_prefix("spec.") {
                block.push_str(rest);
                block.push('\n');
            } else if let Some((k, v)) = h.split_once('=') {
                match k.trim() {
                    "spec_hash" => hash = Some(v.trim().to_string()),
                    "split" => split = Some(v.trim().to_string()),
                    "count" => count = v.trim().parse::<usize>().ok(),
                    _ => {}
                }
            }
        } else if !line.trim().is_empty() {
            items.push(CharTaskItem::parse_line(&line)?);
        }
    }
    let spec = CharTaskSpec::from_config_block(&block)?;
    if hash.as_deref() != Some(spec.hash().as_str()) {
        return Err(Error::Format("spec hash does not match the spec block".into()));
    }
    if count.is_some_and(|c| c != items.len()) {
        return Err(Error::Format("item count does not match the header".into()));
    }
    Ok(SplitFile { spec, split: split.unwrap_or_default(), items })
}
