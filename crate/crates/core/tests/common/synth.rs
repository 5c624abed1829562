//! Deterministic synthetic issue corpora.

use chrono::{DateTime, Duration, TimeZone, Utc};
use faultloom_core::corpus::{Comment, IssueState, PortableRng};
use faultloom_core::{GoldLabel, GoldSet, IssueRecord, Taxonomy};

pub const REPOS: [&str; 2] = ["tensorflow/tfjs", "tensorflow/tfjs-models"];

pub const EXCLUSION_LABELS: [&str; 1] = ["stat:awaiting response"];

/// Domain words for the shipped illustrative vocabulary.
pub const VOCABULARY: &[&str] = &[
    "tensor", "tensors", "WebGL", "dispose", "tf.js", "tfjs", "layers model", "graph model",
    "backend", "wasm", "webgpu", "kernel", "gradient", "training", "inference", "epoch",
    "optimizer", "conv2d", "matMul", "softmax", "quantization", "tf.tidy", "tf.browser",
    "model.fit", "model.predict", "loadGraphModel", "loadLayersModel", "batch size",
    "learning rate", "neural network", "deep learning", "GPU", "CUDA", "cuDNN", "onnx", "keras",
    "checkpoint", "weights", "embedding", "lstm", "transformer", "tokenizer", "dataset",
    "out of memory", "texture", "shader",
];

const FILLER: &[&str] = &[
    "page", "button", "docs", "website", "build", "install", "error", "crash", "slow", "question",
    "help", "thanks", "version", "browser", "node", "npm", "typescript", "import", "function",
    "return", "undefined", "null", "works", "fails", "when", "the", "a", "with", "after", "update",
    "chrome", "safari", "firefox", "android", "ios", "react", "webpack", "bundle", "memory", "out",
    "of", "size", "rate", "model", "graph", "layers", "fit", "predict", "browser.", "(see", "logs)",
    "v4.2.0", "->", "=>", "it's", "don't", "naïve", "über", "café",
];

/// Strings that look like vocabulary terms but must not match (or match only
/// through a genuine boundary).
const NEAR_MISSES: &[&str] = &[
    "WebGL2", "webglcontext", "disposed", "undisposed", "tfjs-node", "tf.jsx", "mytf.js", "tf.js.",
    "model.fitting", "batch  size", "GPUs", "x-tensor-y", "TENSOR", "tensor_", "_tensor",
    "tf.tidy()", "out-of-memory", "Out Of Memory", "layers-model", "learning_rate", "graph model2",
    "Tf.Js", "2tensor", "tensor2", "cudnn8", "ONNX", "matmul", "soft-max", "tensorflow",
];

const PLAIN_LABELS: &[&str] = &["type:bug", "type:feature", "comp:webgl", "comp:wasm", "stat:awaiting tensorflower"];
const NOISY_EXCLUSION: &[&str] = &["stat:awaiting response", "STAT:Awaiting Response", " stat:awaiting response "];

const ROLES: &[&str] = &["CONTRIBUTOR", "MEMBER", "NONE", "COLLABORATOR"];

pub struct Synth {
    rng: PortableRng,
}

fn cutoff_instant() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
}

impl Synth {
    pub fn new(seed: u64) -> Self {
        Synth {
            rng: PortableRng::seed(seed),
        }
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.rng.below(n)
    }

    pub fn chance(&mut self, percent: u64) -> bool {
        self.rng.below(100) < percent
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.rng.below(items.len() as u64) as usize]
    }

    fn vary_case(&mut self, word: &str) -> String {
        match self.below(4) {
            0 => word.to_uppercase(),
            1 => word.to_lowercase(),
            _ => word.to_string(),
        }
    }

    /// `n` words of filler with vocabulary terms and near misses mixed in.
    pub fn words(&mut self, n: usize, vocab_pct: u64, near_pct: u64) -> String {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let roll = self.below(100);
            let w = if roll < vocab_pct {
                let t = *self.pick(VOCABULARY);
                self.vary_case(t)
            } else if roll < vocab_pct + near_pct {
                self.pick(NEAR_MISSES).to_string()
            } else {
                self.pick(FILLER).to_string()
            };
            out.push(w);
        }
        out.join(" ")
    }

    /// Filler only: never contains a vocabulary hit.
    pub fn clean_words(&mut self, n: usize) -> String {
        const SAFE: &[&str] = &[
            "page", "button", "docs", "website", "typo", "install", "question", "thanks", "browser",
            "npm", "typescript", "import", "function", "chrome", "safari", "react", "webpack",
            "please", "add", "support", "for", "dark", "mode", "readme", "link", "broken?",
        ];
        (0..n).map(|_| *self.pick(SAFE)).collect::<Vec<_>>().join(" ")
    }

    pub fn instant_between(&mut self, from: DateTime<Utc>, to: DateTime<Utc>) -> DateTime<Utc> {
        let span = (to - from).num_seconds().max(1) as u64;
        from + Duration::seconds(self.below(span) as i64)
    }

    fn comments(&mut self, after: DateTime<Utc>, n: usize, vocab_pct: u64) -> Vec<Comment> {
        let mut at = after;
        (0..n)
            .map(|_| {
                at += Duration::minutes(1 + self.below(60 * 24 * 10) as i64);
                let len = 3 + self.below(13) as usize;
                Comment {
                    author_role: self.pick(ROLES).to_string(),
                    created_at: at,
                    body: self.words(len, vocab_pct, 10),
                }
            })
            .collect()
    }

    fn finish(&mut self, mut r: IssueRecord) -> IssueRecord {
        let last = r.comments.last().map_or(r.created_at, |c| c.created_at);
        r.updated_at = last + Duration::hours(self.below(48) as i64);
        if self.chance(70) {
            r.state = IssueState::Closed;
            r.closed_at = Some(r.updated_at);
        }
        r
    }

    fn blank(repo: &str, number: u64, created_at: DateTime<Utc>) -> IssueRecord {
        IssueRecord {
            repo: repo.to_string(),
            number,
            title: String::new(),
            state: IssueState::Open,
            created_at,
            updated_at: created_at,
            closed_at: None,
            body: String::new(),
            labels: Vec::new(),
            comments: Vec::new(),
            is_pull_request: false,
            url: format!("https://github.com/{repo}/issues/{number}"),
        }
    }

    /// An unconstrained issue for exercising the deterministic filter: dates
    /// straddle the cutoff, labels include exclusion variants, text mixes
    /// vocabulary terms with near misses.
    pub fn wild_issue(&mut self, repo: &str, number: u64) -> IssueRecord {
        let created = match self.below(10) {
            0 => cutoff_instant() - Duration::seconds(1),
            1 => cutoff_instant(),
            _ => self.instant_between(
                Utc.with_ymd_and_hms(2019, 6, 1, 0, 0, 0).unwrap(),
                Utc.with_ymd_and_hms(2020, 6, 30, 0, 0, 0).unwrap(),
            ),
        };
        let mut r = Self::blank(repo, number, created);
        let sparse = self.chance(40);
        let (vp, np) = if sparse { (0, 15) } else { (4, 10) };
        let title_len = 3 + self.below(6) as usize;
        r.title = self.words(title_len, vp, np);
        let body_len = if self.chance(10) { 0 } else { 10 + self.below(30) as usize };
        r.body = self.words(body_len, vp, np);
        for _ in 0..self.below(3) {
            let label = if self.chance(25) {
                self.pick(NOISY_EXCLUSION).to_string()
            } else {
                self.pick(PLAIN_LABELS).to_string()
            };
            if !r.labels.contains(&label) {
                r.labels.push(label);
            }
        }
        let n = self.below(5) as usize;
        r.comments = self.comments(created, n, if sparse { 0 } else { 3 });
        self.finish(r)
    }

    fn post_cutoff(&mut self) -> DateTime<Utc> {
        self.instant_between(
            Utc.with_ymd_and_hms(2020, 1, 2, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2024, 12, 31, 0, 0, 0).unwrap(),
        )
    }

    /// A fault report that clears every deterministic criterion.
    pub fn fault_issue(&mut self, repo: &str, number: u64) -> IssueRecord {
        let created = self.post_cutoff();
        let mut r = Self::blank(repo, number, created);
        let term = *self.pick(VOCABULARY);
        let title_tail = self.words(3, 10, 0);
        r.title = format!("{term} fails: {title_tail}");
        let body_len = 20 + self.below(20) as usize;
        let body = self.words(body_len, 8, 5);
        r.body = format!("Calling {term} throws an error.\n\n{body}\n\nExpected it to work.");
        r.labels = vec!["type:bug".into()];
        let n = 1 + self.below(4) as usize;
        r.comments = self.comments(created, n, 5);
        self.finish(r)
    }

    /// A non-fault issue. `shape` 0..=3 fails date / label / vocabulary /
    /// answered respectively; 4 passes every deterministic criterion.
    pub fn non_fault_issue(&mut self, repo: &str, number: u64, shape: u8) -> IssueRecord {
        let created = if shape == 0 {
            self.instant_between(
                Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap(),
                Utc.with_ymd_and_hms(2019, 12, 31, 0, 0, 0).unwrap(),
            )
        } else {
            self.post_cutoff()
        };
        let mut r = Self::blank(repo, number, created);
        let term = *self.pick(VOCABULARY);
        let clean_title = self.clean_words(4);
        r.title = if shape == 2 {
            format!("Feature request: {clean_title}")
        } else {
            format!("How do I use {term}? {clean_title}")
        };
        r.body = if shape == 2 {
            self.clean_words(20)
        } else {
            format!("Is there a way to configure {term}? {}", self.clean_words(15))
        };
        r.labels = vec![if shape == 1 {
            "stat:awaiting response".to_string()
        } else {
            "type:feature".to_string()
        }];
        if shape != 3 {
            let n = 1 + self.below(3) as usize;
            let mut cs = self.comments(created, n, 0);
            for c in &mut cs {
                c.body = self.clean_words(6);
            }
            r.comments = cs;
        }
        self.finish(r)
    }
}

/// 500 unconstrained issues for the filter oracle.
pub fn wild_corpus(seed: u64, n: usize) -> Vec<IssueRecord> {
    let mut s = Synth::new(seed);
    (0..n)
        .map(|i| s.wild_issue(REPOS[i % 2], 1 + i as u64 / 2))
        .collect()
}

/// Labeled corpus: `n_pos` fault reports with random taxonomy leaves and
/// `n_neg` non-fault issues, interleaved.
pub fn labeled_corpus(
    seed: u64,
    n_pos: usize,
    n_neg: usize,
    symptoms: &Taxonomy,
    root_causes: &Taxonomy,
) -> (Vec<IssueRecord>, GoldSet) {
    let mut s = Synth::new(seed);
    let symptom_leaves: Vec<String> = symptoms.leaves().iter().map(|n| n.id.clone()).collect();
    let cause_leaves: Vec<String> = root_causes.leaves().iter().map(|n| n.id.clone()).collect();
    let mut records = Vec::new();
    let mut labels = Vec::new();
    let (mut pos, mut neg) = (0, 0);
    let mut next = [1u64, 1u64];
    while pos < n_pos || neg < n_neg {
        let want_pos = neg >= n_neg || (pos < n_pos && s.chance(50));
        let ri = s.below(2) as usize;
        let repo = REPOS[ri];
        let number = next[ri];
        next[ri] += 1 + s.below(3);
        let (record, label) = if want_pos {
            pos += 1;
            (
                s.fault_issue(repo, number),
                GoldLabel {
                    repo: repo.into(),
                    number,
                    fault_related: Some(true),
                    symptom_leaf: Some(s.pick(&symptom_leaves).clone()),
                    root_cause: Some(s.pick(&cause_leaves).clone()),
                },
            )
        } else {
            neg += 1;
            // a fifth each fail date / label / vocabulary / answered; the rest pass
            let shape = s.below(10).min(4) as u8;
            (
                s.non_fault_issue(repo, number, shape),
                GoldLabel {
                    repo: repo.into(),
                    number,
                    fault_related: Some(false),
                    symptom_leaf: None,
                    root_cause: None,
                },
            )
        };
        records.push(record);
        labels.push(label);
    }
    (records, GoldSet::from_labels(labels).expect("unique synthetic keys"))
}
