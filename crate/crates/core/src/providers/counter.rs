//! Token counting used to enforce profile budgets.

/// Deterministic token counter with prefix/suffix truncation.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;

    /// The longest prefix of `text` holding at most `m` tokens, cut at the
    /// end of the `m`-th token.
    fn head<'a>(&self, text: &'a str, m: usize) -> &'a str;

    /// The shortest suffix of `text` holding the last `m` tokens, starting at
    /// the first of them.
    fn tail<'a>(&self, text: &'a str, m: usize) -> &'a str;

    fn name(&self) -> &'static str;
}

/// Counts whitespace-delimited words.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn head<'a>(&self, text: &'a str, m: usize) -> &'a str {
        if m == 0 {
            return "";
        }
        let mut seen = 0;
        let mut in_token = false;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if in_token {
                    in_token = false;
                    if seen == m {
                        return &text[..i];
                    }
                }
            } else if !in_token {
                in_token = true;
                seen += 1;
            }
        }
        text
    }

    fn tail<'a>(&self, text: &'a str, m: usize) -> &'a str {
        if m == 0 {
            return "";
        }
        let mut seen = 0;
        let mut in_token = false;
        let mut start = text.len();
        for (i, c) in text.char_indices().rev() {
            if c.is_whitespace() {
                in_token = false;
            } else {
                if !in_token {
                    in_token = true;
                    seen += 1;
                    if seen > m {
                        return &text[start..];
                    }
                }
                start = i;
            }
        }
        &text[start..]
    }

    fn name(&self) -> &'static str {
        "whitespace"
    }
}

/// Fraction of `(text, reported_tokens)` pairs whose counted length lies
/// within `tolerance` (relative) of the reported count.
pub fn usage_agreement<'a, I>(counter: &dyn TokenCounter, pairs: I, tolerance: f64) -> f64
where
    I: IntoIterator<Item = (&'a str, usize)>,
{
    let mut total = 0usize;
    let mut agree = 0usize;
    for (text, reported) in pairs {
        total += 1;
        let counted = counter.count(text) as f64;
        let reported = reported as f64;
        let ok = if reported == 0.0 {
            counted == 0.0
        } else {
            ((counted - reported) / reported).abs() <= tolerance
        };
        if ok {
            agree += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    }
}
