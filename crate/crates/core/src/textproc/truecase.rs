//! Corpus-driven truecasing: learn the dominant surface form of every
//! token, lowercase sentence-initial tokens whose dominant form is
//! lowercase, and restore capitalization for final output.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::TextprocError;

/// Most frequent surface form per lowercased token.
#[derive(Debug, Clone, Default)]
pub struct TruecaseModel {
    /// lowercase key -> (surface form, count), sorted best-first.
    counts: HashMap<String, Vec<(String, u64)>>,
}

impl TruecaseModel {
    /// Dominant surface form for a lowercased key.
    pub fn best_form(&self, lower: &str) -> Option<&str> {
        self.counts.get(lower).map(|v| v[0].0.as_str())
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// One line per lowercase key: `surface count surface count ...`,
    /// best form first.
    pub fn save(&self, path: &Path) -> Result<(), TextprocError> {
        let mut keys: Vec<&String> = self.counts.keys().collect();
        keys.sort();
        let mut out = fs::File::create(path)?;
        for key in keys {
            let forms = &self.counts[key];
            let line: Vec<String> = forms
                .iter()
                .flat_map(|(form, count)| [form.clone(), count.to_string()])
                .collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TruecaseModel, TextprocError> {
        let text = fs::read_to_string(path)?;
        let mut counts = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !fields.len().is_multiple_of(2) {
                return Err(TextprocError::MalformedTruecaseModel {
                    line: i + 1,
                    reason: "odd field count".into(),
                });
            }
            let mut forms = Vec::with_capacity(fields.len() / 2);
            for pair in fields.chunks(2) {
                let count: u64 =
                    pair[1]
                        .parse()
                        .map_err(|_| TextprocError::MalformedTruecaseModel {
                            line: i + 1,
                            reason: format!("bad count {:?}", pair[1]),
                        })?;
                forms.push((pair[0].to_string(), count));
            }
            counts.insert(forms[0].0.to_lowercase(), forms);
        }
        Ok(TruecaseModel { counts })
    }
}

/// Learn a truecase model from tokenized sentences.
///
/// Sentence-initial positions are case-distorted, so they only count for
/// tokens never seen elsewhere. Equal counts prefer the lowercase form.
pub fn truecase_train<'a, I, S>(sentences: I) -> TruecaseModel
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut inner: HashMap<String, HashMap<String, u64>> = HashMap::new();
    let mut initial: HashMap<String, HashMap<String, u64>> = HashMap::new();
    for sentence in sentences {
        for (i, tok) in sentence.iter().enumerate() {
            let tok = tok.as_ref();
            if !tok.chars().any(|c| c.is_alphabetic()) {
                continue;
            }
            let target = if i == 0 { &mut initial } else { &mut inner };
            *target
                .entry(tok.to_lowercase())
                .or_default()
                .entry(tok.to_string())
                .or_insert(0) += 1;
        }
    }
    for (key, forms) in initial {
        inner.entry(key).or_insert(forms);
    }

    let mut counts = HashMap::with_capacity(inner.len());
    for (key, forms) in inner {
        let mut ranked: Vec<(String, u64)> = forms.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| (a.0 != a.0.to_lowercase()).cmp(&(b.0 != b.0.to_lowercase())))
                .then_with(|| a.0.cmp(&b.0))
        });
        counts.insert(key, ranked);
    }
    TruecaseModel { counts }
}

/// Lowercase the sentence-initial token to its dominant form when that
/// form is lowercase. Non-initial tokens are never touched.
pub fn truecase_apply(model: &TruecaseModel, tokens: &[String]) -> Vec<String> {
    let mut out = tokens.to_vec();
    if let Some(first) = out.first_mut() {
        if let Some(best) = model.best_form(&first.to_lowercase()) {
            if best == best.to_lowercase() {
                *first = best.to_string();
            }
        }
    }
    out
}

/// Uppercase the first alphabetic character of the sentence.
pub fn detruecase(tokens: &[String]) -> Vec<String> {
    let mut out = tokens.to_vec();
    for tok in out.iter_mut() {
        if let Some(pos) = tok.char_indices().find(|(_, c)| c.is_alphabetic()) {
            let (idx, c) = pos;
            let mut rebuilt = String::with_capacity(tok.len());
            rebuilt.push_str(&tok[..idx]);
            rebuilt.extend(c.to_uppercase());
            rebuilt.push_str(&tok[idx + c.len_utf8()..]);
            *tok = rebuilt;
            break;
        }
    }
    out
}
