//! Top-k accuracy from externally produced prediction files.
//!
//! Two CSV row shapes are accepted (no quoting, optional header when the
//! first field is literally `source_id`):
//!
//! - ranked:  `source_id,rank1,rank2,...`
//! - scored:  `source_id,label:score;label:score;...`
//!
//! Scored rows are ranked by descending score with ties broken by
//! lexicographic label order.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};

use crate::error::{Error, Result};

/// Ranked label lists per sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PredictionSet {
    pub rankings: BTreeMap<String, Vec<String>>,
}

/// Parse a prediction file (either row shape, shapes may mix per row).
pub fn read_predictions<R: Read>(reader: R) -> Result<PredictionSet> {
    let mut rankings = BTreeMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        let row = line.trim();
        if row.is_empty() {
            continue;
        }
        let (source_id, rest) = row.split_once(',').ok_or_else(|| Error::MalformedRow {
            line: i + 1,
            reason: "expected at least two comma-separated fields".into(),
        })?;
        if i == 0 && source_id == "source_id" {
            continue;
        }
        let ranked = if rest.contains(':') {
            rank_scored(rest, i + 1)?
        } else {
            rest.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        };
        if ranked.is_empty() {
            return Err(Error::MalformedRow {
                line: i + 1,
                reason: "row carries no predictions".into(),
            });
        }
        rankings.insert(source_id.trim().to_string(), ranked);
    }
    Ok(PredictionSet { rankings })
}

fn rank_scored(rest: &str, line: usize) -> Result<Vec<String>> {
    let mut scored: Vec<(String, f64)> = Vec::new();
    for pair in rest.split(';') {
        let pair = pair.trim();
        if pair.is_empty() {
            continue;
        }
        let (label, score) = pair.rsplit_once(':').ok_or_else(|| Error::MalformedRow {
            line,
            reason: format!("expected `label:score`, got `{pair}`"),
        })?;
        let score: f64 = score.trim().parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("bad score `{score}`"),
        })?;
        if !score.is_finite() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("non-finite score `{score}`"),
            });
        }
        scored.push((label.trim().to_string(), score));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored.into_iter().map(|(label, _)| label).collect())
}

/// Parse a `source_id,label` ground-truth file.
pub fn read_labels<R: Read>(reader: R) -> Result<BTreeMap<String, String>> {
    let mut labels = BTreeMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        let row = line.trim();
        if row.is_empty() {
            continue;
        }
        let (source_id, label) = row.split_once(',').ok_or_else(|| Error::MalformedRow {
            line: i + 1,
            reason: "expected `source_id,label`".into(),
        })?;
        if i == 0 && source_id == "source_id" {
            continue;
        }
        labels.insert(source_id.trim().to_string(), label.trim().to_string());
    }
    Ok(labels)
}

/// Percentage of predicted sequences whose true label is among the k
/// highest-ranked predictions. Every predicted sequence must have a
/// ground-truth label.
pub fn top_k(
    predictions: &PredictionSet,
    truth: &BTreeMap<String, String>,
    k: usize,
) -> Result<f64> {
    assert!(k >= 1, "top-k needs k >= 1");
    if predictions.rankings.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut hits = 0usize;
    for (source_id, ranked) in &predictions.rankings {
        let label = truth
            .get(source_id)
            .ok_or_else(|| Error::UnknownSequence(source_id.clone()))?;
        if ranked.iter().take(k).any(|r| r == label) {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / predictions.rankings.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|&(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn perfect_rank1_predictions() {
        let preds = read_predictions("a,cat,dog\nb,dog,cat\n".as_bytes()).unwrap();
        let t = truth(&[("a", "cat"), ("b", "dog")]);
        assert_eq!(top_k(&preds, &t, 1).unwrap(), 100.0);
        assert_eq!(top_k(&preds, &t, 5).unwrap(), 100.0);
    }

    #[test]
    fn rank_three_predictions() {
        let preds = read_predictions("a,x,y,cat,z\nb,u,v,dog,w\n".as_bytes()).unwrap();
        let t = truth(&[("a", "cat"), ("b", "dog")]);
        assert_eq!(top_k(&preds, &t, 1).unwrap(), 0.0);
        assert_eq!(top_k(&preds, &t, 5).unwrap(), 100.0);
    }

    #[test]
    fn scored_rows_rank_by_score_then_label() {
        let preds = read_predictions("a,dog:0.5;cat:0.9;ant:0.5\n".as_bytes()).unwrap();
        assert_eq!(
            preds.rankings["a"],
            vec!["cat".to_string(), "ant".to_string(), "dog".to_string()]
        );
    }

    #[test]
    fn mixed_fixture_matches_hand_count() {
        // 10 rows; true label in top-1 for 3, in top-3 for 7.
        let text = "\
s0,cat,dog,ant
s1,dog,cat,ant
s2,ant,cat,dog
s3,dog,ant,cat
s4,cat,ant,dog
s5,ant:0.9;cat:0.5;dog:0.1
s6,cat:0.8;dog:0.7;ant:0.1
s7,dog:1.0;ant:0.9;cat:0.2
s8,ant,dog,cat
s9,dog,cat,ant
";
        let preds = read_predictions(text.as_bytes()).unwrap();
        let t = truth(&[
            ("s0", "cat"), // top-1
            ("s1", "cat"), // top-2
            ("s2", "dog"), // top-3
            ("s3", "cat"), // top-3
            ("s4", "dog"), // top-3
            ("s5", "cat"), // top-2
            ("s6", "cat"), // top-1
            ("s7", "cat"), // top-3
            ("s8", "ant"), // top-1
            ("s9", "ant"), // top-3
        ]);
        assert_eq!(top_k(&preds, &t, 1).unwrap(), 30.0);
        assert_eq!(top_k(&preds, &t, 2).unwrap(), 50.0);
        assert_eq!(top_k(&preds, &t, 3).unwrap(), 100.0);
    }

    #[test]
    fn unknown_sequence_is_an_error() {
        let preds = read_predictions("ghost,cat\n".as_bytes()).unwrap();
        let t = truth(&[("a", "cat")]);
        assert!(matches!(
            top_k(&preds, &t, 1),
            Err(Error::UnknownSequence(s)) if s == "ghost"
        ));
    }

    #[test]
    fn malformed_rows_are_errors() {
        assert!(matches!(
            read_predictions("lonely\n".as_bytes()),
            Err(Error::MalformedRow { line: 1, .. })
        ));
        assert!(matches!(
            read_predictions("a,cat:not-a-number\n".as_bytes()),
            Err(Error::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn header_row_is_skipped() {
        let preds = read_predictions("source_id,rank1\na,cat\n".as_bytes()).unwrap();
        assert_eq!(preds.rankings.len(), 1);
    }
}
