//! CoNLL-U reader producing annotated sentences for the analyzer.

use cost_core::complexity::{AnnotatedSentence, AnnotatedToken};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ConlluError {
    pub line: usize,
    pub message: String,
}

fn field(s: &str) -> Option<String> {
    (s != "_").then(|| s.to_string())
}

/// Reads word lines only; multiword ranges (`1-2`) and empty nodes (`1.1`)
/// are skipped. A `_` head means the sentence carries no parse.
pub fn parse_conllu(text: &str) -> Result<Vec<AnnotatedSentence>, ConlluError> {
    let mut sentences = Vec::new();
    let mut current = AnnotatedSentence::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.tokens.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(ConlluError {
                line: line_no,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let expected = current.tokens.len() + 1;
        match id.parse::<usize>() {
            Ok(n) if n == expected => {}
            _ => {
                return Err(ConlluError {
                    line: line_no,
                    message: format!("token id {id:?}, expected {expected}"),
                })
            }
        }
        let head = match cols[6] {
            "_" => None,
            h => Some(h.parse::<usize>().map_err(|_| ConlluError {
                line: line_no,
                message: format!("bad head {h:?}"),
            })?),
        };
        current.tokens.push(AnnotatedToken {
            form: cols[1].to_string(),
            upos: field(cols[3]),
            xpos: field(cols[4]),
            head,
        });
    }
    if !current.tokens.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# sent_id = 1\n\
1\tPick\tpick\tVERB\tVB\t_\t0\troot\t_\t_\n\
2\tthe\tthe\tDET\tDT\t_\t3\tdet\t_\t_\n\
3\tblock\tblock\tNOUN\tNN\t_\t1\tobj\t_\t_\n\
4\t.\t.\tPUNCT\t.\t_\t1\tpunct\t_\t_\n\
\n\
1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
1\tdo\tdo\tAUX\tVBP\t_\t3\taux\t_\t_\n\
2\tn't\tnot\tPART\tRB\t_\t3\tadvmod\t_\t_\n\
3\tdrop\tdrop\tVERB\tVB\t_\t0\troot\t_\t_\n\
3.1\tit\t_\t_\t_\t_\t_\t_\t_\t_\n";

    #[test]
    fn reads_sentences_and_skips_ranges() {
        let s = parse_conllu(SAMPLE).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tokens.len(), 4);
        assert_eq!(s[0].heads(), Some(vec![0, 3, 1, 1]));
        assert_eq!(s[1].tokens[0].upos.as_deref(), Some("AUX"));
        assert_eq!(s[1].tokens.len(), 3);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_conllu("1\tA\ta\tX\tX\t_\t0\troot\t_\t_\n3\tB\tb\tX\tX\t_\t1\tdep\t_\t_\n").unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse_conllu("1\tA\n").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn missing_heads_are_none() {
        let s = parse_conllu("1\tPick\tpick\tVERB\tVB\t_\t_\t_\t_\t_\n").unwrap();
        assert_eq!(s[0].heads(), None);
    }
}
