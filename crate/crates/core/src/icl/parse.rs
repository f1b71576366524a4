use std::sync::OnceLock;

use regex::{Regex, RegexBuilder};

use crate::data::{Label, LabelKind, LabelSpace};

fn integer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?\d+").unwrap())
}

/// Case-insensitive whole-word matcher over the label names, longest first so
/// that a name that prefixes another never shadows it.
fn names_re(space: &LabelSpace) -> Regex {
    let mut names: Vec<&str> = space.labels.iter().map(String::as_str).collect();
    names.sort_by_key(|n| std::cmp::Reverse(n.len()));
    let alternatives: Vec<String> = names.iter().map(|n| regex::escape(n)).collect();
    RegexBuilder::new(&format!(r"(?:^|[^\w])({})(?:$|[^\w])", alternatives.join("|")))
        .case_insensitive(true)
        .build()
        .expect("escaped label names form a valid pattern")
}

/// Scans model output for the first token that is a legal label.
///
/// Ordinal spaces take the first integer inside the scale bounds, categorical
/// spaces the first label name, multi-binary spaces every label name that
/// occurs anywhere. `None` means nothing legal was found.
pub fn parse_label(raw: &str, space: &LabelSpace) -> Option<Label> {
    match space.kind {
        LabelKind::Ordinal => integer_re()
            .find_iter(raw)
            .filter_map(|m| m.as_str().parse::<i64>().ok())
            .find_map(|v| space.ordinal_index(v))
            .map(Label::Class),
        LabelKind::Categorical => {
            let re = names_re(space);
            let mut at = 0;
            while let Some(caps) = re.captures_at(raw, at) {
                let m = caps.get(1).unwrap();
                let found = m.as_str().to_lowercase();
                if let Some(i) = space.labels.iter().position(|n| n.to_lowercase() == found) {
                    return Some(Label::Class(i));
                }
                at = m.end();
            }
            None
        }
        LabelKind::MultiBinary => {
            let re = names_re(space);
            let mut flags = vec![false; space.len()];
            let mut at = 0;
            while let Some(caps) = re.captures_at(raw, at) {
                let m = caps.get(1).unwrap();
                let found = m.as_str().to_lowercase();
                if let Some(i) = space.labels.iter().position(|n| n.to_lowercase() == found) {
                    flags[i] = true;
                }
                at = m.end();
            }
            flags.iter().any(|f| *f).then_some(Label::Multi(flags))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordinal_scan() {
        let s = LabelSpace::ordinal(1, 6).unwrap();
        assert_eq!(parse_label("[Label]: 5", &s), Some(Label::Class(4)));
        assert_eq!(parse_label("I think 7, maybe 6", &s), Some(Label::Class(5)));
        assert_eq!(parse_label("no idea", &s), None);
        assert_eq!(parse_label("0 or 9", &s), None);
    }

    #[test]
    fn signed_scale() {
        let s = LabelSpace::ordinal(-5, 5).unwrap();
        assert_eq!(parse_label("score: -3", &s), Some(Label::Class(2)));
        assert_eq!(parse_label("+4", &s), Some(Label::Class(9)));
    }

    #[test]
    fn categorical_first_name_wins() {
        let s = LabelSpace::categorical(["ironic", "not ironic"]).unwrap();
        assert_eq!(parse_label("This is NOT IRONIC really", &s), Some(Label::Class(1)));
        assert_eq!(parse_label("Ironic, clearly. Not ironic? no.", &s), Some(Label::Class(0)));
        assert_eq!(parse_label("sarcastic", &s), None);
        assert_eq!(parse_label("unironically", &s), None);
    }

    #[test]
    fn multi_binary_collects_all() {
        let s = LabelSpace::multi_binary(["entailment", "neutral", "contradiction"]).unwrap();
        assert_eq!(
            parse_label("Neutral, contradiction", &s),
            Some(Label::Multi(vec![false, true, true]))
        );
        assert_eq!(parse_label("unsure", &s), None);
    }
}
