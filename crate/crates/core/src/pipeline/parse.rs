//! Mapping free-text model replies onto vote choices and ideology labels.

use crate::domain::{ElectionContext, IdeologyLabel, VoteChoice};

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte offsets of `needle` in `hay` where it is not part of a larger word.
/// Both inputs are expected in lower case.
fn word_matches(hay: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(rel) = hay[from..].find(needle) {
        let start = from + rel;
        let end = start + needle.len();
        let before_ok = hay[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
        let after_ok = hay[end..].chars().next().is_none_or(|c| !is_word_char(c));
        if before_ok && after_ok {
            out.push(start);
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    out
}

fn has_word(hay: &str, needle: &str) -> bool {
    !word_matches(hay, needle).is_empty()
}

fn surname(name: &str) -> Option<String> {
    name.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .rfind(|w| !w.is_empty())
        .map(str::to_lowercase)
}

fn single_side(dem: bool, rep: bool) -> Option<Option<VoteChoice>> {
    match (dem, rep) {
        (true, false) => Some(Some(VoteChoice::Democratic)),
        (false, true) => Some(Some(VoteChoice::Republican)),
        (true, true) => Some(None),
        (false, false) => None,
    }
}

/// Reads a vote out of a reply, case-insensitively, trying in turn: the
/// option words, the candidates' surnames, then party words anywhere in the
/// text. Conflicting matches at the deciding level give `None`
/// (unparseable). A no-preference phrase wins when it comes with both
/// parties or none, and conflicts when it comes with exactly one.
pub fn parse_vote(raw: &str, ctx: &ElectionContext) -> Option<VoteChoice> {
    let t = raw.to_lowercase();
    let no_pref = ["no preference", "neither", "undecided"].iter().any(|w| has_word(&t, w));
    let dem = has_word(&t, "democratic");
    let rep = has_word(&t, "republican");
    if no_pref {
        return match (dem, rep) {
            (true, false) | (false, true) => None,
            _ => Some(VoteChoice::NoPreference),
        };
    }
    if let Some(decided) = single_side(dem, rep) {
        return decided;
    }
    if let (Some(d), Some(r)) = (surname(&ctx.democratic_candidate), surname(&ctx.republican_candidate)) {
        if d != r {
            if let Some(decided) = single_side(has_word(&t, &d), has_word(&t, &r)) {
                return decided;
            }
        }
    }
    let dem_any = t.contains("democrat");
    let rep_any = t.contains("republican") || has_word(&t, "gop");
    single_side(dem_any, rep_any).flatten()
}

/// Reads an ideology label. Longer option strings are matched first so that
/// "somewhat liberal" is never also counted as a shorter option; among the
/// surviving matches the earliest in the text wins.
pub fn parse_ideology(raw: &str) -> Option<IdeologyLabel> {
    let t = raw.to_lowercase();
    let mut options: Vec<IdeologyLabel> = IdeologyLabel::ALL.to_vec();
    options.sort_by_key(|l| std::cmp::Reverse(l.text().len()));
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut found: Vec<(usize, IdeologyLabel)> = Vec::new();
    for label in options {
        let needle = label.text().to_lowercase();
        for start in word_matches(&t, &needle) {
            let end = start + needle.len();
            if taken.iter().all(|&(s, e)| end <= s || start >= e) {
                taken.push((start, end));
                found.push((start, label));
            }
        }
    }
    found.into_iter().min_by_key(|(pos, _)| *pos).map(|(_, l)| l)
}
