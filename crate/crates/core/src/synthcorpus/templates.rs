//! Label vocabulary, keyword tables and response text for the synthetic world.
//!
//! Section one describes the background (a function of style only); sections
//! two and three describe the lesions. A two-lesion record mixes the
//! vocabularies of both classes and still yields exactly nine keywords.

use crate::rewards::{DiagnosisLabelSet, KeywordSet, DIAGNOSIS_MARKER};

pub const NORMAL: &str = "normal";

pub const CLASSES: [&str; 4] = ["polyp", "ulcer", "erosion", "angiodysplasia"];

/// Morphology phrases per class: (primary, secondary).
const MORPHOLOGY: [[&str; 2]; 4] = [
    ["protruding lesion", "rounded contour"],
    ["depressed lesion", "fibrin base"],
    ["superficial defect", "linear break"],
    ["flat red spots", "clustered foci"],
];
const MORPHOLOGY_NORMAL: [&str; 3] = [
    "no focal lesion",
    "smooth mucosal contour",
    "preserved folds",
];
const SOLITARY: &str = "solitary lesion";
const MULTIPLE: &str = "multiple lesions";

const SURFACE: [[&str; 3]; 4] = [
    ["regular pit pattern", "dense capillaries", "smooth surface"],
    ["white exudate", "sharp margins", "hyperemic rim"],
    ["shallow mucosal break", "thin exudate", "mild erythema"],
    ["ectatic vessels", "fern-like vessels", "bright red dots"],
];
const SURFACE_NORMAL: [&str; 3] = [
    "regular surface pattern",
    "intact vascular network",
    "no abnormal vessels",
];
const MIXED_SURFACE: &str = "mixed surface findings";

pub const LOCATIONS: [&str; 4] = [
    "esophagus",
    "gastric body",
    "gastric antrum",
    "duodenal bulb",
];
pub const LIGHTING: [&str; 2] = ["dim illumination", "bright illumination"];
pub const VIEW: [&str; 2] = ["hazy view", "clear view"];

/// A diagnosis outcome: normal, one class, or an unordered pair of classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelCombo {
    Normal,
    Single(usize),
    Pair(usize, usize),
}

impl LabelCombo {
    /// Normal, the four singles, then the six pairs in lexicographic order.
    pub fn all() -> Vec<LabelCombo> {
        let mut v = vec![LabelCombo::Normal];
        v.extend((0..CLASSES.len()).map(LabelCombo::Single));
        for a in 0..CLASSES.len() {
            for b in a + 1..CLASSES.len() {
                v.push(LabelCombo::Pair(a, b));
            }
        }
        v
    }

    pub fn count() -> usize {
        1 + CLASSES.len() + CLASSES.len() * (CLASSES.len() - 1) / 2
    }

    pub fn index(&self) -> usize {
        Self::all()
            .iter()
            .position(|c| c == self)
            .expect("combo is enumerated")
    }

    pub fn from_index(i: usize) -> Option<LabelCombo> {
        Self::all().get(i).copied()
    }

    pub fn classes(&self) -> Vec<usize> {
        match *self {
            LabelCombo::Normal => vec![],
            LabelCombo::Single(a) => vec![a],
            LabelCombo::Pair(a, b) => vec![a, b],
        }
    }

    pub fn is_multi(&self) -> bool {
        matches!(self, LabelCombo::Pair(..))
    }

    pub fn labels(&self) -> DiagnosisLabelSet {
        match self {
            LabelCombo::Normal => DiagnosisLabelSet::new([NORMAL]),
            _ => DiagnosisLabelSet::new(self.classes().iter().map(|c| CLASSES[*c])),
        }
    }

    pub fn from_labels(labels: &DiagnosisLabelSet) -> Option<LabelCombo> {
        Self::all().into_iter().find(|c| &c.labels() == labels)
    }

    /// Class names for a pathological combo, `["normal"]` otherwise.
    pub fn name(&self) -> String {
        self.labels().to_string()
    }
}

pub fn label_vocabulary() -> Vec<String> {
    std::iter::once(NORMAL)
        .chain(CLASSES)
        .map(String::from)
        .collect()
}

/// Background descriptors implied by a style index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleTraits {
    /// Stripe direction in `[0, π)`.
    pub theta: f64,
    pub bright: bool,
    pub clear: bool,
}

pub fn style_traits(style: usize, n_styles: usize) -> StyleTraits {
    StyleTraits {
        theta: std::f64::consts::PI * style as f64 / n_styles as f64,
        bright: (style * 7 / 3).is_multiple_of(2),
        clear: (style * 5 / 2).is_multiple_of(2),
    }
}

/// Anatomical location follows the stripe direction in contiguous arcs.
pub fn location_index(style: usize, n_styles: usize) -> usize {
    style * LOCATIONS.len() / n_styles
}

pub fn environment_keywords(style: usize, n_styles: usize) -> [&'static str; 3] {
    let t = style_traits(style, n_styles);
    [
        LOCATIONS[location_index(style, n_styles)],
        LIGHTING[usize::from(t.bright)],
        VIEW[usize::from(t.clear)],
    ]
}

pub fn morphology_keywords(combo: LabelCombo) -> [&'static str; 3] {
    match combo {
        LabelCombo::Normal => MORPHOLOGY_NORMAL,
        LabelCombo::Single(a) => [MORPHOLOGY[a][0], MORPHOLOGY[a][1], SOLITARY],
        LabelCombo::Pair(a, b) => [MORPHOLOGY[a][0], MORPHOLOGY[b][0], MULTIPLE],
    }
}

pub fn surface_keywords(combo: LabelCombo) -> [&'static str; 3] {
    match combo {
        LabelCombo::Normal => SURFACE_NORMAL,
        LabelCombo::Single(a) => SURFACE[a],
        LabelCombo::Pair(a, b) => [SURFACE[a][0], SURFACE[b][0], MIXED_SURFACE],
    }
}

pub fn gold_keywords(combo: LabelCombo, style: usize, n_styles: usize) -> KeywordSet {
    KeywordSet::new([
        environment_keywords(style, n_styles),
        morphology_keywords(combo),
        surface_keywords(combo),
    ])
    .expect("template keywords are well formed")
}

/// Keyword slot `slot` (0..9) maps to the classes whose findings it names.
/// Used to tie slot candidates to diagnostic evidence.
pub fn keyword_classes(slot: usize, word: &str) -> Vec<usize> {
    if slot < 3 {
        return vec![];
    }
    (0..CLASSES.len())
        .filter(|&c| MORPHOLOGY[c].contains(&word) || SURFACE[c].contains(&word))
        .collect()
}

/// All words that can fill each of the nine keyword slots, in a fixed order.
pub fn slot_candidates(n_styles: usize) -> Vec<Vec<String>> {
    let mut slots: Vec<Vec<String>> = vec![Vec::new(); 9];
    let mut add = |i: usize, w: &str| {
        if !slots[i].iter().any(|x| x == w) {
            slots[i].push(w.to_string());
        }
    };
    for s in 0..n_styles {
        for (j, w) in environment_keywords(s, n_styles).iter().enumerate() {
            add(j, w);
        }
    }
    for combo in LabelCombo::all() {
        for (j, w) in morphology_keywords(combo).iter().enumerate() {
            add(3 + j, w);
        }
        for (j, w) in surface_keywords(combo).iter().enumerate() {
            add(6 + j, w);
        }
    }
    slots
}

/// One section line: `Header: a, b, c.`
pub fn section_line(header: &str, words: &[&str]) -> String {
    format!("{header}: {}.", words.join(", "))
}

pub fn diagnosis_line(labels: &DiagnosisLabelSet) -> String {
    format!("{DIAGNOSIS_MARKER} {labels}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::DEFAULT_HEADERS;

    #[test]
    fn combos_enumerate_once() {
        let all = LabelCombo::all();
        assert_eq!(all.len(), LabelCombo::count());
        assert_eq!(all.len(), 11);
        for (i, c) in all.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(LabelCombo::from_labels(&c.labels()), Some(*c));
        }
        assert_eq!(LabelCombo::Pair(0, 2).name(), "erosion, polyp");
    }

    #[test]
    fn no_keyword_hides_inside_another_phrase() {
        let slots = slot_candidates(11);
        let words: Vec<&String> = slots.iter().flatten().collect();
        for a in &words {
            for b in &words {
                if a != b {
                    assert!(!b.contains(a.as_str()), "{a} inside {b}");
                }
            }
            for h in DEFAULT_HEADERS {
                assert!(!h.to_lowercase().contains(a.as_str()), "{a} inside header");
            }
            assert!(!a.contains(','));
            for c in LabelCombo::all() {
                assert!(
                    !diagnosis_line(&c.labels()).contains(a.as_str()),
                    "{a} in diagnosis line"
                );
            }
        }
    }

    #[test]
    fn every_style_has_keywords_and_locations_cover_all() {
        let locs: std::collections::BTreeSet<usize> =
            (0..11).map(|s| location_index(s, 11)).collect();
        assert_eq!(locs.len(), 4);
        let traits: std::collections::BTreeSet<(bool, bool)> = (0..11)
            .map(|s| (style_traits(s, 11).bright, style_traits(s, 11).clear))
            .collect();
        assert_eq!(traits.len(), 4);
    }

    #[test]
    fn slot_links_match_templates() {
        assert_eq!(keyword_classes(3, "protruding lesion"), vec![0]);
        assert_eq!(keyword_classes(5, MULTIPLE), Vec::<usize>::new());
        assert_eq!(keyword_classes(0, "esophagus"), Vec::<usize>::new());
    }
}
