//! Text analysis backing the index and the lexical reranker.
//!
//! The pipeline is fixed: lowercase, split on non-alphanumeric boundaries,
//! Porter-stem each token. No stopword removal. The analyzer name below is
//! recorded in every index manifest so an index can never be silently served
//! by a different analyzer.

/// Analyzer identifier written to index manifests.
pub const ANALYZER_NAME: &str = "lowercase-alnum-porter";

/// Splits `text` into lowercased, Porter-stemmed tokens.
///
/// Boundaries are runs of non-alphanumeric characters, so `"a-b a"` yields
/// `["a", "b", "a"]`. Empty segments are dropped, everything else is kept
/// (stopwords included).
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(porter_stem)
        .collect()
}

/// Stems one already-lowercased word with the Porter algorithm.
///
/// Port of Martin Porter's reference implementation, including its two
/// documented departures from the 1980 paper (the "bli" and "logi" rules in
/// step 2), which is also the behavior of the Lucene stemmer. Words of length
/// one or two, and words containing anything outside ASCII `a-z0-9`, are
/// returned unchanged.
pub fn porter_stem(word: &str) -> String {
    let bytes = word.as_bytes();
    if bytes.len() <= 2
        || !bytes
            .iter()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
    {
        return word.to_string();
    }
    let mut s = Stemmer {
        b: bytes.to_vec(),
        k: bytes.len() as isize - 1,
        j: 0,
    };
    s.step1ab();
    s.step1c();
    s.step2();
    s.step3();
    s.step4();
    s.step5();
    s.b.truncate((s.k + 1) as usize);
    String::from_utf8(s.b).expect("stemmer only rewrites ASCII")
}

/// Working state: `b[0..=k]` is the current word, `j` marks the candidate
/// stem end set by the most recent suffix match. Indices are signed because
/// the algorithm uses `j = -1` for an empty stem.
struct Stemmer {
    b: Vec<u8>,
    k: isize,
    j: isize,
}

impl Stemmer {
    fn at(&self, i: isize) -> u8 {
        self.b[i as usize]
    }

    /// True when position `i` holds a consonant. `y` is a consonant at the
    /// start of the word or after a vowel.
    fn cons(&self, i: isize) -> bool {
        match self.at(i) {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => i == 0 || !self.cons(i - 1),
            _ => true,
        }
    }

    /// The measure m of the stem `b[0..=j]`: the number of vowel-consonant
    /// spans in its `[C](VC)^m[V]` decomposition.
    fn m(&self) -> i32 {
        let mut n = 0;
        let mut i: isize = 0;
        loop {
            if i > self.j {
                return n;
            }
            if !self.cons(i) {
                break;
            }
            i += 1;
        }
        i += 1;
        loop {
            loop {
                if i > self.j {
                    return n;
                }
                if self.cons(i) {
                    break;
                }
                i += 1;
            }
            i += 1;
            n += 1;
            loop {
                if i > self.j {
                    return n;
                }
                if !self.cons(i) {
                    break;
                }
                i += 1;
            }
            i += 1;
        }
    }

    fn vowel_in_stem(&self) -> bool {
        (0..=self.j).any(|i| !self.cons(i))
    }

    /// True when `i-1, i` is a double consonant.
    fn doublec(&self, i: isize) -> bool {
        i >= 1 && self.at(i) == self.at(i - 1) && self.cons(i)
    }

    /// True when `i-2, i-1, i` is consonant-vowel-consonant and the final
    /// consonant is not w, x or y. Used to restore a trailing e ("hop-ing"
    /// becomes "hope") and to keep one ("rate" stays "rate").
    fn cvc(&self, i: isize) -> bool {
        if i < 2 || !self.cons(i) || self.cons(i - 1) || !self.cons(i - 2) {
            return false;
        }
        !matches!(self.at(i), b'w' | b'x' | b'y')
    }

    /// True when the current word ends with `s`; on a match, `j` is set to
    /// the character before the suffix.
    fn ends(&mut self, s: &[u8]) -> bool {
        let len = s.len() as isize;
        if len > self.k + 1 {
            return false;
        }
        let start = (self.k + 1 - len) as usize;
        if &self.b[start..=(self.k as usize)] != s {
            return false;
        }
        self.j = self.k - len;
        true
    }

    /// Replaces the suffix after `j` with `s`.
    fn setto(&mut self, s: &[u8]) {
        self.b.truncate((self.j + 1) as usize);
        self.b.extend_from_slice(s);
        self.k = self.j + s.len() as isize;
    }

    fn r(&mut self, s: &[u8]) {
        if self.m() > 0 {
            self.setto(s);
        }
    }

    /// Plural and -ed/-ing endings: caresses to caress, ponies to poni,
    /// agreed to agree, motoring to motor, hopping to hop, filing to file.
    fn step1ab(&mut self) {
        if self.at(self.k) == b's' {
            if self.ends(b"sses") {
                self.k -= 2;
            } else if self.ends(b"ies") {
                self.setto(b"i");
            } else if self.at(self.k - 1) != b's' {
                self.k -= 1;
            }
        }
        if self.ends(b"eed") {
            if self.m() > 0 {
                self.k -= 1;
            }
        } else if (self.ends(b"ed") || self.ends(b"ing")) && self.vowel_in_stem() {
            self.k = self.j;
            if self.ends(b"at") {
                self.setto(b"ate");
            } else if self.ends(b"bl") {
                self.setto(b"ble");
            } else if self.ends(b"iz") {
                self.setto(b"ize");
            } else if self.doublec(self.k) {
                self.k -= 1;
                if matches!(self.at(self.k), b'l' | b's' | b'z') {
                    self.k += 1;
                }
            } else if self.m() == 1 && self.cvc(self.k) {
                self.setto(b"e");
            }
        }
    }

    /// Terminal y to i when the stem contains a vowel (happy to happi).
    fn step1c(&mut self) {
        if self.ends(b"y") && self.vowel_in_stem() {
            self.b[self.k as usize] = b'i';
        }
    }

    /// Double suffixes to single ones when m > 0 (ization to ize).
    ///
    /// Arms keep one if/else chain per penultimate letter even when the
    /// chain has a single link or repeats a replacement, matching the
    /// published rule table one to one.
    #[allow(clippy::collapsible_match, clippy::if_same_then_else)]
    fn step2(&mut self) {
        if self.k < 1 {
            return;
        }
        match self.at(self.k - 1) {
            b'a' => {
                if self.ends(b"ational") {
                    self.r(b"ate");
                } else if self.ends(b"tional") {
                    self.r(b"tion");
                }
            }
            b'c' => {
                if self.ends(b"enci") {
                    self.r(b"ence");
                } else if self.ends(b"anci") {
                    self.r(b"ance");
                }
            }
            b'e' => {
                if self.ends(b"izer") {
                    self.r(b"ize");
                }
            }
            b'l' => {
                if self.ends(b"bli") {
                    self.r(b"ble");
                } else if self.ends(b"alli") {
                    self.r(b"al");
                } else if self.ends(b"entli") {
                    self.r(b"ent");
                } else if self.ends(b"eli") {
                    self.r(b"e");
                } else if self.ends(b"ousli") {
                    self.r(b"ous");
                }
            }
            b'o' => {
                if self.ends(b"ization") {
                    self.r(b"ize");
                } else if self.ends(b"ation") {
                    self.r(b"ate");
                } else if self.ends(b"ator") {
                    self.r(b"ate");
                }
            }
            b's' => {
                if self.ends(b"alism") {
                    self.r(b"al");
                } else if self.ends(b"iveness") {
                    self.r(b"ive");
                } else if self.ends(b"fulness") {
                    self.r(b"ful");
                } else if self.ends(b"ousness") {
                    self.r(b"ous");
                }
            }
            b't' => {
                if self.ends(b"aliti") {
                    self.r(b"al");
                } else if self.ends(b"iviti") {
                    self.r(b"ive");
                } else if self.ends(b"biliti") {
                    self.r(b"ble");
                }
            }
            b'g' => {
                if self.ends(b"logi") {
                    self.r(b"log");
                }
            }
            _ => {}
        }
    }

    /// -ic-, -full, -ness and similar (icate to ic, ful dropped).
    #[allow(clippy::collapsible_match)]
    fn step3(&mut self) {
        match self.at(self.k) {
            b'e' => {
                if self.ends(b"icate") {
                    self.r(b"ic");
                } else if self.ends(b"ative") {
                    self.r(b"");
                } else if self.ends(b"alize") {
                    self.r(b"al");
                }
            }
            b'i' => {
                if self.ends(b"iciti") {
                    self.r(b"ic");
                }
            }
            b'l' => {
                if self.ends(b"ical") {
                    self.r(b"ic");
                } else if self.ends(b"ful") {
                    self.r(b"");
                }
            }
            b's' => {
                if self.ends(b"ness") {
                    self.r(b"");
                }
            }
            _ => {}
        }
    }

    /// Drops -ant, -ence and similar endings when m > 1.
    fn step4(&mut self) {
        if self.k < 1 {
            return;
        }
        let matched = match self.at(self.k - 1) {
            b'a' => self.ends(b"al"),
            b'c' => self.ends(b"ance") || self.ends(b"ence"),
            b'e' => self.ends(b"er"),
            b'i' => self.ends(b"ic"),
            b'l' => self.ends(b"able") || self.ends(b"ible"),
            b'n' => {
                self.ends(b"ant")
                    || self.ends(b"ement")
                    || self.ends(b"ment")
                    || self.ends(b"ent")
            }
            b'o' => {
                (self.ends(b"ion") && self.j >= 0 && matches!(self.at(self.j), b's' | b't'))
                    || self.ends(b"ou")
            }
            b's' => self.ends(b"ism"),
            b't' => self.ends(b"ate") || self.ends(b"iti"),
            b'u' => self.ends(b"ous"),
            b'v' => self.ends(b"ive"),
            b'z' => self.ends(b"ize"),
            _ => false,
        };
        if matched && self.m() > 1 {
            self.k = self.j;
        }
    }

    /// Removes a final -e when m > 1 (probate to probat) or when m = 1 and
    /// the stem does not end cvc (cease to ceas, but rate stays rate), then
    /// maps -ll to -l when m > 1 (controll to control). As in the reference
    /// implementation, the measure here is taken over the whole word.
    fn step5(&mut self) {
        self.j = self.k;
        if self.at(self.k) == b'e' {
            let a = self.m();
            if a > 1 || (a == 1 && !self.cvc(self.k - 1)) {
                self.k -= 1;
            }
        }
        if self.at(self.k) == b'l' && self.doublec(self.k) && self.m() > 1 {
            self.k -= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_splits_and_stems() {
        assert_eq!(tokenize("Running, RUNS!"), vec!["run", "run"]);
    }

    #[test]
    fn tokenize_empty_input() {
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn tokenize_splits_on_every_non_alphanumeric_and_keeps_stopwords() {
        assert_eq!(tokenize("a-b a"), vec!["a", "b", "a"]);
        assert_eq!(tokenize("the cat's 2nd bowl"), vec!["the", "cat", "s", "2nd", "bowl"]);
    }

    #[test]
    fn tokenize_keeps_non_ascii_tokens_unstemmed() {
        assert_eq!(tokenize("Café métros"), vec!["café", "métros"]);
    }

    /// Full-pipeline pairs traced by hand from the published algorithm.
    #[test]
    fn porter_reference_vocabulary() {
        let pairs = [
            ("caresses", "caress"),
            ("ponies", "poni"),
            ("ties", "ti"),
            ("flies", "fli"),
            ("caress", "caress"),
            ("cats", "cat"),
            ("feed", "feed"),
            ("agreed", "agre"),
            ("plastered", "plaster"),
            ("bled", "bled"),
            ("motoring", "motor"),
            ("sing", "sing"),
            ("conflated", "conflat"),
            ("troubled", "troubl"),
            ("sized", "size"),
            ("hopping", "hop"),
            ("tanned", "tan"),
            ("falling", "fall"),
            ("hissing", "hiss"),
            ("fizzed", "fizz"),
            ("failing", "fail"),
            ("filing", "file"),
            ("happy", "happi"),
            ("sky", "sky"),
            ("relational", "relat"),
            ("rational", "ration"),
            ("valenci", "valenc"),
            ("hesitanci", "hesit"),
            ("digitizer", "digit"),
            ("conformabli", "conform"),
            ("radicalli", "radic"),
            ("vileli", "vile"),
            ("analogousli", "analog"),
            ("vietnamization", "vietnam"),
            ("predication", "predic"),
            ("operator", "oper"),
            ("feudalism", "feudal"),
            ("decisiveness", "decis"),
            ("hopefulness", "hope"),
            ("callousness", "callous"),
            ("formaliti", "formal"),
            ("sensitiviti", "sensit"),
            ("sensibiliti", "sensibl"),
            ("triplicate", "triplic"),
            ("formative", "form"),
            ("formalize", "formal"),
            ("electriciti", "electr"),
            ("electrical", "electr"),
            ("hopeful", "hope"),
            ("goodness", "good"),
            ("revival", "reviv"),
            ("allowance", "allow"),
            ("inference", "infer"),
            ("airliner", "airlin"),
            ("gyroscopic", "gyroscop"),
            ("adjustable", "adjust"),
            ("defensible", "defens"),
            ("irritant", "irrit"),
            ("replacement", "replac"),
            ("adjustment", "adjust"),
            ("dependent", "depend"),
            ("adoption", "adopt"),
            ("communism", "commun"),
            ("activate", "activ"),
            ("angulariti", "angular"),
            ("homologous", "homolog"),
            ("effective", "effect"),
            ("bowdlerize", "bowdler"),
            ("probate", "probat"),
            ("rate", "rate"),
            ("cease", "ceas"),
            ("controll", "control"),
            ("roll", "roll"),
        ];
        for (word, want) in pairs {
            assert_eq!(porter_stem(word), want, "stem of {word:?}");
        }
    }

    /// Pairs from the demo paragraph distributed with the reference
    /// implementation.
    #[test]
    fn porter_demo_paragraph() {
        let pairs = [
            ("analysis", "analysi"),
            ("reveal", "reveal"),
            ("features", "featur"),
            ("are", "ar"),
            ("easily", "easili"),
            ("visible", "visibl"),
            ("variations", "variat"),
            ("individual", "individu"),
            ("genes", "gene"),
            ("picture", "pictur"),
            ("expression", "express"),
            ("biologically", "biolog"),
            ("transparent", "transpar"),
            ("accessible", "access"),
            ("interpretation", "interpret"),
        ];
        for (word, want) in pairs {
            assert_eq!(porter_stem(word), want, "stem of {word:?}");
        }
    }

    #[test]
    fn porter_leaves_short_and_non_ascii_words_alone() {
        assert_eq!(porter_stem("as"), "as");
        assert_eq!(porter_stem("is"), "is");
        assert_eq!(porter_stem("café"), "café");
    }

    #[test]
    fn porter_handles_degenerate_suffix_only_words() {
        // Words that are nothing but a suffix must not panic or go negative.
        assert_eq!(porter_stem("ies"), "i");
        assert_eq!(porter_stem("sses"), "ss");
        assert_eq!(porter_stem("ing"), "ing");
    }

    #[test]
    fn porter_is_idempotent_on_its_own_output_for_common_words() {
        for word in ["running", "studies", "arguing", "happiness", "generalization"] {
            let once = porter_stem(word);
            let twice = porter_stem(&once);
            assert_eq!(once, twice, "restemming {word:?}");
        }
    }
}
