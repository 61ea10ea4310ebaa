//! The original Porter (1980) suffix-stripping stemmer.
//!
//! Operates on ASCII lowercase words; callers pass anything else through
//! unchanged. Words of one or two letters are not stemmed.

struct Stemmer {
    b: Vec<u8>,
    /// End of the current word (exclusive).
    k: usize,
    /// End of the stem once a suffix has matched (exclusive).
    j: usize,
}

impl Stemmer {
    fn is_consonant(&self, i: usize) -> bool {
        match self.b[i] {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => i == 0 || !self.is_consonant(i - 1),
            _ => true,
        }
    }

    /// Number of VC sequences in b[0..j].
    fn measure(&self) -> usize {
        let end = self.j;
        let mut n = 0;
        let mut i = 0;
        while i < end && self.is_consonant(i) {
            i += 1;
        }
        loop {
            while i < end && !self.is_consonant(i) {
                i += 1;
            }
            if i >= end {
                return n;
            }
            while i < end && self.is_consonant(i) {
                i += 1;
            }
            n += 1;
            if i >= end {
                return n;
            }
        }
    }

    fn stem_has_vowel(&self) -> bool {
        (0..self.j).any(|i| !self.is_consonant(i))
    }

    fn double_consonant(&self, end: usize) -> bool {
        end >= 2 && self.b[end - 1] == self.b[end - 2] && self.is_consonant(end - 1)
    }

    /// consonant-vowel-consonant ending at `end - 1`, last not w, x or y.
    fn cvc(&self, end: usize) -> bool {
        if end < 3 {
            return false;
        }
        let (a, b, c) = (end - 3, end - 2, end - 1);
        if !self.is_consonant(a) || self.is_consonant(b) || !self.is_consonant(c) {
            return false;
        }
        !matches!(self.b[c], b'w' | b'x' | b'y')
    }

    fn ends(&mut self, suffix: &str) -> bool {
        let s = suffix.as_bytes();
        if s.len() > self.k {
            return false;
        }
        if &self.b[self.k - s.len()..self.k] != s {
            return false;
        }
        self.j = self.k - s.len();
        true
    }

    fn set_to(&mut self, replacement: &str) {
        self.b.truncate(self.j);
        self.b.extend_from_slice(replacement.as_bytes());
        self.k = self.b.len();
    }

    fn replace_if_measured(&mut self, replacement: &str) {
        if self.measure() > 0 {
            self.set_to(replacement);
        }
    }

    fn step1ab(&mut self) {
        if self.b[self.k - 1] == b's' {
            if self.ends("sses") {
                self.k -= 2;
            } else if self.ends("ies") {
                self.set_to("i");
            } else if self.k >= 2 && self.b[self.k - 2] != b's' {
                self.k -= 1;
            }
            self.b.truncate(self.k);
        }
        if self.ends("eed") {
            if self.measure() > 0 {
                self.k -= 1;
                self.b.truncate(self.k);
            }
        } else if (self.ends("ed") || self.ends("ing")) && self.stem_has_vowel() {
            self.k = self.j;
            self.b.truncate(self.k);
            if self.ends("at") {
                self.set_to("ate");
            } else if self.ends("bl") {
                self.set_to("ble");
            } else if self.ends("iz") {
                self.set_to("ize");
            } else if self.double_consonant(self.k) {
                if !matches!(self.b[self.k - 1], b'l' | b's' | b'z') {
                    self.k -= 1;
                    self.b.truncate(self.k);
                }
            } else {
                self.j = self.k;
                if self.measure() == 1 && self.cvc(self.k) {
                    self.b.push(b'e');
                    self.k += 1;
                }
            }
        }
    }

    fn step1c(&mut self) {
        if self.ends("y") && self.stem_has_vowel() {
            self.b[self.k - 1] = b'i';
        }
    }

    fn step2(&mut self) {
        const RULES: &[(&str, &str)] = &[
            ("ational", "ate"),
            ("tional", "tion"),
            ("enci", "ence"),
            ("anci", "ance"),
            ("izer", "ize"),
            ("abli", "able"),
            ("alli", "al"),
            ("entli", "ent"),
            ("eli", "e"),
            ("ousli", "ous"),
            ("ization", "ize"),
            ("ation", "ate"),
            ("ator", "ate"),
            ("alism", "al"),
            ("iveness", "ive"),
            ("fulness", "ful"),
            ("ousness", "ous"),
            ("aliti", "al"),
            ("iviti", "ive"),
            ("biliti", "ble"),
        ];
        self.apply_first(RULES);
    }

    fn step3(&mut self) {
        const RULES: &[(&str, &str)] = &[
            ("icate", "ic"),
            ("ative", ""),
            ("alize", "al"),
            ("iciti", "ic"),
            ("ical", "ic"),
            ("ful", ""),
            ("ness", ""),
        ];
        self.apply_first(RULES);
    }

    /// Applies the longest matching rule (rules are tried longest-suffix-first
    /// within each final letter, which the tables above respect), m > 0.
    fn apply_first(&mut self, rules: &[(&str, &str)]) {
        let mut best: Option<(usize, &str)> = None;
        for (suffix, replacement) in rules {
            if self.ends(suffix) {
                let len = suffix.len();
                if best.is_none_or(|(l, _)| len > l) {
                    best = Some((len, replacement));
                }
            }
        }
        if let Some((len, replacement)) = best {
            self.j = self.k - len;
            self.replace_if_measured(replacement);
        }
    }

    fn step4(&mut self) {
        const SUFFIXES: &[&str] = &[
            "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent", "ion", "ou", "ism",
            "ate", "iti", "ous", "ive", "ize",
        ];
        let mut best: Option<usize> = None;
        for suffix in SUFFIXES {
            if self.ends(suffix) {
                let stem_end = self.k - suffix.len();
                if *suffix == "ion" && !(stem_end > 0 && matches!(self.b[stem_end - 1], b's' | b't')) {
                    continue;
                }
                if best.is_none_or(|l| suffix.len() > l) {
                    best = Some(suffix.len());
                }
            }
        }
        if let Some(len) = best {
            self.j = self.k - len;
            if self.measure() > 1 {
                self.k = self.j;
                self.b.truncate(self.k);
            }
        }
    }

    fn step5(&mut self) {
        self.j = self.k;
        if self.b[self.k - 1] == b'e' {
            self.j = self.k - 1;
            let m = self.measure();
            if m > 1 || (m == 1 && !self.cvc(self.k - 1)) {
                self.k -= 1;
                self.b.truncate(self.k);
            }
        }
        self.j = self.k;
        if self.b[self.k - 1] == b'l' && self.double_consonant(self.k) && self.measure() > 1 {
            self.k -= 1;
            self.b.truncate(self.k);
        }
    }
}

pub fn stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|c| c.is_ascii_lowercase()) {
        return word.to_string();
    }
    let b = word.as_bytes().to_vec();
    let k = b.len();
    let mut s = Stemmer { b, k, j: k };
    s.step1ab();
    if s.k > 1 {
        s.step1c();
        s.step2();
        s.step3();
        s.step4();
        s.step5();
    }
    s.b.truncate(s.k);
    String::from_utf8(s.b).expect("ascii input")
}
