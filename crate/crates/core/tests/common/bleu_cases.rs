//! Corpus BLEU reference values from NLTK 3.10.3:
//! `corpus_bleu(refs, hyps, smoothing_function=SmoothingFunction(epsilon=0.1).method1) * 100`.

pub type Case = (&'static [(&'static str, &'static str)], f64);

/// `(hypothesis, reference)` pairs and the NLTK score.
pub const NLTK: [Case; 4] = [
    (
        &[
            ("valero is located at 200_alester_ave .", "valero is located at 200_alester_ave ."),
            (
                "the nearest gas_station is valero at 200_alester_ave .",
                "the nearest gas_station is chevron at 783_arcadia_pl .",
            ),
            ("you 're welcome !", "have a good day !"),
        ],
        51.16662767333617,
    ),
    (&[("it is 2_miles away", "it is 2_miles away .")], 77.8800783071405),
    (&[("the address is 783_arcadia_pl", "783_arcadia_pl is the address of chevron")], 12.25504602011117),
    (
        &[
            ("there is heavy_traffic on the way to teavana .", "there is no_traffic on the way to teavana ."),
            ("teavana is 1_miles away .", "teavana is 1_miles away ."),
            ("what else can i help with ?", "is there anything else ?"),
            ("the address of chevron is 783_arcadia_pl .", "the address is 783_arcadia_pl ."),
        ],
        46.895213993174345,
    ),
];

/// Our score for one case.
pub fn score(pairs: &[(&str, &str)]) -> f64 {
    let toks = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let c: Vec<_> = pairs.iter().map(|(h, _)| toks(h)).collect();
    let r: Vec<_> = pairs.iter().map(|(_, r)| toks(r)).collect();
    kbdialog::evaluate::corpus_bleu(&c, &r).unwrap()
}
