use crate::vocab::{strip_special, Token};

/// Unit-cost edit distance after dropping `bos`/`eos`/`pad`.
pub fn levenshtein(a: &[Token], b: &[Token]) -> usize {
    let a = strip_special(a);
    let b = strip_special(b);
    edit_distance(&a, &b)
}

fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y {
                diag
            } else {
                1 + diag.min(up).min(row[j])
            };
            diag = up;
        }
    }
    row[b.len()]
}

/// `1 - LD / max(|a|, |b|)`, with two empty sequences scoring 1.
pub fn la(a: &[Token], b: &[Token]) -> f64 {
    let longest = strip_special(a).len().max(strip_special(b).len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// `LD / |reference|`; `None` for an empty reference.
pub fn cer(reference: &[Token], hypothesis: &[Token]) -> Option<f64> {
    let len = strip_special(reference).len();
    (len > 0).then(|| levenshtein(reference, hypothesis) as f64 / len as f64)
}
