use crate::error::{Error, Result};

fn check(probs: &[f64], n_classes: usize, y: &[usize]) -> Result<()> {
    if n_classes == 0 || probs.len() != y.len() * n_classes {
        return Err(Error::Data(format!(
            "{} probabilities for {} labels and {n_classes} classes",
            probs.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label. `probs` is row-major.
pub fn accuracy(probs: &[f64], n_classes: usize, y: &[usize]) -> Result<f64> {
    check(probs, n_classes, y)?;
    if y.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let hits = y
        .iter()
        .enumerate()
        .filter(|&(i, &label)| argmax(&probs[i * n_classes..(i + 1) * n_classes]) == label)
        .count();
    Ok(hits as f64 / y.len() as f64)
}

/// Rank-based ROC AUC with midranks for ties; `None` unless both classes occur.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Binary AUC of the class-1 probability for two classes, otherwise the
/// macro average of one-vs-rest AUCs over classes where it is defined.
pub fn auc(probs: &[f64], n_classes: usize, y: &[usize]) -> Result<Option<f64>> {
    check(probs, n_classes, y)?;
    let column = |c: usize| -> Vec<f64> { (0..y.len()).map(|i| probs[i * n_classes + c]).collect() };
    if n_classes == 2 {
        let pos: Vec<bool> = y.iter().map(|&l| l == 1).collect();
        return Ok(binary_auc(&column(1), &pos));
    }
    let per_class: Vec<f64> = (0..n_classes)
        .filter_map(|c| {
            let pos: Vec<bool> = y.iter().map(|&l| l == c).collect();
            binary_auc(&column(c), &pos)
        })
        .collect();
    if per_class.is_empty() {
        return Ok(None);
    }
    Ok(Some(per_class.iter().sum::<f64>() / per_class.len() as f64))
}
