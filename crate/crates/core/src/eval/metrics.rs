use crate::error::{Error, Result};

fn check(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Empty("metric input"));
    }
    if preds.len() != labels.len() {
        return Err(Error::Config(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if let Some(bad) = preds.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(Error::Label(format!("class {bad} outside 0..{n_classes}")));
    }
    Ok(())
}

/// `(true positives, predicted count, support)` per class.
fn tallies(preds: &[usize], labels: &[usize], n_classes: usize) -> Vec<(usize, usize, usize)> {
    let mut t = vec![(0, 0, 0); n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        t[p].1 += 1;
        t[l].2 += 1;
        if p == l {
            t[l].0 += 1;
        }
    }
    t
}

/// Mean per-class recall over the classes present in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    check(preds, labels, n_classes)?;
    let recalls: Vec<f64> = tallies(preds, labels, n_classes)
        .into_iter()
        .filter(|t| t.2 > 0)
        .map(|(tp, _, support)| tp as f64 / support as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Support-weighted mean of per-class F1; a class with no predictions or no
/// support scores 0.
pub fn weighted_f1(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    check(preds, labels, n_classes)?;
    let n = labels.len() as f64;
    Ok(tallies(preds, labels, n_classes)
        .into_iter()
        .map(|(tp, predicted, support)| {
            let denom = predicted + support;
            let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
            f1 * support as f64 / n
        })
        .sum())
}

/// Balanced MAE in EF percentage points: MAE within each true EF category,
/// averaged over the non-empty categories.
pub fn bmae(pred_ef: &[f64], true_ef: &[f64], category: impl Fn(f64) -> usize) -> Result<f64> {
    if pred_ef.is_empty() {
        return Err(Error::Empty("bmae input"));
    }
    if pred_ef.len() != true_ef.len() {
        return Err(Error::Config(format!("{} predictions for {} labels", pred_ef.len(), true_ef.len())));
    }
    let mut groups: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for (&p, &t) in pred_ef.iter().zip(true_ef) {
        let g = groups.entry(category(t)).or_default();
        g.0 += (p - t).abs() * 100.0;
        g.1 += 1;
    }
    Ok(groups.values().map(|(s, n)| s / *n as f64).sum::<f64>() / groups.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probmodel::CategoryGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bacc_examples() {
        let labels = [0, 0, 1, 1, 2, 2];
        assert_eq!(balanced_accuracy(&labels, &labels, 3).unwrap(), 1.0);
        assert!((balanced_accuracy(&[0; 6], &labels, 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        // recalls 1.0, 0.5, 0.0
        let preds = [0, 0, 1, 0, 1, 1];
        assert!((balanced_accuracy(&preds, &labels, 3).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(balanced_accuracy(&[], &[], 3), Err(Error::Empty(_))));
    }

    #[test]
    fn absent_classes_are_skipped() {
        assert_eq!(balanced_accuracy(&[0, 2], &[0, 0], 3).unwrap(), 0.5);
    }

    #[test]
    fn f1_examples() {
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        assert_eq!(weighted_f1(&labels, &labels, 3).unwrap(), 1.0);
        let f = weighted_f1(&[0; 300], &labels, 3).unwrap();
        assert!((f - 1.0 / 6.0).abs() < 1e-12);
        let mut one_off: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let lab = one_off.clone();
        one_off[7] = (one_off[7] + 1) % 3;
        assert!(weighted_f1(&one_off, &lab, 3).unwrap() > 0.98);
    }

    #[test]
    fn bmae_examples() {
        let g = CategoryGrid::default();
        let cat = |y| g.ef_category(y);
        assert_eq!(bmae(&[0.3, 0.6], &[0.3, 0.6], cat).unwrap(), 0.0);
        // per-category MAEs 4, 6, 8 points with unequal group sizes
        let t = [0.2, 0.2, 0.45, 0.7, 0.7, 0.7];
        let p = [0.24, 0.16, 0.51, 0.78, 0.62, 0.78];
        assert!((bmae(&p, &t, cat).unwrap() - 6.0).abs() < 1e-9);
        assert!((bmae(&[0.65, 0.75], &[0.6, 0.7], cat).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn random_predictions_are_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let labels: Vec<usize> = (0..10_000).map(|i| i % 3).collect();
        let preds: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..3)).collect();
        let b = balanced_accuracy(&preds, &labels, 3).unwrap();
        assert!((b - 1.0 / 3.0).abs() < 0.02);
    }
}
