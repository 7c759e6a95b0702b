use rand::seq::SliceRandom;

use crate::rng::rng_from_seed;

use super::types::BehaviorLog;

/// Seeded split of impressions into train and validation sets.
///
/// Each log goes to exactly one side; relative order is preserved within a side.
pub fn split_train_valid(
    logs: &[BehaviorLog],
    valid_fraction: f64,
    seed: u64,
) -> (Vec<BehaviorLog>, Vec<BehaviorLog>) {
    let mut order: Vec<usize> = (0..logs.len()).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n_valid = ((logs.len() as f64) * valid_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut is_valid = vec![false; logs.len()];
    for &i in &order[..n_valid] {
        is_valid[i] = true;
    }
    let mut train = Vec::with_capacity(logs.len() - n_valid);
    let mut valid = Vec::with_capacity(n_valid);
    for (log, v) in logs.iter().zip(is_valid) {
        if v {
            valid.push(log.clone());
        } else {
            train.push(log.clone());
        }
    }
    (train, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::NewsIdx;
    use std::collections::HashSet;

    #[test]
    fn disjoint_and_complete() {
        let logs: Vec<BehaviorLog> = (0..50)
            .map(|i| BehaviorLog {
                user_id: format!("U{}", i / 2),
                history: vec![NewsIdx(0)],
                impressions: vec![(NewsIdx(i), 1)],
            })
            .collect();
        let (train, valid) = split_train_valid(&logs, 0.2, 3);
        assert_eq!(valid.len(), 10);
        assert_eq!(train.len() + valid.len(), logs.len());
        let key = |l: &BehaviorLog| (l.user_id.clone(), l.impressions[0].0);
        let t: HashSet<_> = train.iter().map(key).collect();
        let v: HashSet<_> = valid.iter().map(key).collect();
        assert!(t.is_disjoint(&v));
        assert_eq!(split_train_valid(&logs, 0.2, 3), (train, valid));
    }
}
