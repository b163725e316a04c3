/// Interpolated average precision over `recall_points` equally spaced recall levels.
///
/// `outcomes` holds one flag per scored detection (true = true positive) in decreasing
/// confidence order; don't-care detections must already be removed. With no evaluated
/// ground truth the result is 1 when there are no detections and 0 otherwise.
pub fn average_precision(outcomes: &[bool], num_gt: usize, recall_points: usize) -> f64 {
    assert!(recall_points >= 2, "recall_points must be at least 2");
    if num_gt == 0 {
        return if outcomes.is_empty() { 1.0 } else { 0.0 };
    }
    // precision after each rank, and the running true-positive count
    let mut tp_at = Vec::with_capacity(outcomes.len());
    let mut precision = Vec::with_capacity(outcomes.len());
    let mut tp = 0usize;
    for (rank, &hit) in outcomes.iter().enumerate() {
        tp += hit as usize;
        tp_at.push(tp);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // precision envelope: best precision at this rank or any later one
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let steps = recall_points - 1;
    let mut rank = 0usize;
    let mut total = 0.0;
    for level in 0..recall_points {
        // recall >= level/steps  <=>  tp * steps >= level * num_gt
        while rank < tp_at.len() && tp_at[rank] * steps < level * num_gt {
            rank += 1;
        }
        if rank < tp_at.len() {
            total += precision[rank];
        }
    }
    total / recall_points as f64
}
