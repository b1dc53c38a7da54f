/// Marks the points `(flops, accuracy)` that no other point dominates.
///
/// A point is dominated when another has no more FLOPs and strictly higher
/// accuracy, or strictly fewer FLOPs and no lower accuracy. Points equal in
/// both coordinates are all kept.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[b].1.total_cmp(&points[a].1))
    });
    let mut mask = vec![false; points.len()];
    // Best accuracy among strictly cheaper points.
    let mut best_cheaper = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let flops = points[order[i]].0;
        let group_max = points[order[i]].1;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == flops {
            let acc = points[order[j]].1;
            mask[order[j]] = acc == group_max && acc > best_cheaper;
            j += 1;
        }
        best_cheaper = best_cheaper.max(group_max);
        i = j;
    }
    mask
}
