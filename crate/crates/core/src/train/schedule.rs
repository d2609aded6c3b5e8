use super::TrainConfig;

/// Learning rate at step `t`:
///
/// ```text
/// lr0 · min(1 + t·(n − 1)/(n·p), n, n·(2n)^((s − n·t)/(e − s)))
/// ```
///
/// with `n` replicas, warmup `p`, decay start `s` and decay end `e`, the
/// last three multiplied by `schedule_scale`.
pub fn lr_at(t: u64, cfg: &TrainConfig) -> f64 {
    let n = cfg.replicas as f64;
    let k = cfg.schedule_scale;
    let (p, s, e) = (
        cfg.warmup as f64 * k,
        cfg.decay_start as f64 * k,
        cfg.decay_end as f64 * k,
    );
    let t = t as f64;
    let warm = 1.0 + t * (n - 1.0) / (n * p);
    let decay = n * (2.0 * n).powf((s - n * t) / (e - s));
    cfg.lr0 * warm.min(n).min(decay)
}
