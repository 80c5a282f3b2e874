use rankdistill::data::{build_dataset, generate_synthetic};
use rankdistill::eval::evaluate_model;
use rankdistill::trainer::{
    distill_train, generate_topk, train_teacher, RankingLossKind, TrainConfig,
};
use rankdistill::weighting::{WeightConfig, WeightMode};

fn probe(seed: u64, slr: f64, sl2: f64, sep: usize) {
    probe_full(seed, slr, sl2, sep, 5.0, 0.1, 3);
}

fn probe_full(seed: u64, slr: f64, sl2: f64, sep: usize, lambda: f64, mu: f64, negs: usize) {
    let ix = generate_synthetic(500, 200, 60, 5.0, seed).unwrap();
    let ds = build_dataset(&ix, 5, (0.7, 0.1, 0.2)).unwrap();
    let weighting = WeightConfig {
        mode: WeightMode::Hybrid,
        lambda: Some(lambda),
        rho: None,
        mu: Some(mu),
        epsilon: 100,
        warmup_iters: sep / 2,
    };
    let teacher_cfg = TrainConfig {
        epochs: 30,
        lr: 0.02,
        l2: 1e-3,
        negatives_per_positive: 3,
        alpha: 0.0,
        k: 10,
        weighting: weighting.clone(),
        seed,
        ranking_loss: RankingLossKind::Pairwise,
    };
    let mut student_cfg = teacher_cfg.clone();
    student_cfg.epochs = sep;
    student_cfg.lr = slr;
    student_cfg.l2 = sl2;
    student_cfg.negatives_per_positive = negs;
    student_cfg.alpha = 0.5;

    let teacher = train_teacher(&ds, 64, &teacher_cfg).unwrap();
    let topk = generate_topk(&teacher.model, &ds, 10).unwrap();

    let mut cfg0 = student_cfg.clone();
    cfg0.alpha = 0.0;
    let s = distill_train(&ds, &topk, 8, &cfg0).unwrap();
    let rd = distill_train(&ds, &topk, 8, &student_cfg).unwrap();

    let mt = evaluate_model(&teacher.model, &ds).unwrap().metric("map");
    let ms = evaluate_model(&s.model, &ds).unwrap().metric("map");
    let mr = evaluate_model(&rd.model, &ds).unwrap().metric("map");
    println!(
        "slr={slr} sl2={sl2} sep={sep} lam={lambda} mu={mu} negs={negs} seed={seed}: T={mt:.4} S={ms:.4}@{} RD={mr:.4}@{} | RD>S={} RD/T={:.3}",
        s.best_epoch,
        rd.best_epoch,
        mr > ms,
        mr / mt
    );
}

#[test]
#[ignore]
fn rd_long_student_probe() {
    for (lam, mu, negs) in [(2.0f64, 0.1f64, 3usize), (5.0, 0.2, 3), (5.0, 0.1, 5)] {
        for seed in [303u64, 404, 606, 808] {
            probe_full(seed, 0.05, 3e-3, 60, lam, mu, negs);
        }
    }
    let _ = probe;
}
