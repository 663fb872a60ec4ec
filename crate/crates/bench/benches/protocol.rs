use std::hint::black_box;

use chrono::NaiveDate;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use vaxcred_bench::{rng, World, PII};
use vaxcred_core::coupon::verify_coupon;
use vaxcred_core::crypto::{build_pii_tree_with, generate_keypair_with, prove_disclosure, verify_disclosure};
use vaxcred_core::health::{combine_aggregates, split_shares_with, AggregationServer};
use vaxcred_core::verification::verify_presentation;
use vaxcred_core::wallet::{wallet_init_app_with, Consent, PresentationKind};
use vaxcred_core::wire::qr::{decode_qr, encode_qr};
use vaxcred_core::{run_scenario, Badge, DoseInfo, FieldParams, ScenarioScript, SymptomVector, TrustAnchors};

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 3, 1).unwrap()
}

fn coupons(c: &mut Criterion) {
    let world = World::new(1, 1);
    let coupon = &world.coupons[0];
    c.bench_function("coupon/verify", |b| b.iter(|| verify_coupon(&world.vk, black_box(coupon))));
    c.bench_function("coupon/issue_batch_100", |b| b.iter(|| World::new(100, 2)));
}

fn issuance(c: &mut Criterion) {
    c.bench_function("issuance/paper_dose1", |b| {
        b.iter_batched(
            || World::new(1, 3),
            |world| {
                let mut pharmacy = world.pharmacy(day());
                let dose = DoseInfo::new("PFZ", "L1", day(), 1, "SITE-1");
                let pii = PII.iter().map(|(l, v)| (l.to_string(), v.to_string())).collect();
                pharmacy
                    .issue_credentials_paper(&world.coupons[0], dose, pii, &mut rng(4))
                    .unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn disclosure(c: &mut Criterion) {
    let mut r = rng(5);
    let tree = build_pii_tree_with(&PII, &mut r).unwrap();
    let root = tree.root();
    let proof = prove_disclosure(&tree, &["name", "dob"]).unwrap();
    c.bench_function("merkle/build_8", |b| b.iter(|| build_pii_tree_with(&PII, &mut r).unwrap()));
    c.bench_function("merkle/prove_2_of_8", |b| b.iter(|| prove_disclosure(&tree, &["name", "dob"]).unwrap()));
    c.bench_function("merkle/verify_2_of_8", |b| b.iter(|| verify_disclosure(&root, black_box(&proof))));

    let world = World::new(1, 6);
    let mut wallet = wallet_init_app_with(world.coupons[0].clone(), &PII, &mut r).unwrap();
    let mut pharmacy = world.pharmacy(day());
    let issued = pharmacy
        .issue_credentials_app(
            &world.coupons[0],
            DoseInfo::new("PFZ", "L1", day(), 1, "SITE-1"),
            wallet.pii_root().unwrap(),
            wallet.public_key().unwrap(),
        )
        .unwrap();
    wallet.store(issued.clone()).unwrap();
    let p = wallet
        .present(PresentationKind::StatusWithDisclosure, &Consent::labels(&["name"]))
        .unwrap();
    c.bench_function("verify/presentation_disclosure", |b| {
        b.iter(|| verify_presentation(&[world.vk], black_box(&p), &["name"]).unwrap())
    });

    let anchors = TrustAnchors::single(world.vk);
    let text = encode_qr(&issued.badge);
    c.bench_function("qr/encode_badge", |b| b.iter(|| encode_qr(black_box(&issued.badge))));
    c.bench_function("qr/decode_badge", |b| b.iter(|| decode_qr::<Badge>(black_box(&text), &anchors).unwrap()));
}

fn aggregation(c: &mut Criterion) {
    let params = FieldParams::default();
    let v = SymptomVector::new((0..params.dim as u32).collect());
    let mut r = rng(7);
    c.bench_function("health/split_16", |b| b.iter(|| split_shares_with(&v, &params, &mut r).unwrap()));
    c.bench_function("health/aggregate_1000_clients", |b| {
        b.iter_batched(
            || {
                (0..1000)
                    .map(|_| split_shares_with(&v, &params, &mut r).unwrap())
                    .collect::<Vec<_>>()
            },
            |bundles| {
                let a = AggregationServer::new(params).unwrap();
                let s = AggregationServer::new(params).unwrap();
                for bundle in &bundles {
                    a.accumulate(&bundle.share_a).unwrap();
                    s.accumulate(&bundle.share_b).unwrap();
                }
                combine_aggregates(&a.aggregate(), &s.aggregate(), &params).unwrap()
            },
            BatchSize::LargeInput,
        )
    });
}

fn keys(c: &mut Criterion) {
    let mut r = rng(8);
    c.bench_function("crypto/keygen", |b| b.iter(|| generate_keypair_with(&mut r).unwrap()));
}

fn lifecycle(c: &mut Criterion) {
    let script = ScenarioScript::happy_path(10);
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    g.bench_function("happy_path_10", |b| b.iter(|| run_scenario(&script, 1)));
    g.finish();
}

criterion_group!(benches, coupons, issuance, disclosure, aggregation, keys, lifecycle);
criterion_main!(benches);
