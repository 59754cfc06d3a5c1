use ecos::clustering::kmeans_compress;
use ecos::diversity::{kcenter_select, random_select};
use ecos::eval::{generate_synthetic, id_tpr, SynthSpec};
use ecos::protocol::wire::to_json;
use ecos::protocol::{run_protocol, ProtocolConfig};
use ecos::scoring::ScoringParams;
use ecos::seed::{derive_seed, STREAM_DECOMPRESS};

fn small_benchmark(seed: u64) -> (ecos::dataset::FeatureDataset, ecos::dataset::FeatureDataset) {
    generate_synthetic(&SynthSpec {
        per_domain: 300,
        client_size: 80,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn one_cluster_is_global_kcenter() {
    let (cloud, client) = small_benchmark(1);
    let cfg = ProtocolConfig {
        r: 1,
        budget: 40,
        seed: 6,
        ..Default::default()
    };
    let run = run_protocol(&cloud, &client, &cfg).unwrap();
    let sel = run.selection();
    assert_eq!(sel.plan.budgets, vec![40]);
    let first_seed = derive_seed(derive_seed(6, STREAM_DECOMPRESS), 0);
    let mut global = kcenter_select(&cloud, None, 40, first_seed)
        .unwrap()
        .indices;
    global.sort_unstable();
    assert_eq!(sel.indices, global);
}

#[test]
fn noiseless_selection_concentrates_on_client_domain() {
    for seed in [1, 2, 3] {
        let (cloud, client) = small_benchmark(seed);
        let cfg = ProtocolConfig {
            r: 15,
            budget: 200,
            seed,
            scoring: ScoringParams {
                sigma: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let run = run_protocol(&cloud, &client, &cfg).unwrap();
        let sel = run.selection();
        assert!(sel.ledger.non_private);
        assert_eq!(sel.ledger.epsilon, None);
        let tpr = id_tpr(&sel.indices, &cloud, &[0]).unwrap();
        assert!(tpr > 0.2, "seed {seed}: {tpr}");
    }
}

#[test]
fn kmeans_recovers_separated_blobs() {
    for seed in [1, 2, 3] {
        let (cloud, _) = small_benchmark(seed);
        let cb = kmeans_compress(&cloud, 5, seed, 100, 1e-6).unwrap();
        let domains = cloud.domains().unwrap();
        let mut pure = 0;
        for members in cb.members() {
            let mut counts = [0usize; 5];
            for &i in &members {
                counts[domains[i] as usize] += 1;
            }
            pure += counts.iter().max().unwrap();
        }
        let purity = pure as f64 / cloud.n() as f64;
        assert!(purity >= 0.99, "seed {seed}: {purity}");
    }
}

#[test]
fn random_baseline_tracks_the_base_rate() {
    let (cloud, _) = small_benchmark(4);
    let budget = 300;
    // Hypergeometric std is below the binomial one used here.
    let sd = (0.2f64 * 0.8 / budget as f64).sqrt();
    for seed in 0..20 {
        let idx = random_select(cloud.n(), budget, seed).unwrap();
        let tpr = id_tpr(&idx, &cloud, &[0]).unwrap();
        assert!((tpr - 0.2).abs() <= 3.0 * sd, "seed {seed}: {tpr}");
    }
}

#[test]
fn reruns_are_identical() {
    let (cloud, client) = small_benchmark(5);
    let cfg = ProtocolConfig {
        r: 12,
        budget: 100,
        seed: 21,
        scoring: ScoringParams {
            gamma: 0.4,
            scale_s: 2.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let a = run_protocol(&cloud, &client, &cfg).unwrap();
    let b = run_protocol(&cloud, &client, &cfg).unwrap();
    assert_eq!(
        to_json(&a.transcript).unwrap(),
        to_json(&b.transcript).unwrap()
    );
    let other = run_protocol(&cloud, &client, &ProtocolConfig { seed: 22, ..cfg }).unwrap();
    assert_ne!(a.transcript.uplink.scores, other.transcript.uplink.scores);
}
