use graphgae::data::generate_synthetic;
use graphgae::model::EncoderKind;
use graphgae::training::{train, TrainConfig};

#[test]
fn hundred_node_graph_halves_its_loss() {
    let ds = generate_synthetic(100, 8.0, 64, 0).unwrap();
    for kind in [EncoderKind::Gat, EncoderKind::Gcn] {
        let cfg = TrainConfig {
            encoder_kind: kind,
            ..TrainConfig::default()
        };
        let (_, log) = train(&ds.graph, &ds.features, &cfg).unwrap();
        assert_eq!(log.records.len(), 200);
        let first = log.records.first().unwrap().total;
        let last = log.records.last().unwrap().total;
        assert!(last < 0.5 * first, "{kind:?}: {first} -> {last}");
    }
}
