use pedp_core::baselines::{MultiClass, MultiClassConfig, SeqConfig, SeqDecode, SeqModel};
use pedp_core::checkpoint::{self, PolicyModel};
use pedp_core::domain::{load_corpus, write_corpus};
use pedp_core::evaluation::{interactive_metrics, simulate, ModelPolicy};
use pedp_core::model::{PedpConfig, PedpModel, PredictOptions};
use pedp_core::training::{evaluate_standard, fit, FitSettings, LossWeights, PedpTrainer};
use pedp_core::user_sim::{generate_corpus, ToyWorld, DEFAULT_MAX_TURNS};
use pedp_core::PedpError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_pedp(world: &ToyWorld) -> PolicyModel {
    let config = PedpConfig {
        hidden: 24,
        action_embedding: 8,
        decoder_hidden: 12,
        max_plan_len: 8,
        ..PedpConfig::new(world.state_width(), world.system_vocab().len())
    };
    PolicyModel::Pedp(PedpTrainer {
        model: PedpModel::new(config, &mut rng(1)).unwrap(),
        weights: LossWeights::default(),
        predict: PredictOptions::default(),
    })
}

#[test]
fn corpus_train_checkpoint_evaluate() {
    let world = ToyWorld::toy();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    write_corpus(&path, &generate_corpus(&world, 60, true, &mut rng(3)).unwrap()).unwrap();
    let corpus = load_corpus(&path).unwrap();

    let mut model = small_pedp(&world);
    let settings = FitSettings {
        epochs: 8,
        seed: 2,
        ..FitSettings::default()
    };
    let out = fit(&mut model, &corpus.samples, &settings, |_| {}).unwrap();
    assert_eq!(out.log.len(), 8);
    assert!(out.log.last().unwrap().loss_total < out.log[0].loss_total);

    let ckpt = dir.path().join("m.ckpt");
    checkpoint::save(&ckpt, &model, corpus.vocab.digest(), "cfg").unwrap();
    let (back, header) = checkpoint::load_for_vocab(&ckpt, corpus.vocab.digest()).unwrap();
    assert_eq!(header.run_config_digest, "cfg");
    let a = evaluate_standard(&model, &corpus.samples, 5).unwrap();
    let b = evaluate_standard(&back, &corpus.samples, 5).unwrap();
    assert_eq!(a, b);

    let ra = interactive_metrics(&simulate(&world, &mut ModelPolicy(&model), 20, DEFAULT_MAX_TURNS, 8).unwrap()).unwrap();
    let rb = interactive_metrics(&simulate(&world, &mut ModelPolicy(&back), 20, DEFAULT_MAX_TURNS, 8).unwrap()).unwrap();
    assert_eq!(ra, rb);

    let wrong = "0".repeat(64);
    assert!(matches!(
        checkpoint::load_for_vocab(&ckpt, &wrong),
        Err(PedpError::VocabDigest { .. })
    ));
}

#[test]
fn every_model_kind_round_trips() {
    let world = ToyWorld::toy();
    let corpus = generate_corpus(&world, 10, true, &mut rng(4)).unwrap();
    let (s, m) = (world.state_width(), world.system_vocab().len());
    let models = [
        small_pedp(&world),
        PolicyModel::MultiClass(
            MultiClass::new(
                MultiClassConfig {
                    state_width: s,
                    hidden: 16,
                    actions: m,
                    tau_out: 1.0,
                },
                &mut rng(5),
            )
            .unwrap(),
        ),
        PolicyModel::Seq(
            SeqModel::new(
                SeqConfig {
                    state_width: s,
                    hidden: 16,
                    actions: m,
                    embedding: 8,
                    max_len: 6,
                    decode: SeqDecode::Beam { width: 4 },
                },
                &mut rng(6),
            )
            .unwrap(),
        ),
    ];
    for model in models {
        let bytes = checkpoint::to_bytes(&model, corpus.vocab.digest(), "x").unwrap();
        let (back, _) = checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.kind(), model.kind());
        assert_eq!(checkpoint::to_bytes(&back, corpus.vocab.digest(), "x").unwrap(), bytes);
        let a = evaluate_standard(&model, &corpus.samples, 1).unwrap();
        let b = evaluate_standard(&back, &corpus.samples, 1).unwrap();
        assert_eq!(a, b);
    }
}
