use t2i::config::{parse_pairs, suggest};
use t2i::{CliError, Config, Source};
use table2image::data::MappingPolicy;
use table2image::model::Variant;

fn with_file(text: &str) -> Result<Config, CliError> {
    let mut cfg = Config::default();
    cfg.apply(parse_pairs(text)?, Source::File)?;
    Ok(cfg)
}

#[test]
fn empty_file_gives_the_reference_protocol() {
    let cfg = with_file("").unwrap();
    assert_eq!(cfg.uint("batch_size"), 64);
    assert_eq!(cfg.uint("epochs"), 100);
    assert_eq!(cfg.uint("repeats"), 3);
    assert_eq!(cfg.float("split"), 0.8);
    assert_eq!(cfg.source("epochs"), Source::Default);
    let tc = cfg.train_config();
    assert_eq!((tc.batch_size, tc.epochs, tc.repeats), (64, 100, 3));
    assert_eq!(tc.variant, Variant::Base);
    assert_eq!(tc.mapping, MappingPolicy::PerEpoch);
}

#[test]
fn flags_override_the_file() {
    let mut cfg = with_file("epochs = 5\nlr = 0.002\n").unwrap();
    cfg.apply([("epochs", "7")], Source::Flag).unwrap();
    assert_eq!(cfg.uint("epochs"), 7);
    assert_eq!(cfg.source("epochs"), Source::Flag);
    assert_eq!(cfg.float("lr"), 0.002);
    assert_eq!(cfg.source("lr"), Source::File);
}

#[test]
fn misspelled_key_is_rejected_with_a_suggestion() {
    let err = with_file("epohcs = 3").unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
    let msg = err.to_string();
    assert!(msg.contains("epohcs") && msg.contains("did you mean `epochs`"), "{msg}");
    assert_eq!(suggest("batchsize"), Some("batch_size"));
    assert_eq!(suggest("zzzzzz"), None);
}

#[test]
fn type_mismatch_names_the_key() {
    for (text, key) in [("epochs = many", "epochs"), ("split = 1.5", "split"), ("variant = big", "variant"), ("samples = 1,x", "samples")] {
        let msg = with_file(text).unwrap_err().to_string();
        assert!(msg.contains(&format!("`{key}`")), "{msg}");
    }
}

#[test]
fn comments_blank_lines_and_malformed_lines() {
    let cfg = with_file("# protocol\n\nmapping = single   # ablation\nvariant = dir\n").unwrap();
    assert_eq!(cfg.train_config().mapping, MappingPolicy::Single);
    assert_eq!(cfg.train_config().variant, Variant::Dir);
    assert!(with_file("epochs 3").unwrap_err().to_string().contains("line 1"));
}

#[test]
fn output_directory_does_not_change_the_canonical_config() {
    let a = with_file("out = one\nepochs = 4").unwrap();
    let b = with_file("out = two\nepochs = 4").unwrap();
    let c = with_file("out = one\nepochs = 5").unwrap();
    assert_eq!(a.canonical(), b.canonical());
    assert_ne!(a.canonical(), c.canonical());
}

#[test]
fn attribution_settings_flow_into_the_explainer_config() {
    let cfg = with_file("explain_seed = 9\ndualshap_iters = 40\nbackground_rows = 5\nreverse_epochs = 3").unwrap();
    let ec = cfg.explain_config();
    assert_eq!((ec.seed, ec.dualshap.seed, ec.dualshap.iters, ec.background_rows), (9, 9, 40, 5));
    assert_eq!(cfg.reverse_config().epochs, 3);
    assert_eq!(cfg.samples(), vec![0]);
}
