use proptest::prelude::*;
use rhia::config::{KeyValues, Precision, Settings, SETTING_KEYS};

#[test]
fn defaults_render_and_parse_back() {
    let d = Settings::default();
    let kv = KeyValues::parse(&d.render()).unwrap();
    assert_eq!(Settings::from_key_values(&kv).unwrap(), d);
    let keys: Vec<&str> = kv.iter().map(|(k, _)| k).collect();
    let mut expected = SETTING_KEYS.to_vec();
    expected.sort_unstable();
    assert_eq!(keys, expected);
}

#[test]
fn overlay_replaces_earlier_layers() {
    let mut base = KeyValues::parse("lr=0.5\nepochs=3\n").unwrap();
    base.overlay(&KeyValues::parse("lr=0.2").unwrap());
    let s = Settings::from_key_values(&base).unwrap();
    assert_eq!((s.lr, s.epochs, s.dropout), (0.2, 3, 0.5));
}

#[test]
fn unknown_key_lists_all_valid_keys() {
    let err = Settings::from_key_values(&KeyValues::parse("lrate=1").unwrap()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let msg = err.to_string();
    for k in SETTING_KEYS {
        assert!(msg.contains(k), "{msg}");
    }
}

#[test]
fn invalid_values_are_usage_errors() {
    for bad in ["lr=-1", "dropout=1", "batch_size=0", "epochs=x", "precision=f16", "lr_decay=0", "clip_norm=-2", "noline"] {
        let err = KeyValues::parse(bad).and_then(|kv| Settings::from_key_values(&kv));
        assert_eq!(err.unwrap_err().exit_code(), 1, "{bad}");
    }
}

#[test]
fn precision_names() {
    assert_eq!("f64".parse::<Precision>().unwrap(), Precision::Double);
    assert_eq!("single".parse::<Precision>().unwrap(), Precision::Single);
    assert_eq!(Precision::Single.name(), "f32");
}

proptest! {
    #[test]
    fn any_valid_lr_round_trips(lr in 0.0f64..10.0, seed in any::<u64>()) {
        let s = Settings { lr, seed, ..Settings::default() };
        let back = Settings::from_key_values(&KeyValues::parse(&s.render()).unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }
}
