use proptest::prelude::*;
use tsrule::data::{LabelSequence, MetricSeries};
use tsrule::preprocess::{
    chunk_count, chunk_series, prepare, render_chunk_text, scale_to_sig_figs, space_digits, ChunkPreset,
    PreprocessConfig, CHUNK_PRESET_INTERNAL, CHUNK_PRESET_KPI, CHUNK_PRESET_YAHOO,
};

fn significant_digits(v: f64) -> usize {
    let text = format!("{:e}", v.abs());
    let mantissa = text.split('e').next().unwrap();
    mantissa.chars().filter(char::is_ascii_digit).count()
}

#[test]
fn digit_spacing_examples() {
    assert_eq!(space_digits("1234"), "1 2 3 4");
    assert_eq!(space_digits("-0.5"), "-0 . 5");
    assert_eq!(space_digits("7"), "7");
    assert_eq!(space_digits(""), "");
}

#[test]
fn presets_are_selectable() {
    assert_eq!(ChunkPreset::parse("kpi").map(ChunkPreset::chunk_size), Some(2500));
    assert_eq!(ChunkPreset::parse("Yahoo").map(ChunkPreset::chunk_size), Some(500));
    assert_eq!(ChunkPreset::parse("internal").map(ChunkPreset::chunk_size), Some(1000));
    assert_eq!((CHUNK_PRESET_KPI, CHUNK_PRESET_YAHOO, CHUNK_PRESET_INTERNAL), (2500, 500, 1000));
    assert!(ChunkPreset::parse("other").is_none());
    for preset in [ChunkPreset::Kpi, ChunkPreset::Yahoo, ChunkPreset::Internal] {
        let values: Vec<f64> = (0..5000).map(f64::from).collect();
        let series = MetricSeries::from_values("m", &values, None).unwrap();
        let config = PreprocessConfig { chunk_size: preset.chunk_size(), ..PreprocessConfig::default() };
        let chunks = prepare(&series, &config).unwrap();
        assert_eq!(chunks[0].len(), preset.chunk_size());
        assert_eq!(chunks.len(), 5000usize.div_ceil(preset.chunk_size()));
    }
}

#[test]
fn rendering_uses_chunk_local_indices() {
    let series = MetricSeries::from_values("m", &[12.0, -0.5, 3.0, 4.0], None).unwrap();
    let chunks = chunk_series(&series, 2).unwrap();
    let config = PreprocessConfig::default();
    assert_eq!(render_chunk_text(&chunks[0], &config), "0\t1 2\n1\t-0 . 5\n");
    assert_eq!(render_chunk_text(&chunks[1], &config), "0\t3\n1\t4\n");
    let plain = PreprocessConfig { digit_spacing: false, ..config };
    assert_eq!(render_chunk_text(&chunks[0], &plain), "0\t12\n1\t-0.5\n");
}

#[test]
fn single_leftover_row_merges_into_last_chunk() {
    let values: Vec<f64> = (0..11).map(f64::from).collect();
    let series = MetricSeries::from_values("m", &values, None).unwrap();
    let chunks = chunk_series(&series, 5).unwrap();
    assert_eq!(chunks.iter().map(|c| c.len()).collect::<Vec<_>>(), [5, 6]);
    let chunks = chunk_series(&MetricSeries::from_values("m", &values[..10], None).unwrap(), 4).unwrap();
    assert_eq!(chunks.iter().map(|c| c.len()).collect::<Vec<_>>(), [4, 4, 2]);
}

#[test]
fn invalid_configurations_are_rejected() {
    let series = MetricSeries::from_values("m", &[1.0, 2.0, 3.0], None).unwrap();
    assert!(chunk_series(&series, 1).is_err());
    assert!(chunk_series(&MetricSeries::from_values("m", &[1.0], None).unwrap(), 4).is_err());
    assert!(scale_to_sig_figs(&[1.0], 0).is_err());
}

proptest! {
    #[test]
    fn chunks_concatenate_back(
        (values, labels) in (2usize..400).prop_flat_map(|n| (
            prop::collection::vec(-1e6f64..1e6, n),
            prop::collection::vec(0u8..=1, n),
        )),
        size in 2usize..64,
    ) {
        let labels = LabelSequence::from_ints(&labels).unwrap();
        let series = MetricSeries::from_values("m", &values, Some(labels.clone())).unwrap();
        let chunks = chunk_series(&series, size).unwrap();
        prop_assert_eq!(chunks.len(), chunk_count(values.len(), size));
        let joined: Vec<f64> = chunks.iter().flat_map(|c| c.values.clone()).collect();
        prop_assert_eq!(&joined, &values);
        let joined = LabelSequence::concat(chunks.iter().map(|c| c.labels.as_ref().unwrap()));
        prop_assert_eq!(joined, labels);
        let mut offset = 0;
        for c in &chunks {
            prop_assert_eq!(c.start_offset, offset);
            prop_assert!(c.len() >= 2 || values.len() < 2);
            offset += c.len();
        }
    }

    #[test]
    fn sig_fig_scaling_is_idempotent(
        values in prop::collection::vec(prop_oneof![-1e9f64..1e9, -1.0f64..1.0, Just(0.0)], 1..50),
        figs in 1u32..8,
    ) {
        let once = scale_to_sig_figs(&values, figs).unwrap();
        let twice = scale_to_sig_figs(&once, figs).unwrap();
        prop_assert_eq!(&once, &twice);
        for (v, s) in values.iter().zip(&once) {
            prop_assert!(significant_digits(*s) <= figs as usize, "{} -> {}", v, s);
            if *v != 0.0 {
                let rel = ((s - v) / v).abs();
                prop_assert!(rel <= 0.5 * 10f64.powi(1 - figs as i32) * (1.0 + 1e-9), "{} -> {}", v, s);
            }
        }
    }

    #[test]
    fn digit_spacing_is_reversible(number in "-?[0-9]{1,8}(\\.[0-9]{1,6})?") {
        let spaced = space_digits(&number);
        prop_assert_eq!(spaced.replace(' ', ""), number.clone());
        let stripped = number.trim_start_matches('-');
        prop_assert_eq!(spaced.matches(' ').count(), stripped.len() - 1);
    }

    #[test]
    fn digit_spacing_is_injective(a in "-?[0-9]{1,6}(\\.[0-9]{1,4})?", b in "-?[0-9]{1,6}(\\.[0-9]{1,4})?") {
        prop_assert_eq!(space_digits(&a) == space_digits(&b), a == b);
    }
}
