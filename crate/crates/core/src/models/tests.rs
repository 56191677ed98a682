use rand_chacha::ChaCha8Rng;

use super::*;

fn small_config(classifier: ClassifierKind) -> ModelConfig {
    ModelConfig {
        classifier,
        d_h: 5,
        d_g: 4,
        d_p: 4,
        d_e: 3,
        cnn_maps_per_size: 3,
        cnn_out: 4,
        embed_dim: 6,
        dropout: 0.0,
        max_dialogue_len: 8,
        ..ModelConfig::default()
    }
}

fn build(cfg: ModelConfig) -> Model<f64> {
    let vocab = Vocab::from_words(["a", "b", "c", "d", "e"]);
    let table = EmbeddingTable::random(&vocab, cfg.embed_dim, 3);
    Model::new(cfg, 3, Some(vocab), Some(table), 11).unwrap()
}

fn logits_for(m: &Model<f64>, texts: &[&str], speakers: &[&str]) -> Tensor<f64> {
    let mut g = Graph::new(&m.params);
    let feats: Vec<Var> = texts
        .iter()
        .map(|t| {
            m.extract(&mut g, &UtteranceInput::Text(t.to_string()))
                .unwrap()
        })
        .collect();
    let spk: Vec<String> = speakers.iter().map(|s| s.to_string()).collect();
    let out = m
        .forward(
            &mut g,
            &feats,
            &speaker_indices(&spk),
            None::<&mut ChaCha8Rng>,
        )
        .unwrap();
    g.value(out.logits).clone()
}

fn zero_params(m: &mut Model<f64>, keep: impl Fn(&str) -> bool) {
    for p in m.params.iter_mut() {
        if !keep(&p.name) {
            p.value.fill(0.0);
        }
    }
}

#[test]
fn cnn_zero_weights_give_relu_of_bias() {
    let mut m = build(small_config(ClassifierKind::Logreg));
    zero_params(&mut m, |n| n == "embed.table");
    let b = m.params.id("cnn.dense.b").unwrap();
    m.params
        .value_mut(b)
        .data_mut()
        .copy_from_slice(&[0.5, -1.0, 0.0, 2.0]);
    let mut g = Graph::new(&m.params);
    for text in ["", "a b c d e a"] {
        let f = m
            .extract(&mut g, &UtteranceInput::Text(text.into()))
            .unwrap();
        assert_eq!(g.value(f).data(), &[0.5, 0.0, 0.0, 2.0]);
    }
}

#[test]
fn width_one_filters_are_order_invariant() {
    let mut cfg = small_config(ClassifierKind::Logreg);
    cfg.cnn_filter_sizes = vec![1];
    let m = build(cfg);
    let mut g = Graph::new(&m.params);
    let a = m
        .extract(&mut g, &UtteranceInput::Text("a b c zz".into()))
        .unwrap();
    let b = m
        .extract(&mut g, &UtteranceInput::Text("zz c a b".into()))
        .unwrap();
    assert_eq!(g.value(a), g.value(b));
}

#[test]
fn logreg_zero_weights_uniform_and_context_free() {
    let mut m = build(small_config(ClassifierKind::Logreg));
    let l = logits_for(&m, &["a b", "c", "a b"], &["A", "B", "A"]);
    assert_eq!(l.row(0), l.row(2));
    let other = logits_for(&m, &["d", "e e", "a b"], &["B", "A", "B"]);
    assert_eq!(l.row(2), other.row(2));

    zero_params(&mut m, |n| n == "embed.table");
    let l = logits_for(&m, &["a"], &["A"]);
    assert!(l.data().iter().all(|&x| x == 0.0));
}

#[test]
fn clstm_is_causal() {
    let m = build(small_config(ClassifierKind::Clstm));
    let a = logits_for(&m, &["a", "b c", "d"], &["A", "B", "A"]);
    let b = logits_for(&m, &["a", "b c", "e e e"], &["A", "B", "A"]);
    assert_eq!(a.row(0), b.row(0));
    assert_eq!(a.row(1), b.row(1));
    assert_ne!(a.row(2), b.row(2));
}

#[test]
fn bclstm_sees_both_directions() {
    let m = build(small_config(ClassifierKind::Bclstm));
    let a = logits_for(&m, &["a", "b c", "d"], &["A", "B", "A"]);
    let b = logits_for(&m, &["a", "b c", "e e e"], &["A", "B", "A"]);
    assert_ne!(a.row(0), b.row(0));
}

#[test]
fn bclstm_reversal_symmetry() {
    let mut m = build(small_config(ClassifierKind::Bclstm));
    let texts = ["a b", "c", "d e", "a"];
    let spk = ["A", "B", "A", "B"];
    let base = logits_for(&m, &texts, &spk);

    // Swap the two directions and the matching halves of the head.
    for suffix in ["w_ih", "w_hh", "b"] {
        let f = m.params.id(&format!("lstm.fwd.{suffix}")).unwrap();
        let b = m.params.id(&format!("lstm.bwd.{suffix}")).unwrap();
        let fv = m.params.value(f).clone();
        let bv = m.params.value(b).clone();
        *m.params.value_mut(f) = bv;
        *m.params.value_mut(b) = fv;
    }
    let hw = m.params.id("head.w").unwrap();
    let w = m.params.value(hw).clone();
    let d = m.config.d_h;
    let swapped = m.params.value_mut(hw);
    for r in 0..2 * d {
        let src = if r < d { r + d } else { r - d };
        swapped.row_mut(r).copy_from_slice(w.row(src));
    }

    let rev_texts: Vec<&str> = texts.iter().rev().copied().collect();
    let rev_spk: Vec<&str> = spk.iter().rev().copied().collect();
    let flipped = logits_for(&m, &rev_texts, &rev_spk);
    for t in 0..texts.len() {
        for (x, y) in base.row(t).iter().zip(flipped.row(texts.len() - 1 - t)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn single_utterance_depends_only_on_that_feature() {
    for kind in [
        ClassifierKind::Logreg,
        ClassifierKind::Clstm,
        ClassifierKind::Bclstm,
        ClassifierKind::DialogueRnn,
    ] {
        let m = build(small_config(kind));
        let a = logits_for(&m, &["a b"], &["A"]);
        let b = logits_for(&m, &["a b"], &["Z"]);
        assert_eq!(a, b, "{kind:?}");
    }
}

#[test]
fn dialoguernn_speaker_renaming_is_invisible() {
    let m = build(small_config(ClassifierKind::DialogueRnn));
    let a = logits_for(&m, &["a", "b", "c", "d"], &["A", "B", "A", "B"]);
    let b = logits_for(&m, &["a", "b", "c", "d"], &["x", "y", "x", "y"]);
    assert_eq!(a, b);
    let c = logits_for(&m, &["a", "b", "c", "d"], &["A", "A", "A", "B"]);
    assert_ne!(a, c);
}

#[test]
fn dialoguernn_first_step_has_zero_context() {
    // An empty history yields a zero context, so the attention matrix is irrelevant at N=1.
    let mut m = build(small_config(ClassifierKind::DialogueRnn));
    let a = logits_for(&m, &["a"], &["A"]);
    for p in m.params.iter_mut() {
        if p.name.ends_with(".attention") {
            p.value.fill(3.0);
        }
    }
    assert_eq!(a, logits_for(&m, &["a"], &["A"]));
}

#[test]
fn inert_listener_matches_simple_listener() {
    let mut cfg = small_config(ClassifierKind::DialogueRnn);
    let plain = build(cfg.clone());
    cfg.listener_update = true;
    let mut listening = build(cfg);
    for (_, p) in plain.params.iter() {
        let id = listening.params.id(&p.name).unwrap();
        *listening.params.value_mut(id) = p.value.clone();
    }
    let texts = ["a", "b", "c", "d"];
    let spk = ["A", "B", "A", "B"];
    let active = logits_for(&listening, &texts, &spk);
    assert_ne!(active, logits_for(&plain, &texts, &spk));

    // A hugely negative update-gate bias freezes the listener GRU (h = h_prev).
    let h = listening.config.d_p;
    for p in listening.params.iter_mut() {
        if p.name.contains(".listener.b_ih") {
            p.value.data_mut()[h..2 * h].fill(-1e3);
        }
    }
    assert_eq!(
        logits_for(&listening, &texts, &spk),
        logits_for(&plain, &texts, &spk)
    );
}

#[test]
fn residual_identity_when_recurrent_weights_vanish() {
    for kind in [
        ClassifierKind::Clstm,
        ClassifierKind::Bclstm,
        ClassifierKind::DialogueRnn,
    ] {
        let mut cfg = small_config(kind);
        cfg.residual = true;
        let mut m = build(cfg);
        zero_params(&mut m, |n| {
            n.starts_with("cnn.") || n.starts_with("embed.") || n.starts_with("residual.")
        });
        let mut g = Graph::new(&m.params);
        let texts = ["a b", "c d"];
        let feats: Vec<Var> = texts
            .iter()
            .map(|t| {
                m.extract(&mut g, &UtteranceInput::Text(t.to_string()))
                    .unwrap()
            })
            .collect();
        let out = m
            .forward(&mut g, &feats, &[0, 1], None::<&mut ChaCha8Rng>)
            .unwrap();
        let x = g.concat_rows(&feats).unwrap();
        let expected = match &m.residual_proj {
            Some(p) => p.forward(&mut g, x).unwrap(),
            None => x,
        };
        assert_eq!(g.value(out.head_input), g.value(expected), "{kind:?}");
    }
}

#[test]
fn order_prediction_requires_recurrence() {
    let mut cfg = small_config(ClassifierKind::Logreg);
    cfg.order_prediction = true;
    assert!(matches!(cfg.validate(), Err(ModelError::Config(_))));
}

#[test]
fn order_loss_masks_positions_beyond_limit() {
    let mut cfg = small_config(ClassifierKind::Bclstm);
    cfg.order_prediction = true;
    cfg.max_dialogue_len = 2;
    let m = build(cfg);
    let mut g = Graph::new(&m.params);
    let feats: Vec<Var> = ["a", "b", "c"]
        .iter()
        .map(|t| {
            m.extract(&mut g, &UtteranceInput::Text(t.to_string()))
                .unwrap()
        })
        .collect();
    let out = m
        .forward(&mut g, &feats, &[0, 1, 0], None::<&mut ChaCha8Rng>)
        .unwrap();
    let with_far = m.order_loss(&mut g, &out, &[2, 0, 1]).unwrap();
    let near = g
        .softmax_cross_entropy(out.order_logits.unwrap(), &[None, Some(0), Some(1)])
        .unwrap();
    assert_eq!(g.value(with_far).item(), g.value(near).item());
}

#[test]
fn precomputed_features_feed_the_classifier() {
    let cfg = ModelConfig {
        extractor: ExtractorKind::Precomputed,
        feature_dim: 3,
        ..small_config(ClassifierKind::Bclstm)
    };
    let m = Model::<f64>::new(cfg, 2, None, None, 0).unwrap();
    let mut g = Graph::new(&m.params);
    let f = m
        .extract(&mut g, &UtteranceInput::Feature(vec![0.1, 0.2, 0.3]))
        .unwrap();
    let out = m
        .forward(&mut g, &[f], &[0], None::<&mut ChaCha8Rng>)
        .unwrap();
    assert_eq!(g.shape(out.logits), (1, 2));
    assert!(m
        .extract(&mut g, &UtteranceInput::Text("a".into()))
        .is_err());
    assert!(m
        .extract(&mut g, &UtteranceInput::Feature(vec![1.0]))
        .is_err());
}

#[test]
fn crf_heads_decode_and_score() {
    for kind in [CrfKind::Global, CrfKind::GlobalExt, CrfKind::Speaker] {
        let mut cfg = small_config(ClassifierKind::Bclstm);
        cfg.crf = Some(kind);
        let m = build(cfg);
        let mut g = Graph::new(&m.params);
        let feats: Vec<Var> = ["a", "b", "c"]
            .iter()
            .map(|t| {
                m.extract(&mut g, &UtteranceInput::Text(t.to_string()))
                    .unwrap()
            })
            .collect();
        let spk: Vec<String> = ["A", "B", "A"].iter().map(|s| s.to_string()).collect();
        let out = m
            .forward(
                &mut g,
                &feats,
                &speaker_indices(&spk),
                None::<&mut ChaCha8Rng>,
            )
            .unwrap();
        let scored = [true, false, true];
        let loss = m
            .task_loss(&mut g, &out, &[Some(0), None, Some(2)], &spk, &scored)
            .unwrap();
        assert!(g.value(loss).item() > 0.0);
        let pred = m.predict(&mut g, &out, &spk, &scored).unwrap();
        assert_eq!(pred.len(), 3);
    }
}
