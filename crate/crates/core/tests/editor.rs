use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use timbre_core::dataset::{parse_embeddings_str, DescriptorVocab, Gender};
use timbre_core::editor::{
    edit_chain, edit_once, edit_prompt, extract_lexical, extract_llm, fill_template, prompt_templates, write_edited,
    Backend, EditedEmbedding, LlmConfig, Provenance, DEFAULT_ALPHA,
};
use timbre_core::memnet::{encode_descriptor, readout_descriptor, recall_speaker};
use timbre_core::rng;
use timbre_core::trainer::{AblationMode, Dims, ModelParams};
use timbre_core::Error;

fn params(seed: u64) -> ModelParams {
    let dims = Dims {
        main: 6,
        residual: 3,
        dim: 8,
        hidden: 8,
        vocab: 18,
    };
    let mut p = ModelParams::init(dims, 3.0, &mut rng::seeded(seed)).unwrap();
    // Keep every descriptor embedding away from the ReLU dead zone.
    p.encoder.bias.data.fill(0.4);
    p
}

fn source(k: f64) -> Vec<f64> {
    (0..8).map(|i| ((i as f64 + 1.0) * k).sin()).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn full_edit_formula() {
    let p = params(1);
    let s = source(0.7);
    let t_hat = readout_descriptor(&p.memory, &encode_descriptor(&p.encoder, 4).unwrap())
        .unwrap()
        .recalled;
    let r = recall_speaker(&p.memory, &s).unwrap();
    for a in [0.0, 0.3, 1.0] {
        let want: Vec<f64> = (0..8)
            .map(|i| a * t_hat[i] + (1.0 - a) * r.main.recalled[i] + r.residual.recalled[i])
            .collect();
        assert!(close(
            &edit_once(&p, &s, 4, a, AblationMode::Full).unwrap(),
            &want,
            1e-12
        ));
    }
}

#[test]
fn no_voice_res_collapses_sources_at_full_degree() {
    let p = params(2);
    let (a, b) = (source(0.3), source(1.9));
    for x in 0..18 {
        let ea = edit_once(&p, &a, x, 1.0, AblationMode::NoVoiceRes).unwrap();
        let eb = edit_once(&p, &b, x, 1.0, AblationMode::NoVoiceRes).unwrap();
        assert_eq!(ea, eb);
    }
    // The full model keeps them apart through the residual readout.
    assert_ne!(
        edit_once(&p, &a, 0, 1.0, AblationMode::Full).unwrap(),
        edit_once(&p, &b, 0, 1.0, AblationMode::Full).unwrap()
    );
}

#[test]
fn no_vadp_ignores_degree() {
    let p = params(3);
    let s = source(1.1);
    let lo = edit_once(&p, &s, 2, 0.1, AblationMode::NoVadp).unwrap();
    assert_eq!(lo, edit_once(&p, &s, 2, 0.9, AblationMode::NoVadp).unwrap());
    // Out-of-range degrees only warn in this mode.
    assert_eq!(lo, edit_once(&p, &s, 2, 7.0, AblationMode::NoVadp).unwrap());
    assert!(edit_once(&p, &s, 2, 7.0, AblationMode::Full).is_err());
}

#[test]
fn no_resmem_interpolates_raw_encoder_output() {
    let p = params(4);
    let s = source(0.2);
    let t = encode_descriptor(&p.encoder, 7).unwrap();
    for a in [0.0, 0.25, 0.7, 1.0] {
        let want: Vec<f64> = t.iter().zip(&s).map(|(ti, si)| a * ti + (1.0 - a) * si).collect();
        let got = edit_once(&p, &s, 7, a, AblationMode::NoResmem).unwrap();
        assert!(close(&got, &want, 1e-12));
    }
}

#[test]
fn zero_degree_full_edit_is_reconstruction() {
    let p = params(5);
    let s = source(0.9);
    let r = recall_speaker(&p.memory, &s).unwrap();
    assert!(close(
        &edit_once(&p, &s, 1, 0.0, AblationMode::Full).unwrap(),
        &r.recalled,
        1e-12
    ));
}

#[test]
fn prompt_applies_descriptors_in_order() {
    let p = params(6);
    let v = DescriptorVocab::builtin();
    let s = source(0.5);
    let out = edit_prompt(
        &p,
        &v,
        &s,
        "I want the sound to be more magnetic and bright",
        DEFAULT_ALPHA,
        Backend::Lexical,
        None,
        AblationMode::Full,
    )
    .unwrap();
    let (m, b) = (v.id("Magnetic").unwrap(), v.id("Bright").unwrap());
    let nested = edit_once(
        &p,
        &edit_once(&p, &s, m, 0.7, AblationMode::Full).unwrap(),
        b,
        0.7,
        AblationMode::Full,
    )
    .unwrap();
    assert_eq!(out.edited, nested);
    assert_eq!(out.extraction.names(), ["Magnetic", "Bright"]);
    assert_eq!(
        edit_chain(&p, &s, &[m, b], &[0.7, 0.7], AblationMode::Full).unwrap(),
        nested
    );
    assert!(edit_chain(&p, &s, &[m, b], &[0.1, 0.2, 0.3], AblationMode::Full).is_err());
    assert!(edit_chain(&p, &s, &[], &[0.7], AblationMode::Full).is_err());
}

#[test]
fn dialogue_prompts_extract_listed_descriptors() {
    let v = DescriptorVocab::builtin();
    let cases: [(&str, &[&str]); 6] = [
        ("I want the sound to be more magnetic", &["Magnetic"]),
        (
            "I want the sound to be more magnetic and bright",
            &["Magnetic", "Bright"],
        ),
        (
            "I want the sound to become more magnetic, bright and transparent",
            &["Magnetic", "Bright", "Transparent"],
        ),
        (
            "I want the voice to be hoarse and at the same time deeper",
            &["Hoarse", "Low"],
        ),
        ("I want to achieve a lower-pitch sound.", &["Low"]),
        ("I'd like to add a touch of coarseness to this voice.", &["Coarse"]),
    ];
    for (prompt, want) in cases {
        assert_eq!(extract_lexical(prompt, &v).unwrap().names(), want, "{prompt}");
    }
}

#[test]
fn every_template_round_trips_every_descriptor() {
    let v = DescriptorVocab::builtin();
    let templates = prompt_templates();
    assert_eq!(templates.len(), 10);
    for t in &templates {
        for name in v.names() {
            let r = extract_lexical(&fill_template(t, name), &v).unwrap();
            assert_eq!(r.names(), [name.as_str()], "{t} / {name}");
            assert_eq!(r.descriptors[0].provenance, Provenance::Exact);
        }
    }
}

#[test]
fn edited_jsonl_loads_as_embeddings() {
    let p = params(7);
    let s = source(0.4);
    let e = edit_once(&p, &s, 3, DEFAULT_ALPHA, AblationMode::Full).unwrap();
    let row = EditedEmbedding::new(
        "p225",
        None,
        Gender::F,
        vec!["Low".into()],
        DEFAULT_ALPHA,
        AblationMode::Full,
        e.clone(),
    );
    assert_eq!(row.speaker, "p225+Low@0.7");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("edited.jsonl");
    write_edited(&path, &[row]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"alpha\":0.7"));
    let store = parse_embeddings_str(&text, &path).unwrap();
    assert_eq!(store.speaker("p225+Low@0.7").unwrap().utterances[0].vec, e);
}

// ---- chat-completion backend against a local mock server ----

/// Serves `replies` in order, one connection each, and returns the
/// request bodies it received.
fn mock_server(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(String::from_utf8(buf).unwrap());
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
        bodies
    });
    (url, handle)
}

fn chat(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn llm_config(url: String) -> LlmConfig {
    LlmConfig {
        base_url: Some(url),
        model: Some("test-model".into()),
        token: Some("secret".into()),
        timeout: Duration::from_secs(5),
        retries: 1,
    }
}

#[test]
fn llm_reply_is_parsed_and_validated() {
    let v = DescriptorVocab::builtin();
    let reply = "From the provided text prompt, the closest descriptors from the given set would be: 1. Hoarse 2. Low";
    let (url, server) = mock_server(vec![(200, chat(reply))]);
    let r = extract_llm(
        "I want the voice to be hoarse and at the same time deeper",
        &v,
        &llm_config(url),
    )
    .unwrap();
    assert_eq!(r.names(), ["Hoarse", "Low"]);
    assert!(r.descriptors.iter().all(|d| d.provenance == Provenance::Llm));
    let sent: serde_json::Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
    let msgs = sent["messages"].as_array().unwrap();
    assert_eq!(msgs.len(), 3);
    assert!(msgs[0]["content"]
        .as_str()
        .unwrap()
        .starts_with("Given a descriptor set"));
    assert_eq!(
        msgs[2]["content"],
        "I want the voice to be hoarse and at the same time deeper"
    );
    assert_eq!(sent["model"], "test-model");
}

#[test]
fn malformed_llm_reply_falls_back_to_lexical() {
    let v = DescriptorVocab::builtin();
    let (url, server) = mock_server(vec![(200, chat("I cannot help with that."))]);
    let r = extract_llm("more husky please", &v, &llm_config(url)).unwrap();
    assert_eq!(r.names(), ["Husky"]);
    assert_eq!(r.descriptors[0].provenance, Provenance::Exact);
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn llm_server_errors_retry_then_fall_back() {
    let v = DescriptorVocab::builtin();
    let (url, server) = mock_server(vec![(500, "{}".into()), (500, "{}".into())]);
    let r = extract_llm("a bit softer", &v, &llm_config(url)).unwrap();
    assert_eq!(r.names(), ["Soft"]);
    assert_eq!(server.join().unwrap().len(), 2);
}

#[test]
fn llm_reply_outside_vocabulary_is_rejected() {
    let v = DescriptorVocab::builtin();
    let (url, server) = mock_server(vec![(200, chat("1. Sparkly 2. Bright"))]);
    let r = extract_llm("make it bright", &v, &llm_config(url)).unwrap();
    assert_eq!(r.descriptors[0].provenance, Provenance::Exact);
    server.join().unwrap();
}

#[test]
fn llm_backend_needs_configuration() {
    let p = params(8);
    let v = DescriptorVocab::builtin();
    let err = edit_prompt(
        &p,
        &v,
        &source(1.0),
        "brighter",
        0.5,
        Backend::Llm,
        None,
        AblationMode::Full,
    )
    .unwrap_err();
    assert!(matches!(err, Error::LlmConfig(_)));
}
