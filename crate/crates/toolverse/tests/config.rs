//! Layered configuration: precedence across file, environment and flags,
//! and credentials that stay out of files, logs and recordings.

use std::path::{Path, PathBuf};

use proptest::prelude::*;
use toolverse::cassette::Recorder;
use toolverse::config::{Layer, RunConfig, Secrets};
use toolverse::http::{wire_url, ApiCredentials};
use toolverse_core::gateway::{GatewayMode, HttpResponse, HttpTransport, TransportError};
use toolverse_core::request::{Api, CompiledRequest, Method};

const MODES: [(&str, GatewayMode); 3] = [("live", GatewayMode::Live), ("fixture", GatewayMode::Fixture), ("simulated", GatewayMode::Simulated)];

#[derive(Debug, Clone)]
struct Source {
    seed: Option<u64>,
    max_steps: Option<usize>,
    mode: Option<usize>,
    specs: Option<String>,
    model: Option<String>,
}

fn source() -> impl Strategy<Value = Source> {
    (
        // TOML integers are signed 64-bit
        proptest::option::of(0..=i64::MAX as u64),
        proptest::option::of(1usize..100),
        proptest::option::of(0usize..3),
        proptest::option::of("[a-z]{1,8}"),
        proptest::option::of("[a-z][a-z0-9-]{0,10}"),
    )
        .prop_map(|(seed, max_steps, mode, specs, model)| Source { seed, max_steps, mode, specs, model })
}

fn as_toml(s: &Source) -> String {
    let mut top = String::new();
    if let Some(v) = s.seed {
        top += &format!("seed = {v}\n");
    }
    if let Some(m) = s.mode {
        top += &format!("mode = \"{}\"\n", MODES[m].0);
    }
    if let Some(d) = &s.specs {
        top += &format!("specs_dir = \"{d}\"\n");
    }
    if let Some(m) = &s.model {
        top += &format!("[chat]\nmodel = \"{m}\"\n");
    }
    if let Some(n) = s.max_steps {
        top += &format!("[agent]\nmax_steps = {n}\n");
    }
    top
}

fn as_env(s: &Source) -> Vec<(String, String)> {
    let mut vars = vec![("UNRELATED".to_string(), "x".to_string())];
    if let Some(v) = s.seed {
        vars.push(("TOOLVERSE_SEED".into(), v.to_string()));
    }
    if let Some(m) = s.mode {
        vars.push(("TOOLVERSE_MODE".into(), MODES[m].0.to_uppercase()));
    }
    if let Some(m) = &s.model {
        vars.push(("TOOLVERSE_CHAT_MODEL".into(), m.clone()));
    }
    vars
}

fn as_flags(s: &Source) -> Layer {
    let mut l = Layer {
        seed: s.seed,
        mode: s.mode.map(|m| MODES[m].1),
        specs_dir: s.specs.as_ref().map(PathBuf::from),
        ..Layer::default()
    };
    l.agent.max_steps = s.max_steps;
    l
}

proptest! {
    #[test]
    fn flags_beat_env_beat_file(file in source(), env in source(), flags in source()) {
        let f = Layer::from_toml(&as_toml(&file), Path::new("toolverse.toml")).unwrap();
        let e = Layer::from_env(as_env(&env)).unwrap();
        let c = RunConfig::resolve(f, e, as_flags(&flags), Secrets::default());

        let seed = flags.seed.or(env.seed).or(file.seed).unwrap_or(0);
        prop_assert_eq!(c.seed, seed);
        prop_assert_eq!(c.agent.seed, seed);
        let mode = flags.mode.or(env.mode).or(file.mode).map_or(GatewayMode::Live, |m| MODES[m].1);
        prop_assert_eq!(c.mode, mode);
        // env carries no max_steps or specs_dir, flags carry no model
        prop_assert_eq!(c.agent.max_steps, flags.max_steps.or(file.max_steps).unwrap_or(30));
        prop_assert_eq!(c.specs_dir, PathBuf::from(flags.specs.or(file.specs).unwrap_or_else(|| "specs".into())));
        prop_assert_eq!(c.chat.model, env.model.or(file.model).unwrap_or_else(|| "default".into()));
    }

    #[test]
    fn credentials_never_leave_the_environment(secret in "[A-Za-z0-9]{16,32}", key in prop::sample::select(vec!["key", "api_key", "fda_key", "token", "client_secret", "password"])) {
        let file = format!("seed = 1\n[chat]\n{key} = \"{secret}\"\n");
        let err = Layer::from_toml(&file, Path::new("toolverse.toml")).unwrap_err();
        prop_assert!(!err.to_string().contains(&secret));

        let secrets = Secrets::from_env([("TOOLVERSE_CHAT_KEY", secret.as_str()), ("TOOLVERSE_EMBED_KEY", secret.as_str()), ("TOOLVERSE_FDA_KEY", secret.as_str())]);
        let env = Layer::from_env([("TOOLVERSE_CHAT_KEY", secret.as_str()), ("TOOLVERSE_SEED", "3")]).unwrap();
        let c = RunConfig::resolve(Layer::default(), env, Layer::default(), secrets);
        prop_assert_eq!(c.secrets.fda_key.as_deref(), Some(secret.as_str()));
        let shown = format!("{:?}", c);
        prop_assert!(!shown.contains(&secret));
        prop_assert!(!serde_json::to_string(&c).unwrap().contains(&secret));
    }

    #[test]
    fn fda_key_only_on_the_wire(secret in "[A-Za-z0-9]{16,32}") {
        let request = CompiledRequest {
            api: Api::OpenFda,
            method: Method::Get,
            url: "https://api.fda.gov/drug/label.json?search=openfda.brand_name:%22X%22&limit=5".into(),
            body: None,
            accept: "application/json".into(),
            projection: vec![],
        };
        let creds = ApiCredentials { fda_api_key: Some(secret.clone()) };
        prop_assert!(wire_url(&request, &creds).contains(&secret));
        prop_assert!(!request.to_json().contains(&secret));

        let dir = tempfile::tempdir().unwrap();
        let recorder = Recorder::new(Echo, dir.path());
        recorder.send(&request).unwrap();
        for entry in std::fs::read_dir(dir.path()).unwrap() {
            let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
            prop_assert!(!text.contains(&secret));
        }
    }
}

struct Echo;

impl HttpTransport for Echo {
    fn send(&self, request: &CompiledRequest) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse { status: 200, body: format!("{{\"url\": {:?}}}", request.url) })
    }
}

#[test]
fn missing_explicit_file_is_an_error() {
    assert!(RunConfig::load(Some(Path::new("/nonexistent/toolverse.toml")), Layer::default()).is_err());
}
