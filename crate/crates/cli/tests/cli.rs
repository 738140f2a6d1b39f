use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::mpsc;

use budamaf::gateway::{GatewayConfig, PrincipalRegistry};
use budamaf::protocol::Role;
use budamaf::sim::ProviderDescriptor;
use budamaf::Gateway;

const TOKENS: [&str; 3] = ["root-secret-1", "alice-secret-2", "sec-secret-3"];

struct Env {
    url: String,
    dir: tempfile::TempDir,
}

/// Starts a gateway on an ephemeral port in a background runtime.
fn gateway() -> Env {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let cfg = GatewayConfig {
                providers: vec![ProviderDescriptor::new("EU-1", "EU", 16)],
                probe_period_ms: 0,
                sync_period_ms: 0,
                ..GatewayConfig::default()
            };
            let reg = PrincipalRegistry::new()
                .with("root", TOKENS[0], &[Role::Admin])
                .with("alice", TOKENS[1], &[Role::Application])
                .with("sec", TOKENS[2], &[Role::SecurityAdmin]);
            let gw = Gateway::start(cfg, reg).await.unwrap();
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            budamaf::http::serve(gw, listener).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, token) in [("root", TOKENS[0]), ("alice", TOKENS[1]), ("sec", TOKENS[2])] {
        std::fs::write(dir.path().join(format!("{name}.toml")), format!("principal_id = \"{name}\"\ntoken = \"{token}\"\n"))
            .unwrap();
    }
    Env { url: format!("http://{addr}/"), dir }
}

impl Env {
    fn creds(&self, who: &str) -> PathBuf {
        self.dir.path().join(format!("{who}.toml"))
    }

    fn cli(&self, who: &str, args: &str) -> Output {
        cli_with(&self.url, &self.creds(who), args)
    }
}

fn cli_with(url: &str, creds: &Path, args: &str) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_budamaf"))
        .args(["--url", url, "--credentials"])
        .arg(creds)
        .args(args.split_whitespace())
        .env_remove("BUDAMAF_CLI_CONFIG")
        .env("HOME", "/nonexistent")
        .output()
        .unwrap();
    let all = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    for t in TOKENS {
        assert!(!all.contains(t), "credentials echoed by `{args}`");
    }
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn write_then_read_round_trips() {
    let env = gateway();
    let o = env.cli("alice", "store create --kind document --provider EU-1 --id s1");
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let o = env.cli("alice", "data write --store s1 --key k --value v");
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let o = env.cli("alice", "data read --store s1 --key k");
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "v\n");

    let o = env.cli("alice", "--output json data read --store s1 --key missing");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NotFound"), "{o:?}");
}

#[test]
fn policy_changes_need_the_security_role() {
    let env = gateway();
    let o = env.cli("alice", "policy set --grant ds:read:bob");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("AccessDenied"), "{o:?}");

    env.cli("alice", "store create --kind key_value --provider EU-1 --id s2");
    env.cli("alice", "data write --store s2 --key k --value v");
    let o = env.cli("sec", "policy set --grant s2/default:read:root");
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let o = env.cli("root", "--output json policy check --dataset s2/default");
    assert!(stdout(&o).contains("\"allowed\":true"), "{o:?}");
    let o = env.cli("alice", "policy revoke --dataset s2/default");
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let o = env.cli("root", "--output json policy check --dataset s2/default");
    assert!(stdout(&o).contains("\"allowed\":false"), "{o:?}");

    let o = env.cli("alice", "policy audit");
    assert_eq!(o.status.code(), Some(1));
    let o = env.cli("sec", "--output json policy audit");
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"revoke\""), "{o:?}");
}

#[test]
fn jobs_can_be_fetched_and_deleted() {
    let env = gateway();
    let o = env.cli("alice", "job submit --kind status_query --details {\"scope\":\"stores\"} --no-wait");
    assert_eq!(o.status.code(), Some(0));
    let id = stdout(&o).trim().to_owned();
    assert!(id.starts_with("job-"), "{id}");
    let o = env.cli("alice", &format!("--output json job get {id}"));
    assert!(stdout(&o).contains("\"status\":\"finished\""), "{o:?}");
    assert_eq!(env.cli("root", &format!("job get {id}")).status.code(), Some(0));
    assert_eq!(env.cli("alice", &format!("job delete {id}")).status.code(), Some(0));
    let o = env.cli("alice", &format!("job get {id}"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NotFound"));
}

#[test]
fn exit_codes_distinguish_usage_and_transport() {
    let env = gateway();
    assert_eq!(env.cli("alice", "data read").status.code(), Some(2));
    assert_eq!(env.cli("alice", "store frobnicate").status.code(), Some(2));
    let bad = env.dir.path().join("wrong.toml");
    std::fs::write(&bad, "principal_id = \"alice\"\ntoken = \"nope\"\n").unwrap();
    let o = cli_with(&env.url, &bad, "store list");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("AuthenticationFailed"));
    let o = cli_with("http://127.0.0.1:9/", &env.creds("alice"), "store list");
    assert_eq!(o.status.code(), Some(3), "{o:?}");
}

#[test]
fn simulation_traces_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let creds = dir.path().join("none.toml");
    let a = cli_with("http://127.0.0.1:9/", &creds, "--output json sim run overload_no_remedy --seed 7");
    let b = cli_with("http://127.0.0.1:9/", &creds, "--output json sim run overload_no_remedy --seed 7");
    assert_eq!(a.status.code(), Some(0), "{a:?}");
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    let plain = cli_with("http://127.0.0.1:9/", &creds, "sim run overload_no_remedy --seed 7");
    assert_eq!(plain.status.code(), Some(0));
}
