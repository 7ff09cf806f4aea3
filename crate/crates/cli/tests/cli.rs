use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;
use vsla_core::evidence::SigningKey;
use vsla_core::store::{RegistryView, SlaParties};
use vsla_net::client::StoreClient;
use vsla_net::target::{run_target, TargetConfig};

fn bin(name: &str) -> Command {
    let path = match name {
        "evidence-store" => env!("CARGO_BIN_EXE_evidence-store"),
        "monitor" => env!("CARGO_BIN_EXE_monitor"),
        "vslas" => env!("CARGO_BIN_EXE_vslas"),
        "see" => env!("CARGO_BIN_EXE_see"),
        "verify" => env!("CARGO_BIN_EXE_verify"),
        "bench" => env!("CARGO_BIN_EXE_bench"),
        other => panic!("no binary {other}"),
    };
    let mut cmd = Command::new(path);
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{cmd:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn free_addr() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

fn interrupt(child: &mut Child) {
    Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    let started = Instant::now();
    while child.try_wait().unwrap().is_none() {
        if started.elapsed() > Duration::from_secs(20) {
            child.kill().unwrap();
            panic!("process ignored SIGINT");
        }
        thread::sleep(Duration::from_millis(20));
    }
}

fn wait_until(mut done: impl FnMut() -> bool) {
    let started = Instant::now();
    while !done() {
        assert!(started.elapsed() < Duration::from_secs(30), "timed out");
        thread::sleep(Duration::from_millis(50));
    }
}

fn keygen(dir: &Path, name: &str) -> (PathBuf, String) {
    let path = dir.join(format!("{name}.key"));
    let out = run(bin("monitor").args(["keygen", "--out"]).arg(&path));
    let pubkey = String::from_utf8(out.stdout).unwrap().trim().to_string();
    (path, pubkey)
}

const SPEC: &str = "\
apiVersion: openslo/v1
kind: SLO
metadata:
  name: desk
spec:
  service: target
  objectives:
    - id: latency
      sli: latency_ms
      op: lt
      value: 300
      target: 0.95
    - id: availability
      sli: success_status
      op: gte
      value: 1
      target: 1
  verification:
    monitors:
      - type: tee-active
        location: local
        tee-provider: simulated
    evidence:
      storage-type: cas-local
      blockchain:
        network: local
        contract: registry
    aggregation-engine: risc0
";

#[test]
fn tools_run_the_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (provider_key, provider_pub) = keygen(d, "provider");
    let (consumer_key, consumer_pub) = keygen(d, "consumer");
    let (engine_key, _) = keygen(d, "engine");
    let (operator_key, operator_pub) = keygen(d, "operator");
    let engine_pub = SigningKey::from_hex(&std::fs::read_to_string(&engine_key).unwrap())
        .unwrap()
        .public_key()
        .to_string();

    let store_addr = free_addr();
    let store_url = format!("http://{store_addr}");
    let mut store = bin("evidence-store")
        .args(["serve", "--listen", &store_addr, "--data"])
        .arg(d.join("store"))
        .args(["--provider-pubkey", &provider_pub, "--consumer-pubkey", &consumer_pub])
        .arg("--operator-key")
        .arg(&operator_key)
        .spawn()
        .unwrap();
    let client = StoreClient::new(&store_url).unwrap();
    wait_until(|| client.snapshot().is_ok());
    assert_eq!(
        client.snapshot().unwrap().parties,
        SlaParties {
            provider: provider_pub.parse().unwrap(),
            consumer: consumer_pub.parse().unwrap(),
        }
    );

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(1)
        .enable_all()
        .build()
        .unwrap();
    let target = run_target(runtime.handle(), TargetConfig::default(), "127.0.0.1:0".parse().unwrap()).unwrap();

    let config = d.join("monitor.json");
    run(bin("monitor")
        .args(["init-config", "--target", &format!("{}/health", target.url()), "--kind", "active"])
        .args(["--batch-size", "8", "--interval-ms", "20"])
        .args(["--provider-pubkey", &provider_pub, "--consumer-pubkey", &consumer_pub, "--out"])
        .arg(&config));
    for (key, party) in [(&provider_key, "provider"), (&consumer_key, "consumer")] {
        run(bin("monitor")
            .args(["sign-config", "--party", party, "--config"])
            .arg(&config)
            .arg("--key")
            .arg(key));
    }
    let mut monitor = bin("monitor")
        .args(["run", "--kind", "active", "--store", &store_url, "--registry", &store_url])
        .args(["--listen", &free_addr(), "--config"])
        .arg(&config)
        .arg("--provider-key")
        .arg(&provider_key)
        .arg("--consumer-key")
        .arg(&consumer_key)
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    wait_until(|| client.monitors().map(|m| m.len() == 1).unwrap_or(false));
    let monitor_id = client.monitors().unwrap()[0].monitor_id;
    wait_until(|| client.audit_trail(&monitor_id).unwrap().len() >= 2);
    interrupt(&mut monitor);
    assert!(monitor.wait().unwrap().success());

    let spec = d.join("spec.yaml");
    std::fs::write(&spec, SPEC).unwrap();
    let compiled = d.join("predicates.json");
    run(bin("vslas").args(["compile", "--spec"]).arg(&spec).arg("--out").arg(&compiled));
    let predicates: Value = serde_json::from_str(&std::fs::read_to_string(&compiled).unwrap()).unwrap();
    assert_eq!(predicates.as_array().unwrap().len(), 2);

    let out = run(bin("see")
        .args(["evaluate", "--anchor", &format!("{monitor_id}:0"), "--clause", "latency"])
        .args(["--strategy", "batch", "--backend", "reexec", "--store", &store_url, "--spec"])
        .arg(&spec)
        .arg("--engine-key")
        .arg(&engine_key));
    let claim: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(claim["ok"], true);
    let claim_cid = claim["claim_cid"].as_str().unwrap().to_string();

    let verify = |extra: &[&str], engine: &str| {
        bin("verify")
            .args(["claim", "--claim-cid", &claim_cid, "--store", &store_url, "--engine-pubkey", engine])
            .arg("--spec")
            .arg(&spec)
            .args(extra)
            .output()
            .unwrap()
    };
    let accepted = verify(&[], &engine_pub);
    assert!(accepted.status.success(), "{}", String::from_utf8_lossy(&accepted.stdout));
    let report: Value = serde_json::from_slice(&accepted.stdout).unwrap();
    assert_eq!(report["verdict"]["verdict"], "accepted");

    let snapshot = d.join("snapshot.json");
    std::fs::write(&snapshot, serde_json::to_vec(&client.snapshot().unwrap()).unwrap()).unwrap();
    let snapshot_arg = snapshot.to_str().unwrap();
    let offline = verify(&["--registry-snapshot", snapshot_arg, "--snapshot-signer", &operator_pub], &engine_pub);
    assert!(offline.status.success(), "{}", String::from_utf8_lossy(&offline.stderr));
    let wrong_signer = verify(&["--registry-snapshot", snapshot_arg, "--snapshot-signer", &provider_pub], &engine_pub);
    assert_eq!(wrong_signer.status.code(), Some(1));
    assert!(wrong_signer.stdout.is_empty());

    let rejected = verify(&[], &provider_pub);
    assert_eq!(rejected.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&rejected.stdout).unwrap();
    assert_eq!(report["verdict"]["verdict"], "rejected");
    assert_eq!(report["verdict"]["property"], "integrity");

    interrupt(&mut store);
}

#[test]
fn bench_runs_a_small_plan_and_renders_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.yaml");
    std::fs::write(
        &plan,
        "batch_sizes: [16]\nrps_levels: [20, 40]\nduration_s: 1.0\ntarget_fail_rate: 0.05\n",
    )
    .unwrap();
    let csv = dir.path().join("results.csv");
    run(bin("bench").args(["run", "--plan"]).arg(&plan).arg("--out").arg(&csv));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");

    let report = dir.path().join("report");
    let out = run(bin("bench").args(["plots", "--in"]).arg(&csv).arg("--out").arg(&report));
    assert!(!out.stdout.is_empty());
    assert!(report.join("heatmap.txt").exists());
    assert!(report.join("verify_time.svg").exists());
}
