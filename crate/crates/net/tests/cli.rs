//! Drives the command-line tools end to end over loopback sockets.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const GROUP: &str = "residue61";

struct Server {
    child: Child,
    url: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn bin(name: &str) -> PathBuf {
    match name {
        "certgen" => env!("CARGO_BIN_EXE_certgen"),
        "keyserver" => env!("CARGO_BIN_EXE_keyserver"),
        "keyadmin" => env!("CARGO_BIN_EXE_keyadmin"),
        "dbbuild" => env!("CARGO_BIN_EXE_dbbuild"),
        "hashdb" => env!("CARGO_BIN_EXE_hashdb"),
        "synthclient" => env!("CARGO_BIN_EXE_synthclient"),
        other => panic!("no binary {other}"),
    }
    .into()
}

fn run(dir: &Path, name: &str, args: &[&str]) -> (i32, String) {
    let out = Command::new(bin(name)).current_dir(dir).args(args).output().unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), format!("{}{stderr}", String::from_utf8_lossy(&out.stdout)))
}

fn ok(dir: &Path, name: &str, args: &[&str]) -> String {
    let (code, out) = run(dir, name, args);
    assert_eq!(code, 0, "{name} {args:?} failed: {out}");
    out
}

fn serve(dir: &Path, name: &str, args: &[&str]) -> Server {
    let mut child = Command::new(bin(name))
        .current_dir(dir)
        .args(args)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited before listening").unwrap();
        if let Some(addr) = line.strip_prefix("listening on ") {
            break addr.trim().to_string();
        }
    };
    std::thread::spawn(move || lines.for_each(drop));
    Server {
        child,
        url: format!("http://{addr}"),
    }
}

fn dna(rng: &mut ChaCha20Rng, len: usize) -> String {
    (0..len).map(|_| b"ACGT"[rng.gen_range(0..4)] as char).collect()
}

fn identity(dir: &Path, subject: &str, role: &str) {
    let key = format!("{subject}.key");
    ok(dir, "certgen", &["keygen", "--out", &key]);
    ok(
        dir,
        "certgen",
        &[
            "issue", "--issuer-chain", "root.json", "--issuer-key", "root.key", "--subject", subject, "--role", role,
            "--subject-key", &key, "--out", &format!("{subject}.json"),
        ],
    );
}

#[test]
fn screen_through_the_command_line_tools() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let hazard = dna(&mut rng, 600);

    ok(dir, "certgen", &["init-root", "--key-out", "root.key", "--chain-out", "root.json"]);
    identity(dir, "ops", "infrastructure");
    identity(dir, "db", "infrastructure");
    identity(dir, "acme", "provider");
    ok(dir, "certgen", &["verify", "--chain", "acme.json", "--root", "root.json"]);

    ok(dir, "keyserver", &["provision", "--n", "3", "--t", "2", "--out", "nodes"]);
    let mut servers: Vec<Option<Server>> = (1..=3)
        .map(|i| {
            let node = format!("nodes/ks{i}.json");
            Some(serve(
                dir,
                "keyserver",
                &["serve", "--node", &node, "--root", "root.json", "--listen", "127.0.0.1:0", "--group", GROUP],
            ))
        })
        .collect();
    let mut ks_args: Vec<String> = Vec::new();
    for (i, s) in servers.iter().enumerate() {
        ks_args.extend(["--keyserver".into(), format!("{}={}", i + 1, s.as_ref().unwrap().url)]);
    }
    ks_args.extend(["--n", "3", "--t", "2", "--chain", "ops.json", "--key", "ops.key", "--group", GROUP].map(String::from));
    let ks: Vec<&str> = ks_args.iter().map(String::as_str).collect();

    ok(dir, "keyadmin", &[ks.as_slice(), &["keygen"]].concat());
    let status = ok(dir, "keyadmin", &[ks.as_slice(), &["status"]].concat());
    assert!(status.contains("k1"), "{status}");

    std::fs::create_dir(dir.join("hazards")).unwrap();
    let source = serde_json::json!({ "accession": "HZ1", "kind": "virus", "region_tags": ["US"], "residues": hazard });
    std::fs::write(dir.join("hazards/hz.json"), source.to_string()).unwrap();
    ok(dir, "dbbuild", &[&["--hazards", "hazards", "--out", "table.bin"][..], ks.as_slice()].concat());

    let db = serve(
        dir,
        "hashdb",
        &[
            "serve", "--table", "table.bin", "--chain", "db.json", "--key", "db.key", "--root", "root.json", "--listen",
            "127.0.0.1:0", "--group", GROUP,
        ],
    );
    let config = serde_json::json!({
        "keyservers": servers.iter().enumerate().map(|(i, s)| serde_json::json!({"index": i + 1, "url": s.as_ref().unwrap().url})).collect::<Vec<_>>(),
        "database": db.url,
        "n": 3,
        "t": 2,
        "region": "US",
        "certificate": "acme.json",
        "key": "acme.key",
    });
    std::fs::write(dir.join("client.json"), config.to_string()).unwrap();
    std::fs::write(dir.join("frag.fa"), format!(">frag\n{}\n", &hazard[100..400])).unwrap();
    std::fs::write(dir.join("clean.fa"), format!(">clean\n{}\n", dna(&mut rng, 500))).unwrap();
    std::fs::write(dir.join("bad.fa"), ">bad\nACGT!\n").unwrap();

    let screen = |fasta: &str, extra: &[&str]| {
        run(dir, "synthclient", &[&["screen", "--config", "client.json", "--fasta", fasta, "--group", GROUP][..], extra].concat())
    };
    let (code, out) = screen("frag.fa", &[]);
    assert_eq!(code, 3, "{out}");
    let (code, out) = screen("clean.fa", &["--format", "json"]);
    assert_eq!(code, 0, "{out}");
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["decision"], "accepted");
    assert_eq!(screen("bad.fa", &[]).0, 4);

    // One keyserver down still leaves a quorum; two do not.
    servers[0].take();
    assert_eq!(screen("frag.fa", &[]).0, 3);
    servers[1].take();
    let (code, out) = screen("frag.fa", &[]);
    assert_eq!(code, 5, "{out}");
}
