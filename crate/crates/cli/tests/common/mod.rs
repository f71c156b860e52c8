#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use avd_core::audio_io::{encode_wav, AudioBuffer, SampleFormat, TARGET_SAMPLE_RATE_HZ};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BIN: &str = env!("CARGO_BIN_EXE_avd");

pub fn avd(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("ARTIFACT_PATH")
        .env_remove("RULE")
        .env_remove("ADDR")
        .env_remove("AVD_PROVIDER_ENDPOINT")
        .output()
        .expect("avd runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Broadband noise at high level.
pub fn loud_noise(seconds: f64, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * TARGET_SAMPLE_RATE_HZ as f64).round() as usize;
    AudioBuffer::new((0..n).map(|_| rng.gen_range(-0.9..0.9)).collect(), TARGET_SAMPLE_RATE_HZ).unwrap()
}

/// Quiet sine with a little noise.
pub fn quiet_tone(seconds: f64, hz: f64, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * TARGET_SAMPLE_RATE_HZ as f64).round() as usize;
    let w = 2.0 * std::f64::consts::PI * hz / TARGET_SAMPLE_RATE_HZ as f64;
    AudioBuffer::new(
        (0..n).map(|i| 0.05 * (w * i as f64).sin() + rng.gen_range(-0.002..0.002)).collect(),
        TARGET_SAMPLE_RATE_HZ,
    )
    .unwrap()
}

/// Alternates 2.5 s of quiet tone and loud noise.
pub fn mixed(seconds: f64, seed: u64) -> AudioBuffer {
    let a = quiet_tone(seconds, 330.0, seed);
    let b = loud_noise(seconds, seed + 1);
    let seg = (2.5 * TARGET_SAMPLE_RATE_HZ as f64) as usize;
    let s = a
        .samples()
        .iter()
        .zip(b.samples())
        .enumerate()
        .map(|(i, (x, y))| if (i / seg) % 2 == 1 { *y } else { *x })
        .collect();
    AudioBuffer::new(s, TARGET_SAMPLE_RATE_HZ).unwrap()
}

pub fn write_wav(path: &Path, buf: &AudioBuffer) {
    std::fs::write(path, encode_wav(buf, SampleFormat::Pcm16)).unwrap();
}

/// Writes `n_per_class` loud-noise (violence) and quiet-tone files of
/// `seconds` each plus a manifest. Files `2i` and `2i+1` of a class share a
/// group when `grouped`.
pub fn corpus(dir: &Path, n_per_class: usize, seconds: f64, grouped: bool) -> PathBuf {
    let mut manifest = String::from("path,label,group\n");
    for i in 0..n_per_class {
        let v = format!("v{i}.wav");
        let n = format!("n{i}.wav");
        write_wav(&dir.join(&v), &loud_noise(seconds, 100 + i as u64));
        write_wav(&dir.join(&n), &quiet_tone(seconds, 200.0 + 37.0 * i as f64, 300 + i as u64));
        let (gv, gn) = if grouped {
            (format!("gv{}", i / 2), format!("gn{}", i / 2))
        } else {
            (String::new(), String::new())
        };
        manifest.push_str(&format!("{v},violence,{gv}\n{n},non-violence,{gn}\n"));
    }
    let m = dir.join("manifest.csv");
    std::fs::write(&m, manifest).unwrap();
    m
}

/// Runs `avd extract` and returns (embeddings, labels) paths.
pub fn extract(dir: &Path, manifest: &Path, provider: &str) -> (PathBuf, PathBuf) {
    let out = dir.join("emb.avde");
    let o = avd(&["extract", "--manifest", p(manifest), "--provider", provider, "--out", p(&out)]);
    assert!(o.status.success(), "extract failed: {}", stderr(&o));
    (out.clone(), out.with_extension("labels.csv"))
}

pub struct Server {
    pub child: Child,
    pub base: String,
}

impl Server {
    pub fn start(artifact: &Path, extra: &[&str]) -> Server {
        let mut child = Command::new(BIN)
            .args(["serve", "--addr", "127.0.0.1:0", "--artifact", p(artifact)])
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("serve spawns");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected serve output {line:?}"))
            .to_string();
        Server { child, base }
    }

    pub fn terminate(mut self) -> std::process::ExitStatus {
        Command::new("kill").args(["-TERM", &self.child.id().to_string()]).status().unwrap();
        for _ in 0..100 {
            if let Some(s) = self.child.try_wait().unwrap() {
                return s;
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        self.child.kill().unwrap();
        self.child.wait().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(60)))
        .build()
        .into()
}

/// (status, body) of a request.
pub fn get(agent: &ureq::Agent, url: &str) -> (u16, serde_json::Value) {
    let mut r = agent.get(url).call().unwrap();
    let status = r.status().as_u16();
    let text = r.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(serde_json::Value::Null))
}

pub fn post(agent: &ureq::Agent, url: &str, content_type: &str, body: &[u8]) -> (u16, serde_json::Value) {
    let mut r = agent
        .post(url)
        .header("content-type", content_type)
        .send(body)
        .unwrap();
    let status = r.status().as_u16();
    let text = r.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(serde_json::Value::Null))
}

pub fn multipart(field: &str, bytes: &[u8]) -> (String, Vec<u8>) {
    let boundary = "avdclitestboundary93xQ";
    let mut body = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"{field}\"; filename=\"clip.wav\"\r\nContent-Type: audio/wav\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

/// Drops the timing field, which differs between runs.
pub fn without_timing(mut v: serde_json::Value) -> serde_json::Value {
    if let Some(o) = v.as_object_mut() {
        o.remove("inference_ms");
    }
    v
}

/// Announces a `len`-byte upload with `Expect: 100-continue` and returns the
/// server's answer without sending the body unless invited to.
pub fn post_announced(base: &str, path: &str, content_type: &str, len: usize) -> (u16, serde_json::Value) {
    use std::io::{Read, Write};
    let host = base.strip_prefix("http://").unwrap();
    let mut s = std::net::TcpStream::connect(host).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    write!(
        s,
        "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: {content_type}\r\nContent-Length: {len}\r\nExpect: 100-continue\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    s.flush().unwrap();
    let mut reader = BufReader::new(s);
    loop {
        let mut status_line = String::new();
        reader.read_line(&mut status_line).unwrap();
        let status: u16 = status_line.split_whitespace().nth(1).and_then(|c| c.parse().ok()).unwrap_or(0);
        let mut length = 0usize;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h).unwrap();
            if h.trim().is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
        }
        if status == 100 {
            // The server wants the body after all; it is not coming.
            return (100, serde_json::Value::Null);
        }
        let mut body = vec![0u8; length];
        reader.read_exact(&mut body).unwrap();
        return (status, serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null));
    }
}
