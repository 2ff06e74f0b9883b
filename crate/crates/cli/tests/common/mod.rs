//! Fixtures shared by the CLI test targets: a small labelled knowledge
//! graph, a 20-question dataset and a local chat-completions server.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ENTITIES: &[(&str, &str)] = &[
    ("Q181600", "patient"),
    ("Q215627", "person"),
    ("Q39631", "physician"),
    ("Q4116214", "date of death"),
    ("Q2389905", "date of birth"),
    ("Q16722960", "hospital"),
    ("Q1059420", "hospital admission"),
    ("Q17104930", "visit"),
    ("Q12140", "medication"),
    ("Q8386", "drug"),
    ("Q28885102", "specimen"),
    ("Q7397", "software"),
    ("Q853614", "identifier"),
    ("Q1150070", "diagnosis"),
    ("Q12136", "disease"),
    ("Q796194", "medical procedure"),
    ("Q2996394", "measurement"),
    ("Q11015", "laboratory test"),
    ("Q186517", "time"),
    ("Q186408", "point in time"),
    ("Q48277", "gender"),
    ("Q6581097", "male"),
    ("Q6581072", "female"),
    ("Q2352616", "caregiver"),
    ("Q852835", "customer"),
    ("Q2596417", "beneficiary"),
    ("Q15221623", "death"),
    ("Q3950", "birth"),
    ("Q1802575", "ward"),
    ("Q11173", "chemical compound"),
    ("Q1391737", "dose"),
    ("Q39297398", "prescription"),
    ("Q43229", "organization"),
    ("Q2221906", "geographic location"),
    ("Q34770", "language"),
    ("Q1052953", "ethnicity"),
    ("Q7184903", "observation"),
    ("Q1196753", "insurance"),
    ("Q1785071", "discharge"),
    ("Q1048835", "unit of measurement"),
];

pub const RELATIONS: &[(&str, &str)] = &[
    ("P279", "subclass of"),
    ("P31", "instance of"),
    ("P461", "opposite of"),
    ("P1269", "facet of"),
    ("P361", "part of"),
    ("P527", "has part"),
    ("P1552", "has quality"),
    ("P2283", "uses"),
    ("P366", "has use"),
    ("P1557", "manifestation of"),
];

/// Hand-picked facts; the rest of the graph is seeded filler.
const FACTS: &[(&str, &str, &str)] = &[
    ("Q181600", "P279", "Q215627"),
    ("Q39631", "P279", "Q215627"),
    ("Q2352616", "P279", "Q215627"),
    ("Q4116214", "P461", "Q2389905"),
    ("Q4116214", "P1269", "Q15221623"),
    ("Q2389905", "P1269", "Q3950"),
    ("Q4116214", "P279", "Q186408"),
    ("Q2389905", "P279", "Q186408"),
    ("Q186408", "P279", "Q186517"),
    ("Q1059420", "P361", "Q17104930"),
    ("Q1785071", "P361", "Q17104930"),
    ("Q1059420", "P461", "Q1785071"),
    ("Q17104930", "P2283", "Q16722960"),
    ("Q1802575", "P361", "Q16722960"),
    ("Q12140", "P279", "Q8386"),
    ("Q39297398", "P527", "Q12140"),
    ("Q39297398", "P527", "Q1391737"),
    ("Q8386", "P279", "Q11173"),
    ("Q28885102", "P366", "Q11015"),
    ("Q11015", "P279", "Q2996394"),
    ("Q2996394", "P527", "Q1048835"),
    ("Q7184903", "P279", "Q2996394"),
    ("Q1150070", "P1557", "Q12136"),
    ("Q796194", "P366", "Q1150070"),
    ("Q48277", "P1269", "Q215627"),
    ("Q6581097", "P31", "Q48277"),
    ("Q6581072", "P31", "Q48277"),
    ("Q6581097", "P461", "Q6581072"),
    ("Q2596417", "P279", "Q852835"),
    ("Q852835", "P279", "Q181600"),
    ("Q1196753", "P2283", "Q2596417"),
    ("Q853614", "P1269", "Q7397"),
    ("Q1052953", "P1269", "Q215627"),
    ("Q34770", "P1552", "Q215627"),
    ("Q2221906", "P1269", "Q16722960"),
    ("Q43229", "P527", "Q16722960"),
];

/// About 100 distinct triples: the facts plus seeded filler.
pub fn toy_triples() -> Vec<(String, String, String)> {
    let mut out: Vec<(String, String, String)> =
        FACTS.iter().map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    while out.len() < 100 {
        let h = ENTITIES[rng.random_range(0..ENTITIES.len())].0;
        let t = ENTITIES[rng.random_range(0..ENTITIES.len())].0;
        let r = RELATIONS[rng.random_range(0..RELATIONS.len())].0;
        let triple = (h.to_string(), r.to_string(), t.to_string());
        if h != t && !out.contains(&triple) {
            out.push(triple);
        }
    }
    out
}

/// Source attribute, target attribute, descriptions, label.
pub const QUESTIONS: &[(&str, &str, &str, &str, u8)] = &[
    ("patients-subject_id", "person-person_id", "Unique identifier of the patient.", "A unique identifier for each person.", 1),
    ("patients-dod", "person-birth_datetime", "Date of death of the patient.", "Date and time of birth of the person.", 0),
    ("patients-dod", "death-death_date", "Date of death of the patient.", "The date the person was deceased.", 1),
    ("patients-gender", "person-gender_concept_id", "Gender of the patient.", "The gender of the person.", 1),
    ("patients-gender", "person-year_of_birth", "Gender of the patient.", "The year of birth of the person.", 0),
    ("admissions-admittime", "visit_occurrence-visit_start_datetime", "Time of hospital admission.", "Start of the visit.", 1),
    ("admissions-dischtime", "visit_occurrence-visit_end_datetime", "Time of hospital discharge.", "End of the visit.", 1),
    ("admissions-admittime", "visit_occurrence-visit_end_datetime", "Time of hospital admission.", "End of the visit.", 0),
    ("admissions-ethnicity", "person-ethnicity_concept_id", "Ethnicity of the patient.", "The ethnicity of the person.", 1),
    ("admissions-language", "person-location_id", "Language spoken by the patient.", "Where the person lives.", 0),
    ("prescriptions-drug", "drug_exposure-drug_concept_id", "Name of the prescribed drug.", "The drug given to the person.", 1),
    ("prescriptions-dose_val_rx", "drug_exposure-quantity", "Prescribed dose.", "Quantity of drug dispensed.", 1),
    ("prescriptions-drug", "specimen-specimen_concept_id", "Name of the prescribed drug.", "Kind of specimen collected.", 0),
    ("labevents-valuenum", "measurement-value_as_number", "Numeric lab result.", "The measured numeric value.", 1),
    ("labevents-valueuom", "measurement-unit_concept_id", "Unit of the lab result.", "Unit of measurement.", 1),
    ("labevents-itemid", "observation-observation_date", "Lab item identifier.", "Date of the observation.", 0),
    ("diagnoses_icd-icd9_code", "condition_occurrence-condition_concept_id", "Diagnosis code.", "The condition of the person.", 1),
    ("procedures_icd-icd9_code", "condition_occurrence-condition_end_date", "Procedure code.", "End date of the condition.", 0),
    ("caregivers-cgid", "provider-provider_id", "Identifier of the caregiver.", "Identifier of the provider.", 1),
    ("transfers-curr_careunit", "care_site-care_site_name", "Current care unit.", "Name of the care site.", 1),
];

/// Writes the toy graph, dataset and a config into `dir`.
pub fn write_fixtures(dir: &Path) -> PathBuf {
    let kg = dir.join("kg");
    std::fs::create_dir_all(&kg).unwrap();
    let lines = |rows: &mut dyn Iterator<Item = String>| rows.collect::<Vec<_>>().join("\n") + "\n";
    std::fs::write(
        kg.join("entities.tsv"),
        lines(&mut ENTITIES.iter().map(|(id, l)| format!("{id}\t{l}"))),
    )
    .unwrap();
    std::fs::write(
        kg.join("relations.tsv"),
        lines(&mut RELATIONS.iter().map(|(id, l)| format!("{id}\t{l}"))),
    )
    .unwrap();
    std::fs::write(
        kg.join("triples.tsv"),
        lines(&mut toy_triples().into_iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}"))),
    )
    .unwrap();

    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    let mut csv = String::from("attribute1,attribute2,description1,description2,label\n");
    for (s, t, ds, dt, label) in QUESTIONS {
        csv.push_str(&format!("{s},{t},\"{ds}\",\"{dt}\",{label}\n"));
    }
    std::fs::write(data.join("dataset.csv"), csv).unwrap();

    let config = dir.join("kgmatch.toml");
    std::fs::write(&config, "[embedding]\ndim = 128\n").unwrap();
    config
}

/// Points the config's chat endpoint at `url`.
pub fn set_endpoint(config: &Path, url: &str) {
    let text = std::fs::read_to_string(config).unwrap();
    let text = format!("{text}\n[llm]\nendpoint = \"{url}\"\nmodel = \"mock-model\"\nretries = 0\n");
    std::fs::write(config, text).unwrap();
}

pub fn kgmatch(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgmatch"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("KGMATCH_LLM_API_KEY")
        .output()
        .expect("kgmatch runs")
}

/// Runs `kgmatch`, panicking with its output on a nonzero exit.
pub fn kgmatch_ok(config: &Path, args: &[&str]) -> String {
    let out = kgmatch(config, args);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "kgmatch {args:?} failed ({}):\n{stdout}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

/// A chat-completions endpoint whose answer depends only on the prompt:
/// "1" when the byte sum of the user message is even, else "0".
pub struct ChatServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    addr: std::net::SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl ChatServer {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let (count, halt) = (Arc::clone(&requests), Arc::clone(&stop));
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if halt.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let count = Arc::clone(&count);
                std::thread::spawn(move || {
                    if serve(stream).is_some() {
                        count.fetch_add(1, Ordering::SeqCst);
                    }
                });
            }
        });
        ChatServer {
            url: format!("http://{addr}/v1/chat/completions"),
            requests,
            stop,
            addr,
            handle: Some(handle),
        }
    }
}

impl Drop for ChatServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop so it sees the flag
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream) -> Option<()> {
    let mut reader = BufReader::new(stream);
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        if line.is_empty() {
            return None;
        }
        if line == "\r\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    let request: serde_json::Value = serde_json::from_slice(&body).ok()?;
    let user = request["messages"][1]["content"].as_str().unwrap_or_default();
    let sum: u64 = user.bytes().map(u64::from).sum();
    let answer = if sum % 2 == 0 { "1\nThe attributes describe the same concept." } else { "0\nThey differ." };
    let reply = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": answer}}]}).to_string();
    let mut stream = reader.into_inner();
    write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )
    .ok()?;
    Some(())
}
