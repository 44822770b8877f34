//! End-to-end scenarios, each returning a one-line detail on success.
//! Used by both the acceptance binary and the regular test suite.

use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use openloop::orchestrator::{Agent, InputSource, Mailbox};
use openloop::store::read_run_log;
use openloop::tools::{write_file, Jail};
use openloop_core::dedup::{dedup_check, jaccard};
use openloop_core::model::{ScriptEntry, Scripted};
use openloop_core::parse::{extract_action, extract_record, extract_task, Action};
use openloop_core::template::render_prompt;
use openloop_core::{ActionProgram, Message, Role, ScriptedModel, StepTag, Transcript};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use super::{action, phase, record_block, snapshot, FnModel, Phase, Recording, Sandbox};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn confined(sb: &Sandbox) -> Result<(), String> {
    ensure!(sb.confined(), "files outside the workspace changed");
    Ok(())
}

pub fn file_to_file_solve() -> Outcome {
    let sb = Sandbox::new();
    sb.write("file.txt", "What is 6 * 7? Answer with the number only.");
    let mut c = sb.config();
    c.run_loop.max_runs = Some(1);
    let model = ScriptedModel::replies([
        "<task>Solve the task in file.txt, write the answer in result.txt</task>".to_string(),
        action(r#"[{"tool": "read_file", "args": {"path": "file.txt"}}]"#),
        action(r#"[{"tool": "write_file", "args": {"path": "result.txt", "content": "42"}}]"#),
        "<final>Wrote 42 to result.txt</final>".to_string(),
    ]);
    let started = Instant::now();
    let mut agent = Agent::new(c, Box::new(model)).map_err(|e| e.to_string())?;
    let exit = agent.run(InputSource::Batch(vec![
        "Solve the task in file.txt, write the answer in result.txt".into(),
    ]));
    let elapsed = started.elapsed();
    ensure!(exit.errors == 0 && exit.runs_completed == 1, "run failed: {exit:?}");
    let result = fs::read_to_string(sb.ws().join("result.txt")).map_err(|e| format!("result.txt: {e}"))?;
    ensure!(result == "42", "result.txt holds {result:?}");
    let records = agent.store().snapshot();
    ensure!(records.len() == 1, "{} records", records.len());
    ensure!(records[0].artifacts == ["result.txt"], "artifacts {:?}", records[0].artifacts);
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    confined(&sb)?;
    Ok(format!("result.txt = 42, artifacts listed, {} ms", elapsed.as_millis()))
}

/// The model only knows where to look next from what it has observed.
pub fn self_inspection() -> Outcome {
    let sb = Sandbox::new();
    sb.write(
        "main.py",
        "from pathlib import Path\n\nTEMPLATE = Path(\"templates/agent_prompt.txt\")\n\ndef system_prompt():\n    return TEMPLATE.read_text()\n",
    );
    sb.write("templates/agent_prompt.txt", "You are a curious agent. Tools: {{tools}}\n");
    sb.write("README.md", "demo agent\n");
    let mut c = sb.config();
    c.run_loop.max_runs = Some(1);
    let model = FnModel(|m: &[Message]| {
        let observations: Vec<&str> = m
            .iter()
            .filter(|x| x.step_tag == StepTag::Observe)
            .map(|x| x.content.as_str())
            .collect();
        Ok(match phase(m) {
            Phase::Task => "<task>Find out which prompt template the agent uses</task>".into(),
            Phase::Summary => {
                let last_final = m.iter().rev().find(|x| x.content.contains("<final>")).map(|x| x.content.clone());
                record_block("find the prompt template", "list, read main.py, read template", &last_final.unwrap_or_default())
            }
            Phase::Act => match observations.as_slice() {
                [] => action(r#"[{"tool": "list_files", "args": {"path": "."}}]"#),
                [listing] if listing.contains("main.py") => {
                    action(r#"[{"tool": "read_file", "args": {"path": "main.py"}}]"#)
                }
                [_, source] => match source.split("Path(\"").nth(1).and_then(|s| s.split('"').next()) {
                    Some(path) => action(&format!(
                        r#"[{{"tool": "read_file", "args": {{"path": "{path}"}}}}]"#
                    )),
                    None => "<final>no template reference found</final>".into(),
                },
                [_, source, template] if template.contains("You are") => {
                    let path = source.split("Path(\"").nth(1).and_then(|s| s.split('"').next()).unwrap_or("?");
                    format!("<final>The agent uses the prompt template {path}, loaded by main.py.</final>")
                }
                _ => "<final>gave up</final>".into(),
            },
        })
    });
    let mut agent = Agent::new(c, Box::new(model)).map_err(|e| e.to_string())?;
    let exit = agent.run(InputSource::Batch(vec!["Which prompt template is used by the agent?".into()]));
    ensure!(exit.errors == 0, "run failed: {exit:?}");
    let run = agent.handle().runs()[0].clone();
    let log = read_run_log(&sb.ws().join("runs"), &run.run_id).map_err(|e| e.to_string())?;
    let observations: Vec<&Message> = log.iter().filter(|m| m.step_tag == StepTag::Observe).collect();
    ensure!(observations.len() == 3, "{} observations", observations.len());
    ensure!(observations.iter().all(|o| !o.content.contains("error:")), "a tool call failed");
    let tools: Vec<String> = log
        .iter()
        .filter(|m| m.role == Role::Assistant && m.step_tag == StepTag::Act)
        .filter_map(|m| match extract_action(&m.content) {
            Ok(Action::Program(p)) => Some(p.calls[0].tool.name().to_string()),
            _ => None,
        })
        .collect();
    ensure!(tools == ["list_files", "read_file", "read_file"], "tool sequence {tools:?}");
    let final_msg = log.iter().rev().find(|m| m.content.contains("<final>")).ok_or("no final answer")?;
    ensure!(final_msg.content.contains("templates/agent_prompt.txt"), "final answer: {}", final_msg.content);
    ensure!(run.steps_used == 4, "steps used {}", run.steps_used);
    confined(&sb)?;
    Ok("list -> read main.py -> read templates/agent_prompt.txt -> final".into())
}

const PASSWORD_TASK: &str = "implement a password generator";
const PRIME_TASK: &str = "implement a prime number checker";

/// Proposes the password task unless its prompt already mentions it.
fn memory_aware_model() -> FnModel<impl FnMut(&[Message]) -> Result<String, openloop_core::ModelError> + Send> {
    let mut current = String::new();
    FnModel(move |m: &[Message]| {
        Ok(match phase(m) {
            Phase::Task => {
                let seen = m.iter().any(|x| x.content.contains(PASSWORD_TASK));
                current = if seen { PRIME_TASK } else { PASSWORD_TASK }.to_string();
                format!("<task>{current}</task>")
            }
            Phase::Act => "<final>done</final>".into(),
            Phase::Summary => record_block(&current, "wrote code", "done"),
        })
    })
}

pub fn memory_dependence() -> Outcome {
    // With memory: one loop, two runs.
    let sb = Sandbox::new();
    let mut c = sb.config();
    c.run_loop.max_runs = Some(2);
    let mut agent = Agent::new(c, Box::new(memory_aware_model())).map_err(|e| e.to_string())?;
    agent.run(InputSource::Batch(vec![]));
    let with: Vec<String> = agent.store().snapshot().into_iter().map(|r| r.task).collect();
    ensure!(with.len() == 2, "{} records with memory", with.len());
    ensure!(with[0] != with[1], "run 2 repeated the task with memory enabled: {with:?}");
    confined(&sb)?;

    // Without memory: every run writes to its own throwaway file.
    let sb = Sandbox::new();
    let mut tasks = Vec::new();
    let mut first_records = Vec::new();
    for i in 0..2 {
        let mut c = sb.config();
        c.run_loop.max_runs = Some(1);
        c.memory.path = Some(sb.ws().join(format!("throwaway-{i}.jsonl")));
        let mut agent = Agent::new(c, Box::new(memory_aware_model())).map_err(|e| e.to_string())?;
        agent.run(InputSource::Batch(vec![]));
        let recs = agent.store().snapshot();
        tasks.push(recs[0].task.clone());
        if i == 0 {
            first_records = recs;
        }
    }
    ensure!(tasks[0] == tasks[1], "run 2 did not repeat without memory: {tasks:?}");
    let dup = dedup_check(&tasks[1], &first_records, 0.6).ok_or("dedup_check did not flag the repeat")?;
    let j = jaccard(&tasks[1], &dup.task);
    ensure!(j == 1.0, "J = {j}");
    confined(&sb)?;
    Ok(format!("with memory: {:?} then {:?}; without: repeated, J = {j:.1}", with[0], with[1]))
}

pub fn feedback_steering() -> Outcome {
    const NOTE: &str = "prefer novel tasks, avoid checkers";
    type Observed = (Sandbox, Vec<Vec<Message>>, Vec<String>);
    let run = |store_feedback: bool| -> Result<Observed, String> {
        let sb = Sandbox::new();
        let mut c = sb.config();
        c.run_loop.max_runs = Some(3);
        c.memory.store_feedback = store_feedback;
        let mailbox: Arc<Mutex<Option<Mailbox>>> = Arc::default();
        let mb = Arc::clone(&mailbox);
        let mut submitted = false;
        let mut n = 0;
        let mut current = String::new();
        let inner = FnModel(move |m: &[Message]| {
            Ok(match phase(m) {
                Phase::Task => {
                    n += 1;
                    let steered = m.iter().any(|x| x.step_tag == StepTag::Feedback && x.content.contains(NOTE));
                    current = if steered {
                        format!("write a short story generator {n}")
                    } else {
                        format!("implement a palindrome checker {n}")
                    };
                    format!("<task>{current}</task>")
                }
                Phase::Act => {
                    if !submitted {
                        // Mid-run: the operator sends feedback.
                        mb.lock().unwrap().as_ref().unwrap().submit(NOTE).unwrap();
                        submitted = true;
                    }
                    "<final>done</final>".into()
                }
                Phase::Summary => record_block(&current, "", "done"),
            })
        });
        let (model, prompts) = Recording::new(inner);
        let mut agent = Agent::new(c, Box::new(model)).map_err(|e| e.to_string())?;
        *mailbox.lock().unwrap() = Some(agent.handle().mailbox.clone());
        agent.run(InputSource::Batch(vec![]));
        let task_prompts: Vec<Vec<Message>> = prompts
            .lock()
            .unwrap()
            .iter()
            .filter(|p| phase(p) == Phase::Task)
            .cloned()
            .collect();
        let tasks = agent.handle().runs().into_iter().rev().filter_map(|r| r.task).collect();
        Ok((sb, task_prompts, tasks))
    };

    let (sb, prompts, tasks) = run(true)?;
    ensure!(prompts.len() == 3, "{} task prompts", prompts.len());
    let delivered = |p: &Vec<Message>| p.iter().any(|m| m.step_tag == StepTag::Feedback && m.content.contains(NOTE));
    ensure!(!delivered(&prompts[0]), "feedback leaked into run 1");
    ensure!(delivered(&prompts[1]), "feedback missing from run 2's task prompt");
    ensure!(prompts.iter().filter(|p| delivered(p)).count() == 1, "feedback delivered more than once");
    ensure!(tasks[1].starts_with("write a short story"), "run 2 not steered: {}", tasks[1]);
    // Restart: a new process on the same memory file sees the feedback.
    let restarted = Agent::new(sb.config(), Box::new(ScriptedModel::default())).map_err(|e| e.to_string())?;
    let system = restarted.system_prompt(&restarted.store().snapshot());
    ensure!(system.contains(NOTE), "feedback lost across restart");
    confined(&sb)?;

    let (sb, prompts, _) = run(false)?;
    let mentions = prompts
        .iter()
        .filter(|p| p.iter().any(|m| m.content.contains(NOTE)))
        .count();
    ensure!(mentions == 1, "without stored feedback the note appears in {mentions} task prompts");
    let restarted = Agent::new(sb.config(), Box::new(ScriptedModel::default())).map_err(|e| e.to_string())?;
    ensure!(
        !restarted.system_prompt(&restarted.store().snapshot()).contains(NOTE),
        "unstored feedback survived a restart"
    );
    confined(&sb)?;
    Ok("verbatim in run k+1, delivered once, survives restart when stored".into())
}

const SEGMENTS: &[&str] = &[
    "..", ".", "a", "b", "sub", "link", "dangling", "inlink", "secret.txt", "outside", "/", "\\", "//", "C:", "c:\\",
    "\0", "~", "%2e%2e", "é", " ", "...", "..\\..", "a/../..", "$HOME", "*", "\u{2024}\u{2024}", "\u{ff0e}\u{ff0e}",
];

pub const FUZZ_CASES: usize = 12_000;

/// Random path strings against a workspace containing escape symlinks;
/// every accepted path must stay inside, and writing to a sample of them
/// must leave everything outside untouched.
pub fn jail_fuzz(seed: u64) -> Outcome {
    let sb = Sandbox::new();
    let ws = sb.ws();
    fs::create_dir_all(ws.join("sub/a")).unwrap();
    #[cfg(unix)]
    {
        std::os::unix::fs::symlink(sb.outside(), ws.join("link")).unwrap();
        std::os::unix::fs::symlink(sb.outside().join("missing"), ws.join("dangling")).unwrap();
        std::os::unix::fs::symlink(ws.join("sub"), ws.join("inlink")).unwrap();
    }
    let jail = Jail::new(&ws).map_err(|e| e.to_string())?;
    let root = jail.root().to_path_buf();
    let mut rng = StdRng::seed_from_u64(seed);
    let (mut accepted, mut rejected, mut written) = (0, 0, 0);
    for i in 0..FUZZ_CASES {
        let n = rng.random_range(1..=8);
        let mut path = String::new();
        for _ in 0..n {
            path.push_str(SEGMENTS[rng.random_range(0..SEGMENTS.len())]);
            if rng.random_bool(0.6) {
                path.push('/');
            }
        }
        match jail.resolve(&path) {
            Err(_) => rejected += 1,
            Ok(jp) => {
                accepted += 1;
                let abs = jp.absolute();
                ensure!(abs.starts_with(&root), "lexical escape: {path:?} -> {}", abs.display());
                let anchor = deepest_existing(&abs);
                let canonical = anchor.canonicalize().map_err(|e| e.to_string())?;
                ensure!(canonical.starts_with(&root), "escape: {path:?} -> {}", canonical.display());
                if i % 7 == 0 && write_file(&jp, "x").is_ok() {
                    written += 1;
                }
            }
        }
    }
    for bad in ["link/secret.txt", "link", "../outside/secret.txt", "/etc/passwd", "dangling", "sub/../../outside"] {
        ensure!(jail.resolve(bad).is_err(), "{bad:?} accepted");
    }
    ensure!(jail.resolve("inlink/a").is_ok(), "internal symlink rejected");
    ensure!(accepted > 100 && rejected > 100, "degenerate corpus: {accepted} accepted, {rejected} rejected");
    confined(&sb)?;
    Ok(format!("{FUZZ_CASES} paths: {accepted} accepted, {rejected} rejected, {written} written, 0 escapes"))
}

fn deepest_existing(p: &Path) -> &Path {
    let mut probe = p;
    while probe.symlink_metadata().is_err() {
        probe = probe.parent().expect("root exists");
    }
    probe
}

/// Full episode through the toolbelt with hostile actions: the model
/// tries to escape in every way it can; the tree outside stays intact.
pub fn hostile_episode() -> Outcome {
    let sb = Sandbox::new();
    #[cfg(unix)]
    std::os::unix::fs::symlink(sb.outside(), sb.ws().join("link")).unwrap();
    let mut c = sb.config();
    c.run_loop.max_runs = Some(1);
    c.run_loop.max_steps = 6;
    let attempts = [
        r#"[{"tool": "write_file", "args": {"path": "../outside/secret.txt", "content": "pwned"}}]"#,
        r#"[{"tool": "write_file", "args": {"path": "link/secret.txt", "content": "pwned"}}]"#,
        r#"[{"tool": "read_file", "args": {"path": "/etc/passwd"}}]"#,
        r#"[{"tool": "write_file", "args": {"path": "ok/../../escape.txt", "content": "x"}}]"#,
        r#"[{"tool": "list_files", "args": {"path": "link"}}]"#,
        r#"[{"tool": "write_file", "args": {"path": "inside.txt", "content": "fine"}}]"#,
    ];
    let mut replies = vec!["<task>probe the sandbox</task>".to_string()];
    replies.extend(attempts.iter().map(|a| action(a)));
    let mut agent = Agent::new(c, Box::new(ScriptedModel::replies(replies))).map_err(|e| e.to_string())?;
    agent.run(InputSource::Batch(vec![]));
    let run = agent.handle().runs()[0].clone();
    let log = read_run_log(&sb.ws().join("runs"), &run.run_id).map_err(|e| e.to_string())?;
    let errors = log
        .iter()
        .filter(|m| m.step_tag == StepTag::Observe && m.content.contains("error:"))
        .count();
    ensure!(errors == 5, "{errors} rejected calls, expected 5");
    ensure!(sb.read("inside.txt") == "fine", "legit write failed");
    confined(&sb)?;
    Ok("5 escape attempts rejected, legit write kept".into())
}

#[derive(serde::Deserialize)]
struct Case {
    name: String,
    parser: String,
    input: String,
    ok: Option<Value>,
    err: Option<String>,
    err_contains: Option<String>,
}

pub const PARSER_CASES: &str = include_str!("../fixtures/parser_cases.json");

pub fn parser_suite() -> Outcome {
    let cases: Vec<Case> = serde_json::from_str(PARSER_CASES).map_err(|e| e.to_string())?;
    ensure!(cases.len() >= 30, "only {} fixtures", cases.len());
    for c in &cases {
        let got: Result<Value, String> = match c.parser.as_str() {
            "task" => extract_task(&c.input)
                .map(|t| Value::String(t.into_string()))
                .map_err(|e| e.to_string()),
            "action" => extract_action(&c.input)
                .map(|a| match a {
                    Action::Final(t) => serde_json::json!({ "final": t }),
                    Action::Program(p) => serde_json::to_value(&p).unwrap(),
                })
                .map_err(|e| e.to_string()),
            "record" => extract_record(&c.input)
                .map(|r| serde_json::json!({ "task": r.task, "action": r.action, "outcome": r.outcome }))
                .map_err(|e| e.to_string()),
            other => return Err(format!("{}: unknown parser {other}", c.name)),
        };
        match (&c.ok, &c.err, got) {
            (Some(want), None, Ok(v)) => {
                ensure!(&v == want, "{}: got {v}, want {want}", c.name);
                round_trip(&c.parser, &v).map_err(|e| format!("{}: {e}", c.name))?;
            }
            (None, Some(kind), Err(e)) => {
                ensure!(e.starts_with(&format!("{kind}:")), "{}: error {e:?}, want {kind}", c.name);
                if let Some(s) = &c.err_contains {
                    ensure!(e.contains(s.as_str()), "{}: error {e:?} lacks {s:?}", c.name);
                }
            }
            (_, _, got) => return Err(format!("{}: unexpected {got:?}", c.name)),
        }
    }
    let n = render_prompt_property(2_000, 11)?;
    Ok(format!("{} fixtures, {n} render_prompt cases", cases.len()))
}

/// Parsed values re-rendered into a reply parse back to themselves.
fn round_trip(parser: &str, v: &Value) -> Result<(), String> {
    let again = match parser {
        "task" => {
            let text = v.as_str().unwrap();
            Value::String(extract_task(&format!("ok <task>{text}</task>")).map_err(|e| e.to_string())?.into_string())
        }
        "action" if v.get("final").is_some() => return Ok(()),
        "action" => {
            let program: ActionProgram = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
            let reply = action(&serde_json::to_string(&program).unwrap());
            match extract_action(&reply).map_err(|e| e.to_string())? {
                Action::Program(p) => serde_json::to_value(&p).unwrap(),
                Action::Final(_) => return Err("program came back as final".into()),
            }
        }
        _ => {
            let s = |k: &str| v[k].as_str().unwrap().to_string();
            let r = extract_record(&record_block(&s("task"), &s("action"), &s("outcome"))).map_err(|e| e.to_string())?;
            serde_json::json!({ "task": r.task, "action": r.action, "outcome": r.outcome })
        }
    };
    ensure!(&again == v, "round trip changed {v} into {again}");
    Ok(())
}

/// Random transcripts: the rendered prompt fits the budget and starts
/// with the system prompt whenever it fits at all.
pub fn render_prompt_property(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let tags = [StepTag::UserInput, StepTag::TaskGeneration, StepTag::Act, StepTag::Observe, StepTag::Nudge];
    for i in 0..cases {
        let mut t = Transcript::new("r", "t");
        let sys_len = rng.random_range(1..400);
        t.push(Role::System, "s".repeat(sys_len), StepTag::Plan);
        for _ in 0..rng.random_range(0..40) {
            let role = [Role::User, Role::Assistant, Role::Tool, Role::System][rng.random_range(0..4)];
            let len = rng.random_range(0..300);
            let text: String = (0..len).map(|_| ['a', 'é', '字', ' '][rng.random_range(0..4)]).collect();
            t.push(role, text, tags[rng.random_range(0..tags.len())]);
        }
        let budget = rng.random_range(1..3_000);
        let chars = |m: &Message| m.content.chars().count();
        match render_prompt(&t, budget) {
            Ok(p) => {
                let total: usize = p.iter().map(chars).sum();
                ensure!(total <= budget, "case {i}: {total} chars > budget {budget}");
                ensure!(p.first() == t.messages().first(), "case {i}: system message dropped");
            }
            Err(_) => ensure!(sys_len > budget || t.messages().iter().take_while(|m| m.role == Role::System).map(chars).sum::<usize>() > budget, "case {i}: spurious error"),
        }
    }
    Ok(cases)
}

pub fn loop_liveness() -> Outcome {
    let sb = Sandbox::new();
    let mut c = sb.config();
    c.run_loop.max_runs = Some(3);
    let script = vec![
        ScriptEntry::always("<task>list the workspace</task>"),
        ScriptEntry::always("<final>empty</final>"),
        ScriptEntry::always(record_block("list the workspace", "list_files", "empty")),
        ScriptEntry::fail(Scripted::TransportError("connection reset by peer".into())),
        ScriptEntry::always("<task>write a haiku to haiku.txt</task>"),
        ScriptEntry::always(action(r#"[{"tool": "write_file", "args": {"path": "haiku.txt", "content": "old pond"}}]"#)),
        ScriptEntry::always("<final>written</final>"),
        ScriptEntry::always(record_block("write a haiku to haiku.txt", "write_file", "written")),
    ];
    let mut agent = Agent::new(c, Box::new(ScriptedModel::new(script))).map_err(|e| e.to_string())?;
    let exit = agent.run(InputSource::Batch(vec![]));
    ensure!(exit.runs_attempted == 3 && exit.errors == 1, "exit summary {exit:?}");
    let runs = agent.handle().runs();
    let ids: Vec<String> = runs.iter().rev().map(|r| r.run_id.clone()).collect();
    let records = agent.store().snapshot();
    let rec_ids: Vec<&str> = records.iter().map(|r| r.run_id.as_str()).collect();
    ensure!(rec_ids == [ids[0].as_str(), ids[2].as_str()], "records for {rec_ids:?}, runs {ids:?}");
    confined(&sb)?;
    Ok(format!("{} attempted, {} error, records for runs 1 and 3", exit.runs_attempted, exit.errors))
}

/// A batch touching every feature: user queries, tool calls, feedback,
/// a failure, the summary fallback. Returns the normalized memory file.
pub fn full_batch(root: &Path) -> Result<String, String> {
    let ws = root.join("ws");
    fs::create_dir_all(&ws).unwrap();
    fs::write(ws.join("file.txt"), "What is 6 * 7?").unwrap();
    let mut c = openloop::config::AgentConfig {
        workspace_root: ws.clone(),
        ..Default::default()
    };
    c.run_loop.seed = Some(42);
    c.run_loop.queries = vec![
        "Solve the task in file.txt, write the answer in result.txt".into(),
        "".into(),
        "Summarize the workspace".into(),
        "".into(),
    ];
    let mut step = 0usize;
    let mut sent_feedback = false;
    let mailbox: Arc<Mutex<Option<Mailbox>>> = Arc::default();
    let mb = Arc::clone(&mailbox);
    let model = FnModel(move |m: &[Message]| {
        step += 1;
        if step == 9 {
            return Err(openloop_core::ModelError::Transport("flaky".into()));
        }
        Ok(match phase(m) {
            Phase::Task => match m.iter().rev().find(|x| x.step_tag == StepTag::UserInput) {
                Some(u) => format!("<task>{}</task>", u.content),
                None => format!("<task>explore the workspace, pass {step}</task>"),
            },
            Phase::Act => {
                if !sent_feedback {
                    mb.lock().unwrap().as_ref().unwrap().submit("keep tasks small").unwrap();
                    sent_feedback = true;
                }
                let acted = m.iter().filter(|x| x.step_tag == StepTag::Observe).count();
                if acted == 0 {
                    action(r#"[{"tool": "read_file", "args": {"path": "file.txt"}, "bind": "q"}, {"tool": "write_file", "args": {"path": "notes/q.txt", "content": "$q"}}]"#)
                } else {
                    "<final>done</final>".into()
                }
            }
            Phase::Summary if step.is_multiple_of(2) => "not a record".into(),
            Phase::Summary => record_block("summarized", "read and wrote", "done"),
        })
    });
    let mut agent = Agent::new(c, Box::new(model)).map_err(|e| e.to_string())?;
    *mailbox.lock().unwrap() = Some(agent.handle().mailbox.clone());
    let queries = agent.config().run_loop.queries.clone();
    agent.run(InputSource::Batch(queries));
    let before = snapshot(&ws);
    ensure!(before.contains_key("notes/q.txt"), "no artifact written");
    Ok(super::normalized_memory(&ws.join("memory.jsonl")))
}

pub fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = full_batch(a.path())?;
    let mb = full_batch(b.path())?;
    ensure!(ma.lines().count() >= 4, "only {} memory lines", ma.lines().count());
    ensure!(ma == mb, "memory files differ:\n{ma}\n---\n{mb}");
    Ok(format!("{} memory lines byte-identical", ma.lines().count()))
}
