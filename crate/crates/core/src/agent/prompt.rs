//! Agent and pruning prompt text.

use crate::graph::RelationPath;
use crate::planner::serialize_path;

pub const INSTRUCTIONS: &str = "Solve a question answering task with interleaving Thought, Action, Observation steps. \
Thought can reason about the current situation, and Action can be three types:
(1) Search[node1 | node2 | ...], which searches the exact nodes on the knowledge graph and returns their one-hop subgraphs. \
You should extract the all concrete nodes appeared in your last thought without redundant words, \
and you should always select nodes from topic nodes in the first search.
(2) Query[question], which finds the most related node of the given question based on text embedding similarity.
(3) Finish[answer1 | answer2 | ...], which returns the answer and finishes the task. \
The answers should be complete node name appeared in the triples. If you don't know the answer, please output Finish[unknown].
Nodes and answers should be separated by tab.
You should generate each step without redundant words.";

pub(crate) const QUESTION_LABEL: &str = "Question: ";
pub(crate) const PATHS_LABEL: &str = "Relation Paths: ";
pub(crate) const TOPIC_LABEL: &str = "Topic Node: ";

/// One completed Thought/Action/Observation round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundText {
    pub thought: String,
    pub action: String,
    pub observation: String,
}

/// Instructions, optional worked examples, the question with its plan and
/// topic nodes, then the numbered history. A fresh prompt ends at the topic
/// node line.
pub fn render_prompt(
    examples: &str,
    question: &str,
    paths: &[RelationPath],
    topic_names: &[&str],
    history: &[RoundText],
) -> String {
    let mut out = String::from(INSTRUCTIONS);
    let examples = examples.trim();
    if !examples.is_empty() {
        out.push_str("\nHere are some examples\n");
        out.push_str(examples);
    }
    out.push('\n');
    out.push_str(QUESTION_LABEL);
    out.push_str(question);
    if !paths.is_empty() {
        out.push('\n');
        out.push_str(PATHS_LABEL);
        let serialized: Vec<String> = paths.iter().map(serialize_path).collect();
        out.push('[');
        out.push_str(&serialized.join("\t"));
        out.push(']');
    }
    out.push('\n');
    out.push_str(TOPIC_LABEL);
    out.push('[');
    out.push_str(&topic_names.join("\t"));
    out.push(']');
    for (i, r) in history.iter().enumerate() {
        let n = i + 1;
        out.push_str(&format!(
            "\nThought {n}: {}\nAction {n}: {}\nObservation {n}: {}",
            r.thought, r.action, r.observation
        ));
    }
    out
}

/// Follow-up turn sent once after an unparseable completion.
pub fn correction_prompt(round: usize) -> String {
    format!(
        "Your reply did not contain a valid action. Reply with exactly two lines:\n\
         Thought {round}: <your reasoning>\n\
         Action {round}: Search[...], Query[...] or Finish[...]"
    )
}

pub(crate) const PRUNE_HEADER: &str = "Select the triples most relevant to answering the question.";

/// Asks the backend to choose up to `k` triples per node from numbered
/// candidate lists.
pub fn prune_prompt(question: &str, k: usize, groups: &[(String, Vec<String>)]) -> String {
    let mut out = format!(
        "{PRUNE_HEADER} For each node choose at most {k} triples.\n{QUESTION_LABEL}{question}"
    );
    let mut n = 0;
    for (node, lines) in groups {
        out.push_str(&format!("\nNode: {node}"));
        for line in lines {
            n += 1;
            out.push_str(&format!("\n{n}. {line}"));
        }
    }
    out.push_str("\nAnswer with the chosen triple numbers separated by commas.");
    out
}
