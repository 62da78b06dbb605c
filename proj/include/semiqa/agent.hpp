#pragma once
// Graph-traversing agent: up to T rounds of Thought -> Action -> Observation
// driven by a chat backend. Actions: Search (relational neighborhood, pruned
// to K per node with the plan's next hop kept first), Query (embedding
// retrieval over node documents), Finish (answer emission).

#include "semiqa/embedding.hpp"
#include "semiqa/graph.hpp"
#include "semiqa/llm.hpp"
#include "semiqa/matcher.hpp"
#include "semiqa/planner.hpp"

#include <string>
#include <vector>

namespace semiqa {

enum class ActionKind { search, query, finish };
enum class PruneMode { llm, plan_first, score };

struct Action {
    ActionKind kind = ActionKind::finish;
    std::vector<std::string> names;  // search targets or finish answers
    std::string query;               // query text

    bool finish_unknown() const;
};

struct ActionParse {
    bool ok = false;
    std::string thought;
    Action action;
    std::string error;
};

// Extracts the last Thought line and the last Action line. Payloads split on
// tab, falling back to " | ".
ActionParse parse_action(const std::string& raw);

std::string canonical_action(const Action& action);

struct ObservedTriplet {
    std::string src;
    std::string rel;
    std::string dst;
    bool pseudo = false;  // query-derived, not a stored edge
    bool operator==(const ObservedTriplet&) const = default;
};

struct RoundRecord {
    std::string thought;
    std::string action;       // canonical form rendered back into the prompt
    std::string action_raw;   // full backend response
    std::string observation;
    double elapsed_ms = 0.0;
    // snapshots after the round, for monotonicity/soundness checks
    std::vector<std::string> frontier_after;
    std::size_t triplets_after = 0;
};

struct AgentConfig {
    std::size_t k = 5;
    std::size_t t = 5;
    PruneMode prune_mode = PruneMode::llm;
    std::vector<std::string> exemplars;  // pre-rendered few-shot blocks
    std::string model = "default";
};

enum class AgentStatus { finished, exhausted, backend_error };

struct AgentOutcome {
    std::vector<std::string> answers;  // node ids, emission order
    std::size_t rounds_used = 0;
    AgentStatus status = AgentStatus::exhausted;
    std::vector<RoundRecord> transcript;
    std::vector<ObservedTriplet> triplets;
    double latency_s = 0.0;
    std::size_t backend_calls = 0;
    std::vector<std::string> diagnostics;
};

struct AgentState {
    std::size_t round = 0;
    std::vector<std::string> frontier;        // node ids, insertion order
    std::vector<ObservedTriplet> triplets;    // append-only
    std::vector<RoundRecord> transcript;
    Plan plan;
    std::vector<std::size_t> cursors;         // per plan path, hops consumed

    bool add_frontier(const std::string& id);
    bool add_triplet(ObservedTriplet t);
    // distinct node ids mentioned by observed triplets, first-seen order
    std::vector<std::string> observed_nodes() const;
};

struct AgentRuntime {
    const SemiStructuredGraph* graph = nullptr;
    const EmbeddingIndex* embeddings = nullptr;
    EmbeddingProvider* provider = nullptr;
};

// Appendix-style instruction block + exemplars + question, topic nodes and
// the numbered history. Byte-stable for identical state.
std::string render_prompt(const Question& q, const AgentState& state,
                          const AgentRuntime& rt, const AgentConfig& cfg);

// Executes one Search action; prune_backend (may be null) is consulted at
// most once for llm-mode pruning. Returns the observation text.
std::string exec_search(AgentState& state, const std::vector<std::string>& targets,
                        const Question& q, const AgentRuntime& rt,
                        Backend* prune_backend, const AgentConfig& cfg);

std::string exec_query(AgentState& state, const std::string& text,
                       const AgentRuntime& rt, std::size_t k);

// Resolves finish payload names against observed nodes first, then the whole
// graph; normalized exact name match, falling back to exact id match.
// "unknown" resolves to the empty answer list.
std::vector<std::string> resolve_finish(const std::vector<std::string>& names,
                                        const AgentState& state,
                                        const SemiStructuredGraph& graph,
                                        std::vector<std::string>* diagnostics = nullptr);

AgentOutcome run_agent(const Question& q, const Plan& plan, const AgentRuntime& rt,
                       Backend& backend, const AgentConfig& cfg);

// Transcript export: one JSON object per round.
void write_trace(std::ostream& out, const std::string& question_id,
                 const AgentOutcome& outcome);

}  // namespace semiqa
