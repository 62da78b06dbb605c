#include "semiqa/agent.hpp"

#include "semiqa/text_norm.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <set>
#include <sstream>

namespace semiqa {

using nlohmann::json;

namespace {

const char* kInstructions =
    "Solve a question answering task with interleaving Thought, Action, "
    "Observation steps. Thought can reason about the current situation, and "
    "Action can be three types:\n"
    "(1) Search[node1 | node2 | ...], which searches the exact nodes on the "
    "knowledge graph and returns their one-hop subgraphs. You should extract "
    "the all concrete nodes appeared in your last thought without redundant "
    "words, and you should always select nodes from topic nodes in the first "
    "search.\n"
    "(2) Query[question], which finds the most related node of the given "
    "question based on text embedding similarity.\n"
    "(3) Finish[answer1 | answer2 | ...], which returns the answer and "
    "finishes the task. The answers should be complete node name appeared in "
    "the triples. If you don't know the answer, please output Finish[unknown].\n"
    "Nodes and answers should be separated by tab.\n"
    "You should generate each step without redundant words.";

constexpr std::size_t kSnippetLength = 200;
const std::string kQueryRelation = "matches_query";

std::string display_name(const Node& node) {
    return node.name.empty() ? node.id : node.name;
}

std::string trim_copy(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_payload(const std::string& payload) {
    std::vector<std::string> parts;
    std::string sep;
    if (payload.find('\t') != std::string::npos) {
        sep = "\t";
    } else if (payload.find(" | ") != std::string::npos) {
        sep = " | ";
    }
    if (sep.empty()) {
        std::string one = trim_copy(payload);
        if (!one.empty()) parts.push_back(std::move(one));
        return parts;
    }
    std::size_t pos = 0;
    while (pos <= payload.size()) {
        std::size_t next = payload.find(sep, pos);
        std::string part = trim_copy(
            payload.substr(pos, next == std::string::npos ? std::string::npos
                                                          : next - pos));
        if (!part.empty()) parts.push_back(std::move(part));
        if (next == std::string::npos) break;
        pos = next + sep.size();
    }
    return parts;
}

}  // namespace

bool Action::finish_unknown() const {
    return kind == ActionKind::finish && names.size() == 1 &&
           normalize_text(names[0]) == "unknown";
}

ActionParse parse_action(const std::string& raw) {
    ActionParse result;
    std::string last_thought;
    bool have_action = false;
    std::string action_head, action_payload, action_error;

    std::istringstream lines(raw);
    std::string line;
    while (std::getline(lines, line)) {
        std::string t = trim_copy(line);
        if (t.rfind("Thought", 0) == 0) {
            std::size_t colon = t.find(':');
            if (colon != std::string::npos) {
                last_thought = trim_copy(t.substr(colon + 1));
            }
            continue;
        }
        if (t.rfind("Action", 0) != 0) continue;
        std::size_t colon = t.find(':');
        if (colon == std::string::npos) continue;
        std::string body = trim_copy(t.substr(colon + 1));
        std::size_t open = body.find('[');
        std::size_t close = body.rfind(']');
        have_action = true;
        if (open == std::string::npos || close == std::string::npos || close < open) {
            action_error = "no bracketed payload in action line";
            continue;
        }
        action_head = trim_copy(body.substr(0, open));
        action_payload = body.substr(open + 1, close - open - 1);
        action_error.clear();
    }

    result.thought = last_thought;
    if (!have_action) {
        result.error = "no action line found";
        return result;
    }
    if (!action_error.empty()) {
        result.error = action_error;
        return result;
    }
    if (action_head == "Search") {
        result.action.kind = ActionKind::search;
        result.action.names = split_payload(action_payload);
        if (result.action.names.empty()) {
            result.error = "empty search payload";
            return result;
        }
    } else if (action_head == "Query") {
        result.action.kind = ActionKind::query;
        result.action.query = trim_copy(action_payload);
        if (result.action.query.empty()) {
            result.error = "empty query payload";
            return result;
        }
    } else if (action_head == "Finish") {
        result.action.kind = ActionKind::finish;
        result.action.names = split_payload(action_payload);
        if (result.action.names.empty()) {
            result.error = "empty finish payload";
            return result;
        }
    } else {
        result.error = "unknown action head: " + action_head;
        return result;
    }
    result.ok = true;
    return result;
}

std::string canonical_action(const Action& action) {
    std::string payload;
    switch (action.kind) {
        case ActionKind::search:
        case ActionKind::finish: {
            for (std::size_t i = 0; i < action.names.size(); ++i) {
                if (i > 0) payload.push_back('\t');
                payload += action.names[i];
            }
            break;
        }
        case ActionKind::query:
            payload = action.query;
            break;
    }
    const char* head = action.kind == ActionKind::search  ? "Search"
                       : action.kind == ActionKind::query ? "Query"
                                                          : "Finish";
    return std::string(head) + "[" + payload + "]";
}

bool AgentState::add_frontier(const std::string& id) {
    if (std::find(frontier.begin(), frontier.end(), id) != frontier.end()) {
        return false;
    }
    frontier.push_back(id);
    return true;
}

bool AgentState::add_triplet(ObservedTriplet t) {
    if (std::find(triplets.begin(), triplets.end(), t) != triplets.end()) {
        return false;
    }
    triplets.push_back(std::move(t));
    return true;
}

std::vector<std::string> AgentState::observed_nodes() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    auto add = [&](const std::string& id) {
        if (seen.insert(id).second) out.push_back(id);
    };
    for (const auto& t : triplets) {
        if (!t.pseudo) add(t.src);
        add(t.dst);
    }
    return out;
}

std::string render_prompt(const Question& q, const AgentState& state,
                          const AgentRuntime& rt, const AgentConfig& cfg) {
    std::ostringstream out;
    out << kInstructions << "\n";
    if (!cfg.exemplars.empty()) {
        out << "\nHere are some examples\n";
        for (const auto& ex : cfg.exemplars) out << "\n" << ex << "\n";
    }
    out << "\nQuestion: " << q.text << "\n";
    out << "Topic Node: [";
    for (std::size_t i = 0; i < state.plan.seeds.size(); ++i) {
        if (i > 0) out << " | ";
        if (auto idx = rt.graph->find(state.plan.seeds[i])) {
            out << display_name(rt.graph->node(*idx));
        } else {
            out << state.plan.seeds[i];
        }
    }
    out << "]";
    for (std::size_t i = 0; i < state.transcript.size(); ++i) {
        const RoundRecord& r = state.transcript[i];
        out << "\nThought " << (i + 1) << ": " << r.thought;
        out << "\nAction " << (i + 1) << ": " << r.action;
        out << "\nObservation " << (i + 1) << ": " << r.observation;
    }
    return out.str();
}

namespace {

// An incident stored edge of a searched node, with traversal direction.
struct Candidate {
    ObservedTriplet triplet;
    std::string endpoint;       // node id entering the frontier if kept
    std::string traversal_rel;  // relation label, inv___-prefixed when incoming
};

std::vector<NodeIndex> resolve_search_target(const std::string& name,
                                             const AgentState& state,
                                             const SemiStructuredGraph& g) {
    const std::string norm = normalize_text(name);
    std::vector<NodeIndex> hits;
    // frontier nodes first, then the whole graph, then exact id
    for (const auto& id : state.frontier) {
        if (auto idx = g.find(id)) {
            if (normalize_text(g.node(*idx).name) == norm && !norm.empty()) {
                hits.push_back(*idx);
            }
        }
    }
    if (hits.empty() && !norm.empty()) {
        for (NodeIndex n = 0; n < g.node_count(); ++n) {
            if (normalize_text(g.node(n).name) == norm) hits.push_back(n);
        }
    }
    if (hits.empty()) {
        if (auto idx = g.find(name)) hits.push_back(*idx);
    }
    return hits;
}

}  // namespace

std::string exec_search(AgentState& state, const std::vector<std::string>& targets,
                        const Question& q, const AgentRuntime& rt,
                        Backend* prune_backend, const AgentConfig& cfg) {
    const SemiStructuredGraph& g = *rt.graph;

    // next unconsumed hop of every plan path still in play
    std::set<std::string> active_hops;
    for (std::size_t i = 0; i < state.plan.paths.size(); ++i) {
        const RelationPath& z = state.plan.paths[i].path;
        std::size_t cursor = i < state.cursors.size() ? state.cursors[i] : 0;
        if (cursor < z.hops.size() && z.hops[cursor] != kTextLabel) {
            active_hops.insert(z.hops[cursor]);
        }
    }

    std::ostringstream obs;
    bool first_line = true;
    auto emit = [&](const std::string& line) {
        if (!first_line) obs << "\n";
        obs << line;
        first_line = false;
    };

    std::optional<EmbeddingVector> question_embedding;
    if (cfg.prune_mode == PruneMode::score && rt.provider) {
        question_embedding = rt.provider->embed(q.text);
    }

    std::vector<Candidate> kept_all;
    struct Overflow {
        std::string node_label;
        std::vector<Candidate> candidates;
        std::size_t slots;
        std::size_t kept_offset;  // where this node's kept run begins
    };
    std::vector<Overflow> llm_overflow;

    for (const std::string& target : targets) {
        std::vector<NodeIndex> resolved = resolve_search_target(target, state, g);
        if (resolved.empty()) {
            emit("unknown node " + target);
            continue;
        }
        for (NodeIndex n : resolved) {
            std::vector<Candidate> cands;
            for (const auto& arc : g.out_arcs(n)) {
                const std::string& rel = g.relation_label(arc.rel);
                cands.push_back({{g.node(n).id, rel, g.node(arc.other).id},
                                 g.node(arc.other).id,
                                 rel});
            }
            for (const auto& arc : g.in_arcs(n)) {
                const std::string& rel = g.relation_label(arc.rel);
                cands.push_back({{g.node(arc.other).id, rel, g.node(n).id},
                                 g.node(arc.other).id,
                                 inverse_label(rel)});
            }
            if (cands.empty()) {
                emit("no triples found");
                continue;
            }

            // plan-matching triplets first, capped at K per searched node
            std::vector<Candidate> kept;
            std::vector<Candidate> rest;
            for (auto& c : cands) {
                if (kept.size() < cfg.k && active_hops.count(c.traversal_rel)) {
                    kept.push_back(std::move(c));
                } else {
                    rest.push_back(std::move(c));
                }
            }
            std::size_t slots = cfg.k > kept.size() ? cfg.k - kept.size() : 0;
            if (slots > 0 && !rest.empty()) {
                switch (cfg.prune_mode) {
                    case PruneMode::plan_first:
                        for (std::size_t i = 0; i < rest.size() && i < slots; ++i) {
                            kept.push_back(rest[i]);
                        }
                        break;
                    case PruneMode::score: {
                        // rank leftovers by similarity of "relation neighbor"
                        // to the question; stable on ties
                        std::vector<std::pair<double, std::size_t>> ranked;
                        for (std::size_t i = 0; i < rest.size(); ++i) {
                            double score = 0.0;
                            if (question_embedding && rt.provider) {
                                std::string endpoint_name = rest[i].endpoint;
                                if (auto idx = g.find(rest[i].endpoint)) {
                                    endpoint_name = display_name(g.node(*idx));
                                }
                                EmbeddingVector v = rt.provider->embed(
                                    rest[i].triplet.rel + " " + endpoint_name);
                                score = cosine_similarity(*question_embedding, v);
                            }
                            ranked.emplace_back(-score, i);
                        }
                        std::stable_sort(ranked.begin(), ranked.end(),
                                         [](const auto& a, const auto& b) {
                                             if (a.first != b.first)
                                                 return a.first < b.first;
                                             return a.second < b.second;
                                         });
                        for (std::size_t i = 0; i < ranked.size() && i < slots; ++i) {
                            kept.push_back(rest[ranked[i].second]);
                        }
                        break;
                    }
                    case PruneMode::llm:
                        llm_overflow.push_back({display_name(g.node(n)), rest, slots,
                                                kept_all.size() + kept.size()});
                        break;
                }
            }
            for (auto& c : kept) kept_all.push_back(std::move(c));
        }
    }

    // llm mode: a single backend call selects fill-ins for every overflowing
    // node this round; unusable replies fall back to index order
    if (!llm_overflow.empty()) {
        std::map<std::size_t, std::vector<std::size_t>> selections;
        if (prune_backend) {
            std::ostringstream prompt;
            prompt << "Question: " << q.text << "\n"
                   << "Select up to the requested number of triples most "
                      "relevant to the question. Reply with the triple numbers, "
                      "comma-separated.\n";
            std::size_t counter = 1;
            std::vector<std::pair<std::size_t, std::size_t>> numbering;
            for (std::size_t o = 0; o < llm_overflow.size(); ++o) {
                prompt << "Node " << llm_overflow[o].node_label << " (select up to "
                       << llm_overflow[o].slots << "):\n";
                for (std::size_t i = 0; i < llm_overflow[o].candidates.size(); ++i) {
                    const auto& t = llm_overflow[o].candidates[i].triplet;
                    prompt << counter << ". (" << t.src << ", " << t.rel << ", "
                           << t.dst << ")\n";
                    numbering.emplace_back(o, i);
                    ++counter;
                }
            }
            try {
                ChatRequest req;
                req.model = cfg.model;
                req.messages.push_back({"user", prompt.str()});
                Completion c = prune_backend->complete(req);
                std::string digits;
                auto flush_number = [&] {
                    if (digits.empty()) return;
                    std::size_t num = std::stoull(digits);
                    digits.clear();
                    if (num >= 1 && num <= numbering.size()) {
                        auto [o, i] = numbering[num - 1];
                        auto& sel = selections[o];
                        if (sel.size() < llm_overflow[o].slots &&
                            std::find(sel.begin(), sel.end(), i) == sel.end()) {
                            sel.push_back(i);
                        }
                    }
                };
                for (char ch : c.text) {
                    if (std::isdigit(static_cast<unsigned char>(ch))) {
                        digits.push_back(ch);
                    } else {
                        flush_number();
                    }
                }
                flush_number();
            } catch (const BackendError&) {
                selections.clear();  // fall back below
            }
        }
        // insert selections (or index-order fallback) at each node's offset,
        // rebuilding kept_all back-to-front so offsets stay valid
        for (std::size_t o = llm_overflow.size(); o-- > 0;) {
            const Overflow& ov = llm_overflow[o];
            std::vector<std::size_t> chosen;
            auto it = selections.find(o);
            if (it != selections.end() && !it->second.empty()) {
                chosen = it->second;
            } else {
                for (std::size_t i = 0; i < ov.candidates.size() && i < ov.slots; ++i) {
                    chosen.push_back(i);
                }
            }
            std::vector<Candidate> picked;
            for (std::size_t i : chosen) picked.push_back(ov.candidates[i]);
            kept_all.insert(kept_all.begin() + static_cast<std::ptrdiff_t>(ov.kept_offset),
                            picked.begin(), picked.end());
        }
    }

    // advance plan cursors for hops consumed by a kept triplet
    std::set<std::string> consumed;
    for (const auto& c : kept_all) {
        if (active_hops.count(c.traversal_rel)) consumed.insert(c.traversal_rel);
    }
    for (std::size_t i = 0; i < state.plan.paths.size(); ++i) {
        if (i >= state.cursors.size()) continue;
        const RelationPath& z = state.plan.paths[i].path;
        if (state.cursors[i] < z.hops.size() &&
            consumed.count(z.hops[state.cursors[i]])) {
            ++state.cursors[i];
        }
    }

    for (const auto& c : kept_all) {
        state.add_triplet(c.triplet);
        state.add_frontier(c.endpoint);
        std::string src_name = c.triplet.src, dst_name = c.triplet.dst;
        if (auto idx = g.find(c.triplet.src)) src_name = display_name(g.node(*idx));
        if (auto idx = g.find(c.triplet.dst)) dst_name = display_name(g.node(*idx));
        emit("(" + src_name + ", " + c.triplet.rel + ", " + dst_name + ")");
    }
    if (first_line) emit("no triples found");
    return obs.str();
}

std::string exec_query(AgentState& state, const std::string& text,
                       const AgentRuntime& rt, std::size_t k) {
    if (!rt.embeddings || !rt.provider) return "query failed";
    const SemiStructuredGraph& g = *rt.graph;
    std::vector<ScoredNode> top;
    try {
        EmbeddingVector query = rt.provider->embed(text);
        top = rt.embeddings->top_k(query, k);
    } catch (const ProviderError&) {
        return "query failed";
    }
    if (top.empty()) return "no nodes found";
    std::ostringstream obs;
    bool first = true;
    for (const ScoredNode& s : top) {
        const Node& node = g.node(s.node);
        state.add_frontier(node.id);
        state.add_triplet({text, kQueryRelation, node.id, true});
        if (!first) obs << "\n";
        first = false;
        obs << display_name(node) << ": " << normalize_text(node.text).substr(0, kSnippetLength);
    }
    return obs.str();
}

std::vector<std::string> resolve_finish(const std::vector<std::string>& names,
                                        const AgentState& state,
                                        const SemiStructuredGraph& g,
                                        std::vector<std::string>* diagnostics) {
    std::vector<std::string> out;
    std::set<std::string> emitted;
    auto push = [&](const std::string& id) {
        if (emitted.insert(id).second) out.push_back(id);
    };
    const std::vector<std::string> observed = state.observed_nodes();
    for (const std::string& name : names) {
        const std::string norm = normalize_text(name);
        if (norm == "unknown") continue;
        bool found = false;
        for (const auto& id : observed) {
            if (auto idx = g.find(id)) {
                if (!norm.empty() && normalize_text(g.node(*idx).name) == norm) {
                    push(id);
                    found = true;
                }
            }
        }
        if (!found && !norm.empty()) {
            for (NodeIndex n = 0; n < g.node_count(); ++n) {
                if (normalize_text(g.node(n).name) == norm) {
                    push(g.node(n).id);
                    found = true;
                }
            }
        }
        if (!found) {
            if (auto idx = g.find(name)) {
                push(g.node(*idx).id);
                found = true;
            }
        }
        if (!found && diagnostics) {
            diagnostics->push_back("unresolved answer name: " + name);
        }
    }
    return out;
}

AgentOutcome run_agent(const Question& q, const Plan& plan, const AgentRuntime& rt,
                       Backend& backend, const AgentConfig& cfg) {
    const auto started = std::chrono::steady_clock::now();
    AgentOutcome outcome;
    AgentState state;
    state.plan = plan;
    state.cursors.assign(plan.paths.size(), 0);
    for (const auto& seed : plan.seeds) state.add_frontier(seed);

    for (std::size_t t = 1; t <= cfg.t; ++t) {
        const auto round_started = std::chrono::steady_clock::now();
        state.round = t;
        std::string prompt = render_prompt(q, state, rt, cfg);

        ActionParse parsed;
        bool reprompted = false;
        try {
            ++outcome.backend_calls;
            parsed = parse_action(backend.complete(make_request(prompt, cfg)).text);
            if (!parsed.ok) {
                reprompted = true;
                ++outcome.backend_calls;
                std::string retry = prompt +
                                    "\nYour previous reply could not be parsed. Reply "
                                    "with exactly one Thought line and one Action line.";
                parsed = parse_action(backend.complete(make_request(retry, cfg)).text);
            }
        } catch (const BackendError& e) {
            outcome.status = AgentStatus::backend_error;
            outcome.diagnostics.push_back(e.what());
            outcome.rounds_used = t;
            break;
        }

        RoundRecord record;
        record.thought = parsed.thought;
        if (!parsed.ok) {
            record.action = "(malformed)";
            record.action_raw = parsed.error;
            record.observation = "malformed action";
            record.elapsed_ms =
                std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - round_started)
                    .count();
            record.frontier_after = state.frontier;
            record.triplets_after = state.triplets.size();
            state.transcript.push_back(std::move(record));
            continue;
        }

        record.action = canonical_action(parsed.action);
        record.action_raw = parsed.action.kind == ActionKind::query
                                ? parsed.action.query
                                : record.action;

        if (parsed.action.kind == ActionKind::finish) {
            outcome.answers = parsed.action.finish_unknown()
                                  ? std::vector<std::string>{}
                                  : resolve_finish(parsed.action.names, state,
                                                   *rt.graph, &outcome.diagnostics);
            outcome.status = AgentStatus::finished;
            outcome.rounds_used = t;
            record.observation = "";
            record.elapsed_ms =
                std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - round_started)
                    .count();
            record.frontier_after = state.frontier;
            record.triplets_after = state.triplets.size();
            state.transcript.push_back(std::move(record));
            break;
        }

        // a round that needed the re-prompt has spent its second backend
        // call; skip llm pruning to keep the per-round budget at two
        Backend* prune = (cfg.prune_mode == PruneMode::llm && !reprompted)
                             ? &backend
                             : nullptr;
        std::size_t calls_before = outcome.backend_calls;
        if (parsed.action.kind == ActionKind::search) {
            if (prune) ++outcome.backend_calls;  // may be decremented below
            std::size_t overflow_calls = 0;
            record.observation = exec_search_counting(state, parsed.action.names, q,
                                                      rt, prune, cfg, overflow_calls);
            if (prune && overflow_calls == 0) --outcome.backend_calls;
            (void)calls_before;
        } else {
            record.observation = exec_query(state, parsed.action.query, rt, cfg.k);
        }

        record.elapsed_ms = std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - round_started)
                                .count();
        record.frontier_after = state.frontier;
        record.triplets_after = state.triplets.size();
        state.transcript.push_back(std::move(record));
        outcome.rounds_used = t;
    }

    outcome.transcript = std::move(state.transcript);
    outcome.triplets = std::move(state.triplets);
    if (outcome.status == AgentStatus::exhausted) {
        outcome.rounds_used = std::min(outcome.rounds_used, cfg.t);
    }
    outcome.latency_s = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - started)
                            .count();
    return outcome;
}

void write_trace(std::ostream& out, const std::string& question_id,
                 const AgentOutcome& outcome) {
    for (std::size_t i = 0; i < outcome.transcript.size(); ++i) {
        const RoundRecord& r = outcome.transcript[i];
        json j;
        j["question_id"] = question_id;
        j["round"] = i + 1;
        j["thought"] = r.thought;
        j["action_raw"] = r.action_raw;
        j["observation"] = r.observation;
        j["elapsed_ms"] = r.elapsed_ms;
        out << j.dump() << "\n";
    }
}

}  // namespace semiqa
